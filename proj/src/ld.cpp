#include "hspi/ld.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>

#include "hspi/numerics.hpp"
#include "hspi/rng.hpp"

namespace hspi {

ProbeSet make_probes(uint64_t seed, int64_t count, const std::vector<int64_t>& shape,
                     int64_t set_size) {
    if (set_size < 1) throw Error("probe set_size must be positive");
    if (count < set_size)
        throw Error("probe count " + std::to_string(count) + " is below the set size " +
                    std::to_string(set_size));
    if (shape.empty()) throw Error("probe shape is empty");
    ProbeSet ps;
    ps.shape = shape;
    ps.seed = seed;
    ps.set_size = set_size;
    Rng rng = Rng::substream(seed, "ld-probes");
    const FormatSpec& grid = FormatSpec::int_round();
    for (int64_t i = 0; i < count; ++i) {
        Tensor img = Tensor::zeros(shape);
        for (double& v : img.data) v = grid.quantize(rng.uniform01() * 255.0);
        ps.images.push_back(std::move(img));
    }
    return ps;
}

float LogitDump::logit(int64_t probe, int64_t cls) const {
    uint32_t u = bits.at(size_t(probe * classes + cls));
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

LogitDump collect_logits(Oracle& oracle, const ProbeSet& probes, int batch_group) {
    if (probes.images.empty()) throw Error("empty probe set");
    OracleInfo inf = oracle.info();
    if (inf.response_mode != ResponseMode::Logits)
        throw Error("logits-required: the oracle only serves labels");
    if (inf.input_shape != probes.shape)
        throw Error("probe shape does not match the oracle input shape");
    int group = batch_group > 0 ? batch_group : inf.batch_group;
    group = std::max(1, std::min(group, inf.max_batch));

    LogitDump dump;
    dump.probe_seed = probes.seed;
    dump.probe_shape = probes.shape;
    dump.count = int64_t(probes.images.size());
    dump.classes = inf.num_classes;
    dump.bits.reserve(size_t(dump.count * dump.classes));

    int64_t numel = probes.images[0].numel();
    for (size_t at = 0; at < probes.images.size(); at += size_t(group)) {
        size_t n = std::min(size_t(group), probes.images.size() - at);
        std::vector<int64_t> shape{int64_t(n)};
        shape.insert(shape.end(), probes.shape.begin(), probes.shape.end());
        Tensor batch = Tensor::zeros(shape);
        for (size_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < numel; ++j)
                batch.data[i * size_t(numel) + size_t(j)] =
                    probes.images[at + i].data[size_t(j)] / 255.0;
        QueryResponse resp = oracle.query(batch);
        if (!resp.logits) throw Error("logits-required: the oracle only serves labels");
        for (double v : resp.logits->data) {
            float f = float(v);
            uint32_t u;
            std::memcpy(&u, &f, 4);
            dump.bits.push_back(u);
        }
    }
    return dump;
}

namespace {
constexpr char kDumpMagic[6] = {'H', 'S', 'P', 'I', 'L', '1'};
}

void save_logit_dump(const std::string& path, const LogitDump& dump) {
    std::vector<uint8_t> buf(kDumpMagic, kDumpMagic + 6);
    put_u8(buf, 1);
    put_u32(buf, uint32_t(dump.profile_id.size()));
    buf.insert(buf.end(), dump.profile_id.begin(), dump.profile_id.end());
    put_u64(buf, dump.probe_seed);
    put_u32(buf, uint32_t(dump.probe_shape.size()));
    for (int64_t d : dump.probe_shape) put_u32(buf, uint32_t(d));
    put_u32(buf, uint32_t(dump.count));
    put_u32(buf, uint32_t(dump.classes));
    for (uint32_t u : dump.bits) put_u32(buf, u);
    write_file_bytes(path, buf);
}

LogitDump load_logit_dump(const std::string& path) {
    std::vector<uint8_t> buf = read_file_bytes(path);
    ByteReader r(buf);
    try {
        if (r.str(6) != std::string(kDumpMagic, 6)) throw Error("not a logit dump: " + path);
        if (r.u8() != 1) throw Error("unsupported logit dump version");
        LogitDump dump;
        uint32_t idlen = r.u32();
        if (idlen > 4096) throw Error("bad logit dump profile id");
        dump.profile_id = r.str(idlen);
        dump.probe_seed = r.u64();
        uint32_t ndims = r.u32();
        if (ndims < 1 || ndims > 8) throw Error("bad logit dump shape");
        for (uint32_t i = 0; i < ndims; ++i) dump.probe_shape.push_back(int64_t(r.u32()));
        dump.count = int64_t(r.u32());
        dump.classes = int64_t(r.u32());
        if (dump.count < 0 || dump.classes < 1 || dump.count * dump.classes > (1 << 28))
            throw Error("bad logit dump geometry");
        dump.bits.reserve(size_t(dump.count * dump.classes));
        for (int64_t i = 0; i < dump.count * dump.classes; ++i) dump.bits.push_back(r.u32());
        if (!r.done()) throw Error("trailing bytes in logit dump");
        return dump;
    } catch (const ProtocolError&) {
        throw Error("truncated logit dump: " + path);
    }
}

LogitBits split_bits(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    return LogitBits{u >> 31, (u >> 23) & 0xffu, u & 0x7fffffu};
}

float reassemble_bits(const LogitBits& parts) {
    uint32_t u = (parts.sign & 1u) << 31 | (parts.exponent & 0xffu) << 23 |
                 (parts.fraction & 0x7fffffu);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

FeatureDataset build_samples(const std::vector<LogitDump>& dumps,
                             const std::vector<int64_t>& labels, int64_t set_size) {
    if (dumps.empty()) throw Error("build_samples: no logit dumps");
    if (labels.size() != dumps.size()) throw Error("build_samples: one label per dump required");
    if (set_size < 1) throw Error("build_samples: set_size must be positive");
    const LogitDump& first = dumps[0];
    for (const LogitDump& d : dumps) {
        if (d.probe_seed != first.probe_seed || d.probe_shape != first.probe_shape ||
            d.count != first.count)
            throw Error("build_samples: dumps were collected from different probes");
        if (d.classes != first.classes)
            throw Error("build_samples: dumps disagree on the class count");
    }
    if (first.count < set_size) throw Error("build_samples: fewer probes than one set");
    for (int64_t lab : labels)
        if (lab < 0) throw Error("build_samples: negative label");

    FeatureDataset ds;
    ds.set_size = set_size;
    ds.feature_dim = set_size * first.classes * 3;
    int64_t per_dump = first.count / set_size;
    for (size_t d = 0; d < dumps.size(); ++d) {
        for (int64_t s = 0; s < per_dump; ++s) {
            std::vector<double> row;
            row.reserve(size_t(ds.feature_dim));
            for (int64_t p = s * set_size; p < (s + 1) * set_size; ++p) {
                for (int64_t c = 0; c < first.classes; ++c) {
                    LogitBits parts = split_bits(dumps[d].logit(p, c));
                    row.push_back(double(parts.sign));
                    row.push_back(double(parts.exponent));
                    row.push_back(double(parts.fraction));
                }
            }
            ds.features.push_back(std::move(row));
            ds.labels.push_back(labels[d]);
        }
    }

    // Byte-identical feature rows under different labels cannot be
    // separated; surface the offending label pairs so callers can report
    // the upstream equivalence class.
    std::map<std::vector<double>, std::vector<int64_t>> seen;
    for (size_t i = 0; i < ds.features.size(); ++i) seen[ds.features[i]].push_back(ds.labels[i]);
    std::set<std::pair<int64_t, int64_t>> pairs;
    for (const auto& [row, labs] : seen)
        for (size_t a = 0; a < labs.size(); ++a)
            for (size_t b = a + 1; b < labs.size(); ++b)
                if (labs[a] != labs[b])
                    pairs.insert({std::min(labs[a], labs[b]), std::max(labs[a], labs[b])});
    ds.eqc_warnings.assign(pairs.begin(), pairs.end());
    return ds;
}

}  // namespace hspi
