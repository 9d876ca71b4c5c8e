#include "hspi/oracle.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "hspi/platform.hpp"

namespace hspi {

namespace {

int64_t parse_i64(const std::string& s, const char* what) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw Error(std::string("invalid ") + what + ": " + s);
    return v;
}

double parse_f64(const std::string& s, const char* what) {
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw Error("");
        return v;
    } catch (...) {
        throw Error(std::string("invalid ") + what + ": " + s);
    }
}

std::vector<int64_t> parse_shape(const std::string& s) {
    std::vector<int64_t> dims;
    std::string part;
    std::stringstream ss(s);
    while (std::getline(ss, part, 'x')) dims.push_back(parse_i64(part, "input-shape dim"));
    if (dims.empty()) throw Error("invalid input-shape: " + s);
    for (int64_t d : dims)
        if (d <= 0) throw Error("invalid input-shape: " + s);
    return dims;
}

}  // namespace

ResponseMode parse_response_mode(const std::string& text) {
    if (text == "logits") return ResponseMode::Logits;
    if (text == "label-only") return ResponseMode::LabelOnly;
    throw Error("unknown response mode: " + text);
}

std::string response_mode_name(ResponseMode m) {
    return m == ResponseMode::Logits ? "logits" : "label-only";
}

Defense parse_defense(const std::string& text) {
    Defense d;
    if (text == "none") return d;
    auto colon = text.find(':');
    std::string head = text.substr(0, colon);
    std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "logit-bitflip") {
        d.kind = Defense::Kind::LogitBitflip;
        bool have_p = false;
        std::stringstream ss(args);
        std::string kv;
        while (std::getline(ss, kv, ',')) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw Error("invalid defense option: " + kv);
            std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
            if (k == "p") {
                d.p = parse_f64(v, "flip probability");
                have_p = true;
            } else if (k == "bits") {
                auto dash = v.find('-');
                if (dash == std::string::npos) {
                    d.bit_lo = d.bit_hi = int(parse_i64(v, "bit index"));
                } else {
                    d.bit_lo = int(parse_i64(v.substr(0, dash), "bit index"));
                    d.bit_hi = int(parse_i64(v.substr(dash + 1), "bit index"));
                }
            } else {
                throw Error("unknown defense option: " + k);
            }
        }
        if (!have_p) throw Error("logit-bitflip requires p=");
        if (!(d.p >= 0.0 && d.p <= 1.0)) throw Error("flip probability out of [0,1]");
        if (d.bit_lo < 0 || d.bit_hi > 22 || d.bit_lo > d.bit_hi)
            throw Error("bit range must lie in fraction bits 0-22");
        return d;
    }
    if (head == "input-noise") {
        d.kind = Defense::Kind::InputNoise;
        if (args.rfind("sigma=", 0) != 0) throw Error("input-noise requires sigma=");
        d.sigma = parse_f64(args.substr(6), "noise sigma");
        if (!(d.sigma >= 0.0)) throw Error("noise sigma must be >= 0");
        return d;
    }
    throw Error("unknown defense: " + text);
}

std::string defense_name(const Defense& d) {
    switch (d.kind) {
        case Defense::Kind::None:
            return "none";
        case Defense::Kind::LogitBitflip:
            return "logit-bitflip:p=" + fmt_double(d.p) + ",bits=" + std::to_string(d.bit_lo) +
                   "-" + std::to_string(d.bit_hi);
        case Defense::Kind::InputNoise:
            return "input-noise:sigma=" + fmt_double(d.sigma);
    }
    return "none";
}

OracleConfig oracle_config_parse(const std::string& text) {
    OracleConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::stringstream ls(line);
        std::string key, value;
        if (!(ls >> key)) continue;
        if (!(ls >> value)) throw ParseError("missing value for " + key, line_no);
        std::string extra;
        if (ls >> extra) throw ParseError("trailing tokens after " + key, line_no);
        try {
            if (key == "model") {
                cfg.model_path = value;
            } else if (key == "registry") {
                cfg.registry_path = value;
            } else if (key == "profile") {
                cfg.profile_id = value;
            } else if (key == "response-mode") {
                cfg.response_mode = parse_response_mode(value);
            } else if (key == "defense") {
                cfg.defense = parse_defense(value);
            } else if (key == "port") {
                cfg.port = int(parse_i64(value, "port"));
            } else if (key == "max-batch") {
                cfg.max_batch = int(parse_i64(value, "max-batch"));
                if (cfg.max_batch < 1) throw Error("max-batch must be positive");
            } else if (key == "seed") {
                cfg.seed = uint64_t(parse_i64(value, "seed"));
            } else if (key == "input-shape") {
                cfg.input_shape = parse_shape(value);
            } else {
                throw Error("unknown key: " + key);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    if (cfg.model_path.empty()) throw Error("oracle config: missing model");
    if (cfg.registry_path.empty()) throw Error("oracle config: missing registry");
    if (cfg.profile_id.empty()) throw Error("oracle config: missing profile");
    return cfg;
}

OracleConfig oracle_config_load(const std::string& path) {
    return oracle_config_parse(read_file_text(path));
}

std::shared_ptr<const ServedModel> make_served(Model model, const PlatformProfile& profile,
                                               ResponseMode mode, Defense defense, int max_batch,
                                               std::vector<int64_t> input_shape, uint64_t seed) {
    auto sm = std::make_shared<ServedModel>();
    sm->model = std::move(model);
    sm->profile = profile;
    sm->prepared = prepare(sm->model, profile);
    sm->response_mode = mode;
    sm->defense = defense;
    sm->max_batch = max_batch;
    sm->input_shape = input_shape.empty() ? model_input_shape(sm->model) : std::move(input_shape);
    sm->base_seed = seed;
    return sm;
}

std::shared_ptr<const ServedModel> make_served(const OracleConfig& cfg) {
    Model m = load_model(cfg.model_path);
    PlatformRegistry reg = cfg.registry_path == "default" ? default_registry()
                                                          : registry_load(cfg.registry_path);
    return make_served(std::move(m), reg.by_id(cfg.profile_id), cfg.response_mode, cfg.defense,
                       cfg.max_batch, cfg.input_shape, cfg.seed);
}

LocalOracle::LocalOracle(std::shared_ptr<const ServedModel> served, uint64_t rng_seed)
    : served_(std::move(served)), rng_(rng_seed) {}

LocalOracle::LocalOracle(std::shared_ptr<const ServedModel> served)
    : LocalOracle(served, served->base_seed) {}

QueryResponse LocalOracle::query(const Tensor& batch) {
    const ServedModel& sm = *served_;
    if (batch.rank() != sm.input_shape.size() + 1)
        throw Error("shape-mismatch: expected batch of " + Tensor::zeros(sm.input_shape).shape_str() +
                    ", got " + batch.shape_str());
    for (size_t i = 0; i < sm.input_shape.size(); ++i)
        if (batch.shape[i + 1] != sm.input_shape[i])
            throw Error("shape-mismatch: expected batch of " +
                        Tensor::zeros(sm.input_shape).shape_str() + ", got " + batch.shape_str());
    int64_t n = batch.dim(0);
    if (n > sm.max_batch)
        throw Error("batch-too-large: " + std::to_string(n) + " > " +
                    std::to_string(sm.max_batch));

    Tensor logits;
    if (sm.defense.kind == Defense::Kind::InputNoise) {
        Tensor noisy = batch;
        for (double& v : noisy.data)
            v = std::clamp(v + sm.defense.sigma * rng_.normal(), 0.0, 1.0);
        logits = forward(sm.prepared, noisy);
    } else {
        logits = forward(sm.prepared, batch);
    }

    int64_t C = logits.dim(1);
    std::vector<float> served(logits.data.size());
    for (size_t i = 0; i < logits.data.size(); ++i)
        served[i] = float(sm.profile.logit_emit_format.quantize(logits.data[i]));

    if (sm.defense.kind == Defense::Kind::LogitBitflip) {
        for (float& f : served) {
            if (!std::isfinite(f)) continue;  // keep NaN out of the response
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int b = sm.defense.bit_lo; b <= sm.defense.bit_hi; ++b)
                if (rng_.uniform01() < sm.defense.p) bits ^= uint32_t(1) << b;
            std::memcpy(&f, &bits, 4);
        }
    }

    QueryResponse resp;
    resp.served_batch_size = sm.profile.batch_group;
    resp.labels.resize(size_t(n));
    for (int64_t r = 0; r < n; ++r) {
        const float* row = served.data() + r * C;
        int64_t best = 0;
        for (int64_t j = 1; j < C; ++j)
            if (row[j] > row[best]) best = j;
        resp.labels[size_t(r)] = best;
    }
    if (sm.response_mode == ResponseMode::Logits) {
        Tensor out = Tensor::zeros({n, C});
        for (size_t i = 0; i < served.size(); ++i) out.data[i] = double(served[i]);
        resp.logits = std::move(out);
    }
    return resp;
}

OracleInfo LocalOracle::info() {
    const ServedModel& sm = *served_;
    OracleInfo inf;
    inf.input_shape = sm.input_shape;
    inf.num_classes = sm.model.num_classes;
    inf.response_mode = sm.response_mode;
    inf.batch_group = sm.profile.batch_group;
    inf.max_batch = sm.max_batch;
    return inf;
}

}  // namespace hspi
