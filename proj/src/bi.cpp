#include "hspi/bi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hspi/rng.hpp"

namespace hspi {

PgdConfig::Loss parse_bi_loss(const std::string& text) {
    if (text == "pair" || text == "pair-divergence") return PgdConfig::Loss::PairDivergence;
    if (text == "1v1" || text == "one-vs-one-targeted") return PgdConfig::Loss::OneVsOneTargeted;
    if (text == "1vr" || text == "one-vs-rest-targeted") return PgdConfig::Loss::OneVsRestTargeted;
    throw Error("unknown bi loss: " + text);
}

std::string bi_loss_name(PgdConfig::Loss loss) {
    switch (loss) {
        case PgdConfig::Loss::PairDivergence:
            return "pair-divergence";
        case PgdConfig::Loss::OneVsOneTargeted:
            return "one-vs-one-targeted";
        case PgdConfig::Loss::OneVsRestTargeted:
            return "one-vs-rest-targeted";
    }
    return "pair-divergence";
}

std::string campaign_status_name(CampaignStatus s) {
    switch (s) {
        case CampaignStatus::Success:
            return "success";
        case CampaignStatus::Indistinguishable:
            return "indistinguishable";
        case CampaignStatus::IterationLimit:
            return "iteration-limit";
    }
    return "iteration-limit";
}

double loss_pair_divergence(std::span<const double> logits_h, std::span<const double> logits_hp,
                            int64_t y_prime, int64_t y) {
    return cross_entropy(logits_h, y_prime) + cross_entropy(logits_hp, y);
}

double loss_one_vs_one_targeted(std::span<const double> logits_h,
                                std::span<const double> logits_hp, int64_t y_t) {
    return cross_entropy(logits_h, y_t) - cross_entropy(logits_hp, y_t);
}

double loss_one_vs_rest_targeted(const std::vector<std::vector<double>>& all_logits,
                                 size_t singled_out, int64_t y_t) {
    if (singled_out >= all_logits.size()) throw Error("singled-out index out of range");
    double loss = 0;
    for (size_t k = 0; k < all_logits.size(); ++k) {
        double ce = cross_entropy(all_logits[k], y_t);
        loss += k == singled_out ? -ce : ce;
    }
    return loss;
}

Tensor project_to_pixel_grid(const Tensor& x) {
    const FormatSpec& grid = FormatSpec::int_round();
    Tensor out = x;
    for (double& v : out.data) v = grid.quantize(std::clamp(v * 255.0, 0.0, 255.0)) / 255.0;
    return out;
}

namespace {

std::vector<uint8_t> to_pixel_bytes(const Tensor& x) {
    std::vector<uint8_t> bytes(x.data.size());
    const FormatSpec& grid = FormatSpec::int_round();
    for (size_t i = 0; i < x.data.size(); ++i) {
        double p = grid.quantize(std::clamp(x.data[i] * 255.0, 0.0, 255.0));
        bytes[i] = uint8_t(p);
    }
    return bytes;
}

Tensor from_pixel_bytes(const std::vector<uint8_t>& bytes, const std::vector<int64_t>& shape) {
    std::vector<int64_t> full{1};
    full.insert(full.end(), shape.begin(), shape.end());
    Tensor x = Tensor::zeros(full);
    if (x.data.size() != bytes.size()) throw Error("campaign input size mismatch");
    for (size_t i = 0; i < bytes.size(); ++i) x.data[i] = double(bytes[i]) / 255.0;
    return x;
}

// Emitted view of one sample's logits: the FP32 bit patterns an oracle for
// this profile would return.
std::vector<uint32_t> emitted_bits(std::span<const double> logits, const FormatSpec& emit) {
    std::vector<uint32_t> bits(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        float f = float(emit.quantize(logits[i]));
        std::memcpy(&bits[i], &f, 4);
    }
    return bits;
}

int64_t label_of_bits(const std::vector<uint32_t>& bits) {
    int64_t best = 0;
    float bestv;
    std::memcpy(&bestv, &bits[0], 4);
    for (size_t j = 1; j < bits.size(); ++j) {
        float v;
        std::memcpy(&v, &bits[j], 4);
        if (v > bestv) {
            bestv = v;
            best = int64_t(j);
        }
    }
    return best;
}

struct ProfileEval {
    std::vector<std::vector<double>> logits;  // per support model
    std::vector<ForwardTape> tapes;           // aligned with logits
    std::vector<uint32_t> bits;               // emitted bits, first model
    int64_t label = 0;                        // emitted label, first model
};

}  // namespace

CampaignResult generate_border_inputs(const std::vector<const Model*>& support_models,
                                      const std::vector<PlatformProfile>& profiles,
                                      const PgdConfig& cfg) {
    if (support_models.empty()) throw Error("bi-gen: no support models");
    for (const Model* m : support_models)
        if (!m) throw Error("bi-gen: null support model");
    if (profiles.size() < 2) throw Error("bi-gen: need at least two profiles");
    bool targeted = cfg.loss != PgdConfig::Loss::PairDivergence;
    if (cfg.loss != PgdConfig::Loss::OneVsRestTargeted && profiles.size() != 2)
        throw Error("bi-gen: " + bi_loss_name(cfg.loss) + " takes exactly two profiles");
    if (targeted && !cfg.target_class)
        throw Error("bi-gen: " + bi_loss_name(cfg.loss) + " requires a target class");
    if (cfg.step <= 0) throw Error("bi-gen: step must be positive");
    if (cfg.max_iters < 1) throw Error("bi-gen: max_iters must be positive");
    int64_t classes = support_models[0]->num_classes;
    if (targeted && (*cfg.target_class < 0 || *cfg.target_class >= classes))
        throw Error("bi-gen: target class out of range");

    // The singled-out platform the targeted losses pull toward the target
    // class: first profile by convention.
    const size_t singled = 0;

    std::vector<std::vector<PreparedModel>> prepared(profiles.size());
    for (size_t p = 0; p < profiles.size(); ++p)
        for (const Model* m : support_models) prepared[p].push_back(prepare(*m, profiles[p]));

    std::vector<int64_t> sample_shape = model_input_shape(*support_models[0]);
    for (const Model* m : support_models)
        if (m->num_classes != classes || model_input_shape(*m) != sample_shape)
            throw Error("bi-gen: support models disagree on shape or classes");

    CampaignResult result;
    result.starts = cfg.batch_size;
    result.success_iteration.assign(size_t(cfg.batch_size), -1);
    BorderInputCampaign& camp = result.campaign;
    camp.input_shape = sample_shape;
    for (const auto& p : profiles) camp.profile_ids.push_back(p.id);
    camp.batch_group_used = profiles[0].batch_group;
    camp.loss = cfg.loss;
    camp.seed = cfg.seed;

    auto evaluate = [&](const Tensor& x, bool want_tapes, std::vector<ProfileEval>& evals) {
        evals.assign(profiles.size(), {});
        for (size_t p = 0; p < profiles.size(); ++p) {
            ProfileEval& ev = evals[p];
            ev.logits.resize(support_models.size());
            ev.tapes.resize(support_models.size());
            for (size_t s = 0; s < support_models.size(); ++s) {
                Tensor l = forward(prepared[p][s], x, want_tapes ? &ev.tapes[s] : nullptr);
                ev.logits[s] = l.data;
            }
            ev.bits = emitted_bits(ev.logits[0], profiles[p].logit_emit_format);
            ev.label = label_of_bits(ev.bits);
        }
    };

    auto is_success = [&](const std::vector<ProfileEval>& evals) {
        if (cfg.loss == PgdConfig::Loss::PairDivergence ||
            cfg.loss == PgdConfig::Loss::OneVsOneTargeted)
            return evals[0].label != evals[1].label;
        for (size_t p = 0; p < evals.size(); ++p)
            if (p != singled && evals[p].label == evals[singled].label) return false;
        return true;
    };

    // d loss / d input for the current iterate, summed over support models.
    auto gradient = [&](const Tensor& x, std::vector<ProfileEval>& evals) {
        Tensor gx = Tensor::zeros(x.shape);
        auto add_ce_grad = [&](size_t p, int64_t label, double sign) {
            for (size_t s = 0; s < support_models.size(); ++s) {
                auto g = cross_entropy_grad(evals[p].logits[s], label);
                Tensor dl({1, classes}, std::move(g));
                Tensor dx = backward_input(prepared[p][s], evals[p].tapes[s], dl);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += sign * dx.data[i];
            }
        };
        switch (cfg.loss) {
            case PgdConfig::Loss::PairDivergence:
                // Ascent on CE(h, y') + CE(hp, y).
                add_ce_grad(0, evals[1].label, +1.0);
                add_ce_grad(1, evals[0].label, +1.0);
                break;
            case PgdConfig::Loss::OneVsOneTargeted:
                // Descent on CE(h, y_t) - CE(hp, y_t); the returned ascent
                // direction is its negation.
                add_ce_grad(0, *cfg.target_class, -1.0);
                add_ce_grad(1, *cfg.target_class, +1.0);
                break;
            case PgdConfig::Loss::OneVsRestTargeted:
                for (size_t p = 0; p < profiles.size(); ++p)
                    add_ce_grad(p, *cfg.target_class, p == singled ? -1.0 : +1.0);
                break;
        }
        return gx;
    };

    for (int start = 0; start < cfg.batch_size; ++start) {
        Rng rng = Rng::substream(cfg.seed, "bi-start-" + std::to_string(start));
        std::vector<int64_t> batch_shape{1};
        batch_shape.insert(batch_shape.end(), sample_shape.begin(), sample_shape.end());
        Tensor x = Tensor::zeros(batch_shape);
        for (double& v : x.data) v = rng.uniform01();
        x = project_to_pixel_grid(x);

        std::vector<ProfileEval> evals;
        for (int iter = 0; iter <= cfg.max_iters; ++iter) {
            bool last = iter == cfg.max_iters;
            evaluate(x, !last, evals);

            for (size_t p = 1; p < evals.size() && !result.saw_logit_difference; ++p)
                if (evals[p].bits != evals[0].bits) result.saw_logit_difference = true;

            if (is_success(evals)) {
                result.success_iteration[size_t(start)] = iter;
                camp.inputs.push_back(to_pixel_bytes(x));
                std::vector<int64_t> row;
                for (const auto& ev : evals) row.push_back(ev.label);
                camp.expected_labels.push_back(std::move(row));
                camp.iterations_used = std::max(camp.iterations_used, iter);
                break;
            }
            if (last) break;

            Tensor gx = gradient(x, evals);
            for (size_t i = 0; i < x.data.size(); ++i) {
                double g = gx.data[i];
                if (g > 0)
                    x.data[i] += cfg.step;
                else if (g < 0)
                    x.data[i] -= cfg.step;
            }
            x = project_to_pixel_grid(x);
        }
    }

    if (!camp.inputs.empty())
        result.status = CampaignStatus::Success;
    else if (!result.saw_logit_difference)
        result.status = CampaignStatus::Indistinguishable;
    else
        result.status = CampaignStatus::IterationLimit;
    return result;
}

CampaignResult generate_border_inputs(const Model& model,
                                      const std::vector<PlatformProfile>& profiles,
                                      const PgdConfig& cfg) {
    std::vector<const Model*> support{&model};
    return generate_border_inputs(support, profiles, cfg);
}

namespace {
constexpr char kCampaignMagic[6] = {'H', 'S', 'P', 'I', 'C', '1'};
}

void save_campaign(const std::string& path, const BorderInputCampaign& c) {
    std::vector<uint8_t> buf(kCampaignMagic, kCampaignMagic + 6);
    put_u8(buf, 1);
    put_u8(buf, uint8_t(c.loss));
    put_u64(buf, c.seed);
    put_u32(buf, uint32_t(c.batch_group_used));
    put_u32(buf, uint32_t(c.iterations_used));
    put_u32(buf, uint32_t(c.input_shape.size()));
    for (int64_t d : c.input_shape) put_u32(buf, uint32_t(d));
    put_u32(buf, uint32_t(c.profile_ids.size()));
    for (const auto& id : c.profile_ids) {
        put_u32(buf, uint32_t(id.size()));
        buf.insert(buf.end(), id.begin(), id.end());
    }
    put_u32(buf, uint32_t(c.inputs.size()));
    for (size_t i = 0; i < c.inputs.size(); ++i) {
        buf.insert(buf.end(), c.inputs[i].begin(), c.inputs[i].end());
        for (int64_t lab : c.expected_labels[i]) put_u32(buf, uint32_t(lab));
    }
    write_file_bytes(path, buf);
}

BorderInputCampaign load_campaign(const std::string& path) {
    std::vector<uint8_t> buf = read_file_bytes(path);
    ByteReader r(buf);
    try {
        if (r.str(6) != std::string(kCampaignMagic, 6)) throw Error("not a campaign file");
        uint8_t version = r.u8();
        if (version != 1) throw Error("unsupported campaign version");
        BorderInputCampaign c;
        uint8_t loss = r.u8();
        if (loss > uint8_t(PgdConfig::Loss::OneVsRestTargeted))
            throw Error("bad campaign loss tag");
        c.loss = PgdConfig::Loss(loss);
        c.seed = r.u64();
        c.batch_group_used = int(r.u32());
        c.iterations_used = int(r.u32());
        uint32_t ndims = r.u32();
        if (ndims < 1 || ndims > 8) throw Error("bad campaign shape");
        int64_t numel = 1;
        for (uint32_t i = 0; i < ndims; ++i) {
            int64_t d = r.u32();
            if (d < 1 || numel > (1 << 24) / d) throw Error("bad campaign shape");
            c.input_shape.push_back(d);
            numel *= d;
        }
        uint32_t nprof = r.u32();
        if (nprof < 2 || nprof > 4096) throw Error("bad campaign profile count");
        for (uint32_t p = 0; p < nprof; ++p) {
            uint32_t len = r.u32();
            if (len > 4096) throw Error("bad campaign profile id");
            c.profile_ids.push_back(r.str(len));
        }
        uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) {
            std::string pix = r.str(size_t(numel));
            c.inputs.emplace_back(pix.begin(), pix.end());
            std::vector<int64_t> row;
            for (uint32_t p = 0; p < nprof; ++p) row.push_back(r.u32());
            c.expected_labels.push_back(std::move(row));
        }
        if (!r.done()) throw Error("trailing bytes in campaign file");
        return c;
    } catch (const ProtocolError&) {
        throw Error("truncated campaign file: " + path);
    }
}

Tensor campaign_input(const BorderInputCampaign& c, size_t index) {
    if (index >= c.inputs.size()) throw Error("campaign input index out of range");
    return from_pixel_bytes(c.inputs[index], c.input_shape);
}

IdentifyResult identify_platform(const BorderInputCampaign& campaign, Oracle& oracle) {
    if (campaign.inputs.empty()) throw Error("bi-probe: campaign has no inputs");
    OracleInfo inf = oracle.info();
    if (inf.input_shape != campaign.input_shape)
        throw Error("bi-probe: campaign shape does not match the oracle");

    std::vector<int64_t> observed;
    size_t chunk = size_t(std::max(1, inf.max_batch));
    for (size_t at = 0; at < campaign.inputs.size(); at += chunk) {
        size_t n = std::min(chunk, campaign.inputs.size() - at);
        std::vector<int64_t> shape{int64_t(n)};
        shape.insert(shape.end(), campaign.input_shape.begin(), campaign.input_shape.end());
        Tensor batch = Tensor::zeros(shape);
        size_t numel = campaign.inputs[0].size();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < numel; ++j)
                batch.data[i * numel + j] = double(campaign.inputs[at + i][j]) / 255.0;
        QueryResponse resp = oracle.query(batch);
        observed.insert(observed.end(), resp.labels.begin(), resp.labels.end());
    }

    size_t nprof = campaign.profile_ids.size();
    std::vector<double> scores(nprof, 0.0);
    for (size_t i = 0; i < campaign.inputs.size(); ++i)
        for (size_t p = 0; p < nprof; ++p)
            if (campaign.expected_labels[i][p] == observed[i]) scores[p] += 1.0;
    for (double& s : scores) s /= double(campaign.inputs.size());

    std::vector<size_t> order(nprof);
    for (size_t i = 0; i < nprof; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    IdentifyResult res;
    double total = 0;
    for (double s : scores) total += s;
    for (size_t i : order) {
        res.profile_ids.push_back(campaign.profile_ids[i]);
        res.scores.push_back(scores[i]);
        res.posterior.push_back(total > 0 ? scores[i] / total : 1.0 / double(nprof));
    }
    res.oracle_batch_group = inf.batch_group;
    res.batch_group_matched = inf.batch_group == campaign.batch_group_used;
    return res;
}

}  // namespace hspi
