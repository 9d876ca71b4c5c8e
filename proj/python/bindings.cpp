#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hspi/experiment.hpp"
#include "hspi/net.hpp"

namespace py = pybind11;
using namespace hspi;

namespace {

PlatformRegistry registry_arg(const std::string& path) {
    return path.empty() || path == "default" ? default_registry() : registry_load(path);
}

std::vector<Tensor> scaled_probe_inputs(const ProbeSet& probes) {
    std::vector<Tensor> inputs;
    inputs.reserve(probes.images.size());
    for (const Tensor& img : probes.images) {
        Tensor t = img;
        for (double& v : t.data) v /= 255.0;
        inputs.push_back(std::move(t));
    }
    return inputs;
}

LogitDump collect_from_model(const Model& model, const std::string& profile_id,
                             uint64_t probe_seed, int64_t count, int64_t set_size,
                             const std::string& defense_text, uint64_t oracle_seed,
                             const std::string& registry_path, int batch_group) {
    PlatformRegistry reg = registry_arg(registry_path);
    auto served = make_served(model, reg.by_id(profile_id), ResponseMode::Logits,
                              parse_defense(defense_text), 256);
    LocalOracle oracle(served, oracle_seed);
    ProbeSet probes = make_probes(probe_seed, count, model_input_shape(model), set_size);
    LogitDump dump = collect_logits(oracle, probes, batch_group);
    dump.profile_id = profile_id;
    return dump;
}

py::dict diff_to_dict(const DiffReport& rep) {
    py::dict d;
    d["same_eqc"] = rep.same_eqc;
    d["inputs_compared"] = rep.inputs_compared;
    d["inputs_differing"] = rep.inputs_differing;
    d["logits_compared"] = rep.logits_compared;
    d["logits_differing"] = rep.logits_differing;
    d["max_abs_diff"] = rep.max_abs_diff;
    d["summary"] = rep.summary();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "platform fingerprinting for ML inference endpoints";
    m.attr("__version__") = kHspiVersion;

    // --- numerics ------------------------------------------------------------
    m.def(
        "quantize",
        [](const std::string& fmt, double x) {
            std::vector<double> v{x};
            quantize_values(std::span<double>(v), parse_format(fmt));
            return v[0];
        },
        py::arg("format"), py::arg("x"),
        "Round one value under a format ('fp16', 'fp8-e4m3', 'mxint8', ...)");
    m.def(
        "quantize_all",
        [](const std::string& fmt, std::vector<double> v) {
            quantize_values(std::span<double>(v), parse_format(fmt));
            return v;
        },
        py::arg("format"), py::arg("values"),
        "Fake-quantize a flat buffer; block/dynamic formats see the whole buffer");
    m.def(
        "reduce_sum",
        [](std::vector<double> v, const std::string& order, const std::string& fmt) {
            const FormatSpec* f = elementwise_format(parse_format(fmt));
            if (!f) throw Error("reduce_sum wants an elementwise format");
            return reduce_sum(v, parse_accum_order(order), *f);
        },
        py::arg("values"), py::arg("order"), py::arg("format"),
        "Quantized reduction under an accumulation order ('sequential', 'pairwise', "
        "'blocked:N') and element format ('fp32', 'int-round', ...)");
    m.def(
        "split_bits",
        [](double v) {
            LogitBits b = split_bits(float(v));
            return py::make_tuple(b.sign, b.exponent, b.fraction);
        },
        py::arg("value"), "FP32 encoding of value as (sign, exponent, fraction)");

    // --- models --------------------------------------------------------------
    py::class_<Model>(m, "Model")
        .def_static("mlp", &make_mlp, py::arg("in_dim"), py::arg("hidden"), py::arg("classes"),
                    py::arg("seed"))
        .def_static("cnn", &make_cnn, py::arg("classes"), py::arg("seed"))
        .def_static("load", &load_model, py::arg("path"))
        .def("save", [](const Model& m_, const std::string& path) { save_model(path, m_); })
        .def_property_readonly("num_classes", [](const Model& m_) { return m_.num_classes; })
        .def_property_readonly("input_shape", &model_input_shape);
    m.def(
        "train_textures",
        [](Model& model, int64_t per_class, int64_t classes, uint64_t data_seed, int epochs,
           double lr, uint64_t train_seed) {
            Dataset d = synthetic_textures(per_class, classes, data_seed);
            TrainConfig tc;
            tc.epochs = epochs;
            tc.lr = lr;
            tc.seed = train_seed;
            TrainResult r = train_reference(model, d, tc);
            py::dict out;
            out["final_loss"] = r.final_loss;
            out["train_accuracy"] = r.train_accuracy;
            return out;
        },
        py::arg("model"), py::arg("per_class"), py::arg("classes"), py::arg("data_seed"),
        py::arg("epochs") = 8, py::arg("lr") = 0.02, py::arg("train_seed") = 1,
        "Fit the model in place on the bundled texture generator");

    // --- registry ------------------------------------------------------------
    m.def(
        "registry_ids",
        [](const std::string& path) {
            std::vector<std::string> ids;
            for (const PlatformProfile& p : registry_arg(path).profiles) ids.push_back(p.id);
            return ids;
        },
        py::arg("path") = "", "Profile ids ('' or 'default' for the builtin registry)");
    m.def(
        "eqc_diff",
        [](const Model& model, const std::string& p1, const std::string& p2, uint64_t seed,
           int64_t count, const std::string& registry_path) {
            PlatformRegistry reg = registry_arg(registry_path);
            ProbeSet probes = make_probes(seed, count, model_input_shape(model), 1);
            return diff_to_dict(
                eqc_diff(model, scaled_probe_inputs(probes), reg.by_id(p1), reg.by_id(p2)));
        },
        py::arg("model"), py::arg("p1"), py::arg("p2"), py::arg("seed") = 7,
        py::arg("count") = 32, py::arg("registry") = "",
        "Bit-compare two profiles' emitted logits over random probes");

    // --- logit-distribution attack --------------------------------------------
    py::class_<LogitDump>(m, "LogitDump")
        .def_static("load", &load_logit_dump, py::arg("path"))
        .def("save", [](const LogitDump& d, const std::string& path) { save_logit_dump(path, d); })
        .def_readonly("profile_id", &LogitDump::profile_id)
        .def_readonly("probe_seed", &LogitDump::probe_seed)
        .def_readonly("count", &LogitDump::count)
        .def_readonly("classes", &LogitDump::classes)
        .def_readonly("bits", &LogitDump::bits)
        .def("logit", &LogitDump::logit, py::arg("probe"), py::arg("cls"));
    m.def("collect", &collect_from_model, py::arg("model"), py::arg("profile"),
          py::arg("probe_seed") = 7, py::arg("count") = 100, py::arg("set_size") = 10,
          py::arg("defense") = "none", py::arg("oracle_seed") = 1, py::arg("registry") = "",
          py::arg("batch_group") = 0,
          "Serve the model under a profile in-process and record its logit bits");

    py::class_<SvmModel>(m, "Svm")
        .def_static("load", &svm_load, py::arg("path"))
        .def("save", [](const SvmModel& s, const std::string& path) { svm_save(path, s); })
        .def_readonly("class_count", &SvmModel::class_count)
        .def_readonly("feature_dim", &SvmModel::feature_dim)
        .def(
            "predict",
            [](const SvmModel& s, const std::vector<double>& features) {
                SvmPrediction p = svm_predict(s, features);
                return py::make_tuple(p.label, p.scores);
            },
            py::arg("features"), "Predicted class index plus per-class scores");
    m.def(
        "svm_train",
        [](const std::vector<LogitDump>& dumps, const std::vector<int64_t>& labels,
           int64_t set_size, double lambda, int epochs, uint64_t seed, bool raw_features) {
            FeatureDataset ds = build_samples(dumps, labels, set_size);
            SvmConfig cfg;
            cfg.lambda = lambda;
            cfg.epochs = epochs;
            cfg.seed = seed;
            cfg.raw_features = raw_features;
            SvmModel svm = svm_train(ds, cfg);
            Metrics metrics = report_metrics(svm_predict_all(svm, ds), ds.labels);
            return py::make_tuple(svm, metrics.accuracy);
        },
        py::arg("dumps"), py::arg("labels"), py::arg("set_size") = 10, py::arg("lambda") = 1e-3,
        py::arg("epochs") = 200, py::arg("seed") = 1, py::arg("raw_features") = false,
        "Fit the bit-split classifier; returns (model, training accuracy)");
    m.def(
        "svm_predict_dump",
        [](const SvmModel& svm, const LogitDump& dump, int64_t set_size) {
            FeatureDataset ds = build_samples({dump}, {0}, set_size);
            return svm_predict_all(svm, ds);
        },
        py::arg("svm"), py::arg("dump"), py::arg("set_size") = 10,
        "Per-sample predicted class indices for one collected dump");

    // --- border-input attack ---------------------------------------------------
    py::class_<BorderInputCampaign>(m, "Campaign")
        .def_static("load", &load_campaign, py::arg("path"))
        .def("save",
             [](const BorderInputCampaign& c, const std::string& path) { save_campaign(path, c); })
        .def_readonly("profile_ids", &BorderInputCampaign::profile_ids)
        .def_readonly("expected_labels", &BorderInputCampaign::expected_labels)
        .def_readonly("iterations_used", &BorderInputCampaign::iterations_used)
        .def("__len__", [](const BorderInputCampaign& c) { return c.inputs.size(); });
    m.def(
        "bi_generate",
        [](const Model& model, const std::vector<std::string>& profile_ids,
           const std::string& loss, int iters, double step, int starts, uint64_t seed,
           std::optional<int64_t> target, const std::string& registry_path) {
            PlatformRegistry reg = registry_arg(registry_path);
            std::vector<PlatformProfile> profiles;
            for (const std::string& id : profile_ids) profiles.push_back(reg.by_id(id));
            PgdConfig cfg;
            cfg.loss = parse_bi_loss(loss);
            cfg.max_iters = iters;
            cfg.step = step;
            cfg.batch_size = starts;
            cfg.seed = seed;
            cfg.target_class = target;
            CampaignResult r = generate_border_inputs(model, profiles, cfg);
            return py::make_tuple(campaign_status_name(r.status), r.campaign);
        },
        py::arg("model"), py::arg("profiles"), py::arg("loss") = "pair", py::arg("iters") = 400,
        py::arg("step") = 2.0 / 255.0, py::arg("starts") = 8, py::arg("seed") = 1,
        py::arg("target") = std::nullopt, py::arg("registry") = "",
        "PGD border-input search; returns (status, campaign)");
    m.def(
        "bi_identify",
        [](const BorderInputCampaign& campaign, const Model& model, const std::string& profile_id,
           const std::string& registry_path, int batch_group) {
            PlatformRegistry reg = registry_arg(registry_path);
            PlatformProfile p = reg.by_id(profile_id);
            if (batch_group > 0) p.batch_group = batch_group;
            LocalOracle oracle(make_served(model, p, ResponseMode::LabelOnly, {}, 256));
            IdentifyResult r = identify_platform(campaign, oracle);
            py::dict d;
            d["profile_ids"] = r.profile_ids;
            d["scores"] = r.scores;
            d["posterior"] = r.posterior;
            d["batch_group_matched"] = r.batch_group_matched;
            return d;
        },
        py::arg("campaign"), py::arg("model"), py::arg("profile"), py::arg("registry") = "",
        py::arg("batch_group") = 0,
        "Rank candidate profiles by label agreement against an in-process oracle");

    // --- experiments -----------------------------------------------------------
    m.def(
        "run_experiment",
        [](const std::string& spec_path, const std::string& out_dir) {
            ExperimentSpec spec = experiment_load(spec_path);
            if (!out_dir.empty()) spec.out_dir = out_dir;
            ExperimentResult r = run_experiment(spec);
            py::dict d;
            d["csv_path"] = r.csv_path;
            d["summary_path"] = r.summary_path;
            d["csv"] = r.csv;
            d["summary"] = r.summary;
            return d;
        },
        py::arg("spec_path"), py::arg("out_dir") = "",
        "Run a study spec end to end and write results.csv / summary.md");
}
