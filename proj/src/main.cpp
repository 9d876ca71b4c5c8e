#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "hspi/dataset.hpp"
#include "hspi/experiment.hpp"
#include "hspi/net.hpp"
#include "hspi/train.hpp"

using namespace hspi;

namespace {

// Exit codes shared by every subcommand. Indistinguishable is deliberately
// distinct from generic failure so scripts can branch on it.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIndistinguishable = 3;
constexpr int kExitProtocol = 4;
constexpr int kExitInternal = 5;

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream ss(s);
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    return out;
}

// "seed=7,count=250" probe descriptor used by ld-collect and ld-predict.
void parse_probe_desc(const std::string& desc, uint64_t& seed, int64_t& count) {
    for (const std::string& part : split_commas(desc)) {
        size_t eq = part.find('=');
        if (eq == std::string::npos) throw Error("probes descriptor wants key=value: " + part);
        std::string key = part.substr(0, eq);
        std::string value = part.substr(eq + 1);
        if (key == "seed")
            seed = std::stoull(value);
        else if (key == "count")
            count = std::stoll(value);
        else
            throw Error("unknown probes key: " + key);
    }
}

PlatformRegistry load_registry_arg(const std::string& path) {
    return path.empty() || path == "default" ? default_registry() : registry_load(path);
}

// Pixel-domain probes scaled into the model domain the oracles expect.
std::vector<Tensor> model_domain_inputs(const ProbeSet& probes) {
    std::vector<Tensor> inputs;
    inputs.reserve(probes.images.size());
    for (const Tensor& img : probes.images) {
        Tensor t = img;
        for (double& v : t.data) v /= 255.0;
        inputs.push_back(std::move(t));
    }
    return inputs;
}

int cmd_train(const std::string& arch, int64_t classes, uint64_t seed, int64_t in_dim,
              const std::string& hidden_desc, const std::string& data, int64_t per_class,
              uint64_t data_seed, int epochs, double lr, uint64_t train_seed,
              const std::string& out) {
    Model model = [&] {
        if (arch == "cnn") return make_cnn(classes, seed);
        if (arch != "mlp") throw Error("arch must be cnn or mlp");
        std::vector<int64_t> hidden;
        for (const std::string& h : split_commas(hidden_desc)) hidden.push_back(std::stoll(h));
        return make_mlp(in_dim, hidden, classes, seed);
    }();
    if (epochs > 0) {
        Dataset d = [&] {
            if (data == "textures") return synthetic_textures(per_class, classes, data_seed);
            if (data == "blobs") return blobs_2class(per_class, in_dim, data_seed);
            throw Error("data must be textures or blobs");
        }();
        TrainConfig tc;
        tc.epochs = epochs;
        tc.lr = lr;
        tc.seed = train_seed;
        TrainResult tr = train_reference(model, d, tc);
        std::printf("trained %s: accuracy %s, loss %s\n", arch.c_str(),
                    fmt_double(tr.train_accuracy).c_str(), fmt_double(tr.final_loss).c_str());
    }
    save_model(out, model);
    std::printf("saved %s\n", out.c_str());
    return kExitOk;
}

int cmd_serve(const std::string& config_path) {
    OracleConfig cfg = oracle_config_load(config_path);
    if (const char* env = std::getenv("HSPI_ORACLE_SEED")) cfg.seed = std::stoull(env);
    OracleServer server(make_served(cfg), cfg.port);
    std::printf("serving on port %d\n", server.port());
    std::fflush(stdout);
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
}

int cmd_eqc_diff(const std::string& model_path, const std::string& registry_path,
                 const std::string& p1, const std::string& p2, const std::string& probe_desc) {
    Model model = load_model(model_path);
    PlatformRegistry reg = load_registry_arg(registry_path);
    uint64_t seed = 7;
    int64_t count = 32;
    parse_probe_desc(probe_desc, seed, count);
    ProbeSet probes = make_probes(seed, count, model_input_shape(model), 1);
    DiffReport rep = eqc_diff(model, model_domain_inputs(probes), reg.by_id(p1), reg.by_id(p2));
    std::fputs(rep.summary().c_str(), stdout);
    return kExitOk;
}

int cmd_bi_gen(const std::string& model_path, const std::string& registry_path,
               const std::string& pair, const std::string& profile_list,
               const std::string& loss, int64_t target, int iters, double step, int starts,
               uint64_t seed, const std::string& out) {
    if (pair.empty() == profile_list.empty())
        throw ParseError("pass exactly one of --pair or --profiles", 0);
    Model model = load_model(model_path);
    PlatformRegistry reg = load_registry_arg(registry_path);
    std::vector<PlatformProfile> profiles;
    for (const std::string& id : split_commas(pair.empty() ? profile_list : pair))
        profiles.push_back(reg.by_id(id));

    PgdConfig cfg;
    cfg.loss = parse_bi_loss(loss);
    cfg.max_iters = iters;
    cfg.step = step;
    cfg.batch_size = starts;
    cfg.seed = seed;
    if (target >= 0) cfg.target_class = target;
    CampaignResult result = generate_border_inputs(model, profiles, cfg);

    if (result.status == CampaignStatus::Indistinguishable) {
        std::printf("indistinguishable: no logit bit differed across %d start(s)\n",
                    result.starts);
        return kExitIndistinguishable;
    }
    if (result.status == CampaignStatus::IterationLimit) {
        std::printf("iteration-limit: labels disagreed nowhere within %d iterations\n", iters);
        return kExitFailure;
    }
    save_campaign(out, result.campaign);
    std::printf("border inputs: %zu of %d start(s) succeeded\n", result.campaign.inputs.size(),
                result.starts);
    std::printf("saved %s\n", out.c_str());
    return kExitOk;
}

int cmd_bi_probe(const std::string& campaign_path, const std::string& address) {
    BorderInputCampaign campaign = load_campaign(campaign_path);
    std::unique_ptr<Oracle> oracle = connect_oracle(address);
    IdentifyResult r = identify_platform(campaign, *oracle);
    std::printf("rank profile            score   posterior\n");
    for (size_t i = 0; i < r.profile_ids.size(); ++i)
        std::printf("%4zu %-18s %s   %s\n", i + 1, r.profile_ids[i].c_str(),
                    fmt_double(r.scores[i]).c_str(), fmt_double(r.posterior[i]).c_str());
    if (!r.batch_group_matched)
        std::printf("warning: campaign batch group %d but oracle runs %d; scores degrade "
                    "under mismatched grouping\n",
                    campaign.batch_group_used, r.oracle_batch_group);
    return kExitOk;
}

int cmd_ld_collect(const std::string& address, const std::string& probe_desc, int64_t set_size,
                   int batch_group, const std::string& profile_tag, const std::string& out) {
    uint64_t seed = 7;
    int64_t count = 100;
    parse_probe_desc(probe_desc, seed, count);
    std::unique_ptr<Oracle> oracle = connect_oracle(address);
    ProbeSet probes = make_probes(seed, count, oracle->info().input_shape, set_size);
    LogitDump dump = collect_logits(*oracle, probes, batch_group);
    dump.profile_id = profile_tag;
    save_logit_dump(out, dump);
    std::printf("collected %lld probes x %lld logits -> %s\n", (long long)dump.count,
                (long long)dump.classes, out.c_str());
    return kExitOk;
}

int cmd_ld_train(const std::string& in_list, const std::string& label_list, int64_t set_size,
                 double lambda, int epochs, uint64_t seed, bool raw, const std::string& out) {
    std::vector<std::string> paths = split_commas(in_list);
    std::vector<std::string> names = split_commas(label_list);
    if (paths.empty()) throw Error("ld-train needs at least one dump");
    if (names.size() != paths.size())
        throw Error("got " + std::to_string(paths.size()) + " dumps but " +
                    std::to_string(names.size()) + " labels");
    std::vector<LogitDump> dumps;
    std::vector<int64_t> labels;
    for (size_t i = 0; i < paths.size(); ++i) {
        dumps.push_back(load_logit_dump(paths[i]));
        labels.push_back(int64_t(i));
    }
    FeatureDataset ds = build_samples(dumps, labels, set_size);
    for (const auto& [a, b] : ds.eqc_warnings)
        std::printf("warning: %s and %s produced byte-identical features (same EQC)\n",
                    names[size_t(a)].c_str(), names[size_t(b)].c_str());
    SvmConfig cfg;
    cfg.lambda = lambda;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.raw_features = raw;
    SvmModel svm = svm_train(ds, cfg);
    Metrics m = report_metrics(svm_predict_all(svm, ds), ds.labels);
    for (size_t i = 0; i < names.size(); ++i)
        std::printf("class %zu = %s\n", i, names[i].c_str());
    std::printf("training accuracy %s (random %s)\n", fmt_double(m.accuracy).c_str(),
                fmt_double(m.random_accuracy).c_str());
    svm_save(out, svm);
    std::printf("saved %s\n", out.c_str());
    return kExitOk;
}

int cmd_ld_predict(const std::string& svm_path, const std::string& address,
                   const std::string& probe_desc, const std::string& label_list) {
    SvmModel svm = svm_load(svm_path);
    std::unique_ptr<Oracle> oracle = connect_oracle(address);
    OracleInfo info = oracle->info();
    if (svm.feature_dim % (info.num_classes * 3) != 0)
        throw Error("svm feature dimension does not fit an oracle with " +
                    std::to_string(info.num_classes) + " classes");
    int64_t set_size = svm.feature_dim / (info.num_classes * 3);

    uint64_t seed = 7;
    int64_t count = set_size * 10;
    parse_probe_desc(probe_desc, seed, count);
    ProbeSet probes = make_probes(seed, count, info.input_shape, set_size);
    LogitDump dump = collect_logits(*oracle, probes);
    FeatureDataset ds = build_samples({dump}, {0}, set_size);

    std::vector<std::string> names = split_commas(label_list);
    auto name_of = [&](int64_t cls) {
        return size_t(cls) < names.size() ? names[size_t(cls)]
                                          : "class " + std::to_string(cls);
    };
    std::vector<int64_t> votes(size_t(svm.class_count), 0);
    for (size_t i = 0; i < ds.features.size(); ++i) {
        SvmPrediction p = svm_predict(svm, ds.features[i]);
        ++votes[size_t(p.label)];
        std::printf("sample %zu -> %s\n", i, name_of(p.label).c_str());
    }
    int64_t best = 0;
    for (int64_t c = 1; c < svm.class_count; ++c)
        if (votes[size_t(c)] > votes[size_t(best)]) best = c;
    std::printf("verdict: %s (%lld of %zu samples)\n", name_of(best).c_str(),
                (long long)votes[size_t(best)], ds.features.size());
    return kExitOk;
}

int cmd_report(const std::string& spec_path, const std::string& out_override) {
    ExperimentSpec spec = experiment_load(spec_path);
    if (!out_override.empty()) spec.out_dir = out_override;
    ExperimentResult r = run_experiment(spec);
    std::printf("wrote %s\n", r.csv_path.c_str());
    std::printf("wrote %s\n", r.summary_path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"platform fingerprinting for ML inference endpoints"};
    app.set_version_flag("--version", std::string(kHspiVersion));
    app.require_subcommand(0, 1);

    // train
    auto* train = app.add_subcommand("train", "train a model on a bundled synthetic dataset");
    std::string arch = "cnn", data = "textures", hidden = "32", out_path;
    int64_t classes = 10, in_dim = 3072, per_class = 40;
    uint64_t seed = 1, data_seed = 1, train_seed = 1;
    int epochs = 8;
    double lr = 0.02;
    train->add_option("--arch", arch, "cnn | mlp");
    train->add_option("--classes", classes);
    train->add_option("--seed", seed, "weight init seed");
    train->add_option("--in-dim", in_dim, "mlp input width");
    train->add_option("--hidden", hidden, "mlp hidden widths, comma separated");
    train->add_option("--data", data, "textures | blobs");
    train->add_option("--per-class", per_class);
    train->add_option("--data-seed", data_seed);
    train->add_option("--epochs", epochs, "0 skips training");
    train->add_option("--lr", lr);
    train->add_option("--train-seed", train_seed);
    train->add_option("--out", out_path, "model file to write")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "serve a model/profile oracle over TCP");
    std::string serve_config;
    serve->add_option("--config", serve_config, "oracle config file")->required();

    // eqc-diff
    auto* eqc = app.add_subcommand("eqc-diff", "compare two profiles' logit bits on a probe set");
    std::string eqc_model, eqc_registry = "default", eqc_p1, eqc_p2, eqc_probes = "";
    eqc->add_option("--model", eqc_model)->required();
    eqc->add_option("--registry", eqc_registry);
    eqc->add_option("--p1", eqc_p1)->required();
    eqc->add_option("--p2", eqc_p2)->required();
    eqc->add_option("--probes", eqc_probes, "seed=7,count=32");

    // bi-gen
    auto* bigen = app.add_subcommand("bi-gen", "craft border inputs separating platform profiles");
    std::string bg_model, bg_registry = "default", bg_pair, bg_profiles, bg_loss = "pair",
                bg_out;
    int64_t bg_target = -1;
    int bg_iters = 400, bg_starts = 8;
    double bg_step = 2.0 / 255.0;
    uint64_t bg_seed = 1;
    bigen->add_option("--model", bg_model)->required();
    bigen->add_option("--registry", bg_registry);
    bigen->add_option("--pair", bg_pair, "two profile ids, comma separated");
    bigen->add_option("--profiles", bg_profiles, "singled-out profile first (1vr loss)");
    bigen->add_option("--loss", bg_loss, "pair | 1v1 | 1vr");
    bigen->add_option("--target", bg_target, "target class for the targeted losses");
    bigen->add_option("--iters", bg_iters);
    bigen->add_option("--step", bg_step, "pixel step in the model domain");
    bigen->add_option("--starts", bg_starts, "random starts");
    bigen->add_option("--seed", bg_seed);
    bigen->add_option("--out", bg_out, "campaign file to write")->required();

    // bi-probe
    auto* biprobe = app.add_subcommand("bi-probe", "identify a served platform with a campaign");
    std::string bp_campaign, bp_oracle;
    biprobe->add_option("--campaign", bp_campaign)->required();
    biprobe->add_option("--oracle", bp_oracle, "host:port")->required();

    // ld-collect
    auto* ldc = app.add_subcommand("ld-collect", "record an oracle's logit bits over probes");
    std::string ldc_oracle, ldc_probes = "", ldc_profile, ldc_out;
    int64_t ldc_set = 10;
    int ldc_group = 0;
    ldc->add_option("--oracle", ldc_oracle, "host:port")->required();
    ldc->add_option("--probes", ldc_probes, "seed=7,count=100");
    ldc->add_option("--set-size", ldc_set);
    ldc->add_option("--batch-group", ldc_group, "probes per query; 0 = oracle's grouping");
    ldc->add_option("--profile", ldc_profile, "bookkeeping tag stored in the dump");
    ldc->add_option("--out", ldc_out)->required();

    // ld-train
    auto* ldt = app.add_subcommand("ld-train", "fit the platform classifier on logit dumps");
    std::string ldt_in, ldt_labels, ldt_out;
    int64_t ldt_set = 10;
    double ldt_lambda = 1e-3;
    int ldt_epochs = 200;
    uint64_t ldt_seed = 1;
    bool ldt_raw = false;
    ldt->add_option("--in", ldt_in, "dump files, comma separated")->required();
    ldt->add_option("--labels", ldt_labels, "profile names, one per dump")->required();
    ldt->add_option("--set-size", ldt_set);
    ldt->add_option("--lambda", ldt_lambda);
    ldt->add_option("--epochs", ldt_epochs);
    ldt->add_option("--seed", ldt_seed);
    ldt->add_flag("--raw-features", ldt_raw, "skip feature standardization");
    ldt->add_option("--out", ldt_out, "svm file to write")->required();

    // ld-predict
    auto* ldp = app.add_subcommand("ld-predict", "classify a served platform from its logits");
    std::string ldp_svm, ldp_oracle, ldp_probes = "", ldp_labels;
    ldp->add_option("--svm", ldp_svm)->required();
    ldp->add_option("--oracle", ldp_oracle, "host:port")->required();
    ldp->add_option("--probes", ldp_probes, "must match the calibration probes");
    ldp->add_option("--labels", ldp_labels, "profile names in ld-train class order");

    // report
    auto* report = app.add_subcommand("report", "run a bundled or custom experiment spec");
    std::string rp_spec, rp_out;
    report->add_option("--spec", rp_spec, "experiment spec file")->required();
    report->add_option("--out", rp_out, "override the spec's output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed())
            return cmd_train(arch, classes, seed, in_dim, hidden, data, per_class, data_seed,
                             epochs, lr, train_seed, out_path);
        if (serve->parsed()) return cmd_serve(serve_config);
        if (eqc->parsed()) return cmd_eqc_diff(eqc_model, eqc_registry, eqc_p1, eqc_p2, eqc_probes);
        if (bigen->parsed())
            return cmd_bi_gen(bg_model, bg_registry, bg_pair, bg_profiles, bg_loss, bg_target,
                              bg_iters, bg_step, bg_starts, bg_seed, bg_out);
        if (biprobe->parsed()) return cmd_bi_probe(bp_campaign, bp_oracle);
        if (ldc->parsed())
            return cmd_ld_collect(ldc_oracle, ldc_probes, ldc_set, ldc_group, ldc_profile,
                                  ldc_out);
        if (ldt->parsed())
            return cmd_ld_train(ldt_in, ldt_labels, ldt_set, ldt_lambda, ldt_epochs, ldt_seed,
                                ldt_raw, ldt_out);
        if (ldp->parsed()) return cmd_ld_predict(ldp_svm, ldp_oracle, ldp_probes, ldp_labels);
        if (report->parsed()) return cmd_report(rp_spec, rp_out);
        std::fputs(app.help().c_str(), stdout);
        return kExitOk;
    } catch (const ProtocolError& e) {
        std::fprintf(stderr, "protocol error: %s\n", e.what());
        return kExitProtocol;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInternal;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInternal;
    }
}
