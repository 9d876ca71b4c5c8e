#include "hspi/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "hspi/dataset.hpp"
#include "hspi/train.hpp"

namespace hspi {

namespace {

// --- spec parsing -------------------------------------------------------------

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream ss(line);
    std::string t;
    while (ss >> t) toks.push_back(t);
    return toks;
}

// key=value option with a typed accessor; bare words are positional.
struct KvArgs {
    std::vector<std::pair<std::string, std::string>> kv;
    std::vector<std::string> positional;

    explicit KvArgs(const std::vector<std::string>& toks, size_t from) {
        for (size_t i = from; i < toks.size(); ++i) {
            size_t eq = toks[i].find('=');
            if (eq == std::string::npos)
                positional.push_back(toks[i]);
            else
                kv.emplace_back(toks[i].substr(0, eq), toks[i].substr(eq + 1));
        }
    }

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : kv)
            if (k == key) return &v;
        return nullptr;
    }
    std::string str(const std::string& key, const std::string& fallback) const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }
    int64_t num(const std::string& key, int64_t fallback, int line) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        try {
            return std::stoll(*v);
        } catch (const std::exception&) {
            throw ParseError("bad integer for " + key + ": " + *v, line);
        }
    }
    double real(const std::string& key, double fallback, int line) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        try {
            return std::stod(*v);
        } catch (const std::exception&) {
            throw ParseError("bad number for " + key + ": " + *v, line);
        }
    }
};

void parse_model_line(ModelSpec& m, const std::vector<std::string>& toks, int line) {
    if (toks.size() < 2) throw ParseError("model needs an architecture or file path", line);
    const std::string& what = toks[1];
    KvArgs args(toks, 2);
    if (what == "cnn" || what == "mlp") {
        m.arch = what;
        m.classes = args.num("classes", m.classes, line);
        m.seed = uint64_t(args.num("seed", int64_t(m.seed), line));
        m.in_dim = args.num("in", m.in_dim, line);
        const std::string* hidden = args.find("hidden");
        if (hidden) {
            m.hidden.clear();
            std::istringstream hs(*hidden);
            std::string part;
            while (std::getline(hs, part, ','))
                if (!part.empty()) m.hidden.push_back(std::stoll(part));
        }
    } else {
        m.path = what;
    }
}

void parse_train_line(ModelSpec& m, const std::vector<std::string>& toks, int line) {
    if (toks.size() < 2) throw ParseError("train-on needs a dataset kind", line);
    m.trained = true;
    m.data_kind = toks[1];
    KvArgs args(toks, 2);
    m.per_class = args.num("per-class", m.per_class, line);
    m.data_seed = uint64_t(args.num("seed", int64_t(m.data_seed), line));
    m.epochs = int(args.num("epochs", m.epochs, line));
    m.lr = args.real("lr", m.lr, line);
    m.train_seed = uint64_t(args.num("train-seed", int64_t(m.train_seed), line));
}

}  // namespace

ExperimentSpec experiment_parse(const std::string& text) {
    ExperimentSpec spec;
    spec.model.hidden = {32};
    spec.transfer_model.hidden = {32};
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.resize(hash);
        std::vector<std::string> toks = split_ws(raw);
        if (toks.empty()) continue;
        const std::string& key = toks[0];
        KvArgs args(toks, 1);
        if (key == "name") {
            if (toks.size() != 2) throw ParseError("name takes one word", line_no);
            spec.name = toks[1];
        } else if (key == "attack") {
            if (toks.size() != 2) throw ParseError("attack takes one word", line_no);
            spec.attack = toks[1];
        } else if (key == "study") {
            if (toks.size() != 2) throw ParseError("study takes one word", line_no);
            spec.study = toks[1];
        } else if (key == "model") {
            parse_model_line(spec.model, toks, line_no);
        } else if (key == "train-on") {
            parse_train_line(spec.model, toks, line_no);
        } else if (key == "transfer-model") {
            parse_model_line(spec.transfer_model, toks, line_no);
        } else if (key == "transfer-train-on") {
            parse_train_line(spec.transfer_model, toks, line_no);
        } else if (key == "registry") {
            if (toks.size() != 2) throw ParseError("registry takes one path or `default`", line_no);
            spec.registry_path = toks[1] == "default" ? "" : toks[1];
        } else if (key == "profiles") {
            spec.profiles.assign(toks.begin() + 1, toks.end());
        } else if (key == "probes") {
            spec.probe_seed = uint64_t(args.num("seed", int64_t(spec.probe_seed), line_no));
            spec.probe_count = args.num("count", spec.probe_count, line_no);
        } else if (key == "set-size") {
            if (toks.size() != 2) throw ParseError("set-size takes one integer", line_no);
            spec.set_size = std::stoll(toks[1]);
        } else if (key == "svm") {
            spec.svm.lambda = args.real("lambda", spec.svm.lambda, line_no);
            spec.svm.epochs = int(args.num("epochs", spec.svm.epochs, line_no));
            spec.svm.seed = uint64_t(args.num("seed", int64_t(spec.svm.seed), line_no));
            std::string mode = args.str("features", spec.svm.raw_features ? "raw" : "standardized");
            if (mode == "raw")
                spec.svm.raw_features = true;
            else if (mode == "standardized")
                spec.svm.raw_features = false;
            else
                throw ParseError("features must be raw or standardized", line_no);
        } else if (key == "defense") {
            if (toks.size() != 2) throw ParseError("defense takes one descriptor", line_no);
            spec.defense = toks[1];
        } else if (key == "oracle-seed") {
            if (toks.size() != 2) throw ParseError("oracle-seed takes one integer", line_no);
            spec.oracle_seed = std::stoull(toks[1]);
        } else if (key == "pgd") {
            spec.pgd.loss = parse_bi_loss(args.str("loss", bi_loss_name(spec.pgd.loss)));
            spec.pgd.step = args.real("step", spec.pgd.step, line_no);
            spec.pgd.max_iters = int(args.num("iters", spec.pgd.max_iters, line_no));
            spec.pgd.batch_size = int(args.num("starts", spec.pgd.batch_size, line_no));
            spec.pgd.seed = uint64_t(args.num("seed", int64_t(spec.pgd.seed), line_no));
            const std::string* target = args.find("target");
            if (target) spec.pgd.target_class = std::stoll(*target);
        } else if (key == "trials") {
            if (toks.size() != 2) throw ParseError("trials takes one integer", line_no);
            spec.trials = std::stoi(toks[1]);
        } else if (key == "reference") {
            if (toks.size() != 2) throw ParseError("reference takes one profile id", line_no);
            spec.reference = toks[1];
        } else if (key == "oracle-batch-group") {
            if (toks.size() != 2) throw ParseError("oracle-batch-group takes one integer", line_no);
            spec.oracle_batch_group = std::stoi(toks[1]);
        } else if (key == "out") {
            if (toks.size() != 2) throw ParseError("out takes one path", line_no);
            spec.out_dir = toks[1];
        } else {
            throw ParseError("unknown experiment key: " + key, line_no);
        }
    }
    return spec;
}

ExperimentSpec experiment_load(const std::string& path) {
    return experiment_parse(read_file_text(path));
}

namespace {

// --- orchestration ------------------------------------------------------------

template <class F>
auto stage(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

Model realize_model(const ModelSpec& ms) {
    Model m = [&] {
        if (!ms.path.empty()) return load_model(ms.path);
        if (ms.arch == "cnn") return make_cnn(ms.classes, ms.seed);
        if (ms.arch == "mlp") return make_mlp(ms.in_dim, ms.hidden, ms.classes, ms.seed);
        throw Error("unknown model architecture: " + ms.arch);
    }();
    if (ms.trained) {
        Dataset d = [&] {
            if (ms.data_kind == "textures")
                return synthetic_textures(ms.per_class, ms.classes, ms.data_seed);
            if (ms.data_kind == "blobs")
                return blobs_2class(ms.per_class, ms.in_dim, ms.data_seed);
            throw Error("unknown dataset kind: " + ms.data_kind);
        }();
        TrainConfig tc;
        tc.epochs = ms.epochs;
        tc.lr = ms.lr;
        tc.seed = ms.train_seed;
        train_reference(m, d, tc);
    }
    return m;
}

std::string seeds_line(const ExperimentSpec& spec) {
    std::string s = "model=" + std::to_string(spec.model.seed);
    if (spec.model.trained)
        s += " data=" + std::to_string(spec.model.data_seed) +
             " train=" + std::to_string(spec.model.train_seed);
    if (spec.attack == "ld") {
        s += " probes=" + std::to_string(spec.probe_seed) +
             " svm=" + std::to_string(spec.svm.seed);
        if (spec.study == "defense") s += " oracle=" + std::to_string(spec.oracle_seed);
        if (spec.study == "transfer") {
            s += " transfer-model=" + std::to_string(spec.transfer_model.seed);
            if (spec.transfer_model.trained)
                s += " transfer-data=" + std::to_string(spec.transfer_model.data_seed) +
                     " transfer-train=" + std::to_string(spec.transfer_model.train_seed);
        }
    } else {
        s += " pgd=" + std::to_string(spec.pgd.seed);
    }
    return s;
}

struct ReportSink {
    std::string csv;
    std::string md;

    void provenance(const ExperimentSpec& spec, const PlatformRegistry& reg) {
        char hash[32];
        std::snprintf(hash, sizeof hash, "%016llx",
                      (unsigned long long)registry_hash(reg));
        csv += "# experiment," + spec.name + "\n";
        csv += "# hspi-version," + std::string(kHspiVersion) + "\n";
        csv += "# registry-hash," + std::string(hash) + "\n";
        csv += "# seeds," + seeds_line(spec) + "\n";
        md += "# " + spec.name + "\n\n";
        md += "- toolkit version: " + std::string(kHspiVersion) + "\n";
        md += "- registry hash: `" + std::string(hash) + "`\n";
        md += "- seeds: " + seeds_line(spec) + "\n";
        md += "- attack: " + spec.attack + ", study: " + spec.study + "\n\n";
    }
};

std::vector<PlatformProfile> resolve_profiles(const ExperimentSpec& spec,
                                              const PlatformRegistry& reg) {
    if (spec.profiles.empty()) return reg.profiles;
    std::vector<PlatformProfile> out;
    for (const std::string& id : spec.profiles) out.push_back(reg.by_id(id));
    return out;
}

struct LdRun {
    std::vector<LogitDump> dumps;
    std::vector<int64_t> labels;
};

LdRun collect_profiles(const Model& m, const std::vector<PlatformProfile>& profiles,
                       const ProbeSet& probes, const Defense& defense, uint64_t base_seed,
                       uint64_t& connection) {
    LdRun run;
    for (size_t i = 0; i < profiles.size(); ++i) {
        LocalOracle oracle(make_served(m, profiles[i], ResponseMode::Logits, defense, 256),
                           base_seed + connection++);
        LogitDump d = collect_logits(oracle, probes);
        d.profile_id = profiles[i].id;
        run.dumps.push_back(std::move(d));
        run.labels.push_back(int64_t(i));
    }
    return run;
}

// Per-class rows plus summary block, shared by the ld studies. Rows are
// emitted sorted by profile id; the metrics themselves are order-free.
void metrics_rows(ReportSink& sink, const Metrics& m,
                  const std::vector<PlatformProfile>& profiles, const char* arm) {
    std::vector<size_t> order(m.per_class.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return profiles[size_t(m.per_class[a].label)].id <
               profiles[size_t(m.per_class[b].label)].id;
    });
    sink.md += "| class | support | accuracy | F1 |\n|---|---|---|---|\n";
    for (size_t i : order) {
        const ClassMetrics& cm = m.per_class[i];
        const std::string& id = profiles[size_t(cm.label)].id;
        sink.csv += std::string("class,") + arm + "," + id + "," +
                    std::to_string(cm.support) + "," + fmt_double(cm.accuracy) + "," +
                    fmt_double(cm.f1) + "\n";
        sink.md += "| " + id + " | " + std::to_string(cm.support) + " | " +
                   fmt_double(cm.accuracy) + " | " + fmt_double(cm.f1) + " |\n";
    }
    sink.md += "\n";
}

void run_ld_whitebox(const ExperimentSpec& spec, const PlatformRegistry& reg,
                     ReportSink& sink) {
    std::vector<PlatformProfile> profiles = resolve_profiles(spec, reg);
    Model model = stage("model", [&] { return realize_model(spec.model); });
    ProbeSet probes = make_probes(spec.probe_seed, spec.probe_count, model_input_shape(model),
                                  spec.set_size);
    uint64_t connection = 0;
    LdRun run = stage("collect", [&] {
        return collect_profiles(model, profiles, probes, {}, spec.oracle_seed, connection);
    });
    FeatureDataset ds =
        stage("features", [&] { return build_samples(run.dumps, run.labels, spec.set_size); });
    SvmModel svm = stage("train-svm", [&] { return svm_train(ds, spec.svm); });
    Metrics m = report_metrics(svm_predict_all(svm, ds), ds.labels);

    sink.csv += "record,arm,label,support,accuracy,f1\n";
    metrics_rows(sink, m, profiles, "whitebox");
    sink.csv += "summary,whitebox,accuracy,," + fmt_double(m.accuracy) + ",\n";
    sink.csv += "summary,whitebox,macro-f1,,," + fmt_double(m.macro_f1) + "\n";
    sink.csv += "summary,whitebox,random-accuracy,," + fmt_double(m.random_accuracy) + ",\n";
    sink.csv += "summary,whitebox,random-macro-f1,,," + fmt_double(m.random_macro_f1) + "\n";
    for (const auto& [a, b] : ds.eqc_warnings)
        sink.csv += "eqc-warning,whitebox," + profiles[size_t(a)].id + ":" +
                    profiles[size_t(b)].id + ",,,\n";
    sink.md += "- training accuracy: " + fmt_double(m.accuracy) + " (random " +
               fmt_double(m.random_accuracy) + ")\n";
    sink.md += "- macro F1: " + fmt_double(m.macro_f1) + " (random " +
               fmt_double(m.random_macro_f1) + ")\n";
    sink.md += "- feature mode: " + std::string(spec.svm.raw_features ? "raw" : "standardized") +
               ", set size " + std::to_string(spec.set_size) + ", " +
               std::to_string(spec.probe_count) + " probes\n";
    if (!ds.eqc_warnings.empty())
        sink.md += "- warning: " + std::to_string(ds.eqc_warnings.size()) +
                   " profile pair(s) produced byte-identical features\n";
}

void run_ld_defense(const ExperimentSpec& spec, const PlatformRegistry& reg, ReportSink& sink) {
    std::vector<PlatformProfile> profiles = resolve_profiles(spec, reg);
    Model model = stage("model", [&] { return realize_model(spec.model); });
    ProbeSet probes = make_probes(spec.probe_seed, spec.probe_count, model_input_shape(model),
                                  spec.set_size);
    Defense armed = parse_defense(spec.defense);

    sink.csv += "record,arm,label,support,accuracy,f1\n";
    double clean_acc = 0, defended_acc = 0;
    uint64_t connection = 0;
    for (int arm = 0; arm < 2; ++arm) {
        Defense d = arm == 0 ? Defense{} : armed;
        const char* tag = arm == 0 ? "none" : "defended";
        // Calibration and fresh probing use distinct oracle connections, so
        // a randomized defense perturbs the two collections independently.
        LdRun cal = stage("collect", [&] {
            return collect_profiles(model, profiles, probes, d, spec.oracle_seed, connection);
        });
        LdRun fresh = stage("collect", [&] {
            return collect_profiles(model, profiles, probes, d, spec.oracle_seed, connection);
        });
        FeatureDataset train_ds = stage(
            "features", [&] { return build_samples(cal.dumps, cal.labels, spec.set_size); });
        FeatureDataset probe_ds = stage(
            "features", [&] { return build_samples(fresh.dumps, fresh.labels, spec.set_size); });
        SvmModel svm = stage("train-svm", [&] { return svm_train(train_ds, spec.svm); });
        Metrics m = report_metrics(svm_predict_all(svm, probe_ds), probe_ds.labels);
        (arm == 0 ? clean_acc : defended_acc) = m.accuracy;
        sink.md += std::string("## defense = ") + (arm == 0 ? "none" : spec.defense) + "\n\n";
        metrics_rows(sink, m, profiles, tag);
        sink.csv += std::string("summary,") + tag + ",accuracy,," + fmt_double(m.accuracy) +
                    ",\n";
        sink.md += "- training-to-probe accuracy: " + fmt_double(m.accuracy) + "\n\n";
    }
    double drop = 100.0 * (clean_acc - defended_acc);
    sink.csv += "summary,both,drop-points,,," + fmt_double(drop) + "\n";
    sink.md += "## verdict\n\n- accuracy drop: " + fmt_double(drop) + " points (" +
               fmt_double(clean_acc) + " -> " + fmt_double(defended_acc) + ")\n";
}

void run_ld_transfer(const ExperimentSpec& spec, const PlatformRegistry& reg,
                     ReportSink& sink) {
    std::vector<PlatformProfile> profiles = resolve_profiles(spec, reg);
    Model a = stage("model", [&] { return realize_model(spec.model); });
    Model b = stage("model", [&] { return realize_model(spec.transfer_model); });
    if (model_input_shape(a) != model_input_shape(b))
        throw Error("stage model: transfer models take different input shapes");
    ProbeSet probes = make_probes(spec.probe_seed, spec.probe_count, model_input_shape(a),
                                  spec.set_size);
    uint64_t connection = 0;
    LdRun runa = stage("collect", [&] {
        return collect_profiles(a, profiles, probes, {}, spec.oracle_seed, connection);
    });
    LdRun runb = stage("collect", [&] {
        return collect_profiles(b, profiles, probes, {}, spec.oracle_seed, connection);
    });
    FeatureDataset dsa =
        stage("features", [&] { return build_samples(runa.dumps, runa.labels, spec.set_size); });
    FeatureDataset dsb =
        stage("features", [&] { return build_samples(runb.dumps, runb.labels, spec.set_size); });
    SvmModel svm = stage("train-svm", [&] { return svm_train(dsa, spec.svm); });
    Metrics train_m = report_metrics(svm_predict_all(svm, dsa), dsa.labels);
    Metrics m = report_metrics(svm_predict_all(svm, dsb), dsb.labels);

    // A class beats chance when its F1 exceeds the closed-form F1 of a
    // uniform random guesser at that class's prevalence.
    int above = 0;
    sink.csv += "record,label,support,f1,random-f1,above\n";
    std::vector<size_t> order(m.per_class.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        return profiles[size_t(m.per_class[x].label)].id <
               profiles[size_t(m.per_class[y].label)].id;
    });
    sink.md += "| class | support | F1 | random F1 | above |\n|---|---|---|---|---|\n";
    for (size_t i : order) {
        const ClassMetrics& cm = m.per_class[i];
        double p_c = double(cm.support) / double(dsb.labels.size());
        double random_f1 =
            2.0 * p_c * m.random_accuracy / (p_c + m.random_accuracy);
        bool beat = cm.f1 > random_f1;
        above += beat;
        const std::string& id = profiles[size_t(cm.label)].id;
        sink.csv += "class," + id + "," + std::to_string(cm.support) + "," + fmt_double(cm.f1) +
                    "," + fmt_double(random_f1) + "," + (beat ? "1" : "0") + "\n";
        sink.md += "| " + id + " | " + std::to_string(cm.support) + " | " + fmt_double(cm.f1) +
                   " | " + fmt_double(random_f1) + " | " + (beat ? "yes" : "no") + " |\n";
    }
    sink.csv += "summary,train-accuracy,," + fmt_double(train_m.accuracy) + ",,\n";
    sink.csv += "summary,transfer-accuracy,," + fmt_double(m.accuracy) + ",,\n";
    sink.csv += "summary,transfer-macro-f1,," + fmt_double(m.macro_f1) + ",,\n";
    sink.csv += "summary,random-macro-f1,," + fmt_double(m.random_macro_f1) + ",,\n";
    sink.csv += "summary,classes-above-baseline,," + std::to_string(above) + ",,\n";
    sink.md += "\n- source-model training accuracy: " + fmt_double(train_m.accuracy) + "\n";
    sink.md += "- transfer accuracy: " + fmt_double(m.accuracy) + " (random " +
               fmt_double(m.random_accuracy) + ")\n";
    sink.md += "- transfer macro F1: " + fmt_double(m.macro_f1) + " (random " +
               fmt_double(m.random_macro_f1) + ")\n";
    sink.md += "- classes above their random-guess F1: " + std::to_string(above) + " of " +
               std::to_string(m.per_class.size()) + "\n";
}

void run_bi_pairs(const ExperimentSpec& spec, const PlatformRegistry& reg, ReportSink& sink) {
    std::vector<PlatformProfile> profiles = resolve_profiles(spec, reg);
    const PlatformProfile& ref = reg.by_id(spec.reference);
    Model model = stage("model", [&] { return realize_model(spec.model); });

    sink.csv += "record,reference,target,trials,successes,rate,median-iterations\n";
    sink.md += "| pair | successes | rate | median iterations |\n|---|---|---|---|\n";
    for (const PlatformProfile& target : profiles) {
        if (target.id == ref.id) continue;
        int successes = 0;
        std::vector<int> iters;
        for (int t = 0; t < spec.trials; ++t) {
            PgdConfig cfg = spec.pgd;
            cfg.seed = spec.pgd.seed + uint64_t(t);
            CampaignResult r = stage("campaign", [&] {
                return generate_border_inputs(model, {ref, target}, cfg);
            });
            if (r.status == CampaignStatus::Success) {
                ++successes;
                int best = -1;
                for (int64_t it : r.success_iteration)
                    if (it >= 0 && (best < 0 || it < best)) best = int(it);
                iters.push_back(best);
            }
        }
        std::sort(iters.begin(), iters.end());
        std::string median = iters.empty()
                                 ? "-"
                                 : std::to_string(iters[(iters.size() - 1) / 2]);
        double rate = spec.trials > 0 ? double(successes) / double(spec.trials) : 0.0;
        sink.csv += "pair," + ref.id + "," + target.id + "," + std::to_string(spec.trials) +
                    "," + std::to_string(successes) + "," + fmt_double(rate) + "," + median +
                    "\n";
        sink.md += "| " + ref.id + " vs " + target.id + " | " + std::to_string(successes) +
                   "/" + std::to_string(spec.trials) + " | " + fmt_double(rate) + " | " +
                   median + " |\n";
    }
    sink.md += "\n- loss: " + bi_loss_name(spec.pgd.loss) + ", step " +
               fmt_double(spec.pgd.step) + ", max " + std::to_string(spec.pgd.max_iters) +
               " iterations, " + std::to_string(spec.pgd.batch_size) + " start(s) per trial\n";
}

void run_bi_batch_group(const ExperimentSpec& spec, const PlatformRegistry& reg,
                        ReportSink& sink) {
    std::vector<PlatformProfile> profiles = resolve_profiles(spec, reg);
    if (profiles.size() < 2)
        throw Error("batch-group study needs at least two profiles (singled-out first)");
    Model model = stage("model", [&] { return realize_model(spec.model); });

    sink.csv += "record,arm,profile,score,batch-group-matched\n";
    PlatformProfile served = profiles[0];
    served.batch_group = spec.oracle_batch_group;
    LocalOracle oracle(make_served(model, served, ResponseMode::LabelOnly, {}, 256));

    for (int arm = 0; arm < 2; ++arm) {
        std::vector<PlatformProfile> camp_profiles = profiles;
        if (arm == 1)
            for (PlatformProfile& p : camp_profiles) p.batch_group = spec.oracle_batch_group;
        const char* tag = arm == 0 ? "mismatched" : "matched";
        CampaignResult r = stage("campaign", [&] {
            return generate_border_inputs(model, camp_profiles, spec.pgd);
        });
        if (r.status != CampaignStatus::Success)
            throw Error(std::string("campaign did not converge for the ") + tag + " arm");
        IdentifyResult ident =
            stage("identify", [&] { return identify_platform(r.campaign, oracle); });
        sink.md += std::string("## ") + tag + " (campaign batch group " +
                   std::to_string(r.campaign.batch_group_used) + ", oracle " +
                   std::to_string(spec.oracle_batch_group) + ")\n\n";
        sink.md += "| rank | profile | score |\n|---|---|---|\n";
        for (size_t i = 0; i < ident.profile_ids.size(); ++i) {
            sink.csv += std::string("identify,") + tag + "," + ident.profile_ids[i] + "," +
                        fmt_double(ident.scores[i]) + "," +
                        (ident.batch_group_matched ? "1" : "0") + "\n";
            sink.md += "| " + std::to_string(i + 1) + " | " + ident.profile_ids[i] + " | " +
                       fmt_double(ident.scores[i]) + " |\n";
        }
        sink.csv += std::string("summary,") + tag + ",top-score," +
                    fmt_double(ident.scores[0]) + "," +
                    (ident.batch_group_matched ? "1" : "0") + "\n";
        sink.md += "\n- top-1: " + ident.profile_ids[0] + " at " + fmt_double(ident.scores[0]) +
                   "\n\n";
    }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    // Everything here must fail before any computation starts.
    PlatformRegistry reg = stage("validate", [&] {
        if (spec.name.empty()) throw Error("experiment has no name");
        if (spec.out_dir.empty()) throw Error("experiment has no output directory");
        if (spec.attack != "bi" && spec.attack != "ld")
            throw Error("attack must be bi or ld, got: " + spec.attack);
        bool ld = spec.attack == "ld";
        if (ld && spec.study != "whitebox" && spec.study != "defense" &&
            spec.study != "transfer")
            throw Error("ld studies: whitebox, defense, transfer; got: " + spec.study);
        if (!ld && spec.study != "whitebox" && spec.study != "batch-group")
            throw Error("bi studies: whitebox, batch-group; got: " + spec.study);
        PlatformRegistry r =
            spec.registry_path.empty() ? default_registry() : registry_load(spec.registry_path);
        for (const std::string& id : spec.profiles) r.by_id(id);  // unknown id throws
        if (!ld) r.by_id(spec.reference);
        if (ld && spec.study == "defense") parse_defense(spec.defense);
        if (ld && spec.probe_count < spec.set_size)
            throw Error("probe count smaller than set size");
        if (!ld && spec.trials < 1) throw Error("trials must be positive");
        if (!spec.model.path.empty()) read_file_bytes(spec.model.path);  // must exist
        if (spec.study == "transfer" && !spec.transfer_model.path.empty())
            read_file_bytes(spec.transfer_model.path);
        return r;
    });

    ReportSink sink;
    sink.provenance(spec, reg);
    if (spec.attack == "ld" && spec.study == "whitebox")
        run_ld_whitebox(spec, reg, sink);
    else if (spec.attack == "ld" && spec.study == "defense")
        run_ld_defense(spec, reg, sink);
    else if (spec.attack == "ld" && spec.study == "transfer")
        run_ld_transfer(spec, reg, sink);
    else if (spec.attack == "bi" && spec.study == "whitebox")
        run_bi_pairs(spec, reg, sink);
    else
        run_bi_batch_group(spec, reg, sink);

    ExperimentResult result;
    result.csv = sink.csv;
    result.summary = sink.md;
    stage("write", [&] {
        std::filesystem::create_directories(spec.out_dir);
        result.csv_path = spec.out_dir + "/results.csv";
        result.summary_path = spec.out_dir + "/summary.md";
        write_file_text(result.csv_path, result.csv);
        write_file_text(result.summary_path, result.summary);
        return 0;
    });
    return result;
}

}  // namespace hspi
