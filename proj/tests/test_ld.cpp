#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "hspi/ld.hpp"
#include "hspi/rng.hpp"

using namespace hspi;

namespace {

uint32_t float_bits(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    return u;
}

float bits_float(uint32_t u) {
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

// Untrained CNN; quantization signatures do not depend on trained weights,
// so the cheap fixture keeps the suite fast.
const Model& probe_cnn() {
    static Model m = make_cnn(10, 711);
    return m;
}

LogitDump collect_profile(const Model& m, const PlatformProfile& p, const ProbeSet& probes) {
    LocalOracle oracle(make_served(m, p, ResponseMode::Logits, {}, 256));
    LogitDump d = collect_logits(oracle, probes);
    d.profile_id = p.id;
    return d;
}

// Seven-profile collection over the shared CNN, reused by the classifier
// tests because collection dominates the runtime.
struct RegistryDumps {
    std::vector<LogitDump> dumps;
    std::vector<int64_t> labels;
    PlatformRegistry reg;
};

const RegistryDumps& registry_dumps() {
    static RegistryDumps rd = [] {
        RegistryDumps out;
        out.reg = default_registry();
        ProbeSet probes = make_probes(7, 100, {3, 32, 32});
        for (size_t i = 0; i < out.reg.profiles.size(); ++i) {
            out.dumps.push_back(collect_profile(probe_cnn(), out.reg.profiles[i], probes));
            out.labels.push_back(int64_t(i));
        }
        return out;
    }();
    return rd;
}

// Small hand-made dataset: two well-separated gaussian blobs in 2-D.
FeatureDataset toy_two_blobs(int per_class, uint64_t seed) {
    FeatureDataset ds;
    ds.feature_dim = 2;
    ds.set_size = 1;
    Rng rng(seed);
    for (int c = 0; c < 2; ++c) {
        double cx = c == 0 ? -10.0 : 10.0;
        for (int i = 0; i < per_class; ++i) {
            ds.features.push_back({cx + rng.normal(), rng.normal()});
            ds.labels.push_back(c);
        }
    }
    return ds;
}

}  // namespace

TEST_CASE("probe sets are reproducible integer images") {
    ProbeSet a = make_probes(3, 25, {3, 8, 8}, 5);
    ProbeSet b = make_probes(3, 25, {3, 8, 8}, 5);
    CHECK(a.images.size() == 25);
    CHECK(a.seed == 3);
    CHECK(a.set_size == 5);
    CHECK(a.shape == std::vector<int64_t>{3, 8, 8});
    for (size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i].shape == std::vector<int64_t>{3, 8, 8});
        CHECK(bitwise_equal(a.images[i], b.images[i]));
        for (double v : a.images[i].data) {
            CHECK(v >= 0.0);
            CHECK(v <= 255.0);
            CHECK(v == std::floor(v));
        }
    }
    ProbeSet c = make_probes(4, 25, {3, 8, 8}, 5);
    CHECK_FALSE(bitwise_equal(a.images[0], c.images[0]));
}

TEST_CASE("probe generation rejects bad arguments") {
    CHECK_THROWS_AS(make_probes(1, 5, {3, 8, 8}, 10), Error);   // count < set_size
    CHECK_THROWS_AS(make_probes(1, 10, {3, 8, 8}, 0), Error);   // empty sets
    CHECK_THROWS_AS(make_probes(1, 10, {}, 1), Error);          // no shape
}

TEST_CASE("probe pixels are uniform over the byte lattice") {
    // Rounding u*255 to the nearest integer gives the edge values 0 and 255
    // half a bin each; everything else gets a full bin.
    ProbeSet ps = make_probes(7, 60, {3, 32, 32});
    std::vector<int64_t> hist(256, 0);
    int64_t n = 0;
    for (const Tensor& t : ps.images)
        for (double v : t.data) {
            ++hist[size_t(v)];
            ++n;
        }
    double chi2 = 0;
    for (int k = 0; k < 256; ++k) {
        double expected = (k == 0 || k == 255) ? double(n) * 0.5 / 255.0 : double(n) / 255.0;
        double d = double(hist[size_t(k)]) - expected;
        chi2 += d * d / expected;
    }
    // 255 degrees of freedom: mean 255, stddev ~22.6; 350 is beyond +4 sigma.
    CHECK(chi2 < 350.0);
    CHECK(hist[0] > 0);
    CHECK(hist[255] > 0);
}

TEST_CASE("split_bits matches the IEEE 754 field layout") {
    auto check = [](float v, uint32_t sign, uint32_t exponent, uint32_t fraction) {
        LogitBits parts = split_bits(v);
        CHECK(parts.sign == sign);
        CHECK(parts.exponent == exponent);
        CHECK(parts.fraction == fraction);
        CHECK(float_bits(reassemble_bits(parts)) == float_bits(v));
    };
    check(1.0f, 0, 127, 0);
    check(-2.5f, 1, 128, 2097152);  // 1.25 * 2^1, fraction 0.25 * 2^23
    check(0.0f, 0, 0, 0);
    check(bits_float(0x80000000u), 1, 0, 0);       // negative zero
    check(bits_float(0x7f800000u), 0, 255, 0);     // +inf
    check(bits_float(0xff800000u), 1, 255, 0);     // -inf
    check(bits_float(0x7fc00000u), 0, 255, 4194304);  // quiet NaN
    check(bits_float(0x00000001u), 0, 0, 1);       // smallest denormal
    check(bits_float(0x00800000u), 0, 1, 0);       // smallest normal
    check(bits_float(0x7f7fffffu), 0, 254, 8388607);  // largest finite
}

TEST_CASE("split and reassemble invert each other on random patterns") {
    Rng rng(41);
    for (int i = 0; i < 1000000; ++i) {
        uint32_t u = uint32_t(rng.next_u64());
        LogitBits parts = split_bits(bits_float(u));
        CHECK(parts.sign <= 1);
        CHECK(parts.exponent <= 255);
        CHECK(parts.fraction <= 0x7fffffu);
        if (float_bits(reassemble_bits(parts)) != u) {
            FAIL("round-trip broke pattern ", u);
        }
    }
}

TEST_CASE("logit collection is deterministic and format-sensitive") {
    ProbeSet probes = make_probes(7, 30, {3, 32, 32});
    PlatformRegistry reg = default_registry();

    LogitDump a1 = collect_profile(probe_cnn(), reg.by_id("fp32"), probes);
    LogitDump a2 = collect_profile(probe_cnn(), reg.by_id("fp32"), probes);
    CHECK(a1.count == 30);
    CHECK(a1.classes == 10);
    CHECK(a1.probe_seed == 7);
    CHECK(a1.probe_shape == probes.shape);
    CHECK(a1.bits == a2.bits);

    LogitDump b = collect_profile(probe_cnn(), reg.by_id("fp8-e4"), probes);
    int differing = 0;
    for (int64_t p = 0; p < a1.count; ++p)
        for (int64_t c = 0; c < a1.classes; ++c)
            if (a1.bits[size_t(p * a1.classes + c)] != b.bits[size_t(p * b.classes + c)]) {
                ++differing;
                break;
            }
    // fp8-e4m3 weights and activations disturb essentially every probe.
    CHECK(differing >= 27);
}

TEST_CASE("label-only oracles are rejected for collection") {
    ProbeSet probes = make_probes(7, 10, {3, 32, 32}, 5);
    PlatformRegistry reg = default_registry();
    LocalOracle oracle(make_served(probe_cnn(), reg.by_id("fp32"), ResponseMode::LabelOnly));
    CHECK_THROWS_WITH_AS(collect_logits(oracle, probes), doctest::Contains("logits-required"),
                         Error);
}

TEST_CASE("collection validates probe shape against the oracle") {
    ProbeSet probes = make_probes(7, 10, {1, 1, 48}, 5);
    PlatformRegistry reg = default_registry();
    LocalOracle oracle(make_served(probe_cnn(), reg.by_id("fp32")));
    CHECK_THROWS_WITH_AS(collect_logits(oracle, probes), doctest::Contains("shape"), Error);
    ProbeSet empty;
    empty.shape = {3, 32, 32};
    CHECK_THROWS_AS(collect_logits(oracle, empty), Error);
}

TEST_CASE("logit dump files round-trip") {
    LogitDump d;
    d.profile_id = "fp16";
    d.probe_seed = 99;
    d.probe_shape = {3, 4, 4};
    d.count = 3;
    d.classes = 2;
    d.bits = {0x3f800000u, 0x00000000u, 0x7fc00000u, 0x80000001u, 0x41c80000u, 0xdeadbeefu};
    const char* path = "/tmp/hspi_test_dump.bin";
    save_logit_dump(path, d);
    LogitDump r = load_logit_dump(path);
    CHECK(r.profile_id == d.profile_id);
    CHECK(r.probe_seed == d.probe_seed);
    CHECK(r.probe_shape == d.probe_shape);
    CHECK(r.count == d.count);
    CHECK(r.classes == d.classes);
    CHECK(r.bits == d.bits);
    CHECK(r.logit(0, 0) == 1.0f);

    std::vector<uint8_t> bytes = read_file_bytes(path);
    bytes[0] = 'X';
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(load_logit_dump(path), Error);

    save_logit_dump(path, d);
    bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 3);
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(load_logit_dump(path), doctest::Contains("truncated"), Error);
    std::remove(path);
}

TEST_CASE("feature building pools probes into labeled sets") {
    Model mlp = make_mlp(48, {16}, 4, 712);
    ProbeSet probes = make_probes(9, 60, {1, 1, 48});
    PlatformRegistry reg = default_registry();
    LogitDump a = collect_profile(mlp, reg.by_id("fp32"), probes);
    LogitDump b = collect_profile(mlp, reg.by_id("fp16"), probes);

    FeatureDataset ds = build_samples({a, b}, {0, 1}, 10);
    CHECK(ds.set_size == 10);
    CHECK(ds.feature_dim == 10 * 4 * 3);
    CHECK(ds.features.size() == 12);  // 6 sets per dump
    CHECK(ds.labels.size() == 12);
    int ones = 0;
    for (int64_t l : ds.labels) ones += l == 1;
    CHECK(ones == 6);
    CHECK(ds.eqc_warnings.empty());
    // Every entry is one of the three integer components.
    for (const auto& row : ds.features) {
        CHECK(row.size() == size_t(ds.feature_dim));
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v == std::floor(v));
            CHECK(v <= 8388607.0);
        }
    }

    // Trailing probes that do not fill a set are dropped.
    FeatureDataset big = build_samples({a, b}, {0, 1}, 25);
    CHECK(big.features.size() == 4);

    // The same dump twice is flagged as one equivalence class.
    FeatureDataset same = build_samples({a, a}, {0, 1}, 10);
    REQUIRE(same.eqc_warnings.size() == 1);
    CHECK(same.eqc_warnings[0] == std::pair<int64_t, int64_t>{0, 1});
}

TEST_CASE("feature building validates dump compatibility") {
    Model mlp = make_mlp(48, {16}, 4, 712);
    PlatformRegistry reg = default_registry();
    ProbeSet probes = make_probes(9, 20, {1, 1, 48}, 10);
    LogitDump a = collect_profile(mlp, reg.by_id("fp32"), probes);
    LogitDump b = a;
    b.probe_seed = 10;

    CHECK_THROWS_AS(build_samples({}, {}, 10), Error);
    CHECK_THROWS_AS(build_samples({a, b}, {0, 1}, 10), Error);       // seed mismatch
    CHECK_THROWS_AS(build_samples({a}, {0, 1}, 10), Error);          // label count
    CHECK_THROWS_AS(build_samples({a}, {-1}, 10), Error);            // negative label
    CHECK_THROWS_AS(build_samples({a}, {0}, 21), Error);             // set larger than dump
    LogitDump c = a;
    c.classes = 5;
    c.bits.resize(size_t(c.count * c.classes));
    CHECK_THROWS_AS(build_samples({a, c}, {0, 1}, 10), Error);       // class mismatch
}

TEST_CASE("svm separates a toy dataset and predicts its own labels") {
    FeatureDataset ds = toy_two_blobs(20, 21);
    SvmModel svm = svm_train(ds);
    CHECK(svm.class_count == 2);
    CHECK(svm.feature_dim == 2);
    std::vector<int64_t> preds = svm_predict_all(svm, ds);
    Metrics m = report_metrics(preds, ds.labels);
    CHECK(m.accuracy == 1.0);
    SvmPrediction p = svm_predict(svm, ds.features[0]);
    CHECK(p.label == ds.labels[0]);
    CHECK(p.scores.size() == 2);
}

TEST_CASE("svm training rejects degenerate datasets") {
    FeatureDataset ds;
    ds.feature_dim = 2;
    ds.set_size = 1;
    CHECK_THROWS_AS(svm_train(ds), Error);
    ds.features = {{1.0, 2.0}, {3.0, 4.0}};
    ds.labels = {0, 0};
    CHECK_THROWS_WITH_AS(svm_train(ds), doctest::Contains("single class"), Error);
    SvmConfig bad;
    ds.labels = {0, 1};
    bad.lambda = 0.0;
    CHECK_THROWS_AS(svm_train(ds, bad), Error);
}

TEST_CASE("shuffled labels stay near chance on held-out data") {
    // Features carry no label information at all, so held-out accuracy must
    // hover around 1/C = 0.25; the bound sits several binomial sigmas out.
    FeatureDataset train, held;
    train.feature_dim = held.feature_dim = 8;
    train.set_size = held.set_size = 1;
    Rng rng(77);
    auto fill = [&](FeatureDataset& ds, int n) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> row(8);
            for (double& v : row) v = rng.normal();
            ds.features.push_back(std::move(row));
            ds.labels.push_back(i % 4);
        }
    };
    fill(train, 160);
    fill(held, 40);
    SvmModel svm = svm_train(train);
    Metrics m = report_metrics(svm_predict_all(svm, held), held.labels);
    CHECK(m.accuracy <= 0.5);
    CHECK(m.random_accuracy == 0.25);
}

TEST_CASE("svm training is deterministic in the seed") {
    FeatureDataset ds = toy_two_blobs(15, 22);
    SvmModel a = svm_train(ds);
    SvmModel b = svm_train(ds);
    CHECK(a.weights == b.weights);
    CHECK(a.biases == b.biases);
    CHECK(a.mean == b.mean);
    CHECK(a.scale == b.scale);

    SvmConfig other;
    other.seed = 2;
    SvmModel c = svm_train(ds, other);
    CHECK(a.weights != c.weights);
}

TEST_CASE("standardization is computed from features alone") {
    FeatureDataset ds = toy_two_blobs(15, 23);
    FeatureDataset permuted = ds;
    for (auto& l : permuted.labels) l = 1 - l;
    SvmModel a = svm_train(ds);
    SvmModel b = svm_train(permuted);
    CHECK(a.mean == b.mean);
    CHECK(a.scale == b.scale);

    // A constant dimension falls back to unit scale instead of dividing by 0.
    FeatureDataset flat = ds;
    for (auto& row : flat.features) row[1] = 4.0;
    SvmModel c = svm_train(flat);
    CHECK(c.scale[1] == 1.0);
    CHECK(c.mean[1] == 4.0);
}

TEST_CASE("raw feature mode skips standardization and sharpens recall") {
    const RegistryDumps& rd = registry_dumps();
    FeatureDataset ds = build_samples(rd.dumps, rd.labels, 10);
    CHECK(ds.feature_dim == 10 * 10 * 3);
    CHECK(ds.features.size() == 70);

    SvmConfig raw_cfg;
    raw_cfg.raw_features = true;
    SvmModel raw = svm_train(ds, raw_cfg);
    CHECK(raw.raw_features);
    for (double v : raw.mean) CHECK(v == 0.0);
    for (double v : raw.scale) CHECK(v == 1.0);

    SvmModel std_mode = svm_train(ds);
    double raw_acc = report_metrics(svm_predict_all(raw, ds), ds.labels).accuracy;
    double std_acc = report_metrics(svm_predict_all(std_mode, ds), ds.labels).accuracy;
    // Raw integer components memorize the registry nearly perfectly; the
    // standardized margin caps well below that on this feature family.
    CHECK(raw_acc >= 0.9);
    CHECK(std_acc <= 0.8);
    CHECK(raw_acc > std_acc);
}

TEST_CASE("profiles differing on enough probes are linearly separable") {
    const RegistryDumps& rd = registry_dumps();
    auto two_class = [&](const char* ida, const char* idb) {
        int ia = rd.reg.index_of(ida), ib = rd.reg.index_of(idb);
        REQUIRE(ia >= 0);
        REQUIRE(ib >= 0);
        const LogitDump& a = rd.dumps[size_t(ia)];
        const LogitDump& b = rd.dumps[size_t(ib)];
        int differing = 0;
        for (int64_t p = 0; p < a.count; ++p)
            for (int64_t c = 0; c < a.classes; ++c)
                if (a.bits[size_t(p * a.classes + c)] != b.bits[size_t(p * b.classes + c)]) {
                    ++differing;
                    break;
                }
        // Separability is only promised when the formats actually disagree
        // on a decent fraction of probes.
        REQUIRE(differing >= 20);
        FeatureDataset ds = build_samples({a, b}, {0, 1}, 10);
        SvmConfig cfg;
        cfg.raw_features = true;
        SvmModel svm = svm_train(ds, cfg);
        return report_metrics(svm_predict_all(svm, ds), ds.labels).accuracy;
    };
    CHECK(two_class("fp32", "fp8-e4") == 1.0);
    CHECK(two_class("fp16", "bf16") == 1.0);
    CHECK(two_class("mxint8", "int8") == 1.0);
}

TEST_CASE("identical profiles yield no hallucinated separability") {
    Model mlp = make_mlp(48, {16}, 4, 713);
    ProbeSet probes = make_probes(11, 60, {1, 1, 48});
    PlatformRegistry reg = default_registry();
    LogitDump a = collect_profile(mlp, reg.by_id("fp32"), probes);
    LogitDump b = collect_profile(mlp, reg.by_id("fp32"), probes);
    FeatureDataset ds = build_samples({a, b}, {0, 1}, 10);
    REQUIRE(ds.eqc_warnings.size() == 1);
    SvmModel svm = svm_train(ds);
    Metrics m = report_metrics(svm_predict_all(svm, ds), ds.labels);
    CHECK(m.accuracy <= 0.6);
}

TEST_CASE("prediction validates feature dimensions") {
    FeatureDataset ds = toy_two_blobs(10, 24);
    SvmModel svm = svm_train(ds);
    std::vector<double> wrong = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(svm_predict(svm, wrong), Error);
}

TEST_CASE("all-zero features score by bias alone") {
    SvmModel svm;
    svm.class_count = 3;
    svm.feature_dim = 2;
    svm.raw_features = true;
    svm.weights = {{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
    svm.biases = {0.1, 0.5, -0.2};
    svm.mean = {0.0, 0.0};
    svm.scale = {1.0, 1.0};
    std::vector<double> zero = {0.0, 0.0};
    SvmPrediction p = svm_predict(svm, zero);
    CHECK(p.label == 1);
    CHECK(p.scores == svm.biases);
}

TEST_CASE("svm model files round-trip") {
    FeatureDataset ds = toy_two_blobs(12, 25);
    SvmConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 9;
    SvmModel svm = svm_train(ds, cfg);
    const char* path = "/tmp/hspi_test_svm.bin";
    svm_save(path, svm);
    SvmModel r = svm_load(path);
    CHECK(r.class_count == svm.class_count);
    CHECK(r.feature_dim == svm.feature_dim);
    CHECK(r.raw_features == svm.raw_features);
    CHECK(r.weights == svm.weights);
    CHECK(r.biases == svm.biases);
    CHECK(r.mean == svm.mean);
    CHECK(r.scale == svm.scale);
    CHECK(r.seed == svm.seed);
    CHECK(r.epochs == svm.epochs);
    CHECK(r.lambda == svm.lambda);

    std::vector<uint8_t> bytes = read_file_bytes(path);
    bytes[0] = 'Z';
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(svm_load(path), Error);

    svm_save(path, svm);
    bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 5);
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(svm_load(path), doctest::Contains("truncated"), Error);
    std::remove(path);
}

TEST_CASE("metrics match their closed forms") {
    // Perfect predictor.
    std::vector<int64_t> labels = {0, 1, 2, 3, 0, 1, 2, 3};
    Metrics perfect = report_metrics(labels, labels);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.macro_f1 == 1.0);
    CHECK(perfect.per_class.size() == 4);

    // Constant predictor on a balanced 4-class set: recall 1 on class 0
    // with precision 1/4 gives F1 0.4 there and 0 elsewhere.
    std::vector<int64_t> balanced, constant;
    for (int i = 0; i < 40; ++i) {
        balanced.push_back(i % 4);
        constant.push_back(0);
    }
    Metrics m = report_metrics(constant, balanced);
    CHECK(m.accuracy == doctest::Approx(0.25));
    CHECK(m.random_accuracy == doctest::Approx(0.25));
    CHECK(m.per_class[0].accuracy == 1.0);
    CHECK(m.per_class[0].f1 == doctest::Approx(0.4));
    CHECK(m.per_class[1].f1 == 0.0);
    CHECK(m.macro_f1 == doctest::Approx(0.1));
    // Balanced prevalence 1/4 equals the guess rate, so each class's random
    // baseline F1 collapses to 1/4 as well.
    CHECK(m.random_macro_f1 == doctest::Approx(0.25));

    // Uniform random predictor lands near 1/C.
    Rng rng(31);
    std::vector<int64_t> big_labels, random_preds;
    for (int i = 0; i < 400; ++i) {
        big_labels.push_back(i % 4);
        random_preds.push_back(int64_t(rng.below(4)));
    }
    Metrics r = report_metrics(random_preds, big_labels);
    CHECK(r.accuracy > 0.15);
    CHECK(r.accuracy < 0.35);

    // Unbalanced supports: p0 = 3/4, p1 = 1/4, C = 2.
    std::vector<int64_t> skewed;
    for (int i = 0; i < 30; ++i) skewed.push_back(0);
    for (int i = 0; i < 10; ++i) skewed.push_back(1);
    Metrics s = report_metrics(skewed, skewed);
    CHECK(s.random_accuracy == doctest::Approx(0.5));
    // 0.6 for the large class, 1/3 for the small one.
    CHECK(s.random_macro_f1 == doctest::Approx((0.6 + 1.0 / 3.0) / 2.0));

    CHECK_THROWS_AS(report_metrics({0, 1}, {0}), Error);
    CHECK_THROWS_AS(report_metrics({}, {}), Error);
}

TEST_CASE("metric reports render tables and csv") {
    std::vector<int64_t> labels = {0, 0, 1, 1};
    std::vector<int64_t> preds = {0, 1, 1, 1};
    Metrics m = report_metrics(preds, labels);
    std::string table = m.table();
    CHECK(table.find("accuracy") != std::string::npos);
    std::string csv = m.csv();
    CHECK(csv.find("class,support,accuracy,f1") != std::string::npos);
    // Header plus one row per class.
    int lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == 3);
}
