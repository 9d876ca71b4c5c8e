#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hspi/oracle.hpp"
#include "hspi/tensor.hpp"

namespace hspi {

// Random calibration images in the integer pixel domain (values 0..255,
// stored as doubles so the same Tensor plumbing applies throughout).
struct ProbeSet {
    std::vector<int64_t> shape;  // per probe, e.g. {3, 32, 32}
    std::vector<Tensor> images;
    uint64_t seed = 0;
    int64_t set_size = 10;  // probes pooled per classifier sample
};

// Uniform reals in [0, 1) per pixel, scaled by 255 and rounded to the
// integer grid. Deterministic in the seed; count must cover one sample.
ProbeSet make_probes(uint64_t seed, int64_t count, const std::vector<int64_t>& shape,
                     int64_t set_size = 10);

// One profile's collected logits: raw FP32 bit patterns plus the probe
// provenance needed to check that two collections used identical inputs.
struct LogitDump {
    std::string profile_id;  // collector's bookkeeping tag; may be empty
    uint64_t probe_seed = 0;
    std::vector<int64_t> probe_shape;
    int64_t count = 0;    // probes
    int64_t classes = 0;  // logits per probe
    std::vector<uint32_t> bits;  // [count][classes]

    float logit(int64_t probe, int64_t cls) const;
};

// Queries the oracle with every probe, batch_group probes per request
// (0 = the oracle's own batch grouping), and records the logits bit for
// bit. The oracle must serve logits, not just labels.
LogitDump collect_logits(Oracle& oracle, const ProbeSet& probes, int batch_group = 0);

void save_logit_dump(const std::string& path, const LogitDump& dump);
LogitDump load_logit_dump(const std::string& path);

// IEEE-754 single fields, each viewed as a plain integer.
struct LogitBits {
    uint32_t sign = 0;      // 0 or 1
    uint32_t exponent = 0;  // 0..255
    uint32_t fraction = 0;  // 0..2^23-1
};

LogitBits split_bits(float v);
float reassemble_bits(const LogitBits& parts);

// Classifier dataset: each row pools set_size consecutive probes' logits,
// split into (sign, exponent, fraction) integers, labeled with the
// originating profile's registry index.
struct FeatureDataset {
    int64_t feature_dim = 0;
    int64_t set_size = 0;
    std::vector<std::vector<double>> features;  // raw integer-valued components
    std::vector<int64_t> labels;
    // Label pairs that produced byte-identical feature vectors; a nonempty
    // list means the profiles are indistinguishable upstream (same EQC).
    std::vector<std::pair<int64_t, int64_t>> eqc_warnings;
};

// dumps[i] is labeled labels[i]. All dumps must come from identical probes
// (same seed, shape and count); trailing probes that do not fill a whole
// set are dropped.
FeatureDataset build_samples(const std::vector<LogitDump>& dumps,
                             const std::vector<int64_t>& labels, int64_t set_size);

struct SvmConfig {
    double lambda = 1e-3;
    int epochs = 200;
    uint64_t seed = 1;
    bool raw_features = false;  // ablation: skip standardization
};

// One-vs-rest linear SVMs with per-dimension feature standardization
// (computed from the pooled features only, never the labels).
struct SvmModel {
    int64_t class_count = 0;
    int64_t feature_dim = 0;
    bool raw_features = false;
    std::vector<std::vector<double>> weights;  // [class][dim]
    std::vector<double> biases;                // [class]
    std::vector<double> mean, scale;           // [dim]
    uint64_t seed = 1;
    int epochs = 200;
    double lambda = 1e-3;
};

// Deterministic Pegasos-schedule subgradient descent on the hinge loss.
SvmModel svm_train(const FeatureDataset& data, const SvmConfig& cfg = {});

struct SvmPrediction {
    int64_t label = 0;
    std::vector<double> scores;  // per class
};

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> features);
std::vector<int64_t> svm_predict_all(const SvmModel& model, const FeatureDataset& data);

void svm_save(const std::string& path, const SvmModel& model);
SvmModel svm_load(const std::string& path);

struct ClassMetrics {
    int64_t label = 0;
    int64_t support = 0;
    double accuracy = 0;  // recall restricted to this class's samples
    double f1 = 0;
};

struct Metrics {
    double accuracy = 0;
    std::vector<ClassMetrics> per_class;  // classes observed in the labels
    double macro_f1 = 0;
    // Baselines for a uniform random guesser over the observed classes:
    // accuracy 1/C; per-class F1 = 2 p_c (1/C) / (p_c + 1/C) for class
    // prevalence p_c, averaged into a macro score.
    double random_accuracy = 0;
    double random_macro_f1 = 0;

    std::string table() const;  // plain-text report
    std::string csv() const;    // header + one row per class
};

Metrics report_metrics(const std::vector<int64_t>& predictions,
                       const std::vector<int64_t>& labels);

}  // namespace hspi
