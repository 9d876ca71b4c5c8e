#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hspi/ld.hpp"
#include "hspi/rng.hpp"

namespace hspi {

namespace {

void check_dataset(const FeatureDataset& data) {
    if (data.features.empty()) throw Error("svm: empty dataset");
    if (data.features.size() != data.labels.size())
        throw Error("svm: feature/label count mismatch");
    for (const auto& row : data.features)
        if (int64_t(row.size()) != data.feature_dim) throw Error("svm: ragged feature matrix");
}

std::vector<double> standardized(const SvmModel& m, std::span<const double> x) {
    std::vector<double> z(x.size());
    for (size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m.mean[i]) / m.scale[i];
    return z;
}

}  // namespace

SvmModel svm_train(const FeatureDataset& data, const SvmConfig& cfg) {
    check_dataset(data);
    if (cfg.lambda <= 0) throw Error("svm: lambda must be positive");
    if (cfg.epochs < 1) throw Error("svm: epochs must be positive");
    int64_t max_label = *std::max_element(data.labels.begin(), data.labels.end());
    if (*std::min_element(data.labels.begin(), data.labels.end()) < 0)
        throw Error("svm: negative label");
    int64_t distinct = 0;
    {
        std::vector<int64_t> sorted = data.labels;
        std::sort(sorted.begin(), sorted.end());
        distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
    }
    if (distinct < 2) throw Error("svm: dataset has a single class, nothing to separate");

    SvmModel m;
    m.class_count = max_label + 1;
    m.feature_dim = data.feature_dim;
    m.raw_features = cfg.raw_features;
    m.seed = cfg.seed;
    m.epochs = cfg.epochs;
    m.lambda = cfg.lambda;
    size_t dim = size_t(data.feature_dim);
    size_t n = data.features.size();

    // Standardization is computed from the pooled features alone; labels
    // never enter, so the transform cannot leak class information.
    m.mean.assign(dim, 0.0);
    m.scale.assign(dim, 1.0);
    if (!cfg.raw_features) {
        for (const auto& row : data.features)
            for (size_t j = 0; j < dim; ++j) m.mean[j] += row[j];
        for (double& v : m.mean) v /= double(n);
        std::vector<double> var(dim, 0.0);
        for (const auto& row : data.features)
            for (size_t j = 0; j < dim; ++j) {
                double d = row[j] - m.mean[j];
                var[j] += d * d;
            }
        for (size_t j = 0; j < dim; ++j) {
            double s = std::sqrt(var[j] / double(n));
            m.scale[j] = s > 0 ? s : 1.0;
        }
    }

    std::vector<std::vector<double>> z(n);
    for (size_t i = 0; i < n; ++i) z[i] = standardized(m, data.features[i]);

    m.weights.assign(size_t(m.class_count), std::vector<double>(dim, 0.0));
    m.biases.assign(size_t(m.class_count), 0.0);
    for (int64_t c = 0; c < m.class_count; ++c) {
        std::vector<double>& w = m.weights[size_t(c)];
        double& b = m.biases[size_t(c)];
        Rng rng = Rng::substream(cfg.seed, "svm-class-" + std::to_string(c));
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t(0));
        uint64_t t = 1;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            for (size_t i : order) {
                double eta = 1.0 / (cfg.lambda * double(t++));
                double y = data.labels[i] == c ? 1.0 : -1.0;
                double margin = b;
                for (size_t j = 0; j < dim; ++j) margin += w[j] * z[i][j];
                margin *= y;
                double shrink = 1.0 - eta * cfg.lambda;
                for (double& wj : w) wj *= shrink;
                if (margin < 1.0) {
                    for (size_t j = 0; j < dim; ++j) w[j] += eta * y * z[i][j];
                    b += eta * y;  // bias carries no regularization
                }
            }
        }
    }
    return m;
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> features) {
    if (int64_t(features.size()) != model.feature_dim)
        throw Error("svm: feature dimension mismatch: got " + std::to_string(features.size()) +
                    ", model expects " + std::to_string(model.feature_dim));
    std::vector<double> z = standardized(model, features);
    SvmPrediction pred;
    pred.scores.resize(size_t(model.class_count));
    for (int64_t c = 0; c < model.class_count; ++c) {
        double s = model.biases[size_t(c)];
        const auto& w = model.weights[size_t(c)];
        for (size_t j = 0; j < z.size(); ++j) s += w[j] * z[j];
        pred.scores[size_t(c)] = s;
    }
    pred.label = 0;
    for (int64_t c = 1; c < model.class_count; ++c)
        if (pred.scores[size_t(c)] > pred.scores[size_t(pred.label)]) pred.label = c;
    return pred;
}

std::vector<int64_t> svm_predict_all(const SvmModel& model, const FeatureDataset& data) {
    std::vector<int64_t> out;
    out.reserve(data.features.size());
    for (const auto& row : data.features) out.push_back(svm_predict(model, row).label);
    return out;
}

namespace {
constexpr char kSvmMagic[6] = {'H', 'S', 'P', 'I', 'S', '1'};
}

void svm_save(const std::string& path, const SvmModel& m) {
    std::vector<uint8_t> buf(kSvmMagic, kSvmMagic + 6);
    put_u8(buf, 1);
    put_u32(buf, uint32_t(m.class_count));
    put_u32(buf, uint32_t(m.feature_dim));
    put_u8(buf, m.raw_features ? 1 : 0);
    put_u64(buf, m.seed);
    put_u32(buf, uint32_t(m.epochs));
    put_f64(buf, m.lambda);
    for (const auto& w : m.weights)
        for (double v : w) put_f64(buf, v);
    for (double v : m.biases) put_f64(buf, v);
    for (double v : m.mean) put_f64(buf, v);
    for (double v : m.scale) put_f64(buf, v);
    write_file_bytes(path, buf);
}

SvmModel svm_load(const std::string& path) {
    std::vector<uint8_t> buf = read_file_bytes(path);
    ByteReader r(buf);
    try {
        if (r.str(6) != std::string(kSvmMagic, 6)) throw Error("not an svm model: " + path);
        if (r.u8() != 1) throw Error("unsupported svm model version");
        SvmModel m;
        m.class_count = int64_t(r.u32());
        m.feature_dim = int64_t(r.u32());
        if (m.class_count < 1 || m.feature_dim < 1 ||
            m.class_count * m.feature_dim > (1 << 28))
            throw Error("bad svm model geometry");
        m.raw_features = r.u8() != 0;
        m.seed = r.u64();
        m.epochs = int(r.u32());
        m.lambda = r.f64();
        m.weights.assign(size_t(m.class_count), std::vector<double>(size_t(m.feature_dim)));
        for (auto& w : m.weights)
            for (double& v : w) v = r.f64();
        m.biases.resize(size_t(m.class_count));
        for (double& v : m.biases) v = r.f64();
        m.mean.resize(size_t(m.feature_dim));
        for (double& v : m.mean) v = r.f64();
        m.scale.resize(size_t(m.feature_dim));
        for (double& v : m.scale) v = r.f64();
        if (!r.done()) throw Error("trailing bytes in svm model");
        return m;
    } catch (const ProtocolError&) {
        throw Error("truncated svm model: " + path);
    }
}

Metrics report_metrics(const std::vector<int64_t>& predictions,
                       const std::vector<int64_t>& labels) {
    if (predictions.size() != labels.size()) throw Error("metrics: prediction/label mismatch");
    if (labels.empty()) throw Error("metrics: nothing to score");

    std::map<int64_t, ClassMetrics> per_class;
    for (int64_t lab : labels) {
        per_class[lab].label = lab;
        per_class[lab].support += 1;
    }
    std::map<int64_t, int64_t> true_pos, pred_count;
    size_t hits = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        pred_count[predictions[i]] += 1;
        if (predictions[i] == labels[i]) {
            true_pos[labels[i]] += 1;
            ++hits;
        }
    }

    Metrics rep;
    rep.accuracy = double(hits) / double(labels.size());
    double C = double(per_class.size());
    rep.random_accuracy = 1.0 / C;
    for (auto& [lab, cm] : per_class) {
        double tp = double(true_pos[lab]);
        double recall = tp / double(cm.support);
        double denom = double(pred_count[lab]);
        double precision = denom > 0 ? tp / denom : 0.0;
        cm.accuracy = recall;
        cm.f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        rep.macro_f1 += cm.f1;
        double p_c = double(cm.support) / double(labels.size());
        rep.random_macro_f1 += 2 * p_c * rep.random_accuracy / (p_c + rep.random_accuracy);
        rep.per_class.push_back(cm);
    }
    rep.macro_f1 /= C;
    rep.random_macro_f1 /= C;
    return rep;
}

std::string Metrics::table() const {
    std::string out;
    out += "accuracy " + fmt_double(accuracy) + " (random " + fmt_double(random_accuracy) + ")\n";
    out += "macro-F1 " + fmt_double(macro_f1) + " (random " + fmt_double(random_macro_f1) + ")\n";
    out += "class support accuracy F1\n";
    for (const ClassMetrics& cm : per_class)
        out += std::to_string(cm.label) + " " + std::to_string(cm.support) + " " +
               fmt_double(cm.accuracy) + " " + fmt_double(cm.f1) + "\n";
    return out;
}

std::string Metrics::csv() const {
    std::string out = "class,support,accuracy,f1\n";
    for (const ClassMetrics& cm : per_class)
        out += std::to_string(cm.label) + "," + std::to_string(cm.support) + "," +
               fmt_double(cm.accuracy) + "," + fmt_double(cm.f1) + "\n";
    return out;
}

}  // namespace hspi
