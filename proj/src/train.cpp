#include "hspi/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "hspi/engine.hpp"
#include "hspi/rng.hpp"

namespace hspi {

namespace {

struct ParamRefs {
    std::vector<std::vector<double>*> w, b;  // per layer, null for non-parameterized
};

ParamRefs param_refs(Model& model) {
    ParamRefs r;
    r.w.resize(model.layers.size(), nullptr);
    r.b.resize(model.layers.size(), nullptr);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        if (auto* l = std::get_if<Linear>(&model.layers[li])) {
            r.w[li] = &l->W;
            r.b[li] = &l->b;
        } else if (auto* c = std::get_if<Conv2d>(&model.layers[li])) {
            r.w[li] = &c->W;
            r.b[li] = &c->b;
        }
    }
    return r;
}

void snap_to_fp32(Model& model) {
    auto refs = param_refs(model);
    for (size_t li = 0; li < refs.w.size(); ++li) {
        if (!refs.w[li]) continue;
        for (double& v : *refs.w[li]) v = double(float(v));
        for (double& v : *refs.b[li]) v = double(float(v));
    }
}

}  // namespace

TrainResult train_reference(Model& model, const Dataset& data, const TrainConfig& cfg) {
    if (data.count == 0) throw Error("train: empty dataset");
    auto refs = param_refs(model);
    ParamGrads vel = zero_grads(model);  // momentum buffers
    Rng shuffle_rng = Rng::substream(cfg.seed, "train-shuffle");
    std::vector<int64_t> idx(size_t(data.count));
    std::iota(idx.begin(), idx.end(), 0);

    double lr = cfg.lr;
    double last_loss = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch > 0 && cfg.lr_decay_every > 0 && epoch % cfg.lr_decay_every == 0)
            lr *= cfg.lr_decay;
        shuffle_rng.shuffle(idx);
        double loss_sum = 0;
        int64_t seen = 0;
        for (int64_t start = 0; start < data.count; start += cfg.batch_size) {
            int64_t bsz = std::min<int64_t>(cfg.batch_size, data.count - start);
            Tensor x = Tensor::zeros({bsz, data.channels, data.height, data.width});
            std::vector<int64_t> labels(size_t(bsz), 0);
            for (int64_t i = 0; i < bsz; ++i) {
                const double* src = data.sample(idx[size_t(start + i)]);
                double* dst = x.data.data() + i * data.sample_numel();
                for (int64_t j = 0; j < data.sample_numel(); ++j) dst[j] = src[j] / 255.0;
                labels[size_t(i)] = data.labels[size_t(idx[size_t(start + i)])];
            }
            ForwardTape tape;
            Tensor logits = forward_reference(model, x, &tape);
            Tensor dlogits = Tensor::zeros(logits.shape);
            int64_t C = logits.dim(1);
            for (int64_t i = 0; i < bsz; ++i) {
                std::span<const double> row(logits.data.data() + i * C, size_t(C));
                loss_sum += cross_entropy(row, labels[size_t(i)]);
                auto g = cross_entropy_grad(row, labels[size_t(i)]);
                for (int64_t j = 0; j < C; ++j)
                    dlogits.data[size_t(i * C + j)] = g[size_t(j)] / double(bsz);
            }
            seen += bsz;
            ParamGrads grads = zero_grads(model);
            backward_reference(model, tape, dlogits, &grads);
            for (size_t li = 0; li < refs.w.size(); ++li) {
                if (!refs.w[li]) continue;
                auto& w = *refs.w[li];
                auto& b = *refs.b[li];
                for (size_t i = 0; i < w.size(); ++i) {
                    vel.dw[li][i] = cfg.momentum * vel.dw[li][i] + grads.dw[li][i];
                    w[i] -= lr * vel.dw[li][i];
                }
                for (size_t i = 0; i < b.size(); ++i) {
                    vel.db[li][i] = cfg.momentum * vel.db[li][i] + grads.db[li][i];
                    b[i] -= lr * vel.db[li][i];
                }
            }
        }
        last_loss = loss_sum / double(seen);
        if (!std::isfinite(last_loss))
            throw Error("train: loss diverged (seed " + std::to_string(cfg.seed) + ", epoch " +
                        std::to_string(epoch) + ")");
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %d loss %.4f\n", epoch, last_loss);
    }
    snap_to_fp32(model);
    TrainResult res;
    res.final_loss = last_loss;
    res.train_accuracy = evaluate_accuracy(model, data);
    return res;
}

double evaluate_accuracy(const Model& model, const Dataset& data) {
    int64_t correct = 0;
    constexpr int64_t kChunk = 64;
    for (int64_t start = 0; start < data.count; start += kChunk) {
        int64_t n = std::min(kChunk, data.count - start);
        Tensor logits = forward_reference(model, data.batch(start, n));
        int64_t C = logits.dim(1);
        for (int64_t i = 0; i < n; ++i) {
            std::span<const double> row(logits.data.data() + i * C, size_t(C));
            if (argmax_label(row) == data.labels[size_t(start + i)]) ++correct;
        }
    }
    return double(correct) / double(data.count);
}

}  // namespace hspi
