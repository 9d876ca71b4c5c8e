#include "hspi/engine.hpp"

#include <algorithm>
#include <cmath>

namespace hspi {

namespace {

struct Mode {
    const FormatSpec* fmt = nullptr;     // partial-sum grid; null = exact accumulation
    const QuantScheme* act = nullptr;    // activation quantization; null = raw
    AccumOrder order = AccumOrder::sequential();
    AccumOrder conv_order = AccumOrder::sequential();
    bool gemm_conv = false;
};

struct WeightsView {
    std::vector<std::span<const double>> w, b;
};

void quantize_activations(Tensor& t, const QuantScheme& scheme) {
    // Per sample: quantization scales must never couple batch elements, or
    // forward would stop being a pure function of (input, profile).
    int64_t batch = t.dim(0);
    int64_t per = t.numel() / batch;
    for (int64_t s = 0; s < batch; ++s)
        quantize_values(std::span<double>(t.data.data() + s * per, size_t(per)), scheme);
}

Tensor linear_forward(const Tensor& x, const Linear& l, std::span<const double> W,
                      std::span<const double> b, const Mode& m) {
    if (x.rank() != 2 || x.dim(1) != l.in)
        throw Error("linear: expected [batch, " + std::to_string(l.in) + "], got " + x.shape_str());
    int64_t batch = x.dim(0);
    Tensor y = Tensor::zeros({batch, l.out});
    for (int64_t s = 0; s < batch; ++s) {
        const double* xv = x.data.data() + s * l.in;
        double* yv = y.data.data() + s * l.out;
        for (int64_t j = 0; j < l.out; ++j) {
            const double* wr = W.data() + j * l.in;
            double acc;
            if (m.fmt) {
                const FormatSpec& f = *m.fmt;
                acc = detail::reduce_generated(
                    l.in, [&](int64_t i) { return f.quantize(xv[i] * wr[i]); }, m.order, &f);
                yv[j] = f.quantize(acc + b[size_t(j)]);
            } else {
                acc = detail::reduce_generated(
                    l.in, [&](int64_t i) { return xv[i] * wr[i]; }, m.order, nullptr);
                yv[j] = acc + b[size_t(j)];
            }
        }
    }
    return y;
}

Tensor conv_forward(const Tensor& x, const Conv2d& c, std::span<const double> W,
                    std::span<const double> b, const Mode& m, bool gemm) {
    if (x.rank() != 4 || x.dim(1) != c.in_ch)
        throw Error("conv2d: expected [batch, " + std::to_string(c.in_ch) + ", h, w], got " +
                    x.shape_str());
    int64_t batch = x.dim(0), H = x.dim(2), Wd = x.dim(3);
    int64_t oh_n = (H + 2 * c.pad - c.kh) / c.stride + 1;
    int64_t ow_n = (Wd + 2 * c.pad - c.kw) / c.stride + 1;
    if (oh_n <= 0 || ow_n <= 0) throw Error("conv2d: kernel larger than padded input");
    const AccumOrder& order = gemm ? m.conv_order : m.order;
    int64_t K = c.in_ch * c.kh * c.kw;
    std::vector<double> scratch(size_t(K), 0.0);
    Tensor y = Tensor::zeros({batch, c.out_ch, oh_n, ow_n});
    for (int64_t s = 0; s < batch; ++s) {
        const double* xs = x.data.data() + s * c.in_ch * H * Wd;
        for (int64_t oc = 0; oc < c.out_ch; ++oc) {
            const double* wf = W.data() + oc * K;
            double bias = b[size_t(oc)];
            double* ys = y.data.data() + ((s * c.out_ch + oc) * oh_n) * ow_n;
            for (int64_t oh = 0; oh < oh_n; ++oh) {
                for (int64_t ow = 0; ow < ow_n; ++ow) {
                    // The direct kernel skips out-of-bounds taps; im2col
                    // materializes them as zero columns, which shifts how
                    // real taps share accumulation blocks.
                    int64_t cnt = 0;
                    for (int64_t ci = 0; ci < c.in_ch; ++ci) {
                        for (int64_t ki = 0; ki < c.kh; ++ki) {
                            int64_t ih = oh * c.stride - c.pad + ki;
                            for (int64_t kj = 0; kj < c.kw; ++kj) {
                                int64_t iw = ow * c.stride - c.pad + kj;
                                bool inside = ih >= 0 && ih < H && iw >= 0 && iw < Wd;
                                if (!inside && !gemm) continue;
                                double xv = inside ? xs[(ci * H + ih) * Wd + iw] : 0.0;
                                double p = xv * wf[(ci * c.kh + ki) * c.kw + kj];
                                scratch[size_t(cnt++)] = m.fmt ? m.fmt->quantize(p) : p;
                            }
                        }
                    }
                    double acc = detail::reduce_generated(
                        cnt, [&](int64_t i) { return scratch[size_t(i)]; }, order, m.fmt);
                    ys[oh * ow_n + ow] = m.fmt ? m.fmt->quantize(acc + bias) : acc + bias;
                }
            }
        }
    }
    return y;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0 ? v : 0.0;
    return y;
}

Tensor maxpool_forward(const Tensor& x, int64_t k, std::vector<int64_t>* argmax) {
    if (x.rank() != 4) throw Error("maxpool: expected [batch, c, h, w], got " + x.shape_str());
    int64_t batch = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
    int64_t oh_n = H / k, ow_n = Wd / k;
    if (oh_n <= 0 || ow_n <= 0) throw Error("maxpool: kernel larger than input");
    Tensor y = Tensor::zeros({batch, C, oh_n, ow_n});
    if (argmax) argmax->assign(size_t(y.numel()), 0);
    int64_t oi = 0;
    for (int64_t s = 0; s < batch; ++s) {
        for (int64_t ci = 0; ci < C; ++ci) {
            const double* xp = x.data.data() + (s * C + ci) * H * Wd;
            int64_t base = (s * C + ci) * H * Wd;
            for (int64_t oh = 0; oh < oh_n; ++oh) {
                for (int64_t ow = 0; ow < ow_n; ++ow, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_i = 0;
                    for (int64_t ki = 0; ki < k; ++ki) {
                        for (int64_t kj = 0; kj < k; ++kj) {
                            int64_t idx = (oh * k + ki) * Wd + (ow * k + kj);
                            if (xp[idx] > best) {  // ties keep the first tap
                                best = xp[idx];
                                best_i = idx;
                            }
                        }
                    }
                    y.data[size_t(oi)] = best;
                    if (argmax) (*argmax)[size_t(oi)] = base + best_i;
                }
            }
        }
    }
    return y;
}

Tensor avgpool_forward(const Tensor& x, int64_t k, const Mode& m) {
    if (x.rank() != 4) throw Error("avgpool: expected [batch, c, h, w], got " + x.shape_str());
    int64_t batch = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
    int64_t oh_n = H / k, ow_n = Wd / k;
    if (oh_n <= 0 || ow_n <= 0) throw Error("avgpool: kernel larger than input");
    Tensor y = Tensor::zeros({batch, C, oh_n, ow_n});
    double inv = 1.0 / double(k * k);
    if (m.fmt) inv = m.fmt->quantize(inv);
    std::vector<double> window(size_t(k * k), 0.0);
    int64_t oi = 0;
    for (int64_t s = 0; s < batch; ++s) {
        for (int64_t ci = 0; ci < C; ++ci) {
            const double* xp = x.data.data() + (s * C + ci) * H * Wd;
            for (int64_t oh = 0; oh < oh_n; ++oh) {
                for (int64_t ow = 0; ow < ow_n; ++ow, ++oi) {
                    int64_t cnt = 0;
                    for (int64_t ki = 0; ki < k; ++ki)
                        for (int64_t kj = 0; kj < k; ++kj)
                            window[size_t(cnt++)] = xp[(oh * k + ki) * Wd + (ow * k + kj)];
                    double acc = detail::reduce_generated(
                        cnt, [&](int64_t i) { return window[size_t(i)]; }, m.order, m.fmt);
                    y.data[size_t(oi)] = m.fmt ? m.fmt->quantize(acc * inv) : acc * inv;
                }
            }
        }
    }
    return y;
}

Tensor flatten_forward(const Tensor& x) {
    int64_t batch = x.dim(0);
    Tensor y = x;
    y.shape = {batch, x.numel() / batch};
    return y;
}

Tensor run_forward(const Model& model, const WeightsView& wv, const Tensor& x0,
                   ForwardTape* tape, const Mode& m) {
    if (x0.rank() < 2) throw Error("forward: input needs a batch dimension, got " + x0.shape_str());
    if (tape) {
        tape->entries.clear();
        tape->entries.resize(model.layers.size());
    }
    Tensor cur = x0;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& layer = model.layers[li];
        bool parameterized =
            std::holds_alternative<Linear>(layer) || std::holds_alternative<Conv2d>(layer);
        if (parameterized && m.act) quantize_activations(cur, *m.act);
        if (tape) tape->entries[li].input = cur;
        if (const auto* l = std::get_if<Linear>(&layer)) {
            cur = linear_forward(cur, *l, wv.w[li], wv.b[li], m);
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            cur = conv_forward(cur, *c, wv.w[li], wv.b[li], m, m.gemm_conv);
        } else if (std::holds_alternative<Relu>(layer)) {
            cur = relu_forward(cur);
        } else if (const auto* mp = std::get_if<MaxPool2d>(&layer)) {
            cur = maxpool_forward(cur, mp->k, tape ? &tape->entries[li].argmax : nullptr);
        } else if (const auto* ap = std::get_if<AvgPool2d>(&layer)) {
            cur = avgpool_forward(cur, ap->k, m);
        } else {
            cur = flatten_forward(cur);
        }
    }
    if (cur.rank() != 2 || cur.dim(1) != model.num_classes)
        throw Error("forward: model does not end in [batch, num_classes] logits");
    if (tape) tape->logits = cur;
    return cur;
}

WeightsView raw_weights(const Model& model) {
    WeightsView wv;
    wv.w.resize(model.layers.size());
    wv.b.resize(model.layers.size());
    for (size_t li = 0; li < model.layers.size(); ++li) {
        if (const auto* l = std::get_if<Linear>(&model.layers[li])) {
            wv.w[li] = l->W;
            wv.b[li] = l->b;
        } else if (const auto* c = std::get_if<Conv2d>(&model.layers[li])) {
            wv.w[li] = c->W;
            wv.b[li] = c->b;
        }
    }
    return wv;
}

WeightsView prepared_weights(const PreparedModel& pm) {
    WeightsView wv;
    wv.w.resize(pm.qw.size());
    wv.b.resize(pm.qb.size());
    for (size_t li = 0; li < pm.qw.size(); ++li) {
        wv.w[li] = pm.qw[li];
        wv.b[li] = pm.qb[li];
    }
    return wv;
}

// Weight tensors quantize along the reduction dimension: one row (output
// neuron / filter) at a time, so block formats never straddle rows.
void quantize_weight_rows(std::vector<double>& w, int64_t rows, const QuantScheme& scheme) {
    int64_t per = int64_t(w.size()) / rows;
    for (int64_t r = 0; r < rows; ++r)
        quantize_values(std::span<double>(w.data() + r * per, size_t(per)), scheme);
}

Mode mode_for(const PreparedModel& pm) {
    Mode m;
    m.fmt = pm.elem_fmt();
    m.act = &pm.profile.format;
    m.order = pm.order;
    m.conv_order = pm.conv_order;
    m.gemm_conv = pm.profile.conv_kernel == ConvKernel::Gemm;
    return m;
}

}  // namespace

PreparedModel prepare(const Model& model, const PlatformProfile& profile) {
    PreparedModel pm;
    pm.model = &model;
    pm.profile = profile;
    pm.order = effective_order(profile);
    pm.conv_order = effective_conv_order(profile);
    pm.qw.resize(model.layers.size());
    pm.qb.resize(model.layers.size());
    bool minifloat = std::holds_alternative<FormatSpec>(profile.format);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const double* w = nullptr;
        const double* b = nullptr;
        int64_t rows = 0;
        size_t wn = 0, bn = 0;
        if (const auto* l = std::get_if<Linear>(&model.layers[li])) {
            w = l->W.data();
            b = l->b.data();
            rows = l->out;
            wn = l->W.size();
            bn = l->b.size();
        } else if (const auto* c = std::get_if<Conv2d>(&model.layers[li])) {
            w = c->W.data();
            b = c->b.data();
            rows = c->out_ch;
            wn = c->W.size();
            bn = c->b.size();
        } else {
            continue;
        }
        pm.qw[li].assign(w, w + wn);
        pm.qb[li].assign(b, b + bn);
        quantize_weight_rows(pm.qw[li], rows, profile.format);
        // Integer kernels keep bias in the wide accumulator; minifloat
        // platforms round it like any other operand.
        if (minifloat) quantize_values(pm.qb[li], profile.format);
    }
    return pm;
}

Tensor forward(const PreparedModel& pm, const Tensor& x, ForwardTape* tape) {
    return run_forward(*pm.model, prepared_weights(pm), x, tape, mode_for(pm));
}

Tensor forward(const Model& model, const Tensor& x, const PlatformProfile& profile) {
    PreparedModel pm = prepare(model, profile);
    return forward(pm, x, nullptr);
}

Tensor forward_reference(const Model& model, const Tensor& x, ForwardTape* tape) {
    Mode m;
    return run_forward(model, raw_weights(model), x, tape, m);
}

namespace {

Tensor conv2d_standalone(const Tensor& x, const Conv2d& layer, const PlatformProfile& profile,
                         bool gemm) {
    Model tmp;
    tmp.layers.emplace_back(layer);
    tmp.num_classes = layer.out_ch;
    PlatformProfile p = profile;
    p.conv_kernel = gemm ? ConvKernel::Gemm : ConvKernel::Direct;
    PreparedModel pm = prepare(tmp, p);
    Tensor xq = x;
    Mode m = mode_for(pm);
    quantize_activations(xq, p.format);
    return conv_forward(xq, layer, pm.qw[0], pm.qb[0], m, gemm);
}

}  // namespace

Tensor conv2d_direct(const Tensor& x, const Conv2d& layer, const PlatformProfile& profile) {
    return conv2d_standalone(x, layer, profile, false);
}

Tensor conv2d_gemm(const Tensor& x, const Conv2d& layer, const PlatformProfile& profile) {
    return conv2d_standalone(x, layer, profile, true);
}

double cross_entropy(std::span<const double> logits, int64_t label) {
    if (label < 0 || size_t(label) >= logits.size())
        throw Error("cross_entropy: label out of range");
    double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double l : logits) sum += std::exp(l - m);
    return std::log(sum) - (logits[size_t(label)] - m);
}

std::vector<double> softmax(std::span<const double> logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, int64_t label) {
    if (label < 0 || size_t(label) >= logits.size())
        throw Error("cross_entropy: label out of range");
    std::vector<double> g = softmax(logits);
    g[size_t(label)] -= 1.0;
    return g;
}

int64_t argmax_label(std::span<const double> logits) {
    int64_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[size_t(best)]) best = int64_t(i);  // ties keep the lowest index
    return best;
}

}  // namespace hspi
