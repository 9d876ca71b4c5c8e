#include <cmath>

#include "hspi/engine.hpp"

namespace hspi {

namespace {

// One reverse step through `layer`, reading the forward activations from
// `entry`. Quantizers are straight-through, so the math is the plain-double
// chain rule over whichever weights (quantized or raw) the forward pass used.
Tensor backward_layer(const Layer& layer, const TapeEntry& entry, const Tensor& dy,
                      std::span<const double> W, std::vector<double>* dw,
                      std::vector<double>* db) {
    const Tensor& x = entry.input;
    if (const auto* l = std::get_if<Linear>(&layer)) {
        int64_t batch = dy.dim(0);
        Tensor dx = Tensor::zeros(x.shape);
        for (int64_t s = 0; s < batch; ++s) {
            const double* g = dy.data.data() + s * l->out;
            const double* xv = x.data.data() + s * l->in;
            double* dxv = dx.data.data() + s * l->in;
            for (int64_t j = 0; j < l->out; ++j) {
                double gj = g[j];
                const double* wr = W.data() + j * l->in;
                for (int64_t i = 0; i < l->in; ++i) dxv[i] += gj * wr[i];
                if (dw) {
                    double* dwr = dw->data() + j * l->in;
                    for (int64_t i = 0; i < l->in; ++i) dwr[i] += gj * xv[i];
                }
                if (db) (*db)[size_t(j)] += gj;
            }
        }
        return dx;
    }
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
        int64_t batch = dy.dim(0), oh_n = dy.dim(2), ow_n = dy.dim(3);
        int64_t H = x.dim(2), Wd = x.dim(3);
        int64_t K = c->in_ch * c->kh * c->kw;
        Tensor dx = Tensor::zeros(x.shape);
        for (int64_t s = 0; s < batch; ++s) {
            const double* xs = x.data.data() + s * c->in_ch * H * Wd;
            double* dxs = dx.data.data() + s * c->in_ch * H * Wd;
            for (int64_t oc = 0; oc < c->out_ch; ++oc) {
                const double* wf = W.data() + oc * K;
                double* dwf = dw ? dw->data() + oc * K : nullptr;
                for (int64_t oh = 0; oh < oh_n; ++oh) {
                    for (int64_t ow = 0; ow < ow_n; ++ow) {
                        double gj = dy.data[((s * c->out_ch + oc) * oh_n + oh) * ow_n + ow];
                        if (gj == 0) continue;
                        if (db) (*db)[size_t(oc)] += gj;
                        for (int64_t ci = 0; ci < c->in_ch; ++ci) {
                            for (int64_t ki = 0; ki < c->kh; ++ki) {
                                int64_t ih = oh * c->stride - c->pad + ki;
                                if (ih < 0 || ih >= H) continue;
                                for (int64_t kj = 0; kj < c->kw; ++kj) {
                                    int64_t iw = ow * c->stride - c->pad + kj;
                                    if (iw < 0 || iw >= Wd) continue;
                                    int64_t xi = (ci * H + ih) * Wd + iw;
                                    int64_t wi = (ci * c->kh + ki) * c->kw + kj;
                                    dxs[xi] += gj * wf[wi];
                                    if (dwf) dwf[wi] += gj * xs[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }
    if (std::holds_alternative<Relu>(layer)) {
        Tensor dx = dy;
        for (size_t i = 0; i < dx.data.size(); ++i)
            if (x.data[i] <= 0) dx.data[i] = 0;
        return dx;
    }
    if (std::holds_alternative<MaxPool2d>(layer)) {
        Tensor dx = Tensor::zeros(x.shape);
        for (size_t i = 0; i < dy.data.size(); ++i)
            dx.data[size_t(entry.argmax[i])] += dy.data[i];
        return dx;
    }
    if (const auto* ap = std::get_if<AvgPool2d>(&layer)) {
        int64_t k = ap->k;
        int64_t batch = dy.dim(0), C = dy.dim(1), oh_n = dy.dim(2), ow_n = dy.dim(3);
        int64_t H = x.dim(2), Wd = x.dim(3);
        double inv = 1.0 / double(k * k);
        Tensor dx = Tensor::zeros(x.shape);
        int64_t oi = 0;
        for (int64_t s = 0; s < batch; ++s) {
            for (int64_t ci = 0; ci < C; ++ci) {
                double* dxp = dx.data.data() + (s * C + ci) * H * Wd;
                for (int64_t oh = 0; oh < oh_n; ++oh)
                    for (int64_t ow = 0; ow < ow_n; ++ow, ++oi) {
                        double g = dy.data[size_t(oi)] * inv;
                        for (int64_t ki = 0; ki < k; ++ki)
                            for (int64_t kj = 0; kj < k; ++kj)
                                dxp[(oh * k + ki) * Wd + (ow * k + kj)] += g;
                    }
            }
        }
        return dx;
    }
    // Flatten: undo the reshape.
    Tensor dx = dy;
    dx.shape = x.shape;
    return dx;
}

Tensor backward_core(const Model& model, const ForwardTape& tape, const Tensor& dlogits,
                     const std::vector<std::vector<double>>* qw, ParamGrads* grads) {
    if (tape.entries.size() != model.layers.size())
        throw Error("backward: tape does not match a recorded forward pass");
    Tensor dy = dlogits;
    for (size_t li = model.layers.size(); li-- > 0;) {
        const Layer& layer = model.layers[li];
        std::span<const double> W;
        if (qw) {
            W = (*qw)[li];
        } else if (const auto* l = std::get_if<Linear>(&layer)) {
            W = l->W;
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            W = c->W;
        }
        std::vector<double>* dw = grads ? &grads->dw[li] : nullptr;
        std::vector<double>* db = grads ? &grads->db[li] : nullptr;
        dy = backward_layer(layer, tape.entries[li], dy, W, dw, db);
    }
    return dy;
}

}  // namespace

ParamGrads zero_grads(const Model& model) {
    ParamGrads g;
    g.dw.resize(model.layers.size());
    g.db.resize(model.layers.size());
    for (size_t li = 0; li < model.layers.size(); ++li) {
        if (const auto* l = std::get_if<Linear>(&model.layers[li])) {
            g.dw[li].assign(l->W.size(), 0.0);
            g.db[li].assign(l->b.size(), 0.0);
        } else if (const auto* c = std::get_if<Conv2d>(&model.layers[li])) {
            g.dw[li].assign(c->W.size(), 0.0);
            g.db[li].assign(c->b.size(), 0.0);
        }
    }
    return g;
}

Tensor backward_input(const PreparedModel& pm, const ForwardTape& tape, const Tensor& dlogits) {
    return backward_core(*pm.model, tape, dlogits, &pm.qw, nullptr);
}

Tensor backward_reference(const Model& model, const ForwardTape& tape, const Tensor& dlogits,
                          ParamGrads* grads) {
    return backward_core(model, tape, dlogits, nullptr, grads);
}

}  // namespace hspi
