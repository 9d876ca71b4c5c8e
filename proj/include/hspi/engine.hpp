#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hspi/model.hpp"
#include "hspi/platform.hpp"
#include "hspi/tensor.hpp"

namespace hspi {

// A model bound to a profile: weights pre-quantized under the profile's
// scheme, reduction orders resolved. Immutable after construction; safe to
// share across threads.
struct PreparedModel {
    const Model* model = nullptr;
    PlatformProfile profile;
    AccumOrder order;       // linear/direct-conv reductions
    AccumOrder conv_order;  // gemm convolutions
    std::vector<std::vector<double>> qw;  // per layer, empty for non-parameterized
    std::vector<std::vector<double>> qb;

    // Per-element/per-partial-sum grid; null for integer schemes, which
    // quantize whole tensors and accumulate exactly.
    const FormatSpec* elem_fmt() const { return std::get_if<FormatSpec>(&profile.format); }
};

PreparedModel prepare(const Model& model, const PlatformProfile& profile);

// Per-layer records needed to backpropagate to the input with the
// straight-through estimator: the activations each layer actually consumed
// (post-quantization) and maxpool selections.
struct TapeEntry {
    Tensor input;
    std::vector<int64_t> argmax;
};

struct ForwardTape {
    std::vector<TapeEntry> entries;
    Tensor logits;
};

// Emulated forward pass. x: [batch, ...] in the model's input domain.
// Every reduction follows the prepared orders; minifloat profiles quantize
// inputs, weights, products, partial sums and outputs; integer schemes
// fake-quantize tensors at layer boundaries and accumulate exactly (wide
// accumulators). Pass a tape to record for backward.
Tensor forward(const PreparedModel& pm, const Tensor& x, ForwardTape* tape = nullptr);
Tensor forward(const Model& model, const Tensor& x, const PlatformProfile& profile);

// Plain double-precision forward (training / gradient reference path).
Tensor forward_reference(const Model& model, const Tensor& x, ForwardTape* tape = nullptr);

// d loss / d input, computed in plain double arithmetic over the recorded
// activations and the prepared (quantized) weights; quantizer derivative is
// treated as identity.
Tensor backward_input(const PreparedModel& pm, const ForwardTape& tape, const Tensor& dlogits);

// Parameter gradients for training; reference arithmetic, raw weights.
struct ParamGrads {
    std::vector<std::vector<double>> dw;
    std::vector<std::vector<double>> db;
};
ParamGrads zero_grads(const Model& model);
// Accumulates into grads, returns d input.
Tensor backward_reference(const Model& model, const ForwardTape& tape, const Tensor& dlogits,
                          ParamGrads* grads);

// Single convolution entry points (profile-parameterized); x: [batch, cin, h, w].
Tensor conv2d_direct(const Tensor& x, const Conv2d& layer, const PlatformProfile& profile);
Tensor conv2d_gemm(const Tensor& x, const Conv2d& layer, const PlatformProfile& profile);

// -log softmax(logits)[label], max-subtracted; grad is softmax - onehot.
double cross_entropy(std::span<const double> logits, int64_t label);
std::vector<double> cross_entropy_grad(std::span<const double> logits, int64_t label);
std::vector<double> softmax(std::span<const double> logits);
int64_t argmax_label(std::span<const double> logits);

}  // namespace hspi
