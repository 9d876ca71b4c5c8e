#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hspi/tensor.hpp"

namespace hspi {

struct Linear {
    int64_t in = 0, out = 0;
    std::vector<double> W;  // [out][in]
    std::vector<double> b;  // [out]
};

struct Conv2d {
    int64_t out_ch = 0, in_ch = 0, kh = 0, kw = 0;
    int64_t stride = 1, pad = 0;
    std::vector<double> W;  // [out][in][kh][kw]
    std::vector<double> b;  // [out]
};

struct Relu {};

struct MaxPool2d {
    int64_t k = 2;  // kernel == stride, no padding
};

struct AvgPool2d {
    int64_t k = 2;
};

struct Flatten {};

using Layer = std::variant<Linear, Conv2d, Relu, MaxPool2d, AvgPool2d, Flatten>;

struct Model {
    std::vector<Layer> layers;
    int64_t num_classes = 0;
};

// Weight file: magic "HSPIW1", little-endian u32 layer count, then per layer
// u8 type tag, u32 dim count, u32 dims, raw FP32 parameters (weights then
// bias for parameterized layers). num_classes is recovered from the last
// parameterized layer.
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

// Seeded parameter initialization (uniform He) for the two bundled
// architectures.
Model make_mlp(int64_t in_dim, const std::vector<int64_t>& hidden, int64_t classes, uint64_t seed);
// 4 conv layers (3->6->6->12->12, 3x3, pad 1) with three 2x2 maxpools,
// ending in Linear 192 -> classes, for 3x32x32 inputs.
Model make_cnn(int64_t classes, uint64_t seed);

int64_t model_input_numel(const Model& model);

// Per-sample shape of the batches a model expects. Convolutional models
// assume the bundled 32x32 geometry.
std::vector<int64_t> model_input_shape(const Model& model);

}  // namespace hspi
