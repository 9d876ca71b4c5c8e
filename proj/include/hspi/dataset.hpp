#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hspi/tensor.hpp"

namespace hspi {

// Labeled image set. Pixels live in [0, 255]; models consume pixels / 255.
struct Dataset {
    int64_t count = 0;
    int64_t channels = 0, height = 0, width = 0;
    std::vector<double> pixels;  // [count][channels][height][width]
    std::vector<int64_t> labels;
    int64_t num_classes = 0;

    int64_t sample_numel() const { return channels * height * width; }
    const double* sample(int64_t i) const { return pixels.data() + i * sample_numel(); }
    // [1, c, h, w] batch tensor of sample i, scaled to the model domain.
    Tensor input(int64_t i) const;
    // [n, c, h, w] for samples [first, first+n).
    Tensor batch(int64_t first, int64_t n) const;
};

// Deterministic procedural texture set: `classes` oriented sinusoidal
// gratings with class-specific frequency and per-channel phase, plus seeded
// pixel noise. 3x32x32, pixel range [0, 255].
Dataset synthetic_textures(int64_t per_class, int64_t classes, uint64_t seed);

// Two linearly separable Gaussian blobs in `dim` dimensions (as 1x1 images
// so the same plumbing fits MLPs).
Dataset blobs_2class(int64_t per_class, int64_t dim, uint64_t seed);

// CIFAR-10 binary batches: each record is 1 label byte + 3072 pixel bytes.
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

}  // namespace hspi
