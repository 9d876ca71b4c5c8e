#include "hspi/dataset.hpp"

#include <cmath>

#include "hspi/common.hpp"
#include "hspi/rng.hpp"

namespace hspi {

Tensor Dataset::input(int64_t i) const { return batch(i, 1); }

Tensor Dataset::batch(int64_t first, int64_t n) const {
    if (first < 0 || first + n > count) throw Error("dataset: batch out of range");
    Tensor t = Tensor::zeros({n, channels, height, width});
    const double* src = sample(first);
    for (int64_t i = 0; i < n * sample_numel(); ++i) t.data[size_t(i)] = src[i] / 255.0;
    return t;
}

Dataset synthetic_textures(int64_t per_class, int64_t classes, uint64_t seed) {
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.num_classes = classes;
    d.count = per_class * classes;
    d.pixels.reserve(size_t(d.count) * size_t(d.sample_numel()));
    d.labels.reserve(size_t(d.count));
    const double pi = 3.14159265358979323846;
    for (int64_t c = 0; c < classes; ++c) {
        double theta = pi * double(c) / double(classes);
        double freq = 2.0 + 0.7 * double(c);
        double cx = std::cos(theta), sx = std::sin(theta);
        for (int64_t n = 0; n < per_class; ++n) {
            Rng rng = Rng::substream(seed, "textures-" + std::to_string(c) + "-" +
                                               std::to_string(n));
            double jitter = (rng.uniform01() - 0.5) * 2.0;  // phase offset per sample
            for (int64_t ch = 0; ch < 3; ++ch) {
                double phase = jitter + 2.0 * pi * double(ch) * double(c + 1) / 7.0;
                for (int64_t y = 0; y < 32; ++y) {
                    for (int64_t x = 0; x < 32; ++x) {
                        double u = (double(x) * cx + double(y) * sx) / 32.0;
                        double v = 127.5 + 60.0 * std::sin(2.0 * pi * freq * u + phase) +
                                   12.0 * rng.normal();
                        d.pixels.push_back(std::clamp(v, 0.0, 255.0));
                    }
                }
            }
            d.labels.push_back(c);
        }
    }
    return d;
}

Dataset blobs_2class(int64_t per_class, int64_t dim, uint64_t seed) {
    Dataset d;
    d.channels = 1;
    d.height = 1;
    d.width = dim;
    d.num_classes = 2;
    d.count = per_class * 2;
    Rng rng = Rng::substream(seed, "blobs");
    for (int64_t c = 0; c < 2; ++c) {
        double center = c == 0 ? 64.0 : 192.0;
        for (int64_t n = 0; n < per_class; ++n) {
            for (int64_t i = 0; i < dim; ++i)
                d.pixels.push_back(std::clamp(center + 16.0 * rng.normal(), 0.0, 255.0));
            d.labels.push_back(c);
        }
    }
    return d;
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
    constexpr int64_t kRecord = 1 + 3072;
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.num_classes = 10;
    for (const auto& path : batch_paths) {
        auto bytes = read_file_bytes(path);
        if (bytes.empty() || bytes.size() % kRecord != 0)
            throw Error("cifar10: file size is not a multiple of 3073: " + path);
        int64_t records = int64_t(bytes.size()) / kRecord;
        for (int64_t r = 0; r < records; ++r) {
            const uint8_t* rec = bytes.data() + r * kRecord;
            if (rec[0] > 9) throw Error("cifar10: label byte out of range: " + path);
            d.labels.push_back(rec[0]);
            for (int64_t i = 0; i < 3072; ++i) d.pixels.push_back(double(rec[1 + i]));
        }
        d.count += records;
    }
    if (d.count == 0) throw Error("cifar10: no input files");
    return d;
}

}  // namespace hspi
