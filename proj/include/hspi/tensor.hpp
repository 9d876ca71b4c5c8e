#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hspi/common.hpp"

namespace hspi {

// Dense row-major tensor of 64-bit reals. All emulated arithmetic runs on
// doubles; number formats exist only as quantization grids applied to them.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel() != int64_t(data.size())) throw Error("tensor shape/data mismatch");
    }

    static Tensor zeros(std::vector<int64_t> s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d <= 0) throw Error("tensor dims must be positive");
            n *= d;
        }
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(size_t(n), 0.0);
        return t;
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i)
            s += (i ? "x" : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (size_t i = 0; i < a.data.size(); ++i) {
        uint64_t ua, ub;
        std::memcpy(&ua, &a.data[i], 8);
        std::memcpy(&ub, &b.data[i], 8);
        if (ua != ub) return false;
    }
    return true;
}

}  // namespace hspi
