#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hspi/common.hpp"

namespace hspi {

// A minifloat number format: 1 sign bit, `exponent_bits`, `mantissa_bits`.
// Values are carried in doubles ("fake quantization"); quantize() rounds a
// double to the nearest representable value, round-to-nearest-even.
//
// Encoding rules:
//   - supports_inf: the top exponent code is reserved IEEE-style (mantissa 0
//     is +-Inf, the rest NaN).
//   - !supports_inf && supports_nan: only the all-ones encoding is NaN, every
//     other code is finite (FP8-E4M3 style extended range).
//   - neither: all encodings are finite.
// Subnormals are always supported.
class FormatSpec {
  public:
    enum class Kind : uint8_t {
        Minifloat,
        IntegerGrid,  // rounds to the integer grid; models the aggregation
                      // example where partial sums are rounded to whole numbers
    };

    FormatSpec() { finalize(); }
    FormatSpec(std::string name, int exp_bits, int man_bits, int bias, bool inf, bool nan)
        : name_(std::move(name)),
          exponent_bits_(exp_bits),
          mantissa_bits_(man_bits),
          bias_(bias),
          supports_inf_(inf),
          supports_nan_(nan) {
        finalize();
    }

    // Built-in formats.
    static const FormatSpec& fp32();
    static const FormatSpec& fp16();
    static const FormatSpec& bf16();
    static const FormatSpec& fp8_e4m3();
    static const FormatSpec& fp8_e3m4();
    // Rounds every value to the nearest integer (ties to even).
    static const FormatSpec& int_round();

    const std::string& name() const { return name_; }
    int exponent_bits() const { return exponent_bits_; }
    int mantissa_bits() const { return mantissa_bits_; }
    int bias() const { return bias_; }
    bool supports_inf() const { return supports_inf_; }
    bool supports_nan() const { return supports_nan_; }
    Kind kind() const { return kind_; }
    double max_finite() const { return max_finite_; }
    double min_subnormal() const { return min_subnormal_; }
    int min_normal_exp() const { return emin_; }
    int max_finite_exp() const { return emax_; }

    bool operator==(const FormatSpec& o) const {
        return kind_ == o.kind_ && exponent_bits_ == o.exponent_bits_ &&
               mantissa_bits_ == o.mantissa_bits_ && bias_ == o.bias_ &&
               supports_inf_ == o.supports_inf_ && supports_nan_ == o.supports_nan_;
    }

    // Nearest representable value, round-to-nearest-even. Out-of-range values
    // round to +-Inf per IEEE when supports_inf, otherwise saturate to
    // +-max_finite. NaN input throws "unrepresentable-nan" if !supports_nan.
    double quantize(double x) const {
        if (kind_ == Kind::IntegerGrid) return quantize_integer(x);
        if (fp32_shortcut_) return double(float(x));  // float cast is RNE

        uint64_t u = std::bit_cast<uint64_t>(x);
        int biased = int((u >> 52) & 0x7ff);
        if (biased == 0x7ff) {  // Inf or NaN
            if ((u << 12) != 0) {
                if (!supports_nan_) throw Error("unrepresentable-nan");
                return std::numeric_limits<double>::quiet_NaN();
            }
            if (supports_inf_) return x;
            return std::signbit(x) ? -max_finite_ : max_finite_;
        }
        double a = std::abs(x);
        if (a <= zero_cut_) return std::signbit(x) ? -0.0 : 0.0;

        // Grid spacing is 2^t; clamping the exponent at emin covers the
        // subnormal range with a uniform grid.
        int e = biased - 1023;
        int t = (e > emin_ ? e : emin_) - mantissa_bits_;
        int drop = t - (e - 52);
        double r;
        if (drop <= 0) {
            r = a;  // finer grid than the input: exactly representable
        } else {
            uint64_t mant = (uint64_t(1) << 52) | (u & ((uint64_t(1) << 52) - 1));
            uint64_t half = uint64_t(1) << (drop - 1);
            uint64_t low = mant & ((half << 1) - 1);
            uint64_t q = mant >> drop;
            if (low > half || (low == half && (q & 1))) ++q;
            r = double(q) * pow2(t);
        }
        if (r > max_finite_) {
            if (supports_inf_) return std::signbit(x) ? -inf() : inf();
            r = max_finite_;
        }
        return std::signbit(x) ? -r : r;
    }

    // All finite representable values, ascending (tests + oracles; formats up
    // to 16 bits only).
    std::vector<double> enumerate_finite() const;

  private:
    static double inf() { return std::numeric_limits<double>::infinity(); }
    static double pow2(int t) { return std::bit_cast<double>(uint64_t(1023 + t) << 52); }

    double quantize_integer(double x) const {
        if (std::isnan(x) || std::isinf(x)) return x;
        double a = std::abs(x);
        if (a >= 0x1.0p52) return x;  // already integral
        double f = std::floor(a);
        double d = a - f;
        if (d > 0.5 || (d == 0.5 && std::fmod(f, 2.0) != 0.0)) f += 1.0;
        return std::signbit(x) ? -f : f;
    }

    void finalize();

    std::string name_ = "fp32";
    int exponent_bits_ = 8;
    int mantissa_bits_ = 23;
    int bias_ = 127;
    bool supports_inf_ = true;
    bool supports_nan_ = true;
    Kind kind_ = Kind::Minifloat;

    // Derived (checked against exhaustive enumeration in tests).
    int emin_ = -126;
    int emax_ = 127;
    double max_finite_ = 0;
    double min_subnormal_ = 0;
    double zero_cut_ = 0;  // values at or below round to zero (RNE tie -> 0)
    bool fp32_shortcut_ = false;
};

inline double quantize_value(double x, const FormatSpec& fmt) { return fmt.quantize(x); }

// Block integer format (MXINT8): `block_size` consecutive values share one
// exponent; elements are two's-complement integers of `element_bits`.
struct BlockIntFormat {
    int element_bits = 8;
    int block_size = 32;
    int shared_exponent_bits = 8;

    bool operator==(const BlockIntFormat&) const = default;
};

// Dynamic symmetric integer quantization, per-tensor absmax scale.
struct DynamicIntScheme {
    int bits = 8;
    bool symmetric = true;

    bool operator==(const DynamicIntScheme&) const = default;
};

using QuantScheme = std::variant<FormatSpec, BlockIntFormat, DynamicIntScheme>;

// Fake-quantize a flat row-major buffer in place under the scheme.
void quantize_values(std::span<double> values, const QuantScheme& scheme);

// True when the scheme quantizes per element (minifloat); integer schemes
// need tensor/block context and accumulate exactly.
inline const FormatSpec* elementwise_format(const QuantScheme& s) {
    return std::get_if<FormatSpec>(&s);
}

std::string scheme_name(const QuantScheme& s);

// Parse a format config string: "fp32", "bf16", "fp16", "fp8-e4m3", "fp8-e3m4",
// "mxint8[:bs=N]", "int8-dyn". Aliases: "fp8-e4", "fp8-e3", "int8".
QuantScheme parse_format(const std::string& text);

// How a reduction groups its additions. All kinds sum the same sequence; only
// the association differs, which is what separates platforms numerically.
struct AccumOrder {
    enum class Kind : uint8_t { SequentialLeft, PairwiseTree, Blocked };
    Kind kind = Kind::SequentialLeft;
    int block_size = 0;  // Blocked only

    bool operator==(const AccumOrder&) const = default;

    static AccumOrder sequential() { return {Kind::SequentialLeft, 0}; }
    static AccumOrder pairwise() { return {Kind::PairwiseTree, 0}; }
    static AccumOrder blocked(int bs) { return {Kind::Blocked, bs}; }
};

AccumOrder parse_accum_order(const std::string& text);
std::string accum_order_name(const AccumOrder& order);

namespace detail {

// Streams items[0..n) through the grouping, quantizing after every addition
// when `fmt` is non-null. Leaves enter unquantized; callers that need
// quantized leaves (dot products) quantize inside `item`.
template <class Gen>
double reduce_generated(int64_t n, Gen&& item, const AccumOrder& order, const FormatSpec* fmt) {
    auto q = [fmt](double v) { return fmt ? fmt->quantize(v) : v; };
    switch (order.kind) {
        case AccumOrder::Kind::SequentialLeft: {
            double acc = item(int64_t(0));
            for (int64_t i = 1; i < n; ++i) acc = q(acc + item(i));
            return acc;
        }
        case AccumOrder::Kind::Blocked: {
            int64_t bs = order.block_size > 0 ? order.block_size : 1;
            double total = 0;
            bool first_block = true;
            for (int64_t b = 0; b < n; b += bs) {
                int64_t hi = b + bs < n ? b + bs : n;
                double part = item(b);
                for (int64_t i = b + 1; i < hi; ++i) part = q(part + item(i));
                total = first_block ? part : q(total + part);
                first_block = false;
            }
            return total;
        }
        case AccumOrder::Kind::PairwiseTree: {
            // Midpoint split; for 3 elements this is the right-grouped sum.
            auto rec = [&](auto&& self, int64_t lo, int64_t hi) -> double {
                if (hi - lo == 1) return item(lo);
                int64_t mid = lo + (hi - lo) / 2;
                return q(self(self, lo, mid) + self(self, mid, hi));
            };
            return rec(rec, int64_t(0), n);
        }
    }
    return 0;
}

}  // namespace detail

// Grouped sum; every intermediate partial sum (and the final result) passes
// through quantize_value(., fmt).
double reduce_sum(std::span<const double> values, const AccumOrder& order, const FormatSpec& fmt);

// Dot product: each product is quantized to fmt, then reduced with `order`.
double dot(std::span<const double> a, std::span<const double> b, const AccumOrder& order,
           const FormatSpec& fmt);

}  // namespace hspi
