#include "hspi/numerics.hpp"

#include <algorithm>
#include <charconv>

namespace hspi {

namespace {

// Round to the nearest integer, ties to even, independent of the fenv
// rounding mode.
double rne_integer(double x) {
    double a = std::abs(x);
    if (a >= 0x1.0p52) return x;
    double f = std::floor(a);
    double d = a - f;
    if (d > 0.5 || (d == 0.5 && std::fmod(f, 2.0) != 0.0)) f += 1.0;
    return std::signbit(x) ? -f : f;
}

int parse_int_suffix(const std::string& text, size_t pos, const std::string& what) {
    int v = 0;
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || v <= 0)
        throw Error("invalid " + what + ": " + text);
    return v;
}

}  // namespace

void FormatSpec::finalize() {
    if (kind_ == Kind::IntegerGrid) {
        emin_ = 0;
        emax_ = 52;
        max_finite_ = std::numeric_limits<double>::max();
        min_subnormal_ = 1.0;
        zero_cut_ = 0;
        fp32_shortcut_ = false;
        return;
    }
    bool ok = exponent_bits_ >= 2 && exponent_bits_ <= 11 && mantissa_bits_ >= 0 &&
              1 + exponent_bits_ + mantissa_bits_ <= 32 && bias_ >= -900 &&
              bias_ + mantissa_bits_ <= 900;
    if (!supports_inf_ && supports_nan_ && mantissa_bits_ < 1) ok = false;
    if (!ok) throw Error("invalid-format: " + name_);

    int top = (1 << exponent_bits_) - 1;
    emin_ = 1 - bias_;
    if (supports_inf_) {
        emax_ = top - 1 - bias_;
        max_finite_ = (2.0 - std::ldexp(1.0, -mantissa_bits_)) * std::ldexp(1.0, emax_);
    } else if (supports_nan_) {
        // Single NaN encoding (all ones); the rest of the top code is finite.
        emax_ = top - bias_;
        max_finite_ = (2.0 - std::ldexp(1.0, 1 - mantissa_bits_)) * std::ldexp(1.0, emax_);
    } else {
        emax_ = top - bias_;
        max_finite_ = (2.0 - std::ldexp(1.0, -mantissa_bits_)) * std::ldexp(1.0, emax_);
    }
    if (!std::isfinite(max_finite_)) throw Error("invalid-format: " + name_);
    min_subnormal_ = std::ldexp(1.0, emin_ - mantissa_bits_);
    zero_cut_ = min_subnormal_ / 2;
    fp32_shortcut_ = exponent_bits_ == 8 && mantissa_bits_ == 23 && bias_ == 127 &&
                     supports_inf_ && supports_nan_;
}

const FormatSpec& FormatSpec::fp32() {
    static const FormatSpec f("fp32", 8, 23, 127, true, true);
    return f;
}

const FormatSpec& FormatSpec::fp16() {
    static const FormatSpec f("fp16", 5, 10, 15, true, true);
    return f;
}

const FormatSpec& FormatSpec::bf16() {
    static const FormatSpec f("bf16", 8, 7, 127, true, true);
    return f;
}

const FormatSpec& FormatSpec::fp8_e4m3() {
    static const FormatSpec f("fp8-e4m3", 4, 3, 7, false, true);
    return f;
}

const FormatSpec& FormatSpec::fp8_e3m4() {
    static const FormatSpec f("fp8-e3m4", 3, 4, 3, false, true);
    return f;
}

const FormatSpec& FormatSpec::int_round() {
    static const FormatSpec f = [] {
        FormatSpec g;
        g.name_ = "int-round";
        g.kind_ = Kind::IntegerGrid;
        g.finalize();
        return g;
    }();
    return f;
}

std::vector<double> FormatSpec::enumerate_finite() const {
    if (kind_ != Kind::Minifloat || 1 + exponent_bits_ + mantissa_bits_ > 16)
        throw Error("enumerate_finite: format too wide");
    int top = (1 << exponent_bits_) - 1;
    int64_t man_count = int64_t(1) << mantissa_bits_;
    std::vector<double> out;
    out.reserve(size_t(2) * size_t(top + 1) * size_t(man_count));
    for (int sign = 0; sign < 2; ++sign) {
        for (int c = 0; c <= top; ++c) {
            for (int64_t m = 0; m < man_count; ++m) {
                if (c == top) {
                    if (supports_inf_) continue;  // Inf or NaN block
                    if (supports_nan_ && m == man_count - 1) continue;  // the NaN encoding
                }
                double v = c == 0 ? double(m) * std::ldexp(1.0, emin_ - mantissa_bits_)
                                  : double(man_count + m) * std::ldexp(1.0, c - bias_ - mantissa_bits_);
                out.push_back(sign ? -v : v);
            }
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

void quantize_values(std::span<double> values, const QuantScheme& scheme) {
    if (const auto* fmt = std::get_if<FormatSpec>(&scheme)) {
        for (double& v : values) v = fmt->quantize(v);
        return;
    }
    if (const auto* blk = std::get_if<BlockIntFormat>(&scheme)) {
        int64_t qmin = -(int64_t(1) << (blk->element_bits - 1));
        int64_t qmax = -qmin - 1;
        size_t bs = size_t(blk->block_size > 0 ? blk->block_size : 1);
        for (size_t b = 0; b < values.size(); b += bs) {
            size_t hi = std::min(b + bs, values.size());
            double amax = 0;
            for (size_t i = b; i < hi; ++i) amax = std::max(amax, std::abs(values[i]));
            if (amax == 0) continue;
            int e = std::clamp(std::ilogb(amax), -127, 127);
            double scale = std::ldexp(1.0, e - (blk->element_bits - 2));
            for (size_t i = b; i < hi; ++i) {
                double q = rne_integer(values[i] / scale);
                q = std::clamp(q, double(qmin), double(qmax));
                values[i] = q * scale;
            }
        }
        return;
    }
    const auto& dyn = std::get<DynamicIntScheme>(scheme);
    double qmax = double((int64_t(1) << (dyn.bits - 1)) - 1);
    double amax = 0;
    for (double v : values) amax = std::max(amax, std::abs(v));
    double scale = amax == 0 ? 1.0 : amax / qmax;
    for (double& v : values) {
        double q = std::clamp(rne_integer(v / scale), -qmax, qmax);
        v = q * scale;
    }
}

std::string scheme_name(const QuantScheme& s) {
    if (const auto* fmt = std::get_if<FormatSpec>(&s)) return fmt->name();
    if (const auto* blk = std::get_if<BlockIntFormat>(&s))
        return "mxint8:bs=" + std::to_string(blk->block_size);
    return "int8-dyn";
}

QuantScheme parse_format(const std::string& text) {
    if (text == "fp32") return FormatSpec::fp32();
    if (text == "fp16") return FormatSpec::fp16();
    if (text == "bf16") return FormatSpec::bf16();
    if (text == "fp8-e4m3" || text == "fp8-e4") return FormatSpec::fp8_e4m3();
    if (text == "fp8-e3m4" || text == "fp8-e3") return FormatSpec::fp8_e3m4();
    if (text == "int-round") return FormatSpec::int_round();
    if (text == "int8-dyn" || text == "int8") return DynamicIntScheme{};
    if (text == "mxint8") return BlockIntFormat{};
    if (text.rfind("mxint8:bs=", 0) == 0) {
        BlockIntFormat blk;
        blk.block_size = parse_int_suffix(text, 10, "block size");
        return blk;
    }
    throw Error("unknown-format: " + text);
}

AccumOrder parse_accum_order(const std::string& text) {
    if (text == "sequential-left" || text == "seq") return AccumOrder::sequential();
    if (text == "pairwise-tree" || text == "pairwise") return AccumOrder::pairwise();
    if (text.rfind("blocked:bs=", 0) == 0)
        return AccumOrder::blocked(parse_int_suffix(text, 11, "block size"));
    throw Error("unknown accumulation order: " + text);
}

std::string accum_order_name(const AccumOrder& order) {
    switch (order.kind) {
        case AccumOrder::Kind::SequentialLeft: return "sequential-left";
        case AccumOrder::Kind::PairwiseTree: return "pairwise-tree";
        case AccumOrder::Kind::Blocked: return "blocked:bs=" + std::to_string(order.block_size);
    }
    return "sequential-left";
}

double reduce_sum(std::span<const double> values, const AccumOrder& order, const FormatSpec& fmt) {
    if (values.empty()) throw Error("reduce_sum: empty input");
    double r = detail::reduce_generated(
        int64_t(values.size()), [&](int64_t i) { return values[size_t(i)]; }, order, &fmt);
    return fmt.quantize(r);
}

double dot(std::span<const double> a, std::span<const double> b, const AccumOrder& order,
           const FormatSpec& fmt) {
    if (a.size() != b.size()) throw Error("dot: length mismatch");
    if (a.empty()) throw Error("dot: empty input");
    double r = detail::reduce_generated(
        int64_t(a.size()),
        [&](int64_t i) { return fmt.quantize(a[size_t(i)] * b[size_t(i)]); }, order, &fmt);
    return fmt.quantize(r);
}

}  // namespace hspi
