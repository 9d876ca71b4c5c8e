#include "hspi/platform.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "hspi/engine.hpp"

namespace hspi {

ConvKernel parse_conv_kernel(const std::string& text) {
    if (text == "direct") return ConvKernel::Direct;
    if (text == "gemm") return ConvKernel::Gemm;
    throw Error("unknown conv kernel: " + text);
}

std::string conv_kernel_name(ConvKernel k) {
    return k == ConvKernel::Direct ? "direct" : "gemm";
}

AccumOrder effective_order(const PlatformProfile& p) {
    if (p.batch_group <= 1) return p.accum_order;
    // Grouped batches dispatch to tiled kernels: blocked orders scale their
    // tile with the group, anything else becomes a small fixed tile.
    if (p.accum_order.kind == AccumOrder::Kind::Blocked)
        return AccumOrder::blocked(p.accum_order.block_size * p.batch_group);
    return AccumOrder::blocked(4 * p.batch_group);
}

AccumOrder effective_conv_order(const PlatformProfile& p) {
    if (p.conv_kernel == ConvKernel::Direct) return effective_order(p);
    return AccumOrder::blocked(16 * std::max(1, p.batch_group));
}

const PlatformProfile& PlatformRegistry::by_id(const std::string& id) const {
    for (const auto& p : profiles)
        if (p.id == id) return p;
    throw Error("unknown profile id: " + id);
}

int PlatformRegistry::index_of(const std::string& id) const {
    for (size_t i = 0; i < profiles.size(); ++i)
        if (profiles[i].id == id) return int(i);
    return -1;
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream ss(line);
    std::string t;
    while (ss >> t) {
        if (t[0] == '#') break;
        toks.push_back(t);
    }
    return toks;
}

}  // namespace

PlatformRegistry registry_parse(const std::string& text) {
    PlatformRegistry reg;
    PlatformProfile* cur = nullptr;
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto toks = tokenize(line);
        if (toks.empty()) continue;
        if (toks[0] == "profile") {
            if (toks.size() != 2) throw ParseError("profile needs exactly one id", line_no);
            for (const auto& p : reg.profiles)
                if (p.id == toks[1]) throw ParseError("duplicate profile id: " + toks[1], line_no);
            reg.profiles.emplace_back();
            cur = &reg.profiles.back();
            cur->id = toks[1];
            continue;
        }
        if (!cur) throw ParseError("field before any profile block: " + toks[0], line_no);
        if (toks.size() != 2) throw ParseError("expected 'field value': " + line, line_no);
        try {
            if (toks[0] == "format") {
                cur->format = parse_format(toks[1]);
            } else if (toks[0] == "accum-order") {
                cur->accum_order = parse_accum_order(toks[1]);
            } else if (toks[0] == "conv-kernel") {
                cur->conv_kernel = parse_conv_kernel(toks[1]);
            } else if (toks[0] == "batch-group") {
                int v = std::stoi(toks[1]);
                if (v < 1) throw Error("batch-group must be positive");
                cur->batch_group = v;
            } else if (toks[0] == "logit-format") {
                QuantScheme s = parse_format(toks[1]);
                const auto* f = std::get_if<FormatSpec>(&s);
                if (!f) throw Error("logit-format must be a minifloat format");
                cur->logit_emit_format = *f;
            } else {
                throw ParseError("unknown field: " + toks[0], line_no);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(e.what(), line_no);
        } catch (const std::exception& e) {
            throw ParseError(std::string(e.what()) + ": " + line, line_no);
        }
    }
    if (reg.profiles.empty()) throw Error("empty-registry");
    return reg;
}

PlatformRegistry registry_load(const std::string& path) {
    return registry_parse(read_file_text(path));
}

std::string registry_format(const PlatformRegistry& reg) {
    std::string out;
    for (const auto& p : reg.profiles) {
        out += "profile " + p.id + "\n";
        out += "  format " + scheme_name(p.format) + "\n";
        out += "  accum-order " + accum_order_name(p.accum_order) + "\n";
        out += "  conv-kernel " + conv_kernel_name(p.conv_kernel) + "\n";
        out += "  batch-group " + std::to_string(p.batch_group) + "\n";
        out += "  logit-format " + p.logit_emit_format.name() + "\n";
        out += "\n";
    }
    return out;
}

void registry_save(const std::string& path, const PlatformRegistry& reg) {
    if (reg.profiles.empty()) throw Error("empty-registry");
    write_file_text(path, registry_format(reg));
}

uint64_t registry_hash(const PlatformRegistry& reg) {
    std::string text = registry_format(reg);
    return fnv1a64(text.data(), text.size());
}

PlatformRegistry default_registry() {
    PlatformRegistry reg;
    auto add = [&](const std::string& id, const std::string& fmt) {
        PlatformProfile p;
        p.id = id;
        p.format = parse_format(fmt);
        reg.profiles.push_back(std::move(p));
    };
    add("fp32", "fp32");
    add("bf16", "bf16");
    add("fp16", "fp16");
    add("mxint8", "mxint8:bs=32");
    add("fp8-e3", "fp8-e3m4");
    add("fp8-e4", "fp8-e4m3");
    add("int8", "int8-dyn");
    return reg;
}

DiffReport eqc_diff(const Model& model, const std::vector<Tensor>& inputs,
                    const PlatformProfile& p1, const PlatformProfile& p2) {
    PreparedModel a = prepare(model, p1);
    PreparedModel b = prepare(model, p2);
    DiffReport rep;
    for (const Tensor& x : inputs) {
        Tensor la = forward(a, x);
        Tensor lb = forward(b, x);
        bool differs = false;
        for (size_t i = 0; i < la.data.size(); ++i) {
            float fa = float(p1.logit_emit_format.quantize(la.data[i]));
            float fb = float(p2.logit_emit_format.quantize(lb.data[i]));
            ++rep.logits_compared;
            uint32_t ua, ub;
            std::memcpy(&ua, &fa, 4);
            std::memcpy(&ub, &fb, 4);
            if (ua != ub) {
                ++rep.logits_differing;
                differs = true;
                uint32_t x32 = ua ^ ub;
                int hi = 31;
                while (hi > 0 && !(x32 >> hi & 1)) --hi;
                ++rep.bit_histogram[size_t(hi)];
                rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(double(fa) - double(fb)));
            }
        }
        ++rep.inputs_compared;
        if (differs) ++rep.inputs_differing;
    }
    rep.same_eqc = rep.logits_differing == 0;
    return rep;
}

std::string DiffReport::summary() const {
    std::string s;
    s += same_eqc ? "same-eqc: yes\n" : "same-eqc: no\n";
    s += "inputs: " + std::to_string(inputs_differing) + "/" + std::to_string(inputs_compared) +
         " differ\n";
    s += "logits: " + std::to_string(logits_differing) + "/" + std::to_string(logits_compared) +
         " differ\n";
    s += "max-abs-diff: " + fmt_double(max_abs_diff) + "\n";
    s += "highest-differing-bit histogram (bit31=sign ... bit0):\n";
    for (int i = 31; i >= 0; --i) {
        if (bit_histogram[size_t(i)] == 0) continue;
        s += "  bit" + std::to_string(i) + ": " + std::to_string(bit_histogram[size_t(i)]) + "\n";
    }
    return s;
}

}  // namespace hspi
