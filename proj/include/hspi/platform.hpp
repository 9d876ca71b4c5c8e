#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hspi/model.hpp"
#include "hspi/numerics.hpp"
#include "hspi/tensor.hpp"

namespace hspi {

enum class ConvKernel : uint8_t { Direct, Gemm };

ConvKernel parse_conv_kernel(const std::string& text);
std::string conv_kernel_name(ConvKernel k);

// The emulated analogue of a (hardware, software stack) pair. Two profiles
// that produce bit-identical logits on every probed input share an
// equivalence class; the attacks can only recover EQCs, never finer.
struct PlatformProfile {
    std::string id;
    QuantScheme format = FormatSpec::fp32();
    AccumOrder accum_order = AccumOrder::sequential();
    ConvKernel conv_kernel = ConvKernel::Direct;
    int batch_group = 1;  // samples sharing one reduction grouping
    FormatSpec logit_emit_format = FormatSpec::fp32();  // applied before logits leave an oracle
};

// Grouping actually used by reductions once batch_group kernel selection is
// applied: grouped batches trigger tiled kernels, so batch_group > 1 turns
// any order into a blocked one and scales existing block sizes.
AccumOrder effective_order(const PlatformProfile& p);
// GEMM convolutions always reduce over im2col tiles of 16 (scaled by the
// batch grouping), whatever the profile's base order.
AccumOrder effective_conv_order(const PlatformProfile& p);

struct PlatformRegistry {
    std::vector<PlatformProfile> profiles;

    const PlatformProfile& by_id(const std::string& id) const;
    int index_of(const std::string& id) const;  // -1 when absent
};

// Human-editable text format: one `profile <id>` block per profile with
// `format`, `accum-order`, `conv-kernel`, `batch-group`, `logit-format`
// lines; `#` comments.
PlatformRegistry registry_load(const std::string& path);
PlatformRegistry registry_parse(const std::string& text);
void registry_save(const std::string& path, const PlatformRegistry& reg);
std::string registry_format(const PlatformRegistry& reg);

// The seven bundled quantization platforms.
PlatformRegistry default_registry();

// Provenance hash over the registry's canonical text form.
uint64_t registry_hash(const PlatformRegistry& reg);

struct DiffReport {
    bool same_eqc = false;
    int64_t inputs_compared = 0;
    int64_t inputs_differing = 0;
    int64_t logits_compared = 0;
    int64_t logits_differing = 0;
    double max_abs_diff = 0;
    // Histogram over the index of the highest differing bit of the FP32
    // encodings (32 bins, bit 31 = sign).
    std::vector<int64_t> bit_histogram = std::vector<int64_t>(32, 0);
    std::string summary() const;
};

DiffReport eqc_diff(const Model& model, const std::vector<Tensor>& inputs,
                    const PlatformProfile& p1, const PlatformProfile& p2);

}  // namespace hspi
