#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hspi/engine.hpp"
#include "hspi/rng.hpp"

namespace hspi {

enum class ResponseMode : uint8_t { Logits, LabelOnly };

ResponseMode parse_response_mode(const std::string& text);
std::string response_mode_name(ResponseMode m);

// Optional response perturbations a defender can enable.
struct Defense {
    enum class Kind : uint8_t { None, LogitBitflip, InputNoise };
    Kind kind = Kind::None;
    double p = 0.0;           // per-bit flip probability
    int bit_lo = 0;           // flipped fraction-bit range, inclusive
    int bit_hi = 7;
    double sigma = 0.0;       // input noise stddev, model input domain
};

// "none" | "logit-bitflip:p=0.05[,bits=0-7]" | "input-noise:sigma=0.02"
Defense parse_defense(const std::string& text);
std::string defense_name(const Defense& d);

struct OracleConfig {
    std::string model_path;
    std::string registry_path;
    std::string profile_id;
    ResponseMode response_mode = ResponseMode::Logits;
    Defense defense;
    int port = 0;  // 0 picks an ephemeral port
    int max_batch = 64;
    uint64_t seed = 1;  // defense RNG base seed
    std::vector<int64_t> input_shape;  // per-sample; inferred when empty
};

OracleConfig oracle_config_parse(const std::string& text);
OracleConfig oracle_config_load(const std::string& path);

struct QueryResponse {
    std::optional<Tensor> logits;  // [batch, C]; each value exactly an FP32
    std::vector<int64_t> labels;   // argmax of the served logits
    int64_t served_batch_size = 0;  // grouping the platform actually used
};

struct OracleInfo {
    std::vector<int64_t> input_shape;  // per sample
    int64_t num_classes = 0;
    ResponseMode response_mode = ResponseMode::Logits;
    int batch_group = 1;
    int max_batch = 64;
};

// Query surface shared by the in-process oracle and the network client.
class Oracle {
  public:
    virtual ~Oracle() = default;
    virtual QueryResponse query(const Tensor& batch) = 0;
    virtual OracleInfo info() = 0;
};

// Immutable serving state shared across connections.
struct ServedModel {
    Model model;
    PlatformProfile profile;
    PreparedModel prepared;
    ResponseMode response_mode = ResponseMode::Logits;
    Defense defense;
    int max_batch = 64;
    std::vector<int64_t> input_shape;
    uint64_t base_seed = 1;
};

std::shared_ptr<const ServedModel> make_served(Model model, const PlatformProfile& profile,
                                               ResponseMode mode = ResponseMode::Logits,
                                               Defense defense = {}, int max_batch = 64,
                                               std::vector<int64_t> input_shape = {},
                                               uint64_t seed = 1);
// Loads model and registry files named by the config.
std::shared_ptr<const ServedModel> make_served(const OracleConfig& cfg);

// In-process oracle. Pure function of (batch, profile) when defense is none;
// defenses draw from this instance's private RNG.
class LocalOracle : public Oracle {
  public:
    LocalOracle(std::shared_ptr<const ServedModel> served, uint64_t rng_seed);
    explicit LocalOracle(std::shared_ptr<const ServedModel> served);

    QueryResponse query(const Tensor& batch) override;
    OracleInfo info() override;

  private:
    std::shared_ptr<const ServedModel> served_;
    Rng rng_;
};

}  // namespace hspi
