#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hspi/engine.hpp"
#include "hspi/oracle.hpp"
#include "hspi/platform.hpp"

namespace hspi {

struct PgdConfig {
    enum class Loss : uint8_t { PairDivergence, OneVsOneTargeted, OneVsRestTargeted };
    Loss loss = Loss::PairDivergence;
    double step = 2.0 / 255.0;  // sign-step size in the model input domain
    int max_iters = 400;
    std::optional<int64_t> target_class;  // required by the targeted losses
    int batch_size = 8;  // independent starting images per campaign
    uint64_t seed = 1;
};

PgdConfig::Loss parse_bi_loss(const std::string& text);
std::string bi_loss_name(PgdConfig::Loss loss);

// L = CE(logits_h, y_prime) + CE(logits_hp, y): drives the two platforms'
// predictions apart; maximized by gradient ascent. y/y_prime are the current
// argmax labels of h/hp respectively.
double loss_pair_divergence(std::span<const double> logits_h, std::span<const double> logits_hp,
                            int64_t y_prime, int64_t y);

// CE(logits_h, y_t) - CE(logits_hp, y_t): minimized by descent, pulling h
// toward the target class and pushing hp off it.
double loss_one_vs_one_targeted(std::span<const double> logits_h,
                                std::span<const double> logits_hp, int64_t y_t);

// sum_{k != singled_out} CE(logits_k, y_t) - CE(logits_singled, y_t):
// maximized by ascent, pulling one platform toward the target class and all
// others away. With two profiles this equals the one-vs-one loss with the
// singled-out platform in second position.
double loss_one_vs_rest_targeted(const std::vector<std::vector<double>>& all_logits,
                                 size_t singled_out, int64_t y_t);

// Clamp to the valid pixel range and round to the integer pixel grid
// (arguments and results in the model input domain, pixels / 255).
Tensor project_to_pixel_grid(const Tensor& x);

enum class CampaignStatus : uint8_t { Success, Indistinguishable, IterationLimit };
std::string campaign_status_name(CampaignStatus s);

// The deployable artifact of a BI run: integer images plus the class label
// each candidate platform assigns them.
struct BorderInputCampaign {
    std::vector<int64_t> input_shape;           // per sample
    std::vector<std::vector<uint8_t>> inputs;   // pixel bytes, one per success
    std::vector<std::vector<int64_t>> expected_labels;  // [input][profile]
    std::vector<std::string> profile_ids;
    int batch_group_used = 1;
    int iterations_used = 0;  // slowest recorded success
    PgdConfig::Loss loss = PgdConfig::Loss::PairDivergence;
    uint64_t seed = 1;
};

void save_campaign(const std::string& path, const BorderInputCampaign& c);
BorderInputCampaign load_campaign(const std::string& path);

// Model-domain tensor for one stored campaign input.
Tensor campaign_input(const BorderInputCampaign& c, size_t index);

struct CampaignResult {
    CampaignStatus status = CampaignStatus::IterationLimit;
    BorderInputCampaign campaign;       // successful inputs only
    int starts = 0;
    std::vector<int> success_iteration;  // per start; -1 when none
    bool saw_logit_difference = false;
};

// PGD search for border inputs on one white-box model (or a support set
// whose losses are summed). Success for the pair loss means the two
// profiles label the projected input differently; for the targeted losses
// the singled-out profile (first / target of the loss) must differ from
// every other profile. Trajectories freeze at their first success.
CampaignResult generate_border_inputs(const std::vector<const Model*>& support_models,
                                      const std::vector<PlatformProfile>& profiles,
                                      const PgdConfig& cfg);
CampaignResult generate_border_inputs(const Model& model,
                                      const std::vector<PlatformProfile>& profiles,
                                      const PgdConfig& cfg);

struct IdentifyResult {
    std::vector<std::string> profile_ids;  // descending score order
    std::vector<double> scores;            // fraction of matching labels
    std::vector<double> posterior;         // scores normalized to sum 1
    int oracle_batch_group = 0;
    bool batch_group_matched = true;
};

// Probes a deployed oracle with the campaign inputs and ranks the candidate
// profiles by label agreement. Works with label-only oracles.
IdentifyResult identify_platform(const BorderInputCampaign& campaign, Oracle& oracle);

}  // namespace hspi
