#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mssm::rssm {

// Modality wired to a loss it is not configured for, or a malformed bundle.
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class LossKind { Reconstruction, ContrastiveVariational, ContrastivePredictive };
enum class ModalityKind { Image, Vector };

std::string to_string(LossKind k);
std::string to_string(ModalityKind k);
LossKind loss_from_string(const std::string& s);
ModalityKind modality_from_string(const std::string& s);

struct ModalityConfig {
    std::string id;
    ModalityKind kind = ModalityKind::Vector;
    LossKind loss = LossKind::Reconstruction;

    // vector payloads
    std::int64_t vec_dim = 0;
    std::vector<std::int64_t> enc_hidden = {400, 400, 400};
    std::vector<std::int64_t> dec_hidden = {400, 400, 400};

    // image payloads ([channels, hw, hw] grids in [0,1])
    std::int64_t image_hw = 32;
    std::int64_t image_channels = 3;
    std::vector<std::int64_t> conv_channels = {16, 32, 64};
    std::int64_t conv_kernel = 2, conv_stride = 2;  // exact halving, no padding

    std::int64_t embed_dim = 64;

    void validate() const;
    bool contrastive() const { return loss != LossKind::Reconstruction; }
    std::int64_t flat_obs_dim() const {
        return kind == ModalityKind::Vector ? vec_dim : image_channels * image_hw * image_hw;
    }
};

// Width defaults follow the reference architecture; desk-scale runs override
// them through the config file (see configs/).
struct RssmConfig {
    std::int64_t h_dim = 200;  // deterministic GRU memory
    std::int64_t s_dim = 30;   // stochastic state
    std::int64_t action_dim = 2;

    std::vector<std::int64_t> det_hidden = {400, 400};
    std::int64_t det_out_dim = 400;  // GRU input width
    std::vector<std::int64_t> dyn_hidden = {400, 400};
    std::vector<std::int64_t> var_hidden = {400, 400};
    std::vector<std::int64_t> reward_hidden = {128, 128};  // model-based runs use 3x300
    std::vector<std::int64_t> invdyn_hidden = {128, 128};

    std::int64_t proj_dim = 50;
    std::vector<std::int64_t> rho_z_hidden = {256, 256};
    double init_log_lambda = 0.0;

    std::vector<ModalityConfig> modalities;

    void validate() const;
    std::int64_t embed_dim() const;
    std::int64_t feature_dim() const { return h_dim + s_dim; }
    const ModalityConfig& modality(const std::string& id) const;
    bool any_cpc() const;
    bool any_contrastive() const;

    // Small widths for the toy environments; paper-scale values stay the
    // constructor defaults above.
    static RssmConfig desk_default();
};

}  // namespace mssm::rssm
