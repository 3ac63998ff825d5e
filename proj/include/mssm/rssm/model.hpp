#pragma once

#include <functional>
#include <optional>

#include "mssm/diff/nets.hpp"
#include "mssm/diff/serialize.hpp"
#include "mssm/dists/gaussian.hpp"
#include "mssm/rssm/config.hpp"

namespace mssm::rssm {

using diff::Tape;
using diff::Var;
using dists::GaussVar;

// Batched latent state in the graph: deterministic memory h, stochastic
// sample s, and the distribution s was drawn from.
struct LatentState {
    Var h;       // [B x h_dim]
    Var s;       // [B x s_dim]
    GaussVar s_dist;
};

// One time step of a posterior rollout, keeping what the objectives need.
struct RolloutStep {
    LatentState state;
    GaussVar prior;
    std::map<std::string, Var> embeds;  // per-modality encoder outputs
};

// Value-level observations for one time step: modality id -> tensor.
// Vector payloads are [B x D]; images are [B, C, hw, hw].
using ObsBatch = std::map<std::string, Tensor>;
using ObsVars = std::map<std::string, Var>;

// Aligned subsequence batch. prev_action[t] is the action executed before
// obs[t] arrived (zero rows at episode starts); action[t] is the action taken
// after obs[t] (used by CPC forwarding and inverse dynamics); reward[t] is
// the reward that arrived with obs[t].
struct SeqBatch {
    std::vector<ObsBatch> obs;
    std::vector<Tensor> prev_action;
    std::vector<Tensor> action;
    std::vector<Tensor> reward;  // [B x 1]

    std::int64_t length() const { return static_cast<std::int64_t>(obs.size()); }
    std::int64_t batch() const { return prev_action.empty() ? 0 : prev_action[0].dim(0); }
};

// Value-level filtering state for environment interaction.
struct FilterState {
    Tensor h;       // [1 x h_dim]
    Tensor s;       // [1 x s_dim] (sample in train mode, mean in eval mode)
    Tensor s_mean;  // [1 x s_dim]
};

using PolicyFn = std::function<Var(Tape&, const Var& features)>;

struct ImaginedTrajectory {
    std::vector<LatentState> states;  // z_0 (start) .. z_H
    std::vector<Var> actions;         // a_0 .. a_{H-1}
    std::vector<Var> reward_means;    // predicted at z_1 .. z_H, [B x 1]
};

class RssmModel {
public:
    RssmModel(RssmConfig cfg, std::uint64_t seed);

    const RssmConfig& config() const { return cfg_; }
    diff::ParamStore& params() { return store_; }

    // --- graph builders -------------------------------------------------
    std::map<std::string, Var> encode_each(Tape& t, const ObsVars& obs) const;
    Var encode(Tape& t, const ObsVars& obs) const;  // concatenated in declared order
    ObsVars lift(Tape& t, const ObsBatch& obs) const;  // tensors -> constant Vars

    // h_t = GRU(psi_det([s_prev; a_prev]), h_prev)
    Var det_step(Tape& t, const Var& s_prev, const Var& a_prev, const Var& h_prev) const;
    GaussVar prior_dist(Tape& t, const Var& h) const;
    GaussVar posterior_dist(Tape& t, const Var& h, const Var& embed) const;

    // Full belief chain over a subsequence. noise[t] is [B x s_dim]; when
    // sample_mode is false the posterior mean is propagated instead.
    std::vector<RolloutStep> posterior_rollout(Tape& t, const SeqBatch& batch,
                                               const std::vector<Tensor>& noise,
                                               bool sample_mode = true,
                                               const LatentState* init = nullptr) const;

    LatentState initial_state(Tape& t, std::int64_t batch) const;

    // Roll the dynamics forward under a policy; never touches observations.
    ImaginedTrajectory imagine(Tape& t, const LatentState& start, const PolicyFn& policy,
                               std::int64_t horizon, Rng& noise_rng) const;

    GaussVar predict_reward(Tape& t, const LatentState& state) const;  // std fixed at 1
    Var decode_modality(Tape& t, const LatentState& state, const std::string& id) const;

    // [h ; mean(s_dist)]; detached so actor/critic gradients never reach the
    // representation.
    Var policy_features(Tape& t, const LatentState& state, bool detached = true) const;

    // log f(z_i, o_j) matrix for a contrastive modality: rows index states,
    // columns index observation embeddings.
    Var score_log_matrix(Tape& t, const std::string& id, const Var& state_features,
                         const Var& embeds) const;
    // Positive scalar score between one embedding row and one state row.
    Var score_variational(Tape& t, const std::string& id, const Var& embed_row,
                          const LatentState& state) const;
    Var score_predictive(Tape& t, const std::string& id, const Var& next_embed_row,
                         const LatentState& forwarded_state) const;

    // [h ; s] with gradients intact (representation-side features).
    Var state_features(Tape& t, const LatentState& state) const;

    Var inverse_dynamics(Tape& t, const LatentState& z_t, const LatentState& z_next) const;

    // --- value-level helpers ---------------------------------------------
    FilterState initial_filter() const;
    FilterState filter_step(const FilterState& prev, const ObsBatch& obs,
                            const Tensor& prev_action, bool eval_mode, Rng& rng) const;
    Tensor features_value(const FilterState& f) const;  // [1 x feature_dim]

    std::uint64_t param_hash() const;

private:
    RssmConfig cfg_;
    diff::ParamStore store_;

    struct ModalityNets {
        std::optional<diff::Mlp> vec_enc;
        std::optional<diff::ConvEncoder> img_enc;
        std::optional<diff::Mlp> vec_dec;
        std::optional<diff::ConvDecoder> img_dec;
        std::optional<diff::LayerNormProjection> rho_o;
        std::optional<diff::Mlp> rho_z_mlp;
        std::optional<diff::LayerNormProjection> rho_z_out;
        diff::Param* log_lambda = nullptr;
    };
    std::map<std::string, ModalityNets> nets_;
    std::optional<diff::Mlp> det_mlp_;
    std::optional<diff::Gru> gru_;
    std::optional<diff::Mlp> dyn_mlp_;
    std::optional<diff::Mlp> var_mlp_;
    std::optional<diff::Mlp> reward_mlp_;
    std::optional<diff::Mlp> invdyn_mlp_;

    Var rho_z(Tape& t, const std::string& id, const Var& feats) const;
    GaussVar head_to_gauss(Tape& t, const diff::Mlp& mlp, const Var& input) const;
};

}  // namespace mssm::rssm
