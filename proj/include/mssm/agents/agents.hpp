#pragma once

#include "mssm/rssm/model.hpp"
#include "mssm/trainer/adam.hpp"

namespace mssm::agents {

using diff::Param;
using diff::ParamStore;
using diff::Tape;
using diff::Var;

// G_t = r_t + gamma * ((1-lambda) * values[t+1] + lambda * G_{t+1}),
// bootstrapped with G_H = values.back(); |values| = |rewards| + 1.
std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double gamma, double lam);
std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values,
                                double gamma, double lam);

// tanh-squashed diagonal Gaussian with the change-of-variables correction.
struct ActorSample {
    Var action;    // [B x A], in (-1, 1)
    Var log_prob;  // [B x 1]
    Var mean_action;
};

class SquashedGaussianActor {
public:
    static SquashedGaussianActor create(ParamStore& store, const std::string& prefix,
                                        std::int64_t feature_dim, std::int64_t action_dim,
                                        const std::vector<std::int64_t>& hidden, Rng& rng);
    ActorSample sample(Tape& t, const Var& features, const Tensor& noise) const;
    std::int64_t action_dim() const { return action_dim_; }

private:
    diff::Mlp net_;
    std::int64_t action_dim_ = 0;
};

struct SacConfig {
    std::vector<std::int64_t> actor_hidden = {1024, 1024, 1024};
    std::vector<std::int64_t> critic_hidden = {1024, 1024, 1024};
    double discount = 0.99;
    double actor_lr = 1e-3, critic_lr = 1e-3, alpha_lr = 1e-3;
    double actor_clip = 10.0, critic_clip = 100.0;
    double target_decay = 0.995;
    std::int64_t target_interval = 1;
    double init_alpha = 0.1;
    double adam_beta1 = 0.99, adam_beta2 = 0.9;
};

struct Transition {
    Tensor features;       // [N x F]
    Tensor actions;        // [N x A]
    Tensor rewards;        // [N x 1]
    Tensor next_features;  // [N x F]
};

class SacAgent {
public:
    SacAgent(std::int64_t feature_dim, std::int64_t action_dim, SacConfig cfg, std::uint64_t seed);

    // One critic + actor + alpha update on a transition batch.
    std::map<std::string, double> update(const Transition& batch, Rng& rng);

    Tensor act(const Tensor& features, bool deterministic, Rng& rng) const;
    double alpha() const;
    double target_entropy() const { return target_entropy_; }

    ParamStore& params() { return store_; }
    std::uint64_t update_count() const { return update_count_; }

private:
    SacConfig cfg_;
    std::int64_t feature_dim_, action_dim_;
    double target_entropy_;
    ParamStore store_;
    SquashedGaussianActor actor_;
    diff::Mlp q1_, q2_, tq1_, tq2_;
    Param* log_alpha_ = nullptr;
    trainer::Adam actor_opt_, critic_opt_;
    std::uint64_t update_count_ = 0;

    Var critic_q(Tape& t, const diff::Mlp& q, const Var& features, const Var& actions) const;
    void ema_targets();
};

// Gradient step on alpha * (-log_pi - target) w.r.t. log_alpha; returns the
// new log_alpha.
double alpha_update(double mean_log_prob, double target_entropy, double log_alpha,
                    double lr = 1e-3);

struct ImaginationConfig {
    std::vector<std::int64_t> actor_hidden = {300, 300, 300};
    std::vector<std::int64_t> value_hidden = {300, 300, 300};
    double discount = 0.99, lam = 0.95;
    double actor_lr = 8e-5, value_lr = 8e-5;
    double actor_clip = 100.0, value_clip = 100.0;
    double slow_value_decay = 0.98;
    std::int64_t slow_value_interval = 1;
    double slow_value_weight = 1.0;
    std::int64_t horizon = 15;
    double explore_sigma = 0.3;
    double adam_beta1 = 0.99, adam_beta2 = 0.9;
};

class ImaginationAgent {
public:
    ImaginationAgent(std::int64_t feature_dim, std::int64_t action_dim, ImaginationConfig cfg,
                     std::uint64_t seed);

    // Imagination rollout from detached posterior states; updates actor and
    // value nets, never the model.
    std::map<std::string, double> update(const rssm::RssmModel& model, const Tensor& start_h,
                                         const Tensor& start_s, Rng& rng);

    Tensor act(const Tensor& features, bool deterministic, Rng& rng) const;
    const ImaginationConfig& config() const { return cfg_; }

    ParamStore& params() { return store_; }

private:
    ImaginationConfig cfg_;
    std::int64_t feature_dim_, action_dim_;
    ParamStore store_;
    SquashedGaussianActor actor_;
    diff::Mlp value_, slow_value_;
    trainer::Adam actor_opt_, value_opt_;
    std::uint64_t update_count_ = 0;

    void ema_slow_value();
};

}  // namespace mssm::agents
