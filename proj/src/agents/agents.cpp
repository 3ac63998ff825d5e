#include "mssm/agents/agents.hpp"

#include <cmath>
#include <algorithm>

namespace mssm::agents {

using namespace diff;
using dists::GaussVar;

std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double gamma, double lam) {
    if (values.size() != rewards.size() + 1)
        throw UsageError("lambda_returns: |values| must be |rewards| + 1");
    const std::size_t H = rewards.size();
    std::vector<double> out(H);
    double next = values[H];
    for (std::size_t i = H; i-- > 0;) {
        next = rewards[i] + gamma * ((1.0 - lam) * values[i + 1] + lam * next);
        out[i] = next;
    }
    return out;
}

std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values,
                                double gamma, double lam) {
    if (values.size() != rewards.size() + 1)
        throw UsageError("lambda_returns: |values| must be |rewards| + 1");
    const std::size_t H = rewards.size();
    std::vector<Var> out(H);
    Var next = values[H];
    for (std::size_t i = H; i-- > 0;) {
        Var mix = add(mul_scalar(values[i + 1], 1.0 - lam), mul_scalar(next, lam));
        next = add(rewards[i], mul_scalar(mix, gamma));
        out[i] = next;
    }
    return out;
}

SquashedGaussianActor SquashedGaussianActor::create(ParamStore& store, const std::string& prefix,
                                                    std::int64_t feature_dim,
                                                    std::int64_t action_dim,
                                                    const std::vector<std::int64_t>& hidden,
                                                    Rng& rng) {
    SquashedGaussianActor a;
    a.action_dim_ = action_dim;
    a.net_ = Mlp::create(store, prefix,
                         MlpSpec{feature_dim, hidden, Activation::Elu,
                                 {{"mean", action_dim}, {"rawstd", action_dim}}},
                         rng);
    return a;
}

ActorSample SquashedGaussianActor::sample(Tape& t, const Var& features,
                                          const Tensor& noise) const {
    Var hid = net_.hidden_out(t, features);
    Var mean = net_.head(t, hid, "mean");
    Var stdv = dists::std_from_raw(net_.head(t, hid, "rawstd"));
    GaussVar dist{mean, stdv};
    Var u = dists::rsample(dist, t.constant(noise));
    Var action = tanh_v(u);
    // log pi(a) = log N(u) - sum log(1 - tanh(u)^2); the correction uses the
    // stable identity log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
    Var corr = mul_scalar(
        add_scalar(add(neg(u), neg(softplus(mul_scalar(u, -2.0)))), std::log(2.0)), 2.0);
    Var log_prob = sub(dists::log_prob(dist, u), row_sum(corr));
    return ActorSample{action, log_prob, tanh_v(mean)};
}

double alpha_update(double mean_log_prob, double target_entropy, double log_alpha, double lr) {
    const double alpha = std::exp(log_alpha);
    const double grad = alpha * (-mean_log_prob - target_entropy);
    return log_alpha - lr * grad;
}

SacAgent::SacAgent(std::int64_t feature_dim, std::int64_t action_dim, SacConfig cfg,
                   std::uint64_t seed)
    : cfg_(cfg),
      feature_dim_(feature_dim),
      action_dim_(action_dim),
      target_entropy_(-static_cast<double>(action_dim)) {
    Rng rng(seed);
    actor_ = SquashedGaussianActor::create(store_, "actor", feature_dim, action_dim,
                                           cfg_.actor_hidden, rng);
    const MlpSpec qspec{feature_dim + action_dim, cfg_.critic_hidden, Activation::Elu,
                        {{"q", 1}}};
    q1_ = Mlp::create(store_, "q1", qspec, rng);
    q2_ = Mlp::create(store_, "q2", qspec, rng);
    tq1_ = Mlp::create(store_, "tq1", qspec, rng);
    tq2_ = Mlp::create(store_, "tq2", qspec, rng);
    // targets start as exact copies of the online critics
    for (Param* p : store_.with_prefix("q1."))
        store_.at("tq1." + p->name.substr(3)).value = p->value;
    for (Param* p : store_.with_prefix("q2."))
        store_.at("tq2." + p->name.substr(3)).value = p->value;
    log_alpha_ = &store_.add("log_alpha", Tensor::scalar(std::log(cfg_.init_alpha)));

    trainer::AdamConfig aopt{cfg_.actor_lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.actor_clip};
    actor_opt_ = trainer::Adam(store_.with_prefix("actor."), aopt);
    trainer::AdamConfig copt{cfg_.critic_lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.critic_clip};
    auto cgroup = store_.with_prefix("q1.");
    for (Param* p : store_.with_prefix("q2.")) cgroup.push_back(p);
    critic_opt_ = trainer::Adam(cgroup, copt);
}

Var SacAgent::critic_q(Tape& t, const Mlp& q, const Var& features, const Var& actions) const {
    return q.apply(t, concat_cols({features, actions}), "q");
}

double SacAgent::alpha() const { return std::exp(log_alpha_->value[0]); }

std::map<std::string, double> SacAgent::update(const Transition& batch, Rng& rng) {
    const std::int64_t N = batch.features.dim(0);
    const double alpha_v = alpha();
    std::map<std::string, double> metrics;

    // Critic targets: r + gamma * (min target Q(s', a') - alpha log pi(a'|s')).
    Tensor target_vals({N, 1});
    {
        Tape t;
        Var nf = t.constant(batch.next_features);
        ActorSample na = actor_.sample(t, nf, rng.normal_tensor({N, action_dim_}));
        Var qa = critic_q(t, tq1_, nf, na.action);
        Var qb = critic_q(t, tq2_, nf, na.action);
        Var soft = sub(min_elem(qa, qb), mul_scalar(na.log_prob, alpha_v));
        Var target = add(t.constant(batch.rewards), mul_scalar(soft, cfg_.discount));
        target_vals = target.value();
    }

    {
        Tape t;
        Var f = t.constant(batch.features);
        Var a = t.constant(batch.actions);
        Var tv = t.constant(target_vals);
        Var l1 = mean_all(square(sub(critic_q(t, q1_, f, a), tv)));
        Var l2 = mean_all(square(sub(critic_q(t, q2_, f, a), tv)));
        Var loss = add(l1, l2);
        metrics["critic_loss"] = loss.scalar();
        t.backward(loss);
        metrics["critic_grad_norm"] = critic_opt_.step();
        t.clear_param_grads();
    }

    double mean_logp = 0.0;
    {
        Tape t;
        Var f = t.constant(batch.features);
        ActorSample as = actor_.sample(t, f, rng.normal_tensor({N, action_dim_}));
        Var q = min_elem(critic_q(t, q1_, f, as.action), critic_q(t, q2_, f, as.action));
        Var loss = mean_all(sub(mul_scalar(as.log_prob, alpha_v), q));
        metrics["actor_loss"] = loss.scalar();
        mean_logp = mean_all(as.log_prob).scalar();
        t.backward(loss);
        metrics["actor_grad_norm"] = actor_opt_.step();
        t.clear_param_grads();
    }

    log_alpha_->value[0] =
        alpha_update(mean_logp, target_entropy_, log_alpha_->value[0], cfg_.alpha_lr);
    metrics["alpha"] = alpha();
    metrics["entropy"] = -mean_logp;

    ++update_count_;
    if (update_count_ % static_cast<std::uint64_t>(cfg_.target_interval) == 0) ema_targets();
    return metrics;
}

void SacAgent::ema_targets() {
    const double d = cfg_.target_decay;
    for (const char* pair : {"1", "2"}) {
        for (Param* p : store_.with_prefix(std::string("q") + pair + ".")) {
            Param& tp = store_.at("tq" + std::string(pair) + p->name.substr(2));
            for (std::int64_t i = 0; i < tp.value.numel(); ++i)
                tp.value[i] = d * tp.value[i] + (1.0 - d) * p->value[i];
        }
    }
}

Tensor SacAgent::act(const Tensor& features, bool deterministic, Rng& rng) const {
    Tape t;
    ActorSample as =
        actor_.sample(t, t.constant(features), rng.normal_tensor({features.dim(0), action_dim_}));
    return deterministic ? as.mean_action.value() : as.action.value();
}

ImaginationAgent::ImaginationAgent(std::int64_t feature_dim, std::int64_t action_dim,
                                   ImaginationConfig cfg, std::uint64_t seed)
    : cfg_(cfg), feature_dim_(feature_dim), action_dim_(action_dim) {
    Rng rng(seed);
    actor_ = SquashedGaussianActor::create(store_, "actor", feature_dim, action_dim,
                                           cfg_.actor_hidden, rng);
    const MlpSpec vspec{feature_dim, cfg_.value_hidden, Activation::Elu, {{"v", 1}}};
    value_ = Mlp::create(store_, "value", vspec, rng);
    slow_value_ = Mlp::create(store_, "slow_value", vspec, rng);
    for (Param* p : store_.with_prefix("value."))
        store_.at("slow_value." + p->name.substr(6)).value = p->value;

    trainer::AdamConfig aopt{cfg_.actor_lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.actor_clip};
    actor_opt_ = trainer::Adam(store_.with_prefix("actor."), aopt);
    trainer::AdamConfig vopt{cfg_.value_lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.value_clip};
    value_opt_ = trainer::Adam(store_.with_prefix("value."), vopt);
}

std::map<std::string, double> ImaginationAgent::update(const rssm::RssmModel& model,
                                                       const Tensor& start_h,
                                                       const Tensor& start_s, Rng& rng) {
    const std::int64_t N = start_h.dim(0);
    const std::int64_t H = cfg_.horizon;
    std::map<std::string, double> metrics;

    std::vector<Tensor> feature_vals;  // imagined features, detached for the value pass
    std::vector<Tensor> target_vals;   // stop-gradient lambda returns
    {
        Tape t;
        rssm::LatentState start{t.constant(start_h), t.constant(start_s),
                                GaussVar{t.constant(start_s),
                                         t.constant(Tensor::full(start_s.shape(), 1.0))}};
        auto policy = [&](Tape& tp, const Var& feats) {
            return actor_.sample(tp, feats, rng.normal_tensor({feats.rows(), action_dim_})).action;
        };
        auto traj = model.imagine(t, start, policy, H, rng);

        std::vector<Var> values;
        for (const auto& st : traj.states) {
            Var feats = concat_cols({st.h, st.s});
            values.push_back(value_.apply(t, feats, "v"));
        }
        std::vector<Var> returns =
            lambda_returns(traj.reward_means, values, cfg_.discount, cfg_.lam);

        Var sum;
        for (const auto& g : returns) {
            Var s = sum_all(g);
            sum = sum.valid() ? add(sum, s) : s;
        }
        Var actor_loss = mul_scalar(sum, -1.0 / static_cast<double>(N * H));
        metrics["actor_loss"] = actor_loss.scalar();
        metrics["imag_return"] = -actor_loss.scalar();
        t.backward(actor_loss);
        metrics["actor_grad_norm"] = actor_opt_.step();
        t.clear_param_grads();

        for (std::int64_t k = 0; k < H; ++k) {
            Var feats = concat_cols({traj.states[k].h, traj.states[k].s});
            feature_vals.push_back(feats.value());
            target_vals.push_back(returns[k].value());
        }
    }

    // Value regression to stop-gradient returns plus the slow-value anchor.
    {
        Tape t;
        Var loss;
        for (std::int64_t k = 0; k < H; ++k) {
            Var feats = t.constant(feature_vals[k]);
            Var v = value_.apply(t, feats, "v");
            Var reg = mean_all(square(sub(v, t.constant(target_vals[k]))));
            Var slow = slow_value_.apply(t, feats, "v");
            Var anchor = mean_all(square(sub(v, detach(slow))));
            Var term = add(reg, mul_scalar(anchor, cfg_.slow_value_weight));
            loss = loss.valid() ? add(loss, term) : term;
        }
        loss = mul_scalar(loss, 1.0 / static_cast<double>(H));
        metrics["value_loss"] = loss.scalar();
        t.backward(loss);
        metrics["value_grad_norm"] = value_opt_.step();
        t.clear_param_grads();
    }

    ++update_count_;
    if (update_count_ % static_cast<std::uint64_t>(cfg_.slow_value_interval) == 0)
        ema_slow_value();
    return metrics;
}

void ImaginationAgent::ema_slow_value() {
    const double d = cfg_.slow_value_decay;
    for (Param* p : store_.with_prefix("value.")) {
        Param& sp = store_.at("slow_value." + p->name.substr(6));
        for (std::int64_t i = 0; i < sp.value.numel(); ++i)
            sp.value[i] = d * sp.value[i] + (1.0 - d) * p->value[i];
    }
}

Tensor ImaginationAgent::act(const Tensor& features, bool deterministic, Rng& rng) const {
    Tape t;
    ActorSample as =
        actor_.sample(t, t.constant(features), rng.normal_tensor({features.dim(0), action_dim_}));
    if (deterministic) return as.mean_action.value();
    // constant exploration noise on top of the sampled action, clipped back
    Tensor a = as.action.value();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        a[i] += cfg_.explore_sigma * rng.normal();
        a[i] = std::clamp(a[i], -1.0, 1.0);
    }
    return a;
}

}  // namespace mssm::agents
