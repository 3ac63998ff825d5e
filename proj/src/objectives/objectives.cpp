#include "mssm/objectives/objectives.hpp"

#include <cmath>

namespace mssm::objectives {

using namespace diff;
using rssm::ConfigError;
using rssm::LatentState;
using rssm::LossKind;
using rssm::ModalityKind;

Var infonce_logits(const Var& logits) {
    if (logits.value().rank() != 2 || logits.rows() != logits.cols())
        throw ShapeError("infonce", "score matrix must be square");
    const std::int64_t I = logits.rows();
    if (I < 2) throw UsageError("infonce: need at least two pairs");
    Var d = diag_vec(logits);                              // [I x 1]
    Var col_lse = logsumexp_rows(transpose(logits));       // denominator over z_j for fixed o_i
    Var row_lse = logsumexp_rows(logits);                  // denominator over o_j for fixed z_i
    Var sums = add(sub(d, col_lse), sub(d, row_lse));
    return add_scalar(mul_scalar(sum_all(sums), 1.0 / (2.0 * static_cast<double>(I))),
                      std::log(static_cast<double>(I)));
}

Var infonce(const Var& scores) {
    for (std::int64_t i = 0; i < scores.value().numel(); ++i)
        if (!(scores.value()[i] > 0.0))
            throw DomainError("infonce: scores must be strictly positive");
    return infonce_logits(log_v(scores));
}

namespace {

GaussVar sg(const GaussVar& d) { return GaussVar{detach(d.mean), detach(d.std)}; }

// mean KL over batch rows and steps for one stop-gradient arrangement
Var mean_kl(const std::vector<GaussVar>& post, const std::vector<GaussVar>& prior,
            bool sg_post) {
    Var acc;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < post.size(); ++i) {
        const GaussVar& q = post[i];
        const GaussVar& p = prior[i];
        Var kl = sg_post ? dists::kl_diag(sg(q), p) : dists::kl_diag(q, sg(p));
        Var s = sum_all(kl);
        acc = acc.valid() ? add(acc, s) : s;
        count += q.batch();
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(count));
}

}  // namespace

Var balanced_kl_free_nats(const std::vector<GaussVar>& post, const std::vector<GaussVar>& prior,
                          double alpha, double free_nats) {
    if (post.size() != prior.size() || post.empty())
        throw UsageError("balanced_kl: posterior/prior chains differ in length");
    if (alpha < 0.0 || alpha > 1.0) throw UsageError("balanced_kl: alpha must be in [0,1]");
    if (free_nats < 0.0) throw UsageError("balanced_kl: free_nats must be >= 0");
    Var prior_side = relu(add_scalar(mean_kl(post, prior, true), -free_nats));
    Var post_side = relu(add_scalar(mean_kl(post, prior, false), -free_nats));
    return add(mul_scalar(prior_side, alpha), mul_scalar(post_side, 1.0 - alpha));
}

Var balanced_kl_free_nats(const GaussVar& post, const GaussVar& prior, double alpha,
                          double free_nats) {
    return balanced_kl_free_nats(std::vector<GaussVar>{post}, std::vector<GaussVar>{prior}, alpha,
                                 free_nats);
}

Var inverse_dynamics_loss(Tape& t, const RssmModel& model, const LatentState& z_t,
                          const LatentState& z_next, const Tensor& action) {
    Var pred = model.inverse_dynamics(t, z_t, z_next);
    if (!pred.value().same_shape(action))
        throw ShapeError("inverse_dynamics_loss", "action shape mismatch");
    Var err = row_sum(square(sub(t.constant(action), pred)));
    return mean_all(err);
}

namespace {

Tensor flat_rows(const Tensor& t) {
    const std::int64_t b = t.dim(0);
    return t.reshaped({b, t.numel() / b});
}

// log p(o_t | z_t) under a unit-std Gaussian around the decoded mean,
// summed over dims and averaged per element over (batch, steps).
Var recon_ll_term(Tape& t, const RssmModel& model, const std::string& id,
                  const std::vector<const LatentState*>& states,
                  const std::vector<const Tensor*>& targets) {
    Var acc;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        Var mean = model.decode_modality(t, *states[i], id);
        const std::int64_t b = mean.value().dim(0);
        Var mean2d = mean.value().rank() == 2
                         ? mean
                         : reshape(mean, {b, mean.value().numel() / b});
        Tensor target = flat_rows(*targets[i]);
        GaussVar dist{mean2d, t.constant(Tensor::full(mean2d.value().shape(), 1.0))};
        Var lp = dists::log_prob(dist, t.constant(target));
        Var s = sum_all(lp);
        acc = acc.valid() ? add(acc, s) : s;
        count += b;
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(count));
}

Var mi_term(Tape& t, const RssmModel& model, const std::string& id,
            const std::vector<Var>& feature_rows, const std::vector<Var>& embed_rows) {
    Var feats = feature_rows.size() == 1 ? feature_rows[0] : concat_rows(feature_rows);
    Var embeds = embed_rows.size() == 1 ? embed_rows[0] : concat_rows(embed_rows);
    return infonce_logits(model.score_log_matrix(t, id, feats, embeds));
}

Var reward_ll_term(Tape& t, const RssmModel& model, const std::vector<RolloutStep>& rollout,
                   const SeqBatch& batch) {
    Var acc;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < rollout.size(); ++i) {
        GaussVar rd = model.predict_reward(t, rollout[i].state);
        Var lp = dists::log_prob(rd, t.constant(batch.reward[i]));
        Var s = sum_all(lp);
        acc = acc.valid() ? add(acc, s) : s;
        count += rd.batch();
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(count));
}

std::vector<GaussVar> posteriors(const std::vector<RolloutStep>& rollout) {
    std::vector<GaussVar> out;
    for (const auto& s : rollout) out.push_back(s.state.s_dist);
    return out;
}

std::vector<GaussVar> priors(const std::vector<RolloutStep>& rollout) {
    std::vector<GaussVar> out;
    for (const auto& s : rollout) out.push_back(s.prior);
    return out;
}

// Shared Eq.1 / Eq.3 assembly; `allow_contrastive` distinguishes them.
LossReport variational_bound(Tape& t, const RssmModel& model,
                             const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                             const ObjectiveHp& hp, bool allow_contrastive) {
    if (rollout.empty()) throw UsageError("variational bound: empty rollout");
    LossReport report;
    Var total;
    for (const auto& m : model.config().modalities) {
        if (m.loss == LossKind::ContrastivePredictive)
            throw ConfigError("modality '" + m.id + "' selects the predictive objective; use cpc_loss");
        if (m.contrastive() && !allow_contrastive)
            throw ConfigError("reconstruction_elbo requires all-reconstruction modalities ('" +
                              m.id + "' is contrastive)");
        Var term;
        if (m.loss == LossKind::Reconstruction) {
            std::vector<const LatentState*> states;
            std::vector<const Tensor*> targets;
            for (std::size_t i = 0; i < rollout.size(); ++i) {
                states.push_back(&rollout[i].state);
                targets.push_back(&batch.obs[i].at(m.id));
            }
            term = recon_ll_term(t, model, m.id, states, targets);
            report.terms["recon_" + m.id] = term.scalar();
        } else {
            std::vector<Var> feats, embeds;
            for (const auto& step : rollout) {
                feats.push_back(model.state_features(t, step.state));
                embeds.push_back(step.embeds.at(m.id));
            }
            term = mi_term(t, model, m.id, feats, embeds);
            report.terms["mi_" + m.id] = term.scalar();
        }
        total = total.valid() ? add(total, term) : term;
    }
    Var reward = reward_ll_term(t, model, rollout, batch);
    report.terms["reward_ll"] = reward.scalar();
    total = add(total, reward);
    Var kl = balanced_kl_free_nats(posteriors(rollout), priors(rollout), hp.kl_alpha,
                                   hp.free_nats);
    report.terms["kl"] = kl.scalar();
    total = sub(total, kl);
    report.total = total;
    report.terms["total"] = total.scalar();
    return report;
}

}  // namespace

LossReport reconstruction_elbo(Tape& t, const RssmModel& model,
                               const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                               const ObjectiveHp& hp) {
    return variational_bound(t, model, rollout, batch, hp, false);
}

LossReport mixed_variational_loss(Tape& t, const RssmModel& model,
                                  const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                                  const ObjectiveHp& hp) {
    return variational_bound(t, model, rollout, batch, hp, true);
}

LossReport cpc_loss(Tape& t, const RssmModel& model, const std::vector<RolloutStep>& rollout,
                    const SeqBatch& batch, const ObjectiveHp& hp, Rng& noise_rng) {
    const std::int64_t T = static_cast<std::int64_t>(rollout.size());
    if (T < 2) throw UsageError("cpc_loss: needs at least two steps for a prediction pair");
    const std::int64_t B = batch.batch();

    // One-step forwarding through the dynamics: z~_{t+1} | z_t, a_t.
    std::vector<LatentState> forwarded;
    forwarded.reserve(T - 1);
    for (std::int64_t i = 0; i + 1 < T; ++i) {
        const LatentState& cur = rollout[i].state;
        Var h = model.det_step(t, cur.s, t.constant(batch.action[i]), cur.h);
        GaussVar prior = model.prior_dist(t, h);
        Var s = dists::rsample(
            prior, t.constant(noise_rng.normal_tensor({B, model.config().s_dim})));
        forwarded.push_back(LatentState{h, s, prior});
    }

    LossReport report;
    Var total;
    for (const auto& m : model.config().modalities) {
        if (m.loss == LossKind::ContrastiveVariational)
            throw ConfigError("modality '" + m.id +
                              "' selects the variational objective; use mixed_variational_loss");
        Var term;
        if (m.loss == LossKind::Reconstruction) {
            std::vector<const LatentState*> states;
            std::vector<const Tensor*> targets;
            for (std::int64_t i = 0; i + 1 < T; ++i) {
                states.push_back(&forwarded[i]);
                targets.push_back(&batch.obs[i + 1].at(m.id));
            }
            term = recon_ll_term(t, model, m.id, states, targets);
            report.terms["recon_" + m.id] = term.scalar();
        } else {
            std::vector<Var> feats, embeds;
            for (std::int64_t i = 0; i + 1 < T; ++i) {
                feats.push_back(model.state_features(t, forwarded[i]));
                embeds.push_back(rollout[i + 1].embeds.at(m.id));
            }
            term = mi_term(t, model, m.id, feats, embeds);
            report.terms["mi_" + m.id] = term.scalar();
        }
        total = total.valid() ? add(total, term) : term;
    }

    Var reward = reward_ll_term(t, model, rollout, batch);
    report.terms["reward_ll"] = reward.scalar();
    total = add(total, reward);

    // Eq. 4 scales a balanced KL by beta; no free-nats floor here.
    Var kl = balanced_kl_free_nats(posteriors(rollout), priors(rollout), hp.kl_alpha, 0.0);
    report.terms["kl"] = kl.scalar();
    total = sub(total, mul_scalar(kl, hp.beta));

    Var invdyn;
    for (std::int64_t i = 0; i + 1 < T; ++i) {
        Var l = inverse_dynamics_loss(t, model, rollout[i].state, rollout[i + 1].state,
                                      batch.action[i]);
        invdyn = invdyn.valid() ? add(invdyn, l) : l;
    }
    invdyn = mul_scalar(invdyn, 1.0 / static_cast<double>(T - 1));
    report.terms["invdyn"] = invdyn.scalar();
    total = sub(total, invdyn);

    report.total = total;
    report.terms["total"] = total.scalar();
    return report;
}

LossReport representation_loss(Tape& t, const RssmModel& model,
                               const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                               const ObjectiveHp& hp, Rng& noise_rng) {
    if (model.config().any_cpc()) return cpc_loss(t, model, rollout, batch, hp, noise_rng);
    return mixed_variational_loss(t, model, rollout, batch, hp);
}

}  // namespace mssm::objectives
