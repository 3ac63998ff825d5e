#pragma once

#include "mssm/rssm/model.hpp"

namespace mssm::objectives {

using diff::Tape;
using diff::Var;
using dists::GaussVar;
using rssm::RolloutStep;
using rssm::RssmModel;
using rssm::SeqBatch;

// Nonpositive score fed to the InfoNCE estimator.
class DomainError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ObjectiveHp {
    double kl_alpha = 0.8;
    double free_nats = 1.0;
    double beta = 0.001;  // KL factor for the predictive objective
};

// A maximization objective with its reported components. The sign convention
// per term: total =
//   sum_k recon_k + sum_k mi_k + reward_ll - kl            (Eqs. 1 and 3)
//   sum_k pred_k + reward_ll - beta * kl - invdyn          (Eq. 4)
// Every term is averaged per (batch, time) element.
struct LossReport {
    Var total;
    std::map<std::string, double> terms;
};

// Symmetric InfoNCE over an I x I matrix of positive scores S[i][j] =
// f(z_i, o_j); diagonal entries are the positive pairs. Normalized so the
// reported value is a mutual-information estimate bounded by log I.
Var infonce(const Var& scores);
// Same estimator computed directly from log-scores (numerically preferable).
Var infonce_logits(const Var& logits);

// alpha-weighted stop-gradient-asymmetric KL with a free-nats floor applied
// per balanced term after averaging over batch (and steps).
Var balanced_kl_free_nats(const GaussVar& post, const GaussVar& prior, double alpha,
                          double free_nats);
Var balanced_kl_free_nats(const std::vector<GaussVar>& post, const std::vector<GaussVar>& prior,
                          double alpha, double free_nats);

// || a - a_hat ||^2, averaged over the batch.
Var inverse_dynamics_loss(Tape& t, const RssmModel& model, const rssm::LatentState& z_t,
                          const rssm::LatentState& z_next, const Tensor& action);

LossReport reconstruction_elbo(Tape& t, const RssmModel& model,
                               const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                               const ObjectiveHp& hp);

LossReport mixed_variational_loss(Tape& t, const RssmModel& model,
                                  const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                                  const ObjectiveHp& hp);

// noise_rng drives the prior samples used for one-step forwarding.
LossReport cpc_loss(Tape& t, const RssmModel& model, const std::vector<RolloutStep>& rollout,
                    const SeqBatch& batch, const ObjectiveHp& hp, Rng& noise_rng);

// Dispatches on the model's modality configuration: any CPC modality selects
// Eq. 4, otherwise the mixed variational bound (which subsumes Eq. 1).
LossReport representation_loss(Tape& t, const RssmModel& model,
                               const std::vector<RolloutStep>& rollout, const SeqBatch& batch,
                               const ObjectiveHp& hp, Rng& noise_rng);

}  // namespace mssm::objectives
