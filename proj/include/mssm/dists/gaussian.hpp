#pragma once

#include "mssm/diff/ops.hpp"
#include "mssm/rng.hpp"

namespace mssm::dists {

using diff::Tape;
using diff::Var;

// Batched diagonal Gaussian in the computation graph: mean and std are both
// [B x D] with std strictly positive.
struct GaussVar {
    Var mean;
    Var std;

    std::int64_t batch() const { return mean.rows(); }
    std::int64_t dim() const { return mean.cols(); }
};

// mean + std * noise; differentiable w.r.t. mean and std.
Var rsample(const GaussVar& d, const Var& noise);

// Row-wise sum of univariate Gaussian log densities -> [B x 1].
Var log_prob(const GaussVar& d, const Var& x);

// KL(q || p) per row -> [B x 1]; sum over dims of
// log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2.
Var kl_diag(const GaussVar& q, const GaussVar& p);

// softplus(raw) + 0.1: strictly positive std with a floor.
Var std_from_raw(const Var& raw);
inline constexpr double kStdFloor = 0.1;

// Value-level counterpart for code outside the graph (environments, eval).
struct DiagGaussian {
    Tensor mean;  // [D]
    Tensor std;   // [D], componentwise > 0

    void validate() const;
    double log_prob(const Tensor& x) const;
    Tensor sample(Rng& rng) const;
};

double kl_diag_value(const DiagGaussian& q, const DiagGaussian& p);

}  // namespace mssm::dists
