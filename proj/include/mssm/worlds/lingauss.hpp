#pragma once

#include <stdexcept>
#include <vector>

#include "mssm/rng.hpp"
#include "mssm/tensor.hpp"

namespace mssm::worlds {

// Thrown when the Kalman recursion encounters a non-PD covariance.
class NumericError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// x_1 ~ N(init_mean, init_cov); x_{t+1} = A x_t + B a_t + w, w ~ N(0, diag(q));
// o_t^(k) = H_k x_t + v_k, v_k ~ N(0, diag(r_k)). Observations of all K
// modalities are stacked in declared order.
struct LinearGaussianSpec {
    Tensor A;                      // [n x n], spectral radius <= 1
    Tensor B;                      // [n x m]
    std::vector<Tensor> H;         // K blocks [d_k x n]
    Tensor q_diag;                 // [n]
    std::vector<Tensor> r_diag;    // K blocks [d_k]
    Tensor init_mean;              // [n]
    Tensor init_cov;               // [n x n]

    std::int64_t state_dim() const { return A.dim(0); }
    std::int64_t action_dim() const { return B.dim(1); }
    std::int64_t obs_dim() const;
    void validate() const;  // shapes, PD covariances, spectral radius

    Tensor stacked_H() const;   // [obs_dim x n]
    Tensor stacked_r() const;   // [obs_dim]
};

struct GaussianBelief {
    Tensor mean;  // [n]
    Tensor cov;   // [n x n]
};

// Exact Kalman filter. actions[t] is consumed by the predict step into
// time t (actions[0] is the pre-first-observation action, typically zero);
// |actions| == |observations|.
std::vector<GaussianBelief> kalman_posterior(const LinearGaussianSpec& spec,
                                             const std::vector<Tensor>& observations,
                                             const std::vector<Tensor>& actions);

struct LinearGaussianRollout {
    std::vector<Tensor> states;        // [T][n]
    std::vector<Tensor> observations;  // [T][obs_dim]
};

LinearGaussianRollout simulate(const LinearGaussianSpec& spec, const std::vector<Tensor>& actions,
                               Rng& rng);

// Iterates the predict-covariance Riccati recursion to its fixed point;
// spec.init_cov set to the result makes the Kalman gain time-invariant.
Tensor steady_state_prediction_cov(const LinearGaussianSpec& spec, int iters = 2000);

// Constant-gain filter coefficients at a given prediction covariance:
// mean' = (I - K H)(A mean + B a) + K o.
struct SteadyStateGain {
    Tensor K;      // [n x obs_dim]
    Tensor trans;  // (I - K H) A, [n x n]
    Tensor ctrl;   // (I - K H) B, [n x m]
};
SteadyStateGain steady_state_gain(const LinearGaussianSpec& spec, const Tensor& pred_cov);

}  // namespace mssm::worlds
