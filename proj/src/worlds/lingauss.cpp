#include "mssm/worlds/lingauss.hpp"

#include <Eigen/Dense>

namespace mssm::worlds {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
    if (t.rank() == 1) {
        Eigen::MatrixXd m(t.dim(0), 1);
        for (std::int64_t i = 0; i < t.dim(0); ++i) m(i, 0) = t[i];
        return m;
    }
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.dim(0); ++i)
        for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
    return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.at(i, j) = m(i, j);
    return t;
}

Tensor vec_from_eigen(const Eigen::VectorXd& v) {
    Tensor t({v.size()});
    for (Eigen::Index i = 0; i < v.size(); ++i) t[i] = v(i);
    return t;
}

}  // namespace

std::int64_t LinearGaussianSpec::obs_dim() const {
    std::int64_t d = 0;
    for (const auto& h : H) d += h.dim(0);
    return d;
}

Tensor LinearGaussianSpec::stacked_H() const {
    const std::int64_t n = state_dim(), d = obs_dim();
    Tensor out({d, n});
    std::int64_t row = 0;
    for (const auto& h : H) {
        for (std::int64_t i = 0; i < h.dim(0); ++i)
            for (std::int64_t j = 0; j < n; ++j) out.at(row + i, j) = h.at(i, j);
        row += h.dim(0);
    }
    return out;
}

Tensor LinearGaussianSpec::stacked_r() const {
    Tensor out({obs_dim()});
    std::int64_t k = 0;
    for (const auto& r : r_diag)
        for (std::int64_t i = 0; i < r.numel(); ++i) out[k++] = r[i];
    return out;
}

void LinearGaussianSpec::validate() const {
    const std::int64_t n = state_dim();
    if (A.rank() != 2 || A.dim(1) != n) throw NumericError("A must be square");
    if (B.rank() != 2 || B.dim(0) != n) throw NumericError("B rows must match state dim");
    if (H.empty() || H.size() != r_diag.size())
        throw NumericError("need one H and one r block per modality");
    for (std::size_t k = 0; k < H.size(); ++k) {
        if (H[k].dim(1) != n) throw NumericError("H block has wrong state dim");
        if (r_diag[k].numel() != H[k].dim(0)) throw NumericError("r block size mismatch");
        for (std::int64_t i = 0; i < r_diag[k].numel(); ++i)
            if (!(r_diag[k][i] > 0.0)) throw NumericError("observation noise must be positive");
    }
    for (std::int64_t i = 0; i < n; ++i)
        if (!(q_diag[i] > 0.0)) throw NumericError("process noise must be positive");
    if (init_mean.numel() != n || init_cov.dim(0) != n || init_cov.dim(1) != n)
        throw NumericError("initial state dimensions inconsistent");

    const auto eig = Eigen::EigenSolver<Eigen::MatrixXd>(to_eigen(A)).eigenvalues();
    double rho = 0.0;
    for (Eigen::Index i = 0; i < eig.size(); ++i) rho = std::max(rho, std::abs(eig(i)));
    if (rho > 1.0 + 1e-9) throw NumericError("spectral radius of A exceeds 1");

    Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(init_cov));
    if (llt.info() != Eigen::Success) throw NumericError("initial covariance not PD");
}

std::vector<GaussianBelief> kalman_posterior(const LinearGaussianSpec& spec,
                                             const std::vector<Tensor>& observations,
                                             const std::vector<Tensor>& actions) {
    if (observations.size() != actions.size())
        throw NumericError("kalman: |observations| != |actions|");
    const std::int64_t n = spec.state_dim();
    const Eigen::MatrixXd A = to_eigen(spec.A);
    const Eigen::MatrixXd B = to_eigen(spec.B);
    const Eigen::MatrixXd Hm = to_eigen(spec.stacked_H());
    const Eigen::VectorXd rv = to_eigen(spec.stacked_r()).col(0);
    const Eigen::MatrixXd R = rv.asDiagonal();
    const Eigen::VectorXd qv = to_eigen(spec.q_diag).col(0);
    const Eigen::MatrixXd Q = qv.asDiagonal();

    Eigen::VectorXd mean = to_eigen(spec.init_mean).col(0);
    Eigen::MatrixXd cov = to_eigen(spec.init_cov);

    std::vector<GaussianBelief> out;
    out.reserve(observations.size());
    for (std::size_t t = 0; t < observations.size(); ++t) {
        Eigen::VectorXd pred_mean;
        Eigen::MatrixXd pred_cov;
        if (t == 0) {
            // the initial Gaussian already is the step-1 prediction
            pred_mean = mean;
            pred_cov = cov;
        } else {
            pred_mean = A * mean + B * to_eigen(actions[t]).col(0);
            pred_cov = A * cov * A.transpose() + Q;
        }
        const Eigen::MatrixXd S = Hm * pred_cov * Hm.transpose() + R;
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw NumericError("kalman: innovation covariance not PD");
        const Eigen::MatrixXd K = pred_cov * Hm.transpose() * llt.solve(
                                      Eigen::MatrixXd::Identity(S.rows(), S.cols()));
        const Eigen::VectorXd innov = to_eigen(observations[t]).col(0) - Hm * pred_mean;
        mean = pred_mean + K * innov;
        cov = (Eigen::MatrixXd::Identity(n, n) - K * Hm) * pred_cov;
        out.push_back(GaussianBelief{vec_from_eigen(mean), from_eigen(cov)});
    }
    return out;
}

LinearGaussianRollout simulate(const LinearGaussianSpec& spec, const std::vector<Tensor>& actions,
                               Rng& rng) {
    const std::int64_t n = spec.state_dim();
    const Eigen::MatrixXd A = to_eigen(spec.A);
    const Eigen::MatrixXd B = to_eigen(spec.B);
    const Eigen::MatrixXd Hm = to_eigen(spec.stacked_H());
    const Eigen::VectorXd rv = to_eigen(spec.stacked_r()).col(0);
    const Eigen::VectorXd qv = to_eigen(spec.q_diag).col(0);
    Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(spec.init_cov));

    LinearGaussianRollout out;
    Eigen::VectorXd x;
    for (std::size_t t = 0; t < actions.size(); ++t) {
        if (t == 0) {
            Eigen::VectorXd z(n);
            for (std::int64_t i = 0; i < n; ++i) z(i) = rng.normal();
            x = to_eigen(spec.init_mean).col(0) + llt.matrixL() * z;
        } else {
            Eigen::VectorXd w(n);
            for (std::int64_t i = 0; i < n; ++i) w(i) = std::sqrt(qv(i)) * rng.normal();
            x = A * x + B * to_eigen(actions[t]).col(0) + w;
        }
        Eigen::VectorXd o = Hm * x;
        for (Eigen::Index i = 0; i < o.size(); ++i) o(i) += std::sqrt(rv(i)) * rng.normal();
        out.states.push_back(vec_from_eigen(x));
        out.observations.push_back(vec_from_eigen(o));
    }
    return out;
}

Tensor steady_state_prediction_cov(const LinearGaussianSpec& spec, int iters) {
    const Eigen::MatrixXd A = to_eigen(spec.A);
    const Eigen::MatrixXd Hm = to_eigen(spec.stacked_H());
    const Eigen::VectorXd rv = to_eigen(spec.stacked_r()).col(0);
    const Eigen::MatrixXd R = rv.asDiagonal();
    const Eigen::VectorXd qv = to_eigen(spec.q_diag).col(0);
    const Eigen::MatrixXd Q = qv.asDiagonal();
    const std::int64_t n = spec.state_dim();

    Eigen::MatrixXd P = Q;
    for (int i = 0; i < iters; ++i) {
        const Eigen::MatrixXd S = Hm * P * Hm.transpose() + R;
        const Eigen::MatrixXd K =
            P * Hm.transpose() * S.llt().solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
        const Eigen::MatrixXd post = (Eigen::MatrixXd::Identity(n, n) - K * Hm) * P;
        const Eigen::MatrixXd next = A * post * A.transpose() + Q;
        const double delta = (next - P).cwiseAbs().maxCoeff();
        P = next;
        if (delta < 1e-14) break;
    }
    return from_eigen(P);
}

SteadyStateGain steady_state_gain(const LinearGaussianSpec& spec, const Tensor& pred_cov) {
    const Eigen::MatrixXd A = to_eigen(spec.A);
    const Eigen::MatrixXd B = to_eigen(spec.B);
    const Eigen::MatrixXd Hm = to_eigen(spec.stacked_H());
    const Eigen::VectorXd rv = to_eigen(spec.stacked_r()).col(0);
    const Eigen::MatrixXd R = rv.asDiagonal();
    const Eigen::MatrixXd P = to_eigen(pred_cov);
    const std::int64_t n = spec.state_dim();

    const Eigen::MatrixXd S = Hm * P * Hm.transpose() + R;
    const Eigen::MatrixXd K =
        P * Hm.transpose() * S.llt().solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
    const Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(n, n) - K * Hm;
    SteadyStateGain g;
    g.K = from_eigen(K);
    g.trans = from_eigen(IKH * A);
    g.ctrl = from_eigen(IKH * B);
    return g;
}

}  // namespace mssm::worlds
