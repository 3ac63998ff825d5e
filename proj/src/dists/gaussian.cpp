#include "mssm/dists/gaussian.hpp"

#include <cmath>

namespace mssm::dists {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
}

using namespace diff;

Var rsample(const GaussVar& d, const Var& noise) {
    if (!noise.value().same_shape(d.mean.value()))
        throw ShapeError("rsample", "noise shape " + Tensor::shape_str(noise.shape()) +
                                        " does not match mean " +
                                        Tensor::shape_str(d.mean.shape()));
    return add(d.mean, mul(d.std, noise));
}

Var log_prob(const GaussVar& d, const Var& x) {
    if (!x.value().same_shape(d.mean.value()))
        throw ShapeError("log_prob", "x shape " + Tensor::shape_str(x.shape()) +
                                         " does not match mean " +
                                         Tensor::shape_str(d.mean.shape()));
    // -0.5*log(2*pi) - log(std) - (x-mean)^2 / (2*std^2), summed per row
    Var z = div(sub(x, d.mean), d.std);
    Var per = add_scalar(add(mul_scalar(square(z), -0.5), neg(log_v(d.std))), -0.5 * kLogTwoPi);
    return row_sum(per);
}

Var kl_diag(const GaussVar& q, const GaussVar& p) {
    if (!q.mean.value().same_shape(p.mean.value()))
        throw ShapeError("kl_diag", "distribution dims differ");
    Var ratio = div(q.std, p.std);
    Var dm = div(sub(q.mean, p.mean), p.std);
    Var per = add_scalar(
        add(neg(log_v(ratio)), mul_scalar(add(square(ratio), square(dm)), 0.5)), -0.5);
    return row_sum(per);
}

Var std_from_raw(const Var& raw) { return add_scalar(softplus(raw), kStdFloor); }

void DiagGaussian::validate() const {
    if (!mean.same_shape(std))
        throw ShapeError("diag_gaussian", "mean/std dimension mismatch");
    for (std::int64_t i = 0; i < std.numel(); ++i)
        if (!(std[i] > 0.0)) throw ShapeError("diag_gaussian", "std must be strictly positive");
}

double DiagGaussian::log_prob(const Tensor& x) const {
    if (!x.same_shape(mean)) throw ShapeError("log_prob", "dimension mismatch");
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double z = (x[i] - mean[i]) / std[i];
        acc += -0.5 * kLogTwoPi - std::log(std[i]) - 0.5 * z * z;
    }
    return acc;
}

Tensor DiagGaussian::sample(Rng& rng) const {
    Tensor out(mean.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = mean[i] + std[i] * rng.normal();
    return out;
}

double kl_diag_value(const DiagGaussian& q, const DiagGaussian& p) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < q.mean.numel(); ++i) {
        const double r = q.std[i] / p.std[i];
        const double dm = (q.mean[i] - p.mean[i]) / p.std[i];
        acc += -std::log(r) + 0.5 * (r * r + dm * dm) - 0.5;
    }
    return acc;
}

}  // namespace mssm::dists
