#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mssm/diff/gradcheck.hpp"
#include "mssm/dists/gaussian.hpp"

using namespace mssm;
using namespace mssm::diff;
using namespace mssm::dists;

namespace {

GaussVar make_gauss(Tape& t, std::vector<double> mean, std::vector<double> std) {
    return GaussVar{t.constant(Tensor::row(std::move(mean))),
                    t.constant(Tensor::row(std::move(std)))};
}

}  // namespace

TEST_CASE("rsample is the reparametrized affine map") {
    Tape t;
    GaussVar d = make_gauss(t, {3.0}, {2.0});
    CHECK(rsample(d, t.constant(Tensor::row({0.5}))).scalar() == 4.0);
    CHECK(rsample(d, t.constant(Tensor::row({0.0}))).scalar() == 3.0);

    // d sample / d std at noise 0.5 equals 0.5
    ParamStore store;
    Param& s = store.add("std", Tensor::row({2.0}));
    auto build = [&](Tape& tp) {
        GaussVar g{tp.constant(Tensor::row({3.0})), tp.param(s)};
        return rsample(g, tp.constant(Tensor::row({0.5})));
    };
    CHECK(check_gradients(build, {&s}, 1e-5) < 1e-6);
    {
        Tape tp;
        GaussVar g{tp.constant(Tensor::row({3.0})), tp.input(Tensor::row({2.0}))};
        Var y = rsample(g, tp.constant(Tensor::row({0.5})));
        backward_nodes(y);
        CHECK(g.std.grad()[0] == doctest::Approx(0.5));
    }

    Tape tp2;
    GaussVar g2 = make_gauss(tp2, {0.0, 0.0}, {1.0, 1.0});
    CHECK_THROWS_AS(rsample(g2, tp2.constant(Tensor::row({1.0}))), ShapeError);
}

TEST_CASE("log_prob closed forms") {
    Tape t;
    CHECK(log_prob(make_gauss(t, {0.0}, {1.0}), t.constant(Tensor::row({0.0}))).scalar() ==
          doctest::Approx(-0.918939).epsilon(1e-6));
    // peak value is -log sigma - 0.5 log 2pi per dim
    const double sigma = 0.37;
    CHECK(log_prob(make_gauss(t, {1.7}, {sigma}), t.constant(Tensor::row({1.7}))).scalar() ==
          doctest::Approx(-std::log(sigma) - 0.5 * std::log(2.0 * M_PI)));
    CHECK(log_prob(make_gauss(t, {0.0, 0.0}, {1.0, 1.0}),
                   t.constant(Tensor::row({0.0, 0.0}))).scalar() ==
          doctest::Approx(-1.837877).epsilon(1e-6));
}

TEST_CASE("exp(log_prob) integrates to one on a grid") {
    Tape t;
    GaussVar d = make_gauss(t, {0.3}, {0.8});
    const double lo = 0.3 - 8.0, hi = 0.3 + 8.0;
    const int n = 4000;
    const double dx = (hi - lo) / n;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = lo + (i + 0.5) * dx;
        integral += std::exp(log_prob(d, t.constant(Tensor::row({x}))).scalar()) * dx;
    }
    CHECK(std::fabs(integral - 1.0) < 1e-3);
}

TEST_CASE("kl closed forms") {
    Tape t;
    CHECK(kl_diag(make_gauss(t, {0.7}, {1.3}), make_gauss(t, {0.7}, {1.3})).scalar() ==
          doctest::Approx(0.0));
    CHECK(kl_diag(make_gauss(t, {1.0}, {1.0}), make_gauss(t, {0.0}, {1.0})).scalar() ==
          doctest::Approx(0.5).epsilon(1e-9));
    CHECK(kl_diag(make_gauss(t, {0.0}, {2.0}), make_gauss(t, {0.0}, {1.0})).scalar() ==
          doctest::Approx(0.806853).epsilon(1e-6));
}

TEST_CASE("kl is nonnegative and zero only at equality") {
    Rng rng(77);
    for (int rep = 0; rep < 1000; ++rep) {
        Tape t;
        GaussVar q{t.constant(rng.normal_tensor({1, 3})),
                   t.constant(rng.uniform_tensor({1, 3}, 0.2, 2.5))};
        GaussVar p{t.constant(rng.normal_tensor({1, 3})),
                   t.constant(rng.uniform_tensor({1, 3}, 0.2, 2.5))};
        const double kl = kl_diag(q, p).scalar();
        CHECK(kl >= 0.0);
        double gap = 0.0;
        for (int i = 0; i < 3; ++i)
            gap += std::fabs(q.mean.value()[i] - p.mean.value()[i]) +
                   std::fabs(q.std.value()[i] - p.std.value()[i]);
        if (gap > 1e-2) CHECK(kl > 0.0);
    }
}

TEST_CASE("std_from_raw floor and monotonicity") {
    Tape t;
    CHECK(std_from_raw(t.constant(Tensor::row({-200.0}))).scalar() ==
          doctest::Approx(0.1).epsilon(1e-12));
    CHECK(std_from_raw(t.constant(Tensor::row({0.0}))).scalar() ==
          doctest::Approx(std::log(2.0) + 0.1));
    const double a = std_from_raw(t.constant(Tensor::row({0.0}))).scalar();
    const double b = std_from_raw(t.constant(Tensor::row({1.0}))).scalar();
    CHECK(b > a);
}

TEST_CASE("rsample empirical moments match") {
    Rng rng(123);
    const double mean = 1.4, stdev = 0.6;
    const int n = 100000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Tape t;
        GaussVar d = make_gauss(t, {mean}, {stdev});
        const double x = rsample(d, t.constant(Tensor::row({rng.normal()}))).scalar();
        s1 += x;
        s2 += x * x;
    }
    const double emp_mean = s1 / n;
    const double emp_var = s2 / n - emp_mean * emp_mean;
    const double se_mean = stdev / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(emp_mean - mean) < 3.0 * se_mean);
    const double se_std = stdev / std::sqrt(2.0 * (n - 1));
    CHECK(std::fabs(std::sqrt(emp_var) - stdev) < 3.0 * se_std);
}
