#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mssm/kernels/kernels.hpp"
#include "mssm/rng.hpp"

using namespace mssm;
namespace k = mssm::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("elementwise kernels are bit-identical across variants") {
    if (!k::avx2_supported()) return;
    Rng rng(7);
    const auto& s = k::scalar_table();
    const auto& v = k::avx2_table();
    for (std::size_t n : {1u, 3u, 4u, 17u, 64u, 1001u}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        std::vector<double> sr(n), vr(n);
        s.add(a.data(), b.data(), sr.data(), n);
        v.add(a.data(), b.data(), vr.data(), n);
        CHECK(sr == vr);
        s.sub(a.data(), b.data(), sr.data(), n);
        v.sub(a.data(), b.data(), vr.data(), n);
        CHECK(sr == vr);
        s.mul(a.data(), b.data(), sr.data(), n);
        v.mul(a.data(), b.data(), vr.data(), n);
        CHECK(sr == vr);
        s.div(a.data(), b.data(), sr.data(), n);
        v.div(a.data(), b.data(), vr.data(), n);
        CHECK(sr == vr);
        s.scale(1.7, a.data(), sr.data(), n);
        v.scale(1.7, a.data(), vr.data(), n);
        CHECK(sr == vr);
        auto y1 = b, y2 = b;
        s.axpy(-0.3, a.data(), y1.data(), n);
        v.axpy(-0.3, a.data(), y2.data(), n);
        CHECK(y1 == y2);
        CHECK(s.max(a.data(), n) == v.max(a.data(), n));
    }
}

TEST_CASE("reduction kernels agree within accumulation-order tolerance") {
    if (!k::avx2_supported()) return;
    Rng rng(13);
    const auto& s = k::scalar_table();
    const auto& v = k::avx2_table();
    for (std::size_t n : {5u, 32u, 100u, 4097u}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        CHECK(v.dot(a.data(), b.data(), n) ==
              doctest::Approx(s.dot(a.data(), b.data(), n)).epsilon(1e-12));
        CHECK(v.sum(a.data(), n) == doctest::Approx(s.sum(a.data(), n)).epsilon(1e-12));
        CHECK(v.sumsq(a.data(), n) == doctest::Approx(s.sumsq(a.data(), n)).epsilon(1e-12));
    }
}

TEST_CASE("gemm variants agree on random problems") {
    if (!k::avx2_supported()) return;
    Rng rng(29);
    const auto& s = k::scalar_table();
    const auto& v = k::avx2_table();
    for (auto [m, n, kk] : std::vector<std::array<std::size_t, 3>>{
             {1, 1, 1}, {3, 5, 2}, {4, 8, 16}, {7, 9, 11}, {12, 24, 40}, {33, 17, 65}}) {
        auto a = random_vec(rng, m * kk), b = random_vec(rng, kk * n);
        std::vector<double> c0(m * n, 0.5), c1 = c0;
        for (bool acc : {false, true}) {
            s.gemm_nn(m, n, kk, a.data(), b.data(), c0.data(), acc);
            v.gemm_nn(m, n, kk, a.data(), b.data(), c1.data(), acc);
            double worst = 0.0, scale = 1.0;
            for (std::size_t i = 0; i < m * n; ++i) {
                worst = std::max(worst, std::fabs(c0[i] - c1[i]));
                scale = std::max(scale, std::fabs(c0[i]));
            }
            CHECK(worst / scale < 1e-13);
        }
    }
}

TEST_CASE("gemm matches a hand-computed product") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    std::vector<double> a = {1, 2, 3, 4}, b = {5, 6, 7, 8}, c(4, 0.0);
    k::active().gemm_nn(2, 2, 2, a.data(), b.data(), c.data(), false);
    CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("dispatch selects avx2 when available and can be pinned") {
    const auto& auto_table = k::active();
    if (k::avx2_supported())
        CHECK(std::string(auto_table.name) == "avx2");
    else
        CHECK(std::string(auto_table.name) == "scalar");
    k::force_isa(k::Isa::Scalar);
    CHECK(std::string(k::active().name) == "scalar");
    k::reset_isa();
}
