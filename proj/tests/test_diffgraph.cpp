#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "mssm/diff/gradcheck.hpp"
#include "mssm/diff/nets.hpp"
#include "mssm/diff/ops.hpp"
#include "mssm/diff/serialize.hpp"

using namespace mssm;
using namespace mssm::diff;

TEST_CASE("forward evaluation of simple roots") {
    Tape t;
    Var x = t.constant(Tensor::scalar(2.0));
    Var y = t.constant(Tensor::scalar(3.0));
    CHECK(eval_forward(add(x, y))[0] == 5.0);

    Var id3 = t.constant(Tensor::identity(3));
    Var v = t.constant(Tensor({3, 1}, {1.5, -2.0, 0.25}));
    Var mv = matmul(id3, v);
    const Tensor& out = eval_forward(mv);
    CHECK(out[0] == 1.5);
    CHECK(out[1] == -2.0);
    CHECK(out[2] == 0.25);

    Var z = t.constant(Tensor::row({0, 0, 0, 0}));
    CHECK(eval_forward(logsumexp(z))[0] == doctest::Approx(1.386294).epsilon(1e-6));
}

TEST_CASE("backward on scalar building blocks") {
    // d(x^2)/dx at 3 is 6
    {
        Tape t;
        Var x = t.input(Tensor::scalar(3.0));
        Var y = square(x);
        t.backward(y);
        CHECK(x.grad()[0] == doctest::Approx(6.0));
    }
    // sum(softmax(v)) is constant 1, so the gradient vanishes
    {
        Tape t;
        Var v = t.input(Tensor::row({0.3, -1.2, 2.0, 0.0}));
        Var s = sum_all(softmax_rows(v));
        t.backward(s);
        for (std::int64_t i = 0; i < 4; ++i) CHECK(std::fabs(v.grad()[i]) < 1e-14);
    }
    // ELU'(x) = e^x below zero
    {
        Tape t;
        Var x = t.input(Tensor::scalar(-1.0));
        Var y = elu(x);
        t.backward(y);
        CHECK(x.grad()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
    }
}

TEST_CASE("fan-out accumulates additively") {
    Tape t;
    Var x = t.input(Tensor::scalar(1.25));
    Var y = add(x, x);
    t.backward(y);
    CHECK(x.grad()[0] == 2.0);  // exact
}

TEST_CASE("logsumexp is shift invariant") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor v = rng.normal_tensor({1, 8}, 2.0);
        Tensor vc = v;
        const double c = rng.normal();
        for (std::int64_t i = 0; i < 8; ++i) vc[i] += c;
        Tape t;
        const double a = logsumexp(t.constant(v)).scalar();
        const double b = logsumexp(t.constant(vc)).scalar();
        CHECK(std::fabs(b - (a + c)) < 1e-12);
    }
}

TEST_CASE("check_gradients on closed forms") {
    // quadratic
    {
        ParamStore store;
        Param& x = store.add("x", Tensor::scalar(1.0));
        auto build = [&](Tape& t) { return square(t.param(x)); };
        CHECK(check_gradients(build, {&x}, 1e-5) < 1e-6);
    }
    // linear map is exact for central differences
    {
        ParamStore store;
        Param& x = store.add("x", Tensor::row({0.5, -1.0, 2.0}));
        auto build = [&](Tape& t) {
            Var w = t.constant(Tensor({3, 1}, {2.0, -3.0, 0.5}));
            return matmul(t.param(x), w);
        };
        CHECK(check_gradients(build, {&x}, 1e-5) < 1e-10);
    }
}

TEST_CASE("every primitive passes a randomized gradient check") {
    Rng rng(101);
    auto check_unary = [&](const char* name, Var (*op)(const Var&), double lo, double hi) {
        for (int rep = 0; rep < 5; ++rep) {
            ParamStore store;
            Param& x = store.add("x", rng.uniform_tensor({2, 3}, lo, hi));
            auto build = [&](Tape& t) { return sum_all(op(t.param(x))); };
            const double err = check_gradients(build, {&x}, 1e-5);
            INFO(name << " rep " << rep);
            CHECK(err < 1e-4);
        }
    };
    check_unary("square", square, -2, 2);
    check_unary("sqrt", sqrt_v, 0.2, 3);
    check_unary("exp", exp_v, -2, 2);
    check_unary("log", log_v, 0.2, 3);
    check_unary("tanh", tanh_v, -2, 2);
    check_unary("sigmoid", sigmoid, -3, 3);
    check_unary("elu", elu, -2, 2);
    check_unary("softplus", softplus, -3, 3);
    check_unary("abs", abs_v, 0.2, 2.0);
    check_unary("logsumexp_rows", logsumexp_rows, -2, 2);
    check_unary("row_sum", row_sum, -2, 2);
    check_unary("col_sum", col_sum, -2, 2);
    check_unary("transpose", transpose, -2, 2);

    for (int rep = 0; rep < 5; ++rep) {
        ParamStore store;
        Param& a = store.add("a", rng.normal_tensor({3, 4}));
        Param& b = store.add("b", rng.normal_tensor({4, 2}));
        Param& c = store.add("c", rng.normal_tensor({3, 2}));
        Param& d = store.add("d", rng.uniform_tensor({3, 2}, 0.5, 2.0));
        auto build = [&](Tape& t) {
            Var m = matmul(t.param(a), t.param(b));
            Var s = mul(m, t.param(c));
            Var q = div(s, t.param(d));
            return mean_all(min_elem(q, t.param(c)));
        };
        CHECK(check_gradients(build, {&a, &b, &c, &d}, 1e-5) < 1e-4);
    }

    // layer_norm
    for (int rep = 0; rep < 5; ++rep) {
        ParamStore store;
        Param& x = store.add("x", rng.normal_tensor({4, 6}));
        Param& g = store.add("g", rng.uniform_tensor({1, 6}, 0.5, 1.5));
        Param& b = store.add("b", rng.normal_tensor({1, 6}));
        auto build = [&](Tape& t) {
            Var y = layer_norm(t.param(x), t.param(g), t.param(b));
            return sum_all(mul(y, y));
        };
        CHECK(check_gradients(build, {&x, &g, &b}, 1e-5) < 1e-4);
    }

    // conv2d / conv2d_transpose
    for (int rep = 0; rep < 3; ++rep) {
        ParamStore store;
        Param& x = store.add("x", rng.normal_tensor({2, 2, 6, 6}));
        Param& w = store.add("w", rng.normal_tensor({3, 2 * 2 * 2}, 0.5));
        Param& b = store.add("b", rng.normal_tensor({1, 3}, 0.5));
        auto build = [&](Tape& t) {
            Var y = conv2d(t.param(x), t.param(w), t.param(b), 2, 2, 2);
            return sum_all(square(y));
        };
        CHECK(check_gradients(build, {&x, &w, &b}, 1e-5) < 1e-4);
    }
    for (int rep = 0; rep < 3; ++rep) {
        ParamStore store;
        Param& x = store.add("x", rng.normal_tensor({2, 3, 3, 3}));
        Param& w = store.add("w", rng.normal_tensor({3, 2 * 2 * 2}, 0.5));
        Param& b = store.add("b", rng.normal_tensor({1, 2}, 0.5));
        auto build = [&](Tape& t) {
            Var y = conv2d_transpose(t.param(x), t.param(w), t.param(b), 2, 2, 2);
            return sum_all(square(y));
        };
        CHECK(check_gradients(build, {&x, &w, &b}, 1e-5) < 1e-4);
    }
}

TEST_CASE("gru cell matches the stated gate equations") {
    Rng rng(5);
    ParamStore store;
    Gru g = Gru::create(store, "gru", 1, 1, rng);
    // zero everything: u = 0.5, c = 0, so h' = 0.5 h
    for (Param* p : store.all()) p->value = Tensor(p->value.shape());
    {
        Tape t;
        Var x = t.constant(Tensor::scalar(0.0));
        Var h = t.constant(Tensor::scalar(1.0));
        CHECK(g.cell(t, x, h).scalar() == doctest::Approx(0.5));
    }
    {
        Tape t;
        Var x = t.constant(Tensor::scalar(0.0));
        Var h = t.constant(Tensor::scalar(0.0));
        CHECK(g.cell(t, x, h).scalar() == 0.0);
    }
    // gradient of h' w.r.t. x against finite differences
    ParamStore store2;
    Gru g2 = Gru::create(store2, "gru", 3, 4, rng);
    Param& xin = store2.add("probe.x", rng.normal_tensor({1, 3}));
    Tensor h0 = rng.normal_tensor({1, 4});
    auto build = [&](Tape& t) {
        return sum_all(g2.cell(t, t.param(xin), t.constant(h0)));
    };
    CHECK(check_gradients(build, {&xin}, 1e-5) < 1e-4);
}

TEST_CASE("gru cell rejects width mismatches") {
    Rng rng(5);
    ParamStore store;
    Gru g = Gru::create(store, "gru", 2, 3, rng);
    Tape t;
    Var x = t.constant(Tensor({1, 5}));
    Var h = t.constant(Tensor({1, 3}));
    CHECK_THROWS_AS(g.cell(t, x, h), ShapeError);
}

TEST_CASE("mlp base cases") {
    Rng rng(3);
    // zero params map anything to zero
    {
        ParamStore store;
        Mlp m = Mlp::create(store, "mlp", MlpSpec{4, {8, 8}, Activation::Elu, {{"out", 2}}}, rng);
        for (Param* p : store.all()) p->value = Tensor(p->value.shape());
        Tape t;
        Var y = m.apply(t, t.constant(Tensor::row({1, 2, 3, 4})), "out");
        CHECK(y.value()[0] == 0.0);
        CHECK(y.value()[1] == 0.0);
    }
    // single identity layer with identity activation
    {
        ParamStore store;
        Mlp m = Mlp::create(store, "mlp", MlpSpec{3, {}, Activation::Identity, {{"out", 3}}}, rng);
        store.at("mlp.out.w").value = Tensor::identity(3);
        store.at("mlp.out.b").value = Tensor({1, 3});
        Tape t;
        Var y = m.apply(t, t.constant(Tensor::row({0.5, -1.5, 2.0})), "out");
        CHECK(y.value()[0] == 0.5);
        CHECK(y.value()[1] == -1.5);
        CHECK(y.value()[2] == 2.0);
    }
    // 2-layer ELU net gradient check over all parameters
    {
        ParamStore store;
        Mlp m = Mlp::create(store, "mlp", MlpSpec{3, {5, 5}, Activation::Elu, {{"out", 2}}}, rng);
        Tensor x = rng.normal_tensor({2, 3});
        auto build = [&](Tape& t) { return sum_all(square(m.apply(t, t.constant(x), "out"))); };
        CHECK(check_gradients(build, store.all(), 1e-5) < 1e-4);
    }
    // shape error names the op
    {
        ParamStore store;
        Mlp m = Mlp::create(store, "mlp", MlpSpec{3, {4}, Activation::Elu, {{"out", 1}}}, rng);
        Tape t;
        CHECK_THROWS_AS(m.apply(t, t.constant(Tensor::row({1, 2})), "out"), ShapeError);
    }
}

TEST_CASE("reading a gradient before backward is a usage error") {
    Tape t;
    Var x = t.input(Tensor::scalar(2.0));
    Var y = square(x);
    CHECK_THROWS_AS((void)x.grad(), UsageError);
    t.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("parameter serialization round-trips bit-exactly") {
    Rng rng(42);
    ParamStore store;
    store.add("a.w", rng.normal_tensor({3, 4}));
    store.add("b.w", rng.normal_tensor({2, 2}));
    store.at("b.w").adam_t = 3;
    store.at("b.w").adam_m = rng.normal_tensor({2, 2});
    store.at("b.w").adam_v = rng.uniform_tensor({2, 2}, 0, 1);
    const std::string stem = "/tmp/mssm_test_ckpt";
    save_params(store, stem, R"({"note":"t"})");

    ParamStore loaded;
    loaded.add("a.w", Tensor({3, 4}));
    loaded.add("b.w", Tensor({2, 2}));
    const std::string extra = load_params(loaded, stem);
    CHECK(extra.find("note") != std::string::npos);
    CHECK(loaded.at("a.w").value.vec() == store.at("a.w").value.vec());
    CHECK(loaded.at("b.w").adam_m.vec() == store.at("b.w").adam_m.vec());
    CHECK(loaded.at("b.w").adam_t == 3);

    // save -> load -> save is byte-identical
    save_params(loaded, stem + "2", R"({"note":"t"})");
    auto slurp = [](const std::string& p) {
        FILE* f = fopen(p.c_str(), "rb");
        REQUIRE(f);
        std::string s;
        char buf[4096];
        size_t n;
        while ((n = fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
        fclose(f);
        return s;
    };
    CHECK(slurp(stem + ".bin") == slurp(stem + "2.bin"));

    // mismatched shape fails with a named diagnostic
    ParamStore bad;
    bad.add("a.w", Tensor({3, 5}));
    bad.add("b.w", Tensor({2, 2}));
    CHECK_THROWS_WITH_AS(load_params(bad, stem),
                         doctest::Contains("a.w"), CheckpointError);
}
