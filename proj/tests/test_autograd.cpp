#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "csense/gradcheck.hpp"
#include "csense/gradcheck_battery.hpp"
#include "csense/optim.hpp"

using namespace csense;
using namespace csense::nn;

namespace {

DTensor randt(std::vector<int64_t> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    DTensor t(std::move(shape));
    SplitMix64 rng(seed);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

double inner(const DTensor& a, const DTensor& b) {
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a.data[size_t(i)] * b.data[size_t(i)];
    return s;
}

}  // namespace

TEST_CASE("conv1d identity kernel reproduces the input") {
    // w[c,c,0] = 1, K=1, stride 1, padding 0
    const int64_t C = 3, L = 5;
    DTensor w({C, C, 1});
    for (int64_t c = 0; c < C; ++c) w(c, c, 0) = 1.0;
    auto x = make_leaf<double>(randt({2, C, L}, 5), false);
    auto out = conv1d(x, make_leaf<double>(w), make_leaf<double>(DTensor({C})));
    REQUIRE(out->value.shape == x->value.shape);
    for (int64_t i = 0; i < out->value.numel(); ++i)
        CHECK(out->value.data[size_t(i)] == x->value.data[size_t(i)]);
}

TEST_CASE("conv1d sliding dot products") {
    // x=[1,2,3], kernel [1,1] -> [3,5]
    auto x = make_leaf<double>(DTensor::from({1, 1, 3}, {1, 2, 3}));
    auto w = make_leaf<double>(DTensor::from({1, 1, 2}, {1, 1}));
    auto out = conv1d(x, w, make_leaf<double>(DTensor({1})));
    REQUIRE(out->value.numel() == 2);
    CHECK(out->value.data[0] == doctest::Approx(3.0));
    CHECK(out->value.data[1] == doctest::Approx(5.0));
}

TEST_CASE("conv1d output length and precondition") {
    auto x = make_leaf<double>(randt({1, 1, 6}, 7));
    auto w = make_leaf<double>(randt({2, 1, 3}, 8));
    auto b = make_leaf<double>(DTensor({2}));
    CHECK(conv1d(x, w, b, 2, 1)->value.shape == std::vector<int64_t>{1, 2, 3});
    auto wide = make_leaf<double>(randt({1, 1, 9}, 9));
    CHECK_THROWS_AS(conv1d(x, wide, make_leaf<double>(DTensor({1})), 1, 1), ShapeMismatch);
}

TEST_CASE("conv1d_transposed expansion") {
    // stride 2, K=2, constant kernel 1, input [1,1] -> [1,1,1,1]
    auto x = make_leaf<double>(DTensor::from({1, 1, 2}, {1, 1}));
    auto w = make_leaf<double>(DTensor::from({1, 1, 2}, {1, 1}));
    auto out = conv1d_transposed(x, w, make_leaf<double>(DTensor({1})), 2);
    REQUIRE(out->value.numel() == 4);
    for (int i = 0; i < 4; ++i) CHECK(out->value.data[size_t(i)] == doctest::Approx(1.0));
}

TEST_CASE("conv1d_transposed is the adjoint of conv1d") {
    // <conv(x), y> == <x, convT(y)> with shared weight and zero bias
    for (uint64_t seed : {1u, 2u, 3u}) {
        const int64_t B = 2, Cin = 3, Cout = 4, L = 12, K = 3, stride = 3;
        DTensor w = randt({Cout, Cin, K}, seed + 10);
        auto x = make_leaf<double>(randt({B, Cin, L}, seed));
        auto xc = conv1d(x, make_leaf<double>(w), Var<double>{}, stride, 0);
        const int64_t Lout = xc->value.dim(2);
        DTensor y = randt({B, Cout, Lout}, seed + 20);
        auto yt = conv1d_transposed(make_leaf<double>(y), make_leaf<double>(w), Var<double>{}, stride);
        REQUIRE(yt->value.shape == x->value.shape);
        CHECK(inner(xc->value, y) == doctest::Approx(inner(x->value, yt->value)).epsilon(1e-10));
    }
}

TEST_CASE("batch_norm1d normalizes per channel in train mode") {
    auto x = make_leaf<double>(randt({4, 3, 8}, 11, -2.0, 5.0));
    auto gamma = make_leaf<double>(DTensor::full({3}, 1.0));
    auto beta = make_leaf<double>(DTensor({3}));
    auto y = batch_norm1d(x, gamma, beta, static_cast<DTensor*>(nullptr),
                          static_cast<DTensor*>(nullptr), Mode::Train, 1e-12);
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t l = 0; l < 8; ++l) mean += y->value(b, c, l);
        mean /= 32.0;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t l = 0; l < 8; ++l) {
                const double d = y->value(b, c, l) - mean;
                var += d * d;
            }
        var /= 32.0;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("batch_norm1d eval mode applies the running stats formula") {
    DTensor rm = DTensor::from({2}, {1.0, -2.0});
    DTensor rv = DTensor::from({2}, {4.0, 0.25});
    auto x = make_leaf<double>(randt({1, 2, 3}, 13));
    auto gamma = make_leaf<double>(DTensor::from({2}, {2.0, 3.0}));
    auto beta = make_leaf<double>(DTensor::from({2}, {-1.0, 0.5}));
    const double eps = 1e-5;
    auto y = batch_norm1d(x, gamma, beta, &rm, &rv, Mode::Eval, eps);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t l = 0; l < 3; ++l) {
            const double expect = (x->value(0, c, l) - rm(c)) / std::sqrt(rv(c) + eps) *
                                      gamma->value(c) +
                                  beta->value(c);
            CHECK(y->value(0, c, l) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("batch_norm1d rejects degenerate train batches") {
    auto x = make_leaf<double>(randt({1, 2, 1}, 17));
    auto gamma = make_leaf<double>(DTensor::full({2}, 1.0));
    auto beta = make_leaf<double>(DTensor({2}));
    CHECK_THROWS_AS(batch_norm1d(x, gamma, beta, static_cast<DTensor*>(nullptr),
                                 static_cast<DTensor*>(nullptr), Mode::Train),
                    DegenerateBatch);
}

TEST_CASE("batch_norm1d train mode updates running stats") {
    DTensor rm({1}), rv = DTensor::full({1}, 1.0);
    auto x = make_leaf<double>(DTensor::from({1, 1, 4}, {1, 2, 3, 4}));
    auto gamma = make_leaf<double>(DTensor::full({1}, 1.0));
    auto beta = make_leaf<double>(DTensor({1}));
    batch_norm1d(x, gamma, beta, &rm, &rv, Mode::Train, 1e-5, 0.1);
    // mean 2.5, biased var 1.25, unbiased 5/3
    CHECK(rm(0) == doctest::Approx(0.25));
    CHECK(rv(0) == doctest::Approx(0.9 + 0.1 * (1.25 * 4.0 / 3.0)));
}

TEST_CASE("attention with a single token returns v") {
    auto q = make_leaf<double>(randt({1, 2, 1, 4}, 19));
    auto k = make_leaf<double>(randt({1, 2, 1, 4}, 20));
    auto v = make_leaf<double>(randt({1, 2, 1, 4}, 21));
    auto out = attention(q, k, v);
    for (int64_t i = 0; i < out->value.numel(); ++i)
        CHECK(out->value.data[size_t(i)] == doctest::Approx(v->value.data[size_t(i)]));
}

TEST_CASE("attention with zero queries averages v") {
    const int64_t T = 5, d = 3;
    auto q = make_leaf<double>(DTensor({1, 1, T, d}));
    auto k = make_leaf<double>(randt({1, 1, T, d}, 23));
    auto v = make_leaf<double>(randt({1, 1, T, d}, 24));
    auto out = attention(q, k, v);
    for (int64_t j = 0; j < d; ++j) {
        double mean = 0;
        for (int64_t t = 0; t < T; ++t) mean += v->value(0, 0, t, j);
        mean /= static_cast<double>(T);
        for (int64_t t = 0; t < T; ++t)
            CHECK(out->value(0, 0, t, j) == doctest::Approx(mean).epsilon(1e-10));
    }
}

TEST_CASE("softmax rows are a probability distribution") {
    auto x = make_leaf<double>(randt({7, 9}, 29, -30.0, 30.0));
    auto y = softmax_lastdim(x);
    for (int64_t r = 0; r < 7; ++r) {
        double sum = 0;
        for (int64_t c = 0; c < 9; ++c) {
            CHECK(y->value(r, c) >= 0.0);
            sum += y->value(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("mse_loss anchors") {
    auto x = make_leaf<double>(randt({3, 4}, 31));
    CHECK(mse_loss(x, x->value)->value.data[0] == 0.0);  // exactly

    auto p = make_leaf<double>(DTensor::from({2}, {1, 2}));
    CHECK(mse_loss(p, DTensor({2}))->value.data[0] == doctest::Approx(2.5));

    DTensor mask = DTensor::from({2}, {1, 0});
    CHECK(mse_loss(p, DTensor({2}), &mask)->value.data[0] == doctest::Approx(1.0));

    CHECK_THROWS_AS(mse_loss(p, DTensor({3})), ShapeMismatch);
}

TEST_CASE("cross_entropy anchors") {
    // saturated: correct class at +1000 -> ~0 loss
    DTensor big({1, 4});
    big(0, 2) = 1000.0;
    CHECK(cross_entropy(make_leaf<double>(big), {2})->value.data[0] ==
          doctest::Approx(0.0).epsilon(1e-9));

    // uniform logits with C=11 -> ln 11, within 1e-5 even in float
    Tensor uniform({3, 11});
    auto lf = cross_entropy(make_leaf<float>(uniform), {0, 5, 10});
    CHECK(std::abs(static_cast<double>(lf->value.data[0]) - std::log(11.0)) < 1e-5);

    CHECK_THROWS_AS(cross_entropy(make_leaf<double>(big), {4}), ClassOutOfRange);
    CHECK_THROWS_AS(cross_entropy(make_leaf<double>(big), {-1}), ClassOutOfRange);
}

TEST_CASE("relu, gelu, max_pool basics") {
    auto x = make_leaf<double>(DTensor::from({4}, {-2, -0.5, 0.5, 2}));
    auto r = relu(x);
    CHECK(r->value.data == std::vector<double>{0, 0, 0.5, 2});

    auto g = gelu(make_leaf<double>(DTensor::from({2}, {0.0, 100.0})));
    CHECK(g->value.data[0] == doctest::Approx(0.0));
    CHECK(g->value.data[1] == doctest::Approx(100.0));

    auto p = max_pool1d(make_leaf<double>(DTensor::from({1, 1, 6}, {1, 5, 2, 2, 9, -1})), 2, 2);
    CHECK(p->value.data == std::vector<double>{5, 2, 9});
}

TEST_CASE("non-finite op outputs are a checked error") {
    auto x = make_leaf<float>(Tensor::full({2}, 3e38f));
    CHECK_THROWS_AS(scale(x, 10.0f), NonFiniteValue);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamT<double> p("p", DTensor::from({3}, {1, -2, 3}));
    std::vector<ParamT<double>*> ps{&p};
    adam_step(ps, {});
    CHECK(p.value.data == std::vector<double>{1, -2, 3});
    CHECK(p.step_count == 1);
}

TEST_CASE("adam: first step moves by ~lr in the gradient direction") {
    AdamConfig cfg;  // lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8
    ParamT<double> p("p", DTensor::from({2}, {0.5, -0.25}));
    p.grad = DTensor::from({2}, {3.7, -0.02});
    std::vector<ParamT<double>*> ps{&p};
    adam_step(ps, cfg);
    // bias-corrected first step: update = lr * g / (|g| + eps) ~= lr * sign(g)
    CHECK(p.value(0) == doctest::Approx(0.5 - 1e-4).epsilon(1e-7));
    CHECK(p.value(1) == doctest::Approx(-0.25 + 1e-4).epsilon(1e-7));
}

TEST_CASE("adam: identical grads and states produce identical updates") {
    ParamT<double> a("a", DTensor::from({2}, {1, 2}));
    ParamT<double> b("b", DTensor::from({2}, {1, 2}));
    for (int step = 0; step < 5; ++step) {
        a.grad = DTensor::from({2}, {0.3, -0.7});
        b.grad = DTensor::from({2}, {0.3, -0.7});
        std::vector<ParamT<double>*> ps{&a, &b};
        adam_step(ps, {});
    }
    CHECK(a.value.data == b.value.data);
}

TEST_CASE("grad_check on an analytic quadratic is nearly exact") {
    // f(x) = sum(x^2) built as n * mean((x - 0)^2); central differences are
    // exact on quadratics, so only rounding remains
    auto sum_sq = [](const Var<double>& x) {
        return scale(mse_loss(x, DTensor(x->value.shape)), static_cast<double>(x->value.numel()));
    };
    CHECK(grad_check(sum_sq, DTensor::from({3}, {1, 2, 3})) < 1e-8);

    auto vx = make_leaf<double>(DTensor::from({3}, {1, 2, 3}), true);
    backward(sum_sq(vx));
    REQUIRE(vx->grad.numel() == 3);
    CHECK(vx->grad(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(vx->grad(1) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(vx->grad(2) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gradient battery: every op within 1e-4 of central differences") {
    auto checks = run_gradcheck_battery();
    CHECK(checks.size() >= 20);
    std::ostringstream os;
    const bool all_pass = report_gradcheck_battery(os, checks);
    INFO(os.str());
    CHECK(all_pass);
}

TEST_CASE("ops are deterministic: same inputs, bit-identical outputs") {
    auto x = make_leaf<double>(randt({2, 3, 16}, 41));
    auto w = make_leaf<double>(randt({4, 3, 3}, 42));
    auto b = make_leaf<double>(randt({4}, 43));
    auto y1 = conv1d(x, w, b, 1, 1);
    auto y2 = conv1d(x, w, b, 1, 1);
    CHECK(y1->value.data == y2->value.data);
    auto s1 = softmax_lastdim(y1);
    auto s2 = softmax_lastdim(y2);
    CHECK(s1->value.data == s2->value.data);
}
