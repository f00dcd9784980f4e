#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sasq/autodiff.hpp"
#include "sasq/mathops.hpp"
#include "sasq/rng.hpp"
#include "sasq/tensor.hpp"

using namespace sasq;
using autodiff::Tape;
using autodiff::Variable;

namespace {

FloatTensor random_tensor(Rng& rng, Shape shape, float lo = -2.0f, float hi = 2.0f) {
    FloatTensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = lo + (hi - lo) * static_cast<float>(rng.uniform());
    return t;
}

// Builds loss(x) on a fresh tape. Used twice: once with requires_grad for the
// analytic gradient, and repeatedly without it for central finite differences.
using Build = std::function<Variable(Tape&, Variable)>;

FloatTensor analytic_grad(const FloatTensor& x0, const Build& build) {
    Tape t;
    Variable x = t.leaf(x0, true);
    t.backward(build(t, x));
    return t.grad(x);
}

FloatTensor fd_grad(const FloatTensor& x0, const Build& build, float h = 1e-3f) {
    FloatTensor g(x0.shape());
    for (int64_t i = 0; i < x0.numel(); ++i) {
        FloatTensor xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        Tape tp, tm;
        const float lp = build(tp, tp.leaf(xp, false)).value()[0];
        const float lm = build(tm, tm.leaf(xm, false)).value()[0];
        g[i] = (lp - lm) / (2.0f * h);
    }
    return g;
}

void check_close(const FloatTensor& got, const FloatTensor& want, double tol) {
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i) {
        const double scale = std::max({1.0, std::abs(double(got[i])), std::abs(double(want[i]))});
        CHECK(std::abs(double(got[i]) - double(want[i])) <= tol * scale);
    }
}

void check_grad_matches_fd(const FloatTensor& x0, const Build& build, double tol = 2e-2) {
    check_close(analytic_grad(x0, build), fd_grad(x0, build), tol);
}

// sum(f(x) * w) for a fixed random weighting w, so every output element gets
// a distinct upstream gradient.
Build weighted(std::function<Variable(Tape&, Variable)> f, FloatTensor w) {
    return [f = std::move(f), w = std::move(w)](Tape& t, Variable x) {
        return t.sum_all(t.mul(f(t, x), t.leaf(w, false)));
    };
}

}  // namespace

TEST_CASE("elementwise op gradients (hand values)") {
    const FloatTensor xv = tensor2({{1, 2}, {3, 4}});
    const FloatTensor yv = tensor2({{5, 6}, {7, 8}});

    SUBCASE("mul: dx = y, dy = x") {
        Tape t;
        Variable x = t.leaf(xv, true), y = t.leaf(yv, true);
        t.backward(t.sum_all(t.mul(x, y)));
        check_close(t.grad(x), yv, 0.0);
        check_close(t.grad(y), xv, 0.0);
    }
    SUBCASE("add and sub: +/-1") {
        Tape t;
        Variable x = t.leaf(xv, true), y = t.leaf(yv, true);
        t.backward(t.sum_all(t.add(t.sub(x, y), x)));
        for (int64_t i = 0; i < 4; ++i) {
            CHECK(t.grad(x)[i] == 2.0f);
            CHECK(t.grad(y)[i] == -1.0f);
        }
    }
    SUBCASE("mul_scalar") {
        Tape t;
        Variable x = t.leaf(xv, true);
        t.backward(t.sum_all(t.mul_scalar(x, -2.5f)));
        for (int64_t i = 0; i < 4; ++i) CHECK(t.grad(x)[i] == -2.5f);
    }
}

TEST_CASE("row-broadcast gradients vs finite differences") {
    Rng rng(41);
    const FloatTensor m0 = random_tensor(rng, Shape{3, 4});
    const FloatTensor row0 = random_tensor(rng, Shape{4}, 0.6f, 2.0f);
    const FloatTensor w = random_tensor(rng, Shape{3, 4});

    SUBCASE("add, grad wrt matrix") {
        check_grad_matches_fd(m0, weighted([&](Tape& t, Variable x) {
            return t.add_row_broadcast(x, t.leaf(row0, false));
        }, w));
    }
    SUBCASE("add, grad wrt row") {
        check_grad_matches_fd(row0, weighted([&](Tape& t, Variable r) {
            return t.add_row_broadcast(t.leaf(m0, false), r);
        }, w));
    }
    SUBCASE("mul, both operands") {
        check_grad_matches_fd(m0, weighted([&](Tape& t, Variable x) {
            return t.mul_row_broadcast(x, t.leaf(row0, false));
        }, w));
        check_grad_matches_fd(row0, weighted([&](Tape& t, Variable r) {
            return t.mul_row_broadcast(t.leaf(m0, false), r);
        }, w));
    }
    SUBCASE("div, both operands") {
        check_grad_matches_fd(m0, weighted([&](Tape& t, Variable x) {
            return t.div_row_broadcast(x, t.leaf(row0, false));
        }, w));
        check_grad_matches_fd(row0, weighted([&](Tape& t, Variable r) {
            return t.div_row_broadcast(t.leaf(m0, false), r);
        }, w));
    }
    SUBCASE("scalar row [1] broadcast") {
        const FloatTensor s0(Shape{1}, {1.7f});
        check_grad_matches_fd(s0, weighted([&](Tape& t, Variable r) {
            return t.mul_row_broadcast(t.leaf(m0, false), r);
        }, w));
    }
}

TEST_CASE("matmul / transpose / slice / concat gradients") {
    Rng rng(42);
    const FloatTensor a0 = random_tensor(rng, Shape{2, 3});
    const FloatTensor b0 = random_tensor(rng, Shape{3, 4});
    const FloatTensor w = random_tensor(rng, Shape{2, 4});

    SUBCASE("matmul wrt a and b") {
        check_grad_matches_fd(a0, weighted([&](Tape& t, Variable x) {
            return t.matmul(x, t.leaf(b0, false));
        }, w));
        check_grad_matches_fd(b0, weighted([&](Tape& t, Variable x) {
            return t.matmul(t.leaf(a0, false), x);
        }, w));
    }
    SUBCASE("transpose routes gradient through the transpose") {
        Tape t;
        Variable x = t.leaf(a0, true);
        const FloatTensor wt = random_tensor(rng, Shape{3, 2});
        t.backward(t.sum_all(t.mul(t.transpose(x), t.leaf(wt, false))));
        check_close(t.grad(x), transpose(wt), 0.0);
    }
    SUBCASE("slice_cols scatters into the source range") {
        Tape t;
        Variable x = t.leaf(b0, true);  // [3x4]
        const FloatTensor ws = tensor2({{1, 2}, {3, 4}, {5, 6}});
        t.backward(t.sum_all(t.mul(t.slice_cols(x, 1, 3), t.leaf(ws, false))));
        const FloatTensor& g = t.grad(x);
        for (int64_t r = 0; r < 3; ++r) {
            CHECK(g.at(r, 0) == 0.0f);
            CHECK(g.at(r, 1) == ws.at(r, 0));
            CHECK(g.at(r, 2) == ws.at(r, 1));
            CHECK(g.at(r, 3) == 0.0f);
        }
    }
    SUBCASE("concat_cols splits upstream gradient") {
        Tape t;
        Variable p = t.leaf(tensor2({{1, 2}, {3, 4}}), true);
        Variable q = t.leaf(tensor2({{5}, {6}}), true);
        const FloatTensor wc = tensor2({{10, 20, 30}, {40, 50, 60}});
        t.backward(t.sum_all(t.mul(t.concat_cols({p, q}), t.leaf(wc, false))));
        check_close(t.grad(p), tensor2({{10, 20}, {40, 50}}), 0.0);
        check_close(t.grad(q), tensor2({{30}, {60}}), 0.0);
    }
}

TEST_CASE("embed_gather accumulates over repeated ids") {
    Tape t;
    Variable table = t.leaf(tensor2({{1, 1}, {2, 2}, {3, 3}, {4, 4}}), true);
    Variable out = t.embed_gather(table, {2, 0, 2});
    CHECK(out.value().at(0, 0) == 3.0f);
    CHECK(out.value().at(1, 0) == 1.0f);
    const FloatTensor w = tensor2({{1, 2}, {3, 4}, {5, 6}});
    t.backward(t.sum_all(t.mul(out, t.leaf(w, false))));
    const FloatTensor& g = t.grad(table);
    // row 2 was gathered twice (out rows 0 and 2), row 0 once (out row 1)
    CHECK(g.at(2, 0) == 6.0f);
    CHECK(g.at(2, 1) == 8.0f);
    CHECK(g.at(0, 0) == 3.0f);
    CHECK(g.at(0, 1) == 4.0f);
    CHECK(g.at(1, 0) == 0.0f);
    CHECK(g.at(3, 1) == 0.0f);
}

TEST_CASE("rms_norm gradients vs finite differences") {
    Rng rng(43);
    const FloatTensor x0 = random_tensor(rng, Shape{3, 8});
    const FloatTensor g0 = random_tensor(rng, Shape{8}, 0.5f, 1.5f);
    const FloatTensor w = random_tensor(rng, Shape{3, 8});
    const float eps = 1e-5f;

    check_grad_matches_fd(x0, weighted([&](Tape& t, Variable x) {
        return t.rms_norm(x, t.leaf(g0, false), eps);
    }, w));
    check_grad_matches_fd(g0, weighted([&](Tape& t, Variable g) {
        return t.rms_norm(t.leaf(x0, false), g, eps);
    }, w));
}

TEST_CASE("softmax_causal_rows gradients") {
    Rng rng(44);
    const FloatTensor s0 = random_tensor(rng, Shape{4, 4});
    const FloatTensor w = random_tensor(rng, Shape{4, 4});

    check_grad_matches_fd(s0, weighted([&](Tape& t, Variable s) {
        return t.softmax_causal_rows(s, 0);
    }, w));

    SUBCASE("masked positions get exactly zero gradient") {
        const FloatTensor g = analytic_grad(s0, weighted([&](Tape& t, Variable s) {
            return t.softmax_causal_rows(s, 0);
        }, w));
        for (int64_t r = 0; r < 4; ++r)
            for (int64_t c = r + 1; c < 4; ++c) CHECK(g.at(r, c) == 0.0f);
    }
    SUBCASE("query_offset shifts the visible window") {
        const FloatTensor s1 = random_tensor(rng, Shape{1, 5});
        const FloatTensor w1 = random_tensor(rng, Shape{1, 5});
        check_grad_matches_fd(s1, weighted([&](Tape& t, Variable s) {
            return t.softmax_causal_rows(s, 4);
        }, w1));
    }
}

TEST_CASE("gelu gradient equals the closed-form derivative") {
    Rng rng(45);
    const FloatTensor x0 = random_tensor(rng, Shape{2, 6}, -3.0f, 3.0f);
    const FloatTensor w = random_tensor(rng, Shape{2, 6});
    const FloatTensor g = analytic_grad(x0, weighted([](Tape& t, Variable x) {
        return t.gelu(x);
    }, w));
    for (int64_t i = 0; i < x0.numel(); ++i) {
        const float u = mathops::kGeluCoeff * (x0[i] + mathops::kGeluCubic * x0[i] * x0[i] * x0[i]);
        CHECK(g[i] ==
              doctest::Approx(w[i] * mathops::gelu_grad(x0[i], std::tanh(u))).epsilon(1e-5));
    }
    check_grad_matches_fd(x0, weighted([](Tape& t, Variable x) { return t.gelu(x); }, w));
}

TEST_CASE("cross_entropy_mean: hand-checked value and gradient") {
    // row 0: probs [1/8, 2/8, 5/8], target 2; row 1: uniform, target 1
    const float l2 = std::log(2.0f), l5 = std::log(5.0f);
    const FloatTensor logits = tensor2({{0.0f, l2, l5}, {0.0f, 0.0f, 0.0f}});
    Tape t;
    Variable x = t.leaf(logits, true);
    Variable loss = t.cross_entropy_mean(x, {2, 1});
    const double want = 0.5 * (-std::log(0.625) + std::log(3.0));
    CHECK(loss.value()[0] == doctest::Approx(want).epsilon(1e-6));
    t.backward(loss);
    const FloatTensor& g = t.grad(x);
    // d/dlogit = (softmax - onehot) / rows
    CHECK(g.at(0, 0) == doctest::Approx(0.125 / 2).epsilon(1e-5));
    CHECK(g.at(0, 1) == doctest::Approx(0.25 / 2).epsilon(1e-5));
    CHECK(g.at(0, 2) == doctest::Approx((0.625 - 1.0) / 2).epsilon(1e-5));
    CHECK(g.at(1, 1) == doctest::Approx((1.0 / 3.0 - 1.0) / 2).epsilon(1e-5));
    CHECK(g.at(1, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-5));
}

TEST_CASE("straight-through estimators") {
    SUBCASE("ste_round: rounds forward, identity backward") {
        Tape t;
        Variable x = t.leaf(FloatTensor(Shape{5}, {0.5f, -0.5f, 2.5f, 1.2f, -1.7f}), true);
        Variable r = t.ste_round(x);
        const float want[5] = {1.0f, -1.0f, 3.0f, 1.0f, -2.0f};
        for (int i = 0; i < 5; ++i) CHECK(r.value()[i] == want[i]);
        const FloatTensor w(Shape{5}, {3, 5, 7, 11, 13});
        t.backward(t.sum_all(t.mul(r, t.leaf(w, false))));
        for (int i = 0; i < 5; ++i) CHECK(t.grad(x)[i] == w[i]);
    }
    SUBCASE("ste_clamp: boundaries pass gradient, outside blocks it") {
        Tape t;
        Variable x = t.leaf(FloatTensor(Shape{6}, {-2.0f, -1.0f, -0.5f, 0.0f, 1.0f, 2.0f}), true);
        Variable c = t.ste_clamp(x, -1.0f, 1.0f);
        const float fwd[6] = {-1.0f, -1.0f, -0.5f, 0.0f, 1.0f, 1.0f};
        for (int i = 0; i < 6; ++i) CHECK(c.value()[i] == fwd[i]);
        t.backward(t.sum_all(c));
        const float mask[6] = {0, 1, 1, 1, 1, 0};
        for (int i = 0; i < 6; ++i) CHECK(t.grad(x)[i] == mask[i]);
    }
    SUBCASE("ste_clamp rejects inverted bounds") {
        Tape t;
        Variable x = t.leaf(FloatTensor::scalar1(0.0f), true);
        CHECK_THROWS_AS(t.ste_clamp(x, 1.0f, -1.0f), DomainError);
    }
}

TEST_CASE("mean_scalars averages and backpropagates 1/N") {
    Tape t;
    Variable a = t.leaf(FloatTensor::scalar1(3.0f), true);
    Variable b = t.leaf(FloatTensor::scalar1(5.0f), true);
    Variable c = t.leaf(FloatTensor::scalar1(10.0f), true);
    Variable m = t.mean_scalars({a, b, c});
    CHECK(m.value()[0] == 6.0f);
    t.backward(m);
    CHECK(t.grad(a)[0] == doctest::Approx(1.0f / 3.0f));
    CHECK(t.grad(b)[0] == doctest::Approx(1.0f / 3.0f));
    CHECK(t.grad(c)[0] == doctest::Approx(1.0f / 3.0f));
}

TEST_CASE("tape bookkeeping") {
    SUBCASE("second backward throws") {
        Tape t;
        Variable x = t.leaf(FloatTensor::scalar1(2.0f), true);
        Variable loss = t.sum_all(t.mul(x, x));
        t.backward(loss);
        CHECK_THROWS_AS(t.backward(loss), Error);
    }
    SUBCASE("no gradient materialized off the requires-grad path") {
        Tape t;
        Variable x = t.leaf(tensor2({{1, 2}}), false);
        Variable y = t.leaf(tensor2({{3, 4}}), true);
        Variable prod = t.mul(x, y);
        t.backward(t.sum_all(prod));
        CHECK(t.has_grad(y));
        CHECK(!t.has_grad(x));
        CHECK_THROWS_AS(t.grad(x), Error);
        check_close(t.grad(y), tensor2({{1, 2}}), 0.0);
    }
    SUBCASE("backward needs a scalar loss") {
        Tape t;
        Variable x = t.leaf(tensor2({{1, 2}}), true);
        CHECK_THROWS_AS(t.backward(x), ShapeError);
    }
    SUBCASE("grad_ids lists gradient holders in ascending order") {
        Tape t;
        Variable x = t.leaf(FloatTensor::scalar1(1.0f), true);
        Variable y = t.leaf(FloatTensor::scalar1(2.0f), true);
        t.backward(t.sum_all(t.mul(x, y)));
        const auto ids = t.grad_ids();
        REQUIRE(ids.size() >= 2);
        CHECK(ids.front() == x.id);
        for (size_t i = 1; i < ids.size(); ++i) CHECK(ids[i - 1] < ids[i]);
    }
}
