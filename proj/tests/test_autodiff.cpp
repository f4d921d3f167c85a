#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lidargen/autodiff.hpp"
#include "lidargen/rng.hpp"

using namespace lidargen;
using D = double;
using TapeD = Tape<double>;
using TenD = Ten<double>;

namespace {

std::vector<D> random_vec(Rng& rng, int64_t n, double lo, double hi) {
    std::vector<D> v(static_cast<size_t>(n));
    for (D& x : v) x = rng.uniform(lo, hi);
    return v;
}

// max scale-aware error between analytic and central finite differences
double fd_check(const std::function<double(const std::vector<D>&)>& f,
                const std::vector<D>& x0, const std::vector<D>& analytic,
                double h = 1e-5) {
    REQUIRE(analytic.size() == x0.size());
    double worst = 0.0;
    for (size_t i = 0; i < x0.size(); ++i) {
        std::vector<D> xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (f(xp) - f(xm)) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) /
                           std::max({1.0, std::abs(analytic[i]), std::abs(fd)});
        worst = std::max(worst, err);
    }
    return worst;
}

// gradcheck for a scalar-valued tape program of one input tensor
void gradcheck(const std::function<TenD(TapeD&, TenD)>& program, Shape shape,
               std::vector<D> x0, double tol = 1e-6) {
    TapeD tp;
    TenD x = tp.input(shape, x0);
    TenD loss = program(tp, x);
    std::vector<D> g = tp.val(tp.backward_to(loss, {x})[0]);
    auto f = [&](const std::vector<D>& xv) {
        TapeD t2;
        return t2.item(program(t2, t2.input(shape, xv)));
    };
    CHECK(fd_check(f, x0, g) < tol);
}

}  // namespace

TEST_CASE("trivial derivatives: identity, square, sin") {
    TapeD tp;
    TenD x = tp.input({}, {3.0});
    CHECK(tp.val(tp.backward_to(x, {x})[0])[0] == 1.0);

    TenD y = tp.square(x);
    CHECK(tp.item(y) == 9.0);
    CHECK(tp.val(tp.backward_to(y, {x})[0])[0] == 6.0);

    TenD z = tp.input({}, {0.0});
    TenD s = tp.sin(z);
    CHECK(tp.item(s) == 0.0);
    CHECK(tp.val(tp.backward_to(s, {z})[0])[0] == 1.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
    TapeD tp;
    TenD x = tp.input({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_AS(tp.backward_to(x, {x}), std::invalid_argument);
}

TEST_CASE("elementwise primitives match finite differences") {
    Rng rng(1);
    const Shape sh = {3, 4};
    auto x0 = random_vec(rng, 12, 0.3, 2.0);  // positive, away from kinks
    auto c0 = random_vec(rng, 12, -1.0, 1.0);

    auto weighted = [&](std::function<TenD(TapeD&, TenD)> op) {
        return [op, sh, c0](TapeD& tp, TenD x) {
            return tp.sum(tp.mul(op(tp, x), tp.constant(sh, c0)));
        };
    };

    gradcheck(weighted([](TapeD& t, TenD x) { return t.sin(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.cos(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.exp(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.log(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.sigmoid(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.tanh(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.softplus(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.square(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.sqrt(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.leaky_relu(x, 0.2); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.abs(x); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.add_scalar(x, 1.7); }), sh, x0);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.mul_scalar(x, -2.5); }), sh, x0);

    // negative side of the kinky ones
    auto xneg = random_vec(rng, 12, -2.0, -0.3);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.leaky_relu(x, 0.2); }), sh, xneg);
    gradcheck(weighted([](TapeD& t, TenD x) { return t.abs(x); }), sh, xneg);
}

TEST_CASE("binary primitives match finite differences in both slots") {
    Rng rng(2);
    const Shape sh = {2, 5};
    auto a0 = random_vec(rng, 10, 0.5, 2.0);
    auto b0 = random_vec(rng, 10, 0.5, 2.0);

    for (int slot = 0; slot < 2; ++slot) {
        auto with = [&](std::function<TenD(TapeD&, TenD, TenD)> op) {
            return [op, sh, a0, b0, slot](TapeD& tp, TenD x) {
                TenD other = tp.constant(sh, slot == 0 ? b0 : a0);
                TenD a = slot == 0 ? x : other;
                TenD b = slot == 0 ? other : x;
                return tp.sum(tp.square(op(tp, a, b)));
            };
        };
        const auto& x0 = slot == 0 ? a0 : b0;
        gradcheck(with([](TapeD& t, TenD a, TenD b) { return t.add(a, b); }), sh, x0);
        gradcheck(with([](TapeD& t, TenD a, TenD b) { return t.sub(a, b); }), sh, x0);
        gradcheck(with([](TapeD& t, TenD a, TenD b) { return t.mul(a, b); }), sh, x0);
        gradcheck(with([](TapeD& t, TenD a, TenD b) { return t.div(a, b); }), sh, x0);
    }
}

TEST_CASE("matmul gradients for all transpose flags") {
    Rng rng(3);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            const Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
            const Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
            auto a0 = random_vec(rng, 12, -1.0, 1.0);
            auto b0 = random_vec(rng, 20, -1.0, 1.0);

            gradcheck(
                [&](TapeD& tp, TenD x) {
                    return tp.sum(tp.square(tp.matmul(x, tp.constant(sb, b0), ta, tb)));
                },
                sa, a0);
            gradcheck(
                [&](TapeD& tp, TenD x) {
                    return tp.sum(tp.square(tp.matmul(tp.constant(sa, a0), x, ta, tb)));
                },
                sb, b0);
        }
}

TEST_CASE("movement primitives match finite differences") {
    Rng rng(4);
    auto x0 = random_vec(rng, 24, -1.0, 1.0);

    gradcheck([](TapeD& t, TenD x) { return t.sum(t.square(t.reshape(x, {4, 6}))); },
              {2, 3, 4}, x0);
    gradcheck([](TapeD& t, TenD x) { return t.sum(t.square(t.transpose(x))); }, {4, 6},
              x0);
    gradcheck([](TapeD& t, TenD x) { return t.mean(t.square(x)); }, {24}, x0);
    gradcheck(
        [](TapeD& t, TenD x) { return t.sum(t.square(t.broadcast(x, {5, 2, 3, 4}))); },
        {2, 3, 4}, x0);
    gradcheck([](TapeD& t, TenD x) { return t.sum(t.square(t.reduce_to(x, {1, 4}))); },
              {6, 4}, x0);
    gradcheck([](TapeD& t, TenD x) { return t.sum(t.square(t.slice(x, 1, 2, 3))); },
              {2, 12}, x0);
    gradcheck(
        [](TapeD& t, TenD x) { return t.sum(t.square(t.pad_slice(x, 0, 3, 11))); },
        {2, 12}, x0);
    gradcheck(
        [](TapeD& t, TenD x) {
            auto parts = std::vector<TenD>{t.slice(x, 1, 0, 2), t.slice(x, 1, 2, 10)};
            return t.sum(t.square(t.concat(parts, 1)));
        },
        {2, 12}, x0);
}

TEST_CASE("image primitives match finite differences") {
    Rng rng(5);
    const Shape img = {2, 4, 6, 3};  // NHWC
    auto x0 = random_vec(rng, numel(img), -1.0, 1.0);

    gradcheck(
        [](TapeD& t, TenD x) { return t.sum(t.square(t.nearest_upsample(x, 2))); }, img,
        x0);
    gradcheck([](TapeD& t, TenD x) { return t.sum(t.square(t.block_sum(x, 2))); }, img,
              x0);
    gradcheck(
        [](TapeD& t, TenD x) { return t.sum(t.square(t.upsample_columns(x, 2))); }, img,
        x0);
    gradcheck(
        [](TapeD& t, TenD x) { return t.sum(t.square(t.sum_column_blocks(x, 3))); },
        img, x0);
    gradcheck(
        [](TapeD& t, TenD x) {
            return t.sum(t.square(t.translate_columns_circular(x, 2)));
        },
        img, x0);
    gradcheck([](TapeD& t, TenD x) { return t.sum(t.square(t.im2col(x, 3, 3, 1))); },
              img, x0);

    const Shape ker = {3, 3, 3, 2};
    auto k0 = random_vec(rng, numel(ker), -0.5, 0.5);
    for (int stride : {1, 2}) {
        gradcheck(
            [&](TapeD& t, TenD x) {
                return t.sum(
                    t.square(t.conv2d_circular(x, t.constant(ker, k0), stride)));
            },
            img, x0);
        gradcheck(
            [&](TapeD& t, TenD k) {
                return t.sum(
                    t.square(t.conv2d_circular(t.constant(img, x0), k, stride)));
            },
            ker, k0);
    }
}

TEST_CASE("adjoint pairs satisfy the dot-product identity") {
    Rng rng(6);
    const Shape img = {2, 4, 6, 3};
    auto x0 = random_vec(rng, numel(img), -1.0, 1.0);

    auto dot = [](TapeD& tp, TenD a, TenD b) { return tp.item(tp.sum(tp.mul(a, b))); };

    SUBCASE("im2col / col2im") {
        for (int stride : {1, 2}) {
            TapeD tp;
            TenD x = tp.constant(img, x0);
            TenD cols = tp.im2col(x, 3, 3, stride);
            auto y0 = random_vec(rng, numel(tp.shape(cols)), -1.0, 1.0);
            TenD y = tp.constant(tp.shape(cols), y0);
            TenD back = tp.col2im(y, img, 3, 3, stride);
            CHECK(dot(tp, cols, y) == doctest::Approx(dot(tp, x, back)).epsilon(1e-12));
        }
    }
    SUBCASE("nearest_upsample / block_sum") {
        TapeD tp;
        TenD x = tp.constant(img, x0);
        TenD up = tp.nearest_upsample(x, 3);
        auto y0 = random_vec(rng, numel(tp.shape(up)), -1.0, 1.0);
        TenD y = tp.constant(tp.shape(up), y0);
        CHECK(dot(tp, up, y) ==
              doctest::Approx(dot(tp, x, tp.block_sum(y, 3))).epsilon(1e-12));
    }
    SUBCASE("slice / pad_slice") {
        TapeD tp;
        TenD x = tp.constant(img, x0);
        TenD sl = tp.slice(x, 2, 1, 4);
        auto y0 = random_vec(rng, numel(tp.shape(sl)), -1.0, 1.0);
        TenD y = tp.constant(tp.shape(sl), y0);
        CHECK(dot(tp, sl, y) ==
              doctest::Approx(dot(tp, x, tp.pad_slice(y, 2, 1, 6))).epsilon(1e-12));
    }
    SUBCASE("broadcast / reduce_to") {
        TapeD tp;
        auto s0 = random_vec(rng, 6, -1.0, 1.0);
        TenD x = tp.constant({2, 3}, s0);
        TenD big = tp.broadcast(x, {5, 2, 3});
        auto y0 = random_vec(rng, 30, -1.0, 1.0);
        TenD y = tp.constant({5, 2, 3}, y0);
        CHECK(dot(tp, big, y) ==
              doctest::Approx(dot(tp, x, tp.reduce_to(y, {2, 3}))).epsilon(1e-12));
    }
    SUBCASE("upsample_columns / sum_column_blocks") {
        TapeD tp;
        TenD x = tp.constant(img, x0);
        TenD up = tp.upsample_columns(x, 2);
        auto y0 = random_vec(rng, numel(tp.shape(up)), -1.0, 1.0);
        TenD y = tp.constant(tp.shape(up), y0);
        CHECK(dot(tp, up, y) ==
              doctest::Approx(dot(tp, x, tp.sum_column_blocks(y, 2))).epsilon(1e-12));
    }
    SUBCASE("translate +d / translate -d") {
        TapeD tp;
        TenD x = tp.constant(img, x0);
        TenD fwd = tp.translate_columns_circular(x, 2);
        auto y0 = random_vec(rng, numel(img), -1.0, 1.0);
        TenD y = tp.constant(img, y0);
        CHECK(dot(tp, fwd, y) ==
              doctest::Approx(dot(tp, x, tp.translate_columns_circular(y, -2)))
                  .epsilon(1e-12));
    }
}

TEST_CASE("conv2d_circular with a delta kernel is the identity, boundaries included") {
    Rng rng(7);
    const Shape img = {1, 5, 8, 2};
    auto x0 = random_vec(rng, numel(img), -1.0, 1.0);
    // delta at the kernel center, mapping each channel to itself
    std::vector<D> k(3 * 3 * 2 * 2, 0.0);
    for (int c = 0; c < 2; ++c) k[size_t(((1 * 3 + 1) * 2 + c) * 2 + c)] = 1.0;
    TapeD tp;
    TenD y = tp.conv2d_circular(tp.constant(img, x0), tp.constant({3, 3, 2, 2}, k), 1);
    CHECK(tp.val(y) == x0);
}

TEST_CASE("translate_columns_circular by W (and 0) is the identity") {
    Rng rng(8);
    const Shape img = {2, 3, 7, 2};
    auto x0 = random_vec(rng, numel(img), -1.0, 1.0);
    TapeD tp;
    TenD x = tp.constant(img, x0);
    CHECK(tp.val(tp.translate_columns_circular(x, 7)) == x0);
    CHECK(tp.val(tp.translate_columns_circular(x, 0)) == x0);
    CHECK(tp.val(tp.translate_columns_circular(x, -7)) == x0);
}

TEST_CASE("leaky_relu subgradient at 0 is alpha") {
    TapeD tp;
    TenD x = tp.input({3}, {-1.0, 0.0, 1.0});
    TenD loss = tp.sum(tp.leaky_relu(x, 0.25));
    auto g = tp.val(tp.backward_to(loss, {x})[0]);
    CHECK(g[0] == 0.25);
    CHECK(g[1] == 0.25);
    CHECK(g[2] == 1.0);
}

TEST_CASE("stop_gradient blocks flow") {
    TapeD tp;
    TenD x = tp.input({4}, {1, 2, 3, 4});
    TenD y = tp.sum(tp.mul(tp.stop_gradient(x), x));  // d/dx = stop(x) only
    auto g = tp.val(tp.backward_to(y, {x})[0]);
    CHECK(g == std::vector<D>{1, 2, 3, 4});
}

TEST_CASE("3-layer perceptron gradients match finite differences below 1e-6") {
    Rng rng(9);
    const int in = 5, h1 = 8, h2 = 6, nb = 4;
    auto xin = random_vec(rng, nb * in, -1.0, 1.0);
    std::vector<std::pair<Shape, std::vector<D>>> theta = {
        {{in, h1}, random_vec(rng, in * h1, -0.6, 0.6)},
        {{1, h1}, random_vec(rng, h1, -0.3, 0.3)},
        {{h1, h2}, random_vec(rng, h1 * h2, -0.6, 0.6)},
        {{1, h2}, random_vec(rng, h2, -0.3, 0.3)},
        {{h2, 1}, random_vec(rng, h2, -0.6, 0.6)},
        {{1, 1}, random_vec(rng, 1, -0.3, 0.3)},
    };

    auto forward = [&](TapeD& tp, const std::vector<std::vector<D>>& tv,
                       bool as_params) {
        std::vector<TenD> p;
        for (size_t i = 0; i < theta.size(); ++i)
            p.push_back(as_params ? tp.param(theta[i].first, tv[i])
                                  : tp.constant(theta[i].first, tv[i]));
        TenD x = tp.constant({nb, in}, xin);
        TenD a1 = tp.tanh(tp.add(tp.matmul(x, p[0]), tp.broadcast(p[1], {nb, h1})));
        TenD a2 = tp.tanh(tp.add(tp.matmul(a1, p[2]), tp.broadcast(p[3], {nb, h2})));
        TenD out = tp.add(tp.matmul(a2, p[4]), tp.broadcast(p[5], {nb, 1}));
        return tp.mean(tp.square(out));
    };

    std::vector<std::vector<D>> tv;
    for (auto& [s, v] : theta) tv.push_back(v);
    TapeD tp;
    TenD loss = forward(tp, tv, true);
    auto grads = tp.backward(loss);
    REQUIRE(grads.size() == theta.size());

    double worst = 0.0;
    for (size_t pi = 0; pi < theta.size(); ++pi) {
        auto f = [&](const std::vector<D>& pv) {
            auto tv2 = tv;
            tv2[pi] = pv;
            TapeD t2;
            return t2.item(forward(t2, tv2, false));
        };
        worst = std::max(worst, fd_check(f, tv[pi], tp.val(grads[pi])));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("backward is linear: grad(a*f + b*g) = a*grad(f) + b*grad(g) exactly") {
    // integer data and power-of-two coefficients make every product exact
    std::vector<D> xv = {1, -2, 3, 4, -5, 6};
    std::vector<D> wv = {2, -4, 8, 1, -2, 4};
    const double a = 2.0, b = 0.5;

    auto build = [&](TapeD& tp, TenD x, int which) {
        TenD w = tp.constant({3, 2}, wv);
        TenD f = tp.sum(tp.mul(x, w));               // linear
        TenD g = tp.sum(tp.square(x));               // quadratic
        if (which == 0) return f;
        if (which == 1) return g;
        return tp.add(tp.mul_scalar(f, a), tp.mul_scalar(g, b));
    };

    TapeD t1;
    TenD x1 = t1.input({3, 2}, xv);
    auto gf = t1.val(t1.backward_to(build(t1, x1, 0), {x1})[0]);
    TapeD t2;
    TenD x2 = t2.input({3, 2}, xv);
    auto gg = t2.val(t2.backward_to(build(t2, x2, 1), {x2})[0]);
    TapeD t3;
    TenD x3 = t3.input({3, 2}, xv);
    auto gc = t3.val(t3.backward_to(build(t3, x3, 2), {x3})[0]);

    for (size_t i = 0; i < xv.size(); ++i) CHECK(gc[i] == a * gf[i] + b * gg[i]);
}

TEST_CASE("identical tapes give bit-identical gradients") {
    Rng rng(10);
    auto x0 = random_vec(rng, 1 * 4 * 6 * 3, -1.0, 1.0);
    auto k0 = random_vec(rng, 3 * 3 * 3 * 2, -0.5, 0.5);
    auto run = [&]() {
        TapeD tp;
        TenD x = tp.constant({1, 4, 6, 3}, x0);
        TenD k = tp.param({3, 3, 3, 2}, k0);
        TenD loss = tp.mean(tp.square(tp.conv2d_circular(x, k, 2)));
        return tp.val(tp.backward(loss)[0]);
    };
    CHECK(run() == run());
}

TEST_CASE("grad_norm_sq of a linear map equals ||w||^2, independent of x") {
    std::vector<D> wv = {0.5, -1.5, 2.0, 3.0};
    for (double xscale : {1.0, 7.0}) {
        TapeD tp;
        TenD x = tp.input({1, 4}, {1 * xscale, 2 * xscale, -1 * xscale, 0.5 * xscale});
        TenD w = tp.param({4, 1}, wv);
        TenD out = tp.sum(tp.matmul(x, w));
        TenD pen = tp.grad_norm_sq(out, x);
        double expect = 0.0;
        for (D v : wv) expect += v * v;
        CHECK(tp.item(pen) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("grad_norm_sq of a constant output is 0") {
    TapeD tp;
    TenD x = tp.input({3}, {1, 2, 3});
    TenD c = tp.scalar(5.0);
    CHECK(tp.item(tp.grad_norm_sq(c, x)) == 0.0);
}

TEST_CASE("d(grad_norm_sq)/d(theta) matches finite differences (double backward)") {
    Rng rng(11);
    const int in = 4, hid = 5, nb = 3;
    auto xin = random_vec(rng, nb * in, -1.0, 1.0);
    std::vector<std::pair<Shape, std::vector<D>>> theta = {
        {{in, hid}, random_vec(rng, in * hid, -0.7, 0.7)},
        {{1, hid}, random_vec(rng, hid, -0.3, 0.3)},
        {{hid, 1}, random_vec(rng, hid, -0.7, 0.7)},
    };

    auto penalty = [&](TapeD& tp, const std::vector<std::vector<D>>& tv, bool as_params) {
        std::vector<TenD> p;
        for (size_t i = 0; i < theta.size(); ++i)
            p.push_back(as_params ? tp.param(theta[i].first, tv[i])
                                  : tp.constant(theta[i].first, tv[i]));
        TenD x = tp.input({nb, in}, xin);
        TenD a1 = tp.tanh(tp.add(tp.matmul(x, p[0]), tp.broadcast(p[1], {nb, hid})));
        TenD out = tp.sum(tp.matmul(a1, p[2]));
        return tp.grad_norm_sq(out, x);
    };

    std::vector<std::vector<D>> tv;
    for (auto& [s, v] : theta) tv.push_back(v);
    TapeD tp;
    TenD pen = penalty(tp, tv, true);
    auto grads = tp.backward(pen);

    double worst = 0.0;
    for (size_t pi = 0; pi < theta.size(); ++pi) {
        auto f = [&](const std::vector<D>& pv) {
            auto tv2 = tv;
            tv2[pi] = pv;
            TapeD t2;
            return t2.item(penalty(t2, tv2, false));
        };
        worst = std::max(worst, fd_check(f, tv[pi], tp.val(grads[pi])));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("double backward through a circular convolution discriminator") {
    Rng rng(12);
    const Shape img = {2, 4, 8, 1};
    const Shape ker = {3, 3, 1, 2};
    auto xin = random_vec(rng, numel(img), -1.0, 1.0);
    auto k0 = random_vec(rng, numel(ker), -0.5, 0.5);
    auto w0 = random_vec(rng, 2 * 4 * 2, -0.5, 0.5);  // dense over stride-2 output

    // D-step-shaped objective: data loss plus gradient penalty on the input
    auto objective = [&](TapeD& tp, const std::vector<D>& kv, const std::vector<D>& wv,
                         bool as_params) {
        TenD x = tp.input(img, xin);
        TenD k = as_params ? tp.param(ker, kv) : tp.constant(ker, kv);
        TenD w = as_params ? tp.param({2 * 4 * 2, 1}, wv) : tp.constant({2 * 4 * 2, 1}, wv);
        TenD h = tp.leaky_relu(tp.conv2d_circular(x, k, 2), 0.2);
        TenD scores = tp.matmul(tp.reshape(h, {2, 2 * 4 * 2}), w);
        TenD data_loss = tp.mean(tp.softplus(scores));
        TenD pen = tp.grad_norm_sq(tp.sum(scores), x);
        return tp.add(data_loss, tp.mul_scalar(pen, 0.5));
    };

    TapeD tp;
    TenD loss = objective(tp, k0, w0, true);
    auto grads = tp.backward(loss);
    REQUIRE(grads.size() == 2);

    auto fk = [&](const std::vector<D>& kv) {
        TapeD t2;
        return t2.item(objective(t2, kv, w0, false));
    };
    auto fw = [&](const std::vector<D>& wv) {
        TapeD t2;
        return t2.item(objective(t2, k0, wv, false));
    };
    CHECK(fd_check(fk, k0, tp.val(grads[0])) < 1e-4);
    CHECK(fd_check(fw, w0, tp.val(grads[1])) < 1e-4);
}

TEST_CASE("shape mismatches are rejected") {
    TapeD tp;
    TenD a = tp.zeros({2, 3});
    TenD b = tp.zeros({3, 2});
    CHECK_THROWS_AS(tp.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tp.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(tp.reshape(a, {4, 2}), std::invalid_argument);
    CHECK_THROWS_AS(tp.broadcast(a, {2, 4}), std::invalid_argument);
    CHECK_THROWS_AS(tp.slice(a, 1, 2, 5), std::invalid_argument);
    CHECK_THROWS_AS(tp.conv2d_circular(a, b, 1), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters, advances the counter") {
    std::vector<D> p = {1.0, -2.0};
    AdamState<D> st;
    adam_step<D>(p, {0.0, 0.0}, st, 0.1);
    CHECK(p == std::vector<D>{1.0, -2.0});
    CHECK(st.t == 1);
}

TEST_CASE("adam: first step moves by about lr in the gradient direction") {
    std::vector<D> p = {0.0};
    AdamState<D> st;
    adam_step<D>(p, {0.5}, st, 0.01);
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));

    std::vector<D> q = {0.0};
    AdamState<D> st2;
    adam_step<D>(q, {-3.0}, st2, 0.01);
    CHECK(q[0] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam: 200 steps on (x-3)^2 converge within 1e-2") {
    std::vector<D> x = {0.0};
    AdamState<D> st;
    for (int i = 0; i < 200; ++i) {
        const D g = 2.0 * (x[0] - 3.0);
        adam_step<D>(x, {g}, st, 0.1);
    }
    CHECK(std::abs(x[0] - 3.0) < 1e-2);
}
