#include <doctest.h>

#include <noisegen/autodiff.hpp>
#include <noisegen/conv.hpp>
#include <noisegen/rng.hpp>

#include "gradcheck.hpp"

using namespace noisegen;
using gradcheck::GraphD;
using gradcheck::random_tensor;

namespace {

// Direct (quadruple-loop) convolution oracle, independent of the im2col path.
template <typename T>
TensorT<T> conv_naive(const TensorT<T>& x, const TensorT<T>& w, const ConvGeom& g) {
    const int N = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
    TensorT<T> y(Shape{N, Cout, g.out_h(), g.out_w()});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < g.out_h(); ++oy)
                for (int ox = 0; ox < g.out_w(); ++ox) {
                    T acc = 0;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < g.kh; ++ky)
                            for (int kx = 0; kx < g.kw; ++kx) {
                                int iy = oy * g.stride - g.pad_t + ky;
                                int ix = ox * g.stride - g.pad_l + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                acc += x.at4(n, ci, iy, ix) * w.at4(co, ci, ky, kx);
                            }
                    y.at4(n, co, oy, ox) = acc;
                }
    return y;
}

template <typename T>
T dot(const TensorT<T>& a, const TensorT<T>& b) {
    T s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

ConvGeom geom(int h, int w, int k, int s, int pt, int pl, int pb, int pr) {
    ConvGeom g;
    g.in_h = h;
    g.in_w = w;
    g.kh = k;
    g.kw = k;
    g.stride = s;
    g.pad_t = pt;
    g.pad_l = pl;
    g.pad_b = pb;
    g.pad_r = pr;
    return g;
}

}  // namespace

TEST_CASE("conv_fwd matches the direct-convolution oracle across geometries") {
    RngStream rng(101);
    struct Case {
        int N, Cin, Cout;
        ConvGeom g;
    };
    std::vector<Case> cases = {
        {2, 3, 5, geom(8, 8, 4, 2, 1, 1, 1, 1)},    // stride-2 halving conv
        {1, 4, 6, geom(9, 7, 3, 1, 1, 1, 1, 1)},    // same-size 3x3
        {2, 2, 3, geom(6, 6, 7, 1, 3, 3, 3, 3)},    // 7x7 same
        {1, 3, 2, geom(4, 4, 4, 1, 1, 1, 0, 0)},    // asymmetric padding (critic head)
        {3, 1, 1, geom(5, 5, 1, 1, 0, 0, 0, 0)},    // pointwise
        {1, 2, 2, geom(1, 1, 3, 1, 1, 1, 1, 1)},    // 1x1 spatial with pad (bottleneck residual)
    };
    for (const auto& c : cases) {
        DTensor x = random_tensor({c.N, c.Cin, c.g.in_h, c.g.in_w}, rng);
        DTensor w = random_tensor({c.Cout, c.Cin, c.g.kh, c.g.kw}, rng);
        DTensor y(Shape{c.N, c.Cout, c.g.out_h(), c.g.out_w()});
        conv_fwd(x.data(), w.data(), y.data(), c.N, c.Cin, c.Cout, c.g);
        DTensor ref = conv_naive(x, w, c.g);
        double maxerr = 0;
        for (std::int64_t i = 0; i < y.size(); ++i) maxerr = std::max(maxerr, std::abs(y[i] - ref[i]));
        CHECK(maxerr < 1e-12);
    }
}

TEST_CASE("conv backward kernels are exact adjoints of conv_fwd") {
    RngStream rng(202);
    auto g = geom(10, 8, 4, 2, 1, 1, 1, 1);
    const int N = 2, Cin = 3, Cout = 4;
    DTensor x = random_tensor({N, Cin, g.in_h, g.in_w}, rng);
    DTensor w = random_tensor({Cout, Cin, g.kh, g.kw}, rng);
    DTensor gy = random_tensor({N, Cout, g.out_h(), g.out_w()}, rng);

    DTensor y(Shape{N, Cout, g.out_h(), g.out_w()});
    conv_fwd(x.data(), w.data(), y.data(), N, Cin, Cout, g);
    DTensor gx(x.shape);
    conv_bwd_input(gy.data(), w.data(), gx.data(), N, Cin, Cout, g);
    DTensor gw(w.shape);
    conv_bwd_weight(x.data(), gy.data(), gw.data(), N, Cin, Cout, g);

    // <y, gy> == <x, B_in(gy,w)> == <w, B_w(x,gy)>
    const double a = dot(y, gy);
    CHECK(std::abs(a - dot(x, gx)) < 1e-9 * std::max(1.0, std::abs(a)));
    CHECK(std::abs(a - dot(w, gw)) < 1e-9 * std::max(1.0, std::abs(a)));
}

TEST_CASE("transposed convolution via conv_bwd_input doubles spatial size") {
    RngStream rng(303);
    // Decoder layer: 2x2 -> 4x4 with k=4, s=2, p=1 (geometry of the
    // equivalent forward conv, whose input is the upsampled size).
    auto g = geom(4, 4, 4, 2, 1, 1, 1, 1);
    const int A = 3, B = 2;  // decoder in/out channels
    DTensor xsmall = random_tensor({1, A, 2, 2}, rng);
    DTensor w = random_tensor({A, B, 4, 4}, rng);
    DTensor up(Shape{1, B, 4, 4});
    conv_bwd_input(xsmall.data(), w.data(), up.data(), 1, B, A, g);
    CHECK(up.dim(2) == 4);
    CHECK(up.dim(3) == 4);
    double sum = 0;
    for (auto v : up.v) sum += std::abs(v);
    CHECK(sum > 0.0);
}

namespace {

// Builds a small but representative network expression through every op
// family, returning the scalar loss node.
int build_mixed_expr(GraphD& g, int x, int w1, int w2, int gamma, int beta, int bias) {
    ConvGeom g1 = geom(8, 8, 4, 2, 1, 1, 1, 1);                       // 8x8 -> 4x4
    ConvGeom g2 = geom(4, 4, 3, 1, 1, 1, 1, 1);                       // 4x4 -> 4x4
    int c1 = g.bias_add(g.conv_fwd_(x, w1, g1), bias);                // [N,3,4,4]
    int n1 = g.instance_norm(c1, gamma, beta, 1e-5);
    int a1 = g.lrelu(n1, 0.2);
    int cat = g.concat_c(a1, g.slice_c(a1, 0, 2));                    // [N,5,4,4]
    int c2 = g.conv_fwd_(cat, w2, g2);                                // [N,2,4,4]
    int t = g.tanh_(c2);
    int pooled = g.reshape(g.mean_hw(t), Shape{g.val(t).dim(0), 2});  // [N,2]
    int norms = g.l2_per_sample(pooled);                              // [N]
    int mixed = g.add(g.mean_all(g.abs_(t)), g.mean_all(norms));
    int sq = g.mul(mixed, mixed);
    return g.add_scalar(g.mul_scalar(sq, 0.5), 0.25);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences through mixed ops") {
    RngStream rng(404);
    const int N = 2;
    std::vector<DTensor> inputs = {
        random_tensor({N, 2, 8, 8}, rng, 0.7),   // x
        random_tensor({3, 2, 4, 4}, rng, 0.4),   // w1
        random_tensor({2, 5, 3, 3}, rng, 0.4),   // w2
        random_tensor({3}, rng, 0.3),            // gamma
        random_tensor({3}, rng, 0.3),            // beta
        random_tensor({3}, rng, 0.3),            // bias
    };
    auto fn = [](const std::vector<DTensor>& in, std::vector<DTensor>* an) -> double {
        GraphD g;
        std::vector<int> ids;
        for (const auto& t : in) ids.push_back(g.leaf(t));
        int loss = build_mixed_expr(g, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]);
        if (an) {
            auto gs = g.backward(loss, ids);
            an->clear();
            for (int gi : gs) an->push_back(g.val(gi));
        }
        return g.val(loss)[0];
    };
    auto res = gradcheck::check_gradients(fn, inputs, 6, 777);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("double backward: derivative of a gradient-norm penalty checks out") {
    // The wgan-gp pattern: s(x, w) = sum over per-sample squared-norms of
    // dD/dx where D = sum of a small conv net. FD-check ds/dw and ds/dx.
    RngStream rng(505);
    const int N = 2;
    std::vector<DTensor> inputs = {
        random_tensor({N, 2, 6, 6}, rng, 0.8),  // x
        random_tensor({3, 2, 3, 3}, rng, 0.5),  // w1
        random_tensor({1, 3, 3, 3}, rng, 0.5),  // w2
    };
    auto fn = [](const std::vector<DTensor>& in, std::vector<DTensor>* an) -> double {
        GraphD g;
        int x = g.leaf(in[0]);
        int w1 = g.leaf(in[1]);
        int w2 = g.leaf(in[2]);
        ConvGeom g1 = geom(6, 6, 3, 1, 1, 1, 1, 1);
        int h1 = g.lrelu(g.conv_fwd_(x, w1, g1), 0.2);
        int h2 = g.conv_fwd_(h1, w2, g1);
        int score = g.sum_all(h2);
        int grad_x = g.backward(score, {x})[0];
        int norms = g.l2_per_sample(grad_x);
        int pen = g.mean_all(g.mul(g.add_scalar(norms, -1.0), g.add_scalar(norms, -1.0)));
        if (an) {
            auto gs = g.backward(pen, {x, w1, w2});
            an->clear();
            for (int gi : gs) an->push_back(g.val(gi));
        }
        return g.val(pen)[0];
    };
    auto res = gradcheck::check_gradients(fn, inputs, 8, 888, 1e-5);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradients of disconnected leaves are exact zeros") {
    GraphD g;
    RngStream rng(606);
    int a = g.leaf(random_tensor({2, 2}, rng));
    int b = g.leaf(random_tensor({3}, rng));
    int loss = g.mean_all(g.mul(a, a));
    auto gs = g.backward(loss, {a, b});
    CHECK(g.val(gs[1]).shape == Shape{3});
    for (auto v : g.val(gs[1]).v) CHECK(v == 0.0);
    // and the connected one is not zero
    double s = 0;
    for (auto v : g.val(gs[0]).v) s += std::abs(v);
    CHECK(s > 0.0);
}

TEST_CASE("backward accumulates fan-out reuse correctly") {
    GraphD g;
    DTensor x(Shape{4}, 0.0);
    for (int i = 0; i < 4; ++i) x[i] = 0.5 + 0.25 * i;
    int xi = g.leaf(x);
    int y = g.add(g.mul(xi, xi), g.mul_scalar(xi, 3.0));  // x^2 + 3x
    int loss = g.sum_all(y);
    auto gs = g.backward(loss, {xi});
    for (int i = 0; i < 4; ++i) CHECK(g.val(gs[0])[i] == doctest::Approx(2.0 * x[i] + 3.0).epsilon(1e-12));
}

TEST_CASE("instance norm: zero-variance input maps to beta") {
    GraphD g;
    DTensor x(Shape{1, 2, 1, 1});
    x[0] = 7.0;
    x[1] = -3.0;
    DTensor gamma(Shape{2}, 1.0), beta(Shape{2});
    beta[0] = 0.25;
    beta[1] = -0.5;
    int y = g.instance_norm(g.leaf(x), g.leaf(gamma), g.leaf(beta), 1e-5);
    CHECK(g.val(y)[0] == doctest::Approx(0.25));
    CHECK(g.val(y)[1] == doctest::Approx(-0.5));
}
