#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "conv.hpp"
#include "tensor.hpp"

namespace noisegen {

// Define-by-run reverse-mode autodiff over dense tensors.
//
// The design constraint that shapes everything here: gradient-penalty training
// differentiates *through* a gradient. backward() therefore emits its
// vector-Jacobian products as ordinary graph nodes, so the result of one
// backward pass is itself differentiable by a second pass. That requires the
// op set to be closed under VJP; notably the three convolution kernels
// {conv_fwd, conv_bwd_input, conv_bwd_weight} form such a closed triple.
//
// Values are computed eagerly at node creation; backward() walks nodes in
// reverse creation order (a valid reverse topological order by construction).
template <typename T>
class Graph {
public:
    using Ten = TensorT<T>;

    enum class Op : std::uint8_t {
        Leaf, Const,
        Add, Sub, Mul, AddScalar, MulScalar,
        Tanh, LRelu, Abs, Sqrt, Recip,
        ConvFwd, ConvBwdInput, ConvBwdWeight,
        ConcatC, SliceC, EmbedC,
        BcastChan, SumNHW, BcastHW, SumHW,
        SumSample, BcastSample, SumAll, BcastAll,
        MulBS, Reshape,
    };

    struct Node {
        Ten val;
        Op op = Op::Const;
        bool rg = false;  // true iff some Leaf is an ancestor
        int p0 = -1, p1 = -1;
        T c{};            // scalar payload (AddScalar/MulScalar/LRelu slope)
        int i0 = 0, i1 = 0;  // channel range payload
        ConvGeom geom;
        Shape sh;         // target-shape payload for broadcasts/reshape
        Ten aux;          // elementwise mask payload (LRelu/Abs)
    };

    std::vector<Node> nodes;

    int size() const { return static_cast<int>(nodes.size()); }
    const Ten& val(int id) const { return nodes[static_cast<size_t>(id)].val; }
    bool requires_grad(int id) const { return nodes[static_cast<size_t>(id)].rg; }

    std::size_t bytes() const {
        std::size_t b = 0;
        for (const auto& n : nodes) b += (n.val.v.size() + n.aux.v.size()) * sizeof(T);
        return b;
    }

    // ---- node constructors ----

    int leaf(Ten v) { return push(Op::Leaf, std::move(v), -1, -1, /*rg=*/true); }
    int constant(Ten v) { return push(Op::Const, std::move(v), -1, -1, /*rg=*/false); }
    int scalar_const(T v) { return constant(Ten(Shape{1}, v)); }

    int add(int a, int b) {
        require_same(a, b, "add");
        Ten out = nodes[a].val;
        const Ten& bv = nodes[b].val;
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return push(Op::Add, std::move(out), a, b);
    }

    int sub(int a, int b) {
        require_same(a, b, "sub");
        Ten out = nodes[a].val;
        const Ten& bv = nodes[b].val;
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
        return push(Op::Sub, std::move(out), a, b);
    }

    int mul(int a, int b) {
        require_same(a, b, "mul");
        Ten out = nodes[a].val;
        const Ten& bv = nodes[b].val;
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return push(Op::Mul, std::move(out), a, b);
    }

    int add_scalar(int a, T c) {
        Ten out = nodes[a].val;
        for (auto& x : out.v) x += c;
        int id = push(Op::AddScalar, std::move(out), a, -1);
        nodes[id].c = c;
        return id;
    }

    int mul_scalar(int a, T c) {
        Ten out = nodes[a].val;
        for (auto& x : out.v) x *= c;
        int id = push(Op::MulScalar, std::move(out), a, -1);
        nodes[id].c = c;
        return id;
    }

    int tanh_(int a) {
        Ten out = nodes[a].val;
        for (auto& x : out.v) x = std::tanh(x);
        return push(Op::Tanh, std::move(out), a, -1);
    }

    // Leaky ReLU; slope 0 gives plain ReLU. Subgradient at 0 is `slope`.
    int lrelu(int a, T slope) {
        const Ten& xv = nodes[a].val;
        Ten out = xv;
        Ten mask(xv.shape);
        for (std::int64_t i = 0; i < out.size(); ++i) {
            if (xv[i] > T(0)) {
                mask[i] = T(1);
            } else {
                mask[i] = slope;
                out[i] = xv[i] * slope;
            }
        }
        int id = push(Op::LRelu, std::move(out), a, -1);
        nodes[id].c = slope;
        nodes[id].aux = std::move(mask);
        return id;
    }

    int relu(int a) { return lrelu(a, T(0)); }

    int abs_(int a) {
        const Ten& xv = nodes[a].val;
        Ten out(xv.shape);
        Ten sign(xv.shape);
        for (std::int64_t i = 0; i < out.size(); ++i) {
            out[i] = std::abs(xv[i]);
            sign[i] = xv[i] > T(0) ? T(1) : (xv[i] < T(0) ? T(-1) : T(0));
        }
        int id = push(Op::Abs, std::move(out), a, -1);
        nodes[id].aux = std::move(sign);
        return id;
    }

    int sqrt_(int a) {
        Ten out = nodes[a].val;
        for (auto& x : out.v) x = std::sqrt(x);
        return push(Op::Sqrt, std::move(out), a, -1);
    }

    int recip(int a) {
        Ten out = nodes[a].val;
        for (auto& x : out.v) x = T(1) / x;
        return push(Op::Recip, std::move(out), a, -1);
    }

    // ---- convolution triple ----

    int conv_fwd_(int x, int w, ConvGeom g) {
        const Ten& xv = nodes[x].val;
        const Ten& wv = nodes[w].val;
        require_rank(x, 4, "conv_fwd x");
        require_rank(w, 4, "conv_fwd w");
        const int N = xv.dim(0), Cin = xv.dim(1), Cout = wv.dim(0);
        if (wv.dim(1) != Cin || xv.dim(2) != g.in_h || xv.dim(3) != g.in_w || wv.dim(2) != g.kh ||
            wv.dim(3) != g.kw)
            throw std::invalid_argument("conv_fwd: geometry/shape mismatch");
        Ten out(Shape{N, Cout, g.out_h(), g.out_w()});
        conv_fwd(xv.data(), wv.data(), out.data(), N, Cin, Cout, g);
        int id = push(Op::ConvFwd, std::move(out), x, w);
        nodes[id].geom = g;
        return id;
    }

    int conv_bwd_input_(int gy, int w, ConvGeom g) {
        const Ten& gv = nodes[gy].val;
        const Ten& wv = nodes[w].val;
        require_rank(gy, 4, "conv_bwd_input gy");
        const int N = gv.dim(0), Cout = wv.dim(0), Cin = wv.dim(1);
        if (gv.dim(1) != Cout || gv.dim(2) != g.out_h() || gv.dim(3) != g.out_w())
            throw std::invalid_argument("conv_bwd_input: geometry/shape mismatch");
        Ten out(Shape{N, Cin, g.in_h, g.in_w});
        conv_bwd_input(gv.data(), wv.data(), out.data(), N, Cin, Cout, g);
        int id = push(Op::ConvBwdInput, std::move(out), gy, w);
        nodes[id].geom = g;
        return id;
    }

    int conv_bwd_weight_(int x, int gy, ConvGeom g) {
        const Ten& xv = nodes[x].val;
        const Ten& gv = nodes[gy].val;
        const int N = xv.dim(0), Cin = xv.dim(1), Cout = gv.dim(1);
        if (gv.dim(0) != N || gv.dim(2) != g.out_h() || gv.dim(3) != g.out_w() ||
            xv.dim(2) != g.in_h || xv.dim(3) != g.in_w)
            throw std::invalid_argument("conv_bwd_weight: geometry/shape mismatch");
        Ten out(Shape{Cout, Cin, g.kh, g.kw});
        conv_bwd_weight(xv.data(), gv.data(), out.data(), N, Cin, Cout, g);
        int id = push(Op::ConvBwdWeight, std::move(out), x, gy);
        nodes[id].geom = g;
        return id;
    }

    // ---- structure ops (4-d, channel axis = dim 1) ----

    int concat_c(int a, int b) {
        const Ten& av = nodes[a].val;
        const Ten& bv = nodes[b].val;
        require_rank(a, 4, "concat_c a");
        require_rank(b, 4, "concat_c b");
        if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
            throw std::invalid_argument("concat_c: non-channel dims differ");
        const int N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
        const std::size_t S = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
        Ten out(Shape{N, Ca + Cb, av.dim(2), av.dim(3)});
        for (int n = 0; n < N; ++n) {
            std::copy_n(av.data() + static_cast<std::size_t>(n) * Ca * S, Ca * S,
                        out.data() + static_cast<std::size_t>(n) * (Ca + Cb) * S);
            std::copy_n(bv.data() + static_cast<std::size_t>(n) * Cb * S, Cb * S,
                        out.data() + static_cast<std::size_t>(n) * (Ca + Cb) * S + Ca * S);
        }
        int id = push(Op::ConcatC, std::move(out), a, b);
        nodes[id].i0 = Ca;
        return id;
    }

    int slice_c(int a, int c0, int c1) {
        const Ten& av = nodes[a].val;
        require_rank(a, 4, "slice_c");
        const int N = av.dim(0), C = av.dim(1);
        if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_c: bad channel range");
        const std::size_t S = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
        Ten out(Shape{N, c1 - c0, av.dim(2), av.dim(3)});
        for (int n = 0; n < N; ++n)
            std::copy_n(av.data() + (static_cast<std::size_t>(n) * C + c0) * S,
                        static_cast<std::size_t>(c1 - c0) * S,
                        out.data() + static_cast<std::size_t>(n) * (c1 - c0) * S);
        int id = push(Op::SliceC, std::move(out), a, -1);
        nodes[id].i0 = c0;
        nodes[id].i1 = c1;
        return id;
    }

    // Places x into channels [c0, c0+Cx) of a zero tensor with c_total channels.
    int embed_c(int a, int c0, int c_total) {
        const Ten& av = nodes[a].val;
        require_rank(a, 4, "embed_c");
        const int N = av.dim(0), Cx = av.dim(1);
        if (c0 < 0 || c0 + Cx > c_total) throw std::invalid_argument("embed_c: bad channel range");
        const std::size_t S = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
        Ten out(Shape{N, c_total, av.dim(2), av.dim(3)});
        for (int n = 0; n < N; ++n)
            std::copy_n(av.data() + static_cast<std::size_t>(n) * Cx * S,
                        static_cast<std::size_t>(Cx) * S,
                        out.data() + (static_cast<std::size_t>(n) * c_total + c0) * S);
        int id = push(Op::EmbedC, std::move(out), a, -1);
        nodes[id].i0 = c0;
        nodes[id].i1 = c_total;
        return id;
    }

    // ---- broadcast / reduction pairs ----

    int bcast_chan(int b, Shape target) {  // [C] -> [N,C,H,W]
        const Ten& bv = nodes[b].val;
        if (bv.rank() != 1 || target.size() != 4 || target[1] != bv.dim(0))
            throw std::invalid_argument("bcast_chan: shape mismatch");
        Ten out(target);
        const std::size_t S = static_cast<std::size_t>(target[2]) * target[3];
        for (int n = 0; n < target[0]; ++n)
            for (int c = 0; c < target[1]; ++c)
                std::fill_n(out.data() + (static_cast<std::size_t>(n) * target[1] + c) * S, S, bv[c]);
        int id = push(Op::BcastChan, std::move(out), b, -1);
        nodes[id].sh = target;
        return id;
    }

    int sum_nhw(int a) {  // [N,C,H,W] -> [C]
        const Ten& av = nodes[a].val;
        require_rank(a, 4, "sum_nhw");
        const int N = av.dim(0), C = av.dim(1);
        const std::size_t S = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
        Ten out(Shape{C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* p = av.data() + (static_cast<std::size_t>(n) * C + c) * S;
                T acc = T(0);
                for (std::size_t i = 0; i < S; ++i) acc += p[i];
                out[c] += acc;
            }
        return push(Op::SumNHW, std::move(out), a, -1);
    }

    int bcast_hw(int a, int H, int W) {  // [N,C,1,1] -> [N,C,H,W]
        const Ten& av = nodes[a].val;
        require_rank(a, 4, "bcast_hw");
        if (av.dim(2) != 1 || av.dim(3) != 1) throw std::invalid_argument("bcast_hw: source spatial must be 1x1");
        const int N = av.dim(0), C = av.dim(1);
        Ten out(Shape{N, C, H, W});
        const std::size_t S = static_cast<std::size_t>(H) * W;
        for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc)
            std::fill_n(out.data() + nc * S, S, av[nc]);
        int id = push(Op::BcastHW, std::move(out), a, -1);
        nodes[id].i0 = H;
        nodes[id].i1 = W;
        return id;
    }

    int sum_hw(int a) {  // [N,C,H,W] -> [N,C,1,1]
        const Ten& av = nodes[a].val;
        require_rank(a, 4, "sum_hw");
        const int N = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
        const std::size_t S = static_cast<std::size_t>(H) * W;
        Ten out(Shape{N, C, 1, 1});
        for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
            const T* p = av.data() + nc * S;
            T acc = T(0);
            for (std::size_t i = 0; i < S; ++i) acc += p[i];
            out[nc] = acc;
        }
        int id = push(Op::SumHW, std::move(out), a, -1);
        nodes[id].i0 = H;
        nodes[id].i1 = W;
        return id;
    }

    int sum_sample(int a) {  // [N,...] -> [N]
        const Ten& av = nodes[a].val;
        if (av.rank() < 2) throw std::invalid_argument("sum_sample: rank must be >= 2");
        const int N = av.dim(0);
        const std::size_t S = static_cast<std::size_t>(av.size() / N);
        Ten out(Shape{N});
        for (int n = 0; n < N; ++n) {
            const T* p = av.data() + static_cast<std::size_t>(n) * S;
            T acc = T(0);
            for (std::size_t i = 0; i < S; ++i) acc += p[i];
            out[n] = acc;
        }
        return push(Op::SumSample, std::move(out), a, -1);
    }

    int bcast_sample(int a, Shape target) {  // [N] -> [N,...]
        const Ten& av = nodes[a].val;
        if (av.rank() != 1 || target.empty() || target[0] != av.dim(0))
            throw std::invalid_argument("bcast_sample: shape mismatch");
        Ten out(target);
        const int N = target[0];
        const std::size_t S = static_cast<std::size_t>(out.size() / N);
        for (int n = 0; n < N; ++n) std::fill_n(out.data() + static_cast<std::size_t>(n) * S, S, av[n]);
        int id = push(Op::BcastSample, std::move(out), a, -1);
        nodes[id].sh = target;
        return id;
    }

    int sum_all(int a) {
        const Ten& av = nodes[a].val;
        T acc = T(0);
        for (const auto& x : av.v) acc += x;
        return push(Op::SumAll, Ten(Shape{1}, acc), a, -1);
    }

    int bcast_all(int a, Shape target) {  // [1] -> any
        const Ten& av = nodes[a].val;
        if (av.size() != 1) throw std::invalid_argument("bcast_all: source must be scalar");
        Ten out(target, av[0]);
        int id = push(Op::BcastAll, std::move(out), a, -1);
        nodes[id].sh = target;
        return id;
    }

    int mul_bs(int x, int s) {  // tensor * scalar-node
        const Ten& xv = nodes[x].val;
        const Ten& sv = nodes[s].val;
        if (sv.size() != 1) throw std::invalid_argument("mul_bs: scale must be scalar node");
        Ten out = xv;
        const T c = sv[0];
        for (auto& e : out.v) e *= c;
        return push(Op::MulBS, std::move(out), x, s);
    }

    int reshape(int a, Shape target) {
        const Ten& av = nodes[a].val;
        if (shape_numel(target) != av.size()) throw std::invalid_argument("reshape: element count differs");
        Ten out = av;
        out.shape = target;
        int id = push(Op::Reshape, std::move(out), a, -1);
        nodes[id].sh = target;
        return id;
    }

    // ---- composite helpers ----

    int mean_all(int a) {
        return mul_scalar(sum_all(a), T(1) / static_cast<T>(nodes[a].val.size()));
    }

    int mean_hw(int a) {
        // note: copy the divisor before pushing nodes (vector may reallocate)
        const T inv = T(1) / static_cast<T>(static_cast<std::size_t>(nodes[a].val.dim(2)) * nodes[a].val.dim(3));
        return mul_scalar(sum_hw(a), inv);
    }

    int mean_sample(int a) {  // [N,...] -> [N], mean over per-sample elements
        const T inv = T(1) / static_cast<T>(nodes[a].val.size() / nodes[a].val.dim(0));
        return mul_scalar(sum_sample(a), inv);
    }

    // Per-sample Euclidean norm: [N,...] -> [N]. eps guards sqrt'(0).
    int l2_per_sample(int a, T eps = T(1e-12)) {
        return sqrt_(add_scalar(sum_sample(mul(a, a)), eps));
    }

    // Instance normalization with learnable affine, built from primitives so
    // that it is differentiable to any order.
    int instance_norm(int x, int gamma, int beta, T eps) {
        require_rank(x, 4, "instance_norm");
        const Shape xshape = nodes[x].val.shape;
        const int H = xshape[2], W = xshape[3];
        int mu = mean_hw(x);
        int xc = sub(x, bcast_hw(mu, H, W));
        int var = mean_hw(mul(xc, xc));
        int istd = recip(sqrt_(add_scalar(var, eps)));
        int xn = mul(xc, bcast_hw(istd, H, W));
        return add(mul(xn, bcast_chan(gamma, xshape)), bcast_chan(beta, xshape));
    }

    int bias_add(int x, int b) {  // [N,C,H,W] + [C]
        return add(x, bcast_chan(b, nodes[x].val.shape));
    }

    // ---- reverse pass ----
    //
    // Emits VJPs as new nodes; gradients returned are node ids and remain
    // differentiable. Nodes that do not influence `out` get exact-zero
    // constant gradients.
    std::vector<int> backward(int out, const std::vector<int>& wrt) {
        if (nodes[static_cast<size_t>(out)].val.size() != 1)
            throw std::invalid_argument("backward: output must be scalar");
        const int n0 = size();
        std::vector<int> gid(static_cast<size_t>(n0), -1);
        if (nodes[static_cast<size_t>(out)].rg) gid[static_cast<size_t>(out)] = scalar_const(T(1));

        for (int id = out; id >= 0; --id) {
            const int g = gid[static_cast<size_t>(id)];
            if (g < 0) continue;
            // Copy payloads: `nodes` may reallocate while emitting VJPs.
            const Op op = nodes[static_cast<size_t>(id)].op;
            const int p0 = nodes[static_cast<size_t>(id)].p0;
            const int p1 = nodes[static_cast<size_t>(id)].p1;
            const T c = nodes[static_cast<size_t>(id)].c;
            const int i0 = nodes[static_cast<size_t>(id)].i0;
            const int i1 = nodes[static_cast<size_t>(id)].i1;
            const ConvGeom geom = nodes[static_cast<size_t>(id)].geom;

            auto want = [&](int p) { return p >= 0 && nodes[static_cast<size_t>(p)].rg; };
            auto accum = [&](int p, int gnew) {
                int& slot = gid[static_cast<size_t>(p)];
                slot = slot < 0 ? gnew : add(slot, gnew);
            };

            switch (op) {
                case Op::Leaf:
                case Op::Const:
                    break;
                case Op::Add:
                    if (want(p0)) accum(p0, g);
                    if (want(p1)) accum(p1, g);
                    break;
                case Op::Sub:
                    if (want(p0)) accum(p0, g);
                    if (want(p1)) accum(p1, mul_scalar(g, T(-1)));
                    break;
                case Op::Mul:
                    if (want(p0)) accum(p0, mul(g, p1));
                    if (want(p1)) accum(p1, mul(g, p0));
                    break;
                case Op::AddScalar:
                    if (want(p0)) accum(p0, g);
                    break;
                case Op::MulScalar:
                    if (want(p0)) accum(p0, mul_scalar(g, c));
                    break;
                case Op::Tanh:
                    if (want(p0)) {
                        int one_minus_y2 = add_scalar(mul_scalar(mul(id, id), T(-1)), T(1));
                        accum(p0, mul(g, one_minus_y2));
                    }
                    break;
                case Op::LRelu:
                case Op::Abs:
                    if (want(p0)) accum(p0, mul(g, constant(nodes[static_cast<size_t>(id)].aux)));
                    break;
                case Op::Sqrt:
                    if (want(p0)) accum(p0, mul_scalar(mul(g, recip(id)), T(0.5)));
                    break;
                case Op::Recip:
                    if (want(p0)) accum(p0, mul_scalar(mul(g, mul(id, id)), T(-1)));
                    break;
                case Op::ConvFwd:
                    if (want(p0)) accum(p0, conv_bwd_input_(g, p1, geom));
                    if (want(p1)) accum(p1, conv_bwd_weight_(p0, g, geom));
                    break;
                case Op::ConvBwdInput:
                    // node = B_in(gy=p0, w=p1); upstream g is x-shaped
                    if (want(p0)) accum(p0, conv_fwd_(g, p1, geom));
                    if (want(p1)) accum(p1, conv_bwd_weight_(g, p0, geom));
                    break;
                case Op::ConvBwdWeight:
                    // node = B_w(x=p0, gy=p1); upstream g is w-shaped
                    if (want(p0)) accum(p0, conv_bwd_input_(p1, g, geom));
                    if (want(p1)) accum(p1, conv_fwd_(p0, g, geom));
                    break;
                case Op::ConcatC: {
                    const int Ca = i0;
                    const int Ct = nodes[static_cast<size_t>(id)].val.dim(1);
                    if (want(p0)) accum(p0, slice_c(g, 0, Ca));
                    if (want(p1)) accum(p1, slice_c(g, Ca, Ct));
                    break;
                }
                case Op::SliceC:
                    if (want(p0)) accum(p0, embed_c(g, i0, nodes[static_cast<size_t>(p0)].val.dim(1)));
                    break;
                case Op::EmbedC:
                    if (want(p0)) accum(p0, slice_c(g, i0, i0 + nodes[static_cast<size_t>(p0)].val.dim(1)));
                    break;
                case Op::BcastChan:
                    if (want(p0)) accum(p0, sum_nhw(g));
                    break;
                case Op::SumNHW:
                    if (want(p0)) accum(p0, bcast_chan(g, nodes[static_cast<size_t>(p0)].val.shape));
                    break;
                case Op::BcastHW:
                    if (want(p0)) accum(p0, sum_hw(g));
                    break;
                case Op::SumHW:
                    if (want(p0)) accum(p0, bcast_hw(g, i0, i1));
                    break;
                case Op::SumSample:
                    if (want(p0)) accum(p0, bcast_sample(g, nodes[static_cast<size_t>(p0)].val.shape));
                    break;
                case Op::BcastSample:
                    if (want(p0)) accum(p0, sum_sample(g));
                    break;
                case Op::SumAll:
                    if (want(p0)) accum(p0, bcast_all(g, nodes[static_cast<size_t>(p0)].val.shape));
                    break;
                case Op::BcastAll:
                    if (want(p0)) accum(p0, sum_all(g));
                    break;
                case Op::MulBS:
                    if (want(p0)) accum(p0, mul_bs(g, p1));
                    if (want(p1)) accum(p1, sum_all(mul(g, p0)));
                    break;
                case Op::Reshape:
                    if (want(p0)) accum(p0, reshape(g, nodes[static_cast<size_t>(p0)].val.shape));
                    break;
            }
        }

        std::vector<int> grads;
        grads.reserve(wrt.size());
        for (int w : wrt) {
            if (w < 0 || w >= n0) throw std::invalid_argument("backward: wrt id out of range");
            int g = gid[static_cast<size_t>(w)];
            if (g < 0) g = constant(Ten(nodes[static_cast<size_t>(w)].val.shape));
            grads.push_back(g);
        }
        return grads;
    }

private:
    int push(Op op, Ten v, int p0, int p1, bool rg_override = false) {
        Node n;
        n.val = std::move(v);
        n.op = op;
        n.p0 = p0;
        n.p1 = p1;
        n.rg = rg_override || (p0 >= 0 && nodes[static_cast<size_t>(p0)].rg) ||
               (p1 >= 0 && nodes[static_cast<size_t>(p1)].rg);
        nodes.push_back(std::move(n));
        return size() - 1;
    }

    void require_same(int a, int b, const char* what) const {
        if (nodes[static_cast<size_t>(a)].val.shape != nodes[static_cast<size_t>(b)].val.shape)
            throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                        shape_str(nodes[static_cast<size_t>(a)].val.shape) + " vs " +
                                        shape_str(nodes[static_cast<size_t>(b)].val.shape));
    }

    void require_rank(int a, int r, const char* what) const {
        if (nodes[static_cast<size_t>(a)].val.rank() != r)
            throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(r));
    }
};

}  // namespace noisegen
