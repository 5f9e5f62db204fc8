#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace noisegen {

// The three nets share one building block: a (possibly transposed) conv with
// optional spectral norm, optional instance norm, and a fixed activation.
// Convention: a conv followed by instance norm carries no bias (the IN shift
// makes it redundant); all other convs have one.

enum class LayerNorm { None, SN, SNIN, IN };
enum class LayerAct { None, LRelu, Tanh, Relu };

inline const char* to_string(LayerNorm n) {
    switch (n) {
        case LayerNorm::None: return "-";
        case LayerNorm::SN: return "SN";
        case LayerNorm::IN: return "IN";
        default: return "SN-IN";
    }
}
inline const char* to_string(LayerAct a) {
    switch (a) {
        case LayerAct::None: return "-";
        case LayerAct::LRelu: return "LReLU";
        case LayerAct::Tanh: return "Tanh";
        default: return "ReLU";
    }
}

inline constexpr double kLReluSlope = 0.2;
inline constexpr double kInEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct ConvSpec {
    std::string name;
    bool transposed = false;  // transposed convs upsample by `stride`
    int kh = 4, kw = 4;
    int cin = 0, cout = 0;
    int stride = 2;
    int pad_t = 1, pad_l = 1, pad_b = 1, pad_r = 1;
    LayerNorm norm = LayerNorm::SNIN;
    LayerAct act = LayerAct::LRelu;
};

template <typename T>
struct ConvLayerT {
    ConvSpec spec;
    TensorT<T> w;            // plain: [cout,cin,kh,kw]; transposed: [cin,cout,kh,kw]
    TensorT<T> b;            // [cout] unless followed by IN
    TensorT<T> gamma, beta;  // IN affine, [cout]
    TensorT<T> u, v;         // spectral-norm power-iteration pair over the
                             // [dim(0) x rest] flattening; advanced only by
                             // sn_refresh so every forward between refreshes
                             // sees one fixed, differentiable weight function
};

// ---- spectral normalization -------------------------------------------------

namespace sndetail {

// One power-iteration step on the [m x k] flattening of w; returns the
// current spectral-norm estimate sigma = ||W v|| and leaves v in `v_out`.
template <typename T>
double power_step(const TensorT<T>& w, std::vector<double>& u, std::vector<double>* v_out) {
    const int m = w.dim(0);
    const std::size_t k = w.v.size() / static_cast<std::size_t>(m);
    std::vector<double> v(k, 0.0);
    for (int i = 0; i < m; ++i) {
        const double ui = u[static_cast<std::size_t>(i)];
        const T* row = w.data() + static_cast<std::size_t>(i) * k;
        for (std::size_t j = 0; j < k; ++j) v[j] += ui * static_cast<double>(row[j]);
    }
    double vn2 = 0;
    for (double x : v) vn2 += x * x;
    if (vn2 <= 0.0) {
        if (v_out) v_out->assign(k, 0.0);
        return 0.0;
    }
    const double vinv = 1.0 / std::sqrt(vn2);
    for (double& x : v) x *= vinv;
    std::vector<double> wu(static_cast<std::size_t>(m), 0.0);
    double un2 = 0;
    for (int i = 0; i < m; ++i) {
        const T* row = w.data() + static_cast<std::size_t>(i) * k;
        double acc = 0;
        for (std::size_t j = 0; j < k; ++j) acc += static_cast<double>(row[j]) * v[j];
        wu[static_cast<std::size_t>(i)] = acc;
        un2 += acc * acc;
    }
    const double sigma = std::sqrt(un2);
    if (sigma > 0.0) {
        const double uinv = 1.0 / sigma;
        for (int i = 0; i < m; ++i) u[static_cast<std::size_t>(i)] = wu[static_cast<std::size_t>(i)] * uinv;
    }
    if (v_out) *v_out = std::move(v);
    return sigma;
}

}  // namespace sndetail

// Reset v = normalize(W^T u) for the stored u (zero when W^T u is zero, which
// flags sigma = 0 and makes the weight pass through unnormalized).
template <typename T>
void sn_set_v_from_u(ConvLayerT<T>& L) {
    const int m = L.w.dim(0);
    const std::size_t k = L.w.v.size() / static_cast<std::size_t>(m);
    std::vector<double> v(k, 0.0);
    for (int i = 0; i < m; ++i) {
        const double ui = static_cast<double>(L.u.v[static_cast<std::size_t>(i)]);
        const T* row = L.w.data() + static_cast<std::size_t>(i) * k;
        for (std::size_t j = 0; j < k; ++j) v[j] += ui * static_cast<double>(row[j]);
    }
    double n2 = 0;
    for (double x : v) n2 += x * x;
    const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
    for (std::size_t j = 0; j < k; ++j) L.v.v[j] = static_cast<T>(v[j] * inv);
}

// Advance the persisted power-iteration pair by one step (call once per
// training step, outside any graph, so forwards within a step all see the
// same fixed normalization).
template <typename T>
void sn_refresh(ConvLayerT<T>& L) {
    if (L.spec.norm == LayerNorm::None || L.u.empty()) return;
    std::vector<double> u(L.u.v.begin(), L.u.v.end());
    std::vector<double> v;
    sndetail::power_step(L.w, u, &v);
    for (std::size_t i = 0; i < u.size(); ++i) L.u.v[i] = static_cast<T>(u[i]);
    for (std::size_t j = 0; j < v.size(); ++j) L.v.v[j] = static_cast<T>(v[j]);
}

template <typename T>
ConvLayerT<T> make_conv(ConvSpec spec, RngStream& rng, bool zero_weights = false) {
    ConvLayerT<T> L;
    L.spec = spec;
    const Shape wshape = spec.transposed ? Shape{spec.cin, spec.cout, spec.kh, spec.kw}
                                         : Shape{spec.cout, spec.cin, spec.kh, spec.kw};
    L.w = TensorT<T>(wshape);
    if (!zero_weights)
        for (auto& x : L.w.v) x = static_cast<T>(rng.normal() * kInitStd);
    if (spec.norm == LayerNorm::SNIN || spec.norm == LayerNorm::IN) {
        L.gamma = TensorT<T>(Shape{spec.cout}, T(1));
        L.beta = TensorT<T>(Shape{spec.cout}, T(0));
    } else {
        L.b = TensorT<T>(Shape{spec.cout}, T(0));
    }
    if (spec.norm == LayerNorm::SN || spec.norm == LayerNorm::SNIN) {
        L.u = TensorT<T>(Shape{wshape[0]});
        double norm2 = 0;
        for (auto& x : L.u.v) {
            x = static_cast<T>(rng.normal());
            norm2 += static_cast<double>(x) * x;
        }
        const T inv = static_cast<T>(1.0 / std::sqrt(std::max(norm2, 1e-300)));
        for (auto& x : L.u.v) x *= inv;
        L.v = TensorT<T>(Shape{static_cast<int>(L.w.size() / wshape[0])});
        sn_set_v_from_u(L);
    }
    return L;
}

// Standalone operator: weight rescaled so its largest singular value is ~1,
// estimated by `iters` power iterations from a seeded start. Zero weights
// pass through unchanged.
template <typename T>
TensorT<T> spectral_normalize(const TensorT<T>& w, int iters = 5, std::uint64_t seed = 71) {
    if (w.empty() || w.rank() < 2) throw std::invalid_argument("spectral_normalize: need rank >= 2");
    RngStream rng(seed);
    std::vector<double> u(static_cast<std::size_t>(w.dim(0)));
    double n2 = 0;
    for (auto& x : u) {
        x = rng.normal();
        n2 += x * x;
    }
    for (auto& x : u) x /= std::sqrt(n2);
    double sigma = 0;
    for (int i = 0; i < iters; ++i) sigma = sndetail::power_step(w, u, nullptr);
    TensorT<T> out = w;
    if (sigma > 0.0)
        for (auto& x : out.v) x = static_cast<T>(static_cast<double>(x) / sigma);
    return out;
}

// ---- graph construction -----------------------------------------------------

// Per-graph context. `bind` decides how parameters enter the graph: bound
// parameters become Leaf nodes (trainable, gradient targets), unbound ones
// become Const nodes (frozen — e.g. D inside the generator step, so L_FM and
// L_Adv structurally contribute zero gradient to D). Each tensor enters a
// given graph once; repeated uses share the node so fan-in accumulates.
template <typename T>
struct ParamBind {
    std::vector<std::pair<TensorT<T>*, int>> entries;
};

template <typename T>
struct BuildCtx {
    Graph<T>& g;
    ParamBind<T>* bind = nullptr;
    std::map<const void*, int> cache;

    int param(TensorT<T>& t) {
        auto it = cache.find(&t);
        if (it != cache.end()) return it->second;
        int id;
        if (bind) {
            id = g.leaf(t);
            bind->entries.push_back({&t, id});
        } else {
            id = g.constant(t);
        }
        cache.emplace(&t, id);
        return id;
    }
};

// Domain maps between data units and the network's [-1,1] domain. Images
// (clean or noisy) map x -> 2x-1; noise maps n -> 2n (zero stays zero);
// generated residuals map back with the inverse noise map r -> r/2.
template <typename T>
int to_net_image(Graph<T>& g, int x) {
    return g.add_scalar(g.mul_scalar(x, T(2)), T(-1));
}
template <typename T>
int to_net_noise(Graph<T>& g, int n) {
    return g.mul_scalar(n, T(2));
}

template <typename T>
int sn_weight_node(BuildCtx<T>& ctx, ConvLayerT<T>& L) {
    Graph<T>& g = ctx.g;
    const int wnode = ctx.param(L.w);
    if (L.spec.norm == LayerNorm::None || L.spec.norm == LayerNorm::IN) return wnode;

    // sigma = u^T W v with the stored power-iteration pair held constant
    // in-graph; only the division by sigma is differentiable, in W. Probe
    // sigma first: a zero estimate (zero-initialized weight) passes through.
    const int m = L.w.dim(0);
    const std::size_t k = L.w.v.size() / static_cast<std::size_t>(m);
    double sigma_probe = 0.0;
    TensorT<T> outer(L.w.shape);
    for (int i = 0; i < m; ++i) {
        const double ui = static_cast<double>(L.u.v[static_cast<std::size_t>(i)]);
        const T* wrow = L.w.data() + static_cast<std::size_t>(i) * k;
        T* orow = outer.data() + static_cast<std::size_t>(i) * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double vj = static_cast<double>(L.v.v[j]);
            orow[j] = static_cast<T>(ui * vj);
            sigma_probe += ui * vj * static_cast<double>(wrow[j]);
        }
    }
    if (sigma_probe <= 0.0) return wnode;
    const int sigma = g.sum_all(g.mul(wnode, g.constant(std::move(outer))));
    return g.mul_bs(wnode, g.recip(sigma));
}

template <typename T>
int conv_layer(BuildCtx<T>& ctx, ConvLayerT<T>& L, int x) {
    Graph<T>& g = ctx.g;
    const ConvSpec& s = L.spec;
    const Shape xs = g.val(x).shape;  // copy: graph growth invalidates node refs
    if (xs.size() != 4)
        throw std::invalid_argument(s.name + ": expected [N,C,H,W] input, got " + shape_str(xs));
    if (xs[1] != s.cin)
        throw std::invalid_argument(s.name + ": expected " + std::to_string(s.cin) +
                                    " input channels, got " + std::to_string(xs[1]));
    const int w = sn_weight_node(ctx, L);
    ConvGeom geom;
    if (s.transposed)
        geom = ConvGeom{xs[2] * s.stride, xs[3] * s.stride, s.kh, s.kw,
                        s.stride,         s.pad_t,          s.pad_l, s.pad_b, s.pad_r};
    else
        geom = ConvGeom{xs[2], xs[3], s.kh, s.kw, s.stride, s.pad_t, s.pad_l, s.pad_b, s.pad_r};
    int y = s.transposed ? g.conv_bwd_input_(x, w, geom) : g.conv_fwd_(x, w, geom);
    if (s.norm == LayerNorm::SNIN || s.norm == LayerNorm::IN)
        y = g.instance_norm(y, ctx.param(L.gamma), ctx.param(L.beta), static_cast<T>(kInEps));
    else
        y = g.bias_add(y, ctx.param(L.b));
    switch (s.act) {
        case LayerAct::LRelu: return g.lrelu(y, static_cast<T>(kLReluSlope));
        case LayerAct::Tanh: return g.tanh_(y);
        case LayerAct::Relu: return g.relu(y);
        case LayerAct::None: return y;
    }
    return y;
}

// ---- network dimensions ------------------------------------------------------

struct NetDims {
    std::vector<int> g_enc{64, 128, 256, 512, 512};
    int latent = 512;
    std::vector<int> d_ch{64, 128, 256};
    std::vector<int> e_ch{64, 128, 256, 512};

    void validate() const {
        if (g_enc.size() != 5 || d_ch.size() != 3 || e_ch.size() != 4)
            throw std::invalid_argument("NetDims: wrong channel-list lengths");
        for (int c : g_enc)
            if (c <= 0) throw std::invalid_argument("NetDims: non-positive generator width");
        for (int c : d_ch)
            if (c <= 0) throw std::invalid_argument("NetDims: non-positive critic width");
        for (int c : e_ch)
            if (c <= 0) throw std::invalid_argument("NetDims: non-positive encoder width");
        if (latent != e_ch.back())
            throw std::invalid_argument("NetDims: latent size must equal the last encoder width");
    }

    static NetDims paper() { return NetDims{}; }

    // Uniformly narrowed profile for CPU-scale runs; structure is unchanged.
    static NetDims scaled(int divisor) {
        NetDims d;
        auto shrink = [divisor](std::vector<int>& v) {
            for (int& c : v) c = std::max(2, c / divisor);
        };
        shrink(d.g_enc);
        shrink(d.d_ch);
        shrink(d.e_ch);
        d.latent = d.e_ch.back();
        return d;
    }
};

// ---- the three networks -------------------------------------------------------

template <typename T>
struct ResBlockT {
    ConvLayerT<T> a, b;  // conv-LReLU-conv with an additive skip across the block
};

template <typename T>
struct GeneratorT {
    NetDims dims;
    std::array<ConvLayerT<T>, 5> enc;
    std::array<ResBlockT<T>, 4> res;
    std::array<ConvLayerT<T>, 5> dec;
};

template <typename T>
struct DiscriminatorT {
    NetDims dims;
    std::array<ConvLayerT<T>, 4> d;
};

template <typename T>
struct EncoderT {
    NetDims dims;
    std::array<ConvLayerT<T>, 4> e;
};

using Generator = GeneratorT<float>;
using Discriminator = DiscriminatorT<float>;
using Encoder = EncoderT<float>;

namespace netdetail {

inline ConvSpec c4(std::string name, int cin, int cout, LayerNorm norm, LayerAct act) {
    ConvSpec s;
    s.name = std::move(name);
    s.cin = cin;
    s.cout = cout;
    s.norm = norm;
    s.act = act;
    return s;  // 4x4, stride 2, pad 1
}

inline ConvSpec t4(std::string name, int cin, int cout, LayerNorm norm, LayerAct act) {
    ConvSpec s = c4(std::move(name), cin, cout, norm, act);
    s.transposed = true;
    return s;
}

inline ConvSpec r3(std::string name, int cin, int cout, LayerAct act) {
    ConvSpec s;
    s.name = std::move(name);
    s.kh = s.kw = 3;
    s.cin = cin;
    s.cout = cout;
    s.stride = 1;
    s.norm = LayerNorm::None;
    s.act = act;
    return s;  // 3x3, stride 1, pad 1
}

}  // namespace netdetail

template <typename T>
GeneratorT<T> make_generator(const NetDims& dims, std::uint64_t seed) {
    using namespace netdetail;
    dims.validate();
    RngStream rng = derive_stream(seed, "init/generator");
    const auto& gc = dims.g_enc;
    GeneratorT<T> G;
    G.dims = dims;
    G.enc[0] = make_conv<T>(c4("g.enc1", 8, gc[0], LayerNorm::None, LayerAct::LRelu), rng);
    for (int i = 1; i < 5; ++i)
        G.enc[i] = make_conv<T>(
            c4("g.enc" + std::to_string(i + 1), gc[i - 1], gc[i], LayerNorm::SNIN, LayerAct::LRelu),
            rng);
    const int bott = gc[4];
    const int wide = bott + dims.latent;  // after latent concatenation
    const int res_w[4] = {bott, bott, wide, wide};
    for (int i = 0; i < 4; ++i) {
        const std::string nm = "g.res" + std::to_string(i + 1);
        G.res[i].a = make_conv<T>(r3(nm + "a", res_w[i], res_w[i], LayerAct::LRelu), rng);
        G.res[i].b = make_conv<T>(r3(nm + "b", res_w[i], res_w[i], LayerAct::None), rng);
    }
    // Decoder inputs concatenate the previous output with the mirrored encoder tap.
    G.dec[0] = make_conv<T>(t4("g.dec1", wide, gc[3], LayerNorm::SNIN, LayerAct::LRelu), rng);
    G.dec[1] = make_conv<T>(t4("g.dec2", gc[3] + gc[3], gc[2], LayerNorm::SNIN, LayerAct::LRelu), rng);
    G.dec[2] = make_conv<T>(t4("g.dec3", gc[2] + gc[2], gc[1], LayerNorm::SNIN, LayerAct::LRelu), rng);
    G.dec[3] = make_conv<T>(t4("g.dec4", gc[1] + gc[1], gc[0], LayerNorm::SNIN, LayerAct::LRelu), rng);
    // Final layer zero-initialized: the generator starts as the identity over
    // the seed noise (residual 0), i.e. exactly the statistical noise model.
    G.dec[4] = make_conv<T>(t4("g.dec5", gc[0] + gc[0], 4, LayerNorm::SNIN, LayerAct::Tanh), rng,
                            /*zero_weights=*/true);
    return G;
}

template <typename T>
DiscriminatorT<T> make_discriminator(const NetDims& dims, std::uint64_t seed) {
    using namespace netdetail;
    dims.validate();
    RngStream rng = derive_stream(seed, "init/discriminator");
    const auto& dc = dims.d_ch;
    DiscriminatorT<T> D;
    D.dims = dims;
    D.d[0] = make_conv<T>(c4("d.conv1", 8, dc[0], LayerNorm::None, LayerAct::LRelu), rng);
    D.d[1] = make_conv<T>(c4("d.conv2", dc[0], dc[1], LayerNorm::SNIN, LayerAct::LRelu), rng);
    D.d[2] = make_conv<T>(c4("d.conv3", dc[1], dc[2], LayerNorm::SNIN, LayerAct::LRelu), rng);
    // Score head: stride 1, padding only on the leading edges, no output
    // activation. Spectral norm only — instance-normalizing a per-sample score
    // map would erase the per-sample mean score the Wasserstein objective and
    // gradient penalty depend on.
    ConvSpec s4 = c4("d.conv4", dc[2], 1, LayerNorm::SN, LayerAct::None);
    s4.stride = 1;
    s4.pad_b = 0;
    s4.pad_r = 0;
    D.d[3] = make_conv<T>(s4, rng);
    return D;
}

template <typename T>
EncoderT<T> make_encoder(const NetDims& dims, std::uint64_t seed) {
    using namespace netdetail;
    dims.validate();
    RngStream rng = derive_stream(seed, "init/encoder");
    const auto& ec = dims.e_ch;
    EncoderT<T> E;
    E.dims = dims;
    ConvSpec s1;
    s1.name = "e.conv1";
    s1.kh = s1.kw = 7;
    s1.cin = 4;
    s1.cout = ec[0];
    s1.stride = 1;
    s1.pad_t = s1.pad_l = s1.pad_b = s1.pad_r = 3;
    s1.norm = LayerNorm::None;
    s1.act = LayerAct::LRelu;
    E.e[0] = make_conv<T>(s1, rng);
    for (int i = 1; i < 4; ++i)
        E.e[i] = make_conv<T>(
            c4("e.conv" + std::to_string(i + 1), ec[i - 1], ec[i], LayerNorm::SNIN, LayerAct::LRelu),
            rng);
    return E;
}

// ---- parameter traversal ------------------------------------------------------

// Visits every tensor with a stable name; `trainable=false` marks persisted
// buffers (spectral-norm u vectors) that checkpoints carry but optimizers skip.
template <typename T, typename Fn>
void for_each_tensor(ConvLayerT<T>& L, Fn&& fn) {
    fn(L.spec.name + ".w", L.w, true);
    if (!L.b.empty()) fn(L.spec.name + ".b", L.b, true);
    if (!L.gamma.empty()) {
        fn(L.spec.name + ".gamma", L.gamma, true);
        fn(L.spec.name + ".beta", L.beta, true);
    }
    if (!L.u.empty()) {
        fn(L.spec.name + ".u", L.u, false);
        fn(L.spec.name + ".v", L.v, false);
    }
}

template <typename T, typename Fn>
void for_each_tensor(GeneratorT<T>& G, Fn&& fn) {
    for (auto& l : G.enc) for_each_tensor(l, fn);
    for (auto& r : G.res) {
        for_each_tensor(r.a, fn);
        for_each_tensor(r.b, fn);
    }
    for (auto& l : G.dec) for_each_tensor(l, fn);
}

template <typename T, typename Fn>
void for_each_tensor(DiscriminatorT<T>& D, Fn&& fn) {
    for (auto& l : D.d) for_each_tensor(l, fn);
}

template <typename T, typename Fn>
void for_each_tensor(EncoderT<T>& E, Fn&& fn) {
    for (auto& l : E.e) for_each_tensor(l, fn);
}

template <typename Net>
std::int64_t count_trainable_params(Net& net) {
    std::int64_t n = 0;
    for_each_tensor(net, [&](const std::string&, auto& t, bool trainable) {
        if (trainable) n += t.size();
    });
    return n;
}

template <typename T, typename Fn>
void visit_layers(GeneratorT<T>& G, Fn&& fn) {
    for (auto& l : G.enc) fn(l);
    for (auto& r : G.res) {
        fn(r.a);
        fn(r.b);
    }
    for (auto& l : G.dec) fn(l);
}
template <typename T, typename Fn>
void visit_layers(DiscriminatorT<T>& D, Fn&& fn) {
    for (auto& l : D.d) fn(l);
}
template <typename T, typename Fn>
void visit_layers(EncoderT<T>& E, Fn&& fn) {
    for (auto& l : E.e) fn(l);
}

template <typename Net>
void sn_refresh_all(Net& net) {
    // u-vectors advance once per call; conv weights are untouched.
    visit_layers(net, [](auto& L) { sn_refresh(L); });
}

// Composite receptive field of one output unit of a conv stack.
inline int receptive_field(const std::vector<ConvSpec>& stack) {
    int rf = 1;
    for (auto it = stack.rbegin(); it != stack.rend(); ++it)
        rf = rf * it->stride + (it->kh - it->stride);
    return rf;
}

template <typename T>
std::vector<ConvSpec> critic_stack(const DiscriminatorT<T>& D) {
    return {D.d[0].spec, D.d[1].spec, D.d[2].spec, D.d[3].spec};
}

// ---- forward graphs -----------------------------------------------------------

template <typename T>
int res_block(BuildCtx<T>& ctx, ResBlockT<T>& r, int x) {
    int y = conv_layer(ctx, r.a, x);
    y = conv_layer(ctx, r.b, y);
    return ctx.g.add(x, y);
}

// Generator body in the network domain: inputs are the mapped clean image and
// seed noise [N,4,h,w] plus the latent [N,latent]; output is the Tanh residual
// [N,4,h,w] in network noise units.
template <typename T>
int gen_forward(BuildCtx<T>& ctx, GeneratorT<T>& G, int clean_net, int init_net, int latent) {
    Graph<T>& g = ctx.g;
    const Shape xs = g.val(clean_net).shape;  // copy: graph growth invalidates node refs
    if (xs.size() != 4 || xs[1] != 4)
        throw std::invalid_argument("gen_forward: clean must be [N,4,h,w], got " + shape_str(xs));
    if (g.val(init_net).shape != xs)
        throw std::invalid_argument("gen_forward: clean/init_noise shape mismatch");
    const int h = xs[2], w = xs[3];
    if (h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0)
        throw std::invalid_argument("gen_forward: spatial dims must be positive multiples of 32, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    const Shape ls = g.val(latent).shape;  // copy: graph growth invalidates node refs
    if (ls.size() != 2 || ls[0] != xs[0] || ls[1] != G.dims.latent)
        throw std::invalid_argument("gen_forward: latent must be [N," +
                                    std::to_string(G.dims.latent) + "], got " + shape_str(ls));

    int x = g.concat_c(clean_net, init_net);  // [N,8,h,w]
    std::array<int, 5> taps{};
    for (int i = 0; i < 5; ++i) {
        x = conv_layer(ctx, G.enc[i], x);
        taps[static_cast<std::size_t>(i)] = x;
    }
    x = res_block(ctx, G.res[0], x);
    x = res_block(ctx, G.res[1], x);
    // Latent broadcast over the bottleneck grid, concatenated channelwise.
    int lat = g.reshape(latent, Shape{xs[0], G.dims.latent, 1, 1});
    lat = g.bcast_hw(lat, h / 32, w / 32);
    x = g.concat_c(x, lat);
    x = res_block(ctx, G.res[2], x);
    x = res_block(ctx, G.res[3], x);
    x = conv_layer(ctx, G.dec[0], x);
    x = conv_layer(ctx, G.dec[1], g.concat_c(x, taps[3]));
    x = conv_layer(ctx, G.dec[2], g.concat_c(x, taps[2]));
    x = conv_layer(ctx, G.dec[3], g.concat_c(x, taps[1]));
    x = conv_layer(ctx, G.dec[4], g.concat_c(x, taps[0]));
    return x;
}

template <typename T>
struct DiscOut {
    int scores;    // [N,1,sh,sw], unbounded
    int features;  // [N,d_ch[2],h/8,w/8], the penultimate (D_f) map
};

// Critic in the network domain: noise and clean both [N,4,h,w], conditioned by
// channel concatenation.
template <typename T>
DiscOut<T> disc_forward(BuildCtx<T>& ctx, DiscriminatorT<T>& D, int noise_net, int clean_net) {
    Graph<T>& g = ctx.g;
    const Shape xs = g.val(noise_net).shape;  // copy: graph growth invalidates node refs
    if (xs.size() != 4 || xs[1] != 4)
        throw std::invalid_argument("disc_forward: noise must be [N,4,h,w], got " + shape_str(xs));
    if (g.val(clean_net).shape != xs)
        throw std::invalid_argument("disc_forward: noise/clean shape mismatch");
    if (xs[2] % 8 != 0 || xs[3] % 8 != 0 || xs[2] / 8 < 3 || xs[3] / 8 < 3)
        throw std::invalid_argument("disc_forward: spatial dims must be multiples of 8, >= 24");
    int x = g.concat_c(noise_net, clean_net);
    x = conv_layer(ctx, D.d[0], x);
    x = conv_layer(ctx, D.d[1], x);
    const int feat = conv_layer(ctx, D.d[2], x);
    const int scores = conv_layer(ctx, D.d[3], feat);
    return {scores, feat};
}

// Camera encoder in the network domain: [N,4,h,w] -> [N,latent] via global
// average pooling of the last feature map.
template <typename T>
int enc_forward(BuildCtx<T>& ctx, EncoderT<T>& E, int noisy_net) {
    Graph<T>& g = ctx.g;
    const Shape xs = g.val(noisy_net).shape;  // copy: graph growth invalidates node refs
    if (xs.size() != 4 || xs[1] != 4)
        throw std::invalid_argument("enc_forward: noisy must be [N,4,h,w], got " + shape_str(xs));
    if (xs[2] % 8 != 0 || xs[3] % 8 != 0 || xs[2] < 8 || xs[3] < 8)
        throw std::invalid_argument("enc_forward: spatial dims must be multiples of 8 and >= 8");
    int x = noisy_net;
    for (auto& l : E.e) x = conv_layer(ctx, l, x);
    x = g.mean_hw(x);  // [N,C,1,1]
    return g.reshape(x, Shape{xs[0], E.dims.latent});
}

// ---- data-domain inference wrappers --------------------------------------------

template <typename T>
TensorT<T> batch_of_one(const TensorT<T>& t) {
    TensorT<T> out;
    out.shape = Shape{1};
    out.shape.insert(out.shape.end(), t.shape.begin(), t.shape.end());
    out.v = t.v;
    return out;
}

template <typename T>
TensorT<T> squeeze_batch(const TensorT<T>& t) {
    TensorT<T> out;
    out.shape.assign(t.shape.begin() + 1, t.shape.end());
    out.v = t.v;
    return out;
}

struct GeneratorResult {
    Tensor final_noise;  // data units: init_noise + residual
    Tensor residual;     // data units: exactly final_noise - init_noise
};

// Data-domain generator evaluation on one patch. The residual is defined as
// the difference actually applied, so final - init == residual holds bit-exactly.
inline GeneratorResult generator_forward(GeneratorT<float>& G, const Tensor& clean,
                                         const Tensor& init_noise,
                                         const std::vector<float>& latent) {
    if (clean.shape != init_noise.shape)
        throw std::invalid_argument("generator_forward: clean/init_noise shape mismatch");
    if (static_cast<int>(latent.size()) != G.dims.latent)
        throw std::invalid_argument("generator_forward: latent length " +
                                    std::to_string(latent.size()) + ", expected " +
                                    std::to_string(G.dims.latent));
    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int clean_n = g.constant(batch_of_one(clean));
    const int init_n = g.constant(batch_of_one(init_noise));
    Tensor lat(Shape{1, G.dims.latent});
    lat.v = latent;
    const int res = gen_forward(ctx, G, to_net_image(g, clean_n), to_net_noise(g, init_n),
                                g.constant(std::move(lat)));
    const Tensor res_net = squeeze_batch(g.val(res));
    GeneratorResult out;
    out.final_noise = init_noise;
    out.residual = Tensor(init_noise.shape);
    for (std::size_t i = 0; i < out.final_noise.v.size(); ++i) {
        out.final_noise.v[i] += 0.5f * res_net.v[i];
        out.residual.v[i] = out.final_noise.v[i] - init_noise.v[i];
    }
    return out;
}

struct DiscriminatorResult {
    Tensor scores;    // [1,sh,sw]
    Tensor features;  // [C,h/8,w/8]
};

inline DiscriminatorResult discriminator_forward(DiscriminatorT<float>& D, const Tensor& noise,
                                                 const Tensor& clean) {
    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int noise_n = g.constant(batch_of_one(noise));
    const int clean_n = g.constant(batch_of_one(clean));
    DiscOut<float> out = disc_forward(ctx, D, to_net_noise(g, noise_n), to_net_image(g, clean_n));
    return {squeeze_batch(g.val(out.scores)), squeeze_batch(g.val(out.features))};
}

inline std::vector<float> encoder_forward(EncoderT<float>& E, const Tensor& noisy) {
    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int noisy_n = g.constant(batch_of_one(noisy));
    const int lat = enc_forward(ctx, E, to_net_image(g, noisy_n));
    return g.val(lat).v;
}

}  // namespace noisegen
