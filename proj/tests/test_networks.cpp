#include <doctest.h>

#include <noisegen/networks.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "gradcheck.hpp"

using namespace noisegen;

namespace {

Tensor random_f32(Shape s, RngStream& rng, double scale = 1.0) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = static_cast<float>(rng.normal() * scale);
    return t;
}

Tensor random_unit(Shape s, RngStream& rng) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = static_cast<float>(rng.uniform());
    return t;
}

// Largest singular value of the [dim(0) x rest] flattening, via Eigen.
template <typename T>
double top_singular_value(const TensorT<T>& w) {
    const int m = w.dim(0);
    const std::int64_t k = w.size() / m;
    Eigen::MatrixXd M(m, k);
    for (int i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < k; ++j)
            M(i, j) = static_cast<double>(w.v[static_cast<std::size_t>(i) * k + j]);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues()(0);
}

struct Row {
    std::string name;
    bool transposed;
    int k, cin, cout, stride;
    int pt, pl, pb, pr;
    LayerNorm norm;
    LayerAct act;
};

void check_rows(const std::vector<ConvSpec>& got, const std::vector<Row>& want) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        const ConvSpec& s = got[i];
        const Row& r = want[i];
        INFO("layer ", r.name);
        CHECK(s.name == r.name);
        CHECK(s.transposed == r.transposed);
        CHECK(s.kh == r.k);
        CHECK(s.kw == r.k);
        CHECK(s.cin == r.cin);
        CHECK(s.cout == r.cout);
        CHECK(s.stride == r.stride);
        CHECK(s.pad_t == r.pt);
        CHECK(s.pad_l == r.pl);
        CHECK(s.pad_b == r.pb);
        CHECK(s.pad_r == r.pr);
        CHECK(to_string(s.norm) == doctest::String(to_string(r.norm)));
        CHECK(to_string(s.act) == doctest::String(to_string(r.act)));
    }
}

template <typename Net>
std::vector<ConvSpec> collect_specs(Net& net) {
    std::vector<ConvSpec> specs;
    visit_layers(net, [&](auto& L) { specs.push_back(L.spec); });
    return specs;
}

template <typename Net>
std::int64_t named_param_count(Net& net, const std::string& prefix) {
    std::int64_t n = 0;
    for_each_tensor(net, [&](const std::string& name, auto& t, bool trainable) {
        if (trainable && name.rfind(prefix, 0) == 0) n += t.size();
    });
    return n;
}

}  // namespace

TEST_CASE("generator layer inventory matches the reference architecture") {
    auto G = make_generator<float>(NetDims::paper(), 7);
    const auto F = LayerNorm::None, SI = LayerNorm::SNIN;
    const auto LR = LayerAct::LRelu, NA = LayerAct::None, TH = LayerAct::Tanh;
    std::vector<Row> want = {
        {"g.enc1", false, 4, 8, 64, 2, 1, 1, 1, 1, F, LR},
        {"g.enc2", false, 4, 64, 128, 2, 1, 1, 1, 1, SI, LR},
        {"g.enc3", false, 4, 128, 256, 2, 1, 1, 1, 1, SI, LR},
        {"g.enc4", false, 4, 256, 512, 2, 1, 1, 1, 1, SI, LR},
        {"g.enc5", false, 4, 512, 512, 2, 1, 1, 1, 1, SI, LR},
        {"g.res1a", false, 3, 512, 512, 1, 1, 1, 1, 1, F, LR},
        {"g.res1b", false, 3, 512, 512, 1, 1, 1, 1, 1, F, NA},
        {"g.res2a", false, 3, 512, 512, 1, 1, 1, 1, 1, F, LR},
        {"g.res2b", false, 3, 512, 512, 1, 1, 1, 1, 1, F, NA},
        {"g.res3a", false, 3, 1024, 1024, 1, 1, 1, 1, 1, F, LR},
        {"g.res3b", false, 3, 1024, 1024, 1, 1, 1, 1, 1, F, NA},
        {"g.res4a", false, 3, 1024, 1024, 1, 1, 1, 1, 1, F, LR},
        {"g.res4b", false, 3, 1024, 1024, 1, 1, 1, 1, 1, F, NA},
        {"g.dec1", true, 4, 1024, 512, 2, 1, 1, 1, 1, SI, LR},
        {"g.dec2", true, 4, 1024, 256, 2, 1, 1, 1, 1, SI, LR},
        {"g.dec3", true, 4, 512, 128, 2, 1, 1, 1, 1, SI, LR},
        {"g.dec4", true, 4, 256, 64, 2, 1, 1, 1, 1, SI, LR},
        {"g.dec5", true, 4, 128, 4, 2, 1, 1, 1, 1, SI, TH},
    };
    check_rows(collect_specs(G), want);

    // Norm/bias bookkeeping: IN layers carry affine params instead of a bias,
    // SN layers persist a power-iteration vector sized to the flattening rows.
    visit_layers(G, [](auto& L) {
        INFO("layer ", L.spec.name);
        if (L.spec.norm == LayerNorm::SNIN) {
            CHECK(L.b.empty());
            CHECK(L.gamma.size() == L.spec.cout);
            CHECK(L.beta.size() == L.spec.cout);
        } else {
            CHECK(L.b.size() == L.spec.cout);
            CHECK(L.gamma.empty());
        }
        if (L.spec.norm == LayerNorm::None) {
            CHECK(L.u.empty());
        } else {
            CHECK(L.u.size() == L.w.dim(0));
            CHECK(L.v.size() == L.w.size() / L.w.dim(0));
        }
    });
}

TEST_CASE("critic and encoder layer inventories match the reference architecture") {
    auto D = make_discriminator<float>(NetDims::paper(), 7);
    auto E = make_encoder<float>(NetDims::paper(), 7);
    const auto F = LayerNorm::None, S = LayerNorm::SN, SI = LayerNorm::SNIN;
    const auto LR = LayerAct::LRelu, NA = LayerAct::None;
    check_rows(collect_specs(D), {
                                     {"d.conv1", false, 4, 8, 64, 2, 1, 1, 1, 1, F, LR},
                                     {"d.conv2", false, 4, 64, 128, 2, 1, 1, 1, 1, SI, LR},
                                     {"d.conv3", false, 4, 128, 256, 2, 1, 1, 1, 1, SI, LR},
                                     {"d.conv4", false, 4, 256, 1, 1, 1, 1, 0, 0, S, NA},
                                 });
    check_rows(collect_specs(E), {
                                     {"e.conv1", false, 7, 4, 64, 1, 3, 3, 3, 3, F, LR},
                                     {"e.conv2", false, 4, 64, 128, 2, 1, 1, 1, 1, SI, LR},
                                     {"e.conv3", false, 4, 128, 256, 2, 1, 1, 1, 1, SI, LR},
                                     {"e.conv4", false, 4, 256, 512, 2, 1, 1, 1, 1, SI, LR},
                                 });
}

TEST_CASE("trainable parameter counts match hand-computed totals") {
    auto G = make_generator<float>(NetDims::paper(), 7);
    auto D = make_discriminator<float>(NetDims::paper(), 7);
    auto E = make_encoder<float>(NetDims::paper(), 7);

    // Single layers, counted by hand from kernel/channel/affine bookkeeping.
    CHECK(named_param_count(G, "g.enc1.") == 8256);    // 64*8*4*4 + 64
    CHECK(named_param_count(G, "g.enc2.") == 131328);  // 128*64*4*4 + 2*128
    CHECK(named_param_count(D, "d.conv1.") == 8256);
    CHECK(named_param_count(D, "d.conv4.") == 4097);  // 1*256*4*4 + 1
    CHECK(named_param_count(E, "e.conv1.") == 12608);  // 64*4*7*7 + 64
    CHECK(named_param_count(G, "g.enc2.gamma") + named_param_count(G, "g.enc2.beta") == 256);

    CHECK(count_trainable_params(G) == 68053704);
    CHECK(count_trainable_params(D) == 668481);
    CHECK(count_trainable_params(E) == 2766912);
}

TEST_CASE("critic receptive field grows to 46 input pixels") {
    auto D = make_discriminator<float>(NetDims::paper(), 7);
    auto stack = critic_stack(D);
    CHECK(receptive_field({stack[3]}) == 4);
    CHECK(receptive_field({stack[2], stack[3]}) == 10);
    CHECK(receptive_field({stack[1], stack[2], stack[3]}) == 22);
    CHECK(receptive_field(stack) == 46);
}

TEST_CASE("forward passes produce the documented shapes at full width") {
    RngStream rng(31);
    auto G = make_generator<float>(NetDims::paper(), 7);
    auto D = make_discriminator<float>(NetDims::paper(), 7);
    auto E = make_encoder<float>(NetDims::paper(), 7);

    const Tensor clean = random_unit(Shape{4, 32, 32}, rng);
    const Tensor init = random_f32(Shape{4, 32, 32}, rng, 0.05);
    std::vector<float> latent(512, 0.0f);

    auto gr = generator_forward(G, clean, init, latent);
    CHECK(gr.final_noise.shape == Shape{4, 32, 32});
    CHECK(gr.residual.shape == Shape{4, 32, 32});

    auto dr = discriminator_forward(D, init, clean);
    CHECK(dr.scores.shape == Shape{1, 2, 2});
    CHECK(dr.features.shape == Shape{256, 4, 4});

    CHECK(encoder_forward(E, clean).size() == 512);
    RngStream rng2(32);
    const Tensor big = random_unit(Shape{4, 64, 64}, rng2);
    CHECK(encoder_forward(E, big).size() == 512);
}

TEST_CASE("fresh generator reproduces its seed noise exactly") {
    // The last layer starts at zero, instance norm maps a zero field to its
    // zero shift, and tanh(0)=0 — so the initial model is exactly the
    // statistical seed-noise model, for any latent.
    RngStream rng(41);
    auto G = make_generator<float>(NetDims::scaled(8), 7);
    const Tensor clean = random_unit(Shape{4, 32, 32}, rng);
    const Tensor init = random_f32(Shape{4, 32, 32}, rng, 0.08);
    std::vector<float> latent(static_cast<std::size_t>(G.dims.latent));
    for (auto& x : latent) x = static_cast<float>(rng.normal());

    auto out = generator_forward(G, clean, init, latent);
    for (auto r : out.residual.v) CHECK(r == 0.0f);
    CHECK(out.final_noise.v == init.v);

    auto Gp = make_generator<float>(NetDims::paper(), 7);
    std::vector<float> lat512(512, 0.7f);
    auto outp = generator_forward(Gp, clean, init, lat512);
    CHECK(outp.final_noise.v == init.v);
}

TEST_CASE("randomized generator bounds residuals and keeps the difference identity") {
    RngStream rng(43);
    auto G = make_generator<float>(NetDims::scaled(8), 7);
    for (auto& x : G.dec[4].w.v) x = static_cast<float>(rng.normal() * 0.5);
    for (auto& x : G.dec[4].beta.v) x = static_cast<float>(rng.normal());

    const Tensor clean = random_unit(Shape{4, 32, 32}, rng);
    const Tensor init = random_f32(Shape{4, 32, 32}, rng, 0.08);
    std::vector<float> latent(static_cast<std::size_t>(G.dims.latent));
    for (auto& x : latent) x = static_cast<float>(rng.normal());

    auto out = generator_forward(G, clean, init, latent);
    double max_abs = 0.0;
    for (auto r : out.residual.v) max_abs = std::max(max_abs, std::abs(static_cast<double>(r)));
    CHECK(max_abs > 0.0);  // the perturbed net actually does something
    CHECK(max_abs < 1.0);
    CHECK(max_abs <= 0.5 + 1e-6);  // tanh residual lands in data units as tanh/2
    for (std::size_t i = 0; i < init.v.size(); ++i)
        CHECK(out.final_noise.v[i] - init.v[i] == out.residual.v[i]);
}

TEST_CASE("encoder collapses zero input to the zero latent at any size") {
    auto E = make_encoder<float>(NetDims::paper(), 7);
    for (int side : {32, 64}) {
        const Tensor black(Shape{4, side, side}, 0.5f);  // maps to 0 in net units
        auto lat = encoder_forward(E, black);
        REQUIRE(lat.size() == 512);
        for (auto x : lat) CHECK(x == 0.0f);
    }
}

TEST_CASE("spectral_normalize rescales the top singular value to one") {
    SUBCASE("diagonal matrix") {
        Tensor w(Shape{3, 3});
        w.at2(0, 0) = 5.0f;
        w.at2(1, 1) = 1.0f;
        w.at2(2, 2) = 0.5f;
        auto out = spectral_normalize(w);
        CHECK(top_singular_value(out) == doctest::Approx(1.0).epsilon(0.01));
        CHECK(out.at2(0, 0) == doctest::Approx(1.0).epsilon(0.01));
        CHECK(out.at2(1, 1) == doctest::Approx(0.2).epsilon(0.01));
    }
    SUBCASE("rotation matrix is already normalized") {
        const float c = std::cos(0.7f), s = std::sin(0.7f);
        Tensor w(Shape{2, 2});
        w.at2(0, 0) = c;
        w.at2(0, 1) = -s;
        w.at2(1, 0) = s;
        w.at2(1, 1) = c;
        auto out = spectral_normalize(w);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(out.v[i] == doctest::Approx(w.v[i]).epsilon(0.01));
    }
    SUBCASE("zero weight passes through") {
        Tensor w(Shape{4, 4});
        auto out = spectral_normalize(w);
        CHECK(out.v == w.v);
    }
    SUBCASE("random conv weight, SVD oracle") {
        RngStream rng(55);
        const Tensor w = random_f32(Shape{6, 5, 3, 3}, rng);
        auto out = spectral_normalize(w, 60);
        CHECK(top_singular_value(out) == doctest::Approx(1.0).epsilon(0.01));
    }
    SUBCASE("rank-1 tensors are rejected") {
        Tensor w(Shape{5}, 1.0f);
        CHECK_THROWS_AS(spectral_normalize(w), std::invalid_argument);
    }
}

TEST_CASE("spectrally normalized layers ignore weight rescaling") {
    RngStream rng(61);
    ConvSpec spec;
    spec.name = "t.sn";
    spec.kh = spec.kw = 3;
    spec.cin = 5;
    spec.cout = 6;
    spec.stride = 1;
    spec.norm = LayerNorm::SN;
    spec.act = LayerAct::None;
    auto L = make_conv<float>(spec, rng);
    for (auto& b : L.b.v) b = static_cast<float>(rng.normal());
    const Tensor x = random_f32(Shape{2, 5, 8, 8}, rng);

    auto run = [&]() {
        Graph<float> g;
        BuildCtx<float> ctx{g};
        return g.val(conv_layer(ctx, L, g.constant(x)));
    };
    const Tensor y1 = run();
    for (auto& wv : L.w.v) wv *= 2.0f;
    const Tensor y2 = run();
    REQUIRE(y1.shape == y2.shape);
    for (std::size_t i = 0; i < y1.v.size(); ++i)
        CHECK(y2.v[i] == doctest::Approx(y1.v[i]).epsilon(2e-5));
}

TEST_CASE("power iteration converges to the SVD scale") {
    RngStream rng(62);
    ConvSpec spec;
    spec.name = "t.sn";
    spec.kh = spec.kw = 3;
    spec.cin = 5;
    spec.cout = 6;
    spec.stride = 1;
    spec.norm = LayerNorm::SN;
    spec.act = LayerAct::None;
    auto L = make_conv<float>(spec, rng);
    for (int i = 0; i < 80; ++i) sn_refresh(L);

    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int what = sn_weight_node(ctx, L);
    const Tensor weff = g.val(what);
    const double sigma = top_singular_value(L.w);
    REQUIRE(sigma > 0.0);
    for (std::size_t i = 0; i < weff.v.size(); ++i)
        CHECK(weff.v[i] ==
              doctest::Approx(L.w.v[i] / static_cast<float>(sigma)).epsilon(1e-3));
}

TEST_CASE("in-graph weight normalization gradients match finite differences") {
    RngStream rng(63);
    const DTensor x0 = gradcheck::random_tensor(Shape{1, 2, 6, 6}, rng);
    DTensor w0 = gradcheck::random_tensor(Shape{3, 2, 3, 3}, rng, 0.3);
    DTensor K = gradcheck::random_tensor(Shape{3, 2, 3, 3}, rng, 0.2);
    {  // keep the denominator safely away from zero
        double s0 = 0;
        for (std::size_t i = 0; i < w0.v.size(); ++i) s0 += w0.v[i] * K.v[i];
        const double want = 1.7;
        for (auto& kv : K.v) kv *= want / s0;
    }

    auto loss_and_grads = [&](const std::vector<DTensor>& in,
                              std::vector<DTensor>* an) -> double {
        Graph<double> g;
        const int w = g.leaf(in[0]);
        const int x = g.leaf(in[1]);
        const int sigma = g.sum_all(g.mul(w, g.constant(K)));
        const int weff = g.mul_bs(w, g.recip(sigma));
        const ConvGeom geom{6, 6, 3, 3, 1, 1, 1, 1, 1};
        const int loss = g.sum_all(g.tanh_(g.conv_fwd_(x, weff, geom)));
        if (an) {
            auto gs = g.backward(loss, {w, x});
            an->clear();
            for (int gi : gs) an->push_back(g.val(gi));
        }
        return g.val(loss)[0];
    };
    auto res = gradcheck::check_gradients(loss_and_grads, {w0, x0}, 30, 99);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("network inputs are validated") {
    auto dims = NetDims::scaled(8);
    auto G = make_generator<float>(dims, 7);
    auto D = make_discriminator<float>(dims, 7);
    auto E = make_encoder<float>(dims, 7);
    RngStream rng(71);

    const Tensor ok32 = random_unit(Shape{4, 32, 32}, rng);
    std::vector<float> lat(static_cast<std::size_t>(dims.latent), 0.0f);

    // Generator wants multiples of 32 and a latent of the right length.
    const Tensor bad16 = random_unit(Shape{4, 16, 16}, rng);
    CHECK_THROWS_AS(generator_forward(G, bad16, bad16, lat), std::invalid_argument);
    std::vector<float> lat_short(3, 0.0f);
    CHECK_THROWS_AS(generator_forward(G, ok32, ok32, lat_short), std::invalid_argument);
    const Tensor mismatched = random_unit(Shape{4, 64, 64}, rng);
    CHECK_THROWS_AS(generator_forward(G, ok32, mismatched, lat), std::invalid_argument);

    // Critic needs at least 3 score positions per axis; encoder at least 8px.
    CHECK_THROWS_AS(discriminator_forward(D, bad16, bad16), std::invalid_argument);
    const Tensor tiny = random_unit(Shape{4, 4, 4}, rng);
    CHECK_THROWS_AS(encoder_forward(E, tiny), std::invalid_argument);

    // Channel counts are pinned by the spec table.
    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int three_ch = g.constant(random_unit(Shape{1, 3, 32, 32}, rng));
    CHECK_THROWS_AS(enc_forward(ctx, E, three_ch), std::invalid_argument);

    NetDims bad = NetDims::paper();
    bad.latent = 100;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    NetDims bad2 = NetDims::paper();
    bad2.d_ch = {64};
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}

TEST_CASE("narrowed profiles keep the structure intact") {
    const NetDims dims = NetDims::scaled(4);
    CHECK(dims.g_enc == std::vector<int>{16, 32, 64, 128, 128});
    CHECK(dims.d_ch == std::vector<int>{16, 32, 64});
    CHECK(dims.e_ch == std::vector<int>{16, 32, 64, 128});
    CHECK(dims.latent == 128);
    dims.validate();

    RngStream rng(81);
    auto G = make_generator<float>(dims, 7);
    auto D = make_discriminator<float>(dims, 7);
    auto E = make_encoder<float>(dims, 7);
    const Tensor clean = random_unit(Shape{4, 32, 32}, rng);
    const Tensor init = random_f32(Shape{4, 32, 32}, rng, 0.05);
    std::vector<float> lat(128, 0.1f);
    auto gr = generator_forward(G, clean, init, lat);
    CHECK(gr.final_noise.shape == Shape{4, 32, 32});
    auto dr = discriminator_forward(D, init, clean);
    CHECK(dr.scores.shape == Shape{1, 2, 2});
    CHECK(dr.features.shape == Shape{64, 4, 4});
    CHECK(encoder_forward(E, clean).size() == 128);

    // Same ratios, same layer inventory, just narrower.
    auto specs = collect_specs(G);
    CHECK(specs.size() == 18);
    CHECK(specs[0].cin == 8);
    CHECK(specs.back().cout == 4);
}

TEST_CASE("parameters bind once per graph and freeze without a binder") {
    RngStream rng(91);
    const NetDims dims = NetDims::scaled(8);
    auto D = make_discriminator<float>(dims, 7);
    const Tensor a = random_f32(Shape{1, 4, 32, 32}, rng, 0.1);
    const Tensor b = random_unit(Shape{1, 4, 32, 32}, rng);

    {  // bound: leaves, one entry per distinct tensor even across two forwards
        Graph<float> g;
        ParamBind<float> bind;
        BuildCtx<float> ctx{g, &bind};
        auto o1 = disc_forward(ctx, D, g.constant(a), g.constant(b));
        auto o2 = disc_forward(ctx, D, g.constant(b), g.constant(a));
        (void)o1;
        (void)o2;
        // d1: w+b, d2/d3: w+gamma+beta, d4: w+b
        CHECK(bind.entries.size() == 10);
        for (auto& [t, node] : bind.entries) CHECK(g.requires_grad(node));
    }
    {  // unbound: constants, gradients cannot flow into the network
        Graph<float> g;
        BuildCtx<float> ctx{g};
        auto out = disc_forward(ctx, D, g.constant(a), g.constant(b));
        (void)out;
        CHECK(ctx.cache.size() == 10);
        for (auto& [ptr, node] : ctx.cache) CHECK_FALSE(g.requires_grad(node));
    }
}

TEST_CASE("domain maps place data where the networks expect it") {
    Graph<float> g;
    const int img = g.constant(Tensor(Shape{1, 1, 1, 1}, 0.25f));
    CHECK(g.val(to_net_image(g, img))[0] == doctest::Approx(-0.5).epsilon(1e-6));
    const int noise = g.constant(Tensor(Shape{1, 1, 1, 1}, 0.1f));
    CHECK(g.val(to_net_noise(g, noise))[0] == doctest::Approx(0.2).epsilon(1e-6));
}
