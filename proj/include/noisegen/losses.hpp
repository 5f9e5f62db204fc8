#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "networks.hpp"

namespace noisegen {

struct LossWeights {
    double lambda_gp = 10.0;
    double lambda_fm = 1.0;
    double lambda_triplet = 0.5;
    double margin_alpha = 0.2;

    void validate() const {
        if (lambda_gp < 0 || lambda_fm < 0 || lambda_triplet < 0 || margin_alpha < 0)
            throw std::invalid_argument("LossWeights: weights must be non-negative");
    }
};

// Reduction over feature elements inside the L1 feature-matching distance.
// The batch dimension is always averaged; `Sum` totals the per-sample
// element-wise differences (the default convention the weights were tuned
// against), `Mean` averages them.
enum class FmReduction { Sum, Mean };

inline const char* to_string(FmReduction r) { return r == FmReduction::Sum ? "sum" : "mean"; }
inline FmReduction parse_fm_reduction(const std::string& s) {
    if (s == "sum") return FmReduction::Sum;
    if (s == "mean") return FmReduction::Mean;
    throw std::invalid_argument("unknown fm reduction '" + s + "' (want sum|mean)");
}

// ---- in-graph builders ----------------------------------------------------
// All builders take and return node ids; callers choose what is a leaf and
// what is frozen. Scores/features/latents are batched: scores [N,1,sh,sw],
// features [N,C,fh,fw], latents [N,L].

// Generator side of the adversarial pair: drive patch scores up, i.e.
// minimize their negated mean over every patch of every sample.
template <typename T>
int adv_loss_g_node(Graph<T>& g, int scores_fake) {
    if (g.val(scores_fake).size() == 0)
        throw std::invalid_argument("adv_loss_g: empty score map");
    return g.mul_scalar(g.mean_all(scores_fake), T(-1));
}

// Critic objective: mean fake score - mean real score + weighted penalty.
template <typename T>
int critic_loss_node(Graph<T>& g, int scores_fake, int scores_real, int gp, T lambda_gp) {
    const int margin = g.sub(g.mean_all(scores_fake), g.mean_all(scores_real));
    return g.add(margin, g.mul_scalar(gp, lambda_gp));
}

// Penalty core: given the interpolate leaf and any scalar-reducible score
// node built on it, returns E_batch[(||d(sum scores)/d(nhat)||_2 - 1)^2].
// Summing scores keeps per-sample gradients independent, so each sample's
// norm sees only its own score patches. No epsilon inside the square root:
// a constant critic must yield exactly 1.
template <typename T>
int gradient_penalty_core(Graph<T>& g, int nhat_leaf, int scores) {
    if (!g.requires_grad(nhat_leaf))
        throw ComputeError("gradient_penalty: interpolate must be a differentiable leaf");
    const int total = g.sum_all(scores);
    const int grad = g.backward(total, {nhat_leaf})[0];
    const int norms = g.l2_per_sample(grad, T(0));
    const int off = g.add_scalar(norms, T(-1));
    return g.mean_all(g.mul(off, off));
}

template <typename T>
struct GpBuild {
    int nhat;     // the interpolate leaf, in critic input units
    int penalty;  // scalar node
};

// Full penalty against a real critic. `fake_net`/`real_net` are batched noise
// tensors already in network units; `clean_net_node` is the conditioning
// image node. Draws one uniform per batch element, in batch order.
template <typename T>
GpBuild<T> gradient_penalty_node(BuildCtx<T>& ctx, DiscriminatorT<T>& D, const TensorT<T>& fake_net,
                                 const TensorT<T>& real_net, int clean_net_node, RngStream& rng) {
    if (fake_net.shape != real_net.shape)
        throw std::invalid_argument("gradient_penalty: fake/real shape mismatch");
    if (fake_net.rank() != 4)
        throw std::invalid_argument("gradient_penalty: want batched [N,4,h,w] noise");
    TensorT<T> nhat(fake_net.shape);
    const int n = fake_net.dim(0);
    const std::int64_t per = fake_net.size() / n;
    for (int i = 0; i < n; ++i) {
        const T u = static_cast<T>(rng.uniform());
        const std::int64_t base = static_cast<std::int64_t>(i) * per;
        for (std::int64_t j = 0; j < per; ++j)
            nhat[base + j] = u * real_net[base + j] + (T(1) - u) * fake_net[base + j];
    }
    Graph<T>& g = ctx.g;
    const int nhat_leaf = g.leaf(std::move(nhat));
    auto out = disc_forward(ctx, D, nhat_leaf, clean_net_node);
    return {nhat_leaf, gradient_penalty_core(g, nhat_leaf, out.scores)};
}

// L1 feature match between two critic feature maps, batch-averaged.
template <typename T>
int feature_matching_node(Graph<T>& g, int feat_fake, int feat_ref, FmReduction red) {
    if (g.val(feat_fake).shape != g.val(feat_ref).shape)
        throw std::invalid_argument("feature_matching: feature shape mismatch");
    const int ad = g.abs_(g.sub(feat_fake, feat_ref));
    if (red == FmReduction::Mean) return g.mean_all(ad);
    return g.mean_all(g.sum_sample(ad));
}

// Margin ranking over latent triplets: batch mean of
// max(0, ||a-p|| - ||a-n|| + alpha). Distances are unsquared Euclidean.
template <typename T>
int triplet_loss_node(Graph<T>& g, int anchor, int positive, int negative, T alpha) {
    const Shape as = g.val(anchor).shape;
    if (as != g.val(positive).shape || as != g.val(negative).shape)
        throw std::invalid_argument("triplet_loss: latent shape mismatch");
    if (as.size() != 2) throw std::invalid_argument("triplet_loss: want [N,L] latents");
    const int dp = g.l2_per_sample(g.sub(anchor, positive));
    const int dn = g.l2_per_sample(g.sub(anchor, negative));
    const int m = g.add_scalar(g.sub(dp, dn), alpha);
    return g.mean_all(g.relu(m));
}

template <typename T>
int full_generator_loss_node(Graph<T>& g, int adv, int fm, int triplet, const LossWeights& w) {
    w.validate();
    int out = adv;
    if (fm >= 0) out = g.add(out, g.mul_scalar(fm, static_cast<T>(w.lambda_fm)));
    if (triplet >= 0) out = g.add(out, g.mul_scalar(triplet, static_cast<T>(w.lambda_triplet)));
    return out;
}

// ---- data-domain wrappers ---------------------------------------------------
// Thin shims over the graph builders, for tests and reporting. Training uses
// the builders directly; these define the canonical data-unit conventions.

template <typename T>
double adv_loss_g(const TensorT<T>& scores_fake) {
    Graph<T> g;
    return static_cast<double>(g.val(adv_loss_g_node(g, g.constant(scores_fake)))[0]);
}

template <typename T>
double critic_loss(const TensorT<T>& scores_fake, const TensorT<T>& scores_real, double gp,
                   double lambda_gp) {
    Graph<T> g;
    const int node = critic_loss_node(g, g.constant(scores_fake), g.constant(scores_real),
                                      g.scalar_const(static_cast<T>(gp)), static_cast<T>(lambda_gp));
    return static_cast<double>(g.val(node)[0]);
}

// Batched noise and clean are in data units; the interpolate is built in the
// units the critic consumes.
template <typename T>
double gradient_penalty(DiscriminatorT<T>& D, const TensorT<T>& fake_noise,
                        const TensorT<T>& real_noise, const TensorT<T>& clean, RngStream& rng) {
    if (clean.shape != fake_noise.shape)
        throw std::invalid_argument("gradient_penalty: clean/noise shape mismatch");
    Graph<T> g;
    BuildCtx<T> ctx{g};
    auto scale2 = [](const TensorT<T>& t) {
        TensorT<T> out = t;
        for (auto& x : out.v) x *= T(2);
        return out;
    };
    const int clean_net = to_net_image(g, g.constant(clean));
    auto built = gradient_penalty_node(ctx, D, scale2(fake_noise), scale2(real_noise), clean_net, rng);
    return static_cast<double>(g.val(built.penalty)[0]);
}

// Matches generated-noise features against the clean image's own features.
// Both probes pass through the critic's noise slot with the same mapping, so
// fake == clean gives exactly zero.
template <typename T>
double feature_matching_loss(DiscriminatorT<T>& D, const TensorT<T>& fake_noise,
                             const TensorT<T>& clean, FmReduction red = FmReduction::Sum) {
    if (clean.shape != fake_noise.shape)
        throw std::invalid_argument("feature_matching: clean/noise shape mismatch");
    if (fake_noise.rank() != 4)
        throw std::invalid_argument("feature_matching: want batched [N,4,h,w] tensors");
    Graph<T> g;
    BuildCtx<T> ctx{g};
    const int clean_img = to_net_image(g, g.constant(clean));
    const int fake_slot = to_net_noise(g, g.constant(fake_noise));
    const int ref_slot = to_net_noise(g, g.constant(clean));
    auto f_fake = disc_forward(ctx, D, fake_slot, clean_img);
    auto f_ref = disc_forward(ctx, D, ref_slot, clean_img);
    const int node = feature_matching_node(g, f_fake.features, f_ref.features, red);
    return static_cast<double>(g.val(node)[0]);
}

template <typename T>
double triplet_loss(const TensorT<T>& anchor, const TensorT<T>& positive, const TensorT<T>& negative,
                    double alpha) {
    Graph<T> g;
    const int node = triplet_loss_node(g, g.constant(anchor), g.constant(positive),
                                       g.constant(negative), static_cast<T>(alpha));
    return static_cast<double>(g.val(node)[0]);
}

inline double full_generator_loss(double adv, double fm, double triplet, const LossWeights& w) {
    w.validate();
    return adv + w.lambda_fm * fm + w.lambda_triplet * triplet;
}

}  // namespace noisegen
