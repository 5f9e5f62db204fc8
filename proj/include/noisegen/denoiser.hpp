// 9-layer residual denoiser (predicts noise; output = noisy - prediction) and
// its training harness over interchangeable noise sources: flat Gaussian,
// shot/read model, a trained generative model, real pairs, or a deterministic
// 5:1 synthetic/real mixture. Evaluation reports PSNR/SSIM per camera.
#pragma once

#include <noisegen/training.hpp>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace noisegen {

enum class DenoiseRegime { Gaussian, PoissonGaussian, LearnedModel, RealOnly, LearnedPlusReal };

inline const char* to_string(DenoiseRegime r) {
    switch (r) {
        case DenoiseRegime::Gaussian: return "gaussian";
        case DenoiseRegime::PoissonGaussian: return "poisson_gaussian";
        case DenoiseRegime::LearnedModel: return "learned_model";
        case DenoiseRegime::RealOnly: return "real_only";
        default: return "learned_plus_real";
    }
}

inline DenoiseRegime parse_denoise_regime(const std::string& s) {
    if (s == "gaussian") return DenoiseRegime::Gaussian;
    if (s == "poisson_gaussian") return DenoiseRegime::PoissonGaussian;
    if (s == "learned_model") return DenoiseRegime::LearnedModel;
    if (s == "real_only") return DenoiseRegime::RealOnly;
    if (s == "learned_plus_real") return DenoiseRegime::LearnedPlusReal;
    throw UsageError("unknown denoiser regime '" + s + "'");
}

// Mixture regime: per 6 consecutive samples, 5 synthetic and 1 real.
inline constexpr int kMixPeriod = 6;

// ---- network ------------------------------------------------------------------

template <typename T>
struct DenoiserT {
    std::array<ConvLayerT<T>, 9> c;
};

using Denoiser = DenoiserT<float>;

// Layer 1: conv+ReLU. Layers 2-8: conv + optional instance norm + ReLU.
// Layer 9: plain conv, zero-initialized, so a fresh denoiser is the identity
// (predicted noise 0). All convs 3x3 stride 1; 4 channels in and out.
template <typename T>
DenoiserT<T> make_denoiser(int hidden_width, bool instance_norm, std::uint64_t seed) {
    if (hidden_width < 1) throw std::invalid_argument("make_denoiser: hidden width must be >= 1");
    RngStream rng = derive_stream(seed, "init/denoiser");
    const LayerNorm hidden = instance_norm ? LayerNorm::IN : LayerNorm::None;
    DenoiserT<T> N;
    N.c[0] = make_conv<T>(netdetail::r3("dn.conv1", 4, hidden_width, LayerAct::Relu), rng);
    for (int i = 1; i < 8; ++i) {
        ConvSpec s = netdetail::r3("dn.conv" + std::to_string(i + 1), hidden_width, hidden_width,
                                   LayerAct::Relu);
        s.norm = hidden;
        N.c[static_cast<std::size_t>(i)] = make_conv<T>(s, rng);
    }
    N.c[8] = make_conv<T>(netdetail::r3("dn.conv9", hidden_width, 4, LayerAct::None), rng,
                          /*zero_weights=*/true);
    return N;
}

template <typename T, typename Fn>
void for_each_tensor(DenoiserT<T>& N, Fn&& fn) {
    for (auto& l : N.c) for_each_tensor(l, fn);
}

template <typename T, typename Fn>
void visit_layers(DenoiserT<T>& N, Fn&& fn) {
    for (auto& l : N.c) fn(l);
}

// Predicted noise for a [N,4,h,w] batch, in the same (data) units as the
// input; no domain remapping is applied anywhere in the denoiser.
template <typename T>
int den_forward(BuildCtx<T>& ctx, DenoiserT<T>& N, int noisy) {
    const Shape xs = ctx.g.val(noisy).shape;  // copy: graph growth invalidates node refs
    if (xs.size() != 4 || xs[1] != 4)
        throw std::invalid_argument("den_forward: expected [N,4,h,w], got " + shape_str(xs));
    int x = noisy;
    for (auto& l : N.c) x = conv_layer(ctx, l, x);
    return x;
}

// Residual subtraction on one [4,h,w] patch or a [N,4,h,w] batch.
template <typename T>
TensorT<T> denoise(DenoiserT<T>& N, const TensorT<T>& noisy) {
    const bool single = noisy.rank() == 3;
    if (!single && noisy.rank() != 4)
        throw std::invalid_argument("denoise: expected [4,h,w] or [N,4,h,w], got " +
                                    shape_str(noisy.shape));
    TensorT<T> batch = noisy;
    if (single) batch.shape = Shape{1, noisy.shape[0], noisy.shape[1], noisy.shape[2]};
    Graph<T> g;
    BuildCtx<T> ctx{g};
    const int in = g.constant(batch);
    const int out = g.sub(in, den_forward(ctx, N, in));
    TensorT<T> res = g.val(out);
    if (single) res.shape = noisy.shape;
    return res;
}

// ---- training configuration ----------------------------------------------------

struct DenoiserConfig {
    DenoiseRegime regime = DenoiseRegime::PoissonGaussian;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 16;
    int steps = 400;
    int hidden_width = 64;
    bool instance_norm = true;    // hidden layers; false keeps the net strictly convolutional
    double gaussian_sigma = 0.0;  // gaussian regime; <= 0 derives a level-matched sigma
    std::string camera;           // train on one camera's pairs; empty pools all cameras
    std::uint64_t seed = 1;

    void validate() const {
        if (!(lr > 0.0)) throw UsageError("denoiser config: lr must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw UsageError("denoiser config: betas must lie in [0,1)");
        if (batch_size < 1) throw UsageError("denoiser config: batch_size must be >= 1");
        if (steps < 1) throw UsageError("denoiser config: steps must be >= 1");
        if (hidden_width < 1) throw UsageError("denoiser config: hidden_width must be >= 1");
    }

    json to_json() const {
        return json{{"regime", to_string(regime)},
                    {"lr", lr},
                    {"beta1", beta1},
                    {"beta2", beta2},
                    {"batch_size", batch_size},
                    {"steps", steps},
                    {"hidden_width", hidden_width},
                    {"instance_norm", instance_norm},
                    {"gaussian_sigma", gaussian_sigma},
                    {"camera", camera},
                    {"seed", seed}};
    }

    static DenoiserConfig from_json(const json& j) {
        DenoiserConfig c;
        for (const auto& [key, val] : j.items()) {
            try {
                if (key == "regime") c.regime = parse_denoise_regime(val.get<std::string>());
                else if (key == "lr") c.lr = val.get<double>();
                else if (key == "beta1") c.beta1 = val.get<double>();
                else if (key == "beta2") c.beta2 = val.get<double>();
                else if (key == "batch_size") c.batch_size = val.get<int>();
                else if (key == "steps") c.steps = val.get<int>();
                else if (key == "hidden_width") c.hidden_width = val.get<int>();
                else if (key == "instance_norm") c.instance_norm = val.get<bool>();
                else if (key == "gaussian_sigma") c.gaussian_sigma = val.get<double>();
                else if (key == "camera") c.camera = val.get<std::string>();
                else if (key == "seed") c.seed = val.get<std::uint64_t>();
                else throw UsageError("denoiser config: unknown key '" + key + "'");
            } catch (const json::exception& e) {
                throw UsageError("denoiser config: bad value for '" + key + "': " + e.what());
            }
        }
        c.validate();
        return c;
    }

    std::string hash() const { return config_hash_of(to_json()); }
};

inline constexpr const char* kDenoiserCheckpointKind = "denoiser";

inline void save_denoiser_checkpoint(const std::filesystem::path& path, const DenoiserConfig& cfg,
                                     Denoiser& net) {
    Checkpoint ck;
    ck.kind = kDenoiserCheckpointKind;
    ck.config_hash = cfg.hash();
    ck.strings["config"] = cfg.to_json().dump();
    store_net_tensors(ck, net);
    save_checkpoint(path, ck);
}

struct DenoiserLoad {
    DenoiserConfig cfg;
    Denoiser net;
};

inline DenoiserLoad load_denoiser_checkpoint(const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != kDenoiserCheckpointKind)
        throw IoError("checkpoint kind '" + ck.kind + "' is not a denoiser");
    DenoiserLoad out;
    try {
        out.cfg = DenoiserConfig::from_json(json::parse(ck.strings.at("config")));
    } catch (const std::out_of_range&) {
        throw IoError("denoiser checkpoint is missing its embedded config");
    } catch (const json::exception& e) {
        throw IoError(std::string("denoiser checkpoint config is corrupt: ") + e.what());
    }
    out.net = make_denoiser<float>(out.cfg.hidden_width, out.cfg.instance_norm, out.cfg.seed);
    restore_net_tensors(ck, out.net);
    return out;
}

// ---- training -------------------------------------------------------------------

struct DenoiserTrainState {
    DenoiserConfig cfg;
    Denoiser net;
    Adam<float> opt;
    RngStream rng_sample;  // pair and anchor choice
    RngStream rng_noise;   // synthetic noise draws; regimes without synthesis never touch it
    std::vector<std::size_t> pool;    // train pairs, restricted to cfg.camera when set
    std::int64_t sample_counter = 0;  // drives the deterministic 5:1 interleave
    double matched_sigma = 0.0;       // gaussian regime fallback when no sigma is configured
    std::optional<TrainState> noise_model;
    std::map<std::size_t, std::vector<float>> latent_cache;  // anchor pair -> latent
};

namespace dndetail {

inline bool regime_uses_model(DenoiseRegime r) {
    return r == DenoiseRegime::LearnedModel || r == DenoiseRegime::LearnedPlusReal;
}

inline bool regime_synthesizes(DenoiseRegime r) { return r != DenoiseRegime::RealOnly; }

}  // namespace dndetail

inline DenoiserTrainState make_denoiser_state(const DenoiserConfig& cfg, const Dataset& ds,
                                              const std::filesystem::path& model_checkpoint = {}) {
    cfg.validate();
    if (dndetail::regime_uses_model(cfg.regime) && model_checkpoint.empty())
        throw UsageError(std::string("regime '") + to_string(cfg.regime) +
                         "' needs a trained noise-model checkpoint");
    if (!dndetail::regime_uses_model(cfg.regime) && !model_checkpoint.empty())
        throw UsageError(std::string("regime '") + to_string(cfg.regime) +
                         "' does not take a noise-model checkpoint");
    DenoiserTrainState st{cfg,
                          make_denoiser<float>(cfg.hidden_width, cfg.instance_norm, cfg.seed),
                          Adam<float>(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8}),
                          derive_stream(cfg.seed, "denoiser/sample"),
                          derive_stream(cfg.seed, "denoiser/noise")};
    for (std::size_t i : ds.train_indices())
        if (cfg.camera.empty() || ds.manifest().pairs[i].camera == cfg.camera)
            st.pool.push_back(i);
    if (st.pool.empty())
        throw UsageError(cfg.camera.empty()
                             ? std::string("denoiser training: no train pairs")
                             : "denoiser training: no train pairs for camera '" + cfg.camera + "'");
    if (dndetail::regime_uses_model(cfg.regime))
        st.noise_model = state_from_checkpoint(load_checkpoint(model_checkpoint));
    if (cfg.regime == DenoiseRegime::Gaussian) {
        if (cfg.gaussian_sigma > 0.0) {
            st.matched_sigma = cfg.gaussian_sigma;
        } else {
            std::vector<std::pair<double, NoiseLevelFunction>> obs;
            for (std::size_t i : st.pool) {
                const PatchPair p = ds.load(i);
                double mu = 0.0;
                for (float v : p.clean.v) mu += v;
                obs.emplace_back(mu / static_cast<double>(p.clean.v.size()), p.nlf);
            }
            st.matched_sigma = level_matched_sigma(obs);
        }
    }
    return st;
}

struct DenoiserSample {
    Tensor clean, noisy;
    std::size_t pair_index = 0;
    bool real = false;
};

// One training sample under the configured regime. Synthetic regimes draw
// fresh noise every call (the synthetic supply is unbounded); the mixture
// regime replaces every 6th sample with the real capture.
inline DenoiserSample next_denoiser_sample(DenoiserTrainState& st, const Dataset& ds) {
    const std::vector<std::size_t>& pool = st.pool;
    const std::size_t i = pool[static_cast<std::size_t>(st.rng_sample.below(
        static_cast<std::int64_t>(pool.size())))];
    const bool real = st.cfg.regime == DenoiseRegime::RealOnly ||
                      (st.cfg.regime == DenoiseRegime::LearnedPlusReal &&
                       st.sample_counter % kMixPeriod == kMixPeriod - 1);
    ++st.sample_counter;

    PatchPair p = ds.load(i);
    DenoiserSample out;
    out.pair_index = i;
    out.real = real;
    out.clean = std::move(p.clean);
    if (real) {
        out.noisy = std::move(p.noisy);
        return out;
    }

    Tensor noise;
    switch (st.cfg.regime) {
        case DenoiseRegime::Gaussian:
            noise = sample_init_noise(out.clean, p.nlf,
                                      {InitNoiseMode::Gaussian, st.matched_sigma}, st.rng_noise);
            break;
        case DenoiseRegime::PoissonGaussian:
            noise = sample_init_noise(out.clean, p.nlf, {InitNoiseMode::PoissonGaussian, 0.0},
                                      st.rng_noise);
            break;
        default: {  // LearnedModel / LearnedPlusReal synthetic draw
            TrainState& nm = *st.noise_model;
            const Tensor init =
                sample_init_noise(out.clean, p.nlf, nm.cfg.init_noise, st.rng_noise);
            std::vector<float> latent(static_cast<std::size_t>(nm.G.dims.latent), 0.0f);
            if (nm.cfg.use_encoder) {
                // anchor: random same-camera training capture, latents cached
                std::size_t a = i;
                for (int tries = 0; tries < 1000; ++tries) {
                    const std::size_t cand = pool[static_cast<std::size_t>(st.rng_sample.below(
                        static_cast<std::int64_t>(pool.size())))];
                    if (ds.manifest().pairs[cand].camera == ds.manifest().pairs[i].camera) {
                        a = cand;
                        break;
                    }
                }
                auto it = st.latent_cache.find(a);
                if (it == st.latent_cache.end()) {
                    const PatchPair ap = ds.load(a);
                    it = st.latent_cache.emplace(a, encoder_forward(nm.E, ap.noisy)).first;
                }
                latent = it->second;
            }
            noise = generator_forward(nm.G, out.clean, init, latent).final_noise;
        }
    }
    out.noisy = Tensor(out.clean.shape);
    for (std::size_t e = 0; e < out.noisy.v.size(); ++e)
        out.noisy.v[e] = out.clean.v[e] + noise.v[e];
    return out;
}

struct DenoiserBatch {
    Tensor noisy, clean;  // [N,4,h,w]
    int real_count = 0;
};

inline DenoiserBatch assemble_denoiser_batch(DenoiserTrainState& st, const Dataset& ds, int n) {
    if (n < 1) throw std::invalid_argument("assemble_denoiser_batch: n must be >= 1");
    std::vector<DenoiserSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) samples.push_back(next_denoiser_sample(st, ds));
    const Shape ps = samples.front().clean.shape;
    DenoiserBatch b;
    b.noisy = Tensor(Shape{n, ps[0], ps[1], ps[2]});
    b.clean = Tensor(Shape{n, ps[0], ps[1], ps[2]});
    const std::size_t stride = samples.front().clean.v.size();
    for (int k = 0; k < n; ++k) {
        const auto& s = samples[static_cast<std::size_t>(k)];
        std::copy(s.noisy.v.begin(), s.noisy.v.end(),
                  b.noisy.v.begin() + static_cast<std::ptrdiff_t>(stride * k));
        std::copy(s.clean.v.begin(), s.clean.v.end(),
                  b.clean.v.begin() + static_cast<std::ptrdiff_t>(stride * k));
        b.real_count += s.real ? 1 : 0;
    }
    return b;
}

// One optimizer step of the L2 noise-residual objective; returns the loss.
inline double denoiser_train_step(DenoiserTrainState& st, const Dataset& ds) {
    const DenoiserBatch b = assemble_denoiser_batch(st, ds, st.cfg.batch_size);
    Tensor target(b.noisy.shape);
    for (std::size_t e = 0; e < target.v.size(); ++e) target.v[e] = b.noisy.v[e] - b.clean.v[e];

    Graph<float> g;
    ParamBind<float> bind;
    BuildCtx<float> ctx{g, &bind};
    const int pred = den_forward(ctx, st.net, g.constant(b.noisy));
    const int diff = g.sub(pred, g.constant(target));
    const int loss = g.mean_all(g.mul(diff, diff));
    const double value = static_cast<double>(g.val(loss).v[0]);

    std::map<const void*, std::string> names;
    traindetail::collect_names(st.net, names);
    traindetail::apply_bound_gradients(g, bind, loss, names, st.opt);
    return value;
}

struct DenoiserTrainResult {
    Denoiser net;
    std::vector<double> losses;  // one entry per optimizer step
};

inline DenoiserTrainResult train_denoiser(const DenoiserConfig& cfg, const Dataset& ds,
                                          const std::filesystem::path& model_checkpoint = {}) {
    DenoiserTrainState st = make_denoiser_state(cfg, ds, model_checkpoint);
    DenoiserTrainResult res;
    res.losses.reserve(static_cast<std::size_t>(cfg.steps));
    for (int s = 0; s < cfg.steps; ++s) {
        const double l = denoiser_train_step(st, ds);
        if (!std::isfinite(l))
            throw ComputeError("denoiser training: non-finite loss at step " + std::to_string(s));
        res.losses.push_back(l);
    }
    res.net = std::move(st.net);
    return res;
}

// ---- evaluation -----------------------------------------------------------------

struct DenoiseScore {
    double psnr = 0.0;
    double ssim = 0.0;
    int n_patches = 0;
};

struct DenoiserEval {
    std::map<std::string, DenoiseScore> per_camera;
    DenoiseScore overall;
};

// `denoise_fn(pair) -> denoised patch` is scored against the clean reference;
// PSNR keeps the +inf sentinel for exact reconstructions.
template <typename Fn>
DenoiserEval eval_denoiser_with(const Dataset& ds, const std::vector<std::size_t>& indices,
                                Fn&& denoise_fn) {
    if (indices.empty()) throw std::invalid_argument("eval_denoiser: no evaluation pairs");
    DenoiserEval ev;
    for (std::size_t i : indices) {
        const PatchPair p = ds.load(i);
        const Tensor denoised = denoise_fn(p);
        const double ps = psnr(denoised, p.clean);
        const double ss = ssim(denoised, p.clean);
        DenoiseScore& cam = ev.per_camera[p.camera];
        cam.psnr += ps;
        cam.ssim += ss;
        ++cam.n_patches;
        ev.overall.psnr += ps;
        ev.overall.ssim += ss;
        ++ev.overall.n_patches;
    }
    for (auto& [_, sc] : ev.per_camera) {
        sc.psnr /= sc.n_patches;
        sc.ssim /= sc.n_patches;
    }
    ev.overall.psnr /= ev.overall.n_patches;
    ev.overall.ssim /= ev.overall.n_patches;
    return ev;
}

inline DenoiserEval eval_denoiser(Denoiser& net, const Dataset& ds,
                                  const std::vector<std::size_t>& indices) {
    return eval_denoiser_with(ds, indices,
                              [&](const PatchPair& p) { return denoise(net, p.noisy); });
}

// One row per (model, camera) plus a pooled "*" row per model.
inline void write_denoiser_csv(const std::filesystem::path& path,
                               const std::map<std::string, DenoiserEval>& by_model) {
    std::string csv = "model,camera,psnr,ssim,n_patches\n";
    for (const auto& [model, ev] : by_model) {
        for (const auto& [cam, sc] : ev.per_camera)
            csv += model + "," + cam + "," + fmt_g9(sc.psnr) + "," + fmt_g9(sc.ssim) + "," +
                   std::to_string(sc.n_patches) + "\n";
        csv += model + ",*," + fmt_g9(ev.overall.psnr) + "," + fmt_g9(ev.overall.ssim) + "," +
               std::to_string(ev.overall.n_patches) + "\n";
    }
    write_text_atomic(path, csv);
}

}  // namespace noisegen
