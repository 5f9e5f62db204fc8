#pragma once
// Noise-distribution KL metrics, latent-cluster separation, and image
// quality measures (PSNR/SSIM) used to score trained noise models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "init_noise.hpp"
#include "networks.hpp"

namespace noisegen {

// ---------------------------------------------------------------------------
// Histogram KL divergence
// ---------------------------------------------------------------------------

struct KLConfig {
    int bin_count = 201;
    double range_min = -0.5;
    double range_max = 0.5;
    double smoothing_epsilon = 1e-12;

    void validate() const {
        if (bin_count < 2) throw std::invalid_argument("KLConfig: bin_count must be >= 2");
        if (!(range_min < range_max))
            throw std::invalid_argument("KLConfig: range_min must be < range_max");
        if (!(smoothing_epsilon > 0.0))
            throw std::invalid_argument("KLConfig: smoothing_epsilon must be positive");
    }
};

struct KLResult {
    double kl = 0.0;
    // Largest fraction (over the two sample sets) of values outside the
    // histogram range; such values are clipped into the edge bins.
    double out_of_range_fraction = 0.0;
    bool out_of_range_warning = false;  // fraction > 5%
};

namespace evdetail {

// Normalized, epsilon-smoothed histogram. Out-of-range samples land in the
// nearest edge bin and are counted in *oor.
inline std::vector<double> smoothed_histogram(const float* x, std::size_t n, const KLConfig& cfg,
                                              std::size_t* oor) {
    const int bins = cfg.bin_count;
    const double width = (cfg.range_max - cfg.range_min) / bins;
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    std::size_t outside = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x[i]);
        if (!std::isfinite(v))
            throw std::invalid_argument("histogram_kl: sample set contains non-finite values");
        if (v < cfg.range_min || v > cfg.range_max) ++outside;
        int b = static_cast<int>(std::floor((v - cfg.range_min) / width));
        b = std::clamp(b, 0, bins - 1);
        h[static_cast<std::size_t>(b)] += 1.0;
    }
    double total = 0.0;
    for (double& c : h) {
        c = c / static_cast<double>(n) + cfg.smoothing_epsilon;
        total += c;
    }
    for (double& c : h) c /= total;
    if (oor) *oor = outside;
    return h;
}

}  // namespace evdetail

inline KLResult histogram_kl(const float* real, std::size_t n_real, const float* synth,
                             std::size_t n_synth, const KLConfig& cfg = {}) {
    cfg.validate();
    if (n_real == 0 || n_synth == 0)
        throw std::invalid_argument("histogram_kl: sample sets must be non-empty");
    std::size_t oor_r = 0, oor_s = 0;
    const std::vector<double> p = evdetail::smoothed_histogram(real, n_real, cfg, &oor_r);
    const std::vector<double> q = evdetail::smoothed_histogram(synth, n_synth, cfg, &oor_s);
    double kl = 0.0;
    for (std::size_t b = 0; b < p.size(); ++b) kl += p[b] * std::log(p[b] / q[b]);
    KLResult out;
    out.kl = kl;
    out.out_of_range_fraction =
        std::max(static_cast<double>(oor_r) / static_cast<double>(n_real),
                 static_cast<double>(oor_s) / static_cast<double>(n_synth));
    out.out_of_range_warning = out.out_of_range_fraction > 0.05;
    return out;
}

inline KLResult histogram_kl(const std::vector<float>& real, const std::vector<float>& synth,
                             const KLConfig& cfg = {}) {
    return histogram_kl(real.data(), real.size(), synth.data(), synth.size(), cfg);
}

inline KLResult histogram_kl(const Tensor& real, const Tensor& synth, const KLConfig& cfg = {}) {
    return histogram_kl(real.v.data(), real.v.size(), synth.v.data(), synth.v.size(), cfg);
}

// ---------------------------------------------------------------------------
// Per-model KL evaluation over a dataset split
// ---------------------------------------------------------------------------

enum class NoiseModelKind { Learned, PoissonGaussian, Gaussian };

inline const char* to_string(NoiseModelKind k) {
    switch (k) {
        case NoiseModelKind::Learned: return "learned";
        case NoiseModelKind::PoissonGaussian: return "poisson_gaussian";
        default: return "gaussian";
    }
}

inline NoiseModelKind parse_noise_model_kind(const std::string& s) {
    if (s == "learned") return NoiseModelKind::Learned;
    if (s == "poisson_gaussian") return NoiseModelKind::PoissonGaussian;
    if (s == "gaussian") return NoiseModelKind::Gaussian;
    throw std::invalid_argument("unknown noise model '" + s +
                                "' (expected learned, poisson_gaussian, or gaussian)");
}

// Binds one noise source for evaluation: the trained generator (optionally
// conditioned through the encoder) or one of the statistical baselines.
struct NoiseSynthesizer {
    NoiseModelKind kind = NoiseModelKind::PoissonGaussian;
    Generator* gen = nullptr;  // Learned
    Encoder* enc = nullptr;    // Learned; null -> zero latent
    InitNoiseConfig init_noise;      // seed noise (Learned, PoissonGaussian)
    double gaussian_sigma = 0.0;     // Gaussian baseline; <= 0 -> level-matched to the split
    // Learned + enc only: "" draws anchors from the patch's own camera,
    // otherwise from the named camera (cross-camera consistency probe).
    std::string anchor_camera;
};

struct KlGroup {
    std::string camera, scene;
    double kl_mean = 0.0;
    double kl_std = 0.0;
    int n_patches = 0;
};

struct ModelKlResult {
    double mean_kl = 0.0;
    double std_kl = 0.0;
    int n_patches = 0;
    bool out_of_range_warning = false;
    std::map<std::string, double> per_camera;
    std::vector<KlGroup> groups;  // per (camera, scene), in first-seen order
};

namespace evdetail {

struct Welford {
    double sum = 0.0, sumsq = 0.0;
    int n = 0;
    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    double mean() const { return n ? sum / n : 0.0; }
    double stddev() const {
        if (n == 0) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, sumsq / n - m * m));
    }
};

}  // namespace evdetail

inline ModelKlResult model_kl_eval(const NoiseSynthesizer& model, const Dataset& ds,
                                   const std::vector<std::size_t>& indices, const KLConfig& cfg,
                                   std::uint64_t seed) {
    cfg.validate();
    if (indices.empty()) throw std::invalid_argument("model_kl_eval: empty evaluation split");
    if (model.kind == NoiseModelKind::Learned && !model.gen)
        throw std::invalid_argument("model_kl_eval: learned model requires a generator");

    RngStream rng = derive_stream(seed, "eval/kl");

    // Flat-Gaussian sigma matched to the split's average shot+read power.
    double sigma = model.gaussian_sigma;
    if (model.kind == NoiseModelKind::Gaussian && !(sigma > 0.0)) {
        std::vector<std::pair<double, NoiseLevelFunction>> obs;
        obs.reserve(indices.size());
        for (std::size_t i : indices) {
            const PatchPair p = ds.load(i);
            double mu = 0.0;
            for (float v : p.clean.v) mu += v;
            obs.emplace_back(mu / static_cast<double>(p.clean.v.size()), p.nlf);
        }
        sigma = level_matched_sigma(obs);
    }

    // Anchor pools for encoder conditioning, keyed by camera.
    std::map<std::string, std::vector<std::size_t>> pools;
    const bool use_anchors = model.kind == NoiseModelKind::Learned && model.enc != nullptr;
    if (use_anchors)
        for (std::size_t i : indices) pools[ds.meta(i).camera].push_back(i);
    std::map<std::size_t, std::vector<float>> latent_cache;

    evdetail::Welford overall;
    std::map<std::string, evdetail::Welford> by_camera;
    std::map<std::pair<std::string, std::string>, evdetail::Welford> by_group;
    std::vector<std::pair<std::string, std::string>> group_order;
    bool warn = false;

    for (std::size_t i : indices) {
        const PatchPair pair = ds.load(i);
        Tensor real(pair.clean.shape);
        for (std::size_t e = 0; e < real.v.size(); ++e)
            real.v[e] = pair.noisy.v[e] - pair.clean.v[e];

        Tensor synth;
        switch (model.kind) {
            case NoiseModelKind::PoissonGaussian: {
                InitNoiseConfig pg = model.init_noise;
                pg.mode = InitNoiseMode::PoissonGaussian;
                synth = sample_init_noise(pair.clean, pair.nlf, pg, rng);
                break;
            }
            case NoiseModelKind::Gaussian: {
                InitNoiseConfig flat;
                flat.mode = InitNoiseMode::Gaussian;
                flat.gaussian_sigma = sigma;
                synth = sample_init_noise(pair.clean, pair.nlf, flat, rng);
                break;
            }
            case NoiseModelKind::Learned: {
                const Tensor init = sample_init_noise(pair.clean, pair.nlf, model.init_noise, rng);
                std::vector<float> latent(static_cast<std::size_t>(model.gen->dims.latent), 0.0f);
                if (use_anchors) {
                    const std::string& cam =
                        model.anchor_camera.empty() ? pair.camera : model.anchor_camera;
                    auto pit = pools.find(cam);
                    if (pit == pools.end() || pit->second.empty())
                        throw std::invalid_argument("model_kl_eval: no anchor patches for camera '" +
                                                    cam + "' in the evaluation split");
                    const std::vector<std::size_t>& pool = pit->second;
                    std::size_t a = pool[rng.below(pool.size())];
                    if (pool.size() > 1)
                        while (a == i) a = pool[rng.below(pool.size())];
                    auto cit = latent_cache.find(a);
                    if (cit == latent_cache.end()) {
                        const PatchPair ap = ds.load(a);
                        cit = latent_cache.emplace(a, encoder_forward(*model.enc, ap.noisy)).first;
                    }
                    latent = cit->second;
                }
                synth = generator_forward(*model.gen, pair.clean, init, latent).final_noise;
                break;
            }
        }

        const KLResult r = histogram_kl(real, synth, cfg);
        warn = warn || r.out_of_range_warning;
        overall.add(r.kl);
        by_camera[pair.camera].add(r.kl);
        auto key = std::make_pair(pair.camera, pair.scene);
        if (by_group.find(key) == by_group.end()) group_order.push_back(key);
        by_group[key].add(r.kl);
    }

    ModelKlResult out;
    out.mean_kl = overall.mean();
    out.std_kl = overall.stddev();
    out.n_patches = overall.n;
    out.out_of_range_warning = warn;
    for (const auto& [cam, w] : by_camera) out.per_camera[cam] = w.mean();
    for (const auto& key : group_order) {
        const evdetail::Welford& w = by_group.at(key);
        out.groups.push_back({key.first, key.second, w.mean(), w.stddev(), w.n});
    }
    return out;
}

// CSV rows per (camera, scene) group plus one pooled "*" row.
inline void write_kl_csv(std::ostream& os, const std::string& model, const ModelKlResult& r) {
    os << "model,camera,scene,kl_mean,kl_std,n_patches\n";
    for (const KlGroup& g : r.groups)
        os << model << ',' << g.camera << ',' << g.scene << ',' << fmt_g9(g.kl_mean) << ','
           << fmt_g9(g.kl_std) << ',' << g.n_patches << '\n';
    os << model << ",*,*," << fmt_g9(r.mean_kl) << ',' << fmt_g9(r.std_kl) << ',' << r.n_patches
       << '\n';
}

inline json kl_summary_json(const std::string& model, const ModelKlResult& r) {
    json j;
    j["model"] = model;
    j["mean_kl"] = r.mean_kl;
    j["std_kl"] = r.std_kl;
    j["n_patches"] = r.n_patches;
    j["out_of_range_warning"] = r.out_of_range_warning;
    j["per_camera"] = json::object();
    for (const auto& [cam, kl] : r.per_camera) j["per_camera"][cam] = kl;
    return j;
}

// ---------------------------------------------------------------------------
// Latent-space cluster separation
// ---------------------------------------------------------------------------

// (mean inter-camera centroid distance) / (mean intra-camera point-to-centroid
// distance). Invariant to rotating or translating the latent space.
inline double latent_separation(const std::vector<std::vector<float>>& latents,
                                const std::vector<std::string>& labels) {
    if (latents.size() != labels.size())
        throw std::invalid_argument("latent_separation: latents/labels size mismatch");
    if (latents.empty()) throw std::invalid_argument("latent_separation: empty input");
    const std::size_t dim = latents[0].size();
    for (const auto& v : latents)
        if (v.size() != dim)
            throw std::invalid_argument("latent_separation: inconsistent latent dimensions");

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    if (groups.size() < 2)
        throw std::invalid_argument("latent_separation: need at least 2 cameras");
    for (const auto& [cam, members] : groups)
        if (members.size() < 2)
            throw std::invalid_argument("latent_separation: camera '" + cam +
                                        "' has fewer than 2 latents");

    std::map<std::string, std::vector<double>> centroid;
    for (const auto& [cam, members] : groups) {
        std::vector<double> c(dim, 0.0);
        for (std::size_t i : members)
            for (std::size_t d = 0; d < dim; ++d) c[d] += latents[i][d];
        for (double& x : c) x /= static_cast<double>(members.size());
        centroid[cam] = std::move(c);
    }

    double intra = 0.0;
    for (const auto& [cam, members] : groups) {
        const std::vector<double>& c = centroid[cam];
        for (std::size_t i : members) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = latents[i][d] - c[d];
                d2 += diff * diff;
            }
            intra += std::sqrt(d2);
        }
    }
    intra /= static_cast<double>(latents.size());
    if (intra == 0.0)
        throw std::invalid_argument(
            "latent_separation: zero intra-camera spread (all latents identical)");

    double inter = 0.0;
    int pairs = 0;
    for (auto a = centroid.begin(); a != centroid.end(); ++a)
        for (auto b = std::next(a); b != centroid.end(); ++b) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = a->second[d] - b->second[d];
                d2 += diff * diff;
            }
            inter += std::sqrt(d2);
            ++pairs;
        }
    inter /= static_cast<double>(pairs);
    return inter / intra;
}

inline void write_latents_csv(std::ostream& os, const std::vector<std::vector<float>>& latents,
                              const std::vector<std::string>& labels) {
    if (latents.size() != labels.size())
        throw std::invalid_argument("write_latents_csv: latents/labels size mismatch");
    if (latents.empty()) throw std::invalid_argument("write_latents_csv: empty input");
    const std::size_t dim = latents[0].size();
    os << "camera_id";
    for (std::size_t d = 0; d < dim; ++d) os << ",z" << d;
    os << '\n';
    for (std::size_t i = 0; i < latents.size(); ++i) {
        if (latents[i].size() != dim)
            throw std::invalid_argument("write_latents_csv: inconsistent latent dimensions");
        os << labels[i];
        for (float v : latents[i]) os << ',' << fmt_g9(v);
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// PSNR / SSIM
// ---------------------------------------------------------------------------

inline double mean_squared_error(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument("mean_squared_error: shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    if (a.v.empty()) throw std::invalid_argument("mean_squared_error: empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.v.size());
}

// MSE = 0 reports the +infinity sentinel.
inline double psnr(const Tensor& a, const Tensor& b, double max_value = 1.0) {
    if (!(max_value > 0.0)) throw std::invalid_argument("psnr: max_value must be positive");
    const double mse = mean_squared_error(a, b);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_value * max_value / mse);
}

// Standard single-scale SSIM: 11x11 Gaussian window (sigma 1.5), k1=0.01,
// k2=0.03, computed per packed channel over fully-interior windows and
// averaged over positions then channels.
inline double ssim(const Tensor& a, const Tensor& b, double max_value = 1.0) {
    if (a.shape != b.shape)
        throw std::invalid_argument("ssim: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    if (a.rank() != 3)
        throw std::invalid_argument("ssim: expected [C,H,W], got " + shape_str(a.shape));
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    constexpr int kWin = 11;
    if (H < kWin || W < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    constexpr double kSigma = 1.5;
    double win[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            const double dy = i - (kWin - 1) / 2.0, dx = j - (kWin - 1) / 2.0;
            win[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
            wsum += win[i][j];
        }
    for (auto& row : win)
        for (double& w : row) w /= wsum;

    const double c1 = (0.01 * max_value) * (0.01 * max_value);
    const double c2 = (0.03 * max_value) * (0.03 * max_value);

    double channel_acc = 0.0;
    for (int c = 0; c < C; ++c) {
        double map_acc = 0.0;
        int count = 0;
        for (int y = 0; y + kWin <= H; ++y)
            for (int x = 0; x + kWin <= W; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double w = win[i][j];
                        const double va = a.at3(c, y + i, x + j);
                        const double vb = b.at3(c, y + i, x + j);
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                const double var_a = saa - ma * ma;
                const double var_b = sbb - mb * mb;
                const double cov = sab - ma * mb;
                map_acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++count;
            }
        channel_acc += map_acc / count;
    }
    return channel_acc / C;
}

}  // namespace noisegen
