#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "camera.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace noisegen {

enum class InitNoiseMode { PoissonGaussian, Gaussian };

inline const char* to_string(InitNoiseMode m) {
    return m == InitNoiseMode::PoissonGaussian ? "poisson_gaussian" : "gaussian";
}

inline InitNoiseMode parse_init_noise_mode(const std::string& s) {
    if (s == "poisson_gaussian") return InitNoiseMode::PoissonGaussian;
    if (s == "gaussian") return InitNoiseMode::Gaussian;
    throw std::invalid_argument("unknown init-noise mode '" + s +
                                "' (expected poisson_gaussian or gaussian)");
}

struct InitNoiseConfig {
    InitNoiseMode mode = InitNoiseMode::PoissonGaussian;
    double gaussian_sigma = 0.0;  // used only in Gaussian mode
};

// Per-pixel variance of the seed noise for a given clean patch.
// PoissonGaussian: delta_shot * clean + delta_read. Gaussian: sigma^2 flat.
inline DTensor variance_map(const Tensor& clean, const NoiseLevelFunction& nlf,
                            const InitNoiseConfig& cfg) {
    DTensor var(clean.shape);
    if (cfg.mode == InitNoiseMode::Gaussian) {
        const double v = cfg.gaussian_sigma * cfg.gaussian_sigma;
        for (double& x : var.v) x = v;
        return var;
    }
    for (std::size_t i = 0; i < clean.v.size(); ++i) {
        if (!std::isfinite(clean.v[i]))
            throw std::invalid_argument("variance_map: clean contains non-finite values");
        const double v = nlf.delta_shot * static_cast<double>(clean.v[i]) + nlf.delta_read;
        if (v < 0.0)
            throw std::invalid_argument("variance_map: negative variance (delta_shot=" +
                                        std::to_string(nlf.delta_shot) + ", delta_read=" +
                                        std::to_string(nlf.delta_read) + ")");
        var.v[i] = v;
    }
    return var;
}

// Sigma for the level-matched flat-Gaussian ablation: average the
// shot+read variance over (mean clean intensity, nlf) observations, then
// take the square root, so both seed models inject equal total power.
inline double level_matched_sigma(
    const std::vector<std::pair<double, NoiseLevelFunction>>& obs) {
    if (obs.empty()) throw std::invalid_argument("level_matched_sigma: empty corpus");
    double acc = 0.0;
    for (const auto& [mu, nlf] : obs) acc += nlf.delta_shot * mu + nlf.delta_read;
    return std::sqrt(acc / static_cast<double>(obs.size()));
}

// Draws the zero-mean heteroscedastic Gaussian seed noise, one normal per
// element in element order.
inline Tensor sample_init_noise(const Tensor& clean, const NoiseLevelFunction& nlf,
                                const InitNoiseConfig& cfg, RngStream& rng) {
    DTensor var = variance_map(clean, nlf, cfg);
    Tensor out(clean.shape);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<float>(rng.normal() * std::sqrt(var.v[i]));
    return out;
}

}  // namespace noisegen
