#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "rng.hpp"
#include "tensor.hpp"

namespace noisegen {

// Procedural clean raw content. Each scene id maps to a fixed palette and
// texture (channel gains, cosine plaids, one soft box); each patch index maps
// to a translation of that texture, so patches from one scene share
// statistics without being identical. Everything is a pure function of
// (seed, scene_id, idx).

struct SceneParams {
    double bias;
    double gain_r, gain_g, gain_b;
    struct Wave {
        double amp, fx, fy, phase;
    } waves[3];
    double box_cx, box_cy, box_hw, box_hh, box_delta;
};

inline SceneParams scene_params(std::uint64_t seed, const std::string& scene_id) {
    RngStream s = derive_stream(seed, "scene/" + scene_id);
    SceneParams p;
    p.bias = 0.20 + 0.45 * s.uniform();
    p.gain_r = 0.45 + 0.55 * s.uniform();
    p.gain_g = 0.45 + 0.55 * s.uniform();
    p.gain_b = 0.45 + 0.55 * s.uniform();
    for (auto& w : p.waves) {
        w.amp = 0.03 + 0.09 * s.uniform();
        w.fx = 0.02 + 0.20 * s.uniform();
        w.fy = 0.02 + 0.20 * s.uniform();
        w.phase = 2.0 * std::numbers::pi * s.uniform();
    }
    p.box_cx = 64.0 * s.uniform();
    p.box_cy = 64.0 * s.uniform();
    p.box_hw = 6.0 + 14.0 * s.uniform();
    p.box_hh = 6.0 + 14.0 * s.uniform();
    p.box_delta = -0.15 + 0.30 * s.uniform();
    return p;
}

// RGGB mosaic of size [H,W]; idx selects an even translation of the texture.
inline Tensor synth_scene_mosaic(std::uint64_t seed, const std::string& scene_id, int idx,
                                 int H, int W) {
    const SceneParams p = scene_params(seed, scene_id);
    RngStream s = derive_stream(seed, "scene/" + scene_id + "/patch/" + std::to_string(idx));
    const double ox = 2.0 * static_cast<double>(s.below(4096));
    const double oy = 2.0 * static_cast<double>(s.below(4096));

    Tensor m(Shape{H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double gx = x + ox, gy = y + oy;
            double lum = p.bias;
            for (const auto& w : p.waves)
                lum += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * gx + w.fy * gy) + w.phase);
            const double bx = std::fabs(std::fmod(gx, 128.0) - p.box_cx);
            const double by = std::fabs(std::fmod(gy, 128.0) - p.box_cy);
            if (bx < p.box_hw && by < p.box_hh) lum += p.box_delta;
            lum = std::clamp(lum, 0.02, 0.98);
            const bool even_row = (y % 2 == 0), even_col = (x % 2 == 0);
            double gain = p.gain_g;
            if (even_row && even_col) gain = p.gain_r;
            else if (!even_row && !even_col) gain = p.gain_b;
            m.at2(y, x) = static_cast<float>(std::clamp(lum * gain, 0.0, 1.0));
        }
    return m;
}

}  // namespace noisegen
