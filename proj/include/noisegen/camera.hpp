#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "rng.hpp"
#include "tensor.hpp"

namespace noisegen {

// Signal-dependent noise level function: per-pixel variance of the shot+read
// model is delta_shot * clean + delta_read (clean in [0,1] data units).
struct NoiseLevelFunction {
    double delta_shot = 0.0;
    double delta_read = 0.0;
};

// Analog-gain scaling. Shot variance is linear in gain, read variance
// quadratic; the exponents are parameters so ablations can probe other laws.
inline NoiseLevelFunction scale_nlf(const NoiseLevelFunction& nlf, double gain_ratio,
                                    double shot_exp = 1.0, double read_exp = 2.0) {
    if (!(gain_ratio > 0.0))
        throw std::invalid_argument("scale_nlf: gain_ratio must be positive");
    NoiseLevelFunction out;
    out.delta_shot = nlf.delta_shot * std::pow(gain_ratio, shot_exp);
    out.delta_read = nlf.delta_read * std::pow(gain_ratio, read_exp);
    return out;
}

// One synthetic sensor: a base NLF at unit gain plus two traits the NLF does
// not describe — shared per-row offsets and ADC quantization.
struct VirtualCamera {
    std::string camera_id;
    NoiseLevelFunction base_nlf;
    double row_noise_sigma = 0.0;  // stddev of the per-raw-row offset
    double quant_step = 0.0;       // 0 disables quantization
    std::uint64_t seed = 0;
};

struct CaptureResult {
    Tensor noisy;               // [4,h,w], unclamped
    NoiseLevelFunction nlf;     // gain-scaled base NLF (row/quant deliberately absent)
};

// Simulates one exposure of `clean` (packed [4,h,w], values in [0,1]) through
// the camera at the given gain. Draw order is fixed: 4*h*w shot/read normals
// in element order, then 2*h row-offset normals — both consumed even when
// their scale is zero, so streams stay aligned across parameter choices.
// Packed channels 0,1 at row r sit on mosaic row 2r and share one offset;
// channels 2,3 share the offset of row 2r+1.
inline CaptureResult simulate_virtual_capture(const Tensor& clean, const VirtualCamera& cam,
                                              double gain_ratio, RngStream& rng) {
    if (clean.rank() != 3 || clean.dim(0) != 4)
        throw std::invalid_argument("simulate_virtual_capture: clean must be [4,h,w]");
    for (float x : clean.v)
        if (!std::isfinite(x))
            throw std::invalid_argument("simulate_virtual_capture: clean contains non-finite values");

    CaptureResult res;
    res.nlf = scale_nlf(cam.base_nlf, gain_ratio);
    const int h = clean.dim(1), w = clean.dim(2);
    res.noisy = Tensor(clean.shape);

    for (int ch = 0; ch < 4; ++ch)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double mu = clean.at3(ch, r, c);
                const double var = res.nlf.delta_shot * mu + res.nlf.delta_read;
                if (var < 0.0)
                    throw std::invalid_argument("simulate_virtual_capture: negative variance from NLF");
                res.noisy.at3(ch, r, c) = static_cast<float>(mu + rng.normal() * std::sqrt(var));
            }

    std::vector<double> row_off(static_cast<std::size_t>(2 * h));
    for (int mr = 0; mr < 2 * h; ++mr) row_off[mr] = rng.normal() * cam.row_noise_sigma;
    for (int ch = 0; ch < 4; ++ch)
        for (int r = 0; r < h; ++r) {
            const double off = row_off[static_cast<std::size_t>(ch < 2 ? 2 * r : 2 * r + 1)];
            for (int c = 0; c < w; ++c)
                res.noisy.at3(ch, r, c) += static_cast<float>(off);
        }

    if (cam.quant_step > 0.0) {
        const double q = cam.quant_step;
        for (float& x : res.noisy.v) x = static_cast<float>(std::round(x / q) * q);
    }
    return res;
}

}  // namespace noisegen
