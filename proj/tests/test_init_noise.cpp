#include <doctest.h>

#include <cmath>
#include <limits>
#include <noisegen/init_noise.hpp>

using namespace noisegen;

namespace {

struct Moments {
    double mean, var;
};

Moments collect(const Tensor& clean, const NoiseLevelFunction& nlf, const InitNoiseConfig& cfg,
                int reps, std::uint64_t seed) {
    RngStream rng(seed);
    double s = 0, s2 = 0;
    std::size_t n = 0;
    for (int t = 0; t < reps; ++t) {
        Tensor noise = sample_init_noise(clean, nlf, cfg, rng);
        for (float x : noise.v) {
            s += x;
            s2 += static_cast<double>(x) * x;
            ++n;
        }
    }
    const double nd = static_cast<double>(n);
    const double mean = s / nd;
    return {mean, s2 / nd - mean * mean};
}

}  // namespace

TEST_CASE("variance_map: shot+read law, exact values") {
    Tensor clean(Shape{4, 1, 1});
    clean.v = {0.0f, 0.25f, 0.5f, 1.0f};
    NoiseLevelFunction nlf{0.04, 0.01};
    DTensor var = variance_map(clean, nlf, {InitNoiseMode::PoissonGaussian, 0.0});
    CHECK(var.v[0] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(var.v[1] == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(var.v[2] == doctest::Approx(0.03).epsilon(1e-12));
    CHECK(var.v[3] == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("variance_map: gaussian mode is flat and ignores the NLF") {
    Tensor clean(Shape{4, 2, 2});
    for (std::size_t i = 0; i < clean.v.size(); ++i) clean.v[i] = 0.06f * static_cast<float>(i);
    DTensor var = variance_map(clean, {0.9, 0.9}, {InitNoiseMode::Gaussian, 0.1});
    for (double v : var.v) CHECK(v == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("poisson-gaussian seed noise: variance and mean (monte carlo)") {
    Tensor clean(Shape{4, 16, 16}, 0.5f);
    // var = 0.04 * 0.5 + 0.01 = 0.03, checked to 2% at ~1e6 draws
    Moments m = collect(clean, {0.04, 0.01}, {InitNoiseMode::PoissonGaussian, 0.0}, 1000, 8);
    CHECK(std::fabs(m.mean) < 1.5e-3);
    CHECK(m.var == doctest::Approx(0.03).epsilon(0.02));
}

TEST_CASE("gaussian seed noise: variance sigma^2 (monte carlo)") {
    Tensor clean(Shape{4, 16, 16}, 0.9f);
    Moments m = collect(clean, {0.5, 0.5}, {InitNoiseMode::Gaussian, 0.1}, 1000, 9);
    CHECK(std::fabs(m.mean) < 1e-3);
    CHECK(m.var == doctest::Approx(0.01).epsilon(0.02));
}

TEST_CASE("seed noise follows the local clean level, not the patch average") {
    // Half the patch at 0, half at 1: per-region variances must split.
    Tensor clean(Shape{4, 8, 8});
    for (int ch = 0; ch < 4; ++ch)
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) clean.at3(ch, r, c) = (r < 4) ? 0.0f : 1.0f;
    NoiseLevelFunction nlf{0.08, 0.002};
    RngStream rng(10);
    double s2_lo = 0, s2_hi = 0;
    std::size_t n_lo = 0, n_hi = 0;
    for (int t = 0; t < 4000; ++t) {
        Tensor noise = sample_init_noise(clean, nlf, {InitNoiseMode::PoissonGaussian, 0.0}, rng);
        for (int ch = 0; ch < 4; ++ch)
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c) {
                    const double x = noise.at3(ch, r, c);
                    if (r < 4) {
                        s2_lo += x * x;
                        ++n_lo;
                    } else {
                        s2_hi += x * x;
                        ++n_hi;
                    }
                }
    }
    CHECK(s2_lo / static_cast<double>(n_lo) == doctest::Approx(0.002).epsilon(0.03));
    CHECK(s2_hi / static_cast<double>(n_hi) == doctest::Approx(0.082).epsilon(0.03));
}

TEST_CASE("adjacent seed-noise pixels are uncorrelated") {
    Tensor clean(Shape{4, 16, 16}, 0.5f);
    NoiseLevelFunction nlf{0.04, 0.01};
    RngStream rng(11);
    double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
    std::size_t n = 0;
    for (int t = 0; t < 500; ++t) {
        Tensor noise = sample_init_noise(clean, nlf, {InitNoiseMode::PoissonGaussian, 0.0}, rng);
        for (int ch = 0; ch < 4; ++ch)
            for (int r = 0; r < 16; ++r)
                for (int c = 0; c + 1 < 16; ++c) {
                    const double a = noise.at3(ch, r, c), b = noise.at3(ch, r, c + 1);
                    sxy += a * b;
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    ++n;
                }
    }
    const double nd = static_cast<double>(n);
    const double cov = sxy / nd - (sx / nd) * (sy / nd);
    const double va = sxx / nd - (sx / nd) * (sx / nd);
    const double vb = syy / nd - (sy / nd) * (sy / nd);
    CHECK(std::fabs(cov / std::sqrt(va * vb)) < 0.01);
}

TEST_CASE("seed noise is reproducible from the stream state") {
    Tensor clean(Shape{4, 8, 8}, 0.3f);
    RngStream a(123), b(123);
    Tensor n1 = sample_init_noise(clean, {0.01, 1e-4}, {InitNoiseMode::PoissonGaussian, 0.0}, a);
    Tensor n2 = sample_init_noise(clean, {0.01, 1e-4}, {InitNoiseMode::PoissonGaussian, 0.0}, b);
    CHECK(n1.v == n2.v);
}

TEST_CASE("invalid inputs are rejected") {
    Tensor clean(Shape{4, 2, 2}, 0.5f);
    RngStream rng(1);
    Tensor bad = clean;
    bad.v[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(sample_init_noise(bad, {0.01, 1e-4}, {}, rng), std::invalid_argument);
    CHECK_THROWS_AS(variance_map(clean, {-1.0, 0.0}, {}), std::invalid_argument);
    CHECK_THROWS_AS(parse_init_noise_mode("banana"), std::invalid_argument);
    CHECK(parse_init_noise_mode("poisson_gaussian") == InitNoiseMode::PoissonGaussian);
    CHECK(parse_init_noise_mode("gaussian") == InitNoiseMode::Gaussian);
}

TEST_CASE("level-matched sigma averages the shot+read power") {
    std::vector<std::pair<double, NoiseLevelFunction>> obs = {
        {0.5, {0.04, 0.01}},   // var 0.03
        {0.25, {0.04, 0.01}},  // var 0.02
    };
    CHECK(level_matched_sigma(obs) == doctest::Approx(std::sqrt(0.025)).epsilon(1e-12));
    CHECK_THROWS_AS(level_matched_sigma({}), std::invalid_argument);
}
