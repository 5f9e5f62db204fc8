#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayer.hpp"
#include "camera.hpp"
#include "dataset.hpp"
#include "scenes.hpp"

namespace noisegen {

struct DatasetGenConfig {
    std::uint64_t seed = 1234;
    int patch_size = 32;  // packed spatial size; mosaic patches are 2x this
    int train_patches_per_scene_camera = 200;
    int test_patches_per_scene_camera = 128;
    std::vector<double> gains{1.0, 2.0, 4.0};
    std::vector<std::string> scenes_train{"s0", "s1", "s2", "s3", "s4"};
    std::vector<std::string> scenes_test{"t0"};
    std::vector<VirtualCamera> cameras;
};

inline std::string gain_setting_id(double gain) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "g%g", gain);
    return buf;
}

// Three sensors sharing one NLF, separated only by traits the NLF cannot
// express: none, row offsets, strong row offsets plus quantization.
inline DatasetGenConfig desk_datagen_config(std::uint64_t seed = 1234) {
    DatasetGenConfig cfg;
    cfg.seed = seed;
    NoiseLevelFunction base{0.006, 1e-4};
    cfg.cameras = {
        {"vc_a", base, 0.0, 0.0, 0},
        {"vc_b", base, 0.022, 0.0, 0},
        {"vc_c", base, 0.048, 1.0 / 128.0, 0},
    };
    return cfg;
}

inline void validate_camera(const VirtualCamera& cam) {
    if (cam.base_nlf.delta_shot < 0 || cam.base_nlf.delta_read < 0)
        throw UsageError("camera " + cam.camera_id + ": nlf deltas must be >= 0");
    if (cam.row_noise_sigma < 0 || cam.quant_step < 0)
        throw UsageError("camera " + cam.camera_id + ": row_noise_sigma/quant_step must be >= 0");
}

inline DatasetGenConfig datagen_config_from_json(const json& j) {
    DatasetGenConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("patch_size")) cfg.patch_size = j["patch_size"].get<int>();
        if (j.contains("train_patches_per_scene_camera"))
            cfg.train_patches_per_scene_camera = j["train_patches_per_scene_camera"].get<int>();
        if (j.contains("test_patches_per_scene_camera"))
            cfg.test_patches_per_scene_camera = j["test_patches_per_scene_camera"].get<int>();
        if (j.contains("gains")) cfg.gains = j["gains"].get<std::vector<double>>();
        if (j.contains("scenes")) {
            cfg.scenes_train = j["scenes"].at("train").get<std::vector<std::string>>();
            cfg.scenes_test = j["scenes"].at("test").get<std::vector<std::string>>();
        }
        if (j.contains("cameras")) {
            cfg.cameras.clear();
            for (const auto& c : j["cameras"]) {
                VirtualCamera cam;
                cam.camera_id = c.at("camera_id").get<std::string>();
                cam.base_nlf.delta_shot = c.at("delta_shot").get<double>();
                cam.base_nlf.delta_read = c.at("delta_read").get<double>();
                cam.row_noise_sigma = c.value("row_noise_sigma", 0.0);
                cam.quant_step = c.value("quant_step", 0.0);
                validate_camera(cam);
                cfg.cameras.push_back(std::move(cam));
            }
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad dataset config: ") + e.what());
    }
    if (cfg.cameras.empty()) cfg.cameras = desk_datagen_config(cfg.seed).cameras;
    if (cfg.patch_size < 4 || cfg.patch_size % 2 != 0)
        throw UsageError("patch_size must be even and >= 4");
    if (cfg.gains.empty()) throw UsageError("gains must be non-empty");
    for (double g : cfg.gains)
        if (!(g > 0)) throw UsageError("gains must be positive");
    return cfg;
}

// Clean content pipeline: oversized mosaic -> coin-flipped phase-preserving
// flips -> seeded even-origin crop -> packing. The flips shave 2 rows/cols,
// so the source is synthesized with margin.
inline Tensor make_clean_patch(std::uint64_t seed, const std::string& scene, int idx,
                               int patch_size, RngStream& aug) {
    const int mosaic = 2 * patch_size;
    Tensor m = synth_scene_mosaic(seed, scene, idx, mosaic + 8, mosaic + 8);
    if (aug.below(2)) m = bayer_flip_h(m);
    if (aug.below(2)) m = bayer_flip_v(m);
    return pack_bayer(random_crop(m, mosaic, aug).mosaic);
}

inline DatasetManifest generate_dataset(const fs::path& root, const DatasetGenConfig& cfg,
                                        bool force = false) {
    if (fs::exists(root / "manifest.json")) {
        if (!force)
            throw UsageError("dataset already exists at " + root.string() +
                             " (pass --force to regenerate)");
        fs::remove_all(root);
    }
    DatasetWriter w(root, Shape{4, cfg.patch_size, cfg.patch_size}, cfg.seed);
    DatasetManifest& man = w.manifest();
    man.scenes_train = cfg.scenes_train;
    man.scenes_test = cfg.scenes_test;
    man.cameras = cfg.cameras;
    for (auto& cam : man.cameras)
        cam.seed = splitmix64(cfg.seed ^ fnv1a64("camera/" + cam.camera_id));

    auto emit_scene = [&](const std::string& scene, int count) {
        for (const auto& cam : man.cameras) {
            for (int idx = 0; idx < count; ++idx) {
                const double gain = cfg.gains[static_cast<std::size_t>(idx) % cfg.gains.size()];
                const std::string setting = gain_setting_id(gain);
                RngStream aug = derive_stream(cfg.seed, "aug/" + cam.camera_id + "/" + scene + "/" +
                                                            std::to_string(idx));
                Tensor clean = make_clean_patch(cfg.seed, scene, idx, cfg.patch_size, aug);
                RngStream cap = derive_stream(cam.seed, "capture/" + scene + "/" +
                                                            std::to_string(idx));
                CaptureResult res = simulate_virtual_capture(clean, cam, gain, cap);
                man.nlf[{cam.camera_id, scene, setting}] = res.nlf;
                w.add_pair(cam.camera_id, scene, setting, idx, clean, res.noisy);
            }
        }
    };
    for (const auto& s : cfg.scenes_train) emit_scene(s, cfg.train_patches_per_scene_camera);
    for (const auto& s : cfg.scenes_test) emit_scene(s, cfg.test_patches_per_scene_camera);
    w.finalize();
    return man;
}

}  // namespace noisegen
