#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "camera.hpp"
#include "io.hpp"
#include "tensor.hpp"

namespace noisegen {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kDatasetFormatVersion = 1;

// Failure taxonomy for on-disk datasets. All are I/O-family failures, but
// callers (and tests) can tell them apart.
struct MissingPayloadError : IoError {
    using IoError::IoError;
};
struct PayloadShapeError : IoError {
    using IoError::IoError;
};
struct ChecksumError : IoError {
    using IoError::IoError;
};
struct VersionError : IoError {
    using IoError::IoError;
};
struct ManifestError : IoError {
    using IoError::IoError;
};

struct PairMeta {
    std::string camera, scene, setting;
    int idx = 0;
    std::string clean_fnv, noisy_fnv;  // fnv-1a 64 over payload bytes, hex
};

struct NlfKey {
    std::string camera, scene, setting;
    bool operator<(const NlfKey& o) const {
        return std::tie(camera, scene, setting) < std::tie(o.camera, o.scene, o.setting);
    }
};

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    Shape patch_shape{4, 32, 32};
    std::uint64_t seed = 0;
    std::vector<VirtualCamera> cameras;
    std::vector<std::string> scenes_train, scenes_test;
    std::map<NlfKey, NoiseLevelFunction> nlf;
    std::vector<PairMeta> pairs;
};

struct PatchPair {
    std::string camera, scene, setting;
    int idx = 0;
    Tensor clean, noisy;
    NoiseLevelFunction nlf;
};

inline std::string fnv_hex(const void* data, std::size_t n) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(data, n)));
    return buf;
}

inline std::string pair_rel_path(const PairMeta& p, const char* kind) {
    return p.camera + "/" + p.scene + "/" + std::to_string(p.idx) + "_" + kind + ".f32";
}

inline json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["format_version"] = m.format_version;
    j["patch_shape"] = m.patch_shape;
    j["seed"] = m.seed;
    j["cameras"] = json::array();
    for (const auto& c : m.cameras)
        j["cameras"].push_back({{"camera_id", c.camera_id},
                                {"delta_shot", c.base_nlf.delta_shot},
                                {"delta_read", c.base_nlf.delta_read},
                                {"row_noise_sigma", c.row_noise_sigma},
                                {"quant_step", c.quant_step},
                                {"seed", c.seed}});
    j["scenes"] = {{"train", m.scenes_train}, {"test", m.scenes_test}};
    j["nlf"] = json::array();
    for (const auto& [k, v] : m.nlf)
        j["nlf"].push_back({{"camera", k.camera},
                            {"scene", k.scene},
                            {"setting", k.setting},
                            {"delta_shot", v.delta_shot},
                            {"delta_read", v.delta_read}});
    j["pairs"] = json::array();
    for (const auto& p : m.pairs)
        j["pairs"].push_back({{"camera", p.camera},
                              {"scene", p.scene},
                              {"setting", p.setting},
                              {"idx", p.idx},
                              {"clean_fnv", p.clean_fnv},
                              {"noisy_fnv", p.noisy_fnv}});
    return j;
}

inline DatasetManifest manifest_from_json(const json& j, const std::string& where) {
    if (!j.contains("format_version") || !j["format_version"].is_number_integer())
        throw ManifestError(where + ": missing format_version");
    const int ver = j["format_version"].get<int>();
    if (ver != kDatasetFormatVersion)
        throw VersionError(where + ": unsupported format_version " + std::to_string(ver) +
                           " (this build reads version " + std::to_string(kDatasetFormatVersion) + ")");
    DatasetManifest m;
    try {
        m.format_version = ver;
        m.patch_shape = j.at("patch_shape").get<Shape>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& c : j.at("cameras")) {
            VirtualCamera cam;
            cam.camera_id = c.at("camera_id").get<std::string>();
            cam.base_nlf.delta_shot = c.at("delta_shot").get<double>();
            cam.base_nlf.delta_read = c.at("delta_read").get<double>();
            cam.row_noise_sigma = c.at("row_noise_sigma").get<double>();
            cam.quant_step = c.at("quant_step").get<double>();
            cam.seed = c.at("seed").get<std::uint64_t>();
            m.cameras.push_back(std::move(cam));
        }
        m.scenes_train = j.at("scenes").at("train").get<std::vector<std::string>>();
        m.scenes_test = j.at("scenes").at("test").get<std::vector<std::string>>();
        for (const auto& e : j.at("nlf"))
            m.nlf[{e.at("camera").get<std::string>(), e.at("scene").get<std::string>(),
                   e.at("setting").get<std::string>()}] = {e.at("delta_shot").get<double>(),
                                                           e.at("delta_read").get<double>()};
        for (const auto& e : j.at("pairs")) {
            PairMeta p;
            p.camera = e.at("camera").get<std::string>();
            p.scene = e.at("scene").get<std::string>();
            p.setting = e.at("setting").get<std::string>();
            p.idx = e.at("idx").get<int>();
            p.clean_fnv = e.at("clean_fnv").get<std::string>();
            p.noisy_fnv = e.at("noisy_fnv").get<std::string>();
            m.pairs.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw ManifestError(where + ": malformed manifest: " + e.what());
    }
    return m;
}

inline void validate_manifest(const DatasetManifest& m, const std::string& where) {
    if (m.patch_shape.size() != 3 || m.patch_shape[0] != 4)
        throw ManifestError(where + ": patch_shape must be [4,h,w]");
    std::set<std::string> train(m.scenes_train.begin(), m.scenes_train.end());
    std::set<std::string> test(m.scenes_test.begin(), m.scenes_test.end());
    if (train.size() != m.scenes_train.size() || test.size() != m.scenes_test.size())
        throw ManifestError(where + ": duplicate scene ids within a split");
    for (const auto& s : test)
        if (train.count(s))
            throw ManifestError(where + ": scene '" + s + "' appears in both train and test splits");
    std::set<std::string> cam_ids;
    for (const auto& c : m.cameras) cam_ids.insert(c.camera_id);
    if (cam_ids.size() != m.cameras.size())
        throw ManifestError(where + ": duplicate camera ids");
    std::set<std::tuple<std::string, std::string, int>> seen;
    for (const auto& p : m.pairs) {
        if (!cam_ids.count(p.camera))
            throw ManifestError(where + ": pair references unknown camera '" + p.camera + "'");
        if (!train.count(p.scene) && !test.count(p.scene))
            throw ManifestError(where + ": pair references unknown scene '" + p.scene + "'");
        if (!m.nlf.count({p.camera, p.scene, p.setting}))
            throw ManifestError(where + ": no nlf entry for (" + p.camera + "," + p.scene + "," +
                                p.setting + ")");
        if (!seen.insert({p.camera, p.scene, p.idx}).second)
            throw ManifestError(where + ": duplicate pair (" + p.camera + "," + p.scene + "," +
                                std::to_string(p.idx) + ")");
    }
}

// Incremental writer: payloads first, manifest last (atomically), so a
// half-written dataset is never mistaken for a complete one.
class DatasetWriter {
  public:
    DatasetWriter(fs::path root, Shape patch_shape, std::uint64_t seed) : root_(std::move(root)) {
        manifest_.patch_shape = std::move(patch_shape);
        manifest_.seed = seed;
        fs::create_directories(root_);
    }

    DatasetManifest& manifest() { return manifest_; }

    void add_pair(const std::string& camera, const std::string& scene, const std::string& setting,
                  int idx, const Tensor& clean, const Tensor& noisy) {
        check_shape(clean, manifest_.patch_shape, "DatasetWriter clean");
        check_shape(noisy, manifest_.patch_shape, "DatasetWriter noisy");
        PairMeta p{camera, scene, setting, idx, {}, {}};
        p.clean_fnv = fnv_hex(clean.v.data(), clean.v.size() * sizeof(float));
        p.noisy_fnv = fnv_hex(noisy.v.data(), noisy.v.size() * sizeof(float));
        fs::create_directories(root_ / camera / scene);
        write_f32(root_ / pair_rel_path(p, "clean"), clean);
        write_f32(root_ / pair_rel_path(p, "noisy"), noisy);
        manifest_.pairs.push_back(std::move(p));
    }

    void finalize() {
        validate_manifest(manifest_, root_.string());
        write_text_atomic(root_ / "manifest.json", manifest_to_json(manifest_).dump(1));
    }

  private:
    fs::path root_;
    DatasetManifest manifest_;
};

// Read handle. Opening parses and validates the manifest; payloads are
// loaded per pair, with shape and checksum verified on every load.
class Dataset {
  public:
    static Dataset open(const fs::path& root) {
        Dataset d;
        d.root_ = root;
        const fs::path mp = root / "manifest.json";
        if (!fs::exists(mp))
            throw MissingPayloadError("no manifest at " + mp.string());
        json j;
        try {
            j = json::parse(read_text(mp));
        } catch (const json::exception& e) {
            throw ManifestError(mp.string() + ": invalid JSON: " + e.what());
        }
        d.manifest_ = manifest_from_json(j, mp.string());
        validate_manifest(d.manifest_, mp.string());
        std::set<std::string> train(d.manifest_.scenes_train.begin(), d.manifest_.scenes_train.end());
        for (std::size_t i = 0; i < d.manifest_.pairs.size(); ++i) {
            if (train.count(d.manifest_.pairs[i].scene))
                d.train_idx_.push_back(i);
            else
                d.test_idx_.push_back(i);
        }
        return d;
    }

    const DatasetManifest& manifest() const { return manifest_; }
    const fs::path& root() const { return root_; }
    std::size_t size() const { return manifest_.pairs.size(); }
    const std::vector<std::size_t>& train_indices() const { return train_idx_; }
    const std::vector<std::size_t>& test_indices() const { return test_idx_; }
    const PairMeta& meta(std::size_t i) const { return manifest_.pairs.at(i); }

    PatchPair load(std::size_t i) const {
        const PairMeta& p = manifest_.pairs.at(i);
        PatchPair out;
        out.camera = p.camera;
        out.scene = p.scene;
        out.setting = p.setting;
        out.idx = p.idx;
        out.nlf = manifest_.nlf.at({p.camera, p.scene, p.setting});
        out.clean = load_payload(p, "clean", p.clean_fnv);
        out.noisy = load_payload(p, "noisy", p.noisy_fnv);
        return out;
    }

  private:
    Tensor load_payload(const PairMeta& p, const char* kind, const std::string& want_fnv) const {
        const fs::path path = root_ / pair_rel_path(p, kind);
        if (!fs::exists(path))
            throw MissingPayloadError("missing payload file " + path.string());
        std::vector<float> raw = read_f32(path);
        const std::size_t want = shape_numel(manifest_.patch_shape);
        if (raw.size() != want)
            throw PayloadShapeError(path.string() + ": expected " + std::to_string(want) +
                                    " float32 values for shape " + shape_str(manifest_.patch_shape) +
                                    ", file holds " + std::to_string(raw.size()));
        const std::string got = fnv_hex(raw.data(), raw.size() * sizeof(float));
        if (got != want_fnv)
            throw ChecksumError(path.string() + ": checksum " + got + " != manifest " + want_fnv);
        Tensor t(manifest_.patch_shape);
        t.v = std::move(raw);
        return t;
    }

    fs::path root_;
    DatasetManifest manifest_;
    std::vector<std::size_t> train_idx_, test_idx_;
};

}  // namespace noisegen
