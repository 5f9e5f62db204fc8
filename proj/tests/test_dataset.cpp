#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <noisegen/datagen.hpp>
#include <noisegen/dataset.hpp>

using namespace noisegen;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("noisegen_test_" + name);
    fs::remove_all(p);
    return p;
}

DatasetGenConfig tiny_config() {
    DatasetGenConfig cfg = desk_datagen_config(4242);
    cfg.patch_size = 16;
    cfg.scenes_train = {"s0", "s1"};
    cfg.scenes_test = {"t0"};
    cfg.train_patches_per_scene_camera = 4;
    cfg.test_patches_per_scene_camera = 3;
    return cfg;
}

void rewrite_manifest(const fs::path& root, const std::function<void(json&)>& mutate) {
    json j = json::parse(read_text(root / "manifest.json"));
    mutate(j);
    write_text_atomic(root / "manifest.json", j.dump(1));
}

}  // namespace

TEST_CASE("writer/reader round-trip preserves every field and value") {
    fs::path root = fresh_dir("roundtrip");
    DatasetWriter w(root, Shape{4, 2, 2}, 77);
    DatasetManifest& man = w.manifest();
    man.cameras = {{"camA", {0.01, 1e-4}, 0.0, 0.0, 5}, {"camB", {0.02, 2e-4}, 0.03, 0.0, 6}};
    man.scenes_train = {"sc0"};
    man.scenes_test = {"sc1"};
    man.nlf[{"camA", "sc0", "g1"}] = {0.01, 1e-4};
    man.nlf[{"camA", "sc1", "g1"}] = {0.01, 1e-4};
    man.nlf[{"camB", "sc0", "g2"}] = {0.04, 8e-4};

    Tensor clean(Shape{4, 2, 2});
    Tensor noisy(Shape{4, 2, 2});
    for (std::size_t i = 0; i < clean.v.size(); ++i) {
        clean.v[i] = 0.01f * static_cast<float>(i);
        noisy.v[i] = clean.v[i] + 0.5f;
    }
    w.add_pair("camA", "sc0", "g1", 0, clean, noisy);
    w.add_pair("camA", "sc1", "g1", 0, clean, clean);
    w.add_pair("camB", "sc0", "g2", 1, noisy, noisy);
    w.finalize();

    Dataset d = Dataset::open(root);
    CHECK(d.size() == 3);
    CHECK(d.manifest().seed == 77);
    CHECK(d.manifest().patch_shape == Shape{4, 2, 2});
    CHECK(d.manifest().cameras.size() == 2);
    CHECK(d.manifest().cameras[1].row_noise_sigma == 0.03);
    CHECK(d.manifest().cameras[1].seed == 6);
    REQUIRE(d.train_indices().size() == 2);  // sc0 pairs
    REQUIRE(d.test_indices().size() == 1);   // sc1 pair

    PatchPair p0 = d.load(0);
    CHECK(p0.camera == "camA");
    CHECK(p0.scene == "sc0");
    CHECK(p0.setting == "g1");
    CHECK(p0.idx == 0);
    CHECK(p0.nlf.delta_shot == 0.01);
    CHECK(p0.clean.v == clean.v);
    CHECK(p0.noisy.v == noisy.v);

    PatchPair p2 = d.load(2);
    CHECK(p2.camera == "camB");
    CHECK(p2.nlf.delta_read == 8e-4);
    CHECK(p2.clean.v == noisy.v);
}

TEST_CASE("generated dataset: counts, splits, settings, nlf table, determinism") {
    fs::path root = fresh_dir("gen");
    DatasetGenConfig cfg = tiny_config();
    DatasetManifest man = generate_dataset(root, cfg);

    // 2 train scenes x 3 cameras x 4 patches + 1 test scene x 3 cameras x 3 patches
    CHECK(man.pairs.size() == 24 + 9);
    Dataset d = Dataset::open(root);
    CHECK(d.train_indices().size() == 24);
    CHECK(d.test_indices().size() == 9);

    for (std::size_t i = 0; i < d.size(); ++i) {
        const PairMeta& pm = d.meta(i);
        // Settings cycle through the gain list by patch index.
        const double gain = cfg.gains[static_cast<std::size_t>(pm.idx) % cfg.gains.size()];
        CHECK(pm.setting == gain_setting_id(gain));
        // The stored NLF is the gain-scaled base NLF of the pair's camera.
        const NoiseLevelFunction& nlf = d.manifest().nlf.at({pm.camera, pm.scene, pm.setting});
        CHECK(nlf.delta_shot == doctest::Approx(0.006 * gain).epsilon(1e-12));
        CHECK(nlf.delta_read == doctest::Approx(1e-4 * gain * gain).epsilon(1e-12));
    }

    PatchPair pp = d.load(0);
    for (float x : pp.clean.v) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }
    for (float x : pp.noisy.v) CHECK(std::isfinite(x));

    // Regeneration is bit-identical (manifest JSON includes payload checksums).
    DatasetManifest man2 = generate_dataset(root, cfg, /*force=*/true);
    CHECK(manifest_to_json(man2).dump() == manifest_to_json(man).dump());
}

TEST_CASE("existing dataset is not clobbered without force") {
    fs::path root = fresh_dir("noforce");
    DatasetGenConfig cfg = tiny_config();
    generate_dataset(root, cfg);
    CHECK_THROWS_AS(generate_dataset(root, cfg), UsageError);
    CHECK_NOTHROW(generate_dataset(root, cfg, /*force=*/true));
}

TEST_CASE("missing payload file is reported by name") {
    fs::path root = fresh_dir("missing");
    generate_dataset(root, tiny_config());
    Dataset d = Dataset::open(root);
    const fs::path victim = root / pair_rel_path(d.meta(0), "noisy");
    fs::remove(victim);
    try {
        d.load(0);
        FAIL("expected MissingPayloadError");
    } catch (const MissingPayloadError& e) {
        CHECK(std::string(e.what()).find(victim.string()) != std::string::npos);
    }
    // Other pairs still load.
    CHECK_NOTHROW(d.load(1));
}

TEST_CASE("truncated payload raises a shape error naming the file") {
    fs::path root = fresh_dir("truncated");
    generate_dataset(root, tiny_config());
    Dataset d = Dataset::open(root);
    const fs::path victim = root / pair_rel_path(d.meta(2), "clean");
    {
        std::string bytes = read_text(victim);
        bytes.resize(100);  // multiple of 4, wrong element count
        write_text_atomic(victim, bytes);
    }
    try {
        d.load(2);
        FAIL("expected PayloadShapeError");
    } catch (const PayloadShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find(victim.string()) != std::string::npos);
        CHECK(msg.find("1024") != std::string::npos);  // expected count for [4,16,16]
        CHECK(msg.find("25") != std::string::npos);    // actual count
    }
}

TEST_CASE("bit corruption raises a checksum error") {
    fs::path root = fresh_dir("corrupt");
    generate_dataset(root, tiny_config());
    Dataset d = Dataset::open(root);
    const fs::path victim = root / pair_rel_path(d.meta(1), "clean");
    {
        std::string bytes = read_text(victim);
        bytes[40] = static_cast<char>(bytes[40] ^ 0x01);
        write_text_atomic(victim, bytes);
    }
    CHECK_THROWS_AS(d.load(1), ChecksumError);
}

TEST_CASE("unsupported format_version is rejected") {
    fs::path root = fresh_dir("version");
    generate_dataset(root, tiny_config());
    rewrite_manifest(root, [](json& j) { j["format_version"] = 2; });
    CHECK_THROWS_AS(Dataset::open(root), VersionError);
}

TEST_CASE("train/test scene overlap is rejected") {
    fs::path root = fresh_dir("overlap");
    generate_dataset(root, tiny_config());
    rewrite_manifest(root, [](json& j) { j["scenes"]["test"].push_back("s0"); });
    try {
        Dataset::open(root);
        FAIL("expected ManifestError");
    } catch (const ManifestError& e) {
        CHECK(std::string(e.what()).find("s0") != std::string::npos);
    }
}

TEST_CASE("malformed manifests are rejected with distinct diagnostics") {
    fs::path root = fresh_dir("malformed");
    generate_dataset(root, tiny_config());

    SUBCASE("duplicate pair") {
        rewrite_manifest(root, [](json& j) { j["pairs"].push_back(j["pairs"][0]); });
        CHECK_THROWS_AS(Dataset::open(root), ManifestError);
    }
    SUBCASE("pair references unknown camera") {
        rewrite_manifest(root, [](json& j) { j["pairs"][0]["camera"] = "nope"; });
        CHECK_THROWS_AS(Dataset::open(root), ManifestError);
    }
    SUBCASE("pair with no nlf entry") {
        rewrite_manifest(root, [](json& j) { j["pairs"][0]["setting"] = "g99"; });
        CHECK_THROWS_AS(Dataset::open(root), ManifestError);
    }
    SUBCASE("invalid JSON") {
        write_text_atomic(root / "manifest.json", "{not json");
        CHECK_THROWS_AS(Dataset::open(root), ManifestError);
    }
    SUBCASE("manifest missing entirely") {
        fs::remove(root / "manifest.json");
        CHECK_THROWS_AS(Dataset::open(root), MissingPayloadError);
    }
}

TEST_CASE("writer rejects wrong patch shapes") {
    fs::path root = fresh_dir("wrshape");
    DatasetWriter w(root, Shape{4, 4, 4}, 1);
    Tensor wrong(Shape{4, 2, 2});
    CHECK_THROWS_AS(w.add_pair("c", "s", "g1", 0, wrong, wrong), std::invalid_argument);
}
