// Operator surface: dataset synthesis, training, sampling, evaluation,
// denoising, and report rendering. Every command validates its inputs before
// its first write, puts all outputs under --out, and is deterministic for a
// fixed --seed. Exit codes: 0 ok, 1 computational failure, 2 usage/config
// error, 3 I/O error.
#pragma once

#include <noisegen/datagen.hpp>
#include <noisegen/denoiser.hpp>
#include <noisegen/evaluation.hpp>
#include <noisegen/png.hpp>
#include <noisegen/training.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace noisegen {

namespace clidetail {

namespace fs = std::filesystem;

// NOISEGEN_NUM_WORKERS bounds loader/evaluator parallelism; results never
// depend on the worker count, only wall time does.
inline int worker_count() {
    if (const char* env = std::getenv("NOISEGEN_NUM_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1 || v > 256)
            throw UsageError("NOISEGEN_NUM_WORKERS must be an integer in [1,256], got '" +
                             std::string(env) + "'");
        return static_cast<int>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(4u, std::max(1u, hc)));
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (std::size_t k = 0; k < t; ++k)
        pool.emplace_back([&] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next.store(n);
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

inline json load_config_json(const fs::path& file) {
    if (file.empty()) return json::object();
    std::ifstream in(file);
    if (!in) throw IoError("cannot read config " + file.string());
    json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw UsageError("config " + file.string() + " is not valid JSON");
    if (!j.is_object()) throw UsageError("config " + file.string() + " must hold a JSON object");
    return j;
}

// --set key=value overrides; dotted keys address nested objects, values parse
// as JSON when they can and fall back to plain strings.
inline void apply_set_args(json& j, const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError("--set expects key=value, got '" + s + "'");
        const std::string key = s.substr(0, eq);
        json val = json::parse(s.substr(eq + 1), nullptr, /*allow_exceptions=*/false);
        if (val.is_discarded()) val = s.substr(eq + 1);
        json* slot = &j;
        std::size_t start = 0;
        for (std::size_t dot = key.find('.'); dot != std::string::npos;
             dot = key.find('.', start)) {
            slot = &(*slot)[key.substr(start, dot - start)];
            start = dot + 1;
        }
        (*slot)[key.substr(start)] = val;
    }
}

inline Dataset open_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json"))
        throw UsageError("no dataset at " + dir.string() + " (missing manifest.json)");
    return Dataset::open(dir);
}

inline void seeded_shuffle(std::vector<std::size_t>& v, RngStream& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
}

// Deterministic representative subset: shuffle, truncate, restore file order.
inline void cap_indices(std::vector<std::size_t>& v, int cap, RngStream& rng) {
    if (cap <= 0 || static_cast<std::size_t>(cap) >= v.size()) return;
    seeded_shuffle(v, rng);
    v.resize(static_cast<std::size_t>(cap));
    std::sort(v.begin(), v.end());
}

// First three cameras form the standard desk trio (shared NLF, distinct
// row/quantization traits); further ones fan out along all axes.
inline std::vector<VirtualCamera> make_virtual_cameras(int n) {
    if (n < 2) throw UsageError("make-dataset: --cameras must be >= 2 (triplet loss needs two)");
    if (n > 26) throw UsageError("make-dataset: --cameras is capped at 26");
    std::vector<VirtualCamera> cams = desk_datagen_config().cameras;
    for (int i = 3; i < n; ++i) {
        VirtualCamera cam;
        cam.camera_id = std::string("vc_") + static_cast<char>('a' + i);
        cam.base_nlf = {0.006 * (1.0 + 0.3 * (i - 2)), 1e-4 * (i - 1)};
        cam.row_noise_sigma = 0.02 * (i - 1);
        cam.quant_step = 1.0 / 128.0;
        cams.push_back(cam);
    }
    cams.resize(static_cast<std::size_t>(n));
    return cams;
}

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t c = line.find(',', start);
            if (c == std::string::npos) {
                cells.push_back(line.substr(start));
                break;
            }
            cells.push_back(line.substr(start, c - start));
            start = c + 1;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

inline std::string html_table(const std::string& caption,
                              const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows) {
    std::string h = "<table>\n<caption>" + html_escape(caption) + "</caption>\n<tr>";
    for (const auto& c : header) h += "<th>" + html_escape(c) + "</th>";
    h += "</tr>\n";
    for (const auto& row : rows) {
        h += "<tr>";
        for (const auto& c : row) h += "<td>" + html_escape(c) + "</td>";
        h += "</tr>\n";
    }
    return h + "</table>\n";
}

}  // namespace clidetail

// ---- make-dataset --------------------------------------------------------------

struct MakeDatasetOpts {
    int cameras = 3;
    std::vector<std::string> scenes_train{"s0", "s1"};
    std::vector<std::string> scenes_test{"t0"};
    int patches_per_scene = 8;
    int test_patches_per_scene = -1;  // -1: same as patches_per_scene
    std::vector<double> gains{1.0, 2.0, 4.0};
    int patch_size = 32;
    std::uint64_t seed = 1234;
    std::filesystem::path out;
    bool force = false;
};

inline void run_make_dataset(const MakeDatasetOpts& o) {
    if (o.patches_per_scene < 1) throw UsageError("make-dataset: --patches-per-scene must be >= 1");
    if (o.patch_size < 8) throw UsageError("make-dataset: --patch-size must be >= 8");
    for (const std::string& s : o.scenes_test)
        if (std::find(o.scenes_train.begin(), o.scenes_train.end(), s) != o.scenes_train.end())
            throw UsageError("make-dataset: scene '" + s + "' is in both --scenes-train and "
                             "--scenes-test");
    DatasetGenConfig cfg;
    cfg.seed = o.seed;
    cfg.patch_size = o.patch_size;
    cfg.train_patches_per_scene_camera = o.patches_per_scene;
    cfg.test_patches_per_scene_camera =
        o.test_patches_per_scene < 0 ? o.patches_per_scene : o.test_patches_per_scene;
    cfg.gains = o.gains;
    cfg.scenes_train = o.scenes_train;
    cfg.scenes_test = o.scenes_test;
    cfg.cameras = clidetail::make_virtual_cameras(o.cameras);
    const DatasetManifest man = generate_dataset(o.out, cfg, o.force);
    std::cout << "wrote " << man.pairs.size() << " pairs (" << man.cameras.size() << " cameras, "
              << man.scenes_train.size() << "+" << man.scenes_test.size() << " scenes) to "
              << o.out.string() << "\n";
}

// ---- train -----------------------------------------------------------------------

struct TrainOpts {
    std::filesystem::path config, data, out, resume;
    std::vector<std::string> sets;
};

inline void run_train(const TrainOpts& o) {
    json j = clidetail::load_config_json(o.config);
    clidetail::apply_set_args(j, o.sets);
    const TrainConfig cfg = TrainConfig::from_json(j);
    const Dataset ds = clidetail::open_dataset(o.data);
    const TrainResult r = train(cfg, ds, o.out, o.resume);
    std::cout << "trained " << r.epochs_run << " epochs; checkpoint " << r.final_checkpoint.string()
              << "; metrics " << r.metrics_csv.string() << "\n";
}

// ---- sample-noise ----------------------------------------------------------------

struct SampleNoiseOpts {
    std::filesystem::path checkpoint, data, out;
    std::string camera;
    int count = 4;
    double scale = 10.0;
    std::uint64_t seed = 1;
};

inline void run_sample_noise(const SampleNoiseOpts& o) {
    if (o.count < 1) throw UsageError("sample-noise: --count must be >= 1");
    if (!(o.scale > 0.0)) throw UsageError("sample-noise: --scale must be positive");
    TrainState st = state_from_checkpoint(load_checkpoint(o.checkpoint));
    const Dataset ds = clidetail::open_dataset(o.data);

    bool known = false;
    for (const VirtualCamera& c : ds.manifest().cameras) known |= c.camera_id == o.camera;
    if (!known) throw UsageError("sample-noise: unknown camera id '" + o.camera + "'");
    std::vector<std::size_t> pool;
    for (std::size_t i : ds.test_indices())
        if (ds.manifest().pairs[i].camera == o.camera) pool.push_back(i);
    if (static_cast<int>(pool.size()) < o.count)
        throw UsageError("sample-noise: camera '" + o.camera + "' has only " +
                         std::to_string(pool.size()) + " test pairs, need " +
                         std::to_string(o.count));
    RngStream rng = derive_stream(o.seed, "cli/sample-noise");
    clidetail::cap_indices(pool, o.count, rng);

    char sb[32];
    std::snprintf(sb, sizeof sb, "x%g", o.scale);
    const std::string scale_tag = sb;

    std::filesystem::create_directories(o.out);
    json meta;
    meta["camera"] = o.camera;
    meta["count"] = o.count;
    meta["seed"] = o.seed;
    meta["noise_preview_scale"] = o.scale;
    meta["preview_mapping"] = "clean: v; noise: 0.5 + scale*v; both clamped to [0,1]";
    meta["payload_units"] = "data (f32, packed [4,h,w])";
    json items = json::array();
    const int h = ds.manifest().patch_shape[1], w = ds.manifest().patch_shape[2];
    for (int k = 0; k < o.count; ++k) {
        const PatchPair p = ds.load(pool[static_cast<std::size_t>(k)]);
        const Tensor init = sample_init_noise(p.clean, p.nlf, st.cfg.init_noise, rng);
        std::vector<float> latent(static_cast<std::size_t>(st.G.dims.latent), 0.0f);
        if (st.cfg.use_encoder) latent = encoder_forward(st.E, p.noisy);
        const GeneratorResult gr = generator_forward(st.G, p.clean, init, latent);
        Tensor real(p.clean.shape);
        for (std::size_t e = 0; e < real.v.size(); ++e) real.v[e] = p.noisy.v[e] - p.clean.v[e];

        char base[32];
        std::snprintf(base, sizeof base, "sample_%03d", k);
        const std::string stem = base;
        write_f32(o.out / (stem + "_clean.f32"), p.clean);
        write_f32(o.out / (stem + "_init_noise.f32"), init);
        write_f32(o.out / (stem + "_final_noise.f32"), gr.final_noise);
        write_f32(o.out / (stem + "_real_noise.f32"), real);
        write_png_rgb(o.out / (stem + "_clean.png"), w, h, packed_preview_rgb(p.clean, 1.0, 0.0));
        const std::pair<const char*, const Tensor*> noises[] = {
            {"init_noise", &init}, {"final_noise", &gr.final_noise}, {"real_noise", &real}};
        for (const auto& [tag, t] : noises)
            write_png_rgb(o.out / (stem + "_" + tag + "_" + scale_tag + ".png"), w, h,
                          packed_preview_rgb(*t, o.scale, 0.5));
        items.push_back(json{{"stem", stem},
                             {"scene", p.scene},
                             {"setting", p.setting},
                             {"idx", p.idx},
                             {"pair_index", pool[static_cast<std::size_t>(k)]}});
    }
    meta["samples"] = items;
    write_text_atomic(o.out / "metadata.json", meta.dump(2) + "\n");
    std::cout << "wrote " << 4 * o.count << " payload files and " << 4 * o.count
              << " previews for camera " << o.camera << " to " << o.out.string() << "\n";
}

// ---- eval-kld --------------------------------------------------------------------

struct EvalKldOpts {
    std::filesystem::path data, out, checkpoint;
    std::vector<std::string> models{"gaussian", "poisson_gaussian", "learned"};
    int max_patches = 0;  // 0: all test pairs
    std::uint64_t seed = 1;
};

inline void run_eval_kld(const EvalKldOpts& o) {
    if (o.models.empty()) throw UsageError("eval-kld: --models must name at least one model");
    std::vector<NoiseModelKind> kinds;
    for (const std::string& m : o.models) kinds.push_back(parse_noise_model_kind(m));
    const bool needs_ckpt =
        std::count(kinds.begin(), kinds.end(), NoiseModelKind::Learned) > 0;
    if (needs_ckpt && o.checkpoint.empty())
        throw UsageError("eval-kld: the learned model needs --checkpoint");

    const Dataset ds = clidetail::open_dataset(o.data);
    std::optional<TrainState> st;
    if (needs_ckpt) st = state_from_checkpoint(load_checkpoint(o.checkpoint));

    std::vector<std::size_t> indices = ds.test_indices();
    RngStream cap_rng = derive_stream(o.seed, "cli/eval-kld");
    clidetail::cap_indices(indices, o.max_patches, cap_rng);

    std::string csv;
    json summary;
    summary["models"] = json::array();
    std::map<std::string, double> means;
    for (std::size_t m = 0; m < o.models.size(); ++m) {
        NoiseSynthesizer syn;
        syn.kind = kinds[m];
        if (syn.kind == NoiseModelKind::Learned) {
            syn.gen = &st->G;
            syn.enc = st->cfg.use_encoder ? &st->E : nullptr;
            syn.init_noise = st->cfg.init_noise;
        }
        const ModelKlResult r = model_kl_eval(syn, ds, indices, KLConfig{}, o.seed);
        std::ostringstream block;
        write_kl_csv(block, o.models[m], r);
        const std::string s = block.str();
        csv += m == 0 ? s : s.substr(s.find('\n') + 1);  // keep one header
        summary["models"].push_back(kl_summary_json(o.models[m], r));
        means[o.models[m]] = r.mean_kl;
    }

    std::vector<std::string> ascending = o.models;
    std::sort(ascending.begin(), ascending.end(),
              [&](const std::string& a, const std::string& b) { return means[a] < means[b]; });
    summary["kl_ascending"] = ascending;
    if (means.count("learned") && means.count("poisson_gaussian") && means.count("gaussian"))
        summary["expected_ordering_holds"] = means["learned"] < means["poisson_gaussian"] &&
                                             means["poisson_gaussian"] < means["gaussian"];
    summary["n_patches"] = indices.size();
    summary["seed"] = o.seed;

    std::filesystem::create_directories(o.out);
    write_text_atomic(o.out / "kld.csv", csv);
    write_text_atomic(o.out / "kld_summary.json", summary.dump(2) + "\n");
    std::cout << "mean KL:";
    for (const std::string& m : o.models) std::cout << ' ' << m << '=' << fmt_g9(means[m]);
    std::cout << "\n";
}

// ---- export-latents --------------------------------------------------------------

struct ExportLatentsOpts {
    std::filesystem::path checkpoint, data, out;
    int max_per_camera = 0;
    std::uint64_t seed = 1;
};

inline void run_export_latents(const ExportLatentsOpts& o) {
    TrainState st = state_from_checkpoint(load_checkpoint(o.checkpoint));
    const Dataset ds = clidetail::open_dataset(o.data);

    std::map<std::string, std::vector<std::size_t>> by_camera;
    for (std::size_t i : ds.test_indices()) by_camera[ds.manifest().pairs[i].camera].push_back(i);
    RngStream rng = derive_stream(o.seed, "cli/export-latents");
    std::vector<std::size_t> flat;
    std::vector<std::string> labels;
    for (auto& [cam, idxs] : by_camera) {
        clidetail::cap_indices(idxs, o.max_per_camera, rng);
        for (std::size_t i : idxs) {
            flat.push_back(i);
            labels.push_back(cam);
        }
    }
    if (flat.empty()) throw UsageError("export-latents: dataset has no test pairs");

    std::vector<std::vector<float>> latents(flat.size());
    clidetail::parallel_for(flat.size(), clidetail::worker_count(), [&](std::size_t k) {
        latents[k] = encoder_forward(st.E, ds.load(flat[k]).noisy);
    });
    const double ratio = latent_separation(latents, labels);

    std::filesystem::create_directories(o.out);
    std::ostringstream csv;
    write_latents_csv(csv, latents, labels);
    write_text_atomic(o.out / "latents.csv", csv.str());
    json summary;
    summary["separation_ratio"] = ratio;
    summary["n_latents"] = flat.size();
    summary["latent_dim"] = latents[0].size();
    for (const auto& [cam, idxs] : by_camera)
        summary["per_camera_counts"][cam] = idxs.size();
    write_text_atomic(o.out / "latent_summary.json", summary.dump(2) + "\n");
    std::cout << "exported " << flat.size() << " latents; separation ratio " << fmt_g9(ratio)
              << "\n";
}

// ---- train-denoiser --------------------------------------------------------------

struct TrainDenoiserOpts {
    std::filesystem::path config, data, out, noise_checkpoint;
    std::vector<std::string> sets;
};

inline void run_train_denoiser(const TrainDenoiserOpts& o) {
    json j = clidetail::load_config_json(o.config);
    clidetail::apply_set_args(j, o.sets);
    DenoiserConfig cfg = DenoiserConfig::from_json(j);
    const Dataset ds = clidetail::open_dataset(o.data);
    const DenoiserTrainResult res = train_denoiser(cfg, ds, o.noise_checkpoint);

    std::filesystem::create_directories(o.out);
    Denoiser net = res.net;
    save_denoiser_checkpoint(o.out / "denoiser.ngc", cfg, net);
    std::string csv = "step,loss\n";
    for (std::size_t s = 0; s < res.losses.size(); ++s)
        csv += std::to_string(s) + "," + fmt_g9(res.losses[s]) + "\n";
    write_text_atomic(o.out / "losses.csv", csv);
    std::cout << "trained denoiser (" << to_string(cfg.regime) << ", " << res.losses.size()
              << " steps); final loss " << fmt_g9(res.losses.back()) << "; checkpoint "
              << (o.out / "denoiser.ngc").string() << "\n";
}

// ---- eval-denoiser ---------------------------------------------------------------

struct EvalDenoiserOpts {
    std::filesystem::path data, out;
    std::vector<std::string> models;  // NAME=CHECKPOINT
};

inline void run_eval_denoiser(const EvalDenoiserOpts& o) {
    if (o.models.empty()) throw UsageError("eval-denoiser: pass at least one --model NAME=CKPT");
    std::vector<std::pair<std::string, DenoiserLoad>> loaded;
    for (const std::string& spec : o.models) {
        const std::size_t eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw UsageError("eval-denoiser: --model expects NAME=CKPT, got '" + spec + "'");
        const std::string name = spec.substr(0, eq);
        for (const auto& [n, _] : loaded)
            if (n == name) throw UsageError("eval-denoiser: duplicate model name '" + name + "'");
        loaded.emplace_back(name, load_denoiser_checkpoint(spec.substr(eq + 1)));
    }
    const Dataset ds = clidetail::open_dataset(o.data);
    const std::vector<std::size_t>& test = ds.test_indices();
    if (test.empty()) throw UsageError("eval-denoiser: dataset has no test pairs");

    std::map<std::string, DenoiserEval> by_model;
    for (auto& [name, dl] : loaded) {
        std::vector<Tensor> denoised(test.size());
        Denoiser& net = dl.net;
        clidetail::parallel_for(test.size(), clidetail::worker_count(), [&](std::size_t k) {
            denoised[k] = denoise(net, ds.load(test[k]).noisy);
        });
        std::size_t pos = 0;
        by_model[name] = eval_denoiser_with(
            ds, test, [&](const PatchPair&) { return std::move(denoised[pos++]); });
    }

    std::filesystem::create_directories(o.out);
    write_denoiser_csv(o.out / "denoise.csv", by_model);
    std::cout << "overall PSNR:";
    for (const auto& [name, ev] : by_model) std::cout << ' ' << name << '=' << fmt_g9(ev.overall.psnr);
    std::cout << "\n";
}

// ---- report ----------------------------------------------------------------------

struct ReportOpts {
    std::filesystem::path kld, denoise, out;
    bool html = false;
};

inline void run_report(const ReportOpts& o) {
    namespace cd = clidetail;
    if (o.kld.empty() && o.denoise.empty())
        throw UsageError("report: nothing to render (pass --kld and/or --denoise)");
    std::string missing;
    for (const auto& p : {o.kld, o.denoise})
        if (!p.empty() && !std::filesystem::exists(p)) missing += " " + p.string();
    if (!missing.empty()) throw IoError("report: missing input CSVs:" + missing);

    std::string html = "<!doctype html>\n<meta charset=\"utf-8\">\n<title>noise model report"
                       "</title>\n<style>table{border-collapse:collapse;margin:1em 0}"
                       "td,th{border:1px solid #999;padding:4px 8px}caption{font-weight:bold;"
                       "padding:4px}</style>\n";
    std::vector<std::pair<std::filesystem::path, std::string>> outputs;

    if (!o.kld.empty()) {
        const auto rows = cd::read_csv_rows(o.kld);
        if (rows.empty() || rows[0] != std::vector<std::string>{"model", "camera", "scene",
                                                                "kl_mean", "kl_std", "n_patches"})
            throw UsageError("report: " + o.kld.string() + " is not a KL evaluation CSV");
        std::string csv = "model,mean_kl,std_kl,n_patches\n";
        std::vector<std::vector<std::string>> pooled;
        for (std::size_t r = 1; r < rows.size(); ++r)
            if (rows[r].size() == 6 && rows[r][1] == "*") {
                pooled.push_back({rows[r][0], rows[r][3], rows[r][4], rows[r][5]});
                csv += rows[r][0] + "," + rows[r][3] + "," + rows[r][4] + "," + rows[r][5] + "\n";
            }
        outputs.emplace_back(o.out / "report_models.csv", csv);
        html += cd::html_table("noise model KL (lower is better)",
                               {"model", "mean KL", "std", "patches"}, pooled);
    }

    if (!o.denoise.empty()) {
        const auto rows = cd::read_csv_rows(o.denoise);
        if (rows.empty() || rows[0] != std::vector<std::string>{"model", "camera", "psnr", "ssim",
                                                                "n_patches"})
            throw UsageError("report: " + o.denoise.string() + " is not a denoiser evaluation CSV");
        std::vector<std::string> models;
        std::set<std::string> camset;
        std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>> cell;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != 5) continue;
            const std::string& model = rows[r][0];
            if (std::find(models.begin(), models.end(), model) == models.end())
                models.push_back(model);
            if (rows[r][1] != "*") camset.insert(rows[r][1]);
            cell[{model, rows[r][1]}] = {rows[r][2], rows[r][3]};
        }
        std::vector<std::string> header{"model"};
        for (const auto& c : camset) header.push_back("psnr_" + c);
        header.push_back("psnr_overall");
        for (const auto& c : camset) header.push_back("ssim_" + c);
        header.push_back("ssim_overall");
        std::string csv;
        for (std::size_t h = 0; h < header.size(); ++h)
            csv += (h ? "," : "") + header[h];
        csv += "\n";
        std::vector<std::vector<std::string>> table;
        for (const std::string& m : models) {
            std::vector<std::string> row{m};
            for (const auto& c : camset) row.push_back(cell[{m, c}].first);
            row.push_back(cell[{m, "*"}].first);
            for (const auto& c : camset) row.push_back(cell[{m, c}].second);
            row.push_back(cell[{m, "*"}].second);
            table.push_back(row);
            for (std::size_t h = 0; h < row.size(); ++h) csv += (h ? "," : "") + row[h];
            csv += "\n";
        }
        outputs.emplace_back(o.out / "report_denoisers.csv", csv);
        html += cd::html_table("denoiser PSNR/SSIM by training noise source (higher is better)",
                               header, table);
    }

    std::filesystem::create_directories(o.out);
    for (const auto& [path, text] : outputs) write_text_atomic(path, text);
    if (o.html) write_text_atomic(o.out / "report.html", html);
    std::cout << "report rendered to " << o.out.string() << (o.html ? " (with HTML)" : "") << "\n";
}

// ---- entry point -----------------------------------------------------------------

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"virtual-camera noise modeling toolkit"};
    app.require_subcommand(1);

    MakeDatasetOpts md;
    CLI::App* c_md = app.add_subcommand("make-dataset", "synthesize a virtual-camera dataset");
    c_md->add_option("--cameras", md.cameras, "number of virtual cameras (>= 2)");
    c_md->add_option("--scenes-train", md.scenes_train, "train scene ids")->delimiter(',');
    c_md->add_option("--scenes-test", md.scenes_test, "test scene ids")->delimiter(',');
    c_md->add_option("--patches-per-scene", md.patches_per_scene, "patches per (camera, scene)");
    c_md->add_option("--test-patches-per-scene", md.test_patches_per_scene,
                     "test patches per (camera, scene); default same as train");
    c_md->add_option("--gains", md.gains, "analog gains to capture at")->delimiter(',');
    c_md->add_option("--patch-size", md.patch_size, "packed patch size");
    c_md->add_option("--seed", md.seed, "generation seed");
    c_md->add_option("--out", md.out, "output dataset directory")->required();
    c_md->add_flag("--force", md.force, "replace an existing dataset");
    c_md->callback([&] { run_make_dataset(md); });

    TrainOpts tr;
    CLI::App* c_tr = app.add_subcommand("train", "train the noise model");
    c_tr->add_option("--config", tr.config, "training config JSON");
    c_tr->add_option("--set", tr.sets, "config override key=value (repeatable)");
    c_tr->add_option("--data", tr.data, "dataset directory")->required();
    c_tr->add_option("--out", tr.out, "output directory")->required();
    c_tr->add_option("--resume", tr.resume, "checkpoint to resume from");
    c_tr->callback([&] { run_train(tr); });

    SampleNoiseOpts sn;
    CLI::App* c_sn = app.add_subcommand("sample-noise", "draw noise samples from a checkpoint");
    c_sn->add_option("--checkpoint", sn.checkpoint, "noise model checkpoint")->required();
    c_sn->add_option("--data", sn.data, "dataset directory")->required();
    c_sn->add_option("--camera", sn.camera, "camera id to sample")->required();
    c_sn->add_option("--count", sn.count, "number of samples");
    c_sn->add_option("--scale", sn.scale, "noise preview amplification");
    c_sn->add_option("--seed", sn.seed, "sampling seed");
    c_sn->add_option("--out", sn.out, "output directory")->required();
    c_sn->callback([&] { run_sample_noise(sn); });

    EvalKldOpts ek;
    CLI::App* c_ek = app.add_subcommand("eval-kld", "histogram-KL evaluation of noise models");
    c_ek->add_option("--data", ek.data, "dataset directory")->required();
    c_ek->add_option("--models", ek.models, "models to evaluate")->delimiter(',');
    c_ek->add_option("--checkpoint", ek.checkpoint, "noise model checkpoint (learned)");
    c_ek->add_option("--max-patches", ek.max_patches, "cap on test patches (0 = all)");
    c_ek->add_option("--seed", ek.seed, "evaluation seed");
    c_ek->add_option("--out", ek.out, "output directory")->required();
    c_ek->callback([&] { run_eval_kld(ek); });

    ExportLatentsOpts el;
    CLI::App* c_el = app.add_subcommand("export-latents", "encode test patches to latents");
    c_el->add_option("--checkpoint", el.checkpoint, "noise model checkpoint")->required();
    c_el->add_option("--data", el.data, "dataset directory")->required();
    c_el->add_option("--max-per-camera", el.max_per_camera, "cap per camera (0 = all)");
    c_el->add_option("--seed", el.seed, "subset seed");
    c_el->add_option("--out", el.out, "output directory")->required();
    c_el->callback([&] { run_export_latents(el); });

    TrainDenoiserOpts td;
    CLI::App* c_td = app.add_subcommand("train-denoiser", "train the baseline denoiser");
    c_td->add_option("--config", td.config, "denoiser config JSON");
    c_td->add_option("--set", td.sets, "config override key=value (repeatable)");
    c_td->add_option("--data", td.data, "dataset directory")->required();
    c_td->add_option("--noise-checkpoint", td.noise_checkpoint,
                     "noise model checkpoint (learned regimes)");
    c_td->add_option("--out", td.out, "output directory")->required();
    c_td->callback([&] { run_train_denoiser(td); });

    EvalDenoiserOpts ed;
    CLI::App* c_ed = app.add_subcommand("eval-denoiser", "PSNR/SSIM of trained denoisers");
    c_ed->add_option("--data", ed.data, "dataset directory")->required();
    c_ed->add_option("--model", ed.models, "NAME=CKPT (repeatable)")->required();
    c_ed->add_option("--out", ed.out, "output directory")->required();
    c_ed->callback([&] { run_eval_denoiser(ed); });

    ReportOpts rp;
    CLI::App* c_rp = app.add_subcommand("report", "render evaluation CSVs as comparison tables");
    c_rp->add_option("--kld", rp.kld, "kld.csv from eval-kld");
    c_rp->add_option("--denoise", rp.denoise, "denoise.csv from eval-denoiser");
    c_rp->add_flag("--html", rp.html, "also render a static HTML page");
    c_rp->add_option("--out", rp.out, "output directory")->required();
    c_rp->callback([&] { run_report(rp); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ComputeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int cli_main(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.emplace_back("noisegen");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace noisegen
