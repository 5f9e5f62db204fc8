#pragma once
// Joint optimization of the noise generator, critic, and camera encoder:
// anchor/positive/negative sampling, WGAN-GP critic updates, the combined
// generator objective, per-epoch validation KL, and resumable checkpoints.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "evaluation.hpp"
#include "init_noise.hpp"
#include "losses.hpp"
#include "networks.hpp"
#include "optimizer.hpp"

namespace noisegen {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 64;
    int epochs = 300;  // desk-scale runs override to ~30
    int critic_steps = 1;
    LossWeights weights;
    InitNoiseConfig init_noise;
    bool use_fm = true;
    bool use_encoder = true;
    bool use_triplet = true;
    std::uint64_t seed = 1;
    // model/runtime knobs (not part of the published recipe)
    int net_divisor = 4;  // channel widths = reference widths / divisor; 1 = full
    FmReduction fm_reduction = FmReduction::Sum;
    int checkpoint_every = 10;  // epochs
    int val_patches = 128;

    void validate() const {
        if (!(lr > 0.0)) throw UsageError("TrainConfig: lr must be positive");
        if (batch_size <= 0) throw UsageError("TrainConfig: batch_size must be positive");
        if (epochs <= 0) throw UsageError("TrainConfig: epochs must be positive");
        if (critic_steps <= 0) throw UsageError("TrainConfig: critic_steps must be positive");
        if (net_divisor <= 0) throw UsageError("TrainConfig: net_divisor must be positive");
        if (checkpoint_every <= 0) throw UsageError("TrainConfig: checkpoint_every must be positive");
        if (val_patches <= 0) throw UsageError("TrainConfig: val_patches must be positive");
        if (use_triplet && !use_encoder)
            throw UsageError("TrainConfig: use_triplet requires use_encoder");
        weights.validate();
    }

    NetDims dims() const {
        return net_divisor == 1 ? NetDims::paper() : NetDims::scaled(net_divisor);
    }

    json to_json() const {
        json j;
        j["lr"] = lr;
        j["beta1"] = beta1;
        j["beta2"] = beta2;
        j["batch_size"] = batch_size;
        j["epochs"] = epochs;
        j["critic_steps"] = critic_steps;
        j["weights"] = {{"lambda_gp", weights.lambda_gp},
                        {"lambda_fm", weights.lambda_fm},
                        {"lambda_triplet", weights.lambda_triplet},
                        {"margin_alpha", weights.margin_alpha}};
        j["init_noise"] = {{"mode", to_string(init_noise.mode)},
                           {"gaussian_sigma", init_noise.gaussian_sigma}};
        j["use_fm"] = use_fm;
        j["use_encoder"] = use_encoder;
        j["use_triplet"] = use_triplet;
        j["seed"] = seed;
        j["net_divisor"] = net_divisor;
        j["fm_reduction"] = to_string(fm_reduction);
        j["checkpoint_every"] = checkpoint_every;
        j["val_patches"] = val_patches;
        return j;
    }

    static TrainConfig from_json(const json& j) {
        TrainConfig c;
        try {
            for (const auto& [key, val] : j.items()) {
                if (key == "lr") c.lr = val.get<double>();
                else if (key == "beta1") c.beta1 = val.get<double>();
                else if (key == "beta2") c.beta2 = val.get<double>();
                else if (key == "batch_size") c.batch_size = val.get<int>();
                else if (key == "epochs") c.epochs = val.get<int>();
                else if (key == "critic_steps") c.critic_steps = val.get<int>();
                else if (key == "weights") {
                    for (const auto& [wk, wv] : val.items()) {
                        if (wk == "lambda_gp") c.weights.lambda_gp = wv.get<double>();
                        else if (wk == "lambda_fm") c.weights.lambda_fm = wv.get<double>();
                        else if (wk == "lambda_triplet") c.weights.lambda_triplet = wv.get<double>();
                        else if (wk == "margin_alpha") c.weights.margin_alpha = wv.get<double>();
                        else throw UsageError("TrainConfig: unknown weights key '" + wk + "'");
                    }
                } else if (key == "init_noise") {
                    for (const auto& [nk, nv] : val.items()) {
                        if (nk == "mode") c.init_noise.mode = parse_init_noise_mode(nv.get<std::string>());
                        else if (nk == "gaussian_sigma") c.init_noise.gaussian_sigma = nv.get<double>();
                        else throw UsageError("TrainConfig: unknown init_noise key '" + nk + "'");
                    }
                } else if (key == "use_fm") c.use_fm = val.get<bool>();
                else if (key == "use_encoder") c.use_encoder = val.get<bool>();
                else if (key == "use_triplet") c.use_triplet = val.get<bool>();
                else if (key == "seed") c.seed = val.get<std::uint64_t>();
                else if (key == "net_divisor") c.net_divisor = val.get<int>();
                else if (key == "fm_reduction") c.fm_reduction = parse_fm_reduction(val.get<std::string>());
                else if (key == "checkpoint_every") c.checkpoint_every = val.get<int>();
                else if (key == "val_patches") c.val_patches = val.get<int>();
                else throw UsageError("TrainConfig: unknown key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw UsageError(std::string("TrainConfig: malformed value: ") + e.what());
        }
        c.validate();
        return c;
    }

    std::string hash() const { return config_hash_of(to_json()); }
};

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

// One draw of the anchor/positive/negative protocol. noisy_j conditions the
// encoder and anchors the triplet; noisy_k is the same-camera positive;
// noisy_l the other-camera negative (empty on single-camera datasets).
struct TrainingSample {
    Tensor clean, noisy, real_noise;  // pair i of camera s; real = noisy - clean
    Tensor noisy_j, noisy_k, noisy_l;
    NoiseLevelFunction nlf;
    std::string camera_s, camera_t;
};

struct SamplerIndex {
    std::vector<std::size_t> all;  // train-scene pair indices only
    std::map<std::string, std::vector<std::size_t>> by_camera;

    static SamplerIndex build(const Dataset& ds) {
        SamplerIndex idx;
        idx.all = ds.train_indices();
        if (idx.all.empty()) throw std::invalid_argument("SamplerIndex: no train pairs");
        for (std::size_t i : idx.all) idx.by_camera[ds.meta(i).camera].push_back(i);
        for (const auto& [cam, members] : idx.by_camera)
            if (members.size() < 2)
                throw std::invalid_argument("SamplerIndex: camera '" + cam +
                                            "' needs at least 2 train pairs");
        return idx;
    }

    std::size_t cameras() const { return by_camera.size(); }
};

inline std::vector<TrainingSample> sample_batch(const Dataset& ds, const SamplerIndex& idx,
                                                int batch_size, RngStream& rng) {
    if (batch_size <= 0) throw std::invalid_argument("sample_batch: batch_size must be positive");
    std::vector<TrainingSample> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        const std::size_t i = idx.all[rng.below(idx.all.size())];
        const PatchPair anchor = ds.load(i);
        TrainingSample s;
        s.camera_s = anchor.camera;
        s.clean = anchor.clean;
        s.noisy = anchor.noisy;
        s.nlf = anchor.nlf;
        s.real_noise = Tensor(anchor.clean.shape);
        for (std::size_t e = 0; e < s.real_noise.v.size(); ++e)
            s.real_noise.v[e] = anchor.noisy.v[e] - anchor.clean.v[e];

        const std::vector<std::size_t>& same = idx.by_camera.at(s.camera_s);
        std::size_t j = same[rng.below(same.size())];
        while (j == i) j = same[rng.below(same.size())];
        s.noisy_j = ds.load(j).noisy;
        s.noisy_k = ds.load(same[rng.below(same.size())]).noisy;

        if (idx.cameras() > 1) {
            std::size_t l = idx.all[rng.below(idx.all.size())];
            while (ds.meta(l).camera == s.camera_s) l = idx.all[rng.below(idx.all.size())];
            s.camera_t = ds.meta(l).camera;
            s.noisy_l = ds.load(l).noisy;
        }
        batch.push_back(std::move(s));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

struct TrainState {
    TrainConfig cfg;
    Generator G;
    Discriminator D;
    Encoder E;
    Adam<float> opt_gen;     // G, plus E when the encoder is enabled
    Adam<float> opt_critic;  // D
    RngStream rng_sample, rng_noise, rng_gp;
    std::int64_t step = 0;
    int epoch = 0;  // completed epochs
};

inline TrainState make_train_state(const TrainConfig& cfg) {
    cfg.validate();
    const NetDims dims = cfg.dims();
    const AdamConfig opt{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
    return TrainState{cfg,
                      make_generator<float>(dims, cfg.seed),
                      make_discriminator<float>(dims, cfg.seed),
                      make_encoder<float>(dims, cfg.seed),
                      Adam<float>(opt),
                      Adam<float>(opt),
                      derive_stream(cfg.seed, "train/sample"),
                      derive_stream(cfg.seed, "train/noise"),
                      derive_stream(cfg.seed, "train/gp")};
}

struct StepMetrics {
    double l_adv = 0.0, l_fm = 0.0, l_triplet = 0.0, l_critic = 0.0, gp = 0.0;

    bool finite() const {
        return std::isfinite(l_adv) && std::isfinite(l_fm) && std::isfinite(l_triplet) &&
               std::isfinite(l_critic) && std::isfinite(gp);
    }
};

namespace traindetail {

inline Tensor stack_batch(const std::vector<TrainingSample>& batch,
                          const Tensor TrainingSample::*field) {
    const Tensor& first = batch.front().*field;
    if (first.rank() != 3)
        throw std::invalid_argument("stack_batch: patches must be [4,h,w]");
    Shape s{static_cast<int>(batch.size()), first.dim(0), first.dim(1), first.dim(2)};
    Tensor out(s);
    const std::int64_t per = first.size();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor& t = batch[b].*field;
        if (t.shape != first.shape)
            throw std::invalid_argument("stack_batch: inconsistent patch shapes");
        std::copy(t.v.begin(), t.v.end(),
                  out.v.begin() + static_cast<std::int64_t>(b) * per);
    }
    return out;
}

// Seed noise for the whole batch, one heteroscedastic draw per sample with
// its own NLF. Shared by the critic and generator halves of one step.
inline Tensor batch_init_noise(const std::vector<TrainingSample>& batch,
                               const InitNoiseConfig& cfg, RngStream& rng) {
    const Shape ps = batch.front().clean.shape;
    Shape s{static_cast<int>(batch.size()), ps[0], ps[1], ps[2]};
    Tensor out(s);
    const std::int64_t per = shape_numel(ps);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor n = sample_init_noise(batch[b].clean, batch[b].nlf, cfg, rng);
        std::copy(n.v.begin(), n.v.end(), out.v.begin() + static_cast<std::int64_t>(b) * per);
    }
    return out;
}

// Names for Adam state and gradient bookkeeping, keyed by parameter address.
template <typename Net>
void collect_names(Net& net, std::map<const void*, std::string>& names) {
    for_each_tensor(net, [&](const std::string& name, Tensor& t, bool trainable) {
        if (trainable) names[&t] = name;
    });
}

inline void apply_bound_gradients(Graph<float>& g, const ParamBind<float>& bind, int loss,
                                  const std::map<const void*, std::string>& names,
                                  Adam<float>& opt) {
    std::vector<int> wrt;
    wrt.reserve(bind.entries.size());
    for (const auto& [param, node] : bind.entries) wrt.push_back(node);
    const std::vector<int> grads = g.backward(loss, wrt);
    std::vector<ParamGrad<float>> updates;
    updates.reserve(bind.entries.size());
    for (std::size_t k = 0; k < bind.entries.size(); ++k) {
        auto it = names.find(bind.entries[k].first);
        if (it == names.end())
            throw ComputeError("train: bound parameter missing from name table");
        updates.push_back({it->second, bind.entries[k].first, &g.val(grads[k])});
    }
    opt.step(updates);
}

// Current-network noise synthesis in network units for the critic step:
// everything is frozen, so all inputs enter as constants.
inline Tensor synth_fake_net(TrainState& st, const Tensor& clean_b, const Tensor& init_b,
                             const Tensor& latent_b) {
    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int clean_img = to_net_image(g, g.constant(clean_b));
    const int init_net = to_net_noise(g, g.constant(init_b));
    const int res = gen_forward(ctx, st.G, clean_img, init_net, g.constant(latent_b));
    const int fake = g.add(init_net, res);
    return g.val(fake);
}

// Encoder latents with frozen weights, for conditioning the critic-step fake.
inline Tensor frozen_latents(TrainState& st, const Tensor& noisy_b) {
    Graph<float> g;
    BuildCtx<float> ctx{g};
    const int lat = enc_forward(ctx, st.E, to_net_image(g, g.constant(noisy_b)));
    return g.val(lat);
}

}  // namespace traindetail

// Bundles the stacked batch tensors consumed by the two update halves.
struct BatchTensors {
    Tensor clean, real_noise, init_noise, latent;  // latent [N,L]
    Tensor noisy_j, noisy_k, noisy_l;              // encoder inputs (data units)
    bool has_negative = false;
};

inline BatchTensors prepare_batch(TrainState& st, const std::vector<TrainingSample>& batch) {
    using namespace traindetail;
    if (batch.empty()) throw std::invalid_argument("prepare_batch: empty batch");
    const TrainConfig& cfg = st.cfg;
    if (cfg.use_triplet && batch.front().noisy_l.v.empty())
        throw UsageError("train: use_triplet requires a second camera in the dataset");

    BatchTensors bt;
    bt.clean = stack_batch(batch, &TrainingSample::clean);
    bt.real_noise = stack_batch(batch, &TrainingSample::real_noise);
    bt.init_noise = batch_init_noise(batch, cfg.init_noise, st.rng_noise);
    bt.noisy_j = stack_batch(batch, &TrainingSample::noisy_j);
    bt.noisy_k = stack_batch(batch, &TrainingSample::noisy_k);
    bt.has_negative = !batch.front().noisy_l.v.empty();
    if (bt.has_negative) bt.noisy_l = stack_batch(batch, &TrainingSample::noisy_l);
    if (cfg.use_encoder)
        bt.latent = frozen_latents(st, bt.noisy_j);
    else
        bt.latent = Tensor(Shape{static_cast<int>(batch.size()), st.G.dims.latent});
    return bt;
}

// critic_steps WGAN-GP updates of D on one batch (the generator and encoder
// stay frozen). Returns the mean critic loss and penalty over the substeps.
inline StepMetrics critic_update(TrainState& st, const BatchTensors& bt) {
    using namespace traindetail;
    const TrainConfig& cfg = st.cfg;
    std::map<const void*, std::string> names;
    collect_names(st.D, names);

    const Tensor fake_value = synth_fake_net(st, bt.clean, bt.init_noise, bt.latent);
    Tensor real_net = bt.real_noise;
    for (float& v : real_net.v) v *= 2.0f;  // data noise -> network units

    StepMetrics m;
    for (int k = 0; k < cfg.critic_steps; ++k) {
        sn_refresh_all(st.D);
        Graph<float> g;
        ParamBind<float> bind;
        BuildCtx<float> ctx{g, &bind};
        const int clean_img = to_net_image(g, g.constant(bt.clean));
        const int fake = g.constant(fake_value);
        const int real = g.constant(real_net);
        const int sf = disc_forward(ctx, st.D, fake, clean_img).scores;
        const int sr = disc_forward(ctx, st.D, real, clean_img).scores;
        const GpBuild<float> gpb =
            gradient_penalty_node(ctx, st.D, fake_value, real_net, clean_img, st.rng_gp);
        const int loss = critic_loss_node(g, sf, sr, gpb.penalty,
                                          static_cast<float>(cfg.weights.lambda_gp));
        m.l_critic += static_cast<double>(g.val(loss)[0]);
        m.gp += static_cast<double>(g.val(gpb.penalty)[0]);
        apply_bound_gradients(g, bind, loss, names, st.opt_critic);
    }
    m.l_critic /= cfg.critic_steps;
    m.gp /= cfg.critic_steps;
    return m;
}

// One joint G(+E) update on the same batch (the critic stays frozen: its
// parameters enter the graph as constants, so no generator-side term can
// accumulate into D).
inline StepMetrics gen_update(TrainState& st, const BatchTensors& bt) {
    using namespace traindetail;
    const TrainConfig& cfg = st.cfg;
    std::map<const void*, std::string> names;
    collect_names(st.G, names);
    if (cfg.use_encoder) collect_names(st.E, names);

    sn_refresh_all(st.G);
    if (cfg.use_encoder) sn_refresh_all(st.E);

    Graph<float> g;
    ParamBind<float> bind;
    BuildCtx<float> ctx{g, &bind};      // G and E parameters become leaves
    BuildCtx<float> frozen{g, nullptr};  // D parameters become constants

    const int clean_img = to_net_image(g, g.constant(bt.clean));
    const int init_net = to_net_noise(g, g.constant(bt.init_noise));

    int latent = -1;
    if (cfg.use_encoder)
        latent = enc_forward(ctx, st.E, to_net_image(g, g.constant(bt.noisy_j)));
    else
        latent = g.constant(bt.latent);  // zeros vector per sample

    const int res = gen_forward(ctx, st.G, clean_img, init_net, latent);
    const int fake = g.add(init_net, res);

    const DiscOut<float> df = disc_forward(frozen, st.D, fake, clean_img);
    const int adv = adv_loss_g_node(g, df.scores);

    int fm = -1;
    if (cfg.use_fm) {
        const int clean_as_noise = to_net_noise(g, g.constant(bt.clean));
        const DiscOut<float> dr = disc_forward(frozen, st.D, clean_as_noise, clean_img);
        fm = feature_matching_node(g, df.features, dr.features, cfg.fm_reduction);
    }

    int triplet = -1;
    if (cfg.use_triplet) {
        const int pos = enc_forward(ctx, st.E, to_net_image(g, g.constant(bt.noisy_k)));
        const int neg = enc_forward(ctx, st.E, to_net_image(g, g.constant(bt.noisy_l)));
        triplet = triplet_loss_node(g, latent, pos, neg,
                                    static_cast<float>(cfg.weights.margin_alpha));
    }

    const int loss = full_generator_loss_node(g, adv, fm, triplet, cfg.weights);

    StepMetrics m;
    m.l_adv = static_cast<double>(g.val(adv)[0]);
    if (fm >= 0) m.l_fm = static_cast<double>(g.val(fm)[0]);
    if (triplet >= 0) m.l_triplet = static_cast<double>(g.val(triplet)[0]);
    apply_bound_gradients(g, bind, loss, names, st.opt_gen);
    return m;
}

// critic_steps D-updates, then one joint G(+E) update, all on one batch.
inline StepMetrics train_step(TrainState& st, const std::vector<TrainingSample>& batch) {
    const BatchTensors bt = prepare_batch(st, batch);
    StepMetrics m = critic_update(st, bt);
    const StepMetrics gm = gen_update(st, bt);
    m.l_adv = gm.l_adv;
    m.l_fm = gm.l_fm;
    m.l_triplet = gm.l_triplet;
    ++st.step;
    return m;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline constexpr const char* kModelCheckpointKind = "noise_model";

inline Checkpoint state_to_checkpoint(TrainState& st, const std::string& kind) {
    Checkpoint ck;
    ck.kind = kind;
    ck.config_hash = st.cfg.hash();
    ck.epoch = st.epoch;
    ck.strings["config"] = st.cfg.to_json().dump();
    ck.strings["rng_sample"] = st.rng_sample.serialize();
    ck.strings["rng_noise"] = st.rng_noise.serialize();
    ck.strings["rng_gp"] = st.rng_gp.serialize();
    ck.strings["step"] = std::to_string(st.step);
    store_net_tensors(ck, st.G);
    store_net_tensors(ck, st.D);
    store_net_tensors(ck, st.E);
    st.opt_gen.save_into(ck.tensors, "opt_g/");
    st.opt_critic.save_into(ck.tensors, "opt_d/");
    return ck;
}

inline TrainState state_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != kModelCheckpointKind && ck.kind != "diagnostic")
        throw IoError("checkpoint kind '" + ck.kind + "' is not a trainable model");
    TrainConfig cfg;
    try {
        cfg = TrainConfig::from_json(json::parse(ck.strings.at("config")));
    } catch (const std::out_of_range&) {
        throw IoError("checkpoint is missing its embedded config");
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint config is corrupt: ") + e.what());
    }
    TrainState st = make_train_state(cfg);
    restore_net_tensors(ck, st.G);
    restore_net_tensors(ck, st.D);
    restore_net_tensors(ck, st.E);
    st.opt_gen.load_from(ck.tensors, "opt_g/");
    st.opt_critic.load_from(ck.tensors, "opt_d/");
    st.rng_sample.deserialize(ck.strings.at("rng_sample"));
    st.rng_noise.deserialize(ck.strings.at("rng_noise"));
    st.rng_gp.deserialize(ck.strings.at("rng_gp"));
    st.step = std::stoll(ck.strings.at("step"));
    st.epoch = ck.epoch;
    return st;
}

// ---------------------------------------------------------------------------
// Validation and the epoch driver
// ---------------------------------------------------------------------------

// Evenly spaced held-out subset, fixed across epochs for comparability.
inline std::vector<std::size_t> validation_subset(const Dataset& ds, int max_patches) {
    const std::vector<std::size_t>& test = ds.test_indices();
    if (test.empty()) throw std::invalid_argument("validation_subset: no test pairs");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(max_patches), test.size());
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t r = 0; r < k; ++r) out.push_back(test[r * test.size() / k]);
    return out;
}

inline double validation_kl(TrainState& st, const Dataset& ds,
                            const std::vector<std::size_t>& subset, int epoch) {
    NoiseSynthesizer synth;
    synth.kind = NoiseModelKind::Learned;
    synth.gen = &st.G;
    synth.enc = st.cfg.use_encoder ? &st.E : nullptr;
    synth.init_noise = st.cfg.init_noise;
    const std::uint64_t vseed = splitmix64(st.cfg.seed ^ (0x76616cULL + static_cast<std::uint64_t>(epoch)));
    return model_kl_eval(synth, ds, subset, KLConfig{}, vseed).mean_kl;
}

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_csv;
    int epochs_run = 0;
};

// Epoch driver: samples train-scene batches, steps, validates on held-out
// patches, appends metrics rows, and checkpoints periodically (atomically).
// A non-finite loss aborts with a diagnostic snapshot.
inline TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                         const std::filesystem::path& out_dir,
                         const std::filesystem::path& resume = {}) {
    namespace fs = std::filesystem;
    cfg.validate();

    TrainState st = resume.empty() ? make_train_state(cfg)
                                   : state_from_checkpoint(load_checkpoint(resume));
    if (!resume.empty() && st.cfg.hash() != cfg.hash())
        throw UsageError("train: resume checkpoint was produced by a different config");

    const SamplerIndex idx = SamplerIndex::build(ds);
    if (cfg.use_triplet && idx.cameras() < 2)
        throw UsageError("train: use_triplet requires at least 2 cameras, dataset has " +
                         std::to_string(idx.cameras()));
    const std::vector<std::size_t> val_idx = validation_subset(ds, cfg.val_patches);
    const int steps_per_epoch =
        std::max<int>(1, static_cast<int>(idx.all.size()) / cfg.batch_size);

    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "metrics.csv";
    const bool fresh_csv = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw IoError("cannot open metrics log: " + csv_path.string());
    if (fresh_csv) csv << "epoch,l_adv,l_fm,l_triplet,l_critic,gp,val_kl,wall_time\n";

    const auto t0 = std::chrono::steady_clock::now();
    while (st.epoch < cfg.epochs) {
        StepMetrics acc;
        for (int s = 0; s < steps_per_epoch; ++s) {
            const std::vector<TrainingSample> batch =
                sample_batch(ds, idx, cfg.batch_size, st.rng_sample);
            const StepMetrics m = train_step(st, batch);
            if (!m.finite()) {
                const fs::path snap = out_dir / "diagnostic.ngc";
                Checkpoint ck = state_to_checkpoint(st, "diagnostic");
                ck.strings["failed_at"] = "epoch " + std::to_string(st.epoch + 1) + " step " +
                                          std::to_string(st.step);
                save_checkpoint(snap, ck);
                throw ComputeError("train: non-finite loss at epoch " +
                                   std::to_string(st.epoch + 1) + " step " +
                                   std::to_string(st.step) + "; diagnostic snapshot: " +
                                   snap.string());
            }
            acc.l_adv += m.l_adv;
            acc.l_fm += m.l_fm;
            acc.l_triplet += m.l_triplet;
            acc.l_critic += m.l_critic;
            acc.gp += m.gp;
        }
        ++st.epoch;
        const double inv = 1.0 / steps_per_epoch;
        const double val_kl = validation_kl(st, ds, val_idx, st.epoch);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        csv << st.epoch << ',' << fmt_g9(acc.l_adv * inv) << ',' << fmt_g9(acc.l_fm * inv) << ','
            << fmt_g9(acc.l_triplet * inv) << ',' << fmt_g9(acc.l_critic * inv) << ','
            << fmt_g9(acc.gp * inv) << ',' << fmt_g9(val_kl) << ',' << fmt_g9(wall) << '\n';
        csv.flush();

        if (st.epoch % cfg.checkpoint_every == 0 && st.epoch != cfg.epochs) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_e%04d.ngc", st.epoch);
            save_checkpoint(out_dir / name, state_to_checkpoint(st, kModelCheckpointKind));
        }
    }

    const fs::path final_path = out_dir / "model_final.ngc";
    save_checkpoint(final_path, state_to_checkpoint(st, kModelCheckpointKind));
    return {final_path, csv_path, st.epoch};
}

}  // namespace noisegen
