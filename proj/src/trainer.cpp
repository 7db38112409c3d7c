#include "facefill/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace facefill {

namespace {

constexpr uint64_t kBootstrapSalt = 0xb007ull;

real now_ms() {
    using namespace std::chrono;
    return static_cast<real>(
               duration_cast<microseconds>(steady_clock::now().time_since_epoch()).count()) /
           1000.0;
}

std::vector<MaskKind> parse_kinds(const std::vector<std::string>& names) {
    std::vector<MaskKind> kinds;
    for (const auto& n : names) kinds.push_back(mask_kind_from_string(n));
    return kinds;
}

Dataset build_dataset(const RunConfig& cfg) {
    DatasetOptions opts = cfg.dataset_options();
    if (cfg.data_root.empty())
        return Dataset::synthetic(cfg.synthetic_count, cfg.image_height, cfg.image_width,
                                  Rng::derive(cfg.seed, 0xdaull), opts);
    return Dataset::load(cfg.data_root, cfg.split, opts);
}

std::vector<MaskedSample> make_batch(const Dataset& ds, int batch_size, std::int64_t step) {
    std::vector<MaskedSample> batch;
    batch.reserve(static_cast<size_t>(batch_size));
    for (int j = 0; j < batch_size; ++j) {
        const size_t i =
            static_cast<size_t>((static_cast<std::int64_t>(batch_size) * step + j) %
                                static_cast<std::int64_t>(ds.size()));
        batch.push_back(ds.sample_with_salt(i, static_cast<uint64_t>(step)));
    }
    return batch;
}

void stack_joint_batch(const std::vector<MaskedSample>& batch, Tensor& queries, Tensor& masks) {
    const int B = static_cast<int>(batch.size());
    const int H = batch[0].target.dim(1), W = batch[0].target.dim(2);
    queries = Tensor(Shape{B, 3, H, W});
    masks = Tensor(Shape{B, 1, H, W});
    for (int b = 0; b < B; ++b) {
        const auto& s = batch[static_cast<size_t>(b)];
        std::copy(s.query.data(), s.query.data() + s.query.size(),
                  queries.data() + static_cast<std::int64_t>(b) * 3 * H * W);
        std::copy(s.mask.data(), s.mask.data() + s.mask.size(),
                  masks.data() + static_cast<std::int64_t>(b) * H * W);
    }
}

// Weighted group contributions; their sum is the logged total.
std::map<std::string, real> log_values(const LossBreakdown& bd, const LossWeights& w, real lr,
                                       real wall_ms) {
    real rec = 0.0, uv = 0.0;
    for (int k : w.structure_scales) {
        rec += bd.rec.at(k);
        uv += bd.uv.at(k);
    }
    const real inv_p = 1.0 / static_cast<real>(w.structure_scales.size());
    rec *= w.rec * inv_p;
    uv *= w.uv * inv_p;
    real style = 0.0, ip = 0.0;
    if (!w.texture_scales.empty()) {
        for (int k : w.texture_scales) {
            style += bd.style.at(k);
            ip += bd.ip.at(k);
        }
        const real inv_q = 1.0 / static_cast<real>(w.texture_scales.size());
        style *= w.style * inv_q;
        ip *= w.ip * inv_q;
    }
    return {{"total", bd.total}, {"rec", rec},     {"uv", uv},        {"style", style},
            {"ip", ip},          {"lr", lr},       {"wall_ms", wall_ms}};
}

bool plateau_reached(const std::vector<real>& losses, int window, real min_improvement) {
    if (static_cast<int>(losses.size()) < 2 * window) return false;
    real prev = 0.0, curr = 0.0;
    const size_t n = losses.size();
    for (int i = 0; i < window; ++i) {
        prev += losses[n - 2 * static_cast<size_t>(window) + static_cast<size_t>(i)];
        curr += losses[n - static_cast<size_t>(window) + static_cast<size_t>(i)];
    }
    prev /= window;
    curr /= window;
    if (prev <= 0.0) return true;
    return (prev - curr) / prev < min_improvement;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig JSON
// ---------------------------------------------------------------------------

std::string RunConfig::to_json() const {
    ordered_json j;
    j["stage"] = stage;
    j["data_root"] = data_root;
    j["split"] = split;
    j["synthetic_count"] = synthetic_count;
    j["image_height"] = image_height;
    j["image_width"] = image_width;
    j["mask_kinds"] = mask_kinds;
    j["coverage_lo"] = coverage_lo;
    j["coverage_hi"] = coverage_hi;
    j["encoder"] = {{"in_channels", encoder.in_channels},
                    {"base_width", encoder.base_width},
                    {"num_stages", encoder.num_stages},
                    {"embed_dim", encoder.embed_dim},
                    {"max_width", encoder.max_width}};
    j["decoder"] = {{"num_scales", decoder.num_scales},
                    {"output_scales", decoder.output_scales},
                    {"daf_reduction", decoder.daf_reduction},
                    {"daf_hidden", decoder.daf_hidden}};
    j["contrastive"] = {{"temperature", contrastive.temperature},
                        {"momentum", contrastive.momentum},
                        {"queue_capacity", contrastive.queue_capacity}};
    j["loss"] = {{"lambda_rec", loss.rec},
                 {"lambda_uv", loss.uv},
                 {"lambda_style", loss.style},
                 {"lambda_ip", loss.ip},
                 {"structure_scales", loss.structure_scales},
                 {"texture_scales", loss.texture_scales}};
    j["extractor_seed"] = extractor_seed;
    j["embedder_seed"] = embedder_seed;
    j["pretrain_lr"] = pretrain_lr;
    j["joint_lr"] = joint_lr;
    j["use_contrastive_init"] = use_contrastive_init;
    j["use_daf"] = use_daf;
    j["use_uv"] = use_uv;
    j["seed"] = seed;
    j["steps"] = steps;
    j["batch_size"] = batch_size;
    j["checkpoint_every"] = checkpoint_every;
    j["plateau_enabled"] = plateau_enabled;
    j["plateau_window"] = plateau_window;
    j["plateau_min_improvement"] = plateau_min_improvement;
    j["out_dir"] = out_dir;
    j["pretrain_checkpoint"] = pretrain_checkpoint;
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid config JSON: ") + e.what());
    }
    RunConfig c;
    c.stage = j.value("stage", c.stage);
    c.data_root = j.value("data_root", c.data_root);
    c.split = j.value("split", c.split);
    c.synthetic_count = j.value("synthetic_count", c.synthetic_count);
    c.image_height = j.value("image_height", c.image_height);
    c.image_width = j.value("image_width", c.image_width);
    if (j.contains("mask_kinds")) c.mask_kinds = j["mask_kinds"].get<std::vector<std::string>>();
    c.coverage_lo = j.value("coverage_lo", c.coverage_lo);
    c.coverage_hi = j.value("coverage_hi", c.coverage_hi);
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        c.encoder.in_channels = e.value("in_channels", c.encoder.in_channels);
        c.encoder.base_width = e.value("base_width", c.encoder.base_width);
        c.encoder.num_stages = e.value("num_stages", c.encoder.num_stages);
        c.encoder.embed_dim = e.value("embed_dim", c.encoder.embed_dim);
        c.encoder.max_width = e.value("max_width", c.encoder.max_width);
    }
    if (j.contains("decoder")) {
        const auto& d = j["decoder"];
        c.decoder.num_scales = d.value("num_scales", c.decoder.num_scales);
        if (d.contains("output_scales"))
            c.decoder.output_scales = d["output_scales"].get<std::vector<int>>();
        c.decoder.daf_reduction = d.value("daf_reduction", c.decoder.daf_reduction);
        c.decoder.daf_hidden = d.value("daf_hidden", c.decoder.daf_hidden);
    }
    if (j.contains("contrastive")) {
        const auto& t = j["contrastive"];
        c.contrastive.temperature = t.value("temperature", c.contrastive.temperature);
        c.contrastive.momentum = t.value("momentum", c.contrastive.momentum);
        c.contrastive.queue_capacity = t.value("queue_capacity", c.contrastive.queue_capacity);
    }
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        c.loss.rec = l.value("lambda_rec", c.loss.rec);
        c.loss.uv = l.value("lambda_uv", c.loss.uv);
        c.loss.style = l.value("lambda_style", c.loss.style);
        c.loss.ip = l.value("lambda_ip", c.loss.ip);
        if (l.contains("structure_scales"))
            c.loss.structure_scales = l["structure_scales"].get<std::vector<int>>();
        if (l.contains("texture_scales"))
            c.loss.texture_scales = l["texture_scales"].get<std::vector<int>>();
    }
    c.extractor_seed = j.value("extractor_seed", c.extractor_seed);
    c.embedder_seed = j.value("embedder_seed", c.embedder_seed);
    c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
    c.joint_lr = j.value("joint_lr", c.joint_lr);
    c.use_contrastive_init = j.value("use_contrastive_init", c.use_contrastive_init);
    c.use_daf = j.value("use_daf", c.use_daf);
    c.use_uv = j.value("use_uv", c.use_uv);
    c.seed = j.value("seed", c.seed);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.plateau_enabled = j.value("plateau_enabled", c.plateau_enabled);
    c.plateau_window = j.value("plateau_window", c.plateau_window);
    c.plateau_min_improvement = j.value("plateau_min_improvement", c.plateau_min_improvement);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.pretrain_checkpoint = j.value("pretrain_checkpoint", c.pretrain_checkpoint);
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

DatasetOptions RunConfig::dataset_options() const {
    DatasetOptions o;
    o.shuffle_seed = Rng::derive(seed, 0x5fful);
    o.mask_seed = Rng::derive(seed, 0x3a5ull);
    o.mask_kinds = parse_kinds(mask_kinds);
    o.coverage_lo = coverage_lo;
    o.coverage_hi = coverage_hi;
    return o;
}

void RunConfig::validate() const {
    if (stage != "pretrain" && stage != "joint")
        throw ConfigError("stage must be 'pretrain' or 'joint'");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!(coverage_lo > 0.0) || coverage_hi > 0.6 || coverage_lo > coverage_hi)
        throw ConfigError("coverage range must satisfy 0 < lo <= hi <= 0.6");
    encoder.validate();
    contrastive.validate();
    loss.validate();
    if (stage == "joint") {
        decoder.validate(encoder);
        for (int k : loss.structure_scales)
            if (!decoder.emits(k))
                throw ConfigError("loss scale " + std::to_string(k) +
                                  " has no decoder output configured");
    }
    encoder.check_input(image_height, image_width);
    parse_kinds(mask_kinds);
}

// ---------------------------------------------------------------------------
// TrainingLog
// ---------------------------------------------------------------------------

TrainingLog::TrainingLog(const std::string& path) : path_(path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path_, std::ios::trunc);
    if (!os) throw StateError("cannot open log file " + path_);
}

void TrainingLog::append(std::int64_t step, const std::map<std::string, real>& values) {
    if (step <= last_step_) throw StateError("log steps must be strictly increasing");
    last_step_ = step;
    ordered_json j;
    j["step"] = step;
    for (const auto& [k, v] : values) j[k] = v;
    std::ofstream os(path_, std::ios::app);
    os << j.dump() << "\n";
    records_.push_back({step, values});
}

std::vector<LogRecord> TrainingLog::read(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw StateError("cannot read log file " + path);
    std::vector<LogRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = ordered_json::parse(line);
        LogRecord r;
        r.step = j.at("step").get<std::int64_t>();
        for (const auto& [k, v] : j.items())
            if (k != "step") r.values[k] = v.get<real>();
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

StageResult run_pretrain(const RunConfig& cfg, const std::string& resume_from) {
    configure_threading();
    RunConfig c = cfg;
    c.stage = "pretrain";
    c.validate();
    fs::create_directories(c.out_dir);

    const Dataset ds = build_dataset(c);
    PretrainModel model(c.encoder, c.contrastive, c.seed);
    Sgd opt(c.pretrain_lr);

    std::int64_t start_step = 0;
    if (!resume_from.empty()) {
        const Archive a = Archive::load(resume_from);
        a.load_params("params.q.", model.query_params);
        a.load_params("params.k.", model.key_params);
        model.queue.restore(a.get("queue.entries"), static_cast<int>(a.get_scalar("queue.head")),
                            static_cast<int>(a.get_scalar("queue.filled")));
        start_step = static_cast<std::int64_t>(a.get_scalar("step"));
    } else {
        // Seed the dictionary with keys from a reserved bootstrap batch so
        // the first real step already sees a non-empty queue.
        std::vector<MaskedSample> boot;
        for (int j = 0; j < c.batch_size; ++j)
            boot.push_back(ds.sample_with_salt(static_cast<size_t>(j) % ds.size(),
                                               kBootstrapSalt));
        Tensor keys(Shape{c.batch_size, 3, c.image_height, c.image_width});
        for (int b = 0; b < c.batch_size; ++b) {
            const Tensor& k = boot[static_cast<size_t>(b)].key;
            std::copy(k.data(), k.data() + k.size(), keys.data() + b * k.size());
        }
        NoGradGuard ng;
        model.queue.enqueue(model.key_encoder.encode(keys).value());
    }

    auto save = [&](std::int64_t step, const std::string& path) {
        Archive a;
        a.texts["kind"] = "pretrain";
        a.texts["config"] = c.to_json();
        a.put_params("params.q.", model.query_params);
        a.put_params("params.k.", model.key_params);
        a.tensors["queue.entries"] = model.queue.entries();
        a.put_scalar("queue.head", model.queue.head());
        a.put_scalar("queue.filled", model.queue.filled());
        a.put_scalar("step", static_cast<real>(step));
        a.save(path);
    };

    TrainingLog log((fs::path(c.out_dir) / "pretrain_log.jsonl").string());
    std::vector<real> losses;
    std::int64_t step = start_step;
    for (step = start_step + 1; step <= c.steps; ++step) {
        const real t0 = now_ms();
        const auto batch_samples = make_batch(ds, c.batch_size, step - 1);
        std::vector<ContrastivePair> batch;
        for (const auto& s : batch_samples)
            batch.push_back({s.query, s.key, s.mask, s.mask});
        const real loss = model.pretrain_step(batch, opt);
        losses.push_back(loss);
        log.append(step, {{"info_nce", loss}, {"lr", c.pretrain_lr}, {"wall_ms", now_ms() - t0}});
        if (c.checkpoint_every > 0 && step % c.checkpoint_every == 0)
            save(step, (fs::path(c.out_dir) / ("pretrain_step_" + std::to_string(step) + ".ckpt"))
                           .string());
        if (c.plateau_enabled &&
            plateau_reached(losses, c.plateau_window, c.plateau_min_improvement))
            break;
    }
    if (step > c.steps) step = c.steps;

    StageResult result;
    result.checkpoint_path = (fs::path(c.out_dir) / "pretrain_final.ckpt").string();
    save(step, result.checkpoint_path);
    result.records = log.records();
    result.final_step = step;
    return result;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

namespace {

StageResult run_joint_impl(const RunConfig& cfg, const std::string& resume_from,
                           const std::function<void(std::int64_t, const Generator&)>& on_step) {
    configure_threading();
    RunConfig c = cfg;
    c.stage = "joint";
    c.validate();
    if (c.use_contrastive_init && c.pretrain_checkpoint.empty() && resume_from.empty())
        throw ConfigError("use_contrastive_init requires a stage-1 checkpoint");
    fs::create_directories(c.out_dir);

    const Dataset ds = build_dataset(c);
    Generator gen(c.encoder, c.decoder, c.use_daf, c.use_uv, c.seed);
    if (c.use_contrastive_init && resume_from.empty())
        gen.load_pretrained_encoder(Archive::load(c.pretrain_checkpoint));

    const FeatureExtractor phi(c.extractor_seed);
    const IdentityEmbedder psi(c.embedder_seed);
    Adam opt(c.joint_lr);

    std::int64_t start_step = 0;
    if (!resume_from.empty()) {
        const Archive a = Archive::load(resume_from);
        a.load_params("params.g.", gen.params);
        start_step = static_cast<std::int64_t>(a.get_scalar("step"));
        const auto t = static_cast<std::int64_t>(a.get_scalar("adam.t"));
        std::vector<Tensor> m(gen.params.size()), v(gen.params.size());
        for (size_t i = 0; i < gen.params.size(); ++i) {
            const std::string suffix = "." + std::to_string(i);
            if (a.has("adam.m" + suffix)) {
                m[i] = a.get("adam.m" + suffix);
                v[i] = a.get("adam.v" + suffix);
            }
        }
        opt.restore(std::move(m), std::move(v), t);
    }

    auto save = [&](std::int64_t step, const std::string& path) {
        Archive a;
        a.texts["kind"] = "joint";
        a.texts["config"] = c.to_json();
        a.put_params("params.g.", gen.params);
        a.put_scalar("step", static_cast<real>(step));
        a.put_scalar("adam.t", static_cast<real>(opt.steps_taken()));
        for (size_t i = 0; i < opt.first_moments().size(); ++i) {
            if (opt.first_moments()[i].empty()) continue;
            const std::string suffix = "." + std::to_string(i);
            a.tensors["adam.m" + suffix] = opt.first_moments()[i];
            a.tensors["adam.v" + suffix] = opt.second_moments()[i];
        }
        a.save(path);
    };

    TrainingLog log((fs::path(c.out_dir) / "joint_log.jsonl").string());
    std::vector<real> losses;
    std::int64_t step = start_step;
    for (step = start_step + 1; step <= c.steps; ++step) {
        const real t0 = now_ms();
        const auto batch = make_batch(ds, c.batch_size, step - 1);
        Tensor queries, masks;
        stack_joint_batch(batch, queries, masks);
        const MultiScaleOutput out = gen.generate(queries, masks);
        const ScaleTargets targets = build_scale_targets(batch, c.loss, c.use_uv);
        auto [loss, breakdown] = total_loss(out, targets, c.loss, phi, psi);
        gen.params.zero_grad();
        loss.backward();
        opt.step(gen.params);
        losses.push_back(breakdown.total);
        log.append(step, log_values(breakdown, c.loss, c.joint_lr, now_ms() - t0));
        if (on_step) on_step(step, gen);
        if (c.checkpoint_every > 0 && step % c.checkpoint_every == 0)
            save(step,
                 (fs::path(c.out_dir) / ("joint_step_" + std::to_string(step) + ".ckpt")).string());
        if (c.plateau_enabled &&
            plateau_reached(losses, c.plateau_window, c.plateau_min_improvement))
            break;
    }
    if (step > c.steps) step = c.steps;

    StageResult result;
    result.checkpoint_path = (fs::path(c.out_dir) / "joint_final.ckpt").string();
    save(step, result.checkpoint_path);
    result.records = log.records();
    result.final_step = step;
    return result;
}

}  // namespace

StageResult run_joint(const RunConfig& cfg, const std::string& resume_from) {
    return run_joint_impl(cfg, resume_from, nullptr);
}

LoadedGenerator load_generator(const std::string& checkpoint_path) {
    const Archive a = Archive::load(checkpoint_path);
    const auto kind = a.texts.find("kind");
    if (kind == a.texts.end() || kind->second != "joint")
        throw CheckpointError(checkpoint_path + " is not a joint checkpoint");
    const auto config = a.texts.find("config");
    if (config == a.texts.end()) throw CheckpointError("checkpoint lacks embedded config");
    LoadedGenerator lg;
    lg.config = RunConfig::from_json(config->second);
    lg.generator = std::make_unique<Generator>(lg.config.encoder, lg.config.decoder,
                                               lg.config.use_daf, lg.config.use_uv,
                                               lg.config.seed);
    a.load_params("params.g.", lg.generator->params);
    return lg;
}

// ---------------------------------------------------------------------------
// Smoke experiment
// ---------------------------------------------------------------------------

real heldout_uv_mse(const Generator& generator, const Dataset& heldout) {
    if (!generator.use_uv) throw StateError("generator has no UV heads");
    NoGradGuard ng;
    real total = 0.0;
    for (size_t i = 0; i < heldout.size(); ++i) {
        const MaskedSample s = heldout.sample(i);
        if (!s.uv_gt) continue;
        const int H = s.target.dim(1), W = s.target.dim(2);
        const MultiScaleOutput out = generator.generate(
            s.query.reshaped(Shape{1, 3, H, W}), s.mask.reshaped(Shape{1, 1, H, W}));
        const Tensor pred = out.at_scale(1).uv.value();
        const UVField& gt = *s.uv_gt;
        real err = 0.0, count = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (gt.validity.at(y, x) == 0.0) continue;
                const real du = pred.at(0, 0, y, x) - gt.u.at(y, x);
                const real dv = pred.at(0, 1, y, x) - gt.v.at(y, x);
                err += du * du + dv * dv;
                count += 2.0;
            }
        if (count > 0.0) total += err / count;
    }
    return total / static_cast<real>(heldout.size());
}

std::string SmokeReport::to_json() const {
    ordered_json j;
    j["loss_step1"] = loss_step1;
    j["loss_final"] = loss_final;
    j["loss_ratio"] = loss_ratio;
    j["masked_input_psnr"] = masked_input_psnr;
    j["restored_psnr"] = restored_psnr;
    j["psnr_gain_db"] = psnr_gain_db;
    j["uv_mse_step1"] = uv_mse_step1;
    j["uv_mse_final"] = uv_mse_final;
    j["eval"] = {{"psnr_mean", evaluation.psnr_mean},
                 {"ssim_mean", evaluation.ssim_mean},
                 {"frechet", evaluation.frechet},
                 {"auc", evaluation.auc},
                 {"tpr_at_1pct", evaluation.tpr_at_1pct},
                 {"tpr_at_0p1pct", evaluation.tpr_at_0p1pct}};
    j["pretrain_log"] = pretrain_log_path;
    j["joint_log"] = joint_log_path;
    j["checkpoint"] = checkpoint_path;
    return j.dump(2);
}

SmokeReport run_smoke_experiment(uint64_t seed, const std::string& out_dir) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    cfg.synthetic_count = 64;
    cfg.image_height = 128;
    cfg.image_width = 128;
    cfg.encoder.base_width = 16;
    cfg.encoder.max_width = 64;
    cfg.encoder.embed_dim = 128;
    cfg.decoder.daf_reduction = 8;
    cfg.decoder.daf_hidden = 8;
    cfg.contrastive.queue_capacity = 512;
    cfg.extractor_seed = Rng::derive(seed, 0x11ull);
    cfg.embedder_seed = Rng::derive(seed, 0x12ull);

    // Stage 1.
    cfg.stage = "pretrain";
    cfg.steps = 100;
    cfg.batch_size = 8;
    const StageResult pre = run_pretrain(cfg);

    // Held-out synthetic faces with an independent seed stream.
    DatasetOptions heldout_opts = cfg.dataset_options();
    heldout_opts.mask_seed = Rng::derive(seed, 0x31ull);
    heldout_opts.shuffle_seed = Rng::derive(seed, 0x32ull);
    const Dataset heldout = Dataset::synthetic(16, cfg.image_height, cfg.image_width,
                                               Rng::derive(seed, 0x33ull), heldout_opts);

    // Stage 2 with a probe after the first optimizer step. The step budget
    // is short, so the smoke run uses a learning rate sized for it.
    cfg.stage = "joint";
    cfg.steps = 200;
    cfg.batch_size = 4;
    cfg.joint_lr = 1e-3;
    cfg.pretrain_checkpoint = pre.checkpoint_path;
    SmokeReport report;
    report.uv_mse_step1 = -1.0;
    const StageResult joint = run_joint_impl(cfg, "", [&](std::int64_t step, const Generator& g) {
        if (step == 1) report.uv_mse_step1 = heldout_uv_mse(g, heldout);
    });

    report.loss_step1 = joint.records.front().values.at("total");
    report.loss_final = joint.records.back().values.at("total");
    report.loss_ratio = report.loss_final / report.loss_step1;
    report.pretrain_log_path = (fs::path(out_dir) / "pretrain_log.jsonl").string();
    report.joint_log_path = (fs::path(out_dir) / "joint_log.jsonl").string();
    report.checkpoint_path = joint.checkpoint_path;

    const LoadedGenerator lg = load_generator(joint.checkpoint_path);
    report.uv_mse_final = heldout_uv_mse(*lg.generator, heldout);

    // Raw masked input vs restored output on the held-out set.
    real masked_psnr = 0.0;
    std::int64_t masked_count = 0;
    for (size_t i = 0; i < heldout.size(); ++i) {
        const MaskedSample s = heldout.sample(i);
        const real p = psnr(s.query, s.target);
        if (std::isfinite(p)) {
            masked_psnr += p;
            ++masked_count;
        }
    }
    report.masked_input_psnr = masked_count ? masked_psnr / masked_count : 0.0;

    const IdentityEmbedder metric_embedder(Rng::derive(seed, 0x41ull), 3, 64);
    report.evaluation = evaluate_dataset(*lg.generator, heldout, metric_embedder);
    report.restored_psnr = report.evaluation.psnr_mean;
    report.psnr_gain_db = report.restored_psnr - report.masked_input_psnr;

    report.report_path = (fs::path(out_dir) / "smoke_report.json").string();
    std::ofstream os(report.report_path);
    os << report.to_json() << "\n";
    return report;
}

std::string evaluation_report_json(const EvaluationReport& report) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : report.rows) {
        ordered_json row;
        row["id"] = r.id;
        if (std::isfinite(r.psnr_db))
            row["psnr"] = r.psnr_db;
        else
            row["psnr"] = "inf";
        row["ssim"] = r.ssim_value;
        rows.push_back(row);
    }
    ordered_json j;
    j["rows"] = rows;
    if (std::isfinite(report.psnr_mean))
        j["psnr_mean"] = report.psnr_mean;
    else
        j["psnr_mean"] = "inf";
    j["ssim_mean"] = report.ssim_mean;
    j["frechet"] = report.frechet;
    j["auc"] = report.auc;
    j["tpr_at_1pct"] = report.tpr_at_1pct;
    j["tpr_at_0p1pct"] = report.tpr_at_0p1pct;
    return j.dump(2);
}

}  // namespace facefill
