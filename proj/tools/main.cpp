// Command line entry points: the two training stages, inference, metric
// evaluation, synthetic data generation, and the end-to-end smoke run.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "facefill/image_io.hpp"
#include "facefill/trainer.hpp"

namespace fs = std::filesystem;
using namespace facefill;

namespace {

struct ConfigCli {
    std::string config_path;
    std::string out_dir;
    std::string data_root;
    std::string pretrain_checkpoint;
    std::string resume;
    int steps = -1;
    int batch_size = -1;
    std::int64_t seed = -1;
    int use_daf = -1;
    int use_uv = -1;
    int use_contrastive_init = -1;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file (flags override keys)");
        app->add_option("--out", out_dir, "output directory");
        app->add_option("--data", data_root, "dataset root (omit for synthetic data)");
        app->add_option("--pretrain-checkpoint", pretrain_checkpoint,
                        "stage-1 checkpoint for joint training");
        app->add_option("--resume", resume, "checkpoint to resume from");
        app->add_option("--steps", steps, "training step budget");
        app->add_option("--batch-size", batch_size, "batch size");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--use-daf", use_daf, "1/0: enable the dual attention fusion module");
        app->add_option("--use-uv", use_uv, "1/0: enable correspondence-field heads");
        app->add_option("--use-contrastive-init", use_contrastive_init,
                        "1/0: initialize the encoder from stage 1");
    }

    RunConfig resolve(const std::string& stage) const {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        cfg.stage = stage;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_root.empty()) cfg.data_root = data_root;
        if (!pretrain_checkpoint.empty()) cfg.pretrain_checkpoint = pretrain_checkpoint;
        if (steps >= 0) cfg.steps = steps;
        if (batch_size >= 0) cfg.batch_size = batch_size;
        if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
        if (use_daf >= 0) cfg.use_daf = use_daf != 0;
        if (use_uv >= 0) cfg.use_uv = use_uv != 0;
        if (use_contrastive_init >= 0) cfg.use_contrastive_init = use_contrastive_init != 0;
        return cfg;
    }
};

int cmd_infer(const std::string& checkpoint, const std::string& input_dir,
              const std::string& mask_dir, const std::string& out_dir, bool emit_uv,
              bool emit_alpha) {
    const LoadedGenerator lg = load_generator(checkpoint);
    fs::create_directories(out_dir);

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IngestionError("no .png inputs under " + input_dir);

    NoGradGuard ng;
    for (const auto& f : files) {
        const Tensor img = read_png_rgb(f.string());
        const int H = img.dim(1), W = img.dim(2);
        Tensor mask(Shape{1, H, W});
        if (!mask_dir.empty()) {
            const Tensor m = read_png_rgb((fs::path(mask_dir) / f.filename()).string());
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    mask.at(0, y, x) = m.at(0, y, x) > 0.5 ? 1.0 : 0.0;
        } else {
            // Without explicit masks, treat exactly-black pixels as holes.
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    mask.at(0, y, x) = (img.at(0, y, x) == 0.0 && img.at(1, y, x) == 0.0 &&
                                        img.at(2, y, x) == 0.0)
                                           ? 1.0
                                           : 0.0;
        }
        const Tensor query = apply_mask(img, mask);
        const MultiScaleOutput out = lg.generator->generate(
            query.reshaped(Shape{1, 3, H, W}), mask.reshaped(Shape{1, 1, H, W}));
        const ScaleOutput& full = out.at_scale(1);
        const Tensor restored = clamp01(full.fused.value().reshaped(Shape{3, H, W}));
        const std::string stem = f.stem().string();
        write_png_rgb((fs::path(out_dir) / (stem + ".png")).string(), restored);
        if (emit_uv) {
            if (!full.uv.defined())
                throw StateError("checkpoint was trained without UV heads");
            const Tensor uv = full.uv.value();
            UVField field;
            field.u = Tensor(Shape{H, W});
            field.v = Tensor(Shape{H, W});
            field.validity = Tensor(Shape{H, W}, 1.0);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    field.u.at(y, x) = uv.at(0, 0, y, x);
                    field.v.at(y, x) = uv.at(0, 1, y, x);
                }
            write_uvf((fs::path(out_dir) / (stem + ".uvf")).string(), field);
        }
        if (emit_alpha) {
            if (!full.alpha.defined())
                throw StateError("checkpoint was trained without the DAF module");
            const Tensor alpha = full.alpha.value();
            Tensor gray(Shape{H, W});
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    gray.at(y, x) =
                        (alpha.at(0, 0, y, x) + alpha.at(0, 1, y, x) + alpha.at(0, 2, y, x)) / 3.0;
            write_png_gray((fs::path(out_dir) / (stem + "_alpha.png")).string(), gray);
        }
    }
    std::cout << "wrote " << files.size() << " restored images to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"facefill: two-stage face completion (contrastive pretraining, "
                 "attention-fused multi-scale decoding, UV supervision)"};
    app.require_subcommand(1);

    ConfigCli pretrain_cli, train_cli;
    auto* pre = app.add_subcommand("pretrain", "stage 1: contrastive encoder pretraining");
    pretrain_cli.attach(pre);
    auto* train = app.add_subcommand("train", "stage 2: joint generator training");
    train_cli.attach(train);

    std::string infer_ckpt, infer_in, infer_mask, infer_out;
    bool emit_uv = false, emit_alpha = false;
    auto* infer = app.add_subcommand("infer", "restore masked images with a joint checkpoint");
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--input", infer_in, "directory of input PNGs")->required();
    infer->add_option("--masks", infer_mask,
                      "directory of mask PNGs (white = hole); default: black pixels");
    infer->add_option("--out", infer_out)->required();
    infer->add_flag("--emit-uv", emit_uv, "also write predicted UV fields");
    infer->add_flag("--emit-alpha", emit_alpha, "also write attention maps");

    std::string eval_ckpt, eval_data, eval_split = "val", eval_out = "report.json";
    std::int64_t eval_seed = 9;
    auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM/Frechet/ROC over a dataset");
    evaluate->add_option("--checkpoint", eval_ckpt)->required();
    evaluate->add_option("--data", eval_data, "dataset root (omit for synthetic)");
    evaluate->add_option("--split", eval_split);
    evaluate->add_option("--out", eval_out);
    evaluate->add_option("--seed", eval_seed);

    int gen_count = 64, gen_h = 128, gen_w = 128;
    std::int64_t gen_seed = 7;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset split");
    gen->add_option("--count", gen_count);
    gen->add_option("--size", [&gen_h, &gen_w](const std::vector<std::string>& vals) {
        if (vals.size() != 2) return false;
        try {
            gen_h = std::stoi(vals[0]);
            gen_w = std::stoi(vals[1]);
        } catch (const std::exception&) {
            return false;
        }
        return gen_h > 0 && gen_w > 0;
    }, "height width")->expected(2);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out)->required();

    std::int64_t smoke_seed = 1;
    std::string smoke_out = "runs/smoke";
    auto* smoke = app.add_subcommand("smoke", "fixed-seed end-to-end training exercise");
    smoke->add_option("--seed", smoke_seed);
    smoke->add_option("--out", smoke_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) {
            const RunConfig cfg = pretrain_cli.resolve("pretrain");
            const StageResult r = run_pretrain(cfg, pretrain_cli.resume);
            std::cout << "pretrain done at step " << r.final_step << ", checkpoint "
                      << r.checkpoint_path << "\n";
        } else if (train->parsed()) {
            const RunConfig cfg = train_cli.resolve("joint");
            const StageResult r = run_joint(cfg, train_cli.resume);
            std::cout << "joint training done at step " << r.final_step << ", checkpoint "
                      << r.checkpoint_path << "\n";
        } else if (infer->parsed()) {
            return cmd_infer(infer_ckpt, infer_in, infer_mask, infer_out, emit_uv, emit_alpha);
        } else if (evaluate->parsed()) {
            const LoadedGenerator lg = load_generator(eval_ckpt);
            RunConfig data_cfg = lg.config;
            data_cfg.data_root = eval_data;
            data_cfg.split = eval_split;
            data_cfg.seed = static_cast<uint64_t>(eval_seed);
            Dataset ds = eval_data.empty()
                             ? Dataset::synthetic(16, data_cfg.image_height, data_cfg.image_width,
                                                  static_cast<uint64_t>(eval_seed),
                                                  data_cfg.dataset_options())
                             : Dataset::load(eval_data, eval_split, data_cfg.dataset_options());
            const IdentityEmbedder embedder(Rng::derive(lg.config.embedder_seed, 0x99ull), 3, 64);
            const EvaluationReport report = evaluate_dataset(*lg.generator, ds, embedder);
            std::ofstream os(eval_out);
            os << evaluation_report_json(report) << "\n";
            std::cout << "psnr_mean=" << report.psnr_mean << " ssim_mean=" << report.ssim_mean
                      << " frechet=" << report.frechet << " auc=" << report.auc << "\n"
                      << "report written to " << eval_out << "\n";
        } else if (gen->parsed()) {
            write_synthetic_split(gen_out, gen_count, gen_h, gen_w,
                                  static_cast<uint64_t>(gen_seed));
            std::cout << "wrote " << gen_count << " synthetic faces under " << gen_out << "\n";
        } else if (smoke->parsed()) {
            const SmokeReport r =
                run_smoke_experiment(static_cast<uint64_t>(smoke_seed), smoke_out);
            std::cout << r.to_json() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
