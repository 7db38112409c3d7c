#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "facefill/checkpoint.hpp"
#include "facefill/metrics.hpp"

namespace facefill {

// Single structured configuration driving both stages; JSON keys mirror
// field names, CLI flags override individual keys.
struct RunConfig {
    std::string stage = "pretrain";  // "pretrain" | "joint"

    // Data. Empty data_root means the in-memory synthetic dataset.
    std::string data_root;
    std::string split = "train";
    int synthetic_count = 64;
    int image_height = 128;
    int image_width = 128;
    std::vector<std::string> mask_kinds{"rect", "ellipse", "polygon_lower_face",
                                        "freeform_stroke"};
    real coverage_lo = 0.15;
    real coverage_hi = 0.45;

    EncoderConfig encoder;
    DecoderConfig decoder;
    ContrastiveConfig contrastive;
    LossWeights loss;
    uint64_t extractor_seed = 77;
    uint64_t embedder_seed = 78;

    real pretrain_lr = 0.015;  // SGD, stage 1
    real joint_lr = 1e-4;      // Adam, stage 2

    bool use_contrastive_init = true;
    bool use_daf = true;
    bool use_uv = true;

    uint64_t seed = 1;
    int steps = 100;
    int batch_size = 8;
    int checkpoint_every = 0;  // 0: only final

    bool plateau_enabled = false;
    int plateau_window = 50;
    real plateau_min_improvement = 0.005;

    std::string out_dir = "runs/default";
    std::string pretrain_checkpoint;  // used by stage "joint"

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig from_file(const std::string& path);
    DatasetOptions dataset_options() const;
    void validate() const;
};

struct LogRecord {
    std::int64_t step = 0;
    std::map<std::string, real> values;
};

// Append-only JSONL training log; one line per step.
class TrainingLog {
public:
    explicit TrainingLog(const std::string& path);
    void append(std::int64_t step, const std::map<std::string, real>& values);
    const std::vector<LogRecord>& records() const { return records_; }
    static std::vector<LogRecord> read(const std::string& path);

private:
    std::string path_;
    std::vector<LogRecord> records_;
    std::int64_t last_step_ = -1;
};

struct StageResult {
    std::string checkpoint_path;
    std::vector<LogRecord> records;
    std::int64_t final_step = 0;
};

// Stage 1: contrastive pretraining of the Siamese encoders.
StageResult run_pretrain(const RunConfig& cfg, const std::string& resume_from = "");

// Stage 2: joint training of encoder + decoder (+ DAF, UV heads).
StageResult run_joint(const RunConfig& cfg, const std::string& resume_from = "");

// Rebuilds a generator (and its config) from a joint checkpoint.
struct LoadedGenerator {
    RunConfig config;
    std::unique_ptr<Generator> generator;
};
LoadedGenerator load_generator(const std::string& checkpoint_path);

struct SmokeReport {
    real loss_step1 = 0.0;
    real loss_final = 0.0;
    real loss_ratio = 0.0;
    real masked_input_psnr = 0.0;
    real restored_psnr = 0.0;
    real psnr_gain_db = 0.0;
    real uv_mse_step1 = 0.0;
    real uv_mse_final = 0.0;
    EvaluationReport evaluation;
    std::string pretrain_log_path;
    std::string joint_log_path;
    std::string report_path;
    std::string checkpoint_path;

    std::string to_json() const;
};

// Fixed-seed end-to-end exercise: synthetic data, short pretrain, short
// joint training, held-out evaluation; writes logs and a report under
// out_dir.
SmokeReport run_smoke_experiment(uint64_t seed, const std::string& out_dir);

// Held-out masked-UV error of the full-resolution head (validity-restricted
// MSE averaged over samples).
real heldout_uv_mse(const Generator& generator, const Dataset& heldout);

// Serializes an evaluation report (per-image rows plus aggregates).
std::string evaluation_report_json(const EvaluationReport& report);

}  // namespace facefill
