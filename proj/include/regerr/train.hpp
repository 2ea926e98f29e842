#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "regerr/dataset.hpp"
#include "regerr/model.hpp"
#include "regerr/nn/ops.hpp"

namespace regerr {

struct TrainConfig {
    std::int64_t batch_size = 8;
    std::int64_t epochs = 200;
    double learning_rate = 1e-4; // AdamW
    double lambda_smooth = 0.01;
    bool smooth_l1 = false; // L1 gradient-norm variant of the smoothness term
    std::uint64_t seed = 0;
    std::string device = "cpu";
    bool deterministic = true;

    void validate() const; // throws ConfigError
};

// Eq.-style total loss: sim = MSE, smooth = mean squared forward-difference
// gradient (voxel units, zero boundary differences), total = sim + λ·smooth.
struct LossResult {
    nn::Tensor total, sim, smooth;
};
LossResult loss(const nn::Tensor& predicted, const nn::Tensor& truth, double lambda,
                bool smooth_l1 = false);

// Decoupled weight decay Adam; moment buffers follow ModelParameters order.
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    std::int64_t step_count = 0;
    std::vector<std::vector<double>> m, v;

    void init(const ModelParameters& params);
    void step(ModelParameters& params);
};

struct TrainHistoryRow {
    std::int64_t epoch = 0;
    double train_total = 0, train_sim = 0, train_smooth = 0;
    double val_mae = 0;
};

struct TrainResult {
    std::vector<TrainHistoryRow> history;
    std::int64_t best_epoch = -1;
    double best_val_mae = 0;
};

// Stack per-patch f32 fields into an [N, 1, P, P, P] input tensor.
nn::Tensor batch_tensor(const std::vector<const PatchRecord*>& batch,
                        const std::vector<float> PatchRecord::* field);

// Mean per-patch MAE of the current parameters over a patch list; identical
// aggregation to the evaluator's cohort_patch mean.
double dataset_mae(const ModelConfig& cfg, ModelParameters& params,
                   const std::vector<PatchRecord>& patches, std::int64_t batch_size);

// Load every patch of a split, resolving .pr paths relative to manifest_dir.
std::vector<PatchRecord> load_split_patches(const DatasetManifest& manifest,
                                            const std::filesystem::path& manifest_dir,
                                            const SplitManifest& split, Split which);

// Runs the epoch loop and writes config.json, history.csv, best.ckpt and
// last.ckpt under run_dir. On return `params` holds the best-validation-MAE
// parameters. Shuffle order is derived per epoch from (seed, epoch), so a
// resumed run is bit-identical to an uninterrupted one.
TrainResult train(const ModelConfig& mcfg, ModelParameters& params,
                  const std::vector<PatchRecord>& train_set,
                  const std::vector<PatchRecord>& val_set, const TrainConfig& tcfg,
                  const std::filesystem::path& run_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Full training state: parameters, optimizer moments, progress counters and
// the best-so-far parameter snapshot. f64 payload; bit-exact round trip.
void checkpoint_save(const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const ModelParameters& params, const AdamW& opt, std::int64_t next_epoch,
                     std::int64_t best_epoch, double best_val_mae,
                     const std::vector<std::vector<double>>& best_values,
                     const std::filesystem::path& path);

struct CheckpointState {
    std::int64_t next_epoch = 0;
    std::int64_t best_epoch = -1;
    double best_val_mae = 0;
    AdamW opt;
    std::vector<std::vector<double>> best_values; // empty if no best yet
};

// Restores params in place; throws VersionMismatch when the stored model or
// train config disagrees with the expected one (naming the field), IoError on
// truncation or corruption.
CheckpointState checkpoint_resume(const ModelConfig& mcfg, const TrainConfig& tcfg,
                                  ModelParameters& params, const std::filesystem::path& path);

} // namespace regerr
