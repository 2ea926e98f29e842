#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "regerr/dataset.hpp"
#include "regerr/model.hpp"

namespace regerr {

// Hardware/run descriptor embedded in every report. The std convention is
// recorded explicitly because the aggregation uses population std (divide by
// N).
struct EnvironmentInfo {
    std::string device = "cpu";
    bool deterministic = true;
    int threads = 1;
    std::string std_convention = "population";
};

struct PatchResult {
    std::string id; // "<patient>/<landmark>/d<deformation>"
    std::string patient_id;
    double mae_mm = 0;
};

struct SubjectResult {
    std::string patient_id;
    double mean_mae_mm = 0;
    double std_mae_mm = 0; // population std over the subject's patch MAEs
    int n_patches = 0;
};

// Case-by-case rows (per patch, per subject) and the two cohort summaries:
// patch-level mean±std over all test patches, and subject-level mean of
// subject means ± mean of subject stds.
struct EvalReport {
    std::vector<PatchResult> per_patch;
    std::vector<SubjectResult> per_subject;
    double cohort_patch_mean = 0, cohort_patch_std = 0;
    double cohort_subject_mean = 0, cohort_subject_std = 0;
    double avg_runtime_s = 0;
    EnvironmentInfo environment;
};

// Mean over voxels of |phi - f|; shapes must match.
double patch_mae(std::span<const double> phi, std::span<const double> f);
double patch_mae(std::span<const float> phi, std::span<const float> f);

// Forward pass per patch (batch 1, serial) followed by the Table II/III
// aggregation. avg_runtime_s is left 0; fill it via measure_runtime.
EvalReport evaluate(const ModelConfig& cfg, ModelParameters& params,
                    const std::vector<PatchRecord>& patches);

// Same aggregation over externally supplied prediction maps (one per patch,
// voxel order matching PatchRecord::error), e.g. maps written by `predict`.
EvalReport evaluate_predictions(const std::vector<PatchRecord>& truth,
                                const std::vector<std::vector<float>>& predictions);

// Manifest-level convenience: loads the given split (default test) relative to
// manifest_dir. Throws EmptySplit if the split has no patches, ConfigError if
// the manifest carries no split.
EvalReport evaluate(const ModelConfig& cfg, ModelParameters& params,
                    const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                    Split split = Split::test);

// Wall-clock mean of n_patches single-patch forward calls after `warmup`
// discarded calls; strictly serial, batch 1 ("each estimation").
double measure_runtime(const ModelConfig& cfg, ModelParameters& params, int n_patches,
                       int warmup);

// MAE of the constant predictor equal to the cohort's mean ground-truth error,
// aggregated like cohort_patch_mean. Reference point for baseline dominance.
double constant_mean_baseline(const std::vector<PatchRecord>& patches);

enum class ReportFormat { json, csv, markdown };

// json is a lossless round trip; csv and markdown render the case-by-case
// table (one row per subject plus a Mean row) and, in markdown, a summary
// line with the patch-level cohort MAE and average runtime.
void emit_report(const EvalReport& report, const std::filesystem::path& out_path,
                 ReportFormat format);
EvalReport load_report(const std::filesystem::path& path);

} // namespace regerr
