#include "regerr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "regerr/errors.hpp"
#include "regerr/rng.hpp"
#include "regerr/train.hpp"

namespace regerr {

using nlohmann::json;

namespace {

struct MeanStd {
    double mean = 0, stdev = 0;
};

// population convention: divide by N
MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    if (xs.empty()) return r;
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(xs.size());
    double acc = 0;
    for (double x : xs) acc += (x - r.mean) * (x - r.mean);
    r.stdev = std::sqrt(acc / static_cast<double>(xs.size()));
    return r;
}

std::string record_id(const PatchRecord& r) {
    return r.patient_id + "/" + r.landmark_id + "/d" + std::to_string(r.deformation_index);
}

// Fills subject rows and both cohort summaries from an already-populated
// per_patch list (Table II/III semantics).
void aggregate(EvalReport& rep) {
    std::map<std::string, std::vector<double>> by_subject;
    for (const auto& p : rep.per_patch) by_subject[p.patient_id].push_back(p.mae_mm);

    std::vector<double> all, subject_means, subject_stds;
    for (const auto& p : rep.per_patch) all.push_back(p.mae_mm);
    for (const auto& [patient, maes] : by_subject) {
        const MeanStd s = mean_std(maes);
        rep.per_subject.push_back({patient, s.mean, s.stdev, static_cast<int>(maes.size())});
        subject_means.push_back(s.mean);
        subject_stds.push_back(s.stdev);
    }
    const MeanStd cp = mean_std(all);
    rep.cohort_patch_mean = cp.mean;
    rep.cohort_patch_std = cp.stdev;
    rep.cohort_subject_mean = mean_std(subject_means).mean;
    rep.cohort_subject_std = mean_std(subject_stds).mean;
}

} // namespace

double patch_mae(std::span<const double> phi, std::span<const double> f) {
    if (phi.size() != f.size() || phi.empty()) throw ShapeError("patch_mae: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < phi.size(); ++i) acc += std::abs(phi[i] - f[i]);
    return acc / static_cast<double>(phi.size());
}

double patch_mae(std::span<const float> phi, std::span<const float> f) {
    if (phi.size() != f.size() || phi.empty()) throw ShapeError("patch_mae: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < phi.size(); ++i)
        acc += std::abs(static_cast<double>(phi[i]) - static_cast<double>(f[i]));
    return acc / static_cast<double>(phi.size());
}

EvalReport evaluate(const ModelConfig& cfg, ModelParameters& params,
                    const std::vector<PatchRecord>& patches) {
    if (patches.empty()) throw EmptySplit("evaluate: no patches in split");

    EvalReport rep;
    for (const PatchRecord& rec : patches) {
        std::vector<const PatchRecord*> batch{&rec};
        nn::Tensor pred = forward(cfg, params, batch_tensor(batch, &PatchRecord::mri),
                                  batch_tensor(batch, &PatchRecord::ius));
        std::vector<double> truth(rec.error.begin(), rec.error.end());
        const double mae =
            patch_mae(std::span<const double>(pred.data()), std::span<const double>(truth));
        rep.per_patch.push_back({record_id(rec), rec.patient_id, mae});
    }
    aggregate(rep);
    return rep;
}

EvalReport evaluate_predictions(const std::vector<PatchRecord>& truth,
                                const std::vector<std::vector<float>>& predictions) {
    if (truth.empty()) throw EmptySplit("evaluate_predictions: no patches");
    if (truth.size() != predictions.size())
        throw ShapeError("evaluate_predictions: prediction count mismatch");
    EvalReport rep;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double mae = patch_mae(std::span<const float>(predictions[i]),
                                     std::span<const float>(truth[i].error));
        rep.per_patch.push_back({record_id(truth[i]), truth[i].patient_id, mae});
    }
    aggregate(rep);
    return rep;
}

EvalReport evaluate(const ModelConfig& cfg, ModelParameters& params,
                    const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                    Split split) {
    if (!manifest.split) throw ConfigError("evaluate: manifest carries no split assignment");
    return evaluate(cfg, params,
                    load_split_patches(manifest, manifest_dir, *manifest.split, split));
}

double measure_runtime(const ModelConfig& cfg, ModelParameters& params, int n_patches,
                       int warmup) {
    if (n_patches < 1) throw ConfigError("measure_runtime: n_patches must be >= 1");
    const std::int64_t p = cfg.patch_size;
    const std::size_t voxels = static_cast<std::size_t>(p * p * p);
    PatchRecord rec;
    rec.patch_size = static_cast<int>(p);
    Rng rng(hash64(0, "runtime-probe", 0));
    rec.mri.resize(voxels);
    rec.ius.resize(voxels);
    for (auto& v : rec.mri) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto& v : rec.ius) v = static_cast<float>(rng.uniform(0.0, 1.0));
    std::vector<const PatchRecord*> batch{&rec};

    auto run_once = [&] {
        nn::Tensor out = forward(cfg, params, batch_tensor(batch, &PatchRecord::mri),
                                 batch_tensor(batch, &PatchRecord::ius));
        return out.data()[0];
    };
    volatile double sink = 0;
    for (int i = 0; i < warmup; ++i) sink = run_once();
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < n_patches; ++i) sink = run_once();
    const auto t1 = std::chrono::steady_clock::now();
    (void)sink;
    return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(n_patches);
}

double constant_mean_baseline(const std::vector<PatchRecord>& patches) {
    if (patches.empty()) throw EmptySplit("constant_mean_baseline: no patches");
    double sum = 0;
    std::size_t n = 0;
    for (const auto& rec : patches) {
        for (float e : rec.error) sum += static_cast<double>(e);
        n += rec.error.size();
    }
    const double c = sum / static_cast<double>(n);
    double mae_sum = 0;
    for (const auto& rec : patches) {
        double acc = 0;
        for (float e : rec.error) acc += std::abs(static_cast<double>(e) - c);
        mae_sum += acc / static_cast<double>(rec.error.size());
    }
    return mae_sum / static_cast<double>(patches.size());
}

namespace {

json environment_json(const EnvironmentInfo& e) {
    return json{{"device", e.device},
                {"deterministic", e.deterministic},
                {"threads", e.threads},
                {"std_convention", e.std_convention}};
}

void require_nonempty(const EvalReport& rep) {
    if (rep.per_subject.empty() || rep.per_patch.empty())
        throw ConfigError("emit_report: empty report; refusing to render an empty table");
}

std::string fmt_mm(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << v;
    return os.str();
}

} // namespace

void emit_report(const EvalReport& rep, const std::filesystem::path& out_path,
                 ReportFormat format) {
    require_nonempty(rep);
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw IoError("emit_report: cannot open " + out_path.string());

    if (format == ReportFormat::json) {
        json j;
        j["per_patch"] = json::array();
        for (const auto& p : rep.per_patch)
            j["per_patch"].push_back(
                {{"id", p.id}, {"patient_id", p.patient_id}, {"mae_mm", p.mae_mm}});
        j["per_subject"] = json::array();
        for (const auto& s : rep.per_subject)
            j["per_subject"].push_back({{"patient_id", s.patient_id},
                                        {"mean_mae_mm", s.mean_mae_mm},
                                        {"std_mae_mm", s.std_mae_mm},
                                        {"n_patches", s.n_patches}});
        j["cohort_patch"] = {{"mean_mm", rep.cohort_patch_mean},
                             {"std_mm", rep.cohort_patch_std}};
        j["cohort_subject"] = {{"mean_mm", rep.cohort_subject_mean},
                               {"std_mm", rep.cohort_subject_std}};
        j["avg_runtime_s"] = rep.avg_runtime_s;
        j["environment"] = environment_json(rep.environment);
        f << j.dump(2) << "\n";
    } else if (format == ReportFormat::csv) {
        f << "patient_id,mean_mae_mm,std_mae_mm,n_patches\n";
        f.setf(std::ios::fixed);
        f.precision(6);
        int total = 0;
        for (const auto& s : rep.per_subject) {
            f << s.patient_id << "," << s.mean_mae_mm << "," << s.std_mae_mm << ","
              << s.n_patches << "\n";
            total += s.n_patches;
        }
        f << "Mean," << rep.cohort_subject_mean << "," << rep.cohort_subject_std << "," << total
          << "\n";
    } else {
        f << "# Registration error estimation report\n\n";
        f << "Std convention: population (divide by N).\n\n";
        f << "## Case-by-case results\n\n";
        f << "| Patient | Patches | MAE (mm) |\n";
        f << "| --- | ---: | ---: |\n";
        int total = 0;
        for (const auto& s : rep.per_subject) {
            f << "| " << s.patient_id << " | " << s.n_patches << " | " << fmt_mm(s.mean_mae_mm)
              << " ± " << fmt_mm(s.std_mae_mm) << " |\n";
            total += s.n_patches;
        }
        f << "| **Mean** | " << total << " | **" << fmt_mm(rep.cohort_subject_mean) << " ± "
          << fmt_mm(rep.cohort_subject_std) << "** |\n\n";
        f << "## Summary\n\n";
        f << "| Metric | Value |\n";
        f << "| --- | ---: |\n";
        f << "| Patch-level MAE (mm) | " << fmt_mm(rep.cohort_patch_mean) << " ± "
          << fmt_mm(rep.cohort_patch_std) << " |\n";
        f << "| Avg runtime per estimation (s) | " << fmt_mm(rep.avg_runtime_s) << " |\n";
        f << "| Device | " << rep.environment.device
          << (rep.environment.deterministic ? " (deterministic)" : "") << " |\n";
    }
    if (!f) throw IoError("emit_report: write failed for " + out_path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileMissing("load_report: cannot open " + path.string());
    EvalReport rep;
    try {
        json j = json::parse(f);
        for (const auto& p : j.at("per_patch"))
            rep.per_patch.push_back({p.at("id").get<std::string>(),
                                     p.at("patient_id").get<std::string>(),
                                     p.at("mae_mm").get<double>()});
        for (const auto& s : j.at("per_subject"))
            rep.per_subject.push_back({s.at("patient_id").get<std::string>(),
                                       s.at("mean_mae_mm").get<double>(),
                                       s.at("std_mae_mm").get<double>(),
                                       s.at("n_patches").get<int>()});
        rep.cohort_patch_mean = j.at("cohort_patch").at("mean_mm").get<double>();
        rep.cohort_patch_std = j.at("cohort_patch").at("std_mm").get<double>();
        rep.cohort_subject_mean = j.at("cohort_subject").at("mean_mm").get<double>();
        rep.cohort_subject_std = j.at("cohort_subject").at("std_mm").get<double>();
        rep.avg_runtime_s = j.at("avg_runtime_s").get<double>();
        const auto& e = j.at("environment");
        rep.environment.device = e.at("device").get<std::string>();
        rep.environment.deterministic = e.at("deterministic").get<bool>();
        rep.environment.threads = e.at("threads").get<int>();
        rep.environment.std_convention = e.at("std_convention").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError("load_report: " + std::string(e.what()));
    }
    return rep;
}

} // namespace regerr
