// regerr: command-line front end for the registration-error estimation
// pipeline: simulate, build-dataset, split, train, predict, evaluate, report,
// selfcheck. Exit codes: 0 ok, 1 check/validation failure, 2 config error,
// 3 data/I-O error.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "regerr/dataset.hpp"
#include "regerr/errors.hpp"
#include "regerr/eval.hpp"
#include "regerr/ffd.hpp"
#include "regerr/model.hpp"
#include "regerr/rng.hpp"
#include "regerr/train.hpp"
#include "regerr/volume_io.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace regerr;

// --config accepts a single JSON document mirroring flag names; nested
// objects address subcommands ({"train": {"epochs": 30}}). Flags given on the
// command line override file values (CLI11's standard precedence).
class JsonConfig : public CLI::Config {
  public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}\n";
    }
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            j = json::parse(input);
        } catch (const json::exception& e) {
            throw CLI::FileError(std::string("config file is not valid JSON: ") + e.what());
        }
        std::vector<CLI::ConfigItem> out;
        walk(j, {}, out);
        return out;
    }

  private:
    static void walk(const json& j, const std::vector<std::string>& parents,
                     std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                walk(value, p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array())
                for (const auto& e : value) item.inputs.push_back(scalar(e));
            else
                item.inputs.push_back(scalar(value));
            out.push_back(std::move(item));
        }
    }
    static std::string scalar(const json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
    }
};

bool deterministic_forced() {
    const char* v = std::getenv("REGERR_DETERMINISTIC");
    return v != nullptr && std::string(v) == "1";
}

// Every command serializes its resolved configuration into the run directory
// before doing any work.
void write_resolved_config(const fs::path& out_dir, const std::string& command,
                           const json& options) {
    fs::create_directories(out_dir);
    json j{{"command", command},
           {"options", options},
           {"deterministic", true},
           {"deterministic_env", deterministic_forced()}};
    std::ofstream f(out_dir / "resolved_config.json");
    f << j.dump(2) << "\n";
    if (!f) throw IoError("cannot write resolved_config.json under " + out_dir.string());
}

void minmax_normalize(std::vector<float>& patch) {
    float lo = patch[0], hi = patch[0];
    for (float v : patch) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) {
        std::fill(patch.begin(), patch.end(), 0.0f);
        return;
    }
    for (float& v : patch) v = (v - lo) / (hi - lo);
}

std::string sanitized_id(const PatchRecord& r) {
    return r.patient_id + "_" + r.landmark_id + "_d" + std::to_string(r.deformation_index);
}

ModelConfig model_from_json(const json& m) {
    ModelConfig cfg;
    cfg.patch_size = m.at("patch_size").get<std::int64_t>();
    cfg.unet_channels = m.at("unet_channels").get<std::int64_t>();
    cfg.embed_dim = m.at("embed_dim").get<std::int64_t>();
    cfg.window_size = m.at("window_size").get<std::int64_t>();
    const auto depths = m.at("depths").get<std::vector<std::int64_t>>();
    const auto heads = m.at("num_heads").get<std::vector<std::int64_t>>();
    if (depths.size() != 4 || heads.size() != 4)
        throw ConfigError("config.json: depths/num_heads must have 4 entries");
    std::copy(depths.begin(), depths.end(), cfg.depths.begin());
    std::copy(heads.begin(), heads.end(), cfg.num_heads.begin());
    cfg.mlp_ratio = m.at("mlp_ratio").get<std::int64_t>();
    return cfg;
}

// Loads the model config and best-validation parameters from a training run
// directory (config.json + best.ckpt).
std::pair<ModelConfig, ModelParameters> load_run(const fs::path& run_dir) {
    std::ifstream cf(run_dir / "config.json");
    if (!cf) throw FileMissing("run directory has no config.json: " + run_dir.string());
    json j;
    try {
        j = json::parse(cf);
    } catch (const json::exception& e) {
        throw FormatError("config.json: " + std::string(e.what()));
    }
    ModelConfig cfg = model_from_json(j.at("model"));
    ModelParameters params = build_model(cfg, 0);
    load_parameters(params, run_dir / "best.ckpt");
    return {cfg, std::move(params)};
}

std::vector<PatchRecord> load_eval_split(const fs::path& manifest_path,
                                         const std::optional<fs::path>& split_path,
                                         const std::string& split_name_str) {
    DatasetManifest manifest = load_manifest(manifest_path);
    SplitManifest split;
    if (split_path)
        split = load_split(*split_path);
    else if (manifest.split)
        split = *manifest.split;
    else
        throw ConfigError("no split: manifest has none embedded and --split not given");
    return load_split_patches(manifest, manifest_path.parent_path(), split,
                              split_from_name(split_name_str));
}

// Predicted-vs-true voxel error histogram as a small PPM bar chart: truth in
// blue, prediction in red, overlap darkened.
void write_histogram_ppm(const std::vector<float>& truth, const std::vector<float>& pred,
                         const fs::path& path) {
    constexpr int kBins = 64, kW = 4 * kBins, kH = 160;
    float top = 1e-6f;
    for (float v : truth) top = std::max(top, v);
    for (float v : pred) top = std::max(top, v);
    std::vector<double> ht(kBins, 0), hp(kBins, 0);
    auto bin = [&](float v) {
        return std::min(kBins - 1, static_cast<int>(static_cast<double>(v) / top * kBins));
    };
    for (float v : truth) ht[size_t(bin(v))] += 1;
    for (float v : pred) hp[size_t(bin(v))] += 1;
    double peak = 1;
    for (int i = 0; i < kBins; ++i) peak = std::max({peak, ht[size_t(i)], hp[size_t(i)]});

    std::vector<unsigned char> img(static_cast<std::size_t>(kW) * kH * 3, 255);
    auto bar_h = [&](double c) { return static_cast<int>(std::lround(c / peak * (kH - 1))); };
    for (int b = 0; b < kBins; ++b) {
        const int th = bar_h(ht[size_t(b)]), ph = bar_h(hp[size_t(b)]);
        for (int x = 4 * b; x < 4 * b + 4; ++x)
            for (int y = 0; y < kH; ++y) {
                const bool in_t = y >= kH - th, in_p = y >= kH - ph;
                if (!in_t && !in_p) continue;
                unsigned char* px = &img[(static_cast<std::size_t>(y) * kW + x) * 3];
                px[0] = in_p ? 200 : 60;
                px[1] = 60;
                px[2] = in_t ? 200 : 60;
            }
    }
    std::ofstream f(path, std::ios::binary);
    f << "P6\n" << kW << " " << kH << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    if (!f) throw IoError("cannot write histogram image " + path.string());
}

// ---------------------------------------------------------------------------
// commands

struct SimulateOpts {
    std::string case_path, out;
    std::uint64_t seed = 0;
    int n_deformations = 10;
    int max_points = 20;
    double max_disp_mm = 10.0;
};

void cmd_simulate(const SimulateOpts& o) {
    write_resolved_config(o.out, "simulate",
                          json{{"case", o.case_path},
                               {"seed", o.seed},
                               {"n_deformations", o.n_deformations},
                               {"max_points", o.max_points},
                               {"max_disp_mm", o.max_disp_mm}});
    const CaseDescriptor desc = load_case_descriptor(o.case_path);
    const Volume mri = load_volume(desc.mri_path);
    const Volume ius = load_volume(desc.ius_path);
    DeformationSpec spec;
    spec.seed = o.seed;
    spec.max_points_per_axis = o.max_points;
    spec.max_displacement_mm = o.max_disp_mm;
    const auto defs = simulate_case(mri, ius, spec, desc.patient_id, o.n_deformations);
    for (std::size_t k = 0; k < defs.size(); ++k) {
        const std::string stem = desc.patient_id + "_d" + std::to_string(k);
        save_volume(defs[k].warped_ius, fs::path(o.out) / (stem + "_warped.json"));
        save_volume(defs[k].error, fs::path(o.out) / (stem + "_error.json"));
        save_control_grid(defs[k].grid, fs::path(o.out) / (stem + "_grid.json"));
    }
    std::cout << "simulate: wrote " << defs.size() << " deformation triples for "
              << desc.patient_id << " under " << o.out << "\n";
}

struct BuildDatasetOpts {
    std::vector<std::string> cases;
    std::string out;
    std::uint64_t seed = 0;
    int n_deformations = 10;
    int max_points = 20;
    double max_disp_mm = 10.0;
    int patch_size = 64;
    bool verbose = false;
};

void cmd_build_dataset(const BuildDatasetOpts& o) {
    write_resolved_config(o.out, "build-dataset",
                          json{{"cases", o.cases},
                               {"seed", o.seed},
                               {"n_deformations", o.n_deformations},
                               {"max_points", o.max_points},
                               {"max_disp_mm", o.max_disp_mm},
                               {"patch_size", o.patch_size}});
    std::vector<CaseDescriptor> descs;
    for (const auto& c : o.cases) descs.push_back(load_case_descriptor(c));
    DeformationSpec spec;
    spec.seed = o.seed;
    spec.max_points_per_axis = o.max_points;
    spec.max_displacement_mm = o.max_disp_mm;
    const DatasetManifest m =
        build_dataset(descs, spec, o.patch_size, o.n_deformations, o.out, o.verbose);
    std::cout << "build-dataset: " << m.records.size() << " patches from " << descs.size()
              << " cases -> " << (fs::path(o.out) / "manifest.json").string() << "\n";
}

struct SplitOpts {
    std::string manifest, out;
    int patients = 0;
    std::array<double, 3> fractions{0.6, 0.2, 0.2};
    std::uint64_t seed = 0;
};

void cmd_split(const SplitOpts& o) {
    std::vector<std::string> patients;
    if (!o.manifest.empty()) {
        const DatasetManifest m = load_manifest(o.manifest);
        for (const auto& r : m.records)
            if (patients.empty() || patients.back() != r.patient_id)
                patients.push_back(r.patient_id);
        std::sort(patients.begin(), patients.end());
        patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    } else if (o.patients > 0) {
        for (int i = 1; i <= o.patients; ++i) patients.push_back("P" + std::to_string(i));
    } else {
        throw ConfigError("split: give either --manifest or --patients");
    }
    const SplitManifest s = make_split(patients, o.fractions, o.seed);
    std::array<int, 3> counts{0, 0, 0};
    for (const auto& [pid, sp] : s.assignment) counts[static_cast<std::size_t>(sp)]++;
    std::cout << "split: train " << counts[0] << " val " << counts[1] << " test " << counts[2]
              << "\n";
    for (const auto& [pid, sp] : s.assignment)
        std::cout << "  " << pid << " -> " << split_name(sp) << "\n";
    if (!o.out.empty()) {
        write_resolved_config(o.out, "split",
                              json{{"manifest", o.manifest},
                                   {"patients", o.patients},
                                   {"fractions", o.fractions},
                                   {"seed", o.seed}});
        save_split(s, fs::path(o.out) / "split.json");
        std::cout << "split: wrote " << (fs::path(o.out) / "split.json").string() << "\n";
    }
}

struct TrainOpts {
    std::string manifest, split, out, resume;
    bool toy = false;
    std::int64_t patch_size = 0; // 0: follow the manifest
    std::int64_t unet_channels = 16, embed_dim = 48, window_size = 7;
    TrainConfig tc;
    CLI::App* cmd = nullptr;
};

void cmd_train(const TrainOpts& o) {
    write_resolved_config(o.out, "train",
                          json{{"manifest", o.manifest},
                               {"split", o.split},
                               {"resume", o.resume},
                               {"toy", o.toy},
                               {"batch_size", o.tc.batch_size},
                               {"epochs", o.tc.epochs},
                               {"learning_rate", o.tc.learning_rate},
                               {"lambda_smooth", o.tc.lambda_smooth},
                               {"smooth_l1", o.tc.smooth_l1},
                               {"seed", o.tc.seed}});
    ModelConfig mcfg = o.toy ? ModelConfig::toy() : ModelConfig{};
    if (o.cmd->count("--unet-channels") > 0) mcfg.unet_channels = o.unet_channels;
    if (o.cmd->count("--embed-dim") > 0) mcfg.embed_dim = o.embed_dim;
    if (o.cmd->count("--window-size") > 0) mcfg.window_size = o.window_size;

    const DatasetManifest manifest = load_manifest(o.manifest);
    if (o.patch_size > 0)
        mcfg.patch_size = o.patch_size;
    else if (!o.toy)
        mcfg.patch_size = manifest.patch_size;
    if (mcfg.patch_size != manifest.patch_size)
        throw ConfigError("train: model patch size " + std::to_string(mcfg.patch_size) +
                          " does not match dataset patch size " +
                          std::to_string(manifest.patch_size));

    SplitManifest split;
    if (!o.split.empty())
        split = load_split(o.split);
    else if (manifest.split)
        split = *manifest.split;
    else
        throw ConfigError("train: no split; embed one in the manifest or pass --split");

    const fs::path manifest_dir = fs::path(o.manifest).parent_path();
    const auto train_set = load_split_patches(manifest, manifest_dir, split, Split::train);
    const auto val_set = load_split_patches(manifest, manifest_dir, split, Split::val);

    TrainConfig tc = o.tc;
    if (deterministic_forced()) tc.deterministic = true;
    ModelParameters params = build_model(mcfg, hash64(tc.seed, "model-init", 0));
    std::optional<fs::path> resume;
    if (!o.resume.empty()) resume = fs::path(o.resume);

    const TrainResult res = train(mcfg, params, train_set, val_set, tc, o.out, resume);
    std::cout << "train: " << train_set.size() << " train / " << val_set.size()
              << " val patches, best epoch " << res.best_epoch << ", val MAE "
              << res.best_val_mae << " mm\n";
}

struct PredictOpts {
    std::string run, mri, ius, landmarks, out;
};

void cmd_predict(const PredictOpts& o) {
    auto [cfg, params] = load_run(o.run);
    const Volume mri = load_volume(o.mri);
    const Volume ius = load_volume(o.ius);
    const auto P = cfg.patch_size;

    auto predict_one = [&](const PatchRecord& rec) {
        std::vector<const PatchRecord*> batch{&rec};
        nn::Tensor pred = forward(cfg, params, batch_tensor(batch, &PatchRecord::mri),
                                  batch_tensor(batch, &PatchRecord::ius));
        std::vector<float> map(pred.data().begin(), pred.data().end());
        return map;
    };
    auto save_map = [&](const std::vector<float>& map, const Volume& like, const fs::path& path) {
        Volume v({P, P, P}, like.spacing, like.origin, Modality::ERROR);
        v.data = map;
        save_volume(v, path);
    };

    if (o.landmarks.empty()) {
        // single-patch mode: inputs are P^3 patches, --out is the map file
        if (mri.dims != Index3{P, P, P} || ius.dims != Index3{P, P, P})
            throw ShapeError("predict: patch inputs must match the model patch size " +
                             std::to_string(P));
        PatchRecord rec;
        rec.patch_size = static_cast<int>(P);
        rec.mri = mri.data;
        rec.ius = ius.data;
        minmax_normalize(rec.mri);
        minmax_normalize(rec.ius);
        rec.error.assign(mri.size(), 0.0f);
        save_map(predict_one(rec), mri, o.out);
        std::cout << "predict: wrote " << o.out << "\n";
        return;
    }

    // whole-volume mode: landmark-centered patches, --out is a directory
    const LandmarkSet lms = load_landmarks(o.landmarks);
    Volume no_truth(mri.dims, mri.spacing, mri.origin, Modality::ERROR);
    no_truth.data.assign(mri.size(), 0.0f);
    PatchProvenance prov;
    prov.patient_id = "case";
    const auto patches =
        extract_patches(mri, ius, no_truth, lms, static_cast<int>(P), prov, false);
    if (patches.empty()) throw EmptyPairs("predict: no landmark fits inside the volume");
    fs::create_directories(o.out);
    for (const auto& rec : patches)
        save_map(predict_one(rec), mri, fs::path(o.out) / (sanitized_id(rec) + ".json"));
    std::cout << "predict: wrote " << patches.size() << " error maps under " << o.out << "\n";
}

struct EvaluateOpts {
    std::string run, manifest, split_file, predictions, out;
    std::string split = "test";
    bool use_truth = false;
    bool histogram = false;
    int runtime_patches = 5, warmup = 1;
    int jobs = 1;
};

void cmd_evaluate(const EvaluateOpts& o) {
    std::optional<fs::path> split_path;
    if (!o.split_file.empty()) split_path = fs::path(o.split_file);
    const auto truth = load_eval_split(o.manifest, split_path, o.split);

    write_resolved_config(o.out, "evaluate",
                          json{{"run", o.run},
                               {"manifest", o.manifest},
                               {"split", o.split},
                               {"predictions", o.predictions},
                               {"use_truth", o.use_truth},
                               {"runtime_patches", o.runtime_patches},
                               {"warmup", o.warmup},
                               {"jobs", o.jobs}});

    std::vector<std::vector<float>> preds;
    double runtime = 0.0;
    if (o.use_truth) {
        for (const auto& rec : truth) preds.push_back(rec.error);
    } else if (!o.predictions.empty()) {
        for (const auto& rec : truth) {
            const fs::path p = fs::path(o.predictions) / (sanitized_id(rec) + ".json");
            preds.push_back(load_volume(p).data);
        }
    } else if (!o.run.empty()) {
        auto [cfg, params] = load_run(o.run);
        for (const auto& rec : truth) {
            if (rec.patch_size != cfg.patch_size)
                throw ShapeError("evaluate: dataset patch size does not match the model");
            std::vector<const PatchRecord*> batch{&rec};
            nn::Tensor pred = forward(cfg, params, batch_tensor(batch, &PatchRecord::mri),
                                      batch_tensor(batch, &PatchRecord::ius));
            preds.emplace_back(pred.data().begin(), pred.data().end());
        }
        runtime = measure_runtime(cfg, params, o.runtime_patches, o.warmup);
    } else {
        throw ConfigError("evaluate: give one of --run, --predictions or --use-truth");
    }

    EvalReport rep = evaluate_predictions(truth, preds);
    rep.avg_runtime_s = runtime;
    rep.environment.device = "cpu";
    rep.environment.deterministic = true;
    rep.environment.threads = o.jobs;
    emit_report(rep, fs::path(o.out) / "report.json", ReportFormat::json);

    if (o.histogram) {
        std::vector<float> all_truth, all_pred;
        for (const auto& rec : truth)
            all_truth.insert(all_truth.end(), rec.error.begin(), rec.error.end());
        for (const auto& p : preds) all_pred.insert(all_pred.end(), p.begin(), p.end());
        write_histogram_ppm(all_truth, all_pred, fs::path(o.out) / "histogram.ppm");
    }
    std::cout << "evaluate: " << rep.per_patch.size() << " patches, cohort MAE "
              << rep.cohort_patch_mean << " mm +/- " << rep.cohort_patch_std
              << " (population), avg runtime " << rep.avg_runtime_s << " s\n";
}

struct ReportOpts {
    std::string in, out;
    std::string format = "markdown";
};

void cmd_report(const ReportOpts& o) {
    const EvalReport rep = load_report(o.in);
    ReportFormat fmt;
    if (o.format == "json")
        fmt = ReportFormat::json;
    else if (o.format == "csv")
        fmt = ReportFormat::csv;
    else if (o.format == "markdown" || o.format == "md")
        fmt = ReportFormat::markdown;
    else
        throw ConfigError("report: unknown format " + o.format);
    emit_report(rep, o.out, fmt);
    std::cout << "report: wrote " << o.out << "\n";
}

int cmd_selfcheck() {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, const std::string& detail) {
        if (ok)
            std::cout << "ok " << name << "\n";
        else {
            std::cout << "FAIL " << name << ": " << detail << "\n";
            ++failures;
        }
    };

    {
        // partition of unity across the cell; test hook deliberately breaks it
        const bool perturb = [] {
            const char* v = std::getenv("REGERR_SELFCHECK_PERTURB_BASIS");
            return v != nullptr && std::string(v) == "1";
        }();
        double worst = 0;
        for (int i = 0; i < 100; ++i) {
            const auto b = bspline_basis(i / 100.0);
            double s = b[0] + b[1] + b[2] + b[3];
            if (perturb) s += 1e-3;
            worst = std::max(worst, std::abs(s - 1.0));
        }
        check("partition-of-unity", worst < 1e-12, "max |sum-1| = " + std::to_string(worst));
    }
    {
        Volume vol({8, 8, 8}, {1.5, 1.5, 1.5}, {0, 0, 0}, Modality::MRI);
        vol.data.assign(vol.size(), 0.0f);
        DeformationSpec spec;
        spec.seed = 17;
        const ControlGrid grid = sample_random_grid(spec, vol);
        const DisplacementField fast = dense_field(grid, vol);
        const DisplacementField slow = brute_force_field(grid, vol);
        double worst = 0;
        for (std::size_t i = 0; i < fast.d.size(); ++i)
            worst = std::max(worst, std::abs(fast.d[i] - slow.d[i]));
        check("ffd-oracle-8cubed", worst < 1e-6, "max |fast-slow| = " + std::to_string(worst));
    }
    {
        // analytic loss gradient vs central differences on a 5^3 patch
        Rng rng(29);
        const nn::Shape s{1, 1, 5, 5, 5};
        std::vector<double> pv(125), tv(125);
        for (auto& x : pv) x = rng.uniform(0, 2);
        for (auto& x : tv) x = rng.uniform(0, 2);
        nn::Tensor phi = nn::Tensor::from(s, pv, true);
        nn::Tensor truth = nn::Tensor::from(s, tv);
        LossResult l = loss(phi, truth, 0.01);
        nn::backward(l.total);
        double worst = 0;
        const double eps = 1e-5;
        for (std::size_t i = 0; i < 125; i += 17) {
            auto eval = [&](double delta) {
                auto v = pv;
                v[i] += delta;
                return loss(nn::Tensor::from(s, v), truth, 0.01).total.item();
            };
            const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
            const double an = phi.grad()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
        }
        check("loss-gradient", worst < 1e-4, "max rel err = " + std::to_string(worst));
    }
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"regerr: dense registration-error estimation for MRI/iUS volumes"};
    app.require_subcommand(1);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file mirroring flag names; flags override it");
    int jobs = 1;
    app.add_option("--jobs", jobs, "cap internal parallelism")->capture_default_str();

    SimulateOpts so;
    auto* sim = app.add_subcommand("simulate", "apply random B-spline misalignments to one case");
    sim->add_option("--case", so.case_path, "case descriptor JSON")->required();
    sim->add_option("--seed", so.seed, "RNG seed")->capture_default_str();
    sim->add_option("--n-deformations", so.n_deformations, "deformations per case (paper)")
        ->capture_default_str();
    sim->add_option("--max-points", so.max_points, "max control points per axis (paper)")
        ->capture_default_str();
    sim->add_option("--max-disp-mm", so.max_disp_mm, "max control displacement in mm (paper)")
        ->capture_default_str();
    sim->add_option("--out", so.out, "output directory")->required();
    sim->callback([&] { cmd_simulate(so); });

    BuildDatasetOpts bo;
    auto* bld = app.add_subcommand("build-dataset", "simulate cases and extract patch datasets");
    bld->add_option("--cases", bo.cases, "case descriptor JSON files")->required()->expected(-1);
    bld->add_option("--seed", bo.seed, "RNG seed")->capture_default_str();
    bld->add_option("--n-deformations", bo.n_deformations, "deformations per case (paper)")
        ->capture_default_str();
    bld->add_option("--max-points", bo.max_points, "max control points per axis (paper)")
        ->capture_default_str();
    bld->add_option("--max-disp-mm", bo.max_disp_mm, "max control displacement in mm (paper)")
        ->capture_default_str();
    bld->add_option("--patch-size", bo.patch_size, "patch edge in voxels (paper)")
        ->capture_default_str();
    bld->add_flag("--verbose", bo.verbose, "report skipped landmarks");
    bld->add_option("--out", bo.out, "output directory")->required();
    bld->callback([&] { cmd_build_dataset(bo); });

    SplitOpts po;
    auto* spl = app.add_subcommand("split", "subject-wise train/val/test assignment");
    spl->add_option("--manifest", po.manifest, "dataset manifest to split");
    spl->add_option("--patients", po.patients, "or: synthesize this many patient ids");
    spl->add_option("--fractions", po.fractions, "train/val/test fractions (paper)")
        ->capture_default_str();
    spl->add_option("--seed", po.seed, "RNG seed")->capture_default_str();
    spl->add_option("--out", po.out, "output directory for split.json");
    spl->callback([&] { cmd_split(po); });

    TrainOpts to;
    auto* trn = app.add_subcommand("train", "train the dual-encoder Swin-UNETR regressor");
    to.cmd = trn;
    trn->add_option("--manifest", to.manifest, "dataset manifest")->required();
    trn->add_option("--split", to.split, "split.json (defaults to the manifest's embedded split)");
    trn->add_option("--out", to.out, "run directory")->required();
    trn->add_option("--resume", to.resume, "checkpoint to resume from");
    trn->add_flag("--toy", to.toy, "small test preset (32^3, reduced widths)");
    trn->add_option("--patch-size", to.patch_size, "model patch size; 0 follows the manifest")
        ->capture_default_str();
    trn->add_option("--unet-channels", to.unet_channels, "UNet feature channels")
        ->capture_default_str();
    trn->add_option("--embed-dim", to.embed_dim, "transformer embedding dim")
        ->capture_default_str();
    trn->add_option("--window-size", to.window_size, "attention window edge")
        ->capture_default_str();
    trn->add_option("--batch-size", to.tc.batch_size, "batch size (paper)")
        ->capture_default_str();
    trn->add_option("--epochs", to.tc.epochs, "training epochs (paper)")->capture_default_str();
    trn->add_option("--lr", to.tc.learning_rate, "AdamW learning rate (paper)")
        ->capture_default_str();
    trn->add_option("--lambda", to.tc.lambda_smooth, "smoothness weight (paper)")
        ->capture_default_str();
    trn->add_flag("--smooth-l1", to.tc.smooth_l1, "L1 smoothness variant");
    trn->add_option("--seed", to.tc.seed, "RNG seed")->capture_default_str();
    trn->callback([&] { cmd_train(to); });

    PredictOpts ro;
    auto* prd = app.add_subcommand("predict", "predict dense error maps with a trained run");
    prd->add_option("--run", ro.run, "training run directory (config.json + best.ckpt)")
        ->required();
    prd->add_option("--mri", ro.mri, "MRI patch or volume (raw_json)")->required();
    prd->add_option("--ius", ro.ius, "iUS patch or volume (raw_json)")->required();
    prd->add_option("--landmarks", ro.landmarks,
                    "landmark list: treat inputs as whole volumes, write one map per landmark");
    prd->add_option("--out", ro.out, "output map file (patch mode) or directory")->required();
    prd->callback([&] { cmd_predict(ro); });

    EvaluateOpts eo;
    auto* evl = app.add_subcommand("evaluate", "MAE and runtime report on a dataset split");
    evl->add_option("--run", eo.run, "training run directory");
    evl->add_option("--manifest", eo.manifest, "dataset manifest")->required();
    evl->add_option("--split-file", eo.split_file, "split.json if not embedded in the manifest");
    evl->add_option("--split", eo.split, "split to evaluate")->capture_default_str();
    evl->add_option("--predictions", eo.predictions, "directory of predicted maps from `predict`");
    evl->add_flag("--use-truth", eo.use_truth, "ground-truth-as-prediction fixture");
    evl->add_flag("--histogram", eo.histogram, "emit predicted-vs-true histogram.ppm");
    evl->add_option("--runtime-patches", eo.runtime_patches, "timed forward calls")
        ->capture_default_str();
    evl->add_option("--warmup", eo.warmup, "discarded warmup calls")->capture_default_str();
    evl->add_option("--out", eo.out, "output directory")->required();
    evl->callback([&] {
        eo.jobs = jobs;
        cmd_evaluate(eo);
    });

    ReportOpts go;
    auto* rpt = app.add_subcommand("report", "render a report.json as markdown/csv/json");
    rpt->add_option("--in", go.in, "report.json produced by evaluate")->required();
    rpt->add_option("--format", go.format, "json, csv or markdown")->capture_default_str();
    rpt->add_option("--out", go.out, "output file")->required();
    rpt->callback([&] { cmd_report(go); });

    int selfcheck_rc = 0;
    auto* slf = app.add_subcommand("selfcheck", "fast embedded property suite");
    slf->callback([&] { selfcheck_rc = cmd_selfcheck(); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2; // bad flags/config are config errors
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const regerr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return selfcheck_rc;
}
