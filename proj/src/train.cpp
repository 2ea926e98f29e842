#include "regerr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>

#include <nlohmann/json.hpp>

#include "regerr/rng.hpp"

namespace regerr {

using nlohmann::json;
using nn::Tensor;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (lambda_smooth < 0.0) throw ConfigError("lambda_smooth must be >= 0");
}

LossResult loss(const Tensor& predicted, const Tensor& truth, double lambda, bool smooth_l1) {
    if (predicted.shape() != truth.shape()) throw ShapeError("loss: shape mismatch");
    if (lambda < 0.0) throw ConfigError("loss: lambda must be >= 0");
    LossResult r;
    r.sim = nn::mse_loss(predicted, truth);
    r.smooth = nn::smoothness_loss(predicted, smooth_l1);
    r.total = nn::add(r.sim, nn::scale(r.smooth, lambda));
    return r;
}

void AdamW::init(const ModelParameters& params) {
    step_count = 0;
    m.clear();
    v.clear();
    for (const auto& name : params.order) {
        const auto n = params.at(name).data().size();
        m.emplace_back(n, 0.0);
        v.emplace_back(n, 0.0);
    }
}

void AdamW::step(ModelParameters& params) {
    if (m.size() != params.order.size()) throw ConfigError("AdamW::step before init");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t pi = 0; pi < params.order.size(); ++pi) {
        Tensor& t = params.at(params.order[pi]);
        auto& val = t.data();
        const auto& grad = t.node()->grad;
        if (grad.empty()) continue; // parameter unused by this graph
        auto& mi = m[pi];
        auto& vi = v[pi];
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double g = grad[i];
            mi[i] = beta1 * mi[i] + (1.0 - beta1) * g;
            vi[i] = beta2 * vi[i] + (1.0 - beta2) * g * g;
            const double mhat = mi[i] / bc1;
            const double vhat = vi[i] / bc2;
            val[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val[i]);
        }
    }
}

Tensor batch_tensor(const std::vector<const PatchRecord*>& batch,
                    const std::vector<float> PatchRecord::* field) {
    if (batch.empty()) throw EmptySplit("batch_tensor: empty batch");
    const auto p = static_cast<std::int64_t>(batch.front()->patch_size);
    const std::int64_t voxels = p * p * p;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(voxels) * batch.size());
    for (const auto* rec : batch) {
        const auto& src = rec->*field;
        if (rec->patch_size != batch.front()->patch_size ||
            static_cast<std::int64_t>(src.size()) != voxels)
            throw ShapeError("batch_tensor: inconsistent patch sizes");
        for (float x : src) data.push_back(static_cast<double>(x));
    }
    return Tensor::from({static_cast<std::int64_t>(batch.size()), 1, p, p, p}, std::move(data));
}

namespace {

std::vector<std::vector<const PatchRecord*>> make_batches(const std::vector<PatchRecord>& set,
                                                          const std::vector<std::size_t>& order,
                                                          std::int64_t batch_size) {
    std::vector<std::vector<const PatchRecord*>> batches;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
        std::vector<const PatchRecord*> b;
        for (std::size_t j = i; j < order.size() && j < i + static_cast<std::size_t>(batch_size);
             ++j)
            b.push_back(&set[order[j]]);
        batches.push_back(std::move(b));
    }
    return batches;
}

double batch_mae_sum(const Tensor& pred, const std::vector<const PatchRecord*>& batch) {
    const auto& s = pred.shape();
    const std::int64_t voxels = s[2] * s[3] * s[4];
    double sum = 0.0;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const double* p = pred.data().data() + static_cast<std::int64_t>(bi) * voxels;
        const auto& f = batch[bi]->error;
        double acc = 0.0;
        for (std::int64_t i = 0; i < voxels; ++i)
            acc += std::abs(p[i] - static_cast<double>(f[size_t(i)]));
        sum += acc / static_cast<double>(voxels);
    }
    return sum;
}

} // namespace

double dataset_mae(const ModelConfig& cfg, ModelParameters& params,
                   const std::vector<PatchRecord>& patches, std::int64_t batch_size) {
    if (patches.empty()) throw EmptySplit("dataset_mae: no patches");
    std::vector<std::size_t> order(patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double sum = 0.0;
    for (const auto& batch : make_batches(patches, order, batch_size)) {
        Tensor pred = forward(cfg, params, batch_tensor(batch, &PatchRecord::mri),
                              batch_tensor(batch, &PatchRecord::ius));
        sum += batch_mae_sum(pred, batch);
    }
    return sum / static_cast<double>(patches.size());
}

std::vector<PatchRecord> load_split_patches(const DatasetManifest& manifest,
                                            const std::filesystem::path& manifest_dir,
                                            const SplitManifest& split, Split which) {
    std::vector<PatchRecord> out;
    for (const auto& rec : manifest.records) {
        auto it = split.assignment.find(rec.patient_id);
        if (it == split.assignment.end())
            throw KeyMismatch("patient missing from split: " + rec.patient_id);
        if (it->second != which) continue;
        PatchRecord p = load_patch_record(manifest_dir / rec.file);
        // the .pr container holds only the arrays; provenance lives here
        p.patient_id = rec.patient_id;
        p.landmark_id = rec.landmark_id;
        p.deformation_index = rec.deformation_index;
        p.center_world_mm = rec.center_world_mm;
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

json train_config_json(const ModelConfig& m, const TrainConfig& t) {
    return json{{"model",
                 {{"patch_size", m.patch_size},
                  {"unet_channels", m.unet_channels},
                  {"embed_dim", m.embed_dim},
                  {"window_size", m.window_size},
                  {"depths", m.depths},
                  {"num_heads", m.num_heads},
                  {"mlp_ratio", m.mlp_ratio}}},
                {"train",
                 {{"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"optimizer", "AdamW"},
                  {"learning_rate", t.learning_rate},
                  {"lambda_smooth", t.lambda_smooth},
                  {"smooth_l1", t.smooth_l1},
                  {"seed", t.seed},
                  {"device", t.device},
                  {"deterministic", t.deterministic}}}};
}

void require_same(const json& a, const json& b, const char* scope) {
    for (auto it = a.begin(); it != a.end(); ++it) {
        // run length and device hint may differ between save and resume
        // without changing the optimization trajectory
        if (it.key() == "epochs" || it.key() == "device") continue;
        if (!b.contains(it.key()) || b[it.key()] != it.value())
            throw VersionMismatch(std::string("checkpoint config mismatch in field ") + scope +
                                  "." + it.key());
    }
}

void write_f64(std::ofstream& f, const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_f64(std::ifstream& f, std::vector<double>& v, const std::filesystem::path& path) {
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!f) throw IoError("truncated checkpoint: " + path.string());
}

constexpr char kCkptMagic[4] = {'R', 'G', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

} // namespace

void checkpoint_save(const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const ModelParameters& params, const AdamW& opt, std::int64_t next_epoch,
                     std::int64_t best_epoch, double best_val_mae,
                     const std::vector<std::vector<double>>& best_values,
                     const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(kCkptMagic, 4);
    const std::uint32_t ver = kCkptVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);

    json meta = train_config_json(mcfg, tcfg);
    meta["state"] = {{"next_epoch", next_epoch},
                     {"best_epoch", best_epoch},
                     {"best_val_mae", best_val_mae},
                     {"step_count", opt.step_count},
                     {"has_best", !best_values.empty()}};
    const std::string blob = meta.dump();
    const auto blob_len = static_cast<std::uint64_t>(blob.size());
    f.write(reinterpret_cast<const char*>(&blob_len), 8);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));

    for (std::size_t pi = 0; pi < params.order.size(); ++pi) {
        write_f64(f, params.at(params.order[pi]).data());
        write_f64(f, opt.m[pi]);
        write_f64(f, opt.v[pi]);
        if (!best_values.empty()) write_f64(f, best_values[pi]);
    }
    if (!f) throw IoError("write failed: " + path.string());
}

CheckpointState checkpoint_resume(const ModelConfig& mcfg, const TrainConfig& tcfg,
                                  ModelParameters& params, const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileMissing("cannot open: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    std::uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    if (!f || ver != kCkptVersion)
        throw VersionMismatch("unsupported checkpoint version " + std::to_string(ver));
    std::uint64_t blob_len = 0;
    f.read(reinterpret_cast<char*>(&blob_len), 8);
    if (!f) throw IoError("truncated checkpoint: " + path.string());
    std::string blob(blob_len, '\0');
    f.read(blob.data(), static_cast<std::streamsize>(blob_len));
    if (!f) throw IoError("truncated checkpoint: " + path.string());

    json meta;
    try {
        meta = json::parse(blob);
    } catch (const json::exception&) {
        throw IoError("corrupt checkpoint metadata: " + path.string());
    }
    const json expect = train_config_json(mcfg, tcfg);
    require_same(expect["model"], meta["model"], "model");
    require_same(expect["train"], meta["train"], "train");

    CheckpointState st;
    st.next_epoch = meta["state"]["next_epoch"].get<std::int64_t>();
    st.best_epoch = meta["state"]["best_epoch"].get<std::int64_t>();
    st.best_val_mae = meta["state"]["best_val_mae"].get<double>();
    st.opt.lr = tcfg.learning_rate;
    st.opt.init(params);
    st.opt.step_count = meta["state"]["step_count"].get<std::int64_t>();
    const bool has_best = meta["state"]["has_best"].get<bool>();
    if (has_best) st.best_values.resize(params.order.size());

    for (std::size_t pi = 0; pi < params.order.size(); ++pi) {
        auto& val = params.at(params.order[pi]).data();
        read_f64(f, val, path);
        read_f64(f, st.opt.m[pi], path);
        read_f64(f, st.opt.v[pi], path);
        if (has_best) {
            st.best_values[pi].resize(val.size());
            read_f64(f, st.best_values[pi], path);
        }
    }
    return st;
}

TrainResult train(const ModelConfig& mcfg, ModelParameters& params,
                  const std::vector<PatchRecord>& train_set,
                  const std::vector<PatchRecord>& val_set, const TrainConfig& tcfg,
                  const std::filesystem::path& run_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
    mcfg.validate();
    tcfg.validate();
    if (train_set.empty()) throw EmptySplit("train: empty training split");
    if (val_set.empty()) throw EmptySplit("train: empty validation split");
    for (const auto& r : train_set)
        if (r.patch_size != mcfg.patch_size)
            throw ShapeError("train: patch size does not match model config");

    std::filesystem::create_directories(run_dir);
    {
        std::ofstream cf(run_dir / "config.json");
        cf << train_config_json(mcfg, tcfg).dump(2) << "\n";
        if (!cf) throw IoError("cannot write config.json under " + run_dir.string());
    }

    AdamW opt;
    opt.lr = tcfg.learning_rate;
    std::int64_t start_epoch = 0, best_epoch = -1;
    double best_val_mae = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_values;
    if (resume_from) {
        CheckpointState st = checkpoint_resume(mcfg, tcfg, params, *resume_from);
        opt = std::move(st.opt);
        start_epoch = st.next_epoch;
        best_epoch = st.best_epoch;
        best_val_mae = st.best_epoch >= 0 ? st.best_val_mae
                                          : std::numeric_limits<double>::infinity();
        best_values = std::move(st.best_values);
    } else {
        opt.init(params);
    }

    const auto history_path = run_dir / "history.csv";
    std::ofstream hist(history_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);
    if (!hist) throw IoError("cannot write history.csv under " + run_dir.string());
    if (start_epoch == 0) hist << "epoch,train_total,train_sim,train_smooth,val_mae\n";

    TrainResult result;
    result.best_epoch = best_epoch;
    result.best_val_mae = best_val_mae;

    for (std::int64_t epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
        // epoch-local shuffle stream keeps resumed runs on the same batch order
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(hash64(tcfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, std::int64_t(i) - 1))]);

        double sum_total = 0, sum_sim = 0, sum_smooth = 0;
        std::size_t batch_index = 0;
        for (const auto& batch : make_batches(train_set, order, tcfg.batch_size)) {
            params.zero_grad();
            Tensor pred = forward(mcfg, params, batch_tensor(batch, &PatchRecord::mri),
                                  batch_tensor(batch, &PatchRecord::ius));
            LossResult l = loss(pred, batch_tensor(batch, &PatchRecord::error),
                                tcfg.lambda_smooth, tcfg.smooth_l1);
            if (!std::isfinite(l.total.item()))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index));
            nn::backward(l.total);
            opt.step(params);
            const double w = static_cast<double>(batch.size());
            sum_total += l.total.item() * w;
            sum_sim += l.sim.item() * w;
            sum_smooth += l.smooth.item() * w;
            ++batch_index;
        }
        const double n = static_cast<double>(train_set.size());

        TrainHistoryRow row;
        row.epoch = epoch;
        row.train_total = sum_total / n;
        row.train_sim = sum_sim / n;
        row.train_smooth = sum_smooth / n;
        row.val_mae = dataset_mae(mcfg, params, val_set, tcfg.batch_size);
        result.history.push_back(row);
        hist << row.epoch << ',' << std::setprecision(17) << row.train_total << ','
             << row.train_sim << ',' << row.train_smooth << ',' << row.val_mae << '\n';
        hist.flush();

        if (row.val_mae < best_val_mae) {
            best_val_mae = row.val_mae;
            best_epoch = epoch;
            best_values.clear();
            for (const auto& name : params.order) best_values.push_back(params.at(name).data());
            save_parameters(params, run_dir / "best.ckpt");
        }
        result.best_epoch = best_epoch;
        result.best_val_mae = best_val_mae;
        checkpoint_save(mcfg, tcfg, params, opt, epoch + 1, best_epoch, best_val_mae, best_values,
                        run_dir / "last.ckpt");
    }

    if (!best_values.empty())
        for (std::size_t pi = 0; pi < params.order.size(); ++pi)
            params.at(params.order[pi]).data() = best_values[pi];
    return result;
}

} // namespace regerr
