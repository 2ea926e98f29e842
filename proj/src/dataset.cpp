#include "regerr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "regerr/rng.hpp"
#include "regerr/volume_io.hpp"

namespace regerr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError("unknown split name: " + s);
}

std::vector<SimulatedDeformation> simulate_case(const Volume& mri, const Volume& ius,
                                                const DeformationSpec& spec,
                                                const std::string& patient_id,
                                                int n_deformations) {
    if (!mri.same_geometry(ius))
        throw GeometryMismatch("simulate_case: MRI and iUS geometry differ for patient " +
                               patient_id);
    if (n_deformations < 1) throw ConfigError("n_deformations must be >= 1");

    std::vector<SimulatedDeformation> out;
    out.reserve(static_cast<std::size_t>(n_deformations));
    for (int k = 0; k < n_deformations; ++k) {
        DeformationSpec child = spec;
        child.seed = hash64(spec.seed, patient_id, static_cast<std::uint64_t>(k));
        const ControlGrid grid = sample_random_grid(child, ius);
        const DisplacementField field = dense_field(grid, ius);
        out.push_back({warp_volume(ius, field), magnitude_map(field), grid});
    }
    return out;
}

namespace {

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
    for (auto& v : patch) v = (v - lo) / (hi - lo);
}

std::vector<float> slice_patch(const Volume& v, const Index3& start, int P) {
    std::vector<float> out(static_cast<std::size_t>(P) * P * P);
    std::size_t o = 0;
    for (int k = 0; k < P; ++k)
        for (int j = 0; j < P; ++j)
            for (int i = 0; i < P; ++i)
                out[o++] = v.at(start[0] + i, start[1] + j, start[2] + k);
    return out;
}

} // namespace

std::vector<PatchRecord> extract_patches(const Volume& mri, const Volume& warped_ius,
                                         const Volume& error, const LandmarkSet& landmarks,
                                         int patch_size, const PatchProvenance& prov,
                                         bool verbose) {
    if (patch_size < 2 || patch_size % 2 != 0)
        throw ConfigError("patch_size must be a positive even number");
    if (!mri.same_geometry(warped_ius) || !mri.same_geometry(error))
        throw GeometryMismatch("extract_patches: volumes must share geometry");

    const int P = patch_size;
    std::vector<PatchRecord> out;
    for (const auto& lm : landmarks.entries) {
        if (mri.dims[0] < P || mri.dims[1] < P || mri.dims[2] < P) {
            if (verbose)
                std::cerr << "skip landmark " << lm.id << ": volume smaller than patch\n";
            continue;
        }
        const Vec3 c = mri.world_to_voxel(lm.position);
        Index3 start{};
        for (int a = 0; a < 3; ++a) {
            const auto center = static_cast<std::int64_t>(std::llround(c[a]));
            start[a] = std::clamp<std::int64_t>(center - P / 2, 0, mri.dims[a] - P);
        }
        PatchRecord r;
        r.patch_size = P;
        r.mri = slice_patch(mri, start, P);
        r.ius = slice_patch(warped_ius, start, P);
        r.error = slice_patch(error, start, P);
        minmax_normalize(r.mri);
        minmax_normalize(r.ius);
        r.patient_id = prov.patient_id;
        r.landmark_id = lm.id;
        r.deformation_index = prov.deformation_index;
        r.seed = prov.seed;
        r.center_world_mm = lm.position;
        out.push_back(std::move(r));
    }
    return out;
}

CaseDescriptor load_case_descriptor(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("missing case descriptor: " + path.string());
    json h;
    try {
        in >> h;
    } catch (const json::exception& e) {
        throw FormatError("malformed case descriptor " + path.string() + ": " + e.what());
    }
    CaseDescriptor c;
    try {
        c.patient_id = h.at("patient_id").get<std::string>();
        const fs::path base = path.parent_path();
        auto resolve = [&](const std::string& p) {
            const fs::path fp(p);
            return fp.is_absolute() ? fp : base / fp;
        };
        c.mri_path = resolve(h.at("mri").get<std::string>());
        c.ius_path = resolve(h.at("ius").get<std::string>());
        c.landmarks_path = resolve(h.at("landmarks").get<std::string>());
        if (h.contains("pairs")) c.pairs_path = resolve(h.at("pairs").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError("bad case descriptor " + path.string() + ": " + e.what());
    }
    return c;
}

namespace {

constexpr char kMagic[4] = {'P', 'R', 'C', '1'};
constexpr std::size_t kHeaderSize = 64;

} // namespace

void save_patch_record(const PatchRecord& r, const fs::path& path) {
    const auto n = static_cast<std::size_t>(r.patch_size) * r.patch_size * r.patch_size;
    if (r.mri.size() != n || r.ius.size() != n || r.error.size() != n)
        throw ConfigError("patch record arrays do not match patch_size^3");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());

    char header[kHeaderSize] = {};
    std::memcpy(header, kMagic, 4);
    const auto p32 = static_cast<std::uint32_t>(r.patch_size);
    std::memcpy(header + 4, &p32, 4);
    const std::uint64_t bytes = n * sizeof(float);
    const std::uint64_t offs[3] = {kHeaderSize, kHeaderSize + bytes, kHeaderSize + 2 * bytes};
    std::memcpy(header + 8, offs, 24);
    std::memcpy(header + 32, &r.seed, 8);
    out.write(header, kHeaderSize);
    out.write(reinterpret_cast<const char*>(r.mri.data()), static_cast<std::streamsize>(bytes));
    out.write(reinterpret_cast<const char*>(r.ius.data()), static_cast<std::streamsize>(bytes));
    out.write(reinterpret_cast<const char*>(r.error.data()), static_cast<std::streamsize>(bytes));
    if (!out) throw IoError("short write to " + path.string());
}

PatchRecord load_patch_record(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileMissing("missing patch record: " + path.string());
    char header[kHeaderSize];
    in.read(header, kHeaderSize);
    if (in.gcount() != kHeaderSize) throw FormatError("patch record header truncated: " + path.string());
    if (std::memcmp(header, kMagic, 4) != 0)
        throw FormatError("bad patch record magic in " + path.string());

    PatchRecord r;
    std::uint32_t p32;
    std::memcpy(&p32, header + 4, 4);
    r.patch_size = static_cast<int>(p32);
    std::uint64_t offs[3];
    std::memcpy(offs, header + 8, 24);
    std::memcpy(&r.seed, header + 32, 8);

    const auto n = static_cast<std::size_t>(r.patch_size) * r.patch_size * r.patch_size;
    auto read_arr = [&](std::uint64_t off, std::vector<float>& dst) {
        dst.resize(n);
        in.seekg(static_cast<std::streamoff>(off));
        in.read(reinterpret_cast<char*>(dst.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
            throw FormatError("patch record payload truncated: " + path.string());
    };
    read_arr(offs[0], r.mri);
    read_arr(offs[1], r.ius);
    read_arr(offs[2], r.error);
    return r;
}

DatasetManifest build_dataset(const std::vector<CaseDescriptor>& cases,
                              const DeformationSpec& spec, int patch_size, int n_deformations,
                              const fs::path& out_dir, bool verbose) {
    fs::create_directories(out_dir);
    DatasetManifest manifest;
    manifest.patch_size = patch_size;
    manifest.seed = spec.seed;
    manifest.n_deformations = n_deformations;

    for (const auto& c : cases) {
        try {
            const Volume mri = load_volume(c.mri_path);
            const Volume ius = load_volume(c.ius_path);
            const LandmarkSet landmarks = load_landmarks(c.landmarks_path);
            const auto sims = simulate_case(mri, ius, spec, c.patient_id, n_deformations);
            for (int k = 0; k < n_deformations; ++k) {
                const auto& sim = sims[static_cast<std::size_t>(k)];
                const std::string grid_file =
                    c.patient_id + "_grid_" + std::to_string(k) + ".json";
                save_control_grid(sim.grid, out_dir / grid_file);

                const PatchProvenance prov{c.patient_id, k, sim.grid.seed};
                const auto records = extract_patches(mri, sim.warped_ius, sim.error, landmarks,
                                                     patch_size, prov, verbose);
                for (const auto& r : records) {
                    const std::string file = r.patient_id + "_" + r.landmark_id + "_" +
                                             std::to_string(k) + ".pr";
                    save_patch_record(r, out_dir / file);
                    manifest.records.push_back({r.patient_id, r.landmark_id, k, r.seed,
                                                r.center_world_mm, file, grid_file});
                }
            }
        } catch (const Error& e) {
            throw DataError("case '" + c.patient_id + "' failed: " + e.what());
        }
    }

    std::sort(manifest.records.begin(), manifest.records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) {
                  return std::tie(a.patient_id, a.landmark_id, a.deformation_index) <
                         std::tie(b.patient_id, b.landmark_id, b.deformation_index);
              });
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

SplitManifest make_split(const std::vector<std::string>& patients,
                         std::array<double, 3> fractions, std::uint64_t seed) {
    if (patients.size() < 3) throw TooFewPatients("need at least 3 patients to split");
    const double fsum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

    std::vector<std::string> ids = patients;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw DuplicateId("duplicate patient id in split input");

    Rng rng(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(ids[i], ids[j]);
    }

    // rounding rule: round the train count first, then val; test gets the rest
    const auto n = static_cast<std::int64_t>(ids.size());
    auto n_train = static_cast<std::int64_t>(std::llround(double(n) * fractions[0]));
    auto n_val = static_cast<std::int64_t>(std::llround(double(n) * fractions[1]));
    n_train = std::clamp<std::int64_t>(n_train, 1, n - 2);
    n_val = std::clamp<std::int64_t>(n_val, 1, n - n_train - 1);

    SplitManifest s;
    s.fractions = fractions;
    s.seed = seed;
    for (std::int64_t i = 0; i < n; ++i) {
        const Split sp = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        s.assignment[ids[static_cast<std::size_t>(i)]] = sp;
    }
    return s;
}

namespace {

json split_to_json(const SplitManifest& s) {
    json h;
    h["fractions"] = s.fractions;
    h["seed"] = s.seed;
    json a = json::object();
    for (const auto& [pid, sp] : s.assignment) a[pid] = split_name(sp);
    h["assignment"] = a;
    return h;
}

SplitManifest split_from_json(const json& h) {
    SplitManifest s;
    s.fractions = h.at("fractions").get<std::array<double, 3>>();
    s.seed = h.at("seed").get<std::uint64_t>();
    for (const auto& [pid, name] : h.at("assignment").items())
        s.assignment[pid] = split_from_name(name.get<std::string>());
    return s;
}

} // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    json h;
    h["patch_size"] = m.patch_size;
    h["seed"] = m.seed;
    h["n_deformations"] = m.n_deformations;
    json recs = json::array();
    for (const auto& r : m.records) {
        json e;
        e["patient_id"] = r.patient_id;
        e["landmark_id"] = r.landmark_id;
        e["deformation_index"] = r.deformation_index;
        e["seed"] = r.seed;
        e["center_world_mm"] = r.center_world_mm;
        e["file"] = r.file;
        e["grid_file"] = r.grid_file;
        recs.push_back(e);
    }
    h["records"] = recs;
    if (m.split) h["split"] = split_to_json(*m.split);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << h.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("missing manifest: " + path.string());
    json h;
    try {
        in >> h;
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.patch_size = h.at("patch_size").get<int>();
        m.seed = h.at("seed").get<std::uint64_t>();
        m.n_deformations = h.value("n_deformations", 0);
        for (const auto& e : h.at("records")) {
            m.records.push_back({e.at("patient_id").get<std::string>(),
                                 e.at("landmark_id").get<std::string>(),
                                 e.at("deformation_index").get<int>(),
                                 e.at("seed").get<std::uint64_t>(),
                                 e.at("center_world_mm").get<Vec3>(),
                                 e.at("file").get<std::string>(),
                                 e.value("grid_file", std::string{})});
        }
        if (h.contains("split")) m.split = split_from_json(h.at("split"));
    } catch (const json::exception& e) {
        throw FormatError("bad manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void save_split(const SplitManifest& s, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << split_to_json(s).dump(2) << "\n";
}

SplitManifest load_split(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("missing split manifest: " + path.string());
    json h;
    try {
        in >> h;
        return split_from_json(h);
    } catch (const json::exception& e) {
        throw FormatError("bad split manifest " + path.string() + ": " + e.what());
    }
}

} // namespace regerr
