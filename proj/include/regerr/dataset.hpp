#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "regerr/ffd.hpp"
#include "regerr/volume.hpp"

namespace regerr {

// Paired MRI/iUS patches with the ground-truth error patch and provenance.
// MRI and iUS intensities are min-max normalized per patch; the error patch
// stays in mm.
struct PatchRecord {
    int patch_size = 0;
    std::vector<float> mri;
    std::vector<float> ius;
    std::vector<float> error;
    std::string patient_id;
    std::string landmark_id;
    int deformation_index = 0;
    std::uint64_t seed = 0;
    Vec3 center_world_mm{0, 0, 0};
};

enum class Split { train, val, test };
std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct SplitManifest {
    std::map<std::string, Split> assignment;
    std::array<double, 3> fractions{0.6, 0.2, 0.2};
    std::uint64_t seed = 0;
};

struct SimulatedDeformation {
    Volume warped_ius;
    Volume error; // magnitude map on the fixed grid
    ControlGrid grid;
};

// One random deformation per index; the per-deformation seed is
// hash64(spec.seed, patient_id, index).
std::vector<SimulatedDeformation> simulate_case(const Volume& mri, const Volume& ius,
                                                const DeformationSpec& spec,
                                                const std::string& patient_id,
                                                int n_deformations);

struct PatchProvenance {
    std::string patient_id;
    int deformation_index = 0;
    std::uint64_t seed = 0;
};

// Landmark-centered extraction with boundary clamping. Landmarks whose
// containing volume is smaller than the patch are skipped (and reported on
// stderr when `verbose`).
std::vector<PatchRecord> extract_patches(const Volume& mri, const Volume& warped_ius,
                                         const Volume& error, const LandmarkSet& landmarks,
                                         int patch_size, const PatchProvenance& prov,
                                         bool verbose = false);

struct CaseDescriptor {
    std::string patient_id;
    std::filesystem::path mri_path;
    std::filesystem::path ius_path;
    std::filesystem::path landmarks_path;
    std::optional<std::filesystem::path> pairs_path;
};
CaseDescriptor load_case_descriptor(const std::filesystem::path& path);

struct ManifestRecord {
    std::string patient_id;
    std::string landmark_id;
    int deformation_index = 0;
    std::uint64_t seed = 0;
    Vec3 center_world_mm{0, 0, 0};
    std::string file; // .pr path relative to the manifest
    std::string grid_file;
};

struct DatasetManifest {
    int patch_size = 0;
    std::uint64_t seed = 0;
    int n_deformations = 0;
    std::vector<ManifestRecord> records;
    std::optional<SplitManifest> split;
};

DatasetManifest build_dataset(const std::vector<CaseDescriptor>& cases,
                              const DeformationSpec& spec, int patch_size, int n_deformations,
                              const std::filesystem::path& out_dir, bool verbose = false);

SplitManifest make_split(const std::vector<std::string>& patients,
                         std::array<double, 3> fractions, std::uint64_t seed);

// .pr container round trip
void save_patch_record(const PatchRecord& r, const std::filesystem::path& path);
PatchRecord load_patch_record(const std::filesystem::path& path);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_split(const SplitManifest& s, const std::filesystem::path& path);
SplitManifest load_split(const std::filesystem::path& path);

} // namespace regerr
