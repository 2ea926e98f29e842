#pragma once

#include <filesystem>
#include <string>

#include "regerr/volume.hpp"

namespace regerr {

enum class VolumeFormat { raw_json, nifti };

// Canonical raw_json format: `<name>.json` header + `<name>.raw` little-endian
// f32 payload, x-fastest. `path` names the .json file. `components` > 1 stores
// interleaved vectors per voxel (used for displacement fields).
Volume load_volume(const std::filesystem::path& path, VolumeFormat format = VolumeFormat::raw_json);
void save_volume(const Volume& v, const std::filesystem::path& json_path);

// Multi-component payload support for displacement fields. Data layout in the
// returned vector is component-fastest per voxel, x-fastest over voxels.
struct RawField {
    Index3 dims{0, 0, 0};
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    int components = 1;
    std::vector<float> data;
};
RawField load_raw_field(const std::filesystem::path& json_path);
void save_raw_field(const RawField& f, const std::filesystem::path& json_path);

LandmarkSet load_landmarks(const std::filesystem::path& path);
LandmarkPairs load_landmark_pairs(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& s, const std::filesystem::path& path);

} // namespace regerr
