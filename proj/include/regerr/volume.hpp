#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "regerr/errors.hpp"

namespace regerr {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<std::int64_t, 3>;

enum class Modality { MRI, iUS, ERROR, OTHER };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& s);

// Axis-aligned 3D scalar image. World coordinate of voxel (i,j,k) center is
// origin + (i,j,k) * spacing. Payload is x-fastest.
struct Volume {
    Index3 dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    Modality modality = Modality::OTHER;
    std::vector<float> data;

    Volume() = default;
    Volume(Index3 d, Vec3 sp, Vec3 org, Modality m);

    std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
    std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
    }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const { return data[index(i, j, k)]; }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data[index(i, j, k)]; }

    bool in_bounds(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i >= 0 && i < dims[0] && j >= 0 && j < dims[1] && k >= 0 && k < dims[2];
    }

    Vec3 voxel_to_world(double i, double j, double k) const {
        return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
    }
    Vec3 world_to_voxel(const Vec3& w) const {
        return {(w[0] - origin[0]) / spacing[0], (w[1] - origin[1]) / spacing[1],
                (w[2] - origin[2]) / spacing[2]};
    }
    // World extent covered by voxel volumes (centers +- half spacing).
    Vec3 extent_mm() const {
        return {dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]};
    }

    bool same_geometry(const Volume& o, double tol = 1e-9) const;

    void validate() const; // throws on invariant violation
};

// Trilinear sample at continuous voxel coordinates; zero outside bounds.
float trilinear_sample(const Volume& v, double x, double y, double z);

// Trilinear sample at a world-space position.
float trilinear_sample_world(const Volume& v, const Vec3& w);

struct Landmark {
    std::string id;
    Vec3 position; // world mm
};

struct LandmarkSet {
    std::vector<Landmark> entries;
};

struct LandmarkPair {
    std::string id;
    Vec3 fixed_position;
    Vec3 moving_position;
};

struct LandmarkPairs {
    std::vector<LandmarkPair> pairs;
};

// resample to isotropic spacing (t,t,t); trilinear at new voxel centers,
// zero outside the input's sampled extent.
Volume resample_isotropic(const Volume& v, double target_spacing);

// Restrict `target` to the world bounding box of `reference`'s nonzero
// voxels, dilated by margin_mm, clamped to target bounds.
Volume crop_to_fov(const Volume& reference, const Volume& target, double margin_mm);

} // namespace regerr
