#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "regerr/volume.hpp"

namespace regerr {

// Uniform cubic B-spline basis at fractional position t in [0,1).
std::array<double, 4> bspline_basis(double t);

// Lattice of control points for a free-form deformation. Coefficients are
// per-point displacement vectors in mm, stored component-fastest, then
// x-fastest. Interior points carry the deformation; a two-point padding ring
// on every side holds zeros so the cubic support always covers the volume.
struct ControlGrid {
    Index3 counts{0, 0, 0};
    Vec3 spacing_mm{1, 1, 1};
    Vec3 origin_mm{0, 0, 0}; // world position of control point (0,0,0)
    std::uint64_t seed = 0;  // provenance; 0 when not randomly generated
    std::vector<float> coeffs; // counts.x * counts.y * counts.z * 3

    std::size_t cidx(std::int64_t i, std::int64_t j, std::int64_t k, int c) const {
        return static_cast<std::size_t>(c) +
               3 * static_cast<std::size_t>(i + counts[0] * (j + counts[1] * k));
    }
    void validate() const;
};

struct DeformationSpec {
    std::uint64_t seed = 0;
    int max_points_per_axis = 20;   // paper maximum
    double max_displacement_mm = 10.0; // paper maximum
};

// Dense per-voxel displacement sampled at the voxel centers of an associated
// volume geometry. Components in mm, component-fastest storage.
struct DisplacementField {
    Index3 dims{0, 0, 0};
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    std::vector<double> d; // dims * 3

    std::size_t fidx(std::int64_t i, std::int64_t j, std::int64_t k, int c) const {
        return static_cast<std::size_t>(c) +
               3 * static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
    }
};

// Shared grid layout: interior_counts control points per axis centered on the
// volume, spacing chosen so the interior lattice spans the volume extent.
// Equal interior counts give an isotropic cell size (the random-grid case).
ControlGrid make_grid_layout(const Volume& geometry, Index3 interior_counts);

// Draw a random misalignment: one interior count shared by all axes, uniform
// in {1..max_points_per_axis}; each coefficient component i.i.d. uniform in
// [-max_displacement_mm, +max_displacement_mm]. Deterministic in spec.seed.
ControlGrid sample_random_grid(const DeformationSpec& spec, const Volume& target_geometry);

// Tensor-product B-spline evaluation at every voxel center of `geometry`,
// using per-axis precomputed weight tables.
DisplacementField dense_field(const ControlGrid& grid, const Volume& geometry);

// Independent oracle: naive per-voxel quadruple loop, no shared evaluation
// code with dense_field.
DisplacementField brute_force_field(const ControlGrid& grid, const Volume& geometry);

// Per-voxel Euclidean norm of the displacement, as an ERROR-tagged volume.
Volume magnitude_map(const DisplacementField& field);

// Backward warp: output(x) = trilinear_sample(v, x + d(x)), zero outside.
Volume warp_volume(const Volume& v, const DisplacementField& field);

// Ridge-regularized linear least-squares fit of a control grid to landmark
// displacement targets (moving - fixed), solved independently per axis.
ControlGrid fit_landmark_bspline(const LandmarkPairs& pairs, const Volume& geometry,
                                 Index3 interior_counts, double ridge);

void save_control_grid(const ControlGrid& grid, const std::filesystem::path& json_path);
ControlGrid load_control_grid(const std::filesystem::path& json_path);

void save_displacement_field(const DisplacementField& f, const std::filesystem::path& json_path);
DisplacementField load_displacement_field(const std::filesystem::path& json_path);

} // namespace regerr
