#include "regerr/volume.hpp"

#include <cmath>
#include <limits>

namespace regerr {

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::MRI: return "MRI";
        case Modality::iUS: return "iUS";
        case Modality::ERROR: return "ERROR";
        default: return "OTHER";
    }
}

Modality modality_from_name(const std::string& s) {
    if (s == "MRI") return Modality::MRI;
    if (s == "iUS") return Modality::iUS;
    if (s == "ERROR") return Modality::ERROR;
    if (s == "OTHER") return Modality::OTHER;
    throw FormatError("unknown modality tag: " + s);
}

Volume::Volume(Index3 d, Vec3 sp, Vec3 org, Modality m)
    : dims(d), spacing(sp), origin(org), modality(m) {
    validate();
    data.assign(size(), 0.0f);
}

bool Volume::same_geometry(const Volume& o, double tol) const {
    if (dims != o.dims) return false;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(spacing[a] - o.spacing[a]) > tol) return false;
        if (std::abs(origin[a] - o.origin[a]) > tol) return false;
    }
    return true;
}

void Volume::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw FormatError("volume dims must be >= 1 on each axis");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw FormatError("volume spacing must be positive and finite");
        if (!std::isfinite(origin[a])) throw FormatError("volume origin must be finite");
    }
    if (!data.empty() && data.size() != size())
        throw FormatError("volume payload size does not match dims");
}

float trilinear_sample(const Volume& v, double x, double y, double z) {
    const auto i0 = static_cast<std::int64_t>(std::floor(x));
    const auto j0 = static_cast<std::int64_t>(std::floor(y));
    const auto k0 = static_cast<std::int64_t>(std::floor(z));
    const double fx = x - static_cast<double>(i0);
    const double fy = y - static_cast<double>(j0);
    const double fz = z - static_cast<double>(k0);

    double acc = 0.0;
    for (int dk = 0; dk < 2; ++dk) {
        for (int dj = 0; dj < 2; ++dj) {
            for (int di = 0; di < 2; ++di) {
                const std::int64_t i = i0 + di, j = j0 + dj, k = k0 + dk;
                if (!v.in_bounds(i, j, k)) continue; // zero outside
                const double w = (di ? fx : 1.0 - fx) * (dj ? fy : 1.0 - fy) * (dk ? fz : 1.0 - fz);
                acc += w * static_cast<double>(v.at(i, j, k));
            }
        }
    }
    return static_cast<float>(acc);
}

float trilinear_sample_world(const Volume& v, const Vec3& w) {
    const Vec3 c = v.world_to_voxel(w);
    return trilinear_sample(v, c[0], c[1], c[2]);
}

Volume resample_isotropic(const Volume& v, double target_spacing) {
    if (!(target_spacing > 0.0)) throw ConfigError("target spacing must be positive");
    for (int a = 0; a < 3; ++a) {
        if (v.dims[a] < 2 && std::abs(v.spacing[a] - target_spacing) > 1e-12)
            throw DegenerateVolume("cannot resample: input dim < 2 along axis needing interpolation");
    }

    Index3 out_dims{};
    for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(v.dims[a]) * v.spacing[a];
        out_dims[a] = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::ceil(extent / target_spacing - 1e-9)));
    }
    Volume out(out_dims, {target_spacing, target_spacing, target_spacing}, v.origin, v.modality);
    for (std::int64_t k = 0; k < out_dims[2]; ++k) {
        for (std::int64_t j = 0; j < out_dims[1]; ++j) {
            for (std::int64_t i = 0; i < out_dims[0]; ++i) {
                const Vec3 w = out.voxel_to_world(static_cast<double>(i), static_cast<double>(j),
                                                  static_cast<double>(k));
                out.at(i, j, k) = trilinear_sample_world(v, w);
            }
        }
    }
    return out;
}

Volume crop_to_fov(const Volume& reference, const Volume& target, double margin_mm) {
    if (margin_mm < 0.0) throw ConfigError("margin_mm must be nonnegative");

    // world bounding box of reference's nonzero voxels
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};
    bool any = false;
    for (std::int64_t k = 0; k < reference.dims[2]; ++k) {
        for (std::int64_t j = 0; j < reference.dims[1]; ++j) {
            for (std::int64_t i = 0; i < reference.dims[0]; ++i) {
                if (reference.at(i, j, k) == 0.0f) continue;
                any = true;
                const Vec3 w = reference.voxel_to_world(static_cast<double>(i),
                                                        static_cast<double>(j),
                                                        static_cast<double>(k));
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], w[a]);
                    hi[a] = std::max(hi[a], w[a]);
                }
            }
        }
    }
    if (!any) throw NoOverlap("reference volume has no nonzero voxels");

    Index3 start{}, stop{};
    for (int a = 0; a < 3; ++a) {
        const double lo_vox = (lo[a] - margin_mm - target.origin[a]) / target.spacing[a];
        const double hi_vox = (hi[a] + margin_mm - target.origin[a]) / target.spacing[a];
        start[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(lo_vox)));
        stop[a] = std::min<std::int64_t>(target.dims[a] - 1,
                                         static_cast<std::int64_t>(std::ceil(hi_vox)));
        if (start[a] > stop[a]) throw NoOverlap("reference FOV does not overlap target volume");
    }

    Index3 out_dims{stop[0] - start[0] + 1, stop[1] - start[1] + 1, stop[2] - start[2] + 1};
    Vec3 out_origin = target.voxel_to_world(static_cast<double>(start[0]),
                                            static_cast<double>(start[1]),
                                            static_cast<double>(start[2]));
    Volume out(out_dims, target.spacing, out_origin, target.modality);
    for (std::int64_t k = 0; k < out_dims[2]; ++k)
        for (std::int64_t j = 0; j < out_dims[1]; ++j)
            for (std::int64_t i = 0; i < out_dims[0]; ++i)
                out.at(i, j, k) = target.at(start[0] + i, start[1] + j, start[2] + k);
    return out;
}

} // namespace regerr
