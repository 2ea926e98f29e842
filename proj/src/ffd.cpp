#include "regerr/ffd.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "regerr/rng.hpp"
#include "regerr/volume_io.hpp"

namespace regerr {

using nlohmann::json;

std::array<double, 4> bspline_basis(double t) {
    if (!(t >= 0.0 && t < 1.0)) throw DomainError("bspline_basis: t must be in [0,1)");
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double omt = 1.0 - t;
    return {omt * omt * omt / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0};
}

void ControlGrid::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (counts[a] < 4) throw ConfigError("control grid needs >= 4 points per axis");
        if (!(spacing_mm[a] > 0.0)) throw ConfigError("control grid spacing must be positive");
    }
    const std::size_t n =
        static_cast<std::size_t>(counts[0]) * counts[1] * counts[2] * 3;
    if (coeffs.size() != n) throw ConfigError("control grid coefficient count mismatch");
}

ControlGrid make_grid_layout(const Volume& geometry, Index3 interior_counts) {
    for (int a = 0; a < 3; ++a) {
        if (interior_counts[a] < 1) throw ConfigError("interior control-point count must be >= 1");
        if (geometry.dims[a] < 1) throw ConfigError("degenerate geometry");
    }
    Vec3 extent = geometry.extent_mm();

    Vec3 cell{};
    const bool isotropic = interior_counts[0] == interior_counts[1] &&
                           interior_counts[1] == interior_counts[2];
    if (isotropic) {
        const double h = std::max({extent[0], extent[1], extent[2]}) /
                         static_cast<double>(interior_counts[0]);
        cell = {h, h, h};
    } else {
        for (int a = 0; a < 3; ++a) cell[a] = extent[a] / static_cast<double>(interior_counts[a]);
    }

    ControlGrid grid;
    for (int a = 0; a < 3; ++a) {
        grid.counts[a] = interior_counts[a] + 4; // two-point zero ring each side
        grid.spacing_mm[a] = cell[a];
        const double center =
            geometry.origin[a] + 0.5 * (geometry.dims[a] - 1) * geometry.spacing[a];
        grid.origin_mm[a] = center - 0.5 * (grid.counts[a] - 1) * cell[a];
    }
    grid.coeffs.assign(static_cast<std::size_t>(grid.counts[0]) * grid.counts[1] *
                           grid.counts[2] * 3,
                       0.0f);
    return grid;
}

ControlGrid sample_random_grid(const DeformationSpec& spec, const Volume& target_geometry) {
    if (spec.max_points_per_axis < 1) throw ConfigError("max_points_per_axis must be >= 1");
    if (spec.max_displacement_mm < 0.0) throw ConfigError("max_displacement_mm must be >= 0");

    Rng rng(spec.seed);
    const auto n = rng.uniform_int(1, spec.max_points_per_axis);
    ControlGrid grid = make_grid_layout(target_geometry, {n, n, n});
    grid.seed = spec.seed;

    // interior lattice occupies indices 2 .. n+1 along each axis
    for (std::int64_t k = 2; k < 2 + n; ++k)
        for (std::int64_t j = 2; j < 2 + n; ++j)
            for (std::int64_t i = 2; i < 2 + n; ++i)
                for (int c = 0; c < 3; ++c)
                    grid.coeffs[grid.cidx(i, j, k, c)] = static_cast<float>(
                        rng.uniform(-spec.max_displacement_mm, spec.max_displacement_mm));
    return grid;
}

namespace {

// Per-axis table of (base cell, 4 weights) for every voxel coordinate.
struct AxisTable {
    std::vector<std::int64_t> cell;
    std::vector<std::array<double, 4>> w;
};

AxisTable build_axis_table(const ControlGrid& grid, const Volume& geometry, int axis) {
    AxisTable t;
    t.cell.resize(static_cast<std::size_t>(geometry.dims[axis]));
    t.w.resize(t.cell.size());
    for (std::int64_t v = 0; v < geometry.dims[axis]; ++v) {
        const double world = geometry.origin[axis] + v * geometry.spacing[axis];
        const double g = (world - grid.origin_mm[axis]) / grid.spacing_mm[axis];
        const auto cell = static_cast<std::int64_t>(std::floor(g));
        double u = g - static_cast<double>(cell);
        if (cell - 1 < 0 || cell + 2 > grid.counts[axis] - 1)
            throw CoverageError("geometry extends beyond control grid support");
        const double t2 = u * u, t3 = t2 * u, omt = 1.0 - u;
        t.cell[v] = cell;
        t.w[v] = {omt * omt * omt / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
                  (-3.0 * t3 + 3.0 * t2 + 3.0 * u + 1.0) / 6.0, t3 / 6.0};
    }
    return t;
}

} // namespace

DisplacementField dense_field(const ControlGrid& grid, const Volume& geometry) {
    grid.validate();
    DisplacementField out;
    out.dims = geometry.dims;
    out.spacing = geometry.spacing;
    out.origin = geometry.origin;
    out.d.assign(static_cast<std::size_t>(out.dims[0]) * out.dims[1] * out.dims[2] * 3, 0.0);

    const AxisTable tx = build_axis_table(grid, geometry, 0);
    const AxisTable ty = build_axis_table(grid, geometry, 1);
    const AxisTable tz = build_axis_table(grid, geometry, 2);

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t k = 0; k < out.dims[2]; ++k) {
        for (std::int64_t j = 0; j < out.dims[1]; ++j) {
            for (std::int64_t i = 0; i < out.dims[0]; ++i) {
                double acc[3] = {0.0, 0.0, 0.0};
                for (int n = 0; n < 4; ++n) {
                    const double wz = tz.w[k][n];
                    const std::int64_t gk = tz.cell[k] - 1 + n;
                    for (int m = 0; m < 4; ++m) {
                        const double wyz = ty.w[j][m] * wz;
                        const std::int64_t gj = ty.cell[j] - 1 + m;
                        for (int l = 0; l < 4; ++l) {
                            const double w = tx.w[i][l] * wyz;
                            const std::size_t base =
                                grid.cidx(tx.cell[i] - 1 + l, gj, gk, 0);
                            acc[0] += w * grid.coeffs[base + 0];
                            acc[1] += w * grid.coeffs[base + 1];
                            acc[2] += w * grid.coeffs[base + 2];
                        }
                    }
                }
                const std::size_t o = out.fidx(i, j, k, 0);
                out.d[o + 0] = acc[0];
                out.d[o + 1] = acc[1];
                out.d[o + 2] = acc[2];
            }
        }
    }
    return out;
}

DisplacementField brute_force_field(const ControlGrid& grid, const Volume& geometry) {
    grid.validate();
    DisplacementField out;
    out.dims = geometry.dims;
    out.spacing = geometry.spacing;
    out.origin = geometry.origin;
    out.d.assign(static_cast<std::size_t>(out.dims[0]) * out.dims[1] * out.dims[2] * 3, 0.0);

    for (std::int64_t k = 0; k < out.dims[2]; ++k) {
        for (std::int64_t j = 0; j < out.dims[1]; ++j) {
            for (std::int64_t i = 0; i < out.dims[0]; ++i) {
                double g[3], u[3];
                std::int64_t cell[3];
                const std::int64_t vox[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    const double world = geometry.origin[a] + vox[a] * geometry.spacing[a];
                    g[a] = (world - grid.origin_mm[a]) / grid.spacing_mm[a];
                    cell[a] = static_cast<std::int64_t>(std::floor(g[a]));
                    u[a] = g[a] - static_cast<double>(cell[a]);
                    if (cell[a] - 1 < 0 || cell[a] + 2 > grid.counts[a] - 1)
                        throw CoverageError("geometry extends beyond control grid support");
                }
                const auto bx = bspline_basis(u[0]);
                const auto by = bspline_basis(u[1]);
                const auto bz = bspline_basis(u[2]);
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int n = 0; n < 4; ++n)
                        for (int m = 0; m < 4; ++m)
                            for (int l = 0; l < 4; ++l)
                                acc += bx[l] * by[m] * bz[n] *
                                       grid.coeffs[grid.cidx(cell[0] - 1 + l, cell[1] - 1 + m,
                                                             cell[2] - 1 + n, c)];
                    out.d[out.fidx(i, j, k, c)] = acc;
                }
            }
        }
    }
    return out;
}

Volume magnitude_map(const DisplacementField& field) {
    Volume out(field.dims, field.spacing, field.origin, Modality::ERROR);
    const std::size_t n = out.size();
    for (std::size_t v = 0; v < n; ++v) {
        const double dx = field.d[3 * v + 0];
        const double dy = field.d[3 * v + 1];
        const double dz = field.d[3 * v + 2];
        out.data[v] = static_cast<float>(std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    return out;
}

Volume warp_volume(const Volume& v, const DisplacementField& field) {
    if (v.dims != field.dims) throw GeometryMismatch("warp_volume: field dims differ from volume");
    for (int a = 0; a < 3; ++a)
        if (std::abs(v.spacing[a] - field.spacing[a]) > 1e-9 ||
            std::abs(v.origin[a] - field.origin[a]) > 1e-9)
            throw GeometryMismatch("warp_volume: field geometry differs from volume");

    Volume out(v.dims, v.spacing, v.origin, v.modality);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t k = 0; k < v.dims[2]; ++k) {
        for (std::int64_t j = 0; j < v.dims[1]; ++j) {
            for (std::int64_t i = 0; i < v.dims[0]; ++i) {
                const std::size_t f = field.fidx(i, j, k, 0);
                const double sx = static_cast<double>(i) + field.d[f + 0] / v.spacing[0];
                const double sy = static_cast<double>(j) + field.d[f + 1] / v.spacing[1];
                const double sz = static_cast<double>(k) + field.d[f + 2] / v.spacing[2];
                out.at(i, j, k) = trilinear_sample(v, sx, sy, sz);
            }
        }
    }
    return out;
}

ControlGrid fit_landmark_bspline(const LandmarkPairs& pairs, const Volume& geometry,
                                 Index3 interior_counts, double ridge) {
    if (pairs.pairs.empty()) throw EmptyPairs("no landmark pairs to fit");
    if (ridge < 0.0) throw ConfigError("ridge must be nonnegative");

    ControlGrid grid = make_grid_layout(geometry, interior_counts);
    const std::int64_t cx = grid.counts[0], cy = grid.counts[1], cz = grid.counts[2];
    const std::int64_t ncoef = cx * cy * cz;
    const auto nrows = static_cast<std::int64_t>(pairs.pairs.size());

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(nrows) * 64);
    Eigen::MatrixXd targets(nrows, 3);

    for (std::int64_t r = 0; r < nrows; ++r) {
        const auto& p = pairs.pairs[static_cast<std::size_t>(r)];
        double u[3];
        std::int64_t cell[3];
        for (int a = 0; a < 3; ++a) {
            if (!std::isfinite(p.fixed_position[a]) || !std::isfinite(p.moving_position[a]))
                throw OutOfExtent("non-finite landmark position for id " + p.id);
            const double lo = geometry.origin[a] - 0.5 * geometry.spacing[a];
            const double hi = lo + geometry.extent_mm()[a];
            if (p.fixed_position[a] < lo || p.fixed_position[a] > hi)
                throw OutOfExtent("landmark " + p.id + " outside geometry extent");
            const double g = (p.fixed_position[a] - grid.origin_mm[a]) / grid.spacing_mm[a];
            cell[a] = static_cast<std::int64_t>(std::floor(g));
            u[a] = g - static_cast<double>(cell[a]);
        }
        const auto bx = bspline_basis(u[0]);
        const auto by = bspline_basis(u[1]);
        const auto bz = bspline_basis(u[2]);
        for (int n = 0; n < 4; ++n)
            for (int m = 0; m < 4; ++m)
                for (int l = 0; l < 4; ++l) {
                    const std::int64_t col = (cell[0] - 1 + l) +
                                             cx * ((cell[1] - 1 + m) + cy * (cell[2] - 1 + n));
                    trips.emplace_back(r, col, bx[l] * by[m] * bz[n]);
                }
        for (int a = 0; a < 3; ++a)
            targets(r, a) = p.moving_position[a] - p.fixed_position[a];
    }

    Eigen::SparseMatrix<double> design(nrows, ncoef);
    design.setFromTriplets(trips.begin(), trips.end());

    Eigen::SparseMatrix<double> normal = Eigen::SparseMatrix<double>(design.transpose()) * design;
    Eigen::SparseMatrix<double> ident(ncoef, ncoef);
    ident.setIdentity();
    // tiny floor keeps the normal matrix nonsingular when ridge == 0
    normal += std::max(ridge, 1e-12) * ident;

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
    if (solver.info() != Eigen::Success)
        throw ConfigError("landmark fit: normal-equation factorization failed");

    for (int a = 0; a < 3; ++a) {
        const Eigen::VectorXd rhs = design.transpose() * targets.col(a);
        const Eigen::VectorXd sol = solver.solve(rhs);
        for (std::int64_t c = 0; c < ncoef; ++c)
            grid.coeffs[static_cast<std::size_t>(3 * c + a)] = static_cast<float>(sol(c));
    }
    return grid;
}

void save_control_grid(const ControlGrid& grid, const std::filesystem::path& json_path) {
    grid.validate();
    json h;
    h["counts"] = grid.counts;
    h["spacing_mm"] = grid.spacing_mm;
    h["origin_mm"] = grid.origin_mm;
    h["seed"] = grid.seed;
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << h.dump(2) << "\n";

    std::filesystem::path raw = json_path;
    raw.replace_extension(".raw");
    std::ofstream rout(raw, std::ios::binary | std::ios::trunc);
    if (!rout) throw IoError("cannot write " + raw.string());
    rout.write(reinterpret_cast<const char*>(grid.coeffs.data()),
               static_cast<std::streamsize>(grid.coeffs.size() * sizeof(float)));
}

ControlGrid load_control_grid(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw FileMissing("missing control grid header: " + json_path.string());
    json h;
    try {
        in >> h;
    } catch (const json::exception& e) {
        throw FormatError("malformed control grid header: " + std::string(e.what()));
    }
    ControlGrid grid;
    try {
        grid.counts = h.at("counts").get<Index3>();
        grid.spacing_mm = h.at("spacing_mm").get<Vec3>();
        grid.origin_mm = h.at("origin_mm").get<Vec3>();
        grid.seed = h.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw FormatError("bad control grid header: " + std::string(e.what()));
    }
    const std::size_t n = static_cast<std::size_t>(grid.counts[0]) * grid.counts[1] *
                          grid.counts[2] * 3;
    std::filesystem::path raw = json_path;
    raw.replace_extension(".raw");
    std::ifstream rin(raw, std::ios::binary);
    if (!rin) throw FileMissing("missing control grid payload: " + raw.string());
    grid.coeffs.resize(n);
    rin.read(reinterpret_cast<char*>(grid.coeffs.data()),
             static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(rin.gcount()) != n * sizeof(float))
        throw FormatError("control grid payload size mismatch: " + raw.string());
    grid.validate();
    return grid;
}

void save_displacement_field(const DisplacementField& f, const std::filesystem::path& json_path) {
    RawField rf;
    rf.dims = f.dims;
    rf.spacing = f.spacing;
    rf.origin = f.origin;
    rf.components = 3;
    rf.data.resize(f.d.size());
    for (std::size_t i = 0; i < f.d.size(); ++i) rf.data[i] = static_cast<float>(f.d[i]);
    save_raw_field(rf, json_path);
}

DisplacementField load_displacement_field(const std::filesystem::path& json_path) {
    const RawField rf = load_raw_field(json_path);
    if (rf.components != 3) throw FormatError("displacement field needs components=3");
    DisplacementField f;
    f.dims = rf.dims;
    f.spacing = rf.spacing;
    f.origin = rf.origin;
    f.d.assign(rf.data.begin(), rf.data.end());
    return f;
}

} // namespace regerr
