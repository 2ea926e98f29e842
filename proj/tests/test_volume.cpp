#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "regerr/rng.hpp"
#include "regerr/volume.hpp"
#include "regerr/volume_io.hpp"

using namespace regerr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto d = fs::temp_directory_path() / "regerr_test_volume";
    fs::create_directories(d);
    return d;
}

Volume make_ramp(Index3 dims, Vec3 spacing, Vec3 origin, int axis) {
    Volume v(dims, spacing, origin, Modality::OTHER);
    for (std::int64_t k = 0; k < dims[2]; ++k)
        for (std::int64_t j = 0; j < dims[1]; ++j)
            for (std::int64_t i = 0; i < dims[0]; ++i) {
                const Vec3 w = v.voxel_to_world(double(i), double(j), double(k));
                v.at(i, j, k) = static_cast<float>(w[axis]);
            }
    return v;
}

} // namespace

TEST_CASE("raw_json round trip preserves fields and payload") {
    const auto dir = temp_dir();
    Volume v({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, Modality::MRI);
    for (int i = 0; i < 8; ++i) v.data[size_t(i)] = float(i) * 0.5f - 1.0f;
    save_volume(v, dir / "rt.json");
    const Volume w = load_volume(dir / "rt.json");
    CHECK(w.dims == v.dims);
    CHECK(w.spacing == v.spacing);
    CHECK(w.origin == v.origin);
    CHECK(w.modality == Modality::MRI);
    CHECK(w.data == v.data);
}

TEST_CASE("payload shorter than dims is a FormatError") {
    const auto dir = temp_dir();
    Volume v({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, Modality::OTHER);
    save_volume(v, dir / "short.json");
    // truncate to 7 floats
    fs::resize_file(dir / "short.raw", 7 * sizeof(float));
    CHECK_THROWS_AS(load_volume(dir / "short.json"), FormatError);
}

TEST_CASE("missing file is FileMissing") {
    CHECK_THROWS_AS(load_volume(temp_dir() / "nope.json"), FileMissing);
}

TEST_CASE("0.5 mm resampled volume keeps isotropic spacing") {
    Volume v({8, 8, 8}, {1.0, 0.7, 1.3}, {0, 0, 0}, Modality::MRI);
    const Volume r = resample_isotropic(v, 0.5);
    CHECK(r.spacing == Vec3{0.5, 0.5, 0.5});
    CHECK(r.dims[0] == 16);
    CHECK(r.dims[1] == 12); // ceil(8*0.7/0.5)
    CHECK(r.dims[2] == 21); // ceil(8*1.3/0.5)
}

TEST_CASE("identity resample reproduces the input") {
    Volume v({6, 5, 4}, {1, 1, 1}, {2, 3, 4}, Modality::iUS);
    Rng rng(7);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform());
    const Volume r = resample_isotropic(v, 1.0);
    REQUIRE(r.dims == v.dims);
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
}

TEST_CASE("constant volume stays constant under resampling") {
    Volume v({6, 6, 6}, {1, 1, 1}, {0, 0, 0}, Modality::OTHER);
    for (auto& x : v.data) x = 3.25f;
    const Volume r = resample_isotropic(v, 0.4);
    // only centers inside the input voxel-center hull; outside them the
    // sample mixes with the zero background
    for (std::int64_t k = 0; k < r.dims[2]; ++k)
        for (std::int64_t j = 0; j < r.dims[1]; ++j)
            for (std::int64_t i = 0; i < r.dims[0]; ++i) {
                const Vec3 w = r.voxel_to_world(double(i), double(j), double(k));
                if (w[0] > 5.0 || w[1] > 5.0 || w[2] > 5.0) continue;
                CHECK(r.at(i, j, k) == doctest::Approx(3.25f).epsilon(1e-6));
            }
}

TEST_CASE("resample of a linear ramp matches the analytic ramp at new centers") {
    const Volume v = make_ramp({9, 4, 4}, {1, 1, 1}, {0, 0, 0}, 0);
    const Volume r = resample_isotropic(v, 0.5);
    for (std::int64_t k = 0; k < r.dims[2]; ++k)
        for (std::int64_t j = 0; j < r.dims[1]; ++j)
            for (std::int64_t i = 0; i < r.dims[0]; ++i) {
                const Vec3 w = r.voxel_to_world(double(i), double(j), double(k));
                // stay inside the input voxel-center hull where trilinear is exact
                if (w[0] > 8.0 || w[1] > 3.0 || w[2] > 3.0) continue;
                CHECK(double(r.at(i, j, k)) == doctest::Approx(w[0]).epsilon(1e-6).scale(1.0));
            }
}

TEST_CASE("degenerate axis rejects resampling") {
    Volume v({4, 1, 4}, {1, 1, 1}, {0, 0, 0}, Modality::OTHER);
    CHECK_THROWS_AS(resample_isotropic(v, 0.5), DegenerateVolume);
}

TEST_CASE("crop with covering reference leaves target unchanged") {
    Volume ref({10, 10, 10}, {1, 1, 1}, {0, 0, 0}, Modality::iUS);
    for (auto& x : ref.data) x = 1.0f;
    Volume tgt({10, 10, 10}, {1, 1, 1}, {0, 0, 0}, Modality::MRI);
    Rng rng(3);
    for (auto& x : tgt.data) x = static_cast<float>(rng.uniform());
    const Volume c = crop_to_fov(ref, tgt, 0.0);
    CHECK(c.dims == tgt.dims);
    CHECK(c.data == tgt.data);
}

TEST_CASE("crop to a central nonzero cube matches a direct bounding-box scan") {
    Volume ref({20, 20, 20}, {1, 1, 1}, {0, 0, 0}, Modality::iUS);
    for (std::int64_t k = 5; k < 15; ++k)
        for (std::int64_t j = 5; j < 15; ++j)
            for (std::int64_t i = 5; i < 15; ++i) ref.at(i, j, k) = 1.0f;
    Volume tgt({20, 20, 20}, {1, 1, 1}, {0, 0, 0}, Modality::MRI);
    for (size_t i = 0; i < tgt.data.size(); ++i) tgt.data[i] = float(i % 97);
    const Volume c = crop_to_fov(ref, tgt, 0.0);
    // oracle: nonzero voxel scan gives world box [5,14]^3
    CHECK(c.dims == Index3{10, 10, 10});
    CHECK(c.origin == Vec3{5, 5, 5});
    for (std::int64_t k = 0; k < 10; ++k)
        for (std::int64_t j = 0; j < 10; ++j)
            for (std::int64_t i = 0; i < 10; ++i)
                CHECK(c.at(i, j, k) == tgt.at(i + 5, j + 5, k + 5));
}

TEST_CASE("disjoint volumes raise NoOverlap") {
    Volume ref({4, 4, 4}, {1, 1, 1}, {100, 100, 100}, Modality::iUS);
    for (auto& x : ref.data) x = 1.0f;
    Volume tgt({4, 4, 4}, {1, 1, 1}, {0, 0, 0}, Modality::MRI);
    CHECK_THROWS_AS(crop_to_fov(ref, tgt, 0.0), NoOverlap);
}

TEST_CASE("landmark csv loads and rejects duplicates") {
    const auto dir = temp_dir();
    {
        std::ofstream out(dir / "lm.csv");
        out << "id,x_mm,y_mm,z_mm\nA,1,2,3\nB,4.5,5.5,6.5\n";
    }
    const LandmarkSet s = load_landmarks(dir / "lm.csv");
    REQUIRE(s.entries.size() == 2);
    CHECK(s.entries[1].position == Vec3{4.5, 5.5, 6.5});

    {
        std::ofstream out(dir / "dup.csv");
        out << "id,x_mm,y_mm,z_mm\nA,1,2,3\nA,4,5,6\n";
    }
    CHECK_THROWS_AS(load_landmarks(dir / "dup.csv"), DuplicateId);
}

TEST_CASE("fifteen-row landmark file yields fifteen entries") {
    const auto dir = temp_dir();
    {
        std::ofstream out(dir / "lm15.csv");
        out << "id,x_mm,y_mm,z_mm\n";
        for (int i = 0; i < 15; ++i) out << "L" << i << "," << i << "," << 2 * i << "," << 3 * i << "\n";
    }
    CHECK(load_landmarks(dir / "lm15.csv").entries.size() == 15);
}

TEST_CASE("landmark pairs csv") {
    const auto dir = temp_dir();
    {
        std::ofstream out(dir / "pairs.csv");
        out << "id,fx_mm,fy_mm,fz_mm,mx_mm,my_mm,mz_mm\nP1,0,0,0,1,0,0\n";
    }
    const LandmarkPairs p = load_landmark_pairs(dir / "pairs.csv");
    REQUIRE(p.pairs.size() == 1);
    CHECK(p.pairs[0].moving_position == Vec3{1, 0, 0});
}

TEST_CASE("voxel-world round trip is the identity on integer indices") {
    Volume v({5, 7, 9}, {0.5, 0.7, 1.1}, {-3, 2, 14}, Modality::OTHER);
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
        const auto i = rng.uniform_int(0, v.dims[0] - 1);
        const auto j = rng.uniform_int(0, v.dims[1] - 1);
        const auto k = rng.uniform_int(0, v.dims[2] - 1);
        const Vec3 w = v.voxel_to_world(double(i), double(j), double(k));
        const Vec3 b = v.world_to_voxel(w);
        CHECK(b[0] == doctest::Approx(double(i)).epsilon(1e-12));
        CHECK(b[1] == doctest::Approx(double(j)).epsilon(1e-12));
        CHECK(b[2] == doctest::Approx(double(k)).epsilon(1e-12));
    }
}

TEST_CASE("resample is idempotent at equal spacing") {
    Volume v({6, 6, 6}, {0.8, 0.8, 0.8}, {0, 0, 0}, Modality::OTHER);
    Rng rng(5);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform());
    const Volume r1 = resample_isotropic(v, 0.8);
    const Volume r2 = resample_isotropic(r1, 0.8);
    REQUIRE(r1.dims == r2.dims);
    for (size_t i = 0; i < r1.data.size(); ++i)
        CHECK(std::abs(r1.data[i] - r2.data[i]) < 1e-6f);
}
