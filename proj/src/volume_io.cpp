#include "regerr/volume_io.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace regerr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<float> read_f32_payload(const fs::path& raw_path, std::size_t count) {
    std::ifstream in(raw_path, std::ios::binary);
    if (!in) throw FileMissing("missing raw payload: " + raw_path.string());
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw FormatError("raw payload shorter than header dims: " + raw_path.string());
    char extra;
    if (in.read(&extra, 1))
        throw FormatError("raw payload longer than header dims: " + raw_path.string());
    return buf;
}

void write_f32_payload(const fs::path& raw_path, const std::vector<float>& data) {
    std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + raw_path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IoError("short write to " + raw_path.string());
}

json load_header(const fs::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw FileMissing("missing volume header: " + json_path.string());
    json h;
    try {
        in >> h;
    } catch (const json::exception& e) {
        throw FormatError("malformed volume header " + json_path.string() + ": " + e.what());
    }
    return h;
}

fs::path raw_path_for(const fs::path& json_path) {
    fs::path p = json_path;
    p.replace_extension(".raw");
    return p;
}

Volume load_raw_json(const fs::path& json_path) {
    const json h = load_header(json_path);
    try {
        const auto dims = h.at("dims").get<std::array<std::int64_t, 3>>();
        const auto spacing = h.at("spacing").get<Vec3>();
        const auto origin = h.at("origin").get<Vec3>();
        if (h.value("dtype", "f32") != "f32")
            throw FormatError("unsupported dtype in " + json_path.string());
        if (h.value("order", "x-fastest") != "x-fastest")
            throw FormatError("unsupported payload order in " + json_path.string());
        if (h.value("components", 1) != 1)
            throw FormatError("scalar volume expected, header declares components != 1");
        Volume v(dims, spacing, origin, modality_from_name(h.value("modality", "OTHER")));
        v.data = read_f32_payload(raw_path_for(json_path), v.size());
        return v;
    } catch (const json::exception& e) {
        throw FormatError("bad volume header " + json_path.string() + ": " + e.what());
    }
}

// Minimal NIfTI-1 ingestion: single-file uncompressed .nii, axis-aligned.
// Rotation in the s/q-form is ignored; spacing comes from pixdim and origin
// from the form offset. Oblique data must be resampled upstream.
Volume load_nifti(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileMissing("missing nifti file: " + path.string());
    std::vector<char> hdr(348);
    in.read(hdr.data(), 348);
    if (in.gcount() != 348) throw FormatError("nifti header truncated: " + path.string());

    auto rd_i32 = [&](int off) { std::int32_t v; std::memcpy(&v, hdr.data() + off, 4); return v; };
    auto rd_i16 = [&](int off) { std::int16_t v; std::memcpy(&v, hdr.data() + off, 2); return v; };
    auto rd_f32 = [&](int off) { float v; std::memcpy(&v, hdr.data() + off, 4); return v; };

    if (rd_i32(0) != 348) throw FormatError("not a NIfTI-1 file (sizeof_hdr != 348): " + path.string());
    const char* magic = hdr.data() + 344;
    if (std::strncmp(magic, "n+1", 3) != 0)
        throw UnsupportedFormat("only single-file .nii supported: " + path.string());

    const std::int16_t ndim = rd_i16(40);
    if (ndim < 3) throw FormatError("nifti with fewer than 3 dims: " + path.string());
    Index3 dims{rd_i16(42), rd_i16(44), rd_i16(46)};
    for (int a = 3; a < ndim; ++a) {
        if (rd_i16(40 + 2 * (a + 1)) > 1)
            throw UnsupportedFormat("4D+ nifti not supported: " + path.string());
    }
    Vec3 spacing{std::abs(rd_f32(80)), std::abs(rd_f32(84)), std::abs(rd_f32(88))};

    const std::int16_t datatype = rd_i16(70);
    const float vox_offset = rd_f32(108);
    float scl_slope = rd_f32(112);
    const float scl_inter = rd_f32(116);
    if (scl_slope == 0.0f) scl_slope = 1.0f;

    Vec3 origin{0, 0, 0};
    const std::int16_t sform = rd_i16(254), qform = rd_i16(252);
    if (sform > 0) {
        origin = {rd_f32(280 + 12), rd_f32(296 + 12), rd_f32(312 + 12)};
        spacing = {std::abs(rd_f32(280)), std::abs(rd_f32(296 + 4)), std::abs(rd_f32(312 + 8))};
    } else if (qform > 0) {
        origin = {rd_f32(268), rd_f32(272), rd_f32(276)};
    }

    Volume v(dims, spacing, origin, Modality::OTHER);
    in.seekg(static_cast<std::streamoff>(vox_offset));
    const std::size_t n = v.size();

    auto load_as = [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(T)));
        if (static_cast<std::size_t>(in.gcount()) != n * sizeof(T))
            throw FormatError("nifti payload truncated: " + path.string());
        for (std::size_t i = 0; i < n; ++i)
            v.data[i] = scl_slope * static_cast<float>(buf[i]) + scl_inter;
    };

    switch (datatype) {
        case 2: load_as(std::uint8_t{}); break;
        case 4: load_as(std::int16_t{}); break;
        case 8: load_as(std::int32_t{}); break;
        case 16: load_as(float{}); break;
        case 64: load_as(double{}); break;
        case 512: load_as(std::uint16_t{}); break;
        default: throw UnsupportedFormat("nifti datatype " + std::to_string(datatype));
    }
    return v;
}

} // namespace

Volume load_volume(const fs::path& path, VolumeFormat format) {
    switch (format) {
        case VolumeFormat::raw_json: return load_raw_json(path);
        case VolumeFormat::nifti: return load_nifti(path);
    }
    throw UnsupportedFormat("unknown volume format");
}

void save_volume(const Volume& v, const fs::path& json_path) {
    v.validate();
    json h;
    h["dims"] = v.dims;
    h["spacing"] = v.spacing;
    h["origin"] = v.origin;
    h["dtype"] = "f32";
    h["order"] = "x-fastest";
    h["modality"] = modality_name(v.modality);
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << h.dump(2) << "\n";
    write_f32_payload(raw_path_for(json_path), v.data);
}

RawField load_raw_field(const fs::path& json_path) {
    const json h = load_header(json_path);
    RawField f;
    try {
        f.dims = h.at("dims").get<std::array<std::int64_t, 3>>();
        f.spacing = h.at("spacing").get<Vec3>();
        f.origin = h.at("origin").get<Vec3>();
        f.components = h.value("components", 1);
    } catch (const json::exception& e) {
        throw FormatError("bad field header " + json_path.string() + ": " + e.what());
    }
    if (f.components < 1) throw FormatError("components must be >= 1");
    const std::size_t n = static_cast<std::size_t>(f.dims[0]) * f.dims[1] * f.dims[2] *
                          static_cast<std::size_t>(f.components);
    f.data = read_f32_payload(raw_path_for(json_path), n);
    return f;
}

void save_raw_field(const RawField& f, const fs::path& json_path) {
    json h;
    h["dims"] = f.dims;
    h["spacing"] = f.spacing;
    h["origin"] = f.origin;
    h["dtype"] = "f32";
    h["order"] = "x-fastest";
    h["components"] = f.components;
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << h.dump(2) << "\n";
    write_f32_payload(raw_path_for(json_path), f.data);
}

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw FileMissing("missing csv: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty csv: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header)
        throw FormatError("csv header mismatch in " + path.string() + ": expected '" +
                          expected_header + "', got '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    return rows;
}

double parse_coord(const std::string& s, const fs::path& path) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        if (!std::isfinite(v)) throw FormatError("non-finite coordinate in " + path.string());
        return v;
    } catch (const std::logic_error&) {
        throw FormatError("bad numeric cell '" + s + "' in " + path.string());
    }
}

} // namespace

LandmarkSet load_landmarks(const fs::path& path) {
    const auto rows = read_csv(path, "id,x_mm,y_mm,z_mm");
    LandmarkSet set;
    std::map<std::string, bool> seen;
    for (const auto& r : rows) {
        if (r.size() != 4) throw FormatError("landmark row needs 4 cells in " + path.string());
        if (seen.count(r[0])) throw DuplicateId("duplicate landmark id '" + r[0] + "' in " + path.string());
        seen[r[0]] = true;
        set.entries.push_back(
            {r[0], {parse_coord(r[1], path), parse_coord(r[2], path), parse_coord(r[3], path)}});
    }
    return set;
}

LandmarkPairs load_landmark_pairs(const fs::path& path) {
    const auto rows = read_csv(path, "id,fx_mm,fy_mm,fz_mm,mx_mm,my_mm,mz_mm");
    LandmarkPairs pairs;
    std::map<std::string, bool> seen;
    for (const auto& r : rows) {
        if (r.size() != 7) throw FormatError("pair row needs 7 cells in " + path.string());
        if (seen.count(r[0])) throw DuplicateId("duplicate pair id '" + r[0] + "' in " + path.string());
        seen[r[0]] = true;
        pairs.pairs.push_back({r[0],
                               {parse_coord(r[1], path), parse_coord(r[2], path), parse_coord(r[3], path)},
                               {parse_coord(r[4], path), parse_coord(r[5], path), parse_coord(r[6], path)}});
    }
    return pairs;
}

void save_landmarks(const LandmarkSet& s, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "id,x_mm,y_mm,z_mm\n";
    out.precision(17);
    for (const auto& lm : s.entries)
        out << lm.id << "," << lm.position[0] << "," << lm.position[1] << "," << lm.position[2]
            << "\n";
}

} // namespace regerr
