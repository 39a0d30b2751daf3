#include "mresim/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mresim/csv.hpp"
#include "mresim/errors.hpp"

namespace mresim {

namespace fs = std::filesystem;
using nlohmann::json;

void Grid::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) throw InputError("volume dims must be positive");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw InputError("volume spacing must be positive");
    }
}

std::string to_string(VolumeKind kind) {
    switch (kind) {
        case VolumeKind::elastogram_shear_kPa: return "elastogram_shear_kPa";
        case VolumeKind::anatomical_intensity: return "anatomical_intensity";
    }
    return "unknown";
}

VolumeKind volume_kind_from_string(const std::string& s) {
    if (s == "elastogram_shear_kPa" || s == "elastogram") return VolumeKind::elastogram_shear_kPa;
    if (s == "anatomical_intensity") return VolumeKind::anatomical_intensity;
    throw InputError("unknown volume kind '" + s + "'");
}

void VoxelVolume::validate() const {
    grid.validate();
    if (data.size() != grid.voxel_count()) throw InputError("volume data length does not match dims");
    if (kind == VolumeKind::elastogram_shear_kPa) {
        for (double v : data) {
            if (!(v >= 0.0)) throw InputError("elastogram voxel values must be non-negative");
        }
    }
}

std::size_t RoiMask::count() const {
    return static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](auto f) { return f != 0; }));
}

RoiMask full_mask(const Grid& grid) {
    return RoiMask{grid.dims, std::vector<std::uint8_t>(grid.voxel_count(), 1)};
}

namespace {

std::pair<fs::path, fs::path> volume_paths(const fs::path& path) {
    fs::path stem = path;
    if (path.extension() == ".json" || path.extension() == ".raw") stem.replace_extension();
    fs::path header = stem;
    header += ".json";
    fs::path raw = stem;
    raw += ".raw";
    return {header, raw};
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

template <typename T, std::size_t N>
std::array<T, N> json_array(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != N)
        throw InputError(std::string("header field '") + key + "' must be an array of " + std::to_string(N));
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        if (!j[key][i].is_number()) throw InputError(std::string("header field '") + key + "' must be numeric");
        out[i] = j[key][i].template get<T>();
    }
    return out;
}

double cross(const std::array<double, 2>& o, const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

bool on_segment(const std::array<double, 2>& p, const std::array<double, 2>& q, const std::array<double, 2>& r) {
    return std::min(p[0], r[0]) <= q[0] && q[0] <= std::max(p[0], r[0]) && std::min(p[1], r[1]) <= q[1] &&
           q[1] <= std::max(p[1], r[1]);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

bool segments_intersect(const std::array<double, 2>& p1, const std::array<double, 2>& p2,
                        const std::array<double, 2>& p3, const std::array<double, 2>& p4) {
    const int d1 = sign(cross(p3, p4, p1));
    const int d2 = sign(cross(p3, p4, p2));
    const int d3 = sign(cross(p1, p2, p3));
    const int d4 = sign(cross(p1, p2, p4));
    if (d1 * d2 < 0 && d3 * d4 < 0) return true;
    if (d1 == 0 && on_segment(p3, p1, p4)) return true;
    if (d2 == 0 && on_segment(p3, p2, p4)) return true;
    if (d3 == 0 && on_segment(p1, p3, p2)) return true;
    if (d4 == 0 && on_segment(p1, p4, p2)) return true;
    return false;
}

}  // namespace

VoxelVolume load_volume(const fs::path& path) {
    const auto [header_path, raw_path] = volume_paths(path);
    if (!fs::exists(header_path)) throw InputError("missing volume header " + header_path.string());
    if (!fs::exists(raw_path)) throw InputError("missing volume data " + raw_path.string());

    const json header = read_json(header_path);
    VoxelVolume vol;
    vol.grid.dims = json_array<int, 3>(header, "dims");
    vol.grid.spacing = json_array<double, 3>(header, "spacing_mm");
    if (!header.contains("kind") || !header["kind"].is_string()) throw InputError("header field 'kind' missing");
    vol.kind = volume_kind_from_string(header["kind"].get<std::string>());
    vol.grid.validate();

    const auto expected_bytes = vol.grid.voxel_count() * sizeof(float);
    if (fs::file_size(raw_path) != expected_bytes) {
        throw InputError("volume size mismatch: header expects " + std::to_string(vol.grid.voxel_count()) +
                         " voxels, " + raw_path.string() + " holds " +
                         std::to_string(fs::file_size(raw_path) / sizeof(float)));
    }
    std::ifstream in(raw_path, std::ios::binary);
    std::vector<unsigned char> bytes(expected_bytes);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw InputError("short read on " + raw_path.string());

    vol.data.resize(vol.grid.voxel_count());
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const unsigned char* b = &bytes[4 * i];
        const std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
                                   (std::uint32_t{b[3]} << 24);
        vol.data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    vol.validate();
    return vol;
}

void write_volume(const VoxelVolume& volume, const fs::path& path) {
    volume.validate();
    const auto [header_path, raw_path] = volume_paths(path);
    json header;
    header["dims"] = volume.grid.dims;
    header["spacing_mm"] = volume.grid.spacing;
    header["kind"] = to_string(volume.kind);
    {
        std::ofstream out(header_path);
        if (!out) throw InputError("cannot write " + header_path.string());
        out << header.dump(2) << '\n';
    }
    std::vector<unsigned char> bytes(volume.data.size() * 4);
    for (std::size_t i = 0; i < volume.data.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(volume.data[i]));
        for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
    }
    std::ofstream out(raw_path, std::ios::binary);
    if (!out) throw InputError("cannot write " + raw_path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RoiPolygon load_polygon(const fs::path& path) {
    const json j = read_json(path);
    RoiPolygon poly;
    if (!j.contains("slice_index") || !j["slice_index"].is_number_integer())
        throw InputError("polygon field 'slice_index' missing");
    poly.slice_index = j["slice_index"].get<int>();
    if (!j.contains("vertices_mm") || !j["vertices_mm"].is_array())
        throw InputError("polygon field 'vertices_mm' missing");
    for (const auto& v : j["vertices_mm"]) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
            throw InputError("polygon vertices must be [x, y] pairs");
        poly.vertices_mm.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    return poly;
}

void write_polygon(const RoiPolygon& polygon, const fs::path& path) {
    json j;
    j["slice_index"] = polygon.slice_index;
    j["vertices_mm"] = polygon.vertices_mm;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void validate_polygon(const RoiPolygon& polygon) {
    const auto& v = polygon.vertices_mm;
    const std::size_t n = v.size();
    if (n < 3) throw InputError("ROI polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (v[i] == v[j]) throw InputError("ROI polygon has repeated vertices");
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a1 = v[i];
        const auto& a2 = v[(i + 1) % n];
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto& b1 = v[j];
            const auto& b2 = v[(j + 1) % n];
            const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
            if (adjacent) {
                // Shared endpoint is expected; a collinear fold-back is not.
                const auto& shared = (j == i + 1) ? a2 : a1;
                const auto& other_a = (j == i + 1) ? a1 : a2;
                const auto& other_b = (j == i + 1) ? b2 : b1;
                if (cross(shared, other_a, other_b) == 0.0 &&
                    (other_a[0] - shared[0]) * (other_b[0] - shared[0]) +
                            (other_a[1] - shared[1]) * (other_b[1] - shared[1]) >
                        0.0) {
                    throw InputError("ROI polygon is self-intersecting");
                }
                continue;
            }
            if (segments_intersect(a1, a2, b1, b2)) throw InputError("ROI polygon is self-intersecting");
        }
    }
}

bool point_in_polygon(std::span<const std::array<double, 2>> v, double x, double y) {
    const std::size_t n = v.size();
    const std::array<double, 2> p{x, y};
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        if (cross(v[j], v[i], p) == 0.0 && on_segment(v[j], p, v[i])) return true;
    }
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = v[i][0], yi = v[i][1], xj = v[j][0], yj = v[j][1];
        if ((yi > y) != (yj > y)) {
            const double x_cross = xj + (y - yj) * (xi - xj) / (yi - yj);
            if (x < x_cross) inside = !inside;
        }
    }
    return inside;
}

RoiMask mask_roi(const VoxelVolume& volume, const RoiPolygon& polygon) {
    validate_polygon(polygon);
    const Grid& g = volume.grid;
    g.validate();
    if (polygon.slice_index < 0 || polygon.slice_index >= g.dims[2])
        throw InputError("ROI slice index " + std::to_string(polygon.slice_index) + " out of range");

    RoiMask mask{g.dims, std::vector<std::uint8_t>(g.voxel_count(), 0)};
    const int k = polygon.slice_index;
    for (int j = 0; j < g.dims[1]; ++j) {
        const double y = (j + 0.5) * g.spacing[1];
        for (int i = 0; i < g.dims[0]; ++i) {
            const double x = (i + 0.5) * g.spacing[0];
            if (point_in_polygon(polygon.vertices_mm, x, y)) mask.flags[g.index(i, j, k)] = 1;
        }
    }
    return mask;
}

RoiMask positive_mask(const VoxelVolume& volume) {
    RoiMask mask{volume.grid.dims, std::vector<std::uint8_t>(volume.data.size(), 0)};
    for (std::size_t i = 0; i < volume.data.size(); ++i) mask.flags[i] = volume.data[i] > 0.0 ? 1 : 0;
    return mask;
}

double mean_shear_modulus(const VoxelVolume& volume, const RoiMask& mask) {
    if (volume.kind != VolumeKind::elastogram_shear_kPa)
        throw InputError("mean shear modulus needs an elastogram volume");
    if (mask.dims != volume.grid.dims || mask.flags.size() != volume.data.size())
        throw InputError("mask dims do not match volume");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < volume.data.size(); ++i) {
        if (mask.flags[i]) {
            sum += volume.data[i];
            ++n;
        }
    }
    if (n == 0) throw InputError("ROI mask is empty");
    return sum / static_cast<double>(n);
}

double shear_to_young(double shear_kpa, double nu) {
    if (!(shear_kpa >= 0.0)) throw InputError("shear modulus must be non-negative");
    if (!(nu >= 0.0 && nu <= 0.5)) throw InputError("Poisson ratio must lie in [0, 0.5]");
    return 2.0 * shear_kpa * (1.0 + nu);
}

Histogram stiffness_histogram(std::span<const CohortRecord> records, double bin_width) {
    if (records.empty()) throw InputError("cohort is empty");
    if (!(bin_width > 0.0)) throw InputError("bin width must be positive");

    auto bin_of = [bin_width](double e) {
        auto idx = static_cast<std::size_t>(std::max(0.0, std::floor(e / bin_width)));
        // Keep the bin assignment consistent with the reported edges idx·width.
        while (idx > 0 && e < static_cast<double>(idx) * bin_width) --idx;
        while (e >= static_cast<double>(idx + 1) * bin_width) ++idx;
        return idx;
    };

    Histogram h;
    h.bin_width = bin_width;
    std::size_t nbins = 1;
    for (const auto& r : records) {
        if (!(r.young_E >= 0.0)) throw InputError("cohort record '" + r.id + "' has negative modulus");
        nbins = std::max(nbins, bin_of(r.young_E) + 1);
    }
    h.counts.assign(nbins, 0);
    for (const auto& r : records) ++h.counts[bin_of(r.young_E)];
    h.edges.resize(nbins + 1);
    for (std::size_t i = 0; i <= nbins; ++i) h.edges[i] = static_cast<double>(i) * bin_width;
    return h;
}

CohortStats cohort_stats(std::span<const CohortRecord> records, double atlas_E) {
    if (records.empty()) throw InputError("cohort is empty");
    if (!(atlas_E > 0.0)) throw InputError("atlas modulus must be positive");
    std::size_t over_plus_one = 0;
    std::size_t over_double = 0;
    for (const auto& r : records) {
        if (r.young_E > atlas_E + 1.0) ++over_plus_one;
        if (r.young_E > 2.0 * atlas_E) ++over_double;
    }
    const auto n = static_cast<double>(records.size());
    return {static_cast<double>(over_plus_one) / n, static_cast<double>(over_double) / n};
}

std::vector<CohortRecord> read_cohort_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw InputError("cohort CSV " + path.string() + " is empty");
    const auto header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "id" || header[1] != "G_kPa" || header[2] != "E_kPa")
        throw InputError("cohort CSV header must be id,G_kPa,E_kPa");
    std::vector<CohortRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 3) throw InputError("cohort CSV line " + std::to_string(line_no) + " malformed");
        CohortRecord r;
        r.id = cols[0];
        try {
            std::size_t used = 0;
            r.mean_shear_G = std::stod(cols[1], &used);
            if (used != cols[1].size()) throw std::invalid_argument("trailing");
            r.young_E = std::stod(cols[2], &used);
            if (used != cols[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw InputError("cohort CSV line " + std::to_string(line_no) + " has a non-numeric field");
        }
        if (r.mean_shear_G < 0.0 || r.young_E < 0.0)
            throw InputError("cohort CSV line " + std::to_string(line_no) + " has a negative modulus");
        out.push_back(std::move(r));
    }
    return out;
}

void write_cohort_csv(std::span<const CohortRecord> records, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "id,G_kPa,E_kPa\n";
    for (const auto& r : records) out << r.id << ',' << format_double(r.mean_shear_G) << ',' << format_double(r.young_E) << '\n';
}

}  // namespace mresim
