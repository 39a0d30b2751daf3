#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mresim {

using Vec3 = Eigen::Vector3d;

/// Regular voxel lattice. Voxel (i, j, k) has its center at ((i+0.5)·sx, (j+0.5)·sy, (k+0.5)·sz) mm,
/// linear index i + nx·(j + ny·k).
struct Grid {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.64, 1.64, 10.0};

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
    }
    std::array<int, 3> ijk(std::size_t linear) const {
        const auto nx = static_cast<std::size_t>(dims[0]);
        const auto ny = static_cast<std::size_t>(dims[1]);
        return {static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny),
                static_cast<int>(linear / (nx * ny))};
    }
    Vec3 center(std::size_t linear) const {
        const auto c = ijk(linear);
        return {(c[0] + 0.5) * spacing[0], (c[1] + 0.5) * spacing[1], (c[2] + 0.5) * spacing[2]};
    }
    double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
    Vec3 extent() const { return {dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]}; }
    bool operator==(const Grid&) const = default;

    /// Throws InputError unless every dim and spacing component is positive.
    void validate() const;
};

enum class VolumeKind { elastogram_shear_kPa, anatomical_intensity };

std::string to_string(VolumeKind kind);
VolumeKind volume_kind_from_string(const std::string& s);

struct VoxelVolume {
    Grid grid;
    VolumeKind kind = VolumeKind::elastogram_shear_kPa;
    std::vector<double> data;  // x fastest

    void validate() const;
};

struct RoiPolygon {
    int slice_index = 0;
    std::vector<std::array<double, 2>> vertices_mm;
};

struct RoiMask {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<std::uint8_t> flags;

    std::size_t count() const;
    bool operator==(const RoiMask&) const = default;
};

/// Mask with every voxel set.
RoiMask full_mask(const Grid& grid);

struct CohortRecord {
    std::string id;
    double mean_shear_G = 0.0;  // kPa
    double young_E = 0.0;       // kPa
};

struct Histogram {
    double bin_width = 1.0;
    std::vector<double> edges;  // edges.size() == counts.size() + 1, edges[0] == 0
    std::vector<std::size_t> counts;
};

struct CohortStats {
    double frac_over_atlas_plus_1kPa = 0.0;
    double frac_over_2x_atlas = 0.0;
};

/// Default Poisson ratio for reporting shear-to-Young conversion (incompressible tissue).
inline constexpr double kReportingPoisson = 0.5;

// Volume files: `<stem>.json` header plus `<stem>.raw` little-endian f32 payload.
// `path` may name either file or the bare stem.
VoxelVolume load_volume(const std::filesystem::path& path);
void write_volume(const VoxelVolume& volume, const std::filesystem::path& path);

RoiPolygon load_polygon(const std::filesystem::path& path);
void write_polygon(const RoiPolygon& polygon, const std::filesystem::path& path);

/// Throws InputError for fewer than 3 vertices, repeated vertices or crossing edges.
void validate_polygon(const RoiPolygon& polygon);

/// Even-odd containment; points on an edge count as inside.
bool point_in_polygon(std::span<const std::array<double, 2>> vertices, double x, double y);

RoiMask mask_roi(const VoxelVolume& volume, const RoiPolygon& polygon);

/// Mask of voxels whose value is strictly positive.
RoiMask positive_mask(const VoxelVolume& volume);

double mean_shear_modulus(const VoxelVolume& volume, const RoiMask& mask);

double shear_to_young(double shear_kpa, double nu = kReportingPoisson);

Histogram stiffness_histogram(std::span<const CohortRecord> records, double bin_width);

CohortStats cohort_stats(std::span<const CohortRecord> records, double atlas_E);

std::vector<CohortRecord> read_cohort_csv(const std::filesystem::path& path);
void write_cohort_csv(std::span<const CohortRecord> records, const std::filesystem::path& path);

}  // namespace mresim
