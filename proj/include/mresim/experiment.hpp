#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mresim/dynamics.hpp"
#include "mresim/meshfree_model.hpp"
#include "mresim/volume.hpp"

namespace mresim {

inline constexpr double kAtlasYoungKpa = 2.1;
inline constexpr double kSignificanceMm = 5.0;
inline constexpr double kVoxelRefMm = 1.64;

struct RetractorSpec {
    double diameter = 10.0;        // mm
    Vec3 center = Vec3::Zero();    // mm, a point on or near the surface
    Vec3 hoist_direction = Vec3::UnitX();
    std::vector<int> nodes;        // explicit application region; overrides center + radius when non-empty

    /// Diameter positive, direction unit length (1e-9) and in the transverse (x-y) plane.
    void validate() const;
};

/// Nodes within diameter/2 of the center; when none is that close, the single nearest node.
std::vector<int> application_region(const MeshFreeModel& model, const RetractorSpec& retractor);

struct RetractionConfig {
    double abdomen_k = 50.0;           // mN/mm per support node (0.05 N/mm)
    double liver_mass = 0.0;           // kg; 0 derives it from masked volume × density
    double inferior_fraction = 1.0 / 3.0;
    SteadyStateOptions steady{StepOptions{0.1, 200, 1e-6}};  // quasi-static stepping
};

/// Masked volume × density, kg.
double liver_mass(const MaterialField& field);

/// Nodes owning at least one masked voxel with an unmasked (or off-grid) face neighbour.
std::vector<int> surface_nodes(const MeshFreeModel& model);

struct RetractionSetup {
    LoadCase loads;
    std::vector<int> region;
    std::vector<int> supports;
    double hoist_total = 0.0;  // mN
};

/// Gravity along -z, hoist loads totalling liver_mass·g along the hoist direction spread evenly over the
/// application region, and abdomen springs anchored at rest on the inferior surface nodes.
RetractionSetup retraction_setup(const MeshFreeModel& model, const RetractorSpec& retractor,
                                 const RetractionConfig& config);

struct RetractionRun {
    RetractionSetup setup;
    SteadyStateResult result;
};

RetractionRun simulate_retraction(const MeshFreeModel& model, const RetractorSpec& retractor,
                                  const RetractionConfig& config);

struct LandmarkDifference {
    std::string label;
    double diff_mm = 0.0;
};

struct ComparisonReport {
    std::vector<LandmarkDifference> landmarks;
    double mean_volume_diff = 0.0;  // mm, mean over all nodes
    double at_tool_diff = 0.0;      // mm, max over application-region nodes
    double threshold = kSignificanceMm;
    bool significant = false;       // at_tool_diff > threshold
    double voxel_ref = kVoxelRefMm;
};

ComparisonReport compare_placements(const MeshFreeModel& model_mre, const SimState& run_mre,
                                    const MeshFreeModel& model_atlas, const SimState& run_atlas,
                                    std::span<const Landmark> landmarks, std::span<const int> region,
                                    double threshold = kSignificanceMm);

struct SyntheticCohortSpec {
    int n = 12;
    std::uint64_t seed = 1;
    double median_G = 0.85;  // kPa
    double log_sd = 0.45;
    double heterogeneity = 0.2;
    Grid grid{{45, 35, 25}, {4.0, 4.0, 4.0}};  // 180 × 140 × 100 mm

    void validate() const;
};

struct SyntheticCase {
    CohortRecord record;
    VoxelVolume elastogram;  // zero outside the ellipsoidal mask
};

/// Ellipsoid inscribed in the grid with semi-axes 0.45 × extent, centred.
RoiMask ellipsoid_mask(const Grid& grid);

std::vector<SyntheticCase> synth_cohort(const SyntheticCohortSpec& spec);

/// Ellipsoidal phantom at the atlas shear modulus with a spherical inclusion of `contrast` × atlas stiffness.
VoxelVolume inclusion_phantom(const Grid& grid, double atlas_young, double contrast, const Vec3& center, double radius);

struct CohortRunConfig {
    ModelParams model;
    RetractionConfig retraction;
    double retractor_diameter = 10.0;
    Vec3 retractor_fraction{0.85, 0.5, 0.35};  // retractor center as a fraction of the mask bounding box
    Vec3 hoist_direction = Vec3::UnitX();
    double atlas_young = kAtlasYoungKpa;
    double significance = kSignificanceMm;
    double sim_nu = 0.45;
    double density = 1060.0;
};

/// Retractor centred at `fraction` of the mask's bounding box, snapped to the nearest masked voxel center.
Vec3 retractor_center(const MaterialField& field, const Vec3& fraction);

struct CaseComparison {
    std::string id;
    ComparisonReport report;
};

struct SkippedCase {
    std::string id;
    std::string reason;
};

struct CohortRunResult {
    std::vector<CaseComparison> cases;
    std::vector<SkippedCase> skipped;
};

/// One elastogram-vs-atlas comparison for a single volume; the mask is the positive support of the elastogram.
ComparisonReport run_case(const VoxelVolume& elastogram, const CohortRunConfig& config);

/// Reports in case-id order. Cases that fail to build or converge are skipped and recorded; throws when all fail.
CohortRunResult run_cohort_retractions(std::span<const SyntheticCase> cohort, const CohortRunConfig& config);

void write_comparison_csv(std::span<const CaseComparison> cases, const std::filesystem::path& path);
void write_skipped_csv(std::span<const SkippedCase> skipped, const std::filesystem::path& path);
void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path);
void write_cohort_stats_csv(const CohortStats& stats, std::size_t records, double atlas_E,
                            const std::filesystem::path& path);
void write_landmark_diffs_csv(std::span<const LandmarkDifference> diffs, const std::filesystem::path& path);

}  // namespace mresim
