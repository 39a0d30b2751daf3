#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mresim/spatial_index.hpp"
#include "mresim/volume.hpp"

// Units used throughout the simulator: length mm, mass kg, time s, force mN (= kg·mm/s²).
// Young's modulus in kPa is numerically mN/mm², so stiffness entries come out in mN/mm without scaling.

namespace mresim {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using Vector = Eigen::VectorXd;

/// Standard gravity in model units (mm/s²).
inline constexpr double kGravity = 9810.0;

struct MaterialField {
    Grid grid;
    std::vector<double> young_kpa;  // per voxel, only masked voxels are read
    RoiMask mask;
    double nu = 0.45;
    double density = 1060.0;  // kg/m³

    void validate() const;
    std::vector<std::size_t> masked_voxels() const;
    /// Density in kg/mm³.
    double density_kg_mm3() const { return density * 1e-9; }
};

/// Young's modulus field from a shear elastogram; voxels outside `mask` are left at zero.
MaterialField material_from_elastogram(const VoxelVolume& elastogram, const RoiMask& mask, double sim_nu,
                                       double density, double conversion_nu = kReportingPoisson);

/// Same geometry, constant modulus on every masked voxel.
MaterialField constant_material(const Grid& grid, const RoiMask& mask, double young_kpa, double nu, double density);

struct DofSet {
    std::vector<Vec3> nodes;
    std::vector<int> owner;  // per grid voxel: owning node, -1 outside the mask
    int lloyd_iterations = 0;
    double last_movement = 0.0;  // mm, largest node displacement of the final Lloyd sweep
};

enum class ShapeKind { shepard, mls };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& s);

/// Support weights for every masked voxel center, stored voxel-major: the entries of voxel v occupy
/// [offset[v], offset[v + 1]). Shepard stencils hold exactly k nodes, MLS stencils at least k.
struct ShapeMap {
    int k = 0;
    ShapeKind kind = ShapeKind::mls;
    std::vector<std::size_t> voxels;  // masked voxel linear indices, increasing
    std::vector<std::size_t> offset;  // voxels.size() + 1
    std::vector<int> node;
    std::vector<double> weight;
    std::vector<Vec3> grad;  // 1/mm

    std::size_t voxel_count() const { return voxels.size(); }
    std::size_t begin(std::size_t v) const { return offset[v]; }
    std::size_t end(std::size_t v) const { return offset[v + 1]; }
};

/// Shape stencil at a single point.
struct ShapeStencil {
    std::vector<int> node;
    std::vector<double> weight;
    std::vector<Vec3> grad;
};

struct SystemMatrices {
    Vector mass;  // lumped, one entry per DOF component (kg)
    SparseMatrix K;
    SparseMatrix C;
};

struct ModelParams {
    int n_nodes = 64;
    int support_k = 8;
    double alpha = 0.1;  // 1/s
    double beta = 0.01;  // s
    std::uint64_t seed = 1;
    int max_lloyd_iters = 50;
    ShapeKind shape = ShapeKind::mls;
};

struct MeshFreeModel {
    MaterialField field;
    ModelParams params;
    DofSet dofs;
    ShapeMap shape;
    SystemMatrices matrices;
    Vector rest_q;

    int node_count() const { return static_cast<int>(dofs.nodes.size()); }
    int dof_count() const { return 3 * node_count(); }
};

/// Lloyd-relaxed centroidal Voronoi sampling of the masked voxel centers.
/// Requires 1 <= n_nodes <= masked voxel count (build_model additionally requires n_nodes >= 4).
DofSet sample_dofs(const MaterialField& field, int n_nodes, std::uint64_t seed, int max_lloyd_iters);

/// Inverse-distance-squared Shepard weights over the given nearest nodes, with analytic gradients.
/// A node at distance zero takes the full weight and all gradients vanish.
ShapeStencil shepard_stencil(std::span<const Vec3> nodes, const std::vector<std::pair<double, int>>& nearest,
                             const Vec3& x);

/// MLS support radius as a multiple of the distance to the k-th nearest node.
inline constexpr double kMlsSupportScale = 1.5;

/// Moving least squares with a linear basis. `candidates` must be sorted by distance and contain every node
/// closer than R = kMlsSupportScale × (distance to the k-th nearest); those nodes form the stencil, weighted by a
/// quartic spline in d / R. R varies continuously with x, so the stencil does too. Reproduces linear fields;
/// weights may be negative.
ShapeStencil mls_stencil(std::span<const Vec3> nodes, const std::vector<std::pair<double, int>>& candidates, int k,
                         const Vec3& x);

ShapeStencil evaluate_stencil(ShapeKind kind, const PointGrid& index, std::span<const Vec3> nodes, int k,
                              const Vec3& x);

ShapeMap shape_weights(const DofSet& dofs, const MaterialField& field, int k, ShapeKind kind = ShapeKind::mls);

/// Isotropic elasticity matrix in Voigt order (xx, yy, zz, xy, yz, zx), engineering shear strains.
Eigen::Matrix<double, 6, 6> elasticity_matrix(double young, double nu);

/// K = sum over masked voxels of B^T D B · V_voxel with one quadrature point per voxel center.
SparseMatrix assemble_stiffness(const ShapeMap& shape, const MaterialField& field, int node_count);

/// Lumped mass: node i receives sum_v w_i(x_v)·rho·V_voxel on each of its three components.
Vector assemble_mass(const ShapeMap& shape, const MaterialField& field, int node_count);

/// Lumped mass by Voronoi ownership: each voxel's mass goes to its owning node. Always non-negative, so it is the
/// mass used with MLS shape functions, whose weights can be negative.
Vector assemble_owner_mass(const DofSet& dofs, const MaterialField& field);

/// Rayleigh damping C = alpha·M + beta·K.
SparseMatrix assemble_damping(const Vector& mass, const SparseMatrix& K, double alpha, double beta);

MeshFreeModel build_model(const MaterialField& field, const ModelParams& params);

/// Copy of `model` with every modulus multiplied by `factor`; geometry and shape functions are reused.
MeshFreeModel scale_stiffness(const MeshFreeModel& model, double factor);

/// Same DOF layout and shape map, material replaced (must share grid and mask).
MeshFreeModel rebuild_with_material(const MeshFreeModel& model, const MaterialField& field);

struct ModelDiagnostics {
    double max_partition_error = 0.0;   // max |sum_i w_i - 1|
    double max_gradient_sum = 0.0;      // max |sum_i grad w_i|, 1/mm
    double min_weight = 0.0;
    double symmetry_error = 0.0;        // max |K - K^T| / max |K|
    double min_rayleigh_ratio = 0.0;    // min x^T K x / (||x||² ||K||) over random x
    double translation_residual = 0.0;  // max over axes ||K t|| / (||K|| ||t||)
    double mass_error = 0.0;            // |sum M - rho·V| / (rho·V)
    double min_mass = 0.0;
};

ModelDiagnostics diagnose(const MeshFreeModel& model, std::uint64_t seed, int random_vectors = 20);

/// Archive: magic line, u64 header length, JSON header, then packed little-endian f64 arrays.
void save_model(const MeshFreeModel& model, const std::filesystem::path& path);
MeshFreeModel load_model(const std::filesystem::path& path);

}  // namespace mresim
