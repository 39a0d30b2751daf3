#pragma once

#include <filesystem>
#include <vector>

#include "mresim/dynamics.hpp"
#include "mresim/meshfree_model.hpp"

namespace mresim {

/// Cantilever along +x, clamped at x = 0, cross-section y in [0, width], z in [0, height].
/// The distributed load acts along -z; deflections are reported positive in the load direction.
struct BeamSpec {
    double length = 50.0;      // mm
    double width = 10.0;       // mm
    double height = 10.0;      // mm
    double young_kpa = 12.0;
    double load_n_per_mm = 1e-4;
    double resolution = 1.64;  // mm, element / voxel edge
    double nu = 0.3;           // used by the 3D solvers only
    double density = 1060.0;   // kg/m³, mesh-free mass only

    void validate() const;
    /// Cells per axis: round(extent / resolution); throws when any axis gets fewer than 2.
    std::array<int, 3> cells(double edge) const;
};

struct DeflectionSample {
    double x = 0.0;  // mm
    double w = 0.0;  // mm
};

struct DeflectionCurve {
    std::vector<DeflectionSample> samples;
};

double second_moment_rect(double width, double height);

/// Clamped-free cantilever under uniform load: w(x) = q x²(6L² − 4Lx + x²) / (24 E I).
double euler_bernoulli_deflection(double x, const BeamSpec& spec);

DeflectionCurve analytic_curve(const BeamSpec& spec, const std::vector<double>& xs);

/// Load per unit length giving the requested analytic tip deflection.
double load_for_tip_deflection(const BeamSpec& spec, double tip_mm);

/// Sample positions x_i = i·L/n, i = 0..n, with n = round(L / resolution).
std::vector<double> axis_samples(const BeamSpec& spec);

enum class HexElement { trilinear, incompatible_modes };

struct FeaOptions {
    HexElement element = HexElement::incompatible_modes;
    double cg_tol = 1e-10;
    int cg_max = 0;  // 0: 20 × DOF count
};

struct FeaResult {
    DeflectionCurve curve;
    int cg_iterations = 0;
    double cg_residual = 0.0;
    std::array<int, 3> cells{};
    double total_load = 0.0;  // N
};

/// Static 8-node hexahedral solve (2×2×2 Gauss) with the x = 0 face clamped and a uniform body load.
FeaResult fea_baseline(const BeamSpec& spec, const FeaOptions& opts = {});

/// 24×24 element stiffness for a box element, in N/mm given E in N/mm².
Eigen::MatrixXd hex_element_stiffness(const Vec3& size, double young, double nu, HexElement element);

struct BeamPhantom {
    MeshFreeModel model;
    std::vector<int> clamped;
    LoadCase loads;  // forces in mN
};

struct MeshfreeBeamOptions {
    int n_nodes = 1500;
    int support_k = 8;
    std::uint64_t seed = 1;
    int max_lloyd_iters = 100;
    double voxel = 0.5;  // phantom voxel edge, 0: spec.resolution
    ShapeKind shape = ShapeKind::mls;
    double alpha = 0.1;
    double beta = 0.01;
};

BeamPhantom build_beam_phantom(const BeamSpec& spec, const MeshfreeBeamOptions& opts);

struct SimulatedBeam {
    DeflectionCurve curve;
    SteadyStateResult run;
};

/// Quasi-static stepping for the beam: h = 1 s, so a few implicit steps land on the static solution.
SteadyStateOptions beam_steady_options();

SimulatedBeam simulate_beam(const BeamPhantom& phantom, const BeamSpec& spec, const SteadyStateOptions& opts);

struct ConvergenceError {
    double max_abs = 0.0;
    double rms = 0.0;
};

ConvergenceError convergence_error(const DeflectionCurve& sim, const DeflectionCurve& theory);

struct BeamValidation {
    BeamSpec spec;
    DeflectionCurve theory;
    DeflectionCurve fea;
    DeflectionCurve meshfree;
    ConvergenceError fea_error;
    ConvergenceError meshfree_error;
    int meshfree_steps = 0;
};

BeamValidation validate_beam(const BeamSpec& spec, const MeshfreeBeamOptions& mf = {},
                             const SteadyStateOptions& steady = beam_steady_options(), const FeaOptions& fea = {});

/// `x_mm,w_theory_mm,w_fea_mm,w_meshfree_mm,err_fea_mm,err_meshfree_mm`
void write_beam_csv(const BeamValidation& v, const std::filesystem::path& path);

}  // namespace mresim
