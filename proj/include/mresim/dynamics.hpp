#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mresim/meshfree_model.hpp"

namespace mresim {

struct SimState {
    Vector q;     // mm, 3 per node
    Vector qdot;  // mm/s
    double t = 0.0;

    static SimState rest(int node_count) {
        return {Vector::Zero(3 * node_count), Vector::Zero(3 * node_count), 0.0};
    }
};

struct PointLoad {
    int node = 0;
    Vec3 force = Vec3::Zero();  // mN
};

/// Zero-length linear spring from a node's current position to a fixed anchor.
struct SupportSpring {
    int node = 0;
    double stiffness = 0.0;  // mN/mm
    Vec3 anchor = Vec3::Zero();
};

struct LoadCase {
    Vec3 gravity = Vec3::Zero();  // mm/s²
    std::vector<PointLoad> point_loads;
    std::vector<SupportSpring> springs;
    std::vector<int> dirichlet;  // fixed node indices

    void validate(int node_count) const;
};

struct LinearSystem {
    SparseMatrix A;
    Vector b;
};

struct StepOptions {
    double h = 1e-3;  // s
    int cg_max = 200;
    double cg_tol = 1e-6;
};

struct StepStats {
    int cg_iterations = 0;
    double cg_residual = 0.0;
    bool cg_converged = true;
};

/// The pieces of a model the integrator needs; lets tests drive hand-made matrices.
struct DynamicsView {
    const SystemMatrices& matrices;
    std::span<const Vec3> rest_nodes;

    DynamicsView(const SystemMatrices& m, std::span<const Vec3> nodes) : matrices(m), rest_nodes(nodes) {}
    explicit DynamicsView(const MeshFreeModel& model) : matrices(model.matrices), rest_nodes(model.dofs.nodes) {}
    int node_count() const { return static_cast<int>(rest_nodes.size()); }
};

/// External force at the current state (gravity M·g, point loads, spring forces).
Vector external_force(const DynamicsView& sys, const SimState& state, const LoadCase& loads);

/// Backward Euler system (M + hC + h²K')δq̇ = h(f_ext + f_int − hK'q̇), where K' adds the spring stiffness
/// to K and f_int = −Kq − Cq̇. Dirichlet rows and columns are reduced to identity with zero right-hand side.
LinearSystem build_system(const DynamicsView& sys, const SimState& state, const LoadCase& loads, double h);

SimState step(const DynamicsView& sys, const SimState& state, const LoadCase& loads, const StepOptions& opts,
              StepStats* stats = nullptr);

struct SteadyStateOptions {
    StepOptions step;
    int max_steps = 10000;
    double v_tol = 1e-4;  // mm/s, infinity norm
    int consecutive = 3;
};

struct SteadyStateResult {
    SimState state;
    int steps = 0;
    double vmax = 0.0;
    long long cg_iterations = 0;
    int cg_cap_hits = 0;
};

using StepObserver = std::function<void(int, const SimState&)>;

/// Steps from rest until ||q̇||_inf < v_tol on `consecutive` successive steps.
/// Throws NonConvergenceError carrying the last ||q̇||_inf when max_steps is exhausted.
SteadyStateResult run_to_steady_state(const DynamicsView& sys, const LoadCase& loads, const SteadyStateOptions& opts,
                                      const StepObserver& observer = {});

struct Landmark {
    std::string label;
    Vec3 position = Vec3::Zero();  // mm
};

/// Moves each landmark by sum_i w_i(x_L) q_i with the model's shape-function construction.
/// Throws InputError for a landmark whose voxel is outside the mask.
std::vector<Landmark> displace_landmarks(const MeshFreeModel& model, const SimState& state,
                                         std::span<const Landmark> landmarks);

/// Shape stencil of the model at an arbitrary point inside its mask.
ShapeStencil model_stencil(const MeshFreeModel& model, const Vec3& x);

/// True when x lies in a masked voxel; points on the outer face of the grid map to the boundary voxel.
bool inside_mask(const MaterialField& field, const Vec3& x);

std::vector<Landmark> read_landmarks_csv(const std::filesystem::path& path);
void write_landmarks_csv(std::span<const Landmark> landmarks, const std::filesystem::path& path);

/// Appends `step,t_s,node,qx_mm,qy_mm,qz_mm` rows.
class TrajectoryWriter {
public:
    explicit TrajectoryWriter(const std::filesystem::path& path);
    void record(int step, const SimState& state);

private:
    std::ofstream out_;
};

void save_state(const SimState& state, const std::filesystem::path& path);
SimState load_state(const std::filesystem::path& path);

}  // namespace mresim
