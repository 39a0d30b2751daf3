#include "mresim/dynamics.hpp"

#include <cmath>
#include <iomanip>

#include <json.hpp>

#include "mresim/cg.hpp"
#include "mresim/csv.hpp"
#include "mresim/errors.hpp"
#include "mresim/spatial_index.hpp"

namespace mresim {

void LoadCase::validate(int node_count) const {
    auto check = [node_count](int n, const char* what) {
        if (n < 0 || n >= node_count)
            throw InputError(std::string(what) + " node index " + std::to_string(n) + " out of range");
    };
    for (const auto& p : point_loads) check(p.node, "point load");
    for (const auto& s : springs) {
        check(s.node, "spring");
        if (!(s.stiffness >= 0.0)) throw InputError("spring stiffness must be non-negative");
    }
    for (int d : dirichlet) check(d, "Dirichlet");
}

namespace {

void check_dims(const DynamicsView& sys, const SimState& state) {
    const auto n = static_cast<Eigen::Index>(3 * sys.node_count());
    if (sys.matrices.mass.size() != n || sys.matrices.K.rows() != n || sys.matrices.C.rows() != n)
        throw InputError("system matrices do not match node count");
    if (state.q.size() != n || state.qdot.size() != n) throw InputError("state dimensions do not match model");
}

std::vector<std::uint8_t> fixed_dofs(const LoadCase& loads, int node_count) {
    std::vector<std::uint8_t> fixed(static_cast<std::size_t>(3 * node_count), 0);
    for (int d : loads.dirichlet) {
        for (int c = 0; c < 3; ++c) fixed[static_cast<std::size_t>(3 * d + c)] = 1;
    }
    return fixed;
}

Vector spring_diagonal(const LoadCase& loads, int node_count) {
    Vector ks = Vector::Zero(3 * node_count);
    for (const auto& s : loads.springs) ks.segment<3>(3 * s.node).array() += s.stiffness;
    return ks;
}

/// Holds the step matrix for a fixed (h, load case) so repeated steps only rebuild the right-hand side.
class Integrator {
public:
    Integrator(const DynamicsView& sys, const LoadCase& loads, double h)
        : sys_(sys), loads_(loads), h_(h), fixed_(fixed_dofs(loads, sys.node_count())),
          spring_k_(spring_diagonal(loads, sys.node_count())) {
        if (!(h > 0.0)) throw InputError("time step must be positive");
        loads.validate(sys.node_count());
        const auto& m = sys.matrices;
        SparseMatrix diag(m.K.rows(), m.K.cols());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(m.mass.size()));
        for (Eigen::Index i = 0; i < m.mass.size(); ++i)
            trip.emplace_back(static_cast<int>(i), static_cast<int>(i), m.mass[i] + h * h * spring_k_[i]);
        diag.setFromTriplets(trip.begin(), trip.end());
        A_ = diag + h * m.C + (h * h) * m.K;
        for (int r = 0; r < A_.outerSize(); ++r) {
            for (SparseMatrix::InnerIterator it(A_, r); it; ++it) {
                if (fixed_[static_cast<std::size_t>(it.row())] || fixed_[static_cast<std::size_t>(it.col())])
                    it.valueRef() = it.row() == it.col() ? 1.0 : 0.0;
            }
        }
        A_.prune(0.0);
        A_.makeCompressed();
    }

    const SparseMatrix& matrix() const { return A_; }

    Vector rhs(const SimState& state) const {
        const auto& m = sys_.matrices;
        const Vector f_ext = external_force(sys_, state, loads_);
        const Vector f_int = -(m.K * state.q) - m.C * state.qdot;
        const Vector k_qdot = m.K * state.qdot + spring_k_.cwiseProduct(state.qdot);
        Vector b = h_ * (f_ext + f_int - h_ * k_qdot);
        for (std::size_t i = 0; i < fixed_.size(); ++i) {
            if (fixed_[i]) b[static_cast<Eigen::Index>(i)] = 0.0;
        }
        return b;
    }

    SimState advance(const SimState& state, const StepOptions& opts, StepStats* stats) const {
        const Vector b = rhs(state);
        const auto sol = cg_solve(A_, b, Vector::Zero(b.size()), opts.cg_max, opts.cg_tol);
        if (stats) *stats = {sol.iterations, sol.relative_residual, sol.converged};
        SimState next;
        next.qdot = state.qdot + sol.x;
        for (std::size_t i = 0; i < fixed_.size(); ++i) {
            if (fixed_[i]) next.qdot[static_cast<Eigen::Index>(i)] = 0.0;
        }
        next.q = state.q + h_ * next.qdot;
        next.t = state.t + h_;
        return next;
    }

private:
    const DynamicsView& sys_;
    const LoadCase& loads_;
    double h_;
    std::vector<std::uint8_t> fixed_;
    Vector spring_k_;
    SparseMatrix A_;
};

}  // namespace

Vector external_force(const DynamicsView& sys, const SimState& state, const LoadCase& loads) {
    const int n = sys.node_count();
    Vector f(3 * n);
    for (int i = 0; i < n; ++i) f.segment<3>(3 * i) = sys.matrices.mass.segment<3>(3 * i).cwiseProduct(loads.gravity);
    for (const auto& p : loads.point_loads) f.segment<3>(3 * p.node) += p.force;
    for (const auto& s : loads.springs) {
        const Vec3 x = sys.rest_nodes[static_cast<std::size_t>(s.node)] + state.q.segment<3>(3 * s.node);
        f.segment<3>(3 * s.node) -= s.stiffness * (x - s.anchor);
    }
    return f;
}

LinearSystem build_system(const DynamicsView& sys, const SimState& state, const LoadCase& loads, double h) {
    check_dims(sys, state);
    const Integrator integ(sys, loads, h);
    return {integ.matrix(), integ.rhs(state)};
}

SimState step(const DynamicsView& sys, const SimState& state, const LoadCase& loads, const StepOptions& opts,
              StepStats* stats) {
    check_dims(sys, state);
    const Integrator integ(sys, loads, opts.h);
    return integ.advance(state, opts, stats);
}

SteadyStateResult run_to_steady_state(const DynamicsView& sys, const LoadCase& loads, const SteadyStateOptions& opts,
                                      const StepObserver& observer) {
    if (opts.max_steps < 1 || opts.consecutive < 1 || !(opts.v_tol > 0.0))
        throw InputError("bad steady-state options");
    SteadyStateResult res;
    res.state = SimState::rest(sys.node_count());
    check_dims(sys, res.state);
    const Integrator integ(sys, loads, opts.step.h);
    int quiet = 0;
    for (int s = 1; s <= opts.max_steps; ++s) {
        StepStats st;
        res.state = integ.advance(res.state, opts.step, &st);
        res.steps = s;
        res.cg_iterations += st.cg_iterations;
        if (!st.cg_converged) ++res.cg_cap_hits;
        res.vmax = res.state.qdot.size() ? res.state.qdot.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(res.vmax)) throw NonConvergenceError("simulation diverged (non-finite velocity)", res.vmax);
        if (observer) observer(s, res.state);
        quiet = res.vmax < opts.v_tol ? quiet + 1 : 0;
        if (quiet >= opts.consecutive) return res;
    }
    throw NonConvergenceError("no steady state after " + std::to_string(opts.max_steps) +
                                  " steps (max |qdot| = " + format_double(res.vmax) + " mm/s)",
                              res.vmax);
}

bool inside_mask(const MaterialField& field, const Vec3& x) {
    std::array<int, 3> idx{};
    for (int a = 0; a < 3; ++a) {
        const double s = field.grid.spacing[a];
        const int n = field.grid.dims[a];
        if (!(x[a] >= 0.0) || x[a] > n * s) return false;
        idx[a] = std::min(static_cast<int>(std::floor(x[a] / s)), n - 1);
    }
    return field.mask.flags[field.grid.index(idx[0], idx[1], idx[2])] != 0;
}

ShapeStencil model_stencil(const MeshFreeModel& model, const Vec3& x) {
    const PointGrid index(model.dofs.nodes);
    return evaluate_stencil(model.shape.kind, index, model.dofs.nodes, model.shape.k, x);
}

std::vector<Landmark> displace_landmarks(const MeshFreeModel& model, const SimState& state,
                                         std::span<const Landmark> landmarks) {
    if (state.q.size() != model.dof_count()) throw InputError("state dimensions do not match model");
    const PointGrid index(model.dofs.nodes);
    std::vector<Landmark> out;
    out.reserve(landmarks.size());
    for (const auto& lm : landmarks) {
        if (!inside_mask(model.field, lm.position))
            throw InputError("landmark '" + lm.label + "' lies outside the model mask");
        const auto st = evaluate_stencil(model.shape.kind, index, model.dofs.nodes, model.shape.k, lm.position);
        Vec3 u = Vec3::Zero();
        for (std::size_t a = 0; a < st.node.size(); ++a) u += st.weight[a] * state.q.segment<3>(3 * st.node[a]);
        out.push_back({lm.label, lm.position + u});
    }
    return out;
}

std::vector<Landmark> read_landmarks_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"label", "x_mm", "y_mm", "z_mm"})
        throw InputError("landmark CSV header must be label,x_mm,y_mm,z_mm");
    std::vector<Landmark> out;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 4) throw InputError("malformed landmark row: " + line);
        try {
            out.push_back({cols[0], Vec3(std::stod(cols[1]), std::stod(cols[2]), std::stod(cols[3]))});
        } catch (const std::exception&) {
            throw InputError("non-numeric landmark coordinate: " + line);
        }
    }
    return out;
}

void write_landmarks_csv(std::span<const Landmark> landmarks, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "label,x_mm,y_mm,z_mm\n";
    for (const auto& lm : landmarks) {
        out << lm.label << ',' << format_double(lm.position[0]) << ',' << format_double(lm.position[1]) << ','
            << format_double(lm.position[2]) << '\n';
    }
}

TrajectoryWriter::TrajectoryWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw InputError("cannot write " + path.string());
    out_ << "step,t_s,node,qx_mm,qy_mm,qz_mm\n";
}

void TrajectoryWriter::record(int step, const SimState& state) {
    const auto nodes = state.q.size() / 3;
    for (Eigen::Index i = 0; i < nodes; ++i) {
        out_ << step << ',' << format_double(state.t) << ',' << i << ',' << format_double(state.q[3 * i]) << ','
             << format_double(state.q[3 * i + 1]) << ',' << format_double(state.q[3 * i + 2]) << '\n';
    }
}

void save_state(const SimState& state, const std::filesystem::path& path) {
    nlohmann::json j;
    j["t_s"] = state.t;
    j["q_mm"] = std::vector<double>(state.q.data(), state.q.data() + state.q.size());
    j["qdot_mm_s"] = std::vector<double>(state.qdot.data(), state.qdot.data() + state.qdot.size());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump() << '\n';
}

SimState load_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        const auto q = j.at("q_mm").get<std::vector<double>>();
        const auto v = j.at("qdot_mm_s").get<std::vector<double>>();
        if (q.size() != v.size() || q.size() % 3 != 0) throw InputError("state arrays have inconsistent sizes");
        SimState s;
        s.q = Eigen::Map<const Vector>(q.data(), static_cast<Eigen::Index>(q.size()));
        s.qdot = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        s.t = j.at("t_s").get<double>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed state file " + path.string() + ": " + e.what());
    }
}

}  // namespace mresim
