#include "mresim/beam.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "mresim/cg.hpp"
#include "mresim/csv.hpp"
#include "mresim/errors.hpp"

namespace mresim {

void BeamSpec::validate() const {
    if (!(length > 0.0 && width > 0.0 && height > 0.0)) throw InputError("beam dimensions must be positive");
    if (!(young_kpa > 0.0)) throw InputError("beam modulus must be positive");
    if (!(resolution > 0.0)) throw InputError("beam resolution must be positive");
    if (!(length > height)) throw InputError("beam must be longer than it is tall");
    if (!(nu >= 0.0 && nu < 0.5)) throw InputError("beam Poisson ratio must lie in [0, 0.5)");
    if (!std::isfinite(load_n_per_mm)) throw InputError("beam load must be finite");
}

std::array<int, 3> BeamSpec::cells(double edge) const {
    const std::array<double, 3> ext{length, width, height};
    std::array<int, 3> n{};
    for (int a = 0; a < 3; ++a) {
        n[a] = static_cast<int>(std::lround(ext[a] / edge));
        if (n[a] < 2) throw InputError("beam discretization needs at least 2 cells along every axis");
    }
    return n;
}

double second_moment_rect(double width, double height) {
    if (!(width > 0.0 && height > 0.0)) throw InputError("cross-section dimensions must be positive");
    return width * height * height * height / 12.0;
}

double euler_bernoulli_deflection(double x, const BeamSpec& spec) {
    const double L = spec.length;
    if (!(x >= 0.0 && x <= L)) throw InputError("x outside [0, L]");
    const double E = spec.young_kpa * 1e-3;  // N/mm²
    const double I = second_moment_rect(spec.width, spec.height);
    return spec.load_n_per_mm * x * x * (6.0 * L * L - 4.0 * L * x + x * x) / (24.0 * E * I);
}

DeflectionCurve analytic_curve(const BeamSpec& spec, const std::vector<double>& xs) {
    DeflectionCurve c;
    for (double x : xs) c.samples.push_back({x, euler_bernoulli_deflection(x, spec)});
    return c;
}

double load_for_tip_deflection(const BeamSpec& spec, double tip_mm) {
    const double E = spec.young_kpa * 1e-3;
    const double I = second_moment_rect(spec.width, spec.height);
    const double L = spec.length;
    return tip_mm * 8.0 * E * I / (L * L * L * L);
}

std::vector<double> axis_samples(const BeamSpec& spec) {
    const int n = spec.cells(spec.resolution)[0];
    std::vector<double> xs(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) xs[static_cast<std::size_t>(i)] = spec.length * i / n;
    xs.back() = spec.length;
    return xs;
}

Eigen::MatrixXd hex_element_stiffness(const Vec3& size, double young, double nu, HexElement element) {
    const auto D = elasticity_matrix(young, nu);
    const Vec3 half = size / 2.0;
    const double detJ = half.prod();
    const int n_modes = element == HexElement::incompatible_modes ? 9 : 0;
    const int n = 24 + n_modes;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
    const double gp = 1.0 / std::sqrt(3.0);

    auto put_column = [](Eigen::MatrixXd& B, int col, int comp, const Vec3& g) {
        // Voigt strain (xx, yy, zz, xy, yz, zx) from a scalar field with gradient g on component comp.
        B(comp, col) = g[comp];
        switch (comp) {
            case 0: B(3, col) = g[1]; B(5, col) = g[2]; break;
            case 1: B(3, col) = g[0]; B(4, col) = g[2]; break;
            default: B(4, col) = g[1]; B(5, col) = g[0]; break;
        }
    };

    for (int gz = 0; gz < 2; ++gz) {
        for (int gy = 0; gy < 2; ++gy) {
            for (int gx = 0; gx < 2; ++gx) {
                const Vec3 xi((2 * gx - 1) * gp, (2 * gy - 1) * gp, (2 * gz - 1) * gp);
                Eigen::MatrixXd B = Eigen::MatrixXd::Zero(6, n);
                for (int a = 0; a < 8; ++a) {
                    const Vec3 s(2 * (a & 1) - 1, 2 * ((a >> 1) & 1) - 1, 2 * ((a >> 2) & 1) - 1);
                    const Vec3 f(1 + s[0] * xi[0], 1 + s[1] * xi[1], 1 + s[2] * xi[2]);
                    const Vec3 g(s[0] * f[1] * f[2] / (8.0 * half[0]), s[1] * f[0] * f[2] / (8.0 * half[1]),
                                 s[2] * f[0] * f[1] / (8.0 * half[2]));
                    for (int c = 0; c < 3; ++c) put_column(B, 3 * a + c, c, g);
                }
                for (int m = 0; m < n_modes / 3; ++m) {
                    Vec3 g = Vec3::Zero();
                    g[m] = -2.0 * xi[m] / half[m];
                    for (int c = 0; c < 3; ++c) put_column(B, 24 + 3 * m + c, c, g);
                }
                K += B.transpose() * D * B * detJ;
            }
        }
    }
    if (n_modes == 0) return K;
    const Eigen::MatrixXd Kuu = K.topLeftCorner(24, 24);
    const Eigen::MatrixXd Kua = K.topRightCorner(24, n_modes);
    const Eigen::MatrixXd Kaa = K.bottomRightCorner(n_modes, n_modes);
    Eigen::MatrixXd Kc = Kuu - Kua * Kaa.ldlt().solve(Kua.transpose());
    return 0.5 * (Kc + Kc.transpose());
}

FeaResult fea_baseline(const BeamSpec& spec, const FeaOptions& opts) {
    spec.validate();
    const auto cells = spec.cells(spec.resolution);
    const int nx = cells[0], ny = cells[1], nz = cells[2];
    const Vec3 size(spec.length / nx, spec.width / ny, spec.height / nz);
    const Eigen::MatrixXd Ke = hex_element_stiffness(size, spec.young_kpa * 1e-3, spec.nu, opts.element);

    auto node_id = [&](int i, int j, int k) { return i + (nx + 1) * (j + (ny + 1) * k); };
    const int nodes = (nx + 1) * (ny + 1) * (nz + 1);
    const int ndof = 3 * nodes;

    std::vector<std::uint8_t> fixed(static_cast<std::size_t>(ndof), 0);
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j)
            for (int c = 0; c < 3; ++c) fixed[static_cast<std::size_t>(3 * node_id(0, j, k) + c)] = 1;

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(nx) * ny * nz * 576 + static_cast<std::size_t>(ndof));
    Vector f = Vector::Zero(ndof);
    const double body = -spec.load_n_per_mm / (spec.width * spec.height);  // N/mm³ along z
    const double nodal = body * size.prod() / 8.0;
    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                std::array<int, 24> dof{};
                for (int a = 0; a < 8; ++a) {
                    const int nd = node_id(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                    for (int c = 0; c < 3; ++c) dof[static_cast<std::size_t>(3 * a + c)] = 3 * nd + c;
                    f[3 * nd + 2] += nodal;
                }
                for (int r = 0; r < 24; ++r) {
                    const int gr = dof[static_cast<std::size_t>(r)];
                    if (fixed[static_cast<std::size_t>(gr)]) continue;
                    for (int c = 0; c < 24; ++c) {
                        const int gc = dof[static_cast<std::size_t>(c)];
                        if (fixed[static_cast<std::size_t>(gc)]) continue;
                        trip.emplace_back(gr, gc, Ke(r, c));
                    }
                }
            }
        }
    }
    for (int d = 0; d < ndof; ++d) {
        if (fixed[static_cast<std::size_t>(d)]) {
            trip.emplace_back(d, d, 1.0);
            f[d] = 0.0;
        }
    }
    SparseMatrix K(ndof, ndof);
    K.setFromTriplets(trip.begin(), trip.end());
    K.makeCompressed();

    const int cap = opts.cg_max > 0 ? opts.cg_max : 20 * ndof;
    const auto sol = cg_solve(K, f, Vector::Zero(ndof), cap, opts.cg_tol);

    FeaResult out;
    out.cg_iterations = sol.iterations;
    out.cg_residual = sol.relative_residual;
    out.cells = cells;
    out.total_load = spec.load_n_per_mm * spec.length;

    // Trilinear interpolation of -u_z along the central axis.
    const double yc = spec.width / 2.0, zc = spec.height / 2.0;
    for (double x : axis_samples(spec)) {
        const Vec3 p(x, yc, zc);
        std::array<int, 3> e{};
        Vec3 t;
        for (int a = 0; a < 3; ++a) {
            const int n = cells[static_cast<std::size_t>(a)];
            e[static_cast<std::size_t>(a)] = std::clamp(static_cast<int>(std::floor(p[a] / size[a])), 0, n - 1);
            t[a] = p[a] / size[a] - e[static_cast<std::size_t>(a)];
        }
        double uz = 0.0;
        for (int a = 0; a < 8; ++a) {
            const int di = a & 1, dj = (a >> 1) & 1, dk = (a >> 2) & 1;
            const double wgt = (di ? t[0] : 1 - t[0]) * (dj ? t[1] : 1 - t[1]) * (dk ? t[2] : 1 - t[2]);
            if (wgt == 0.0) continue;
            uz += wgt * sol.x[3 * node_id(e[0] + di, e[1] + dj, e[2] + dk) + 2];
        }
        out.curve.samples.push_back({x, -uz});
    }
    return out;
}

BeamPhantom build_beam_phantom(const BeamSpec& spec, const MeshfreeBeamOptions& opts) {
    spec.validate();
    const double edge = opts.voxel > 0.0 ? opts.voxel : spec.resolution;
    const auto cells = spec.cells(edge);
    Grid grid;
    grid.dims = cells;
    grid.spacing = {spec.length / cells[0], spec.width / cells[1], spec.height / cells[2]};
    const auto field = constant_material(grid, full_mask(grid), spec.young_kpa, spec.nu, spec.density);

    ModelParams params;
    params.n_nodes = std::min<int>(opts.n_nodes, static_cast<int>(grid.voxel_count()));
    params.support_k = opts.support_k;
    params.shape = opts.shape;
    params.seed = opts.seed;
    params.max_lloyd_iters = opts.max_lloyd_iters;
    params.alpha = opts.alpha;
    params.beta = opts.beta;

    BeamPhantom ph{build_model(field, params), {}, {}};
    std::vector<std::uint8_t> clamp(static_cast<std::size_t>(ph.model.node_count()), 0);
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j) clamp[static_cast<std::size_t>(ph.model.dofs.owner[grid.index(0, j, k)])] = 1;
    for (int n = 0; n < ph.model.node_count(); ++n) {
        if (clamp[static_cast<std::size_t>(n)]) ph.clamped.push_back(n);
    }
    const int free_nodes = ph.model.node_count() - static_cast<int>(ph.clamped.size());
    if (free_nodes <= 0) throw InputError("every beam node is clamped");
    const double per_node = spec.load_n_per_mm * spec.length * 1e3 / free_nodes;  // mN
    for (int n = 0; n < ph.model.node_count(); ++n) {
        if (!clamp[static_cast<std::size_t>(n)]) ph.loads.point_loads.push_back({n, Vec3(0.0, 0.0, -per_node)});
    }
    ph.loads.dirichlet = ph.clamped;
    return ph;
}

SteadyStateOptions beam_steady_options() {
    SteadyStateOptions o;
    o.step.h = 1.0;
    o.step.cg_max = 20000;
    o.step.cg_tol = 1e-9;
    o.v_tol = 1e-4;
    o.max_steps = 1000;
    return o;
}

SimulatedBeam simulate_beam(const BeamPhantom& phantom, const BeamSpec& spec, const SteadyStateOptions& opts) {
    SimulatedBeam out;
    out.run = run_to_steady_state(DynamicsView(phantom.model), phantom.loads, opts);
    std::vector<Landmark> axis;
    for (double x : axis_samples(spec)) axis.push_back({"", Vec3(x, spec.width / 2.0, spec.height / 2.0)});
    const auto moved = displace_landmarks(phantom.model, out.run.state, axis);
    for (std::size_t i = 0; i < axis.size(); ++i)
        out.curve.samples.push_back({axis[i].position[0], -(moved[i].position[2] - axis[i].position[2])});
    return out;
}

ConvergenceError convergence_error(const DeflectionCurve& sim, const DeflectionCurve& theory) {
    if (sim.samples.size() != theory.samples.size() || sim.samples.empty())
        throw InputError("deflection curves must share a non-empty sample grid");
    ConvergenceError e;
    double sq = 0.0;
    for (std::size_t i = 0; i < sim.samples.size(); ++i) {
        const double xa = sim.samples[i].x, xb = theory.samples[i].x;
        if (std::abs(xa - xb) > 1e-9 * std::max(1.0, std::abs(xb)))
            throw InputError("deflection curves are sampled at different x");
        const double d = std::abs(sim.samples[i].w - theory.samples[i].w);
        e.max_abs = std::max(e.max_abs, d);
        sq += d * d;
    }
    e.rms = std::sqrt(sq / static_cast<double>(sim.samples.size()));
    return e;
}

BeamValidation validate_beam(const BeamSpec& spec, const MeshfreeBeamOptions& mf, const SteadyStateOptions& steady,
                             const FeaOptions& fea) {
    BeamValidation v;
    v.spec = spec;
    v.theory = analytic_curve(spec, axis_samples(spec));
    v.fea = fea_baseline(spec, fea).curve;
    const auto phantom = build_beam_phantom(spec, mf);
    const auto sim = simulate_beam(phantom, spec, steady);
    v.meshfree = sim.curve;
    v.meshfree_steps = sim.run.steps;
    v.fea_error = convergence_error(v.fea, v.theory);
    v.meshfree_error = convergence_error(v.meshfree, v.theory);
    return v;
}

void write_beam_csv(const BeamValidation& v, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "x_mm,w_theory_mm,w_fea_mm,w_meshfree_mm,err_fea_mm,err_meshfree_mm\n";
    for (std::size_t i = 0; i < v.theory.samples.size(); ++i) {
        const double th = v.theory.samples[i].w;
        const double fe = v.fea.samples[i].w;
        const double mf = v.meshfree.samples[i].w;
        out << format_double(v.theory.samples[i].x) << ',' << format_double(th) << ',' << format_double(fe) << ','
            << format_double(mf) << ',' << format_double(std::abs(fe - th)) << ',' << format_double(std::abs(mf - th))
            << '\n';
    }
}

}  // namespace mresim
