#include "mresim/meshfree_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "mresim/errors.hpp"

namespace mresim {

void MaterialField::validate() const {
    grid.validate();
    if (young_kpa.size() != grid.voxel_count()) throw InputError("material field size does not match grid");
    if (mask.dims != grid.dims || mask.flags.size() != grid.voxel_count())
        throw InputError("material mask dims do not match grid");
    if (!(nu >= 0.0 && nu < 0.5)) throw InputError("simulation Poisson ratio must lie in [0, 0.5)");
    if (!(density > 0.0)) throw InputError("density must be positive");
    std::size_t n = 0;
    for (std::size_t i = 0; i < young_kpa.size(); ++i) {
        if (!mask.flags[i]) continue;
        ++n;
        if (!(young_kpa[i] > 0.0) || !std::isfinite(young_kpa[i]))
            throw InputError("masked voxel " + std::to_string(i) + " has non-positive Young's modulus");
    }
    if (n == 0) throw InputError("material mask is empty");
}

std::vector<std::size_t> MaterialField::masked_voxels() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.flags.size(); ++i) {
        if (mask.flags[i]) out.push_back(i);
    }
    return out;
}

MaterialField material_from_elastogram(const VoxelVolume& elastogram, const RoiMask& mask, double sim_nu,
                                       double density, double conversion_nu) {
    if (elastogram.kind != VolumeKind::elastogram_shear_kPa) throw InputError("expected an elastogram volume");
    if (mask.dims != elastogram.grid.dims) throw InputError("mask dims do not match elastogram");
    MaterialField f;
    f.grid = elastogram.grid;
    f.mask = mask;
    f.nu = sim_nu;
    f.density = density;
    f.young_kpa.assign(elastogram.data.size(), 0.0);
    for (std::size_t i = 0; i < elastogram.data.size(); ++i) {
        if (mask.flags[i]) f.young_kpa[i] = shear_to_young(elastogram.data[i], conversion_nu);
    }
    return f;
}

MaterialField constant_material(const Grid& grid, const RoiMask& mask, double young_kpa, double nu, double density) {
    MaterialField f;
    f.grid = grid;
    f.mask = mask;
    f.nu = nu;
    f.density = density;
    f.young_kpa.assign(grid.voxel_count(), 0.0);
    for (std::size_t i = 0; i < f.young_kpa.size(); ++i) {
        if (mask.flags[i]) f.young_kpa[i] = young_kpa;
    }
    return f;
}

DofSet sample_dofs(const MaterialField& field, int n_nodes, std::uint64_t seed, int max_lloyd_iters) {
    const auto voxels = field.masked_voxels();
    if (voxels.empty()) throw InputError("cannot sample DOFs from an empty mask");
    if (n_nodes < 1 || static_cast<std::size_t>(n_nodes) > voxels.size())
        throw InputError("node count " + std::to_string(n_nodes) + " outside [1, " + std::to_string(voxels.size()) +
                         "]");

    std::vector<Vec3> centers(voxels.size());
    for (std::size_t v = 0; v < voxels.size(); ++v) centers[v] = field.grid.center(voxels[v]);

    // Partial Fisher-Yates; the raw engine output is specified by the standard, so seeds reproduce everywhere.
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(voxels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    DofSet dofs;
    dofs.nodes.resize(static_cast<std::size_t>(n_nodes));
    for (std::size_t i = 0; i < dofs.nodes.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (order.size() - i));
        std::swap(order[i], order[j]);
        dofs.nodes[i] = centers[order[i]];
    }

    std::vector<int> assign(voxels.size(), 0);
    auto assign_all = [&] {
        const PointGrid index(dofs.nodes);
        for (std::size_t v = 0; v < centers.size(); ++v) assign[v] = index.nearest(centers[v]);
    };

    for (int iter = 0; iter < max_lloyd_iters; ++iter) {
        assign_all();
        std::vector<Vec3> sum(dofs.nodes.size(), Vec3::Zero());
        std::vector<std::size_t> count(dofs.nodes.size(), 0);
        for (std::size_t v = 0; v < centers.size(); ++v) {
            sum[assign[v]] += centers[v];
            ++count[assign[v]];
        }
        double movement = 0.0;
        std::vector<std::uint8_t> taken(centers.size(), 0);
        for (std::size_t n = 0; n < dofs.nodes.size(); ++n) {
            Vec3 next;
            if (count[n] > 0) {
                next = sum[n] / static_cast<double>(count[n]);
            } else {
                // Orphaned node: restart it at the voxel worst served by its current owner.
                double worst = -1.0;
                std::size_t pick = 0;
                for (std::size_t v = 0; v < centers.size(); ++v) {
                    if (taken[v]) continue;
                    const double d = (centers[v] - dofs.nodes[assign[v]]).squaredNorm();
                    if (d > worst) {
                        worst = d;
                        pick = v;
                    }
                }
                taken[pick] = 1;
                next = centers[pick];
            }
            movement = std::max(movement, (next - dofs.nodes[n]).norm());
            dofs.nodes[n] = next;
        }
        dofs.lloyd_iterations = iter + 1;
        dofs.last_movement = movement;
        if (movement < 1e-6) break;
    }

    assign_all();
    dofs.owner.assign(field.grid.voxel_count(), -1);
    for (std::size_t v = 0; v < voxels.size(); ++v) dofs.owner[voxels[v]] = assign[v];
    return dofs;
}

ShapeStencil shepard_stencil(std::span<const Vec3> nodes, const std::vector<std::pair<double, int>>& nearest,
                             const Vec3& x) {
    const std::size_t k = nearest.size();
    ShapeStencil s;
    s.node.resize(k);
    s.weight.assign(k, 0.0);
    s.grad.assign(k, Vec3::Zero());
    for (std::size_t a = 0; a < k; ++a) s.node[a] = nearest[a].second;

    for (std::size_t a = 0; a < k; ++a) {
        if (nearest[a].first == 0.0) {
            s.weight[a] = 1.0;
            return s;
        }
    }

    std::vector<double> phi(k);
    std::vector<Vec3> dphi(k);
    double total = 0.0;
    Vec3 total_grad = Vec3::Zero();
    for (std::size_t a = 0; a < k; ++a) {
        const Vec3 r = x - nodes[static_cast<std::size_t>(nearest[a].second)];
        const double d2 = r.squaredNorm();
        phi[a] = 1.0 / d2;
        dphi[a] = (-2.0 / (d2 * d2)) * r;
        total += phi[a];
        total_grad += dphi[a];
    }
    for (std::size_t a = 0; a < k; ++a) {
        s.weight[a] = phi[a] / total;
        s.grad[a] = (dphi[a] - s.weight[a] * total_grad) / total;
    }
    return s;
}

std::string to_string(ShapeKind kind) { return kind == ShapeKind::shepard ? "shepard" : "mls"; }

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "shepard") return ShapeKind::shepard;
    if (s == "mls") return ShapeKind::mls;
    throw InputError("unknown shape function kind '" + s + "' (expected shepard or mls)");
}

ShapeStencil mls_stencil(std::span<const Vec3> nodes, const std::vector<std::pair<double, int>>& candidates, int k,
                         const Vec3& x) {
    using Vec4 = Eigen::Vector4d;
    using Mat4 = Eigen::Matrix4d;
    if (k < 4) throw InputError("moving least squares needs a support of at least 4 nodes");
    const auto ku = static_cast<std::size_t>(k);
    if (candidates.size() < ku) throw InputError("mls_stencil: fewer candidates than k");

    const Vec3 rk = x - nodes[static_cast<std::size_t>(candidates[ku - 1].second)];
    const double dk = rk.norm();
    if (!(dk > 0.0)) throw InputError("mls_stencil: coincident support nodes");
    const double R = kMlsSupportScale * dk;
    const Vec3 gradR = (kMlsSupportScale / dk) * rk;

    ShapeStencil s;
    std::vector<double> w;
    std::vector<Vec3> dw;
    std::vector<Vec4> p;
    Mat4 A = Mat4::Zero();
    std::array<Mat4, 3> dA{Mat4::Zero(), Mat4::Zero(), Mat4::Zero()};
    for (const auto& [d2, id] : candidates) {
        const Vec3 r = x - nodes[static_cast<std::size_t>(id)];
        const double d = r.norm();
        const double q = d / R;
        if (q >= 1.0) continue;
        const double q2 = q * q;
        const double wa = 1.0 - 6.0 * q2 + 8.0 * q2 * q - 3.0 * q2 * q2;
        const double dwdq = -12.0 * q + 24.0 * q2 - 12.0 * q2 * q;
        Vec3 dq = -(d / (R * R)) * gradR;
        if (d > 0.0) dq += r / (d * R);
        const Vec4 pa(1.0, -r.x() / R, -r.y() / R, -r.z() / R);
        const Mat4 pp = pa * pa.transpose();
        A += wa * pp;
        for (int j = 0; j < 3; ++j) dA[j] += dwdq * dq[j] * pp;
        s.node.push_back(id);
        w.push_back(wa);
        dw.push_back(dwdq * dq);
        p.push_back(pa);
    }

    const Eigen::LDLT<Mat4> ldlt(A);
    const Vec4 D = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(D.minCoeff() > 1e-12 * D.cwiseAbs().maxCoeff()))
        throw InputError("moving least squares moment matrix is singular; support nodes are coplanar (raise support k)");

    // The basis is centred at x and scaled by R, both held fixed when differentiating; this is exact because MLS
    // shape functions do not depend on the choice of affine basis.
    const Vec4 gamma = ldlt.solve(Vec4::UnitX());
    std::array<Vec4, 3> dgamma;
    for (int j = 0; j < 3; ++j) dgamma[j] = ldlt.solve(Vec4::Unit(j + 1) / R - dA[j] * gamma);

    s.weight.resize(w.size());
    s.grad.resize(w.size());
    for (std::size_t a = 0; a < w.size(); ++a) {
        const double gp = gamma.dot(p[a]);
        s.weight[a] = w[a] * gp;
        for (int j = 0; j < 3; ++j) s.grad[a][j] = dw[a][j] * gp + w[a] * dgamma[j].dot(p[a]);
    }
    return s;
}

ShapeStencil evaluate_stencil(ShapeKind kind, const PointGrid& index, std::span<const Vec3> nodes, int k,
                              const Vec3& x) {
    auto nearest = index.k_nearest(x, k);
    if (kind == ShapeKind::shepard) return shepard_stencil(nodes, nearest, x);
    if (nearest.size() < static_cast<std::size_t>(k)) throw InputError("support size exceeds node count");
    const double radius = kMlsSupportScale * std::sqrt(nearest.back().first);
    return mls_stencil(nodes, index.within(x, radius), k, x);
}

ShapeMap shape_weights(const DofSet& dofs, const MaterialField& field, int k, ShapeKind kind) {
    const int n = static_cast<int>(dofs.nodes.size());
    if (k < 1 || k > n) throw InputError("support size " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    if (kind == ShapeKind::mls && k < 4) throw InputError("moving least squares needs a support of at least 4 nodes");
    ShapeMap map;
    map.k = k;
    map.kind = kind;
    map.voxels = field.masked_voxels();
    map.offset.reserve(map.voxels.size() + 1);
    map.offset.push_back(0);

    const PointGrid index(dofs.nodes);
    for (const std::size_t vox : map.voxels) {
        const auto st = evaluate_stencil(kind, index, dofs.nodes, k, field.grid.center(vox));
        map.node.insert(map.node.end(), st.node.begin(), st.node.end());
        map.weight.insert(map.weight.end(), st.weight.begin(), st.weight.end());
        map.grad.insert(map.grad.end(), st.grad.begin(), st.grad.end());
        map.offset.push_back(map.node.size());
    }
    return map;
}

Eigen::Matrix<double, 6, 6> elasticity_matrix(double young, double nu) {
    const double lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    const double mu = young / (2.0 * (1.0 + nu));
    Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) D(a, b) = lambda;
        D(a, a) = lambda + 2.0 * mu;
        D(a + 3, a + 3) = mu;
    }
    return D;
}

namespace {

/// Upper-triangular 3x3 block accumulator; rows are short sorted lists of (column node, block).
class BlockAccumulator {
public:
    explicit BlockAccumulator(int nodes) : rows_(static_cast<std::size_t>(nodes)) {}

    Eigen::Matrix3d& block(int i, int j) {
        auto& row = rows_[static_cast<std::size_t>(i)];
        auto it = std::lower_bound(row.begin(), row.end(), j, [](const auto& e, int c) { return e.first < c; });
        if (it == row.end() || it->first != j) it = row.insert(it, {j, Eigen::Matrix3d::Zero()});
        return it->second;
    }

    SparseMatrix to_symmetric_sparse() const {
        const int n = static_cast<int>(rows_.size());
        std::vector<Eigen::Triplet<double>> trip;
        std::size_t blocks = 0;
        for (const auto& row : rows_) blocks += row.size();
        trip.reserve(blocks * 18);
        for (int i = 0; i < n; ++i) {
            for (const auto& [j, b] : rows_[static_cast<std::size_t>(i)]) {
                for (int p = 0; p < 3; ++p) {
                    for (int q = 0; q < 3; ++q) {
                        if (i == j) {
                            // Diagonal blocks are symmetrized so K == K^T holds bitwise.
                            if (q < p) continue;
                            const double v = p == q ? b(p, q) : 0.5 * (b(p, q) + b(q, p));
                            trip.emplace_back(3 * i + p, 3 * i + q, v);
                            if (p != q) trip.emplace_back(3 * i + q, 3 * i + p, v);
                        } else {
                            trip.emplace_back(3 * i + p, 3 * j + q, b(p, q));
                            trip.emplace_back(3 * j + q, 3 * i + p, b(p, q));
                        }
                    }
                }
            }
        }
        SparseMatrix m(3 * n, 3 * n);
        m.setFromTriplets(trip.begin(), trip.end());
        m.makeCompressed();
        return m;
    }

private:
    std::vector<std::vector<std::pair<int, Eigen::Matrix3d>>> rows_;
};

}  // namespace

SparseMatrix assemble_stiffness(const ShapeMap& shape, const MaterialField& field, int node_count) {
    const double vol = field.grid.voxel_volume();
    const double nu = field.nu;
    BlockAccumulator acc(node_count);
    for (std::size_t v = 0; v < shape.voxel_count(); ++v) {
        const double young = field.young_kpa[shape.voxels[v]];
        if (!(young > 0.0)) throw InputError("voxel " + std::to_string(shape.voxels[v]) + " has non-positive modulus");
        const double lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)) * vol;
        const double mu = young / (2.0 * (1.0 + nu)) * vol;
        for (std::size_t a = shape.begin(v); a < shape.end(v); ++a) {
            const Vec3& ga = shape.grad[a];
            const int na = shape.node[a];
            for (std::size_t b = shape.begin(v); b < shape.end(v); ++b) {
                const int nb = shape.node[b];
                if (nb < na) continue;
                const Vec3& gb = shape.grad[b];
                // B_a^T D B_b for isotropic D.
                Eigen::Matrix3d blk = lambda * ga * gb.transpose() + mu * gb * ga.transpose();
                blk.diagonal().array() += mu * ga.dot(gb);
                acc.block(na, nb) += blk;
            }
        }
    }
    return acc.to_symmetric_sparse();
}

Vector assemble_mass(const ShapeMap& shape, const MaterialField& field, int node_count) {
    const double cell_mass = field.density_kg_mm3() * field.grid.voxel_volume();
    Vector lumped = Vector::Zero(node_count);
    for (std::size_t a = 0; a < shape.node.size(); ++a) lumped[shape.node[a]] += shape.weight[a] * cell_mass;
    Vector mass(3 * node_count);
    for (int i = 0; i < node_count; ++i) mass.segment<3>(3 * i).setConstant(lumped[i]);
    return mass;
}

Vector assemble_owner_mass(const DofSet& dofs, const MaterialField& field) {
    if (dofs.owner.size() != field.grid.voxel_count()) throw InputError("ownership map does not match the grid");
    const double cell_mass = field.density_kg_mm3() * field.grid.voxel_volume();
    const auto n = static_cast<Eigen::Index>(dofs.nodes.size());
    Vector lumped = Vector::Zero(n);
    for (const std::size_t v : field.masked_voxels()) {
        const int o = dofs.owner[v];
        if (o < 0 || o >= n) throw InputError("masked voxel without an owning node");
        lumped[o] += cell_mass;
    }
    Vector mass(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) mass.segment<3>(3 * i).setConstant(lumped[i]);
    return mass;
}

SparseMatrix assemble_damping(const Vector& mass, const SparseMatrix& K, double alpha, double beta) {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InputError("Rayleigh coefficients must be non-negative");
    if (mass.size() != K.rows()) throw InputError("mass and stiffness sizes differ");
    SparseMatrix diag(K.rows(), K.cols());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(mass.size()));
    for (Eigen::Index i = 0; i < mass.size(); ++i) trip.emplace_back(static_cast<int>(i), static_cast<int>(i), mass[i]);
    diag.setFromTriplets(trip.begin(), trip.end());
    SparseMatrix C = alpha * diag + beta * K;
    C.makeCompressed();
    return C;
}

namespace {

void assemble_all(MeshFreeModel& m) {
    const int n = m.node_count();
    m.matrices.K = assemble_stiffness(m.shape, m.field, n);
    m.matrices.mass = m.shape.kind == ShapeKind::mls ? assemble_owner_mass(m.dofs, m.field)
                                                     : assemble_mass(m.shape, m.field, n);
    m.matrices.C = assemble_damping(m.matrices.mass, m.matrices.K, m.params.alpha, m.params.beta);
    m.rest_q = Vector::Zero(3 * n);
}

}  // namespace

MeshFreeModel build_model(const MaterialField& field, const ModelParams& params) {
    field.validate();
    if (params.n_nodes < 4) throw InputError("a model needs at least 4 nodes");
    if (params.support_k < 2) throw InputError("support size must be at least 2");
    if (params.shape == ShapeKind::mls && params.support_k < 4)
        throw InputError("moving least squares needs a support of at least 4 nodes");
    if (!(params.alpha >= 0.0) || !(params.beta >= 0.0)) throw InputError("Rayleigh coefficients must be non-negative");
    MeshFreeModel m;
    m.field = field;
    m.params = params;
    m.dofs = sample_dofs(field, params.n_nodes, params.seed, params.max_lloyd_iters);
    m.shape = shape_weights(m.dofs, field, params.support_k, params.shape);
    assemble_all(m);
    return m;
}

MeshFreeModel rebuild_with_material(const MeshFreeModel& model, const MaterialField& field) {
    field.validate();
    if (!(field.grid == model.field.grid) || !(field.mask == model.field.mask))
        throw InputError("replacement material must share the model's grid and mask");
    MeshFreeModel m = model;
    m.field = field;
    assemble_all(m);
    return m;
}

MeshFreeModel scale_stiffness(const MeshFreeModel& model, double factor) {
    if (!(factor > 0.0)) throw InputError("stiffness scale factor must be positive");
    MaterialField f = model.field;
    for (auto& e : f.young_kpa) e *= factor;
    return rebuild_with_material(model, f);
}

ModelDiagnostics diagnose(const MeshFreeModel& model, std::uint64_t seed, int random_vectors) {
    ModelDiagnostics d;
    const auto& s = model.shape;
    d.min_weight = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < s.voxel_count(); ++v) {
        double wsum = 0.0;
        Vec3 gsum = Vec3::Zero();
        for (std::size_t a = s.begin(v); a < s.end(v); ++a) {
            wsum += s.weight[a];
            gsum += s.grad[a];
            d.min_weight = std::min(d.min_weight, s.weight[a]);
        }
        d.max_partition_error = std::max(d.max_partition_error, std::abs(wsum - 1.0));
        d.max_gradient_sum = std::max(d.max_gradient_sum, gsum.norm());
    }

    const SparseMatrix& K = model.matrices.K;
    const Eigen::Index n = K.rows();
    double kmax = 0.0;
    for (int r = 0; r < K.outerSize(); ++r) {
        for (SparseMatrix::InnerIterator it(K, r); it; ++it) kmax = std::max(kmax, std::abs(it.value()));
    }
    const SparseMatrix Kt = SparseMatrix(K.transpose());
    const SparseMatrix asym = K - Kt;
    double amax = 0.0;
    for (int r = 0; r < asym.outerSize(); ++r) {
        for (SparseMatrix::InnerIterator it(asym, r); it; ++it) amax = std::max(amax, std::abs(it.value()));
    }
    d.symmetry_error = kmax > 0.0 ? amax / kmax : 0.0;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto random_vector = [&] {
        Vector x(n);
        for (Eigen::Index i = 0; i < n; ++i) x[i] = gauss(rng);
        return x;
    };

    // Power iteration lower-bounds the spectral norm, which keeps the relative checks conservative.
    double knorm = 0.0;
    {
        Vector x = random_vector();
        for (int it = 0; it < 60; ++it) {
            x.normalize();
            Vector y = K * x;
            knorm = y.norm();
            if (knorm == 0.0) break;
            x = y;
        }
    }

    d.min_rayleigh_ratio = std::numeric_limits<double>::infinity();
    for (int r = 0; r < random_vectors; ++r) {
        const Vector x = random_vector();
        const double ratio = knorm > 0.0 ? x.dot(K * x) / (x.squaredNorm() * knorm) : 0.0;
        d.min_rayleigh_ratio = std::min(d.min_rayleigh_ratio, ratio);
    }

    for (int axis = 0; axis < 3; ++axis) {
        Vector t = Vector::Zero(n);
        for (Eigen::Index i = axis; i < n; i += 3) t[i] = 1.0;
        const double res = knorm > 0.0 ? (K * t).norm() / (knorm * t.norm()) : 0.0;
        d.translation_residual = std::max(d.translation_residual, res);
    }

    const double expected = model.field.density_kg_mm3() * model.field.grid.voxel_volume() *
                            static_cast<double>(model.shape.voxel_count());
    double total = 0.0;
    d.min_mass = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < model.matrices.mass.size(); i += 3) {
        total += model.matrices.mass[i];
        d.min_mass = std::min(d.min_mass, model.matrices.mass[i]);
    }
    d.mass_error = std::abs(total - expected) / expected;
    return d;
}

}  // namespace mresim
