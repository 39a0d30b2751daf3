#include <doctest.h>

#include <map>
#include <random>

#include <Eigen/Dense>

#include "mresim/beam.hpp"
#include "mresim/errors.hpp"
#include "mresim/meshfree_model.hpp"
#include "test_util.hpp"

using namespace mresim;

namespace {

MaterialField block_field(std::array<int, 3> dims, double young = 3.0, double spacing = 1.0) {
    Grid g;
    g.dims = dims;
    g.spacing = {spacing, spacing, spacing};
    return constant_material(g, full_mask(g), young, 0.3, 1000.0);
}

MaterialField random_field(std::mt19937_64& rng, std::array<int, 3> dims) {
    Grid g;
    g.dims = dims;
    g.spacing = {1.64, 1.64, 2.5};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RoiMask m{dims, std::vector<std::uint8_t>(g.voxel_count(), 0)};
    for (auto& f : m.flags) f = u(rng) < 0.8;
    m.flags[0] = 1;
    auto f = constant_material(g, m, 1.0, 0.45, 1060.0);
    for (std::size_t i = 0; i < f.young_kpa.size(); ++i)
        if (m.flags[i]) f.young_kpa[i] = 0.5 + 5.0 * u(rng);
    return f;
}

std::map<int, std::pair<double, Vec3>> stencil_map(const ShapeStencil& s) {
    std::map<int, std::pair<double, Vec3>> m;
    for (std::size_t a = 0; a < s.node.size(); ++a) m[s.node[a]] = {s.weight[a], s.grad[a]};
    return m;
}

double weight_at(ShapeKind kind, const PointGrid& index, const std::vector<Vec3>& nodes, int k, const Vec3& x,
                 int node) {
    const auto m = stencil_map(evaluate_stencil(kind, index, nodes, k, x));
    const auto it = m.find(node);
    return it == m.end() ? 0.0 : it->second.first;
}

}  // namespace

TEST_CASE("sample_dofs: one node sits at the mask centroid") {
    auto f = block_field({5, 3, 4});
    const auto d = sample_dofs(f, 1, 3, 50);
    CHECK((d.nodes[0] - Vec3(2.5, 1.5, 2.0)).norm() < 1e-12);
}

TEST_CASE("sample_dofs: 2x2x2 block with 8 nodes puts one node on each voxel center") {
    auto f = block_field({2, 2, 2});
    const auto d = sample_dofs(f, 8, 1, 50);
    std::vector<int> hits(8, 0);
    for (std::size_t v = 0; v < 8; ++v) {
        const Vec3 c = f.grid.center(v);
        for (std::size_t n = 0; n < 8; ++n)
            if ((d.nodes[n] - c).norm() < 1e-12) ++hits[v];
        // Exhaustive assignment check: the owner is the nearest node.
        const int o = d.owner[v];
        for (std::size_t n = 0; n < 8; ++n) CHECK((d.nodes[o] - c).norm() <= (d.nodes[n] - c).norm());
    }
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("sample_dofs: range errors and Lloyd fixed point") {
    auto f = block_field({3, 3, 3});
    CHECK_THROWS_AS(sample_dofs(f, 28, 1, 10), InputError);
    CHECK_THROWS_AS(sample_dofs(f, 0, 1, 10), InputError);

    auto g = block_field({12, 9, 5});
    const auto d = sample_dofs(g, 20, 4, 200);
    REQUIRE(d.last_movement < 1e-6);
    std::vector<Vec3> sum(20, Vec3::Zero());
    std::vector<int> count(20, 0);
    for (std::size_t v = 0; v < g.grid.voxel_count(); ++v) {
        const int o = d.owner[v];
        REQUIRE(o >= 0);
        sum[o] += g.grid.center(v);
        ++count[o];
    }
    for (int n = 0; n < 20; ++n) {
        REQUIRE(count[n] > 0);
        CHECK((sum[n] / count[n] - d.nodes[n]).norm() < 1e-6);
    }
}

TEST_CASE("sample_dofs is deterministic per seed") {
    auto f = block_field({8, 8, 4});
    const auto a = sample_dofs(f, 16, 42, 30);
    const auto b = sample_dofs(f, 16, 42, 30);
    const auto c = sample_dofs(f, 16, 43, 30);
    CHECK(a.nodes == b.nodes);
    CHECK(a.owner == b.owner);
    CHECK(a.nodes != c.nodes);
}

TEST_CASE("Shepard: coincident node takes the full weight") {
    std::vector<Vec3> nodes{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}};
    const PointGrid index(nodes);
    const auto s = evaluate_stencil(ShapeKind::shepard, index, nodes, 4, Vec3(1, 0, 0));
    const auto m = stencil_map(s);
    CHECK(m.at(1).first == 1.0);
    for (int i : {0, 2, 3}) CHECK(m.at(i).first == 0.0);
    for (const auto& g : s.grad) CHECK(g.norm() == 0.0);
}

TEST_CASE("Shepard: equidistant pair with k=2 weighs 0.5 each") {
    std::vector<Vec3> nodes{{0, 0, 0}, {2, 0, 0}, {9, 9, 9}};
    const PointGrid index(nodes);
    const auto s = evaluate_stencil(ShapeKind::shepard, index, nodes, 2, Vec3(1, 0.5, 0));
    REQUIRE(s.node.size() == 2);
    CHECK(s.weight[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.weight[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("analytic gradients match central differences for Shepard and MLS") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<Vec3> nodes;
    for (int i = 0; i < 60; ++i) nodes.emplace_back(u(rng), u(rng), u(rng));
    const PointGrid index(nodes);
    const double h = 1e-4;
    for (ShapeKind kind : {ShapeKind::shepard, ShapeKind::mls}) {
        for (int t = 0; t < 40; ++t) {
            const Vec3 x(1 + 0.8 * u(rng), 1 + 0.8 * u(rng), 1 + 0.8 * u(rng));
            const auto s = evaluate_stencil(kind, index, nodes, 8, x);
            for (std::size_t a = 0; a < s.node.size(); ++a) {
                Vec3 fd;
                for (int j = 0; j < 3; ++j) {
                    Vec3 e = Vec3::Zero();
                    e[j] = h;
                    fd[j] = (weight_at(kind, index, nodes, 8, x + e, s.node[a]) -
                             weight_at(kind, index, nodes, 8, x - e, s.node[a])) /
                            (2 * h);
                }
                CHECK((fd - s.grad[a]).norm() <= 1e-5 * std::max(s.grad[a].norm(), 1e-2));
            }
        }
    }
}

TEST_CASE("MLS reproduces linear fields and their gradients") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<Vec3> nodes;
    for (int i = 0; i < 80; ++i) nodes.emplace_back(u(rng), u(rng), u(rng));
    const PointGrid index(nodes);
    for (int t = 0; t < 50; ++t) {
        const Vec3 x(u(rng), u(rng), u(rng));
        const auto s = evaluate_stencil(ShapeKind::mls, index, nodes, 8, x);
        Vec3 rep = Vec3::Zero();
        Eigen::Matrix3d grad = Eigen::Matrix3d::Zero();
        for (std::size_t a = 0; a < s.node.size(); ++a) {
            rep += s.weight[a] * nodes[s.node[a]];
            grad += nodes[s.node[a]] * s.grad[a].transpose();
        }
        CHECK((rep - x).norm() < 1e-10);
        CHECK((grad - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    }
}

TEST_CASE("MLS rejects coplanar supports and tiny k") {
    std::vector<Vec3> flat;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) flat.emplace_back(i, j, 0.0);
    const PointGrid index(flat);
    CHECK_THROWS_AS(evaluate_stencil(ShapeKind::mls, index, flat, 8, Vec3(2, 2, 0)), InputError);
    CHECK_THROWS_AS(evaluate_stencil(ShapeKind::mls, index, flat, 3, Vec3(2, 2, 0)), InputError);
}

TEST_CASE("shape_weights: partition of unity, zero-sum gradients, Shepard non-negativity") {
    std::mt19937_64 rng(2);
    for (ShapeKind kind : {ShapeKind::shepard, ShapeKind::mls}) {
        auto f = random_field(rng, {9, 8, 5});
        const auto d = sample_dofs(f, 30, 5, 50);
        const auto s = shape_weights(d, f, 8, kind);
        CHECK(s.voxel_count() == f.mask.count());
        for (std::size_t v = 0; v < s.voxel_count(); ++v) {
            double w = 0.0;
            Vec3 g = Vec3::Zero();
            for (std::size_t a = s.begin(v); a < s.end(v); ++a) {
                w += s.weight[a];
                g += s.grad[a];
                if (kind == ShapeKind::shepard) CHECK(s.weight[a] >= 0.0);
            }
            CHECK(std::abs(w - 1.0) <= 1e-9);
            CHECK(g.norm() <= 1e-7);
        }
        CHECK_THROWS_AS(shape_weights(d, f, 31, kind), InputError);
    }
}

TEST_CASE("assemble_stiffness: single voxel with 4 nodes matches explicit B^T D B V") {
    Grid g;
    g.dims = {1, 1, 1};
    g.spacing = {2.0, 3.0, 1.5};
    const auto f = constant_material(g, full_mask(g), 4.0, 0.3, 1000.0);
    DofSet d;
    d.nodes = {{0.1, 0.2, 0.1}, {1.9, 0.4, 0.3}, {0.5, 2.8, 0.2}, {0.7, 1.1, 1.4}};
    d.owner = {0};
    for (ShapeKind kind : {ShapeKind::shepard, ShapeKind::mls}) {
        const auto s = shape_weights(d, f, 4, kind);
        REQUIRE(s.end(0) - s.begin(0) == 4);
        const auto K = assemble_stiffness(s, f, 4);

        Eigen::Matrix<double, 6, 12> B = Eigen::Matrix<double, 6, 12>::Zero();
        for (std::size_t a = 0; a < 4; ++a) {
            const int n = s.node[a];
            const Vec3 gr = s.grad[a];
            B(0, 3 * n) = gr.x();
            B(1, 3 * n + 1) = gr.y();
            B(2, 3 * n + 2) = gr.z();
            B(3, 3 * n) = gr.y();
            B(3, 3 * n + 1) = gr.x();
            B(4, 3 * n + 1) = gr.z();
            B(4, 3 * n + 2) = gr.y();
            B(5, 3 * n) = gr.z();
            B(5, 3 * n + 2) = gr.x();
        }
        const double E = 4.0, nu = 0.3;
        const double lam = E * nu / ((1 + nu) * (1 - 2 * nu)), mu = E / (2 * (1 + nu));
        Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) D(i, j) = lam;
            D(i, i) = lam + 2 * mu;
            D(i + 3, i + 3) = mu;
        }
        const Eigen::MatrixXd oracle = B.transpose() * D * B * g.voxel_volume();
        const Eigen::MatrixXd got = Eigen::MatrixXd(K);
        CHECK((got - oracle).norm() <= 1e-12 * oracle.norm());
        CHECK((elasticity_matrix(E, nu) - D).norm() < 1e-14);
    }
}

TEST_CASE("assemble_stiffness: doubling E doubles K exactly; non-positive E is rejected") {
    auto f = block_field({6, 5, 4});
    const auto d = sample_dofs(f, 12, 1, 30);
    const auto s = shape_weights(d, f, 8);
    const SparseMatrix K1 = assemble_stiffness(s, f, 12);
    for (auto& e : f.young_kpa) e *= 2.0;
    const SparseMatrix K2 = assemble_stiffness(s, f, 12);
    CHECK((Eigen::MatrixXd(K2) - 2.0 * Eigen::MatrixXd(K1)).cwiseAbs().maxCoeff() == 0.0);
    f.young_kpa[s.voxels[3]] = 0.0;
    CHECK_THROWS_AS(assemble_stiffness(s, f, 12), InputError);
}

TEST_CASE("assemble_mass: total conserved, doubles with density, matches accumulation loop") {
    std::mt19937_64 rng(6);
    auto f = random_field(rng, {6, 6, 6});
    const auto d = sample_dofs(f, 8, 3, 40);
    const auto s = shape_weights(d, f, 8, ShapeKind::shepard);
    const Vector M = assemble_mass(s, f, 8);
    const double cell = f.density_kg_mm3() * f.grid.voxel_volume();

    std::vector<double> oracle(8, 0.0);
    for (std::size_t a = 0; a < s.node.size(); ++a) oracle[s.node[a]] += s.weight[a] * cell;
    double total = 0.0;
    for (int i = 0; i < 8; ++i) {
        for (int c = 0; c < 3; ++c) CHECK(testutil::rel_err(M[3 * i + c], oracle[i]) <= 1e-12);
        total += M[3 * i];
    }
    CHECK(testutil::rel_err(total, cell * f.mask.count()) <= 1e-12);

    f.density *= 2.0;
    const Vector M2 = assemble_mass(s, f, 8);
    CHECK((M2 - 2.0 * M).cwiseAbs().maxCoeff() <= 1e-15 * M.maxCoeff());

    const Vector Mo = assemble_owner_mass(d, f);
    std::vector<double> owned(8, 0.0);
    for (std::size_t v = 0; v < f.grid.voxel_count(); ++v)
        if (f.mask.flags[v]) owned[d.owner[v]] += 2.0 * cell;
    for (int i = 0; i < 8; ++i) CHECK(testutil::rel_err(Mo[3 * i], owned[i]) <= 1e-12);
}

TEST_CASE("assemble_damping") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    Eigen::MatrixXd R(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) R(i, j) = u(rng);
    const Eigen::MatrixXd Kd = R * R.transpose();
    const SparseMatrix K = Kd.sparseView();
    Vector M(6);
    for (int i = 0; i < 6; ++i) M[i] = u(rng);

    CHECK(Eigen::MatrixXd(assemble_damping(M, K, 0.0, 0.0)).norm() == 0.0);
    CHECK((Eigen::MatrixXd(assemble_damping(M, K, 1.0, 0.0)) - Eigen::MatrixXd(M.asDiagonal())).norm() == 0.0);
    const Eigen::MatrixXd C = Eigen::MatrixXd(assemble_damping(M, K, 0.1, 0.01));
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            const double expect = (i == j ? 0.1 * M[i] : 0.0) + 0.01 * Kd(i, j);
            CHECK(std::abs(C(i, j) - expect) <= 1e-12 * std::abs(expect));
        }
    CHECK_THROWS_AS(assemble_damping(M, K, -0.1, 0.0), InputError);
}

TEST_CASE("build_model: homogeneous cube passes the invariant suite for both shape kinds") {
    for (ShapeKind kind : {ShapeKind::shepard, ShapeKind::mls}) {
        ModelParams p;
        p.n_nodes = 40;
        p.shape = kind;
        const auto m = build_model(block_field({8, 8, 8}, 2.1, 1.64), p);
        const auto d = diagnose(m, 7);
        CHECK(d.max_partition_error <= 1e-9);
        CHECK(d.max_gradient_sum <= 1e-7);
        CHECK(d.symmetry_error <= 1e-9);
        CHECK(d.min_rayleigh_ratio >= -1e-9);
        CHECK(d.translation_residual <= 1e-7);
        CHECK(d.mass_error <= 1e-12);
        CHECK(d.min_mass > 0.0);
        CHECK(m.rest_q.size() == 120);
        CHECK(m.rest_q.norm() == 0.0);
        if (kind == ShapeKind::shepard) CHECK(d.min_weight >= 0.0);
    }
}

TEST_CASE("build_model: same seed gives a bit-identical model") {
    ModelParams p;
    p.n_nodes = 25;
    p.seed = 99;
    const auto f = block_field({7, 6, 5});
    const auto a = build_model(f, p);
    const auto b = build_model(f, p);
    CHECK(a.dofs.nodes == b.dofs.nodes);
    CHECK(a.shape.weight == b.shape.weight);
    CHECK(a.matrices.mass == b.matrices.mass);
    CHECK(Eigen::MatrixXd(a.matrices.K) == Eigen::MatrixXd(b.matrices.K));
}

TEST_CASE("build_model: beam phantom passes rigid-mode and PSD checks") {
    BeamSpec spec;
    spec.height = 2.5;
    MeshfreeBeamOptions opts;
    opts.n_nodes = 200;
    opts.voxel = 1.0;
    const auto ph = build_beam_phantom(spec, opts);
    const auto d = diagnose(ph.model, 3);
    CHECK(d.translation_residual <= 1e-7);
    CHECK(d.min_rayleigh_ratio >= -1e-9);
    CHECK(d.symmetry_error <= 1e-9);
}

TEST_CASE("build_model: parameter errors") {
    const auto f = block_field({4, 4, 4});
    ModelParams p;
    p.n_nodes = 3;
    CHECK_THROWS_AS(build_model(f, p), InputError);
    p.n_nodes = 10;
    p.support_k = 3;
    CHECK_THROWS_AS(build_model(f, p), InputError);
    p.support_k = 8;
    p.alpha = -1.0;
    CHECK_THROWS_AS(build_model(f, p), InputError);
    auto bad = f;
    bad.nu = 0.5;
    CHECK_THROWS_AS(build_model(bad, ModelParams{}), InputError);
}

TEST_CASE("scale_stiffness scales K exactly and keeps the layout") {
    ModelParams p;
    p.n_nodes = 20;
    const auto m = build_model(block_field({6, 6, 4}), p);
    const auto m4 = scale_stiffness(m, 4.0);
    CHECK(m4.dofs.nodes == m.dofs.nodes);
    CHECK((Eigen::MatrixXd(m4.matrices.K) - 4.0 * Eigen::MatrixXd(m.matrices.K)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(m4.matrices.mass == m.matrices.mass);
}
