#include "mresim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "mresim/csv.hpp"
#include "mresim/errors.hpp"
#include "mresim/spatial_index.hpp"

namespace mresim {

void RetractorSpec::validate() const {
    if (!(diameter > 0.0)) throw InputError("retractor diameter must be positive");
    if (std::abs(hoist_direction.norm() - 1.0) > 1e-9) throw InputError("hoist direction must be a unit vector");
    if (std::abs(hoist_direction.z()) > 1e-9) throw InputError("hoist direction must lie in the transverse plane");
    if (!center.allFinite()) throw InputError("retractor center must be finite");
}

std::vector<int> application_region(const MeshFreeModel& model, const RetractorSpec& retractor) {
    retractor.validate();
    const int n = model.node_count();
    if (!retractor.nodes.empty()) {
        std::vector<int> region = retractor.nodes;
        std::sort(region.begin(), region.end());
        region.erase(std::unique(region.begin(), region.end()), region.end());
        if (region.front() < 0 || region.back() >= n) throw InputError("retractor node index out of range");
        return region;
    }
    if (n == 0) throw InputError("empty application region: model has no nodes");
    const PointGrid index(model.dofs.nodes);
    std::vector<int> region;
    for (const auto& [d2, id] : index.within(retractor.center, retractor.diameter / 2.0)) region.push_back(id);
    if (region.empty()) region.push_back(index.nearest(retractor.center));
    std::sort(region.begin(), region.end());
    return region;
}

double liver_mass(const MaterialField& field) {
    return field.density_kg_mm3() * field.grid.voxel_volume() * static_cast<double>(field.mask.count());
}

std::vector<int> surface_nodes(const MeshFreeModel& model) {
    const auto& f = model.field;
    const auto& g = f.grid;
    auto masked = [&](int i, int j, int k) {
        if (i < 0 || j < 0 || k < 0 || i >= g.dims[0] || j >= g.dims[1] || k >= g.dims[2]) return false;
        return f.mask.flags[g.index(i, j, k)] != 0;
    };
    std::vector<std::uint8_t> on_surface(static_cast<std::size_t>(model.node_count()), 0);
    for (const std::size_t v : f.masked_voxels()) {
        const auto c = g.ijk(v);
        const bool boundary = !masked(c[0] - 1, c[1], c[2]) || !masked(c[0] + 1, c[1], c[2]) ||
                              !masked(c[0], c[1] - 1, c[2]) || !masked(c[0], c[1] + 1, c[2]) ||
                              !masked(c[0], c[1], c[2] - 1) || !masked(c[0], c[1], c[2] + 1);
        if (boundary) on_surface[static_cast<std::size_t>(model.dofs.owner[v])] = 1;
    }
    std::vector<int> out;
    for (int i = 0; i < model.node_count(); ++i) {
        if (on_surface[static_cast<std::size_t>(i)]) out.push_back(i);
    }
    return out;
}

RetractionSetup retraction_setup(const MeshFreeModel& model, const RetractorSpec& retractor,
                                 const RetractionConfig& config) {
    if (!(config.abdomen_k >= 0.0)) throw InputError("abdomen stiffness must be non-negative");
    if (!(config.liver_mass >= 0.0)) throw InputError("liver mass must be non-negative");
    if (!(config.inferior_fraction > 0.0 && config.inferior_fraction <= 1.0))
        throw InputError("inferior fraction must lie in (0, 1]");

    RetractionSetup s;
    s.region = application_region(model, retractor);
    const double mass = config.liver_mass > 0.0 ? config.liver_mass : liver_mass(model.field);
    s.hoist_total = mass * kGravity;
    s.loads.gravity = Vec3(0.0, 0.0, -kGravity);
    const double share = s.hoist_total / static_cast<double>(s.region.size());
    for (int node : s.region) s.loads.point_loads.push_back({node, share * retractor.hoist_direction});

    double zmin = std::numeric_limits<double>::infinity();
    double zmax = -zmin;
    for (const auto& p : model.dofs.nodes) {
        zmin = std::min(zmin, p.z());
        zmax = std::max(zmax, p.z());
    }
    const double cut = zmin + config.inferior_fraction * (zmax - zmin);
    for (int node : surface_nodes(model)) {
        const Vec3& p = model.dofs.nodes[static_cast<std::size_t>(node)];
        if (p.z() <= cut) s.supports.push_back(node);
    }
    for (int node : s.supports) s.loads.springs.push_back({node, config.abdomen_k, model.dofs.nodes[node]});
    return s;
}

RetractionRun simulate_retraction(const MeshFreeModel& model, const RetractorSpec& retractor,
                                  const RetractionConfig& config) {
    RetractionRun run;
    run.setup = retraction_setup(model, retractor, config);
    run.result = run_to_steady_state(DynamicsView(model), run.setup.loads, config.steady);
    return run;
}

ComparisonReport compare_placements(const MeshFreeModel& model_mre, const SimState& run_mre,
                                    const MeshFreeModel& model_atlas, const SimState& run_atlas,
                                    std::span<const Landmark> landmarks, std::span<const int> region,
                                    double threshold) {
    if (model_mre.node_count() != model_atlas.node_count() || model_mre.dofs.nodes != model_atlas.dofs.nodes)
        throw InputError("compared runs must share one DOF layout");
    if (run_mre.q.size() != model_mre.dof_count() || run_atlas.q.size() != model_atlas.dof_count())
        throw InputError("state dimensions do not match model");
    if (region.empty()) throw InputError("application region is empty");
    if (!(threshold >= 0.0)) throw InputError("significance threshold must be non-negative");

    ComparisonReport r;
    r.threshold = threshold;
    const int n = model_mre.node_count();
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += (run_mre.q.segment<3>(3 * i) - run_atlas.q.segment<3>(3 * i)).norm();
    r.mean_volume_diff = n > 0 ? total / n : 0.0;
    for (int node : region) {
        if (node < 0 || node >= n) throw InputError("application region node out of range");
        r.at_tool_diff = std::max(r.at_tool_diff, (run_mre.q.segment<3>(3 * node) - run_atlas.q.segment<3>(3 * node)).norm());
    }
    r.significant = r.at_tool_diff > threshold;

    const auto moved_mre = displace_landmarks(model_mre, run_mre, landmarks);
    const auto moved_atlas = displace_landmarks(model_atlas, run_atlas, landmarks);
    for (std::size_t i = 0; i < landmarks.size(); ++i)
        r.landmarks.push_back({landmarks[i].label, (moved_mre[i].position - moved_atlas[i].position).norm()});
    return r;
}

void SyntheticCohortSpec::validate() const {
    if (n < 0) throw InputError("cohort size must be non-negative");
    if (!(median_G > 0.0)) throw InputError("median shear modulus must be positive");
    if (!(log_sd >= 0.0)) throw InputError("log-sd must be non-negative");
    if (!(heterogeneity >= 0.0 && heterogeneity < 1.0)) throw InputError("heterogeneity must lie in [0, 1)");
    grid.validate();
}

RoiMask ellipsoid_mask(const Grid& grid) {
    grid.validate();
    RoiMask m;
    m.dims = grid.dims;
    m.flags.assign(grid.voxel_count(), 0);
    const Vec3 ext = grid.extent();
    const Vec3 c = ext / 2.0;
    const Vec3 semi = 0.45 * ext;
    for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
        const Vec3 d = (grid.center(v) - c).cwiseQuotient(semi);
        if (d.squaredNorm() <= 1.0) m.flags[v] = 1;
    }
    return m;
}

std::vector<SyntheticCase> synth_cohort(const SyntheticCohortSpec& spec) {
    spec.validate();
    std::vector<SyntheticCase> out;
    if (spec.n == 0) return out;
    const RoiMask mask = ellipsoid_mask(spec.grid);
    if (mask.count() == 0) throw InputError("synthetic grid too small for an ellipsoidal mask");
    const Vec3 ext = spec.grid.extent();

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (int c = 0; c < spec.n; ++c) {
        const double G = spec.median_G * std::exp(spec.log_sd * gauss(rng));
        const Vec3 ph(phase(rng), phase(rng), phase(rng));

        SyntheticCase sc;
        char id[32];
        std::snprintf(id, sizeof id, "case_%03d", c);
        sc.record.id = id;
        sc.record.mean_shear_G = G;
        sc.record.young_E = shear_to_young(G);
        sc.elastogram.grid = spec.grid;
        sc.elastogram.kind = VolumeKind::elastogram_shear_kPa;
        sc.elastogram.data.assign(spec.grid.voxel_count(), 0.0);
        double sum = 0.0;
        for (std::size_t v = 0; v < spec.grid.voxel_count(); ++v) {
            if (!mask.flags[v]) continue;
            const Vec3 x = spec.grid.center(v);
            double s = 0.0;
            for (int a = 0; a < 3; ++a) s += std::cos(2.0 * std::numbers::pi * x[a] / ext[a] + ph[a]);
            sc.elastogram.data[v] = G * (1.0 + spec.heterogeneity * s / 3.0);
            sum += sc.elastogram.data[v];
        }
        const double scale = G / (sum / static_cast<double>(mask.count()));
        for (auto& g : sc.elastogram.data) g *= scale;
        out.push_back(std::move(sc));
    }
    return out;
}

VoxelVolume inclusion_phantom(const Grid& grid, double atlas_young, double contrast, const Vec3& center,
                              double radius) {
    if (!(atlas_young > 0.0) || !(contrast > 0.0) || !(radius > 0.0))
        throw InputError("inclusion phantom parameters must be positive");
    const RoiMask mask = ellipsoid_mask(grid);
    const double G = atlas_young / (2.0 * (1.0 + kReportingPoisson));
    VoxelVolume vol;
    vol.grid = grid;
    vol.data.assign(grid.voxel_count(), 0.0);
    for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
        if (!mask.flags[v]) continue;
        vol.data[v] = (grid.center(v) - center).norm() <= radius ? contrast * G : G;
    }
    return vol;
}

Vec3 retractor_center(const MaterialField& field, const Vec3& fraction) {
    const auto voxels = field.masked_voxels();
    if (voxels.empty()) throw InputError("empty mask");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const std::size_t v : voxels) {
        lo = lo.cwiseMin(field.grid.center(v));
        hi = hi.cwiseMax(field.grid.center(v));
    }
    const Vec3 target = lo + fraction.cwiseProduct(hi - lo);
    Vec3 best = field.grid.center(voxels.front());
    double best_d = (best - target).squaredNorm();
    for (const std::size_t v : voxels) {
        const double d = (field.grid.center(v) - target).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = field.grid.center(v);
        }
    }
    return best;
}

ComparisonReport run_case(const VoxelVolume& elastogram, const CohortRunConfig& config) {
    const RoiMask mask = positive_mask(elastogram);
    if (mask.count() == 0) throw InputError("elastogram has no positive voxels");
    const auto mre_field = material_from_elastogram(elastogram, mask, config.sim_nu, config.density);
    const auto atlas_field = constant_material(elastogram.grid, mask, config.atlas_young, config.sim_nu, config.density);

    ModelParams params = config.model;
    params.n_nodes = std::min<int>(params.n_nodes, static_cast<int>(mask.count()));
    const MeshFreeModel mre = build_model(mre_field, params);
    const MeshFreeModel atlas = rebuild_with_material(mre, atlas_field);

    RetractorSpec retractor;
    retractor.diameter = config.retractor_diameter;
    retractor.center = retractor_center(mre_field, config.retractor_fraction);
    retractor.hoist_direction = config.hoist_direction;

    const auto run_mre = simulate_retraction(mre, retractor, config.retraction);
    const auto run_atlas = simulate_retraction(atlas, retractor, config.retraction);
    const std::vector<Landmark> landmarks{{"tool", retractor.center}};
    return compare_placements(mre, run_mre.result.state, atlas, run_atlas.result.state, landmarks,
                              run_mre.setup.region, config.significance);
}

CohortRunResult run_cohort_retractions(std::span<const SyntheticCase> cohort, const CohortRunConfig& config) {
    if (cohort.empty()) throw InputError("cohort is empty");
    std::vector<const SyntheticCase*> order;
    for (const auto& c : cohort) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->record.id < b->record.id; });

    CohortRunResult out;
    for (const auto* c : order) {
        try {
            out.cases.push_back({c->record.id, run_case(c->elastogram, config)});
        } catch (const InputError& e) {
            out.skipped.push_back({c->record.id, e.what()});
        } catch (const NonConvergenceError& e) {
            out.skipped.push_back({c->record.id, e.what()});
        } catch (const IndefiniteSystemError& e) {
            out.skipped.push_back({c->record.id, e.what()});
        }
    }
    if (out.cases.empty()) throw InputError("every cohort case failed (" + std::to_string(out.skipped.size()) + " skipped)");
    return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    return out;
}

}  // namespace

void write_comparison_csv(std::span<const CaseComparison> cases, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "case,mean_volume_diff_mm,at_tool_diff_mm,significant\n";
    for (const auto& c : cases) {
        out << c.id << ',' << format_double(c.report.mean_volume_diff) << ',' << format_double(c.report.at_tool_diff)
            << ',' << (c.report.significant ? "true" : "false") << '\n';
    }
}

void write_skipped_csv(std::span<const SkippedCase> skipped, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "case,reason\n";
    for (const auto& s : skipped) {
        std::string reason = s.reason;
        std::replace(reason.begin(), reason.end(), ',', ';');
        std::replace(reason.begin(), reason.end(), '\n', ' ');
        out << s.id << ',' << reason << '\n';
    }
}

void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < hist.counts.size(); ++i)
        out << format_double(hist.edges[i]) << ',' << format_double(hist.edges[i + 1]) << ',' << hist.counts[i] << '\n';
}

void write_cohort_stats_csv(const CohortStats& stats, std::size_t records, double atlas_E,
                            const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "records,atlas_E_kPa,frac_over_atlas_plus_1kPa,frac_over_2x_atlas\n";
    out << records << ',' << format_double(atlas_E) << ',' << format_double(stats.frac_over_atlas_plus_1kPa) << ','
        << format_double(stats.frac_over_2x_atlas) << '\n';
}

void write_landmark_diffs_csv(std::span<const LandmarkDifference> diffs, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "label,diff_mm\n";
    for (const auto& d : diffs) out << d.label << ',' << format_double(d.diff_mm) << '\n';
}

}  // namespace mresim
