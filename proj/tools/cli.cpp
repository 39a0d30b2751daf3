#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mresim/beam.hpp"
#include "mresim/errors.hpp"
#include "mresim/experiment.hpp"

namespace fs = std::filesystem;

namespace mresim {
namespace {

struct Common {
    std::uint64_t seed = 1;
    int nodes = 300;
    int support_k = 8;
    std::string shape = "mls";
    double h_ms = 100.0;
    double cg_tol = 1e-6;
    int cg_max = 200;
    double atlas_e = kAtlasYoungKpa;
    double significance = kSignificanceMm;
    double voxel_mm = kVoxelRefMm;
    std::string out = ".";
};

struct RetractOpts {
    std::vector<double> center;  // empty: derived from the mask bounding box
    std::vector<double> hoist{1.0, 0.0, 0.0};
    double diameter = 10.0;
    double abdomen_k = 0.05;  // N/mm
    double liver_mass = 0.0;
    std::string landmarks;
};

Vec3 to_vec3(const std::vector<double>& v) {
    if (v.size() != 3) throw InputError("expected three comma-separated components");
    return {v[0], v[1], v[2]};
}

fs::path out_dir(const Common& c) {
    fs::path p(c.out);
    fs::create_directories(p);
    return p;
}

SteadyStateOptions steady_options(const Common& c) {
    SteadyStateOptions s;
    s.step.h = c.h_ms * 1e-3;
    s.step.cg_tol = c.cg_tol;
    s.step.cg_max = c.cg_max;
    return s;
}

ModelParams model_params(const Common& c) {
    ModelParams p;
    p.n_nodes = c.nodes;
    p.support_k = c.support_k;
    p.seed = c.seed;
    p.shape = shape_kind_from_string(c.shape);
    return p;
}

RetractionConfig retraction_config(const Common& c, const RetractOpts& r) {
    RetractionConfig cfg;
    cfg.abdomen_k = r.abdomen_k * 1e3;
    cfg.liver_mass = r.liver_mass;
    cfg.steady = steady_options(c);
    return cfg;
}

RetractorSpec retractor_for(const MeshFreeModel& model, const RetractOpts& r) {
    RetractorSpec spec;
    spec.diameter = r.diameter;
    spec.center = r.center.empty() ? retractor_center(model.field, CohortRunConfig{}.retractor_fraction) : to_vec3(r.center);
    spec.hoist_direction = to_vec3(r.hoist).normalized();
    return spec;
}

bool is_volume_header(const fs::path& p) {
    if (p.extension() != ".json") return false;
    fs::path raw = p;
    raw.replace_extension(".raw");
    return fs::exists(raw);
}

std::vector<fs::path> volume_headers(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_volume_header(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void add_retract_options(CLI::App* cmd, RetractOpts& r) {
    cmd->add_option("--center", r.center, "Retractor center x,y,z in mm (default: lower lateral lobe)")
        ->delimiter(',')
        ->expected(3);
    cmd->add_option("--hoist", r.hoist, "Hoist direction x,y in the transverse plane, z = 0")->delimiter(',')->expected(3);
    cmd->add_option("--diameter", r.diameter, "Retractor diameter, mm")->capture_default_str();
    cmd->add_option("--abdomen-k", r.abdomen_k, "Abdomen spring stiffness per support node, N/mm")->capture_default_str();
    cmd->add_option("--liver-mass", r.liver_mass, "Liver mass in kg (0: masked volume x density)");
    cmd->add_option("--landmarks", r.landmarks, "Landmark CSV (label,x_mm,y_mm,z_mm)");
}

int cohort_stats_cmd(const Common& c, const std::string& input, double bin_width) {
    const fs::path in(input);
    std::vector<CohortRecord> records;
    if (fs::is_directory(in)) {
        for (const auto& header : volume_headers(in)) {
            const VoxelVolume vol = load_volume(header);
            fs::path roi = header;
            roi.replace_extension(".roi.json");
            const RoiMask mask = fs::exists(roi) ? mask_roi(vol, load_polygon(roi)) : positive_mask(vol);
            const double G = mean_shear_modulus(vol, mask);
            records.push_back({header.stem().string(), G, shear_to_young(G)});
        }
        if (records.empty()) throw InputError("no elastogram volumes in " + in.string());
    } else {
        records = read_cohort_csv(in);
        if (records.empty()) throw InputError("cohort CSV has no records");
    }
    const fs::path out = out_dir(c);
    const auto hist = stiffness_histogram(records, bin_width);
    const auto stats = cohort_stats(records, c.atlas_e);
    write_histogram_csv(hist, out / "cohort_hist.csv");
    write_cohort_stats_csv(stats, records.size(), c.atlas_e, out / "cohort_stats.csv");
    if (fs::is_directory(in)) write_cohort_csv(records, out / "cohort.csv");
    std::printf("%zu records; E > atlas + 1 kPa: %.4f; E > 2 x atlas: %.4f\n", records.size(),
                stats.frac_over_atlas_plus_1kPa, stats.frac_over_2x_atlas);
    return 0;
}

int synth_cohort_cmd(const Common& c, SyntheticCohortSpec spec, double spacing) {
    spec.seed = c.seed;
    spec.grid.spacing = {spacing, spacing, spacing};
    const auto cohort = synth_cohort(spec);
    const fs::path out = out_dir(c);
    std::vector<CohortRecord> records;
    for (const auto& sc : cohort) {
        write_volume(sc.elastogram, out / (sc.record.id + ".json"));
        records.push_back(sc.record);
    }
    write_cohort_csv(records, out / "cohort.csv");
    std::printf("wrote %zu synthetic elastograms to %s\n", cohort.size(), out.string().c_str());
    return 0;
}

int build_model_cmd(const Common& c, const std::string& input, const std::string& roi, double nu, double density) {
    const VoxelVolume vol = load_volume(input);
    const RoiMask mask = roi.empty() ? positive_mask(vol) : mask_roi(vol, load_polygon(roi));
    const auto field = material_from_elastogram(vol, mask, nu, density);
    const auto model = build_model(field, model_params(c));
    const auto diag = diagnose(model, c.seed);
    const fs::path path = out_dir(c) / "model.mresim";
    save_model(model, path);
    std::printf("%d nodes, %zu voxels, Lloyd %d sweeps; partition %.2e, gradient sum %.2e, translation %.2e -> %s\n",
                model.node_count(), model.shape.voxel_count(), model.dofs.lloyd_iterations, diag.max_partition_error,
                diag.max_gradient_sum, diag.translation_residual, path.string().c_str());
    return 0;
}

int retract_cmd(const Common& c, const std::string& model_path, const RetractOpts& r) {
    const auto model = load_model(model_path);
    const auto retractor = retractor_for(model, r);
    const auto run = simulate_retraction(model, retractor, retraction_config(c, r));
    const fs::path out = out_dir(c);
    save_state(run.result.state, out / "state.json");
    if (!r.landmarks.empty()) {
        const auto landmarks = read_landmarks_csv(r.landmarks);
        write_landmarks_csv(displace_landmarks(model, run.result.state, landmarks), out / "landmarks_displaced.csv");
    }
    std::printf("steady after %d steps (%lld CG iterations, %d at cap); %zu nodes under the retractor, %zu supports\n",
                run.result.steps, run.result.cg_iterations, run.result.cg_cap_hits, run.setup.region.size(),
                run.setup.supports.size());
    return 0;
}

int compare_cmd(const Common& c, const std::string& model_path, const RetractOpts& r) {
    const auto mre = load_model(model_path);
    const auto atlas_field =
        constant_material(mre.field.grid, mre.field.mask, c.atlas_e, mre.field.nu, mre.field.density);
    const auto atlas = rebuild_with_material(mre, atlas_field);
    const auto retractor = retractor_for(mre, r);
    const auto cfg = retraction_config(c, r);
    const auto run_mre = simulate_retraction(mre, retractor, cfg);
    const auto run_atlas = simulate_retraction(atlas, retractor, cfg);
    std::vector<Landmark> landmarks{{"tool", retractor.center}};
    if (!r.landmarks.empty()) landmarks = read_landmarks_csv(r.landmarks);
    auto report = compare_placements(mre, run_mre.result.state, atlas, run_atlas.result.state, landmarks,
                                     run_mre.setup.region, c.significance);
    report.voxel_ref = c.voxel_mm;
    const fs::path out = out_dir(c);
    const std::vector<CaseComparison> rows{{fs::path(model_path).stem().string(), report}};
    write_comparison_csv(rows, out / "comparison.csv");
    write_landmark_diffs_csv(report.landmarks, out / "landmark_diffs.csv");
    std::printf("mean volume difference %.4f mm, at tool %.4f mm (%.2f voxels): %s\n", report.mean_volume_diff,
                report.at_tool_diff, report.at_tool_diff / report.voxel_ref,
                report.significant ? "clinically significant" : "not significant");
    return 0;
}

std::vector<SyntheticCase> load_cohort_dir(const fs::path& dir) {
    std::vector<SyntheticCase> cases;
    for (const auto& header : volume_headers(dir)) {
        SyntheticCase sc;
        sc.elastogram = load_volume(header);
        sc.record.id = header.stem().string();
        cases.push_back(std::move(sc));
    }
    if (cases.empty()) throw InputError("no elastogram volumes in " + dir.string());
    return cases;
}

int cohort_run_cmd(const Common& c, const std::string& cohort_dir, SyntheticCohortSpec spec, double spacing,
                   const RetractOpts& r) {
    std::vector<SyntheticCase> cohort;
    if (!cohort_dir.empty()) {
        cohort = load_cohort_dir(cohort_dir);
    } else {
        spec.seed = c.seed;
        spec.grid.spacing = {spacing, spacing, spacing};
        cohort = synth_cohort(spec);
    }
    CohortRunConfig cfg;
    cfg.model = model_params(c);
    cfg.retraction = retraction_config(c, r);
    cfg.retractor_diameter = r.diameter;
    cfg.hoist_direction = to_vec3(r.hoist).normalized();
    cfg.atlas_young = c.atlas_e;
    cfg.significance = c.significance;
    const auto result = run_cohort_retractions(cohort, cfg);
    const fs::path out = out_dir(c);
    write_comparison_csv(result.cases, out / "comparison.csv");
    write_skipped_csv(result.skipped, out / "skipped.csv");
    std::size_t significant = 0;
    for (const auto& cc : result.cases) significant += cc.report.significant ? 1 : 0;
    std::printf("%zu cases compared, %zu skipped, %zu clinically significant at the tool\n", result.cases.size(),
                result.skipped.size(), significant);
    return 0;
}

int validate_beam_cmd(const Common& c, BeamSpec spec, double tip_mm, MeshfreeBeamOptions mf) {
    spec.load_n_per_mm = load_for_tip_deflection(spec, tip_mm);
    mf.seed = c.seed;
    const auto v = validate_beam(spec, mf);
    const fs::path path = out_dir(c) / "beam_convergence.csv";
    write_beam_csv(v, path);
    std::printf("L=%g w=%g h=%g: FEA max %.5f mm (rms %.5f), mesh-free max %.5f mm (rms %.5f) -> %s\n", spec.length,
                spec.width, spec.height, v.fea_error.max_abs, v.fea_error.rms, v.meshfree_error.max_abs,
                v.meshfree_error.rms, path.string().c_str());
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"MRE-informed mesh-free liver retraction simulator"};
    app.require_subcommand(1);
    app.fallthrough();

    Common c;
    app.add_option("--seed", c.seed, "Seed for sampling and synthesis")->capture_default_str();
    app.add_option("--nodes", c.nodes, "Simulation node count")->capture_default_str();
    app.add_option("--support-k", c.support_k, "Shape function support size")->capture_default_str();
    app.add_option("--shape", c.shape, "Shape functions: mls or shepard")->capture_default_str();
    app.add_option("--h-ms", c.h_ms, "Implicit Euler time step, ms")->capture_default_str();
    app.add_option("--cg-tol", c.cg_tol, "CG relative residual tolerance")->capture_default_str();
    app.add_option("--cg-max", c.cg_max, "CG iteration cap per step")->capture_default_str();
    app.add_option("--atlas-e-kpa", c.atlas_e, "Atlas Young's modulus, kPa")->capture_default_str();
    app.add_option("--significance-mm", c.significance, "Clinical significance threshold, mm")->capture_default_str();
    app.add_option("--voxel-mm", c.voxel_mm, "Reference voxel size for reporting, mm")->capture_default_str();
    app.add_option("--out", c.out, "Output directory")->capture_default_str();

    std::string input;
    double bin_width = 1.0;
    auto* stats = app.add_subcommand("cohort-stats", "Histogram and exceedance fractions of a cohort");
    stats->add_option("input", input, "Directory of elastogram volumes or a cohort CSV")->required();
    stats->add_option("--bin-width", bin_width, "Histogram bin width, kPa")->capture_default_str();

    SyntheticCohortSpec synth;
    double spacing = synth.grid.spacing[0];
    auto* synth_cmd = app.add_subcommand("synth-cohort", "Generate a synthetic elastogram cohort");
    auto add_synth_options = [&](CLI::App* cmd) {
        cmd->add_option("--n", synth.n, "Number of cases")->capture_default_str();
        cmd->add_option("--median-g", synth.median_G, "Median mean shear modulus, kPa")->capture_default_str();
        cmd->add_option("--log-sd", synth.log_sd, "Log-normal spread")->capture_default_str();
        cmd->add_option("--heterogeneity", synth.heterogeneity, "Spatial variation amplitude")->capture_default_str();
        cmd->add_option("--spacing-mm", spacing, "Isotropic voxel spacing, mm")->capture_default_str();
    };
    add_synth_options(synth_cmd);

    std::string roi;
    double nu = 0.45;
    double density = 1060.0;
    auto* build = app.add_subcommand("build-model", "Build and save a mesh-free model from an elastogram");
    build->add_option("elastogram", input, "Elastogram volume (.json header)")->required();
    build->add_option("--roi", roi, "ROI polygon JSON (default: positive voxels)");
    build->add_option("--nu", nu, "Simulation Poisson ratio")->capture_default_str();
    build->add_option("--density", density, "Density, kg/m^3")->capture_default_str();

    RetractOpts r;
    auto* retract = app.add_subcommand("retract", "Steady-state retraction of a saved model");
    retract->add_option("model", input, "Model archive")->required();
    add_retract_options(retract, r);

    auto* compare = app.add_subcommand("compare", "Elastogram vs atlas stiffness retraction comparison");
    compare->add_option("model", input, "Model archive")->required();
    add_retract_options(compare, r);

    std::string cohort_dir;
    auto* cohort_run = app.add_subcommand("cohort-run", "Retraction comparison over a cohort");
    cohort_run->add_option("--cohort", cohort_dir, "Directory of elastograms (default: synthesize one)");
    add_synth_options(cohort_run);
    add_retract_options(cohort_run, r);

    BeamSpec beam;
    double tip_mm = 0.3;
    MeshfreeBeamOptions mf;
    auto* vbeam = app.add_subcommand("validate-beam", "Cantilever convergence against Euler-Bernoulli");
    vbeam->add_option("--resolution", beam.resolution, "FEA element edge, mm")->capture_default_str();
    vbeam->add_option("--length", beam.length, "Beam length, mm")->capture_default_str();
    vbeam->add_option("--width", beam.width, "Beam width, mm")->capture_default_str();
    vbeam->add_option("--height", beam.height, "Beam height, mm")->capture_default_str();
    vbeam->add_option("--young-kpa", beam.young_kpa, "Young's modulus, kPa")->capture_default_str();
    vbeam->add_option("--tip-mm", tip_mm, "Analytic tip deflection the load is calibrated to")->capture_default_str();
    vbeam->add_option("--mf-nodes", mf.n_nodes, "Mesh-free node count")->capture_default_str();
    vbeam->add_option("--mf-support-k", mf.support_k, "Mesh-free support size")->capture_default_str();
    vbeam->add_option("--mf-voxel-mm", mf.voxel, "Mesh-free phantom voxel edge, mm")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*stats) return cohort_stats_cmd(c, input, bin_width);
        if (*synth_cmd) return synth_cohort_cmd(c, synth, spacing);
        if (*build) return build_model_cmd(c, input, roi, nu, density);
        if (*retract) return retract_cmd(c, input, r);
        if (*compare) return compare_cmd(c, input, r);
        if (*cohort_run) return cohort_run_cmd(c, cohort_dir, synth, spacing, r);
        if (*vbeam) return validate_beam_cmd(c, beam, tip_mm, mf);
    } catch (const NonConvergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const IndefiniteSystemError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace mresim
