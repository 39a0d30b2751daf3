#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "mresim/errors.hpp"
#include "mresim/volume.hpp"
#include "test_util.hpp"

using namespace mresim;
using testutil::TempDir;

namespace {

VoxelVolume make_volume(std::array<int, 3> dims, double value) {
    VoxelVolume v;
    v.grid.dims = dims;
    v.data.assign(v.grid.voxel_count(), value);
    return v;
}

// Independent even-odd crossing count; boundary handling is not exercised by the random centers used with it.
bool crossing_oracle(const std::vector<std::array<double, 2>>& poly, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const double xi = poly[i][0], yi = poly[i][1], xj = poly[j][0], yj = poly[j][1];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
    }
    return inside;
}

}  // namespace

TEST_CASE("load_volume reads a 2x2x1 elastogram") {
    TempDir dir("vol");
    {
        std::ofstream h(dir / "v.json");
        h << R"({"dims":[2,2,1],"spacing_mm":[1.64,1.64,10],"kind":"elastogram_shear_kPa"})";
        std::ofstream r(dir / "v.raw", std::ios::binary);
        const float vals[4] = {1.0f, 2.0f, 3.0f, 4.0f};
        r.write(reinterpret_cast<const char*>(vals), sizeof vals);
    }
    const auto v = load_volume(dir / "v.json");
    CHECK(v.data.size() == 4);
    CHECK(v.data[3] == 4.0);
    CHECK(v.grid.spacing[2] == 10.0);
    CHECK(v.kind == VolumeKind::elastogram_shear_kPa);
}

TEST_CASE("load_volume rejects size mismatch, missing files, bad spacing and unknown kind") {
    TempDir dir("volbad");
    auto write = [&](const std::string& header, int floats) {
        std::ofstream h(dir / "v.json");
        h << header;
        std::ofstream r(dir / "v.raw", std::ios::binary);
        std::vector<float> vals(static_cast<std::size_t>(floats), 1.0f);
        r.write(reinterpret_cast<const char*>(vals.data()), static_cast<std::streamsize>(vals.size() * 4));
    };
    write(R"({"dims":[2,2,1],"spacing_mm":[1.64,1.64,10],"kind":"elastogram_shear_kPa"})", 5);
    CHECK_THROWS_AS(load_volume(dir / "v"), InputError);
    write(R"({"dims":[2,2,1],"spacing_mm":[0,1.64,10],"kind":"elastogram_shear_kPa"})", 4);
    CHECK_THROWS_AS(load_volume(dir / "v"), InputError);
    write(R"({"dims":[2,2,1],"spacing_mm":[1,1,1],"kind":"ct"})", 4);
    CHECK_THROWS_AS(load_volume(dir / "v"), InputError);
    CHECK_THROWS_AS(load_volume(dir / "absent.json"), InputError);
}

TEST_CASE("write_volume then load_volume is bit-exact on a random 8x8x3 volume") {
    TempDir dir("volrt");
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> u(0.0f, 9.0f);
    VoxelVolume v;
    v.grid.dims = {8, 8, 3};
    v.grid.spacing = {1.64, 0.8, 10.0};
    v.kind = VolumeKind::anatomical_intensity;
    for (std::size_t i = 0; i < v.grid.voxel_count(); ++i) v.data.push_back(u(rng));
    write_volume(v, dir / "rt");
    const auto back = load_volume(dir / "rt.raw");
    CHECK(back.grid == v.grid);
    CHECK(back.kind == v.kind);
    CHECK(back.data == v.data);
}

TEST_CASE("mask_roi with a full-extent rectangle selects exactly one slice") {
    auto v = make_volume({6, 5, 3}, 1.0);
    RoiPolygon p{1, {{0.0, 0.0}, {6 * 1.64, 0.0}, {6 * 1.64, 5 * 1.64}, {0.0, 5 * 1.64}}};
    const auto m = mask_roi(v, p);
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 5; ++j)
            for (int i = 0; i < 6; ++i) CHECK(m.flags[v.grid.index(i, j, k)] == (k == 1 ? 1 : 0));
}

TEST_CASE("mask_roi rejects bad polygons and slices") {
    auto v = make_volume({4, 4, 2}, 1.0);
    CHECK_THROWS_AS(mask_roi(v, {0, {{0, 0}, {1, 1}}}), InputError);
    CHECK_THROWS_AS(mask_roi(v, {0, {{0, 0}, {4, 4}, {4, 0}, {0, 4}}}), InputError);  // bow-tie
    CHECK_THROWS_AS(mask_roi(v, {2, {{0, 0}, {4, 0}, {0, 4}}}), InputError);
    CHECK_THROWS_AS(mask_roi(v, {0, {{0, 0}, {4, 0}, {4, 0}, {0, 4}}}), InputError);  // repeated vertex
}

TEST_CASE("mask_roi on a right triangle matches a brute-force crossing test") {
    auto v = make_volume({10, 10, 1}, 1.0);
    // Hypotenuse offset so no voxel center lies on an edge.
    const std::vector<std::array<double, 2>> tri{{0.3, 0.2}, {15.1, 0.2}, {0.3, 14.9}};
    const auto m = mask_roi(v, {0, tri});
    std::size_t expected = 0;
    for (int j = 0; j < 10; ++j)
        for (int i = 0; i < 10; ++i) {
            const bool in = crossing_oracle(tri, (i + 0.5) * 1.64, (j + 0.5) * 1.64);
            expected += in;
            CHECK(m.flags[v.grid.index(i, j, 0)] == in);
        }
    CHECK(m.count() == expected);
    CHECK(expected > 0);
}

TEST_CASE("mask_roi is invariant under cyclic vertex rotation") {
    auto v = make_volume({12, 12, 2}, 1.0);
    std::vector<std::array<double, 2>> poly{{1, 1}, {15, 2}, {18, 12}, {9, 18}, {2, 10}};
    const auto ref = mask_roi(v, {1, poly});
    for (std::size_t r = 1; r < poly.size(); ++r) {
        std::rotate(poly.begin(), poly.begin() + 1, poly.end());
        CHECK(mask_roi(v, {1, poly}) == ref);
    }
}

TEST_CASE("point_in_polygon counts boundary points as inside") {
    const std::vector<std::array<double, 2>> sq{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
    CHECK(point_in_polygon(sq, 1, 0));
    CHECK(point_in_polygon(sq, 2, 2));
    CHECK(point_in_polygon(sq, 0, 1.5));
    CHECK_FALSE(point_in_polygon(sq, 2.0001, 1));
}

TEST_CASE("mean_shear_modulus examples and oracle") {
    auto v = make_volume({3, 3, 3}, 3.0);
    CHECK(mean_shear_modulus(v, full_mask(v.grid)) == doctest::Approx(3.0).epsilon(1e-15));

    auto w = make_volume({2, 1, 1}, 0.0);
    w.data = {2.0, 4.0};
    CHECK(mean_shear_modulus(w, full_mask(w.grid)) == 3.0);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    auto r = make_volume({16, 16, 16}, 0.0);
    RoiMask m{r.grid.dims, std::vector<std::uint8_t>(r.grid.voxel_count(), 0)};
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        r.data[i] = u(rng);
        if (u(rng) < 4.0) {
            m.flags[i] = 1;
            sum += r.data[i];
            ++n;
        }
    }
    CHECK(testutil::rel_err(mean_shear_modulus(r, m), sum / n) <= 1e-12);
}

TEST_CASE("mean_shear_modulus errors") {
    auto v = make_volume({2, 2, 1}, 1.0);
    RoiMask empty{v.grid.dims, std::vector<std::uint8_t>(4, 0)};
    CHECK_THROWS_AS(mean_shear_modulus(v, empty), InputError);
    v.kind = VolumeKind::anatomical_intensity;
    CHECK_THROWS_AS(mean_shear_modulus(v, full_mask(v.grid)), InputError);
}

TEST_CASE("mean over a full mask of a constant volume is the constant for any dims") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> d(1, 9);
    for (int t = 0; t < 20; ++t) {
        auto v = make_volume({d(rng), d(rng), d(rng)}, 0.37);
        CHECK(mean_shear_modulus(v, full_mask(v.grid)) == doctest::Approx(0.37).epsilon(1e-14));
    }
}

TEST_CASE("shear_to_young") {
    CHECK(shear_to_young(0.7, 0.5) == doctest::Approx(2.1).epsilon(1e-15));
    CHECK(shear_to_young(0.7) == doctest::Approx(2.1).epsilon(1e-15));
    CHECK(shear_to_young(0.0, 0.3) == 0.0);
    CHECK(shear_to_young(1.0, 0.45) == doctest::Approx(2.9).epsilon(1e-15));
    CHECK_THROWS_AS(shear_to_young(1.0, 0.51), InputError);
    CHECK_THROWS_AS(shear_to_young(1.0, -0.1), InputError);
    CHECK_THROWS_AS(shear_to_young(-1.0, 0.3), InputError);
}

TEST_CASE("shear_to_young is monotone in G and nu") {
    for (double g = 0.0; g < 5.0; g += 0.25)
        for (double nu = 0.0; nu < 0.44; nu += 0.05) {
            CHECK(shear_to_young(g + 0.25, nu) > shear_to_young(g, nu));
            if (g > 0.0) CHECK(shear_to_young(g, nu + 0.05) > shear_to_young(g, nu));
        }
}

TEST_CASE("stiffness_histogram examples") {
    std::vector<CohortRecord> same(3, CohortRecord{"a", 0.7, 2.1});
    auto h = stiffness_histogram(same, 1.0);
    REQUIRE(h.counts.size() == 3);
    CHECK(h.counts[2] == 3);
    CHECK(h.edges[2] == 2.0);
    CHECK(h.edges[3] == 3.0);

    std::vector<CohortRecord> edge{{"e", 1.0, 3.0}};
    h = stiffness_histogram(edge, 1.0);
    CHECK(h.counts.back() == 1);
    CHECK(h.edges[h.counts.size() - 1] == 3.0);

    CHECK_THROWS_AS(stiffness_histogram({}, 1.0), InputError);
    CHECK_THROWS_AS(stiffness_histogram(same, 0.0), InputError);
}

TEST_CASE("stiffness_histogram matches a scalar binning loop on 120 records") {
    std::mt19937_64 rng(17);
    std::lognormal_distribution<double> ln(std::log(2.5), 0.5);
    std::vector<CohortRecord> recs;
    for (int i = 0; i < 120; ++i) {
        const double g = ln(rng) / 3.0;
        recs.push_back({"r" + std::to_string(i), g, shear_to_young(g)});
    }
    for (double width : {0.5, 1.0, 0.3}) {
        const auto h = stiffness_histogram(recs, width);
        std::size_t total = 0;
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            std::size_t n = 0;
            for (const auto& r : recs) n += (r.young_E >= h.edges[b] && r.young_E < h.edges[b + 1]);
            CHECK(h.counts[b] == n);
            total += h.counts[b];
        }
        CHECK(total == 120);
    }
}

TEST_CASE("cohort_stats examples") {
    std::vector<CohortRecord> atlas(4, CohortRecord{"a", 0.7, 2.1});
    auto s = cohort_stats(atlas, 2.1);
    CHECK(s.frac_over_atlas_plus_1kPa == 0.0);
    CHECK(s.frac_over_2x_atlas == 0.0);

    std::vector<CohortRecord> r{{"a", 0, 3.2}, {"b", 0, 4.3}, {"c", 0, 2.0}, {"d", 0, 5.0}};
    s = cohort_stats(r, 2.1);
    CHECK(s.frac_over_atlas_plus_1kPa == 0.75);
    CHECK(s.frac_over_2x_atlas == 0.5);
    CHECK_THROWS_AS(cohort_stats({}, 2.1), InputError);
}

TEST_CASE("cohort CSV round trip and malformed input") {
    TempDir dir("csv");
    std::vector<CohortRecord> r{{"p1", 0.7, 2.1}, {"p2", 1.0 / 3.0, 1.0}};
    write_cohort_csv(r, dir / "c.csv");
    const auto back = read_cohort_csv(dir / "c.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].mean_shear_G == r[1].mean_shear_G);
    CHECK(back[0].id == "p1");
    {
        std::ofstream o(dir / "bad.csv");
        o << "id,G_kPa,E_kPa\nx,abc,1\n";
    }
    CHECK_THROWS_AS(read_cohort_csv(dir / "bad.csv"), InputError);
}
