#include "mresim/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mresim/errors.hpp"

namespace mresim {

PointGrid::PointGrid(std::span<const Eigen::Vector3d> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) throw InputError("point grid needs at least one point");
    Eigen::Vector3d lo = points_.front();
    Eigen::Vector3d hi = points_.front();
    for (const auto& p : points_) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Eigen::Vector3d span = (hi - lo).cwiseMax(1e-9);
    // About two points per cell, assuming a roughly uniform spread over the bounding box.
    const double volume = std::max(span.prod(), 1e-27);
    cell_ = std::cbrt(2.0 * volume / static_cast<double>(points_.size()));
    cell_ = std::max(cell_, span.maxCoeff() / 256.0);
    origin_ = lo;
    const double max_cells = 8.0 * static_cast<double>(points_.size()) + 64.0;
    while (true) {
        double total = 1.0;
        for (int a = 0; a < 3; ++a) {
            dims_[a] = std::max(1, static_cast<int>(std::floor(span[a] / cell_)) + 1);
            total *= dims_[a];
        }
        if (total <= max_cells) break;
        cell_ *= 1.25;
    }

    const std::size_t ncells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    std::vector<int> counts(ncells + 1, 0);
    std::vector<std::size_t> cell_id(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto c = cell_of(points_[i]);
        cell_id[i] = static_cast<std::size_t>(c[0]) + dims_[0] * (static_cast<std::size_t>(c[1]) + dims_[1] * c[2]);
        ++counts[cell_id[i] + 1];
    }
    for (std::size_t c = 0; c < ncells; ++c) counts[c + 1] += counts[c];
    cell_start_ = counts;
    cell_items_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) cell_items_[counts[cell_id[i]]++] = static_cast<int>(i);
}

std::array<int, 3> PointGrid::cell_of(const Eigen::Vector3d& x) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
        const int v = static_cast<int>(std::floor((x[a] - origin_[a]) / cell_));
        c[a] = std::clamp(v, 0, dims_[a] - 1);
    }
    return c;
}

void PointGrid::visit_shell(const std::array<int, 3>& c, int ring, const Eigen::Vector3d& x,
                            std::vector<std::pair<double, int>>& out) const {
    for (int k = c[2] - ring; k <= c[2] + ring; ++k) {
        if (k < 0 || k >= dims_[2]) continue;
        for (int j = c[1] - ring; j <= c[1] + ring; ++j) {
            if (j < 0 || j >= dims_[1]) continue;
            for (int i = c[0] - ring; i <= c[0] + ring; ++i) {
                if (i < 0 || i >= dims_[0]) continue;
                if (std::max({std::abs(i - c[0]), std::abs(j - c[1]), std::abs(k - c[2])}) != ring) continue;
                const std::size_t id = static_cast<std::size_t>(i) + dims_[0] * (static_cast<std::size_t>(j) + dims_[1] * k);
                for (int s = cell_start_[id]; s < cell_start_[id + 1]; ++s) {
                    const int p = cell_items_[s];
                    out.emplace_back((points_[p] - x).squaredNorm(), p);
                }
            }
        }
    }
}

std::vector<std::pair<double, int>> PointGrid::k_nearest(const Eigen::Vector3d& x, int k) const {
    k = std::clamp(k, 0, static_cast<int>(points_.size()));
    std::vector<std::pair<double, int>> found;
    if (k == 0) return found;
    const auto c = cell_of(x);
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int ring = 0; ring <= max_ring; ++ring) {
        visit_shell(c, ring, x, found);
        if (static_cast<int>(found.size()) < k) continue;
        std::nth_element(found.begin(), found.begin() + (k - 1), found.end());
        const double gap = clearance(c, ring, x);
        if (gap * gap > found[k - 1].first) break;
    }
    std::sort(found.begin(), found.end());
    found.resize(static_cast<std::size_t>(k));
    return found;
}

// Distance from x to the outside of the searched block, accounting for x lying outside the grid.
double PointGrid::clearance(const std::array<int, 3>& c, int ring, const Eigen::Vector3d& x) const {
    const Eigen::Vector3d local = x - origin_;
    double gap = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (c[a] - ring > 0) gap = std::min(gap, local[a] - (c[a] - ring) * cell_);
        if (c[a] + ring + 1 < dims_[a]) gap = std::min(gap, (c[a] + ring + 1) * cell_ - local[a]);
    }
    return std::max(gap, 0.0);
}

std::vector<std::pair<double, int>> PointGrid::within(const Eigen::Vector3d& x, double radius) const {
    std::vector<std::pair<double, int>> found;
    const auto c = cell_of(x);
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int ring = 0; ring <= max_ring; ++ring) {
        visit_shell(c, ring, x, found);
        if (clearance(c, ring, x) >= radius) break;
    }
    const double r2 = radius * radius;
    std::erase_if(found, [r2](const auto& e) { return !(e.first < r2); });
    std::sort(found.begin(), found.end());
    return found;
}

int PointGrid::nearest(const Eigen::Vector3d& x) const { return k_nearest(x, 1).front().second; }

}  // namespace mresim
