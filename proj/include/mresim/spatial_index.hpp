#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mresim {

/// Bucket grid over a fixed point set for nearest-neighbour queries.
/// Results are ordered by (squared distance, point index), so ties resolve deterministically.
class PointGrid {
public:
    explicit PointGrid(std::span<const Eigen::Vector3d> points);

    /// The k nearest points to x as (squared distance, index); k is clamped to the point count.
    std::vector<std::pair<double, int>> k_nearest(const Eigen::Vector3d& x, int k) const;

    int nearest(const Eigen::Vector3d& x) const;

    /// Every point strictly closer than `radius` to x, as (squared distance, index).
    std::vector<std::pair<double, int>> within(const Eigen::Vector3d& x, double radius) const;

    std::size_t size() const { return points_.size(); }

private:
    std::vector<Eigen::Vector3d> points_;
    Eigen::Vector3d origin_;
    double cell_ = 1.0;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<int> cell_start_;
    std::vector<int> cell_items_;

    std::array<int, 3> cell_of(const Eigen::Vector3d& x) const;
    double clearance(const std::array<int, 3>& c, int ring, const Eigen::Vector3d& x) const;
    void visit_shell(const std::array<int, 3>& c, int ring, const Eigen::Vector3d& x,
                     std::vector<std::pair<double, int>>& out) const;
};

}  // namespace mresim
