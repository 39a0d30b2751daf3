#pragma once

#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Core>

#include "mresim/errors.hpp"

namespace mresim {

struct CgResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double relative_residual = 0.0;  // ||b - A x|| / ||b|| of the returned x
    bool converged = false;          // false means the iteration cap was reached first
};

/// Called after each update with (iteration number n+1, x_{n+1}).
using CgObserver = std::function<void(int, const Eigen::VectorXd&)>;

/// Unpreconditioned conjugate gradient for SPD A (any type with `A * vector`).
/// Stops when ||r|| / ||b|| <= tol or after max_iters updates; throws IndefiniteSystemError when p^T A p <= 0.
template <typename Matrix>
CgResult cg_solve(const Matrix& A, const Eigen::VectorXd& b, const Eigen::VectorXd& x0, int max_iters = 200,
                  double tol = 1e-6, const CgObserver& observer = {}) {
    if (A.rows() != A.cols() || A.rows() != b.size() || x0.size() != b.size())
        throw InputError("cg_solve: dimension mismatch");
    if (max_iters < 0 || !(tol >= 0.0)) throw InputError("cg_solve: bad iteration cap or tolerance");

    const double bnorm = b.norm();
    const double scale = bnorm > 0.0 ? bnorm : 1.0;

    CgResult out;
    out.x = x0;
    Eigen::VectorXd r = b - A * out.x;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    int n = 0;
    while (std::sqrt(rr) > tol * scale && n < max_iters) {
        const Eigen::VectorXd Ap = A * p;
        const double pAp = p.dot(Ap);
        if (!(pAp > 0.0)) {
            throw IndefiniteSystemError("cg_solve: indefinite system (p^T A p = " + std::to_string(pAp) +
                                        " at iteration " + std::to_string(n) + ")");
        }
        const double alpha = rr / pAp;
        out.x += alpha * p;
        r -= alpha * Ap;
        const double rr_next = r.squaredNorm();
        p = r + (rr_next / rr) * p;
        rr = rr_next;
        ++n;
        if (observer) observer(n, out.x);
    }
    out.iterations = n;
    out.converged = std::sqrt(rr) <= tol * scale;
    out.relative_residual = (b - A * out.x).norm() / scale;
    return out;
}

}  // namespace mresim
