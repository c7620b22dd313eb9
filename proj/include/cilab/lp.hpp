#pragma once
/// Dense two-phase simplex for the small certification LPs of the geometry module.

#include <Eigen/Dense>
#include <vector>

namespace cilab {

struct LpResult {
    enum Status { Optimal, Infeasible, Unbounded } status = Infeasible;
    double value = 0.0;
    Eigen::VectorXd x;     ///< primal solution
    Eigen::VectorXd dual;  ///< y with A^T y >= c at optimality (max form)
    std::vector<int> basis;
};

/// maximize c^T x  subject to  A x = b,  x >= 0.
LpResult simplex_max(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                     double tol = 1e-11);

}  // namespace cilab
