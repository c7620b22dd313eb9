#include "cilab/lp.hpp"

#include <cmath>
#include <limits>

namespace cilab {

namespace {

struct Tableau {
    Eigen::MatrixXd T;  // rows: constraints, last column rhs
    std::vector<int> basis;
    int ncols = 0;      // structural + artificial columns

    void pivot(int r, int c) {
        const double piv = T(r, c);
        T.row(r) /= piv;
        for (int i = 0; i < T.rows(); ++i) {
            if (i == r) continue;
            const double f = T(i, c);
            if (f != 0.0) T.row(i) -= f * T.row(r);
        }
        basis[r] = c;
    }
};

/// Runs the simplex on tab with objective coefficients obj (max form) over the
/// allowed columns.  Returns false when unbounded.
bool run(Tableau& tab, const Eigen::VectorXd& obj, const std::vector<char>& allowed, double tol) {
    const int m = static_cast<int>(tab.T.rows());
    const int rhs = tab.ncols;
    int degenerate = 0;
    for (int iter = 0; iter < 100000; ++iter) {
        // reduced costs d_j = c_j - c_B^T B^{-1} A_j
        Eigen::VectorXd cb(m);
        for (int i = 0; i < m; ++i) cb(i) = obj(tab.basis[i]);
        int enter = -1;
        double best = tol;
        const bool bland = degenerate > 50;
        for (int j = 0; j < tab.ncols; ++j) {
            if (!allowed[j]) continue;
            const double d = obj(j) - cb.dot(tab.T.col(j));
            if (d > best) {
                enter = j;
                best = d;
                if (bland) break;
            }
        }
        if (enter < 0) return true;
        int leave = -1;
        double ratio = std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i) {
            const double a = tab.T(i, enter);
            if (a > tol) {
                const double r = tab.T(i, rhs) / a;
                if (r < ratio - 1e-15 || (r <= ratio + 1e-15 && leave >= 0 && tab.basis[i] < tab.basis[leave])) {
                    ratio = r;
                    leave = i;
                }
            }
        }
        if (leave < 0) return false;
        degenerate = ratio < 1e-14 ? degenerate + 1 : 0;
        tab.pivot(leave, enter);
    }
    return true;
}

}  // namespace

LpResult simplex_max(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                     double tol) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    Tableau tab;
    tab.ncols = n + m;
    tab.T = Eigen::MatrixXd::Zero(m, n + m + 1);
    std::vector<double> sign(m, 1.0);
    for (int i = 0; i < m; ++i) {
        sign[i] = b(i) < 0 ? -1.0 : 1.0;
        tab.T.row(i).head(n) = sign[i] * A.row(i);
        tab.T(i, n + i) = 1.0;
        tab.T(i, n + m) = sign[i] * b(i);
    }
    tab.basis.resize(m);
    for (int i = 0; i < m; ++i) tab.basis[i] = n + i;

    // phase 1: maximize -sum(artificials)
    Eigen::VectorXd obj1 = Eigen::VectorXd::Zero(n + m);
    obj1.tail(m).setConstant(-1.0);
    std::vector<char> all(n + m, 1);
    run(tab, obj1, all, tol);
    LpResult res;
    double infeas = 0.0;
    for (int i = 0; i < m; ++i)
        if (tab.basis[i] >= n) infeas += tab.T(i, n + m);
    const double scale = 1.0 + b.cwiseAbs().maxCoeff();
    if (infeas > 1e-9 * scale) {
        res.status = LpResult::Infeasible;
        return res;
    }
    // drive zero-level artificials out of the basis where possible
    for (int i = 0; i < m; ++i) {
        if (tab.basis[i] < n) continue;
        int best = -1;
        double amax = 1e-9;
        for (int j = 0; j < n; ++j)
            if (std::abs(tab.T(i, j)) > amax) {
                amax = std::abs(tab.T(i, j));
                best = j;
            }
        if (best >= 0) tab.pivot(i, best);
    }

    Eigen::VectorXd obj2 = Eigen::VectorXd::Zero(n + m);
    obj2.head(n) = c;
    std::vector<char> structural(n + m, 0);
    for (int j = 0; j < n; ++j) structural[j] = 1;
    if (!run(tab, obj2, structural, tol)) {
        res.status = LpResult::Unbounded;
        return res;
    }
    res.status = LpResult::Optimal;
    res.x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < m; ++i)
        if (tab.basis[i] < n) res.x(tab.basis[i]) = tab.T(i, n + m);
    res.value = c.dot(res.x);
    res.basis = tab.basis;

    // duals from B^T y = c_B on the sign-adjusted original system
    Eigen::MatrixXd Bm(m, m);
    Eigen::VectorXd cb(m);
    for (int i = 0; i < m; ++i) {
        const int j = tab.basis[i];
        if (j < n) {
            Bm.col(i) = A.col(j);
            cb(i) = c(j);
        } else {
            Bm.col(i) = Eigen::VectorXd::Zero(m);
            Bm(j - n, i) = sign[j - n];
            cb(i) = 0.0;
        }
    }
    res.dual = Bm.transpose().colPivHouseholderQr().solve(cb);
    return res;
}

}  // namespace cilab
