#pragma once
/// State-space geometry of the relaxed Euler inclusion: the constraint sets
/// K_{rho,q}, their convex hulls, distances and finite extreme-point selections.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cilab {

/// Raised when a geometric precondition fails (bad params, non-interior target, ...).
struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Point (m, U) of R^n x S0^{n x n}.  U is stored by its independent entries:
/// n=2 as (U11, U12), n=3 as (U11, U22, U12, U13, U23) with U33 = -U11 - U22.
struct StatePoint {
    int n = 2;
    std::array<double, 3> m{};
    std::array<double, 5> u{};

    static int state_dim(int n) { return n * (n + 3) / 2 - 1; }
    static int num_u(int n) { return n == 2 ? 2 : 5; }

    Eigen::VectorXd momentum() const;
    Eigen::MatrixXd U() const;
    static StatePoint from(const Eigen::VectorXd& m, const Eigen::MatrixXd& U);

    /// Coordinates of the isometric embedding into R^{N_n}; the Euclidean norm
    /// equals sqrt(|m|^2 + |U|_F^2).
    Eigen::VectorXd coords() const;
    static StatePoint from_coords(int n, const Eigen::VectorXd& c);

    double norm() const { return coords().norm(); }
    StatePoint operator+(const StatePoint& o) const;
    StatePoint operator-(const StatePoint& o) const;
    StatePoint operator*(double s) const;
};

struct ConstraintParams {
    double rho = 1.0;
    double q = 0.0;
    ConstraintParams() = default;
    ConstraintParams(double rho_, double q_);
};

struct WaveDirection {
    double tau = 0.0;
    Eigen::VectorXd xi;
    StatePoint profile;
};

struct SimplexDecomposition {
    std::vector<StatePoint> vertices;
    std::vector<double> weights;
    double slack = 0.0;
};

/// K point for direction xi: (sqrt(n rho q) xi, n q xi xi^T - q I).
StatePoint k_point(const ConstraintParams& p, const Eigen::VectorXd& xi);
/// n=2 shorthand, xi = (cos theta, sin theta).
StatePoint k_point_angle(const ConstraintParams& p, double theta);

/// lambda_min(rho q I + rho U - m m^T); positive iff w lies in int conv K.
double hull_margin(const StatePoint& w, const ConstraintParams& p);

/// K point maximizing the linear functional y . coords(k).
StatePoint k_argmax_linear(const ConstraintParams& p, int n, const Eigen::VectorXd& y);

/// Euclidean distance (in the isometric embedding) from w to K_{rho,q}.
double dist_to_K(const StatePoint& w, const ConstraintParams& p);
/// Same, also returning the nearest K point.
double dist_to_K(const StatePoint& w, const ConstraintParams& p, StatePoint* nearest);

/// N*_n points of K whose hull strictly contains target, with LP-certified slack.
SimplexDecomposition select_extreme_points(const StatePoint& target, const ConstraintParams& p,
                                           std::uint64_t rng_seed);

/// Barycentric weights of w with respect to the simplex decomposition vertices.
std::vector<double> barycentric(const StatePoint& w, const SimplexDecomposition& d);

/// Lambda-direction joining two points of a common K_{rho,q}.
WaveDirection wave_direction(const StatePoint& w1, const StatePoint& w2, double rho);

struct WaveStep {
    StatePoint w1, w2;
    double mu1 = 0.0, mu2 = 0.0;
    int vi = -1, vj = -1;  ///< vertex pair the segment is parallel to
};

/// Split w along a vertex-difference direction so both endpoints keep slack >= margin/2.
WaveStep plan_wave_step(const StatePoint& w, const SimplexDecomposition& decomp, double margin);

/// Scaling map (rho,q) -> (1,1/n): (m,U) -> (m/sqrt(n rho q), U/(n q)).
StatePoint normalize_state(const StatePoint& w, const ConstraintParams& p);
StatePoint denormalize_state(const StatePoint& w, const ConstraintParams& p, int n);

/// Minimum weight slack of a target inside conv(points), or a negative value
/// when infeasible.  Solved by the dense simplex method.
double lp_max_slack(const std::vector<Eigen::VectorXd>& points, const Eigen::VectorXd& target,
                    std::vector<double>* weights = nullptr);

/// Membership of target in conv(points) via the gauge LP around the centroid:
/// returns alpha* with target in int conv iff alpha* > 1.
double lp_gauge(const std::vector<Eigen::VectorXd>& points, const Eigen::VectorXd& target,
                std::vector<double>* weights = nullptr);

/// Gauge of target w.r.t. conv K, from an LP over n_samples sampled K points
/// refined by column generation.  Stops at the first certificate; the result
/// is > 1 iff target lies in int conv K.
double hull_gauge_lp(const StatePoint& target, const ConstraintParams& p, int n_samples, std::uint64_t seed);

}  // namespace cilab
