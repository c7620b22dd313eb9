#include "cilab/geometry.hpp"
#include "cilab/lp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cilab;

namespace {

StatePoint make2(double m1, double m2, double u11, double u12) {
    StatePoint w;
    w.m = {m1, m2, 0.0};
    w.u = {u11, u12, 0, 0, 0};
    return w;
}

/// Oracle: the defining relation m m^T / rho - U = q I.
double k_relation_residual(const StatePoint& w, const ConstraintParams& p) {
    const Eigen::VectorXd m = w.momentum();
    const int n = w.n;
    return (m * m.transpose() / p.rho - w.U() - p.q * Eigen::MatrixXd::Identity(n, n)).norm();
}

/// Oracle: smallest eigenvalue by a general (non-symmetric) eigen solver.
double margin_oracle(const StatePoint& w, const ConstraintParams& p) {
    const Eigen::VectorXd m = w.momentum();
    const int n = w.n;
    Eigen::MatrixXd M = p.rho * p.q * Eigen::MatrixXd::Identity(n, n) + p.rho * w.U() - m * m.transpose();
    Eigen::EigenSolver<Eigen::MatrixXd> es(M);
    return es.eigenvalues().real().minCoeff();
}

}  // namespace

TEST(KPoint, TrivialZeroQ) {
    const StatePoint w = k_point({1.0, 0.0}, Eigen::Vector2d(0.6, 0.8));
    EXPECT_EQ(w.norm(), 0.0);
}

TEST(KPoint, SubstitutionOracle) {
    const StatePoint a = k_point({2.0, 1.0}, Eigen::Vector2d(1, 0));
    EXPECT_NEAR(a.m[0], 2.0, 1e-15);
    EXPECT_NEAR(a.m[1], 0.0, 1e-15);
    EXPECT_NEAR(a.U()(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(a.U()(1, 1), -1.0, 1e-15);
    const StatePoint b = k_point({1.0, 0.5}, Eigen::Vector2d(0, 1));
    EXPECT_NEAR(b.m[1], 1.0, 1e-15);
    EXPECT_NEAR(b.U()(0, 0), -0.5, 1e-15);
    EXPECT_NEAR(b.U()(1, 1), 0.5, 1e-15);
    EXPECT_LT(k_relation_residual(a, {2.0, 1.0}), 1e-14);
}

TEST(KPoint, ThreeDimensionalRelation) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> N(0, 1);
    const ConstraintParams p(1.7, 0.4);
    for (int i = 0; i < 100; ++i) {
        Eigen::Vector3d xi(N(rng), N(rng), N(rng));
        xi.normalize();
        const StatePoint w = k_point(p, xi);
        EXPECT_LT(k_relation_residual(w, p), 1e-13);
        EXPECT_NEAR(w.momentum().squaredNorm(), 3 * p.rho * p.q, 1e-12);
    }
}

TEST(StatePoint, CoordsAreIsometric) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> N(0, 1);
    for (int n : {2, 3}) {
        for (int i = 0; i < 50; ++i) {
            StatePoint w;
            w.n = n;
            for (int k = 0; k < n; ++k) w.m[k] = N(rng);
            for (int k = 0; k < StatePoint::num_u(n); ++k) w.u[k] = N(rng);
            const double frob = w.momentum().squaredNorm() + w.U().squaredNorm();
            EXPECT_NEAR(w.coords().squaredNorm(), frob, 1e-12 * (1 + frob));
            const StatePoint r = StatePoint::from_coords(n, w.coords());
            EXPECT_LT((r.coords() - w.coords()).norm(), 1e-13);
            EXPECT_NEAR(w.U().trace(), 0.0, 1e-15);
        }
    }
}

TEST(HullMargin, Examples) {
    const ConstraintParams p(1.0, 0.5);
    EXPECT_NEAR(hull_margin(make2(0, 0, 0, 0), p), 0.5, 1e-15);
    EXPECT_NEAR(hull_margin(k_point(p, Eigen::Vector2d(1, 0)), p), 0.0, 1e-14);
    EXPECT_NEAR(hull_margin(make2(10, 0, 0, 0), p), -99.5, 1e-12);
}

TEST(HullMargin, AgreesWithEigenOracle) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> N(0, 1);
    std::uniform_real_distribution<double> U(0.1, 3.0);
    for (int n : {2, 3}) {
        for (int i = 0; i < 200; ++i) {
            const ConstraintParams p(U(rng), U(rng));
            StatePoint w;
            w.n = n;
            for (int k = 0; k < n; ++k) w.m[k] = N(rng);
            for (int k = 0; k < StatePoint::num_u(n); ++k) w.u[k] = N(rng);
            EXPECT_NEAR(hull_margin(w, p), margin_oracle(w, p), 1e-11);
        }
    }
}

TEST(DistToK, Examples) {
    const ConstraintParams p(1.0, 0.5);
    EXPECT_NEAR(dist_to_K(make2(0, 0, 0, 0), p), std::sqrt(1.5), 1e-12);
    for (double th : {0.0, 0.3, 2.0, -1.1, 3.14}) EXPECT_LT(dist_to_K(k_point_angle(p, th), p), 1e-10);
    const StatePoint w = make2(0.3, -0.2, 0.7, 0.1);
    EXPECT_NEAR(dist_to_K(w, {1.0, 0.0}), w.norm(), 1e-15);
}

TEST(DistToK, BruteForceAngles) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> N(0, 1);
    const ConstraintParams p(1.3, 0.8);
    constexpr int M = 1000000;
    std::vector<Eigen::Vector4d> ks(M);
    for (int k = 0; k < M; ++k) ks[k] = k_point_angle(p, 2 * M_PI * k / M).coords();
    for (int i = 0; i < 10; ++i) {
        const StatePoint w = make2(N(rng), N(rng), N(rng), N(rng));
        const Eigen::Vector4d c = w.coords();
        double best = INFINITY;
        for (const auto& k : ks) best = std::min(best, (c - k).squaredNorm());
        EXPECT_NEAR(dist_to_K(w, p), std::sqrt(best), 1e-6);
    }
}

TEST(DistToK, ThreeDimensionalBruteForce) {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> N(0, 1);
    const ConstraintParams p(0.9, 0.6);
    std::vector<Eigen::VectorXd> ks;
    const int M = 200;
    for (int i = 0; i <= M; ++i)
        for (int j = 0; j < 2 * M; ++j) {
            const double th = M_PI * i / M, ph = M_PI * j / M;
            ks.push_back(k_point(p, Eigen::Vector3d(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
                                                    std::cos(th)))
                             .coords());
        }
    for (int i = 0; i < 5; ++i) {
        StatePoint w;
        w.n = 3;
        for (int k = 0; k < 3; ++k) w.m[k] = N(rng);
        for (int k = 0; k < 5; ++k) w.u[k] = 0.5 * N(rng);
        const Eigen::VectorXd c = w.coords();
        double best = INFINITY;
        for (const auto& k : ks) best = std::min(best, (c - k).norm());
        const double d = dist_to_K(w, p);
        EXPECT_LE(d, best + 1e-12);
        EXPECT_GT(d, best - 1e-3);
    }
}

TEST(Lp, SmallKnownProblem) {
    // max x0 + x1 s.t. x0 + 2 x1 + s = 4, 3 x0 + x1 + t = 6
    Eigen::MatrixXd A(2, 4);
    A << 1, 2, 1, 0, 3, 1, 0, 1;
    Eigen::VectorXd b(2), c(4);
    b << 4, 6;
    c << 1, 1, 0, 0;
    const LpResult r = simplex_max(A, b, c);
    ASSERT_EQ(r.status, LpResult::Optimal);
    EXPECT_NEAR(r.value, 2.8, 1e-12);
    EXPECT_NEAR(r.x(0), 1.6, 1e-12);
    EXPECT_NEAR(r.x(1), 1.2, 1e-12);
    // strong duality
    EXPECT_NEAR(b.dot(r.dual), r.value, 1e-12);
}

TEST(Lp, DetectsInfeasible) {
    Eigen::MatrixXd A(1, 2);
    A << 1, 1;
    Eigen::VectorXd b(1), c(2);
    b << -1;
    c << 1, 0;
    EXPECT_EQ(simplex_max(A, b, c).status, LpResult::Infeasible);
}

TEST(SelectExtremePoints, RegularPentagonIsValid) {
    const ConstraintParams p(1.0, 0.5);
    std::vector<Eigen::VectorXd> pts;
    for (int k = 0; k < 5; ++k) pts.push_back(k_point_angle(p, 2 * M_PI * k / 5).coords());
    std::vector<double> w;
    const double s = lp_max_slack(pts, Eigen::Vector4d::Zero(), &w);
    EXPECT_NEAR(s, 0.2, 1e-12);
    Eigen::MatrixXd M(4, 5);
    for (int k = 0; k < 5; ++k) M.col(k) = pts[k];
    Eigen::MatrixXd C(4, 4);
    for (int k = 0; k < 4; ++k) C.col(k) = pts[k + 1] - pts[0];
    EXPECT_GT(Eigen::JacobiSVD<Eigen::MatrixXd>(C).singularValues().minCoeff(), 1e-8);
}

TEST(SelectExtremePoints, OriginTwoD) {
    const ConstraintParams p(1.0, 0.5);
    const SimplexDecomposition d = select_extreme_points(make2(0, 0, 0, 0), p, 1);
    ASSERT_EQ(d.vertices.size(), 5u);
    EXPECT_GT(d.slack, 0.0);
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    double wsum = 0;
    for (size_t i = 0; i < 5; ++i) {
        sum += d.weights[i] * d.vertices[i].coords();
        wsum += d.weights[i];
        EXPECT_GE(d.weights[i], d.slack - 1e-14);
        EXPECT_NEAR(d.vertices[i].momentum().squaredNorm(), 2 * p.rho * p.q, 1e-10);
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    EXPECT_LT(sum.norm(), 1e-10);
}

TEST(SelectExtremePoints, BoundaryTargetIsRejected) {
    const ConstraintParams p(1.0, 0.5);
    const StatePoint on = k_point_angle(p, 0.4) * 0.5 + k_point_angle(p, 1.9) * 0.5;
    EXPECT_NEAR(hull_margin(on, p), 0.0, 1e-12);
    EXPECT_THROW(select_extreme_points(on, p, 3), GeometryError);
}

TEST(SelectExtremePoints, RandomInteriorTargetsBothDimensions) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int n : {2, 3}) {
        const ConstraintParams p(1.4, 0.7);
        for (int i = 0; i < 20; ++i) {
            // random convex combination of K points is interior with probability one
            StatePoint t;
            t.n = n;
            double tot = 0;
            for (int k = 0; k < 12; ++k) {
                Eigen::VectorXd xi = Eigen::VectorXd::Zero(n);
                for (int c = 0; c < n; ++c) xi(c) = U(rng) - 0.5;
                const double w = U(rng);
                t = t + k_point(p, xi.normalized()) * w;
                tot += w;
            }
            t = t * (1.0 / tot);
            const SimplexDecomposition d = select_extreme_points(t, p, 100 + i);
            ASSERT_EQ(static_cast<int>(d.vertices.size()), n * (n + 3) / 2);
            EXPECT_GT(d.slack, 0.0);
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(t.coords().size());
            for (size_t k = 0; k < d.vertices.size(); ++k) {
                sum += d.weights[k] * d.vertices[k].coords();
                EXPECT_LT(k_relation_residual(d.vertices[k], p), 1e-10 * (1 + p.rho * p.q));
            }
            EXPECT_LT((sum - t.coords()).norm(), 1e-10 * (1 + t.norm()));
        }
    }
}

TEST(SelectExtremePoints, ValidUnderScalingMap) {
    const ConstraintParams p(2.5, 0.3);
    const StatePoint t = k_point_angle(p, 0.2) * 0.3 + k_point_angle(p, 2.2) * 0.3 + k_point_angle(p, 4.0) * 0.4;
    const SimplexDecomposition d = select_extreme_points(t, p, 9);
    const ConstraintParams pn(1.0, 0.5);
    const StatePoint tn = normalize_state(t, p);
    std::vector<Eigen::VectorXd> vn;
    for (const auto& v : d.vertices) {
        const StatePoint w = normalize_state(v, p);
        EXPECT_LT(k_relation_residual(w, pn), 1e-12);
        vn.push_back(w.coords());
    }
    EXPECT_GT(lp_max_slack(vn, tn.coords()), 0.0);
}

TEST(HullCharacterization, LpAgreesWithMargin) {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const ConstraintParams p(1.0, 0.5);
    int checked = 0;
    for (int i = 0; i < 300; ++i) {
        const StatePoint w = make2(1.2 * U(rng), 1.2 * U(rng), 0.7 * U(rng), 0.7 * U(rng));
        const double m = hull_margin(w, p);
        if (std::abs(m) <= 1e-6) continue;
        const double g = hull_gauge_lp(w, p, 200, i);
        EXPECT_EQ(m > 0, g > 1.0) << "margin " << m << " gauge " << g;
        ++checked;
    }
    EXPECT_GT(checked, 250);
}

TEST(WaveDirection, WorkedExample) {
    const ConstraintParams p(1.0, 0.5);
    const StatePoint w1 = k_point(p, Eigen::Vector2d(1, 0));
    const StatePoint w2 = k_point(p, Eigen::Vector2d(0, 1));
    const WaveDirection wd = wave_direction(w1, w2, 1.0);
    EXPECT_NEAR(wd.xi(0), 1 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(wd.xi(1), 1 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(wd.tau, -1 / std::sqrt(2.0), 1e-15);
    const Eigen::VectorXd r = wd.tau * wd.profile.momentum() + wd.profile.U() * wd.xi;
    EXPECT_LT(r.norm(), 1e-15);
}

TEST(WaveDirection, AntipodalHasZeroTau) {
    const ConstraintParams p(1.0, 0.5);
    const StatePoint w1 = k_point_angle(p, 0.7);
    StatePoint w2 = w1;
    w2.m = {-w1.m[0], -w1.m[1], 0};
    const WaveDirection wd = wave_direction(w1, w2, 1.0);
    EXPECT_NEAR(wd.tau, 0.0, 1e-15);
    EXPECT_NEAR(wd.xi.dot(w1.momentum()), 0.0, 1e-15);
}

TEST(WaveDirection, CoincidentPointsRejected) {
    const ConstraintParams p(1.0, 0.5);
    const StatePoint w = k_point_angle(p, 0.7);
    EXPECT_THROW(wave_direction(w, w, 1.0), GeometryError);
}

TEST(WaveDirection, InvariantsOnRandomPairs) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> U(0.0, 2 * M_PI);
    std::normal_distribution<double> N(0, 1);
    for (int n : {2, 3}) {
        for (int i = 0; i < 1000; ++i) {
            const ConstraintParams p(0.5 + U(rng), 0.1 + U(rng));
            Eigen::VectorXd a(n), b(n);
            for (int k = 0; k < n; ++k) {
                a(k) = N(rng);
                b(k) = N(rng);
            }
            const StatePoint w1 = k_point(p, a.normalized()), w2 = k_point(p, b.normalized());
            const WaveDirection wd = wave_direction(w1, w2, p.rho);
            const Eigen::VectorXd nb = wd.profile.momentum();
            EXPECT_NEAR(wd.xi.norm(), 1.0, 1e-14);
            EXPECT_LE(std::abs(wd.xi.dot(nb)), 1e-12 * nb.norm());
            const Eigen::VectorXd r = wd.tau * nb + wd.profile.U() * wd.xi;
            EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-12 * (std::abs(wd.tau) * nb.norm() + wd.profile.U().norm()));
        }
    }
}

TEST(PlanWaveStep, PentagonOrigin) {
    const ConstraintParams p(1.0, 0.5);
    SimplexDecomposition d;
    for (int k = 0; k < 5; ++k) d.vertices.push_back(k_point_angle(p, 2 * M_PI * k / 5));
    d.weights.assign(5, 0.2);
    d.slack = 0.2;
    const WaveStep s = plan_wave_step(make2(0, 0, 0, 0), d, 0.1);
    EXPECT_GT(s.mu1, 0.0);
    EXPECT_GT(s.mu2, 0.0);
    EXPECT_NEAR(s.mu1 + s.mu2, 1.0, 1e-15);
    EXPECT_LT((s.w1 * s.mu1 + s.w2 * s.mu2).norm(), 1e-14);
    for (const StatePoint& e : {s.w1, s.w2}) {
        EXPECT_GT(hull_margin(e, p), 0.0);
        const auto mu = barycentric(e, d);
        EXPECT_GE(*std::min_element(mu.begin(), mu.end()), 0.05 - 1e-12);
    }
    // the segment is parallel to a K difference, hence a Lambda direction
    const WaveDirection wd = wave_direction(d.vertices[s.vi], d.vertices[s.vj], p.rho);
    const StatePoint seg = s.w2 - s.w1;
    const Eigen::VectorXd r = wd.tau * seg.momentum() + seg.U() * wd.xi;
    EXPECT_LT(r.norm(), 1e-13);
}

TEST(PlanWaveStep, CollinearMidpoint) {
    const ConstraintParams p(1.0, 0.5);
    SimplexDecomposition d;
    for (int k = 0; k < 5; ++k) d.vertices.push_back(k_point_angle(p, 2 * M_PI * k / 5 + 0.1));
    const StatePoint w = d.vertices[0] * 0.5 + d.vertices[1] * 0.5;
    // margin 0 is invalid; with every other weight zero any positive margin fails
    EXPECT_THROW(plan_wave_step(w, d, 0.01), GeometryError);
    const StatePoint wi = d.vertices[0] * 0.48 + d.vertices[1] * 0.48 + d.vertices[2] * 0.02 +
                          d.vertices[3] * 0.01 + d.vertices[4] * 0.01;
    const WaveStep s = plan_wave_step(wi, d, 0.01);
    EXPECT_EQ(std::min(s.vi, s.vj), 0);
    EXPECT_EQ(std::max(s.vi, s.vj), 1);
    EXPECT_NEAR(s.mu1, 0.5, 1e-12);
}

TEST(PlanWaveStep, SlackBelowMarginRejected) {
    const ConstraintParams p(1.0, 0.5);
    SimplexDecomposition d;
    for (int k = 0; k < 5; ++k) d.vertices.push_back(k_point_angle(p, 2 * M_PI * k / 5));
    EXPECT_THROW(plan_wave_step(make2(0, 0, 0, 0), d, 0.3), GeometryError);
}

TEST(SamplingRank, FullAffineRankOnNeighbourhoods) {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const ConstraintParams p(1.0, 0.5);
    for (double delta : {0.3, 0.1, 0.03}) {
        const StatePoint w0 = k_point_angle(p, 0.9);
        // the curve has unit-speed scale ~ |k'|; sample angles giving |w - w0| < delta
        const double speed = k_point_angle(p, 0.9 + 1e-6).coords().operator-(w0.coords()).norm() / 1e-6;
        Eigen::MatrixXd S(4, 1000);
        for (int i = 0; i < 1000; ++i) {
            const StatePoint w = k_point_angle(p, 0.9 + 0.9 * delta / speed * U(rng));
            EXPECT_LT((w - w0).norm(), delta);
            S.col(i) = w.coords();
        }
        const Eigen::VectorXd mean = S.rowwise().mean();
        S.colwise() -= mean;
        const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(S).singularValues();
        EXPECT_GT(sv(3), 1e-8 * sv(0)) << "delta " << delta;
    }
}
