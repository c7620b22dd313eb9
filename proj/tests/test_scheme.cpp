#include "cilab/scheme.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cilab;

namespace {

const Eigen::Matrix2d J = (Eigen::Matrix2d() << 0, 1, -1, 0).finished();

std::vector<int> halves(const TorusGrid& g) {
    std::vector<int> l(g.nodes());
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) l[static_cast<std::size_t>(i) * g.N + j] = g.x(i) < 0.5 * g.L ? 0 : 1;
    return l;
}

std::vector<double> slices(int n) {
    std::vector<double> t;
    for (int k = 0; k < n; ++k) t.push_back(k / double(n - 1));
    return t;
}

SubsolutionState two_regions(int N, int nt) {
    const TorusGrid g(N, 1.0);
    return build_piecewise_constant(g, halves(g), {1.0, 2.0}, 2.0, PressureLaw(0.5, 2.0), J, slices(nt));
}

double l2_difference(const SubsolutionState& a, const SubsolutionState& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.slices(); ++k) {
        for (std::size_t i = 0; i < a.m[k].data.size(); ++i) s += std::pow(a.m[k].data[i] - b.m[k].data[i], 2);
        for (std::size_t i = 0; i < a.U[k].data.size(); ++i) s += std::pow(a.U[k].data[i] - b.U[k].data[i], 2);
    }
    return std::sqrt(s);
}

}  // namespace

TEST(Scheme, ConfigValidation) {
    IterationConfig c;
    EXPECT_NO_THROW(c.validate());
    c.kappa = 0.0;
    EXPECT_THROW(c.validate(), SchemeError);
    c = IterationConfig{};
    c.windows = {0.5, 0.9};
    EXPECT_THROW(c.validate(), SchemeError);
    c = IterationConfig{};
    c.test_gradient_bounds.clear();
    EXPECT_THROW(c.validate(), SchemeError);
}

TEST(Scheme, RegionMeasureAndInitialDistance) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    SchemeState st = prepare_region(s, c);
    // D = Omega_0 x (0, 1): half the torus, three interior slices
    EXPECT_NEAR(st.measure, 0.5, 1e-14);
    EXPECT_EQ(st.interior, 3u * 8u * 16u);
    ASSERT_EQ(st.window_measure.size(), 3u);
    EXPECT_NEAR(st.window_measure.back(), 0.5, 1e-14);
    // (0, 0) against K_{1, 3/2}: |m|^2 = 2 rho q = 3 and |U|^2 = 2 q^2 = 4.5
    for (const auto& n : st.nodes) EXPECT_NEAR(node_distance(n, n.particles[0]), std::sqrt(7.5), 1e-9);
    EXPECT_NEAR(st.lip0, 0.0, 1e-15);
}

TEST(Scheme, ZeroStagesIsIdentity) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.max_stages = 0;
    const IterationResult r = iterate(s, c);
    EXPECT_TRUE(r.error.empty());
    EXPECT_TRUE(r.reports.empty());
    EXPECT_EQ(l2_difference(r.state, s), 0.0);
}

TEST(Scheme, StateOnConstraintSetActivatesNoCubes) {
    const TorusGrid g(16, 1.0);
    const auto s = build_piecewise_constant(g, std::vector<int>(g.nodes(), 0), {1.0}, 0.5, PressureLaw(0.5, 2.0), J,
                                            slices(5));
    IterationConfig c;
    c.max_stages = 2;
    const IterationResult r = iterate(s, c);
    EXPECT_TRUE(r.error.empty());
    ASSERT_EQ(r.reports.size(), 2u);
    for (const auto& rep : r.reports) {
        EXPECT_EQ(rep.cubes, 0u);
        EXPECT_EQ(rep.dist_integral.value, 0.0);
    }
    EXPECT_EQ(l2_difference(r.state, s), 0.0);
}

TEST(Scheme, OneStageMeetsHalfInitialDistance) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    SchemeState st = prepare_region(s, c);
    const double I0 = st.measure * std::sqrt(7.5);
    StageReport rep;
    one_stage(st, 1, 0.5 * I0, c, rep);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& node : st.nodes)
        for (const auto& p : node.particles) {
            sum += node_distance(node, p);
            ++n;
        }
    EXPECT_LE(st.measure * sum / n, 0.5 * I0);
    EXPECT_GT(rep.cubes, 0u);
    EXPECT_LE(rep.atom_residual, 1e-9);
}

TEST(Scheme, OneStageWithLooseTargetDoesNothing) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    SchemeState st = prepare_region(s, c);
    StageReport rep;
    one_stage(st, 1, 10.0, c, rep);
    EXPECT_EQ(rep.cubes, 0u);
    EXPECT_EQ(l2_difference(st.snapshot(), s), 0.0);
}

TEST(Scheme, SixStagesContractAndKeepMonitors) {
    const auto s = two_regions(32, 9);
    IterationConfig c;
    const IterationResult r = iterate(s, c);
    ASSERT_TRUE(r.error.empty()) << r.error;
    ASSERT_EQ(r.reports.size(), 6u);
    for (std::size_t k = 0; k < r.reports.size(); ++k) {
        const StageReport& rep = r.reports[k];
        EXPECT_NEAR(rep.eps_target, std::min(std::exp2(-(int)k - 1), 0.5 * rep.dist_before_d1), 1e-15);
        EXPECT_LE(rep.dist_integral.value, rep.eps_target + rep.quad_tol);
        EXPECT_TRUE(rep.contraction_ok);
        EXPECT_TRUE(rep.l2_ok);
        EXPECT_TRUE(rep.pairing_ok) << rep.pairing_bound << " " << rep.pairing_target;
        EXPECT_TRUE(rep.weak_ok);
        EXPECT_GT(rep.min_weight, 0.0);
        EXPECT_LE(rep.atom_residual, 1e-9);
        if (k > 0) {
            EXPECT_NEAR(rep.dist_before_d1, r.reports[k - 1].dist_integral.value, 1e-15);
            for (std::size_t j = 0; j < rep.l2_norms.size(); ++j)
                EXPECT_GE(rep.l2_norms[j].value - r.reports[k - 1].l2_norms[j].value,
                          -3.0 * rep.l2_increment[j].stderr_);
        }
    }
    EXPECT_LE(r.reports.back().dist_integral.value, std::exp2(-6) * r.reports.front().dist_before_d1 +
                                                        r.reports.back().quad_tol);
}

TEST(Scheme, SupportStaysInsideRegion) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.max_stages = 3;
    const IterationResult r = iterate(s, c);
    ASSERT_TRUE(r.error.empty()) << r.error;
    const int N = s.grid.N;
    for (std::size_t k = 0; k < s.slices(); ++k)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                const bool inside = s.region_at(i, j).kind != RegionKind::inert && k > 0 && k + 1 < s.slices();
                if (inside) continue;
                for (int c2 = 0; c2 < 2; ++c2) EXPECT_EQ(r.state.m[k](i, j, c2), s.m[k](i, j, c2));
                for (int c3 = 0; c3 < 3; ++c3) EXPECT_EQ(r.state.U[k](i, j, c3), s.U[k](i, j, c3));
            }
}

TEST(Scheme, SeedsGiveDistinctOutputs) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.max_stages = 3;
    const IterationResult a = iterate(s, c);
    c.seed = 2;
    const IterationResult b = iterate(s, c);
    ASSERT_TRUE(a.error.empty() && b.error.empty());
    // node-sum L2 difference against the sampled quadrature floor of the last stage
    const double h = s.grid.spacing();
    const double diff = l2_difference(a.state, b.state) * h * std::sqrt(1.0 / 3.0);
    EXPECT_GT(diff, 10.0 * a.reports.back().quad_tol);
}

TEST(Scheme, DeterministicAndThreadIndependent) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.max_stages = 2;
    const IterationResult a = iterate(s, c);
    const IterationResult b = iterate(s, c);
    c.threads = 3;
    const IterationResult d = iterate(s, c);
    EXPECT_EQ(l2_difference(a.state, b.state), 0.0);
    EXPECT_EQ(l2_difference(a.state, d.state), 0.0);
    EXPECT_EQ(stage_csv_row(a.reports[1]).substr(0, 60), stage_csv_row(d.reports[1]).substr(0, 60));
}

TEST(Scheme, RefinedQuadratureAgrees) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.max_stages = 2;
    const IterationResult a = iterate(s, c);
    c.quad_refine = 4;
    const IterationResult b = iterate(s, c);
    ASSERT_TRUE(a.error.empty() && b.error.empty());
    EXPECT_LT(b.reports[0].dist_integral.stderr_, a.reports[0].dist_integral.stderr_);
    EXPECT_TRUE(b.reports[1].contraction_ok);
}

TEST(Census, InertRegionIsOneState) {
    const auto s = two_regions(16, 5);
    const Census c = state_census(s, 1, 1e-3);
    ASSERT_EQ(c.clusters.size(), 1u);
    EXPECT_EQ(c.clusters[0].fraction, 1.0);
    EXPECT_EQ(c.clusters[0].rho, 2.0);
    EXPECT_EQ(c.clusters[0].w.norm(), 0.0);
    EXPECT_EQ(c.tv_distance, -1.0);
}

TEST(Census, ActiveRegionApproachesFiveStates) {
    const auto s = two_regions(32, 9);
    const double amp = region_amplitude(s.regions[0]);
    EXPECT_NEAR(amp, std::sqrt(7.5), 1e-9);
    IterationConfig c;
    c.max_stages = 2;
    const IterationResult r2 = iterate(s, c);
    c.max_stages = 6;
    const IterationResult r6 = iterate(s, c);
    const Census c2 = state_census(r2.state, 0, 1e-2 * amp, 0.0, 1.0);
    const Census c6 = state_census(r6.state, 0, 1e-2 * amp, 0.0, 1.0);
    EXPECT_EQ(c6.clusters.size(), 5u);
    EXPECT_GE(c6.captured, 0.9);
    EXPECT_LT(c6.tv_distance, c2.tv_distance);
    EXPECT_LE(c6.tv_distance, 0.15);
    double sum = 0.0;
    for (double m : c6.caratheodory) sum += m;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (const auto& cl : c6.clusters) EXPECT_LE(cl.vertex_distance, 1e-2 * amp);
}

TEST(InitialData, EmptyInitialSliceRejected) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.t0 = -0.5;
    EXPECT_THROW(iterate_with_initial_data(s, c), SchemeError);
}

TEST(InitialData, SaturationResidualDecreases) {
    const TorusGrid g(16, 1.0);
    ScalarField rho0(g, 1);
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) rho0(i, j) = 1.0 + 1e-4 * std::cos(2 * M_PI * g.x(i));
    PerturbedDensityOptions o;
    for (int k = 0; k <= 8; ++k) o.times.push_back(0.1 * k);
    const auto s = build_perturbed_density(rho0, PressureLaw(1.0, 2.0), -Eigen::Matrix2d::Identity(), o);
    IterationConfig c;
    c.max_stages = 4;
    const IterationResult r = iterate_with_initial_data(s, c);
    ASSERT_TRUE(r.error.empty()) << r.error;
    ASSERT_EQ(r.reports.size(), 4u);
    for (std::size_t k = 1; k < r.reports.size(); ++k)
        EXPECT_LT(r.reports[k].saturation_median, r.reports[k - 1].saturation_median);
    EXPECT_EQ(r.m_diamond.time, 0.0);
    for (std::size_t k = 0; k < r.reports.size(); ++k) EXPECT_TRUE(r.reports[k].contraction_ok);
}

TEST(StageCsv, HeaderMatchesRow) {
    const auto s = two_regions(16, 5);
    IterationConfig c;
    c.max_stages = 1;
    const IterationResult r = iterate(s, c);
    const std::string h = stage_csv_header(3), row = stage_csv_row(r.reports[0]);
    EXPECT_EQ(std::count(h.begin(), h.end(), ','), std::count(row.begin(), row.end(), ','));
}
