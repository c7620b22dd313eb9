#include "cilab/operators.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cilab;

namespace {

double max_diff(const GridField& a, const GridField& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

GridField mean_removed(const GridField& f) {
    GridField g = f;
    for (int c = 0; c < f.components; ++c) {
        const double m = f.mean(c);
        for (std::size_t i = 0; i < f.grid.nodes(); ++i) g.data[i * f.components + c] -= m;
    }
    return g;
}

}  // namespace

TEST(TorusGrid, Validates) {
    EXPECT_THROW(TorusGrid(12, 1.0), OperatorError);
    EXPECT_THROW(TorusGrid(48, 1.0), OperatorError);
    EXPECT_THROW(TorusGrid(32, 0.0), OperatorError);
    EXPECT_NO_THROW(TorusGrid(16, 2.0));
}

TEST(Poisson, SingleMode) {
    const double L = 3.0;
    const TorusGrid g(64, L);
    ScalarField f(g, 1);
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) f(i, j) = std::cos(2 * M_PI * g.x(i) / L);
    const ScalarField psi = poisson_solve(f, true);
    const double c = -(L / (2 * M_PI)) * (L / (2 * M_PI));
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) EXPECT_NEAR(psi(i, j), c * std::cos(2 * M_PI * g.x(i) / L), 1e-14);
}

TEST(Poisson, ConstantGivesZero) {
    const TorusGrid g(32, 1.0);
    ScalarField f(g, 1);
    for (double& v : f.data) v = 3.5;
    double m = 0;
    const ScalarField psi = poisson_solve(f, false, &m);
    EXPECT_NEAR(m, 3.5, 1e-14);
    EXPECT_LE(psi.sup_norm(), 1e-14);
}

TEST(Poisson, RandomRoundTrip) {
    const TorusGrid g(64, 2.0);
    ScalarField f(g, 1);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(-1, 1);
    for (double& v : f.data) v = U(rng);
    const ScalarField psi = poisson_solve(f, false);
    EXPECT_NEAR(psi.mean(), 0.0, 1e-14);
    EXPECT_LE(max_diff(spectral_laplacian(psi), mean_removed(f)), 1e-10 * f.sup_norm());
}

TEST(RTorus, ZeroInZeroOut) {
    const TorusGrid g(32, 1.0);
    EXPECT_EQ(r_torus(VectorField(g, 2)).sup_norm(), 0.0);
}

TEST(RTorus, ClosedFormCosine) {
    const TorusGrid g(128, 2 * M_PI);
    VectorField f(g, 2);
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) f(i, j, 0) = std::cos(g.x(i));
    const DeviatorField R = r_torus(f);
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) {
            EXPECT_NEAR(R(i, j, 0), std::sin(g.x(i)), 1e-12);
            EXPECT_NEAR(R(i, j, 1), 0.0, 1e-12);
            EXPECT_NEAR(R(i, j, 2), -std::sin(g.x(i)), 1e-12);
        }
}

TEST(RTorus, RandomDivergenceRoundTrip) {
    const TorusGrid g(128, 1.0);
    for (int s = 0; s < 3; ++s) {
        const VectorField f = band_limited_random(g, 2, 20, 100 + s);
        const DeviatorField R = r_torus(f);
        EXPECT_LE(max_diff(deviator_divergence(R), mean_removed(f)), 1e-10 * f.sup_norm());
        EXPECT_LE(max_trace(R), 1e-12 * R.sup_norm());
    }
}

TEST(RTorus, Linearity) {
    const TorusGrid g(64, 1.0);
    const VectorField f = band_limited_random(g, 2, 10, 1), h = band_limited_random(g, 2, 10, 2);
    VectorField c(g, 2);
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = 2.5 * f.data[i] - 0.7 * h.data[i];
    const DeviatorField Rf = r_torus(f), Rh = r_torus(h), Rc = r_torus(c);
    double m = 0;
    for (std::size_t i = 0; i < Rc.data.size(); ++i) m = std::max(m, std::abs(Rc.data[i] - 2.5 * Rf.data[i] + 0.7 * Rh.data[i]));
    EXPECT_LE(m, 1e-12 * (1 + Rc.sup_norm()));
}

TEST(RTorus, TranslationEquivariance) {
    const TorusGrid g(64, 1.0);
    const VectorField f = band_limited_random(g, 2, 12, 9);
    VectorField s(g, 2);
    const int d1 = 5, d2 = 17;
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j)
            for (int c = 0; c < 2; ++c) s(i, j, c) = f((i + d1) % g.N, (j + d2) % g.N, c);
    const DeviatorField Rf = r_torus(f), Rs = r_torus(s);
    double m = 0;
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j)
            for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(Rs(i, j, c) - Rf((i + d1) % g.N, (j + d2) % g.N, c)));
    EXPECT_LE(m, 1e-10 * Rf.sup_norm());
}

TEST(RTorus, SuperAlgebraicConvergence) {
    auto solve = [](int N) {
        const TorusGrid g(N, 1.0);
        VectorField f(g, 2);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                const double x = g.x(i), y = g.x(j);
                f(i, j, 0) = std::exp(std::sin(2 * M_PI * x)) * std::cos(2 * M_PI * y);
                f(i, j, 1) = 1.0 / (1.5 + std::cos(2 * M_PI * (x + y)));
            }
        return r_torus(f);
    };
    const DeviatorField ref = solve(128);
    std::vector<double> e;
    for (int N : {16, 32}) {
        const DeviatorField R = solve(N);
        const int step = 128 / N;
        double m = 0;
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j)
                for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(R(i, j, c) - ref(i * step, j * step, c)));
        e.push_back(m);
    }
    EXPECT_GT(e[0] / e[1], 1e2);
}

TEST(Leray, GradientProjectsToMean) {
    const TorusGrid g(64, 1.0);
    const ScalarField phi = band_limited_random(g, 1, 10, 4);
    VectorField v = spectral_gradient(phi);
    for (std::size_t i = 0; i < g.nodes(); ++i) v.data[2 * i] += 0.3;
    const VectorField P = leray_project(v);
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        EXPECT_NEAR(P.data[2 * i], 0.3, 1e-12);
        EXPECT_NEAR(P.data[2 * i + 1], 0.0, 1e-12);
    }
}

TEST(Leray, DivergenceFreeUnchangedAndIdempotent) {
    const TorusGrid g(64, 1.0);
    const VectorField v = band_limited_random(g, 2, 12, 6);
    const VectorField P = leray_project(v);
    EXPECT_LE(spectral_divergence(P).sup_norm(), 1e-10 * v.sup_norm());
    EXPECT_LE(max_diff(leray_project(P), P), 1e-10 * v.sup_norm());
}

TEST(Neumann, ZeroGivesZero) {
    const CubeField f(CubeGrid{16, 0.5, {0, 0}});
    EXPECT_EQ(neumann_poisson_cube(f).psi.sup_norm(), 0.0);
}

TEST(Neumann, SingleCosineMode) {
    const double r = 0.7;
    CubeField f(CubeGrid{32, r, {1.0, -2.0}});
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) f(i, j) = std::cos(M_PI * (i + 0.5) * f.grid.spacing() / r);
    const NeumannResult res = neumann_poisson_cube(f);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            EXPECT_NEAR(res.psi(i, j), -(r / M_PI) * (r / M_PI) * std::cos(M_PI * (i + 0.5) * f.grid.spacing() / r), 1e-14);
}

TEST(Neumann, RandomFluxAndResidual) {
    CubeField f(CubeGrid{64, 0.25, {0, 0}});
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-1, 1);
    for (double& v : f.data) v = U(rng);
    const NeumannResult res = neumann_poisson_cube(f);
    EXPECT_LE(res.residual, 1e-8 * f.sup_norm());
    const auto grad = cube_gradient(res.psi);
    const double gsup = std::max(grad[0].sup_norm(), grad[1].sup_norm());
    EXPECT_LE(res.normal_derivative, 1e-8 * gsup);
    EXPECT_LE(std::abs(res.flux), 1e-8);
}

TEST(Neumann, GradientOfKnownField) {
    const double r = 2.0;
    CubeField p(CubeGrid{32, r, {0, 0}});
    const double h = p.grid.spacing();
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            p(i, j) = std::cos(M_PI * (i + 0.5) * h / r) * std::cos(3 * M_PI * (j + 0.5) * h / r);
    const auto g = cube_gradient(p);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
            const double x = (i + 0.5) * h, y = (j + 0.5) * h;
            EXPECT_NEAR(g[0](i, j), -M_PI / r * std::sin(M_PI * x / r) * std::cos(3 * M_PI * y / r), 1e-12);
            EXPECT_NEAR(g[1](i, j), -3 * M_PI / r * std::cos(M_PI * x / r) * std::sin(3 * M_PI * y / r), 1e-12);
        }
}
