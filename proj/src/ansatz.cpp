#include "cilab/ansatz.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace cilab {

PressureLaw::PressureLaw(double a_, double gamma_) : a(a_), gamma(gamma_) {
    if (!(a > 0.0) || !(gamma > 1.0)) throw AnsatzError("pressure law needs a > 0 and gamma > 1");
}

double PressureLaw::p(double rho) const { return a * std::pow(rho, gamma); }
double PressureLaw::dp(double rho) const { return a * gamma * std::pow(rho, gamma - 1.0); }
double PressureLaw::internal_energy(double rho) const { return a * std::pow(rho, gamma) / (gamma - 1.0); }
double PressureLaw::dI(double rho) const { return a * gamma * std::pow(rho, gamma - 1.0) / (gamma - 1.0); }

double beta_of(const Eigen::Matrix2d& B) {
    const Eigen::Matrix2d S = -0.5 * (B + B.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(S);
    return std::max(0.0, es.eigenvalues().maxCoeff());
}

TimeCutoff::TimeCutoff(double support, double bump_plateau, double scale)
    : support_(support), scale_(scale), bump_(plateau_ramp(bump_plateau)) {
    if (!(support > 0.0 && support < 1.0) || !(scale > 0.0)) throw AnsatzError("time cutoff: bad support or scale");
    integral_ = bump_.antiderivative();
    total_ = bump_.integral();
}

double TimeCutoff::eval(double t, int j) const {
    const double c = support_ * scale_;
    const double a = std::abs(t);
    if (a >= c) return 0.0;
    const double u = a / c - 0.5;
    if (j == 0) return 1.0 - integral_(u) / total_;
    const double sgn = (t < 0.0 && (j % 2 == 1)) ? -1.0 : 1.0;
    return -sgn * bump_.eval(u, j - 1) / total_ / std::pow(c, j);
}

double TimeCutoff::max_slope() const {
    double m = 0.0;
    const double c = support_ * scale_;
    for (int i = 0; i <= 2000; ++i) m = std::max(m, std::abs(eval(c * i / 2000.0, 1)));
    return m;
}

StatePoint SubsolutionState::point(std::size_t k, int i1, int i2) const {
    StatePoint w;
    w.n = 2;
    w.m[0] = m[k](i1, i2, 0);
    w.m[1] = m[k](i1, i2, 1);
    w.u[0] = U[k](i1, i2, 0);
    w.u[1] = U[k](i1, i2, 1);
    return w;
}

ConstraintParams SubsolutionState::params(std::size_t k, int i1, int i2) const {
    ConstraintParams p;
    p.rho = rho[k](i1, i2);
    p.q = q[k](i1, i2);
    return p;
}

const RegionInfo& SubsolutionState::region_at(int i1, int i2) const {
    return regions[region[static_cast<std::size_t>(i1) * grid.N + i2]];
}

bool SubsolutionState::in_strict_region(std::size_t k, int i1, int i2) const {
    return times[k] > strict_from && region_at(i1, i2).kind != RegionKind::inert;
}

double min_strictness_margin(const SubsolutionState& s) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < s.slices(); ++k)
        for (int i = 0; i < s.grid.N; ++i)
            for (int j = 0; j < s.grid.N; ++j) {
                if (!s.in_strict_region(k, i, j)) continue;
                const RegionInfo& r = s.region_at(i, j);
                const StatePoint w = s.point(k, i, j);
                if (r.kind == RegionKind::finite && s.times[k] >= s.finite_from) {
                    const std::vector<double> mu = barycentric(w, r.points);
                    best = std::min(best, *std::min_element(mu.begin(), mu.end()));
                } else {
                    best = std::min(best, hull_margin(w, s.params(k, i, j)));
                }
            }
    return best;
}

LinearResiduals linear_residuals(const SubsolutionState& s) {
    LinearResiduals r;
    r.scale = 0.0;
    if (s.rho_t.size() != s.slices() || s.m_t.size() != s.slices())
        throw AnsatzError("linear_residuals: state has no analytic time derivatives");
    for (std::size_t k = 0; k < s.slices(); ++k) {
        const ScalarField div_m = spectral_divergence(s.m[k]);
        ScalarField pq(s.grid, 1);
        for (std::size_t i = 0; i < s.grid.nodes(); ++i) pq.data[i] = s.plaw.p(s.rho[k].data[i]) + s.q[k].data[i];
        const VectorField gpq = spectral_gradient(pq);
        const VectorField divU = deviator_divergence(s.U[k]);
        for (std::size_t i = 0; i < s.grid.nodes(); ++i) {
            r.continuity = std::max(r.continuity, std::abs(s.rho_t[k].data[i] + div_m.data[i]));
            r.scale = std::max({r.scale, std::abs(s.rho_t[k].data[i]), std::abs(div_m.data[i])});
            for (int c = 0; c < 2; ++c) {
                const double Bm = s.B(c, 0) * s.m[k].data[2 * i] + s.B(c, 1) * s.m[k].data[2 * i + 1];
                const double terms[4] = {s.m_t[k].data[2 * i + c], divU.data[2 * i + c], gpq.data[2 * i + c], -Bm};
                r.momentum = std::max(r.momentum, std::abs(terms[0] + terms[1] + terms[2] + terms[3]));
                for (double t : terms) r.scale = std::max(r.scale, std::abs(t));
            }
        }
    }
    if (r.scale == 0.0) r.scale = 1.0;
    return r;
}

namespace {

void allocate_slices(SubsolutionState& s) {
    const std::size_t K = s.times.size();
    s.rho.assign(K, ScalarField(s.grid, 1, "rho"));
    s.q.assign(K, ScalarField(s.grid, 1, "q"));
    s.m.assign(K, VectorField(s.grid, 2, "m"));
    s.U.assign(K, DeviatorField(s.grid, 3, "U"));
    s.rho_t.assign(K, ScalarField(s.grid, 1, "rho_t"));
    s.m_t.assign(K, VectorField(s.grid, 2, "m_t"));
    for (std::size_t k = 0; k < K; ++k)
        for (auto* f : {&s.rho[k], &s.q[k], &s.m[k], &s.U[k], &s.rho_t[k], &s.m_t[k]}) f->time = s.times[k];
}

RegionInfo make_region(int label, double rho, double q, std::uint64_t seed) {
    RegionInfo r;
    r.label = label;
    r.rho = rho;
    r.q = std::max(q, 0.0);
    if (q > 1e-12 * std::max(1.0, rho)) {
        r.kind = RegionKind::finite;
        r.points = select_extreme_points(StatePoint{}, ConstraintParams(rho, q), seed);
    } else {
        r.kind = RegionKind::inert;
        r.q = 0.0;
    }
    return r;
}

std::vector<double> default_times(double T, double dt) {
    std::vector<double> t;
    const int n = static_cast<int>(std::lround(T / dt));
    for (int k = 0; k <= n; ++k) t.push_back(k * dt);
    return t;
}

}  // namespace

SubsolutionState build_piecewise_constant(const TorusGrid& g, const std::vector<int>& labels,
                                          const std::vector<double>& densities, double chi, const PressureLaw& plaw,
                                          const Eigen::Matrix2d& B, const std::vector<double>& times,
                                          std::uint64_t seed) {
    if (labels.size() != g.nodes()) throw AnsatzError("piecewise constant: label map size mismatch");
    if (times.empty()) throw AnsatzError("piecewise constant: no time slices");
    double pmax = 0.0;
    for (double r : densities) {
        if (!(r > 0.0) || !std::isfinite(r)) throw AnsatzError("piecewise constant: densities must be positive");
        pmax = std::max(pmax, plaw.p(r));
    }
    if (chi < pmax * (1.0 - 1e-14))
        throw AnsatzError("piecewise constant: chi " + std::to_string(chi) + " below max pressure " +
                          std::to_string(pmax));
    for (int l : labels)
        if (l < 0 || l >= static_cast<int>(densities.size())) throw AnsatzError("piecewise constant: label out of range");

    SubsolutionState s;
    s.kind = "piecewise_constant";
    s.grid = g;
    s.times = times;
    s.region = labels;
    s.plaw = plaw;
    s.B = B;
    s.strict_from = -1.0;
    for (std::size_t i = 0; i < densities.size(); ++i)
        s.regions.push_back(make_region(static_cast<int>(i), densities[i], chi - plaw.p(densities[i]), seed + i));
    allocate_slices(s);
    for (std::size_t k = 0; k < times.size(); ++k)
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const RegionInfo& r = s.regions[labels[i]];
            s.rho[k].data[i] = r.rho;
            s.q[k].data[i] = r.q;
        }
    s.chi.assign(times.size(), chi);
    s.diagnostics["chi"] = chi;
    s.diagnostics["beta"] = beta_of(B);
    return s;
}

double ChiCurve::at(double time) const {
    if (t.empty()) return 0.0;
    if (time <= t.front()) return chi.front();
    if (time >= t.back()) return chi.back();
    const auto it = std::upper_bound(t.begin(), t.end(), time);
    const std::size_t i = static_cast<std::size_t>(it - t.begin()) - 1;
    const double h = t[i + 1] - t[i], s = (time - t[i]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * chi[i] + h10 * h * dchi[i] + h01 * chi[i + 1] + h11 * h * dchi[i + 1];
}

double ChiCurve::derivative_at(double time) const {
    if (t.empty() || time < t.front() || time > t.back()) return 0.0;
    if (time == t.back()) return dchi.back();
    const auto it = std::upper_bound(t.begin(), t.end(), time);
    const std::size_t i = static_cast<std::size_t>(it - t.begin()) - 1;
    const double h = t[i + 1] - t[i], s = (time - t[i]) / h;
    const double d00 = 6 * s * (s - 1) / h, d10 = (1 - s) * (1 - 3 * s), d01 = -d00, d11 = s * (3 * s - 2);
    return d00 * chi[i] + d10 * dchi[i] + d01 * chi[i + 1] + d11 * dchi[i + 1];
}

namespace {

double chi_rhs(const ChiParams& p, double c) {
    const double x = std::max(c, 0.0), r = std::sqrt(x);
    double v;
    if (p.mode == ChiMode::general_source)
        v = -2.0 * p.beta * x - p.c0 * (x * r + x + r + 1.0) * p.eps;
    else
        v = -p.C[3] * p.varrho * x * r - p.C[2] * x - p.C[1] * p.varrho * r - p.C[0];
    return p.rate_factor * v;
}

double chi_floor(const ChiParams& p, const TimeCutoff& h, double t) {
    if (p.mode == ChiMode::general_source) {
        const double h0 = h.eval(t, 0), h1 = h.eval(t, 1), h2 = h.eval(t, 2);
        return p.floor_constant * (h1 * h1 * p.eps + std::abs(h1) + std::abs(h2) + h0) * p.eps;
    }
    const double extra = t < p.T ? p.floor_constant * p.theta * p.theta / (p.T * p.T) : 0.0;
    return p.rho_hat_pressure + extra;
}

/// RK4 samples on [0, T] with step h; stops at the first non-positive value.
void rk4(const ChiParams& p, double h, std::vector<double>& ts, std::vector<double>& xs) {
    const int n = static_cast<int>(std::lround(p.T / h));
    ts.assign(1, 0.0);
    xs.assign(1, p.chi0);
    double x = p.chi0;
    for (int i = 0; i < n; ++i) {
        const double k1 = chi_rhs(p, x), k2 = chi_rhs(p, x + 0.5 * h * k1), k3 = chi_rhs(p, x + 0.5 * h * k2),
                     k4 = chi_rhs(p, x + h * k3);
        x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        ts.push_back((i + 1) * h);
        xs.push_back(x);
        if (!(x > 0.0)) break;
    }
}

}  // namespace

ChiCurve solve_chi(const ChiParams& p, const TimeCutoff& h, bool throw_on_fail) {
    if (!(p.chi0 > 0.0) || !(p.T > 0.0) || !(p.step > 0.0) || p.eps < 0.0 || p.beta < 0.0)
        throw AnsatzError("solve_chi: parameters must be positive");
    ChiCurve c;
    rk4(p, p.step, c.t, c.chi);
    std::vector<double> t2, x2;
    rk4(p, 0.5 * p.step, t2, x2);
    for (std::size_t i = 0; i < c.t.size() && 2 * i < x2.size(); ++i)
        if (c.chi[i] > 0.0 && x2[2 * i] > 0.0) c.richardson = std::max(c.richardson, std::abs(c.chi[i] - x2[2 * i]));
    c.dchi.resize(c.t.size());
    c.floor.resize(c.t.size());
    c.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c.t.size(); ++i) {
        c.dchi[i] = chi_rhs(p, c.chi[i]);
        c.floor[i] = chi_floor(p, h, c.t[i]);
        const double margin = c.chi[i] - c.floor[i];
        if (margin <= 0.0 && !std::isfinite(c.blow_down)) {
            if (i == 0) {
                c.blow_down = 0.0;
            } else {
                const double m0 = c.chi[i - 1] - c.floor[i - 1];
                c.blow_down = c.t[i - 1] + (c.t[i] - c.t[i - 1]) * m0 / (m0 - margin);
            }
        }
        c.min_margin = std::min(c.min_margin, margin);
    }
    const bool reached = std::abs(c.t.back() - p.T) < 0.5 * p.step;
    c.feasible = reached && c.min_margin > 0.0;
    if (!reached && !std::isfinite(c.blow_down)) c.blow_down = c.t.back();
    if (p.mode == ChiMode::lipschitz && c.feasible) {
        // constant continuation after T
        c.t.push_back(p.T + 1e9);
        c.chi.push_back(c.chi.back());
        c.dchi.back() = 0.0;
        c.dchi.push_back(0.0);
        c.floor.push_back(p.rho_hat_pressure);
    }
    if (!c.feasible && throw_on_fail) {
        std::ostringstream os;
        os << "solve_chi: infeasible, chi meets its floor at t = " << c.blow_down << " (interval [0, " << p.T << "])";
        throw AnsatzError(os.str());
    }
    return c;
}

double smallness_norm(const ScalarField& rho0) {
    const double mean = rho0.mean();
    double osc = 0.0;
    for (double v : rho0.data) osc = std::max(osc, std::abs(v - mean));
    const VectorField g = spectral_gradient(rho0);
    double gs = 0.0;
    for (std::size_t i = 0; i < rho0.grid.nodes(); ++i) gs = std::max(gs, std::hypot(g.data[2 * i], g.data[2 * i + 1]));
    return std::max(osc, gs);
}

SubsolutionState build_perturbed_density(const ScalarField& rho0, const PressureLaw& plaw, const Eigen::Matrix2d& B,
                                         const PerturbedDensityOptions& opt) {
    const TorusGrid& g = rho0.grid;
    for (double v : rho0.data)
        if (!(v > 0.0)) throw AnsatzError("perturbed density: rho0 must be positive");
    const double small = smallness_norm(rho0);
    if (small > opt.eps_budget + 1e-12 * rho0.sup_norm()) {
        std::ostringstream os;
        os << "perturbed density: ||(rho0 - rho_sharp, grad rho0)||_inf = " << small << " exceeds eps " << opt.eps_budget;
        throw AnsatzError(os.str());
    }
    const double rs = rho0.mean();
    ScalarField f(g, 1);
    for (std::size_t i = 0; i < g.nodes(); ++i) f.data[i] = rs - rho0.data[i];
    const ScalarField psi = poisson_solve(f, true);
    const VectorField gpsi = spectral_gradient(psi);
    VectorField bgpsi(g, 2);
    for (std::size_t i = 0; i < g.nodes(); ++i)
        for (int c = 0; c < 2; ++c) bgpsi.data[2 * i + c] = B(c, 0) * gpsi.data[2 * i] + B(c, 1) * gpsi.data[2 * i + 1];
    const DeviatorField R1 = r_torus(gpsi), R2 = r_torus(bgpsi);

    const TimeCutoff h;
    ChiParams cp;
    cp.mode = ChiMode::general_source;
    cp.beta = beta_of(B);
    cp.eps = opt.eps_budget;
    cp.c0 = opt.c0;
    cp.chi0 = opt.chi0;
    cp.T = 1.0;
    cp.floor_constant = opt.floor_constant;
    cp.rate_factor = opt.rate_factor;
    const ChiCurve chi = solve_chi(cp, h, opt.rate_factor == 1.0);

    SubsolutionState s;
    s.kind = "perturbed_density";
    s.grid = g;
    s.times = opt.times.empty() ? default_times(1.0, 0.005) : opt.times;
    s.plaw = plaw;
    s.B = B;
    s.strict_from = -1.0;
    s.region.assign(g.nodes(), 0);
    RegionInfo r;
    r.rho = rs;
    r.q = opt.chi0;
    r.kind = RegionKind::full;
    s.regions.push_back(r);
    s.psi = psi;
    allocate_slices(s);
    const double prs = plaw.p(rs);
    for (std::size_t k = 0; k < s.slices(); ++k) {
        const double t = s.times[k], h0 = h.eval(t, 0), h1 = h.eval(t, 1), h2 = h.eval(t, 2), x = chi.at(t);
        s.chi.push_back(x);
        s.h.push_back(h0);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const double rho = (1.0 - h0) * rs + h0 * rho0.data[i];
            s.rho[k].data[i] = rho;
            s.q[k].data[i] = prs - plaw.p(rho) + x;
            s.rho_t[k].data[i] = h1 * (rho0.data[i] - rs);
            for (int c = 0; c < 2; ++c) {
                s.m[k].data[2 * i + c] = h1 * gpsi.data[2 * i + c];
                s.m_t[k].data[2 * i + c] = h2 * gpsi.data[2 * i + c];
            }
            for (int c = 0; c < 3; ++c) s.U[k].data[3 * i + c] = -h2 * R1.data[3 * i + c] + h1 * R2.data[3 * i + c];
        }
    }
    s.diagnostics["rho_sharp"] = rs;
    s.diagnostics["smallness"] = small;
    s.diagnostics["eps"] = opt.eps_budget;
    s.diagnostics["beta"] = cp.beta;
    s.diagnostics["chi_min_margin"] = chi.min_margin;
    s.diagnostics["chi_richardson"] = chi.richardson;
    s.diagnostics["chi_feasible"] = chi.feasible ? 1.0 : 0.0;
    s.diagnostics["h_support"] = h.support();
    return s;
}

DecayCheck decay_check(const SubsolutionState& s, const TimeCutoff& h) {
    DecayCheck d;
    if (s.slices() == 0) return d;
    const double beta = beta_of(s.B);
    const double rs = s.diagnostics.count("rho_sharp") ? s.diagnostics.at("rho_sharp") : s.rho[0].mean();
    // rho0 is the t = 0 slice because h(0) = 1
    double osc = 0.0;
    for (double v : s.rho[0].data) osc = std::max(osc, std::abs(v - rs));
    const VectorField gpsi = spectral_gradient(s.psi);
    double gsup = 0.0;
    for (std::size_t i = 0; i < s.grid.nodes(); ++i) gsup = std::max(gsup, std::hypot(gpsi.data[2 * i], gpsi.data[2 * i + 1]));
    d.kappa = std::exp(beta * h.support()) * std::max(osc, h.max_slope() * gsup);
    for (std::size_t k = 0; k < s.slices(); ++k) {
        double v = 0.0;
        for (std::size_t i = 0; i < s.grid.nodes(); ++i) {
            v = std::max(v, std::abs(s.rho[k].data[i] - rs));
            v = std::max(v, std::hypot(s.m[k].data[2 * i], s.m[k].data[2 * i + 1]));
        }
        const double bound = d.kappa * std::exp(-beta * s.times[k]);
        if (bound > 0.0) d.worst_ratio = std::max(d.worst_ratio, v / bound);
        else if (v > 0.0) d.worst_ratio = std::numeric_limits<double>::infinity();
    }
    d.ok = d.worst_ratio <= 1.0;
    return d;
}

namespace {

struct CubeBlock {
    int i0, j0, M;
};

/// Largest difference quotient between same-label neighbours inside the block.
double block_gradient(const ScalarField& rho0, const std::vector<int>& labels, const CubeBlock& b) {
    const int N = rho0.grid.N;
    const double h = rho0.grid.spacing();
    double g = 0.0;
    for (int i = b.i0; i < b.i0 + b.M; ++i)
        for (int j = b.j0; j < b.j0 + b.M; ++j) {
            const std::size_t a = static_cast<std::size_t>(i) * N + j;
            if (i + 1 < b.i0 + b.M) {
                const std::size_t c = a + N;
                if (labels[a] == labels[c]) g = std::max(g, std::abs(rho0.data[c] - rho0.data[a]) / h);
            }
            if (j + 1 < b.j0 + b.M) {
                const std::size_t c = a + 1;
                if (labels[a] == labels[c]) g = std::max(g, std::abs(rho0.data[c] - rho0.data[a]) / h);
            }
        }
    return g;
}

bool block_uniform(const std::vector<int>& labels, int N, const CubeBlock& b) {
    const int l = labels[static_cast<std::size_t>(b.i0) * N + b.j0];
    for (int i = b.i0; i < b.i0 + b.M; ++i)
        for (int j = b.j0; j < b.j0 + b.M; ++j)
            if (labels[static_cast<std::size_t>(i) * N + j] != l) return false;
    return true;
}

}  // namespace

SubsolutionState build_piecewise_lipschitz(const ScalarField& rho0, const std::vector<int>& labels,
                                           const PressureLaw& plaw, const Eigen::Matrix2d& B,
                                           const LipschitzOptions& opt) {
    const TorusGrid& g = rho0.grid;
    const int N = g.N;
    const double hx = g.spacing();
    if (labels.size() != g.nodes()) throw AnsatzError("piecewise lipschitz: label map size mismatch");
    if ((B + B.transpose()).norm() > 1e-12 * (1.0 + B.norm()))
        throw AnsatzError("piecewise lipschitz: source matrix must be antisymmetric");
    if (opt.min_cube < 2 || (opt.min_cube & (opt.min_cube - 1)) != 0)
        throw AnsatzError("piecewise lipschitz: min_cube must be a power of two >= 2");
    double rho_lo = rho0.data[0], rho_hi = rho0.data[0];
    for (double v : rho0.data) {
        if (!(v > 0.0)) throw AnsatzError("piecewise lipschitz: rho0 must be positive");
        rho_lo = std::min(rho_lo, v);
        rho_hi = std::max(rho_hi, v);
    }

    // dyadic Whitney-type refinement against label changes and the oscillation budget
    std::vector<CubeBlock> todo, cubes;
    const int start = std::max(opt.min_cube, N / 4);
    for (int i = 0; i < N; i += start)
        for (int j = 0; j < N; j += start) todo.push_back({i, j, start});
    double varrho = 0.0;
    while (!todo.empty()) {
        const CubeBlock b = todo.back();
        todo.pop_back();
        const double grad = block_gradient(rho0, labels, b);
        const bool split = (!block_uniform(labels, N, b) || b.M * hx * grad > opt.theta) && b.M / 2 >= opt.min_cube;
        if (split) {
            const int h2 = b.M / 2;
            for (int di = 0; di < 2; ++di)
                for (int dj = 0; dj < 2; ++dj) todo.push_back({b.i0 + di * h2, b.j0 + dj * h2, h2});
        } else {
            cubes.push_back(b);
            varrho = std::max(varrho, grad);
        }
    }
    std::sort(cubes.begin(), cubes.end(), [](const CubeBlock& a, const CubeBlock& b) {
        return a.i0 != b.i0 ? a.i0 < b.i0 : a.j0 < b.j0;
    });

    // per-cube Neumann potentials
    ScalarField sharp(g, 1), psi(g, 1);
    VectorField gpsi(g, 2), bgpsi(g, 2);
    std::vector<int> cube_of(g.nodes());
    double neumann_residual = 0.0, normal_flux = 0.0, max_osc = 0.0;
    for (std::size_t c = 0; c < cubes.size(); ++c) {
        const CubeBlock& b = cubes[c];
        CubeField f(CubeGrid{b.M, b.M * hx, {(b.i0 - 0.5) * hx, (b.j0 - 0.5) * hx}});
        double mean = 0.0;
        for (int i = 0; i < b.M; ++i)
            for (int j = 0; j < b.M; ++j) {
                f(i, j) = -rho0(b.i0 + i, b.j0 + j);
                mean += rho0(b.i0 + i, b.j0 + j);
            }
        mean /= b.M * b.M;
        const NeumannResult res = neumann_poisson_cube(f);
        const auto grad = cube_gradient(res.psi);
        neumann_residual = std::max(neumann_residual, res.residual);
        normal_flux = std::max(normal_flux, std::max(res.normal_derivative, std::abs(res.flux)));
        for (int i = 0; i < b.M; ++i)
            for (int j = 0; j < b.M; ++j) {
                const std::size_t a = static_cast<std::size_t>(b.i0 + i) * N + (b.j0 + j);
                cube_of[a] = static_cast<int>(c);
                sharp.data[a] = mean;
                max_osc = std::max(max_osc, std::abs(rho0.data[a] - mean));
                psi.data[a] = res.psi(i, j);
                gpsi.data[2 * a] = grad[0](i, j);
                gpsi.data[2 * a + 1] = grad[1](i, j);
            }
    }
    for (std::size_t i = 0; i < g.nodes(); ++i)
        for (int c = 0; c < 2; ++c) bgpsi.data[2 * i + c] = B(c, 0) * gpsi.data[2 * i] + B(c, 1) * gpsi.data[2 * i + 1];
    const DeviatorField R1 = r_torus(gpsi), R2 = r_torus(bgpsi);
    const double mg[2] = {gpsi.mean(0), gpsi.mean(1)};
    const double mbg[2] = {bgpsi.mean(0), bgpsi.mean(1)};

    const TimeCutoff h(0.95, 0.5, opt.T);
    ChiParams cp;
    cp.mode = ChiMode::lipschitz;
    cp.varrho = varrho;
    cp.C = opt.C;
    cp.rho_hat_pressure = plaw.p(rho_hi);
    cp.chi0 = opt.chi0 > 0.0 ? opt.chi0 : cp.rho_hat_pressure + 1.0;
    cp.T = opt.T;
    cp.theta = opt.theta;
    cp.floor_constant = opt.floor_constant;
    cp.step = std::min(1e-3, opt.T / 100.0);
    ChiCurve chi;
    try {
        chi = solve_chi(cp, h, true);
    } catch (const AnsatzError& e) {
        throw AnsatzError(std::string(e.what()) + "; reduce T or theta");
    }
    const double chiT = chi.at(opt.T);

    SubsolutionState s;
    s.kind = "piecewise_lipschitz";
    s.grid = g;
    s.times = opt.times.empty() ? default_times(1.25 * opt.T, opt.T / 100.0) : opt.times;
    s.plaw = plaw;
    s.B = B;
    s.strict_from = -1.0;
    s.region = cube_of;
    for (std::size_t c = 0; c < cubes.size(); ++c) {
        const CubeBlock& b = cubes[c];
        const double rs = sharp(b.i0, b.j0);
        RegionInfo r = make_region(static_cast<int>(c), rs, chiT - plaw.p(rs), opt.seed + c);
        s.regions.push_back(r);
    }
    s.psi = psi;
    allocate_slices(s);
    double mean_residual = 0.0;
    for (std::size_t k = 0; k < s.slices(); ++k) {
        const double t = s.times[k], h0 = h.eval(t, 0), h1 = h.eval(t, 1), h2 = h.eval(t, 2), x = chi.at(t);
        s.chi.push_back(x);
        s.h.push_back(h0);
        for (int c = 0; c < 2; ++c) mean_residual = std::max(mean_residual, std::abs(-h2 * mg[c] + h1 * mbg[c]));
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const double rho = (1.0 - h0) * sharp.data[i] + h0 * rho0.data[i];
            s.rho[k].data[i] = rho;
            s.q[k].data[i] = x - plaw.p(rho);
            s.rho_t[k].data[i] = h1 * (rho0.data[i] - sharp.data[i]);
            for (int c = 0; c < 2; ++c) {
                s.m[k].data[2 * i + c] = h1 * gpsi.data[2 * i + c];
                s.m_t[k].data[2 * i + c] = h2 * gpsi.data[2 * i + c];
            }
            for (int c = 0; c < 3; ++c) s.U[k].data[3 * i + c] = -h2 * R1.data[3 * i + c] + h1 * R2.data[3 * i + c];
        }
    }
    s.diagnostics["cubes"] = static_cast<double>(cubes.size());
    s.diagnostics["varrho"] = varrho;
    s.diagnostics["max_oscillation"] = max_osc;
    s.diagnostics["neumann_residual"] = neumann_residual;
    s.diagnostics["normal_flux"] = normal_flux;
    s.diagnostics["continuity_residual"] = neumann_residual * h.max_slope();
    s.diagnostics["mean_residual"] = mean_residual;
    s.diagnostics["chi_T"] = chiT;
    s.diagnostics["chi_min_margin"] = chi.min_margin;
    s.finite_from = opt.T;
    s.diagnostics["T"] = opt.T;
    return s;
}

std::vector<ScalarField> energy_production(const SubsolutionState& s) {
    const std::size_t K = s.slices();
    const double beta = beta_of(s.B);
    const TorusGrid& g = s.grid;
    std::vector<ScalarField> E(K, ScalarField(g, 1)), out(K, ScalarField(g, 1, "energy_production"));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < g.nodes(); ++i)
            E[k].data[i] = s.plaw.internal_energy(s.rho[k].data[i]) + s.q[k].data[i];
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t a = k == 0 ? 0 : k - 1, b = (k + 1 < K) ? k + 1 : k;
        VectorField flux(g, 2);
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const double rho = s.rho[k].data[i];
            const double F = (E[k].data[i] + s.plaw.p(rho)) / rho;
            flux.data[2 * i] = F * s.m[k].data[2 * i];
            flux.data[2 * i + 1] = F * s.m[k].data[2 * i + 1];
        }
        const ScalarField div = spectral_divergence(flux);
        out[k].time = s.times[k];
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            const double dt = (a == b) ? 0.0 : (E[b].data[i] - E[a].data[i]) / (s.times[b] - s.times[a]);
            out[k].data[i] = dt + div.data[i] + beta * 2.0 * s.q[k].data[i];
        }
    }
    return out;
}

void write_state_dump(const SubsolutionState& s, const std::filesystem::path& dir,
                      const std::map<std::string, std::vector<GridField>>& extra) {
    std::filesystem::create_directories(dir);
    nlohmann::json index;
    index["kind"] = s.kind;
    index["resolution"] = s.grid.N;
    index["length"] = s.grid.L;
    index["times"] = s.times;
    index["pressure"] = {{"a", s.plaw.a}, {"gamma", s.plaw.gamma}};
    index["B"] = {{s.B(0, 0), s.B(0, 1)}, {s.B(1, 0), s.B(1, 1)}};
    nlohmann::json fields = nlohmann::json::object();
    auto put = [&](const std::string& name, const std::vector<GridField>& list) {
        nlohmann::json stems = nlohmann::json::array();
        for (std::size_t k = 0; k < list.size(); ++k) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "_%03zu", k);
            GridField f = list[k];
            f.name = name;
            if (list.size() == s.slices()) f.time = s.times[k];
            write_field(f, dir / (name + buf));
            stems.push_back(name + buf);
        }
        fields[name] = stems;
    };
    put("rho", s.rho);
    put("m", s.m);
    put("U", s.U);
    put("q", s.q);
    for (const auto& [name, list] : extra) put(name, list);
    index["fields"] = fields;
    ScalarField region(s.grid, 1, "region");
    for (std::size_t i = 0; i < s.region.size(); ++i) region.data[i] = s.region[i];
    write_field(region, dir / "region");
    index["region"] = "region";
    std::ofstream out(dir / "index.json");
    out << index.dump(2) << "\n";
    if (!out) throw AnsatzError("write_state_dump: cannot write " + (dir / "index.json").string());
}

}  // namespace cilab
