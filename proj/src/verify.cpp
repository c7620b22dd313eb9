#include "cilab/verify.hpp"

#include "cilab/geometry.hpp"

#include "json.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

namespace cilab {

namespace {

constexpr double kTwoPi = 6.283185307179586;

using json = nlohmann::json;

std::vector<GridField> load_list(const std::filesystem::path& dir, const json& stems, const TorusGrid& g, int comps,
                                 const std::vector<double>& times, const std::string& name) {
    std::vector<GridField> out;
    if (stems.size() != times.size())
        throw VerifyError("metadata mismatch: " + name + " has " + std::to_string(stems.size()) + " slices, index has " +
                          std::to_string(times.size()));
    for (std::size_t k = 0; k < stems.size(); ++k) {
        const auto stem = stems[k].get<std::string>();
        GridField f;
        try {
            f = read_field(dir / stem);
        } catch (const OperatorError& e) {
            throw VerifyError(e.what());
        }
        if (f.grid.N != g.N || f.grid.L != g.L || f.components != comps)
            throw VerifyError("metadata mismatch: " + stem + " grid or component count differs from the index");
        if (std::abs(f.time - times[k]) > 1e-12 * (1.0 + std::abs(times[k])))
            throw VerifyError("metadata mismatch: " + stem + " time " + std::to_string(f.time) + " differs from the index");
        out.push_back(std::move(f));
    }
    return out;
}

/// Hat-function weights w_k = int l_k(t) g(t) dt over [times.front(), times.back()].
std::vector<double> time_weights(const std::vector<double>& times, const std::vector<double>& breaks,
                                 const std::function<double(double)>& g) {
    using GL = boost::math::quadrature::gauss<double, 10>;
    std::vector<double> w(times.size(), 0.0);
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        const double a = times[k], b = times[k + 1], h = b - a;
        std::vector<double> cuts{a};
        for (double br : breaks)
            if (br > a && br < b) cuts.push_back(br);
        cuts.push_back(b);
        std::sort(cuts.begin(), cuts.end());
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
            const double lo = cuts[c], hi = cuts[c + 1];
            if (hi <= lo) continue;
            w[k] += GL::integrate([&](double t) { return (b - t) / h * g(t); }, lo, hi);
            w[k + 1] += GL::integrate([&](double t) { return (t - a) / h * g(t); }, lo, hi);
        }
    }
    return w;
}

/// Slice indices at full resolution or every second slice.
std::vector<std::size_t> slice_set(std::size_t K, bool coarse) {
    std::vector<std::size_t> out;
    const std::size_t step = (coarse && K >= 3 && (K - 1) % 2 == 0) ? 2 : 1;
    for (std::size_t k = 0; k < K; k += step) out.push_back(k);
    return out;
}

/// S, dS/dx1, dS/dx2 at every node.
struct SpaceTable {
    std::vector<double> s, g1, g2;
};

SpaceTable space_table(const TestFunction& f, const TorusGrid& g) {
    SpaceTable t;
    t.s.resize(g.nodes());
    t.g1.resize(g.nodes());
    t.g2.resize(g.nodes());
    for (int i1 = 0; i1 < g.N; ++i1)
        for (int i2 = 0; i2 < g.N; ++i2) {
            const std::size_t i = static_cast<std::size_t>(i1) * g.N + i2;
            t.s[i] = f.space(g.x(i1), g.x(i2));
            const auto gr = f.space_gradient(g.x(i1), g.x(i2));
            t.g1[i] = gr[0];
            t.g2[i] = gr[1];
        }
    return t;
}

struct Pairing {
    double value = 0.0;
    double spread = 0.0;  ///< root of the summed squared node contributions
};

/// Sum over slices k and nodes i of area (w'_k a_ki + w_k c_ki), with w'_k, w_k the hat-function
/// weights against T' and T, plus the Cauchy term T(t_0) sum_i area a_0i.  body(k, i) returns (a, c).
template <class Body>
Pairing pair_nodes(const DumpSet& d, const TestFunction& f, bool coarse, Body&& body) {
    const auto ks = slice_set(d.slices(), coarse);
    std::vector<double> ts;
    for (auto k : ks) ts.push_back(d.times[k]);
    const auto br = f.time_breaks();
    const std::vector<double> breaks{br[0], br[1]};
    auto wd = time_weights(ts, breaks, [&](double t) { return f.time(t, 1); });
    const auto w0 = time_weights(ts, breaks, [&](double t) { return f.time(t, 0); });
    wd[0] += f.time(ts.front(), 0);
    const TorusGrid& g = d.grid;
    const int step = (coarse && g.N % 2 == 0) ? 2 : 1;
    const double area = std::pow(step * g.spacing(), 2);
    Pairing p;
    double sq = 0.0;
    for (std::size_t j = 0; j < ks.size(); ++j) {
        double acc = 0.0;
        for (int i1 = 0; i1 < g.N; i1 += step)
            for (int i2 = 0; i2 < g.N; i2 += step) {
                const auto [a, c] = body(ks[j], static_cast<std::size_t>(i1) * g.N + i2);
                const double v = area * (wd[j] * a + w0[j] * c);
                acc += v;
                sq += v * v;
            }
        p.value += acc;
    }
    p.spread = std::sqrt(sq);
    return p;
}

double box_measure(const DumpSet& d) {
    return d.grid.L * d.grid.L * (d.times.back() - d.times.front());
}

bool is_resolved(double v, double coarse, double scale, double tol) {
    return std::abs(v - coarse) <= 0.1 * std::abs(v) + 1e-3 * tol * scale;
}

}  // namespace

DumpSet load_dump(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw VerifyError("load_dump: missing " + (dir / "index.json").string());
    DumpSet d;
    d.dir = dir;
    try {
        const json idx = json::parse(in);
        d.kind = idx.value("kind", "");
        d.grid = TorusGrid(idx.at("resolution").get<int>(), idx.at("length").get<double>());
        d.times = idx.at("times").get<std::vector<double>>();
        if (d.times.size() < 2) throw VerifyError("load_dump: at least two slices are needed");
        for (std::size_t k = 1; k < d.times.size(); ++k)
            if (!(d.times[k] > d.times[k - 1])) throw VerifyError("load_dump: slice times must increase");
        d.plaw = PressureLaw(idx.at("pressure").at("a").get<double>(), idx.at("pressure").at("gamma").get<double>());
        const auto& B = idx.at("B");
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) d.B(i, j) = B.at(i).at(j).get<double>();
        const auto& fields = idx.at("fields");
        d.rho = load_list(dir, fields.at("rho"), d.grid, 1, d.times, "rho");
        d.m = load_list(dir, fields.at("m"), d.grid, 2, d.times, "m");
        d.U = load_list(dir, fields.at("U"), d.grid, 3, d.times, "U");
        d.q = load_list(dir, fields.at("q"), d.grid, 1, d.times, "q");
        if (idx.contains("region")) {
            GridField r;
            try {
                r = read_field(dir / idx.at("region").get<std::string>());
            } catch (const OperatorError& e) {
                throw VerifyError(e.what());
            }
            if (r.grid.N != d.grid.N || r.components != 1) throw VerifyError("metadata mismatch: region map grid");
            d.region.resize(r.data.size());
            for (std::size_t i = 0; i < r.data.size(); ++i) d.region[i] = static_cast<int>(std::lround(r.data[i]));
        }
    } catch (const json::exception& e) {
        throw VerifyError("load_dump: bad index.json: " + std::string(e.what()));
    } catch (const AnsatzError& e) {
        throw VerifyError(std::string("load_dump: ") + e.what());
    }
    return d;
}

double TestFunction::time(double t, int j) const {
    if (t > t0 + support) return 0.0;
    const double s = std::max(0.0, t - t0) / (2.0 * support);
    return ramp.eval(std::min(s, 0.5), j) * std::pow(1.0 / (2.0 * support), j);
}

double TestFunction::space(double x1, double x2) const {
    const double th = kTwoPi * (k[0] * x1 + k[1] * x2) / length;
    return offset + amplitude * (sine ? std::sin(th) : std::cos(th));
}

std::array<double, 2> TestFunction::space_gradient(double x1, double x2) const {
    const double th = kTwoPi * (k[0] * x1 + k[1] * x2) / length;
    const double d = amplitude * (sine ? std::cos(th) : -std::sin(th)) * kTwoPi / length;
    return {d * k[0], d * k[1]};
}

std::array<double, 2> TestFunction::time_breaks() const {
    return {t0 + plateau * support, t0 + support};
}

double TestFunction::c2_norm() const {
    const double c = 1.0 / (2.0 * support);
    const double T0 = ramp.sup_norm(), T1 = ramp.derivative().sup_norm() * c,
                 T2 = ramp.derivative().derivative().sup_norm() * c * c;
    const double kk = kTwoPi / length * std::hypot(k[0], k[1]);
    const double S0 = std::abs(offset) + std::abs(amplitude), S1 = std::abs(amplitude) * kk, S2 = S1 * kk;
    return std::max({T0 * S0, T1 * S0, T0 * S1, T2 * S0, T1 * S1, T0 * S2});
}

std::vector<TestFunction> make_family(double t0, double t1, double L, const FamilyOptions& opt) {
    if (!(t1 > t0)) throw VerifyError("make_family: empty time span");
    std::vector<TestFunction> out;
    const PiecewisePoly ramp = plateau_ramp(opt.plateau);
    for (const auto& k : opt.modes)
        for (double sup : opt.supports)
            for (int parity = 0; parity < 2; ++parity) {
                TestFunction f;
                f.k = k;
                f.sine = parity == 1;
                f.offset = opt.nonnegative ? 1.0 : 0.0;
                f.amplitude = opt.nonnegative ? 0.9 : 1.0;
                f.t0 = t0;
                f.support = sup * (t1 - t0);
                f.plateau = opt.plateau;
                f.length = L;
                f.ramp = ramp;
                char buf[96];
                std::snprintf(buf, sizeof buf, "%s%s(%d,%d)/ramp%.2f", opt.nonnegative ? "1+0.9" : "",
                              f.sine ? "sin" : "cos", k[0], k[1], sup);
                f.name = buf;
                out.push_back(std::move(f));
            }
    return out;
}

std::vector<WeakResidual> weak_residual(const DumpSet& d, const std::vector<TestFunction>& family,
                                        const WeakOptions& opt) {
    const std::size_t K = d.slices();
    const std::size_t nn = d.grid.nodes();
    /// Flux matrix and pressure per slice and node: F11, F12, F22, p.
    std::vector<std::vector<std::array<double, 4>>> flux(K, std::vector<std::array<double, 4>>(nn));
    double fsup = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < nn; ++i) {
            const double rho = d.rho[k].data[i], q = d.q[k].data[i];
            const double m1 = d.m[k].data[2 * i], m2 = d.m[k].data[2 * i + 1];
            std::array<double, 4>& F = flux[k][i];
            if (opt.form == FluxForm::relaxed) {
                F = {d.U[k].data[3 * i] + q, d.U[k].data[3 * i + 1], d.U[k].data[3 * i + 2] + q, d.plaw.p(rho)};
            } else {
                F = {m1 * m1 / rho, m1 * m2 / rho, m2 * m2 / rho, d.plaw.p(rho)};
            }
            const double bm = std::hypot(d.B(0, 0) * m1 + d.B(0, 1) * m2, d.B(1, 0) * m1 + d.B(1, 1) * m2);
            fsup = std::max({fsup, std::abs(rho), std::hypot(m1, m2), std::abs(F[0]) + std::abs(F[1]),
                             std::abs(F[1]) + std::abs(F[2]), std::abs(F[3]), bm});
        }
    std::vector<WeakResidual> out;
    for (const auto& f : family) {
        const SpaceTable st = space_table(f, d.grid);
        const double scale = std::max(fsup, 1e-300) * f.c2_norm() * box_measure(d);
        Pairing cont[2], mom[2][2];
        for (int level = 0; level < 2; ++level) {
            const bool coarse = level == 1;
            cont[level] = pair_nodes(d, f, coarse, [&](std::size_t k, std::size_t i) {
                const auto& m = d.m[k].data;
                return std::pair{d.rho[k].data[i] * st.s[i], m[2 * i] * st.g1[i] + m[2 * i + 1] * st.g2[i]};
            });
            for (int e = 0; e < 2; ++e)
                mom[level][e] = pair_nodes(d, f, coarse, [&](std::size_t k, std::size_t i) {
                    const auto& m = d.m[k].data;
                    const auto& F = flux[k][i];
                    const double Fe1 = e == 0 ? F[0] : F[1];
                    const double Fe2 = e == 0 ? F[1] : F[2];
                    const double gpe = e == 0 ? st.g1[i] : st.g2[i];
                    const double bm = d.B(e, 0) * m[2 * i] + d.B(e, 1) * m[2 * i + 1];
                    return std::pair{m[2 * i + e] * st.s[i],
                                     Fe1 * st.g1[i] + Fe2 * st.g2[i] + F[3] * gpe + bm * st.s[i]};
                });
        }
        const double c0 = std::abs(cont[0].value), c1 = std::abs(cont[1].value);
        const double m0 = std::hypot(mom[0][0].value, mom[0][1].value);
        const double m1 = std::hypot(mom[1][0].value, mom[1][1].value);
        WeakResidual r;
        r.test = f.name;
        r.continuity = {c0, c1, scale, cont[0].spread, is_resolved(c0, c1, scale, opt.tol), c0 <= opt.tol * scale};
        r.momentum = {m0, m1, scale, std::hypot(mom[0][0].spread, mom[0][1].spread), is_resolved(m0, m1, scale, opt.tol),
                      m0 <= opt.tol * scale};
        out.push_back(r);
    }
    return out;
}

std::vector<AdmissibilityValue> admissibility_residual(const DumpSet& d, const std::vector<TestFunction>& family,
                                                       double tol) {
    const std::size_t K = d.slices();
    const std::size_t nn = d.grid.nodes();
    const double beta = beta_of(d.B);
    const double n = 2.0;
    /// Energy, flux and source lower bound per slice and node.
    std::vector<std::vector<std::array<double, 4>>> ef(K, std::vector<std::array<double, 4>>(nn));
    double fsup = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < nn; ++i) {
            const double rho = d.rho[k].data[i], q = d.q[k].data[i];
            const double E = d.plaw.internal_energy(rho) + 0.5 * n * q;
            const double P = (E + d.plaw.p(rho)) / rho;
            const double F1 = P * d.m[k].data[2 * i], F2 = P * d.m[k].data[2 * i + 1];
            const double S = -beta * n * q;
            ef[k][i] = {E, F1, F2, S};
            fsup = std::max({fsup, std::abs(E), std::hypot(F1, F2), std::abs(S)});
        }
    std::vector<AdmissibilityValue> out;
    for (const auto& f : family) {
        const SpaceTable st = space_table(f, d.grid);
        const double scale = std::max(fsup, 1e-300) * f.c2_norm() * box_measure(d);
        Pairing v[2];
        for (int level = 0; level < 2; ++level)
            v[level] = pair_nodes(d, f, level == 1, [&](std::size_t k, std::size_t i) {
                const auto& e = ef[k][i];
                return std::pair{e[0] * st.s[i], e[1] * st.g1[i] + e[2] * st.g2[i] + e[3] * st.s[i]};
            });
        AdmissibilityValue r;
        r.test = f.name;
        r.value = {v[0].value, v[1].value, scale, v[0].spread, is_resolved(v[0].value, v[1].value, scale, tol),
                   v[0].value >= -tol * scale};
        r.equality = std::abs(v[0].value) <= tol * scale;
        out.push_back(r);
    }
    return out;
}

double source_pairing(const DumpSet& d, const TestFunction& f, int c) {
    const SpaceTable st = space_table(f, d.grid);
    return pair_nodes(d, f, false, [&](std::size_t k, std::size_t i) {
               const auto& m = d.m[k].data;
               return std::pair{0.0, (d.B(c, 0) * m[2 * i] + d.B(c, 1) * m[2 * i + 1]) * st.s[i]};
           })
        .value;
}

ConstraintFields constraint_field(const DumpSet& d, int threads) {
    const std::size_t K = d.slices(), nn = d.grid.nodes();
    ConstraintFields c;
    for (std::size_t k = 0; k < K; ++k) {
        c.dist.emplace_back(d.grid, 1, "dist");
        c.margin.emplace_back(d.grid, 1, "margin");
        c.dist.back().time = c.margin.back().time = d.times[k];
    }
    const std::size_t total = K * nn;
    auto work = [&](std::size_t start, std::size_t stride) {
        for (std::size_t idx = start; idx < total; idx += stride) {
            const std::size_t k = idx / nn, i = idx % nn;
            StatePoint w;
            w.n = 2;
            w.m[0] = d.m[k].data[2 * i];
            w.m[1] = d.m[k].data[2 * i + 1];
            w.u[0] = d.U[k].data[3 * i];
            w.u[1] = d.U[k].data[3 * i + 1];
            const ConstraintParams p(d.rho[k].data[i], std::max(0.0, d.q[k].data[i]));
            c.dist[k].data[i] = dist_to_K(w, p);
            c.margin[k].data[i] = hull_margin(w, p);
        }
    };
    const int nt = std::max(1, threads);
    if (nt == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) pool.emplace_back(work, static_cast<std::size_t>(t), static_cast<std::size_t>(nt));
        for (auto& t : pool) t.join();
    }
    return c;
}

ConstraintSummary summarize_constraint(const ConstraintFields& c, const DumpSet& d, const std::vector<int>& labels,
                                       double t0, double t1, double threshold) {
    ConstraintSummary s;
    s.threshold = threshold;
    s.min_margin = std::numeric_limits<double>::infinity();
    std::size_t above = 0, slices = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < d.slices(); ++k) {
        if (d.times[k] < t0 || d.times[k] > t1) continue;
        ++slices;
        for (std::size_t i = 0; i < d.grid.nodes(); ++i) {
            if (!labels.empty()) {
                if (d.region.empty()) throw VerifyError("summarize_constraint: dump has no region map");
                if (std::find(labels.begin(), labels.end(), d.region[i]) == labels.end()) continue;
            }
            const double dist = c.dist[k].data[i];
            ++s.nodes;
            sum += dist;
            s.max = std::max(s.max, dist);
            s.min_margin = std::min(s.min_margin, c.margin[k].data[i]);
            if (dist > threshold) {
                ++above;
            } else {
                const double m1 = d.m[k].data[2 * i], m2 = d.m[k].data[2 * i + 1];
                s.saturation_near_k = std::max(
                    s.saturation_near_k, std::abs(m1 * m1 + m2 * m2 - 2.0 * d.rho[k].data[i] * d.q[k].data[i]));
            }
        }
    }
    if (s.nodes > 0) {
        s.mean = sum / static_cast<double>(s.nodes);
        s.fraction_above = static_cast<double>(above) / static_cast<double>(s.nodes);
        const double per_slice = static_cast<double>(s.nodes) / static_cast<double>(slices) /
                                 static_cast<double>(d.grid.nodes()) * d.grid.L * d.grid.L;
        const double span = slices > 1 ? (std::min(t1, d.times.back()) - std::max(t0, d.times.front())) : 0.0;
        s.measure_above = s.fraction_above * per_slice * span;
    }
    return s;
}

void corrupt_momentum_blob(DumpSet& d, double x1, double x2, double tc, double radius, double half_width,
                           double delta) {
    const double L = d.grid.L;
    auto pdist = [L](double a, double b) {
        double r = std::fmod(std::abs(a - b), L);
        return std::min(r, L - r);
    };
    for (std::size_t k = 0; k < d.slices(); ++k) {
        if (std::abs(d.times[k] - tc) > half_width) continue;
        for (int i1 = 0; i1 < d.grid.N; ++i1)
            for (int i2 = 0; i2 < d.grid.N; ++i2)
                if (std::max(pdist(d.grid.x(i1), x1), pdist(d.grid.x(i2), x2)) <= radius) d.m[k](i1, i2, 0) += delta;
    }
}

VerifyReport verify_dump(const DumpSet& d, const VerifyOptions& opt) {
    VerifyReport r;
    FamilyOptions fo = opt.family;
    fo.nonnegative = false;
    const auto fam = make_family(d.times.front(), d.times.back(), d.grid.L, fo);
    fo.nonnegative = true;
    const auto nonneg = make_family(d.times.front(), d.times.back(), d.grid.L, fo);
    r.weak = weak_residual(d, fam, {opt.form, opt.tol});
    r.admissibility = admissibility_residual(d, nonneg, opt.tol);
    r.weak_pass = std::all_of(r.weak.begin(), r.weak.end(),
                              [](const WeakResidual& w) { return w.continuity.pass && w.momentum.pass; });
    r.admissibility_pass = std::all_of(r.admissibility.begin(), r.admissibility.end(),
                                       [](const AdmissibilityValue& a) { return a.value.pass; });
    r.resolved = std::all_of(r.weak.begin(), r.weak.end(),
                             [](const WeakResidual& w) { return w.continuity.resolved && w.momentum.resolved; }) &&
                 std::all_of(r.admissibility.begin(), r.admissibility.end(),
                             [](const AdmissibilityValue& a) { return a.value.resolved; });
    if (opt.constraint) {
        r.has_constraint = true;
        const auto c = constraint_field(d, opt.threads);
        r.constraint = summarize_constraint(c, d, {}, -1e300, 1e300, opt.dist_threshold);
    }
    return r;
}

std::string verify_report_json(const VerifyReport& r, const VerifyOptions& opt) {
    auto value_json = [](const ResidualValue& v) {
        return json{{"value", v.value},   {"coarse", v.coarse},   {"scale", v.scale},     {"normalized", v.value / v.scale},
                    {"spread", v.spread}, {"resolved", v.resolved}, {"pass", v.pass}};
    };
    json j;
    j["tolerance"] = opt.tol;
    j["flux"] = opt.form == FluxForm::relaxed ? "relaxed" : "nonlinear";
    json weak = json::array();
    for (const auto& w : r.weak)
        weak.push_back({{"test", w.test}, {"continuity", value_json(w.continuity)}, {"momentum", value_json(w.momentum)}});
    j["weak"] = weak;
    json adm = json::array();
    for (const auto& a : r.admissibility) {
        json e = value_json(a.value);
        e["test"] = a.test;
        e["equality"] = a.equality;
        adm.push_back(e);
    }
    j["admissibility"] = adm;
    if (r.has_constraint) {
        const auto& c = r.constraint;
        j["constraint"] = {{"nodes", c.nodes},
                           {"max", c.max},
                           {"mean", c.mean},
                           {"threshold", c.threshold},
                           {"fraction_above", c.fraction_above},
                           {"measure_above", c.measure_above},
                           {"saturation_near_k", c.saturation_near_k},
                           {"min_margin", c.min_margin}};
    }
    j["weak_pass"] = r.weak_pass;
    j["admissibility_pass"] = r.admissibility_pass;
    j["resolved"] = r.resolved;
    j["pass"] = r.weak_pass && r.admissibility_pass;
    return j.dump(2);
}

}  // namespace cilab
