/// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include "cilab/cli.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

using namespace cilab;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(3) << v;
    return os.str();
}

Eigen::Matrix2d rotation() {
    Eigen::Matrix2d J;
    J << 0, 1, -1, 0;
    return J;
}

StatePoint random_interior(int n, const ConstraintParams& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    StatePoint t;
    t.n = n;
    double tot = 0;
    for (int k = 0; k < 12; ++k) {
        Eigen::VectorXd xi(n);
        for (int c = 0; c < n; ++c) xi(c) = U(rng) - 0.5;
        const double w = U(rng);
        t = t + k_point(p, xi.normalized()) * w;
        tot += w;
    }
    return t * (1.0 / tot);
}

double k_relation(const StatePoint& w, const ConstraintParams& p) {
    const Eigen::VectorXd m = w.momentum();
    return (m * m.transpose() / p.rho - w.U() - p.q * Eigen::MatrixXd::Identity(w.n, w.n)).norm();
}

Outcome extreme_points() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    int bad = 0;
    double min_slack = 1e300;
    for (int n : {2, 3})
        for (int i = 0; i < 100; ++i) {
            const ConstraintParams p(0.5 + 2.0 * U(rng), 0.1 + U(rng));
            const StatePoint t = random_interior(n, p, rng);
            const SimplexDecomposition d = select_extreme_points(t, p, 1000 + i);
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(t.coords().size());
            bool ok = static_cast<int>(d.vertices.size()) == n * (n + 3) / 2 && d.slack > 0.0;
            for (std::size_t k = 0; k < d.vertices.size(); ++k) {
                sum += d.weights[k] * d.vertices[k].coords();
                ok = ok && k_relation(d.vertices[k], p) <= 1e-10 * (1 + p.rho * p.q);
            }
            ok = ok && (sum - t.coords()).norm() <= 1e-10 * (1 + t.norm());
            bad += !ok;
            min_slack = std::min(min_slack, d.slack);
        }
    return {bad == 0, "200 targets (100 per n), N*_2 = 5, N*_3 = 9, failures " + std::to_string(bad) +
                          ", min slack " + fmt(min_slack)};
}

Outcome hull_characterization() {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const ConstraintParams p(1.0, 0.5);
    int checked = 0, disagree = 0;
    for (int i = 0; i < 10000; ++i) {
        StatePoint w;
        w.m = {1.2 * U(rng), 1.2 * U(rng), 0.0};
        w.u = {0.7 * U(rng), 0.7 * U(rng), 0, 0, 0};
        const double m = hull_margin(w, p);
        if (std::abs(m) <= 1e-6) continue;
        ++checked;
        disagree += (m > 0) != (hull_gauge_lp(w, p, 200, i) > 1.0);
    }
    return {disagree == 0 && checked > 9000,
            std::to_string(checked) + " of 10000 points with |margin| > 1e-6, disagreements " + std::to_string(disagree)};
}

std::vector<Point3> box_samples(const Box& b, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-0.5, 0.5);
    std::vector<Point3> s;
    for (int i = 0; i < count; ++i)
        s.push_back({b.center[0] + b.side * U(rng), b.center[1] + b.side * U(rng), b.center[2] + b.side * U(rng)});
    return s;
}

Outcome wave_exactness() {
    const Eigen::Matrix2d Bs[3] = {Eigen::Matrix2d::Zero(), rotation(), -Eigen::Matrix2d::Identity()};
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double worst = 0.0, min_ratio = 1e300, worst_lambda = 0.0;
    int worst_b = 0;
    for (int i = 0; i < 20; ++i) {
        const ConstraintParams p(0.5 + 2.0 * U(rng), 0.2 + U(rng));
        const StatePoint w1 = k_point_angle(p, 2 * M_PI * U(rng));
        StatePoint w2 = k_point_angle(p, 2 * M_PI * U(rng));
        if ((w2 - w1).norm() < 0.2 * std::sqrt(p.rho * p.q)) w2 = k_point_angle(p, 2 * M_PI * U(rng) + M_PI);
        const double mu1 = 0.2 + 0.6 * U(rng);
        const StatePoint base = w1 * mu1 + w2 * (1.0 - mu1);
        const Box box{{U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5}, 0.3 + U(rng)};
        WaveAtom a = build_wave(base, w1, w2, box, 0.1 * (w2 - w1).norm(), Bs[i % 3], 40.0);
        const auto samples = box_samples(box, 1000, 400 + i);
        const auto r = wave_residual(a, samples, false);
        const double rel = std::max(r.divergence, r.momentum) / a.amplitude();
        if (rel > worst) {
            worst = rel;
            worst_lambda = a.lambda();
            worst_b = i % 3;
        }
        if (i % 3 == 1) {
            a.omit_correction = true;
            const auto u = wave_residual(a, samples, false);
            min_ratio = std::min(min_ratio, u.momentum / std::max(r.momentum, 1e-300));
        }
    }
    return {worst <= 1e-9 && min_ratio >= 1e3,
            "20 atoms, max residual / amplitude " + fmt(worst) + " (lambda " + fmt(worst_lambda) + ", B " +
                std::string(worst_b == 0 ? "0" : worst_b == 1 ? "J" : "-I") + "), min uncorrected/corrected (B = J) " + fmt(min_ratio)};
}

Outcome frequency_law() {
    const ConstraintParams p(1.0, 0.5);
    const StatePoint w1 = k_point_angle(p, 0.3), w2 = k_point_angle(p, 2.0);
    const StatePoint base = w1 * 0.5 + w2 * 0.5;
    WaveOptions opt;
    opt.skip_search = true;
    opt.inner_fraction = 0.8;
    opt.delta = 0.05;
    const Box box{{0, 0, 0}, 1.0};
    const auto samples = box_samples(box, 20000, 21);
    double prev = -1, lo = 1e300, hi = 0;
    for (double lam = 256; lam <= 4096; lam *= 2) {
        const WaveAtom a = build_wave(base, w1, w2, box, 0.1, Eigen::Matrix2d::Zero(), lam, opt);
        double sup = 0;
        for (const Point3& z : samples) sup = std::max(sup, a.segment_distance(z));
        if (prev > 0) {
            lo = std::min(lo, prev / sup);
            hi = std::max(hi, prev / sup);
        }
        prev = sup;
    }
    return {lo >= 2.0 / 1.2 && hi <= 2.0 * 1.2,
            "4 doublings from lambda 256, halving ratios in [" + fmt(lo) + ", " + fmt(hi) + "]"};
}

Outcome divergence_solver() {
    const TorusGrid g(128, 1.0);
    double worst = 0.0;
    for (int s = 0; s < 10; ++s) {
        const VectorField f = band_limited_random(g, 2, 20, 500 + s);
        const VectorField d = deviator_divergence(r_torus(f));
        const double sup = f.sup_norm();
        for (int c = 0; c < 2; ++c) {
            const double mean = f.mean(c);
            for (std::size_t i = 0; i < g.nodes(); ++i)
                worst = std::max(worst, std::abs(d.data[2 * i + c] - (f.data[2 * i + c] - mean)) / sup);
        }
    }
    const TorusGrid h(128, 2 * M_PI);
    VectorField f(h, 2);
    for (int i = 0; i < h.N; ++i)
        for (int j = 0; j < h.N; ++j) f(i, j, 0) = std::cos(h.x(i));
    const DeviatorField R = r_torus(f);
    double closed = 0.0;
    for (int i = 0; i < h.N; ++i)
        for (int j = 0; j < h.N; ++j)
            closed = std::max({closed, std::abs(R(i, j, 0) - std::sin(h.x(i))), std::abs(R(i, j, 1)),
                               std::abs(R(i, j, 2) + std::sin(h.x(i)))});
    return {worst <= 1e-10 && closed <= 1e-12,
            "10 fields at N = 128, max relative residual " + fmt(worst) + ", closed form error " + fmt(closed)};
}

json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return json::parse(in);
}

Outcome contraction(const std::filesystem::path& run_dir, int status) {
    const json m = read_json(run_dir / "manifest.json");
    if (status != 0) return {false, "run exited with status " + std::to_string(status)};
    const json& st = m["certificates"]["stages"];
    int bad_dist = 0, bad_l2 = 0;
    double worst_l2 = 0.0;
    for (std::size_t k = 0; k < st.size(); ++k) {
        const double target = std::min(std::exp2(-static_cast<int>(k + 1)), 0.5 * st[k]["dist_before_d1"].get<double>());
        bad_dist += st[k]["dist_integral"]["value"].get<double>() > target + st[k]["quad_tol"].get<double>();
        if (k == 0) continue;
        for (std::size_t j = 0; j < st[k]["l2_norms"].size(); ++j) {
            const double diff =
                st[k]["l2_norms"][j]["value"].get<double>() - st[k - 1]["l2_norms"][j]["value"].get<double>();
            const double tol = 3.0 * st[k]["l2_increment"][j]["stderr"].get<double>();
            bad_l2 += diff < -tol;
            worst_l2 = std::min(worst_l2, diff + tol);
        }
    }
    return {st.size() == 6 && bad_dist == 0 && bad_l2 == 0,
            std::to_string(st.size()) + " stages, dist " + fmt(st.front()["dist_before_d1"].get<double>()) + " -> " +
                fmt(st.back()["dist_integral"]["value"].get<double>()) + ", target misses " + std::to_string(bad_dist) +
                ", L2 decreases beyond tolerance " + std::to_string(bad_l2)};
}

Outcome census(const std::filesystem::path& run_dir, int status) {
    if (status != 0) return {false, "run exited with status " + std::to_string(status)};
    const json c = read_json(run_dir / "census.json");
    if (!c.contains("0")) return {false, "no active region in census.json"};
    const json& r = c["0"];
    const std::size_t listed = r["listed"].get<std::size_t>();
    const double captured = r["captured"].get<double>(), tv = r["tv_distance"].get<double>();
    return {listed == 5 && captured >= 0.9 && tv <= 0.15,
            std::to_string(listed) + " clusters above 1% (" + std::to_string(r["total_clusters"].get<int>()) +
                " in all), captured " + fmt(captured) + ", TV " + fmt(tv)};
}

/// Non-negative test functions over the dumped time span.
std::vector<TestFunction> nonneg_family(const DumpSet& d) {
    FamilyOptions o;
    o.nonnegative = true;
    return make_family(d.times.front(), d.times.back(), d.grid.L, o);
}

Outcome admissibility(const std::filesystem::path& pc_dir, const std::filesystem::path& pd_dir, int pd_status) {
    constexpr double tol = 1e-6;
    const DumpSet a = load_dump(pc_dir / "ansatz");
    const auto fa = nonneg_family(a);
    double a_lo = 1e300, a_hi = -1e300;
    for (const auto& v : admissibility_residual(a, fa, tol)) {
        a_lo = std::min(a_lo, v.value.value / v.value.scale);
        a_hi = std::max(a_hi, v.value.value / v.value.scale);
    }
    const DumpSet it = load_dump(pc_dir / "fields");
    double it_lo = 1e300, it_sigma = 0.0;
    for (const auto& v : admissibility_residual(it, fa, tol)) {
        it_lo = std::min(it_lo, v.value.value / v.value.scale);
        it_sigma = std::max(it_sigma, std::abs(v.value.value) / std::max(v.value.spread, 1e-300));
    }
    if (pd_status != 0) return {false, "perturbed-density run exited with status " + std::to_string(pd_status)};
    const DumpSet b = load_dump(pd_dir / "fields");
    const auto fb = nonneg_family(b);
    double b_lo = 1e300;
    for (const auto& v : admissibility_residual(b, fb, tol)) b_lo = std::min(b_lo, v.value.value / v.value.scale);
    const json dec = read_json(pd_dir / "manifest.json")["certificates"]["decay"];
    const bool ok_a = a_lo >= -tol && a_hi <= tol, ok_b = b_lo >= -tol, ok_d = dec["ok"].get<bool>();
    return {ok_a && ok_b && ok_d,
            "(a) ansatz in [" + fmt(a_lo) + ", " + fmt(a_hi) + "] x scale; (b) min " + fmt(b_lo) +
                " x scale; decay kappa " + fmt(dec["kappa"].get<double>()) + " worst ratio " +
                fmt(dec["worst_ratio"].get<double>()) + "; iterated dump min " + fmt(it_lo) +
                " x scale, max |value|/spread " + fmt(it_sigma)};
}

Outcome chi_feasibility() {
    ChiParams p;
    p.mode = ChiMode::general_source;
    p.beta = 1.0;
    p.c0 = 10.0;
    p.chi0 = 0.1;
    p.eps = 1e-3;
    const ChiCurve small = solve_chi(p, TimeCutoff(), false);
    p.eps = 1.0;
    const ChiCurve large = solve_chi(p, TimeCutoff(), false);
    return {small.feasible && !large.feasible,
            "eps 1e-3 feasible " + std::string(small.feasible ? "yes" : "no") + " (margin " + fmt(small.min_margin) +
                "), eps 1 feasible " + (large.feasible ? "yes" : "no") + " (blow-down at t = " + fmt(large.blow_down) +
                ")"};
}

int affine_rank(const Eigen::MatrixXd& S0) {
    Eigen::MatrixXd S = S0;
    const Eigen::VectorXd mean = S.rowwise().mean();
    S.colwise() -= mean;
    const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(S).singularValues();
    int r = 0;
    for (int i = 0; i < sv.size(); ++i) r += sv(i) > 1e-8 * sv(0);
    return r;
}

Outcome sampling_rank() {
    std::mt19937_64 rng(606);
    std::normal_distribution<double> G(0.0, 1.0);
    const ConstraintParams p(1.0, 0.5);
    std::string detail;
    bool ok = true;
    for (int n : {2, 3}) {
        Eigen::VectorXd xi0 = Eigen::VectorXd::Zero(n);
        xi0(0) = 0.6;
        xi0(1) = 0.8;
        const StatePoint w0 = k_point(p, xi0);
        const int target = n * (n + 3) / 2 - 1;
        detail += "n = " + std::to_string(n) + ":";
        for (double delta : {0.3, 0.1, 0.03}) {
            Eigen::MatrixXd S(target, 1000);
            int outside = 0;
            for (int i = 0; i < 1000; ++i) {
                StatePoint w;
                do {
                    Eigen::VectorXd xi = xi0;
                    for (int c = 0; c < n; ++c) xi(c) += 0.3 * delta * G(rng);
                    w = k_point(p, xi.normalized());
                } while ((w - w0).norm() >= delta && ++outside);
                S.col(i) = w.coords();
            }
            const int r = affine_rank(S);
            ok = ok && r == target;
            detail += " " + std::to_string(r);
        }
        detail += " (N = " + std::to_string(target) + (n == 2 ? "); " : ")");
    }
    return {ok, "affine rank at radii 0.3, 0.1, 0.03 with 1000 samples: " + detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string configs = CILAB_CONFIG_DIR, out = "acceptance";
    int threads = 1;
    std::vector<int> only;
    app.add_option("--configs", configs, "Directory of the bundled configs")->capture_default_str();
    app.add_option("--out", out, "Scratch directory for the runs")->capture_default_str();
    app.add_option("--threads", threads, "Worker threads for the scheme runs");
    app.add_option("--only", only, "Run only these criteria (1-10)");
    CLI11_PARSE(app, argc, argv);

    const std::filesystem::path root(out);
    std::filesystem::create_directories(root);
    std::ofstream run_log(root / "runs.log");
    auto run_config = [&](const std::string& name) {
        RunConfig cfg = load_config(std::filesystem::path(configs) / (name + ".json"));
        RunOverrides o;
        o.threads = threads;
        apply_overrides(cfg, o);
        return run(cfg, root / name, run_log);
    };

    auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    int failures = 0;
    auto report = [&](int id, const std::string& name, double limit, double seconds, const Outcome& o) {
        const bool pass = o.pass && seconds <= limit;
        failures += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << fmt(seconds)
                  << " s, limit " << limit << " s)" << std::endl;
    };
    auto timed = [&](int id, const std::string& name, double limit, auto&& fn) {
        if (!selected(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        report(id, name, limit, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), o);
    };

    timed(1, "extreme-point count", 60, extreme_points);
    timed(2, "hull characterization", 60, hull_characterization);
    timed(3, "wave exactness", 120, wave_exactness);
    timed(4, "frequency law", 120, frequency_law);
    timed(5, "divergence solver round trip", 30, divergence_solver);

    const auto t0 = std::chrono::steady_clock::now();
    int pc_status = -1;
    std::string pc_error;
    if (selected(6) || selected(7) || selected(8)) try {
            pc_status = run_config("two_region");
        } catch (const std::exception& e) {
            pc_error = e.what();
        }
    const double pc_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto from_run = [&](auto&& fn) {
        if (!pc_error.empty()) return Outcome{false, "error: " + pc_error};
        try {
            return fn();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("error: ") + e.what()};
        }
    };
    if (selected(6))
        report(6, "scheme contraction", 1800, pc_seconds, from_run([&] { return contraction(root / "two_region", pc_status); }));
    if (selected(7))
        report(7, "finite-states census", 1800, pc_seconds, from_run([&] { return census(root / "two_region", pc_status); }));

    timed(8, "admissibility", 600, [&] {
        if (!pc_error.empty()) return Outcome{false, "error: " + pc_error};
        const int pd = run_config("perturbed_density");
        return admissibility(root / "two_region", root / "perturbed_density", pd);
    });
    timed(9, "chi feasibility boundary", 10, chi_feasibility);
    timed(10, "sampling rank", 60, sampling_rank);

    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
