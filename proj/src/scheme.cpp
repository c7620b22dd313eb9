#include "cilab/scheme.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace cilab {

void IterationConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw SchemeError(std::string("iteration config: ") + what);
    };
    need(max_stages >= 0, "max_stages must be >= 0");
    need(r0 > 0.0, "r0 must be positive");
    need(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0, 1)");
    need(deficit > 0.0, "deficit must be positive");
    need(margin_cap > 0.0 && margin_cap < 1.0, "margin_cap must lie in (0, 1)");
    need(inner_fraction > 0.0 && inner_fraction < 1.0, "inner_fraction must lie in (0, 1)");
    need(delta > 0.0 && delta < 0.5, "delta must lie in (0, 1/2)");
    need(lambda_safety > 0.0, "lambda_safety must be positive");
    need(max_doublings >= 0, "max_doublings must be >= 0");
    need(max_layers_per_stage >= 1, "max_layers_per_stage must be >= 1");
    need(quad_refine >= 1, "quad_refine must be >= 1");
    need(settle > 0.0 && settle <= 1.0, "settle must lie in (0, 1]");
    need(atom_checks >= 0, "atom_checks must be >= 0");
    need(weak_budget > 0.0, "weak_budget must be positive");
    need(!test_gradient_bounds.empty(), "test family must be nonempty");
    for (double g : test_gradient_bounds) need(g > 0.0, "test gradient bounds must be positive");
    need(!windows.empty() && std::abs(windows.back() - 1.0) < 1e-12, "windows must end at 1");
    for (std::size_t j = 0; j < windows.size(); ++j)
        need(windows[j] > 0.0 && (j == 0 || windows[j] > windows[j - 1]), "windows must increase");
    need(threads >= 1, "threads must be >= 1");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Relative position of particle `particle` of node `id` in its layer-`layer` cube.
Point3 cube_position(std::uint64_t seed, std::uint64_t id, int particle, int layer, bool centred_time) {
    std::uint64_t h = splitmix64(seed ^ splitmix64(id * 0x100000001b3ULL + static_cast<std::uint64_t>(particle)));
    h = splitmix64(h ^ splitmix64(static_cast<std::uint64_t>(layer) + 0x51ed27ULL));
    Point3 u;
    for (int c = 0; c < 3; ++c) {
        h = splitmix64(h);
        u[c] = ((h >> 11) + 0.5) * 0x1.0p-53 - 0.5;
    }
    if (centred_time) u[0] = 0.0;
    return u;
}

double finite_distance(const SimplexDecomposition& P, const StatePoint& w) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& v : P.vertices) d = std::min(d, (w - v).norm());
    return d;
}

/// Quantized smaller weight of a wave step: linear steps of 1/256 above 1/8,
/// steps of 2^{1/32} below.  The value never exceeds p.
std::pair<long long, double> quantize_weight(double p) {
    if (p >= 0.125) {
        const long long i = static_cast<long long>(std::floor(p * 256.0));
        return {i, i / 256.0};
    }
    const long long e = static_cast<long long>(std::floor(32.0 * std::log2(p)));
    return {e, std::exp2(e / 32.0)};
}

struct TowerEntry {
    std::shared_ptr<const ProfileTower> tower;
    double slope = 0.0;  ///< sup |h0'|
};

class TowerCache {
public:
    explicit TowerCache(double delta) : delta_(delta) {}
    TowerEntry get(long long key, double mu1, double mu2) {
        {
            std::lock_guard<std::mutex> lock(m_);
            const auto it = map_.find(key);
            if (it != map_.end()) return it->second;
        }
        TowerEntry e;
        const double delta = std::min(delta_, 0.45 * std::min(mu1, mu2));
        auto t = std::make_shared<ProfileTower>(build_tower(mu1, mu2, delta));
        e.slope = 1.05 * (*t)[-1].sup_norm(200);
        e.tower = t;
        std::lock_guard<std::mutex> lock(m_);
        return map_.emplace(key, e).first->second;
    }
    std::size_t size() const { return map_.size(); }

private:
    double delta_;
    std::mutex m_;
    std::map<long long, TowerEntry> map_;
};

struct LayerContext {
    const IterationConfig* cfg = nullptr;
    int stage = 1;
    double settle_threshold = 0.0;
    Eigen::Matrix2d B = Eigen::Matrix2d::Zero();
    double lip0 = 0.0;
    double amplitude = 1.0;
    std::shared_ptr<const PiecewisePoly> ramp;
    double ramp_slope = 0.0;
    TowerCache* towers = nullptr;
    bool initial_pass = false;
};

struct LayerStats {
    std::size_t processed = 0;
    std::size_t uncovered = 0;
    std::size_t doublings = 0;
    double centre_offset = 0.0;
    std::vector<double> lambdas;
};

/// Advances one particle by one layer.  Returns false when the particle is settled.
bool advance(const SchemeNode& n, Particle& p, int pidx, const LayerContext& ctx, LayerStats& stats,
             WaveAtom* keep) {
    const IterationConfig& cfg = *ctx.cfg;
    const SimplexDecomposition& P = *n.points;
    if (finite_distance(P, p.w) <= ctx.settle_threshold) return false;
    const std::vector<double> mu = barycentric(p.w, P);
    const double minmu = *std::min_element(mu.begin(), mu.end());
    if (!(minmu > 0.0)) {
        std::ostringstream os;
        os << "one_stage: strictness lost at node (slice " << n.slice << ", " << n.i1 << ", " << n.i2
           << "), min weight " << minmu;
        throw SchemeError(os.str());
    }
    if (!p.started) {
        double s = std::min(cfg.r0 * std::exp2(-ctx.stage), n.boundary_distance);
        if (n.initial) s = std::min(s, std::exp2(-ctx.stage));
        if (ctx.lip0 > 0.0) s = std::min(s, cfg.kappa * ctx.amplitude / ctx.lip0);
        if (!(s > 0.0)) {
            ++stats.uncovered;
            return false;
        }
        p.log2_side = std::log2(s);
        p.osc = s * ctx.lip0;
        p.started = true;
    }
    const double margin = std::min(minmu, cfg.margin_cap);
    const WaveStep ws = plan_wave_step(p.w, P, margin);
    const StatePoint e = P.vertices[ws.vj] - P.vertices[ws.vi];
    const double total = (ws.w2 - ws.w1).norm() / e.norm();
    double b = ws.mu1 * total, a = ws.mu2 * total;
    const bool first_small = ws.mu1 <= ws.mu2;
    const auto [key, pq] = quantize_weight(std::min(ws.mu1, ws.mu2));
    double mu1, mu2;
    if (first_small) {
        mu1 = pq;
        mu2 = 1.0 - pq;
        b = a * pq / (1.0 - pq);
    } else {
        mu2 = pq;
        mu1 = 1.0 - pq;
        a = b * pq / (1.0 - pq);
    }
    const TowerEntry te = ctx.towers->get(2 * key + (first_small ? 0 : 1), mu1, mu2);

    WaveAtom atom;
    atom.base = p.w;
    atom.w1 = p.w - e * a;
    atom.w2 = p.w + e * b;
    atom.mu1 = mu1;
    atom.mu2 = mu2;
    const StatePoint wbar = atom.w2 - atom.w1;
    atom.direction = lambda_direction(wbar);
    atom.B_hat = std::exp2(p.log2_side) * ctx.B;
    atom.box = Box{};
    atom.inner_fraction = cfg.inner_fraction;
    atom.tower = te.tower;
    atom.ramp = ctx.ramp;
    const double amp = wbar.norm();
    const double tau = std::abs(atom.direction.tau);

    const Point3 u = cube_position(cfg.seed, n.id, pidx, p.layers, n.initial);
    double lam = std::max(64.0, cfg.lambda_safety * amp * n.gain * (1.0 + tau) * ctx.ramp_slope / margin);
    StatePoint v;
    for (int d = 0;; ++d) {
        atom.lambda_hat = lam;
        v = p.w + atom.evaluate(u);
        const std::vector<double> nu = barycentric(v, P);
        if (*std::min_element(nu.begin(), nu.end()) >= 0.125 * margin) break;
        if (d >= cfg.max_doublings) {
            std::ostringstream os;
            os << "one_stage: lambda cap reached at node (slice " << n.slice << ", " << n.i1 << ", " << n.i2
               << ") with lambda_hat " << lam;
            throw SchemeError(os.str());
        }
        lam *= 2.0;
        ++stats.doublings;
    }
    const double G = 1.5 * amp * (lam * (1.0 + tau) * te.slope + 3.0 * ctx.ramp_slope);
    p.weak += amp * std::exp2(p.log2_side) * std::sqrt(0.5);
    p.pair += amp * std::sqrt(3.0) * p.osc;
    stats.centre_offset = std::max(stats.centre_offset, 0.5 * std::sqrt(3.0) * p.osc);
    // next cube: w varies by at most sqrt(3) kappa A on it
    const double ratio = std::min(0.5, cfg.kappa * ctx.amplitude / (p.osc + G));
    p.osc = ratio * (p.osc + G);
    p.log2_side += std::log2(ratio);
    p.w = v;
    p.dist = -1.0;
    ++p.layers;
    ++stats.processed;
    stats.lambdas.push_back(lam);
    if (keep) *keep = atom;
    return true;
}

template <class F>
void parallel_nodes(std::size_t count, int threads, F&& f) {
    const int T = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(count, 1))));
    if (T == 1) {
        for (std::size_t i = 0; i < count; ++i) f(i, 0);
        return;
    }
    std::vector<std::exception_ptr> errs(T);
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < count; i += T) f(i, t);
            } catch (...) {
                errs[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

Estimate mean_estimate(const std::vector<double>& x, double scale) {
    Estimate r;
    if (x.empty()) return r;
    const double n = static_cast<double>(x.size());
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    r.value = scale * m;
    r.stderr_ = x.size() > 1 ? scale * std::sqrt(ss / (n - 1) / n) : 0.0;
    return r;
}

void refresh_distances(SchemeState& st, int threads) {
    parallel_nodes(st.nodes.size(), threads, [&](std::size_t i, int) {
        SchemeNode& n = st.nodes[i];
        for (Particle& p : n.particles)
            if (p.dist < 0.0) p.dist = node_distance(n, p);
    });
}

/// int_D dist over the interior nodes (or the mean over the t = 0 nodes when initial).
Estimate dist_estimate(const SchemeState& st, bool initial) {
    std::vector<double> x;
    for (const SchemeNode& n : st.nodes) {
        if (n.initial != initial) continue;
        for (const Particle& p : n.particles) x.push_back(p.dist);
    }
    return mean_estimate(x, initial ? 1.0 : st.measure);
}

struct SpotCheck {
    double residual = 0.0;
    double sup_distance = 0.0;
};

SpotCheck spot_check(const WaveAtom& a, std::uint64_t seed) {
    SpotCheck r;
    if (a.zero) return r;
    std::vector<Point3> pts;
    for (int i = 0; i < 16; ++i) pts.push_back(cube_position(seed, 0x5eedULL + i, 0, i, false));
    const WaveResidual wr = wave_residual(a, pts, false);
    const double scale = a.amplitude() * a.lambda_hat * (1.0 + std::abs(a.direction.tau));
    r.residual = std::max(wr.divergence, wr.momentum) / scale;
    WaveOptions o;
    o.ramp_samples = 2;
    o.plateau_samples = 2;
    r.sup_distance = sampled_sup_distance(a, o) / a.amplitude();
    return r;
}

/// Runs layers on the selected nodes until the estimate reaches the target.
void run_layers(SchemeState& st, int stage, double eps, const IterationConfig& cfg, StageReport& rep, bool initial,
                TowerCache& towers) {
    LayerContext ctx;
    ctx.cfg = &cfg;
    ctx.stage = stage;
    ctx.B = st.base.B;
    ctx.lip0 = st.lip0;
    ctx.amplitude = st.amplitude;
    ctx.ramp = std::make_shared<PiecewisePoly>(plateau_ramp(cfg.inner_fraction));
    double slope = 0.0;
    for (int i = 0; i <= 20000; ++i) slope = std::max(slope, std::abs(ctx.ramp->eval(-0.5 + i / 20000.0, 1)));
    ctx.ramp_slope = 1.05 * slope;
    ctx.towers = &towers;
    ctx.initial_pass = initial;
    if (!(st.measure > 0.0)) return;
    const double target = initial ? eps / st.measure : eps;
    ctx.settle_threshold = cfg.settle * eps / st.measure;

    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < st.nodes.size(); ++i)
        if (st.nodes[i].initial == initial) sel.push_back(i);
    if (sel.empty()) return;
    std::vector<std::size_t> check_slots;
    for (int c = 0; c < cfg.atom_checks; ++c) check_slots.push_back(sel.size() * c / std::max(1, cfg.atom_checks));

    std::vector<double> lambdas;
    for (int layer = 0;; ++layer) {
        refresh_distances(st, cfg.threads);
        const Estimate est = dist_estimate(st, initial);
        if (cfg.progress) cfg.progress(stage, layer, est.value);
        if (est.value <= target) break;
        if (layer >= cfg.max_layers_per_stage) {
            std::ostringstream os;
            os << "one_stage: stage " << stage << " still has dist " << est.value << " > " << target << " after "
               << layer << " layers";
            throw SchemeError(os.str());
        }
        std::vector<LayerStats> per(std::max(1, cfg.threads));
        std::vector<WaveAtom> kept(check_slots.size());
        std::vector<char> has(check_slots.size(), 0);
        parallel_nodes(sel.size(), cfg.threads, [&](std::size_t k, int t) {
            SchemeNode& n = st.nodes[sel[k]];
            const auto slot = std::find(check_slots.begin(), check_slots.end(), k);
            for (std::size_t pi = 0; pi < n.particles.size(); ++pi) {
                WaveAtom* keep = (pi == 0 && slot != check_slots.end()) ? &kept[slot - check_slots.begin()] : nullptr;
                if (advance(n, n.particles[pi], static_cast<int>(pi), ctx, per[t], keep) && keep)
                    has[slot - check_slots.begin()] = 1;
            }
        });
        std::size_t processed = 0, uncovered = 0;
        for (const LayerStats& s : per) {
            processed += s.processed;
            uncovered += s.uncovered;
            rep.lambda_doublings += s.doublings;
            rep.centre_offset = std::max(rep.centre_offset, s.centre_offset);
            lambdas.insert(lambdas.end(), s.lambdas.begin(), s.lambdas.end());
        }
        rep.cubes += processed;
        ++rep.layers;
        const double weight = st.measure / std::max<std::size_t>(1, st.interior * cfg.quad_refine);
        const double unc = initial ? 0.0 : weight * uncovered;
        rep.uncovered = std::max(rep.uncovered, unc);
        if (unc > cfg.deficit * eps) {
            std::ostringstream os;
            os << "one_stage: covering leaves measure " << unc << " uncovered, above the deficit budget "
               << cfg.deficit * eps;
            throw SchemeError(os.str());
        }
        for (std::size_t c = 0; c < kept.size(); ++c) {
            if (!has[c]) continue;
            const SpotCheck sc = spot_check(kept[c], cfg.seed + static_cast<std::uint64_t>(layer));
            rep.atom_residual = std::max(rep.atom_residual, sc.residual);
            rep.atom_sup_distance = std::max(rep.atom_sup_distance, sc.sup_distance);
        }
        if (processed == 0 && uncovered == 0) break;
    }
    if (!lambdas.empty()) {
        std::sort(lambdas.begin(), lambdas.end());
        const double lo = lambdas.front(), hi = lambdas.back(), md = lambdas[lambdas.size() / 2];
        rep.lambda_min = rep.lambda_min > 0.0 ? std::min(rep.lambda_min, lo) : lo;
        rep.lambda_max = std::max(rep.lambda_max, hi);
        rep.lambda_median = std::max(rep.lambda_median, md);
    }
}

/// Sup-norm distance from each masked node to the nearest unmasked node minus h/2 (periodic).
std::vector<double> spatial_boundary_distance(const TorusGrid& g, const std::vector<char>& mask) {
    const int N = g.N;
    const double h = g.spacing();
    std::vector<double> d(g.nodes(), std::numeric_limits<double>::infinity());
    bool any_out = false;
    for (char c : mask) any_out = any_out || !c;
    if (!any_out) return d;
    auto at = [&](int i, int j) { return mask[static_cast<std::size_t>((i % N + N) % N) * N + (j % N + N) % N]; };
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            if (!at(i, j)) continue;
            for (int r = 1; r <= N / 2; ++r) {
                bool hit = false;
                for (int a = -r; a <= r && !hit; ++a)
                    hit = !at(i + a, j - r) || !at(i + a, j + r) || !at(i - r, j + a) || !at(i + r, j + a);
                if (hit) {
                    d[static_cast<std::size_t>(i) * N + j] = (r - 0.5) * h;
                    break;
                }
            }
        }
    return d;
}

double sigma_min_gain(const SimplexDecomposition& P) {
    const int N = static_cast<int>(P.vertices.size());
    const int d = static_cast<int>(P.vertices[0].coords().size());
    Eigen::MatrixXd A(d + 1, N);
    for (int i = 0; i < N; ++i) {
        A.col(i).head(d) = P.vertices[i].coords();
        A(d, i) = 1.0;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    return 1.0 / svd.singularValues().minCoeff();
}

double dot(const StatePoint& a, const StatePoint& b) { return a.coords().dot(b.coords()); }

std::vector<StatePoint> collect(const SchemeState& st) {
    std::vector<StatePoint> v;
    for (const SchemeNode& n : st.nodes)
        for (const Particle& p : n.particles) v.push_back(p.w);
    return v;
}

void reset_stage(SchemeState& st) {
    for (SchemeNode& n : st.nodes)
        for (Particle& p : n.particles) p.weak = p.pair = 0.0;
}

/// Stage-level monitors comparing w_{k+1} with w_k.
void monitors(const SchemeState& st, const std::vector<StatePoint>& prev, int k, const IterationConfig& cfg,
              StageReport& r) {
    const std::size_t J = cfg.windows.size();
    std::vector<std::vector<double>> l2(J), inc(J), pair(J);
    std::vector<double> pb;
    std::map<std::size_t, std::pair<double, std::size_t>> weak_slice;
    double min_w = std::numeric_limits<double>::infinity();
    std::size_t idx = 0;
    for (const SchemeNode& n : st.nodes) {
        for (const Particle& p : n.particles) {
            const StatePoint& old = prev[idx++];
            const std::vector<double> mu = barycentric(p.w, *n.points);
            min_w = std::min(min_w, *std::min_element(mu.begin(), mu.end()));
            if (n.initial) continue;
            const double nn = p.w.coords().squaredNorm();
            const double dn = nn - old.coords().squaredNorm();
            const double pr = dot(p.w - old, old);
            for (std::size_t j = 0; j < J; ++j) {
                const bool in = static_cast<std::size_t>(n.window) <= j;
                l2[j].push_back(in ? nn : 0.0);
                inc[j].push_back(in ? dn : 0.0);
                pair[j].push_back(in ? pr : 0.0);
            }
            pb.push_back(p.pair);
            auto& ws = weak_slice[n.slice];
            ws.first += p.weak / n.particles.size();
            ws.second += 1;
        }
    }
    r.l2_norms.clear();
    r.l2_increment.clear();
    r.pairing = Estimate{};
    r.l2_ok = true;
    for (std::size_t j = 0; j < J; ++j) {
        // sums over window j of a full-D sample: |D| times the mean of the indicator-weighted values
        const Estimate a = mean_estimate(l2[j], st.measure);
        const Estimate b = mean_estimate(inc[j], st.measure);
        const Estimate c = mean_estimate(pair[j], st.measure);
        r.l2_norms.push_back(a);
        r.l2_increment.push_back(b);
        if (b.value < -3.0 * b.stderr_) r.l2_ok = false;
        if (std::abs(c.value) >= std::abs(r.pairing.value)) r.pairing = Estimate{std::abs(c.value), c.stderr_};
    }
    r.pairing_bound = mean_estimate(pb, st.measure).value;
    r.pairing_target = st.measure > 0.0
                           ? std::min(std::exp2(-k), r.dist_before_d1 * r.dist_before_d1 / (100.0 * st.measure))
                           : 0.0;
    r.pairing_ok = r.pairing_bound < r.pairing_target || r.pairing_bound == 0.0;
    const double h2 = st.base.grid.spacing() * st.base.grid.spacing();
    double wmax = 0.0;
    for (const auto& [slice, acc] : weak_slice) wmax = std::max(wmax, h2 * acc.first);
    const double gmax = *std::max_element(cfg.test_gradient_bounds.begin(), cfg.test_gradient_bounds.end());
    r.weak_bound = gmax * wmax;
    r.weak_target = std::exp2(-k) * cfg.weak_budget;
    r.weak_ok = r.weak_bound <= r.weak_target;
    r.min_weight = min_w;
}

double saturation_median(const SchemeState& st) {
    std::vector<double> v;
    for (const SchemeNode& n : st.nodes) {
        if (!n.initial) continue;
        const StatePoint& w = n.particles[0].w;
        v.push_back(std::abs(w.m[0] * w.m[0] + w.m[1] * w.m[1] - 2.0 * n.rho * n.q));
    }
    if (v.empty()) return -1.0;
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

IterationResult finish(const SchemeState& st, IterationResult res) {
    res.state = st.snapshot();
    const TorusGrid& g = st.base.grid;
    res.dist.assign(st.base.slices(), ScalarField(g, 1, "dist"));
    for (std::size_t k = 0; k < st.base.slices(); ++k) res.dist[k].time = st.base.times[k];
    for (const SchemeNode& n : st.nodes) {
        const Particle& p = n.particles[0];
        res.dist[n.slice](n.i1, n.i2) = p.dist >= 0.0 ? p.dist : node_distance(n, p);
    }
    return res;
}

}  // namespace

double node_distance(const SchemeNode& n, const Particle& p) {
    return dist_to_K(p.w, ConstraintParams(n.rho, n.q));
}

SubsolutionState SchemeState::snapshot() const {
    SubsolutionState s = base;
    for (const SchemeNode& n : nodes) {
        const StatePoint& w = n.particles[0].w;
        s.m[n.slice](n.i1, n.i2, 0) = w.m[0];
        s.m[n.slice](n.i1, n.i2, 1) = w.m[1];
        s.U[n.slice](n.i1, n.i2, 0) = w.u[0];
        s.U[n.slice](n.i1, n.i2, 1) = w.u[1];
        s.U[n.slice](n.i1, n.i2, 2) = -w.u[0];
    }
    return s;
}

SchemeState prepare_region(const SubsolutionState& s, const IterationConfig& cfg, bool include_initial) {
    cfg.validate();
    if (s.slices() == 0) throw SchemeError("prepare_region: state has no slices");
    SchemeState st;
    st.base = s;
    st.t0 = std::isnan(cfg.t0) ? s.times.front() : cfg.t0;
    st.t1 = std::isnan(cfg.t1) ? s.times.back() : cfg.t1;
    if (!(st.t1 > st.t0)) throw SchemeError("prepare_region: empty time window");
    const TorusGrid& g = s.grid;
    const int N = g.N;
    std::vector<char> mask(g.nodes(), 0);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) mask[static_cast<std::size_t>(i) * N + j] = s.region_at(i, j).kind != RegionKind::inert;
    const std::vector<double> sd = spatial_boundary_distance(g, mask);

    std::map<int, std::shared_ptr<const SimplexDecomposition>> region_points;
    std::map<const SimplexDecomposition*, double> gains;
    std::size_t interior_slices = 0;
    std::size_t per_slice = 0;
    for (std::size_t k = 0; k < s.slices(); ++k) {
        const double t = s.times[k];
        const bool initial = include_initial && std::abs(t - st.t0) <= 1e-12 * std::max(1.0, std::abs(st.t0));
        const bool interior = t > st.t0 && t < st.t1;
        if (!initial && !interior) continue;
        if (!(t > s.strict_from)) continue;
        std::size_t count = 0;
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                if (!mask[static_cast<std::size_t>(i) * N + j] || !s.in_strict_region(k, i, j)) continue;
                SchemeNode n;
                n.slice = k;
                n.i1 = i;
                n.i2 = j;
                n.t = t;
                n.initial = initial;
                n.id = (static_cast<std::uint64_t>(k) * N + i) * N + j;
                const ConstraintParams cp = s.params(k, i, j);
                n.rho = cp.rho;
                n.q = cp.q;
                const StatePoint w = s.point(k, i, j);
                const RegionInfo& R = s.region_at(i, j);
                if (R.kind == RegionKind::finite && t >= s.finite_from) {
                    auto& ptr = region_points[R.label];
                    if (!ptr) ptr = std::make_shared<const SimplexDecomposition>(R.points);
                    n.points = ptr;
                } else {
                    n.points = std::make_shared<const SimplexDecomposition>(
                        select_extreme_points(w, cp, splitmix64(cfg.seed ^ n.id)));
                }
                const std::vector<double> mu = barycentric(w, *n.points);
                if (!(*std::min_element(mu.begin(), mu.end()) > 0.0)) {
                    std::ostringstream os;
                    os << "prepare_region: state is not strict at node (slice " << k << ", " << i << ", " << j << ")";
                    throw SchemeError(os.str());
                }
                auto git = gains.find(n.points.get());
                if (git == gains.end()) git = gains.emplace(n.points.get(), sigma_min_gain(*n.points)).first;
                n.gain = git->second;
                const double td = initial ? std::numeric_limits<double>::infinity() : std::min(t - st.t0, st.t1 - t);
                n.boundary_distance = std::min(sd[static_cast<std::size_t>(i) * N + j], td);
                n.window = 0;
                while (n.window + 1 < static_cast<int>(cfg.windows.size()) &&
                       t - st.t0 > cfg.windows[n.window] * (st.t1 - st.t0))
                    ++n.window;
                Particle p;
                p.w = w;
                n.particles.assign(cfg.quad_refine, p);
                for (const auto& v : n.points->vertices) st.amplitude = std::max(st.amplitude, (v - w).norm());
                st.nodes.push_back(std::move(n));
                ++count;
            }
        if (interior) {
            ++interior_slices;
            per_slice = std::max(per_slice, count);
            st.interior += count;
        }
    }
    if (include_initial) {
        bool any = false;
        for (const SchemeNode& n : st.nodes) any = any || n.initial;
        if (!any) throw SchemeError("iterate_with_initial_data: the t = 0 part of D is empty");
    }
    const double h2 = g.spacing() * g.spacing();
    const double cell = interior_slices ? h2 * (st.t1 - st.t0) / static_cast<double>(interior_slices) : 0.0;
    st.measure = cell * static_cast<double>(st.interior);
    st.window_measure.assign(cfg.windows.size(), 0.0);
    for (const SchemeNode& n : st.nodes)
        if (!n.initial)
            for (std::size_t j = n.window; j < cfg.windows.size(); ++j) st.window_measure[j] += cell;

    // Lipschitz bound of the base (m, U) on D from neighbour differences
    std::map<std::uint64_t, const SchemeNode*> by_id;
    for (const SchemeNode& n : st.nodes) by_id[n.id] = &n;
    double lip = 0.0;
    for (const SchemeNode& n : st.nodes) {
        const StatePoint w = s.point(n.slice, n.i1, n.i2);
        const int di[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (const auto& d : di) {
            const std::size_t k2 = n.slice + d[0];
            if (k2 >= s.slices()) continue;
            const int i2 = (n.i1 + d[1]) % N, j2 = (n.i2 + d[2]) % N;
            const auto it = by_id.find((static_cast<std::uint64_t>(k2) * N + i2) * N + j2);
            if (it == by_id.end()) continue;
            const double step = d[0] ? s.times[k2] - n.t : g.spacing();
            lip = std::max(lip, (s.point(k2, i2, j2) - w).norm() / step);
        }
    }
    st.lip0 = 1.5 * lip;
    return st;
}

void one_stage(SchemeState& st, int stage, double eps, const IterationConfig& cfg, StageReport& report) {
    TowerCache towers(cfg.delta);
    run_layers(st, stage, eps, cfg, report, false, towers);
}

namespace {

IterationResult run_iteration(const SubsolutionState& s, const IterationConfig& cfg, bool initial) {
    IterationResult res;
    SchemeState st = prepare_region(s, cfg, initial);
    TowerCache towers(cfg.delta);
    try {
        for (int k = 1; k <= cfg.max_stages; ++k) {
            const auto t_start = std::chrono::steady_clock::now();
            StageReport r;
            r.stage = k;
            refresh_distances(st, cfg.threads);
            r.dist_before_d1 = dist_estimate(st, false).value;
            r.eps_target = std::min(std::exp2(-k), 0.5 * r.dist_before_d1);
            const std::vector<StatePoint> prev = collect(st);
            reset_stage(st);
            if (initial) run_layers(st, k, r.eps_target, cfg, r, true, towers);
            run_layers(st, k, r.eps_target, cfg, r, false, towers);
            refresh_distances(st, cfg.threads);
            r.dist_integral = dist_estimate(st, false);
            r.dist_integral_d1 = r.dist_integral;
            r.quad_tol = 3.0 * r.dist_integral.stderr_;
            r.contraction_ok = r.dist_integral.value <= r.eps_target + r.quad_tol;
            monitors(st, prev, k, cfg, r);
            if (initial) r.saturation_median = saturation_median(st);
            r.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            res.reports.push_back(r);
        }
    } catch (const std::exception& e) {
        res.error = e.what();
    }
    res = finish(st, std::move(res));
    if (initial) {
        const TorusGrid& g = s.grid;
        res.m_diamond = res.state.m[0];
        res.m_diamond.name = "m_diamond";
        res.saturation = ScalarField(g, 1, "saturation");
        res.saturation.time = s.times[0];
        for (const SchemeNode& n : st.nodes) {
            if (!n.initial) continue;
            const StatePoint& w = n.particles[0].w;
            res.saturation(n.i1, n.i2) = std::abs(w.m[0] * w.m[0] + w.m[1] * w.m[1] - 2.0 * n.rho * n.q);
        }
    }
    return res;
}

}  // namespace

IterationResult iterate(const SubsolutionState& s, const IterationConfig& cfg) { return run_iteration(s, cfg, false); }

IterationResult iterate_with_initial_data(const SubsolutionState& s, const IterationConfig& cfg) {
    return run_iteration(s, cfg, true);
}

double region_amplitude(const RegionInfo& r) {
    if (r.kind != RegionKind::finite) return 0.0;
    double a = 0.0;
    for (const auto& v : r.points.vertices) a = std::max(a, v.norm());
    return a;
}

Census state_census(const SubsolutionState& s, int label, double tol, double t0, double t1, double min_fraction) {
    Census c;
    c.tol = tol;
    const TorusGrid& g = s.grid;
    const int N = g.N;
    struct Leader {
        Eigen::VectorXd x;
        StatePoint w;
        double rho;
        std::size_t count;
    };
    std::vector<Leader> leaders;
    std::size_t total = 0;
    for (std::size_t k = 0; k < s.slices(); ++k) {
        if (!(s.times[k] > t0 && s.times[k] < t1)) continue;
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                if (s.region[static_cast<std::size_t>(i) * N + j] != label) continue;
                const StatePoint w = s.point(k, i, j);
                const double rho = s.rho[k](i, j);
                Eigen::VectorXd x(5);
                x << rho, w.coords();
                ++total;
                bool found = false;
                for (Leader& L : leaders)
                    if ((L.x - x).norm() <= tol) {
                        ++L.count;
                        found = true;
                        break;
                    }
                if (!found) leaders.push_back({x, w, rho, 1});
            }
    }
    c.total_clusters = leaders.size();
    if (total == 0) return c;
    const RegionInfo* R = nullptr;
    for (const auto& r : s.regions)
        if (r.label == label) R = &r;
    const bool finite = R && R->kind == RegionKind::finite;
    if (finite) c.caratheodory = barycentric(StatePoint{}, R->points);
    std::vector<double> matched(finite ? R->points.vertices.size() : 0, 0.0);
    for (const Leader& L : leaders) {
        const double f = static_cast<double>(L.count) / static_cast<double>(total);
        if (f < min_fraction) continue;
        CensusCluster cl;
        cl.w = L.w;
        cl.rho = L.rho;
        cl.fraction = f;
        if (finite) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < R->points.vertices.size(); ++l) {
                const double d = (L.w - R->points.vertices[l]).norm();
                if (d < best) {
                    best = d;
                    cl.vertex = static_cast<int>(l);
                }
            }
            cl.vertex_distance = best;
            matched[cl.vertex] += f;
        }
        c.captured += f;
        c.clusters.push_back(cl);
    }
    std::sort(c.clusters.begin(), c.clusters.end(),
              [](const CensusCluster& a, const CensusCluster& b) { return a.fraction > b.fraction; });
    c.off_cluster = 1.0 - c.captured;
    if (finite) {
        double tv = c.off_cluster;
        for (std::size_t l = 0; l < matched.size(); ++l) tv += std::abs(matched[l] - c.caratheodory[l]);
        c.tv_distance = 0.5 * tv;
    }
    return c;
}

std::string stage_csv_header(std::size_t windows) {
    std::ostringstream os;
    os << "stage,eps_target,dist_before_d1,dist_integral,dist_stderr,dist_integral_d1,quad_tol";
    for (std::size_t j = 1; j <= windows; ++j) os << ",l2_D" << j << ",l2_D" << j << "_stderr";
    for (std::size_t j = 1; j <= windows; ++j) os << ",l2_increment_D" << j << ",l2_increment_D" << j << "_stderr";
    os << ",pairing,pairing_stderr,pairing_bound,pairing_target,weak_bound,weak_target,cubes,layers,lambda_min,"
          "lambda_median,lambda_max,lambda_doublings,atom_residual,atom_sup_distance,centre_offset,uncovered,"
          "saturation_median,min_weight,wall_seconds,contraction_ok,l2_ok,pairing_ok,weak_ok";
    return os.str();
}

std::string stage_csv_row(const StageReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << r.stage << ',' << r.eps_target << ',' << r.dist_before_d1 << ',' << r.dist_integral.value << ','
       << r.dist_integral.stderr_ << ',' << r.dist_integral_d1.value << ',' << r.quad_tol;
    for (const auto& e : r.l2_norms) os << ',' << e.value << ',' << e.stderr_;
    for (const auto& e : r.l2_increment) os << ',' << e.value << ',' << e.stderr_;
    os << ',' << r.pairing.value << ',' << r.pairing.stderr_ << ',' << r.pairing_bound << ',' << r.pairing_target
       << ',' << r.weak_bound << ',' << r.weak_target << ',' << r.cubes << ',' << r.layers << ',' << r.lambda_min
       << ',' << r.lambda_median << ',' << r.lambda_max << ',' << r.lambda_doublings << ',' << r.atom_residual << ','
       << r.atom_sup_distance << ',' << r.centre_offset << ',' << r.uncovered << ',' << r.saturation_median << ','
       << r.min_weight << ',' << r.wall_seconds << ',' << r.contraction_ok << ',' << r.l2_ok << ',' << r.pairing_ok
       << ',' << r.weak_ok;
    return os.str();
}

}  // namespace cilab
