#include "cilab/geometry.hpp"

#include "cilab/lp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cilab {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

int dim_of(int n) { return StatePoint::state_dim(n); }

void check_n(int n) {
    if (n != 2 && n != 3) throw GeometryError("state dimension n must be 2 or 3");
}

}  // namespace

// ---- StatePoint ----

Eigen::VectorXd StatePoint::momentum() const {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = m[i];
    return v;
}

Eigen::MatrixXd StatePoint::U() const {
    Eigen::MatrixXd M(n, n);
    if (n == 2) {
        M << u[0], u[1], u[1], -u[0];
    } else {
        M << u[0], u[2], u[3], u[2], u[1], u[4], u[3], u[4], -u[0] - u[1];
    }
    return M;
}

StatePoint StatePoint::from(const Eigen::VectorXd& mv, const Eigen::MatrixXd& Um) {
    StatePoint w;
    w.n = static_cast<int>(mv.size());
    check_n(w.n);
    for (int i = 0; i < w.n; ++i) w.m[i] = mv(i);
    if (w.n == 2) {
        w.u[0] = 0.5 * (Um(0, 0) - Um(1, 1));
        w.u[1] = 0.5 * (Um(0, 1) + Um(1, 0));
    } else {
        const double tr = Um.trace() / 3.0;
        w.u[0] = Um(0, 0) - tr;
        w.u[1] = Um(1, 1) - tr;
        w.u[2] = 0.5 * (Um(0, 1) + Um(1, 0));
        w.u[3] = 0.5 * (Um(0, 2) + Um(2, 0));
        w.u[4] = 0.5 * (Um(1, 2) + Um(2, 1));
    }
    return w;
}

Eigen::VectorXd StatePoint::coords() const {
    Eigen::VectorXd c(dim_of(n));
    if (n == 2) {
        c << m[0], m[1], kSqrt2 * u[0], kSqrt2 * u[1];
    } else {
        c << m[0], m[1], m[2], (u[0] - u[1]) / kSqrt2, std::sqrt(1.5) * (u[0] + u[1]), kSqrt2 * u[2],
            kSqrt2 * u[3], kSqrt2 * u[4];
    }
    return c;
}

StatePoint StatePoint::from_coords(int n, const Eigen::VectorXd& c) {
    check_n(n);
    StatePoint w;
    w.n = n;
    if (n == 2) {
        w.m = {c(0), c(1), 0.0};
        w.u[0] = c(2) / kSqrt2;
        w.u[1] = c(3) / kSqrt2;
    } else {
        w.m = {c(0), c(1), c(2)};
        const double s = c(4) / std::sqrt(1.5);  // U11 + U22
        const double d = c(3) * kSqrt2;          // U11 - U22
        w.u[0] = 0.5 * (s + d);
        w.u[1] = 0.5 * (s - d);
        w.u[2] = c(5) / kSqrt2;
        w.u[3] = c(6) / kSqrt2;
        w.u[4] = c(7) / kSqrt2;
    }
    return w;
}

StatePoint StatePoint::operator+(const StatePoint& o) const {
    StatePoint r = *this;
    for (int i = 0; i < 3; ++i) r.m[i] += o.m[i];
    for (int i = 0; i < 5; ++i) r.u[i] += o.u[i];
    return r;
}

StatePoint StatePoint::operator-(const StatePoint& o) const {
    StatePoint r = *this;
    for (int i = 0; i < 3; ++i) r.m[i] -= o.m[i];
    for (int i = 0; i < 5; ++i) r.u[i] -= o.u[i];
    return r;
}

StatePoint StatePoint::operator*(double s) const {
    StatePoint r = *this;
    for (auto& x : r.m) x *= s;
    for (auto& x : r.u) x *= s;
    return r;
}

ConstraintParams::ConstraintParams(double rho_, double q_) : rho(rho_), q(q_) {
    if (!(rho > 0.0) || !(q >= 0.0) || !std::isfinite(rho) || !std::isfinite(q))
        throw GeometryError("constraint params need rho > 0 and q >= 0");
}

// ---- K and its hull ----

StatePoint k_point(const ConstraintParams& p, const Eigen::VectorXd& xi) {
    const int n = static_cast<int>(xi.size());
    check_n(n);
    const double a = std::sqrt(n * p.rho * p.q);
    Eigen::MatrixXd U = n * p.q * xi * xi.transpose() - p.q * Eigen::MatrixXd::Identity(n, n);
    return StatePoint::from(a * xi, U);
}

StatePoint k_point_angle(const ConstraintParams& p, double theta) {
    StatePoint w;
    w.n = 2;
    const double a = std::sqrt(2.0 * p.rho * p.q);
    w.m = {a * std::cos(theta), a * std::sin(theta), 0.0};
    w.u[0] = p.q * std::cos(2.0 * theta);
    w.u[1] = p.q * std::sin(2.0 * theta);
    return w;
}

double hull_margin(const StatePoint& w, const ConstraintParams& p) {
    if (w.n == 2) {
        const double a = p.rho * p.q + p.rho * w.u[0] - w.m[0] * w.m[0];
        const double c = p.rho * p.q - p.rho * w.u[0] - w.m[1] * w.m[1];
        const double b = p.rho * w.u[1] - w.m[0] * w.m[1];
        return 0.5 * (a + c) - std::hypot(0.5 * (a - c), b);
    }
    const Eigen::VectorXd m = w.momentum();
    Eigen::MatrixXd M = p.rho * p.q * Eigen::MatrixXd::Identity(3, 3) + p.rho * w.U() - m * m.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

namespace {

/// argmax over K of the linear functional y . coords(k), n = 2.
double argmax_angle(const ConstraintParams& p, const Eigen::VectorXd& y) {
    const double A = std::sqrt(2.0 * p.rho * p.q);
    const double C = kSqrt2 * p.q;
    auto g = [&](double t) {
        return A * (y(0) * std::cos(t) + y(1) * std::sin(t)) + C * (y(2) * std::cos(2 * t) + y(3) * std::sin(2 * t));
    };
    auto g1 = [&](double t) {
        return A * (-y(0) * std::sin(t) + y(1) * std::cos(t)) +
               2 * C * (-y(2) * std::sin(2 * t) + y(3) * std::cos(2 * t));
    };
    auto g2 = [&](double t) {
        return A * (-y(0) * std::cos(t) - y(1) * std::sin(t)) -
               4 * C * (y(2) * std::cos(2 * t) + y(3) * std::sin(2 * t));
    };
    constexpr int M = 64;
    const double h = 2.0 * M_PI / M;
    std::array<double, M> v{};
    for (int k = 0; k < M; ++k) v[k] = g(k * h);
    double best_t = 0.0, best = -INFINITY;
    for (int k = 0; k < M; ++k) {
        if (v[k] < v[(k + M - 1) % M] || v[k] < v[(k + 1) % M]) continue;
        // golden section on [t-h, t+h]
        double lo = k * h - h, hi = k * h + h;
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
        double f1 = g(x1), f2 = g(x2);
        while (hi - lo > 1e-10) {
            if (f1 < f2) {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + gr * (hi - lo);
                f2 = g(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - gr * (hi - lo);
                f1 = g(x1);
            }
        }
        double t = 0.5 * (lo + hi);
        // Newton polish on g' = 0 (golden section alone stalls near sqrt(eps))
        for (int it = 0; it < 3; ++it) {
            const double d2 = g2(t);
            if (d2 >= 0.0) break;
            const double step = g1(t) / d2;
            if (std::abs(step) > h) break;
            t -= step;
        }
        const double val = g(t);
        if (val > best) {
            best = val;
            best_t = t;
        }
    }
    return best_t;
}

/// argmax over the unit sphere of b.xi + xi^T S xi by multistart majorization.
Eigen::Vector3d argmax_sphere(const Eigen::Vector3d& b, const Eigen::Matrix3d& S) {
    auto f = [&](const Eigen::Vector3d& x) { return b.dot(x) + x.dot(S * x); };
    const double shift = S.norm() + 1e-300;
    const Eigen::Matrix3d Sp = S + shift * Eigen::Matrix3d::Identity();
    constexpr int M = 200;
    std::vector<std::pair<double, Eigen::Vector3d>> starts;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < M; ++k) {
        const double z = 1.0 - 2.0 * (k + 0.5) / M;
        const double r = std::sqrt(1.0 - z * z);
        Eigen::Vector3d x(r * std::cos(golden * k), r * std::sin(golden * k), z);
        starts.push_back({f(x), x});
    }
    std::partial_sort(starts.begin(), starts.begin() + 4, starts.end(),
                      [](const auto& a, const auto& c) { return a.first > c.first; });
    Eigen::Vector3d best = starts[0].second;
    double bestv = -INFINITY;
    for (int s = 0; s < 4; ++s) {
        Eigen::Vector3d x = starts[s].second;
        for (int it = 0; it < 20000; ++it) {
            Eigen::Vector3d y = b + 2.0 * Sp * x;
            const double ny = y.norm();
            if (ny == 0.0) break;
            y /= ny;
            const double dx = (y - x).norm();
            x = y;
            if (dx < 1e-15) break;
        }
        const double v = f(x);
        if (v > bestv) {
            bestv = v;
            best = x;
        }
    }
    return best;
}

}  // namespace

/// K point maximizing y . coords(k).
StatePoint k_argmax_linear(const ConstraintParams& p, int n, const Eigen::VectorXd& y) {
    check_n(n);
    if (n == 2) return k_point_angle(p, argmax_angle(p, y));
    const StatePoint yw = StatePoint::from_coords(3, y);
    const Eigen::Vector3d b = std::sqrt(3.0 * p.rho * p.q) * yw.momentum();
    const Eigen::Matrix3d S = 3.0 * p.q * yw.U();
    return k_point(p, argmax_sphere(b, S));
}

double dist_to_K(const StatePoint& w, const ConstraintParams& p, StatePoint* nearest) {
    const StatePoint k = k_argmax_linear(p, w.n, w.coords());
    if (nearest) *nearest = k;
    return (w.coords() - k.coords()).norm();
}

double dist_to_K(const StatePoint& w, const ConstraintParams& p) { return dist_to_K(w, p, nullptr); }

StatePoint normalize_state(const StatePoint& w, const ConstraintParams& p) {
    if (!(p.q > 0.0)) throw GeometryError("scaling map needs q > 0");
    StatePoint r = w;
    const double sm = 1.0 / std::sqrt(w.n * p.rho * p.q);
    const double su = 1.0 / (w.n * p.q);
    for (auto& x : r.m) x *= sm;
    for (auto& x : r.u) x *= su;
    return r;
}

StatePoint denormalize_state(const StatePoint& w, const ConstraintParams& p, int n) {
    StatePoint r = w;
    r.n = n;
    const double sm = std::sqrt(n * p.rho * p.q);
    const double su = n * p.q;
    for (auto& x : r.m) x *= sm;
    for (auto& x : r.u) x *= su;
    return r;
}

// ---- LPs ----

double lp_max_slack(const std::vector<Eigen::VectorXd>& pts, const Eigen::VectorXd& t, std::vector<double>* weights) {
    const int N = static_cast<int>(pts.size());
    const int d = static_cast<int>(t.size());
    // w_i = s + y_i, y_i >= 0, s = s+ - s-
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d + 1, N + 2);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < N; ++i) {
        A.col(i).head(d) = pts[i];
        A(d, i) = 1.0;
        sum += pts[i];
    }
    A.col(N).head(d) = sum;
    A(d, N) = N;
    A.col(N + 1) = -A.col(N);
    Eigen::VectorXd b(d + 1);
    b.head(d) = t;
    b(d) = 1.0;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(N + 2);
    c(N) = 1.0;
    c(N + 1) = -1.0;
    const LpResult r = simplex_max(A, b, c);
    if (r.status != LpResult::Optimal) return -1.0;
    const double s = r.x(N) - r.x(N + 1);
    if (weights) {
        weights->resize(N);
        for (int i = 0; i < N; ++i) (*weights)[i] = s + r.x(i);
    }
    return s;
}

double lp_gauge(const std::vector<Eigen::VectorXd>& pts, const Eigen::VectorXd& t, std::vector<double>* weights) {
    const int N = static_cast<int>(pts.size());
    const int d = static_cast<int>(t.size());
    Eigen::VectorXd c0 = Eigen::VectorXd::Zero(d);
    for (const auto& v : pts) c0 += v;
    c0 /= N;
    const Eigen::VectorXd dir = t - c0;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d + 1, N + 2);
    for (int i = 0; i < N; ++i) {
        A.col(i).head(d) = pts[i];
        A(d, i) = 1.0;
    }
    A.col(N).head(d) = -dir;
    A.col(N + 1).head(d) = dir;
    Eigen::VectorXd b(d + 1);
    b.head(d) = c0;
    b(d) = 1.0;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(N + 2);
    c(N) = 1.0;
    c(N + 1) = -1.0;
    const LpResult r = simplex_max(A, b, c);
    if (r.status == LpResult::Unbounded) return INFINITY;
    if (r.status != LpResult::Optimal) return -INFINITY;
    if (weights) weights->assign(r.x.data(), r.x.data() + N);
    return r.x(N) - r.x(N + 1);
}

// ---- extreme point selection ----

namespace {

bool nondegenerate(const std::vector<Eigen::VectorXd>& v, const Eigen::VectorXd& center, double scale) {
    const int N = static_cast<int>(v.size());
    const int d = static_cast<int>(center.size());
    for (int skip = 0; skip < N; ++skip) {
        Eigen::MatrixXd M(d, N - 1);
        int c = 0;
        for (int i = 0; i < N; ++i)
            if (i != skip) M.col(c++) = v[i] - center;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
        if (svd.singularValues().minCoeff() <= 1e-8 * scale) return false;
    }
    return true;
}

std::vector<Eigen::VectorXd> sample_K(const ConstraintParams& p, int n, int M, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<Eigen::VectorXd> out;
    if (n == 2) {
        const double phase = 2.0 * M_PI * U(rng);
        for (int k = 0; k < M; ++k) out.push_back(k_point_angle(p, phase + 2.0 * M_PI * k / M).coords());
    } else {
        // Fibonacci sphere under a random rotation
        Eigen::Quaterniond qr(U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5);
        qr.normalize();
        const Eigen::Matrix3d R = qr.toRotationMatrix();
        const double golden = M_PI * (3.0 - std::sqrt(5.0));
        for (int k = 0; k < M; ++k) {
            const double z = 1.0 - 2.0 * (k + 0.5) / M;
            const double r = std::sqrt(1.0 - z * z);
            Eigen::Vector3d x(r * std::cos(golden * k), r * std::sin(golden * k), z);
            out.push_back(k_point(p, R * x).coords());
        }
    }
    return out;
}

}  // namespace

SimplexDecomposition select_extreme_points(const StatePoint& target, const ConstraintParams& p_in,
                                           std::uint64_t seed) {
    const int n = target.n;
    check_n(n);
    const double tol = 1e-9 * p_in.rho * p_in.q;
    if (!(p_in.q > 0.0) || hull_margin(target, p_in) <= tol)
        throw GeometryError("select_extreme_points: target not strictly inside conv K");
    // work on the normalized set K_{1,1/n}
    const ConstraintParams p(1.0, 1.0 / n);
    const Eigen::VectorXd t = normalize_state(target, p_in).coords();
    const int d = dim_of(n);
    const int Nstar = d + 1;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U01(0.0, 1.0);

    std::vector<Eigen::VectorXd> F = sample_K(p, n, n == 2 ? 60 : 200, rng);
    // column generation until the target lies inside the sampled hull
    for (int round = 0; round < 200; ++round) {
        const int N = static_cast<int>(F.size());
        Eigen::VectorXd c0 = Eigen::VectorXd::Zero(d);
        for (const auto& v : F) c0 += v;
        c0 /= N;
        const Eigen::VectorXd dir = t - c0;
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d + 1, N + 2);
        for (int i = 0; i < N; ++i) {
            A.col(i).head(d) = F[i];
            A(d, i) = 1.0;
        }
        A.col(N).head(d) = -dir;
        A.col(N + 1).head(d) = dir;
        Eigen::VectorXd b(d + 1);
        b << c0, 1.0;
        Eigen::VectorXd c = Eigen::VectorXd::Zero(N + 2);
        c(N) = 1.0;
        c(N + 1) = -1.0;
        const LpResult r = simplex_max(A, b, c);
        if (r.status != LpResult::Optimal) break;
        const double alpha = r.x(N) - r.x(N + 1);
        if (alpha > 1.0 + 1e-9) break;
        const Eigen::VectorXd yv = -r.dual.head(d);
        const Eigen::VectorXd kn = k_argmax_linear(p, n, yv).coords();
        if (yv.dot(kn) - r.dual(d) <= 1e-13) break;
        F.push_back(kn);
    }

    const double scale = std::sqrt(1.0 + 1.0 / n);  // |k| on K_{1,1/n}
    SimplexDecomposition best;
    best.slack = -1.0;
    const int trials = 24;
    for (int trial = 0; trial < trials; ++trial) {
        const int N = static_cast<int>(F.size());
        Eigen::MatrixXd A(d + 1, N);
        for (int i = 0; i < N; ++i) {
            A.col(i).head(d) = F[i];
            A(d, i) = 1.0;
        }
        Eigen::VectorXd b(d + 1);
        b << t, 1.0;
        Eigen::VectorXd c(N);
        for (int i = 0; i < N; ++i) c(i) = U01(rng);
        const LpResult r = simplex_max(A, b, c);
        if (r.status != LpResult::Optimal) continue;
        std::vector<Eigen::VectorXd> verts;
        for (int i = 0; i < N; ++i)
            if (r.x(i) > 1e-12) verts.push_back(F[i]);
        if (static_cast<int>(verts.size()) != Nstar) {
            // degenerate: perturb the sample set along the angular parameter
            for (auto& v : F) {
                const StatePoint w = StatePoint::from_coords(n, v);
                Eigen::VectorXd xi = w.momentum().normalized();
                for (int k = 0; k < n; ++k) xi(k) += 1e-3 * (U01(rng) - 0.5);
                v = k_point(p, xi.normalized()).coords();
            }
            continue;
        }
        std::vector<double> wts;
        const double s = lp_max_slack(verts, t, &wts);
        if (s <= 1e-9 || !nondegenerate(verts, t, scale)) continue;
        if (s > best.slack) {
            best.slack = s;
            best.vertices.clear();
            for (const auto& v : verts)
                best.vertices.push_back(denormalize_state(StatePoint::from_coords(n, v), p_in, n));
            best.weights = wts;
        }
    }
    if (best.slack <= 0.0) throw GeometryError("select_extreme_points: no nondegenerate selection found");
    return best;
}

std::vector<double> barycentric(const StatePoint& w, const SimplexDecomposition& dcmp) {
    const int N = static_cast<int>(dcmp.vertices.size());
    const int d = dim_of(w.n);
    Eigen::MatrixXd A(d + 1, N);
    for (int i = 0; i < N; ++i) {
        A.col(i).head(d) = dcmp.vertices[i].coords();
        A(d, i) = 1.0;
    }
    Eigen::VectorXd b(d + 1);
    b << w.coords(), 1.0;
    const Eigen::VectorXd mu = A.fullPivLu().solve(b);
    return std::vector<double>(mu.data(), mu.data() + N);
}

// ---- waves ----

WaveDirection wave_direction(const StatePoint& w1, const StatePoint& w2, double rho) {
    const int n = w1.n;
    check_n(n);
    if (w2.n != n) throw GeometryError("wave_direction: dimension mismatch");
    const Eigen::VectorXd m1 = w1.momentum(), m2 = w2.momentum();
    const double scale = 1.0 + std::max(m1.squaredNorm(), m2.squaredNorm()) / rho;
    auto on_some_K = [&](const StatePoint& w) {
        const Eigen::VectorXd m = w.momentum();
        const double q = m.squaredNorm() / (n * rho);
        Eigen::MatrixXd R = m * m.transpose() / rho - w.U() - q * Eigen::MatrixXd::Identity(n, n);
        return R.norm() <= 1e-8 * scale;
    };
    if (!on_some_K(w1) || !on_some_K(w2) ||
        std::abs(m1.squaredNorm() - m2.squaredNorm()) > 1e-8 * scale * rho)
        throw GeometryError("wave_direction: points not on a common K");
    const Eigen::VectorXd nb = m2 - m1;
    const double nn = nb.norm();
    if (nn <= 1e-14 * std::sqrt(scale)) throw GeometryError("wave_direction: coincident momenta");
    Eigen::VectorXd xi(n);
    if (n == 2) {
        xi << -nb(1) / nn, nb(0) / nn;
    } else {
        const Eigen::VectorXd nh = nb / nn;
        int ax = 0;
        for (int k = 1; k < 3; ++k)
            if (std::abs(nh(k)) < std::abs(nh(ax))) ax = k;
        Eigen::VectorXd e = Eigen::VectorXd::Unit(3, ax);
        xi = (e - e.dot(nh) * nh).normalized();
    }
    for (int k = 0; k < n; ++k) {
        if (std::abs(xi(k)) > 1e-14) {
            if (xi(k) < 0) xi = -xi;
            break;
        }
    }
    WaveDirection wd;
    wd.xi = xi;
    wd.tau = -xi.dot(m2) / rho;
    wd.profile = w2 - w1;
    return wd;
}

WaveStep plan_wave_step(const StatePoint& w, const SimplexDecomposition& dcmp, double margin) {
    const std::vector<double> mu = barycentric(w, dcmp);
    const int N = static_cast<int>(mu.size());
    const double mn = *std::min_element(mu.begin(), mu.end());
    if (!(margin > 0.0) || mn < margin * (1.0 - 1e-9))
        throw GeometryError("plan_wave_step: hull slack below margin");
    int bi = -1, bj = -1;
    double bestv = 0.0;
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
            if (mu[i] <= 0.5 * margin || mu[j] <= 0.5 * margin) continue;
            const double v = mu[i] * mu[j] * (dcmp.vertices[i] - dcmp.vertices[j]).coords().squaredNorm();
            if (v > bestv) {
                bestv = v;
                bi = i;
                bj = j;
            }
        }
    if (bi < 0) throw GeometryError("plan_wave_step: no admissible vertex pair");
    const StatePoint e = dcmp.vertices[bj] - dcmp.vertices[bi];
    const double a = mu[bj] - 0.5 * margin;
    const double b = mu[bi] - 0.5 * margin;
    WaveStep s;
    s.w1 = w - e * a;
    s.w2 = w + e * b;
    s.mu1 = b / (a + b);
    s.mu2 = a / (a + b);
    s.vi = bi;
    s.vj = bj;
    return s;
}

}  // namespace cilab

namespace cilab {

double hull_gauge_lp(const StatePoint& target, const ConstraintParams& p, int n_samples, std::uint64_t seed) {
    const int n = target.n;
    const int d = dim_of(n);
    std::mt19937_64 rng(seed);
    std::vector<Eigen::VectorXd> F = sample_K(p, n, n_samples, rng);
    Eigen::VectorXd c0 = Eigen::VectorXd::Zero(d);
    for (const auto& v : F) c0 += v;
    c0 /= static_cast<double>(F.size());
    const Eigen::VectorXd dir = target.coords() - c0;
    double alpha = -INFINITY;
    for (int round = 0; round < 500; ++round) {
        const int N = static_cast<int>(F.size());
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d + 1, N + 2);
        for (int i = 0; i < N; ++i) {
            A.col(i).head(d) = F[i];
            A(d, i) = 1.0;
        }
        A.col(N).head(d) = -dir;
        A.col(N + 1).head(d) = dir;
        Eigen::VectorXd b(d + 1);
        b << c0, 1.0;
        Eigen::VectorXd c = Eigen::VectorXd::Zero(N + 2);
        c(N) = 1.0;
        c(N + 1) = -1.0;
        const LpResult r = simplex_max(A, b, c);
        if (r.status == LpResult::Unbounded) return INFINITY;
        if (r.status != LpResult::Optimal) return -INFINITY;
        alpha = r.x(N) - r.x(N + 1);
        // the sampled hull lies inside conv K: alpha > 1 certifies membership
        if (alpha > 1.0 + 1e-12) return alpha;
        const Eigen::VectorXd yv = -r.dual.head(d);
        const Eigen::VectorXd kn = k_argmax_linear(p, n, yv).coords();
        const double rc = yv.dot(kn) - r.dual(d);
        if (rc <= 1e-13 * (1.0 + yv.norm())) break;
        // Lagrangian bound over all of K: alpha + rc < 1 certifies non-membership
        if (alpha + rc < 1.0 - 1e-12) return alpha + rc;
        F.push_back(kn);
    }
    return alpha;
}

}  // namespace cilab
