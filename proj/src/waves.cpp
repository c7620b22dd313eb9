#include "cilab/waves.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace cilab {

namespace {

constexpr int kMaxOrder = 7;

/// Derivative tables of G = h6(Theta) phi and P_k = (d_k phi) h6(Theta) in
/// normalized coordinates, indexed [a_t][a_1][a_2] with total order <= K.
/// R is the arithmetic type; jets use long double to keep the cancellation in
/// the residual identities below double rounding at large lambda.
template <class R>
struct Tables {
    R G[8][8][8];
    R P[3][8][8][8];
};

const std::array<std::array<double, 8>, 8>& binomials() {
    static const auto C = [] {
        std::array<std::array<double, 8>, 8> c{};
        for (int n = 0; n < 8; ++n) {
            c[n][0] = 1.0;
            for (int k = 1; k <= n; ++k) c[n][k] = c[n - 1][k - 1] + (k < n ? c[n - 1][k] : 0.0);
        }
        return c;
    }();
    return C;
}

template <class R>
void fill_tables(const WaveAtom& a, const Point3& u, int K, Tables<R>& T) {
    const auto& C = binomials();
    const double lh = a.lambda_hat;
    const double d[3] = {a.direction.tau, a.direction.xi(0), a.direction.xi(1)};
    const double theta = lh * (d[0] * u[0] + d[1] * u[1] + d[2] * u[2]);
    R hv[kMaxOrder + 1];
    for (int j = 0; j <= K; ++j) hv[j] = (*a.tower)[6 - j](theta);
    R pw[3][kMaxOrder + 1];
    R F[3][kMaxOrder + 2];
    int bmax[3];
    for (int i = 0; i < 3; ++i) {
        pw[i][0] = 1.0;
        for (int k = 1; k <= K; ++k) pw[i][k] = pw[i][k - 1] * (R(lh) * R(d[i]));
        double Fd[kMaxOrder + 2];
        a.ramp->eval_all(u[i], K + 1, Fd);
        for (int k = 0; k <= K + 1; ++k) F[i][k] = Fd[k];
        const double f = a.inner_fraction;
        bmax[i] = (std::abs(u[i]) < 0.5 * f) ? 0 : K;
    }
    for (int g0 = 0; g0 <= K; ++g0)
        for (int g1 = 0; g0 + g1 <= K; ++g1)
            for (int g2 = 0; g0 + g1 + g2 <= K; ++g2) {
                R sG = 0, s0 = 0, s1 = 0, s2 = 0;
                for (int a0 = std::max(0, g0 - bmax[0]); a0 <= g0; ++a0)
                    for (int a1 = std::max(0, g1 - bmax[1]); a1 <= g1; ++a1)
                        for (int a2 = std::max(0, g2 - bmax[2]); a2 <= g2; ++a2) {
                            const int b0 = g0 - a0, b1 = g1 - a1, b2 = g2 - a2;
                            const R H = C[g0][a0] * C[g1][a1] * C[g2][a2] * pw[0][a0] * pw[1][a1] * pw[2][a2] *
                                             hv[a0 + a1 + a2];
                            const R f0 = F[0][b0], f1 = F[1][b1], f2 = F[2][b2];
                            sG += H * f0 * f1 * f2;
                            s0 += H * F[0][b0 + 1] * f1 * f2;
                            s1 += H * f0 * F[1][b1 + 1] * f2;
                            s2 += H * f0 * f1 * F[2][b2 + 1];
                        }
                T.G[g0][g1][g2] = sG;
                T.P[0][g0][g1][g2] = s0;
                T.P[1][g0][g1][g2] = s1;
                T.P[2][g0][g1][g2] = s2;
            }
}

/// (n1, n2, V11, V12) of the wave, differentiated once along axis e (or not, e < 0).
template <class R>
std::array<R, 4> assemble(const WaveAtom& a, const Tables<R>& T, int e) {
    const int e0 = e == 0, e1 = e == 1, e2 = e == 2;
    // The stored (wbar, tau, xi) meet the cone relations n.xi = 0, V xi = -tau n only to double
    // rounding, which the lambda h0' terms amplify.  Use the projection that meets them in R:
    // n -> n - (n.xi) xi / |xi|^2 and V = -tau (n (x) xi + xi (x) n) / |xi|^2 (unique in 2-D).
    const StatePoint wb = a.wbar();
    const R xi[2] = {a.direction.xi(0), a.direction.xi(1)};
    const R xx = xi[0] * xi[0] + xi[1] * xi[1];
    const R nx = (R(wb.m[0]) * xi[0] + R(wb.m[1]) * xi[1]) / xx;
    const R nb[2] = {wb.m[0] - nx * xi[0], wb.m[1] - nx * xi[1]};
    const R tau = a.direction.tau;
    const R Vb[2][2] = {{-2 * tau * nb[0] * xi[0] / xx, -tau * (nb[0] * xi[1] + nb[1] * xi[0]) / xx},
                        {-tau * (nb[0] * xi[1] + nb[1] * xi[0]) / xx, -2 * tau * nb[1] * xi[1] / xx}};
    const R B[2][2] = {{a.B_hat(0, 0), a.B_hat(0, 1)}, {a.B_hat(1, 0), a.B_hat(1, 1)}};
    auto G = [&](int i, int j, int k) { return T.G[i + e0][j + e1][k + e2]; };
    auto P = [&](int c, int i, int j, int k) { return T.P[c][i + e0][j + e1][k + e2]; };
    auto psi = [&](int i, int j, int k) { return nb[0] * P(1, i, j, k) + nb[1] * P(2, i, j, k); };
    // multi-index shifted by spatial axis c (0 or 1)
    auto aH = [&](int c, int i, int j, int k) {
        return nb[c] * P(0, i, j, k) + Vb[c][0] * P(1, i, j, k) + Vb[c][1] * P(2, i, j, k);
    };
    // d^gamma f_c for a spatial multi-index gamma = (0, j, k)
    auto fd = [&](int c, int j, int k) {
        R r = aH(c, 0, j + 2, k) + aH(c, 0, j, k + 2);
        r -= psi(1, j + (c == 0), k + (c == 1));
        const R lapG = G(0, j + 2, k) + G(0, j, k + 2);
        for (int q = 0; q < 2; ++q) r -= B[c][q] * (nb[q] * lapG - psi(0, j + (q == 0), k + (q == 1)));
        return r;
    };
    const R L6 = std::pow(R(a.lambda_hat), -6);
    const R D3G = G(0, 6, 0) + 3 * G(0, 4, 2) + 3 * G(0, 2, 4) + G(0, 0, 6);
    std::array<R, 4> out{};
    for (int c = 0; c < 2; ++c) {
        const int j = (c == 0), k = (c == 1);
        const R d2psi = psi(0, j + 4, k) + 2 * psi(0, j + 2, k + 2) + psi(0, j, k + 4);
        out[c] = L6 * (nb[c] * D3G - d2psi);
    }
    out[2] = L6 * Vb[0][0] * D3G;
    out[3] = L6 * Vb[0][1] * D3G;
    if (!a.omit_correction) {
        const R d1Df1 = fd(0, 3, 0) + fd(0, 1, 2);
        const R d2Df2 = fd(1, 2, 1) + fd(1, 0, 3);
        const R d2Df1 = fd(0, 2, 1) + fd(0, 0, 3);
        const R d1Df2 = fd(1, 3, 0) + fd(1, 1, 2);
        out[2] -= L6 * (d1Df1 - d2Df2);
        out[3] -= L6 * (d2Df1 + d1Df2);
    }
    return out;
}

Point3 normalized(const WaveAtom& a, const Point3& z) {
    const double inv = 1.0 / a.box.side;
    return {(z[0] - a.box.center[0]) * inv, (z[1] - a.box.center[1]) * inv, (z[2] - a.box.center[2]) * inv};
}

bool inside_unit(const Point3& u) {
    return std::abs(u[0]) < 0.5 && std::abs(u[1]) < 0.5 && std::abs(u[2]) < 0.5;
}

std::array<double, 4> value_normalized(const WaveAtom& a, const Point3& u) {
    if (a.zero || !inside_unit(u)) return {0, 0, 0, 0};
    Tables<double> T;
    fill_tables(a, u, 6, T);
    return assemble(a, T, -1);
}

/// Value and first partials in physical units, in extended precision.
struct LongJet {
    std::array<long double, 4> value{};
    std::array<std::array<long double, 4>, 3> d{};
};

LongJet long_jet(const WaveAtom& a, const Point3& z) {
    LongJet J;
    const Point3 u = normalized(a, z);
    if (a.zero || !inside_unit(u)) return J;
    Tables<long double> T;
    fill_tables(a, u, kMaxOrder, T);
    J.value = assemble(a, T, -1);
    const long double inv = 1.0L / a.box.side;
    for (int e = 0; e < 3; ++e) {
        J.d[e] = assemble(a, T, e);
        for (long double& x : J.d[e]) x *= inv;
    }
    return J;
}

StatePoint as_state(const std::array<double, 4>& v) {
    StatePoint s;
    s.n = 2;
    s.m = {v[0], v[1], 0.0};
    s.u = {v[2], v[3], 0, 0, 0};
    return s;
}

double dist_to_segment(const StatePoint& p, const StatePoint& w1, const StatePoint& w2) {
    const Eigen::VectorXd a = (p - w1).coords(), d = (w2 - w1).coords();
    const double dd = d.squaredNorm();
    const double t = dd > 0 ? std::clamp(a.dot(d) / dd, 0.0, 1.0) : 0.0;
    return (a - t * d).norm();
}

std::vector<double> axis_nodes(double f, int ramp, int plateau) {
    std::vector<double> v;
    const double w = 0.5 * (1.0 - f);
    for (int j = 0; j < ramp; ++j) v.push_back(-0.5 + w * (j + 0.5) / ramp);
    for (int j = 0; j < plateau; ++j) v.push_back(-0.5 * f + f * (j + 0.5) / plateau);
    for (int j = 0; j < ramp; ++j) v.push_back(0.5 * f + w * (j + 0.5) / ramp);
    return v;
}

}  // namespace

bool WaveAtom::in_support(const Point3& z) const { return inside_unit(normalized(*this, z)); }

StatePoint WaveAtom::evaluate(const Point3& z) const { return as_state(value_normalized(*this, normalized(*this, z))); }

WaveJet WaveAtom::jet(const Point3& z) const {
    const LongJet L = long_jet(*this, z);
    WaveJet J;
    for (int c = 0; c < 4; ++c) {
        J.value[c] = static_cast<double>(L.value[c]);
        for (int e = 0; e < 3; ++e) J.d[e][c] = static_cast<double>(L.d[e][c]);
    }
    return J;
}

double WaveAtom::segment_distance(const Point3& z) const { return dist_to_segment(base + evaluate(z), w1, w2); }

WaveAtom WaveAtom::relocated(const Box& b, const Eigen::Matrix2d& B) const {
    WaveAtom r = *this;
    r.box = b;
    r.B_hat = b.side * B;
    return r;
}

std::string WaveAtom::to_json() const {
    nlohmann::json j;
    j["zero"] = zero;
    j["box"] = {{"center", box.center}, {"side", box.side}};
    j["lambda"] = lambda();
    j["lambda_hat"] = lambda_hat;
    j["mu"] = {mu1, mu2};
    j["inner_fraction"] = inner_fraction;
    j["delta"] = tower ? tower->delta : 0.0;
    j["tau"] = direction.tau;
    j["xi"] = direction.xi.size() == 2 ? std::vector<double>{direction.xi(0), direction.xi(1)} : std::vector<double>{};
    const Eigen::Matrix2d Bp = source_matrix();
    j["B"] = {{Bp(0, 0), Bp(0, 1)}, {Bp(1, 0), Bp(1, 1)}};
    auto st = [](const StatePoint& s) { return std::vector<double>{s.m[0], s.m[1], s.u[0], s.u[1]}; };
    j["base"] = st(base);
    j["w1"] = st(w1);
    j["w2"] = st(w2);
    return j.dump();
}

WaveDirection lambda_direction(const StatePoint& wbar) {
    if (wbar.n != 2) throw WaveError("lambda_direction: only n = 2 is supported");
    const Eigen::Vector2d nb(wbar.m[0], wbar.m[1]);
    Eigen::Matrix2d V;
    V << wbar.u[0], wbar.u[1], wbar.u[1], -wbar.u[0];
    const double nn = nb.norm();
    const double scale = wbar.norm();
    if (nn <= 1e-14 * std::max(scale, 1e-300)) throw WaveError("lambda_direction: zero momentum part is not in the wave cone");
    Eigen::Vector2d xi(-nb(1) / nn, nb(0) / nn);
    if (xi(0) < 0 || (xi(0) == 0 && xi(1) < 0)) xi = -xi;
    const double tau = -nb.dot(V * xi) / (nn * nn);
    if ((tau * nb + V * xi).norm() > 1e-9 * scale) throw WaveError("lambda_direction: state difference is not in the wave cone");
    WaveDirection d;
    d.tau = tau;
    d.xi = xi;
    d.profile = wbar;
    return d;
}

double sampled_sup_distance(const WaveAtom& a, const WaveOptions& opt) {
    if (a.zero) return 0.0;
    const std::vector<double> nodes = axis_nodes(a.inner_fraction, opt.ramp_samples, opt.plateau_samples);
    double sup = 0.0;
    for (double t : nodes)
        for (double x : nodes)
            for (double y : nodes) {
                const StatePoint v = a.base + as_state(value_normalized(a, {t, x, y}));
                sup = std::max(sup, dist_to_segment(v, a.w1, a.w2));
            }
    return sup;
}

WaveAtom build_wave(const StatePoint& base, const StatePoint& w1, const StatePoint& w2, const Box& box, double eps,
                    const Eigen::Matrix2d& B, double lambda_hint, const WaveOptions& opt) {
    if (base.n != 2 || w1.n != 2 || w2.n != 2) throw WaveError("build_wave: only n = 2 is supported");
    if (!(eps > 0)) throw WaveError("build_wave: eps must be positive");
    if (!(box.side > 0)) throw WaveError("build_wave: box side must be positive");
    WaveAtom a;
    a.base = base;
    a.w1 = w1;
    a.w2 = w2;
    a.box = box;
    a.B_hat = box.side * B;
    const StatePoint wb = w2 - w1;
    const double amp = wb.norm();
    const double scale = 1.0 + std::max(w1.norm(), w2.norm());
    if (amp <= 1e-14 * scale) {
        a.zero = true;
        a.w2 = w1;
        return a;
    }
    const Eigen::VectorXd dc = wb.coords();
    a.mu2 = (base - w1).coords().dot(dc) / (amp * amp);
    a.mu1 = 1.0 - a.mu2;
    if (!(a.mu1 > 0 && a.mu2 > 0)) throw WaveError("build_wave: base is not strictly between the endpoints");
    if ((w1 * a.mu1 + w2 * a.mu2 - base).norm() > 1e-9 * scale)
        throw WaveError("build_wave: base is not on the segment [w1, w2]");
    a.direction = lambda_direction(wb);
    const double mumin = std::min(a.mu1, a.mu2);
    const double delta = opt.delta > 0 ? opt.delta : std::min({0.25 * eps, 0.45 * mumin, 0.1});
    a.inner_fraction = opt.inner_fraction > 0 ? opt.inner_fraction : std::cbrt(1.0 - std::min(0.25 * eps, 0.5));
    a.tower = std::make_shared<ProfileTower>(build_tower(a.mu1, a.mu2, delta));
    a.ramp = std::make_shared<PiecewisePoly>(plateau_ramp(a.inner_fraction));

    const double hint_hat = (lambda_hint > 0 ? lambda_hint : 8.0 / box.side) * box.side;
    a.lambda_hat = hint_hat;
    if (opt.skip_search) return a;
    for (;;) {
        const double d = sampled_sup_distance(a, opt);
        if (d <= eps) return a;
        if (a.lambda_hat * 2 > opt.cap_factor * hint_hat)
            throw WaveError("build_wave: lambda cap reached with sup distance " + std::to_string(d) + " > eps " +
                            std::to_string(eps));
        a.lambda_hat *= 2;
    }
}

std::array<double, 4> space_integral(const WaveAtom& a, double t) {
    std::array<double, 4> acc{};
    if (a.zero) return acc;
    const double u0 = (t - a.box.center[0]) / a.box.side;
    if (!(std::abs(u0) < 0.5)) return acc;
    using GL = boost::math::quadrature::gauss<double, 24>;
    const auto& xs = GL::abscissa();
    const auto& ws = GL::weights();
    std::vector<std::pair<double, double>> gl;
    for (size_t i = 0; i < xs.size(); ++i) {
        gl.push_back({xs[i], ws[i]});
        if (xs[i] != 0.0) gl.push_back({-xs[i], ws[i]});
    }
    const double x1 = a.direction.xi(0), x2 = a.direction.xi(1);
    const double f = a.inner_fraction;
    const double lv[4] = {-0.5, -0.5 * f, 0.5 * f, 0.5};
    // u = eta xi + zeta xi_perp, xi_perp = (-x2, x1)
    const double emax = 0.5 * (std::abs(x1) + std::abs(x2));
    std::vector<double> eb = {-emax, emax};
    for (double p : lv)
        for (double q : lv) eb.push_back(x1 * p + x2 * q);
    const double lh = a.lambda_hat, tau = a.direction.tau;
    const double shift = lh * tau * u0;
    const double th_lo = -lh * emax + shift, th_hi = lh * emax + shift;
    for (long m = static_cast<long>(std::floor(th_lo)) - 1; m <= static_cast<long>(std::ceil(th_hi)); ++m)
        for (double b : (*a.tower)[0].breaks()) {
            const double eta = (m + b - shift) / lh;
            if (eta > -emax && eta < emax) eb.push_back(eta);
        }
    std::sort(eb.begin(), eb.end());
    eb.erase(std::unique(eb.begin(), eb.end()), eb.end());
    std::vector<double> zb;
    for (size_t p = 0; p + 1 < eb.size(); ++p) {
        const double ea = std::max(eb[p], -emax), ebb = std::min(eb[p + 1], emax);
        if (!(ebb > ea)) continue;
        const double eh = 0.5 * (ebb - ea), em = 0.5 * (ebb + ea);
        for (const auto& [xe, we] : gl) {
            const double eta = em + eh * xe;
            // zeta range inside the square and breaks at the cutoff lines
            double zlo = -1e300, zhi = 1e300;
            zb.clear();
            auto clip = [&](double c0, double c1) {  // |c0 + c1 zeta| <= 1/2
                if (std::abs(c1) < 1e-15) return std::abs(c0) <= 0.5;
                double a0 = (-0.5 - c0) / c1, a1 = (0.5 - c0) / c1;
                if (a0 > a1) std::swap(a0, a1);
                zlo = std::max(zlo, a0);
                zhi = std::min(zhi, a1);
                zb.push_back((-0.5 * f - c0) / c1);
                zb.push_back((0.5 * f - c0) / c1);
                return true;
            };
            if (!clip(eta * x1, -x2) || !clip(eta * x2, x1) || !(zhi > zlo)) continue;
            zb.push_back(zlo);
            zb.push_back(zhi);
            std::sort(zb.begin(), zb.end());
            for (size_t r = 0; r + 1 < zb.size(); ++r) {
                const double za = std::max(zb[r], zlo), zc = std::min(zb[r + 1], zhi);
                if (!(zc > za)) continue;
                const double zh = 0.5 * (zc - za), zm = 0.5 * (zc + za);
                for (const auto& [xz, wz] : gl) {
                    const double zeta = zm + zh * xz;
                    const Point3 u = {u0, eta * x1 - zeta * x2, eta * x2 + zeta * x1};
                    const auto v = value_normalized(a, u);
                    const double w = we * eh * wz * zh;
                    for (int c = 0; c < 4; ++c) acc[c] += w * v[c];
                }
            }
        }
    }
    const double area = a.box.side * a.box.side;
    for (double& x : acc) x *= area;
    return acc;
}

WaveResidual wave_residual(const WaveAtom& a, const std::vector<Point3>& samples, bool with_mean) {
    WaveResidual r;
    if (a.zero) return r;
    const Eigen::Matrix2d B = a.source_matrix();
    for (const Point3& z : samples) {
        // the partials are O(lambda amplitude / delta) and cancel, so the sums stay in extended precision
        const LongJet J = long_jet(a, z);
        const auto& v = J.value;
        const auto &dt = J.d[0], &d1 = J.d[1], &d2 = J.d[2];
        const long double div = d1[0] + d2[1];
        const long double m1 = dt[0] + d1[2] + d2[3] - (B(0, 0) * v[0] + B(0, 1) * v[1]);
        const long double m2 = dt[1] + d1[3] - d2[2] - (B(1, 0) * v[0] + B(1, 1) * v[1]);
        r.divergence = std::max(r.divergence, static_cast<double>(std::abs(div)));
        r.momentum = std::max(r.momentum, static_cast<double>(std::hypot(m1, m2)));
    }
    if (with_mean) {
        const double area = a.box.side * a.box.side;
        for (double s : {0.0, 0.31, -0.23}) {
            const auto I = space_integral(a, a.box.center[0] + s * a.box.side);
            for (double x : I) r.mean = std::max(r.mean, std::abs(x) / area);
        }
    }
    return r;
}

PartitionMeasures partition_measures(const WaveAtom& a, double eps, int N) {
    PartitionMeasures pm;
    const double amp = a.amplitude();
    pm.radius = std::min(0.5 * eps, 0.25 * amp);
    long c1 = 0, c2 = 0;
    const double h = 1.0 / N;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < N; ++k) {
                const Point3 u = {-0.5 + (i + 0.5) * h, -0.5 + (j + 0.5) * h, -0.5 + (k + 0.5) * h};
                const StatePoint v = a.base + as_state(value_normalized(a, u));
                if ((v - a.w1).norm() < pm.radius) ++c1;
                else if ((v - a.w2).norm() < pm.radius) ++c2;
            }
    const double tot = static_cast<double>(N) * N * N;
    pm.o1 = c1 / tot;
    pm.o2 = c2 / tot;
    pm.rest = 1.0 - pm.o1 - pm.o2;
    pm.ok = std::abs(pm.o1 - a.mu1) < eps && std::abs(pm.o2 - a.mu2) < eps;
    return pm;
}

std::vector<WaveAtom> tile_wave(const StatePoint& wbar, int k, double eps, const Eigen::Matrix2d& B,
                                double lambda_hint, const WaveOptions& opt) {
    if (k < 0 || k > 8) throw WaveError("tile_wave: depth out of range");
    const int M = 1 << k;
    const double s = 1.0 / M;
    StatePoint zero = wbar * 0.0;
    const WaveAtom v =
        build_wave(zero, wbar * -1.0, wbar, {{0.5 * s, 0.5 * s, 0.5 * s}, s}, eps, B, lambda_hint / s, opt);
    std::vector<WaveAtom> out;
    out.reserve(static_cast<size_t>(M) * M * M);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
            for (int l = 0; l < M; ++l)
                out.push_back(v.relocated({{(i + 0.5) * s, (j + 0.5) * s, (l + 0.5) * s}, s}, B));
    return out;
}

}  // namespace cilab
