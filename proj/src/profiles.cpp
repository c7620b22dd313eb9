#include "cilab/profiles.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace cilab {

namespace {

/// Coefficients of p(a + b y) given those of p in y (long double accumulation).
std::vector<double> compose_affine(const std::vector<double>& c, long double a, long double b) {
    const int n = static_cast<int>(c.size());
    std::vector<long double> out(n, 0.0L), pw(n, 0.0L), nxt(n, 0.0L);
    pw[0] = 1.0L;  // (a + b y)^k, built incrementally
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j <= k; ++j) out[j] += c[k] * pw[j];
        std::fill(nxt.begin(), nxt.end(), 0.0L);
        for (int j = 0; j <= k && j + 1 < n; ++j) {
            nxt[j] += a * pw[j];
            nxt[j + 1] += b * pw[j];
        }
        if (k + 1 < n) pw = nxt;
    }
    return std::vector<double>(out.begin(), out.end());
}

double horner(const double* c, int n, double y) {
    double r = 0.0;
    for (int k = n - 1; k >= 0; --k) r = r * y + c[k];
    return r;
}

}  // namespace

std::vector<double> bernstein_to_centered(const std::vector<double>& b) {
    // B_{k,n}((1+y)/2) = C(n,k) 2^{-n} (1+y)^k (1-y)^{n-k}
    const int n = static_cast<int>(b.size()) - 1;
    std::vector<long double> out(n + 1, 0.0L);
    long double binom = 1.0L;
    for (int k = 0; k <= n; ++k) {
        if (k > 0) binom = binom * (n - k + 1) / k;
        std::vector<long double> poly = {1.0L};
        for (int i = 0; i < n; ++i) {
            const long double s = i < k ? 1.0L : -1.0L;
            std::vector<long double> np(poly.size() + 1, 0.0L);
            for (size_t j = 0; j < poly.size(); ++j) {
                np[j] += poly[j];
                np[j + 1] += s * poly[j];
            }
            poly = np;
        }
        for (int j = 0; j <= n; ++j) out[j] += b[k] * binom * poly[j] * std::ldexp(1.0L, -n);
    }
    return std::vector<double>(out.begin(), out.end());
}

std::vector<double> restrict_centered(const std::vector<double>& c, double x0, double x1) {
    return compose_affine(c, static_cast<long double>(x0) + x1 - 1.0L, static_cast<long double>(x1) - x0);
}

PiecewisePoly::PiecewisePoly(std::vector<double> breaks, std::vector<std::vector<double>> coeffs, bool periodic)
    : breaks_(std::move(breaks)), coeffs_(std::move(coeffs)), periodic_(periodic) {
    if (breaks_.size() != coeffs_.size() + 1 || coeffs_.empty())
        throw ProfileError("piecewise polynomial: breakpoint/piece count mismatch");
    for (size_t i = 0; i + 1 < breaks_.size(); ++i)
        if (!(breaks_[i + 1] > breaks_[i])) throw ProfileError("piecewise polynomial: breakpoints not increasing");
    for (const auto& c : coeffs_)
        if (c.empty() || c.size() > 36) throw ProfileError("piecewise polynomial: bad piece degree");
}

int PiecewisePoly::degree() const {
    int d = 0;
    for (const auto& c : coeffs_) d = std::max(d, static_cast<int>(c.size()) - 1);
    return d;
}

int PiecewisePoly::locate(double s) const {
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), s);
    int i = static_cast<int>(it - breaks_.begin()) - 1;
    return std::clamp(i, 0, static_cast<int>(coeffs_.size()) - 1);
}

double PiecewisePoly::eval(double s, int j) const {
    double buf[40];
    if (j > 30) throw ProfileError("derivative order too high");
    eval_all(s, j, buf);
    return buf[j];
}

void PiecewisePoly::eval_all(double s, int jmax, double* out) const {
    const double a = breaks_.front(), b = breaks_.back();
    if (periodic_) {
        const double L = b - a;
        s = s - L * std::floor((s - a) / L);
        if (s >= b) s = a;
    } else if (s < a || s > b) {
        std::fill(out, out + jmax + 1, 0.0);
        return;
    }
    const int i = locate(s);
    const double half = 0.5 * (breaks_[i + 1] - breaks_[i]);
    const double y = std::clamp((s - breaks_[i]) / half - 1.0, -1.0, 1.0);
    double c[40];
    int n = static_cast<int>(coeffs_[i].size());
    std::copy(coeffs_[i].begin(), coeffs_[i].end(), c);
    double scale = 1.0;
    for (int j = 0; j <= jmax; ++j) {
        out[j] = n > 0 ? scale * horner(c, n, y) : 0.0;
        if (n > 0) {
            for (int k = 1; k < n; ++k) c[k - 1] = k * c[k];
            --n;
        }
        scale /= half;
    }
}

PiecewisePoly PiecewisePoly::derivative() const {
    PiecewisePoly r = *this;
    for (size_t i = 0; i < coeffs_.size(); ++i) {
        const double half = 0.5 * (breaks_[i + 1] - breaks_[i]);
        const auto& c = coeffs_[i];
        std::vector<double> d(std::max<size_t>(1, c.size() - 1), 0.0);
        for (size_t k = 1; k < c.size(); ++k) d[k - 1] = k * c[k] / half;
        r.coeffs_[i] = d;
    }
    return r;
}

PiecewisePoly PiecewisePoly::antiderivative() const {
    PiecewisePoly r = *this;
    double acc = 0.0;
    for (size_t i = 0; i < coeffs_.size(); ++i) {
        const double half = 0.5 * (breaks_[i + 1] - breaks_[i]);
        const auto& c = coeffs_[i];
        const int n = static_cast<int>(c.size());
        std::vector<double> a(n + 1, 0.0);
        for (int k = 0; k < n; ++k) a[k + 1] = c[k] * half / (k + 1);
        // value at y = -1 must equal the running integral
        double at_left = 0.0;
        for (int k = n; k >= 1; --k) at_left = at_left * -1.0 + a[k];
        at_left *= -1.0;
        a[0] = acc - at_left;
        double at_right = 0.0;
        for (int k = n; k >= 0; --k) at_right = at_right + a[k];
        acc = at_right;
        r.coeffs_[i] = a;
    }
    return r;
}

double PiecewisePoly::integral() const {
    double s = 0.0;
    for (size_t i = 0; i < coeffs_.size(); ++i) {
        const double half = 0.5 * (breaks_[i + 1] - breaks_[i]);
        // int_{-1}^{1} y^k dy = 2/(k+1) for even k
        double piece = 0.0;
        for (size_t k = 0; k < coeffs_[i].size(); k += 2) piece += coeffs_[i][k] * 2.0 / (k + 1);
        s += piece * half;
    }
    return s;
}

PiecewisePoly PiecewisePoly::shifted(double c) const {
    PiecewisePoly r = *this;
    for (auto& p : r.coeffs_) p[0] += c;
    return r;
}

double PiecewisePoly::sup_norm(int samples) const {
    double m = 0.0;
    for (size_t i = 0; i < coeffs_.size(); ++i)
        for (int k = 0; k <= samples; ++k)
            m = std::max(m, std::abs(horner(coeffs_[i].data(), static_cast<int>(coeffs_[i].size()),
                                            -1.0 + 2.0 * k / samples)));
    return m;
}

std::string PiecewisePoly::to_json() const {
    nlohmann::json j;
    j["breakpoints"] = breaks_;
    j["pieces"] = coeffs_;
    j["periodic"] = periodic_;
    j["basis"] = "monomials in y = 2 (s - b_i)/(b_{i+1} - b_i) - 1";
    return j.dump();
}

// ---- shapes ----

std::vector<double> smoothstep13() {
    // Bernstein form of the degree-13 Hermite smoothstep is seven zeros then seven ones
    std::vector<double> b(14, 0.0);
    for (int k = 7; k < 14; ++k) b[k] = 1.0;
    return bernstein_to_centered(b);
}

PeriodicProfile build_square_profile(double mu1, double mu2, double delta) {
    if (!(mu1 > 0 && mu2 > 0 && mu1 < 1 && mu2 < 1) || std::abs(mu1 + mu2 - 1.0) > 1e-12)
        throw ProfileError("square profile needs mu1, mu2 in (0,1) with mu1 + mu2 = 1");
    if (!(delta > 0) || !(delta < 0.5 * std::min(mu1, mu2)))
        throw ProfileError("square profile needs 0 < delta < min(mu1,mu2)/2");
    const double w = 0.45 * delta;  // ramp width; two ramps give measure 0.9 delta
    const std::vector<double> S = smoothstep13();
    const double jump = mu1 + mu2;
    std::vector<double> br = {0.0, 0.5 * w, mu1 - 0.5 * w, mu1 + 0.5 * w, 1.0 - 0.5 * w, 1.0};
    std::vector<std::vector<double>> pc(5);
    // [0, w/2]: second half of the falling ramp mu1 -> -mu2, x_ramp = 1/2 + x/2
    {
        auto c = restrict_centered(S, 0.5, 1.0);
        for (auto& v : c) v *= -jump;
        c[0] += mu1;
        pc[0] = c;
    }
    pc[1] = {-mu2};
    {
        auto c = S;
        for (auto& v : c) v *= jump;
        c[0] -= mu2;
        pc[2] = c;
    }
    pc[3] = {mu1};
    {
        auto c = restrict_centered(S, 0.0, 0.5);
        for (auto& v : c) v *= -jump;
        c[0] += mu1;
        pc[4] = c;
    }
    PeriodicProfile h(br, pc, true);
    // the centred ramps are mean-preserving; remove the rounding residue exactly
    return h.shifted(-h.integral());
}

std::vector<PeriodicProfile> antiderivative_tower(const PeriodicProfile& h0, int depth) {
    if (std::abs(h0.integral()) > 1e-14) throw ProfileError("tower base must have zero mean");
    std::vector<PeriodicProfile> out = {h0};
    for (int k = 0; k < depth; ++k) {
        const PeriodicProfile a = out.back().antiderivative();
        out.push_back(a.shifted(-a.integral()));
    }
    return out;
}

ProfileTower build_tower(double mu1, double mu2, double delta) {
    ProfileTower t;
    t.mu1 = mu1;
    t.mu2 = mu2;
    t.delta = delta;
    const PeriodicProfile h0 = build_square_profile(mu1, mu2, delta);
    const auto tw = antiderivative_tower(h0, 6);
    t.h[0] = h0.derivative();
    for (int k = 0; k <= 6; ++k) t.h[k + 1] = tw[k];
    return t;
}

PiecewisePoly plateau_ramp(double f) {
    if (!(f > 0.0 && f < 1.0)) throw ProfileError("inner fraction must lie in (0,1)");
    const std::vector<double> S = smoothstep13();
    // rising on [-1/2, -f/2], flat, falling on [f/2, 1/2]
    std::vector<double> br = {-0.5, -0.5 * f, 0.5 * f, 0.5};
    std::vector<std::vector<double>> pc(3);
    pc[0] = S;
    pc[1] = {1.0};
    pc[2] = compose_affine(S, 0.0L, -1.0L);
    return PiecewisePoly(br, pc, false);
}

PlateauCutoff::PlateauCutoff(Box box, double f) : box_(box), inner_(f), ramp_(plateau_ramp(f)) {
    if (!(box.side > 0.0)) throw ProfileError("cutoff box needs positive side");
}

PlateauCutoff build_cutoff(const Box& box, double f) { return PlateauCutoff(box, f); }

double PlateauCutoff::transition_fraction() const { return 1.0 - inner_ * inner_ * inner_; }

void PlateauCutoff::factor_derivs(const std::array<double, 3>& z, int jmax, double out[3][16]) const {
    const double inv = 1.0 / box_.side;
    for (int a = 0; a < 3; ++a) {
        const double u = (z[a] - box_.center[a]) * inv;
        ramp_.eval_all(u, jmax, out[a]);
        double s = 1.0;
        for (int j = 0; j <= jmax; ++j) {
            out[a][j] *= s;
            s *= inv;
        }
    }
}

double PlateauCutoff::value(const std::array<double, 3>& z) const { return partial(z, {0, 0, 0}); }

double PlateauCutoff::partial(const std::array<double, 3>& z, const std::array<int, 3>& alpha) const {
    const int jm = std::max({alpha[0], alpha[1], alpha[2]});
    double d[3][16];
    factor_derivs(z, jm, d);
    return d[0][alpha[0]] * d[1][alpha[1]] * d[2][alpha[2]];
}

}  // namespace cilab
