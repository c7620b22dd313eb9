#include "cilab/operators.hpp"

#include <fftw3.h>

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>

namespace cilab {

namespace {

using cplx = std::complex<double>;

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

/// r2c spectrum of one scalar component on an N x N torus grid.
struct Spectrum {
    int N;
    double L;
    std::vector<cplx> c;
    Spectrum(int N_, double L_) : N(N_), L(L_), c(static_cast<std::size_t>(N_) * (N_ / 2 + 1)) {}
    int cols() const { return N / 2 + 1; }
    cplx& at(int j1, int j2) { return c[static_cast<std::size_t>(j1) * cols() + j2]; }
    /// Wavenumber along axis 1 or 2 (full, for even operators).
    double k1(int j1) const { return 2 * M_PI / L * (j1 <= N / 2 ? j1 : j1 - N); }
    double k2(int j2) const { return 2 * M_PI / L * j2; }
    /// Same with the Nyquist mode dropped (odd operators).
    double k1_odd(int j1) const { return j1 == N / 2 ? 0.0 : k1(j1); }
    double k2_odd(int j2) const { return j2 == N / 2 ? 0.0 : k2(j2); }
};

Spectrum forward(const GridField& f, int comp) {
    const int N = f.grid.N;
    Spectrum S(N, f.grid.L);
    std::vector<double> in(f.grid.nodes());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = f.data[i * f.components + comp];
    fftw_plan p;
    {
        std::lock_guard<std::mutex> lk(planner_mutex());
        p = fftw_plan_dft_r2c_2d(N, N, in.data(), reinterpret_cast<fftw_complex*>(S.c.data()), FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard<std::mutex> lk(planner_mutex());
        fftw_destroy_plan(p);
    }
    return S;
}

void backward(Spectrum S, GridField& out, int comp) {
    const int N = S.N;
    std::vector<double> buf(static_cast<std::size_t>(N) * N);
    fftw_plan p;
    {
        std::lock_guard<std::mutex> lk(planner_mutex());
        p = fftw_plan_dft_c2r_2d(N, N, reinterpret_cast<fftw_complex*>(S.c.data()), buf.data(), FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard<std::mutex> lk(planner_mutex());
        fftw_destroy_plan(p);
    }
    const double inv = 1.0 / (static_cast<double>(N) * N);
    for (std::size_t i = 0; i < buf.size(); ++i) out.data[i * out.components + comp] = buf[i] * inv;
}

template <class F>
void for_modes(const Spectrum& S, F&& fn) {
    for (int j1 = 0; j1 < S.N; ++j1)
        for (int j2 = 0; j2 < S.cols(); ++j2) fn(j1, j2);
}

void check_same_grid(const GridField& f, int comps, const char* what) {
    if (f.components != comps) throw OperatorError(std::string(what) + ": wrong number of components");
    if (f.data.size() != f.grid.nodes() * comps) throw OperatorError(std::string(what) + ": field size mismatch");
}

}  // namespace

TorusGrid::TorusGrid(int N_, double L_) : N(N_), L(L_) {
    if (N < 16 || (N & (N - 1)) != 0) throw OperatorError("torus grid: N must be a power of two >= 16");
    if (!(L > 0)) throw OperatorError("torus grid: L must be positive");
}

GridField::GridField(const TorusGrid& g, int comps, std::string name_)
    : grid(g), components(comps), data(g.nodes() * comps, 0.0), name(std::move(name_)) {}

double GridField::mean(int c) const {
    double s = 0;
    for (std::size_t i = 0; i < grid.nodes(); ++i) s += data[i * components + c];
    return s / grid.nodes();
}

double GridField::sup_norm() const {
    double s = 0;
    for (double v : data) s = std::max(s, std::abs(v));
    return s;
}

GridField GridField::component(int c) const {
    GridField r(grid, 1, name);
    r.time = time;
    for (std::size_t i = 0; i < grid.nodes(); ++i) r.data[i] = data[i * components + c];
    return r;
}

GridField band_limited_random(const TorusGrid& g, int components, int kmax, std::uint64_t seed) {
    if (kmax < 0 || 2 * kmax >= g.N) throw OperatorError("band_limited_random: kmax must stay below N/2");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    GridField f(g, components);
    const double w = 2 * M_PI / g.L;
    /// cos and sin of w k x_i for k in [-kmax, kmax], so each mode is a product of 1-D tables.
    const int K = 2 * kmax + 1;
    std::vector<double> ct(static_cast<std::size_t>(K) * g.N), st(ct.size());
    for (int k = -kmax; k <= kmax; ++k)
        for (int i = 0; i < g.N; ++i) {
            ct[static_cast<std::size_t>(k + kmax) * g.N + i] = std::cos(w * k * g.x(i));
            st[static_cast<std::size_t>(k + kmax) * g.N + i] = std::sin(w * k * g.x(i));
        }
    for (int c = 0; c < components; ++c)
        for (int k1 = 0; k1 <= kmax; ++k1)
            for (int k2 = -kmax; k2 <= kmax; ++k2) {
                if (k1 == 0 && k2 < 0) continue;
                const double a = U(rng) / (1.0 + std::hypot(k1, k2)), b = U(rng) / (1.0 + std::hypot(k1, k2));
                const double* c1 = &ct[static_cast<std::size_t>(k1 + kmax) * g.N];
                const double* s1 = &st[static_cast<std::size_t>(k1 + kmax) * g.N];
                const double* c2 = &ct[static_cast<std::size_t>(k2 + kmax) * g.N];
                const double* s2 = &st[static_cast<std::size_t>(k2 + kmax) * g.N];
                for (int i1 = 0; i1 < g.N; ++i1)
                    for (int i2 = 0; i2 < g.N; ++i2) {
                        const double cp = c1[i1] * c2[i2] - s1[i1] * s2[i2];
                        const double sp = s1[i1] * c2[i2] + c1[i1] * s2[i2];
                        f(i1, i2, c) += a * cp + b * sp;
                    }
            }
    return f;
}

VectorField spectral_gradient(const ScalarField& f) {
    check_same_grid(f, 1, "spectral_gradient");
    const Spectrum S = forward(f, 0);
    VectorField g(f.grid, 2, f.name);
    g.time = f.time;
    Spectrum A = S, B = S;
    for_modes(S, [&](int j1, int j2) {
        A.at(j1, j2) *= cplx(0, S.k1_odd(j1));
        B.at(j1, j2) *= cplx(0, S.k2_odd(j2));
    });
    backward(A, g, 0);
    backward(B, g, 1);
    return g;
}

ScalarField spectral_divergence(const VectorField& v) {
    check_same_grid(v, 2, "spectral_divergence");
    Spectrum A = forward(v, 0);
    const Spectrum B = forward(v, 1);
    for_modes(A, [&](int j1, int j2) {
        A.at(j1, j2) = cplx(0, A.k1_odd(j1)) * A.at(j1, j2) + cplx(0, A.k2_odd(j2)) * B.c[j1 * B.cols() + j2];
    });
    ScalarField d(v.grid, 1);
    d.time = v.time;
    backward(A, d, 0);
    return d;
}

ScalarField spectral_laplacian(const ScalarField& f) {
    check_same_grid(f, 1, "spectral_laplacian");
    Spectrum S = forward(f, 0);
    for_modes(S, [&](int j1, int j2) {
        const double k1 = S.k1(j1), k2 = S.k2(j2);
        S.at(j1, j2) *= -(k1 * k1 + k2 * k2);
    });
    ScalarField d(f.grid, 1);
    d.time = f.time;
    backward(S, d, 0);
    return d;
}

VectorField deviator_divergence(const DeviatorField& R) {
    check_same_grid(R, 3, "deviator_divergence");
    const Spectrum A = forward(R, 0), Bs = forward(R, 1), C = forward(R, 2);
    Spectrum X = A, Y = A;
    for_modes(A, [&](int j1, int j2) {
        const std::size_t i = static_cast<std::size_t>(j1) * A.cols() + j2;
        const cplx d1(0, A.k1_odd(j1)), d2(0, A.k2_odd(j2));
        X.c[i] = d1 * A.c[i] + d2 * Bs.c[i];
        Y.c[i] = d1 * Bs.c[i] + d2 * C.c[i];
    });
    VectorField v(R.grid, 2);
    v.time = R.time;
    backward(X, v, 0);
    backward(Y, v, 1);
    return v;
}

double max_trace(const DeviatorField& R) {
    double m = 0;
    for (std::size_t i = 0; i < R.grid.nodes(); ++i) m = std::max(m, std::abs(R.data[3 * i] + R.data[3 * i + 2]));
    return m;
}

ScalarField poisson_solve(const ScalarField& f, bool mean_free, double* removed_mean) {
    check_same_grid(f, 1, "poisson_solve");
    Spectrum S = forward(f, 0);
    const double mean = S.at(0, 0).real() / f.grid.nodes();
    if (!mean_free && removed_mean) *removed_mean = mean;
    for_modes(S, [&](int j1, int j2) {
        const double k1 = S.k1(j1), k2 = S.k2(j2), kk = k1 * k1 + k2 * k2;
        S.at(j1, j2) = kk > 0 ? -S.at(j1, j2) / kk : cplx(0, 0);
    });
    ScalarField psi(f.grid, 1);
    psi.time = f.time;
    backward(S, psi, 0);
    return psi;
}

DeviatorField r_torus(const VectorField& f) {
    check_same_grid(f, 2, "r_torus");
    // n = 2: R = grad g + grad g^T - (div g) I with g = Delta^{-1}(f - mean f)
    Spectrum G1 = forward(f, 0), G2 = forward(f, 1);
    Spectrum R11 = G1, R12 = G1;
    for_modes(G1, [&](int j1, int j2) {
        const double k1 = G1.k1(j1), k2 = G1.k2(j2), kk = k1 * k1 + k2 * k2;
        const std::size_t i = static_cast<std::size_t>(j1) * G1.cols() + j2;
        const cplx g1 = kk > 0 ? -G1.c[i] / kk : cplx(0, 0), g2 = kk > 0 ? -G2.c[i] / kk : cplx(0, 0);
        const cplx d1(0, G1.k1_odd(j1)), d2(0, G1.k2_odd(j2));
        R11.c[i] = d1 * g1 - d2 * g2;
        R12.c[i] = d2 * g1 + d1 * g2;
    });
    DeviatorField R(f.grid, 3, "R");
    R.time = f.time;
    backward(R11, R, 0);
    backward(R12, R, 1);
    for (std::size_t i = 0; i < R.grid.nodes(); ++i) R.data[3 * i + 2] = -R.data[3 * i];
    return R;
}

VectorField leray_project(const VectorField& v) {
    check_same_grid(v, 2, "leray_project");
    Spectrum A = forward(v, 0), B = forward(v, 1);
    for_modes(A, [&](int j1, int j2) {
        const double k1 = A.k1_odd(j1), k2 = A.k2_odd(j2), kk = k1 * k1 + k2 * k2;
        if (kk == 0) return;
        const std::size_t i = static_cast<std::size_t>(j1) * A.cols() + j2;
        const cplx kv = (k1 * A.c[i] + k2 * B.c[i]) / kk;
        A.c[i] -= k1 * kv;
        B.c[i] -= k2 * kv;
    });
    VectorField out(v.grid, 2, v.name);
    out.time = v.time;
    backward(A, out, 0);
    backward(B, out, 1);
    return out;
}

// ---------------------------------------------------------------- cubes

namespace {

/// 2-D real-to-real transform of an M x M array.
std::vector<double> r2r(const std::vector<double>& in, int M, fftw_r2r_kind k1, fftw_r2r_kind k2) {
    std::vector<double> a = in, out(in.size());
    fftw_plan p;
    {
        std::lock_guard<std::mutex> lk(planner_mutex());
        p = fftw_plan_r2r_2d(M, M, a.data(), out.data(), k1, k2, FFTW_ESTIMATE);
    }
    fftw_execute(p);
    {
        std::lock_guard<std::mutex> lk(planner_mutex());
        fftw_destroy_plan(p);
    }
    return out;
}

/// Cosine-series coefficients b with f = sum b_k1k2 cos(pi k1 x1/r) cos(pi k2 x2/r).
std::vector<double> cosine_coeffs(const CubeField& f) {
    const int M = f.grid.M;
    std::vector<double> Y = r2r(f.data, M, FFTW_REDFT10, FFTW_REDFT10);
    for (int a = 0; a < M; ++a)
        for (int b = 0; b < M; ++b) Y[a * M + b] *= (a ? 2.0 : 1.0) * (b ? 2.0 : 1.0) / (4.0 * M * M);
    return Y;
}

/// Evaluates sum b cos cos at the cell centres.
CubeField cosine_eval(const std::vector<double>& b, const CubeGrid& g) {
    const int M = g.M;
    std::vector<double> X(b.size());
    for (int a = 0; a < M; ++a)
        for (int c = 0; c < M; ++c) X[a * M + c] = b[a * M + c] * (a ? 0.5 : 1.0) * (c ? 0.5 : 1.0);
    CubeField out(g);
    out.data = r2r(X, M, FFTW_REDFT01, FFTW_REDFT01);
    return out;
}

/// Evaluates sum_k a_k sin(pi k x1/r) cos(pi k2 x2/r) (k1 >= 1), from coefficients indexed by k1.
CubeField sine_cos_eval(const std::vector<double>& a, const CubeGrid& g, bool sine_on_first) {
    const int M = g.M;
    std::vector<double> X(a.size(), 0.0);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) {
            const int ks = sine_on_first ? i : j, kc = sine_on_first ? j : i;
            if (ks == 0) continue;
            const double v = a[i * M + j] * 0.5 * (kc ? 0.5 : 1.0);
            if (sine_on_first) X[(ks - 1) * M + j] = v;
            else X[i * M + ks - 1] = v;
        }
    CubeField out(g);
    out.data = sine_on_first ? r2r(X, M, FFTW_RODFT01, FFTW_REDFT01) : r2r(X, M, FFTW_REDFT01, FFTW_RODFT01);
    return out;
}

}  // namespace

double CubeField::sup_norm() const {
    double s = 0;
    for (double v : data) s = std::max(s, std::abs(v));
    return s;
}

NeumannResult neumann_poisson_cube(const CubeField& f) {
    const int M = f.grid.M;
    if (M < 2 || f.data.size() != static_cast<std::size_t>(M) * M) throw OperatorError("neumann_poisson_cube: bad field");
    const double r = f.grid.r;
    std::vector<double> b = cosine_coeffs(f);
    NeumannResult res;
    res.removed_mean = b[0];
    const double w = M_PI / r;
    std::vector<double> psi_b(b.size());
    for (int a = 0; a < M; ++a)
        for (int c = 0; c < M; ++c) {
            const double lam = w * w * (static_cast<double>(a) * a + static_cast<double>(c) * c);
            psi_b[a * M + c] = lam > 0 ? -b[a * M + c] / lam : 0.0;
        }
    res.psi = cosine_eval(psi_b, f.grid);
    // residual against f minus its mean
    const CubeField lap = cube_laplacian(res.psi);
    for (std::size_t i = 0; i < lap.data.size(); ++i)
        res.residual = std::max(res.residual, std::abs(lap.data[i] - (f.data[i] - res.removed_mean)));
    // normal derivative on the faces, summing the series in the normal direction at x = 0 and x = r
    const double h = f.grid.spacing();
    for (int axis = 0; axis < 2; ++axis) {
        // partial evaluation along the tangential axis
        std::vector<double> part(static_cast<std::size_t>(M) * M, 0.0);  // [k_normal][tangential node]
        for (int kn = 1; kn < M; ++kn)
            for (int it = 0; it < M; ++it) {
                double s = 0;
                const double xt = (it + 0.5) * h;
                for (int kt = 0; kt < M; ++kt) {
                    const double coef = axis == 0 ? psi_b[kn * M + kt] : psi_b[kt * M + kn];
                    s += coef * std::cos(w * kt * xt);
                }
                part[kn * M + it] = s;
            }
        for (double xn : {0.0, r}) {
            const double sign = xn == 0.0 ? -1.0 : 1.0;
            for (int it = 0; it < M; ++it) {
                double d = 0;
                for (int kn = 1; kn < M; ++kn) d += -w * kn * std::sin(w * kn * xn) * part[kn * M + it];
                res.normal_derivative = std::max(res.normal_derivative, std::abs(d));
                res.flux += sign * d * h;
            }
        }
    }
    return res;
}

std::array<CubeField, 2> cube_gradient(const CubeField& psi) {
    const int M = psi.grid.M;
    const std::vector<double> b = cosine_coeffs(psi);
    const double w = M_PI / psi.grid.r;
    std::vector<double> a1(b.size()), a2(b.size());
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) {
            a1[i * M + j] = -w * i * b[i * M + j];
            a2[i * M + j] = -w * j * b[i * M + j];
        }
    return {sine_cos_eval(a1, psi.grid, true), sine_cos_eval(a2, psi.grid, false)};
}

CubeField cube_laplacian(const CubeField& psi) {
    const int M = psi.grid.M;
    std::vector<double> b = cosine_coeffs(psi);
    const double w = M_PI / psi.grid.r;
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j) b[i * M + j] *= -w * w * (static_cast<double>(i) * i + static_cast<double>(j) * j);
    return cosine_eval(b, psi.grid);
}

namespace {

std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xffu) << (8 * (7 - b));
    return r;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
    std::filesystem::path p = stem;
    p += ext;
    return p;
}

}  // namespace

void write_field(const GridField& f, const std::filesystem::path& stem) {
    const std::size_t count = f.grid.nodes() * static_cast<std::size_t>(f.components);
    if (f.data.size() != count) throw OperatorError("write_field: data size does not match grid");
    std::vector<std::uint64_t> raw(count);
    for (std::size_t i = 0; i < count; ++i) raw[i] = to_little(std::bit_cast<std::uint64_t>(f.data[i]));
    const auto bin = with_ext(stem, ".bin");
    std::ofstream out(bin, std::ios::binary);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(count * 8));
    if (!out) throw OperatorError("write_field: cannot write " + bin.string());
    nlohmann::json meta{{"resolution", f.grid.N}, {"length", f.grid.L}, {"components", f.components},
                        {"time", f.time}, {"name", f.name}};
    std::ofstream side(with_ext(stem, ".json"));
    side << meta.dump(2) << "\n";
    if (!side) throw OperatorError("write_field: cannot write sidecar of " + bin.string());
}

GridField read_field(const std::filesystem::path& stem) {
    const auto bin = with_ext(stem, ".bin");
    const auto side = with_ext(stem, ".json");
    std::ifstream in_meta(side);
    if (!in_meta) throw OperatorError("read_field: missing sidecar " + side.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in_meta);
        GridField f(TorusGrid(meta.at("resolution").get<int>(), meta.at("length").get<double>()),
                    meta.at("components").get<int>(), meta.at("name").get<std::string>());
        f.time = meta.at("time").get<double>();
        const std::size_t count = f.data.size();
        std::error_code ec;
        const auto size = std::filesystem::file_size(bin, ec);
        if (ec) throw OperatorError("read_field: missing blob " + bin.string());
        if (size != count * 8)
            throw OperatorError("read_field: " + bin.string() + " holds " + std::to_string(size) + " bytes, sidecar implies " +
                                std::to_string(count * 8));
        std::vector<std::uint64_t> raw(count);
        std::ifstream in(bin, std::ios::binary);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 8));
        if (!in) throw OperatorError("read_field: short read of " + bin.string());
        for (std::size_t i = 0; i < count; ++i) f.data[i] = std::bit_cast<double>(to_little(raw[i]));
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw OperatorError("read_field: bad sidecar " + side.string() + ": " + e.what());
    }
}

}  // namespace cilab
