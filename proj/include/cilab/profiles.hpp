#pragma once
/// Exact piecewise-polynomial oscillation profiles h_k and plateau cutoffs.

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

struct ProfileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Piecewise polynomial on [b_0, b_K].  Piece i is stored by monomial coefficients in
/// the centred variable y = 2 (s - b_i)/(b_{i+1} - b_i) - 1 in [-1,1]; derivatives and
/// antiderivatives are exact coefficient maps.  Periodic profiles live on [0,1) and
/// wrap their argument; non-periodic ones vanish outside [b_0, b_K].
class PiecewisePoly {
public:
    PiecewisePoly() = default;
    PiecewisePoly(std::vector<double> breaks, std::vector<std::vector<double>> coeffs, bool periodic);

    double operator()(double s) const { return eval(s, 0); }
    /// j-th derivative at s (one-sided from the right at breakpoints).
    double eval(double s, int j) const;
    /// Values of derivatives 0..jmax at s into out[0..jmax].
    void eval_all(double s, int jmax, double* out) const;

    PiecewisePoly derivative() const;
    /// Continuous antiderivative vanishing at b_0.
    PiecewisePoly antiderivative() const;
    /// Exact integral over the whole domain.
    double integral() const;
    /// Adds a constant to every piece.
    PiecewisePoly shifted(double c) const;
    /// Max of |p| over the domain, by sampling each piece (dense) plus endpoints.
    double sup_norm(int samples_per_piece = 400) const;

    const std::vector<double>& breaks() const { return breaks_; }
    const std::vector<std::vector<double>>& coeffs() const { return coeffs_; }
    bool periodic() const { return periodic_; }
    int degree() const;
    std::string to_json() const;

private:
    int locate(double s) const;
    std::vector<double> breaks_;
    std::vector<std::vector<double>> coeffs_;
    bool periodic_ = true;
};

using PeriodicProfile = PiecewisePoly;

/// C^6 Hermite smoothstep of degree 13 on [0,1] (0 -> 1, six vanishing derivatives at
/// both ends), as centred-monomial coefficients.
std::vector<double> smoothstep13();
/// Bernstein coefficients on [0,1] -> centred-monomial coefficients.
std::vector<double> bernstein_to_centered(const std::vector<double>& b);
/// Centred coefficients of the restriction to [x0, x1] of [0,1].
std::vector<double> restrict_centered(const std::vector<double>& c, double x0, double x1);

/// Square-wave approximation h_0: -mu2 on (0,mu1], mu1 on (mu1,1], smoothed on a set of measure < delta.
PeriodicProfile build_square_profile(double mu1, double mu2, double delta);

/// h_1..h_depth with h_{k+1}' = h_k and zero mean; index 0 of the result is h0 itself.
std::vector<PeriodicProfile> antiderivative_tower(const PeriodicProfile& h0, int depth = 6);

/// Full tower used by the wave atoms: entry k+1 holds h_k for k = -1..6 (h_{-1} = h0').
struct ProfileTower {
    double mu1 = 0.5, mu2 = 0.5, delta = 0.0;
    std::array<PeriodicProfile, 8> h;
    const PeriodicProfile& operator[](int k) const { return h[k + 1]; }
};
ProfileTower build_tower(double mu1, double mu2, double delta);

/// Axis-aligned space-time cube: center (t, x1, x2) and side length.
struct Box {
    std::array<double, 3> center{};
    double side = 1.0;
};

/// Tensor-product plateau cutoff: 1 on the inner box of side inner_fraction*side,
/// 0 outside the box, C^6 smoothstep ramps in between.
class PlateauCutoff {
public:
    PlateauCutoff() = default;
    PlateauCutoff(Box box, double inner_fraction);

    /// Ramp on the normalized axis u in [-1/2,1/2].
    const PiecewisePoly& ramp() const { return ramp_; }
    double value(const std::array<double, 3>& z) const;
    /// Partial derivative d^alpha phi at z (alpha over (t, x1, x2)).
    double partial(const std::array<double, 3>& z, const std::array<int, 3>& alpha) const;
    /// 1-D derivatives of each factor at z, orders 0..jmax, physical scaling.
    void factor_derivs(const std::array<double, 3>& z, int jmax, double out[3][16]) const;
    const Box& box() const { return box_; }
    double inner_fraction() const { return inner_; }
    /// measure{phi != 1} / measure(box) = 1 - inner^3.
    double transition_fraction() const;

private:
    Box box_;
    double inner_ = 0.9;
    PiecewisePoly ramp_;
};

PlateauCutoff build_cutoff(const Box& box, double inner_fraction);

/// 1-D plateau ramp on [-1/2, 1/2] with plateau [-f/2, f/2].
PiecewisePoly plateau_ramp(double inner_fraction);

}  // namespace cilab
