#pragma once
/// Localized plane waves compatible with a constant source matrix B: closed-form
/// evaluation, exact residuals, partition measures and dyadic tiling (n = 2).

#include "cilab/geometry.hpp"
#include "cilab/profiles.hpp"

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

struct WaveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Space-time point (t, x1, x2).
using Point3 = std::array<double, 3>;

/// Value and first partials (t, x1, x2) of a wave, components (n1, n2, V11, V12).
struct WaveJet {
    std::array<double, 4> value{};
    std::array<std::array<double, 4>, 3> d{};
};

struct WaveOptions {
    /// Smoothing measure of h0; <= 0 picks eps/4 (clamped to the profile limits).
    double delta = -1.0;
    /// Plateau side fraction of the cutoff; <= 0 picks (1 - eps/4)^(1/3).
    double inner_fraction = -1.0;
    /// Sample nodes per cutoff ramp and on the plateau, per axis, for the lambda search.
    int ramp_samples = 4;
    int plateau_samples = 3;
    /// Doubling cap relative to the hint.
    double cap_factor = 1048576.0;
    /// Test hook: keep the hint instead of doubling.
    bool skip_search = false;
};

/// An immutable localized plane wave.  Everything is stored in the coordinates
/// u = (z - c)/s of the unit cube; lambda_hat = lambda s and B_hat = s B.
class WaveAtom {
public:
    StatePoint base, w1, w2;
    double mu1 = 0.5, mu2 = 0.5;
    WaveDirection direction;
    double lambda_hat = 1.0;
    Eigen::Matrix2d B_hat = Eigen::Matrix2d::Zero();
    Box box;
    double inner_fraction = 0.9;
    std::shared_ptr<const ProfileTower> tower;
    /// Cutoff ramp on the normalized axis [-1/2, 1/2].
    std::shared_ptr<const PiecewisePoly> ramp;
    /// Test hook: drop the source-correcting deviator V''.
    bool omit_correction = false;
    bool zero = false;

    double lambda() const { return lambda_hat / box.side; }
    Eigen::Matrix2d source_matrix() const { return B_hat / box.side; }
    StatePoint wbar() const { return w2 - w1; }
    double amplitude() const { return wbar().norm(); }
    bool in_support(const Point3& z) const;

    /// Perturbation w~(z) as a StatePoint (m = n~, U = V~).
    StatePoint evaluate(const Point3& z) const;
    /// Value and analytic first derivatives at z (physical units).
    WaveJet jet(const Point3& z) const;
    /// dist(base + w~(z), [w1, w2]).
    double segment_distance(const Point3& z) const;
    /// Same atom moved to another cube of the same normalized shape.
    WaveAtom relocated(const Box& b, const Eigen::Matrix2d& B) const;
    std::string to_json() const;
};

/// Lambda-cone direction of a planar state difference: xi ⟂ n, tau from V xi = -tau n.
WaveDirection lambda_direction(const StatePoint& wbar);

/// Builds the atom for base = mu1 w1 + mu2 w2 on box, doubling lambda from
/// lambda_hint until the sampled sup-distance to [w1, w2] is <= eps.
WaveAtom build_wave(const StatePoint& base, const StatePoint& w1, const StatePoint& w2, const Box& box,
                    double eps, const Eigen::Matrix2d& B, double lambda_hint, const WaveOptions& opt = {});

/// Sampled sup of dist(base + w~, [w1, w2]) over the search grid.
double sampled_sup_distance(const WaveAtom& a, const WaveOptions& opt = {});

struct WaveResidual {
    double divergence = 0.0;
    double momentum = 0.0;
    double mean = 0.0;
};

/// Sup over the samples of |div n~| and |d_t n~ + div V~ - B n~|, plus the
/// largest exact space mean over the sample times.
WaveResidual wave_residual(const WaveAtom& a, const std::vector<Point3>& samples, bool with_mean = true);

/// Exact space integral of w~(t, .) by piecewise Gauss integration in the frame of xi.
/// Cost grows linearly with lambda_hat.
std::array<double, 4> space_integral(const WaveAtom& a, double t);

struct PartitionMeasures {
    double o1 = 0.0, o2 = 0.0, rest = 0.0;  ///< fractions of the box measure
    double radius = 0.0;
    bool ok = false;  ///< |o_i - mu_i| < eps for both i
};

/// Midpoint quadrature on a 64^3 grid of the sets {|base + w~ - w_i| < min(eps/2, |w2-w1|/4)}.
PartitionMeasures partition_measures(const WaveAtom& a, double eps, int per_axis = 64);

/// Copies of one atom v with endpoints -wbar, +wbar over the 2^{3k} dyadic cubes of
/// [0,1]^3.  v is built once with B_hat = 2^{-k} B so every copy solves the system with B;
/// lambda_hint is the frequency of v on the unit cube.
std::vector<WaveAtom> tile_wave(const StatePoint& wbar, int k, double eps, const Eigen::Matrix2d& B,
                                double lambda_hint, const WaveOptions& opt = {});

}  // namespace cilab
