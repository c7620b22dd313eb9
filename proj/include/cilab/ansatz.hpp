#pragma once
/// Strict subsolution ansatz families: piecewise-constant states, the smooth
/// perturbed-density ansatz and the cube-wise Lipschitz ansatz, with the scalar
/// machinery they share (pressure law, beta, time cutoff, chi curves).

#include "cilab/geometry.hpp"
#include "cilab/operators.hpp"
#include "cilab/profiles.hpp"

#include <Eigen/Dense>
#include <filesystem>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

struct AnsatzError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// p(rho) = a rho^gamma.
struct PressureLaw {
    double a = 1.0;
    double gamma = 2.0;
    PressureLaw() = default;
    PressureLaw(double a_, double gamma_);
    double p(double rho) const;
    double dp(double rho) const;
    /// I(rho) = rho * int_0^rho p(r)/r^2 dr = a rho^gamma/(gamma - 1).
    double internal_energy(double rho) const;
    double dI(double rho) const;
};

/// max(0, lambda_max(-(B + B^T)/2)).
double beta_of(const Eigen::Matrix2d& B);

/// Even C^6 cutoff h(t) = h(|t|): 1 near 0, 0 for |t| >= support, 0 <= h <= 1, |h'| <= 2.
/// h' is minus a normalized plateau bump, so h descends over the whole of (0, support).
class TimeCutoff {
public:
    explicit TimeCutoff(double support = 0.95, double bump_plateau = 0.5, double scale = 1.0);
    /// j-th derivative at t, j = 0..6.
    double eval(double t, int j = 0) const;
    double support() const { return support_ * scale_; }
    /// Sampled sup of |h'| over [0, support].
    double max_slope() const;

private:
    double support_, scale_;
    PiecewisePoly bump_, integral_;
    double total_ = 1.0;
};

enum class RegionKind { full, finite, inert };

/// One region (Omega_i or Whitney cube) with its constraint-set descriptor.
struct RegionInfo {
    int label = 0;
    double rho = 1.0, q = 0.0;
    RegionKind kind = RegionKind::full;
    SimplexDecomposition points;  ///< N* states for kind == finite
};

/// Time slices of (rho, m, U, q) on a torus grid, region labels and analytic parts.
/// U is a DeviatorField (U11, U12, U22).  rho_t and m_t are the analytic time
/// derivatives when the builder knows them (empty otherwise).
struct SubsolutionState {
    std::string kind;
    TorusGrid grid;
    std::vector<double> times;
    std::vector<ScalarField> rho, q;
    std::vector<VectorField> m;
    std::vector<DeviatorField> U;
    std::vector<ScalarField> rho_t;
    std::vector<VectorField> m_t;
    std::vector<int> region;  ///< node label, row-major
    std::vector<RegionInfo> regions;
    /// Declared strict region: nodes whose region kind is not inert, at times > strict_from.
    double strict_from = -1.0;
    /// Finite constraint sets apply from this time on; the full K before.
    double finite_from = -std::numeric_limits<double>::infinity();
    PressureLaw plaw;
    Eigen::Matrix2d B = Eigen::Matrix2d::Zero();
    std::vector<double> chi, h;
    ScalarField psi;
    std::map<std::string, double> diagnostics;

    std::size_t slices() const { return times.size(); }
    StatePoint point(std::size_t k, int i1, int i2) const;
    ConstraintParams params(std::size_t k, int i1, int i2) const;
    const RegionInfo& region_at(int i1, int i2) const;
    bool in_strict_region(std::size_t k, int i1, int i2) const;
};

/// Smallest hull margin over the declared strict region (+inf if empty).
double min_strictness_margin(const SubsolutionState& s);

struct LinearResiduals {
    double continuity = 0.0;  ///< sup |rho_t + div m|
    double momentum = 0.0;    ///< sup |m_t + div U + grad(p + q) - B m|
    double scale = 1.0;       ///< sup of the individual terms
};

/// Pointwise residuals of the linear system using the stored analytic time
/// derivatives and spectral space derivatives.
LinearResiduals linear_residuals(const SubsolutionState& s);

/// Stationary piecewise-constant state: q = chi - p(rho_i) on region i.
/// Regions with q > 0 get an N*-point set around (0, 0); q = 0 regions are inert.
SubsolutionState build_piecewise_constant(const TorusGrid& g, const std::vector<int>& labels,
                                          const std::vector<double>& densities, double chi, const PressureLaw& plaw,
                                          const Eigen::Matrix2d& B, const std::vector<double>& times,
                                          std::uint64_t seed = 1);

enum class ChiMode { general_source, lipschitz };

struct ChiParams {
    ChiMode mode = ChiMode::general_source;
    double beta = 0.0;
    double eps = 0.0;     ///< smallness (general_source)
    double c0 = 1.0;      ///< energy constant (general_source)
    double varrho = 0.0;  ///< gradient bound (lipschitz)
    std::array<double, 4> C{};  ///< C0..C3 (lipschitz)
    double chi0 = 0.1;
    double T = 1.0;       ///< integration interval [0, T]
    double step = 1e-3;
    /// Strictness floor constant: general_source floor C (h'^2 eps + |h'| + |h''| + h) eps,
    /// lipschitz floor p(rho_hat) + C T^-2 theta^2 on [0, T).
    double floor_constant = 0.0;
    double rho_hat_pressure = 0.0;  ///< p(rho_hat) (lipschitz)
    double theta = 0.0;             ///< oscillation bound (lipschitz)
    /// Test hook: chi' = factor * rhs.
    double rate_factor = 1.0;
};

struct ChiCurve {
    std::vector<double> t, chi, dchi;
    std::vector<double> floor;        ///< strictness floor per sample
    double min_margin = 0.0;          ///< min(chi - floor)
    double richardson = 0.0;          ///< max |chi_h - chi_{h/2}| at common samples
    bool feasible = false;
    double blow_down = std::numeric_limits<double>::infinity();  ///< first time chi meets its floor
    /// Cubic Hermite interpolation (constant beyond the last sample).
    double at(double time) const;
    double derivative_at(double time) const;
};

/// RK4 for the chi inequality taken with equality, a halved-step Richardson check
/// and the strictness floors.  Throws AnsatzError when infeasible and throw_on_fail.
ChiCurve solve_chi(const ChiParams& p, const TimeCutoff& h, bool throw_on_fail = true);

struct PerturbedDensityOptions {
    double eps_budget = 1e-3;
    double c0 = 10.0;
    double chi0 = 0.1;
    double floor_constant = 0.25;
    double rate_factor = 1.0;
    std::vector<double> times;
};

/// Smooth ansatz rho = (1 - h) rho_sharp + h rho0, m = h' grad Psi, U = R[-h'' grad Psi + h' B grad Psi].
SubsolutionState build_perturbed_density(const ScalarField& rho0, const PressureLaw& plaw, const Eigen::Matrix2d& B,
                                         const PerturbedDensityOptions& opt);

/// Measured smallness ||(rho0 - mean, grad rho0)||_inf (spectral gradient).
double smallness_norm(const ScalarField& rho0);

struct DecayCheck {
    double kappa = 0.0;
    double worst_ratio = 0.0;  ///< max over slices of ||(rho - rho_sharp, m)|| / (kappa e^{-beta t})
    bool ok = false;
};

/// A-priori kappa = e^{beta support} max(||rho0 - rho_sharp||, max|h'| ||grad Psi||) and the slice check.
DecayCheck decay_check(const SubsolutionState& s, const TimeCutoff& h);

struct LipschitzOptions {
    double T = 0.5;
    double theta = 0.05;       ///< target oscillation r_i |grad rho0| <= theta per cube
    int min_cube = 2;          ///< smallest cube side in nodes
    std::array<double, 4> C{{0.1, 0.1, 0.1, 0.1}};
    double chi0 = -1.0;        ///< <= 0: p(rho_hat) + 1
    double floor_constant = 0.1;
    std::vector<double> times;
    std::uint64_t seed = 1;
};

/// Whitney-type dyadic cubes on the region map, per-cube Neumann potentials and
/// h_T transition to the cube means; piecewise constant with N*-point sets after T.
SubsolutionState build_piecewise_lipschitz(const ScalarField& rho0, const std::vector<int>& labels,
                                           const PressureLaw& plaw, const Eigen::Matrix2d& B,
                                           const LipschitzOptions& opt);

/// Pointwise d_t(I + n q/2) + div[(I + n q/2 + p) m/rho] + beta n q per slice
/// (spectral space derivatives, centred time differences, one-sided at the ends).
std::vector<ScalarField> energy_production(const SubsolutionState& s);

/// Writes the slices of (rho, m, U, q) as field dumps <name>_<kkk> in dir, the region
/// map as `region`, any extra per-slice or single fields, and dir/index.json with
/// the times, pressure law, source matrix and the stems of every dumped field.
void write_state_dump(const SubsolutionState& s, const std::filesystem::path& dir,
                      const std::map<std::string, std::vector<GridField>>& extra = {});

}  // namespace cilab
