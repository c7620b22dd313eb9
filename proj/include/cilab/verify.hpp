#pragma once
/// Verification that reads only field dumps: weak-form residuals of the
/// momentum and continuity equations, the distributional energy inequality
/// with the saturated energy, and constraint-distance fields.
///
/// Fields are interpolated linearly in time between dumped slices and paired
/// with analytic test functions phi(x, t) = T(t) S(x); time integrals of the
/// interpolants against T and T' are exact (Gauss-Legendre on the polynomial
/// pieces), space integrals are grid sums.

#include "cilab/ansatz.hpp"
#include "cilab/operators.hpp"
#include "cilab/profiles.hpp"

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

struct VerifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Fields read back from a dump directory written by write_state_dump.
struct DumpSet {
    std::filesystem::path dir;
    std::string kind;
    TorusGrid grid;
    std::vector<double> times;
    std::vector<ScalarField> rho, q;
    std::vector<VectorField> m;
    std::vector<DeviatorField> U;
    std::vector<int> region;  ///< empty when the dump has no region map
    PressureLaw plaw;
    Eigen::Matrix2d B = Eigen::Matrix2d::Zero();
    std::size_t slices() const { return times.size(); }
};

/// Loads index.json and every slice; grid, component count and time of each
/// sidecar must match the index.
DumpSet load_dump(const std::filesystem::path& dir);

/// phi(x, t) = T(t) S(x).  T is 1 on [t0, t0 + f b], descends with a C^6 ramp and
/// vanishes from t0 + b on; S = offset + amplitude * (cos or sin)(2 pi k.x / L).
struct TestFunction {
    std::string name;
    std::array<int, 2> k{{1, 0}};
    bool sine = false;
    double offset = 0.0, amplitude = 1.0;
    double t0 = 0.0, support = 1.0, plateau = 0.4;
    double length = 1.0;
    PiecewisePoly ramp;  ///< plateau ramp on [-1/2, 1/2]

    /// j-th time derivative of T, j = 0..2.
    double time(double t, int j = 0) const;
    double space(double x1, double x2) const;
    std::array<double, 2> space_gradient(double x1, double x2) const;
    /// Time points where T is not polynomial (plateau end, support end).
    std::array<double, 2> time_breaks() const;
    /// max over |alpha| <= 2 of sup |d^alpha phi|.
    double c2_norm() const;
};

struct FamilyOptions {
    std::vector<std::array<int, 2>> modes{{{1, 0}}, {{0, 1}}, {{1, 1}}};
    /// Supports of the temporal ramps as fractions of the dumped time span.
    std::vector<double> supports{0.6, 0.95};
    double plateau = 0.4;
    /// Non-negative members: S = 1 + 0.9 (cos or sin).
    bool nonnegative = false;
};

/// modes x ramps x parities members on the time span [t0, t1] of a torus of side L.
std::vector<TestFunction> make_family(double t0, double t1, double L, const FamilyOptions& opt = {});

enum class FluxForm {
    relaxed,   ///< flux U + q I (the linear subsolution system)
    nonlinear  ///< flux m (x) m / rho
};

/// Residual value at the dump resolution and at half resolution (every second
/// node in space, every second slice in time when the slice count allows).
struct ResidualValue {
    double value = 0.0;
    double coarse = 0.0;
    double scale = 1.0;  ///< field sup x ||phi||_{C^2} x |space-time box|
    /// Root of the summed squared node contributions: the standard error of the
    /// value if node values were independent samples (the sampled-covering case).
    double spread = 0.0;
    bool resolved = true;  ///< |value - coarse| <= 10% of |value| + 1e-3 tol scale
    bool pass = false;
};

struct WeakResidual {
    std::string test;
    ResidualValue continuity;
    ResidualValue momentum;  ///< Euclidean norm over psi = phi e_1, phi e_2
};

struct WeakOptions {
    FluxForm form = FluxForm::relaxed;
    double tol = 1e-6;
};

std::vector<WeakResidual> weak_residual(const DumpSet& d, const std::vector<TestFunction>& family,
                                        const WeakOptions& opt = {});

struct AdmissibilityValue {
    std::string test;
    ResidualValue value;  ///< signed left side of the energy inequality
    bool equality = false;  ///< |value| <= tol x scale
};

/// Left side of the energy inequality with the saturated energy E = I(rho) + n q / 2,
/// flux (E + p) m / rho and the source term bounded below by -beta n q
/// (exact for antisymmetric B and for B = -I).  pass iff value >= -tol x scale.
std::vector<AdmissibilityValue> admissibility_residual(const DumpSet& d, const std::vector<TestFunction>& family,
                                                       double tol = 1e-6);

/// int int psi . B m with psi = phi e_c.
double source_pairing(const DumpSet& d, const TestFunction& f, int c);

struct ConstraintFields {
    std::vector<ScalarField> dist;    ///< dist((m, U), K_{rho, q}) per slice
    std::vector<ScalarField> margin;  ///< hull margin per slice
};

ConstraintFields constraint_field(const DumpSet& d, int threads = 1);

struct ConstraintSummary {
    std::size_t nodes = 0;
    double max = 0.0;
    double mean = 0.0;
    double threshold = 0.0;
    double fraction_above = 0.0;
    double measure_above = 0.0;      ///< fraction_above x |selected space-time set|
    double saturation_near_k = 0.0;  ///< max | |m|^2 - n rho q | where dist <= threshold
    double min_margin = 0.0;
};

/// Statistics over nodes with a label in `labels` (all if empty) and slice time in [t0, t1].
ConstraintSummary summarize_constraint(const ConstraintFields& c, const DumpSet& d, const std::vector<int>& labels,
                                       double t0, double t1, double threshold);

/// Test hook: adds delta to m_1 at nodes within `radius` (sup norm, periodic) of
/// (x1, x2) on slices with |t - tc| <= half_width.
void corrupt_momentum_blob(DumpSet& d, double x1, double x2, double tc, double radius, double half_width,
                           double delta);

struct VerifyOptions {
    FluxForm form = FluxForm::relaxed;
    double tol = 1e-6;
    FamilyOptions family;
    bool constraint = true;
    double dist_threshold = 1e-2;
    int threads = 1;
};

struct VerifyReport {
    std::vector<WeakResidual> weak;
    std::vector<AdmissibilityValue> admissibility;
    bool has_constraint = false;
    ConstraintSummary constraint;
    bool weak_pass = false, admissibility_pass = false, resolved = false;
};

VerifyReport verify_dump(const DumpSet& d, const VerifyOptions& opt);

/// JSON report {weak, admissibility, constraint, pass flags}.
std::string verify_report_json(const VerifyReport& r, const VerifyOptions& opt);

}  // namespace cilab
