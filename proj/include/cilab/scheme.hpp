#pragma once
/// Convex-integration iteration on a strict subsolution: nested cube coverings
/// carrying localized plane waves, the staged contraction loop with its
/// monitors, the initial-data variant and the finite-state census.
///
/// The covering is sampled: every node of the space-time region D (and every
/// extra particle per node when the quadrature is refined) follows its own
/// chain of nested cubes.  At each layer the node sits at a pseudo-random
/// relative position u in its cube, the cube gets one wave atom planned at the
/// node state, and the node value advances by the atom value at u.  Cube sides
/// follow the continuity budget and are tracked as log2.

#include "cilab/ansatz.hpp"
#include "cilab/waves.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

struct SchemeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IterationConfig {
    int max_stages = 6;
    /// First-layer cube side cap r0; stage k uses r <= 2^{-k} r0.
    double r0 = 1.0 / 256.0;
    /// Continuity budget kappa: every cube is small enough that the current w
    /// varies by at most sqrt(3) kappa A on it (A the amplitude of the region).
    double kappa = 1e-12;
    /// Coverage deficit budget as a fraction of eps_k (the eps/(4 C0) of the covering).
    double deficit = 0.25;
    /// Largest margin handed to plan_wave_step.
    double margin_cap = 1e-2;
    double inner_fraction = 0.97;
    double delta = 0.02;
    /// lambda_hat = lambda_safety * amplitude * slope / (margin * scale), doubled per node while needed.
    double lambda_safety = 64.0;
    int max_doublings = 40;
    int max_layers_per_stage = 60;
    /// Particles per node (quadrature refinement of the sampled covering).
    int quad_refine = 1;
    /// A node is settled in stage k once its distance is <= settle * eps_k / |D|.
    double settle = 0.05;
    /// Atoms per layer re-checked by wave_residual and sampled_sup_distance.
    int atom_checks = 4;
    /// Weak-star budget eps0: stage k asks sup_t |int (w' - w) psi| <= 2^{-k} eps0.
    double weak_budget = 1.0;
    /// Sup norms of the gradients of the weak-star test family.
    std::vector<double> test_gradient_bounds{2.0 * 3.141592653589793};
    /// Time window of D; NaN picks the open range of the state's slices.
    double t0 = std::numeric_limits<double>::quiet_NaN();
    double t1 = std::numeric_limits<double>::quiet_NaN();
    /// Nested monitor windows D_j: fractions of the time window (last must be 1).
    std::vector<double> windows{1.0 / 3.0, 2.0 / 3.0, 1.0};
    std::uint64_t seed = 1;
    /// Worker threads for the per-node work (results do not depend on it).
    int threads = 1;
    /// Optional progress callback (stage, layer, current dist estimate).
    std::function<void(int, int, double)> progress;
    void validate() const;
};

/// A Monte-Carlo estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

struct StageReport {
    int stage = 0;
    double eps_target = 0.0;      ///< min(2^{-k}, dist_before_d1 / 2)
    double dist_before_d1 = 0.0;  ///< int_{D1} dist(w_k, K)
    Estimate dist_integral;       ///< int_D dist(w_{k+1}, K)
    Estimate dist_integral_d1;
    double quad_tol = 0.0;        ///< 3 standard errors
    std::vector<Estimate> l2_norms;       ///< ||w_{k+1}||^2 per window
    std::vector<Estimate> l2_increment;   ///< paired difference against w_k
    Estimate pairing;             ///< max_j |int_{D_j} (w_{k+1} - w_k) . w_k|, sampled
    double pairing_bound = 0.0;   ///< a-priori bound from cube oscillations
    double pairing_target = 0.0;  ///< min(2^{-k}, (dist_before_d1)^2 / (100 |D|))
    double weak_bound = 0.0;      ///< a-priori sup_t |int (w' - w) psi| over the family
    double weak_target = 0.0;
    std::size_t cubes = 0;
    int layers = 0;
    double lambda_min = 0.0, lambda_median = 0.0, lambda_max = 0.0;
    std::size_t lambda_doublings = 0;
    double atom_residual = 0.0;   ///< max relative residual of spot-checked atoms
    double atom_sup_distance = 0.0;  ///< max sampled sup-distance / amplitude of spot-checked atoms
    double centre_offset = 0.0;   ///< bound on |w(node) - w(cube centre)| used in planning
    double uncovered = 0.0;       ///< measure of unsettled D left without a cube
    double saturation_median = -1.0;  ///< initial-data variant: median | |m|^2 - n rho q | on t = 0
    double min_weight = 0.0;      ///< smallest barycentric weight over D (strictness)
    double wall_seconds = 0.0;
    bool contraction_ok = false, l2_ok = false, pairing_ok = false, weak_ok = false;
};

/// CSV header and row for a stage report.
std::string stage_csv_header(std::size_t windows);
std::string stage_csv_row(const StageReport& r);

/// One particle of the sampled covering.
struct Particle {
    StatePoint w;
    double log2_side = 0.0;  ///< log2 of the current cube side (0 before the first layer)
    double osc = 0.0;        ///< cube side times a Lipschitz bound of w on the current cube
    double weak = 0.0;       ///< accumulated amplitude x side in the current stage
    double pair = 0.0;       ///< accumulated pairing bound in the current stage
    double dist = -1.0;      ///< cached dist to K (negative: stale)
    int layers = 0;
    bool started = false;
};

/// Node of D with its constraint data and particles.
struct SchemeNode {
    std::size_t slice = 0;
    int i1 = 0, i2 = 0;
    double t = 0.0;
    double rho = 1.0, q = 0.0;
    double boundary_distance = 0.0;  ///< sup-norm distance to the boundary of D
    double gain = 1.0;               ///< bound on the barycentric weight change per unit state change
    int window = 0;                  ///< first monitor window containing the node
    bool initial = false;            ///< on the t = 0 slice (initial-data variant, not in the integrals)
    std::uint64_t id = 0;
    std::shared_ptr<const SimplexDecomposition> points;
    std::vector<Particle> particles;
};

/// Working state of an iteration: the base subsolution, region D and its nodes.
struct SchemeState {
    SubsolutionState base;
    std::vector<SchemeNode> nodes;
    double measure = 0.0;               ///< |D|
    std::vector<double> window_measure; ///< |D_j|
    double amplitude = 1.0;             ///< max |v_l - w0| over D
    double lip0 = 0.0;                  ///< space-time Lipschitz bound of the base (m, U) on D
    double t0 = 0.0, t1 = 1.0;
    std::size_t interior = 0;           ///< nodes counted in the integrals
    /// Current fields: base with the particle-0 values written into D.
    SubsolutionState snapshot() const;
};

/// Builds the node set of D.  Requires strictness at every node of D.
SchemeState prepare_region(const SubsolutionState& s, const IterationConfig& cfg, bool include_initial = false);

/// Distance of a particle to K_{rho,q} (exact for n = 2).
double node_distance(const SchemeNode& n, const Particle& p);

/// Runs layers on D until the sampled int_D dist <= eps.  Fills the per-stage
/// fields of report (everything except the stage-level comparisons).
void one_stage(SchemeState& st, int stage, double eps, const IterationConfig& cfg, StageReport& report);

struct IterationResult {
    SubsolutionState state;
    std::vector<StageReport> reports;
    std::vector<ScalarField> dist;  ///< per slice, 0 outside D
    VectorField m_diamond;          ///< t = 0 momentum (initial-data variant)
    ScalarField saturation;         ///< | |m|^2 - n rho q | on t = 0 (initial-data variant)
    std::string error;              ///< non-empty when a stage failed (reports are partial)
};

/// Stage loop with eps_k = min(2^{-k}, 1/2 int_{D1} dist(w_k)), D1 = D.
IterationResult iterate(const SubsolutionState& s, const IterationConfig& cfg);

/// Initial-data variant: each stage runs a pass on the t = 0 slice (cubes centred on t = 0,
/// temporal half-width <= 2^{-k}) before the generic pass.
IterationResult iterate_with_initial_data(const SubsolutionState& s, const IterationConfig& cfg);

struct CensusCluster {
    StatePoint w;
    double rho = 0.0;
    double fraction = 0.0;
    int vertex = -1;              ///< matched vertex of the region's point set
    double vertex_distance = 0.0;
};

struct Census {
    std::vector<CensusCluster> clusters;  ///< fraction >= min_fraction, by decreasing fraction
    std::size_t total_clusters = 0;
    double captured = 0.0;                ///< mass of the listed clusters
    double off_cluster = 0.0;             ///< 1 - captured
    double tv_distance = -1.0;            ///< against the Caratheodory weights (finite regions)
    std::vector<double> caratheodory;
    double tol = 0.0;
};

/// Leader clustering of nodal (rho, m, U) values of region `label` over the
/// slices in (t0, t1).  Clusters below min_fraction are counted but not listed.
Census state_census(const SubsolutionState& s, int label, double tol, double t0 = -1e300, double t1 = 1e300,
                    double min_fraction = 0.01);

/// Amplitude max_l |v_l - w0| of a finite region (0 for inert regions).
double region_amplitude(const RegionInfo& r);

}  // namespace cilab
