#pragma once
/// Batch runs: config parsing with JSON-pointer diagnostics, the ansatz,
/// iterate, iterate-initial, verify and geometry pipelines, and the run manifest.

#include "cilab/ansatz.hpp"
#include "cilab/scheme.hpp"
#include "cilab/verify.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

inline constexpr const char* kVersion = "1.0.0";

/// Config schema violation; what() starts with the JSON pointer of the offending value.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One Fourier mode of an initial density: amplitude * (cos or sin)(2 pi k.x / L).
struct DensityMode {
    std::array<int, 2> k{{1, 0}};
    double amplitude = 0.0;
    bool sine = false;
};

struct AnsatzSpec {
    std::string kind = "piecewise_constant";  ///< piecewise_constant | perturbed_density | piecewise_lipschitz
    std::string layout = "halves";            ///< halves | stripes | disk
    int stripes = 2;
    double disk_radius = 0.25;
    std::vector<double> densities{1.0, 2.0};  ///< per region (piecewise_constant)
    double chi = 2.0;
    double density_mean = 1.0;
    std::vector<DensityMode> modes;
    PerturbedDensityOptions perturbed;
    LipschitzOptions lipschitz;
};

struct GeometrySpec {
    double rho = 1.0, q = 1.0;
    std::array<double, 4> target{};  ///< (m1, m2, U11, U12)
};

struct RunConfig {
    std::string mode = "iterate";  ///< ansatz | iterate | iterate-initial | verify | geometry
    std::uint64_t seed = 1;
    TorusGrid grid{128, 1.0};
    std::vector<double> times;
    PressureLaw plaw{0.5, 2.0};
    Eigen::Matrix2d B = Eigen::Matrix2d::Zero();
    AnsatzSpec ansatz;
    IterationConfig iteration;
    VerifyOptions verify;
    double census_tol = 1e-2;  ///< clustering tolerance as a fraction of the region amplitude
    GeometrySpec geometry;
    std::filesystem::path dump;  ///< verify mode: dump directory
    nlohmann::json source;       ///< the parsed config as given
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Command-line and environment overrides.
struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<int> stages;
    std::optional<int> quad_refine;
};

/// Applies overrides to the config (seed, threads, stages, quadrature refinement).
void apply_overrides(RunConfig& cfg, const RunOverrides& o);

/// Region labels of the configured layout.
std::vector<int> region_labels(const RunConfig& cfg);
ScalarField initial_density(const RunConfig& cfg);
SubsolutionState build_ansatz(const RunConfig& cfg);

/// FNV-1a 64-bit hash of a file, as 16 hex digits.
std::string file_hash(const std::filesystem::path& p);

/// Exit status: 0 success, 1 verification failed (verify mode), 3 numerical infeasibility.
/// Writes manifest.json and the mode's artifacts under out; log receives progress lines.
int run(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

}  // namespace cilab
