#pragma once
/// Spectral elliptic solvers on the periodic square and on Neumann cubes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

struct OperatorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Uniform periodic grid on [0,L)^2; node (i1, i2) sits at (i1 h, i2 h).
struct TorusGrid {
    int N = 64;
    double L = 1.0;
    TorusGrid() = default;
    TorusGrid(int N_, double L_);
    double spacing() const { return L / N; }
    double x(int i) const { return i * spacing(); }
    std::size_t nodes() const { return static_cast<std::size_t>(N) * N; }
};

/// Node values with interleaved components, row-major in (i1, i2).
/// Deviator fields carry three components (R11, R12, R22).
struct GridField {
    TorusGrid grid;
    int components = 1;
    std::vector<double> data;
    double time = 0.0;
    std::string name;

    GridField() = default;
    GridField(const TorusGrid& g, int comps, std::string name_ = "");
    double& operator()(int i1, int i2, int c = 0) { return data[(static_cast<std::size_t>(i1) * grid.N + i2) * components + c]; }
    double operator()(int i1, int i2, int c = 0) const {
        return data[(static_cast<std::size_t>(i1) * grid.N + i2) * components + c];
    }
    double mean(int c = 0) const;
    double sup_norm() const;
    GridField component(int c) const;
};

using ScalarField = GridField;
using VectorField = GridField;
using DeviatorField = GridField;

/// Band-limited random field: Fourier modes with |k_i| <= kmax (in units of 2 pi/L), unit-size amplitudes.
GridField band_limited_random(const TorusGrid& g, int components, int kmax, std::uint64_t seed);

/// Spectral derivatives.  Odd derivatives drop the Nyquist mode.
VectorField spectral_gradient(const ScalarField& f);
ScalarField spectral_divergence(const VectorField& v);
ScalarField spectral_laplacian(const ScalarField& f);
VectorField deviator_divergence(const DeviatorField& R);
/// Largest |R11 + R22| over the nodes.
double max_trace(const DeviatorField& R);

/// Psi with Delta Psi = f - mean(f) and zero mean.  If mean_free is false the
/// removed mean is written to removed_mean.
ScalarField poisson_solve(const ScalarField& f, bool mean_free, double* removed_mean = nullptr);

/// Symmetric trace-free R with div R = f - mean(f).
DeviatorField r_torus(const VectorField& f);

/// v - grad Delta^{-1} div v (the mean of v is kept).
VectorField leray_project(const VectorField& v);

/// Field dump: little-endian float64 node values in row-major order with
/// interleaved components (path.bin) and a JSON sidecar (path.json) holding
/// {resolution, length, components, time, name}.  path is given without extension.
void write_field(const GridField& f, const std::filesystem::path& stem);
/// Reads a dump and checks the blob size against the sidecar.
GridField read_field(const std::filesystem::path& stem);

/// Cell-centred grid on the cube origin + [0,r]^2: node (i1, i2) at origin + ((i1+1/2) h, (i2+1/2) h).
struct CubeGrid {
    int M = 32;
    double r = 1.0;
    std::array<double, 2> origin{};
    double spacing() const { return r / M; }
    double x(int axis, int i) const { return origin[axis] + (i + 0.5) * spacing(); }
};

struct CubeField {
    CubeGrid grid;
    std::vector<double> data;
    CubeField() = default;
    explicit CubeField(const CubeGrid& g) : grid(g), data(static_cast<std::size_t>(g.M) * g.M, 0.0) {}
    double& operator()(int i1, int i2) { return data[static_cast<std::size_t>(i1) * grid.M + i2]; }
    double operator()(int i1, int i2) const { return data[static_cast<std::size_t>(i1) * grid.M + i2]; }
    double sup_norm() const;
};

struct NeumannResult {
    CubeField psi;
    double removed_mean = 0.0;
    double residual = 0.0;         ///< sup |Delta Psi - (f - mean f)| (cosine-spectral Laplacian)
    double normal_derivative = 0.0;  ///< sup over face points of |dPsi/dnu|
    double flux = 0.0;             ///< boundary integral of dPsi/dnu
};

/// Zero-Neumann Poisson solve by the even-reflection cosine basis (DCT-II).
NeumannResult neumann_poisson_cube(const CubeField& f);
/// Gradient of a cube field through its cosine expansion.
std::array<CubeField, 2> cube_gradient(const CubeField& psi);
CubeField cube_laplacian(const CubeField& psi);

}  // namespace cilab
