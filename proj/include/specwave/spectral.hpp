#pragma once

// Eigen-analysis of the quantized operators: dense and banded Hermitian
// solvers, essential-spectrum fill diagnostics, travelling quasimodes, and
// the semiclassical counting law for the S^1-invariant family.

#include <utility>
#include <vector>

#include "specwave/quantize.hpp"

namespace specwave {

struct EigenSystem {
    size_t dim = 0;
    std::vector<double> values;   // ascending
    std::vector<cplx> vectors;    // column-major dim x dim; empty if not requested
    const cplx* vec(size_t j) const { return &vectors[j * dim]; }
};

EigenSystem eigendecompose(const DenseOperator& op, bool with_vectors = true);
// max_j ||M v_j - lambda_j v_j||
double eigen_residual(const DenseOperator& op, const EigenSystem& es);

std::vector<double> eigenvalues_banded(const BandedOperator& op);

// spectral measure of f: eigenvalues plus weights |<v_j, f>|^2, computed by a
// band tridiagonalization that carries f through the rotations (O(n^2 kd)),
// followed by tridiagonal MRRR eigenvector chunks
struct SpectralMeasure {
    std::vector<double> values;
    std::vector<double> weights;
};
SpectralMeasure spectral_measure_banded(const BandedOperator& op, const std::vector<cplx>& f);

// sampled range of the 2D symbol over (q, angle)
std::pair<double, double> symbol_range(const SymbolSpec& spec, int nq = 128, int nang = 256);

struct SpectrumFill {
    int N = 0;
    double lambda_min = 0, lambda_max = 0;
    double max_interior_gap = 0;  // inside [h- + margin, h+ - margin]
    size_t count = 0;
};
// per-N eigenvalue range and fill statistics (banded solver)
std::vector<SpectrumFill> essential_spectrum_estimate(const SymbolSpec& spec,
                                                      const std::vector<int>& Ns,
                                                      double r0 = 2.0,
                                                      double interior_margin = 0.05);

// ----- quasimodes -----------------------------------------------------------------

struct QuasimodeCurve {
    std::vector<int> ts;
    std::vector<double> residuals;  // ||(H - omega) u_t||, with ||u_t|| = 1
    double fit_exponent = 0;        // slope of log residual vs log t
    double epsilon = 0;
    double omega = 0;
};

// travelling bump phi(q) e^{2 pi i t k0 . q}; residual measured matrix-free
QuasimodeCurve quasimode_test(const SymbolSpec& spec, double omega, double q0x, double q0y,
                              int k0x, int k0y, double eps, double radius,
                              const std::vector<int>& ts, int N, double r0 = 2.0);

// ----- semiclassical counting -------------------------------------------------------

struct VolumeResult {
    double volume = 0;
    double richardson_rel = 0;  // relative disagreement of the two resolutions
};
// Liouville volume of {h1 in J}; throws if the level set leaks past the
// adaptive radial bound or the Richardson pair disagrees by more than 1%
VolumeResult phase_volume(const SymbolSpec3D& spec, double jlo, double jhi, int nq = 48,
                          int nang = 64, int nr = 512);

struct WeylReport {
    int n = 0;
    size_t count = 0;
    double prediction = 0;
    double rel_error = 0;
    double volume = 0;
    double jlo = 0, jhi = 0;
};
WeylReport weyl_count(const SymbolSpec3D& spec, int n, double jlo, double jhi, int N = 0);

}  // namespace specwave
