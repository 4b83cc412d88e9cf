#pragma once

// Fourier-truncated quantization on T^2 over the modes e^{2 pi i k.q},
// |k|inf <= N.  The raw matrix is A[k,k'] = hhat_{k-k'}(2 pi k') with a smooth
// low-frequency cutoff chi(|k'|/r0) removing the p = 0 singularity; the
// returned operator is the Hermitian part (A + A*)/2.

#include <complex>
#include <string>
#include <vector>

#include "specwave/symbol.hpp"

namespace specwave {

inline size_t mode_count(int N) { return size_t(2 * N + 1) * size_t(2 * N + 1); }
inline size_t mode_index(int N, int k1, int k2) {
    return size_t(k1 + N) * size_t(2 * N + 1) + size_t(k2 + N);
}

struct DenseOperator {
    int N = 0;
    size_t dim = 0;
    double r0 = 2.0;          // cutoff radius in lattice units; <= 0 means none
    std::string symbol_id;
    std::string mode = "classical";
    int sc_n = 0;             // semiclassical fiber index, if applicable
    std::vector<cplx> a;      // column-major dim x dim

    cplx& at(size_t i, size_t j) { return a[j * dim + i]; }
    const cplx& at(size_t i, size_t j) const { return a[j * dim + i]; }
    double hermiticity_error() const;
};

struct BandedOperator {
    int N = 0;
    size_t dim = 0;
    int kd = 0;               // sub-diagonal count in lexicographic mode order
    double r0 = 2.0;
    std::string symbol_id;
    std::string mode = "classical";
    int sc_n = 0;
    // LAPACK lower band storage, column-major (kd+1) x dim:
    // ab[(j)*(kd+1) + (i - j)] = M(i,j) for j <= i <= min(dim-1, j+kd)
    std::vector<cplx> ab;
};

// hhat_m(p) for a 2D symbol: the m-th q-Fourier coefficient at covector p
cplx symbol_qcoeff(const SymbolSpec& spec, int m1, int m2, double phi_p);

DenseOperator quantize(const SymbolSpec& spec, int N, double r0 = 2.0);
DenseOperator quantize_serial(const SymbolSpec& spec, int N, double r0 = 2.0);
DenseOperator quantize_omp(const SymbolSpec& spec, int N, double r0 = 2.0);

BandedOperator quantize_banded(const SymbolSpec& spec, int N, double r0 = 2.0);

// semiclassical family H_n for the S^1-invariant 3D symbol (tau = n exactly,
// so no cutoff is involved); n = 0 must go through the classical route
DenseOperator quantize_semiclassical(const SymbolSpec3D& spec, int n, int N);

// k2-conserving block decomposition, available when the 3D symbol has no
// y-dependence: one banded block over k1 for every k2 in [-N, N]
std::vector<BandedOperator> quantize_semiclassical_blocks(const SymbolSpec3D& spec, int n, int N);

// matrix-free application of the same quantization at large N
class SymbolOperator {
  public:
    SymbolOperator(const SymbolSpec& spec, int N, double r0 = 2.0);
    int N() const { return N_; }
    size_t dim() const { return dim_; }

    // y = A x, y = A* x, y = (A + A*)/2 x
    void apply_raw(const std::vector<cplx>& x, std::vector<cplx>& y) const;
    void apply_adjoint(const std::vector<cplx>& x, std::vector<cplx>& y) const;
    void apply_hermitian(const std::vector<cplx>& x, std::vector<cplx>& y) const;

  private:
    struct Coupling {
        int m1, m2;
        std::vector<cplx> mult;  // hhat_m(2 pi k') chi(|k'|/r0) over k'
    };
    int N_;
    size_t dim_;
    std::vector<Coupling> couplings_;
};

}  // namespace specwave
