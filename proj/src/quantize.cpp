#include "specwave/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "specwave/kernels.hpp"

namespace specwave {

double DenseOperator::hermiticity_error() const {
    double worst = 0;
    for (size_t j = 0; j < dim; ++j)
        for (size_t i = 0; i <= j; ++i)
            worst = std::max(worst, std::abs(at(i, j) - std::conj(at(j, i))));
    return worst;
}

cplx symbol_qcoeff(const SymbolSpec& spec, int m1, int m2, double phi_p) {
    cplx acc(0, 0);
    for (const auto& fc : spec.coeffs())
        if (fc.m1 == m1 && fc.m2 == m2)
            acc += fc.c * cplx(std::cos(fc.j * phi_p), std::sin(fc.j * phi_p));
    return acc;
}

namespace {

struct ModeSet {
    std::vector<std::pair<int, int>> modes;  // distinct (m1,m2) of the symbol
};

ModeSet coupling_modes(const SymbolSpec& spec) {
    ModeSet s;
    std::map<std::pair<int, int>, bool> seen;
    for (const auto& fc : spec.coeffs()) {
        auto key = std::make_pair(fc.m1, fc.m2);
        if (!seen.count(key)) {
            seen[key] = true;
            s.modes.push_back(key);
        }
    }
    return s;
}

DenseOperator quantize_impl(const SymbolSpec& spec, int N, double r0, bool omp) {
    if (N < spec.q_modes())
        throw PreconditionError("quantize: truncation N below the symbol q-bandwidth");
    DenseOperator op;
    op.N = N;
    op.dim = mode_count(N);
    op.r0 = r0;
    op.symbol_id = spec.name();
    op.a.assign(op.dim * op.dim, cplx(0, 0));
    auto modes = coupling_modes(spec);
    const int W = 2 * N + 1;

    auto column = [&](std::ptrdiff_t col) {
        int k1p = int(col) / W - N, k2p = int(col) % W - N;
        double absk = std::hypot(double(k1p), double(k2p));
        double chi = (r0 > 0) ? cutoff_chi(absk / r0) : 1.0;
        if (chi == 0.0) return;
        double phi = std::atan2(double(k2p), double(k1p));
        for (auto [m1, m2] : modes) {
            int r1 = k1p + m1, r2 = k2p + m2;
            if (std::abs(r1) > N || std::abs(r2) > N) continue;
            op.a[size_t(col) * op.dim + mode_index(N, r1, r2)] +=
                chi * symbol_qcoeff(spec, m1, m2, phi);
        }
    };
    if (omp) {
#if defined(SPECWAVE_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t c = 0; c < std::ptrdiff_t(op.dim); ++c) column(c);
#else
        for (std::ptrdiff_t c = 0; c < std::ptrdiff_t(op.dim); ++c) column(c);
#endif
    } else {
        for (std::ptrdiff_t c = 0; c < std::ptrdiff_t(op.dim); ++c) column(c);
    }

    // Hermitian part in place: M = (A + A*)/2
    for (size_t j = 0; j < op.dim; ++j) {
        for (size_t i = 0; i < j; ++i) {
            cplx v = 0.5 * (op.at(i, j) + std::conj(op.at(j, i)));
            op.at(i, j) = v;
            op.at(j, i) = std::conj(v);
        }
        op.at(j, j) = cplx(op.at(j, j).real(), 0.0);
    }
    return op;
}

}  // namespace

DenseOperator quantize_serial(const SymbolSpec& spec, int N, double r0) {
    return quantize_impl(spec, N, r0, false);
}
DenseOperator quantize_omp(const SymbolSpec& spec, int N, double r0) {
    return quantize_impl(spec, N, r0, true);
}
DenseOperator quantize(const SymbolSpec& spec, int N, double r0) {
    return quantize_impl(spec, N, r0, exec_mode() == ExecMode::OpenMP);
}

BandedOperator quantize_banded(const SymbolSpec& spec, int N, double r0) {
    if (N < spec.q_modes())
        throw PreconditionError("quantize_banded: truncation N below the symbol q-bandwidth");
    BandedOperator op;
    op.N = N;
    op.dim = mode_count(N);
    op.r0 = r0;
    op.symbol_id = spec.name();
    const int W = 2 * N + 1;
    auto modes = coupling_modes(spec);
    int kd = 0;
    for (auto [m1, m2] : modes) kd = std::max(kd, std::abs(m1 * W + m2));
    op.kd = kd;
    op.ab.assign(size_t(kd + 1) * op.dim, cplx(0, 0));

    auto raw = [&](int r1, int r2, int c1, int c2) -> cplx {
        // A[r, c] = chi(|c|) hhat_{r-c}(2 pi c)
        double absk = std::hypot(double(c1), double(c2));
        double chi = (r0 > 0) ? cutoff_chi(absk / r0) : 1.0;
        if (chi == 0.0) return {0, 0};
        double phi = std::atan2(double(c2), double(c1));
        return chi * symbol_qcoeff(spec, r1 - c1, r2 - c2, phi);
    };

    parallel_for(std::ptrdiff_t(op.dim), [&](std::ptrdiff_t col) {
        int c1 = int(col) / W - N, c2 = int(col) % W - N;
        for (int off = 0; off <= kd; ++off) {
            size_t row = size_t(col) + size_t(off);
            if (row >= op.dim) break;
            int r1 = int(row) / W - N, r2 = int(row) % W - N;
            if (std::abs(r1 - c1) > spec.q_modes() || std::abs(r2 - c2) > spec.q_modes())
                continue;
            cplx v = 0.5 * (raw(r1, r2, c1, c2) + std::conj(raw(c1, c2, r1, r2)));
            if (off == 0) v = cplx(v.real(), 0.0);
            op.ab[size_t(col) * (kd + 1) + off] = v;
        }
    });
    return op;
}

DenseOperator quantize_semiclassical(const SymbolSpec3D& spec, int n, int N) {
    if (n < 1)
        throw PreconditionError("quantize_semiclassical: n must be >= 1 (use the classical route for n = 0)");
    DenseOperator op;
    op.N = N;
    op.dim = mode_count(N);
    op.r0 = 0;
    op.symbol_id = spec.name();
    op.mode = "semiclassical";
    op.sc_n = n;
    op.a.assign(op.dim * op.dim, cplx(0, 0));
    const int W = 2 * N + 1;

    std::map<std::pair<int, int>, std::vector<const FourierCoeff3D*>> by_mode;
    for (const auto& fc : spec.coeffs()) by_mode[{fc.m1, fc.m2}].push_back(&fc);

    parallel_for(std::ptrdiff_t(op.dim), [&](std::ptrdiff_t col) {
        int c1 = int(col) / W - N, c2 = int(col) % W - N;
        double pr = kTwoPi * std::hypot(double(c1), double(c2));
        double phi = (pr > 0) ? std::atan2(double(c2), double(c1)) : 0.0;
        double beta = std::atan2(pr, double(n));
        for (const auto& [m, list] : by_mode) {
            int r1 = c1 + m.first, r2 = c2 + m.second;
            if (std::abs(r1) > N || std::abs(r2) > N) continue;
            cplx acc(0, 0);
            for (const auto* fc : list) {
                double arg = fc->j * phi + fc->l * beta;
                acc += fc->c * cplx(std::cos(arg), std::sin(arg));
            }
            op.a[size_t(col) * op.dim + mode_index(N, r1, r2)] += acc;
        }
    });
    for (size_t j = 0; j < op.dim; ++j) {
        for (size_t i = 0; i < j; ++i) {
            cplx v = 0.5 * (op.at(i, j) + std::conj(op.at(j, i)));
            op.at(i, j) = v;
            op.at(j, i) = std::conj(v);
        }
        op.at(j, j) = cplx(op.at(j, j).real(), 0.0);
    }
    return op;
}

std::vector<BandedOperator> quantize_semiclassical_blocks(const SymbolSpec3D& spec, int n,
                                                          int N) {
    if (n < 1) throw PreconditionError("quantize_semiclassical_blocks: n must be >= 1");
    if (!spec.y_independent())
        throw PreconditionError(
            "quantize_semiclassical_blocks: symbol couples k2 (not y-independent)");
    int mq = spec.q_modes();
    const int W = 2 * N + 1;

    std::vector<BandedOperator> blocks(size_t(W));
    parallel_for(std::ptrdiff_t(W), [&](std::ptrdiff_t bi) {
        int k2 = int(bi) - N;
        BandedOperator blk;
        blk.N = N;
        blk.dim = size_t(W);
        blk.kd = mq;
        blk.r0 = 0;
        blk.mode = "semiclassical-block";
        blk.sc_n = n;
        blk.symbol_id = spec.name();
        blk.ab.assign(size_t(mq + 1) * blk.dim, cplx(0, 0));
        auto raw = [&](int r1, int c1) -> cplx {
            double pr = kTwoPi * std::hypot(double(c1), double(k2));
            double phi = (pr > 0) ? std::atan2(double(k2), double(c1)) : 0.0;
            double beta = std::atan2(pr, double(n));
            cplx acc(0, 0);
            for (const auto& fc : spec.coeffs()) {
                if (fc.m1 != r1 - c1 || fc.m2 != 0) continue;
                double arg = fc.j * phi + fc.l * beta;
                acc += fc.c * cplx(std::cos(arg), std::sin(arg));
            }
            return acc;
        };
        for (int col = 0; col < W; ++col) {
            int c1 = col - N;
            for (int off = 0; off <= mq; ++off) {
                int row = col + off;
                if (row >= W) break;
                int r1 = row - N;
                cplx v = 0.5 * (raw(r1, c1) + std::conj(raw(c1, r1)));
                if (off == 0) v = cplx(v.real(), 0.0);
                blk.ab[size_t(col) * (mq + 1) + off] = v;
            }
        }
        blocks[size_t(bi)] = std::move(blk);
    });
    return blocks;
}

// ----- matrix-free ------------------------------------------------------------------

SymbolOperator::SymbolOperator(const SymbolSpec& spec, int N, double r0)
    : N_(N), dim_(mode_count(N)) {
    auto modes = coupling_modes(spec);
    const int W = 2 * N + 1;
    for (auto [m1, m2] : modes) {
        Coupling c;
        c.m1 = m1;
        c.m2 = m2;
        c.mult.assign(dim_, cplx(0, 0));
        parallel_for(std::ptrdiff_t(dim_), [&](std::ptrdiff_t idx) {
            int k1 = int(idx) / W - N, k2 = int(idx) % W - N;
            double absk = std::hypot(double(k1), double(k2));
            double chi = (r0 > 0) ? cutoff_chi(absk / r0) : 1.0;
            if (chi == 0.0) return;
            double phi = std::atan2(double(k2), double(k1));
            c.mult[size_t(idx)] = chi * symbol_qcoeff(spec, m1, m2, phi);
        });
        couplings_.push_back(std::move(c));
    }
}

void SymbolOperator::apply_raw(const std::vector<cplx>& x, std::vector<cplx>& y) const {
    const int W = 2 * N_ + 1;
    y.assign(dim_, cplx(0, 0));
    for (const auto& c : couplings_) {
        parallel_for(std::ptrdiff_t(dim_), [&](std::ptrdiff_t idx) {
            int k1 = int(idx) / W - N_, k2 = int(idx) % W - N_;
            int s1 = k1 - c.m1, s2 = k2 - c.m2;
            if (std::abs(s1) > N_ || std::abs(s2) > N_) return;
            size_t src = mode_index(N_, s1, s2);
            y[size_t(idx)] += c.mult[src] * x[src];
        });
    }
}

void SymbolOperator::apply_adjoint(const std::vector<cplx>& x, std::vector<cplx>& y) const {
    const int W = 2 * N_ + 1;
    y.assign(dim_, cplx(0, 0));
    for (const auto& c : couplings_) {
        parallel_for(std::ptrdiff_t(dim_), [&](std::ptrdiff_t idx) {
            int k1 = int(idx) / W - N_, k2 = int(idx) % W - N_;
            int s1 = k1 + c.m1, s2 = k2 + c.m2;
            if (std::abs(s1) > N_ || std::abs(s2) > N_) return;
            y[size_t(idx)] += std::conj(c.mult[size_t(idx)]) * x[mode_index(N_, s1, s2)];
        });
    }
}

void SymbolOperator::apply_hermitian(const std::vector<cplx>& x, std::vector<cplx>& y) const {
    std::vector<cplx> t;
    apply_raw(x, y);
    apply_adjoint(x, t);
    parallel_for(std::ptrdiff_t(dim_), [&](std::ptrdiff_t i) {
        y[size_t(i)] = 0.5 * (y[size_t(i)] + t[size_t(i)]);
    });
}

}  // namespace specwave
