#include "specwave/lp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "specwave/util.hpp"

namespace specwave {

// Full-tableau bounded-variable simplex.  Columns 0..n-1 are structural,
// n..n+m-1 slacks.  Nonbasic variables sit at one of their bounds; the slack
// start is feasible because rhs > 0 and structurals start at lo.

LpResult solve_lp(const LpProblem& p, int max_iter) {
    const size_t n = p.nvars, m = p.rows.size();
    if (p.c.size() != n || p.lo.size() != n || p.up.size() != n || p.rhs.size() != m)
        throw PreconditionError("solve_lp: inconsistent problem dimensions");
    const size_t N = n + m;
    const double tol = 1e-9;

    // tableau T: m rows x N cols, plus rhs column; starts as [A | I]
    std::vector<double> T(m * N, 0.0);
    std::vector<double> beta(m);  // current values of basic variables
    std::vector<double> cost(N, 0.0);
    std::vector<double> lo(N), up(N);
    for (size_t j = 0; j < n; ++j) {
        cost[j] = p.c[j];
        lo[j] = p.lo[j];
        up[j] = p.up[j];
    }
    for (size_t j = n; j < N; ++j) {
        lo[j] = 0.0;
        up[j] = std::numeric_limits<double>::infinity();
    }
    for (size_t i = 0; i < m; ++i) {
        if (!(p.rhs[i] > 0)) throw PreconditionError("solve_lp: rhs must be positive");
        for (size_t j = 0; j < n; ++j) T[i * N + j] = p.rows[i][j];
        T[i * N + n + i] = 1.0;
    }

    std::vector<int> basis(m);
    std::vector<char> at_upper(N, 0);  // nonbasic position flag
    std::vector<char> is_basic(N, 0);
    for (size_t i = 0; i < m; ++i) {
        basis[i] = int(n + i);
        is_basic[n + i] = 1;
    }
    // beta = b - A x_N with structurals at lower bound
    for (size_t i = 0; i < m; ++i) {
        double v = p.rhs[i];
        for (size_t j = 0; j < n; ++j) v -= T[i * N + j] * lo[j];
        beta[i] = v;
        if (v < -tol) throw PreconditionError("solve_lp: slack start infeasible");
    }

    auto nonbasic_value = [&](size_t j) { return at_upper[j] ? up[j] : lo[j]; };

    LpResult res;
    for (int iter = 0; iter < max_iter; ++iter) {
        // reduced costs r_j = c_j - c_B' T_j  (Dantzig; Bland after stalls)
        bool bland = iter > int(0.8 * max_iter);
        int enter = -1;
        double best = tol;
        int direction = 0;  // +1 increase from lower, -1 decrease from upper
        for (size_t j = 0; j < N; ++j) {
            if (is_basic[j]) continue;
            double r = cost[j];
            for (size_t i = 0; i < m; ++i) {
                double cb = cost[size_t(basis[i])];
                if (cb != 0.0) r -= cb * T[i * N + j];
            }
            if (!at_upper[j] && r > (bland ? tol : best)) {
                enter = int(j);
                direction = +1;
                if (bland) break;
                best = r;
            } else if (at_upper[j] && r < -(bland ? tol : best)) {
                enter = int(j);
                direction = -1;
                if (bland) break;
                best = std::fabs(r);
            }
        }
        if (enter < 0) {  // optimal
            res.status = LpStatus::Optimal;
            res.iterations = iter;
            break;
        }

        // ratio test: entering moves by t >= 0 in `direction`
        double t_max = up[enter] - lo[enter];  // bound flip distance
        int leave = -1;
        char leave_to_upper = 0;
        for (size_t i = 0; i < m; ++i) {
            double a = direction * T[i * N + enter];
            if (std::fabs(a) < 1e-11) continue;
            int bj = basis[i];
            double t;
            char to_upper;
            if (a > 0) {  // basic decreases toward its lower bound
                t = (beta[i] - lo[bj]) / a;
                to_upper = 0;
            } else {  // basic increases toward its upper bound
                if (up[bj] == std::numeric_limits<double>::infinity()) continue;
                t = (beta[i] - up[bj]) / a;
                to_upper = 1;
            }
            if (t < t_max) {
                t_max = t;
                leave = int(i);
                leave_to_upper = to_upper;
            }
        }
        if (t_max == std::numeric_limits<double>::infinity() ||
            (leave < 0 && up[enter] == std::numeric_limits<double>::infinity())) {
            res.status = LpStatus::Unbounded;
            res.iterations = iter;
            break;
        }
        if (t_max < 0) t_max = 0;

        if (leave < 0) {
            // bound flip: entering runs to its other bound, basis unchanged
            for (size_t i = 0; i < m; ++i)
                beta[i] -= direction * t_max * T[i * N + enter];
            at_upper[enter] = !at_upper[enter];
            continue;
        }

        // pivot: entering replaces basis[leave]
        double piv = T[size_t(leave) * N + enter];
        if (std::fabs(piv) < 1e-12) {
            res.status = LpStatus::Singular;
            res.iterations = iter;
            break;
        }
        int out = basis[leave];
        // update basic values
        for (size_t i = 0; i < m; ++i)
            beta[i] -= direction * t_max * T[i * N + enter];
        double enter_val = nonbasic_value(enter) + direction * t_max;

        double inv = 1.0 / piv;
        for (size_t j = 0; j < N; ++j) T[size_t(leave) * N + j] *= inv;
        for (size_t i = 0; i < m; ++i) {
            if (int(i) == leave) continue;
            double f = T[i * N + enter];
            if (f == 0.0) continue;
            for (size_t j = 0; j < N; ++j) T[i * N + j] -= f * T[size_t(leave) * N + j];
        }
        basis[leave] = enter;
        is_basic[enter] = 1;
        is_basic[out] = 0;
        at_upper[out] = leave_to_upper;
        beta[leave] = enter_val;
    }
    if (res.status == LpStatus::IterLimit) res.iterations = max_iter;

    // read off the solution
    res.x.assign(n, 0.0);
    for (size_t j = 0; j < n; ++j)
        if (!is_basic[j]) res.x[j] = nonbasic_value(j);
    for (size_t i = 0; i < m; ++i)
        if (size_t(basis[i]) < n) res.x[size_t(basis[i])] = beta[i];
    res.objective = 0;
    for (size_t j = 0; j < n; ++j) res.objective += p.c[j] * res.x[j];
    return res;
}

}  // namespace specwave
