#pragma once

// Dense bounded-variable primal simplex for small certification LPs:
//   maximize c.x   s.t.   A x <= b,   lo <= x <= up
// with b > 0 so that the all-slack basis (x at lower bounds) is feasible.
// The escape-function synthesis shifts its variables to arrange exactly that.

#include <vector>

namespace specwave {

struct LpProblem {
    size_t nvars = 0;
    std::vector<double> c, lo, up;          // size nvars
    std::vector<std::vector<double>> rows;  // each size nvars
    std::vector<double> rhs;                // b, must be > 0 after shifting
};

enum class LpStatus { Optimal, Unbounded, IterLimit, Singular };

struct LpResult {
    LpStatus status = LpStatus::IterLimit;
    std::vector<double> x;
    double objective = 0;
    int iterations = 0;
};

LpResult solve_lp(const LpProblem& p, int max_iter = 200000);

}  // namespace specwave
