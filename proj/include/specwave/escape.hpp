#pragma once

// Synthesis and certification of degree-1 escape functions k = rho * g(theta)
// with {h, k} = a g + W g >= delta > 0 on the shell.  Two construction routes:
// a linear program over a trigonometric basis on the Z_0 charts, and the
// constructive route that builds k from local data near the attractor and
// repellor and propagates it along the flow.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "specwave/foliation.hpp"

namespace specwave {

// real trigonometric polynomial on the torus, |m|inf <= M
class TrigPoly {
  public:
    TrigPoly() = default;
    explicit TrigPoly(int M);
    static size_t basis_size(int M) { return size_t(2 * M + 1) * size_t(2 * M + 1); }

    double value(double x, double y) const;
    Vec2 grad(double x, double y) const;
    // basis function k and its gradient (shared by the LP assembly)
    static double basis_value(int M, size_t k, double x, double y);
    static Vec2 basis_grad(int M, size_t k, double x, double y);

    int order() const { return M_; }
    std::vector<double>& coefficients() { return coef_; }
    const std::vector<double>& coefficients() const { return coef_; }

    // projection of grid samples (plain DFT; exact for band-limited data)
    static TrigPoly fit(const std::vector<double>& samples, int grid_n, int M);

  private:
    int M_ = 0;
    std::vector<double> coef_;
};

// the dynamical data of one chart: field W, radial coefficient a, density mu
struct BranchDynamics {
    const PlanarField* field = nullptr;
    std::function<double(double, double)> radial;  // a(theta)
};

BranchDynamics branch_dynamics(const AtlasBranch& branch);

struct EscapeFunction {
    std::vector<TrigPoly> g;      // one angular part per branch
    double delta = 0;             // certified margin (min grid bracket)
    int cert_grid = 0;
    std::string method;           // "lp" or "flow"

    double value(size_t branch, double x, double y) const { return g[branch].value(x, y); }
    // {h, rho g} = a g + W g on branch `b`
    double bracket(const BranchDynamics& dyn, size_t b, double x, double y) const;

    std::string to_json() const;
};

// phase-space view of k = rho * g_b(q) near branch b (constant in phi), for
// cross-checking the chart bracket against the direct 4D Poisson bracket
class EscapePhaseFn {
  public:
    EscapePhaseFn(const EscapeFunction& k, const FoliationAtlas& atlas, size_t branch)
        : k_(&k), atlas_(&atlas), branch_(branch) {}
    double operator()(const PhasePoint& z) const;
    void gradient(const PhasePoint& z, Vec2& dq, Vec2& dp) const;

  private:
    const EscapeFunction* k_;
    const FoliationAtlas* atlas_;
    size_t branch_;
};

// ----- certification -----------------------------------------------------------

struct BracketMin {
    double min_value = 0;
    size_t branch = 0;
    double x = 0, y = 0;
};

// min over an n x n grid per branch of a g + W g (serial reference and OpenMP
// twin; both fill a value table elementwise, so results are bitwise equal)
BracketMin bracket_grid_min_serial(const EscapeFunction& k,
                                   const std::vector<BranchDynamics>& dyn, int grid_n);
BracketMin bracket_grid_min_omp(const EscapeFunction& k, const std::vector<BranchDynamics>& dyn,
                                int grid_n);
BracketMin bracket_grid_min(const EscapeFunction& k, const std::vector<BranchDynamics>& dyn,
                            int grid_n);

// re-certify on a refined grid; updates k.delta downward if needed; throws
// NumericalError if the margin is not positive
double certify(EscapeFunction& k, const FoliationAtlas& atlas, int refinement = 4);

// ----- LP synthesis --------------------------------------------------------------

struct LpSynthesisOptions {
    int basis_order = 8;      // |m|inf bound of the candidate g
    int grid_n = 128;         // certification / constraint grid per branch
    int seed_grid = 16;       // initial lazy constraint lattice
    double sup_bound = 1.0;   // |g| <= bound on the grid
    double min_margin = 1e-6; // below this the LP outcome counts as infeasible
    int max_rounds = 40;
};

struct LpSynthesis {
    bool feasible = false;
    double lp_delta = 0;        // optimum of the final LP
    double certified_delta = 0; // min bracket over the full grid
    int rounds = 0;
    std::optional<EscapeFunction> fn;
};

LpSynthesis synthesize_lp(const FoliationAtlas& atlas, const LpSynthesisOptions& opt = {});
// single-chart variant used by toy models and tests
LpSynthesis synthesize_lp_for(const std::vector<BranchDynamics>& dyn,
                              const LpSynthesisOptions& opt = {});

// ----- constructive route ---------------------------------------------------------

struct FlowConstructionOptions {
    double gamma = 1.0;          // exponent scale of the local quadratic profile
    double patch_radius = 0.08;  // initial K+/K- tube radius (shrunk if needed)
    double enter_fraction = 0.7; // capture depth inside the patch
    double s_max = 400.0;
    int sample_grid = 96;        // per-branch sampling of the blended k
    int fit_order = 12;          // Fourier order of the returned angular part
    int cert_grid = 128;
};

// diagnostic record of the construction (profiles sampled on the grid)
struct FlowConstruction {
    double c_plus = 0, c_minus = 0;  // certified divergence margins on the patches
    double m0 = 0;                   // min of the positive degree-0 blend m
    double C = 0;                    // 1.1 * max |l+ - l-| over the crossing anchors
    double blend_length = 0;         // 4 C / m0
    std::vector<std::vector<double>> khat;  // per branch, sampled blended k at rho=1
};

EscapeFunction construct_flow_method(const FoliationAtlas& atlas, const SimpleStructure& st,
                                     const FlowConstructionOptions& opt = {},
                                     FlowConstruction* diag = nullptr);

// ----- radial source diagnostics ----------------------------------------------------

struct RadialSourceReport {
    struct SeedResult {
        double exponent = 0;    // fitted growth rate of log|k| backward in time
        double r2 = 0;
        double final_dist = 0;  // distance to K- at the end of the backward flow
        bool monotone = true;
    };
    std::vector<SeedResult> seeds;
    double min_exponent = 0;
    double min_prefactor = 0;  // observed min of |k| e^{-theta |t|}
    bool all_monotone = true;
};

RadialSourceReport radial_source_check(const EscapeFunction& k, const FoliationAtlas& atlas,
                                       const SimpleStructure& st, int n_seeds = 20,
                                       double t_back = 12.0, uint64_t rng_seed = 7);

}  // namespace specwave
