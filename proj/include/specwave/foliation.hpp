#pragma once

// Discretization of the boundary shell Z_0 = {g = 0}/R+ as graph charts over
// the torus, and the Morse-Smale bookkeeping for the projected foliation:
// singular points, closed cycles with Poincare multipliers, saddle-connection
// screening, and the attractor/repellor decomposition (K+, K-, Omega).

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "specwave/dynamics.hpp"
#include "specwave/symbol.hpp"

namespace specwave {

// A C^1 vector field on the unit torus chart, with an optional reference
// density for divergence computations.
class PlanarField {
  public:
    virtual ~PlanarField() = default;
    virtual Vec2 value(double x, double y) const = 0;
    virtual Mat2 jacobian(double x, double y) const;  // default: central differences
    virtual double density(double x, double y) const { return 1.0; }
    virtual std::string label() const { return "field"; }
};

// Field defined by explicit callables (used by tests and toy models).
class CallableField : public PlanarField {
  public:
    using ValueFn = std::function<Vec2(double, double)>;
    using JacFn = std::function<Mat2(double, double)>;
    CallableField(ValueFn v, JacFn j = nullptr, std::string label = "callable")
        : v_(std::move(v)), j_(std::move(j)), label_(std::move(label)) {}
    Vec2 value(double x, double y) const override { return v_(x, y); }
    Mat2 jacobian(double x, double y) const override {
        return j_ ? j_(x, y) : PlanarField::jacobian(x, y);
    }
    std::string label() const override { return label_; }

  private:
    ValueFn v_;
    JacFn j_;
    std::string label_;
};

// positive rescaling f*W of a field (classifications must be invariant)
class RescaledField : public PlanarField {
  public:
    RescaledField(const PlanarField& base, std::function<double(double, double)> factor)
        : base_(base), f_(std::move(factor)) {}
    Vec2 value(double x, double y) const override { return f_(x, y) * base_.value(x, y); }
    Mat2 jacobian(double x, double y) const override;
    double density(double x, double y) const override { return base_.density(x, y); }
    std::string label() const override { return base_.label() + "*f"; }

  private:
    const PlanarField& base_;
    std::function<double(double, double)> f_;
};

// ----- atlas -------------------------------------------------------------------

// One graph branch phi = Phi(x,y) of {g = 0}, with the projected field
// V = g_phi(-sin phi, cos phi) and density mu = 1/|g_phi|.
class AtlasBranch : public PlanarField {
  public:
    AtlasBranch(const SymbolSpec& spec, std::vector<double> phi_grid, int n, int index);

    // exact shell angle at (x,y): interpolated seed + Newton on g(x,y,.) = 0
    double phi_at(double x, double y) const;
    Theta theta_at(double x, double y) const { return {wrap_unit(x), wrap_unit(y), phi_at(x, y)}; }

    Vec2 value(double x, double y) const override;
    Mat2 jacobian(double x, double y) const override;  // analytic
    double density(double x, double y) const override;
    std::string label() const override { return "branch" + std::to_string(index_); }

    double radial(double x, double y) const;  // a(theta) on this branch
    PolarFrame frame(double x, double y) const;
    int grid_n() const { return n_; }
    int index() const { return index_; }
    double min_abs_gphi() const { return min_gphi_; }

  private:
    const SymbolSpec* spec_;
    std::vector<double> phi_grid_;  // (n+1) x (n+1), unwrapped, redundant wrap row/col
    int n_;
    int index_;
    double min_gphi_ = 0;
};

class FoliationAtlas {
  public:
    // builds branch charts on an n x n grid; throws if the shell is empty, the
    // branch count is inconsistent, or |g_phi| drops below gphi_min on the shell
    FoliationAtlas(const SymbolSpec& spec, int grid_n = 128, double gphi_min = 1e-3);

    const SymbolSpec& spec() const { return *spec_; }
    size_t branch_count() const { return branches_.size(); }
    const AtlasBranch& branch(size_t b) const { return *branches_[b]; }
    int grid_n() const { return n_; }

    // uniform random shell point (branch chosen uniformly)
    Theta sample_shell_point(SplitMix64& rng, size_t* branch_out = nullptr) const;

  private:
    const SymbolSpec* spec_;
    std::vector<std::unique_ptr<AtlasBranch>> branches_;
    int n_;
};

// ----- singular points ------------------------------------------------------------

enum class PointClass { Focus, Node, Saddle };
enum class Stability { WS, WU, None };

struct SingularPoint {
    double x = 0, y = 0;
    Mat2 jacobian;
    std::complex<double> eig1, eig2;
    PointClass cls = PointClass::Node;
    Stability stability = Stability::None;
    double residual = 0;  // |W| at the located zero
    bool newton_warning = false;
};

std::vector<SingularPoint> find_singular_points(const PlanarField& field, int grid_n = 128,
                                                double residual_tol = 1e-10);

// classify a located zero; throws NumericalError when the relative
// hyperbolicity margin is violated (degenerate spectrum: we refuse to guess)
SingularPoint classify_singular_point(const PlanarField& field, double x, double y,
                                      double margin = 1e-3);

// ----- cycles ---------------------------------------------------------------------

struct Section {
    Vec2 anchor;
    Vec2 tangent;          // unit vector along the section segment
    double halfwidth = 0.2;
};

struct Cycle {
    Section section;        // anchored at the fixed point
    double period = 0;      // rescaled time
    double multiplier = 0;  // det of the linearized Poincare map
    bool attracting = false;
    bool hyperbolic = true;  // false when |multiplier| is within margin of 1
    double residual = 0;     // |P(sigma*) - sigma*|
    std::vector<Vec2> samples;
    int branch = -1;
};

struct CycleSearchOptions {
    double s_max = 200.0;
    double burn_in = 60.0;
    double margin = 1e-3;       // hyperbolicity margin on |multiplier|-1
    double rel_tol = 1e-11;
    double dedupe_dist = 5e-3;
    int max_crossings = 400;
};

// hunt for cycles through the given sections (no return within s_max: skipped)
std::vector<Cycle> find_cycles(const PlanarField& field, const std::vector<Section>& sections,
                               const CycleSearchOptions& opt = {});

// converge seeds forward (attracting) and backward (repelling), then refine
std::vector<Cycle> auto_find_cycles(const PlanarField& field, const std::vector<Vec2>& seeds,
                                    const CycleSearchOptions& opt = {});

// ----- structure -------------------------------------------------------------------

struct Component {
    enum class Kind { Point, Cycle } kind = Kind::Cycle;
    int branch = -1;
    std::vector<Vec2> samples;    // point: single sample; cycle: polyline
    double rate = 0;              // trace (points) or multiplier (cycles)
    std::vector<Vec2> manifold;   // attached invariant manifold of a feeding saddle
};

struct BasinStats {
    int seeds = 0, captured_forward = 0, captured_backward = 0;
    double max_time_forward = 0, max_time_backward = 0;
};

struct SimpleStructure {
    std::vector<Component> k_plus, k_minus;
    BasinStats basin;
    bool verified = false;
    std::string note;

    double dist_to_kplus(int branch, const Vec2& p) const;
    double dist_to_kminus(int branch, const Vec2& p) const;
};

struct MorseSmaleReport {
    bool passed = false;
    bool non_hyperbolic_object = false;
    bool suspected_connection = false;
    std::vector<std::string> findings;
};

struct StructureOptions {
    int seed_grid = 8;            // per-branch seed lattice for cycle hunting
    int omega_seeds = 200;
    double capture_radius = 1e-3;
    double manifold_offset = 1e-6;
    double tol_sc = 1e-4;
    double s_max = 300.0;
    uint64_t rng_seed = 1;
};

MorseSmaleReport check_morse_smale(const PlanarField& field,
                                   const std::vector<SingularPoint>& points,
                                   const std::vector<Cycle>& cycles,
                                   const StructureOptions& opt = {});

// assemble (K+, K-) for one planar field (used per branch and by toy models)
SimpleStructure assemble_structure_for_field(const PlanarField& field, int branch_index,
                                             const StructureOptions& opt = {});

// full assembly across the atlas branches, with Omega-seed verification
SimpleStructure assemble_simple_structure(const FoliationAtlas& atlas,
                                          const StructureOptions& opt = {});

struct AttractorCheck {
    bool is_attractor = false;
    std::optional<Vec2> witness;  // invariance violation, if any
    double final_hausdorff = 0;
};

// forward invariance of U = {dist(., K) <= u_radius} on grid samples, plus
// contraction of the sampled set toward K
AttractorCheck verify_attractor(const PlanarField& field, const std::vector<Component>& K,
                                double u_radius, double s_max = 80.0, int grid_n = 96,
                                double contraction_tol = 1e-2);

// planar RK45 on the torus chart (positive rescaling of time allowed)
struct PlanarTrajectory {
    std::vector<double> s;
    std::vector<Vec2> pts;  // unwrapped coordinates
};
PlanarTrajectory planar_flow(const PlanarField& field, Vec2 p0, double s_max,
                             bool backward = false, double rel_tol = 1e-11,
                             double record_ds = 0.0);

}  // namespace specwave
