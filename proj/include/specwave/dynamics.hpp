#pragma once

// Degree-0 Hamiltonian flow in polar form.  With p = rho e(phi) the field
// splits as X_h = a(theta) d_rho + (1/rho) W(theta), theta = (q,phi), where
//   a    = -(cos(phi) g_x + sin(phi) g_y)
//   W    = g_phi (-sin(phi) d_x + cos(phi) d_y) + (sin(phi) g_x - cos(phi) g_y) d_phi
// Both a and W depend on theta only, so trajectories integrate in rescaled
// time ds = dt/rho as dtheta/ds = W, d(log rho)/ds = a, with t = int rho ds.

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "specwave/symbol.hpp"

namespace specwave {

struct Theta {
    double x = 0, y = 0, phi = 0;  // point of the unit-covector shell chart
};

// radial coefficient and shell-tangent field at theta, with the divergence of
// the chart-projected field taken against the induced density mu = 1/|g_phi|
struct PolarFrame {
    Theta theta;
    double a = 0;          // d rho (X_h) at rho = 1
    Vec2 w_chart;          // (W_x, W_y): tangent representation in the graph chart
    double w_phi = 0;      // phi-component of W in ambient (x,y,phi) coordinates
    double div_mu_w = 0;   // divergence of the chart field w.r.t. mu
    double density = 0;    // mu weight 1/|g_phi| at theta
};

// a(theta), degree-0 radial speed
double radial_coefficient(const SymbolSpec& spec, const Theta& th);
// ambient components (W_x, W_y, W_phi) of the projected field
std::array<double, 3> shell_field(const SymbolSpec& spec, const Theta& th);

// Analytic polar decomposition at a shell point (|g| <= shell_tol required,
// |dg| above the critical-point threshold).
PolarFrame polar_decompose(const SymbolSpec& spec, const Theta& th,
                           double shell_tol = 1e-8, double critical_tol = 1e-8);

enum class Termination { Horizon, Blowdown, Blowup, ConvergedToLimitSet, StepUnderflow };

struct TrajectorySample {
    double s = 0;        // rescaled time
    double t = 0;        // physical time
    double x = 0, y = 0, phi = 0;
    double log_rho = 0;
    double h_residual = 0;  // h(state) - h(state0)
};

struct Trajectory {
    std::vector<TrajectorySample> samples;
    Termination termination = Termination::Horizon;
    double max_energy_drift = 0;
    const TrajectorySample& back() const { return samples.back(); }
};

struct CaptureSet {
    // terminate "converged to limit set" when the state stays within `radius`
    // of one of the targets for a dwell of rescaled time `dwell`
    std::vector<Theta> targets;
    double radius = 1e-3;
    double dwell = 2.0;
    std::function<double(const Theta&)> distance;  // optional custom metric
};

struct FlowOptions {
    double s_max = 50.0;
    double rel_tol = 1e-9;
    double abs_tol = 1e-11;
    double rho_min = 1e-8, rho_max = 1e8;
    double initial_step = 1e-3;
    double record_ds = 0.0;        // 0 = record every accepted step
    bool backward = false;
    std::optional<CaptureSet> capture;
    size_t max_steps = 2000000;
};

// Flow from a phase point (integrated in (q, phi, log rho) with rescaled time).
Trajectory flow(const SymbolSpec& spec, const PhasePoint& z0, const FlowOptions& opt = {});

// Reference integrator in plain cotangent coordinates (q,p), physical time.
// Kept as an independent cross-check of the rescaled-time route.
std::vector<std::array<double, 5>> flow_physical(const SymbolSpec& spec, const PhasePoint& z0,
                                                 double t_max, double rel_tol = 1e-10);

// ----- divergence utilities --------------------------------------------------
// div_mu(W) = L_W(mu)/mu for sampled planar fields on the torus chart,
// 4th-order central differences.

using FieldSampler = std::function<Vec2(double, double)>;
using DensitySampler = std::function<double(double, double)>;

double divergence(const FieldSampler& w, const DensitySampler& mu, double x, double y,
                  double step = 1e-3);

// solve the 2x2 Lyapunov equation J^T P + P J = -Q for symmetric P
Mat2 lyapunov_2x2(const Mat2& J, const Mat2& Q);

}  // namespace specwave
