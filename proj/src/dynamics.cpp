#include "specwave/dynamics.hpp"

#include <cmath>

namespace specwave {

double radial_coefficient(const SymbolSpec& spec, const Theta& th) {
    double c = std::cos(th.phi), s = std::sin(th.phi);
    double gx = spec.eval(th.x, th.y, th.phi, 1, 0, 0);
    double gy = spec.eval(th.x, th.y, th.phi, 0, 1, 0);
    return -(c * gx + s * gy);
}

std::array<double, 3> shell_field(const SymbolSpec& spec, const Theta& th) {
    double c = std::cos(th.phi), s = std::sin(th.phi);
    double gx = spec.eval(th.x, th.y, th.phi, 1, 0, 0);
    double gy = spec.eval(th.x, th.y, th.phi, 0, 1, 0);
    double gphi = spec.eval(th.x, th.y, th.phi, 0, 0, 1);
    return {-s * gphi, c * gphi, s * gx - c * gy};
}

PolarFrame polar_decompose(const SymbolSpec& spec, const Theta& th, double shell_tol,
                           double critical_tol) {
    double g = spec.eval(th.x, th.y, th.phi);
    if (std::fabs(g) > shell_tol)
        throw PreconditionError("polar_decompose: point is off the energy shell");
    double gx = spec.eval(th.x, th.y, th.phi, 1, 0, 0);
    double gy = spec.eval(th.x, th.y, th.phi, 0, 1, 0);
    double gphi = spec.eval(th.x, th.y, th.phi, 0, 0, 1);
    if (gx * gx + gy * gy + gphi * gphi < critical_tol * critical_tol)
        throw PreconditionError("polar_decompose: critical point of the symbol on the shell");
    if (std::fabs(gphi) < 1e-6)
        throw PreconditionError("polar_decompose: graph chart breaks down (d_phi g ~ 0)");

    double c = std::cos(th.phi), s = std::sin(th.phi);
    PolarFrame f;
    f.theta = th;
    f.a = -(c * gx + s * gy);
    f.w_chart = {-s * gphi, c * gphi};
    f.w_phi = s * gx - c * gy;
    f.density = 1.0 / std::fabs(gphi);

    // second derivatives for the analytic chart divergence
    double gxx = spec.eval(th.x, th.y, th.phi, 2, 0, 0);
    double gxy = spec.eval(th.x, th.y, th.phi, 1, 1, 0);
    double gyy = spec.eval(th.x, th.y, th.phi, 0, 2, 0);
    double gxp = spec.eval(th.x, th.y, th.phi, 1, 0, 1);
    double gyp = spec.eval(th.x, th.y, th.phi, 0, 1, 1);
    double gpp = spec.eval(th.x, th.y, th.phi, 0, 0, 2);

    // graph slope Phi_x = -g_x/g_phi, Phi_y = -g_y/g_phi
    double Phix = -gx / gphi, Phiy = -gy / gphi;
    // total derivatives of the chart components V = (W_x, W_y)
    double dWx_dx = -s * (gxp + gpp * Phix) + (-c) * gphi * Phix;
    double dWy_dy = c * (gyp + gpp * Phiy) + (-s) * gphi * Phiy;
    // total derivatives of g_phi along the chart
    double dgphi_dx = gxp + gpp * Phix;
    double dgphi_dy = gyp + gpp * Phiy;
    (void)gxx;
    (void)gxy;
    (void)gyy;

    // div_mu V = dV1/dx + dV2/dy - (V . grad g_phi)/g_phi   (mu = 1/|g_phi|)
    f.div_mu_w = dWx_dx + dWy_dy -
                 (f.w_chart.x * dgphi_dx + f.w_chart.y * dgphi_dy) / gphi;
    return f;
}

// ----- Dormand-Prince 5(4) ---------------------------------------------------

namespace {

struct Dopri5 {
    static constexpr int kStages = 7;
    // Butcher tableau
    static constexpr double A[7][6] = {
        {},
        {1.0 / 5},
        {3.0 / 40, 9.0 / 40},
        {44.0 / 45, -56.0 / 15, 32.0 / 9},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
        {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
    static constexpr double B5[7] = {35.0 / 384,      0.0,           500.0 / 1113, 125.0 / 192,
                                     -2187.0 / 6784, 11.0 / 84,     0.0};
    static constexpr double B4[7] = {5179.0 / 57600,  0.0,           7571.0 / 16695, 393.0 / 640,
                                     -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
};
constexpr double Dopri5::A[7][6];
constexpr double Dopri5::B5[7];
constexpr double Dopri5::B4[7];

template <int N, class RHS>
struct AdaptiveRK {
    RHS rhs;
    double rel_tol, abs_tol;
    double h;
    double safety = 0.9, min_scale = 0.2, max_scale = 5.0;
    double prev_err = 1.0;

    // one adaptive step from (s,u); returns accepted step size or throws on underflow
    double step(double s, std::array<double, N>& u) {
        std::array<std::array<double, N>, Dopri5::kStages> k;
        for (int attempt = 0; attempt < 60; ++attempt) {
            for (int st = 0; st < Dopri5::kStages; ++st) {
                std::array<double, N> arg = u;
                for (int j = 0; j < st; ++j)
                    for (int c = 0; c < N; ++c) arg[c] += h * Dopri5::A[st][j] * k[j][c];
                k[st] = rhs(s, arg);
            }
            std::array<double, N> u5 = u, u4 = u;
            for (int st = 0; st < Dopri5::kStages; ++st)
                for (int c = 0; c < N; ++c) {
                    u5[c] += h * Dopri5::B5[st] * k[st][c];
                    u4[c] += h * Dopri5::B4[st] * k[st][c];
                }
            double err = 0;
            for (int c = 0; c < N; ++c) {
                double sc = abs_tol + rel_tol * std::max(std::fabs(u[c]), std::fabs(u5[c]));
                double e = (u5[c] - u4[c]) / sc;
                err += e * e;
            }
            err = std::sqrt(err / N);
            if (err <= 1.0 || h <= 1e-14) {
                double done = h;
                // PI controller
                double scale = (err > 1e-10)
                                   ? safety * std::pow(err, -0.7 / 5.0) * std::pow(prev_err, 0.4 / 5.0)
                                   : max_scale;
                scale = std::clamp(scale, min_scale, max_scale);
                prev_err = std::max(err, 1e-10);
                u = u5;
                h *= scale;
                if (h <= 1e-14)
                    throw NumericalError("adaptive RK: step size underflow");
                return done;
            }
            double scale = std::clamp(safety * std::pow(err, -0.2), min_scale, 1.0);
            h *= scale;
        }
        throw NumericalError("adaptive RK: no acceptable step found");
    }
};

}  // namespace

Trajectory flow(const SymbolSpec& spec, const PhasePoint& z0, const FlowOptions& opt) {
    double dir = opt.backward ? -1.0 : 1.0;
    // state: x, y, phi, log rho, t
    auto rhs = [&](double, const std::array<double, 5>& u) {
        Theta th{u[0], u[1], u[2]};
        auto w = shell_field(spec, th);
        double a = radial_coefficient(spec, th);
        return std::array<double, 5>{dir * w[0], dir * w[1], dir * w[2], dir * a,
                                     dir * std::exp(u[3])};
    };
    AdaptiveRK<5, decltype(rhs)> rk{rhs, opt.rel_tol, opt.abs_tol, opt.initial_step};

    std::array<double, 5> u{z0.x, z0.y, z0.phi(), std::log(z0.rho()), 0.0};
    double h0 = spec.eval(u[0], u[1], u[2]);

    Trajectory traj;
    auto record = [&](double s) {
        double res = spec.eval(u[0], u[1], u[2]) - h0;
        traj.max_energy_drift = std::max(traj.max_energy_drift, std::fabs(res));
        traj.samples.push_back({dir * s, u[4], wrap_unit(u[0]), wrap_unit(u[1]),
                                wrap_angle(u[2]), u[3], res});
    };

    double s = 0.0, last_recorded = 0.0, capture_since = -1.0;
    record(0.0);
    double lo = std::log(opt.rho_min), hi = std::log(opt.rho_max);

    for (size_t n = 0; n < opt.max_steps; ++n) {
        if (s >= opt.s_max) {
            traj.termination = Termination::Horizon;
            return traj;
        }
        rk.h = std::min(rk.h, opt.s_max - s);
        double taken;
        try {
            taken = rk.step(s, u);
        } catch (const NumericalError&) {
            traj.termination = Termination::StepUnderflow;
            return traj;
        }
        s += taken;
        if (opt.record_ds <= 0.0 || s - last_recorded >= opt.record_ds || s >= opt.s_max) {
            record(s);
            last_recorded = s;
        } else {
            double res = spec.eval(u[0], u[1], u[2]) - h0;
            traj.max_energy_drift = std::max(traj.max_energy_drift, std::fabs(res));
        }
        if (u[3] < lo) {
            if (traj.samples.back().s != dir * s) record(s);
            traj.termination = Termination::Blowdown;
            return traj;
        }
        if (u[3] > hi) {
            if (traj.samples.back().s != dir * s) record(s);
            traj.termination = Termination::Blowup;
            return traj;
        }
        if (opt.capture) {
            const auto& cap = *opt.capture;
            Theta th{wrap_unit(u[0]), wrap_unit(u[1]), wrap_angle(u[2])};
            double d = 1e300;
            if (cap.distance) {
                d = cap.distance(th);
            } else {
                for (const auto& tgt : cap.targets) {
                    double dd = std::max(torus_dist(th.x, th.y, tgt.x, tgt.y),
                                         angle_dist(th.phi, tgt.phi));
                    d = std::min(d, dd);
                }
            }
            if (d <= cap.radius) {
                if (capture_since < 0) capture_since = s;
                if (s - capture_since >= cap.dwell) {
                    if (traj.samples.back().s != dir * s) record(s);
                    traj.termination = Termination::ConvergedToLimitSet;
                    return traj;
                }
            } else {
                capture_since = -1.0;
            }
        }
    }
    traj.termination = Termination::Horizon;
    return traj;
}

std::vector<std::array<double, 5>> flow_physical(const SymbolSpec& spec, const PhasePoint& z0,
                                                 double t_max, double rel_tol) {
    auto rhs = [&](double, const std::array<double, 4>& u) {
        PhasePoint z(u[0], u[1], u[2], u[3]);
        auto f = spec.hamiltonian_field(z);
        return std::array<double, 4>{f[0], f[1], f[2], f[3]};
    };
    AdaptiveRK<4, decltype(rhs)> rk{rhs, rel_tol, 1e-13, 1e-4};
    std::array<double, 4> u{z0.x, z0.y, z0.xi, z0.eta};
    std::vector<std::array<double, 5>> out;
    double t = 0;
    out.push_back({t, u[0], u[1], u[2], u[3]});
    while (t < t_max) {
        rk.h = std::min(rk.h, t_max - t);
        t += rk.step(t, u);
        out.push_back({t, u[0], u[1], u[2], u[3]});
        if (out.size() > 2000000) throw NumericalError("flow_physical: too many steps");
    }
    return out;
}

double divergence(const FieldSampler& w, const DensitySampler& mu, double x, double y,
                  double step) {
    auto d4 = [step](auto f) {
        return (-f(2.0) + 8.0 * f(1.0) - 8.0 * f(-1.0) + f(-2.0)) / (12.0 * step);
    };
    double dw1dx = d4([&](double k) { return w(x + k * step, y).x; });
    double dw2dy = d4([&](double k) { return w(x, y + k * step).y; });
    double dmudx = d4([&](double k) { return mu(x + k * step, y); });
    double dmudy = d4([&](double k) { return mu(x, y + k * step); });
    Vec2 v = w(x, y);
    double m = mu(x, y);
    if (m == 0.0) throw PreconditionError("divergence: density vanishes");
    return dw1dx + dw2dy + (v.x * dmudx + v.y * dmudy) / m;
}

Mat2 lyapunov_2x2(const Mat2& J, const Mat2& Q) {
    // unknowns (p11, p12, p22); J^T P + P J = -Q
    double a = J.a, b = J.b, c = J.c, d = J.d;
    double A[3][3] = {{2 * a, 2 * c, 0}, {b, a + d, c}, {0, 2 * b, 2 * d}};
    double rhs[3] = {-Q.a, -Q.b, -Q.d};
    // Cramer
    double det = A[0][0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1]) -
                 A[0][1] * (A[1][0] * A[2][2] - A[1][2] * A[2][0]) +
                 A[0][2] * (A[1][0] * A[2][1] - A[1][1] * A[2][0]);
    if (std::fabs(det) < 1e-14)
        throw NumericalError("lyapunov_2x2: singular system (eigenvalue sum ~ 0)");
    auto solve_col = [&](int col) {
        double M[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) M[i][j] = (j == col) ? rhs[i] : A[i][j];
        return (M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
                M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
                M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0])) /
               det;
    };
    double p11 = solve_col(0), p12 = solve_col(1), p22 = solve_col(2);
    return Mat2{p11, p12, p12, p22};
}

}  // namespace specwave
