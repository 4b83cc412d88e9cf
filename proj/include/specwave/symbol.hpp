#pragma once

// Smooth positively homogeneous symbols of degree 0 on T*(T^2) \ 0, stored as
// finite Fourier tables g(q,phi) with h(q,p) = g(q, angle(p)).  Evaluation and
// derivatives are exact (term-wise) for the stored table.

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "specwave/util.hpp"

namespace specwave {

using cplx = std::complex<double>;

// A point of T*(T^2) minus the zero section.
struct PhasePoint {
    double x = 0, y = 0;   // q, reduced mod 1
    double xi = 0, eta = 0;  // p, nonzero

    PhasePoint() = default;
    PhasePoint(double x_, double y_, double xi_, double eta_)
        : x(wrap_unit(x_)), y(wrap_unit(y_)), xi(xi_), eta(eta_) {
        if (rho() <= 0.0 || !std::isfinite(rho()))
            throw PreconditionError("PhasePoint: covector must be nonzero and finite");
    }
    double rho() const { return std::hypot(xi, eta); }
    double phi() const { return std::atan2(eta, xi); }
};

struct FourierCoeff {
    int m1 = 0, m2 = 0, j = 0;
    cplx c;
};

// Fourier table on T^2_q x S^1_phi:
//   g(q,phi) = sum c[m1,m2,j] e^{2pi i (m1 x + m2 y)} e^{i j phi}
// Real-valuedness (c[-m,-j] = conj c[m,j]) is enforced at construction.
class SymbolSpec {
  public:
    SymbolSpec() = default;
    explicit SymbolSpec(std::vector<FourierCoeff> coeffs, std::string name = "custom");

    // partial derivative d^{ax+ay+aj} g / dx^ax dy^ay dphi^aj, exact
    double eval(double x, double y, double phi, int ax = 0, int ay = 0, int aj = 0) const;

    double operator()(const PhasePoint& z) const { return eval(z.x, z.y, z.phi()); }

    // (dh/dq, dh/dp) at z, chain rule through angle(p)
    void gradient(const PhasePoint& z, Vec2& dq, Vec2& dp) const;

    // X_h = (dh/dp, -dh/dq) as (qdot, pdot)
    std::array<double, 4> hamiltonian_field(const PhasePoint& z) const;

    const std::vector<FourierCoeff>& coeffs() const { return coeffs_; }
    int q_modes() const { return mq_; }
    int phi_modes() const { return mphi_; }
    const std::string& name() const { return name_; }

    std::string to_json() const;
    static SymbolSpec from_json(const std::string& text);

    // built-in families
    static SymbolSpec constant(double value);
    static SymbolSpec translation();                  // g = sin(phi)
    static SymbolSpec tilted_translation(double phi0);  // g = sin(phi - phi0)
    static SymbolSpec default_model(double alpha = 0.3, double beta = 0.1);
    static SymbolSpec family(const std::string& name, double alpha, double beta);

  private:
    std::vector<FourierCoeff> coeffs_;
    int mq_ = 0, mphi_ = 0;
    std::string name_ = "empty";
};

// Positively homogeneous function of integer degree d:
//   f(q,p) = |p|^d * G(q, angle(p))
// Degree-1 instances serve as candidate escape functions.
class HomogeneousFn {
  public:
    HomogeneousFn() = default;
    HomogeneousFn(SymbolSpec angular, int degree) : g_(std::move(angular)), deg_(degree) {}

    double operator()(const PhasePoint& z) const {
        return std::pow(z.rho(), deg_) * g_(z);
    }
    void gradient(const PhasePoint& z, Vec2& dq, Vec2& dp) const;

    const SymbolSpec& angular_part() const { return g_; }
    int degree() const { return deg_; }

  private:
    SymbolSpec g_;
    int deg_ = 0;
};

// {a, b} = d_p a . d_q b - d_q a . d_p b, so that {h, f} = X_h f.
template <class FA, class FB>
double poisson_bracket(const FA& a, const FB& b, const PhasePoint& z) {
    Vec2 aq, ap, bq, bp;
    a.gradient(z, aq, ap);
    b.gradient(z, bq, bp);
    return ap.dot(bq) - aq.dot(bp);
}

// ---------------------------------------------------------------------------
// S^1-invariant 3D extension: h(q,p,tau) on T*(T^2 x S^1) \ 0, stored as a
// Fourier table in (q, phi, beta) where p = |p| e(phi) and
// beta = atan2(|p|, tau) in [0, pi] is the polar angle of the fiber direction:
//   h = sum c[m1,m2,j,l] e^{2pi i m.q} e^{i j phi} e^{i l beta}
// Degree-0 homogeneity in (p,tau) holds by construction.

struct FourierCoeff3D {
    int m1 = 0, m2 = 0, j = 0, l = 0;
    cplx c;
};

class SymbolSpec3D {
  public:
    SymbolSpec3D() = default;
    explicit SymbolSpec3D(std::vector<FourierCoeff3D> coeffs, std::string name = "custom3d");

    double eval(double x, double y, double phi, double beta) const;

    // h_n(q,p) := h(q,p,n)
    double h_n(double x, double y, double pxi, double peta, double n) const;
    // h_0 = h(q,p,0), h_1 = h(q,p,1)
    double h0(double x, double y, double pxi, double peta) const {
        return h_n(x, y, pxi, peta, 0.0);
    }
    double h1(double x, double y, double pxi, double peta) const {
        return h_n(x, y, pxi, peta, 1.0);
    }

    // sampled ranges: I0 = range of h0, Iinf = range of h1 (computed, never cached)
    std::pair<double, double> range_h0(int nq = 64, int nang = 128) const;
    std::pair<double, double> range_h1(int nq = 64, int nang = 64, int nrad = 400,
                                       double rmax = 200.0) const;

    bool y_independent() const;  // no m2 != 0 modes (enables the k2-block solver)
    int q_modes() const { return mq_; }
    const std::vector<FourierCoeff3D>& coeffs() const { return coeffs_; }
    const std::string& name() const { return name_; }

    // tau/|(p,tau)| + alpha cos(2 pi x) |p|/|(p,tau)|
    static SymbolSpec3D default_model(double alpha = 0.4);
    // tau/|(p,tau)| (radial; closed-form eigenvalues and level-set volumes)
    static SymbolSpec3D radial_model();

  private:
    std::vector<FourierCoeff3D> coeffs_;
    int mq_ = 0;
    std::string name_ = "empty3d";
};

}  // namespace specwave
