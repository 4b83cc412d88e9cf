#include "specwave/symbol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"

namespace specwave {

namespace {

// i^n as a complex factor
cplx ipow(int n) {
    switch (((n % 4) + 4) % 4) {
        case 0: return {1, 0};
        case 1: return {0, 1};
        case 2: return {-1, 0};
        default: return {0, -1};
    }
}

void check_hermitian(const std::vector<FourierCoeff>& coeffs) {
    std::map<std::array<int, 3>, cplx> table;
    for (const auto& fc : coeffs) {
        auto key = std::array<int, 3>{fc.m1, fc.m2, fc.j};
        if (table.count(key)) throw ConfigError("SymbolSpec: duplicate Fourier index");
        table[key] = fc.c;
    }
    for (const auto& [key, c] : table) {
        auto mirror = std::array<int, 3>{-key[0], -key[1], -key[2]};
        auto it = table.find(mirror);
        cplx other = (it == table.end()) ? cplx(0, 0) : it->second;
        if (std::abs(std::conj(c) - other) > 1e-13 * std::max(1.0, std::abs(c)))
            throw ConfigError("SymbolSpec: coefficients violate the reality symmetry c[-m,-j] = conj(c[m,j])");
    }
}

}  // namespace

SymbolSpec::SymbolSpec(std::vector<FourierCoeff> coeffs, std::string name)
    : coeffs_(std::move(coeffs)), name_(std::move(name)) {
    check_hermitian(coeffs_);
    for (const auto& fc : coeffs_) {
        mq_ = std::max({mq_, std::abs(fc.m1), std::abs(fc.m2)});
        mphi_ = std::max(mphi_, std::abs(fc.j));
    }
}

double SymbolSpec::eval(double x, double y, double phi, int ax, int ay, int aj) const {
    cplx acc(0, 0);
    for (const auto& fc : coeffs_) {
        cplx factor = fc.c;
        if (ax) factor *= std::pow(cplx(0, kTwoPi * fc.m1), ax);
        if (ay) factor *= std::pow(cplx(0, kTwoPi * fc.m2), ay);
        if (aj) factor *= std::pow(fc.j, aj) * ipow(aj);
        double arg = kTwoPi * (fc.m1 * x + fc.m2 * y) + fc.j * phi;
        acc += factor * cplx(std::cos(arg), std::sin(arg));
    }
    return acc.real();
}

void SymbolSpec::gradient(const PhasePoint& z, Vec2& dq, Vec2& dp) const {
    double phi = z.phi();
    double gx = eval(z.x, z.y, phi, 1, 0, 0);
    double gy = eval(z.x, z.y, phi, 0, 1, 0);
    double gphi = eval(z.x, z.y, phi, 0, 0, 1);
    double r2 = z.xi * z.xi + z.eta * z.eta;
    dq = {gx, gy};
    // d phi / d p = (-eta, xi)/|p|^2
    dp = {-z.eta * gphi / r2, z.xi * gphi / r2};
}

std::array<double, 4> SymbolSpec::hamiltonian_field(const PhasePoint& z) const {
    Vec2 dq, dp;
    gradient(z, dq, dp);
    return {dp.x, dp.y, -dq.x, -dq.y};
}

void HomogeneousFn::gradient(const PhasePoint& z, Vec2& dq, Vec2& dp) const {
    double rho = z.rho(), phi = z.phi();
    double G = g_.eval(z.x, z.y, phi);
    double Gx = g_.eval(z.x, z.y, phi, 1, 0, 0);
    double Gy = g_.eval(z.x, z.y, phi, 0, 1, 0);
    double Gphi = g_.eval(z.x, z.y, phi, 0, 0, 1);
    double rd = std::pow(rho, deg_);
    dq = {rd * Gx, rd * Gy};
    // d|p|^d/dp = d |p|^{d-1} p/|p|; d phi/dp = (-eta, xi)/|p|^2
    double rdm = deg_ * std::pow(rho, deg_ - 1);
    dp = {rdm * (z.xi / rho) * G - rd * z.eta * Gphi / (rho * rho),
          rdm * (z.eta / rho) * G + rd * z.xi * Gphi / (rho * rho)};
}

std::string SymbolSpec::to_json() const {
    nlohmann::json j;
    j["q_modes"] = mq_;
    j["phi_modes"] = mphi_;
    j["name"] = name_;
    auto arr = nlohmann::json::array();
    for (const auto& fc : coeffs_)
        arr.push_back({fc.m1, fc.m2, fc.j, fc.c.real(), fc.c.imag()});
    j["coeffs"] = arr;
    return j.dump(2);
}

SymbolSpec SymbolSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("SymbolSpec: bad JSON: ") + e.what());
    }
    if (!j.contains("coeffs")) throw ConfigError("SymbolSpec: missing 'coeffs'");
    std::vector<FourierCoeff> cs;
    for (const auto& row : j["coeffs"]) {
        if (!row.is_array() || row.size() != 5)
            throw ConfigError("SymbolSpec: coeff rows must be [m1,m2,j,re,im]");
        cs.push_back({row[0].get<int>(), row[1].get<int>(), row[2].get<int>(),
                      cplx(row[3].get<double>(), row[4].get<double>())});
    }
    return SymbolSpec(std::move(cs), j.value("name", std::string("custom")));
}

SymbolSpec SymbolSpec::constant(double value) {
    return SymbolSpec({{0, 0, 0, cplx(value, 0)}}, "constant");
}

SymbolSpec SymbolSpec::translation() {
    // sin(phi) = (e^{i phi} - e^{-i phi}) / 2i
    return SymbolSpec({{0, 0, 1, cplx(0, -0.5)}, {0, 0, -1, cplx(0, 0.5)}}, "translation");
}

SymbolSpec SymbolSpec::tilted_translation(double phi0) {
    cplx cpos = cplx(0, -0.5) * std::exp(cplx(0, -phi0));
    return SymbolSpec({{0, 0, 1, cpos}, {0, 0, -1, std::conj(cpos)}}, "tilted");
}

SymbolSpec SymbolSpec::default_model(double alpha, double beta) {
    // sin(phi) + alpha cos(2pi x) cos(phi) + beta sin(2pi y) sin(2 phi)
    std::vector<FourierCoeff> cs;
    cs.push_back({0, 0, 1, cplx(0, -0.5)});
    cs.push_back({0, 0, -1, cplx(0, 0.5)});
    // cos(2pi x) cos(phi) = 1/4 (e^{2pi ix}+e^{-2pi ix})(e^{i phi}+e^{-i phi})
    for (int m : {-1, 1})
        for (int j : {-1, 1}) cs.push_back({m, 0, j, cplx(alpha / 4.0, 0)});
    // sin(2pi y) sin(2phi) = -1/4 (e^{2pi iy}-e^{-2pi iy})(e^{2i phi}-e^{-2i phi})
    for (int m : {-1, 1})
        for (int j : {-2, 2})
            cs.push_back({0, m, j, cplx(-(m * j > 0 ? 1.0 : -1.0) * beta / 4.0, 0)});
    return SymbolSpec(std::move(cs), "default");
}

SymbolSpec SymbolSpec::family(const std::string& name, double alpha, double beta) {
    if (name == "default") return default_model(alpha, beta);
    if (name == "translation") return translation();
    if (name == "tilted") return tilted_translation(alpha);
    if (name == "constant") return constant(alpha);
    throw ConfigError("unknown symbol family: " + name);
}

// ----- 3D -------------------------------------------------------------------

SymbolSpec3D::SymbolSpec3D(std::vector<FourierCoeff3D> coeffs, std::string name)
    : coeffs_(std::move(coeffs)), name_(std::move(name)) {
    std::map<std::array<int, 4>, cplx> table;
    for (const auto& fc : coeffs_) {
        auto key = std::array<int, 4>{fc.m1, fc.m2, fc.j, fc.l};
        if (table.count(key)) throw ConfigError("SymbolSpec3D: duplicate Fourier index");
        table[key] = fc.c;
        mq_ = std::max({mq_, std::abs(fc.m1), std::abs(fc.m2)});
    }
    for (const auto& [key, c] : table) {
        auto mirror = std::array<int, 4>{-key[0], -key[1], -key[2], -key[3]};
        auto it = table.find(mirror);
        cplx other = (it == table.end()) ? cplx(0, 0) : it->second;
        if (std::abs(std::conj(c) - other) > 1e-13 * std::max(1.0, std::abs(c)))
            throw ConfigError("SymbolSpec3D: coefficients violate the reality symmetry");
    }
}

double SymbolSpec3D::eval(double x, double y, double phi, double beta) const {
    cplx acc(0, 0);
    for (const auto& fc : coeffs_) {
        double arg = kTwoPi * (fc.m1 * x + fc.m2 * y) + fc.j * phi + fc.l * beta;
        acc += fc.c * cplx(std::cos(arg), std::sin(arg));
    }
    return acc.real();
}

double SymbolSpec3D::h_n(double x, double y, double pxi, double peta, double n) const {
    double pr = std::hypot(pxi, peta);
    if (pr <= 0.0 && n == 0.0)
        throw PreconditionError("SymbolSpec3D: (p,tau) must be nonzero");
    double phi = (pr > 0.0) ? std::atan2(peta, pxi) : 0.0;
    double beta = std::atan2(pr, n);
    return eval(x, y, phi, beta);
}

std::pair<double, double> SymbolSpec3D::range_h0(int nq, int nang) const {
    double lo = 1e300, hi = -1e300;
    for (int ix = 0; ix < nq; ++ix)
        for (int iy = 0; iy < nq; ++iy)
            for (int ia = 0; ia < nang; ++ia) {
                double v = eval(double(ix) / nq, double(iy) / nq,
                                kTwoPi * ia / nang, 0.5 * M_PI);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    return {lo, hi};
}

std::pair<double, double> SymbolSpec3D::range_h1(int nq, int nang, int nrad, double rmax) const {
    double lo = 1e300, hi = -1e300;
    for (int ix = 0; ix < nq; ++ix)
        for (int iy = 0; iy < nq; ++iy)
            for (int ia = 0; ia < nang; ++ia) {
                double phi = kTwoPi * ia / nang;
                for (int ir = 0; ir <= nrad; ++ir) {
                    // geometric-ish radius ladder, plus the r = 0 and r -> inf ends
                    double r = (ir == 0) ? 0.0 : rmax * std::pow(double(ir) / nrad, 3);
                    double beta = std::atan2(r, 1.0);
                    double v = eval(double(ix) / nq, double(iy) / nq, phi, beta);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                // beta = pi/2 is the |p| -> infinity limit (h0 values)
                double v = eval(double(ix) / nq, double(iy) / nq, phi, 0.5 * M_PI);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    return {lo, hi};
}

bool SymbolSpec3D::y_independent() const {
    for (const auto& fc : coeffs_)
        if (fc.m2 != 0) return false;
    return true;
}

SymbolSpec3D SymbolSpec3D::default_model(double alpha) {
    // tau/|(p,tau)| = cos(beta), |p|/|(p,tau)| = sin(beta)
    std::vector<FourierCoeff3D> cs;
    cs.push_back({0, 0, 0, 1, cplx(0.5, 0)});
    cs.push_back({0, 0, 0, -1, cplx(0.5, 0)});
    // alpha cos(2pi x) sin(beta): cos = (e+e)/2, sin = (e-e)/2i
    for (int m : {-1, 1})
        for (int l : {-1, 1})
            cs.push_back({m, 0, 0, l, cplx(0, -0.25 * alpha * l)});
    return SymbolSpec3D(std::move(cs), "default3d");
}

SymbolSpec3D SymbolSpec3D::radial_model() {
    return SymbolSpec3D({{0, 0, 0, 1, cplx(0.5, 0)}, {0, 0, 0, -1, cplx(0.5, 0)}},
                        "radial3d");
}

}  // namespace specwave
