#include "specwave/foliation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace specwave {

// ----- PlanarField basics -----------------------------------------------------

Mat2 PlanarField::jacobian(double x, double y) const {
    const double h = 1e-6;
    Vec2 fxp = value(x + h, y), fxm = value(x - h, y);
    Vec2 fyp = value(x, y + h), fym = value(x, y - h);
    return Mat2{(fxp.x - fxm.x) / (2 * h), (fyp.x - fym.x) / (2 * h),
                (fxp.y - fxm.y) / (2 * h), (fyp.y - fym.y) / (2 * h)};
}

Mat2 RescaledField::jacobian(double x, double y) const {
    // D(fW) = f DW + W (grad f)^T
    const double h = 1e-6;
    double f = f_(x, y);
    double fx = (f_(x + h, y) - f_(x - h, y)) / (2 * h);
    double fy = (f_(x, y + h) - f_(x, y - h)) / (2 * h);
    Mat2 J = base_.jacobian(x, y);
    Vec2 W = base_.value(x, y);
    return Mat2{f * J.a + W.x * fx, f * J.b + W.x * fy, f * J.c + W.y * fx, f * J.d + W.y * fy};
}

namespace {

class ReversedField : public PlanarField {
  public:
    explicit ReversedField(const PlanarField& base) : base_(base) {}
    Vec2 value(double x, double y) const override { return -1.0 * base_.value(x, y); }
    Mat2 jacobian(double x, double y) const override {
        Mat2 J = base_.jacobian(x, y);
        return Mat2{-J.a, -J.b, -J.c, -J.d};
    }
    double density(double x, double y) const override { return base_.density(x, y); }
    std::string label() const override { return base_.label() + "-rev"; }

  private:
    const PlanarField& base_;
};

Vec2 nearest_image(const Vec2& p, const Vec2& ref) {
    // representative of p (mod Z^2) closest to ref
    auto adj = [](double v, double r) {
        double d = v - r;
        d -= std::round(d);
        return r + d;
    };
    return {adj(p.x, ref.x), adj(p.y, ref.y)};
}

}  // namespace

// ----- atlas --------------------------------------------------------------------

AtlasBranch::AtlasBranch(const SymbolSpec& spec, std::vector<double> phi_grid, int n, int index)
    : spec_(&spec), phi_grid_(std::move(phi_grid)), n_(n), index_(index) {
    min_gphi_ = 1e300;
    for (int i = 0; i <= n_; ++i)
        for (int j = 0; j <= n_; ++j) {
            double phi = phi_grid_[i * (n_ + 1) + j];
            double gphi = spec_->eval(double(i) / n_, double(j) / n_, phi, 0, 0, 1);
            min_gphi_ = std::min(min_gphi_, std::fabs(gphi));
        }
}

double AtlasBranch::phi_at(double x, double y) const {
    double xw = wrap_unit(x) * n_, yw = wrap_unit(y) * n_;
    int i = std::min(int(xw), n_ - 1), j = std::min(int(yw), n_ - 1);
    double fx = xw - i, fy = yw - j;
    auto at = [&](int a, int b) { return phi_grid_[a * (n_ + 1) + b]; };
    double seed = (1 - fx) * (1 - fy) * at(i, j) + fx * (1 - fy) * at(i + 1, j) +
                  (1 - fx) * fy * at(i, j + 1) + fx * fy * at(i + 1, j + 1);
    // Newton on g(x,y,.) = 0
    double phi = seed;
    for (int it = 0; it < 8; ++it) {
        double g = spec_->eval(x, y, phi);
        double gp = spec_->eval(x, y, phi, 0, 0, 1);
        double step = g / gp;
        phi -= step;
        if (std::fabs(step) < 1e-14) break;
    }
    if (std::fabs(spec_->eval(x, y, phi)) > 1e-9)
        throw NumericalError("AtlasBranch: Newton failed to hold the shell");
    return phi;
}

Vec2 AtlasBranch::value(double x, double y) const {
    double phi = phi_at(x, y);
    double gphi = spec_->eval(x, y, phi, 0, 0, 1);
    return {-std::sin(phi) * gphi, std::cos(phi) * gphi};
}

Mat2 AtlasBranch::jacobian(double x, double y) const {
    double phi = phi_at(x, y);
    double s = std::sin(phi), c = std::cos(phi);
    double gx = spec_->eval(x, y, phi, 1, 0, 0);
    double gy = spec_->eval(x, y, phi, 0, 1, 0);
    double gphi = spec_->eval(x, y, phi, 0, 0, 1);
    double gxp = spec_->eval(x, y, phi, 1, 0, 1);
    double gyp = spec_->eval(x, y, phi, 0, 1, 1);
    double gpp = spec_->eval(x, y, phi, 0, 0, 2);
    double Phix = -gx / gphi, Phiy = -gy / gphi;
    double dgphi_dx = gxp + gpp * Phix, dgphi_dy = gyp + gpp * Phiy;
    return Mat2{-c * Phix * gphi - s * dgphi_dx, -c * Phiy * gphi - s * dgphi_dy,
                -s * Phix * gphi + c * dgphi_dx, -s * Phiy * gphi + c * dgphi_dy};
}

double AtlasBranch::density(double x, double y) const {
    double phi = phi_at(x, y);
    return 1.0 / std::fabs(spec_->eval(x, y, phi, 0, 0, 1));
}

double AtlasBranch::radial(double x, double y) const {
    return radial_coefficient(*spec_, {wrap_unit(x), wrap_unit(y), phi_at(x, y)});
}

PolarFrame AtlasBranch::frame(double x, double y) const {
    return polar_decompose(*spec_, {wrap_unit(x), wrap_unit(y), phi_at(x, y)});
}

FoliationAtlas::FoliationAtlas(const SymbolSpec& spec, int grid_n, double gphi_min)
    : spec_(&spec), n_(grid_n) {
    const int nscan = std::max(128, 16 * (spec.phi_modes() + 1));

    auto roots_at = [&](double x, double y) {
        std::vector<double> roots;
        double prev = spec.eval(x, y, 0.0);
        for (int k = 1; k <= nscan; ++k) {
            double phi = kTwoPi * k / nscan;
            double cur = spec.eval(x, y, phi);
            if (prev == 0.0 || (prev < 0) != (cur < 0)) {
                double lo = kTwoPi * (k - 1) / nscan, hi = phi;
                if (prev == 0.0) {
                    roots.push_back(lo);
                } else {
                    for (int it = 0; it < 80; ++it) {
                        double mid = 0.5 * (lo + hi);
                        double gm = spec.eval(x, y, mid);
                        if ((gm < 0) == (spec.eval(x, y, lo) < 0))
                            lo = mid;
                        else
                            hi = mid;
                    }
                    roots.push_back(0.5 * (lo + hi));
                }
            }
            prev = cur;
        }
        for (double r : roots)
            if (std::fabs(spec.eval(x, y, r, 0, 0, 1)) < gphi_min)
                throw PreconditionError(
                    "FoliationAtlas: d_phi g vanishes on the shell; graph charts do not apply");
        std::sort(roots.begin(), roots.end());
        return roots;
    };

    auto first = roots_at(0.0, 0.0);
    if (first.empty())
        throw PreconditionError("FoliationAtlas: empty shell (0 is not attained by the symbol)");
    size_t nb = first.size();
    std::vector<std::vector<double>> grids(nb, std::vector<double>((n_ + 1) * (n_ + 1), 0.0));
    for (size_t b = 0; b < nb; ++b) grids[b][0] = first[b];

    auto match = [&](double x, double y, const std::vector<double>& prev_vals) {
        auto roots = roots_at(x, y);
        if (roots.size() != nb)
            throw PreconditionError("FoliationAtlas: branch count is not constant over the torus");
        std::vector<double> out(nb);
        std::set<size_t> used;
        for (size_t b = 0; b < nb; ++b) {
            double best = 1e300;
            size_t arg = 0;
            for (size_t r = 0; r < roots.size(); ++r) {
                if (used.count(r)) continue;
                double d = angle_dist(roots[r], prev_vals[b]);
                if (d < best) {
                    best = d;
                    arg = r;
                }
            }
            used.insert(arg);
            // unwrap toward the neighbour value
            double v = roots[arg];
            double k = std::round((prev_vals[b] - v) / kTwoPi);
            out[b] = v + kTwoPi * k;
        }
        return out;
    };

    // fill row i=0 along j, then every column upward; interior nodes only,
    // wrap row/col afterwards
    for (int j = 1; j < n_; ++j) {
        std::vector<double> prev(nb);
        for (size_t b = 0; b < nb; ++b) prev[b] = grids[b][0 * (n_ + 1) + (j - 1)];
        auto vals = match(0.0, double(j) / n_, prev);
        for (size_t b = 0; b < nb; ++b) grids[b][j] = vals[b];
    }
    for (int i = 1; i < n_; ++i)
        for (int j = 0; j < n_; ++j) {
            std::vector<double> prev(nb);
            for (size_t b = 0; b < nb; ++b) prev[b] = grids[b][(i - 1) * (n_ + 1) + j];
            auto vals = match(double(i) / n_, double(j) / n_, prev);
            for (size_t b = 0; b < nb; ++b) grids[b][i * (n_ + 1) + j] = vals[b];
        }
    // redundant wrap row/col: same torus points, unwrapped toward the interior
    for (size_t b = 0; b < nb; ++b) {
        auto& G = grids[b];
        for (int j = 0; j < n_; ++j) {
            double v = G[0 * (n_ + 1) + j];
            double ref = G[(n_ - 1) * (n_ + 1) + j];
            G[n_ * (n_ + 1) + j] = v + kTwoPi * std::round((ref - v) / kTwoPi);
        }
        for (int i = 0; i <= n_; ++i) {
            double v = G[i * (n_ + 1) + std::min(0, n_)];
            v = G[i * (n_ + 1) + 0];
            double ref = G[i * (n_ + 1) + (n_ - 1)];
            G[i * (n_ + 1) + n_] = v + kTwoPi * std::round((ref - v) / kTwoPi);
        }
    }
    for (size_t b = 0; b < nb; ++b)
        branches_.push_back(std::make_unique<AtlasBranch>(spec, std::move(grids[b]), n_, int(b)));
}

Theta FoliationAtlas::sample_shell_point(SplitMix64& rng, size_t* branch_out) const {
    size_t b = size_t(rng.uniform() * branches_.size());
    b = std::min(b, branches_.size() - 1);
    double x = rng.uniform(), y = rng.uniform();
    if (branch_out) *branch_out = b;
    return branches_[b]->theta_at(x, y);
}

// ----- planar flow ----------------------------------------------------------------

namespace {

// embedded RK45 (Dormand-Prince) on the plane; compact local version
struct Planar45 {
    const PlanarField& field;
    double dir;
    double rel_tol;
    double h = 1e-3;
    double prev_err = 1.0;

    Vec2 rhs(const Vec2& p) const { return dir * field.value(p.x, p.y); }

    bool step(Vec2& p, double& taken) {
        static const double A[7][6] = {
            {},
            {1.0 / 5},
            {3.0 / 40, 9.0 / 40},
            {44.0 / 45, -56.0 / 15, 32.0 / 9},
            {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
            {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
            {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
        static const double B5[7] = {35.0 / 384,      0.0,       500.0 / 1113, 125.0 / 192,
                                     -2187.0 / 6784, 11.0 / 84, 0.0};
        static const double B4[7] = {5179.0 / 57600,    0.0,          7571.0 / 16695, 393.0 / 640,
                                     -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
        Vec2 k[7];
        for (int attempt = 0; attempt < 50; ++attempt) {
            for (int st = 0; st < 7; ++st) {
                Vec2 arg = p;
                for (int j = 0; j < st; ++j) arg = arg + (h * A[st][j]) * k[j];
                k[st] = rhs(arg);
            }
            Vec2 p5 = p, p4 = p;
            for (int st = 0; st < 7; ++st) {
                p5 = p5 + (h * B5[st]) * k[st];
                p4 = p4 + (h * B4[st]) * k[st];
            }
            double sc = 1e-12 + rel_tol * std::max({std::fabs(p.x), std::fabs(p.y), 1.0});
            double err = std::hypot(p5.x - p4.x, p5.y - p4.y) / sc;
            if (err <= 1.0 || h <= 1e-14) {
                taken = h;
                double scale = (err > 1e-10) ? 0.9 * std::pow(err, -0.14) * std::pow(prev_err, 0.08)
                                             : 5.0;
                scale = std::clamp(scale, 0.2, 5.0);
                prev_err = std::max(err, 1e-10);
                p = p5;
                h *= scale;
                return h > 1e-14;
            }
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
        }
        return false;
    }
};

}  // namespace

PlanarTrajectory planar_flow(const PlanarField& field, Vec2 p0, double s_max, bool backward,
                             double rel_tol, double record_ds) {
    Planar45 rk{field, backward ? -1.0 : 1.0, rel_tol};
    PlanarTrajectory out;
    double s = 0, last = 0;
    out.s.push_back(0);
    out.pts.push_back(p0);
    Vec2 p = p0;
    while (s < s_max) {
        rk.h = std::min(rk.h, s_max - s);
        double taken;
        if (!rk.step(p, taken)) throw NumericalError("planar_flow: step underflow");
        s += taken;
        if (record_ds <= 0 || s - last >= record_ds || s >= s_max) {
            out.s.push_back(s);
            out.pts.push_back(p);
            last = s;
        }
        if (out.pts.size() > 3000000) throw NumericalError("planar_flow: too many samples");
    }
    return out;
}

// ----- singular points ---------------------------------------------------------------

SingularPoint classify_singular_point(const PlanarField& field, double x, double y,
                                      double margin) {
    SingularPoint sp;
    sp.x = wrap_unit(x);
    sp.y = wrap_unit(y);
    sp.residual = field.value(x, y).norm();
    sp.jacobian = field.jacobian(x, y);
    auto [e1, e2] = sp.jacobian.eigenvalues();
    sp.eig1 = e1;
    sp.eig2 = e2;
    double scale = std::max({std::abs(e1), std::abs(e2), 1e-30});
    if (std::min(std::fabs(e1.real()), std::fabs(e2.real())) < margin * scale)
        throw NumericalError("classify_singular_point: non-hyperbolic (eigenvalue real part within margin)");
    if (std::fabs(e1.imag()) > 1e-12 * scale) {
        sp.cls = PointClass::Focus;
    } else if (sp.jacobian.det() < 0) {
        sp.cls = PointClass::Saddle;
    } else {
        sp.cls = PointClass::Node;
    }
    double tr = sp.jacobian.trace();
    if (std::fabs(tr) < margin * scale)
        throw NumericalError("classify_singular_point: non-hyperbolic (trace within margin)");
    sp.stability = (tr < 0) ? Stability::WS : Stability::WU;
    return sp;
}

std::vector<SingularPoint> find_singular_points(const PlanarField& field, int grid_n,
                                                double residual_tol) {
    std::vector<SingularPoint> found;
    std::vector<SingularPoint> warnings;
    double cell = 1.0 / grid_n;

    std::vector<Vec2> vals((grid_n + 1) * (grid_n + 1));
    for (int i = 0; i <= grid_n; ++i)
        for (int j = 0; j <= grid_n; ++j)
            vals[i * (grid_n + 1) + j] = field.value(double(i) / grid_n, double(j) / grid_n);

    for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
            const Vec2& v00 = vals[i * (grid_n + 1) + j];
            const Vec2& v10 = vals[(i + 1) * (grid_n + 1) + j];
            const Vec2& v01 = vals[i * (grid_n + 1) + j + 1];
            const Vec2& v11 = vals[(i + 1) * (grid_n + 1) + j + 1];
            auto straddles = [&](auto get) {
                double lo = std::min({get(v00), get(v10), get(v01), get(v11)});
                double hi = std::max({get(v00), get(v10), get(v01), get(v11)});
                return lo <= 0.0 && hi >= 0.0;
            };
            if (!straddles([](const Vec2& v) { return v.x; }) ||
                !straddles([](const Vec2& v) { return v.y; }))
                continue;
            // Newton from the cell centre
            Vec2 p{(i + 0.5) * cell, (j + 0.5) * cell};
            bool ok = false;
            for (int it = 0; it < 40; ++it) {
                Vec2 v = field.value(p.x, p.y);
                if (v.norm() <= residual_tol) {
                    ok = true;
                    break;
                }
                Mat2 J = field.jacobian(p.x, p.y);
                double det = J.det();
                if (std::fabs(det) < 1e-18) break;
                Vec2 step{(-v.x * J.d + v.y * J.b) / det, (-v.y * J.a + v.x * J.c) / det};
                double n = step.norm();
                if (n > 2 * cell) step = step * (2 * cell / n);  // damped
                p = p + step;
            }
            if (!ok) {
                // keep a warning entry unless a converged zero lands nearby later
                SingularPoint w;
                w.x = wrap_unit(p.x);
                w.y = wrap_unit(p.y);
                w.residual = field.value(p.x, p.y).norm();
                w.newton_warning = true;
                warnings.push_back(w);
                continue;
            }
            bool dup = false;
            for (const auto& q : found)
                if (torus_dist(q.x, q.y, wrap_unit(p.x), wrap_unit(p.y)) < 1e-5) {
                    dup = true;
                    break;
                }
            if (dup) continue;
            SingularPoint sp;
            try {
                sp = classify_singular_point(field, wrap_unit(p.x), wrap_unit(p.y));
            } catch (const NumericalError&) {
                sp.x = wrap_unit(p.x);
                sp.y = wrap_unit(p.y);
                sp.jacobian = field.jacobian(p.x, p.y);
                auto [e1, e2] = sp.jacobian.eigenvalues();
                sp.eig1 = e1;
                sp.eig2 = e2;
                sp.residual = field.value(p.x, p.y).norm();
                sp.stability = Stability::None;  // degenerate: surfaced, not guessed
            }
            found.push_back(sp);
        }

    for (const auto& w : warnings) {
        bool near = false;
        for (const auto& q : found)
            if (torus_dist(q.x, q.y, w.x, w.y) < 3 * cell) {
                near = true;
                break;
            }
        if (!near) found.push_back(w);
    }
    return found;
}

// ----- cycles -------------------------------------------------------------------------

namespace {

struct CrossingResult {
    double sigma = 0;   // section coordinate of the crossing
    double time = 0;    // rescaled time of flight
    bool found = false;
};

// next oriented crossing of the section, starting from section offset sigma0
CrossingResult next_crossing(const PlanarField& field, const Section& sec, double sigma0,
                             const CycleSearchOptions& opt) {
    Vec2 n{-sec.tangent.y, sec.tangent.x};
    Vec2 start = sec.anchor + sigma0 * sec.tangent;
    double orient = field.value(sec.anchor.x, sec.anchor.y).dot(n);
    if (std::fabs(orient) < 1e-12) return {};
    double sgn = (orient > 0) ? 1.0 : -1.0;

    Planar45 rk{field, 1.0, opt.rel_tol};
    Vec2 p = start;
    double s = 0;
    auto eta = [&](const Vec2& q) {
        Vec2 d = nearest_image(q, sec.anchor) - sec.anchor;
        return sgn * d.dot(n);
    };
    auto xi = [&](const Vec2& q) {
        Vec2 d = nearest_image(q, sec.anchor) - sec.anchor;
        return d.dot(sec.tangent);
    };
    bool departed = false;
    double eta_prev = eta(p);
    Vec2 p_prev = p;
    double s_prev = 0;
    while (s < opt.s_max) {
        rk.h = std::min(rk.h, 0.05);  // keep steps small enough for crossing detection
        double taken;
        if (!rk.step(p, taken)) throw NumericalError("next_crossing: step underflow");
        s += taken;
        double e = eta(p);
        if (!departed) {
            if (std::fabs(e) > 1e-4 || torus_dist(p.x, p.y, start.x, start.y) > 1e-3)
                departed = true;
        } else if (eta_prev < 0 && e >= 0 && std::fabs(xi(p)) <= sec.halfwidth + 0.1) {
            // bisect inside [p_prev, p]
            Vec2 lo = p_prev;
            double dt = taken;
            for (int it = 0; it < 60; ++it) {
                dt *= 0.5;
                // single RK4 midpoint substep from lo
                Vec2 k1 = field.value(lo.x, lo.y);
                Vec2 k2 = field.value(lo.x + 0.5 * dt * k1.x, lo.y + 0.5 * dt * k1.y);
                Vec2 k3 = field.value(lo.x + 0.5 * dt * k2.x, lo.y + 0.5 * dt * k2.y);
                Vec2 k4 = field.value(lo.x + dt * k3.x, lo.y + dt * k3.y);
                Vec2 mid = lo + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if (eta(mid) < 0) {
                    lo = mid;
                    s_prev += dt;
                }
                if (dt < 1e-15) break;
            }
            double sig = xi(lo);
            if (std::fabs(sig) <= sec.halfwidth) return {sig, s_prev + 0.0, true};
            departed = false;  // crossed outside the segment; keep flying
        }
        eta_prev = e;
        p_prev = p;
        s_prev = s;
    }
    return {};
}

double cycle_multiplier(const PlanarField& field, const Vec2& start, double period,
                        double rel_tol, std::vector<Vec2>* samples) {
    // variational integration of dM/ds = J(theta(s)) M along the orbit
    struct State {
        Vec2 p;
        Mat2 M;
    };
    auto rhs = [&](const State& st) {
        Vec2 v = field.value(st.p.x, st.p.y);
        Mat2 J = field.jacobian(st.p.x, st.p.y);
        Mat2 dM{J.a * st.M.a + J.b * st.M.c, J.a * st.M.b + J.b * st.M.d,
                J.c * st.M.a + J.d * st.M.c, J.c * st.M.b + J.d * st.M.d};
        return State{v, dM};
    };
    // fixed-step RK4 with enough steps for the tolerance
    int nsteps = std::max(2000, int(period / 1e-3));
    (void)rel_tol;
    double dt = period / nsteps;
    State st{start, Mat2{1, 0, 0, 1}};
    for (int i = 0; i < nsteps; ++i) {
        if (samples && i % std::max(1, nsteps / 512) == 0) st.p = st.p, samples->push_back(st.p);
        State k1 = rhs(st);
        State a2{st.p + (0.5 * dt) * k1.p, Mat2{st.M.a + 0.5 * dt * k1.M.a, st.M.b + 0.5 * dt * k1.M.b,
                                                st.M.c + 0.5 * dt * k1.M.c, st.M.d + 0.5 * dt * k1.M.d}};
        State k2 = rhs(a2);
        State a3{st.p + (0.5 * dt) * k2.p, Mat2{st.M.a + 0.5 * dt * k2.M.a, st.M.b + 0.5 * dt * k2.M.b,
                                                st.M.c + 0.5 * dt * k2.M.c, st.M.d + 0.5 * dt * k2.M.d}};
        State k3 = rhs(a3);
        State a4{st.p + dt * k3.p, Mat2{st.M.a + dt * k3.M.a, st.M.b + dt * k3.M.b,
                                        st.M.c + dt * k3.M.c, st.M.d + dt * k3.M.d}};
        State k4 = rhs(a4);
        st.p = st.p + (dt / 6.0) * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
        auto comb = [&](double m1, double m2, double m3, double m4, double cur) {
            return cur + dt / 6.0 * (m1 + 2 * m2 + 2 * m3 + m4);
        };
        st.M = Mat2{comb(k1.M.a, k2.M.a, k3.M.a, k4.M.a, st.M.a),
                    comb(k1.M.b, k2.M.b, k3.M.b, k4.M.b, st.M.b),
                    comb(k1.M.c, k2.M.c, k3.M.c, k4.M.c, st.M.c),
                    comb(k1.M.d, k2.M.d, k3.M.d, k4.M.d, st.M.d)};
    }
    return st.M.det();
}

bool same_cycle(const Cycle& a, const Cycle& b, double tol) {
    if (a.samples.empty() || b.samples.empty()) return false;
    double worst = 0;
    for (size_t i = 0; i < a.samples.size(); i += std::max<size_t>(1, a.samples.size() / 16)) {
        double best = 1e300;
        for (const auto& q : b.samples)
            best = std::min(best, torus_dist(a.samples[i].x, a.samples[i].y, q.x, q.y));
        worst = std::max(worst, best);
    }
    return worst < tol;
}

}  // namespace

std::vector<Cycle> find_cycles(const PlanarField& field, const std::vector<Section>& sections,
                               const CycleSearchOptions& opt) {
    std::vector<Cycle> cycles;
    for (const auto& sec : sections) {
        // section must be transversal at the anchor
        Vec2 n{-sec.tangent.y, sec.tangent.x};
        if (std::fabs(field.value(sec.anchor.x, sec.anchor.y).dot(n)) < 1e-8)
            throw PreconditionError("find_cycles: section not transversal to the field");

        auto ret = next_crossing(field, sec, 0.0, opt);
        if (!ret.found) continue;  // no return within s_max: section skipped

        // damped Newton on F(sigma) = P(sigma) - sigma
        double sigma = 0.0;
        double period = ret.time;
        bool converged = false;
        for (int it = 0; it < 60; ++it) {
            auto r0 = next_crossing(field, sec, sigma, opt);
            if (!r0.found) break;
            double F = r0.sigma - sigma;
            period = r0.time;
            if (std::fabs(F) < 1e-11) {
                converged = true;
                break;
            }
            double hfd = std::max(1e-7, 1e-4 * std::fabs(F));
            auto r1 = next_crossing(field, sec, sigma + hfd, opt);
            if (!r1.found) break;
            double dF = (r1.sigma - (sigma + hfd) - F) / hfd;
            double step = (std::fabs(dF) > 1e-14) ? -F / dF : -F;
            step = std::clamp(step, -0.2 * sec.halfwidth, 0.2 * sec.halfwidth);
            sigma += step;
            if (std::fabs(sigma) > sec.halfwidth) {
                sigma = std::clamp(sigma, -sec.halfwidth, sec.halfwidth);
            }
        }
        if (!converged) continue;

        Cycle cyc;
        cyc.section = sec;
        cyc.section.anchor = sec.anchor + sigma * sec.tangent;
        cyc.period = period;
        auto rr = next_crossing(field, sec, sigma, opt);
        cyc.residual = rr.found ? std::fabs(rr.sigma - sigma) : 1.0;
        cyc.multiplier =
            cycle_multiplier(field, cyc.section.anchor, period, opt.rel_tol, &cyc.samples);
        for (auto& smp : cyc.samples) smp = Vec2{wrap_unit(smp.x), wrap_unit(smp.y)};
        cyc.attracting = std::fabs(cyc.multiplier) < 1.0;
        cyc.hyperbolic = std::fabs(std::fabs(cyc.multiplier) - 1.0) > opt.margin;
        bool dup = false;
        for (const auto& c : cycles)
            if (same_cycle(cyc, c, opt.dedupe_dist)) dup = true;
        if (!dup) cycles.push_back(std::move(cyc));
    }
    return cycles;
}

std::vector<Cycle> auto_find_cycles(const PlanarField& field, const std::vector<Vec2>& seeds,
                                    const CycleSearchOptions& opt) {
    std::vector<Cycle> out;
    ReversedField rev(field);
    for (bool backward : {false, true}) {
        const PlanarField& drive = backward ? static_cast<const PlanarField&>(rev) : field;
        for (const auto& seed : seeds) {
            PlanarTrajectory burn;
            try {
                burn = planar_flow(drive, seed, opt.burn_in, false, opt.rel_tol);
            } catch (const NumericalError&) {
                continue;
            }
            Vec2 p = burn.pts.back();
            Vec2 v = drive.value(p.x, p.y);
            double vn = v.norm();
            if (vn < 1e-10) continue;  // settled on a singular point instead
            Section sec;
            sec.anchor = {wrap_unit(p.x), wrap_unit(p.y)};
            sec.tangent = {-v.y / vn, v.x / vn};
            sec.halfwidth = 0.15;
            std::vector<Cycle> got;
            try {
                got = find_cycles(drive, {sec}, opt);
            } catch (const PreconditionError&) {
                continue;
            }
            for (auto& c : got) {
                if (backward) {
                    // multiplier and period recomputed against the forward field
                    c.samples.clear();
                    c.multiplier = cycle_multiplier(field, c.section.anchor, c.period,
                                                    opt.rel_tol, &c.samples);
                    for (auto& smp : c.samples) smp = Vec2{wrap_unit(smp.x), wrap_unit(smp.y)};
                    c.attracting = std::fabs(c.multiplier) < 1.0;
                    c.hyperbolic = std::fabs(std::fabs(c.multiplier) - 1.0) > opt.margin;
                }
                bool dup = false;
                for (const auto& c0 : out)
                    if (same_cycle(c, c0, opt.dedupe_dist)) dup = true;
                if (!dup) out.push_back(std::move(c));
            }
        }
    }
    return out;
}

// ----- structure ---------------------------------------------------------------------

namespace {

double dist_to_samples(const std::vector<Component>& comps, int branch, const Vec2& p) {
    double best = 1e300;
    for (const auto& c : comps) {
        if (branch >= 0 && c.branch >= 0 && c.branch != branch) continue;
        for (const auto& q : c.samples) best = std::min(best, torus_dist(p.x, p.y, q.x, q.y));
        for (const auto& q : c.manifold) best = std::min(best, torus_dist(p.x, p.y, q.x, q.y));
    }
    return best;
}

}  // namespace

double SimpleStructure::dist_to_kplus(int branch, const Vec2& p) const {
    return dist_to_samples(k_plus, branch, p);
}
double SimpleStructure::dist_to_kminus(int branch, const Vec2& p) const {
    return dist_to_samples(k_minus, branch, p);
}

MorseSmaleReport check_morse_smale(const PlanarField& field,
                                   const std::vector<SingularPoint>& points,
                                   const std::vector<Cycle>& cycles,
                                   const StructureOptions& opt) {
    MorseSmaleReport rep;
    for (const auto& p : points) {
        if (p.newton_warning) {
            rep.findings.push_back("unresolved grid cell near (" + std::to_string(p.x) + "," +
                                   std::to_string(p.y) + ")");
            rep.non_hyperbolic_object = true;
        } else if (p.stability == Stability::None) {
            rep.findings.push_back("non-hyperbolic singular point at (" + std::to_string(p.x) +
                                   "," + std::to_string(p.y) + ")");
            rep.non_hyperbolic_object = true;
        }
    }
    for (const auto& c : cycles)
        if (!c.hyperbolic) {
            rep.findings.push_back("non-hyperbolic cycle (|det| ~ 1), multiplier = " +
                                   std::to_string(c.multiplier));
            rep.non_hyperbolic_object = true;
        }

    // saddle-connection screening: flow each saddle separatrix and watch the
    // minimum distance to every saddle (approaching one within tol_sc is the
    // numerical proxy for meeting its stable/unstable manifold)
    std::vector<const SingularPoint*> saddles;
    for (const auto& p : points)
        if (!p.newton_warning && p.cls == PointClass::Saddle) saddles.push_back(&p);

    auto screen = [&](const SingularPoint& from, bool unstable) {
        Mat2 J = from.jacobian;
        auto [e1, e2] = J.eigenvalues();
        double lam = unstable ? std::max(e1.real(), e2.real()) : std::min(e1.real(), e2.real());
        Vec2 dir = J.eigenvector(lam);
        for (double sgn : {1.0, -1.0}) {
            Vec2 seed{from.x + sgn * opt.manifold_offset * dir.x,
                      from.y + sgn * opt.manifold_offset * dir.y};
            PlanarTrajectory tr;
            try {
                tr = planar_flow(field, seed, opt.s_max, /*backward=*/!unstable, 1e-11, 1e-2);
            } catch (const NumericalError&) {
                rep.findings.push_back("separatrix integration failed near a saddle");
                continue;
            }
            for (const auto* s : saddles) {
                bool self = (s == &from);
                bool left_origin = false;
                for (size_t i = 0; i < tr.pts.size(); ++i) {
                    double d = torus_dist(tr.pts[i].x, tr.pts[i].y, s->x, s->y);
                    if (self && !left_origin) {
                        if (d > 10 * opt.tol_sc) left_origin = true;
                        continue;
                    }
                    if (d < opt.tol_sc) {
                        rep.suspected_connection = true;
                        rep.findings.push_back("saddle connection suspected: separatrix of (" +
                                               std::to_string(from.x) + "," + std::to_string(from.y) +
                                               ") approaches (" + std::to_string(s->x) + "," +
                                               std::to_string(s->y) + ")");
                        break;
                    }
                }
            }
        }
    };
    for (const auto* s : saddles) {
        screen(*s, true);
        screen(*s, false);
    }

    rep.passed = !rep.non_hyperbolic_object && !rep.suspected_connection;
    return rep;
}

SimpleStructure assemble_structure_for_field(const PlanarField& field, int branch_index,
                                             const StructureOptions& opt) {
    auto points = find_singular_points(field, 128);
    std::vector<Vec2> seeds;
    for (int i = 0; i < opt.seed_grid; ++i)
        for (int j = 0; j < opt.seed_grid; ++j)
            seeds.push_back({(i + 0.37) / opt.seed_grid, (j + 0.61) / opt.seed_grid});
    auto cycles = auto_find_cycles(field, seeds);

    auto ms = check_morse_smale(field, points, cycles, opt);
    if (!ms.passed) {
        std::string why;
        for (const auto& f : ms.findings) why += f + "; ";
        throw PreconditionError("assemble_structure: Morse-Smale check failed: " + why);
    }

    SimpleStructure st;
    auto push_point = [&](const SingularPoint& p, std::vector<Component>& dst) {
        Component c;
        c.kind = Component::Kind::Point;
        c.branch = branch_index;
        c.samples = {{p.x, p.y}};
        c.rate = p.jacobian.trace();
        dst.push_back(std::move(c));
    };
    auto push_cycle = [&](const Cycle& cyc, std::vector<Component>& dst) {
        Component c;
        c.kind = Component::Kind::Cycle;
        c.branch = branch_index;
        c.samples = cyc.samples;
        c.rate = cyc.multiplier;
        dst.push_back(std::move(c));
    };

    std::vector<const SingularPoint*> ws_saddles, wu_saddles;
    for (const auto& p : points) {
        if (p.cls == PointClass::Saddle) {
            (p.stability == Stability::WS ? ws_saddles : wu_saddles).push_back(&p);
        } else if (p.stability == Stability::WS) {
            push_point(p, st.k_plus);
        } else {
            push_point(p, st.k_minus);
        }
    }
    for (const auto& c : cycles) (c.attracting ? push_cycle(c, st.k_plus) : push_cycle(c, st.k_minus));

    // saddles enter K+/K- together with their traced invariant manifolds
    auto trace_manifold = [&](const SingularPoint& sp, bool unstable,
                              std::vector<Component>& attract_side) {
        Component comp;
        comp.kind = Component::Kind::Point;
        comp.branch = branch_index;
        comp.samples = {{sp.x, sp.y}};
        comp.rate = sp.jacobian.trace();
        auto [e1, e2] = sp.jacobian.eigenvalues();
        double lam = unstable ? std::max(e1.real(), e2.real()) : std::min(e1.real(), e2.real());
        Vec2 dir = sp.jacobian.eigenvector(lam);
        for (double sgn : {1.0, -1.0}) {
            Vec2 seed{sp.x + sgn * opt.manifold_offset * dir.x,
                      sp.y + sgn * opt.manifold_offset * dir.y};
            auto tr = planar_flow(field, seed, opt.s_max, /*backward=*/!unstable, 1e-11, 5e-3);
            bool reached = false;
            for (const auto& q : tr.pts) {
                Vec2 w{wrap_unit(q.x), wrap_unit(q.y)};
                comp.manifold.push_back(w);
                if (dist_to_samples(attract_side, branch_index, w) < opt.capture_radius) {
                    reached = true;
                    break;
                }
            }
            if (!reached)
                throw NumericalError(
                    "assemble_structure: separatrix did not reach an attracting object "
                    "within s_max");
        }
        attract_side.push_back(std::move(comp));
    };
    for (const auto* s : ws_saddles) trace_manifold(*s, true, st.k_plus);
    for (const auto* s : wu_saddles) trace_manifold(*s, false, st.k_minus);

    if (st.k_plus.empty() || st.k_minus.empty())
        throw NumericalError("assemble_structure: no attracting or no repelling set found");
    st.verified = true;
    return st;
}

SimpleStructure assemble_simple_structure(const FoliationAtlas& atlas,
                                          const StructureOptions& opt) {
    SimpleStructure st;
    for (size_t b = 0; b < atlas.branch_count(); ++b) {
        auto sb = assemble_structure_for_field(atlas.branch(b), int(b), opt);
        for (auto& c : sb.k_plus) st.k_plus.push_back(std::move(c));
        for (auto& c : sb.k_minus) st.k_minus.push_back(std::move(c));
    }

    // disjointness of the component lists
    for (const auto& cp : st.k_plus)
        for (const auto& q : cp.samples)
            if (dist_to_samples(st.k_minus, cp.branch, q) < 2 * opt.capture_radius)
                throw NumericalError("assemble_simple_structure: K+ and K- overlap");

    // Omega-seed statistics
    SplitMix64 rng = rng_stream(opt.rng_seed, "omega-seeds");
    int captured_f = 0, captured_b = 0, total = 0;
    double tmax_f = 0, tmax_b = 0;
    for (int k = 0; k < opt.omega_seeds; ++k) {
        size_t b = std::min(size_t(rng.uniform() * atlas.branch_count()), atlas.branch_count() - 1);
        Vec2 seed{rng.uniform(), rng.uniform()};
        if (st.dist_to_kplus(int(b), seed) < 5 * opt.capture_radius ||
            st.dist_to_kminus(int(b), seed) < 5 * opt.capture_radius)
            continue;  // not an Omega seed
        ++total;
        const auto& field = atlas.branch(b);
        for (bool backward : {false, true}) {
            auto tr = planar_flow(field, seed, opt.s_max, backward, 1e-10, 1e-2);
            for (size_t i = 0; i < tr.pts.size(); ++i) {
                Vec2 w{wrap_unit(tr.pts[i].x), wrap_unit(tr.pts[i].y)};
                double d = backward ? st.dist_to_kminus(int(b), w) : st.dist_to_kplus(int(b), w);
                if (d <= opt.capture_radius) {
                    if (backward) {
                        ++captured_b;
                        tmax_b = std::max(tmax_b, tr.s[i]);
                    } else {
                        ++captured_f;
                        tmax_f = std::max(tmax_f, tr.s[i]);
                    }
                    break;
                }
            }
        }
    }
    st.basin = {total, captured_f, captured_b, tmax_f, tmax_b};
    st.verified = (captured_f == total) && (captured_b == total);
    return st;
}

AttractorCheck verify_attractor(const PlanarField& field, const std::vector<Component>& K,
                                double u_radius, double s_max, int grid_n,
                                double contraction_tol) {
    AttractorCheck res;
    std::vector<Vec2> inside;
    for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
            Vec2 p{double(i) / grid_n, double(j) / grid_n};
            if (dist_to_samples(K, -1, p) <= u_radius) inside.push_back(p);
        }
    if (inside.empty()) {
        res.is_attractor = false;
        return res;
    }
    // forward invariance on samples
    for (const auto& p : inside) {
        auto tr = planar_flow(field, p, 4.0, false, 1e-10, 0.05);
        for (const auto& q : tr.pts) {
            Vec2 w{wrap_unit(q.x), wrap_unit(q.y)};
            if (dist_to_samples(K, -1, w) > u_radius + 1e-9) {
                res.is_attractor = false;
                res.witness = p;
                return res;
            }
        }
    }
    // contraction of the sampled set
    double h0 = 0, h1 = 0;
    for (const auto& p : inside) {
        h0 = std::max(h0, dist_to_samples(K, -1, p));
        auto tr = planar_flow(field, p, s_max, false, 1e-10, s_max);
        Vec2 w{wrap_unit(tr.pts.back().x), wrap_unit(tr.pts.back().y)};
        h1 = std::max(h1, dist_to_samples(K, -1, w));
    }
    res.final_hausdorff = h1;
    res.is_attractor = (h1 <= std::min(contraction_tol, h0 + 1e-12));
    return res;
}

}  // namespace specwave
