#include "specwave/escape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "specwave/kernels.hpp"
#include "specwave/lp.hpp"

namespace specwave {

// ----- TrigPoly ---------------------------------------------------------------

namespace {
// basis index -> (m1, m2, is_sin); index 0 is the constant
void decode_basis(int M, size_t k, int& m1, int& m2, bool& is_sin) {
    if (k == 0) {
        m1 = m2 = 0;
        is_sin = false;
        return;
    }
    size_t r = (k - 1) / 2;
    is_sin = ((k - 1) % 2) == 1;
    if (r < size_t(M)) {
        m1 = 0;
        m2 = int(r) + 1;
    } else {
        size_t q = r - M;
        m1 = int(q / (2 * M + 1)) + 1;
        m2 = int(q % (2 * M + 1)) - M;
    }
}
}  // namespace

TrigPoly::TrigPoly(int M) : M_(M), coef_(basis_size(M), 0.0) {}

double TrigPoly::basis_value(int M, size_t k, double x, double y) {
    int m1, m2;
    bool is_sin;
    decode_basis(M, k, m1, m2, is_sin);
    if (k == 0) return 1.0;
    double arg = kTwoPi * (m1 * x + m2 * y);
    return is_sin ? std::sin(arg) : std::cos(arg);
}

Vec2 TrigPoly::basis_grad(int M, size_t k, double x, double y) {
    int m1, m2;
    bool is_sin;
    decode_basis(M, k, m1, m2, is_sin);
    if (k == 0) return {0, 0};
    double arg = kTwoPi * (m1 * x + m2 * y);
    double d = is_sin ? std::cos(arg) : -std::sin(arg);
    return {kTwoPi * m1 * d, kTwoPi * m2 * d};
}

double TrigPoly::value(double x, double y) const {
    double acc = 0;
    for (size_t k = 0; k < coef_.size(); ++k)
        if (coef_[k] != 0.0) acc += coef_[k] * basis_value(M_, k, x, y);
    return acc;
}

Vec2 TrigPoly::grad(double x, double y) const {
    Vec2 acc{0, 0};
    for (size_t k = 1; k < coef_.size(); ++k)
        if (coef_[k] != 0.0) {
            Vec2 g = basis_grad(M_, k, x, y);
            acc = acc + coef_[k] * g;
        }
    return acc;
}

TrigPoly TrigPoly::fit(const std::vector<double>& samples, int grid_n, int M) {
    if (samples.size() != size_t(grid_n) * size_t(grid_n))
        throw PreconditionError("TrigPoly::fit: sample count mismatch");
    if (grid_n <= 2 * M)
        throw PreconditionError("TrigPoly::fit: grid too coarse for the requested order");
    TrigPoly p(M);
    for (size_t k = 0; k < p.coef_.size(); ++k) {
        int m1, m2;
        bool is_sin;
        decode_basis(M, k, m1, m2, is_sin);
        double acc = 0;
        for (int i = 0; i < grid_n; ++i)
            for (int j = 0; j < grid_n; ++j) {
                double arg = kTwoPi * (m1 * double(i) + m2 * double(j)) / grid_n;
                acc += samples[size_t(i) * grid_n + j] * (is_sin ? std::sin(arg) : std::cos(arg));
            }
        p.coef_[k] = (k == 0 ? 1.0 : 2.0) * acc / (double(grid_n) * grid_n);
    }
    return p;
}

// ----- bracket machinery ----------------------------------------------------------

BranchDynamics branch_dynamics(const AtlasBranch& branch) {
    BranchDynamics d;
    d.field = &branch;
    d.radial = [&branch](double x, double y) { return branch.radial(x, y); };
    return d;
}

double EscapeFunction::bracket(const BranchDynamics& dyn, size_t b, double x, double y) const {
    double a = dyn.radial(x, y);
    Vec2 v = dyn.field->value(x, y);
    return a * g[b].value(x, y) + v.dot(g[b].grad(x, y));
}

std::string EscapeFunction::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["delta"] = delta;
    j["cert_grid"] = cert_grid;
    auto arr = nlohmann::json::array();
    for (const auto& gp : g) {
        nlohmann::json b;
        b["order"] = gp.order();
        b["coef"] = gp.coefficients();
        arr.push_back(b);
    }
    j["branches"] = arr;
    return j.dump(2);
}

double EscapePhaseFn::operator()(const PhasePoint& z) const {
    return z.rho() * k_->value(branch_, z.x, z.y);
}

void EscapePhaseFn::gradient(const PhasePoint& z, Vec2& dq, Vec2& dp) const {
    double rho = z.rho();
    double G = k_->value(branch_, z.x, z.y);
    Vec2 gg = k_->g[branch_].grad(z.x, z.y);
    dq = {rho * gg.x, rho * gg.y};
    dp = {G * z.xi / rho, G * z.eta / rho};
}

namespace {

BracketMin bracket_grid_min_impl(const EscapeFunction& k, const std::vector<BranchDynamics>& dyn,
                                 int grid_n, bool omp) {
    BracketMin best;
    best.min_value = std::numeric_limits<double>::infinity();
    std::vector<double> vals(size_t(grid_n) * grid_n);
    for (size_t b = 0; b < dyn.size(); ++b) {
        auto body = [&](std::ptrdiff_t i) {
            double x = double(i / grid_n) / grid_n;
            double y = double(i % grid_n) / grid_n;
            vals[size_t(i)] = k.bracket(dyn[b], b, x, y);
        };
        if (omp) {
#if defined(SPECWAVE_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(vals.size()); ++i) body(i);
#else
            for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(vals.size()); ++i) body(i);
#endif
        } else {
            for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(vals.size()); ++i) body(i);
        }
        for (size_t i = 0; i < vals.size(); ++i)
            if (vals[i] < best.min_value) {
                best.min_value = vals[i];
                best.branch = b;
                best.x = double(i / grid_n) / grid_n;
                best.y = double(i % grid_n) / grid_n;
            }
    }
    return best;
}

}  // namespace

BracketMin bracket_grid_min_serial(const EscapeFunction& k,
                                   const std::vector<BranchDynamics>& dyn, int grid_n) {
    return bracket_grid_min_impl(k, dyn, grid_n, false);
}
BracketMin bracket_grid_min_omp(const EscapeFunction& k, const std::vector<BranchDynamics>& dyn,
                                int grid_n) {
    return bracket_grid_min_impl(k, dyn, grid_n, true);
}
BracketMin bracket_grid_min(const EscapeFunction& k, const std::vector<BranchDynamics>& dyn,
                            int grid_n) {
    return bracket_grid_min_impl(k, dyn, grid_n, exec_mode() == ExecMode::OpenMP);
}

double certify(EscapeFunction& k, const FoliationAtlas& atlas, int refinement) {
    std::vector<BranchDynamics> dyn;
    for (size_t b = 0; b < atlas.branch_count(); ++b) dyn.push_back(branch_dynamics(atlas.branch(b)));
    int n = std::max(k.cert_grid, 8) * std::max(refinement, 1);
    auto bm = bracket_grid_min(k, dyn, n);
    if (bm.min_value < k.delta) k.delta = bm.min_value;
    if (!(k.delta > 0))
        throw NumericalError("certify: escape margin non-positive on the refined grid");
    return bm.min_value;
}

// ----- LP synthesis -----------------------------------------------------------------

LpSynthesis synthesize_lp_for(const std::vector<BranchDynamics>& dyn,
                              const LpSynthesisOptions& opt) {
    const int M = opt.basis_order;
    const size_t nb = TrigPoly::basis_size(M);
    const double gbox = 4.0 * opt.sup_bound;

    LpSynthesis out;
    out.feasible = true;
    EscapeFunction fn;
    fn.method = "lp";
    fn.cert_grid = opt.grid_n;
    fn.delta = std::numeric_limits<double>::infinity();

    for (size_t b = 0; b < dyn.size(); ++b) {
        const int n = opt.grid_n;
        // precompute a and V over the constraint grid
        std::vector<double> av(size_t(n) * n);
        std::vector<Vec2> vv(size_t(n) * n);
        parallel_for(std::ptrdiff_t(size_t(n) * n), [&](std::ptrdiff_t i) {
            double x = double(i / n) / n, y = double(i % n) / n;
            av[size_t(i)] = dyn[b].radial(x, y);
            vv[size_t(i)] = dyn[b].field->value(x, y);
        });

        auto bracket_row = [&](size_t gi, std::vector<double>& row) {
            double x = double(gi / n) / n, y = double(gi % n) / n;
            for (size_t k = 0; k < nb; ++k) {
                row[k] = av[gi] * TrigPoly::basis_value(M, k, x, y) +
                         vv[gi].dot(TrigPoly::basis_grad(M, k, x, y));
            }
        };

        double row_scale = 0;  // bound on sum |B| per row, for the delta box
        {
            std::vector<double> row(nb);
            for (int t = 0; t < 32; ++t) {
                size_t gi = (size_t(t) * 2654435761u) % (size_t(n) * n);
                bracket_row(gi, row);
                double s = 0;
                for (double v : row) s += std::fabs(v);
                row_scale = std::max(row_scale, s);
            }
        }
        const double dbig = 10.0 + 2.0 * gbox * row_scale;

        // LP variables: u_k = coef_k + gbox in [0, 2 gbox], then delta
        LpProblem lp;
        lp.nvars = nb + 1;
        lp.c.assign(nb + 1, 0.0);
        lp.c[nb] = 1.0;
        lp.lo.assign(nb + 1, 0.0);
        lp.up.assign(nb + 1, 2 * gbox);
        lp.lo[nb] = -dbig;
        lp.up[nb] = dbig;

        std::vector<size_t> active;  // grid indices with a bracket row in the LP
        auto add_bracket = [&](size_t gi) {
            std::vector<double> B(nb), row(nb + 1);
            bracket_row(gi, B);
            double shift = 0;
            for (size_t k = 0; k < nb; ++k) {
                row[k] = -B[k];
                shift += B[k];
            }
            row[nb] = 1.0;
            lp.rows.push_back(std::move(row));
            lp.rhs.push_back(-gbox * shift);
            active.push_back(gi);
        };
        auto add_sup = [&](size_t gi, double sign) {
            double x = double(gi / n) / n, y = double(gi % n) / n;
            std::vector<double> row(nb + 1, 0.0);
            double shift = 0;
            for (size_t k = 0; k < nb; ++k) {
                double bv = TrigPoly::basis_value(M, k, x, y);
                row[k] = sign * bv;
                shift += sign * bv;
            }
            lp.rows.push_back(std::move(row));
            lp.rhs.push_back(opt.sup_bound + gbox * shift);
        };

        const int sg = opt.seed_grid;
        for (int i = 0; i < sg; ++i)
            for (int j = 0; j < sg; ++j) {
                size_t gi = size_t(i * (n / sg)) * n + size_t(j * (n / sg));
                add_bracket(gi);
                add_sup(gi, 1.0);
                add_sup(gi, -1.0);
            }

        TrigPoly gpoly(M);
        double lp_delta = 0;
        int round = 0;
        for (; round < opt.max_rounds; ++round) {
            auto res = solve_lp(lp);
            if (res.status != LpStatus::Optimal)
                throw NumericalError("synthesize_lp: simplex did not reach optimality");
            for (size_t k = 0; k < nb; ++k) gpoly.coefficients()[k] = res.x[k] - gbox;
            lp_delta = res.x[nb];

            // scan the full grid for violated rows
            std::vector<double> bvals(size_t(n) * n), gvals(size_t(n) * n);
            parallel_for(std::ptrdiff_t(size_t(n) * n), [&](std::ptrdiff_t i) {
                double x = double(i / n) / n, y = double(i % n) / n;
                double gv = gpoly.value(x, y);
                gvals[size_t(i)] = gv;
                bvals[size_t(i)] = av[size_t(i)] * gv + vv[size_t(i)].dot(gpoly.grad(x, y));
            });
            std::vector<std::pair<double, size_t>> viol;
            for (size_t i = 0; i < bvals.size(); ++i)
                if (bvals[i] < lp_delta - 1e-9) viol.push_back({bvals[i], i});
            std::vector<std::pair<double, size_t>> sup_viol;
            for (size_t i = 0; i < gvals.size(); ++i)
                if (std::fabs(gvals[i]) > opt.sup_bound + 1e-9)
                    sup_viol.push_back({-std::fabs(gvals[i]), i});
            if (viol.empty() && sup_viol.empty()) break;
            std::sort(viol.begin(), viol.end());
            std::sort(sup_viol.begin(), sup_viol.end());
            size_t add = 0;
            for (const auto& [v, gi] : viol) {
                add_bracket(gi);
                if (++add >= 128) break;
            }
            add = 0;
            for (const auto& [v, gi] : sup_viol) {
                add_sup(gi, gvals[gi] > 0 ? 1.0 : -1.0);
                if (++add >= 64) break;
            }
        }
        out.rounds = std::max(out.rounds, round + 1);
        out.lp_delta = (b == 0) ? lp_delta : std::min(out.lp_delta, lp_delta);
        fn.g.push_back(std::move(gpoly));
        if (lp_delta < opt.min_margin) out.feasible = false;
    }

    // full-grid certification of the assembled candidate
    auto bm = bracket_grid_min(fn, dyn, opt.grid_n);
    out.certified_delta = bm.min_value;
    fn.delta = bm.min_value;
    if (out.certified_delta < opt.min_margin) out.feasible = false;
    if (out.feasible) out.fn = std::move(fn);
    return out;
}

LpSynthesis synthesize_lp(const FoliationAtlas& atlas, const LpSynthesisOptions& opt) {
    std::vector<BranchDynamics> dyn;
    for (size_t b = 0; b < atlas.branch_count(); ++b) dyn.push_back(branch_dynamics(atlas.branch(b)));
    return synthesize_lp_for(dyn, opt);
}

// ----- constructive route --------------------------------------------------------------

namespace {

// local weight profile near a component: exp of a Floquet/Lyapunov phase, with
// div_{F mu}(W) held at the component's mean contraction (or expansion) rate
struct ComponentProfile {
    const Component* comp = nullptr;
    // point data
    Mat2 P;
    double gamma = 1.0;
    // cycle data: per-sample phase
    std::vector<double> psi;
    double lambda_bar = 0;  // mean of div_mu W over the component
    double patch_radius = 0.05;

    double dist(const Vec2& p) const {
        double best = 1e300;
        for (const auto& q : comp->samples) best = std::min(best, torus_dist(p.x, p.y, q.x, q.y));
        return best;
    }

    double log_f(const Vec2& p) const {
        if (comp->kind == Component::Kind::Point) {
            const Vec2& c = comp->samples[0];
            double dx = p.x - c.x, dy = p.y - c.y;
            dx -= std::round(dx);
            dy -= std::round(dy);
            return gamma * (P.a * dx * dx + 2 * P.b * dx * dy + P.d * dy * dy);
        }
        // kernel-smoothed phase over the cycle samples
        double sw = 0, sv = 0;
        size_t nsmp = comp->samples.size();
        double width = 4.0 / double(nsmp);
        for (size_t i = 0; i < nsmp; ++i) {
            double d = torus_dist(p.x, p.y, comp->samples[i].x, comp->samples[i].y);
            double w = std::exp(-d * d / (2 * width * width));
            sw += w;
            sv += w * psi[i];
        }
        return (sw > 1e-280) ? sv / sw : 0.0;
    }

    // directional derivative of log F along the field, central differences
    double dlogf_w(const BranchDynamics& dyn, const Vec2& p) const {
        Vec2 v = dyn.field->value(p.x, p.y);
        double vn = v.norm();
        if (vn < 1e-14) return 0.0;
        const double h = 1e-5;
        Vec2 u{v.x / vn, v.y / vn};
        double fp = log_f({p.x + h * u.x, p.y + h * u.y});
        double fm = log_f({p.x - h * u.x, p.y - h * u.y});
        return vn * (fp - fm) / (2 * h);
    }
};

ComponentProfile build_profile(const BranchDynamics& dyn, const Component& comp, bool attracting,
                               const FlowConstructionOptions& opt) {
    ComponentProfile pr;
    pr.comp = &comp;
    pr.gamma = opt.gamma;
    pr.patch_radius = opt.patch_radius;
    if (comp.kind == Component::Kind::Point) {
        Mat2 J = dyn.field->jacobian(comp.samples[0].x, comp.samples[0].y);
        Mat2 Jeff = attracting ? J : Mat2{-J.a, -J.b, -J.c, -J.d};
        pr.P = lyapunov_2x2(Jeff, Mat2{1, 0, 0, 1});
        pr.lambda_bar = J.trace();  // div_mu W at the zero equals the trace
    } else {
        size_t nsmp = comp.samples.size();
        std::vector<double> d(nsmp);
        double mean = 0;
        for (size_t i = 0; i < nsmp; ++i) {
            // Liouville identity on the shell: div_mu W = -a
            d[i] = -dyn.radial(comp.samples[i].x, comp.samples[i].y);
            mean += d[i];
        }
        mean /= double(nsmp);
        pr.lambda_bar = mean;
        pr.psi.assign(nsmp, 0.0);
        double dtau = comp.period / double(nsmp);
        for (size_t i = 1; i < nsmp; ++i)
            pr.psi[i] = pr.psi[i - 1] + (mean - d[i - 1]) * dtau;
    }
    return pr;
}

struct PatchSide {
    std::vector<ComponentProfile> profiles;
    double c_margin = 0;   // min |div_{F mu} W| over the patches
    double m_min = 1e300;  // min of the local bracket on the patches

    double dist(const Vec2& p) const {
        double best = 1e300;
        for (const auto& pr : profiles) best = std::min(best, pr.dist(p));
        return best;
    }
    const ComponentProfile& nearest(const Vec2& p) const {
        double best = 1e300;
        const ComponentProfile* arg = &profiles[0];
        for (const auto& pr : profiles) {
            double d = pr.dist(p);
            if (d < best) {
                best = d;
                arg = &pr;
            }
        }
        return *arg;
    }
    double radius() const {
        double r = 1e300;
        for (const auto& pr : profiles) r = std::min(r, pr.patch_radius);
        return r;
    }

    // khat = sign / F at rho = 1
    double khat(const Vec2& p, double sign) const {
        return sign * std::exp(-nearest(p).log_f(p));
    }
    // local bracket {h, rho khat} = (a - dF(W)/F)/F for k+ = rho/F,
    // (dF(W)/F - a)/F for k- = -rho/F
    double local_m(const BranchDynamics& dyn, const Vec2& p, double sign) const {
        const auto& pr = nearest(p);
        double a = dyn.radial(p.x, p.y);
        double dl = pr.dlogf_w(dyn, p);
        return sign * (a - dl) * std::exp(-pr.log_f(p));
    }
};

// certify div_{F mu}(W) = dF(W)/F - a on ring samples; shrink radii if needed
void certify_patch(PatchSide& side, const BranchDynamics& dyn, double sign) {
    for (auto& pr : side.profiles) {
        for (int attempt = 0; attempt < 4; ++attempt) {
            double worst = -1e300, mmin = 1e300;
            for (const auto& s : pr.comp->samples) {
                for (int k = 0; k < 8; ++k) {
                    double ang = kTwoPi * k / 8;
                    for (double frac : {0.35, 0.7, 1.0}) {
                        Vec2 p{s.x + frac * pr.patch_radius * std::cos(ang),
                               s.y + frac * pr.patch_radius * std::sin(ang)};
                        double div_fmu = pr.dlogf_w(dyn, p) - dyn.radial(p.x, p.y);
                        // attracting side (sign=+1) needs div <= -c; repelling >= c
                        worst = std::max(worst, sign * div_fmu);
                        mmin = std::min(mmin, side.local_m(dyn, p, sign));
                    }
                }
            }
            if (worst < 0 && mmin > 0) {
                side.c_margin = std::min(side.c_margin == 0 ? 1e300 : side.c_margin, -worst);
                side.m_min = std::min(side.m_min, mmin);
                break;
            }
            pr.patch_radius *= 0.5;
            if (pr.patch_radius < 5e-3)
                throw NumericalError(
                    "construct_flow_method: could not certify a negative-divergence patch");
        }
    }
}

}  // namespace

EscapeFunction construct_flow_method(const FoliationAtlas& atlas, const SimpleStructure& st,
                                     const FlowConstructionOptions& opt, FlowConstruction* diag) {
    if (!st.verified)
        throw PreconditionError("construct_flow_method: structure not verified");

    EscapeFunction fn;
    fn.method = "flow";
    fn.cert_grid = opt.cert_grid;
    FlowConstruction rec;

    const int gn = opt.sample_grid;

    for (size_t b = 0; b < atlas.branch_count(); ++b) {
        BranchDynamics dyn = branch_dynamics(atlas.branch(b));

        PatchSide plus, minus;
        for (const auto& c : st.k_plus)
            if (c.branch == int(b) && c.manifold.empty())
                plus.profiles.push_back(build_profile(dyn, c, true, opt));
        for (const auto& c : st.k_minus)
            if (c.branch == int(b) && c.manifold.empty())
                minus.profiles.push_back(build_profile(dyn, c, false, opt));
        if (plus.profiles.empty() || minus.profiles.empty())
            throw PreconditionError("construct_flow_method: branch lacks attracting or repelling components");
        for (const auto& pr : plus.profiles)
            if (pr.lambda_bar >= 0)
                throw PreconditionError("construct_flow_method: K+ component fails weak hyperbolicity");
        for (const auto& pr : minus.profiles)
            if (pr.lambda_bar <= 0)
                throw PreconditionError("construct_flow_method: K- component fails weak hyperbolicity");

        certify_patch(plus, dyn, +1.0);
        certify_patch(minus, dyn, -1.0);
        rec.c_plus = plus.c_margin;
        rec.c_minus = minus.c_margin;

        const double r_plus = plus.radius(), r_minus = minus.radius();
        const double m_floor = 0.5 * std::min(plus.m_min, minus.m_min);

        auto m_blend = [&](const Vec2& p) {
            double dplus = plus.dist(p), dminus = minus.dist(p);
            double wp = 1.0 - smooth_step((dplus - r_plus) / r_plus);
            double wm = 1.0 - smooth_step((dminus - r_minus) / r_minus);
            double wsum = wp + wm;
            if (wsum > 1.0) {
                wp /= wsum;
                wm /= wsum;
                wsum = 1.0;
            }
            double mp = wp > 0 ? std::max(plus.local_m(dyn, p, +1.0), 0.1 * m_floor) : 0.0;
            double mm = wm > 0 ? std::max(minus.local_m(dyn, p, -1.0), 0.1 * m_floor) : 0.0;
            return wp * mp + wm * mm + (1.0 - wsum) * m_floor;
        };

        // orbit propagation: state (x, y, log rho, I = int m dt, T = int dt)
        auto propagate = [&](Vec2 p0, bool backward) {
            struct Node {
                Vec2 p;
                double logrho, I, T, s;
            };
            std::vector<Node> path;
            double dir = backward ? -1.0 : 1.0;
            Vec2 p = p0;
            double logrho = 0, I = 0, T = 0, s = 0;
            path.push_back({p, 0, 0, 0, 0});
            const double target = backward ? opt.enter_fraction * r_minus
                                           : opt.enter_fraction * r_plus;
            auto rhs = [&](const Vec2& q, double lr, std::array<double, 5>& out) {
                Vec2 v = dyn.field->value(q.x, q.y);
                double a = dyn.radial(q.x, q.y);
                double rho = std::exp(lr);
                double m = m_blend({wrap_unit(q.x), wrap_unit(q.y)});
                out = {dir * v.x, dir * v.y, dir * a, dir * m * rho, dir * rho};
            };
            double hstep = 2e-3;
            while (s < opt.s_max) {
                // classical RK4 with a modest fixed step (the fields are smooth
                // and the certification happens on the fitted result)
                std::array<double, 5> k1, k2, k3, k4;
                rhs(p, logrho, k1);
                rhs({p.x + 0.5 * hstep * k1[0], p.y + 0.5 * hstep * k1[1]},
                    logrho + 0.5 * hstep * k1[2], k2);
                rhs({p.x + 0.5 * hstep * k2[0], p.y + 0.5 * hstep * k2[1]},
                    logrho + 0.5 * hstep * k2[2], k3);
                rhs({p.x + hstep * k3[0], p.y + hstep * k3[1]}, logrho + hstep * k3[2], k4);
                p.x += hstep / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
                p.y += hstep / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
                logrho += hstep / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
                I += dir * hstep / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]);
                T += dir * hstep / 6 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4]);
                s += hstep;
                path.push_back({{wrap_unit(p.x), wrap_unit(p.y)}, logrho, I, T, s});
                Vec2 w{wrap_unit(p.x), wrap_unit(p.y)};
                double d = backward ? minus.dist(w) : plus.dist(w);
                if (d <= target) return std::make_pair(path, true);
            }
            return std::make_pair(path, false);
        };

        std::vector<double> lplus(size_t(gn) * gn, std::numeric_limits<double>::quiet_NaN());
        std::vector<double> lminus = lplus, tau = lplus, rho_c = lplus;
        double m0 = 1e300, Cmax = 0;

        std::vector<double> m0_cell(size_t(gn) * gn), C_cell(size_t(gn) * gn, 0.0);
        parallel_for(std::ptrdiff_t(size_t(gn) * gn), [&](std::ptrdiff_t idx) {
            double x = double(idx / gn) / gn, y = double(idx % gn) / gn;
            Vec2 p{x, y};
            m0_cell[size_t(idx)] = m_blend(p);

            auto [fwd, fcap] = propagate(p, false);
            auto [bwd, bcap] = propagate(p, true);
            double lp = std::numeric_limits<double>::quiet_NaN();
            double lm = lp;
            if (fcap) {
                const auto& e = fwd.back();
                lp = std::exp(e.logrho) * plus.khat(e.p, +1.0) - e.I;
            }
            if (bcap) {
                const auto& e = bwd.back();
                lm = std::exp(e.logrho) * minus.khat(e.p, -1.0) + e.I;
            }
            lplus[size_t(idx)] = lp;
            lminus[size_t(idx)] = lm;
            // crossing of {l+ = 0} along this orbit: l+(t) = lp + int_0^t m dt
            if (fcap) {
                double tt = std::numeric_limits<double>::quiet_NaN();
                double rc = std::numeric_limits<double>::quiet_NaN();
                if (lp <= 0) {
                    for (size_t i = 1; i < fwd.size(); ++i)
                        if (lp + fwd[i].I >= 0) {
                            rc = std::exp(fwd[i].logrho);
                            tt = -fwd[i].T;  // crossing in the future
                            break;
                        }
                } else if (bcap || !bwd.empty()) {
                    for (size_t i = 1; i < bwd.size(); ++i)
                        if (lp + bwd[i].I <= 0) {  // I is negative backward
                            rc = std::exp(bwd[i].logrho);
                            tt = -bwd[i].T;  // T negative backward: crossing in the past
                            break;
                        }
                }
                if (std::isfinite(tt) && std::isfinite(rc) && rc > 0) {
                    tau[size_t(idx)] = tt / rc;
                    rho_c[size_t(idx)] = rc;
                    if (std::isfinite(lp) && std::isfinite(lm))
                        C_cell[size_t(idx)] = std::fabs(lp - lm) / rc;
                }
            }
        });
        for (size_t i = 0; i < m0_cell.size(); ++i) {
            m0 = std::min(m0, m0_cell[i]);
            Cmax = std::max(Cmax, C_cell[i]);
        }
        if (!(m0 > 0)) throw NumericalError("construct_flow_method: blend m is not positive");
        double C = 1.1 * Cmax;
        double L = 4.0 * C / m0;
        rec.m0 = std::min(rec.m0 == 0 ? 1e300 : rec.m0, m0);
        rec.C = std::max(rec.C, C);
        rec.blend_length = 4.0 * rec.C / rec.m0;

        // cubic smoothstep on [0, L]: |psi'| <= 1.5/L = 0.375 m0/C < m0/(2C)
        auto psi = [&](double t) {
            double u = std::clamp(t / L, 0.0, 1.0);
            return u * u * (3 - 2 * u);
        };

        std::vector<double> khat(size_t(gn) * gn);
        for (size_t i = 0; i < khat.size(); ++i) {
            double lp = lplus[i], lm = lminus[i];
            if (std::isfinite(lp) && std::isfinite(lm)) {
                double w = std::isfinite(tau[i]) ? psi(tau[i]) : (lp > 0 ? 1.0 : 0.0);
                khat[i] = (1 - w) * lm + w * lp;
            } else if (std::isfinite(lp)) {
                khat[i] = lp;
            } else if (std::isfinite(lm)) {
                khat[i] = lm;
            } else {
                throw NumericalError("construct_flow_method: orbit reached neither patch");
            }
        }
        rec.khat.push_back(khat);
        fn.g.push_back(TrigPoly::fit(khat, gn, opt.fit_order));
    }

    std::vector<BranchDynamics> dyn;
    for (size_t b = 0; b < atlas.branch_count(); ++b) dyn.push_back(branch_dynamics(atlas.branch(b)));
    auto bm = bracket_grid_min(fn, dyn, opt.cert_grid);
    fn.delta = bm.min_value;
    if (!(fn.delta > 0))
        throw NumericalError("construct_flow_method: certification failed (margin " +
                             std::to_string(bm.min_value) + " at branch " +
                             std::to_string(bm.branch) + ")");
    if (diag) *diag = rec;
    return fn;
}

// ----- radial source ---------------------------------------------------------------------

RadialSourceReport radial_source_check(const EscapeFunction& k, const FoliationAtlas& atlas,
                                       const SimpleStructure& st, int n_seeds, double t_back,
                                       uint64_t rng_seed) {
    RadialSourceReport rep;
    rep.min_exponent = 1e300;
    rep.min_prefactor = 1e300;
    SplitMix64 rng = rng_stream(rng_seed, "radial-source");

    // K- components grouped by branch
    std::vector<const Component*> km;
    for (const auto& c : st.k_minus) km.push_back(&c);
    if (km.empty()) throw PreconditionError("radial_source_check: empty K-");

    int made = 0, guard = 0;
    while (made < n_seeds && guard++ < 50 * n_seeds) {
        const Component* comp = km[size_t(rng.uniform() * km.size()) % km.size()];
        size_t b = size_t(comp->branch);
        const Vec2& base = comp->samples[size_t(rng.uniform() * comp->samples.size()) %
                                         comp->samples.size()];
        double ang = rng.uniform(0, kTwoPi);
        double off = rng.uniform(0.01, 0.03);
        Vec2 p{wrap_unit(base.x + off * std::cos(ang)), wrap_unit(base.y + off * std::sin(ang))};
        if (k.value(b, p.x, p.y) >= -1e-3) continue;  // need k < 0 near Gamma-
        if (st.dist_to_kminus(int(b), p) < 5e-3) continue;  // must be off K- itself

        const AtlasBranch& field = atlas.branch(b);
        // backward flow of r = -k h restricted to the shell:
        //   dtheta/dt = |khat| W, dlog rho/dt = |khat| a   (reversed)
        double x = p.x, y = p.y, logrho = 0;
        const double dt = 1e-3;
        int nsteps = int(t_back / dt);
        std::vector<double> ts, logk;
        bool monotone = true;
        double prev = std::log(std::fabs(k.value(b, x, y)));
        ts.push_back(0);
        logk.push_back(prev);
        for (int i = 1; i <= nsteps; ++i) {
            auto rhs = [&](double qx, double qy, double& vx, double& vy, double& vr) {
                double kh = std::fabs(k.value(b, qx, qy));
                Vec2 w = field.value(qx, qy);
                double a = field.radial(qx, qy);
                vx = -kh * w.x;
                vy = -kh * w.y;
                vr = -kh * a;
            };
            double k1x, k1y, k1r, k2x, k2y, k2r, k3x, k3y, k3r, k4x, k4y, k4r;
            rhs(x, y, k1x, k1y, k1r);
            rhs(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, k2x, k2y, k2r);
            rhs(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, k3x, k3y, k3r);
            rhs(x + dt * k3x, y + dt * k3y, k4x, k4y, k4r);
            x += dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
            y += dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
            logrho += dt / 6 * (k1r + 2 * k2r + 2 * k3r + k4r);
            if (i % 50 == 0) {
                double lk = logrho + std::log(std::fabs(k.value(b, x, y)));
                if (lk < prev - 1e-9) monotone = false;
                prev = lk;
                ts.push_back(i * dt);
                logk.push_back(lk);
            }
        }
        auto fitr = fit_line(ts, logk);
        RadialSourceReport::SeedResult sr;
        sr.exponent = fitr.slope;
        sr.r2 = fitr.r2;
        sr.monotone = monotone;
        sr.final_dist = st.dist_to_kminus(int(b), {wrap_unit(x), wrap_unit(y)});
        rep.all_monotone = rep.all_monotone && monotone;
        rep.min_exponent = std::min(rep.min_exponent, sr.exponent);
        for (size_t i = 0; i < ts.size(); ++i)
            rep.min_prefactor =
                std::min(rep.min_prefactor, std::exp(logk[i] - fitr.slope * ts[i]));
        rep.seeds.push_back(sr);
        ++made;
    }
    if (made < n_seeds)
        throw PreconditionError("radial_source_check: could not place the requested seeds");
    return rep;
}

}  // namespace specwave
