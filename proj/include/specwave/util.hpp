#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace specwave {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// ----- errors ---------------------------------------------------------------
// Exit-code mapping in the CLI: precondition -> 2, numerical -> 3, config -> 4.

struct PreconditionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----- torus / angle helpers ------------------------------------------------

// wrap to [0,1)
inline double wrap_unit(double x) {
    double r = x - std::floor(x);
    return (r >= 1.0) ? 0.0 : r;
}

// wrap to [0, 2pi)
inline double wrap_angle(double a) {
    double r = a - kTwoPi * std::floor(a / kTwoPi);
    return (r >= kTwoPi) ? 0.0 : r;
}

// distance on the unit circle R/Z
inline double circle_dist(double a, double b) {
    double d = std::fabs(wrap_unit(a) - wrap_unit(b));
    return std::min(d, 1.0 - d);
}

// distance of angles in radians, on R/2piZ
inline double angle_dist(double a, double b) {
    double d = std::fabs(wrap_angle(a) - wrap_angle(b));
    return std::min(d, kTwoPi - d);
}

// euclidean distance on the unit 2-torus
inline double torus_dist(double x1, double y1, double x2, double y2) {
    double dx = circle_dist(x1, x2), dy = circle_dist(y1, y2);
    return std::hypot(dx, dy);
}

// ----- small linear algebra ---------------------------------------------------

struct Vec2 {
    double x = 0, y = 0;
    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}
    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
};
inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

struct Mat2 {
    // row-major [[a,b],[c,d]]
    double a = 0, b = 0, c = 0, d = 0;
    double trace() const { return a + d; }
    double det() const { return a * d - b * c; }
    Vec2 apply(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    // eigenvalues, possibly complex
    std::pair<std::complex<double>, std::complex<double>> eigenvalues() const {
        double tr = trace(), dt = det();
        std::complex<double> disc = std::sqrt(std::complex<double>(tr * tr / 4.0 - dt));
        return {tr / 2.0 + disc, tr / 2.0 - disc};
    }
    // eigenvector for a real eigenvalue
    Vec2 eigenvector(double lambda) const {
        // rows of (A - lambda I) are orthogonal to the eigenvector's dual; pick the
        // larger row for conditioning
        double r1x = a - lambda, r1y = b;
        double r2x = c, r2y = d - lambda;
        Vec2 v;
        if (r1x * r1x + r1y * r1y >= r2x * r2x + r2y * r2y)
            v = {-r1y, r1x};
        else
            v = {-r2y, r2x};
        double n = v.norm();
        if (n == 0) return {1, 0};
        return v * (1.0 / n);
    }
};

// ----- deterministic RNG ------------------------------------------------------
// Counter-based: every consumer derives its own stream from (seed, tag), so the
// draw order of one component never disturbs another.

struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t s) : state(s) {}
    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    // uniform in [0,1)
    double uniform() { return (next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline SplitMix64 rng_stream(uint64_t seed, const std::string& tag) {
    SplitMix64 mix(seed ^ fnv1a(tag));
    mix.next();
    return mix;
}

// ----- least squares line fit --------------------------------------------------

struct LineFit {
    double slope = 0, intercept = 0, r2 = 0;
};

inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw PreconditionError("fit_line: need >= 2 samples of equal length");
    size_t n = xs.size();
    double sx = 0, sy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0) throw PreconditionError("fit_line: degenerate abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = (syy == 0) ? 1.0 : (sxy * sxy) / (sxx * syy);
    return f;
}

// ----- smooth cutoffs -----------------------------------------------------------

// C^inf transition: 0 for t<=0, 1 for t>=1
inline double smooth_step(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    double ea = std::exp(-1.0 / t);
    double eb = std::exp(-1.0 / (1.0 - t));
    return ea / (ea + eb);
}

// low-frequency cutoff profile: 0 on [0,1/2], 1 on [1,inf)
inline double cutoff_chi(double t) { return smooth_step((t - 0.5) / 0.5); }

// compactly supported C^inf bump on [-1,1], value 1 at 0
inline double bump(double t) {
    double s = 1.0 - t * t;
    if (s <= 0.0) return 0.0;
    return std::exp(1.0 - 1.0 / s);
}

}  // namespace specwave
