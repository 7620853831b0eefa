#pragma once

// Test-only reference solutions. Nothing here calls the library's integrator
// or matcher; everything is closed form or a direct linear solve.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// x' = diag(rates) x.
inline Vec linear_flow(const Vec& rates, const Vec& x, double t) {
    return (rates.array() * t).exp().matrix().cwiseProduct(x);
}

inline Mat linear_tangent(const Vec& rates, double t) { return Mat((rates.array() * t).exp().matrix().asDiagonal()); }

/// saddle_cycle in cylindrical form: r' = r(1 - r^2), theta' = 1, z' = z.
inline Vec saddle_cycle_flow(const Vec& x, double t) {
    const double r0 = std::hypot(x[0], x[1]);
    const double th = std::atan2(x[1], x[0]) + t;
    const double r = r0 == 0.0 ? 0.0 : 1.0 / std::sqrt(1.0 + (1.0 / (r0 * r0) - 1.0) * std::exp(-2.0 * t));
    Vec y(3);
    y << r * std::cos(th), r * std::sin(th), x[2] * std::exp(t);
    return y;
}

/// Bounded correction of a chain x_0..x_m of a diagonal linear map A = exp(diag(rates) step)
/// to a true orbit: w_{i+1} = A w_i - g_i with g_i = x_{i+1} - A x_i, stable
/// coordinates solved forward from w_0 = 0, unstable ones backward from w_m = 0.
/// Returns the corrected points x_i + w_i.
inline std::vector<Vec> green_function_orbit(const Vec& rates, double step, const std::vector<Vec>& x) {
    const std::size_t m = x.size() - 1;
    const Vec a = (rates.array() * step).exp().matrix();
    std::vector<Vec> w(m + 1, Vec::Zero(rates.size()));
    for (Eigen::Index c = 0; c < rates.size(); ++c) {
        auto g = [&](std::size_t i) { return x[i + 1][c] - a[c] * x[i][c]; };
        if (rates[c] < 0.0) {
            for (std::size_t i = 0; i < m; ++i) w[i + 1][c] = a[c] * w[i][c] - g(i);
        } else {
            for (std::size_t i = m; i-- > 0;) w[i][c] = (w[i + 1][c] + g(i)) / a[c];
        }
    }
    std::vector<Vec> y(m + 1);
    for (std::size_t i = 0; i <= m; ++i) y[i] = x[i] + w[i];
    return y;
}

/// Point at time t of the oracle orbit given by its samples at integer multiples of step.
inline Vec green_orbit_at(const Vec& rates, double step, const std::vector<Vec>& y, double t) {
    auto i = static_cast<std::size_t>(std::floor(t / step));
    if (i >= y.size() - 1) i = y.size() - 1;
    return linear_flow(rates, y[i], t - static_cast<double>(i) * step);
}

/// Whether the cell [lo, hi) (half-open in z, closed in x, y) meets the circle r = 1, z = 0.
inline bool box_meets_unit_circle(const Vec& lo, const Vec& hi) {
    if (!(lo[2] <= 0.0 && 0.0 < hi[2])) return false;
    const double nx = std::clamp(0.0, lo[0], hi[0]), ny = std::clamp(0.0, lo[1], hi[1]);
    const double rmin = std::hypot(nx, ny);
    double rmax = 0.0;
    for (double cx : {lo[0], hi[0]})
        for (double cy : {lo[1], hi[1]}) rmax = std::max(rmax, std::hypot(cx, cy));
    return rmin <= 1.0 && 1.0 <= rmax;
}

inline Vec uniform_in_box(std::mt19937_64& rng, const Vec& lo, const Vec& hi) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) x[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
    return x;
}

} // namespace oracle
