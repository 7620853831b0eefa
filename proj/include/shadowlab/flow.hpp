#pragma once

// Vector fields on Euclidean charts (optionally with periodic coordinates)
// and adaptive integration of the flow X_t and its tangent flow DX_t.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shadowlab/errors.hpp"

namespace shadowlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Per-coordinate chart kind: a plain real line or an angle with a period.
struct CoordKind {
    bool angle = false;
    double period = 0.0;

    static CoordKind linear() { return {}; }
    static CoordKind angular(double period) { return {true, period}; }
};

/// A scalar first integral Q with a Lipschitz bound, valid inside a ball.
struct ConservedQuantity {
    std::function<double(const Vec&)> value;
    double lipschitz = 1.0;
    Vec center;                 // empty means the origin
    double valid_radius = kInf; // conservation holds for |x - center| <= radius
    std::string description;
};

/// Flow generator: dimension, field, Jacobian, chart layout and an optional
/// conserved quantity.
struct VectorField {
    std::string name;
    int dim = 0;
    std::function<Vec(const Vec&)> field;
    std::function<Mat(const Vec&)> jacobian;
    std::vector<CoordKind> coords; // empty: all coordinates linear
    std::optional<ConservedQuantity> conserved;

    Vec operator()(const Vec& x) const { return field(x); }

    bool is_angle(int i) const {
        return !coords.empty() && coords[static_cast<std::size_t>(i)].angle;
    }
    double period(int i) const { return coords[static_cast<std::size_t>(i)].period; }
};

/// a - b, with angle coordinates reduced to the shortest arc.
inline Vec difference(const VectorField& spec, const Vec& a, const Vec& b) {
    Vec d = a - b;
    if (spec.coords.empty()) return d;
    for (int i = 0; i < d.size(); ++i) {
        if (!spec.is_angle(i)) continue;
        const double p = spec.period(i);
        double r = std::fmod(d[i], p);
        if (r > 0.5 * p) r -= p;
        if (r <= -0.5 * p) r += p;
        d[i] = r;
    }
    return d;
}

/// Chart distance: Euclidean with shortest-arc differences on angles.
inline double distance(const VectorField& spec, const Vec& a, const Vec& b) {
    return difference(spec, a, b).norm();
}

/// Reduce angle coordinates into [0, period).
inline Vec canonical(const VectorField& spec, Vec x) {
    for (int i = 0; i < x.size() && !spec.coords.empty(); ++i) {
        if (!spec.is_angle(i)) continue;
        const double p = spec.period(i);
        x[i] -= p * std::floor(x[i] / p);
    }
    return x;
}

/// Axis-aligned box in chart coordinates.
struct Box {
    Vec lo;
    Vec hi;

    Eigen::Index dim() const { return lo.size(); }
    Vec center() const { return 0.5 * (lo + hi); }
    bool contains(const Vec& x) const {
        return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    }
    static Box around(const Vec& c, double half_width) {
        return {c.array() - half_width, c.array() + half_width};
    }
};

struct FlowOptions {
    double tol = 1e-10;          // local error per step, mixed abs/rel
    double max_norm = 1e6;       // divergence guard on the base state
    std::size_t max_steps = 4'000'000;
    bool truncate_on_divergence = false; // stop quietly instead of throwing
};

namespace detail {

using OdeRhs = std::function<void(const Vec& y, Vec& dy)>;

/// Dormand-Prince 5(4) dense output on one accepted step.
struct DenseStep {
    double t0 = 0.0;
    double h = 0.0;
    Mat coeff; // columns r1..r5 of the continuous extension
};

class DenseSolution {
public:
    double t_begin = 0.0;
    double t_end = 0.0;
    Vec y_begin;
    Vec y_end;
    std::vector<DenseStep> steps;
    bool truncated = false;
    double tol = 0.0;

    double direction() const { return t_end >= t_begin ? 1.0 : -1.0; }

    bool covers(double t) const {
        return direction() > 0 ? (t >= t_begin && t <= t_end)
                               : (t <= t_begin && t >= t_end);
    }

    Vec at(double t) const {
        if (t == t_begin) return y_begin;
        if (t == t_end) return y_end;
        if (!covers(t)) {
            throw PreconditionError("dense output queried outside integrated span");
        }
        const double dir = direction();
        // steps are ordered along the direction of integration
        auto it = std::upper_bound(steps.begin(), steps.end(), t,
                                   [dir](double value, const DenseStep& s) {
                                       return dir * value < dir * s.t0;
                                   });
        const DenseStep& s = (it == steps.begin()) ? steps.front() : *std::prev(it);
        const double theta = (t - s.t0) / s.h;
        const double theta1 = 1.0 - theta;
        return s.coeff.col(0) +
               theta * (s.coeff.col(1) +
                        theta1 * (s.coeff.col(2) +
                                  theta * (s.coeff.col(3) + theta1 * s.coeff.col(4))));
    }
};

inline double rms_scaled(const Vec& v, const Vec& scale) {
    return std::sqrt((v.array() / scale.array()).square().mean());
}

inline DenseSolution solve(const OdeRhs& f, const Vec& y0, double t0, double t1,
                           const FlowOptions& opt, Eigen::Index guard_dim) {
    // Dormand-Prince coefficients.
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                     a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                     a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                     a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                     e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    constexpr double d1 = -12715105075.0 / 11282082432.0,
                     d3 = 87487479700.0 / 32700410799.0,
                     d4 = -10690763975.0 / 1880347072.0,
                     d5 = 701980252875.0 / 199316789632.0,
                     d6 = -1453857185.0 / 822651844.0,
                     d7 = 69997945.0 / 29380423.0;
    (void)c2; (void)c3; (void)c4; (void)c5;

    if (!std::isfinite(t0) || !std::isfinite(t1)) {
        throw PreconditionError("integration span must be finite");
    }
    if (!(opt.tol > 0.0)) throw PreconditionError("tolerance must be positive");

    DenseSolution sol;
    sol.t_begin = t0;
    sol.t_end = t1;
    sol.y_begin = y0;
    sol.y_end = y0;
    sol.tol = opt.tol;
    if (t0 == t1) return sol;

    const double dir = t1 > t0 ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    const double atol = opt.tol, rtol = opt.tol;
    const Eigen::Index n = y0.size();

    Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), err(n), sc(n);
    f(y0, k1);

    // Initial step size (Hairer-Norsett-Wanner heuristic).
    double h;
    {
        sc = atol + rtol * y0.array().abs();
        const double dn0 = rms_scaled(y0, sc);
        const double dn1 = rms_scaled(k1, sc);
        double h0 = (dn0 < 1e-5 || dn1 < 1e-5) ? 1e-6 : 0.01 * dn0 / dn1;
        h0 = std::min(h0, span);
        ytmp = y0 + dir * h0 * k1;
        f(ytmp, k2);
        const double dn2 = rms_scaled(k2 - k1, sc) / h0;
        const double dmax = std::max(dn1, dn2);
        const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                        : std::pow(0.01 / dmax, 1.0 / 5.0);
        h = std::min({100.0 * h0, h1, span});
    }

    double t = t0;
    Vec y = y0;
    std::size_t nsteps = 0;
    bool last_rejected = false;
    while (dir * (t1 - t) > 0.0) {
        if (++nsteps > opt.max_steps) {
            throw ConvergenceError("integrator exceeded the step cap");
        }
        if (h < 1e-14 * std::max(1.0, std::abs(t))) {
            throw ConvergenceError("integrator step size underflow");
        }
        bool final_step = false;
        if (h >= std::abs(t1 - t)) {
            h = std::abs(t1 - t);
            final_step = true;
        }
        const double hs = dir * h;
        ytmp = y + hs * (a21 * k1);
        f(ytmp, k2);
        ytmp = y + hs * (a31 * k1 + a32 * k2);
        f(ytmp, k3);
        ytmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
        f(ytmp, k4);
        ytmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        f(ytmp, k5);
        ytmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        f(ytmp, k6);
        ynew = y + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        f(ynew, k7);
        err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        sc = atol + rtol * y.array().abs().max(ynew.array().abs());
        double en = rms_scaled(err, sc);
        if (!std::isfinite(en)) en = 1e10;

        if (en <= 1.0) {
            const double base_norm = ynew.head(guard_dim).norm();
            if (!std::isfinite(base_norm) || base_norm > opt.max_norm) {
                if (opt.truncate_on_divergence) {
                    sol.truncated = true;
                    break;
                }
                throw DivergenceError("state norm exceeded the divergence bound", t + hs);
            }
            DenseStep step;
            step.t0 = t;
            step.h = hs;
            step.coeff.resize(n, 5);
            const Vec ydiff = ynew - y;
            const Vec bspl = hs * k1 - ydiff;
            step.coeff.col(0) = y;
            step.coeff.col(1) = ydiff;
            step.coeff.col(2) = bspl;
            step.coeff.col(3) = ydiff - hs * k7 - bspl;
            step.coeff.col(4) = hs * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
            sol.steps.push_back(std::move(step));

            t = final_step ? t1 : t + hs;
            y = ynew;
            k1 = k7;
            double fac = 0.9 * std::pow(std::max(en, 1e-10), -0.2);
            fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 5.0);
            h *= fac;
            last_rejected = false;
        } else {
            h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
            last_rejected = true;
        }
    }
    sol.t_end = t;
    sol.y_end = y;
    return sol;
}

} // namespace detail

/// Dense-output trajectory of the base flow.
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(std::string field_name, detail::DenseSolution sol)
        : field_name_(std::move(field_name)), sol_(std::move(sol)) {}

    const std::string& field_name() const { return field_name_; }
    const Vec& initial() const { return sol_.y_begin; }
    const Vec& final_state() const { return sol_.y_end; }
    double t_begin() const { return sol_.t_begin; }
    double t_end() const { return sol_.t_end; }
    double tol() const { return sol_.tol; }
    bool truncated() const { return sol_.truncated; }
    bool covers(double t) const { return sol_.covers(t); }
    Vec at(double t) const { return sol_.at(t); }

    /// Accepted step times, t_begin first.
    std::vector<double> time_grid() const {
        std::vector<double> ts;
        ts.reserve(sol_.steps.size() + 1);
        for (const auto& s : sol_.steps) ts.push_back(s.t0);
        ts.push_back(sol_.t_end);
        return ts;
    }

private:
    std::string field_name_;
    detail::DenseSolution sol_;
};

/// Integrate the flow from x0 over [t0, t1] (t1 < t0 integrates backwards).
inline Trajectory integrate(const VectorField& spec, const Vec& x0, double t0, double t1,
                            const FlowOptions& opt = {}) {
    if (x0.size() != spec.dim) throw PreconditionError("point dimension mismatch");
    detail::OdeRhs rhs = [&spec](const Vec& y, Vec& dy) { dy = spec.field(y); };
    return Trajectory(spec.name, detail::solve(rhs, x0, t0, t1, opt, spec.dim));
}

/// X_t(x), for either sign of t.
inline Vec flow_at(const VectorField& spec, const Vec& x, double t, const FlowOptions& opt = {}) {
    if (t == 0.0) return x;
    return integrate(spec, x, 0.0, t, opt).final_state();
}

/// Joint solution of the flow and the variational equation V' = DX(x(s)) V.
class TangentTrajectory {
public:
    TangentTrajectory(int dim, detail::DenseSolution sol) : dim_(dim), sol_(std::move(sol)) {}

    int dim() const { return dim_; }
    double t_end() const { return sol_.t_end; }
    bool truncated() const { return sol_.truncated; }
    bool covers(double t) const { return sol_.covers(t); }

    Vec state_at(double t) const { return sol_.at(t).head(dim_); }
    Mat matrix_at(double t) const {
        const Vec y = sol_.at(t);
        return Eigen::Map<const Mat>(y.data() + dim_, dim_, dim_);
    }

private:
    int dim_;
    detail::DenseSolution sol_;
};

inline TangentTrajectory integrate_tangent(const VectorField& spec, const Vec& x, double t,
                                           const FlowOptions& opt = {}) {
    const int n = spec.dim;
    if (x.size() != n) throw PreconditionError("point dimension mismatch");
    Vec y0(n + n * n);
    y0.head(n) = x;
    Eigen::Map<Mat>(y0.data() + n, n, n).setIdentity();
    detail::OdeRhs rhs = [&spec, n](const Vec& y, Vec& dy) {
        dy.resize(y.size());
        const Vec base = y.head(n);
        dy.head(n) = spec.field(base);
        const Mat J = spec.jacobian(base);
        Eigen::Map<Mat>(dy.data() + n, n, n) = J * Eigen::Map<const Mat>(y.data() + n, n, n);
    };
    return TangentTrajectory(n, detail::solve(rhs, y0, 0.0, t, opt, n));
}

/// D_x X_t.
inline Mat tangent_flow(const VectorField& spec, const Vec& x, double t, const FlowOptions& opt = {}) {
    if (t == 0.0) return Mat::Identity(spec.dim, spec.dim);
    return integrate_tangent(spec, x, t, opt).matrix_at(t);
}

} // namespace shadowlab
