#pragma once

// Normal frames, the linear Poincare flow Psi_t as a frame-to-frame cocycle,
// Poincare section maps, Newton's method for periodic orbits and
// hyperbolicity classification of singularities and periodic orbits.

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shadowlab/flow.hpp"

namespace shadowlab {

inline constexpr double kSingularThreshold = 1e-10;

/// Orthonormal basis (n x (n-1)) of N_x = X(x)^perp.
///
/// Deterministic: the reference basis vector most aligned with X(x) is
/// dropped and the remaining ones are Gram-Schmidt orthogonalized, in order,
/// against X(x).
inline Mat normal_frame_of(const Vec& direction) {
    const Eigen::Index n = direction.size();
    const double len = direction.norm();
    if (!(len > kSingularThreshold)) {
        throw SingularityError("normal frame requested at a singularity");
    }
    const Vec u = direction / len;
    Eigen::Index pivot;
    u.cwiseAbs().maxCoeff(&pivot);
    Mat basis(n, n);
    basis.col(0) = u;
    Eigen::Index filled = 1;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == pivot) continue;
        Vec e = Vec::Unit(n, j);
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index k = 0; k < filled; ++k) e -= basis.col(k).dot(e) * basis.col(k);
        }
        basis.col(filled++) = e.normalized();
    }
    return basis.rightCols(n - 1);
}

inline Mat normal_frame(const VectorField& spec, const Vec& x) {
    return normal_frame_of(spec.field(x));
}

/// Psi_t at x in the frames of N_x and N_{X_t(x)}.
struct LinearPoincare {
    Mat psi;           // (n-1) x (n-1)
    Mat frame_from;    // frame at x
    Mat frame_to;      // frame at X_t(x)
    Vec end;           // X_t(x)
    Mat tangent;       // D_x X_t
    double direction_residual = 0.0; // |DX_t X(x) - X(X_t x)| / (1 + |X(X_t x)|)
};

inline LinearPoincare linear_poincare_from(const VectorField& spec, const Vec& x, double t,
                                           const Vec& end, const Mat& tangent) {
    LinearPoincare lp;
    lp.frame_from = normal_frame(spec, x);
    lp.frame_to = normal_frame(spec, end);
    lp.end = end;
    lp.tangent = tangent;
    lp.psi = lp.frame_to.transpose() * tangent * lp.frame_from;
    const Vec fend = spec.field(end);
    lp.direction_residual = (tangent * spec.field(x) - fend).norm() / (1.0 + fend.norm());
    (void)t;
    return lp;
}

inline LinearPoincare linear_poincare(const VectorField& spec, const Vec& x, double t,
                                      const FlowOptions& opt = {}) {
    if (t == 0.0) {
        return linear_poincare_from(spec, x, 0.0, x, Mat::Identity(spec.dim, spec.dim));
    }
    const TangentTrajectory tt = integrate_tangent(spec, x, t, opt);
    return linear_poincare_from(spec, x, t, tt.state_at(t), tt.matrix_at(t));
}

/// Orthonormal frames along an orbit with the frame-to-frame transitions of Psi.
struct NormalCocycle {
    VectorField spec;
    std::vector<double> times;     // s_0 = 0 < ... < s_m
    std::vector<Vec> points;       // X_{s_k}(x)
    std::vector<Mat> frames;       // F_k
    std::vector<Mat> transitions;  // P_k : N_k -> N_{k+1}, size m

    std::size_t size() const { return times.size(); }

    /// Psi from sample i to sample j (i <= j) by composing transitions.
    Mat compose(std::size_t i, std::size_t j) const {
        const auto d = frames.front().cols();
        Mat acc = Mat::Identity(d, d);
        for (std::size_t k = i; k < j; ++k) acc = transitions[k] * acc;
        return acc;
    }
};

/// Sample the linear Poincare flow along the orbit of x at the given times
/// (strictly increasing, first entry 0).
inline NormalCocycle build_cocycle_at(const VectorField& spec, const Vec& x,
                                      const std::vector<double>& times,
                                      const FlowOptions& opt = {}) {
    if (times.empty() || times.front() != 0.0) {
        throw PreconditionError("cocycle sample times must start at 0");
    }
    NormalCocycle c;
    c.spec = spec;
    c.times = times;
    c.points.push_back(x);
    c.frames.push_back(normal_frame(spec, x));
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        const double dt = times[k + 1] - times[k];
        if (!(dt > 0.0)) throw PreconditionError("cocycle sample times must increase");
        // restart the variational equation each interval to keep V bounded
        const TangentTrajectory tt = integrate_tangent(spec, c.points.back(), dt, opt);
        const Vec next = tt.state_at(dt);
        const Mat F = normal_frame(spec, next);
        c.transitions.push_back(F.transpose() * tt.matrix_at(dt) * c.frames.back());
        c.points.push_back(next);
        c.frames.push_back(F);
    }
    return c;
}

inline NormalCocycle build_cocycle(const VectorField& spec, const Vec& x, double total_time,
                                   double step, const FlowOptions& opt = {}) {
    if (!(total_time > 0.0) || !(step > 0.0)) {
        throw PreconditionError("cocycle length and step must be positive");
    }
    const auto m = static_cast<std::size_t>(std::ceil(total_time / step - 1e-9));
    std::vector<double> times(m + 1);
    for (std::size_t k = 0; k <= m; ++k) times[k] = std::min(total_time, static_cast<double>(k) * step);
    return build_cocycle_at(spec, x, times, opt);
}

/// Affine normal disc through base with unit normal.
struct Section {
    Vec base;
    Vec normal;
    double radius = 0.5;
};

inline Section section_at(const VectorField& spec, const Vec& x, double radius = 0.5) {
    const Vec f = spec.field(x);
    if (!(f.norm() > kSingularThreshold)) throw SingularityError("section requested at a singularity");
    return Section{x, f.normalized(), radius};
}

struct SectionHit {
    Vec point;        // X_tau(y) on the target section
    double tau = 0.0;
    bool valid = false; // 2 t_hint / 3 < tau < 4 t_hint / 3
};

struct SectionOptions {
    FlowOptions flow{1e-12};
    double transversality = 1e-6;
    int scan_per_step = 4;
};

/// First crossing of `target` in the flow direction within (t_hint/3, 2 t_hint].
inline SectionHit hit_section(const VectorField& spec, const Vec& y, const Section& target,
                              double t_hint, const SectionOptions& opt = {}) {
    if (!(t_hint > 0.0)) throw PreconditionError("section return time hint must be positive");
    const Trajectory traj = integrate(spec, y, 0.0, 2.0 * t_hint, opt.flow);
    auto g = [&](double s) { return difference(spec, traj.at(s), target.base).dot(target.normal); };

    std::vector<double> grid;
    const std::vector<double> steps = traj.time_grid();
    for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
        for (int j = 0; j < opt.scan_per_step; ++j) {
            grid.push_back(steps[k] + (steps[k + 1] - steps[k]) * j / opt.scan_per_step);
        }
    }
    grid.push_back(steps.back());
    const double t_min = t_hint / 3.0;

    double prev_s = grid.front();
    double prev_g = g(prev_s);
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double s = grid[k];
        const double gs = g(s);
        if (s > t_min && prev_g < 0.0 && gs >= 0.0) {
            // bracketed crossing in the flow direction: refine by bisection/secant
            double lo = std::max(prev_s, t_min), hi = s;
            double glo = g(lo), ghi = gs;
            if (glo < 0.0) {
                for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
                    double mid = lo - glo * (hi - lo) / (ghi - glo);
                    if (!(mid > lo && mid < hi) || it % 3 == 2) mid = 0.5 * (lo + hi);
                    const double gm = g(mid);
                    if (gm < 0.0) { lo = mid; glo = gm; } else { hi = mid; ghi = gm; }
                    if (std::abs(gm) < 1e-15) { lo = hi = mid; break; }
                }
                const double tau = 0.5 * (lo + hi);
                const Vec p = traj.at(tau);
                if (distance(spec, p, target.base) <= target.radius) {
                    const Vec fp = spec.field(p);
                    if (std::abs(fp.dot(target.normal)) < opt.transversality * std::max(fp.norm(), 1e-300)) {
                        throw ConvergenceError("tangential section crossing");
                    }
                    SectionHit hit;
                    hit.point = p;
                    hit.tau = tau;
                    hit.valid = tau > 2.0 * t_hint / 3.0 && tau < 4.0 * t_hint / 3.0;
                    return hit;
                }
            }
        }
        prev_s = s;
        prev_g = gs;
    }
    throw ConvergenceError("no section crossing within twice the return-time hint");
}

/// Poincare map f_{x,t}: from the normal disc at x to the normal disc at X_t(x).
inline SectionHit section_map(const VectorField& spec, const Vec& x, const Vec& y, double t_hint,
                              const SectionOptions& opt = {}) {
    const Vec z = flow_at(spec, x, t_hint, opt.flow);
    return hit_section(spec, y, section_at(spec, z), t_hint, opt);
}

struct PeriodicOrbit {
    Vec point;
    double period = 0.0;
    int iterations = 0;
    std::vector<double> residuals; // |f(p_k) - p_k| per iterate
};

struct NewtonOptions {
    SectionOptions section;
    int max_iterations = 30;
    double residual_tol = 1e-9;
    double singular_tol = 1e-6; // relative smallest singular value of DR - I
};

/// Newton iteration on the return map of the normal section through x_guess.
inline PeriodicOrbit find_periodic_newton(const VectorField& spec, const Vec& x_guess, double T_guess,
                                          const NewtonOptions& opt = {}) {
    const Section sigma = section_at(spec, x_guess, 1.0);
    const Mat F = normal_frame_of(sigma.normal);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(F.cols());
    double T = T_guess;
    PeriodicOrbit out;
    for (int it = 0; it <= opt.max_iterations; ++it) {
        const Vec y = sigma.base + F * w;
        const SectionHit hit = hit_section(spec, y, sigma, T, opt.section);
        T = hit.tau;
        const Vec r_full = difference(spec, hit.point, y);
        const double res = r_full.norm();
        out.residuals.push_back(res);
        if (res <= opt.residual_tol) {
            out.point = y;
            out.period = hit.tau;
            out.iterations = it;
            return out;
        }
        if (it == opt.max_iterations) break;
        // D(return map) with the crossing-time correction, in section coordinates
        const Mat V = tangent_flow(spec, y, hit.tau, opt.section.flow);
        const Vec fp = spec.field(hit.point);
        const Mat proj = Mat::Identity(spec.dim, spec.dim) - fp * sigma.normal.transpose() / fp.dot(sigma.normal);
        const Mat DR = F.transpose() * proj * V * F;
        const Mat G = DR - Mat::Identity(F.cols(), F.cols());
        Eigen::JacobiSVD<Mat> svd(G);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) <= opt.singular_tol * std::max(1.0, sv(0))) {
            throw ConvergenceError("Newton Jacobian singular: return map has a multiplier near 1");
        }
        const Vec residual = F.transpose() * r_full;
        w -= G.fullPivLu().solve(residual);
    }
    throw ConvergenceError("Newton iteration for the periodic orbit did not converge");
}

enum class CriticalKind { singularity, periodic };

struct CriticalElementReport {
    CriticalKind kind = CriticalKind::singularity;
    Vec location;
    double period = 0.0;
    std::vector<std::complex<double>> spectrum; // eigenvalues or Floquet multipliers
    std::vector<double> margins;
    double threshold = 1e-6;
    bool hyperbolic = false;
    int index = 0;                 // stable eigenvalue / multiplier count
    int stable_manifold_dim = 0;   // index + 1 for periodic orbits (flow direction)
};

struct ClassifyOptions {
    double threshold = 1e-6;
    FlowOptions flow{1e-12};
    double root_tol = 1e-8;
    double periodic_tol = 1e-8;
};

inline std::vector<std::complex<double>> sorted_spectrum(const Eigen::VectorXcd& ev) {
    std::vector<std::complex<double>> v(ev.data(), ev.data() + ev.size());
    std::sort(v.begin(), v.end(), [](auto a, auto b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return v;
}

inline CriticalElementReport classify_singularity(const VectorField& spec, const Vec& x0,
                                                  const ClassifyOptions& opt = {}) {
    Vec x = x0;
    for (int it = 0; it < 20 && spec.field(x).norm() > 1e-15; ++it) {
        const Mat J = spec.jacobian(x);
        x -= J.completeOrthogonalDecomposition().solve(spec.field(x));
    }
    if (!(spec.field(x).norm() <= opt.root_tol)) {
        throw PreconditionError("point is not a singularity of the field");
    }
    CriticalElementReport r;
    r.kind = CriticalKind::singularity;
    r.location = x;
    r.threshold = opt.threshold;
    Eigen::EigenSolver<Mat> es(spec.jacobian(x));
    r.spectrum = sorted_spectrum(es.eigenvalues());
    r.hyperbolic = true;
    for (const auto& l : r.spectrum) {
        r.margins.push_back(std::abs(l.real()));
        if (!(std::abs(l.real()) > opt.threshold)) r.hyperbolic = false;
        if (l.real() < 0.0) ++r.index;
    }
    r.stable_manifold_dim = r.index;
    return r;
}

inline CriticalElementReport classify_periodic(const VectorField& spec, const Vec& p, double T,
                                               const ClassifyOptions& opt = {}) {
    const LinearPoincare lp = linear_poincare(spec, p, T, opt.flow);
    if (!(distance(spec, lp.end, p) <= opt.periodic_tol)) {
        throw PreconditionError("point is not periodic with the given period");
    }
    CriticalElementReport r;
    r.kind = CriticalKind::periodic;
    r.location = p;
    r.period = T;
    r.threshold = opt.threshold;
    // frames at p and X_T(p) coincide up to rounding; use the one at p for both ends
    const Mat psi = lp.frame_from.transpose() * lp.tangent * lp.frame_from;
    Eigen::EigenSolver<Mat> es(psi);
    r.spectrum = sorted_spectrum(es.eigenvalues());
    std::sort(r.spectrum.begin(), r.spectrum.end(),
              [](auto a, auto b) { return std::abs(a) < std::abs(b); });
    r.hyperbolic = true;
    for (const auto& mu : r.spectrum) {
        const double margin = std::abs(std::abs(mu) - 1.0);
        r.margins.push_back(margin);
        if (!(margin > opt.threshold)) r.hyperbolic = false;
        if (std::abs(mu) < 1.0) ++r.index;
    }
    r.stable_manifold_dim = r.index + 1;
    return r;
}

/// Stable and unstable invariant subspaces of a hyperbolic matrix, as
/// orthonormal columns (complex pairs contribute their real span).
inline std::pair<Mat, Mat> hyperbolic_subspaces(const Mat& A) {
    Eigen::EigenSolver<Mat> es(A);
    const auto& ev = es.eigenvalues();
    const auto& V = es.eigenvectors();
    std::vector<Vec> s_cols, u_cols;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const bool stable = std::abs(ev[i]) < 1.0;
        auto& cols = stable ? s_cols : u_cols;
        if (ev[i].imag() == 0.0) {
            cols.push_back(V.col(i).real());
        } else if (ev[i].imag() > 0.0) {
            cols.push_back(V.col(i).real());
            cols.push_back(V.col(i).imag());
        }
    }
    auto orth = [&](const std::vector<Vec>& cols) {
        Mat M(A.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) M.col(static_cast<Eigen::Index>(k)) = cols[k];
        if (M.cols() == 0) return M;
        Eigen::HouseholderQR<Mat> qr(M);
        return Mat(qr.householderQ() * Mat::Identity(A.rows(), M.cols()));
    };
    return {orth(s_cols), orth(u_cols)};
}

} // namespace shadowlab
