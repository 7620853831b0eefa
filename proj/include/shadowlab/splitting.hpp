#pragma once

// Dominated splittings of the normal cocycle: finite-time estimation,
// l-domination and hyperbolic-rate checks, (eta, T, p)-quasi hyperbolic
// orbit arcs, uniform estimates over hyperbolic periodic orbits, and
// periodic shadowing of quasi hyperbolic arcs with nearly closed ends.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "shadowlab/flow.hpp"
#include "shadowlab/poincare.hpp"
#include "shadowlab/pseudo_orbit.hpp"
#include "shadowlab/shadowing.hpp"

namespace shadowlab {

namespace detail {

/// Orthonormal basis of the column span (thin Householder QR).
inline Mat orth(const Mat& A) {
    Eigen::HouseholderQR<Mat> qr(A);
    return qr.householderQ() * Mat::Identity(A.rows(), A.cols());
}

/// Orthonormal basis of the orthogonal complement of span(Z), Z orthonormal.
inline Mat complement(const Mat& Z) {
    Eigen::HouseholderQR<Mat> qr(Z);
    const Mat Q = qr.householderQ();
    return Q.rightCols(Z.rows() - Z.cols());
}

inline Vec singular_values(const Mat& A) { return A.jacobiSvd().singularValues(); }

/// Spectral norm of A restricted to the span of its (orthonormal) input basis.
inline double restricted_norm(const Mat& A) {
    if (A.cols() == 0) return 0.0;
    return singular_values(A)(0);
}

/// Conorm m(A): smallest singular value, for A with orthonormal input basis.
inline double conorm(const Mat& A) {
    if (A.cols() == 0) return kInf;
    const Vec s = singular_values(A);
    return s(s.size() - 1);
}

/// Largest principal angle (as its sine) between two subspaces of equal dimension.
inline double subspace_gap(const Mat& A, const Mat& B) {
    if (A.cols() == 0) return 0.0;
    const Mat r = A - B * (B.transpose() * A);
    return std::min(1.0, singular_values(r)(0));
}

/// Smallest principal angle between two subspaces.
inline double min_principal_angle(const Mat& A, const Mat& B) {
    if (A.cols() == 0 || B.cols() == 0) return 0.5 * 3.14159265358979323846;
    return std::acos(std::min(1.0, singular_values(A.transpose() * B)(0)));
}

/// Fixed pseudo-random seed subspace, generic with respect to any invariant splitting.
inline Mat generic_subspace(Eigen::Index d, Eigen::Index k, std::uint64_t salt) {
    std::mt19937_64 rng(0x5eed5eedULL ^ salt);
    Mat M(d, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < d; ++i) {
            M(i, j) = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        }
    }
    return orth(M);
}

/// Greedy partition 0 = T_0 < ... < T_l = tau with steps of exactly T and
/// the remainder merged into the last step (T <= step < 2T).
inline std::vector<double> greedy_partition(double tau, double T) {
    if (!(T > 0.0)) throw PreconditionError("partition step must be positive");
    if (tau < T * (1.0 - 1e-12)) throw PreconditionError("arc shorter than the partition step");
    const auto l = std::max<long>(1, static_cast<long>(std::floor(tau / T + 1e-9)));
    std::vector<double> out(static_cast<std::size_t>(l) + 1);
    for (long i = 0; i < l; ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(i) * T;
    out.back() = tau;
    return out;
}

inline std::vector<std::size_t> spread(std::size_t count, std::size_t limit) {
    std::vector<std::size_t> idx;
    if (count == 0) return idx;
    const std::size_t m = std::min(count, std::max<std::size_t>(1, limit));
    for (std::size_t j = 0; j < m; ++j) {
        idx.push_back(m == 1 ? 0 : j * (count - 1) / (m - 1));
    }
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

} // namespace detail

struct SplittingOptions {
    double l = 1.0;             // domination length for the gap test
    double gap_min = 1.2;       // required m(Psi_l|Du) / |Psi_l|Ds|
    double edge_fraction = 0.25; // samples this close to either end are left out
    std::size_t gap_points = 40;
    FlowOptions flow{1e-10};
};

/// Delta^s + Delta^u along the middle part of a cocycle, in frame and
/// ambient coordinates.
struct SplittingEstimate {
    std::shared_ptr<const NormalCocycle> cocycle;
    int p = 1;                          // dim Delta^s
    std::vector<std::size_t> samples;   // cocycle indices covered
    std::vector<Mat> stable, unstable;  // frame coordinates, per covered sample
    std::vector<Mat> stable_ambient, unstable_ambient;
    double invariance_residual = 0.0;   // sine of the worst angle between Psi(Delta_k) and Delta_{k+1}
    double min_angle = 0.0;             // smallest angle between Delta^s and Delta^u
    double gap_ratio = kInf;            // min over samples of m(Psi_l|Du) / |Psi_l|Ds|
    double l = 1.0;

    std::size_t size() const { return samples.size(); }
    const Vec& point(std::size_t j) const { return cocycle->points[samples[j]]; }
    const Mat& frame(std::size_t j) const { return cocycle->frames[samples[j]]; }
    double time(std::size_t j) const { return cocycle->times[samples[j]]; }

    /// Covered sample nearest to y.
    std::size_t nearest(const Vec& y) const {
        std::size_t best = 0;
        double bd = kInf;
        for (std::size_t j = 0; j < size(); ++j) {
            const double d = distance(cocycle->spec, point(j), y);
            if (d < bd) { bd = d; best = j; }
        }
        return best;
    }
};

/// Psi_t from a covered sample, with the frame at the image point.
inline Mat psi_from(const VectorField& spec, const Mat& frame, const TangentTrajectory& tt, double t) {
    return normal_frame(spec, tt.state_at(t)).transpose() * tt.matrix_at(t) * frame;
}

/// Delta^u by forward subspace iteration, Delta^s as the orthogonal
/// complement of the backward adjoint iteration; both are exactly
/// Psi-invariant along the cocycle and converge away from the ends.
inline SplittingEstimate estimate_splitting(const NormalCocycle& cocycle, int p, const SplittingOptions& opt = {}) {
    const VectorField& spec = cocycle.spec;
    const Eigen::Index d = spec.dim - 1;
    if (p < 1 || p > d - 1) {
        throw PreconditionError("splitting dimension p must satisfy 1 <= p <= dim - 2");
    }
    if (cocycle.size() < 3) throw PreconditionError("cocycle needs at least three samples");
    const double total = cocycle.times.back();
    if (total < 20.0 * opt.l * (1.0 - 1e-12)) {
        throw PreconditionError("cocycle too short: total time must be at least 20 l");
    }
    const Eigen::Index q = d - p;
    const std::size_t m = cocycle.size();

    std::vector<Mat> U(m), Z(m);
    U[0] = detail::generic_subspace(d, q, 1);
    for (std::size_t k = 0; k + 1 < m; ++k) U[k + 1] = detail::orth(cocycle.transitions[k] * U[k]);
    Z[m - 1] = detail::generic_subspace(d, q, 2);
    for (std::size_t k = m - 1; k > 0; --k) Z[k - 1] = detail::orth(cocycle.transitions[k - 1].transpose() * Z[k]);

    SplittingEstimate est;
    est.cocycle = std::make_shared<const NormalCocycle>(cocycle);
    est.p = p;
    est.l = opt.l;
    for (std::size_t k = 0; k < m; ++k) {
        const double t = cocycle.times[k];
        if (t < opt.edge_fraction * total || t > (1.0 - opt.edge_fraction) * total) continue;
        est.samples.push_back(k);
        est.unstable.push_back(U[k]);
        est.stable.push_back(detail::complement(Z[k]));
        est.unstable_ambient.push_back(cocycle.frames[k] * est.unstable.back());
        est.stable_ambient.push_back(cocycle.frames[k] * est.stable.back());
    }
    if (est.samples.size() < 2) throw PreconditionError("cocycle too coarse: fewer than two samples in the window");

    est.min_angle = kInf;
    for (std::size_t j = 0; j < est.size(); ++j) {
        est.min_angle = std::min(est.min_angle, detail::min_principal_angle(est.stable[j], est.unstable[j]));
        if (j + 1 < est.size() && est.samples[j + 1] == est.samples[j] + 1) {
            const Mat& P = cocycle.transitions[est.samples[j]];
            est.invariance_residual = std::max(
                {est.invariance_residual, detail::subspace_gap(detail::orth(P * est.stable[j]), est.stable[j + 1]),
                 detail::subspace_gap(detail::orth(P * est.unstable[j]), est.unstable[j + 1])});
        }
    }
    if (!(est.min_angle > 1e-6)) throw GapError("estimated bundles are not transverse");

    for (std::size_t j : detail::spread(est.size(), opt.gap_points)) {
        const TangentTrajectory tt = integrate_tangent(spec, est.point(j), opt.l, opt.flow);
        const Mat psi = psi_from(spec, est.frame(j), tt, opt.l);
        const double ratio = detail::conorm(psi * est.unstable[j]) / detail::restricted_norm(psi * est.stable[j]);
        est.gap_ratio = std::min(est.gap_ratio, ratio);
    }
    if (!(est.gap_ratio >= opt.gap_min)) {
        throw GapError("filtration gap too small: m(Psi_l|Du) / |Psi_l|Ds| = " + detail::fmt17(est.gap_ratio) +
                       " < " + detail::fmt17(opt.gap_min));
    }
    return est;
}

/// |Psi_t|Ds(x)| * |Psi_{-t}|Du(X_t x)| = |Psi_t Es| / m(Psi_t Eu), with the
/// bundles given in ambient coordinates at x and an arbitrary orthonormal
/// frame of N at X_t(x).
inline double domination_product(const Mat& frame_to, const Mat& tangent, const Mat& Es_ambient, const Mat& Eu_ambient) {
    const Mat A = frame_to.transpose() * tangent;
    return detail::restricted_norm(A * Es_ambient) / detail::conorm(A * Eu_ambient);
}

struct DominationSample {
    std::size_t sample = 0;
    double t = 0.0;
    double product = 0.0;
};

struct DominationCheck {
    bool verdict = false;
    double l = 0.0;
    double worst_product = 0.0;
    std::size_t worst_sample = 0;
    double worst_time = 0.0;
    Vec worst_point;
    std::vector<DominationSample> series;
};

struct DominationOptions {
    int t_samples = 21;          // grid over [l, 3l]
    std::size_t max_points = 40; // covered samples used
    FlowOptions flow{1e-10};
};

inline DominationCheck check_domination(const SplittingEstimate& est, double l, const DominationOptions& opt = {}) {
    if (!(l > 0.0)) throw PreconditionError("domination length must be positive");
    const VectorField& spec = est.cocycle->spec;
    DominationCheck out;
    out.l = l;
    out.worst_product = -kInf;
    const int nt = std::max(2, opt.t_samples);
    for (std::size_t j : detail::spread(est.size(), opt.max_points)) {
        const TangentTrajectory tt = integrate_tangent(spec, est.point(j), 3.0 * l, opt.flow);
        for (int i = 0; i < nt; ++i) {
            const double t = i + 1 == nt ? 3.0 * l : l + 2.0 * l * i / (nt - 1);
            const Vec end = tt.state_at(t);
            const double prod =
                domination_product(normal_frame(spec, end), tt.matrix_at(t), est.stable_ambient[j], est.unstable_ambient[j]);
            out.series.push_back({est.samples[j], t, prod});
            if (prod > out.worst_product) {
                out.worst_product = prod;
                out.worst_sample = est.samples[j];
                out.worst_time = t;
                out.worst_point = est.point(j);
            }
        }
    }
    out.verdict = out.worst_product <= 0.5;
    return out;
}

struct HyperbolicFitOptions {
    double t_min = 1.0;
    double horizon = 5.0;
    int t_samples = 9;
    std::size_t max_points = 20;
    double lambda_max = 1.0 - 1e-3;
    FlowOptions flow{1e-10};
};

struct BundleFit {
    double C = kInf;
    double lambda = kInf;
    double rms = 0.0; // residual of the log-linear least-squares fit
};

struct HyperbolicFit {
    bool hyperbolic = false;
    BundleFit stable;   // |Psi_t|Ds| <= C lambda^t
    BundleFit unstable; // |Psi_{-t}|Du| <= C lambda^t
    std::string failure;
};

namespace detail {

inline BundleFit fit_log_linear(const std::vector<double>& t, const std::vector<double>& logv) {
    const auto n = static_cast<double>(t.size());
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        st += t[i];
        sy += logv[i];
        stt += t[i] * t[i];
        sty += t[i] * logv[i];
    }
    const double den = n * stt - st * st;
    const double slope = den != 0.0 ? (n * sty - st * sy) / den : 0.0;
    const double icpt = (sy - slope * st) / n;
    BundleFit f;
    f.lambda = std::exp(slope);
    double logC = -kInf, ss = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        logC = std::max(logC, logv[i] - slope * t[i]);
        const double r = logv[i] - (icpt + slope * t[i]);
        ss += r * r;
    }
    f.C = std::exp(logC);
    f.rms = std::sqrt(ss / n);
    return f;
}

} // namespace detail

/// Log-linear least squares of |Psi_t|Ds| and |Psi_{-t}|Du| over sampled
/// (x, t); C is then inflated so that the bound holds on every sample.
inline HyperbolicFit fit_hyperbolic(const SplittingEstimate& est, const HyperbolicFitOptions& opt = {}) {
    if (!(opt.horizon > opt.t_min) || opt.t_samples < 2) throw PreconditionError("fit needs a nonempty time range");
    const VectorField& spec = est.cocycle->spec;
    std::vector<double> ts, ls, lu;
    for (std::size_t j : detail::spread(est.size(), opt.max_points)) {
        const TangentTrajectory tt = integrate_tangent(spec, est.point(j), opt.horizon, opt.flow);
        for (int i = 0; i < opt.t_samples; ++i) {
            const double t =
                i + 1 == opt.t_samples ? opt.horizon : opt.t_min + (opt.horizon - opt.t_min) * i / (opt.t_samples - 1);
            const Mat psi = psi_from(spec, est.frame(j), tt, t);
            ts.push_back(t);
            ls.push_back(std::log(detail::restricted_norm(psi * est.stable[j])));
            // |Psi_{-t}|Du(X_t x)| = 1 / m(Psi_t|Du(x))
            lu.push_back(-std::log(detail::conorm(psi * est.unstable[j])));
        }
    }
    HyperbolicFit fit;
    fit.stable = detail::fit_log_linear(ts, ls);
    fit.unstable = detail::fit_log_linear(ts, lu);
    fit.hyperbolic = fit.stable.lambda < opt.lambda_max && fit.unstable.lambda < opt.lambda_max;
    if (!fit.hyperbolic) {
        fit.failure = std::string("no uniform exponential rate on ") +
                      (fit.stable.lambda >= opt.lambda_max ? "Delta^s" : "Delta^u") + " (lambda = " +
                      detail::fmt17(fit.stable.lambda >= opt.lambda_max ? fit.stable.lambda : fit.unstable.lambda) +
                      " >= " + detail::fmt17(opt.lambda_max) + ")";
    }
    return fit;
}

struct QuasiHyperbolicOptions {
    double settle = 5.0; // extension past the arc end for the stable-bundle iteration
    FlowOptions flow{1e-10};
};

struct QuasiHyperbolicCertificate {
    Vec x;
    double tau = 0.0;
    double eta = 0.0;
    double T = 0.0;
    int p = 1;
    std::vector<double> partition;           // T_0 = 0 < ... < T_l = tau
    std::vector<double> log_norm_stable;     // log |Psi_{T_j - T_{j-1}}|Ds|, j = 1..l
    std::vector<double> log_conorm_unstable; // log m(Psi_{T_j - T_{j-1}}|Du)
    std::vector<double> slack_contraction;   // -eta - (1/T_k) sum_{j<=k} log |.|
    std::vector<double> slack_expansion;     // (1/(T_l - T_{k-1})) sum_{j>=k} log m(.) - eta
    std::vector<double> slack_gap;           // -2 eta - (log |.| - log m(.)) at step k
    Vec endpoint;
    double endpoint_gap = 0.0;               // d(X_tau(x), x)
    bool verdict = false;
};

/// Evaluates the three (eta, T, p) inequalities on the greedy partition of
/// [0, tau]. Delta^u is seeded from the estimate and pushed forward along
/// the arc; Delta^s comes from a backward adjoint iteration started settle
/// time units past the end.
inline QuasiHyperbolicCertificate check_quasi_hyperbolic(const VectorField& spec, const Vec& x, double tau,
                                                         const SplittingEstimate& est, double eta, double T,
                                                         const QuasiHyperbolicOptions& opt = {}) {
    const Eigen::Index d = spec.dim - 1;
    if (d < 2) throw PreconditionError("quasi hyperbolic arcs need dim M >= 3 (1 <= p <= dim M - 2)");
    if (est.p < 1 || est.p > d - 1) throw PreconditionError("splitting dimension outside 1 <= p <= dim M - 2");
    if (!(eta > 0.0)) throw PreconditionError("eta must be positive");
    QuasiHyperbolicCertificate c;
    c.x = x;
    c.tau = tau;
    c.eta = eta;
    c.T = T;
    c.p = est.p;
    c.partition = detail::greedy_partition(tau, T);
    const std::size_t l = c.partition.size() - 1;

    std::vector<double> times = c.partition;
    const auto extra = static_cast<long>(std::ceil(opt.settle / T - 1e-9));
    for (long k = 1; k <= extra; ++k) times.push_back(tau + static_cast<double>(k) * T);
    const NormalCocycle arc = build_cocycle_at(spec, x, times, opt.flow);
    c.endpoint = arc.points[l];
    c.endpoint_gap = distance(spec, c.endpoint, x);

    const std::size_t m = arc.size();
    std::vector<Mat> U(m), S(m);
    const std::size_t seed = est.nearest(x);
    U[0] = detail::orth(arc.frames[0].transpose() * est.unstable_ambient[seed]);
    for (std::size_t k = 0; k + 1 < m; ++k) U[k + 1] = detail::orth(arc.transitions[k] * U[k]);
    const std::size_t seed_end = est.nearest(arc.points.back());
    Mat Z = detail::complement(detail::orth(arc.frames.back().transpose() * est.stable_ambient[seed_end]));
    S[m - 1] = detail::complement(Z);
    for (std::size_t k = m - 1; k > 0; --k) {
        Z = detail::orth(arc.transitions[k - 1].transpose() * Z);
        S[k - 1] = detail::complement(Z);
    }

    for (std::size_t j = 0; j < l; ++j) {
        const Mat& P = arc.transitions[j];
        c.log_norm_stable.push_back(std::log(detail::restricted_norm(P * S[j])));
        c.log_conorm_unstable.push_back(std::log(detail::conorm(P * U[j])));
    }
    double sum_s = 0.0;
    for (std::size_t k = 1; k <= l; ++k) {
        sum_s += c.log_norm_stable[k - 1];
        c.slack_contraction.push_back(-eta - sum_s / c.partition[k]);
    }
    for (std::size_t k = 1; k <= l; ++k) {
        double sum_u = 0.0;
        for (std::size_t j = k; j <= l; ++j) sum_u += c.log_conorm_unstable[j - 1];
        c.slack_expansion.push_back(sum_u / (c.partition[l] - c.partition[k - 1]) - eta);
        c.slack_gap.push_back(-2.0 * eta - (c.log_norm_stable[k - 1] - c.log_conorm_unstable[k - 1]));
    }
    auto nonneg = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double s) { return s >= 0.0; });
    };
    c.verdict = nonneg(c.slack_contraction) && nonneg(c.slack_expansion) && nonneg(c.slack_gap);
    return c;
}

struct PeriodicEstimateSlack {
    Vec point;
    double period = 0.0;
    std::vector<double> partition;       // greedy T_tilde partition of [0, period]
    double slack_rate_gap = kInf;        // condition (i): min_t rate gap - 2 eta
    double worst_t = 0.0;
    double slack_stable_sum = kInf;      // condition (ii), m = 1: -eta - mean log |.|
    double slack_unstable_sum = kInf;    // condition (ii), m = 1: mean log m(.) - eta
    double min_slack() const { return std::min({slack_rate_gap, slack_stable_sum, slack_unstable_sum}); }
};

struct UniformPeriodicResult {
    bool verdict = true;
    double T_tilde = 0.0;
    double eta_tilde = 0.0;
    double min_slack = kInf;
    std::vector<PeriodicEstimateSlack> orbits;
};

struct UniformPeriodicOptions {
    double substep = 0.1;    // grid along the orbit for the bundle blocks
    double horizon = 3.0;    // condition (i) is checked for t in [T_tilde, horizon * period]
    FlowOptions flow{1e-12};
};

namespace detail {

/// Splits P*E along [Es_to Eu_to] and keeps the block that stays in the
/// target bundle; the oblique projection removes the drift of a decaying
/// bundle into the growing one.
inline Mat bundle_block(const Mat& P, const Mat& E, const Mat& Es_to, const Mat& Eu_to, bool stable) {
    Mat basis(Es_to.rows(), Es_to.cols() + Eu_to.cols());
    basis << Es_to, Eu_to;
    const Mat c = basis.fullPivLu().solve(P * E);
    return stable ? Mat(c.topRows(Es_to.cols())) : Mat(c.bottomRows(Eu_to.cols()));
}

} // namespace detail

/// Conditions (i) and (ii, m = 1) of the uniform periodic estimates. E^s,
/// E^u come from the monodromy at each grid point of the orbit; Psi_t on
/// the bundles is a product of per-step blocks, which keeps long horizons
/// accurate.
inline UniformPeriodicResult uniform_period_estimates(const VectorField& spec,
                                                      const std::vector<CriticalElementReport>& orbits,
                                                      double T_tilde, double eta_tilde,
                                                      const UniformPeriodicOptions& opt = {}) {
    if (!(T_tilde > 0.0)) throw PreconditionError("T_tilde must be positive");
    UniformPeriodicResult res;
    res.T_tilde = T_tilde;
    res.eta_tilde = eta_tilde;
    for (const auto& r : orbits) {
        if (r.kind != CriticalKind::periodic) throw PreconditionError("uniform periodic estimates take periodic orbits only");
        if (!r.hyperbolic) throw PreconditionError("non-hyperbolic orbit in input");
    }
    for (const auto& r : orbits) {
        PeriodicEstimateSlack s;
        s.point = r.location;
        s.period = r.period;
        const double T = r.period;
        s.partition = T >= T_tilde ? detail::greedy_partition(T, T_tilde) : std::vector<double>{0.0, T};

        // condition (ii), m = 1: direct Psi over each partition step
        double sum_s = 0.0, sum_u = 0.0;
        bool has_s = false, has_u = false;
        for (std::size_t k = 0; k + 1 < s.partition.size(); ++k) {
            const Vec xk = flow_at(spec, r.location, s.partition[k], opt.flow);
            const TangentTrajectory tt = integrate_tangent(spec, xk, T, opt.flow);
            const Mat Fk = normal_frame(spec, xk);
            const auto [Es, Eu] = hyperbolic_subspaces(Mat(Fk.transpose() * tt.matrix_at(T) * Fk));
            const Mat step = psi_from(spec, Fk, tt, s.partition[k + 1] - s.partition[k]);
            if (Es.cols() > 0) { has_s = true; sum_s += std::log(detail::restricted_norm(step * Es)); }
            if (Eu.cols() > 0) { has_u = true; sum_u += std::log(detail::conorm(step * Eu)); }
        }
        if (has_s) s.slack_stable_sum = -eta_tilde - sum_s / T;
        if (has_u) s.slack_unstable_sum = sum_u / T - eta_tilde;

        // condition (i): bundles at every grid point, blocks per step
        const auto N = static_cast<std::size_t>(std::max(4.0, std::ceil(T / opt.substep)));
        const double h = T / static_cast<double>(N);
        std::vector<double> grid(N + 1);
        for (std::size_t j = 0; j <= N; ++j) grid[j] = static_cast<double>(j) * h;
        grid.back() = T;
        const NormalCocycle c = build_cocycle_at(spec, r.location, grid, opt.flow);
        std::vector<Mat> Es(N), Eu(N);
        for (std::size_t j = 0; j < N; ++j) {
            // frames at s_N and s_0 coincide up to the closing error
            const Mat mono = c.compose(0, j) * c.compose(j, N);
            std::tie(Es[j], Eu[j]) = hyperbolic_subspaces(mono);
        }
        std::vector<Mat> Bs(N), Bu(N);
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = (j + 1) % N;
            Bs[j] = detail::bundle_block(c.transitions[j], Es[j], Es[k], Eu[k], true);
            Bu[j] = detail::bundle_block(c.transitions[j], Eu[j], Es[k], Eu[k], false);
        }
        const auto steps = static_cast<std::size_t>(std::ceil(std::max(opt.horizon * T, T_tilde) / h - 1e-9));
        for (std::size_t j = 0; j < N; ++j) {
            Mat As = Mat::Identity(Es[j].cols(), Es[j].cols());
            Mat Au = Mat::Identity(Eu[j].cols(), Eu[j].cols());
            for (std::size_t k = 1; k <= steps; ++k) {
                const std::size_t i = (j + k - 1) % N;
                As = Bs[i] * As;
                Au = Bu[i] * Au;
                const double t = static_cast<double>(k) * h;
                if (t < T_tilde * (1.0 - 1e-12)) continue;
                const double lu = Au.cols() > 0 ? std::log(detail::conorm(Au)) : kInf;
                const double ls = As.cols() > 0 ? std::log(detail::restricted_norm(As)) : -kInf;
                const double slack = (lu - ls) / t - 2.0 * eta_tilde;
                if (slack < s.slack_rate_gap) {
                    s.slack_rate_gap = slack;
                    s.worst_t = t;
                }
            }
        }
        res.min_slack = std::min(res.min_slack, s.min_slack());
        res.orbits.push_back(std::move(s));
    }
    res.verdict = res.min_slack >= 0.0;
    return res;
}

struct LiaoOptions {
    NewtonOptions newton;
    double samples_per_unit = 40.0;
    MatchOptions match;
    ClassifyOptions classify;
};

struct LiaoResult {
    bool success = false;
    Vec periodic_point;
    double period = 0.0;
    double distance = kInf;       // sup_t d(X_{g(t)}(y), X_t(x)) on the sampled grid
    std::optional<Reparametrization> g;
    std::optional<CriticalElementReport> classification;
    int newton_iterations = 0;
    std::string note;
};

/// Periodic orbit near a quasi hyperbolic arc with nearly closed ends:
/// Newton on the return map of the section through x, then the arc is
/// matched against the periodic orbit with a reparametrization.
inline LiaoResult liao_shadow_periodic(const VectorField& spec, const QuasiHyperbolicCertificate& cert, double delta,
                                       const LiaoOptions& opt = {}) {
    if (!cert.verdict) throw PreconditionError("certificate verdict is false");
    const double gap = distance(spec, flow_at(spec, cert.x, cert.tau, opt.newton.section.flow), cert.x);
    if (!(gap < delta)) {
        throw PreconditionError("arc endpoints are not delta-close: d(X_tau(x), x) = " + detail::fmt17(gap));
    }
    LiaoResult out;
    PeriodicOrbit orbit;
    try {
        orbit = find_periodic_newton(spec, cert.x, cert.tau, opt.newton);
    } catch (const ConvergenceError& e) {
        out.note = std::string("Newton failed (") + e.what() +
                   "); a periodic orbit is only guaranteed for sufficiently small delta, so this is not a contradiction";
        return out;
    }
    out.periodic_point = orbit.point;
    out.period = orbit.period;
    out.newton_iterations = orbit.iterations;
    try {
        out.classification = classify_periodic(spec, orbit.point, orbit.period, opt.classify);
    } catch (const Error&) {
        out.classification.reset();
    }
    const PseudoOrbit arc({ChainEntry{cert.x, cert.tau}}, std::max(delta, gap));
    const int M = std::max(64, static_cast<int>(std::ceil(cert.tau * opt.samples_per_unit)) + 1);
    MatchOptions mo = opt.match;
    mo.evaluate = true;
    const BestReparam br = best_reparam(spec, orbit.point, arc, {0.0, cert.tau}, M, 2 * M, mo);
    out.periodic_point = br.witness;
    out.g = br.h;
    out.distance = br.distance.sampled;
    out.success = true;
    out.note = "periodic orbit found by Newton; distance is the sampled sup over the arc";
    return out;
}

} // namespace shadowlab
