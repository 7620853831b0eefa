#pragma once

// epsilon-shadowing of pseudo-orbits by true orbits under increasing time
// changes h with h(0) = 0: sup-distance evaluation, discrete monotone
// matching for the best piecewise-linear h, a witness search, and
// refutation through conserved quantities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "shadowlab/flow.hpp"
#include "shadowlab/pseudo_orbit.hpp"

namespace shadowlab {

struct SlopeBounds {
    double min = 0.1;
    double max = 10.0;
};

/// Strictly increasing piecewise-linear time change with h(0) = 0,
/// extrapolated linearly beyond the end knots.
class Reparametrization {
public:
    Reparametrization(std::vector<std::pair<double, double>> knots, SlopeBounds bounds = {})
        : knots_(std::move(knots)), bounds_(bounds) {
        if (knots_.size() < 2) throw PreconditionError("reparametrization needs two knots");
        double scale = 1.0;
        for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
            const double ds = knots_[j + 1].first - knots_[j].first;
            const double du = knots_[j + 1].second - knots_[j].second;
            if (!(ds > 0.0) || !(du > 0.0)) {
                throw PreconditionError("reparametrization knots must be strictly increasing");
            }
            const double slope = du / ds;
            if (slope < bounds_.min * (1.0 - 1e-9) || slope > bounds_.max * (1.0 + 1e-9)) {
                throw PreconditionError("reparametrization slope outside the configured bounds");
            }
            scale = std::max({scale, std::abs(knots_[j].second), std::abs(knots_[j + 1].second)});
        }
        if (std::abs((*this)(0.0)) > 1e-12 * scale) {
            throw PreconditionError("reparametrization must satisfy h(0) = 0");
        }
    }

    static Reparametrization identity() { return Reparametrization({{0.0, 0.0}, {1.0, 1.0}}); }
    static Reparametrization linear(double slope, SlopeBounds b = {}) {
        return Reparametrization({{0.0, 0.0}, {1.0, slope}}, b);
    }

    double operator()(double s) const { return interpolate(knots_, s); }

    /// Piecewise-linear interpolation with linear extrapolation.
    static double interpolate(const std::vector<std::pair<double, double>>& k, double s) {
        std::size_t j;
        if (s <= k.front().first) {
            j = 0;
        } else if (s >= k.back().first) {
            j = k.size() - 2;
        } else {
            j = static_cast<std::size_t>(
                    std::upper_bound(k.begin(), k.end(), s,
                                     [](double v, const auto& kn) { return v < kn.first; }) -
                    k.begin()) - 1;
        }
        const double w = (s - k[j].first) / (k[j + 1].first - k[j].first);
        return k[j].second + w * (k[j + 1].second - k[j].second);
    }

    double max_slope() const {
        double m = 0.0;
        for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
            m = std::max(m, (knots_[j + 1].second - knots_[j].second) / (knots_[j + 1].first - knots_[j].first));
        }
        return m;
    }

    const std::vector<std::pair<double, double>>& knots() const { return knots_; }
    SlopeBounds bounds() const { return bounds_; }

private:
    std::vector<std::pair<double, double>> knots_;
    SlopeBounds bounds_;
};

/// Dense samples of the orbit of y over [u_lo, u_hi] (u_lo <= 0 <= u_hi),
/// truncated where the flow leaves the chart.
class OrbitSampler {
public:
    OrbitSampler(const VectorField& spec, const Vec& y, double u_lo, double u_hi, FlowOptions opt)
        : y_(y) {
        opt.truncate_on_divergence = true;
        if (u_hi > 0.0) fwd_ = integrate(spec, y, 0.0, u_hi, opt);
        if (u_lo < 0.0) bwd_ = integrate(spec, y, 0.0, u_lo, opt);
    }

    bool covers(double u) const {
        if (u == 0.0) return true;
        if (u > 0.0) return fwd_ && fwd_->covers(u);
        return bwd_ && bwd_->covers(u);
    }

    Vec at(double u) const {
        if (u == 0.0) return y_;
        if (!covers(u)) throw DivergenceError("orbit left the chart before the requested time", u);
        return u > 0.0 ? fwd_->at(u) : bwd_->at(u);
    }

private:
    Vec y_;
    std::optional<Trajectory> fwd_, bwd_;
};

struct ShadowDistance {
    double sampled = 0.0;   // max of d(X_{h(t)}(y), x_0 * t) over the grid
    double inflation = 0.0; // first-order bound on what the grid can miss
    double worst_time = 0.0;

    double upper() const { return sampled + inflation; }
};

/// Horizon covering the body of po plus `settle` time units of each constant extension.
inline std::pair<double, double> default_horizon(const PseudoOrbit& po, double settle = 5.0) {
    return {po.head() ? -settle : 0.0, po.tail() ? po.body_duration() + settle : po.body_duration()};
}

inline ShadowDistance shadow_distance(const VectorField& spec, const Vec& y, const Reparametrization& h,
                                      const PseudoOrbit& po, std::pair<double, double> horizon,
                                      int samples, const FlowOptions& opt = {}) {
    auto [a, b] = horizon;
    if (!(b > a) || samples < 2) throw PreconditionError("shadow distance needs a nonempty horizon and two samples");
    const ConcatTrajectory concat(spec, po, a, b, opt);
    const OrbitSampler orbit(spec, y, std::min(0.0, h(a)), std::max(0.0, h(b)), opt);

    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(samples));
    const double step = (b - a) / (samples - 1);
    for (int j = 0; j < samples; ++j) grid.push_back(j + 1 == samples ? b : a + j * step);

    ShadowDistance out;
    double v_pseudo = 0.0, v_orbit = 0.0;
    auto visit = [&](double s, const Vec& p) {
        const Vec q = orbit.at(h(s));
        const double d = distance(spec, q, p);
        if (d > out.sampled) {
            out.sampled = d;
            out.worst_time = s;
        }
        v_pseudo = std::max(v_pseudo, spec.field(p).norm());
        v_orbit = std::max(v_orbit, spec.field(q).norm());
    };
    for (double s : grid) visit(s, concat.at(s));
    // both one-sided values at segment boundaries inside the horizon
    const long i0 = po.segment_index(a), i1 = po.segment_index(b);
    for (long i = i0 + 1; i <= i1; ++i) {
        const double s = po.accumulated_time(i);
        if (s <= a || s >= b) continue;
        visit(s, concat.at(s));
        visit(s, concat.left_limit(s));
    }
    out.inflation = 0.5 * step * (v_pseudo + h.max_slope() * v_orbit);
    return out;
}

struct MatchOptions {
    SlopeBounds slopes;
    double orbit_stretch = 1.5; // orbit window length relative to the horizon
    bool evaluate = true;       // also run shadow_distance on the induced h
    int eval_samples = 0;       // 0: 2 M
    FlowOptions flow;
};

struct BestReparam {
    Reparametrization h = Reparametrization::identity();
    Vec witness;                 // X_shift(y), so that the matching has h(0) = 0
    double shift = 0.0;
    double coupling_cost = kInf; // optimal max distance of the discrete monotone matching
    double polished_cost = kInf; // after projecting matched times onto the orbit polyline
    ShadowDistance distance;     // shadow_distance of (witness, h), when evaluated
};

/// Discrete monotone matching of M pseudo-orbit samples to K orbit samples.
///
/// Each pseudo sample s_i is assigned an orbit sample index k_i with
/// k_i - k_{i-1} within the slope window; the assignment minimizing
/// max_i d(P_i, Q_{k_i}) is found by dynamic programming with sliding-window
/// minima. Refining the orbit grid by an integer factor can only lower the
/// optimum. The pseudo-orbit samples are computed once per matcher.
class Matcher {
public:
    Matcher(const VectorField& spec, const PseudoOrbit& po, std::pair<double, double> horizon, int M, int K,
            MatchOptions opt = {})
        : spec_(spec), po_(&po), a_(horizon.first), b_(horizon.second), M_(M), K_(K), opt_(opt) {
        if (M < 2 || K < 2) throw PreconditionError("matching grids need at least two points");
        if (!(b_ > a_)) throw PreconditionError("matching horizon must be nonempty");
        const int n = spec.dim;
        const double pad = 0.5 * (opt.orbit_stretch - 1.0) * (b_ - a_);
        u_lo_ = std::min(0.0, a_ - pad);
        u_hi_ = std::max(0.0, b_ + pad);
        ds_ = (b_ - a_) / (M - 1);
        du_ = (u_hi_ - u_lo_) / (K - 1);
        jmin_ = std::max(1, static_cast<int>(std::ceil(opt.slopes.min * ds_ / du_ - 1e-9)));
        jmax_ = static_cast<int>(std::floor(opt.slopes.max * ds_ / du_ + 1e-9));
        if (jmax_ < jmin_) throw PreconditionError("orbit grid too coarse for the slope bounds");
        if (jmax_ > 65535) throw PreconditionError("orbit grid too fine relative to the pseudo-orbit grid");

        const ConcatTrajectory concat(spec, po, a_, b_, opt.flow);
        P_.resize(static_cast<std::size_t>(M) * n);
        for (int i = 0; i < M; ++i) {
            const Vec p = concat.at(s_at(i));
            std::copy(p.data(), p.data() + n, P_.begin() + static_cast<std::ptrdiff_t>(i) * n);
        }
        periods_.assign(static_cast<std::size_t>(n), 0.0);
        for (int c = 0; c < n; ++c) if (spec.is_angle(c)) periods_[static_cast<std::size_t>(c)] = spec.period(c);
    }

    /// Optimal matching for the orbit of y; throws DivergenceError if no
    /// matching exists on the part of the orbit that stays in the chart.
    BestReparam match(const Vec& y) const {
        const int n = spec_.dim;
        const int M = M_, K = K_;
        const OrbitSampler orbit(spec_, y, u_lo_, u_hi_, opt_.flow);
        std::vector<double> Q(static_cast<std::size_t>(K) * n);
        std::vector<char> valid(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            const double u = u_at(k);
            valid[static_cast<std::size_t>(k)] = orbit.covers(u);
            if (!valid[static_cast<std::size_t>(k)]) continue;
            const Vec q = orbit.at(u);
            std::copy(q.data(), q.data() + n, Q.begin() + static_cast<std::ptrdiff_t>(k) * n);
        }
        auto dist = [&](int i, int k) {
            if (!valid[static_cast<std::size_t>(k)]) return kInf;
            const double* p = &P_[static_cast<std::size_t>(i) * n];
            const double* q = &Q[static_cast<std::size_t>(k) * n];
            double acc = 0.0;
            for (int c = 0; c < n; ++c) {
                double d = p[c] - q[c];
                const double per = periods_[static_cast<std::size_t>(c)];
                if (per > 0.0) {
                    d = std::fmod(d, per);
                    if (d > 0.5 * per) d -= per;
                    if (d <= -0.5 * per) d += per;
                }
                acc += d * d;
            }
            return std::sqrt(acc);
        };

        // Costs are (max, sum) pairs compared lexicographically: the max is
        // the matching objective, the sum picks among equal-max paths one
        // that stays close everywhere, not only at the bottleneck.
        using Cost = std::pair<double, double>;
        const Cost none{kInf, kInf};
        std::vector<Cost> prev(static_cast<std::size_t>(K)), cur(static_cast<std::size_t>(K));
        std::vector<std::uint16_t> back(static_cast<std::size_t>(M) * K, 0);
        for (int k = 0; k < K; ++k) {
            const double d = dist(0, k);
            prev[static_cast<std::size_t>(k)] = {d, d};
        }
        std::deque<int> window;
        for (int i = 1; i < M; ++i) {
            window.clear();
            int next_in = 0;
            for (int k = 0; k < K; ++k) {
                // admissible predecessors k' in [k - jmax, k - jmin]
                while (next_in <= k - jmin_) {
                    while (!window.empty() && !(prev[static_cast<std::size_t>(window.back())] < prev[static_cast<std::size_t>(next_in)])) {
                        window.pop_back();
                    }
                    window.push_back(next_in++);
                }
                while (!window.empty() && window.front() < k - jmax_) window.pop_front();
                Cost c = none;
                if (!window.empty() && std::isfinite(prev[static_cast<std::size_t>(window.front())].first)) {
                    const Cost& p = prev[static_cast<std::size_t>(window.front())];
                    const double d = dist(i, k);
                    if (std::isfinite(d)) c = {std::max(p.first, d), p.second + d};
                    back[static_cast<std::size_t>(i) * K + k] = static_cast<std::uint16_t>(k - window.front());
                }
                cur[static_cast<std::size_t>(k)] = c;
            }
            std::swap(prev, cur);
        }
        const auto last = std::min_element(prev.begin(), prev.end());
        BestReparam out;
        out.coupling_cost = last->first;
        if (!std::isfinite(out.coupling_cost)) {
            throw DivergenceError("no orbit sample matching covers the horizon", u_hi_);
        }

        std::vector<int> ks(static_cast<std::size_t>(M));
        ks[static_cast<std::size_t>(M - 1)] = static_cast<int>(last - prev.begin());
        for (int i = M - 1; i > 0; --i) {
            const int k = ks[static_cast<std::size_t>(i)];
            ks[static_cast<std::size_t>(i - 1)] = k - back[static_cast<std::size_t>(i) * K + k];
        }
        // Polish: move each matched time onto the nearer adjacent orbit
        // chord, then restore the slope bounds by a forward clamp.
        auto wrap = [&](double d, int c) {
            const double per = periods_[static_cast<std::size_t>(c)];
            if (per > 0.0) {
                d = std::fmod(d, per);
                if (d > 0.5 * per) d -= per;
                if (d <= -0.5 * per) d += per;
            }
            return d;
        };
        auto on_chord = [&](int i, int k, double lambda) {
            if (k < 0 || k + 1 >= K || !valid[static_cast<std::size_t>(k)] || !valid[static_cast<std::size_t>(k + 1)]) {
                return kInf;
            }
            const double* p = &P_[static_cast<std::size_t>(i) * n];
            const double* q0 = &Q[static_cast<std::size_t>(k) * n];
            const double* q1 = q0 + n;
            double acc = 0.0;
            for (int c = 0; c < n; ++c) {
                const double d = wrap(p[c] - q0[c], c) - lambda * wrap(q1[c] - q0[c], c);
                acc += d * d;
            }
            return std::sqrt(acc);
        };
        auto project = [&](int i, int k) -> std::pair<double, double> { // (lambda, distance)
            if (k < 0 || k + 1 >= K || !valid[static_cast<std::size_t>(k)] || !valid[static_cast<std::size_t>(k + 1)]) {
                return {0.0, kInf};
            }
            const double* p = &P_[static_cast<std::size_t>(i) * n];
            const double* q0 = &Q[static_cast<std::size_t>(k) * n];
            const double* q1 = q0 + n;
            double we = 0.0, ee = 0.0;
            for (int c = 0; c < n; ++c) {
                const double e = wrap(q1[c] - q0[c], c);
                we += wrap(p[c] - q0[c], c) * e;
                ee += e * e;
            }
            const double lambda = ee > 0.0 ? std::clamp(we / ee, 0.0, 1.0) : 0.0;
            return {lambda, on_chord(i, k, lambda)};
        };
        auto chord_distance = [&](int i, double u) {
            const int k = std::clamp(static_cast<int>(std::floor((u - u_lo_) / du_)), 0, K - 2);
            return on_chord(i, k, (u - u_at(k)) / du_);
        };
        std::vector<double> us(static_cast<std::size_t>(M));
        double polished = 0.0;
        for (int i = 0; i < M; ++i) {
            const int k = ks[static_cast<std::size_t>(i)];
            double u = u_at(k), d = dist(i, k);
            for (int kk : {k - 1, k}) {
                const auto [lambda, dk] = project(i, kk);
                if (dk < d) {
                    d = dk;
                    u = u_lo_ + (kk + lambda) * du_;
                }
            }
            if (i > 0) {
                const double step = s_at(i) - s_at(i - 1);
                const double lo = us[static_cast<std::size_t>(i - 1)] + opt_.slopes.min * step;
                const double hi = us[static_cast<std::size_t>(i - 1)] + opt_.slopes.max * step;
                if (u < lo || u > hi) {
                    u = std::clamp(u, lo, hi);
                    d = chord_distance(i, u);
                }
            }
            us[static_cast<std::size_t>(i)] = u;
            polished = std::max(polished, d);
        }
        out.polished_cost = polished;
        const bool use_polished = polished <= out.coupling_cost;
        std::vector<std::pair<double, double>> knots;
        knots.reserve(static_cast<std::size_t>(M));
        for (int i = 0; i < M; ++i) {
            knots.emplace_back(s_at(i), use_polished ? us[static_cast<std::size_t>(i)]
                                                     : u_at(ks[static_cast<std::size_t>(i)]));
        }
        if (!use_polished) out.polished_cost = out.coupling_cost;
        // rebase so that h(0) = 0: witness = X_{h(0)}(y)
        const double u0 = Reparametrization::interpolate(knots, 0.0);
        for (auto& kn : knots) kn.second -= u0;
        out.witness = u0 == 0.0 ? y : orbit.at(u0);
        out.shift = u0;
        const SlopeBounds realized = use_polished
                                         ? opt_.slopes
                                         : SlopeBounds{std::min(opt_.slopes.min, jmin_ * du_ / ds_),
                                                       std::max(opt_.slopes.max, jmax_ * du_ / ds_)};
        out.h = Reparametrization(std::move(knots), realized);
        if (opt_.evaluate) {
            out.distance = shadow_distance(spec_, out.witness, out.h, *po_, {a_, b_},
                                           opt_.eval_samples > 0 ? opt_.eval_samples : 2 * M, opt_.flow);
        }
        return out;
    }

private:
    double s_at(int i) const { return i + 1 == M_ ? b_ : a_ + i * ds_; }
    double u_at(int k) const { return k + 1 == K_ ? u_hi_ : u_lo_ + k * du_; }

    VectorField spec_;
    const PseudoOrbit* po_;
    double a_, b_;
    int M_, K_;
    MatchOptions opt_;
    double u_lo_ = 0.0, u_hi_ = 0.0, ds_ = 0.0, du_ = 0.0;
    int jmin_ = 1, jmax_ = 1;
    std::vector<double> P_;
    std::vector<double> periods_;
};

inline BestReparam best_reparam(const VectorField& spec, const Vec& y, const PseudoOrbit& po,
                                std::pair<double, double> horizon, int M, int K,
                                const MatchOptions& opt = {}) {
    return Matcher(spec, po, horizon, M, K, opt).match(y);
}

namespace detail {

struct NelderMeadResult {
    Vec x;
    double f = kInf;
    int evaluations = 0;
};

/// Nelder-Mead simplex minimization with a hard evaluation cap.
template <class F>
NelderMeadResult nelder_mead(F&& f, const Vec& x0, double step, int max_evals, double rel_tol = 1e-2) {
    const auto n = x0.size();
    std::vector<Vec> pts;
    std::vector<double> vals;
    NelderMeadResult r;
    auto eval = [&](const Vec& x) {
        ++r.evaluations;
        const double v = f(x);
        return std::isnan(v) ? kInf : v;
    };
    pts.push_back(x0);
    vals.push_back(eval(x0));
    for (Eigen::Index i = 0; i < n && r.evaluations < max_evals; ++i) {
        Vec x = x0;
        x[i] += step;
        pts.push_back(x);
        vals.push_back(eval(x));
    }
    const double size0 = step;
    while (static_cast<Eigen::Index>(pts.size()) == n + 1 && r.evaluations < max_evals) {
        std::vector<std::size_t> order(pts.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto i, auto j) { return vals[i] < vals[j]; });
        std::vector<Vec> p2;
        std::vector<double> v2;
        for (auto i : order) { p2.push_back(pts[i]); v2.push_back(vals[i]); }
        pts.swap(p2);
        vals.swap(v2);
        double size = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i) size = std::max(size, (pts[i] - pts[0]).norm());
        if (size <= rel_tol * size0) break;

        Vec centroid = Vec::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
        centroid /= static_cast<double>(n);
        const Vec& worst = pts.back();
        const Vec xr = centroid + (centroid - worst);
        const double fr = eval(xr);
        if (fr < vals[0]) {
            const Vec xe = centroid + 2.0 * (centroid - worst);
            const double fe = r.evaluations < max_evals ? eval(xe) : kInf;
            if (fe < fr) { pts.back() = xe; vals.back() = fe; }
            else { pts.back() = xr; vals.back() = fr; }
        } else if (fr < vals[vals.size() - 2]) {
            pts.back() = xr;
            vals.back() = fr;
        } else {
            const bool outside = fr < vals.back();
            const Vec xc = outside ? Vec(centroid + 0.5 * (xr - centroid)) : Vec(centroid + 0.5 * (worst - centroid));
            const double fc = r.evaluations < max_evals ? eval(xc) : kInf;
            if (fc < std::min(fr, vals.back())) {
                pts.back() = xc;
                vals.back() = fc;
            } else {
                for (std::size_t i = 1; i < pts.size() && r.evaluations < max_evals; ++i) {
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
                    vals[i] = eval(pts[i]);
                }
            }
        }
    }
    const auto best = std::min_element(vals.begin(), vals.end()) - vals.begin();
    r.x = pts[static_cast<std::size_t>(best)];
    r.f = vals[static_cast<std::size_t>(best)];
    return r;
}

} // namespace detail

enum class ShadowVerdict { shadowed, not_found, refuted };

inline const char* to_string(ShadowVerdict v) {
    switch (v) {
    case ShadowVerdict::shadowed: return "shadowed";
    case ShadowVerdict::not_found: return "not_found";
    case ShadowVerdict::refuted: return "refuted";
    }
    return "?";
}

struct SearchStatistics {
    int evaluations = 0;
    int grid_candidates = 0;
    int stages = 0;
    bool budget_exhausted = false;
    int divergent_candidates = 0;
};

struct ShadowingReport {
    ShadowVerdict verdict = ShadowVerdict::not_found;
    double epsilon = 0.0;
    std::optional<Vec> witness;
    std::optional<Reparametrization> reparam;
    double achieved = kInf;  // sampled sup-distance of the best candidate
    double inflation = 0.0;
    std::optional<double> lower_bound;
    std::string justification;
    std::pair<double, double> horizon{0.0, 0.0};
    SearchStatistics stats;
};

struct SearchBudget {
    int max_evaluations = 1000;     // matching evaluations, grid plus refinement
    double grid_fraction = 0.5;     // share of the budget spent on the coarse grid
    double samples_per_unit = 4.0;  // pseudo-orbit samples per time unit during the search
    int final_refinement = 4;       // grid refinement for the final witness matching
    int min_samples = 64;
    int orbit_factor = 2;           // K = orbit_factor * M
    double settle = 5.0;            // coverage of constant heads/tails
    double stage_amplification = 1e3; // initial expansion admitted per continuation stage
    int max_stage_evaluations = 60;
    unsigned threads = 1;           // workers for the coarse grid
    MatchOptions match;
};

namespace detail {

struct Sensitivity {
    Vec singular_values;  // of the stacked forward/backward tangent flows
    Mat directions;       // right singular vectors
    double forward_gain = 1.0;
    double backward_gain = 1.0;
};

/// Tangent flows of y at orbit times u_lo <= 0 <= u_hi, stacked; used to
/// precondition the local search. Times are shortened if the flow leaves the chart.
inline Sensitivity sensitivity(const VectorField& spec, const Vec& y, double u_lo, double u_hi,
                               const FlowOptions& flow) {
    const int n = spec.dim;
    Sensitivity out;
    std::vector<Mat> blocks;
    for (double t : {u_hi, u_lo}) {
        if (t == 0.0) continue;
        double tt = t;
        for (int attempt = 0; attempt < 40; ++attempt) {
            try {
                blocks.push_back(tangent_flow(spec, y, tt, flow));
                const double gain = blocks.back().jacobiSvd().singularValues()(0);
                (t > 0.0 ? out.forward_gain : out.backward_gain) = gain;
                break;
            } catch (const DivergenceError&) {
                tt *= 0.7;
            }
        }
    }
    if (blocks.empty()) {
        out.singular_values = Vec::Ones(n);
        out.directions = Mat::Identity(n, n);
        return out;
    }
    Mat A(static_cast<Eigen::Index>(blocks.size()) * n, n);
    for (std::size_t j = 0; j < blocks.size(); ++j) A.middleRows(static_cast<Eigen::Index>(j) * n, n) = blocks[j];
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinV);
    out.singular_values = svd.singularValues();
    out.directions = svd.matrixV();
    return out;
}

} // namespace detail

/// Witness search: coarse grid over seed_region, then Nelder-Mead refinement
/// of y in coordinates scaled by the flow's expansion, continued over
/// horizons that grow by at most `stage_amplification` in expansion.
/// A not_found verdict is not a proof that no shadowing orbit exists.
inline ShadowingReport search_shadowing(const VectorField& spec, const PseudoOrbit& po, double epsilon,
                                        const Box& seed_region, const SearchBudget& budget = {}) {
    if (!(epsilon > 0.0)) throw PreconditionError("epsilon must be positive");
    if (seed_region.dim() != spec.dim) throw PreconditionError("seed region dimension mismatch");
    if (budget.max_evaluations < 1) throw PreconditionError("search budget must allow one evaluation");
    ShadowingReport rep;
    rep.epsilon = epsilon;
    const auto [a, b] = default_horizon(po, budget.settle);
    rep.horizon = {a, b};
    auto& st = rep.stats;
    const int n = spec.dim;

    MatchOptions fast = budget.match;
    fast.evaluate = false;
    auto matcher_for = [&](double lo, double hi) {
        const int M = std::max(budget.min_samples,
                               static_cast<int>(std::ceil((hi - lo) * budget.samples_per_unit)) + 1);
        return Matcher(spec, po, {lo, hi}, M, budget.orbit_factor * M, fast);
    };
    auto cost = [&](const Matcher& m, const Vec& y, int& divergent) {
        try {
            return m.match(y).polished_cost;
        } catch (const DivergenceError&) {
            ++divergent;
            return kInf;
        }
    };

    // first stage: a couple of typical segment lengths around time 0
    const double typical = po.body_duration() / static_cast<double>(po.size());
    double lo = std::max(a, -2.0 * typical), hi = std::min(b, 2.0 * typical);
    if (!(hi > lo)) hi = b;

    // coarse grid of cell centers, evaluated in parallel, reduced in index order
    const int grid_budget = std::max(1, static_cast<int>(budget.max_evaluations * budget.grid_fraction));
    const int g = std::max(1, static_cast<int>(std::floor(std::pow(grid_budget, 1.0 / n) + 1e-9)));
    long total = 1;
    for (int c = 0; c < n; ++c) total *= g;
    auto grid_point = [&](long index) {
        Vec y(n);
        for (int c = 0; c < n; ++c) {
            const double frac = (static_cast<double>(index % g) + 0.5) / g;
            index /= g;
            y[c] = seed_region.lo[c] + frac * (seed_region.hi[c] - seed_region.lo[c]);
        }
        return y;
    };
    std::vector<double> grid_cost(static_cast<std::size_t>(total), kInf);
    {
        const Matcher m0 = matcher_for(lo, hi);
        const unsigned workers = std::max(1u, std::min<unsigned>(budget.threads, static_cast<unsigned>(total)));
        std::vector<int> divergent(workers, 0);
        auto work = [&](unsigned w) {
            for (long k = w; k < total; k += workers) {
                grid_cost[static_cast<std::size_t>(k)] = cost(m0, grid_point(k), divergent[w]);
            }
        };
        if (workers == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
            for (auto& t : pool) t.join();
        }
        for (int d : divergent) st.divergent_candidates += d;
    }
    st.grid_candidates = static_cast<int>(total);
    st.evaluations += static_cast<int>(total);
    Vec best_y = seed_region.center();
    double best_f = kInf;
    for (long k = 0; k < total; ++k) {
        if (grid_cost[static_cast<std::size_t>(k)] < best_f) {
            best_f = grid_cost[static_cast<std::size_t>(k)];
            best_y = grid_point(k);
        }
    }

    // Continuation over growing horizons. A stage whose refined cost is much
    // worse than the previous one is rolled back and retried with a smaller
    // horizon increment; successful stages let the increment grow again.
    const double box_scale = (seed_region.hi - seed_region.lo).maxCoeff() / g;
    const double amp0 = std::log(budget.stage_amplification);
    double amp = amp0;
    double prev_lo = lo, prev_hi = hi, prev_best = kInf;
    Vec prev_y = best_y;
    double rate_f = 0.0, rate_b = 0.0; // expansion per unit chain time at the last accepted stage
    int retries = 0;
    auto grow = [&](double l, double r) {
        const double grow_f = rate_f > 1e-3 ? amp / rate_f : kInf;
        const double grow_b = rate_b > 1e-3 ? amp / rate_b : kInf;
        return std::pair<double, double>{std::max(a, l - std::max(grow_b, typical)),
                                         std::min(b, r + std::max(grow_f, typical))};
    };
    while (true) {
        ++st.stages;
        if (budget.max_evaluations - st.evaluations <= 0) { st.budget_exhausted = true; break; }
        const Matcher m = matcher_for(lo, hi);
        ++st.evaluations;
        std::optional<BestReparam> m0;
        try {
            m0 = m.match(best_y);
        } catch (const DivergenceError&) {
            ++st.divergent_candidates;
        }
        double stage_best = m0 ? m0->polished_cost : kInf;
        // the matching may run the orbit slower or faster than the chain, so
        // the expansion that matters is the one at the matched orbit times
        const double u_lo = m0 ? std::min(0.0, m0->h(lo) + m0->shift) : lo;
        const double u_hi = m0 ? std::max(0.0, m0->h(hi) + m0->shift) : hi;
        const detail::Sensitivity sens = detail::sensitivity(spec, best_y, u_lo, u_hi, budget.match.flow);
        Vec scale(n);
        for (int c = 0; c < n; ++c) scale[c] = 1.0 / std::max(1.0, sens.singular_values[c]);
        int stage_evals = 0;
        for (int restart = 0; restart < 4; ++restart) {
            const int cap = std::min(budget.max_evaluations - st.evaluations, budget.max_stage_evaluations - stage_evals);
            if (cap <= n + 1) {
                if (budget.max_evaluations - st.evaluations <= n + 1) st.budget_exhausted = true;
                break;
            }
            const Vec base = best_y;
            auto in_coords = [&](const Vec& c) { return Vec(base + sens.directions * scale.cwiseProduct(c)); };
            double step = std::isfinite(stage_best) ? 0.5 * std::max(stage_best, 1e-12) : box_scale;
            step = std::min(step, std::max(box_scale, 1e-12));
            const auto nm = detail::nelder_mead(
                [&](const Vec& c) { return cost(m, in_coords(c), st.divergent_candidates); }, Vec::Zero(n), step, cap);
            stage_evals += nm.evaluations;
            st.evaluations += nm.evaluations;
            const bool improved = nm.f < 0.9 * stage_best;
            if (nm.f < stage_best) {
                stage_best = nm.f;
                best_y = in_coords(nm.x);
            }
            if (!improved) break;
        }

        const bool degraded = std::isfinite(prev_best) && !(stage_best <= 4.0 * prev_best);
        if (degraded && retries < 4 && (hi > prev_hi || lo < prev_lo)) {
            // roll back and retry with half the expansion budget
            ++retries;
            best_y = prev_y;
            amp *= 0.5;
            std::tie(lo, hi) = grow(prev_lo, prev_hi);
            continue;
        }
        if (st.budget_exhausted || (lo <= a && hi >= b)) {
            if (degraded) {
                best_y = prev_y; // keep the last good candidate for the final check
            }
            break;
        }
        if (!degraded) amp = std::min(2.0 * amp0, amp * 1.25);
        retries = 0;
        prev_lo = lo;
        prev_hi = hi;
        prev_y = best_y;
        prev_best = stage_best;
        rate_f = hi > 0.0 ? std::log(std::max(1.0, sens.forward_gain)) / hi : 0.0;
        rate_b = lo < 0.0 ? std::log(std::max(1.0, sens.backward_gain)) / -lo : 0.0;
        std::tie(lo, hi) = grow(lo, hi);
    }

    MatchOptions full = budget.match;
    full.evaluate = true;
    try {
        const double per_unit = budget.samples_per_unit * std::max(1, budget.final_refinement);
        const int M = std::max(budget.min_samples, static_cast<int>(std::ceil((b - a) * per_unit)) + 1);
        const BestReparam br = best_reparam(spec, best_y, po, {a, b}, M, budget.orbit_factor * M, full);
        rep.witness = br.witness;
        rep.reparam = br.h;
        rep.achieved = br.distance.sampled;
        rep.inflation = br.distance.inflation;
    } catch (const DivergenceError&) {
        rep.achieved = kInf;
    }
    if (rep.achieved < epsilon) {
        rep.verdict = ShadowVerdict::shadowed;
        rep.justification = "witness orbit stays within epsilon of the concatenated pseudo-orbit on the sampled horizon";
    } else {
        rep.verdict = ShadowVerdict::not_found;
        rep.justification =
            "no witness found within the budget; this is not a proof that the pseudo-orbit cannot be shadowed";
    }
    return rep;
}

struct ConservationBound {
    double q_min = 0.0;
    double q_max = 0.0;
    long i_min = 0;
    long i_max = 0;
    double lipschitz = 1.0;
    double lower_bound = 0.0; // (q_max - q_min) / (2 L)
    bool in_valid_region = true;
};

struct RefutationCertificate {
    ConservationBound bound;
    double epsilon = 0.0;
    std::string justification;
};

/// Any true orbit keeps Q constant, while x_0 * t takes every value the
/// chain's Q takes; a Lipschitz bound L turns the spread of Q into a lower
/// bound on the sup-distance for every y and every h.
inline ConservationBound conservation_lower_bound(const VectorField& spec, const PseudoOrbit& po) {
    if (!spec.conserved) throw PreconditionError("field declares no conserved quantity");
    const ConservedQuantity& q = *spec.conserved;
    ConservationBound out;
    out.lipschitz = q.lipschitz;
    out.q_min = kInf;
    out.q_max = -kInf;
    const Vec center = q.center.size() == spec.dim ? q.center : Vec::Zero(spec.dim);
    auto visit = [&](long i, const Vec& x) {
        const double v = q.value(x);
        if (v < out.q_min) { out.q_min = v; out.i_min = i; }
        if (v > out.q_max) { out.q_max = v; out.i_max = i; }
        if (distance(spec, x, center) > q.valid_radius) out.in_valid_region = false;
    };
    if (po.head()) visit(-1, po.head()->x);
    for (std::size_t i = 0; i < po.size(); ++i) visit(static_cast<long>(i), po.body()[i].x);
    if (po.tail()) visit(static_cast<long>(po.size()), po.tail()->x);
    out.lower_bound = (out.q_max - out.q_min) / (2.0 * q.lipschitz);
    return out;
}

inline std::optional<RefutationCertificate> refute_by_conservation(const VectorField& spec, const PseudoOrbit& po,
                                                                   double epsilon) {
    const ConservationBound bound = conservation_lower_bound(spec, po);
    if (!bound.in_valid_region || !(bound.lower_bound > epsilon)) return std::nullopt;
    RefutationCertificate cert;
    cert.bound = bound;
    cert.epsilon = epsilon;
    cert.justification = "Q = " + spec.conserved->description + " is constant on every orbit; the chain attains Q = " +
                         detail::fmt17(bound.q_min) + " at index " + std::to_string(bound.i_min) + " and Q = " +
                         detail::fmt17(bound.q_max) + " at index " + std::to_string(bound.i_max) +
                         ", so every orbit and reparametrization stays at sup-distance >= (Qmax - Qmin) / (2 L) = " +
                         detail::fmt17(bound.lower_bound) + " > epsilon";
    return cert;
}

/// Report with verdict `refuted` built from a certificate.
inline ShadowingReport refuted_report(const RefutationCertificate& cert) {
    ShadowingReport r;
    r.verdict = ShadowVerdict::refuted;
    r.epsilon = cert.epsilon;
    r.lower_bound = cert.bound.lower_bound;
    r.justification = cert.justification;
    return r;
}

} // namespace shadowlab
