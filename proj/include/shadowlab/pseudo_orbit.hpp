#pragma once

// delta-pseudo-orbits {(x_i, t_i)}, t_i >= 1: verification, accumulated
// times S_i, the concatenated trajectory x_0 * t, generators, and the two
// explicit chains through non-hyperbolic critical elements.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "shadowlab/flow.hpp"
#include "shadowlab/poincare.hpp"

namespace shadowlab {

struct ChainEntry {
    Vec x;
    double t = 1.0;
};

/// Body entries i = 0..m-1, optionally extended by a constant head
/// (x_i = head for i < 0) and a constant tail (x_i = tail for i >= m).
/// Extensions must be singularities or periodic points with t equal to
/// their return time; verify_chain checks this through their self-gaps.
class PseudoOrbit {
public:
    PseudoOrbit(std::vector<ChainEntry> body, double delta,
                std::optional<ChainEntry> head = std::nullopt,
                std::optional<ChainEntry> tail = std::nullopt)
        : body_(std::move(body)), head_(std::move(head)), tail_(std::move(tail)), delta_(delta) {
        if (body_.empty()) throw PreconditionError("pseudo-orbit needs at least one entry");
        if (!(delta_ > 0.0)) throw PreconditionError("pseudo-orbit delta must be positive");
        const auto n = body_.front().x.size();
        auto check = [n](const ChainEntry& e) {
            if (e.x.size() != n) throw PreconditionError("pseudo-orbit points differ in dimension");
            if (!(e.t >= 1.0) || !std::isfinite(e.t)) {
                throw PreconditionError("pseudo-orbit durations must satisfy t_i >= 1");
            }
        };
        for (const auto& e : body_) check(e);
        if (head_) check(*head_);
        if (tail_) check(*tail_);
        prefix_.resize(body_.size() + 1, 0.0);
        for (std::size_t i = 0; i < body_.size(); ++i) prefix_[i + 1] = prefix_[i] + body_[i].t;
    }

    const std::vector<ChainEntry>& body() const { return body_; }
    const std::optional<ChainEntry>& head() const { return head_; }
    const std::optional<ChainEntry>& tail() const { return tail_; }
    double delta() const { return delta_; }
    std::size_t size() const { return body_.size(); }
    int dim() const { return static_cast<int>(body_.front().x.size()); }
    double body_duration() const { return prefix_.back(); }

    bool has_index(long i) const {
        if (i < 0) return head_.has_value();
        if (i >= static_cast<long>(body_.size())) return tail_.has_value();
        return true;
    }

    const ChainEntry& entry(long i) const {
        if (!has_index(i)) throw PreconditionError("pseudo-orbit index out of range");
        if (i < 0) return *head_;
        if (i >= static_cast<long>(body_.size())) return *tail_;
        return body_[static_cast<std::size_t>(i)];
    }

    /// S_0 = 0, S_i = sum_{j<i} t_j (i > 0), S_i = -sum_{i<=j<0} t_j (i < 0).
    double accumulated_time(long i) const {
        const long m = static_cast<long>(body_.size());
        if (i < 0) {
            if (!head_) throw PreconditionError("negative index on a chain without a head");
            return static_cast<double>(i) * head_->t;
        }
        if (i <= m) return prefix_[static_cast<std::size_t>(i)];
        if (!tail_) throw PreconditionError("index past the end of a chain without a tail");
        return prefix_.back() + static_cast<double>(i - m) * tail_->t;
    }

    /// Covered time range of x_0 * t.
    std::pair<double, double> time_range() const {
        return {head_ ? -kInf : 0.0, tail_ ? kInf : prefix_.back()};
    }

    /// Segment i with S_i <= t < S_{i+1}; the end of a finite chain maps to
    /// its last segment.
    long segment_index(double t) const {
        const auto [lo, hi] = time_range();
        if (!(t >= lo && t <= hi) || std::isnan(t)) {
            throw PreconditionError("time outside the range covered by the pseudo-orbit");
        }
        const long m = static_cast<long>(body_.size());
        if (t < 0.0) return static_cast<long>(std::floor(t / head_->t));
        if (t >= prefix_.back()) {
            if (!tail_) return m - 1;
            return m + static_cast<long>(std::floor((t - prefix_.back()) / tail_->t));
        }
        const auto it = std::upper_bound(prefix_.begin(), prefix_.end(), t);
        return static_cast<long>(it - prefix_.begin()) - 1;
    }

private:
    std::vector<ChainEntry> body_;
    std::optional<ChainEntry> head_;
    std::optional<ChainEntry> tail_;
    double delta_;
    std::vector<double> prefix_;
};

inline double accumulated_time(const PseudoOrbit& po, long i) { return po.accumulated_time(i); }

struct GapRecord {
    std::string label; // "head", "head->0", "i->i+1", "m-1->tail", "tail"
    long from = 0;
    double gap = 0.0;  // NaN when the flow diverged
    bool failed = false;
};

struct ChainVerification {
    std::vector<GapRecord> gaps;
    double max_gap = 0.0;
    bool verdict = false;
};

/// Every jump d(X_{t_i}(x_i), x_{i+1}), including head/tail links and the
/// self-gaps of the constant extensions.
inline ChainVerification verify_chain(const VectorField& spec, const PseudoOrbit& po,
                                      const FlowOptions& opt = {}) {
    ChainVerification out;
    out.verdict = true;
    auto record = [&](std::string label, long from, const ChainEntry& a, const Vec& target) {
        GapRecord g;
        g.label = std::move(label);
        g.from = from;
        try {
            g.gap = distance(spec, flow_at(spec, a.x, a.t, opt), target);
        } catch (const DivergenceError&) {
            g.gap = std::nan("");
            g.failed = true;
        }
        if (g.failed || !(g.gap < po.delta())) out.verdict = false;
        if (!g.failed) out.max_gap = std::max(out.max_gap, g.gap);
        out.gaps.push_back(std::move(g));
    };
    const auto& body = po.body();
    const long m = static_cast<long>(body.size());
    if (po.head()) {
        record("head", -1, *po.head(), po.head()->x);
        record("head->0", -1, *po.head(), body.front().x);
    }
    for (long i = 0; i + 1 < m; ++i) {
        record(std::to_string(i) + "->" + std::to_string(i + 1), i, body[static_cast<std::size_t>(i)],
               body[static_cast<std::size_t>(i + 1)].x);
    }
    if (po.tail()) {
        record(std::to_string(m - 1) + "->tail", m - 1, body.back(), po.tail()->x);
        record("tail", m, *po.tail(), po.tail()->x);
    }
    return out;
}

/// x_0 * t over a time window, with segment trajectories precomputed.
class ConcatTrajectory {
public:
    ConcatTrajectory(const VectorField& spec, const PseudoOrbit& po, double a, double b,
                     const FlowOptions& opt = {})
        : po_(&po) {
        if (a > b) std::swap(a, b);
        first_ = po.segment_index(a);
        last_ = po.segment_index(b);
        for (long i = first_; i <= last_; ++i) {
            const bool ext = i < 0 || i >= static_cast<long>(po.size());
            if (ext) {
                const bool is_head = i < 0;
                auto& slot = is_head ? head_traj_ : tail_traj_;
                if (!slot) {
                    const ChainEntry& e = po.entry(i);
                    slot = integrate(spec, e.x, 0.0, e.t, opt);
                }
                continue;
            }
            const ChainEntry& e = po.entry(i);
            segs_.emplace(i, integrate(spec, e.x, 0.0, e.t, opt));
        }
    }

    /// Value at t, taking segment i with S_i <= t (right-continuous).
    Vec at(double t) const { return on_segment(po_->segment_index(t), t); }

    /// Limit from the left at t (differs from at(t) only at segment starts).
    Vec left_limit(double t) const {
        long i = po_->segment_index(t);
        if (t == po_->accumulated_time(i) && i - 1 >= first_ && po_->has_index(i - 1)) --i;
        return on_segment(i, t);
    }

    Vec on_segment(long i, double t) const {
        const double local = std::clamp(t - po_->accumulated_time(i), 0.0, po_->entry(i).t);
        if (i < 0) return head_traj_->at(local);
        if (i >= static_cast<long>(po_->size())) return tail_traj_->at(local);
        const auto it = segs_.find(i);
        if (it == segs_.end()) throw PreconditionError("concatenated trajectory queried outside its window");
        return it->second.at(local);
    }

private:
    const PseudoOrbit* po_;
    long first_ = 0, last_ = 0;
    std::map<long, Trajectory> segs_;
    std::optional<Trajectory> head_traj_, tail_traj_;
};

/// x_0 * t = X_{t - S_i}(x_i) for t in [S_i, S_{i+1}].
inline Vec eval_concat(const VectorField& spec, const PseudoOrbit& po, double t,
                       const FlowOptions& opt = {}) {
    const long i = po.segment_index(t);
    const ChainEntry& e = po.entry(i);
    return flow_at(spec, e.x, t - po.accumulated_time(i), opt);
}

namespace detail {

/// Uniform sample from the ball of radius r, restricted to masked coordinates.
inline Vec ball_sample(std::mt19937_64& rng, const Vec& mask, double r) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto n = mask.size();
    const auto active = static_cast<double>((mask.array() != 0.0).count());
    if (active == 0 || r == 0.0) return Vec::Zero(n);
    Vec d(n);
    for (Eigen::Index i = 0; i < n; ++i) d[i] = mask[i] != 0.0 ? gauss(rng) : 0.0;
    const double len = d.norm();
    if (len == 0.0) return Vec::Zero(n);
    return d * (r * std::pow(unif(rng), 1.0 / active) / len);
}

} // namespace detail

/// Dynamic noise: x_{i+1} = X_step(x_i) + xi_i with |xi_i| <= noise on the
/// coordinates selected by `mask` (default: all).
inline PseudoOrbit generate_noisy(const VectorField& spec, const Vec& x0, std::size_t count, double step,
                                  double noise, std::uint64_t seed, const FlowOptions& opt = {},
                                  Vec mask = Vec()) {
    if (count < 1) throw PreconditionError("noisy chain needs at least one point");
    if (!(step >= 1.0)) throw PreconditionError("noisy chain step must be >= 1");
    if (!(noise >= 0.0)) throw PreconditionError("noise must be non-negative");
    if (mask.size() == 0) mask = Vec::Ones(spec.dim);
    std::mt19937_64 rng(seed);
    std::vector<ChainEntry> body;
    body.push_back({x0, step});
    for (std::size_t i = 1; i < count; ++i) {
        const Vec next = flow_at(spec, body.back().x, step, opt) + detail::ball_sample(rng, mask, noise);
        body.push_back({next, step});
    }
    return PseudoOrbit(std::move(body), noise + 10.0 * opt.tol);
}

/// Observation noise around one true orbit: x_i = X_{i step}(x0) + xi_i.
/// Chains stay bounded even when the flow has expanding directions; the
/// declared delta is the largest measured gap plus 10 tol.
inline PseudoOrbit generate_observed(const VectorField& spec, const Vec& x0, std::size_t count,
                                     double step, double noise, std::uint64_t seed,
                                     const FlowOptions& opt = {}) {
    if (count < 1) throw PreconditionError("observed chain needs at least one point");
    if (!(step >= 1.0)) throw PreconditionError("observed chain step must be >= 1");
    std::mt19937_64 rng(seed);
    const Vec mask = Vec::Ones(spec.dim);
    const Trajectory ref = integrate(spec, x0, 0.0, step * static_cast<double>(count), opt);
    std::vector<ChainEntry> body;
    for (std::size_t i = 0; i < count; ++i) {
        body.push_back({ref.at(step * static_cast<double>(i)) + detail::ball_sample(rng, mask, noise), step});
    }
    PseudoOrbit provisional(body, 1.0);
    const ChainVerification v = verify_chain(spec, provisional, opt);
    return PseudoOrbit(std::move(body), v.max_gap * (1.0 + 1e-9) + 10.0 * opt.tol);
}

/// Chain of singularities (alpha_i, 0), alpha_0 = 0 < ... < alpha_n = eps/2,
/// equal steps of at most 0.8 delta, t_i = 1, extended constantly.
inline PseudoOrbit case1_chain(double epsilon, double delta, int dim = 2) {
    if (!(delta > 0.0 && delta < 0.5 * epsilon)) {
        throw PreconditionError("case1 chain requires 0 < delta < epsilon / 2");
    }
    const double span = 0.5 * epsilon;
    const auto n = static_cast<long>(std::ceil(span / (0.8 * delta) - 1e-12));
    std::vector<ChainEntry> body;
    for (long i = 0; i <= n; ++i) {
        Vec x = Vec::Zero(dim);
        x[0] = i == n ? span : span * static_cast<double>(i) / static_cast<double>(n);
        body.push_back({x, 1.0});
    }
    ChainEntry head = body.front();
    ChainEntry tail = body.back();
    return PseudoOrbit(std::move(body), delta, head, tail);
}

struct Case2Options {
    SectionOptions section;
    double isometry_tol = 1e-6;
    double delta = 0.0; // 0: 1.5 |v| / N
};

/// Points p + F((i/N) C^i v) on the normal section of a periodic orbit whose
/// linear Poincare map acts isometrically on v; t_i are first-return times.
inline PseudoOrbit case2_chain(const VectorField& spec, const Vec& p, const Vec& v, int N,
                               double period_hint, const Case2Options& opt = {}) {
    if (N < 1) throw PreconditionError("case2 chain needs N >= 1");
    const Section sigma = section_at(spec, p, 1.0);
    const double T = hit_section(spec, p, sigma, period_hint, opt.section).tau;
    const Mat F = normal_frame(spec, p);
    const Vec w = F.transpose() * v;
    if ((F * w - v).norm() > 1e-9 * std::max(1.0, v.norm())) {
        throw PreconditionError("case2 chain vector must lie in the normal space at p");
    }
    const LinearPoincare lp = linear_poincare(spec, p, T, opt.section.flow);
    const Mat P = F.transpose() * lp.tangent * F;
    if (std::abs((P * w).norm() - w.norm()) > opt.isometry_tol * std::max(1.0, w.norm())) {
        throw PreconditionError("linear Poincare map does not act isometrically on v");
    }
    auto returned = [&](const Vec& x) {
        const SectionHit hit = hit_section(spec, x, sigma, T, opt.section);
        if (hit.tau < 0.9 * T || hit.tau > 1.1 * T) {
            throw ConvergenceError("case2 chain return time left [0.9 T, 1.1 T]");
        }
        return hit.tau;
    };
    std::vector<ChainEntry> body;
    Vec Cw = w;
    for (int i = 0; i < N; ++i) {
        const Vec x = p + F * (static_cast<double>(i) / N * Cw);
        body.push_back({x, returned(x)});
        Cw = P * Cw;
    }
    const Vec xN = p + F * Cw;
    ChainEntry head{p, T};
    ChainEntry tail{xN, returned(xN)};
    const double delta = opt.delta > 0.0 ? opt.delta : 1.5 * v.norm() / N;
    return PseudoOrbit(std::move(body), delta, head, tail);
}

// Line-oriented text format:
//   <dim> <delta>
//   head <t> <x_0> ... <x_{n-1}>      (optional)
//   <i> <t> <x_0> ... <x_{n-1}>       (body, i = 0..m-1)
//   tail <t> <x_0> ... <x_{n-1}>      (optional)
// Numbers are printed with 17 significant digits, so reading a written
// chain reproduces it bit for bit.

namespace detail {
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
} // namespace detail

inline void write_chain(std::ostream& os, const PseudoOrbit& po) {
    os << po.dim() << ' ' << detail::fmt17(po.delta()) << '\n';
    auto row = [&](const std::string& tag, const ChainEntry& e) {
        os << tag << ' ' << detail::fmt17(e.t);
        for (Eigen::Index k = 0; k < e.x.size(); ++k) os << ' ' << detail::fmt17(e.x[k]);
        os << '\n';
    };
    if (po.head()) row("head", *po.head());
    for (std::size_t i = 0; i < po.size(); ++i) row(std::to_string(i), po.body()[i]);
    if (po.tail()) row("tail", *po.tail());
}

inline PseudoOrbit read_chain(std::istream& is) {
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw PreconditionError("chain file line " + std::to_string(lineno) + ": " + msg);
    };
    int dim = 0;
    double delta = 0.0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream hs(line);
        if (!(hs >> dim >> delta) || dim < 1) fail("expected header '<dim> <delta>'");
        break;
    }
    if (dim < 1) fail("missing header");
    std::optional<ChainEntry> head, tail;
    std::vector<ChainEntry> body;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream rs(line);
        std::string tag, tok;
        rs >> tag;
        std::vector<double> nums;
        while (rs >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0') fail("malformed number '" + tok + "'");
            nums.push_back(v);
        }
        if (static_cast<int>(nums.size()) != dim + 1) fail("expected t followed by " + std::to_string(dim) + " coordinates");
        ChainEntry e;
        e.t = nums[0];
        e.x = Eigen::Map<const Vec>(nums.data() + 1, dim);
        if (tag == "head") {
            if (head || !body.empty()) fail("head row must come first");
            head = e;
        } else if (tag == "tail") {
            if (tail) fail("duplicate tail row");
            tail = e;
        } else {
            if (tail) fail("body row after tail");
            if (tag != std::to_string(body.size())) fail("body rows must be numbered 0, 1, ...");
            body.push_back(e);
        }
    }
    return PseudoOrbit(std::move(body), delta, head, tail);
}

} // namespace shadowlab
