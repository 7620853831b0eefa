#pragma once

// Cell discretization of a box and the delta-chain reachability graph on
// cell centers. Chain recurrent cells are the cells of nontrivial strongly
// connected components.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "shadowlab/errors.hpp"
#include "shadowlab/flow.hpp"
#include "shadowlab/pseudo_orbit.hpp"

namespace shadowlab {

/// Regular lattice of half-open cells [lo + k h, lo + (k+1) h) over a box;
/// the upper box faces belong to the last cell.
class CellLattice {
public:
    CellLattice() = default;
    CellLattice(Box region, double h, std::size_t max_cells) : region_(std::move(region)), h_(h) {
        if (!(h > 0.0)) throw PreconditionError("grid spacing must be positive");
        const auto n = region_.dim();
        if (n == 0 || region_.hi.size() != n) throw PreconditionError("region box dimension mismatch");
        counts_.resize(static_cast<std::size_t>(n));
        double total = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double w = region_.hi[i] - region_.lo[i];
            if (!(w > 0.0)) throw PreconditionError("region box must have positive width");
            counts_[static_cast<std::size_t>(i)] = std::max<long>(1, static_cast<long>(std::ceil(w / h - 1e-9)));
            total *= static_cast<double>(counts_[static_cast<std::size_t>(i)]);
        }
        if (total > static_cast<double>(max_cells)) {
            throw PreconditionError("cell count " + std::to_string(static_cast<long long>(total)) +
                                    " exceeds the cap of " + std::to_string(max_cells));
        }
        size_ = static_cast<std::size_t>(total);
    }

    std::size_t size() const { return size_; }
    int dim() const { return static_cast<int>(counts_.size()); }
    double spacing() const { return h_; }
    const Box& region() const { return region_; }
    const std::vector<long>& counts() const { return counts_; }

    std::vector<long> multi_index(std::size_t id) const {
        std::vector<long> k(counts_.size());
        for (std::size_t i = 0; i < counts_.size(); ++i) {
            k[i] = static_cast<long>(id % static_cast<std::size_t>(counts_[i]));
            id /= static_cast<std::size_t>(counts_[i]);
        }
        return k;
    }

    std::size_t id_of(const std::vector<long>& k) const {
        std::size_t id = 0;
        for (std::size_t i = counts_.size(); i-- > 0;) id = id * static_cast<std::size_t>(counts_[i]) + static_cast<std::size_t>(k[i]);
        return id;
    }

    Vec center(std::size_t id) const {
        const auto k = multi_index(id);
        Vec c(dim());
        for (int i = 0; i < dim(); ++i) c[i] = region_.lo[i] + (static_cast<double>(k[static_cast<std::size_t>(i)]) + 0.5) * h_;
        return c;
    }

    Box cell_box(std::size_t id) const {
        const Vec c = center(id);
        return Box::around(c, 0.5 * h_);
    }

    /// Cell containing x, or -1 outside the region.
    long locate(const Vec& x) const {
        std::vector<long> k(counts_.size());
        for (std::size_t i = 0; i < counts_.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            if (!(x[ii] >= region_.lo[ii] && x[ii] <= region_.hi[ii])) return -1;
            k[i] = std::min(counts_[i] - 1, static_cast<long>(std::floor((x[ii] - region_.lo[ii]) / h_)));
        }
        return static_cast<long>(id_of(k));
    }

    /// Cells whose centers lie within distance r of y (Euclidean, raw coordinates).
    template <class Visit>
    void for_each_center_near(const Vec& y, double r, Visit&& visit) const {
        const std::size_t n = counts_.size();
        std::vector<long> lo(n), hi(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const double u = (y[ii] - region_.lo[ii]) / h_ - 0.5;
            lo[i] = std::max<long>(0, static_cast<long>(std::ceil(u - r / h_)));
            hi[i] = std::min<long>(counts_[i] - 1, static_cast<long>(std::floor(u + r / h_)));
            if (lo[i] > hi[i]) return;
        }
        std::vector<long> k = lo;
        const double r2 = r * r;
        while (true) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                const double c = region_.lo[ii] + (static_cast<double>(k[i]) + 0.5) * h_;
                d2 += (c - y[ii]) * (c - y[ii]);
            }
            if (d2 < r2) visit(id_of(k));
            std::size_t i = 0;
            while (i < n && ++k[i] > hi[i]) {
                k[i] = lo[i];
                ++i;
            }
            if (i == n) break;
        }
    }

private:
    Box region_;
    double h_ = 0.0;
    std::vector<long> counts_;
    std::size_t size_ = 0;
};

struct ChainGraphOptions {
    double hgrid = 0.1;
    double delta = 0.05;
    double t_max = 3.0;
    int t_samples = 9;
    std::size_t max_cells = 2'000'000;
    unsigned threads = 0; // 0: hardware concurrency
    FlowOptions flow{1e-9, 1e6, 4'000'000, true};
};

using CellSet = std::vector<std::uint32_t>; // sorted cell ids

struct ChainGraph {
    CellLattice cells;
    double delta = 0.0;
    double radius = 0.0;               // delta + (sqrt(n)/2) hgrid
    std::vector<double> times;
    std::vector<std::vector<std::uint32_t>> successors; // sorted
    std::vector<std::uint32_t> component; // SCC id per cell
    std::uint32_t component_count = 0;
    std::vector<bool> component_recurrent; // SCC has a cycle (self-loops count)

    std::size_t edge_count() const {
        std::size_t e = 0;
        for (const auto& s : successors) e += s.size();
        return e;
    }
    bool has_edge(std::uint32_t a, std::uint32_t b) const {
        const auto& s = successors[a];
        return std::binary_search(s.begin(), s.end(), b);
    }
};

namespace detail {

/// Iterative Tarjan on the subgraph induced by `member` (all cells if empty).
/// Returns SCC ids (UINT32_MAX for non-members) and the number of SCCs.
inline std::pair<std::vector<std::uint32_t>, std::uint32_t> tarjan(
    const std::vector<std::vector<std::uint32_t>>& succ, const std::vector<char>& member) {
    constexpr std::uint32_t none = UINT32_MAX;
    const std::size_t n = succ.size();
    auto in = [&](std::uint32_t v) { return member.empty() || member[v] != 0; };
    std::vector<std::uint32_t> index(n, none), low(n, 0), comp(n, none);
    std::vector<char> on_stack(n, 0);
    std::vector<std::uint32_t> stack;
    std::vector<std::pair<std::uint32_t, std::size_t>> call; // vertex, next successor position
    std::uint32_t counter = 0, ncomp = 0;
    for (std::uint32_t root = 0; root < n; ++root) {
        if (!in(root) || index[root] != none) continue;
        call.emplace_back(root, 0);
        index[root] = low[root] = counter++;
        stack.push_back(root);
        on_stack[root] = 1;
        while (!call.empty()) {
            auto& [v, pos] = call.back();
            if (pos < succ[v].size()) {
                const std::uint32_t w = succ[v][pos++];
                if (!in(w)) continue;
                if (index[w] == none) {
                    index[w] = low[w] = counter++;
                    stack.push_back(w);
                    on_stack[w] = 1;
                    call.emplace_back(w, 0);
                } else if (on_stack[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
                continue;
            }
            const std::uint32_t done = v;
            call.pop_back();
            if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
            if (low[done] == index[done]) {
                std::uint32_t w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                    comp[w] = ncomp;
                } while (w != done);
                ++ncomp;
            }
        }
    }
    return {comp, ncomp};
}

inline std::vector<bool> recurrent_components(const std::vector<std::vector<std::uint32_t>>& succ,
                                              const std::vector<std::uint32_t>& comp, std::uint32_t ncomp) {
    std::vector<std::size_t> sizes(ncomp, 0);
    std::vector<bool> rec(ncomp, false);
    for (std::size_t v = 0; v < succ.size(); ++v) {
        if (comp[v] == UINT32_MAX) continue;
        ++sizes[comp[v]];
        if (std::binary_search(succ[v].begin(), succ[v].end(), static_cast<std::uint32_t>(v))) rec[comp[v]] = true;
    }
    for (std::uint32_t c = 0; c < ncomp; ++c) rec[c] = rec[c] || sizes[c] > 1;
    return rec;
}

} // namespace detail

/// Edge c -> c' iff d(X_t(center c), center c') < delta + (sqrt(n)/2) hgrid
/// for some sampled t in [1, t_max].
inline ChainGraph build_chain_graph(const VectorField& spec, const Box& region, const ChainGraphOptions& opt = {}) {
    if (!(opt.t_max >= 1.0)) throw PreconditionError("t_max must be at least 1");
    if (opt.t_samples < 1) throw PreconditionError("t_samples must be positive");
    if (!(opt.delta > 0.0)) throw PreconditionError("delta must be positive");
    if (region.dim() != spec.dim) throw PreconditionError("region dimension does not match the field");
    ChainGraph g;
    g.cells = CellLattice(region, opt.hgrid, opt.max_cells);
    if (g.cells.size() >= UINT32_MAX) throw PreconditionError("too many cells for 32-bit ids");
    g.delta = opt.delta;
    g.radius = opt.delta + 0.5 * std::sqrt(static_cast<double>(spec.dim)) * opt.hgrid;
    for (int i = 0; i < opt.t_samples; ++i) {
        g.times.push_back(opt.t_samples == 1 ? 1.0 : 1.0 + (opt.t_max - 1.0) * i / (opt.t_samples - 1));
    }
    const std::size_t n = g.cells.size();
    g.successors.assign(n, {});

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t id = begin; id < end; ++id) {
            const Trajectory tr = integrate(spec, g.cells.center(id), 0.0, g.times.back(), opt.flow);
            std::vector<std::uint32_t>& out = g.successors[id];
            for (double t : g.times) {
                if (!tr.covers(t)) break;
                const Vec y = canonical(spec, tr.at(t));
                g.cells.for_each_center_near(y, g.radius, [&](std::size_t c) { out.push_back(static_cast<std::uint32_t>(c)); });
            }
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
        }
    };
    unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, n)));
    if (threads <= 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t b = std::min(n, t * chunk), e = std::min(n, b + chunk);
            pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }

    auto [comp, ncomp] = detail::tarjan(g.successors, {});
    g.component = std::move(comp);
    g.component_count = ncomp;
    g.component_recurrent = detail::recurrent_components(g.successors, g.component, ncomp);
    return g;
}

/// Cells of strongly connected components that contain a cycle.
inline CellSet chain_recurrent_cells(const ChainGraph& g) {
    CellSet out;
    for (std::uint32_t v = 0; v < g.successors.size(); ++v) {
        if (g.component_recurrent[g.component[v]]) out.push_back(v);
    }
    return out;
}

/// Cells grouped by chain class (recurrent SCCs only), ordered by smallest cell id.
inline std::vector<CellSet> chain_components(const ChainGraph& g) {
    std::vector<CellSet> by(g.component_count);
    for (std::uint32_t v = 0; v < g.successors.size(); ++v) {
        if (g.component_recurrent[g.component[v]]) by[g.component[v]].push_back(v);
    }
    std::vector<CellSet> out;
    for (auto& s : by) {
        if (!s.empty()) out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const CellSet& a, const CellSet& b) { return a.front() < b.front(); });
    return out;
}

/// True iff the cells form one SCC of the induced subgraph, with at least one
/// cycle (a single cell needs a self-loop).
inline bool is_chain_transitive(const ChainGraph& g, const CellSet& cells) {
    if (cells.empty()) return false;
    std::vector<char> member(g.successors.size(), 0);
    for (auto c : cells) {
        if (c >= g.successors.size()) throw PreconditionError("cell id outside the graph");
        member[c] = 1;
    }
    auto [comp, ncomp] = detail::tarjan(g.successors, member);
    if (ncomp != 1) return false;
    if (cells.size() > 1) return true;
    return g.has_edge(cells.front(), cells.front());
}

/// Cells whose (closed) box contains a point of the given sample set.
inline CellSet cells_containing(const ChainGraph& g, const std::vector<Vec>& points) {
    std::set<std::uint32_t> s;
    for (const auto& p : points) {
        const long id = g.cells.locate(p);
        if (id >= 0) s.insert(static_cast<std::uint32_t>(id));
    }
    return {s.begin(), s.end()};
}

/// One `from to` pair per line.
inline void write_edges(const ChainGraph& g, std::ostream& os) {
    for (std::uint32_t v = 0; v < g.successors.size(); ++v) {
        for (auto w : g.successors[v]) os << v << ' ' << w << '\n';
    }
}

/// id, lattice index, center, SCC id, recurrent flag.
inline void write_cells_csv(const ChainGraph& g, std::ostream& os) {
    const int n = g.cells.dim();
    os << "cell";
    for (int i = 0; i < n; ++i) os << ",k" << i;
    for (int i = 0; i < n; ++i) os << ",c" << i;
    os << ",component,recurrent\n";
    for (std::uint32_t v = 0; v < g.successors.size(); ++v) {
        const auto k = g.cells.multi_index(v);
        const Vec c = g.cells.center(v);
        os << v;
        for (long ki : k) os << ',' << ki;
        for (int i = 0; i < n; ++i) os << ',' << detail::fmt17(c[i]);
        os << ',' << g.component[v] << ',' << (g.component_recurrent[g.component[v]] ? 1 : 0) << '\n';
    }
}

} // namespace shadowlab
