#pragma once

// Batch experiments: a validated config selects a built-in scenario and a
// pipeline; the run produces a JSON report, long-format series rows and,
// for some pipelines, extra files. Exit code 0 means a positive outcome,
// 2 an analysis-negative verdict.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadowlab/chain_graph.hpp"
#include "shadowlab/config.hpp"
#include "shadowlab/errors.hpp"
#include "shadowlab/flow.hpp"
#include "shadowlab/poincare.hpp"
#include "shadowlab/pseudo_orbit.hpp"
#include "shadowlab/scenarios.hpp"
#include "shadowlab/shadowing.hpp"
#include "shadowlab/splitting.hpp"

namespace shadowlab {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

struct SeriesRow {
    std::string series;
    long k = 0;
    double t = 0.0;
    double value = 0.0;
};

enum class Outcome { positive = 0, negative = 2 };

struct ExperimentResult {
    std::string scenario;
    std::string pipeline;
    Json report;
    std::vector<SeriesRow> series;
    std::map<std::string, std::string> files; // extra outputs by file name
    Outcome outcome = Outcome::positive;
    std::uint64_t seed = 0;
    int exit_code() const { return static_cast<int>(outcome); }
};

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

namespace io {

inline Json vec(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Json mat(const Mat& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec(m.row(i).transpose()));
    return a;
}

/// Non-finite values become null.
inline Json num(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json nums(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

inline Json complex_list(const std::vector<std::complex<double>>& v) {
    Json a = Json::array();
    for (const auto& z : v) a.push_back(Json::array({z.real(), z.imag()}));
    return a;
}

inline Json verification(const ChainVerification& v) {
    Json gaps = Json::array();
    for (const auto& g : v.gaps) gaps.push_back({{"label", g.label}, {"gap", num(g.gap)}, {"failed", g.failed}});
    return {{"verdict", v.verdict}, {"max_gap", v.max_gap}, {"gaps", gaps}};
}

inline Json critical(const CriticalElementReport& r) {
    Json moduli = Json::array();
    for (const auto& z : r.spectrum) moduli.push_back(std::abs(z));
    return {{"kind", r.kind == CriticalKind::periodic ? "periodic" : "singularity"},
            {"location", vec(r.location)},
            {"period", r.period},
            {"spectrum", complex_list(r.spectrum)},
            {"moduli", moduli},
            {"margins", nums(r.margins)},
            {"threshold", r.threshold},
            {"hyperbolic", r.hyperbolic},
            {"index", r.index},
            {"stable_manifold_dim", r.stable_manifold_dim}};
}

inline Json shadowing(const ShadowingReport& r) {
    Json j = {{"verdict", to_string(r.verdict)},
              {"epsilon", r.epsilon},
              {"achieved", num(r.achieved)},
              {"inflation", num(r.inflation)},
              {"lower_bound", r.lower_bound ? num(*r.lower_bound) : Json(nullptr)},
              {"justification", r.justification},
              {"horizon", Json::array({r.horizon.first, r.horizon.second})},
              {"witness", r.witness ? vec(*r.witness) : Json(nullptr)}};
    if (r.reparam) {
        Json knots = Json::array();
        for (const auto& [s, u] : r.reparam->knots()) knots.push_back(Json::array({s, u}));
        j["reparametrization"] = {{"max_slope", r.reparam->max_slope()}, {"knots", knots}};
    } else {
        j["reparametrization"] = nullptr;
    }
    j["statistics"] = {{"evaluations", r.stats.evaluations},
                       {"grid_candidates", r.stats.grid_candidates},
                       {"stages", r.stats.stages},
                       {"budget_exhausted", r.stats.budget_exhausted},
                       {"divergent_candidates", r.stats.divergent_candidates}};
    return j;
}

inline Json conservation(const ConservationBound& b) {
    return {{"q_min", b.q_min},         {"q_max", b.q_max},           {"index_min", b.i_min},
            {"index_max", b.i_max},     {"lipschitz", b.lipschitz},   {"lower_bound", b.lower_bound},
            {"in_valid_region", b.in_valid_region}};
}

} // namespace io

struct PipelineInfo {
    std::string name;
    std::string description;
    std::vector<ParamSpec> params;
};

namespace detail {

constexpr double kPosInf = std::numeric_limits<double>::infinity();

inline std::vector<ParamSpec> chain_params() {
    return {
        {"chain", ParamKind::text, "observed", -kPosInf, kPosInf, "observed | noisy | case1 | case2 | file"},
        {"x0", ParamKind::vector, "", -kPosInf, kPosInf, "start point (observed, noisy)"},
        {"steps", ParamKind::integer, "200", 1, 1e6, "chain length (observed, noisy)"},
        {"step", ParamKind::number, "1", 1, 1e6, "flow time per link, at least 1"},
        {"noise", ParamKind::number, "1e-4", 0, 1e3, "perturbation radius (observed, noisy)"},
        {"seed", ParamKind::integer, "1", 0, 1.8e19, "random seed"},
        {"delta", ParamKind::number, "0.05", 1e-12, 1e6, "jump bound (case1)"},
        {"N", ParamKind::integer, "100", 1, 1e6, "number of points (case2)"},
        {"v", ParamKind::vector, "", -kPosInf, kPosInf, "normal vector at the cycle point (case2)"},
        {"p", ParamKind::vector, "", -kPosInf, kPosInf, "cycle point (case2, default from scenario facts)"},
        {"period_hint", ParamKind::number, "", 1e-6, 1e6, "return time guess (case2)"},
        {"chain_file", ParamKind::text, "", -kPosInf, kPosInf, "chain text file (file)"},
    };
}

inline std::vector<ParamSpec> splitting_params() {
    return {
        {"x0", ParamKind::vector, "", -kPosInf, kPosInf, "base point of the sampled orbit"},
        {"total", ParamKind::number, "40", 1e-6, 1e5, "orbit length"},
        {"step", ParamKind::number, "0.25", 1e-4, 1e3, "cocycle sampling step"},
        {"p", ParamKind::integer, "1", 1, 1e3, "dimension of the stable bundle"},
        {"l", ParamKind::number, "1", 1e-6, 1e3, "domination length"},
        {"gap_min", ParamKind::number, "1.2", 1, 1e6, "required filtration gap"},
    };
}

inline std::vector<PipelineInfo> pipeline_table() {
    std::vector<PipelineInfo> t;
    {
        auto p = chain_params();
        p.push_back({"epsilon", ParamKind::number, "", 1e-12, 1e6, "shadowing tolerance"});
        p.push_back({"seed_center", ParamKind::vector, "", -kPosInf, kPosInf, "center of the witness box"});
        p.push_back({"seed_halfwidth", ParamKind::number, "0.01", 1e-12, 1e6, "half-width of the witness box"});
        p.push_back({"max_evaluations", ParamKind::integer, "1000", 1, 1e7, "matching evaluations"});
        p.push_back({"grid_fraction", ParamKind::number, "0.5", 0, 1, "budget share of the coarse grid"});
        p.push_back({"samples_per_unit", ParamKind::number, "4", 0.1, 1e3, "pseudo-orbit samples per time unit"});
        p.push_back({"final_refinement", ParamKind::integer, "4", 1, 64, "grid refinement of the final matching"});
        p.push_back({"stage_amplification", ParamKind::number, "1e3", 1.01, 1e12, "initial amplification per stage"});
        p.push_back({"threads", ParamKind::integer, "1", 0, 1024, "grid workers"});
        t.push_back({"shadow-search", "search for a shadowing orbit and reparametrization", p});
    }
    {
        auto p = chain_params();
        p.push_back({"epsilon", ParamKind::number, "", 1e-12, 1e6, "shadowing tolerance to refute"});
        t.push_back({"refute", "refute shadowing by a conserved-quantity lower bound", p});
    }
    t.push_back({"classify",
                 "classify singularities and periodic orbits (scenario facts or a given point)",
                 {{"point", ParamKind::vector, "", -kPosInf, kPosInf, "critical element guess"},
                  {"period", ParamKind::number, "", 1e-9, 1e6, "period (periodic point)"},
                  {"threshold", ParamKind::number, "1e-6", 0, 1, "hyperbolicity margin"}}});
    {
        auto p = splitting_params();
        p.push_back({"check_l", ParamKind::vector, "", 1e-6, 1e3, "domination lengths to check (default l)"});
        p.push_back({"fit_t_min", ParamKind::number, "1", 1e-6, 1e3, "fit window start"});
        p.push_back({"fit_horizon", ParamKind::number, "5", 1e-6, 1e3, "fit window end"});
        t.push_back({"splitting", "estimate a dominated splitting, check domination and fit rates", p});
    }
    {
        auto p = splitting_params();
        p.push_back({"arc_point", ParamKind::vector, "", -kPosInf, kPosInf, "arc start (default x0)"});
        p.push_back({"tau", ParamKind::number, "10", 1e-6, 1e5, "arc length"});
        p.push_back({"eta", ParamKind::number, "0.5", 1e-9, 1e3, "rate"});
        p.push_back({"T", ParamKind::number, "1", 1e-6, 1e3, "partition step"});
        p.push_back({"liao", ParamKind::integer, "0", 0, 1, "1: look for a nearby periodic orbit"});
        p.push_back({"liao_delta", ParamKind::number, "0.01", 1e-12, 1e3, "endpoint closeness for the periodic search"});
        t.push_back({"quasi-hyperbolic", "check the quasi hyperbolic inequalities on an orbit arc", p});
    }
    t.push_back({"uniform-estimates",
                 "uniform estimates over the scenario's hyperbolic periodic orbits",
                 {{"T_tilde", ParamKind::number, "1", 1e-6, 1e3, "partition step"},
                  {"eta_tilde", ParamKind::number, "0.5", 0, 1e3, "rate"}}});
    t.push_back({"chain-graph",
                 "cell graph of delta-chains, chain recurrent cells and chain classes",
                 {{"region_lo", ParamKind::vector, "", -kPosInf, kPosInf, "region lower corner"},
                  {"region_hi", ParamKind::vector, "", -kPosInf, kPosInf, "region upper corner"},
                  {"hgrid", ParamKind::number, "0.1", 1e-9, 1e6, "cell size"},
                  {"delta", ParamKind::number, "0.05", 1e-12, 1e6, "chain jump bound"},
                  {"t_max", ParamKind::number, "3", 1, 1e4, "largest sampled time"},
                  {"t_samples", ParamKind::integer, "9", 1, 1e4, "time samples in [1, t_max]"},
                  {"max_cells", ParamKind::integer, "2000000", 1, 1e9, "cell cap"},
                  {"threads", ParamKind::integer, "0", 0, 1024, "workers (0: all cores)"}}});
    return t;
}

inline const PipelineInfo& pipeline_info(const std::string& name) {
    static const std::vector<PipelineInfo> table = pipeline_table();
    for (const auto& p : table) {
        if (p.name == name) return p;
    }
    std::string list;
    for (const auto& p : table) list += (list.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown pipeline '" + name + "' (known: " + list + ")", 0);
}

inline const ParamSpec* find_param(const PipelineInfo& info, const std::string& key) {
    for (const auto& p : info.params) {
        if (p.key == key) return &p;
    }
    return nullptr;
}

inline Scenario load_scenario(const ExperimentConfig& cfg) {
    const std::string name = cfg.scenario_name();
    ScenarioParams defaults;
    try {
        defaults = scenario_defaults(name);
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what(), cfg.scenario.find("name")->line);
    }
    ScenarioParams params;
    for (const auto& [key, entry] : cfg.scenario.entries) {
        if (key == "name") continue;
        if (!defaults.count(key)) {
            std::string list;
            for (const auto& [k, v] : defaults) list += (list.empty() ? "" : ", ") + k;
            throw ConfigError("unknown key '" + key + "' for scenario '" + name + "' (known: " +
                                  (list.empty() ? "none" : list) + ")",
                              entry.line);
        }
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(entry.value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != entry.value.size() || !std::isfinite(v)) {
            throw ConfigError("key '" + key + "': '" + entry.value + "' is not a finite number", entry.line);
        }
        params[key] = v;
    }
    try {
        return builtin(name, params);
    } catch (const PreconditionError& e) {
        throw ConfigError(std::string("scenario '") + name + "': " + e.what(), cfg.scenario.line);
    }
}

inline PseudoOrbit build_chain(const Scenario& sc, const Params& p, const ExperimentConfig& cfg) {
    const VectorField& f = sc.field;
    const std::string kind = p.text("chain");
    if (kind == "observed" || kind == "noisy") {
        if (!p.has("x0")) throw ConfigError("chain '" + kind + "' needs key 'x0'", cfg.pipeline.line);
        const Vec x0 = p.vector("x0", f.dim);
        const auto n = static_cast<std::size_t>(p.integer("steps"));
        return kind == "observed" ? generate_observed(f, x0, n, p.number("step"), p.number("noise"), p.u64("seed"))
                                  : generate_noisy(f, x0, n, p.number("step"), p.number("noise"), p.u64("seed"));
    }
    if (kind == "case1") {
        const auto it = cfg.scenario.find("name");
        const std::string name = it ? it->value : "";
        if (name != "case1" && name != "case1_rotation") {
            throw ConfigError("chain 'case1' needs scenario case1 or case1_rotation", p.line("chain"));
        }
        const ScenarioParams d = scenario_defaults(name);
        const ConfigEntry* e = cfg.scenario.find("epsilon");
        const double eps = e ? std::stod(e->value) : d.at("epsilon");
        return case1_chain(eps, p.number("delta"), f.dim);
    }
    if (kind == "case2") {
        if (!p.has("v")) throw ConfigError("chain 'case2' needs key 'v'", p.line("chain"));
        Vec base;
        double hint = 0.0;
        if (p.has("p")) {
            base = p.vector("p", f.dim);
        } else if (!sc.facts.periodic_orbits.empty()) {
            base = sc.facts.periodic_orbits.front().point;
        } else {
            throw ConfigError("chain 'case2' needs key 'p' (scenario lists no periodic orbit)", p.line("chain"));
        }
        if (p.has("period_hint")) hint = p.number("period_hint");
        else if (!sc.facts.periodic_orbits.empty()) hint = sc.facts.periodic_orbits.front().period;
        else throw ConfigError("chain 'case2' needs key 'period_hint'", p.line("chain"));
        return case2_chain(f, base, p.vector("v", f.dim), static_cast<int>(p.integer("N")), hint);
    }
    if (kind == "file") {
        if (!p.has("chain_file")) throw ConfigError("chain 'file' needs key 'chain_file'", p.line("chain"));
        std::ifstream in(p.text("chain_file"));
        if (!in) throw ConfigError("cannot read chain file '" + p.text("chain_file") + "'", p.line("chain_file"));
        PseudoOrbit po = read_chain(in);
        if (po.dim() != f.dim) throw ConfigError("chain file dimension does not match the scenario", p.line("chain_file"));
        return po;
    }
    throw ConfigError("unknown chain kind '" + kind + "' (known: observed, noisy, case1, case2, file)", p.line("chain"));
}

inline void chain_series(const VectorField& f, const PseudoOrbit& po, const ChainVerification& v,
                         std::vector<SeriesRow>& out) {
    long k = 0;
    for (const auto& g : v.gaps) out.push_back({"chain_gap", k++, 0.0, g.gap});
    if (f.conserved) {
        for (std::size_t i = 0; i < po.body().size(); ++i) {
            out.push_back({"chain_Q", static_cast<long>(i), po.accumulated_time(static_cast<long>(i)),
                           f.conserved->value(po.body()[i].x)});
        }
    }
}

inline ExperimentResult run_shadow_search(const Scenario& sc, const Params& p, const ExperimentConfig& cfg) {
    ExperimentResult r;
    const VectorField& f = sc.field;
    const PseudoOrbit po = build_chain(sc, p, cfg);
    const ChainVerification ver = verify_chain(f, po);
    const Vec center = p.has("seed_center") ? p.vector("seed_center", f.dim) : po.body().front().x;
    SearchBudget b;
    b.max_evaluations = static_cast<int>(p.integer("max_evaluations"));
    b.grid_fraction = p.number("grid_fraction");
    b.samples_per_unit = p.number("samples_per_unit");
    b.final_refinement = static_cast<int>(p.integer("final_refinement"));
    b.stage_amplification = p.number("stage_amplification");
    b.threads = static_cast<unsigned>(p.integer("threads"));
    const ShadowingReport rep = search_shadowing(f, po, p.number("epsilon"), Box::around(center, p.number("seed_halfwidth")), b);
    r.report = {{"chain", {{"kind", p.text("chain")}, {"points", po.size()}, {"delta", po.delta()}}},
                {"verification", io::verification(ver)},
                {"shadowing", io::shadowing(rep)}};
    chain_series(f, po, ver, r.series);
    if (rep.witness && rep.reparam) {
        const auto [a, bnd] = rep.horizon;
        const Reparametrization& h = *rep.reparam;
        const OrbitSampler orbit(f, *rep.witness, std::min(0.0, h(a)), std::max(0.0, h(bnd)), FlowOptions{});
        const int n = std::max(2, static_cast<int>(std::ceil((bnd - a) * 4.0)) + 1);
        for (int i = 0; i < n; ++i) {
            const double t = i + 1 == n ? bnd : a + (bnd - a) * i / (n - 1);
            if (!orbit.covers(h(t))) break;
            r.series.push_back({"shadow_distance", i, t, distance(f, orbit.at(h(t)), eval_concat(f, po, t))});
            r.series.push_back({"reparametrization", i, t, h(t)});
        }
    }
    r.outcome = rep.verdict == ShadowVerdict::shadowed ? Outcome::positive : Outcome::negative;
    return r;
}

inline ExperimentResult run_refute(const Scenario& sc, const Params& p, const ExperimentConfig& cfg) {
    ExperimentResult r;
    const VectorField& f = sc.field;
    if (!f.conserved) throw ConfigError("scenario '" + f.name + "' declares no conserved quantity", cfg.scenario.line);
    const PseudoOrbit po = build_chain(sc, p, cfg);
    const ChainVerification ver = verify_chain(f, po);
    const double eps = p.number("epsilon");
    const ConservationBound bound = conservation_lower_bound(f, po);
    const auto cert = refute_by_conservation(f, po, eps);
    r.report = {{"chain", {{"kind", p.text("chain")}, {"points", po.size()}, {"delta", po.delta()}}},
                {"verification", io::verification(ver)},
                {"conservation", io::conservation(bound)},
                {"epsilon", eps},
                {"lower_bound", bound.lower_bound},
                {"refuted", cert.has_value()},
                {"justification", cert ? cert->justification
                                       : std::string("lower bound below epsilon or outside the valid region; no refutation")}};
    chain_series(f, po, ver, r.series);
    r.outcome = cert ? Outcome::negative : Outcome::positive;
    return r;
}

inline ExperimentResult run_classify(const Scenario& sc, const Params& p, const ExperimentConfig&) {
    ExperimentResult r;
    const VectorField& f = sc.field;
    ClassifyOptions opt;
    opt.threshold = p.number("threshold");
    Json list = Json::array();
    if (p.has("point")) {
        const Vec x = p.vector("point", f.dim);
        list.push_back(io::critical(p.has("period") ? classify_periodic(f, x, p.number("period"), opt)
                                                    : classify_singularity(f, x, opt)));
    } else {
        for (const auto& s : sc.facts.singularities) {
            Json j = io::critical(classify_singularity(f, s.location, opt));
            j["expected"] = {{"eigenvalues", io::complex_list(s.eigenvalues)}, {"hyperbolic", s.hyperbolic}};
            list.push_back(j);
        }
        for (const auto& o : sc.facts.periodic_orbits) {
            Json j = io::critical(classify_periodic(f, o.point, o.period, opt));
            j["expected"] = {{"multiplier_moduli", o.multipliers}, {"hyperbolic", o.hyperbolic}};
            list.push_back(j);
        }
    }
    long k = 0;
    for (const auto& e : list) {
        for (const auto& m : e["moduli"]) r.series.push_back({"modulus", k, 0.0, m.get<double>()});
        ++k;
    }
    r.report = {{"elements", list}};
    return r;
}

inline SplittingEstimate splitting_from(const Scenario& sc, const Params& p) {
    const VectorField& f = sc.field;
    if (!p.has("x0")) throw ConfigError("missing required key 'x0' in [pipeline]", 0);
    const NormalCocycle c = build_cocycle(f, p.vector("x0", f.dim), p.number("total"), p.number("step"));
    SplittingOptions so;
    so.l = p.number("l");
    so.gap_min = p.number("gap_min");
    return estimate_splitting(c, static_cast<int>(p.integer("p")), so);
}

inline Json estimate_json(const SplittingEstimate& e) {
    return {{"p", e.p},
            {"samples", e.size()},
            {"window", Json::array({e.time(0), e.time(e.size() - 1)})},
            {"invariance_residual", e.invariance_residual},
            {"min_angle", e.min_angle},
            {"gap_ratio", e.gap_ratio},
            {"l", e.l}};
}

inline ExperimentResult run_splitting(const Scenario& sc, const Params& p, const ExperimentConfig&) {
    ExperimentResult r;
    SplittingEstimate est;
    try {
        est = splitting_from(sc, p);
    } catch (const GapError& e) {
        r.report = {{"estimate", nullptr}, {"gap_error", e.what()}};
        r.outcome = Outcome::negative;
        return r;
    }
    std::vector<double> ls;
    if (p.has("check_l")) {
        const Vec v = p.vector("check_l");
        ls.assign(v.data(), v.data() + v.size());
    } else {
        ls = {p.number("l")};
    }
    Json checks = Json::array();
    bool primary = true;
    long k = 0;
    for (double l : ls) {
        const DominationCheck d = check_domination(est, l);
        checks.push_back({{"l", l},
                          {"verdict", d.verdict},
                          {"worst_product", d.worst_product},
                          {"worst_time", d.worst_time},
                          {"worst_point", io::vec(d.worst_point)}});
        r.series.push_back({"worst_product_vs_l", k++, l, d.worst_product});
        if (l == p.number("l") || !p.has("check_l")) {
            primary = primary && d.verdict;
            for (const auto& s : d.series) r.series.push_back({"domination_product", static_cast<long>(s.sample), s.t, s.product});
        }
    }
    HyperbolicFitOptions fo;
    fo.t_min = p.number("fit_t_min");
    fo.horizon = p.number("fit_horizon");
    const HyperbolicFit fit = fit_hyperbolic(est, fo);
    r.report = {{"estimate", estimate_json(est)},
                {"domination", checks},
                {"fit",
                 {{"hyperbolic", fit.hyperbolic},
                  {"lambda_s", fit.stable.lambda},
                  {"C_s", fit.stable.C},
                  {"rms_s", fit.stable.rms},
                  {"lambda_u", fit.unstable.lambda},
                  {"C_u", fit.unstable.C},
                  {"rms_u", fit.unstable.rms},
                  {"failure", fit.failure}}}};
    r.outcome = primary && fit.hyperbolic ? Outcome::positive : Outcome::negative;
    return r;
}

inline ExperimentResult run_quasi(const Scenario& sc, const Params& p, const ExperimentConfig&) {
    ExperimentResult r;
    const VectorField& f = sc.field;
    SplittingEstimate est;
    try {
        est = splitting_from(sc, p);
    } catch (const GapError& e) {
        r.report = {{"estimate", nullptr}, {"gap_error", e.what()}};
        r.outcome = Outcome::negative;
        return r;
    }
    const Vec x = p.has("arc_point") ? p.vector("arc_point", f.dim) : p.vector("x0", f.dim);
    const QuasiHyperbolicCertificate c =
        check_quasi_hyperbolic(f, x, p.number("tau"), est, p.number("eta"), p.number("T"));
    r.report = {{"estimate", estimate_json(est)},
                {"certificate",
                 {{"x", io::vec(c.x)},
                  {"tau", c.tau},
                  {"eta", c.eta},
                  {"T", c.T},
                  {"p", c.p},
                  {"partition", c.partition},
                  {"log_norm_stable", io::nums(c.log_norm_stable)},
                  {"log_conorm_unstable", io::nums(c.log_conorm_unstable)},
                  {"slack_contraction", io::nums(c.slack_contraction)},
                  {"slack_expansion", io::nums(c.slack_expansion)},
                  {"slack_gap", io::nums(c.slack_gap)},
                  {"endpoint_gap", c.endpoint_gap},
                  {"verdict", c.verdict}}}};
    for (std::size_t k = 0; k < c.slack_gap.size(); ++k) {
        const auto kk = static_cast<long>(k + 1);
        r.series.push_back({"slack_contraction", kk, c.partition[k + 1], c.slack_contraction[k]});
        r.series.push_back({"slack_expansion", kk, c.partition[k], c.slack_expansion[k]});
        r.series.push_back({"slack_gap", kk, c.partition[k + 1], c.slack_gap[k]});
    }
    bool ok = c.verdict;
    if (p.integer("liao") == 1) {
        if (!c.verdict) {
            r.report["liao"] = {{"success", false}, {"note", "certificate verdict is false"}};
        } else {
            const LiaoResult L = liao_shadow_periodic(f, c, p.number("liao_delta"));
            r.report["liao"] = {{"success", L.success},
                                {"periodic_point", L.success ? io::vec(L.periodic_point) : Json(nullptr)},
                                {"period", L.period},
                                {"distance", io::num(L.distance)},
                                {"newton_iterations", L.newton_iterations},
                                {"classification", L.classification ? io::critical(*L.classification) : Json(nullptr)},
                                {"note", L.note}};
            ok = ok && L.success;
        }
    }
    r.outcome = ok ? Outcome::positive : Outcome::negative;
    return r;
}

inline ExperimentResult run_uniform(const Scenario& sc, const Params& p, const ExperimentConfig&) {
    ExperimentResult r;
    const VectorField& f = sc.field;
    std::vector<CriticalElementReport> reps;
    for (const auto& o : sc.facts.periodic_orbits) reps.push_back(classify_periodic(f, o.point, o.period));
    const UniformPeriodicResult u = uniform_period_estimates(f, reps, p.number("T_tilde"), p.number("eta_tilde"));
    Json orbits = Json::array();
    long k = 0;
    for (const auto& s : u.orbits) {
        orbits.push_back({{"point", io::vec(s.point)},
                          {"period", s.period},
                          {"partition", s.partition},
                          {"slack_rate_gap", io::num(s.slack_rate_gap)},
                          {"worst_t", s.worst_t},
                          {"slack_stable_sum", io::num(s.slack_stable_sum)},
                          {"slack_unstable_sum", io::num(s.slack_unstable_sum)}});
        r.series.push_back({"slack_rate_gap", k++, s.worst_t, s.slack_rate_gap});
    }
    r.report = {{"T_tilde", u.T_tilde},
                {"eta_tilde", u.eta_tilde},
                {"verdict", u.verdict},
                {"min_slack", io::num(u.min_slack)},
                {"orbits", orbits}};
    r.outcome = u.verdict ? Outcome::positive : Outcome::negative;
    return r;
}

inline ExperimentResult run_chain_graph(const Scenario& sc, const Params& p, const ExperimentConfig& cfg) {
    ExperimentResult r;
    const VectorField& f = sc.field;
    if (!p.has("region_lo") || !p.has("region_hi")) {
        throw ConfigError(std::string("missing required key '") + (p.has("region_lo") ? "region_hi" : "region_lo") +
                              "' in [pipeline]",
                          cfg.pipeline.line);
    }
    ChainGraphOptions o;
    o.hgrid = p.number("hgrid");
    o.delta = p.number("delta");
    o.t_max = p.number("t_max");
    o.t_samples = static_cast<int>(p.integer("t_samples"));
    o.max_cells = static_cast<std::size_t>(p.integer("max_cells"));
    o.threads = static_cast<unsigned>(p.integer("threads"));
    const ChainGraph g = build_chain_graph(f, Box{p.vector("region_lo", f.dim), p.vector("region_hi", f.dim)}, o);
    const CellSet cr = chain_recurrent_cells(g);
    Json comps = Json::array();
    long k = 0;
    for (const auto& c : chain_components(g)) {
        Vec lo = g.cells.center(c.front()), hi = lo;
        for (auto v : c) {
            lo = lo.cwiseMin(g.cells.center(v));
            hi = hi.cwiseMax(g.cells.center(v));
        }
        comps.push_back({{"cells", c.size()}, {"center_lo", io::vec(lo)}, {"center_hi", io::vec(hi)}});
        r.series.push_back({"component_size", k++, 0.0, static_cast<double>(c.size())});
    }
    r.report = {{"cells", g.cells.size()},
                {"edges", g.edge_count()},
                {"radius", g.radius},
                {"hgrid_below_delta", o.hgrid < o.delta},
                {"times", g.times},
                {"chain_recurrent_cells", cr.size()},
                {"components", comps}};
    std::ostringstream edges, cells;
    write_edges(g, edges);
    write_cells_csv(g, cells);
    r.files["edges.txt"] = edges.str();
    r.files["cells.csv"] = cells.str();
    return r;
}

} // namespace detail

inline std::vector<std::string> list_pipelines() {
    std::vector<std::string> out;
    for (const auto& p : detail::pipeline_table()) out.push_back(p.name);
    return out;
}

inline std::string describe_pipeline(const std::string& name) { return detail::pipeline_info(name).description; }

/// Runs one experiment. Errors propagate as exceptions (ConfigError for
/// configuration problems, other Error subclasses from the analysis).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOverrides& ov = {}) {
    const std::string pname = cfg.pipeline_name();
    const PipelineInfo& info = detail::pipeline_info(pname);
    const Scenario sc = detail::load_scenario(cfg);
    Params p(cfg.pipeline, info.params, "pipeline '" + pname + "'");
    if (ov.seed) {
        if (const ParamSpec* s = detail::find_param(info, "seed")) p.set(*s, std::to_string(*ov.seed));
    }
    if (ov.threads) {
        if (const ParamSpec* s = detail::find_param(info, "threads")) p.set(*s, std::to_string(*ov.threads));
    }
    using Runner = std::function<ExperimentResult(const Scenario&, const Params&, const ExperimentConfig&)>;
    static const std::map<std::string, Runner> runners = {
        {"shadow-search", detail::run_shadow_search}, {"refute", detail::run_refute},
        {"classify", detail::run_classify},           {"splitting", detail::run_splitting},
        {"quasi-hyperbolic", detail::run_quasi},      {"uniform-estimates", detail::run_uniform},
        {"chain-graph", detail::run_chain_graph}};
    ExperimentResult r = runners.at(pname)(sc, p, cfg);
    r.scenario = sc.field.name;
    r.pipeline = pname;
    r.seed = p.has("seed") ? p.u64("seed") : 0;
    Json head = {{"scenario", r.scenario}, {"pipeline", pname},
                 {"outcome", r.outcome == Outcome::positive ? "positive" : "negative"}};
    head.update(r.report);
    r.report = std::move(head);
    return r;
}

inline std::string series_csv(const std::vector<SeriesRow>& rows) {
    std::ostringstream os;
    os << "series,k,t,value\n";
    for (const auto& s : rows) {
        os << s.series << ',' << s.k << ',' << detail::fmt17(s.t) << ',' << detail::fmt17(s.value) << '\n';
    }
    return os.str();
}

} // namespace shadowlab
