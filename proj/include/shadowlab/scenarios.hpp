#pragma once

// Built-in systems with closed-form ground truth, including the two
// non-hyperbolic normal forms used to defeat shadowing:
//   - a line of singularities with a transverse linear part (case1),
//   - its rotational variant with purely imaginary eigenvalues,
//   - a one-parameter family of neutral periodic orbits (case2).

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "shadowlab/flow.hpp"

namespace shadowlab {

/// C^1 bump: 1 on |x| <= eps/4, 0 on |x| >= eps, cubic smoothstep between.
struct Bump {
    double eps;

    double value(double x) const {
        const double a = 0.25 * eps, r = std::abs(x);
        if (r <= a) return 1.0;
        if (r >= eps) return 0.0;
        const double u = (eps - r) / (eps - a);
        return u * u * (3.0 - 2.0 * u);
    }

    double derivative(double x) const {
        const double a = 0.25 * eps, r = std::abs(x);
        if (r <= a || r >= eps) return 0.0;
        const double u = (eps - r) / (eps - a);
        const double du_dr = -1.0 / (eps - a);
        const double s = x > 0 ? 1.0 : -1.0;
        return 6.0 * u * (1.0 - u) * du_dr * s;
    }
};

inline Bump bump_beta(double epsilon) {
    if (!(epsilon > 0.0)) throw PreconditionError("bump width must be positive");
    return Bump{epsilon};
}

/// Higher-order term K with its Jacobian.
struct Nonlinearity {
    std::function<Vec(const Vec&)> value;
    std::function<Mat(const Vec&)> jacobian;
};

inline Nonlinearity zero_nonlinearity(int dim) {
    return {[dim](const Vec&) { return Vec::Zero(dim).eval(); },
            [dim](const Vec&) { return Mat::Zero(dim, dim).eval(); }};
}

/// K(x) = k |x|^2 x, which is o(|x|^2).
inline Nonlinearity cubic_nonlinearity(double k) {
    return {[k](const Vec& x) { return (k * x.squaredNorm() * x).eval(); },
            [k](const Vec& x) {
                const auto n = x.size();
                return (k * (x.squaredNorm() * Mat::Identity(n, n) + 2.0 * x * x.transpose())).eval();
            }};
}

struct SingularityFact {
    Vec location;
    std::vector<std::complex<double>> eigenvalues;
    bool hyperbolic = true;
    std::string provenance;
};

struct PeriodicFact {
    Vec point;
    double period = 0.0;
    std::vector<double> multipliers; // moduli, sorted ascending
    std::vector<double> normal_rates; // Lyapunov rates of the normal bundle
    bool hyperbolic = true;
    std::string provenance;
};

struct ScenarioFacts {
    std::vector<SingularityFact> singularities;
    std::vector<PeriodicFact> periodic_orbits;
    std::string conserved;
    std::string invariant_sets;
};

struct Scenario {
    VectorField field;
    ScenarioFacts facts;
};

namespace detail {

inline void check_quadratic_order(const Nonlinearity& K, int dim) {
    // |K(x)|/|x|^2 must shrink as x -> 0.
    for (int i = 0; i < dim; ++i) {
        Vec dir = Vec::Constant(dim, 0.3);
        dir[i] = 1.0;
        dir.normalize();
        const double big = K.value(1e-3 * dir).norm() / 1e-6;
        const double small = K.value(1e-4 * dir).norm() / 1e-8;
        if (!(small <= 0.5 * big + 1e-9)) {
            throw PreconditionError("nonlinearity K is not o(|x|^2) near the origin");
        }
    }
}

/// x' = D x + (1 - beta(|x|)) K(x).
inline VectorField localized_linear(std::string name, Mat D, Nonlinearity K, double epsilon) {
    const int n = static_cast<int>(D.rows());
    check_quadratic_order(K, n);
    const Bump beta = bump_beta(epsilon);
    VectorField spec;
    spec.name = std::move(name);
    spec.dim = n;
    spec.field = [D, K, beta](const Vec& x) -> Vec {
        const double w = 1.0 - beta.value(x.norm());
        Vec v = D * x;
        if (w != 0.0) v += w * K.value(x);
        return v;
    };
    spec.jacobian = [D, K, beta](const Vec& x) -> Mat {
        const double r = x.norm();
        const double w = 1.0 - beta.value(r);
        Mat J = D;
        if (w != 0.0) J += w * K.jacobian(x);
        const double db = beta.derivative(r);
        if (db != 0.0 && r > 0.0) J -= K.value(x) * (db / r) * x.transpose();
        return J;
    };
    return spec;
}

} // namespace detail

/// Line of singularities: D = diag(0, B) near the origin.
inline Scenario case1_field(const Mat& B, const Nonlinearity& K, double epsilon) {
    if (B.rows() != B.cols() || B.rows() < 1) throw PreconditionError("B must be square");
    const int n = static_cast<int>(B.rows()) + 1;
    Mat D = Mat::Zero(n, n);
    D.bottomRightCorner(n - 1, n - 1) = B;
    Scenario sc;
    sc.field = detail::localized_linear("case1", D, K, epsilon);
    ConservedQuantity q;
    q.value = [](const Vec& x) { return x[0]; };
    q.lipschitz = 1.0;
    q.center = Vec::Zero(n);
    const bool linear_everywhere = K.value(Vec::Constant(n, 0.5)).norm() == 0.0;
    q.valid_radius = linear_everywhere ? kInf : 0.25 * epsilon;
    q.description = "Q(y,z) = y";
    sc.field.conserved = q;

    for (double y : {-0.25 * epsilon, 0.0, 0.25 * epsilon}) {
        Vec s = Vec::Zero(n);
        s[0] = y;
        if (sc.field.field(s).norm() != 0.0) {
            throw PreconditionError("case1 field lost its singular segment");
        }
    }
    SingularityFact sing;
    sing.location = Vec::Zero(n);
    sing.eigenvalues.emplace_back(0.0, 0.0);
    Eigen::EigenSolver<Mat> es(B);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) sing.eigenvalues.push_back(es.eigenvalues()[i]);
    sing.hyperbolic = false;
    sing.provenance = "closed form: D = diag(0, B) has eigenvalue 0";
    sc.facts.singularities.push_back(sing);
    sc.facts.conserved = "y (first coordinate), Lipschitz 1";
    sc.facts.invariant_sets = "every (y, 0) with |y| <= eps/4 is a singularity";
    return sc;
}

/// Rotational variant: y' = C y with C the rotation generator of speed b.
inline Scenario case1_rotation_field(double b, const Mat& B, const Nonlinearity& K, double epsilon) {
    if (b == 0.0) throw PreconditionError("rotation speed b must be nonzero");
    const int nz = static_cast<int>(B.rows());
    const int n = 2 + nz;
    Mat D = Mat::Zero(n, n);
    D(0, 1) = b;
    D(1, 0) = -b;
    if (nz > 0) D.bottomRightCorner(nz, nz) = B;
    Scenario sc;
    sc.field = detail::localized_linear("case1_rotation", D, K, epsilon);
    ConservedQuantity q;
    q.value = [](const Vec& x) { return std::hypot(x[0], x[1]); };
    q.lipschitz = 1.0;
    q.center = Vec::Zero(n);
    const bool linear_everywhere = K.value(Vec::Constant(n, 0.5)).norm() == 0.0;
    q.valid_radius = linear_everywhere ? kInf : 0.25 * epsilon;
    q.description = "Q = sqrt(y1^2 + y2^2)";
    sc.field.conserved = q;

    SingularityFact sing;
    sing.location = Vec::Zero(n);
    sing.eigenvalues = {{0.0, b}, {0.0, -b}};
    Eigen::EigenSolver<Mat> es(B);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) sing.eigenvalues.push_back(es.eigenvalues()[i]);
    sing.hyperbolic = false;
    sing.provenance = "closed form: eigenvalues +-ib";
    sc.facts.singularities.push_back(sing);
    sc.facts.conserved = "radius in the (y1, y2) plane, Lipschitz 1";
    sc.facts.invariant_sets = "every (y1, y2, 0) is periodic with period 2 pi / |b|";
    return sc;
}

/// theta' = 1 (angle), y' = 0, z' = -rate z on S^1 x R^2.
inline Scenario case2_center_cycle(double rate = 1.0) {
    const double two_pi = 2.0 * std::numbers::pi;
    Scenario sc;
    VectorField& f = sc.field;
    f.name = "case2_center_cycle";
    f.dim = 3;
    f.coords = {CoordKind::angular(two_pi), CoordKind::linear(), CoordKind::linear()};
    f.field = [rate](const Vec& x) {
        Vec v(3);
        v << 1.0, 0.0, -rate * x[2];
        return v;
    };
    f.jacobian = [rate](const Vec&) {
        Mat J = Mat::Zero(3, 3);
        J(2, 2) = -rate;
        return J;
    };
    ConservedQuantity q;
    q.value = [](const Vec& x) { return x[1]; };
    q.lipschitz = 1.0;
    q.description = "Q(theta, y, z) = y";
    f.conserved = q;

    PeriodicFact orbit;
    orbit.point = Vec::Zero(3);
    orbit.period = two_pi;
    orbit.multipliers = {std::exp(-rate * two_pi), 1.0};
    orbit.normal_rates = {-rate, 0.0};
    orbit.hyperbolic = false;
    orbit.provenance = "closed form: return map (y, z) -> (y, exp(-2 pi rate) z)";
    sc.facts.periodic_orbits.push_back(orbit);
    sc.facts.conserved = "y, Lipschitz 1";
    sc.facts.invariant_sets = "periodic orbits {y = c, z = 0}";
    return sc;
}

/// x' = x(1 - r^2) - y, y' = y(1 - r^2) + x, z' = z.
inline Scenario saddle_cycle() {
    const double two_pi = 2.0 * std::numbers::pi;
    Scenario sc;
    VectorField& f = sc.field;
    f.name = "saddle_cycle";
    f.dim = 3;
    f.field = [](const Vec& p) {
        const double r2 = p[0] * p[0] + p[1] * p[1];
        Vec v(3);
        v << p[0] * (1.0 - r2) - p[1], p[1] * (1.0 - r2) + p[0], p[2];
        return v;
    };
    f.jacobian = [](const Vec& p) {
        const double x = p[0], y = p[1], r2 = x * x + y * y;
        Mat J = Mat::Zero(3, 3);
        J(0, 0) = 1.0 - r2 - 2.0 * x * x;
        J(0, 1) = -2.0 * x * y - 1.0;
        J(1, 0) = -2.0 * x * y + 1.0;
        J(1, 1) = 1.0 - r2 - 2.0 * y * y;
        J(2, 2) = 1.0;
        return J;
    };

    PeriodicFact cycle;
    cycle.point = (Vec(3) << 1.0, 0.0, 0.0).finished();
    cycle.period = two_pi;
    cycle.multipliers = {std::exp(-2.0 * two_pi), std::exp(two_pi)};
    cycle.normal_rates = {-2.0, 1.0};
    cycle.hyperbolic = true;
    cycle.provenance = "closed form: r' = r(1 - r^2), theta' = 1, z' = z";
    sc.facts.periodic_orbits.push_back(cycle);

    SingularityFact origin;
    origin.location = Vec::Zero(3);
    origin.eigenvalues = {{1.0, 1.0}, {1.0, -1.0}, {1.0, 0.0}};
    origin.hyperbolic = true;
    origin.provenance = "closed form: Jacobian at 0";
    sc.facts.singularities.push_back(origin);
    sc.facts.invariant_sets = "chain recurrent set {0} U {r = 1, z = 0}";
    return sc;
}

/// Diagonal linear system x' = diag(rates) x.
inline Scenario linear_diagonal(std::string name, const std::vector<double>& rates) {
    const int n = static_cast<int>(rates.size());
    Vec d(n);
    for (int i = 0; i < n; ++i) d[i] = rates[static_cast<std::size_t>(i)];
    Scenario sc;
    VectorField& f = sc.field;
    f.name = std::move(name);
    f.dim = n;
    f.field = [d](const Vec& x) { return d.cwiseProduct(x).eval(); };
    f.jacobian = [d](const Vec&) { return Mat(d.asDiagonal()); };
    SingularityFact origin;
    origin.location = Vec::Zero(n);
    bool hyperbolic = true;
    for (double r : rates) {
        origin.eigenvalues.emplace_back(r, 0.0);
        hyperbolic = hyperbolic && r != 0.0;
    }
    origin.hyperbolic = hyperbolic;
    origin.provenance = "closed form: diagonal linear system";
    sc.facts.singularities.push_back(origin);
    sc.facts.invariant_sets = "chain recurrent set {0}";
    return sc;
}

inline Scenario linear_saddle3d() { return linear_diagonal("linear_saddle3d", {-2.0, -1.0, 1.0}); }

using ScenarioParams = std::map<std::string, double>;

inline std::vector<std::string> list_scenarios() {
    return {"case1", "case1_rotation", "case2_center_cycle", "linear2d", "linear_saddle3d",
            "saddle_cycle"};
}

/// Recognized parameters (with defaults) for each built-in scenario.
inline ScenarioParams scenario_defaults(const std::string& name) {
    if (name == "case1") return {{"epsilon", 0.4}, {"B", -1.0}, {"k", 0.0}};
    if (name == "case1_rotation") return {{"epsilon", 0.4}, {"b", 1.0}, {"B", -1.0}, {"k", 0.0}};
    if (name == "case2_center_cycle") return {{"rate", 1.0}};
    if (name == "linear2d") return {{"a1", -1.0}, {"a2", 1.0}};
    if (name == "linear_saddle3d" || name == "saddle_cycle") return {};
    throw PreconditionError("unknown scenario '" + name + "'; known: case1, case1_rotation, "
                            "case2_center_cycle, linear2d, linear_saddle3d, saddle_cycle");
}

inline Scenario builtin(const std::string& name, const ScenarioParams& params = {}) {
    ScenarioParams p = scenario_defaults(name);
    for (const auto& [key, value] : params) {
        if (!p.contains(key)) {
            throw PreconditionError("scenario '" + name + "' has no parameter '" + key + "'");
        }
        p[key] = value;
    }
    if (name == "case1") {
        Mat B(1, 1);
        B(0, 0) = p["B"];
        return case1_field(B, cubic_nonlinearity(p["k"]), p["epsilon"]);
    }
    if (name == "case1_rotation") {
        Mat B(1, 1);
        B(0, 0) = p["B"];
        return case1_rotation_field(p["b"], B, cubic_nonlinearity(p["k"]), p["epsilon"]);
    }
    if (name == "case2_center_cycle") return case2_center_cycle(p["rate"]);
    if (name == "linear2d") return linear_diagonal("linear2d", {p["a1"], p["a2"]});
    if (name == "linear_saddle3d") return linear_saddle3d();
    return saddle_cycle();
}

} // namespace shadowlab
