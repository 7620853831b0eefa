#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "shadowlab/flow.hpp"
#include "shadowlab/scenarios.hpp"

using namespace shadowlab;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

} // namespace

TEST(Integrate, LinearSaddle2dMatchesClosedForm) {
    const auto f = builtin("linear2d").field;
    const Vec y = flow_at(f, v2(1.0, 1.0), 1.0);
    EXPECT_NEAR(y[0], std::exp(-1.0), 1e-8);
    EXPECT_NEAR(y[1], std::exp(1.0), 1e-8);
}

TEST(Integrate, SaddleCycleReturnsAfterOnePeriod) {
    const auto f = saddle_cycle().field;
    const Vec x = v3(1.0, 0.0, 0.0);
    EXPECT_LE((flow_at(f, x, 2.0 * std::numbers::pi) - x).norm(), 1e-6);
}

TEST(Integrate, SaddleCycleAgreesWithCylindricalSolution) {
    const auto f = saddle_cycle().field;
    std::mt19937_64 rng(3);
    for (int k = 0; k < 20; ++k) {
        const Vec x = oracle::uniform_in_box(rng, v3(-1.5, -1.5, -0.1), v3(1.5, 1.5, 0.1));
        if (std::hypot(x[0], x[1]) < 0.2) continue;
        const double t = 0.5 + 2.0 * k / 20.0;
        EXPECT_LE((flow_at(f, x, t) - oracle::saddle_cycle_flow(x, t)).norm(), 1e-7);
    }
}

TEST(Integrate, ZeroSpanReturnsStartExactly) {
    const auto f = saddle_cycle().field;
    const Vec x = v3(0.3, -0.2, 0.1);
    const Trajectory tr = integrate(f, x, 0.0, 0.0);
    EXPECT_EQ(tr.at(0.0), x);
    EXPECT_EQ(flow_at(f, x, 0.0), x);
    const Trajectory tr2 = integrate(f, x, 0.0, 2.0);
    EXPECT_EQ(tr2.at(0.0), x);
}

TEST(Integrate, DenseOutputConsistentWithGroupProperty) {
    const auto f = saddle_cycle().field;
    const Vec x = v3(0.7, 0.4, 0.05);
    const FlowOptions opt{1e-10};
    const Trajectory tr = integrate(f, x, 0.0, 3.0, opt);
    for (double t : {0.37, 1.1, 2.25}) {
        const Vec mid = tr.at(t);
        const Vec direct = tr.at(3.0);
        const Vec composed = flow_at(f, mid, 3.0 - t, opt);
        EXPECT_LE((composed - direct).norm(), 10.0 * opt.tol * (1.0 + direct.norm()));
    }
}

TEST(Integrate, DivergenceGuardThrows) {
    const auto f = builtin("linear2d").field;
    FlowOptions opt;
    opt.max_norm = 100.0;
    EXPECT_THROW(flow_at(f, v2(0.0, 1.0), 10.0, opt), DivergenceError);
    opt.truncate_on_divergence = true;
    const Trajectory tr = integrate(f, v2(0.0, 1.0), 0.0, 10.0, opt);
    EXPECT_TRUE(tr.truncated());
    EXPECT_TRUE(tr.covers(2.0));
    EXPECT_FALSE(tr.covers(9.0));
}

TEST(Integrate, RejectsNonFiniteSpanAndWrongDimension) {
    const auto f = saddle_cycle().field;
    EXPECT_THROW(integrate(f, v3(1, 0, 0), 0.0, std::nan("")), PreconditionError);
    EXPECT_THROW(integrate(f, v2(1, 0), 0.0, 1.0), PreconditionError);
}

TEST(FlowAt, Case1ClosedFormContraction) {
    const auto f = builtin("case1").field;
    const Vec y = flow_at(f, v2(0.3, 1.0), std::log(2.0));
    EXPECT_NEAR(y[0], 0.3, 1e-9);
    EXPECT_NEAR(y[1], 0.5, 1e-9);
}

TEST(FlowAt, NegativeTimeInvertsForwardFlow) {
    for (const auto& name : {"saddle_cycle", "linear_saddle3d"}) {
        const auto f = builtin(name).field;
        const Vec x = v3(0.6, -0.3, 0.2);
        EXPECT_LE((flow_at(f, flow_at(f, x, 1.3), -1.3) - x).norm(), 1e-7) << name;
    }
}

TEST(TangentFlow, LinearIsMatrixExponential) {
    const Vec rates = v3(-2.0, -1.0, 1.0);
    const auto f = linear_saddle3d().field;
    for (double t : {0.5, 1.5, 3.0}) {
        const Mat V = tangent_flow(f, v3(0.1, 0.2, 0.3), t);
        EXPECT_LE((V - oracle::linear_tangent(rates, t)).norm(), 1e-7 * std::exp(t));
    }
    EXPECT_EQ(tangent_flow(f, v3(0.1, 0.2, 0.3), 0.0), Mat::Identity(3, 3));
}

TEST(TangentFlow, MatchesCentralDifferences) {
    const auto f = saddle_cycle().field;
    const Vec x = v3(0.8, 0.3, 0.1);
    const double t = 1.7, h = 1e-5;
    const Mat V = tangent_flow(f, x, t, FlowOptions{1e-12});
    for (int i = 0; i < 3; ++i) {
        Vec e = Vec::Zero(3);
        e[i] = h;
        const Vec col = (flow_at(f, x + e, t, FlowOptions{1e-12}) - flow_at(f, x - e, t, FlowOptions{1e-12})) / (2 * h);
        EXPECT_LE((col - V.col(i)).norm(), 1e-3);
    }
}

TEST(TangentFlow, CocycleLaw) {
    const auto f = saddle_cycle().field;
    const Vec x = v3(0.5, -0.6, 0.02);
    const double s = 0.8, t = 1.1;
    const Mat lhs = tangent_flow(f, flow_at(f, x, t), s) * tangent_flow(f, x, t);
    const Mat rhs = tangent_flow(f, x, s + t);
    EXPECT_LE((lhs - rhs).norm(), 1e-5 * (1.0 + rhs.norm()));
}

TEST(Jacobians, MatchFiniteDifferencesOnEveryScenario) {
    std::mt19937_64 rng(11);
    for (const auto& name : list_scenarios()) {
        const auto f = builtin(name).field;
        for (int k = 0; k < 25; ++k) {
            const Vec x = oracle::uniform_in_box(rng, Vec::Constant(f.dim, -0.5), Vec::Constant(f.dim, 0.5));
            const Mat J = f.jacobian(x);
            const double h = 1e-6;
            for (int i = 0; i < f.dim; ++i) {
                Vec e = Vec::Zero(f.dim);
                e[i] = h;
                const Vec col = (f.field(x + e) - f.field(x - e)) / (2 * h);
                EXPECT_LE((col - J.col(i)).norm(), 1e-5 * (1.0 + J.norm())) << name;
            }
        }
    }
}

TEST(Distance, AngleCoordinatesWrap) {
    const auto f = case2_center_cycle().field;
    const double two_pi = 2.0 * std::numbers::pi;
    EXPECT_NEAR(distance(f, v3(0.1, 0, 0), v3(two_pi - 0.1, 0, 0)), 0.2, 1e-12);
    EXPECT_NEAR(canonical(f, v3(-0.5, 1, 2))[0], two_pi - 0.5, 1e-12);
    // field periodic in the angle
    EXPECT_LE((f.field(v3(0.3, 0.1, 0.2)) - f.field(v3(0.3 + two_pi, 0.1, 0.2))).norm(), 1e-12);
}

TEST(Conserved, DriftOverFiftyTimeUnits) {
    const FlowOptions opt{1e-10};
    for (const auto& name : {"case1", "case1_rotation", "case2_center_cycle"}) {
        const auto f = builtin(name).field;
        ASSERT_TRUE(f.conserved.has_value());
        Vec x = Vec::Constant(f.dim, 0.03);
        const Vec y = flow_at(f, x, 50.0, opt);
        EXPECT_LE(std::abs(f.conserved->value(y) - f.conserved->value(x)), 100.0 * opt.tol) << name;
    }
}
