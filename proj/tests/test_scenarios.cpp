#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "shadowlab/poincare.hpp"
#include "shadowlab/scenarios.hpp"

using namespace shadowlab;

TEST(Bump, PlateauSupportAndDerivative) {
    const Bump b = bump_beta(0.4);
    EXPECT_EQ(b.value(0.0), 1.0);
    EXPECT_EQ(b.value(0.1), 1.0);
    EXPECT_EQ(b.value(-0.1), 1.0);
    EXPECT_EQ(b.value(0.4), 0.0);
    EXPECT_EQ(b.value(1.0), 0.0);
    for (double x : {0.12, 0.2, 0.33, -0.25}) {
        const double h = 1e-7;
        EXPECT_NEAR(b.derivative(x), (b.value(x + h) - b.value(x - h)) / (2 * h), 1e-6) << x;
        EXPECT_GT(b.value(x), 0.0);
        EXPECT_LT(b.value(x), 1.0);
    }
    EXPECT_THROW(bump_beta(0.0), PreconditionError);
}

TEST(Case1, SingularSegmentAndLinearCore) {
    const Scenario sc = builtin("case1", {{"k", 2.0}});
    for (double y : {-0.1, 0.0, 0.05, 0.1}) {
        EXPECT_LE(sc.field.field((Vec(2) << y, 0.0).finished()).norm(), 1e-15) << y;
    }
    // inside |x| <= eps/4 the field is exactly diag(0, B) x
    const Vec x = (Vec(2) << 0.05, 0.03).finished();
    EXPECT_LE((sc.field.field(x) - (Vec(2) << 0.0, -0.03).finished()).norm(), 1e-15);
    // outside the support the nonlinearity is fully on
    const Vec far = (Vec(2) << 0.5, 0.5).finished();
    const Vec expect = (Vec(2) << 0.0, -0.5).finished() + 2.0 * far.squaredNorm() * far;
    EXPECT_LE((sc.field.field(far) - expect).norm(), 1e-14);
    EXPECT_NEAR(sc.field.conserved->valid_radius, 0.1, 1e-15);
}

TEST(Case1, RejectsNonlinearityThatIsNotHigherOrder) {
    Nonlinearity bad{[](const Vec& x) { return (0.5 * x).eval(); },
                     [](const Vec& x) { return (0.5 * Mat::Identity(x.size(), x.size())).eval(); }};
    Mat B(1, 1);
    B(0, 0) = -1.0;
    EXPECT_THROW(case1_field(B, bad, 0.4), PreconditionError);
}

TEST(Registry, ParametersAreValidated) {
    EXPECT_THROW(builtin("nope"), PreconditionError);
    EXPECT_THROW(builtin("case1", {{"q", 1.0}}), PreconditionError);
    EXPECT_THROW(builtin("case1_rotation", {{"b", 0.0}}), PreconditionError);
    EXPECT_EQ(builtin("linear2d", {{"a1", -3.0}}).field.field((Vec(2) << 1.0, 1.0).finished())[0], -3.0);
    for (const auto& name : list_scenarios()) EXPECT_EQ(builtin(name).field.name, name);
}

TEST(Facts, SingularitiesAreZerosWithStatedSpectrum) {
    for (const auto& name : list_scenarios()) {
        const Scenario sc = builtin(name);
        for (const auto& s : sc.facts.singularities) {
            EXPECT_LE(sc.field.field(s.location).norm(), 1e-14) << name;
            Eigen::EigenSolver<Mat> es(sc.field.jacobian(s.location));
            const auto got = es.eigenvalues();
            ASSERT_EQ(static_cast<std::size_t>(got.size()), s.eigenvalues.size()) << name;
            for (const auto& want : s.eigenvalues) {
                double best = kInf;
                for (Eigen::Index i = 0; i < got.size(); ++i) best = std::min(best, std::abs(got[i] - want));
                EXPECT_LE(best, 1e-12) << name;
            }
        }
    }
}

TEST(Facts, PeriodicOrbitsCloseAndMultipliersMatch) {
    for (const auto& name : list_scenarios()) {
        const Scenario sc = builtin(name);
        for (const auto& o : sc.facts.periodic_orbits) {
            const Vec end = flow_at(sc.field, o.point, o.period, FlowOptions{1e-12});
            EXPECT_LE(distance(sc.field, end, o.point), 1e-8) << name;
            const auto r = classify_periodic(sc.field, o.point, o.period);
            ASSERT_EQ(r.spectrum.size(), o.multipliers.size()) << name;
            for (std::size_t i = 0; i < o.multipliers.size(); ++i) {
                EXPECT_NEAR(std::abs(r.spectrum[i]), o.multipliers[i], std::max(1e-6 * o.multipliers[i], 1e-8)) << name;
            }
            EXPECT_EQ(r.hyperbolic, o.hyperbolic) << name;
            for (std::size_t i = 0; i < o.normal_rates.size(); ++i) {
                EXPECT_NEAR(std::exp(o.normal_rates[i] * o.period), o.multipliers[i], 1e-12) << name;
            }
        }
    }
}

TEST(SaddleCycle, ClosedFormOracleSatisfiesTheField) {
    const Scenario sc = saddle_cycle();
    std::mt19937_64 rng(23);
    for (int k = 0; k < 20; ++k) {
        const Vec x = oracle::uniform_in_box(rng, Vec::Constant(3, -1.2), Vec::Constant(3, 1.2));
        const double t = 0.3, h = 1e-6;
        const Vec y = oracle::saddle_cycle_flow(x, t);
        const Vec dy = (oracle::saddle_cycle_flow(x, t + h) - oracle::saddle_cycle_flow(x, t - h)) / (2 * h);
        EXPECT_LE((dy - sc.field.field(y)).norm(), 1e-6 * (1.0 + y.norm()));
    }
}
