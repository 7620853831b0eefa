#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "shadowlab/poincare.hpp"
#include "shadowlab/scenarios.hpp"

using namespace shadowlab;

namespace {

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }
const double kTwoPi = 2.0 * std::numbers::pi;

} // namespace

TEST(NormalFrame, OrthonormalAndOrthogonalToField) {
    const auto f = saddle_cycle().field;
    std::mt19937_64 rng(5);
    for (int k = 0; k < 50; ++k) {
        const Vec x = oracle::uniform_in_box(rng, v3(-1.5, -1.5, -0.5), v3(1.5, 1.5, 0.5));
        const Mat F = normal_frame(f, x);
        ASSERT_EQ(F.cols(), 2);
        EXPECT_LE((F.transpose() * F - Mat::Identity(2, 2)).norm(), 1e-12);
        EXPECT_LE((F.transpose() * f.field(x)).norm(), 1e-12 * (1.0 + f.field(x).norm()));
    }
    EXPECT_THROW(normal_frame(f, Vec::Zero(3)), SingularityError);
}

TEST(LinearPoincare, IdentityAtTimeZero) {
    const auto f = saddle_cycle().field;
    const LinearPoincare lp = linear_poincare(f, v3(0.4, 0.3, 0.2), 0.0);
    EXPECT_LE((lp.psi - Mat::Identity(2, 2)).norm(), 1e-14);
}

TEST(LinearPoincare, SaddleCycleNormalRates) {
    // along r = 1 the normal bundle is spanned by the radial and z directions
    const auto f = saddle_cycle().field;
    const double t = 1.3;
    const LinearPoincare lp = linear_poincare(f, v3(1, 0, 0), t, FlowOptions{1e-12});
    const Eigen::JacobiSVD<Mat> svd(lp.psi);
    EXPECT_NEAR(svd.singularValues()[0], std::exp(t), 1e-7);
    EXPECT_NEAR(svd.singularValues()[1], std::exp(-2.0 * t), 1e-7);
    EXPECT_LE(lp.direction_residual, 1e-8);
}

TEST(LinearPoincare, MatchesSectionMapDerivative) {
    const auto f = saddle_cycle().field;
    const SectionOptions sopt;
    std::mt19937_64 rng(9);
    for (int k = 0; k < 8; ++k) {
        const Vec x = oracle::uniform_in_box(rng, v3(-1.2, -1.2, -0.2), v3(1.2, 1.2, 0.2));
        if (std::hypot(x[0], x[1]) < 0.5) continue;
        const double t = 1.0 + 0.25 * k;
        const LinearPoincare lp = linear_poincare(f, x, t, sopt.flow);
        const double h = 1e-6;
        for (int j = 0; j < 2; ++j) {
            auto coords = [&](double s) {
                const Vec y = x + s * lp.frame_from.col(j);
                const SectionHit hit = section_map(f, x, y, t, sopt);
                return Vec(lp.frame_to.transpose() * (hit.point - lp.end));
            };
            const Vec col = (coords(h) - coords(-h)) / (2.0 * h);
            EXPECT_LE((col - lp.psi.col(j)).norm(), 1e-3 * (1.0 + lp.psi.norm()));
        }
    }
}

TEST(Cocycle, ComposeEqualsDirectLinearPoincare) {
    const auto f = saddle_cycle().field;
    const Vec x = v3(0.9, 0.2, 0.05);
    const NormalCocycle c = build_cocycle(f, x, 3.0, 0.5, FlowOptions{1e-12});
    ASSERT_EQ(c.size(), 7u);
    for (const Mat& F : c.frames) EXPECT_LE((F.transpose() * F - Mat::Identity(2, 2)).norm(), 1e-10);
    const LinearPoincare direct = linear_poincare(f, x, 3.0, FlowOptions{1e-12});
    // frames at the end may differ by an orthogonal change; compare singular values
    const Eigen::JacobiSVD<Mat> a(c.compose(0, 6)), b(direct.psi);
    EXPECT_LE((a.singularValues() - b.singularValues()).norm(), 1e-6 * b.singularValues()[0]);
    EXPECT_LE((c.compose(2, 5) - c.transitions[4] * c.transitions[3] * c.transitions[2]).norm(), 1e-14);
}

TEST(Cocycle, RejectsBadTimeGrid) {
    const auto f = saddle_cycle().field;
    EXPECT_THROW(build_cocycle_at(f, v3(1, 0, 0), {0.5, 1.0}), PreconditionError);
    EXPECT_THROW(build_cocycle(f, v3(1, 0, 0), -1.0, 0.5), PreconditionError);
}

TEST(SectionHit, ReturnTimeOfSaddleCycle) {
    const auto f = saddle_cycle().field;
    const Section s = section_at(f, v3(1, 0, 0));
    const SectionHit hit = hit_section(f, v3(1, 0, 0), s, kTwoPi);
    EXPECT_NEAR(hit.tau, kTwoPi, 1e-9);
    EXPECT_TRUE(hit.valid);
    EXPECT_THROW(section_at(f, Vec::Zero(3)), SingularityError);
}

TEST(Newton, ConvergesToSaddleCycle) {
    const auto f = saddle_cycle().field;
    const PeriodicOrbit po = find_periodic_newton(f, v3(1.05, 0.02, 1e-4), 6.0);
    EXPECT_NEAR(std::hypot(po.point[0], po.point[1]), 1.0, 1e-8);
    EXPECT_NEAR(po.point[2], 0.0, 1e-9);
    EXPECT_NEAR(po.period, kTwoPi, 1e-8);
    EXPECT_LE(po.residuals.back(), 1e-9);
}

TEST(Newton, CenterCycleIsSingular) {
    const auto f = case2_center_cycle().field;
    EXPECT_THROW(find_periodic_newton(f, v3(0.0, 0.05, 0.01), kTwoPi), ConvergenceError);
}

TEST(Classify, SaddleCycleMultipliers) {
    const Scenario sc = saddle_cycle();
    const auto r = classify_periodic(sc.field, v3(1, 0, 0), kTwoPi);
    ASSERT_EQ(r.spectrum.size(), 2u);
    EXPECT_NEAR(std::abs(r.spectrum[0]), std::exp(-4.0 * std::numbers::pi), 1e-9);
    EXPECT_NEAR(std::abs(r.spectrum[1]) / std::exp(kTwoPi), 1.0, 1e-7);
    EXPECT_TRUE(r.hyperbolic);
    EXPECT_EQ(r.index, 1);
    EXPECT_EQ(r.stable_manifold_dim, 2);
}

TEST(Classify, CenterCycleIsNotHyperbolic) {
    const auto r = classify_periodic(case2_center_cycle().field, Vec::Zero(3), kTwoPi);
    EXPECT_FALSE(r.hyperbolic);
    double closest = 1e9;
    for (const auto& mu : r.spectrum) closest = std::min(closest, std::abs(std::abs(mu) - 1.0));
    EXPECT_LE(closest, 1e-9);
}

TEST(Classify, RejectsNonPeriodicPoint) {
    EXPECT_THROW(classify_periodic(saddle_cycle().field, v3(1.2, 0, 0), kTwoPi), PreconditionError);
}

TEST(Classify, Singularities) {
    const auto origin = classify_singularity(saddle_cycle().field, v3(1e-3, 0, 0));
    EXPECT_TRUE(origin.hyperbolic);
    EXPECT_EQ(origin.index, 0);
    EXPECT_LE(origin.location.norm(), 1e-12);
    const auto lin = classify_singularity(linear_saddle3d().field, Vec::Zero(3));
    EXPECT_EQ(lin.index, 2);
    EXPECT_TRUE(lin.hyperbolic);
    const auto c1 = classify_singularity(builtin("case1").field, Vec::Zero(2));
    EXPECT_FALSE(c1.hyperbolic);
    EXPECT_THROW(classify_singularity(saddle_cycle().field, v3(1, 0, 0)), PreconditionError);
}

TEST(HyperbolicSubspaces, DiagonalSplit) {
    Mat A = Mat::Zero(3, 3);
    A.diagonal() << 0.5, 2.0, 0.25;
    const auto [Es, Eu] = hyperbolic_subspaces(A);
    EXPECT_EQ(Es.cols(), 2);
    EXPECT_EQ(Eu.cols(), 1);
    EXPECT_NEAR(std::abs(Eu(1, 0)), 1.0, 1e-12);
    EXPECT_LE(std::abs(Es.col(0)[1]) + std::abs(Es.col(1)[1]), 1e-12);
}
