#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "thinsets/gibbs.hpp"

using namespace thinsets;

namespace {

FiniteMeasure fair_coin() { return FiniteMeasure::uniform(MetricSpace::line(std::vector<double>{0.0, 1.0})); }

Eigen::MatrixXd identity_F() {
    Eigen::MatrixXd F(2, 1);
    F << 0.0, 1.0;
    return F;
}

Eigen::VectorXd scalar(double x) { return Eigen::VectorXd::Constant(1, x); }

MomentProblem bern_problem() { return {fair_coin(), identity_F(), PointTarget{scalar(0.7)}}; }

double binom_pmf(int n, int s, double p) {
    return std::exp(std::lgamma(n + 1.0) - std::lgamma(s + 1.0) - std::lgamma(n - s + 1.0) + s * std::log(p) +
                    (n - s) * std::log1p(-p));
}

}  // namespace

TEST(Events, MembershipOnEmpiricalMeasures) {
    const auto sp = fair_coin().space();
    const FiniteMeasure emp(sp, {0.25, 0.75});
    EXPECT_TRUE(event_contains(WholeSpace{}, emp));
    EXPECT_TRUE(event_contains(MomentBand{identity_F(), scalar(0.7), 0.05, BandNorm::sup}, emp));
    EXPECT_FALSE(event_contains(MomentBand{identity_F(), scalar(0.7), 0.04, BandNorm::sup}, emp));
    EXPECT_TRUE(event_contains(MetricBall{FiniteMeasure(sp, {0.3, 0.7}), BallMetric::fm, 0.05}, emp));
    EXPECT_FALSE(event_contains(MetricBall{FiniteMeasure(sp, {0.9, 0.1}), BallMetric::prohorov, 0.1}, emp));
}

TEST(ExactConditional, WholeSpaceGivesProduct) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    const auto alpha = FiniteMeasure::normalized(MetricSpace::line(std::vector<double>{0, 1, 2}), {u(rng), u(rng), u(rng)});
    for (std::size_t k : {1u, 2u, 3u}) {
        const auto ce = exact_conditional(alpha, 6, WholeSpace{}, k);
        EXPECT_NEAR(ce.acceptance_rate, 1.0, 1e-12);
        EXPECT_TRUE(ce.exact);
        const auto ref = product_measure(alpha, k);
        EXPECT_LT(tv_distance(ce.law, ref), 1e-12);
    }
    EXPECT_NEAR(exact_event_probability(alpha, 6, WholeSpace{}), 1.0, 1e-12);
}

TEST(ExactConditional, FourFlipsWithThreeHeads) {
    const MomentBand exactly3{identity_F(), scalar(0.75), 0.0, BandNorm::sup};
    const auto ce = exact_conditional(fair_coin(), 4, exactly3, 1);
    EXPECT_NEAR(ce.law[1], 0.75, 1e-12);
    EXPECT_NEAR(exact_event_probability(fair_coin(), 4, exactly3), 0.25, 1e-12);
    // k = 2: P(X1 = 1, X2 = 1 | three heads) = C(2,1) / C(4,3) = 1/2.
    const auto ce2 = exact_conditional(fair_coin(), 4, exactly3, 2);
    EXPECT_NEAR(ce2.law[3], 0.5, 1e-12);
}

TEST(ExactConditional, EmptyEventIsZeroAcceptance) {
    const MomentBand empty{identity_F(), scalar(0.3), 0.01, BandNorm::sup};
    EXPECT_EQ(exact_event_probability(fair_coin(), 4, empty), 0.0);
    try {
        (void)exact_conditional(fair_coin(), 4, empty, 1);
        FAIL() << "expected ZeroAcceptanceError";
    } catch (const ZeroAcceptanceError& e) {
        EXPECT_EQ(e.upper_bound(), 0.0);
    }
}

TEST(ExactConditional, BernoulliBandMatchesBinomialSum) {
    const int n = 32;
    const double eps = 0.0458;
    double num = 0.0, den = 0.0;
    for (int s = 0; s <= n; ++s) {
        if (std::abs(s / static_cast<double>(n) - 0.7) > eps) continue;
        const double p = binom_pmf(n, s, 0.5);
        den += p;
        num += p * s / n;
    }
    const auto ce = exact_conditional(fair_coin(), n, MomentBand{identity_F(), scalar(0.7), eps, BandNorm::sup}, 1);
    EXPECT_NEAR(ce.acceptance_rate, den, 1e-12);
    EXPECT_NEAR(ce.law[1], num / den, 1e-12);
    const double tv = tv_distance(ce.law, FiniteMeasure(fair_coin().space(), {0.3, 0.7}));
    EXPECT_NEAR(tv, 2.0 * std::abs(num / den - 0.7), 1e-12);
}

TEST(ExactConditional, ExchangeableMarginals) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    const auto alpha = FiniteMeasure::normalized(MetricSpace::line(std::vector<double>{-1, 0, 2}), {u(rng), u(rng), u(rng)});
    Eigen::MatrixXd F(3, 1);
    F << -1, 0, 2;
    const MomentBand band{F, scalar(0.8), 0.2, BandNorm::sup};
    const auto one = exact_conditional(alpha, 12, band, 1);
    const auto two = exact_conditional(alpha, 12, band, 2);
    for (std::size_t a = 0; a < 3; ++a) {
        double first = 0.0, second = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            first += two.law[a * 3 + b];
            second += two.law[b * 3 + a];
        }
        EXPECT_NEAR(first, one.law[a], 1e-12);
        EXPECT_NEAR(second, one.law[a], 1e-12);
    }
}

TEST(ExactConditional, BudgetIsEnforced) {
    std::vector<double> xs(12);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
    const auto alpha = FiniteMeasure::uniform(MetricSpace::line(xs));
    EXPECT_THROW((void)exact_event_probability(alpha, 200, WholeSpace{}), BudgetExceeded);
}

TEST(MonteCarlo, WholeSpaceAcceptsEverything) {
    const auto ce = run_conditional_mc(fair_coin(), 10, WholeSpace{}, 2, 20000, 1);
    EXPECT_EQ(ce.acceptance_rate, 1.0);
    EXPECT_FALSE(ce.exact);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(ce.law[c], 0.25, 4.0 * std::sqrt(0.25 * 0.75 / 20000));
}

TEST(MonteCarlo, AgreesWithExactWithinThreeStandardErrors) {
    const int n = 32;
    const MomentBand band{identity_F(), scalar(0.7), 0.0458, BandNorm::sup};
    const auto ex = exact_conditional(fair_coin(), n, band, 1);
    const std::uint64_t trials = 200000;
    const auto mc = run_conditional_mc(fair_coin(), n, band, 1, trials, 77, 3);
    const double p = ex.acceptance_rate;
    EXPECT_NEAR(mc.acceptance_rate, p, 3.0 * std::sqrt(p * (1 - p) / trials));
    const double acc = mc.acceptance_rate * trials;
    const double q = ex.law[1];
    EXPECT_NEAR(mc.law[1], q, 3.0 * std::sqrt(q * (1 - q) / acc));
}

TEST(MonteCarlo, ZeroAcceptanceCarriesRuleOfThree) {
    const MomentBand thin{identity_F(), scalar(0.95), 0.001, BandNorm::sup};
    try {
        (void)run_conditional_mc(fair_coin(), 64, thin, 1, 3000, 4);
        FAIL() << "expected ZeroAcceptanceError";
    } catch (const ZeroAcceptanceError& e) {
        EXPECT_DOUBLE_EQ(e.upper_bound(), 1e-3);
    }
}

TEST(MonteCarlo, DeterministicAtFixedWorkers) {
    const MomentBand band{identity_F(), scalar(0.6), 0.1, BandNorm::sup};
    const auto a = run_conditional_mc(fair_coin(), 20, band, 2, 5000, 99, 4);
    const auto b = run_conditional_mc(fair_coin(), 20, band, 2, 5000, 99, 4);
    EXPECT_EQ(a.acceptance_rate, b.acceptance_rate);
    EXPECT_EQ(a.law.weights(), b.law.weights());
    const auto c = run_conditional_mc(fair_coin(), 20, band, 2, 5000, 100, 4);
    EXPECT_NE(a.law.weights(), c.law.weights());
}

TEST(Sanov, TrivialEventRowsAreZero) {
    MomentProblem pb{fair_coin(), identity_F(), PointTarget{scalar(0.5)}};
    const auto sol = solve_dual(pb);
    const auto rows = sanov_sandwich(pb, sol, [](double) { return 0.6; }, {4, 8, 16});
    for (const auto& r : rows) {
        EXPECT_NEAR(r.log_p_over_n, 0.0, 1e-14);
        EXPECT_NEAR(r.neg_H, 0.0, 1e-14);
        EXPECT_TRUE(r.upper_ok);
    }
}

TEST(Sanov, BernoulliSandwichHoldsAndSlackShrinks) {
    const auto pb = bern_problem();
    const auto sol = solve_dual(pb);
    const std::vector<int> ns{8, 16, 32, 64, 128, 256, 512};
    const auto rows = sanov_sandwich(pb, sol, [](double n) { return 0.458 / std::sqrt(n); }, ns);
    ASSERT_EQ(rows.size(), ns.size());
    for (const auto& r : rows) {
        EXPECT_TRUE(r.upper_ok) << r.n;
        EXPECT_TRUE(r.lower_ok) << r.n;
        EXPECT_NEAR(r.neg_H, -0.082282, 1e-6);
        // Independent binomial oracle for the probability column.
        double p = 0.0;
        for (int s = 0; s <= r.n; ++s)
            if (std::abs(s / static_cast<double>(r.n) - 0.7) <= r.epsilon + 1e-12) p += binom_pmf(r.n, s, 0.5);
        EXPECT_NEAR(r.log_p_over_n, std::log(p) / r.n, 1e-10);
    }
    // Lattice effects make the slack oscillate; compare the ends of the sweep.
    EXPECT_LT(std::abs(rows.back().slack), std::abs(rows.front().slack));
    EXPECT_GT(rows.back().log_p_over_n, rows.front().log_p_over_n);
}

TEST(Csiszar, TrivialAndBernoulliInstances) {
    // k = n on the whole space: lhs = 0, rhs = 0.
    const auto whole = csiszar_bound_check(fair_coin(), 4, WholeSpace{}, 4, fair_coin(), 0.0);
    EXPECT_NEAR(whole.lhs, 0.0, 1e-12);
    EXPECT_NEAR(whole.rhs, 0.0, 1e-12);
    EXPECT_TRUE(whole.ok);

    int checked = 0;
    for (int n : {8, 16, 32})
        for (std::size_t k : {1u, 2u})
            for (double eps : {0.05, 0.15}) {
                const MomentProblem box{fair_coin(), identity_F(), BoxTarget{scalar(0.7 - eps), scalar(0.7 + eps)}};
                const auto s = solve_dual(box);
                const auto c = csiszar_bound_check(fair_coin(), n, MomentBand{identity_F(), scalar(0.7), eps, BandNorm::sup}, k,
                                                   s.alpha_star, s.entropy);
                EXPECT_TRUE(c.ok) << n << " " << k << " " << eps;
                EXPECT_GE(c.rhs, 0.0);
                ++checked;
            }
    EXPECT_EQ(checked, 12);
}

TEST(TvCurve, SqrtAndInverseSchedules) {
    const auto pb = bern_problem();
    const auto sol = solve_dual(pb);
    const auto sq = conditional_tv_curve(pb, sol, ScheduleParams{}, {8, 32}, 1);
    EXPECT_LT(sq[1].tv_k, 0.1);
    const auto inv = conditional_tv_curve(pb, sol, ScheduleParams{ScheduleKind::inv_n, 0.0, 1.0, 1.1}, {64, 128, 256, 512}, 1);
    for (std::size_t i = 1; i < inv.size(); ++i) {
        EXPECT_TRUE(std::isfinite(inv[i].tv_k));
        EXPECT_LE(inv[i].tv_k, inv[i - 1].tv_k + 1e-12);
    }
    EXPECT_LT(inv.back().tv_k, inv.front().tv_k);

    // Target already at the base mean: the curve is exactly zero.
    MomentProblem flat{fair_coin(), identity_F(), PointTarget{scalar(0.5)}};
    const auto fs = solve_dual(flat);
    for (const auto& r : conditional_tv_curve(flat, fs, ScheduleParams{ScheduleKind::sqrt_n, 0.1, 1.0, 1.1}, {8, 16}, 1))
        EXPECT_NEAR(r.tv_k, 0.0, 1e-12);
}
