#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "thinsets/measures.hpp"

using namespace thinsets;

namespace {

SpacePtr two_points(double d = 1.0) { return std::make_shared<const MetricSpace>(std::vector<std::string>{"x0", "x1"}, std::vector<double>{0, d, d, 0}); }

FiniteMeasure bern(const SpacePtr& sp, double p) { return FiniteMeasure(sp, {1.0 - p, p}); }

// Random metric on m points: shortest paths over random edge lengths, so the
// triangle inequality holds by construction.
SpacePtr random_space(std::mt19937_64& rng, std::size_t m) {
    std::uniform_real_distribution<double> len(0.05, 2.0);
    std::vector<double> d(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) d[i * m + j] = d[j * m + i] = len(rng);
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) d[i * m + j] = std::min(d[i * m + j], d[i * m + k] + d[k * m + j]);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < m; ++i) labels.push_back("p" + std::to_string(i));
    return std::make_shared<const MetricSpace>(std::move(labels), std::move(d));
}

FiniteMeasure random_measure(std::mt19937_64& rng, const SpacePtr& sp, bool allow_zeros) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> w(sp->size());
    for (auto& x : w) x = allow_zeros && u(rng) < 0.2 ? 0.0 : u(rng) + 1e-3;
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) w[0] = 1.0;
    return FiniteMeasure::normalized(sp, w);
}

double phi(double u) { return 2.0 * u * u / (2.0 + u); }

}  // namespace

TEST(MetricSpace, RejectsBrokenTriangle) {
    EXPECT_THROW(MetricSpace({"a", "b", "c"}, {0, 1, 5, 1, 0, 1, 5, 1, 0}), InvalidArgument);
    EXPECT_THROW(MetricSpace({"a", "b"}, {0, 1, 2, 0}), InvalidArgument);
    EXPECT_THROW(MetricSpace({"a", "b"}, {1, 1, 1, 0}), InvalidArgument);
    EXPECT_NO_THROW(MetricSpace({"a", "b", "c"}, {0, 1, 2, 1, 0, 1, 2, 1, 0}));
}

TEST(FiniteMeasure, WeightsMustSumToOne) {
    EXPECT_THROW(FiniteMeasure(two_points(), {0.5, 0.6}), InvalidArgument);
    EXPECT_THROW(FiniteMeasure(two_points(), {-0.1, 1.1}), InvalidArgument);
    EXPECT_NO_THROW(FiniteMeasure(two_points(), {0.25, 0.75}));
}

TEST(RelativeEntropy, ClosedForms) {
    const auto sp = two_points();
    EXPECT_EQ(relative_entropy(bern(sp, 0.3), bern(sp, 0.3)), 0.0);
    EXPECT_NEAR(relative_entropy(FiniteMeasure::dirac(sp, 0), FiniteMeasure::uniform(sp)), std::log(2.0), 1e-15);
    const double kl = 0.7 * std::log(0.7 / 0.5) + 0.3 * std::log(0.3 / 0.5);
    EXPECT_NEAR(relative_entropy(bern(sp, 0.7), bern(sp, 0.5)), kl, 1e-15);
    EXPECT_NEAR(kl, 0.082282, 1e-6);
    EXPECT_TRUE(std::isinf(relative_entropy(bern(sp, 0.5), FiniteMeasure::dirac(sp, 0))));
}

TEST(RelativeEntropy, MismatchedSupportsThrow) {
    const auto other = std::make_shared<const MetricSpace>(std::vector<std::string>{"y0", "y1"});
    EXPECT_THROW((void)relative_entropy(bern(two_points(), 0.5), bern(other, 0.5)), InvalidArgument);
    EXPECT_THROW((void)tv_distance(bern(two_points(), 0.5), FiniteMeasure::uniform(MetricSpace::line(std::vector<double>{0, 1, 2}))),
                 InvalidArgument);
}

TEST(VariationalEntropy, LogDensityAttainsEntropy) {
    const auto sp = two_points();
    const auto b = bern(sp, 0.7), g = bern(sp, 0.5);
    const std::vector<std::vector<double>> only_const{{3.0, 3.0}};
    EXPECT_NEAR(variational_entropy_lower(b, g, only_const), 0.0, 1e-15);
    const std::vector<std::vector<double>> with_opt{{0.0, 1.0}, {std::log(0.3 / 0.5), std::log(0.7 / 0.5)}};
    EXPECT_NEAR(variational_entropy_lower(b, g, with_opt), relative_entropy(b, g), 1e-9);
    EXPECT_THROW((void)variational_entropy_lower(b, g, std::vector<std::vector<double>>{}), InvalidArgument);
}

TEST(VariationalEntropy, NeverExceedsEntropy) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 200; ++rep) {
        const auto sp = random_space(rng, 2 + rep % 6);
        const auto b = random_measure(rng, sp, false), g = random_measure(rng, sp, false);
        std::vector<std::vector<double>> phis(5, std::vector<double>(sp->size()));
        for (auto& f : phis)
            for (auto& x : f) x = z(rng);
        const double h = relative_entropy(b, g);
        EXPECT_LE(variational_entropy_lower(b, g, phis), h + 1e-12);
        std::vector<double> logd(sp->size());
        for (std::size_t i = 0; i < sp->size(); ++i) logd[i] = std::log(b[i] / g[i]);
        phis.push_back(logd);
        EXPECT_NEAR(variational_entropy_lower(b, g, phis), h, 1e-9);
    }
}

TEST(TotalVariation, Examples) {
    const auto sp = two_points();
    EXPECT_EQ(tv_distance(bern(sp, 0.4), bern(sp, 0.4)), 0.0);
    EXPECT_EQ(tv_distance(FiniteMeasure::dirac(sp, 0), FiniteMeasure::dirac(sp, 1)), 2.0);
    const auto d0 = FiniteMeasure::dirac(sp, 0), h = bern(sp, 0.5);
    EXPECT_DOUBLE_EQ(tv_distance(d0, h), 1.0);
    EXPECT_GE(std::sqrt(2.0 * relative_entropy(d0, h)), 1.0);
    EXPECT_NEAR(std::sqrt(2.0 * std::log(2.0)), 1.1774, 1e-4);
}

TEST(FortetMourier, TwoPointClosedForm) {
    const auto sp = two_points();
    EXPECT_NEAR(fm_distance(FiniteMeasure::dirac(sp, 0), FiniteMeasure::dirac(sp, 1)), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(fm_distance(bern(sp, 0.2), bern(sp, 0.2)), 0.0);
    // Two points at distance d, mass difference t: optimum balances 2a = L d with a + L = 1.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        const double d = 0.05 + 3.0 * u(rng), p = u(rng), q = u(rng);
        const auto s = two_points(d);
        const double oracle = std::abs(p - q) * 2.0 * d / (2.0 + d);
        EXPECT_NEAR(fm_distance(bern(s, p), bern(s, q)), oracle, 1e-10);
    }
}

TEST(FortetMourier, DominatesEveryFeasibleTestFunction) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0), share(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        const auto sp = random_space(rng, 3 + rep % 5);
        const auto a = random_measure(rng, sp, true), b = random_measure(rng, sp, true);
        const double fm = fm_distance(a, b);
        for (int t = 0; t < 40; ++t) {
            // Random f, then shrink until |f| + Lip(f) <= 1.
            std::vector<double> f(sp->size());
            for (auto& x : f) x = u(rng);
            double sup = 0.0, lip = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) {
                sup = std::max(sup, std::abs(f[i]));
                for (std::size_t j = 0; j < f.size(); ++j)
                    if (i != j) lip = std::max(lip, std::abs(f[i] - f[j]) / sp->distance(i, j));
            }
            double val = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) val += f[i] * (a[i] - b[i]) / (sup + lip);
            EXPECT_LE(val, fm + 1e-12);
        }
    }
}

TEST(Prohorov, TwoPointClosedForm) {
    const auto sp = two_points();
    const auto r = prohorov_distance(FiniteMeasure::dirac(sp, 0), FiniteMeasure::dirac(sp, 1));
    EXPECT_TRUE(r.exact);
    EXPECT_NEAR(r.distance, 1.0, 1e-12);
    EXPECT_LE(phi(1.0), 2.0 / 3.0 + 1e-12);
    EXPECT_EQ(prohorov_distance(bern(sp, 0.3), bern(sp, 0.3)).distance, 0.0);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        const double d = 0.05 + 2.0 * u(rng), p = u(rng), q = u(rng);
        const auto s = two_points(d);
        EXPECT_NEAR(prohorov_distance(bern(s, p), bern(s, q)).distance, std::min(std::abs(p - q), d), 1e-10);
    }
}

TEST(Prohorov, Symmetric) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 100; ++rep) {
        const auto sp = random_space(rng, 2 + rep % 7);
        const auto a = random_measure(rng, sp, true), b = random_measure(rng, sp, true);
        EXPECT_NEAR(prohorov_distance(a, b).distance, prohorov_distance(b, a).distance, 1e-12);
    }
}

TEST(Prohorov, LargeSupportIsFlaggedEstimate) {
    std::vector<double> xs;
    for (int i = 0; i < 24; ++i) xs.push_back(i / 23.0);
    const auto sp = MetricSpace::line(xs);
    std::mt19937_64 rng(3);
    const auto r = prohorov_distance(random_measure(rng, sp, false), random_measure(rng, sp, false));
    EXPECT_FALSE(r.exact);
    EXPECT_GE(r.distance, 0.0);
}

TEST(MetricComparisons, RandomPairsRespectAllInequalities) {
    std::mt19937_64 rng(2024);
    int violations = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        std::uniform_int_distribution<std::size_t> size(1, 8);
        const auto sp = random_space(rng, size(rng));
        const auto a = random_measure(rng, sp, true), b = random_measure(rng, sp, true);
        const double tv = tv_distance(a, b), fm = fm_distance(a, b), dp = prohorov_distance(a, b).distance;
        const double kl = relative_entropy(a, b);
        const double slack = 1e-9;
        if (fm > tv + slack) ++violations;
        if (dp > tv / 2.0 + slack) ++violations;
        if (phi(dp) > fm + slack) ++violations;
        if (fm > 2.0 * dp + slack) ++violations;
        if (std::isfinite(kl) && tv > std::sqrt(2.0 * kl) + slack) ++violations;
    }
    EXPECT_EQ(violations, 0);
}

TEST(WeightedTv, Examples) {
    const auto sp = two_points();
    const std::vector<double> ones{1.0, 1.0};
    const auto same = weighted_tv_ratio(ones, bern(sp, 0.4), bern(sp, 0.4), 1.0);
    EXPECT_EQ(same.lhs, 0.0);
    EXPECT_EQ(same.ratio, 0.0);
    const auto r = weighted_tv_ratio(ones, bern(sp, 0.7), bern(sp, 0.5), 0.5);
    EXPECT_NEAR(r.lhs, tv_distance(bern(sp, 0.7), bern(sp, 0.5)), 1e-15);
    EXPECT_THROW((void)weighted_tv_ratio(ones, bern(sp, 0.5), FiniteMeasure::dirac(sp, 0), 1.0), InvalidArgument);
    EXPECT_THROW((void)weighted_tv_ratio(ones, bern(sp, 0.5), bern(sp, 0.4), 0.0), InvalidArgument);
}

TEST(WeightedTv, EmpiricalConstantIsFinite) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.01, 0.99), fw(-3.0, 3.0);
    const auto sp = two_points();
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::vector<double> f{fw(rng), fw(rng)};
        const auto r = weighted_tv_ratio(f, bern(sp, u(rng)), bern(sp, u(rng)), 0.5);
        ASSERT_TRUE(std::isfinite(r.ratio));
        worst = std::max(worst, r.ratio);
    }
    EXPECT_GT(worst, 0.0);
    EXPECT_TRUE(std::isfinite(worst));
}

TEST(Luxemburg, ConstantsAndHomogeneity) {
    std::mt19937_64 rng(19);
    const auto sp = random_space(rng, 5);
    const auto a = random_measure(rng, sp, false);
    const std::vector<double> zero(5, 0.0);
    EXPECT_EQ(luxemburg_norm(zero, a), 0.0);

    // u1 solves e^u - u - 1 = 1, found here by Newton from the right.
    double u1 = 2.0;
    for (int i = 0; i < 60; ++i) u1 -= (std::exp(u1) - u1 - 2.0) / (std::exp(u1) - 1.0);
    EXPECT_NEAR(u1, 1.14619, 1e-5);
    const std::vector<double> c(5, -2.5);
    EXPECT_NEAR(luxemburg_norm(c, a), 2.5 / u1, 1e-10);

    std::normal_distribution<double> z;
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> g(5), g2(5);
        for (std::size_t i = 0; i < 5; ++i) g2[i] = 2.0 * (g[i] = z(rng));
        const double s = luxemburg_norm(g, a);
        EXPECT_NEAR(luxemburg_norm(g2, a), 2.0 * s, 1e-10 * s);
        double tau = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            const double v = std::abs(g[i]) / s;
            tau += a[i] * (std::exp(v) - v - 1.0);
        }
        EXPECT_NEAR(tau, 1.0, 1e-9);
    }
}

TEST(Covering, SmallExamples) {
    EXPECT_EQ(covering_number(*two_points(), 1.5).count, 1u);
    EXPECT_EQ(covering_number(*two_points(), 0.5).count, 2u);
    EXPECT_THROW((void)covering_number(*two_points(), 0.0), InvalidArgument);
}

TEST(Covering, ExactMatchesBitmaskOracleAndIsMinimal) {
    std::mt19937_64 rng(23);
    std::vector<std::pair<SpacePtr, double>> cases;
    cases.emplace_back(MetricSpace::line(std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}), 0.3);
    for (int rep = 0; rep < 40; ++rep) cases.emplace_back(random_space(rng, 3 + rep % 8), 0.2 + 0.05 * rep);
    for (const auto& [sp, eps] : cases) {
        const std::size_t m = sp->size();
        std::size_t best = m;
        for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
            bool ok = true;
            for (std::size_t x = 0; x < m && ok; ++x) {
                bool hit = false;
                for (std::size_t c = 0; c < m; ++c)
                    if ((mask >> c & 1u) && sp->distance(c, x) < eps) hit = true;
                ok = hit;
            }
            if (ok) best = std::min<std::size_t>(best, static_cast<std::size_t>(std::popcount(mask)));
        }
        const auto rep = covering_number(*sp, eps);
        EXPECT_EQ(rep.method, CoverMethod::exact);
        EXPECT_EQ(rep.count, best);
        // Removing any center must leave some point uncovered.
        std::vector<std::size_t> idx;
        for (const auto& lbl : rep.centers)
            idx.push_back(static_cast<std::size_t>(std::find(sp->labels().begin(), sp->labels().end(), lbl) - sp->labels().begin()));
        for (std::size_t drop = 0; drop < idx.size(); ++drop) {
            bool all = true;
            for (std::size_t x = 0; x < m; ++x) {
                bool hit = false;
                for (std::size_t c = 0; c < idx.size(); ++c)
                    if (c != drop && sp->distance(idx[c], x) < eps) hit = true;
                all = all && hit;
            }
            EXPECT_FALSE(all);
        }
    }
    EXPECT_EQ(covering_number(*cases.front().first, 0.3).count, 2u);
}

TEST(Covering, GreedyBeyondTwentyPointsCovers) {
    std::vector<double> xs;
    for (int i = 0; i < 40; ++i) xs.push_back(i / 39.0);
    const auto sp = MetricSpace::line(xs);
    const auto rep = covering_number(*sp, 0.1);
    EXPECT_EQ(rep.method, CoverMethod::greedy);
    for (std::size_t x = 0; x < sp->size(); ++x) {
        bool hit = false;
        for (const auto& c : rep.centers) hit = hit || std::abs(xs[x] - std::stod(c)) < 0.1;
        EXPECT_TRUE(hit);
    }
}

TEST(CoveringBound, Arithmetic) {
    EXPECT_EQ(covering_bound_measures(0, 0.5, MeasureMetric::prohorov), 1.0);
    const double e = std::numbers::e;
    EXPECT_NEAR(covering_bound_measures(2, 0.5, MeasureMetric::prohorov), 16.0 * e * e, 1e-12);
    EXPECT_NEAR(16.0 * e * e, 118.2249, 1e-4);
    EXPECT_NEAR(covering_bound_measures(1, 0.5, MeasureMetric::fortet_mourier), 8.0 * e, 1e-12);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps = 0.05; eps <= 1.0; eps += 0.05) {
        const double b = covering_bound_measures(3, eps, MeasureMetric::fortet_mourier);
        EXPECT_LT(b, prev);
        prev = b;
    }
    EXPECT_THROW((void)covering_bound_measures(1, 0.0, MeasureMetric::prohorov), InvalidArgument);
    EXPECT_THROW((void)covering_bound_measures(1, 1.5, MeasureMetric::prohorov), InvalidArgument);
}

TEST(MetricSchedule, SinglePointMatchesGridScan) {
    const auto one = [](double) { return 1.0; };
    const double n = 1e4;
    double expect = -1.0;
    double eps = 1.0;
    for (int i = 0; eps >= 1e-8; ++i, eps *= 0.95)
        if (n * eps * eps / 8.0 + std::log(eps) >= 100.0) expect = eps;
    const auto s = epsilon_schedule_metric(one, n);
    EXPECT_FALSE(s.warning);
    EXPECT_DOUBLE_EQ(s.epsilon, expect);
    EXPECT_GE(s.criterion, 100.0);
}

TEST(MetricSchedule, NonincreasingInN) {
    const auto torus = [](double e) { return std::ceil(1.0 / e); };
    double prev = 2.0;
    for (double n : {1e2, 1e3, 1e4, 1e5, 1e6}) {
        const auto s = epsilon_schedule_metric(torus, n);
        EXPECT_LE(s.epsilon, prev);
        prev = s.epsilon;
    }
}

TEST(MetricSchedule, TorusCriterionGrowsWithoutBound) {
    const auto torus = [](double e) { return std::ceil(1.0 / e); };
    double prev = -std::numeric_limits<double>::infinity();
    for (double n : {1e2, 1e3, 1e4, 1e5, 1e6}) {
        const auto s = epsilon_schedule_metric(torus, n);
        if (s.warning) continue;
        EXPECT_GT(s.criterion, prev);
        EXPECT_GE(s.criterion, std::sqrt(n));
        prev = s.criterion;
    }
    EXPECT_GE(prev, 1000.0);
}
