#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <variant>
#include <vector>

#include "thinsets/error.hpp"
#include "thinsets/iproj.hpp"
#include "thinsets/measures.hpp"
#include "thinsets/parallel.hpp"

namespace thinsets {

struct WholeSpace {};

enum class BandNorm { sup, euclidean };

/// ||int F dL_n - center|| <= radius.
struct MomentBand {
    Eigen::MatrixXd F;
    Eigen::VectorXd center;
    double radius = 0.0;
    BandNorm norm = BandNorm::sup;
};

enum class BallMetric { fm, prohorov };

/// d(L_n, target) <= radius.
struct MetricBall {
    FiniteMeasure target;
    BallMetric metric = BallMetric::fm;
    double radius = 0.0;
};

using ConditioningEvent = std::variant<WholeSpace, MomentBand, MetricBall>;

/// Slack applied to every membership test so that boundary types are kept.
inline constexpr double kMembershipSlack = 1e-12;

namespace detail {

inline void validate_event(const ConditioningEvent& ev, const FiniteMeasure& alpha) {
    if (const auto* b = std::get_if<MomentBand>(&ev)) {
        if (static_cast<std::size_t>(b->F.rows()) != alpha.size() || b->center.size() != b->F.cols())
            throw InvalidArgument("MomentBand: dimensions do not match the support");
        if (!(b->radius >= 0.0)) throw InvalidArgument("MomentBand: radius must be >= 0");
    } else if (const auto* m = std::get_if<MetricBall>(&ev)) {
        if (!same_support(m->target, alpha)) throw InvalidArgument("MetricBall: target on a different support");
        if (!(m->radius >= 0.0)) throw InvalidArgument("MetricBall: radius must be >= 0");
    }
}

inline bool band_contains(const MomentBand& b, const std::vector<double>& w) {
    const Eigen::Index d = b.F.cols();
    double worst = 0.0, sq = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
        double mj = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) mj += w[i] * b.F(static_cast<Eigen::Index>(i), j);
        const double dev = std::abs(mj - b.center(j));
        worst = std::max(worst, dev);
        sq += dev * dev;
    }
    const double r = b.norm == BandNorm::sup ? worst : std::sqrt(sq);
    return r <= b.radius + kMembershipSlack;
}

}  // namespace detail

/// Membership of an empirical measure in the event.
[[nodiscard]] inline bool event_contains(const ConditioningEvent& ev, const FiniteMeasure& empirical) {
    if (std::holds_alternative<WholeSpace>(ev)) return true;
    if (const auto* b = std::get_if<MomentBand>(&ev)) return detail::band_contains(*b, empirical.weights());
    const auto& m = std::get<MetricBall>(ev);
    const double dist = m.metric == BallMetric::fm ? fm_distance(empirical, m.target)
                                                   : prohorov_distance(empirical, m.target).distance;
    return dist <= m.radius + kMembershipSlack;
}

namespace detail {

inline bool counts_in_event(const ConditioningEvent& ev, const FiniteMeasure& alpha, const std::vector<int>& counts, int n) {
    if (std::holds_alternative<WholeSpace>(ev)) return true;
    std::vector<double> w(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) w[i] = static_cast<double>(counts[i]) / n;
    if (const auto* b = std::get_if<MomentBand>(&ev)) return band_contains(*b, w);
    return event_contains(ev, FiniteMeasure::normalized(alpha.space(), std::move(w)));
}

inline double composition_count(int n, std::size_t m) {
    // C(n + m - 1, m - 1) in floating point.
    return std::exp(std::lgamma(n + static_cast<double>(m)) - std::lgamma(n + 1.0) - std::lgamma(static_cast<double>(m)));
}

/// Calls fn(counts, log multinomial probability) for every type class of n draws.
template <class Fn>
void for_each_type_class(const FiniteMeasure& alpha, int n, Fn&& fn) {
    const std::size_t m = alpha.size();
    constexpr double budget = 2e6;
    if (composition_count(n, m) > budget * (1.0 + 1e-9))
        throw BudgetExceeded("type-class enumeration exceeds 2e6 compositions");
    std::vector<double> loga(m);
    for (std::size_t i = 0; i < m; ++i) loga[i] = alpha[i] > 0.0 ? std::log(alpha[i]) : -std::numeric_limits<double>::infinity();
    const double lfn = std::lgamma(n + 1.0);
    std::vector<int> counts(m, 0);
    auto walk = [&](auto&& self, std::size_t i, int left, double acc) -> void {
        if (i + 1 == m) {
            counts[i] = left;
            if (left > 0 && alpha[i] == 0.0) return;
            const double lw = acc - std::lgamma(left + 1.0) + (left > 0 ? left * loga[i] : 0.0);
            fn(counts, lw);
            return;
        }
        for (int c = 0; c <= left; ++c) {
            if (c > 0 && alpha[i] == 0.0) break;
            counts[i] = c;
            self(self, i + 1, left - c, acc - std::lgamma(c + 1.0) + (c > 0 ? c * loga[i] : 0.0));
        }
    };
    walk(walk, 0, n, lfn);
}

inline double log_sum_exp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// Law of the first k draws without replacement from an urn holding `counts`,
/// added with weight `scale` into `law` (first coordinate most significant).
inline void add_prefix_law(const std::vector<int>& counts, int n, std::size_t k, double scale, std::vector<double>& law) {
    const std::size_t m = counts.size();
    std::vector<int> left = counts;
    auto walk = [&](auto&& self, std::size_t t, std::size_t index, double p) -> void {
        if (t == k) {
            law[index] += scale * p;
            return;
        }
        const double remaining = static_cast<double>(n) - static_cast<double>(t);
        for (std::size_t x = 0; x < m; ++x) {
            if (left[x] == 0) continue;
            const double q = p * left[x] / remaining;
            --left[x];
            self(self, t + 1, index * m + x, q);
            ++left[x];
        }
    };
    walk(walk, 0, 0, 1.0);
}

inline std::size_t pow_size(std::size_t m, std::size_t k) {
    std::size_t r = 1;
    for (std::size_t t = 0; t < k; ++t) {
        if (r > (std::size_t{1} << 26) / std::max<std::size_t>(m, 1)) throw BudgetExceeded("k-fold product support too large");
        r *= m;
    }
    return r;
}

}  // namespace detail

struct ConditionalEstimate {
    std::size_t k;
    FiniteMeasure law;  ///< on product_space(alpha.space(), k)
    double acceptance_rate;
    std::uint64_t n_trials;
    bool exact;
    double log_probability;  ///< log alpha^n(L_n in event); exact runs only, NaN otherwise
};

/// log alpha^{(x) n}(L_n in event) by multinomial summation; -inf for an empty event.
[[nodiscard]] inline double exact_event_log_probability(const FiniteMeasure& alpha, int n, const ConditioningEvent& event) {
    if (n < 1) throw InvalidArgument("exact_event_probability: n must be >= 1");
    detail::validate_event(event, alpha);
    std::vector<double> logs;
    detail::for_each_type_class(alpha, n, [&](const std::vector<int>& c, double lw) {
        if (detail::counts_in_event(event, alpha, c, n)) logs.push_back(lw);
    });
    return std::min(detail::log_sum_exp(logs), 0.0);
}

[[nodiscard]] inline double exact_event_probability(const FiniteMeasure& alpha, int n, const ConditioningEvent& event) {
    return std::exp(exact_event_log_probability(alpha, n, event));
}

/// Law of (X_1..X_k) given L_n in event, by exchangeability within each type class.
[[nodiscard]] inline ConditionalEstimate exact_conditional(const FiniteMeasure& alpha, int n, const ConditioningEvent& event,
                                                           std::size_t k) {
    if (n < 1) throw InvalidArgument("exact_conditional: n must be >= 1");
    if (k < 1 || k > static_cast<std::size_t>(n)) throw InvalidArgument("exact_conditional: need 1 <= k <= n");
    detail::validate_event(event, alpha);
    const std::size_t m = alpha.size();
    const std::size_t cells = detail::pow_size(m, k);

    std::vector<std::vector<int>> kept;
    std::vector<double> logs;
    detail::for_each_type_class(alpha, n, [&](const std::vector<int>& c, double lw) {
        if (detail::counts_in_event(event, alpha, c, n)) {
            kept.push_back(c);
            logs.push_back(lw);
        }
    });
    if (kept.empty()) throw ZeroAcceptanceError("exact_conditional: event has probability zero", 0.0);
    const double logp = detail::log_sum_exp(logs);
    std::vector<double> law(cells, 0.0);
    for (std::size_t c = 0; c < kept.size(); ++c)
        detail::add_prefix_law(kept[c], n, k, std::exp(logs[c] - logp), law);
    return {k, FiniteMeasure::normalized(product_space(*alpha.space(), k), std::move(law)), std::exp(logp), 1,
            true, std::min(logp, 0.0)};
}

/// Rejection sampler: `trials` i.i.d. n-blocks split contiguously over `workers` threads.
[[nodiscard]] inline ConditionalEstimate run_conditional_mc(const FiniteMeasure& alpha, int n, const ConditioningEvent& event,
                                                            std::size_t k, std::uint64_t trials, std::uint64_t seed,
                                                            std::size_t workers = 1) {
    if (n < 1) throw InvalidArgument("run_conditional_mc: n must be >= 1");
    if (k < 1 || k > static_cast<std::size_t>(n)) throw InvalidArgument("run_conditional_mc: need 1 <= k <= n");
    if (trials < 1) throw InvalidArgument("run_conditional_mc: trials must be >= 1");
    detail::validate_event(event, alpha);
    if (workers == 0) workers = default_workers();
    workers = std::min<std::size_t>(workers, trials);
    const std::size_t m = alpha.size();
    const std::size_t cells = detail::pow_size(m, k);
    const std::vector<double> cdf = cumulative(alpha.weights());

    std::vector<std::uint64_t> accepted(workers, 0);
    std::vector<std::vector<std::uint64_t>> hits(workers, std::vector<std::uint64_t>(cells, 0));
    run_workers(workers, [&](std::size_t w) {
        auto eng = worker_engine(seed, w);
        const Slice sl = worker_slice(trials, workers, w);
        std::vector<int> counts(m);
        for (std::size_t t = sl.begin; t < sl.end; ++t) {
            std::fill(counts.begin(), counts.end(), 0);
            std::size_t prefix = 0;
            for (int s = 0; s < n; ++s) {
                const std::size_t x = draw_index(cdf, eng);
                ++counts[x];
                if (static_cast<std::size_t>(s) < k) prefix = prefix * m + x;
            }
            if (detail::counts_in_event(event, alpha, counts, n)) {
                ++accepted[w];
                ++hits[w][prefix];
            }
        }
    });

    std::uint64_t acc = 0;
    std::vector<double> law(cells, 0.0);
    for (std::size_t w = 0; w < workers; ++w) {
        acc += accepted[w];
        for (std::size_t c = 0; c < cells; ++c) law[c] += static_cast<double>(hits[w][c]);
    }
    if (acc == 0)
        throw ZeroAcceptanceError("run_conditional_mc: no accepted block", 3.0 / static_cast<double>(trials));
    return {k, FiniteMeasure::normalized(product_space(*alpha.space(), k), std::move(law)),
            static_cast<double>(acc) / static_cast<double>(trials), trials, false,
            std::numeric_limits<double>::quiet_NaN()};
}

struct SanovRow {
    int n;
    double epsilon;
    double log_p_over_n;   ///< (1/n) log alpha^n(L_n in C_n)
    double neg_H;          ///< -H(C | alpha) for the unenlarged target
    double neg_H_event;    ///< -H(closure of C_n | alpha)
    double centering_lb;   ///< lower bound on log_p_over_n from the centering argument
    double dst_lb;         ///< lower bound on log_p_over_n from the minimization bound, NaN when p_in = 1
    bool upper_ok;         ///< log_p_over_n <= neg_H_event
    bool lower_ok;         ///< log_p_over_n >= max of the available lower bounds
    double slack;          ///< log_p_over_n + H(C | alpha)
};

namespace detail {

inline MomentBand band_around(const Eigen::MatrixXd& F, const Eigen::VectorXd& x0, double eps) {
    return MomentBand{F, x0, eps, BandNorm::sup};
}

inline double box_entropy(const FiniteMeasure& alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& x0, double eps) {
    const Eigen::VectorXd e = Eigen::VectorXd::Constant(x0.size(), eps);
    return solve_dual(MomentProblem{alpha, F, BoxTarget{x0 - e, x0 + e}}).entropy;
}

}  // namespace detail

/// Upper and lower bounds on (1/n) log P for the sup-norm bands around the point target,
/// with radius eps_fn(n).
[[nodiscard]] inline std::vector<SanovRow> sanov_sandwich(const MomentProblem& point_problem, const TiltedSolution& sol,
                                                          const std::function<double(double)>& eps_fn,
                                                          const std::vector<int>& n_list) {
    const auto* pt = std::get_if<PointTarget>(&point_problem.target);
    if (!pt) throw InvalidArgument("sanov_sandwich: needs a point target");
    const double H = sol.entropy;
    std::vector<SanovRow> rows;
    for (int n : n_list) {
        const double eps = eps_fn(n);
        const ConditioningEvent ev = detail::band_around(point_problem.F, pt->x0, eps);
        const double logp = exact_event_log_probability(point_problem.alpha, n, ev);
        const double lpn = logp / n;
        const double h_event = detail::box_entropy(point_problem.alpha, point_problem.F, pt->x0, eps);
        // The ball around int F dalpha* under alpha*^n is the same band: the target is the tilted mean.
        const double p_in = exact_event_probability(sol.alpha_star, n, ev);
        const double cen = -H + centering_lower_bound(sol, eps, std::max(p_in, std::numeric_limits<double>::min()), n);
        double dst = std::numeric_limits<double>::quiet_NaN();
        if (p_in > 0.0 && p_in < 1.0) dst = -H + dst_lower_bound(H, p_in, n);
        const double lb = std::isnan(dst) ? cen : std::max(cen, dst);
        rows.push_back({n, eps, lpn, -H, -h_event, cen, dst, lpn <= -h_event + 1e-12, lpn >= lb - 1e-12, lpn + H});
    }
    return rows;
}

struct CsiszarCheck {
    double lhs;
    double rhs;
    bool ok;
};

/// H(conditional k-law | alpha_star^k) against -(1/floor(n/k)) log(P e^{n H_event}).
[[nodiscard]] inline CsiszarCheck csiszar_bound_check(const FiniteMeasure& alpha, int n, const ConditioningEvent& event,
                                                      std::size_t k, const FiniteMeasure& alpha_star, double H_event) {
    const ConditionalEstimate ce = exact_conditional(alpha, n, event, k);
    if (!std::isfinite(ce.log_probability)) throw ZeroAcceptanceError("csiszar_bound_check: P = 0", 0.0);
    const double lhs = relative_entropy(ce.law, product_measure(alpha_star, k));
    const double blocks = std::floor(static_cast<double>(n) / static_cast<double>(k));
    const double rhs = -(ce.log_probability + n * H_event) / blocks;
    return {lhs, rhs, lhs <= rhs + 1e-9};
}

struct TvCurveRow {
    int n;
    double epsilon;
    double p_event;
    double tv_k;
};

/// tv(conditional k-law, alpha_star^k) along the schedule, by exact enumeration.
[[nodiscard]] inline std::vector<TvCurveRow> conditional_tv_curve(const MomentProblem& point_problem, const TiltedSolution& sol,
                                                                  const ScheduleParams& schedule, const std::vector<int>& n_list,
                                                                  std::size_t k) {
    const auto* pt = std::get_if<PointTarget>(&point_problem.target);
    if (!pt) throw InvalidArgument("conditional_tv_curve: needs a point target");
    const ScheduleParams sch = schedule.resolved(sol);
    const FiniteMeasure ref = product_measure(sol.alpha_star, k);
    std::vector<TvCurveRow> rows;
    for (int n : n_list) {
        const double eps = sch.epsilon(n);
        const ConditioningEvent ev = detail::band_around(point_problem.F, pt->x0, eps);
        const ConditionalEstimate ce = exact_conditional(point_problem.alpha, n, ev, k);
        rows.push_back({n, eps, ce.acceptance_rate, tv_distance(ce.law, ref)});
    }
    return rows;
}

}  // namespace thinsets
