#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "thinsets/detail/simplex.hpp"
#include "thinsets/error.hpp"

namespace thinsets {

/// Finite set of labelled points, optionally carrying a distance table.
///
/// A space built with distances is validated on construction: zero diagonal,
/// symmetry, nonnegativity and the triangle inequality (exhaustive scan).
/// Product supports built for conditional laws carry labels only.
class MetricSpace {
public:
    explicit MetricSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {}

    MetricSpace(std::vector<std::string> labels, std::vector<double> dist)
        : labels_(std::move(labels)), dist_(std::move(dist)) {
        const std::size_t m = labels_.size();
        if (dist_.size() != m * m) throw InvalidArgument("MetricSpace: distance table has wrong size");
        constexpr double tol = 1e-12;
        for (std::size_t i = 0; i < m; ++i) {
            if (std::abs(d(i, i)) > 0.0) throw InvalidArgument("MetricSpace: nonzero self-distance");
            for (std::size_t j = 0; j < m; ++j) {
                if (!(d(i, j) >= 0.0) || !std::isfinite(d(i, j)))
                    throw InvalidArgument("MetricSpace: distances must be finite and nonnegative");
                if (std::abs(d(i, j) - d(j, i)) > tol) throw InvalidArgument("MetricSpace: asymmetric distance");
            }
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t k = 0; k < m; ++k)
                    if (d(i, k) > d(i, j) + d(j, k) + tol * (1.0 + d(i, k)))
                        throw InvalidArgument("MetricSpace: triangle inequality violated");
    }

    /// Points on the real line with |x - y| as distance.
    static std::shared_ptr<const MetricSpace> line(std::span<const double> coords) {
        std::vector<std::string> labels;
        labels.reserve(coords.size());
        for (double x : coords) labels.push_back(format_label(x));
        const std::size_t m = coords.size();
        std::vector<double> dist(m * m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) dist[i * m + j] = std::abs(coords[i] - coords[j]);
        return std::make_shared<const MetricSpace>(std::move(labels), std::move(dist));
    }

    [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
    [[nodiscard]] const std::string& label(std::size_t i) const { return labels_.at(i); }
    [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
    [[nodiscard]] bool has_metric() const noexcept { return !dist_.empty() || labels_.empty(); }
    [[nodiscard]] const std::vector<double>& distances() const noexcept { return dist_; }

    [[nodiscard]] double distance(std::size_t i, std::size_t j) const {
        if (!has_metric()) throw InvalidArgument("MetricSpace: space carries no distance table");
        return d(i, j);
    }

private:
    [[nodiscard]] double d(std::size_t i, std::size_t j) const { return dist_[i * labels_.size() + j]; }

    static std::string format_label(double x) {
        std::string s = std::to_string(x);
        while (s.size() > 1 && s.back() == '0') s.pop_back();
        if (!s.empty() && s.back() == '.') s.pop_back();
        return s;
    }

    std::vector<std::string> labels_;
    std::vector<double> dist_;
};

using SpacePtr = std::shared_ptr<const MetricSpace>;

/// Probability weights on the points of a MetricSpace.
class FiniteMeasure {
public:
    FiniteMeasure(SpacePtr space, std::vector<double> weights) : space_(std::move(space)), w_(std::move(weights)) {
        if (!space_) throw InvalidArgument("FiniteMeasure: null space");
        if (w_.size() != space_->size()) throw InvalidArgument("FiniteMeasure: weight count differs from support size");
        double total = 0.0;
        for (double x : w_) {
            if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidArgument("FiniteMeasure: weights must be finite and >= 0");
            total += x;
        }
        if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("FiniteMeasure: weights must sum to 1");
    }

    /// Divides nonnegative raw masses by their total.
    static FiniteMeasure normalized(SpacePtr space, std::vector<double> raw) {
        double total = 0.0;
        for (double x : raw) {
            if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidArgument("FiniteMeasure: masses must be finite and >= 0");
            total += x;
        }
        if (!(total > 0.0)) throw InvalidArgument("FiniteMeasure: zero total mass");
        for (double& x : raw) x /= total;
        return {std::move(space), std::move(raw)};
    }

    static FiniteMeasure dirac(SpacePtr space, std::size_t at) {
        std::vector<double> w(space->size(), 0.0);
        w.at(at) = 1.0;
        return {std::move(space), std::move(w)};
    }

    static FiniteMeasure uniform(SpacePtr space) {
        const std::size_t m = space->size();
        return {std::move(space), std::vector<double>(m, 1.0 / static_cast<double>(m))};
    }

    [[nodiscard]] const SpacePtr& space() const noexcept { return space_; }
    [[nodiscard]] const std::vector<double>& weights() const noexcept { return w_; }
    [[nodiscard]] double operator[](std::size_t i) const { return w_[i]; }
    [[nodiscard]] std::size_t size() const noexcept { return w_.size(); }

private:
    SpacePtr space_;
    std::vector<double> w_;
};

[[nodiscard]] inline bool same_support(const FiniteMeasure& a, const FiniteMeasure& b) {
    return a.space() == b.space() || a.space()->labels() == b.space()->labels();
}

namespace detail {
inline void require_same_support(const FiniteMeasure& a, const FiniteMeasure& b, const char* who) {
    if (!same_support(a, b)) throw InvalidArgument(std::string(who) + ": measures live on different supports");
}
}  // namespace detail

/// k-fold product of a support; labels are comma-joined tuples, first coordinate most significant.
[[nodiscard]] inline SpacePtr product_space(const MetricSpace& base, std::size_t k) {
    std::vector<std::string> labels{""};
    for (std::size_t t = 0; t < k; ++t) {
        std::vector<std::string> next;
        next.reserve(labels.size() * base.size());
        for (const auto& prefix : labels)
            for (const auto& l : base.labels()) next.push_back(prefix.empty() ? l : prefix + "," + l);
        labels = std::move(next);
    }
    return std::make_shared<const MetricSpace>(std::move(labels));
}

/// mu^{(x) k} on product_space(mu.space(), k).
[[nodiscard]] inline FiniteMeasure product_measure(const FiniteMeasure& mu, std::size_t k) {
    std::vector<double> w{1.0};
    for (std::size_t t = 0; t < k; ++t) {
        std::vector<double> next;
        next.reserve(w.size() * mu.size());
        for (double p : w)
            for (double q : mu.weights()) next.push_back(p * q);
        w = std::move(next);
    }
    return FiniteMeasure::normalized(product_space(*mu.space(), k), std::move(w));
}

/// H(beta | gamma) in nats; +inf when beta is not absolutely continuous w.r.t. gamma.
[[nodiscard]] inline double relative_entropy(const FiniteMeasure& beta, const FiniteMeasure& gamma) {
    detail::require_same_support(beta, gamma, "relative_entropy");
    double h = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        const double b = beta[i];
        if (b == 0.0) continue;
        const double g = gamma[i];
        if (g == 0.0) return std::numeric_limits<double>::infinity();
        h += b * std::log(b / g);
    }
    return std::max(h, 0.0);
}

/// Best value of  int phi dbeta - log int e^phi dgamma  over the supplied test functions.
[[nodiscard]] inline double variational_entropy_lower(const FiniteMeasure& beta, const FiniteMeasure& gamma,
                                                      std::span<const std::vector<double>> phis) {
    detail::require_same_support(beta, gamma, "variational_entropy_lower");
    if (phis.empty()) throw InvalidArgument("variational_entropy_lower: empty test set");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& phi : phis) {
        if (phi.size() != beta.size()) throw InvalidArgument("variational_entropy_lower: test function has wrong size");
        double mean = 0.0;
        double shift = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < phi.size(); ++i) {
            if (!std::isfinite(phi[i])) throw InvalidArgument("variational_entropy_lower: test function not finite");
            mean += beta[i] * phi[i];
            if (gamma[i] > 0.0) shift = std::max(shift, phi[i]);
        }
        double z = 0.0;
        for (std::size_t i = 0; i < phi.size(); ++i)
            if (gamma[i] > 0.0) z += gamma[i] * std::exp(phi[i] - shift);
        best = std::max(best, mean - (shift + std::log(z)));
    }
    return best;
}

/// Total variation with the full-mass convention  sum |nu1 - nu2|  (range [0, 2]).
[[nodiscard]] inline double tv_distance(const FiniteMeasure& nu1, const FiniteMeasure& nu2) {
    detail::require_same_support(nu1, nu2, "tv_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < nu1.size(); ++i) s += std::abs(nu1[i] - nu2[i]);
    return s;
}

/// Fortet-Mourier (bounded-Lipschitz) distance, solved exactly as a linear program
/// over the values of f at the points charged by either measure.
[[nodiscard]] inline double fm_distance(const FiniteMeasure& nu1, const FiniteMeasure& nu2) {
    detail::require_same_support(nu1, nu2, "fm_distance");
    const MetricSpace& sp = *nu1.space();
    std::vector<std::size_t> pts;
    for (std::size_t i = 0; i < nu1.size(); ++i)
        if (nu1[i] > 0.0 || nu2[i] > 0.0) pts.push_back(i);
    const std::size_t m = pts.size();
    if (m <= 1) return 0.0;

    // Columns: a, L, u_0..u_{m-1}, v_0..v_{m-1} with f_i = u_i - v_i.
    const std::size_t cols = 2 + 2 * m;
    const std::size_t rows = 2 * m + m * (m - 1) + 1;
    detail::DenseSimplex lp(rows, cols);
    auto u = [](std::size_t i) { return 2 + i; };
    auto v = [m](std::size_t i) { return 2 + m + i; };
    for (std::size_t i = 0; i < m; ++i) {
        const double w = nu1[pts[i]] - nu2[pts[i]];
        lp.set_objective(u(i), w);
        lp.set_objective(v(i), -w);
    }
    std::size_t r = 0;
    for (std::size_t i = 0; i < m; ++i) {
        lp.set_coefficient(r, u(i), 1.0);
        lp.set_coefficient(r, v(i), -1.0);
        lp.set_coefficient(r, 0, -1.0);
        ++r;
        lp.set_coefficient(r, u(i), -1.0);
        lp.set_coefficient(r, v(i), 1.0);
        lp.set_coefficient(r, 0, -1.0);
        ++r;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            lp.set_coefficient(r, u(i), 1.0);
            lp.set_coefficient(r, v(i), -1.0);
            lp.set_coefficient(r, u(j), -1.0);
            lp.set_coefficient(r, v(j), 1.0);
            lp.set_coefficient(r, 1, -sp.distance(pts[i], pts[j]));
            ++r;
        }
    }
    lp.set_coefficient(r, 0, 1.0);
    lp.set_coefficient(r, 1, 1.0);
    lp.set_rhs(r, 1.0);
    return std::max(lp.solve(), 0.0);
}

struct ProhorovResult {
    double distance;
    bool exact;  ///< false when the supports were too large for the subset scan
};

namespace detail {

// max over A subset of supp(nu1) of nu1(A) - nu2(A^t), for every breakpoint t.
// Returns inf{a > 0 : sup_A (nu1(A) - nu2(A^a)) <= a} for one ordering.
inline double prohorov_directed(const FiniteMeasure& nu1, const FiniteMeasure& nu2, bool& exact) {
    const MetricSpace& sp = *nu1.space();
    std::vector<std::size_t> P, Q;
    for (std::size_t i = 0; i < nu1.size(); ++i) {
        if (nu1[i] > 0.0) P.push_back(i);
        if (nu2[i] > 0.0) Q.push_back(i);
    }
    std::vector<double> breaks{0.0};
    for (auto i : P)
        for (auto j : Q) breaks.push_back(sp.distance(i, j));
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    const std::size_t p = P.size(), q = Q.size();
    constexpr double tol = 1e-12;
    std::function<double(double)> worst;  // g(t)

    if (p <= 20 && q <= 20) {
        const std::size_t np = std::size_t{1} << p, nq = std::size_t{1} << q;
        std::vector<double> w1(np, 0.0), w2(nq, 0.0);
        for (std::size_t s = 1; s < np; ++s) {
            const auto low = static_cast<std::size_t>(std::countr_zero(s));
            w1[s] = w1[s & (s - 1)] + nu1[P[low]];
        }
        for (std::size_t s = 1; s < nq; ++s) {
            const auto low = static_cast<std::size_t>(std::countr_zero(s));
            w2[s] = w2[s & (s - 1)] + nu2[Q[low]];
        }
        worst = [&, np, w1 = std::move(w1), w2 = std::move(w2)](double t) {
            std::vector<std::uint32_t> nbr(p, 0);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j)
                    if (sp.distance(P[i], Q[j]) <= t + tol) nbr[i] |= std::uint32_t{1} << j;
            std::vector<std::uint32_t> mask(np, 0);
            double g = 0.0;
            for (std::size_t s = 1; s < np; ++s) {
                const auto low = static_cast<std::size_t>(std::countr_zero(s));
                mask[s] = mask[s & (s - 1)] | nbr[low];
                g = std::max(g, w1[s] - w2[mask[s]]);
            }
            return g;
        };
    } else {
        exact = false;
        // Greedy worst-set search: grow A from each seed point while the excess increases.
        worst = [&](double t) {
            auto excess = [&](const std::vector<char>& in) {
                double a = 0.0, b = 0.0;
                for (std::size_t i = 0; i < p; ++i)
                    if (in[i]) a += nu1[P[i]];
                for (std::size_t j = 0; j < q; ++j) {
                    for (std::size_t i = 0; i < p; ++i) {
                        if (in[i] && sp.distance(P[i], Q[j]) <= t + tol) {
                            b += nu2[Q[j]];
                            break;
                        }
                    }
                }
                return a - b;
            };
            double g = 0.0;
            for (std::size_t seed = 0; seed < p; ++seed) {
                std::vector<char> in(p, 0);
                in[seed] = 1;
                double cur = excess(in);
                for (bool grew = true; grew;) {
                    grew = false;
                    std::size_t best_i = p;
                    double best_v = cur;
                    for (std::size_t i = 0; i < p; ++i) {
                        if (in[i]) continue;
                        in[i] = 1;
                        const double v = excess(in);
                        in[i] = 0;
                        if (v > best_v + tol) {
                            best_v = v;
                            best_i = i;
                        }
                    }
                    if (best_i < p) {
                        in[best_i] = 1;
                        cur = best_v;
                        grew = true;
                    }
                }
                g = std::max(g, cur);
            }
            return g;
        };
    }

    // g is a right-continuous step function, constant on [t_k, t_{k+1}).
    for (std::size_t k = 0; k < breaks.size(); ++k) {
        const double g = worst(breaks[k]);
        if (g <= breaks[k] + tol) return breaks[k];
        const double next = k + 1 < breaks.size() ? breaks[k + 1] : std::numeric_limits<double>::infinity();
        if (g < next) return g;
    }
    return 0.0;  // unreachable: beyond the last breakpoint every A^a is the whole support
}

}  // namespace detail

/// Prohorov distance  inf{a > 0 : nu1(A) <= nu2(A^a) + a  for all A},  closed enlargements.
/// Exact subset scan when both supports have at most 20 charged points; otherwise a
/// greedy worst-set search which can only under-estimate (flagged by exact = false).
[[nodiscard]] inline ProhorovResult prohorov_distance(const FiniteMeasure& nu1, const FiniteMeasure& nu2) {
    detail::require_same_support(nu1, nu2, "prohorov_distance");
    bool exact = true;
    const double a = detail::prohorov_directed(nu1, nu2, exact);
    const double b = detail::prohorov_directed(nu2, nu1, exact);
    return {std::max(a, b), exact};
}

struct WeightedTvResult {
    double lhs;     ///< sum |f_i| |nu1_i - nu2_i|
    double factor;  ///< (1/delta)(1 + log int e^{delta|f|} dnu2)(H + sqrt H)
    double ratio;   ///< lhs / factor, the empirical constant (0 when H = 0)
};

/// Weighted Pinsker comparison; the ratio is the constant such an inequality would need.
[[nodiscard]] inline WeightedTvResult weighted_tv_ratio(std::span<const double> f, const FiniteMeasure& nu1,
                                                        const FiniteMeasure& nu2, double delta) {
    detail::require_same_support(nu1, nu2, "weighted_tv_ratio");
    if (f.size() != nu1.size()) throw InvalidArgument("weighted_tv_ratio: weight function has wrong size");
    if (!(delta > 0.0)) throw InvalidArgument("weighted_tv_ratio: delta must be positive");
    const double h = relative_entropy(nu1, nu2);
    if (!std::isfinite(h)) throw InvalidArgument("weighted_tv_ratio: relative entropy is infinite");
    double lhs = 0.0, z = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        lhs += std::abs(f[i]) * std::abs(nu1[i] - nu2[i]);
        z += nu2[i] * std::exp(delta * std::abs(f[i]));
    }
    const double factor = (1.0 + std::log(z)) * (h + std::sqrt(h)) / delta;
    const double ratio = h == 0.0 ? 0.0 : lhs / factor;
    return {lhs, factor, ratio};
}

/// Orlicz gauge  inf{s > 0 : int tau(g/s) dalpha <= 1},  tau(u) = e^|u| - |u| - 1.
[[nodiscard]] inline double luxemburg_norm(std::span<const double> g, const FiniteMeasure& alpha) {
    if (g.size() != alpha.size()) throw InvalidArgument("luxemburg_norm: function has wrong size");
    double gmax = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) throw InvalidArgument("luxemburg_norm: function not finite");
        if (alpha[i] > 0.0) gmax = std::max(gmax, std::abs(g[i]));
    }
    if (gmax == 0.0) return 0.0;
    auto excess = [&](double s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (alpha[i] == 0.0) continue;
            const double u = std::abs(g[i]) / s;
            acc += alpha[i] * (std::expm1(u) - u);
        }
        return acc - 1.0;
    };
    // tau(1) = e - 2 < 1, so s = max|g| is feasible.
    double hi = gmax, lo = gmax;
    while (excess(lo) <= 0.0) lo *= 0.5;
    for (int it = 0; it < 200 && (hi - lo) > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) <= 0.0 ? hi : lo) = mid;
    }
    return hi;
}

enum class CoverMethod { exact, greedy };

struct CoveringReport {
    double epsilon;
    std::size_t count;
    CoverMethod method;
    std::vector<std::string> centers;
};

/// Minimal number of open epsilon-balls covering the space. Exhaustive search up to
/// 20 points, greedy farthest-point cover (an upper bound) beyond.
[[nodiscard]] inline CoveringReport covering_number(const MetricSpace& space, double epsilon) {
    if (!(epsilon > 0.0)) throw InvalidArgument("covering_number: epsilon must be positive");
    const std::size_t m = space.size();
    CoveringReport rep{epsilon, 0, CoverMethod::exact, {}};
    if (m == 0) return rep;

    if (m <= 20) {
        std::vector<std::uint32_t> ball(m, 0);
        for (std::size_t c = 0; c < m; ++c)
            for (std::size_t x = 0; x < m; ++x)
                if (space.distance(c, x) < epsilon) ball[c] |= std::uint32_t{1} << x;
        const std::uint32_t all = m == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << m) - 1;
        std::vector<std::size_t> pick;
        std::function<bool(std::size_t, std::size_t, std::uint32_t)> search =
            [&](std::size_t start, std::size_t left, std::uint32_t covered) -> bool {
            if (left == 0) return covered == all;
            for (std::size_t c = start; c + left <= m; ++c) {
                pick.push_back(c);
                if (search(c + 1, left - 1, covered | ball[c])) return true;
                pick.pop_back();
            }
            return false;
        };
        for (std::size_t k = 1; k <= m; ++k) {
            pick.clear();
            if (search(0, k, 0)) break;
        }
        rep.count = pick.size();
        for (auto c : pick) rep.centers.push_back(space.label(c));
        return rep;
    }

    rep.method = CoverMethod::greedy;
    std::vector<double> gap(m, std::numeric_limits<double>::infinity());
    std::size_t next = 0;
    while (true) {
        rep.centers.push_back(space.label(next));
        for (std::size_t x = 0; x < m; ++x) gap[x] = std::min(gap[x], space.distance(next, x));
        const auto far = std::max_element(gap.begin(), gap.end());
        if (*far < epsilon) break;
        next = static_cast<std::size_t>(far - gap.begin());
    }
    rep.count = rep.centers.size();
    return rep;
}

enum class MeasureMetric { prohorov, fortet_mourier };

/// Covering bound for M_1(E): (2e/eps)^N for Prohorov balls, (4e/eps)^N for
/// Fortet-Mourier balls. The caller supplies N(d, eps) or N(d, eps/2) respectively.
[[nodiscard]] inline double covering_bound_measures(std::size_t n_cover, double epsilon, MeasureMetric metric) {
    if (!(epsilon > 0.0) || epsilon > 1.0) throw InvalidArgument("covering_bound_measures: epsilon must lie in (0, 1]");
    const double base = (metric == MeasureMetric::prohorov ? 2.0 : 4.0) * std::numbers::e / epsilon;
    return std::pow(base, static_cast<double>(n_cover));
}

struct MetricSchedule {
    double epsilon;
    double criterion;  ///< n eps^2/8 + log(eps) N(eps/8) at the returned eps
    bool warning;      ///< no grid point met the threshold; eps = 1 returned
};

/// Smallest eps on the grid 1, 0.95, 0.95^2, ... (down to `floor`) with
///   n eps^2 / 8 + log(eps) N(eps/8) >= sqrt(n).
[[nodiscard]] inline MetricSchedule epsilon_schedule_metric(const std::function<double(double)>& covering_fn,
                                                            double n, double ratio = 0.95, double floor = 1e-8) {
    if (!(n >= 1.0)) throw InvalidArgument("epsilon_schedule_metric: n must be >= 1");
    auto crit = [&](double eps) { return n * eps * eps / 8.0 + std::log(eps) * covering_fn(eps / 8.0); };
    const double threshold = std::sqrt(n);
    MetricSchedule best{1.0, crit(1.0), true};
    for (double eps = 1.0; eps >= floor; eps *= ratio) {
        const double c = crit(eps);
        if (c >= threshold) best = {eps, c, false};
    }
    return best;
}

}  // namespace thinsets
