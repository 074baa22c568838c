#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "thinsets/error.hpp"
#include "thinsets/measures.hpp"
#include "thinsets/parallel.hpp"

namespace thinsets {

/// Reference joint law mu01 = p * (mu0 x mu1) on grid_u x grid_v, with target marginals nu0, nu1.
struct BridgeProblem {
    std::vector<double> grid_u;
    std::vector<double> grid_v;
    FiniteMeasure mu0;
    FiniteMeasure mu1;
    Eigen::MatrixXd p;  ///< density of mu01 against mu0 x mu1, |grid_u| x |grid_v|
    FiniteMeasure nu0;
    FiniteMeasure nu1;

    void validate() const {
        const auto nu = static_cast<Eigen::Index>(grid_u.size()), nv = static_cast<Eigen::Index>(grid_v.size());
        if (p.rows() != nu || p.cols() != nv) throw InvalidArgument("BridgeProblem: p has wrong shape");
        if (mu0.size() != grid_u.size() || nu0.size() != grid_u.size() || mu1.size() != grid_v.size() ||
            nu1.size() != grid_v.size())
            throw InvalidArgument("BridgeProblem: marginal sizes do not match the grids");
        if (!p.allFinite() || (p.array() < 0.0).any()) throw InvalidArgument("BridgeProblem: p must be finite and >= 0");
        for (Eigen::Index u = 0; u < nu; ++u) {
            if (mu0[static_cast<std::size_t>(u)] == 0.0) continue;
            double s = 0.0;
            for (Eigen::Index v = 0; v < nv; ++v) s += p(u, v) * mu1[static_cast<std::size_t>(v)];
            if (std::abs(s - 1.0) > 1e-10) throw InvalidArgument("BridgeProblem: p is not a conditional density in v");
        }
        for (Eigen::Index v = 0; v < nv; ++v) {
            if (mu1[static_cast<std::size_t>(v)] == 0.0) continue;
            double s = 0.0;
            for (Eigen::Index u = 0; u < nu; ++u) s += p(u, v) * mu0[static_cast<std::size_t>(u)];
            if (std::abs(s - 1.0) > 1e-10) throw InvalidArgument("BridgeProblem: p is not a conditional density in u");
        }
        for (std::size_t u = 0; u < grid_u.size(); ++u)
            if (nu0[u] > 0.0 && mu0[u] == 0.0) throw InvalidArgument("BridgeProblem: nu0 not absolutely continuous");
        for (std::size_t v = 0; v < grid_v.size(); ++v)
            if (nu1[v] > 0.0 && mu1[v] == 0.0) throw InvalidArgument("BridgeProblem: nu1 not absolutely continuous");
    }
};

/// Discretized heat kernel: P(v | u) proportional to exp(-(v-u)^2 / 2t) on the same grid,
/// mu1 the image of mu0, p(u, v) = P(v | u) / mu1(v). Targets default to the references.
[[nodiscard]] inline BridgeProblem gaussian_reference(const std::vector<double>& grid, double t, const FiniteMeasure& mu0) {
    if (grid.size() < 2) throw InvalidArgument("gaussian_reference: grid needs at least two points");
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (!(grid[i] < grid[i + 1])) throw InvalidArgument("gaussian_reference: grid must be strictly increasing");
    if (!(t > 0.0)) throw InvalidArgument("gaussian_reference: t must be positive");
    if (mu0.size() != grid.size()) throw InvalidArgument("gaussian_reference: mu0 size differs from grid");
    const auto n = static_cast<Eigen::Index>(grid.size());
    Eigen::MatrixXd P(n, n);
    for (Eigen::Index u = 0; u < n; ++u) {
        for (Eigen::Index v = 0; v < n; ++v) {
            const double dx = grid[static_cast<std::size_t>(v)] - grid[static_cast<std::size_t>(u)];
            P(u, v) = std::exp(-dx * dx / (2.0 * t));
        }
        P.row(u) /= P.row(u).sum();
    }
    if ((P.array() <= 0.0).any()) throw NumericError("gaussian_reference: kernel underflow, increase t");
    std::vector<double> m1(grid.size(), 0.0);
    for (Eigen::Index u = 0; u < n; ++u)
        for (Eigen::Index v = 0; v < n; ++v) m1[static_cast<std::size_t>(v)] += mu0[static_cast<std::size_t>(u)] * P(u, v);
    FiniteMeasure mu1 = FiniteMeasure::normalized(mu0.space(), m1);
    Eigen::MatrixXd p(n, n);
    for (Eigen::Index u = 0; u < n; ++u)
        for (Eigen::Index v = 0; v < n; ++v) p(u, v) = P(u, v) / m1[static_cast<std::size_t>(v)];
    return {grid, grid, mu0, mu1, std::move(p), mu0, mu1};
}

struct BridgePotentials {
    std::vector<double> f;
    std::vector<double> g;
    double residual;                ///< l1 error of the u-marginal after the last sweep
    int iterations;
    bool converged;
    std::vector<double> history;    ///< residual after each sweep
};

/// Alternating fit of the two marginal equations from g = 1, f first, then a gauge
/// split so that int log f dnu0 = int log g dnu1.
[[nodiscard]] inline BridgePotentials sinkhorn(const BridgeProblem& pb, double tol = 1e-12, int max_iter = 1000) {
    pb.validate();
    if (!(tol > 0.0)) throw InvalidArgument("sinkhorn: tol must be positive");
    const std::size_t nu = pb.grid_u.size(), nv = pb.grid_v.size();
    std::vector<double> f(nu, 1.0), g(nv, 1.0);
    BridgePotentials out{{}, {}, std::numeric_limits<double>::infinity(), 0, false, {}};

    auto row_integral = [&](std::size_t u) {
        double s = 0.0;
        for (std::size_t v = 0; v < nv; ++v) s += pb.p(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) * g[v] * pb.mu1[v];
        return s;
    };
    auto col_integral = [&](std::size_t v) {
        double s = 0.0;
        for (std::size_t u = 0; u < nu; ++u) s += pb.p(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) * f[u] * pb.mu0[u];
        return s;
    };

    for (int it = 1; it <= max_iter; ++it) {
        for (std::size_t u = 0; u < nu; ++u) {
            if (pb.mu0[u] == 0.0) continue;
            const double s = row_integral(u);
            if (!(s > 0.0)) throw NumericError("sinkhorn: vanishing row integral");
            f[u] = (pb.nu0[u] / pb.mu0[u]) / s;
        }
        for (std::size_t v = 0; v < nv; ++v) {
            if (pb.mu1[v] == 0.0) continue;
            const double s = col_integral(v);
            if (!(s > 0.0)) throw NumericError("sinkhorn: vanishing column integral");
            g[v] = (pb.nu1[v] / pb.mu1[v]) / s;
        }
        double res = 0.0;
        for (std::size_t u = 0; u < nu; ++u) res += std::abs(f[u] * pb.mu0[u] * row_integral(u) - pb.nu0[u]);
        out.history.push_back(res);
        out.residual = res;
        out.iterations = it;
        if (res <= tol) {
            out.converged = true;
            break;
        }
    }

    double lf = 0.0, lg = 0.0;
    for (std::size_t u = 0; u < nu; ++u)
        if (pb.nu0[u] > 0.0) lf += pb.nu0[u] * std::log(f[u]);
    for (std::size_t v = 0; v < nv; ++v)
        if (pb.nu1[v] > 0.0) lg += pb.nu1[v] * std::log(g[v]);
    const double c = std::exp(0.5 * (lg - lf));
    for (double& x : f) x *= c;
    for (double& x : g) x /= c;
    out.f = std::move(f);
    out.g = std::move(g);
    return out;
}

namespace detail {
inline SpacePtr grid_product_space(const BridgeProblem& pb) {
    std::vector<std::string> labels;
    labels.reserve(pb.grid_u.size() * pb.grid_v.size());
    for (const auto& a : pb.mu0.space()->labels())
        for (const auto& b : pb.mu1.space()->labels()) labels.push_back(a + "," + b);
    return std::make_shared<const MetricSpace>(std::move(labels));
}
}  // namespace detail

/// The reference joint mu01 on grid_u x grid_v (u-major).
[[nodiscard]] inline FiniteMeasure reference_joint(const BridgeProblem& pb, SpacePtr space = nullptr) {
    if (!space) space = detail::grid_product_space(pb);
    std::vector<double> w;
    w.reserve(pb.grid_u.size() * pb.grid_v.size());
    for (std::size_t u = 0; u < pb.grid_u.size(); ++u)
        for (std::size_t v = 0; v < pb.grid_v.size(); ++v)
            w.push_back(pb.p(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) * pb.mu0[u] * pb.mu1[v]);
    return FiniteMeasure::normalized(std::move(space), std::move(w));
}

/// f(u) g(v) mu01(u, v), normalized.
[[nodiscard]] inline FiniteMeasure bridge_measure(const BridgeProblem& pb, const BridgePotentials& pot, SpacePtr space = nullptr) {
    if (!space) space = detail::grid_product_space(pb);
    std::vector<double> w;
    w.reserve(pb.grid_u.size() * pb.grid_v.size());
    for (std::size_t u = 0; u < pb.grid_u.size(); ++u)
        for (std::size_t v = 0; v < pb.grid_v.size(); ++v)
            w.push_back(pot.f[u] * pot.g[v] * pb.p(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) *
                        pb.mu0[u] * pb.mu1[v]);
    return FiniteMeasure::normalized(std::move(space), std::move(w));
}

struct BridgeEntropy {
    double direct;      ///< H(bridge | mu01)
    double potentials;  ///< int log f dnu0 + int log g dnu1
};

[[nodiscard]] inline BridgeEntropy bridge_entropy(const BridgeProblem& pb, const BridgePotentials& pot) {
    const SpacePtr sp = detail::grid_product_space(pb);
    const double direct = relative_entropy(bridge_measure(pb, pot, sp), reference_joint(pb, sp));
    double h = 0.0;
    for (std::size_t u = 0; u < pb.grid_u.size(); ++u)
        if (pb.nu0[u] > 0.0) h += pb.nu0[u] * std::log(pot.f[u]);
    for (std::size_t v = 0; v < pb.grid_v.size(); ++v)
        if (pb.nu1[v] > 0.0) h += pb.nu1[v] * std::log(pot.g[v]);
    return {direct, h};
}

/// u- and v-marginals of a joint law on the product grid.
[[nodiscard]] inline std::pair<std::vector<double>, std::vector<double>> joint_marginals(const FiniteMeasure& joint,
                                                                                        std::size_t nu, std::size_t nv) {
    if (joint.size() != nu * nv) throw InvalidArgument("joint_marginals: size mismatch");
    std::vector<double> a(nu, 0.0), b(nv, 0.0);
    for (std::size_t u = 0; u < nu; ++u)
        for (std::size_t v = 0; v < nv; ++v) {
            a[u] += joint[u * nv + v];
            b[v] += joint[u * nv + v];
        }
    return {a, b};
}

/// Random element of Pi(nu0, nu1): a random positive matrix scaled onto the marginals.
[[nodiscard]] inline FiniteMeasure random_coupling(const FiniteMeasure& nu0, const FiniteMeasure& nu1, SpacePtr space,
                                                   std::mt19937_64& eng) {
    const std::size_t nu = nu0.size(), nv = nu1.size();
    std::vector<double> w(nu * nv);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double x = uniform01(eng);
        w[i] = 0.05 + x * x * x;  // skewed so competitors differ visibly from the bridge
    }
    for (std::size_t u = 0; u < nu; ++u)
        for (std::size_t v = 0; v < nv; ++v)
            if (nu0[u] == 0.0 || nu1[v] == 0.0) w[u * nv + v] = 0.0;
    for (int it = 0; it < 100000; ++it) {
        for (std::size_t u = 0; u < nu; ++u) {
            double s = 0.0;
            for (std::size_t v = 0; v < nv; ++v) s += w[u * nv + v];
            if (s > 0.0)
                for (std::size_t v = 0; v < nv; ++v) w[u * nv + v] *= nu0[u] / s;
        }
        for (std::size_t v = 0; v < nv; ++v) {
            double s = 0.0;
            for (std::size_t u = 0; u < nu; ++u) s += w[u * nv + v];
            if (s > 0.0)
                for (std::size_t u = 0; u < nu; ++u) w[u * nv + v] *= nu1[v] / s;
        }
        double err = 0.0;
        for (std::size_t u = 0; u < nu; ++u) {
            double s = 0.0;
            for (std::size_t v = 0; v < nv; ++v) s += w[u * nv + v];
            err += std::abs(s - nu0[u]);
        }
        if (err <= 1e-15) break;
    }
    return FiniteMeasure::normalized(std::move(space), std::move(w));
}

struct PythagorasReport {
    std::size_t competitors;
    std::size_t violations;
    double worst_margin;  ///< min over competitors of H(b|mu01) - H_direct - H(b|bridge)
};

/// Checks H(b | mu01) >= H(bridge | mu01) + H(b | bridge) - slack for random couplings b.
[[nodiscard]] inline PythagorasReport bridge_pythagoras(const BridgeProblem& pb, const BridgePotentials& pot,
                                                        std::size_t competitors, std::uint64_t seed, double slack = 1e-8) {
    const SpacePtr sp = detail::grid_product_space(pb);
    const FiniteMeasure ref = reference_joint(pb, sp);
    const FiniteMeasure star = bridge_measure(pb, pot, sp);
    const double h_star = relative_entropy(star, ref);
    auto eng = worker_engine(seed, 0);
    PythagorasReport rep{competitors, 0, std::numeric_limits<double>::infinity()};
    for (std::size_t c = 0; c < competitors; ++c) {
        const FiniteMeasure b = random_coupling(pb.nu0, pb.nu1, sp, eng);
        const double margin = relative_entropy(b, ref) - h_star - relative_entropy(b, star);
        rep.worst_margin = std::min(rep.worst_margin, margin);
        if (margin < -slack) ++rep.violations;
    }
    return rep;
}

struct ScheduleCheckRow {
    int n;
    double epsilon;
    double probability;  ///< fraction of trials with d(L_n, nu) <= eps_n
};

/// Empirical P(d(L_n, nu) <= eps_n) for the Prohorov or Fortet-Mourier distance.
[[nodiscard]] inline std::vector<ScheduleCheckRow> marginal_schedule_check(const FiniteMeasure& nu, MeasureMetric metric,
                                                                           const std::function<double(double)>& eps_fn,
                                                                           const std::vector<int>& n_list, std::uint64_t trials,
                                                                           std::uint64_t seed, std::size_t workers = 1) {
    if (trials < 1) throw InvalidArgument("marginal_schedule_check: trials must be >= 1");
    if (workers == 0) workers = default_workers();
    workers = std::min<std::size_t>(workers, trials);
    const std::vector<double> cdf = cumulative(nu.weights());
    std::vector<ScheduleCheckRow> rows;
    for (int n : n_list) {
        if (n < 1) throw InvalidArgument("marginal_schedule_check: n must be >= 1");
        const double eps = eps_fn(n);
        std::vector<std::uint64_t> hits(workers, 0);
        run_workers(workers, [&](std::size_t w) {
            auto eng = worker_engine(seed, w, static_cast<std::uint64_t>(n));
            const Slice sl = worker_slice(trials, workers, w);
            for (std::size_t t = sl.begin; t < sl.end; ++t) {
                std::vector<double> c(nu.size(), 0.0);
                for (int s = 0; s < n; ++s) c[draw_index(cdf, eng)] += 1.0;
                const FiniteMeasure L = FiniteMeasure::normalized(nu.space(), std::move(c));
                const double d = metric == MeasureMetric::fortet_mourier ? fm_distance(L, nu) : prohorov_distance(L, nu).distance;
                if (d <= eps + 1e-12) ++hits[w];
            }
        });
        std::uint64_t total = 0;
        for (auto h : hits) total += h;
        rows.push_back({n, eps, static_cast<double>(total) / static_cast<double>(trials)});
    }
    return rows;
}

}  // namespace thinsets
