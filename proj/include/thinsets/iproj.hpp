#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "thinsets/error.hpp"
#include "thinsets/measures.hpp"

namespace thinsets {

struct PointTarget {
    Eigen::VectorXd x0;
};

struct BoxTarget {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
};

using MomentTarget = std::variant<PointTarget, BoxTarget>;

/// Minimize H(nu | alpha) subject to  int F dnu  in the target set.
/// F has one row per support point and one column per moment coordinate.
struct MomentProblem {
    FiniteMeasure alpha;
    Eigen::MatrixXd F;
    MomentTarget target;

    [[nodiscard]] Eigen::Index dim() const noexcept { return F.cols(); }

    void validate() const {
        if (static_cast<std::size_t>(F.rows()) != alpha.size())
            throw InvalidArgument("MomentProblem: F needs one row per support point");
        if (F.cols() < 1) throw InvalidArgument("MomentProblem: F needs at least one column");
        if (!F.allFinite()) throw InvalidArgument("MomentProblem: F must be finite");
        if (const auto* p = std::get_if<PointTarget>(&target)) {
            if (p->x0.size() != F.cols()) throw InvalidArgument("MomentProblem: target dimension mismatch");
            if (!p->x0.allFinite()) throw InvalidArgument("MomentProblem: target must be finite");
        } else {
            const auto& b = std::get<BoxTarget>(target);
            if (b.lo.size() != F.cols() || b.hi.size() != F.cols())
                throw InvalidArgument("MomentProblem: box dimension mismatch");
            if (!b.lo.allFinite() || !b.hi.allFinite()) throw InvalidArgument("MomentProblem: box must be finite");
            if ((b.lo.array() > b.hi.array()).any()) throw InvalidArgument("MomentProblem: box has lo > hi");
        }
    }
};

struct LogLaplace {
    double value;
    Eigen::VectorXd gradient;  ///< tilted mean of F
    Eigen::MatrixXd hessian;   ///< tilted covariance of F
};

/// log sum_i alpha_i exp<lambda, F_i> with its first two derivatives (max-shifted).
[[nodiscard]] inline LogLaplace log_laplace(const FiniteMeasure& alpha, const Eigen::MatrixXd& F,
                                            const Eigen::VectorXd& lambda) {
    const Eigen::Index m = F.rows(), d = F.cols();
    if (lambda.size() != d) throw InvalidArgument("log_laplace: lambda dimension mismatch");
    Eigen::VectorXd s = F * lambda;
    double shift = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i)
        if (alpha[static_cast<std::size_t>(i)] > 0.0) shift = std::max(shift, s(i));
    Eigen::VectorXd w(m);
    double z = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double a = alpha[static_cast<std::size_t>(i)];
        w(i) = a > 0.0 ? a * std::exp(s(i) - shift) : 0.0;
        z += w(i);
    }
    w /= z;
    LogLaplace out{shift + std::log(z), F.transpose() * w, Eigen::MatrixXd::Zero(d, d)};
    for (Eigen::Index i = 0; i < m; ++i) {
        if (w(i) == 0.0) continue;
        const Eigen::VectorXd c = F.row(i).transpose() - out.gradient;
        out.hessian.noalias() += w(i) * c * c.transpose();
    }
    return out;
}

[[nodiscard]] inline LogLaplace log_laplace(const MomentProblem& problem, const Eigen::VectorXd& lambda) {
    return log_laplace(problem.alpha, problem.F, lambda);
}

/// Exponential tilt: weights proportional to alpha_i exp<lambda, F_i>.
[[nodiscard]] inline FiniteMeasure tilt(const FiniteMeasure& alpha, const Eigen::MatrixXd& F,
                                        const Eigen::VectorXd& lambda) {
    if (static_cast<std::size_t>(F.rows()) != alpha.size() || lambda.size() != F.cols())
        throw InvalidArgument("tilt: dimension mismatch");
    const Eigen::VectorXd s = F * lambda;
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < alpha.size(); ++i)
        if (alpha[i] > 0.0) shift = std::max(shift, s(static_cast<Eigen::Index>(i)));
    std::vector<double> w(alpha.size(), 0.0);
    for (std::size_t i = 0; i < alpha.size(); ++i)
        if (alpha[i] > 0.0) w[i] = alpha[i] * std::exp(s(static_cast<Eigen::Index>(i)) - shift);
    return FiniteMeasure::normalized(alpha.space(), std::move(w));
}

struct TiltedSolution {
    Eigen::VectorXd lambda_star;
    double log_Z;
    FiniteMeasure alpha_star;
    double entropy;
    Eigen::VectorXd moment;
    double variance;          ///< top eigenvalue of the F-covariance under alpha_star
    double third_abs_moment;  ///< E|F - mean|^3 under alpha_star; NaN unless d = 1
    int iterations;
};

struct DualOptions {
    double tolerance = 1e-10;
    int max_iter = 500;
    int subgradient_iter = 200;
    /// ||lambda|| * spread(F) beyond which the tilt is declared divergent.
    double divergence_exponent = 700.0;
};

namespace detail {

inline TiltedSolution make_solution(const FiniteMeasure& alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& pinned_value, int iterations) {
    const LogLaplace L = log_laplace(alpha, F, lambda);
    FiniteMeasure star = tilt(alpha, F, lambda);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L.hessian, Eigen::EigenvaluesOnly);
    const double var = std::max(0.0, es.eigenvalues().maxCoeff());
    double kappa = std::numeric_limits<double>::quiet_NaN();
    if (F.cols() == 1) {
        kappa = 0.0;
        for (std::size_t i = 0; i < star.size(); ++i)
            kappa += star[i] * std::pow(std::abs(F(static_cast<Eigen::Index>(i), 0) - L.gradient(0)), 3);
    }
    // entropy = <lambda, y> - Lambda(lambda) where y is the constraint value each active
    // multiplier is pinned to; for inactive coordinates lambda_j = 0 so y_j does not matter.
    const double h = lambda.dot(pinned_value) - L.value;
    return {lambda, L.value, std::move(star), std::max(h, 0.0), L.gradient, var, kappa, iterations};
}

inline double f_spread(const Eigen::MatrixXd& F, const FiniteMeasure& alpha) {
    double spread = 0.0;
    for (Eigen::Index i = 0; i < F.rows(); ++i) {
        if (alpha[static_cast<std::size_t>(i)] == 0.0) continue;
        for (Eigen::Index j = 0; j < F.rows(); ++j)
            if (alpha[static_cast<std::size_t>(j)] > 0.0) spread = std::max(spread, (F.row(i) - F.row(j)).norm());
    }
    return spread;
}

/// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
    std::vector<double> u(v.data(), v.data() + v.size());
    std::sort(u.begin(), u.end(), std::greater<>());
    double acc = 0.0, theta = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        acc += u[k];
        const double t = (acc - 1.0) / static_cast<double>(k + 1);
        if (u[k] - t > 0.0) theta = t;
    }
    return (v.array() - theta).max(0.0).matrix();
}

/// Distance between conv{F_i : alpha_i > 0} and the box, by accelerated projected
/// gradient on (w, y). Returns the gap and the direction from hull toward the box.
inline std::pair<double, Eigen::VectorXd> hull_box_gap(const FiniteMeasure& alpha, const Eigen::MatrixXd& F, const BoxTarget& box) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < alpha.size(); ++i)
        if (alpha[i] > 0.0) rows.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd G(static_cast<Eigen::Index>(rows.size()), F.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) G.row(static_cast<Eigen::Index>(k)) = F.row(rows[k]);
    const double L = G.squaredNorm() + 1.0;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(G.rows(), 1.0 / static_cast<double>(G.rows()));
    Eigen::VectorXd y = (G.transpose() * w).cwiseMax(box.lo).cwiseMin(box.hi);
    Eigen::VectorXd wp = w, yp = y;
    double t = 1.0;
    for (int it = 0; it < 20000; ++it) {
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double mom = (t - 1.0) / tn;
        const Eigen::VectorXd vw = w + mom * (w - wp), vy = y + mom * (y - yp);
        const Eigen::VectorXd r = G.transpose() * vw - vy;
        wp = w;
        yp = y;
        w = project_simplex(vw - (G * r) / L);
        y = (vy + r / L).cwiseMax(box.lo).cwiseMin(box.hi);
        t = tn;
        if ((w - wp).norm() + (y - yp).norm() < 1e-15) break;
    }
    const Eigen::VectorXd r = y - G.transpose() * w;
    const double gap = r.norm();
    return {gap, gap > 0.0 ? Eigen::VectorXd(r / gap) : Eigen::VectorXd(r)};
}

// Newton on Lambda(lambda) - <lambda, x0> for the point target x0.
inline TiltedSolution newton_point(const FiniteMeasure& alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& x0,
                                   const DualOptions& opt) {
    const Eigen::Index d = F.cols();
    const double spread = f_spread(F, alpha);

    // Affine-hull check: directions u with <u, F_i> constant on the support must also
    // be constant at x0, otherwise no tilt can reach the target.
    {
        const LogLaplace L0 = log_laplace(alpha, F, Eigen::VectorXd::Zero(d));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L0.hessian);
        const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
        const Eigen::VectorXd r = x0 - L0.gradient;
        for (Eigen::Index k = 0; k < d; ++k) {
            if (es.eigenvalues()(k) > 1e-12 * std::max(top, 1.0)) continue;
            const Eigen::VectorXd u = es.eigenvectors().col(k);
            if (std::abs(u.dot(r)) > 1e-9 * (1.0 + r.norm()))
                throw InfeasibleError("solve_dual: target outside the affine hull of the F-values",
                                      std::vector<double>(u.data(), u.data() + d));
        }
    }

    {
        const auto [gap, dir] = hull_box_gap(alpha, F, BoxTarget{x0, x0});
        if (gap > 1e-9 * std::max(1.0, spread))
            throw InfeasibleError("solve_dual: target outside the convex hull of the F-values",
                                  std::vector<double>(dir.data(), dir.data() + d));
    }

    auto phi = [&](const Eigen::VectorXd& lam, const LogLaplace& L) { return L.value - lam.dot(x0); };
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(d);
    LogLaplace L = log_laplace(alpha, F, lambda);
    for (int it = 0; it < opt.max_iter; ++it) {
        const Eigen::VectorXd g = L.gradient - x0;
        if (g.norm() <= opt.tolerance) return make_solution(alpha, F, lambda, x0, it);

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L.hessian);
        const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
        Eigen::VectorXd step = Eigen::VectorXd::Zero(d);
        for (Eigen::Index k = 0; k < d; ++k) {
            const double ev = es.eigenvalues()(k);
            if (ev <= 1e-14 * std::max(top, 1e-300)) continue;
            const Eigen::VectorXd u = es.eigenvectors().col(k);
            step -= (u.dot(g) / ev) * u;
        }
        if (step.squaredNorm() == 0.0) step = -g;  // fully flat Hessian: fall back to steepest descent

        const double f0 = phi(lambda, L);
        const double slope = g.dot(step);
        double t = 1.0;
        Eigen::VectorXd next;
        LogLaplace Ln;
        for (;;) {
            next = lambda + t * step;
            Ln = log_laplace(alpha, F, next);
            const double f1 = phi(next, Ln);
            if (f1 <= f0 + 1e-4 * t * slope) break;
            // Near the optimum the objective decrease drowns in rounding; accept on gradient progress.
            if ((Ln.gradient - x0).norm() < g.norm() && std::abs(f1 - f0) <= 1e-14 * (1.0 + std::abs(f0))) break;
            t *= 0.5;
            if (t < 1e-12) break;
        }
        lambda = next;
        L = std::move(Ln);
        if (lambda.norm() * spread > opt.divergence_exponent) {
            const Eigen::VectorXd u = lambda.normalized();
            throw InfeasibleError("solve_dual: no tilt reaches the target (multiplier diverges)",
                                  std::vector<double>(u.data(), u.data() + d));
        }
    }
    throw NumericError("solve_dual: Newton iteration did not converge");
}

// Sign pattern for a box: +1 pins the coordinate at lo (lambda_j > 0),
// -1 pins at hi (lambda_j < 0), 0 leaves it free (lambda_j = 0), 2 marks lo = hi.
struct BoxAttempt {
    std::optional<TiltedSolution> sol;
    bool kkt = false;
};

inline BoxAttempt solve_pattern(const MomentProblem& pb, const BoxTarget& box, const std::vector<int>& pattern,
                                const DualOptions& opt) {
    const Eigen::Index d = pb.F.cols();
    std::vector<Eigen::Index> act;
    for (Eigen::Index j = 0; j < d; ++j)
        if (pattern[static_cast<std::size_t>(j)] != 0) act.push_back(j);
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd pinned(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const int s = pattern[static_cast<std::size_t>(j)];
        pinned(j) = s == -1 ? box.hi(j) : box.lo(j);
    }
    int iters = 0;
    if (!act.empty()) {
        Eigen::MatrixXd Fa(pb.F.rows(), static_cast<Eigen::Index>(act.size()));
        Eigen::VectorXd ya(static_cast<Eigen::Index>(act.size()));
        for (std::size_t a = 0; a < act.size(); ++a) {
            Fa.col(static_cast<Eigen::Index>(a)) = pb.F.col(act[a]);
            ya(static_cast<Eigen::Index>(a)) = pinned(act[a]);
        }
        TiltedSolution sub = [&] {
            try {
                return newton_point(pb.alpha, Fa, ya, opt);
            } catch (const NumericError&) {
                return TiltedSolution{Eigen::VectorXd(), 0.0, pb.alpha, std::numeric_limits<double>::quiet_NaN(),
                                      Eigen::VectorXd(), 0.0, 0.0, -1};
            }
        }();
        if (sub.iterations < 0) return {};
        for (std::size_t a = 0; a < act.size(); ++a) lambda(act[a]) = sub.lambda_star(static_cast<Eigen::Index>(a));
        iters = sub.iterations;
    }
    TiltedSolution sol = make_solution(pb.alpha, pb.F, lambda, pinned, iters);
    constexpr double tol = 1e-9;
    bool ok = true;
    for (Eigen::Index j = 0; j < d; ++j) {
        const int s = pattern[static_cast<std::size_t>(j)];
        const double lj = lambda(j), mj = sol.moment(j);
        if (s == 0) ok = ok && mj >= box.lo(j) - tol && mj <= box.hi(j) + tol;
        if (s == 1) ok = ok && lj >= -tol;
        if (s == -1) ok = ok && lj <= tol;
    }
    return {std::move(sol), ok};
}

inline TiltedSolution solve_box(const MomentProblem& pb, const BoxTarget& box, const DualOptions& opt) {
    {
        const auto [gap, dir] = hull_box_gap(pb.alpha, pb.F, box);
        const double scale = std::max(1.0, pb.F.cwiseAbs().maxCoeff());
        if (gap > 1e-7 * scale)
            throw InfeasibleError("solve_dual: box does not meet the convex hull of the F-values",
                                  std::vector<double>(dir.data(), dir.data() + dir.size()));
    }
    const Eigen::Index d = pb.F.cols();
    const auto n_d = static_cast<std::size_t>(d);
    auto fix_degenerate = [&](std::vector<int>& pat) {
        for (Eigen::Index j = 0; j < d; ++j)
            if (box.lo(j) == box.hi(j)) pat[static_cast<std::size_t>(j)] = 2;
    };

    // Subgradient phase on H(lambda) = Lambda(lambda) - inf_{y in box} <lambda, y>,
    // used only to pick the starting sign pattern.
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(d);
    double best_val = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best = lambda;
    const double spread = std::max(f_spread(pb.F, pb.alpha), 1e-12);
    for (int it = 0; it < opt.subgradient_iter; ++it) {
        const LogLaplace L = log_laplace(pb.alpha, pb.F, lambda);
        Eigen::VectorXd y(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double lj = lambda(j);
            y(j) = lj > 0.0 ? box.lo(j) : lj < 0.0 ? box.hi(j) : std::clamp(L.gradient(j), box.lo(j), box.hi(j));
        }
        const double val = L.value - lambda.dot(y);
        if (val < best_val) {
            best_val = val;
            best = lambda;
        }
        const Eigen::VectorXd g = L.gradient - y;
        const double gn = g.squaredNorm();
        if (gn <= opt.tolerance * opt.tolerance) break;
        // Diminishing step scaled by local curvature.
        const double curv = std::max(1e-3, L.hessian.norm());
        lambda -= (1.0 / (curv * (1.0 + 0.05 * it))) * g;
        if (lambda.norm() * spread > opt.divergence_exponent) break;
    }

    std::vector<int> pattern(n_d, 0);
    const LogLaplace Lb = log_laplace(pb.alpha, pb.F, best);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double lj = best(j), mj = Lb.gradient(j);
        if (lj > 1e-8 || mj < box.lo(j)) pattern[static_cast<std::size_t>(j)] = 1;
        if (lj < -1e-8 || mj > box.hi(j)) pattern[static_cast<std::size_t>(j)] = -1;
    }
    fix_degenerate(pattern);

    // Active-set Newton polish.
    for (int round = 0; round < 4 * static_cast<int>(d) + 4; ++round) {
        BoxAttempt at = solve_pattern(pb, box, pattern, opt);
        if (!at.sol) break;
        if (at.kkt) return std::move(*at.sol);
        bool changed = false;
        for (Eigen::Index j = 0; j < d; ++j) {
            auto& s = pattern[static_cast<std::size_t>(j)];
            const double lj = at.sol->lambda_star(j), mj = at.sol->moment(j);
            if (s == 0 && mj < box.lo(j) - 1e-9) s = 1, changed = true;
            else if (s == 0 && mj > box.hi(j) + 1e-9) s = -1, changed = true;
            else if (s == 1 && lj < -1e-9) s = 0, changed = true;
            else if (s == -1 && lj > 1e-9) s = 0, changed = true;
        }
        if (!changed) break;
    }

    // Exhaustive fallback over sign patterns.
    if (d > 8) throw NumericError("solve_dual: active-set search failed for the box target");
    std::size_t total = 1;
    for (std::size_t j = 0; j < n_d; ++j) total *= 3;
    std::optional<TiltedSolution> any;
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        for (std::size_t j = 0; j < n_d; ++j) {
            pattern[j] = static_cast<int>(c % 3) - 1;
            c /= 3;
        }
        fix_degenerate(pattern);
        BoxAttempt at = solve_pattern(pb, box, pattern, opt);
        if (at.sol && at.kkt) return std::move(*at.sol);
        if (at.sol) any = std::move(at.sol);
    }
    if (!any) throw InfeasibleError("solve_dual: box does not meet the convex hull of the F-values", {});
    throw NumericError("solve_dual: no sign pattern satisfied the optimality conditions");
}

}  // namespace detail

/// I-projection of alpha on {nu : int F dnu in K} through the convex dual.
[[nodiscard]] inline TiltedSolution solve_dual(const MomentProblem& problem, const DualOptions& opt = {}) {
    problem.validate();
    if (const auto* p = std::get_if<PointTarget>(&problem.target))
        return detail::newton_point(problem.alpha, problem.F, p->x0, opt);
    return detail::solve_box(problem, std::get<BoxTarget>(problem.target), opt);
}

struct BruteForceResult {
    FiniteMeasure measure;
    double entropy;
};

namespace detail {

/// Minimum entropy over measures with  sum w = 1,  F_E^T w = values  and  lo <= F^T w <= hi,
/// where the coordinates outside the pivot set of [1; F_E^T] are gridded at 1/N and the
/// pivot coordinates are solved for, so every candidate satisfies the equalities exactly.
inline void scan_face(const MomentProblem& pb, const std::vector<Eigen::Index>& eq_cols, const Eigen::VectorXd& eq_vals,
                      const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int N, double& best, std::vector<double>& best_w) {
    const auto m = static_cast<Eigen::Index>(pb.alpha.size());
    const auto r0 = static_cast<Eigen::Index>(eq_cols.size()) + 1;
    Eigen::MatrixXd A(r0, m);
    Eigen::VectorXd b(r0);
    A.row(0).setOnes();
    b(0) = 1.0;
    for (Eigen::Index k = 1; k < r0; ++k) {
        A.row(k) = pb.F.col(eq_cols[static_cast<std::size_t>(k - 1)]).transpose();
        b(k) = eq_vals(k - 1);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    lu.setThreshold(1e-10);
    const Eigen::Index r = lu.rank();
    std::vector<Eigen::Index> dep, free;
    std::vector<bool> is_dep(static_cast<std::size_t>(m), false);
    for (Eigen::Index k = 0; k < r; ++k) is_dep[static_cast<std::size_t>(lu.permutationQ().indices()(k))] = true;
    for (Eigen::Index i = 0; i < m; ++i) (is_dep[static_cast<std::size_t>(i)] ? dep : free).push_back(i);

    Eigen::MatrixXd AS(r0, r), AF(r0, static_cast<Eigen::Index>(free.size()));
    for (Eigen::Index k = 0; k < r; ++k) AS.col(k) = A.col(dep[static_cast<std::size_t>(k)]);
    for (std::size_t k = 0; k < free.size(); ++k) AF.col(static_cast<Eigen::Index>(k)) = A.col(free[k]);
    const Eigen::MatrixXd P = AS.completeOrthogonalDecomposition().pseudoInverse();

    Eigen::VectorXd wf = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free.size()));
    Eigen::VectorXd w(m);
    auto visit = [&]() {
        const Eigen::VectorXd rhs = b - AF * wf;
        const Eigen::VectorXd ws = P * rhs;
        if ((AS * ws - rhs).lpNorm<Eigen::Infinity>() > 1e-9) return;
        for (Eigen::Index k = 0; k < r; ++k) {
            if (ws(k) < -1e-12) return;
            w(dep[static_cast<std::size_t>(k)]) = std::max(ws(k), 0.0);
        }
        for (std::size_t k = 0; k < free.size(); ++k) w(free[k]) = wf(static_cast<Eigen::Index>(k));
        const Eigen::VectorXd mom = pb.F.transpose() * w;
        for (Eigen::Index j = 0; j < mom.size(); ++j)
            if (mom(j) < lo(j) - 1e-12 || mom(j) > hi(j) + 1e-12) return;
        double h = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (w(i) == 0.0) continue;
            const double a = pb.alpha[static_cast<std::size_t>(i)];
            if (a == 0.0) return;
            h += w(i) * std::log(w(i) / a);
        }
        if (h < best) {
            best = h;
            best_w.assign(w.data(), w.data() + m);
        }
    };
    auto walk = [&](auto&& self, std::size_t k, int left) -> void {
        if (k == free.size()) {
            visit();
            return;
        }
        for (int c = 0; c <= left; ++c) {
            wf(static_cast<Eigen::Index>(k)) = static_cast<double>(c) / N;
            self(self, k + 1, left - c);
        }
    };
    walk(walk, 0, N);
}

}  // namespace detail

/// Exhaustive oracle for small supports. For every face of the target (each box
/// coordinate free, at lo or at hi) the coordinates off the face's pivot set are
/// gridded at grid_step and the rest solved for, so candidates are exactly feasible
/// and the returned entropy is an upper estimate that tightens as grid_step shrinks.
[[nodiscard]] inline BruteForceResult brute_force_projection(const MomentProblem& problem, double grid_step) {
    problem.validate();
    const std::size_t m = problem.alpha.size();
    if (m < 1 || m > 4) throw InvalidArgument("brute_force_projection: support must have 1 to 4 points");
    if (!(grid_step >= 1e-3) || grid_step > 1.0) throw InvalidArgument("brute_force_projection: grid_step must lie in [1e-3, 1]");
    const int N = static_cast<int>(std::lround(1.0 / grid_step));
    const Eigen::Index d = problem.dim();
    if (d > 6) throw InvalidArgument("brute_force_projection: at most 6 moment coordinates");

    Eigen::VectorXd lo(d), hi(d);
    if (const auto* p = std::get_if<PointTarget>(&problem.target)) {
        lo = p->x0;
        hi = p->x0;
    } else {
        lo = std::get<BoxTarget>(problem.target).lo;
        hi = std::get<BoxTarget>(problem.target).hi;
    }

    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_w;
    // Interior face: only alpha itself can be optimal there.
    const Eigen::VectorXd base = problem.F.transpose() * Eigen::Map<const Eigen::VectorXd>(problem.alpha.weights().data(),
                                                                                         static_cast<Eigen::Index>(m));
    if (((base - lo).array() >= -1e-12).all() && ((hi - base).array() >= -1e-12).all()) {
        return {problem.alpha, 0.0};
    }
    std::size_t patterns = 1;
    for (Eigen::Index j = 0; j < d; ++j) patterns *= 3;
    for (std::size_t code = 1; code < patterns; ++code) {
        std::vector<Eigen::Index> cols;
        std::vector<double> vals;
        std::size_t c = code;
        bool skip = false;
        for (Eigen::Index j = 0; j < d; ++j, c /= 3) {
            const std::size_t s = c % 3;
            if (s == 0) continue;
            if (s == 2 && lo(j) == hi(j)) skip = true;  // same face as s == 1
            cols.push_back(j);
            vals.push_back(s == 1 ? lo(j) : hi(j));
        }
        if (skip) continue;
        detail::scan_face(problem, cols, Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())), lo, hi,
                          N, best, best_w);
    }
    if (best_w.empty()) throw InfeasibleError("brute_force_projection: no feasible grid point", {});
    return {FiniteMeasure::normalized(problem.alpha.space(), std::move(best_w)), std::max(best, 0.0)};
}

/// (1 + 1e-6) sqrt(a Var) / sqrt(n), just above the sqrt-n threshold.
[[nodiscard]] inline double enlargement_sqrt(const TiltedSolution& sol, double a, double n) {
    if (!(n >= 1.0)) throw InvalidArgument("enlargement_sqrt: n must be >= 1");
    if (!(a > 0.0)) throw InvalidArgument("enlargement_sqrt: a must be positive");
    return (1.0 + 1e-6) * std::sqrt(a * sol.variance) / std::sqrt(n);
}

/// margin * 10 sqrt(2 pi) kappa / sigma^3 (one-dimensional F only).
[[nodiscard]] inline double berry_esseen_constant(const TiltedSolution& sol, double margin = 1.1) {
    if (sol.lambda_star.size() != 1) throw InvalidArgument("enlargement_berry_esseen: requires d = 1");
    if (!(sol.variance > 0.0)) throw InvalidArgument("enlargement_berry_esseen: sigma = 0");
    const double sigma3 = std::pow(sol.variance, 1.5);
    return margin * 10.0 * std::sqrt(2.0 * std::numbers::pi) * sol.third_abs_moment / sigma3;
}

[[nodiscard]] inline double enlargement_berry_esseen(const TiltedSolution& sol, double n, double margin = 1.1) {
    if (!(n >= 1.0)) throw InvalidArgument("enlargement_berry_esseen: n must be >= 1");
    return berry_esseen_constant(sol, margin) / n;
}

[[nodiscard]] inline double yurinskii_tail(double b, double M, double n, double t) {
    if (!(b > 0.0) || !(M > 0.0) || !(t > 0.0)) throw InvalidArgument("yurinskii_tail: b, M, t must be positive");
    return std::exp(-n * t * t / (8.0 * (b * b + t * M)));
}

struct YurinskiiConstants {
    double M;  ///< Luxemburg norm of ||F - mean|| under alpha_star
    double b;  ///< sqrt(2) M
};

[[nodiscard]] inline YurinskiiConstants yurinskii_constants(const MomentProblem& problem, const TiltedSolution& sol) {
    std::vector<double> g(problem.alpha.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = (problem.F.row(static_cast<Eigen::Index>(i)).transpose() - sol.moment).norm();
    const double M = luxemburg_norm(g, sol.alpha_star);
    return {M, std::sqrt(2.0) * M};
}

/// (1/n) log p_ball - ||lambda*|| eps.
[[nodiscard]] inline double centering_lower_bound(const TiltedSolution& sol, double epsilon, double p_ball, double n) {
    if (!(p_ball > 0.0) || p_ball > 1.0) throw InvalidArgument("centering_lower_bound: p_ball must lie in (0, 1]");
    if (!(epsilon >= 0.0) || !(n >= 1.0)) throw InvalidArgument("centering_lower_bound: need epsilon >= 0, n >= 1");
    return std::log(p_ball) / n - sol.lambda_star.norm() * epsilon;
}

/// -H (1-p)/p + (1/n) log p - 1/(n e (1-p)).
[[nodiscard]] inline double dst_lower_bound(double H, double p_in, double n) {
    if (!(p_in > 0.0) || !(p_in < 1.0)) throw InvalidArgument("dst_lower_bound: p_in must lie strictly inside (0, 1)");
    if (!(n >= 1.0) || !(H >= 0.0)) throw InvalidArgument("dst_lower_bound: need n >= 1 and H >= 0");
    return -H * (1.0 - p_in) / p_in + std::log(p_in) / n - 1.0 / (n * std::numbers::e * (1.0 - p_in));
}

enum class ScheduleKind { sqrt_n, inv_n };

/// eps_n = c / sqrt(n) or c / n.
struct ScheduleParams {
    ScheduleKind kind = ScheduleKind::sqrt_n;
    double c = 0.0;
    double a = 1.0;       ///< type-2 constant, sqrt_n only
    double margin = 1.1;  ///< inv_n only

    /// Fills c from the solution when it was left at 0.
    [[nodiscard]] ScheduleParams resolved(const TiltedSolution& sol) const {
        ScheduleParams out = *this;
        if (out.c == 0.0)
            out.c = kind == ScheduleKind::sqrt_n ? enlargement_sqrt(sol, a, 1.0) : berry_esseen_constant(sol, margin);
        if (!(out.c > 0.0)) throw InvalidArgument("ScheduleParams: c must be positive");
        return out;
    }

    [[nodiscard]] double epsilon(double n) const {
        return kind == ScheduleKind::sqrt_n ? c / std::sqrt(n) : c / n;
    }
};

}  // namespace thinsets
