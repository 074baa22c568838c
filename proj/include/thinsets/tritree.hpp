#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "thinsets/error.hpp"
#include "thinsets/measures.hpp"
#include "thinsets/parallel.hpp"

namespace thinsets {

/// Lattice parameters: n steps on [0, 1], space tick alpha / sqrt(n).
struct LatticeSpec {
    int n = 1;
    double alpha = 2.0;
    double sigma_min = 0.5;
    double sigma_max = 1.5;
    double b0 = 0.5;
    double s = 0.25;

    [[nodiscard]] double dx() const { return alpha / std::sqrt(static_cast<double>(n)); }

    /// Range checks only; the n >= n0 requirement is checked separately by callers that need it.
    void validate() const {
        if (n < 1) throw InvalidArgument("LatticeSpec: n must be >= 1");
        if (!(sigma_min > 0.0) || !(sigma_min <= sigma_max) || !(sigma_max < alpha))
            throw InvalidArgument("LatticeSpec: need 0 < sigma_min <= sigma_max < alpha");
        if (!(s >= 0.0) || !(s < b0)) throw InvalidArgument("LatticeSpec: need 0 <= s < b0");
    }
};

/// (up, flat, down) probabilities.
struct TransitionTriple {
    double m;
    double r;
    double d;
};

/// Trinomial kernel at volatility y and drift z; throws if an entry is negative.
[[nodiscard]] inline TransitionTriple kernel(double y, double z, const LatticeSpec& spec) {
    const double a2 = spec.alpha * spec.alpha;
    const double half = y * y / (2.0 * a2);
    const double tilt = z / (2.0 * spec.alpha * std::sqrt(static_cast<double>(spec.n)));
    const TransitionTriple t{half + tilt, 1.0 - y * y / a2, half - tilt};
    if (t.m < 0.0 || t.r < 0.0 || t.d < 0.0)
        throw NumericError("kernel: negative transition probability (n below n0 for these coefficients)");
    return t;
}

/// Smallest n with strictly positive kernels over the whole coefficient rectangle.
[[nodiscard]] inline int min_level_n0(const LatticeSpec& spec) {
    const double ratio = spec.alpha * (spec.b0 + spec.s) / (spec.sigma_min * spec.sigma_min);
    return static_cast<int>(std::floor(ratio * ratio)) + 1;
}

namespace detail {
[[nodiscard]] inline std::size_t node_index(int k, int j) {
    return static_cast<std::size_t>(k) * static_cast<std::size_t>(k) + static_cast<std::size_t>(j + k);
}
[[nodiscard]] inline std::size_t node_count(int n) {
    return static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1);
}
}  // namespace detail

/// sigma and b at every lattice node (k, j), |j| <= k <= n, node (k, j) sitting at
/// (t, x) = (k/n, j alpha / sqrt(n)).
class VolSurface {
public:
    VolSurface() = default;
    explicit VolSurface(int n) : n_(n), sigma_(detail::node_count(n), 0.0), b_(detail::node_count(n), 0.0) {
        if (n < 1) throw InvalidArgument("VolSurface: n must be >= 1");
    }

    static VolSurface constant(int n, double sigma, double b) {
        VolSurface s(n);
        std::fill(s.sigma_.begin(), s.sigma_.end(), sigma);
        std::fill(s.b_.begin(), s.b_.end(), b);
        return s;
    }

    static VolSurface from_functions(const LatticeSpec& spec, const std::function<double(double, double)>& sigma,
                                     const std::function<double(double, double)>& b) {
        VolSurface s(spec.n);
        for (int k = 0; k <= spec.n; ++k)
            for (int j = -k; j <= k; ++j) {
                const double t = static_cast<double>(k) / spec.n, x = j * spec.dx();
                s.set(k, j, sigma(t, x), b(t, x));
            }
        return s;
    }

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] double sigma(int k, int j) const { return sigma_[checked(k, j)]; }
    [[nodiscard]] double b(int k, int j) const { return b_[checked(k, j)]; }
    void set(int k, int j, double sigma, double b) {
        const std::size_t i = checked(k, j);
        sigma_[i] = sigma;
        b_[i] = b;
    }

    /// Same sigma table, drift replaced by a constant.
    [[nodiscard]] VolSurface with_drift(double b) const {
        VolSurface out = *this;
        std::fill(out.b_.begin(), out.b_.end(), b);
        return out;
    }

    /// Closed coefficient rectangle check on levels 0..n-1 (the ones that drive transitions).
    void check_ranges(const LatticeSpec& spec) const {
        constexpr double tol = 1e-12;
        for (int k = 0; k < n_; ++k)
            for (int j = -k; j <= k; ++j) {
                const double sg = sigma(k, j), bb = b(k, j);
                if (!(sg >= spec.sigma_min - tol && sg <= spec.sigma_max + tol))
                    throw InvalidArgument("VolSurface: sigma outside [sigma_min, sigma_max]");
                if (!(bb >= spec.b0 - spec.s - tol && bb <= spec.b0 + spec.s + tol))
                    throw InvalidArgument("VolSurface: b outside [b0 - s, b0 + s]");
            }
    }

private:
    [[nodiscard]] std::size_t checked(int k, int j) const {
        if (k < 0 || k > n_ || j < -k || j > k) throw InvalidArgument("VolSurface: node out of range");
        return detail::node_index(k, j);
    }

    int n_ = 0;
    std::vector<double> sigma_;
    std::vector<double> b_;
};

/// Node marginals P(X_{k/n} = j alpha / sqrt(n)) and per-node transition triples.
struct TrinomialTree {
    LatticeSpec spec;
    std::vector<double> node_prob;            ///< levels 0..n
    std::vector<TransitionTriple> transitions;  ///< levels 0..n-1 (level n entries unused)

    [[nodiscard]] double prob(int k, int j) const { return node_prob[detail::node_index(k, j)]; }
    [[nodiscard]] const TransitionTriple& step(int k, int j) const { return transitions[detail::node_index(k, j)]; }
};

[[nodiscard]] inline TrinomialTree build_tree(const VolSurface& surface, const LatticeSpec& spec) {
    spec.validate();
    if (surface.n() != spec.n) throw InvalidArgument("build_tree: surface level differs from spec.n");
    surface.check_ranges(spec);
    const int n = spec.n;
    TrinomialTree tree{spec, std::vector<double>(detail::node_count(n), 0.0),
                       std::vector<TransitionTriple>(detail::node_count(n), TransitionTriple{0.0, 1.0, 0.0})};
    tree.node_prob[0] = 1.0;
    for (int k = 0; k < n; ++k) {
        for (int j = -k; j <= k; ++j) {
            const TransitionTriple t = kernel(surface.sigma(k, j), surface.b(k, j), spec);
            tree.transitions[detail::node_index(k, j)] = t;
            const double p = tree.prob(k, j);
            tree.node_prob[detail::node_index(k + 1, j + 1)] += p * t.m;
            tree.node_prob[detail::node_index(k + 1, j)] += p * t.r;
            tree.node_prob[detail::node_index(k + 1, j - 1)] += p * t.d;
        }
    }
    return tree;
}

/// E[payoff(X_{k/n})].
[[nodiscard]] inline double expectation(const TrinomialTree& tree, const std::function<double(double)>& payoff, int k) {
    if (k < 0 || k > tree.spec.n) throw InvalidArgument("expectation: level out of range");
    double e = 0.0;
    for (int j = -k; j <= k; ++j) {
        const double p = tree.prob(k, j);
        if (p != 0.0) e += p * payoff(j * tree.spec.dx());
    }
    return e;
}

/// Law of X_{k/n} as a measure on the lattice points {j alpha / sqrt(n) : |j| <= k}.
[[nodiscard]] inline FiniteMeasure level_marginal(const TrinomialTree& tree, int k, SpacePtr space = nullptr) {
    if (!space) {
        std::vector<double> xs;
        for (int j = -k; j <= k; ++j) xs.push_back(j * tree.spec.dx());
        space = MetricSpace::line(xs);
    }
    std::vector<double> w;
    for (int j = -k; j <= k; ++j) w.push_back(tree.prob(k, j));
    return FiniteMeasure::normalized(std::move(space), std::move(w));
}

namespace detail {
inline double kl3(const TransitionTriple& p, const TransitionTriple& q) {
    auto term = [](double a, double b) {
        if (a == 0.0) return 0.0;
        if (b == 0.0) return std::numeric_limits<double>::infinity();
        return a * std::log(a / b);
    };
    return std::max(0.0, term(p.m, q.m) + term(p.r, q.r) + term(p.d, q.d));
}
}  // namespace detail

/// H(kernel(sigma, b) | kernel(sigma0, b0)) for one step.
[[nodiscard]] inline double local_entropy(double sigma, double b, double sigma0, double b0, const LatticeSpec& spec) {
    return detail::kl3(kernel(sigma, b, spec), kernel(sigma0, b0, spec));
}

/// Sum over steps of E[h(i/n, X_{i/n})] under the (sigma, b) tree.
[[nodiscard]] inline double tree_entropy_chain(const VolSurface& surface, const VolSurface& surface0, const LatticeSpec& spec) {
    const TrinomialTree tree = build_tree(surface, spec);
    if (surface0.n() != spec.n) throw InvalidArgument("tree_entropy_chain: reference surface level differs");
    double h = 0.0;
    for (int k = 0; k < spec.n; ++k)
        for (int j = -k; j <= k; ++j) {
            const double p = tree.prob(k, j);
            if (p == 0.0) continue;
            h += p * detail::kl3(tree.step(k, j), kernel(surface0.sigma(k, j), surface0.b(k, j), spec));
        }
    return h;
}

/// Probability of every path in Omega_n (3^n entries, base-3 digits first step most
/// significant, digit 0 = down, 1 = flat, 2 = up).
using PathLaw = std::vector<double>;

inline constexpr int kMaxPathLevel = 10;

[[nodiscard]] inline PathLaw path_law(const VolSurface& surface, const LatticeSpec& spec) {
    if (spec.n > kMaxPathLevel) throw BudgetExceeded("path_law: n too large for path enumeration");
    const TrinomialTree tree = build_tree(surface, spec);
    PathLaw law{1.0};
    std::vector<int> pos{0};
    for (int k = 0; k < spec.n; ++k) {
        PathLaw next;
        std::vector<int> npos;
        next.reserve(law.size() * 3);
        npos.reserve(law.size() * 3);
        for (std::size_t i = 0; i < law.size(); ++i) {
            const TransitionTriple& t = tree.step(k, pos[i]);
            next.push_back(law[i] * t.d);
            npos.push_back(pos[i] - 1);
            next.push_back(law[i] * t.r);
            npos.push_back(pos[i]);
            next.push_back(law[i] * t.m);
            npos.push_back(pos[i] + 1);
        }
        law = std::move(next);
        pos = std::move(npos);
    }
    return law;
}

[[nodiscard]] inline double path_relative_entropy(const PathLaw& p, const PathLaw& q) {
    if (p.size() != q.size()) throw InvalidArgument("path_relative_entropy: size mismatch");
    double h = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
        h += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(h, 0.0);
}

/// Brute-force sum over all 3^n paths of Q(path) log prod(q-ratios).
[[nodiscard]] inline double tree_entropy_paths(const VolSurface& surface, const VolSurface& surface0, const LatticeSpec& spec) {
    if (spec.n > kMaxPathLevel) throw BudgetExceeded("tree_entropy_paths: n must be <= 10");
    const TrinomialTree t1 = build_tree(surface, spec);
    if (surface0.n() != spec.n) throw InvalidArgument("tree_entropy_paths: reference surface level differs");
    double h = 0.0;
    // Depth-first over paths carrying probability and accumulated log-ratio.
    auto walk = [&](auto&& self, int k, int j, double prob, double logr) -> void {
        if (k == spec.n) {
            h += prob * logr;
            return;
        }
        const TransitionTriple& a = t1.step(k, j);
        const TransitionTriple b = kernel(surface0.sigma(k, j), surface0.b(k, j), spec);
        const std::array<std::pair<double, double>, 3> moves{{{a.d, b.d}, {a.r, b.r}, {a.m, b.m}}};
        for (int e = 0; e < 3; ++e) {
            const auto [pa, pb] = moves[static_cast<std::size_t>(e)];
            if (pa == 0.0) continue;
            self(self, k + 1, j + e - 1, prob * pa, logr + std::log(pa / pb));
        }
    };
    walk(walk, 0, 0, 1.0, 0.0);
    return h;
}

/// Joint masses of (X_{k/n}, X_{(k+1)/n}) for k < n: node mass and the three step masses.
struct StepJoints {
    int n = 0;
    std::vector<double> mass;                ///< levels 0..n
    std::vector<TransitionTriple> joint;     ///< levels 0..n-1, masses (not conditionals)
};

[[nodiscard]] inline StepJoints step_joints(const PathLaw& law, int n) {
    std::size_t expect = 1;
    for (int k = 0; k < n; ++k) expect *= 3;
    if (law.size() != expect) throw InvalidArgument("step_joints: path law size differs from 3^n");
    StepJoints sj{n, std::vector<double>(detail::node_count(n), 0.0),
                  std::vector<TransitionTriple>(detail::node_count(n), TransitionTriple{0.0, 0.0, 0.0})};
    for (std::size_t idx = 0; idx < law.size(); ++idx) {
        const double p = law[idx];
        if (p == 0.0) continue;
        std::vector<int> digits(static_cast<std::size_t>(n));
        std::size_t c = idx;
        for (int k = n - 1; k >= 0; --k) {
            digits[static_cast<std::size_t>(k)] = static_cast<int>(c % 3);
            c /= 3;
        }
        int j = 0;
        for (int k = 0; k < n; ++k) {
            const std::size_t node = detail::node_index(k, j);
            sj.mass[node] += p;
            const int dgt = digits[static_cast<std::size_t>(k)];
            (dgt == 2 ? sj.joint[node].m : dgt == 1 ? sj.joint[node].r : sj.joint[node].d) += p;
            j += dgt - 1;
        }
        sj.mass[detail::node_index(n, j)] += p;
    }
    return sj;
}

[[nodiscard]] inline StepJoints step_joints(const TrinomialTree& tree) {
    const int n = tree.spec.n;
    StepJoints sj{n, tree.node_prob, std::vector<TransitionTriple>(detail::node_count(n), TransitionTriple{0.0, 0.0, 0.0})};
    for (int k = 0; k < n; ++k)
        for (int j = -k; j <= k; ++j) {
            const std::size_t i = detail::node_index(k, j);
            const TransitionTriple& t = tree.transitions[i];
            sj.joint[i] = {sj.mass[i] * t.m, sj.mass[i] * t.r, sj.mass[i] * t.d};
        }
    return sj;
}

/// Entropy decomposition for a law sharing the (sigma, b) one-step conditionals.
struct DecompositionCheck {
    double lhs;  ///< H(Q | reference tree)
    double rhs;  ///< H(Q | (sigma, b) tree) + H((sigma, b) tree | reference tree)
    double cross_term;
};

[[nodiscard]] inline DecompositionCheck entropy_decomposition_check(const PathLaw& Q, const VolSurface& surface,
                                                                    const VolSurface& surface0, const LatticeSpec& spec) {
    const TrinomialTree tree = build_tree(surface, spec);
    const StepJoints sj = step_joints(Q, spec.n);
    for (int k = 0; k < spec.n; ++k)
        for (int j = -k; j <= k; ++j) {
            const std::size_t i = detail::node_index(k, j);
            const double mass = sj.mass[i];
            if (mass <= 0.0) continue;
            const TransitionTriple& t = tree.transitions[i];
            const TransitionTriple& jt = sj.joint[i];
            if (std::abs(jt.m / mass - t.m) > 1e-9 || std::abs(jt.r / mass - t.r) > 1e-9 || std::abs(jt.d / mass - t.d) > 1e-9)
                throw InvalidArgument("entropy_decomposition_check: Q does not share the one-step conditionals");
        }
    const PathLaw P = path_law(surface, spec);
    const PathLaw P0 = path_law(surface0, spec);
    const double lhs = path_relative_entropy(Q, P0);
    const double mid = path_relative_entropy(P, P0);
    const double first = path_relative_entropy(Q, P);
    return {lhs, first + mid, mid};
}

/// The (sigma, b) path law with the step after level 2 re-weighted according to the level-1 parent.
/// Only the node at level 2, j = 0 is touched, with weights chosen so that its averaged
/// conditional is unchanged; the result is not Markov but keeps every one-step conditional.
[[nodiscard]] inline PathLaw perturbed_conditional_law(const VolSurface& surface, const LatticeSpec& spec, double eta) {
    if (spec.n < 3) throw InvalidArgument("perturbed_conditional_law: needs n >= 3");
    const TrinomialTree tree = build_tree(surface, spec);
    PathLaw law = path_law(surface, spec);
    const TransitionTriple& t2 = tree.step(2, 0);
    // Joint mass of (X_1 = a, X_2 = 0) for a = -1 (up move) and a = +1 (down move).
    const double w_lo = tree.prob(1, -1) * tree.step(1, -1).m;
    const double w_hi = tree.prob(1, 1) * tree.step(1, 1).d;
    // Direction v over (down, flat, up) with zero sum.
    const std::array<double, 3> v{t2.d, -t2.d - t2.m, t2.m};
    const std::array<double, 3> base{t2.d, t2.r, t2.m};
    double cap = std::numeric_limits<double>::infinity();
    for (int e = 0; e < 3; ++e) {
        const double sv = std::abs(v[static_cast<std::size_t>(e)]);
        if (sv > 0.0) cap = std::min(cap, 0.5 * base[static_cast<std::size_t>(e)] / sv * std::min(w_lo, w_hi));
    }
    const double step = std::clamp(eta, -cap, cap);
    std::size_t stride = 1;
    for (int k = 3; k < spec.n; ++k) stride *= 3;
    for (std::size_t idx = 0; idx < law.size(); ++idx) {
        const std::size_t head = idx / stride;  // first three digits
        const int d0 = static_cast<int>(head / 9), d1 = static_cast<int>((head / 3) % 3), d2 = static_cast<int>(head % 3);
        const int x1 = d0 - 1, x2 = x1 + d1 - 1;
        if (x2 != 0 || x1 == 0) continue;
        const double sa = x1 == -1 ? 1.0 / w_lo : -1.0 / w_hi;
        const auto e = static_cast<std::size_t>(d2);
        law[idx] *= (base[e] + step * sa * v[e]) / base[e];
    }
    return law;
}

/// Two-point relative entropy in disguise: the limit rate of the per-step entropy.
[[nodiscard]] inline double q_rate(double x, double y, double alpha) {
    const double a2 = alpha * alpha;
    if (!(x > 0.0 && x < a2) || !(y > 0.0 && y < a2)) throw InvalidArgument("q_rate: arguments must lie in (0, alpha^2)");
    return std::log(x / y) * x / a2 + std::log((a2 - x) / (a2 - y)) * (1.0 - x / a2);
}

struct DlGap {
    double max_gap;
    double n_times_gap;
};

/// max over reachable nodes of |h - q(sigma^2, sigma0^2)|.
[[nodiscard]] inline DlGap dl_gap(const VolSurface& surface, const VolSurface& surface0, const LatticeSpec& spec) {
    const TrinomialTree tree = build_tree(surface, spec);
    double gap = 0.0;
    for (int k = 0; k < spec.n; ++k)
        for (int j = -k; j <= k; ++j) {
            if (tree.prob(k, j) <= 0.0) continue;
            const double s = surface.sigma(k, j), s0 = surface0.sigma(k, j);
            const double h = detail::kl3(tree.step(k, j), kernel(s0, surface0.b(k, j), spec));
            gap = std::max(gap, std::abs(h - q_rate(s * s, s0 * s0, spec.alpha)));
        }
    return {gap, spec.n * gap};
}

/// E[(1/N) sum_i q(sigma^2, sigma0^2)(i/N, X_{i/N})] under the level-N (sigma, b0) tree.
[[nodiscard]] inline double I_rate(const VolSurface& sigma_surface, const VolSurface& sigma0_surface, const LatticeSpec& spec) {
    const TrinomialTree tree = build_tree(sigma_surface.with_drift(spec.b0), spec);
    double acc = 0.0;
    for (int k = 0; k < spec.n; ++k)
        for (int j = -k; j <= k; ++j) {
            const double p = tree.prob(k, j);
            if (p == 0.0) continue;
            const double s = sigma_surface.sigma(k, j), s0 = sigma0_surface.sigma(k, j);
            acc += p * q_rate(s * s, s0 * s0, spec.alpha);
        }
    return acc / spec.n;
}

/// Implied drift F and squared volatility G at every node of levels 0..n-1.
struct RecoveredCoefficients {
    int n = 0;
    std::vector<double> F;  ///< NaN where the node carries no mass
    std::vector<double> G;

    [[nodiscard]] double drift(int k, int j) const { return F[detail::node_index(k, j)]; }
    [[nodiscard]] double var(int k, int j) const { return G[detail::node_index(k, j)]; }
};

[[nodiscard]] inline RecoveredCoefficients recover_coefficients(const StepJoints& sj, const LatticeSpec& spec,
                                                                bool require_all = true) {
    if (sj.n != spec.n) throw InvalidArgument("recover_coefficients: level mismatch");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    RecoveredCoefficients out{spec.n, std::vector<double>(detail::node_count(spec.n), nan),
                              std::vector<double>(detail::node_count(spec.n), nan)};
    const double rn = std::sqrt(static_cast<double>(spec.n));
    for (int k = 0; k < spec.n; ++k)
        for (int j = -k; j <= k; ++j) {
            const std::size_t i = detail::node_index(k, j);
            const double mass = sj.mass[i];
            if (!(mass > 0.0)) {
                if (require_all) throw NumericError("recover_coefficients: zero mass at a lattice node");
                continue;
            }
            out.F[i] = spec.alpha * rn * (sj.joint[i].m - sj.joint[i].d) / mass;
            out.G[i] = spec.alpha * spec.alpha * (sj.joint[i].m + sj.joint[i].d) / mass;
        }
    return out;
}

/// Inputs of the lattice membership test.
struct MembershipParams {
    double epsilon = 0.0;    ///< drift band half-width around b0
    double mass_floor = 0.0; ///< every node must carry mass > mass_floor
    /// 2 Delta(dist) for the square-root modulus; empty skips the modulus clause.
    std::function<double(double)> modulus_bound;
    double relax = 0.0;      ///< relative widening of every clause (0 = exact test)
};

struct MembershipReport {
    bool member;
    bool mass_ok;
    bool drift_ok;
    bool vol_ok;
    bool modulus_ok;
};

[[nodiscard]] inline MembershipReport lattice_membership(const StepJoints& sj, const LatticeSpec& spec,
                                                         const MembershipParams& mp) {
    MembershipReport rep{false, true, true, true, true};
    const double floor = mp.mass_floor * (1.0 - mp.relax);
    for (int k = 0; k <= spec.n; ++k)
        for (int j = -k; j <= k; ++j)
            if (!(sj.mass[detail::node_index(k, j)] > floor)) rep.mass_ok = false;
    if (!rep.mass_ok) return rep;
    const RecoveredCoefficients rc = recover_coefficients(sj, spec);
    const double half = mp.epsilon * (1.0 + mp.relax);
    const double glo = spec.sigma_min * spec.sigma_min * (1.0 - mp.relax);
    const double ghi = spec.sigma_max * spec.sigma_max * (1.0 + mp.relax);
    for (int k = 0; k < spec.n; ++k)
        for (int j = -k; j <= k; ++j) {
            const double f = rc.drift(k, j), g = rc.var(k, j);
            if (!(f > spec.b0 - half && f < spec.b0 + half)) rep.drift_ok = false;
            if (!(g > glo && g < ghi)) rep.vol_ok = false;
        }
    if (mp.modulus_bound) {
        const double rn = std::sqrt(static_cast<double>(spec.n));
        for (int k = 0; k < spec.n && rep.modulus_ok; ++k)
            for (int j = -k; j <= k && rep.modulus_ok; ++j)
                for (int p = 0; p < spec.n && rep.modulus_ok; ++p)
                    for (int q = -p; q <= p; ++q) {
                        if (p == k && q == j) continue;
                        const double dist = std::abs(k - p) / static_cast<double>(spec.n) + spec.alpha * std::abs(j - q) / rn;
                        const double lhs = std::abs(std::sqrt(rc.var(k, j)) - std::sqrt(rc.var(p, q)));
                        if (!(lhs < mp.modulus_bound(dist) * (1.0 + mp.relax))) {
                            rep.modulus_ok = false;
                            break;
                        }
                    }
    }
    rep.member = rep.mass_ok && rep.drift_ok && rep.vol_ok && rep.modulus_ok;
    return rep;
}

// ---------------------------------------------------------------------------
// Calibration

enum class FamilyKind { constant, piecewise_time };

/// theta -> sigma_theta; piecewise_time splits [0, 1) into `pieces` equal time blocks.
struct CalibFamily {
    FamilyKind kind = FamilyKind::constant;
    int pieces = 1;
    double lo = 0.5;
    double hi = 1.5;

    [[nodiscard]] int dim() const { return kind == FamilyKind::constant ? 1 : pieces; }
};

/// |E[payoff(X_time)] - target| <= epsilon.
struct MomentConstraint {
    double time = 1.0;
    std::function<double(double)> payoff;
    double target = 1.0;
};

struct CalibProblem {
    VolSurface sigma0;  ///< reference surface (its b entries are the reference drift)
    std::vector<MomentConstraint> constraints;
    CalibFamily family;
};

[[nodiscard]] inline VolSurface family_surface(const CalibFamily& fam, const std::vector<double>& theta, const LatticeSpec& spec) {
    if (static_cast<int>(theta.size()) != fam.dim()) throw InvalidArgument("family_surface: wrong parameter count");
    VolSurface s(spec.n);
    for (int k = 0; k <= spec.n; ++k) {
        const int piece = fam.kind == FamilyKind::constant ? 0 : std::min(fam.pieces - 1, k * fam.pieces / spec.n);
        for (int j = -k; j <= k; ++j) s.set(k, j, theta[static_cast<std::size_t>(piece)], spec.b0);
    }
    return s;
}

struct CalibEvaluation {
    double entropy;
    std::vector<double> moments;
    double violation;  ///< sum over constraints of max(0, |E - target| - epsilon - 1e-12 max(1, |target|))
};

[[nodiscard]] inline CalibEvaluation evaluate_theta(const CalibProblem& pb, const std::vector<double>& theta,
                                                    const LatticeSpec& spec, double epsilon) {
    const VolSurface s = family_surface(pb.family, theta, spec);
    const TrinomialTree tree = build_tree(s, spec);
    CalibEvaluation ev{tree_entropy_chain(s, pb.sigma0, spec), {}, 0.0};
    for (const auto& c : pb.constraints) {
        const int level = static_cast<int>(std::lround(c.time * spec.n));
        const double e = expectation(tree, c.payoff, level);
        ev.moments.push_back(e);
        ev.violation += std::max(0.0, std::abs(e - c.target) - epsilon - 1e-12 * std::max(1.0, std::abs(c.target)));
    }
    return ev;
}

struct CalibAudit {
    std::size_t points;
    std::size_t feasible;
    std::size_t improvements;  ///< feasible audit points with entropy below the optimum (beyond 1e-9)
    double best_entropy;       ///< smallest feasible audited entropy
};

struct CalibResult {
    std::vector<double> theta_star;
    VolSurface sigma_star;
    double entropy;
    std::vector<double> moments;
    double slack;  ///< epsilon minus the worst constraint deviation (>= 0 when feasible)
    bool feasible;
};

struct CalibOptions {
    int grid_points = 201;
    double theta_tol = 1e-6;
    int max_sweeps = 50;
    std::size_t workers = 1;
};

namespace detail {

inline double merit(const CalibEvaluation& ev, int n) { return ev.entropy + 1e6 * (n + 1) * ev.violation; }

// Minimizes the merit along coordinate `c` of theta, others fixed.
inline void line_search(const CalibProblem& pb, std::vector<double>& theta, std::size_t c, const LatticeSpec& spec,
                        double epsilon, const CalibOptions& opt) {
    const auto& fam = pb.family;
    const int g = std::max(opt.grid_points, 3);
    std::vector<double> xs(static_cast<std::size_t>(g)), vals(static_cast<std::size_t>(g));
    for (int i = 0; i < g; ++i) xs[static_cast<std::size_t>(i)] = fam.lo + (fam.hi - fam.lo) * i / (g - 1);
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(opt.workers, xs.size()));
    run_workers(workers, [&](std::size_t w) {
        const Slice sl = worker_slice(xs.size(), workers, w);
        std::vector<double> th = theta;
        for (std::size_t i = sl.begin; i < sl.end; ++i) {
            th[c] = xs[i];
            vals[i] = merit(evaluate_theta(pb, th, spec, epsilon), spec.n);
        }
    });
    const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    double a = xs[best == 0 ? 0 : best - 1], b = xs[std::min(best + 1, xs.size() - 1)];
    auto f = [&](double x) {
        std::vector<double> th = theta;
        th[c] = x;
        return merit(evaluate_theta(pb, th, spec, epsilon), spec.n);
    };
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > opt.theta_tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    double cand = f1 <= f2 ? x1 : x2;
    double fc = std::min(f1, f2);
    if (vals[best] < fc) {
        cand = xs[best];
        fc = vals[best];
    }
    theta[c] = cand;
}

}  // namespace detail

/// Minimum-entropy member of the family under the moment bands (penalty, then a
/// feasibility repair by bisection towards the nearest feasible grid point).
[[nodiscard]] inline CalibResult calibrate(const CalibProblem& pb, const LatticeSpec& spec, double epsilon,
                                           const CalibOptions& opt = {}) {
    spec.validate();
    if (pb.sigma0.n() != spec.n) throw InvalidArgument("calibrate: reference surface level differs from spec.n");
    if (pb.constraints.empty()) throw InvalidArgument("calibrate: no moment constraint");
    if (!(epsilon >= 0.0)) throw InvalidArgument("calibrate: epsilon must be >= 0");
    const auto& fam = pb.family;
    if (fam.dim() < 1) throw InvalidArgument("calibrate: family needs at least one parameter");
    if (!(fam.lo >= spec.sigma_min && fam.hi <= spec.sigma_max && fam.lo < fam.hi))
        throw InvalidArgument("calibrate: family range must lie inside [sigma_min, sigma_max]");

    const auto d = static_cast<std::size_t>(fam.dim());
    std::vector<double> theta(d, 0.5 * (fam.lo + fam.hi));
    for (int sweep = 0; sweep < (d == 1 ? 1 : opt.max_sweeps); ++sweep) {
        const std::vector<double> before = theta;
        for (std::size_t c = 0; c < d; ++c) detail::line_search(pb, theta, c, spec, epsilon, opt);
        double change = 0.0;
        for (std::size_t c = 0; c < d; ++c) change = std::max(change, std::abs(theta[c] - before[c]));
        if (change <= opt.theta_tol) break;
    }

    CalibEvaluation ev = evaluate_theta(pb, theta, spec, epsilon);
    if (ev.violation > 0.0) {
        // Nearest feasible point along the segment to the best feasible grid point on the diagonal.
        std::optional<std::vector<double>> anchor;
        double best_h = std::numeric_limits<double>::infinity();
        const int g = std::max(opt.grid_points, 3);
        for (int i = 0; i < g; ++i) {
            std::vector<double> th(d, fam.lo + (fam.hi - fam.lo) * i / (g - 1));
            const CalibEvaluation e = evaluate_theta(pb, th, spec, epsilon);
            if (e.violation == 0.0 && e.entropy < best_h) {
                best_h = e.entropy;
                anchor = th;
            }
        }
        if (!anchor) {
            // Narrow bands can miss every grid point; bracket a root of the first constraint instead.
            const auto& c0 = pb.constraints.front();
            auto dev = [&](double x) {
                return evaluate_theta(pb, std::vector<double>(d, x), spec, epsilon).moments.front() - c0.target;
            };
            double xa = fam.lo, fa = dev(xa);
            for (int i = 1; i < g && !anchor; ++i) {
                const double xb = fam.lo + (fam.hi - fam.lo) * i / (g - 1), fb = dev(xb);
                if ((fa < 0.0) != (fb < 0.0)) {
                    double a = xa, b = xb, sa = fa;
                    for (int it = 0; it < 200 && b - a > 0.0; ++it) {
                        const double mid = 0.5 * (a + b), sm = dev(mid);
                        if ((sm < 0.0) == (sa < 0.0)) {
                            a = mid;
                            sa = sm;
                        } else {
                            b = mid;
                        }
                        if (std::nextafter(a, b) == b) break;
                    }
                    for (double x : {a, b}) {
                        const std::vector<double> th(d, x);
                        const CalibEvaluation e = evaluate_theta(pb, th, spec, epsilon);
                        if (e.violation == 0.0 && (!anchor || e.entropy < best_h)) {
                            best_h = e.entropy;
                            anchor = th;
                        }
                    }
                }
                xa = xb;
                fa = fb;
            }
        }
        if (!anchor) throw InfeasibleError("calibrate: no family member satisfies the moment band", {});
        double lo = 0.0, hi = 1.0;  // fraction of the way from theta to anchor
        auto at = [&](double u) {
            std::vector<double> th(d);
            for (std::size_t c = 0; c < d; ++c) th[c] = theta[c] + u * ((*anchor)[c] - theta[c]);
            return th;
        };
        for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
            const double mid = 0.5 * (lo + hi);
            (evaluate_theta(pb, at(mid), spec, epsilon).violation == 0.0 ? hi : lo) = mid;
        }
        theta = at(hi);
        ev = evaluate_theta(pb, theta, spec, epsilon);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < pb.constraints.size(); ++i)
        worst = std::max(worst, std::abs(ev.moments[i] - pb.constraints[i].target));
    return {theta, family_surface(fam, theta, spec), ev.entropy, ev.moments, epsilon - worst, ev.violation == 0.0};
}

/// Post-hoc audit: evaluates `points` parameters (an even grid for one parameter,
/// seeded uniform draws otherwise) and counts feasible ones that beat the optimum.
[[nodiscard]] inline CalibAudit calibration_audit(const CalibProblem& pb, const LatticeSpec& spec, double epsilon,
                                                  const CalibResult& res, std::size_t points = 200, std::uint64_t seed = 0) {
    const auto& fam = pb.family;
    const auto d = static_cast<std::size_t>(fam.dim());
    auto eng = worker_engine(seed, 0);
    CalibAudit audit{points, 0, 0, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < points; ++i) {
        std::vector<double> th(d);
        if (d == 1) th[0] = fam.lo + (fam.hi - fam.lo) * static_cast<double>(i) / static_cast<double>(points - 1);
        else
            for (auto& x : th) x = fam.lo + (fam.hi - fam.lo) * uniform01(eng);
        const CalibEvaluation e = evaluate_theta(pb, th, spec, epsilon);
        if (e.violation > 0.0) continue;
        ++audit.feasible;
        audit.best_entropy = std::min(audit.best_entropy, e.entropy);
        if (e.entropy < res.entropy - 1e-9) ++audit.improvements;
    }
    return audit;
}

/// min(|E[F(X_1)] - 1| + 1/n, s) under the calibrated tree.
[[nodiscard]] inline double epsilon0(const VolSurface& sigma_star, const LatticeSpec& spec,
                                     const std::function<double(double)>& payoff) {
    const TrinomialTree tree = build_tree(sigma_star.with_drift(spec.b0), spec);
    return std::min(std::abs(expectation(tree, payoff, spec.n) - 1.0) + 1.0 / spec.n, spec.s);
}

// ---------------------------------------------------------------------------
// Path-space Gibbs sampler on the lattice

struct TreeMcReport {
    std::uint64_t trials;
    std::uint64_t accepted;
    double acceptance_rate;
    double upper_bound;        ///< 3 / trials when nothing was accepted
    double fm_time1;           ///< d_FM(time-1 marginal of R, time-1 marginal of the target tree); NaN if none accepted
    double tv_time1;
    PathLaw R;                 ///< averaged accepted empirical path measures
};

/// Samples m paths from the reference tree per trial and keeps the empirical path
/// measure when it passes the relaxed lattice membership and the terminal moment band
/// |mean payoff(X_1) - 1| < epsilon.
[[nodiscard]] inline TreeMcReport gibbs_tree_mc(const LatticeSpec& spec, const VolSurface& sigma0,
                                                const std::function<double(double)>& payoff, double epsilon,
                                                std::size_t m, std::uint64_t trials, std::uint64_t seed,
                                                const MembershipParams& membership, const VolSurface& target_surface,
                                                std::size_t workers = 1) {
    if (spec.n > kMaxPathLevel) throw BudgetExceeded("gibbs_tree_mc: n too large for path enumeration");
    if (m < 1 || trials < 1) throw InvalidArgument("gibbs_tree_mc: m and trials must be >= 1");
    if (workers == 0) workers = default_workers();
    workers = std::min<std::size_t>(workers, trials);
    const PathLaw base = path_law(sigma0, spec);
    const std::vector<double> cdf = cumulative(base);
    std::vector<double> terminal(base.size());
    for (std::size_t idx = 0; idx < base.size(); ++idx) {
        int j = 0;
        std::size_t c = idx;
        for (int k = 0; k < spec.n; ++k) {
            j += static_cast<int>(c % 3) - 1;
            c /= 3;
        }
        terminal[idx] = payoff(j * spec.dx());
    }

    std::vector<std::uint64_t> acc(workers, 0);
    std::vector<std::vector<std::uint64_t>> sums(workers, std::vector<std::uint64_t>(base.size(), 0));
    run_workers(workers, [&](std::size_t w) {
        auto eng = worker_engine(seed, w);
        const Slice sl = worker_slice(trials, workers, w);
        std::vector<std::uint64_t> counts(base.size());
        PathLaw L(base.size());
        for (std::size_t t = sl.begin; t < sl.end; ++t) {
            std::fill(counts.begin(), counts.end(), 0);
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t idx = draw_index(cdf, eng);
                ++counts[idx];
                mean += terminal[idx];
            }
            mean /= static_cast<double>(m);
            if (!(std::abs(mean - 1.0) < epsilon)) continue;
            for (std::size_t i = 0; i < L.size(); ++i) L[i] = static_cast<double>(counts[i]) / static_cast<double>(m);
            if (!lattice_membership(step_joints(L, spec.n), spec, membership).member) continue;
            ++acc[w];
            for (std::size_t i = 0; i < counts.size(); ++i) sums[w][i] += counts[i];
        }
    });

    TreeMcReport rep{trials, 0, 0.0, 0.0, std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::quiet_NaN(), PathLaw(base.size(), 0.0)};
    std::vector<std::uint64_t> total(base.size(), 0);
    for (std::size_t w = 0; w < workers; ++w) {
        rep.accepted += acc[w];
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += sums[w][i];
    }
    rep.acceptance_rate = static_cast<double>(rep.accepted) / static_cast<double>(trials);
    if (rep.accepted == 0) {
        rep.upper_bound = 3.0 / static_cast<double>(trials);
        return rep;
    }
    const double denom = static_cast<double>(rep.accepted) * static_cast<double>(m);
    for (std::size_t i = 0; i < total.size(); ++i) rep.R[i] = static_cast<double>(total[i]) / denom;

    const StepJoints sj = step_joints(rep.R, spec.n);
    const TrinomialTree target = build_tree(target_surface.with_drift(spec.b0), spec);
    const FiniteMeasure ref = level_marginal(target, spec.n);
    std::vector<double> w;
    for (int j = -spec.n; j <= spec.n; ++j) w.push_back(sj.mass[detail::node_index(spec.n, j)]);
    const FiniteMeasure got = FiniteMeasure::normalized(ref.space(), std::move(w));
    rep.fm_time1 = fm_distance(got, ref);
    rep.tv_time1 = tv_distance(got, ref);
    return rep;
}

struct WeakConvergenceRow {
    int n;
    double mean;
    double mean_gap;      ///< |E X_1 - b|
    double variance;
    double variance_gap;  ///< |Var X_1 - sigma^2|
    double max_increment; ///< alpha / sqrt(n)
};

/// Time-1 mean and variance of constant-coefficient trees against the diffusion values b and sigma^2.
[[nodiscard]] inline std::vector<WeakConvergenceRow> trinomial_weak_convergence_probe(double sigma, double b, const LatticeSpec& base,
                                                                                    const std::vector<int>& n_list) {
    std::vector<WeakConvergenceRow> rows;
    for (int n : n_list) {
        LatticeSpec spec = base;
        spec.n = n;
        const TrinomialTree tree = build_tree(VolSurface::constant(n, sigma, b), spec);
        const double mean = expectation(tree, [](double x) { return x; }, n);
        const double second = expectation(tree, [](double x) { return x * x; }, n);
        const double var = second - mean * mean;
        rows.push_back({n, mean, std::abs(mean - b), var, std::abs(var - sigma * sigma), spec.dx()});
    }
    return rows;
}

}  // namespace thinsets
