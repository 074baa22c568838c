// Acceptance checks. `acceptance <id>` runs one criterion, no argument runs all.
// Each prints one PASS/FAIL line; the exit status is nonzero if any failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "thinsets/thinsets.hpp"

using namespace thinsets;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

class Stopwatch {
public:
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

FiniteMeasure fair_coin() { return FiniteMeasure::uniform(MetricSpace::line(std::vector<double>{0.0, 1.0})); }

MomentProblem bernoulli_problem() {
    Eigen::MatrixXd F(2, 1);
    F << 0.0, 1.0;
    return {fair_coin(), F, PointTarget{Eigen::VectorXd::Constant(1, 0.7)}};
}

LatticeSpec lattice(int n) {
    LatticeSpec s;
    s.n = n;
    s.alpha = 2.0;
    s.sigma_min = 0.8;
    s.sigma_max = 1.5;
    s.b0 = 0.1;
    s.s = 0.05;
    return s;
}

Outcome criterion1() {
    const Stopwatch sw;
    const auto pb = bernoulli_problem();
    const auto sol = solve_dual(pb);
    const auto bf = brute_force_projection(pb, 1e-3);
    const double t = sw.seconds();
    const double dl = std::abs(sol.lambda_star(0) - std::log(7.0 / 3.0));
    const double dh = std::abs(sol.entropy - 0.082282);
    const double dbf = std::abs(bf.entropy - sol.entropy);
    return {dl <= 1e-8 && dh <= 1e-6 && dbf <= 1e-3 && t < 1.0,
            fmt("lambda*=%.10f |d|=%.2e  H=%.8f |d|=%.2e  brute force gap %.2e  %.3fs", sol.lambda_star(0), dl, sol.entropy, dh,
                dbf, t)};
}

Outcome criterion2() {
    const Stopwatch sw;
    const auto pb = bernoulli_problem();
    const auto sol = solve_dual(pb);
    const auto rows = conditional_tv_curve(pb, sol, ScheduleParams{ScheduleKind::sqrt_n, 0.0, 1.0, 1.1}, {8, 32}, 1);
    const double t = sw.seconds();
    const double tv8 = rows[0].tv_k, tv32 = rows[1].tv_k;
    return {tv32 < tv8 && tv32 < 0.1 && t < 1.0, fmt("tv(n=8)=%.5f  tv(n=32)=%.5f  %.3fs", tv8, tv32, t)};
}

Outcome criterion3() {
    const Stopwatch sw;
    const auto coin = fair_coin();
    Eigen::MatrixXd F(2, 1);
    F << 0.0, 1.0;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.7);
    int ok = 0, total = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (int n : {8, 16, 32})
        for (std::size_t k : {1u, 2u})
            for (double eps : {0.05, 0.15}) {
                const MomentProblem box{coin, F, BoxTarget{x0.array() - eps, x0.array() + eps}};
                const auto s = solve_dual(box);
                const auto c = csiszar_bound_check(coin, n, MomentBand{F, x0, eps, BandNorm::sup}, k, s.alpha_star, s.entropy);
                ++total;
                if (c.lhs <= c.rhs + 1e-9) ++ok;
                worst = std::max(worst, c.lhs - c.rhs);
            }
    const double t = sw.seconds();
    return {ok == 12 && total == 12 && t < 5.0, fmt("%d/%d instances hold, max(lhs-rhs)=%.3e  %.3fs", ok, total, worst, t)};
}

Outcome criterion4() {
    const Stopwatch sw;
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> size(1, 8);
    std::uniform_real_distribution<double> len(0.05, 2.0), u(0.0, 1.0);
    auto phi = [](double x) { return 2.0 * x * x / (2.0 + x); };
    int violations = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t m = size(rng);
        std::vector<double> d(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) d[i * m + j] = d[j * m + i] = len(rng);
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) d[i * m + j] = std::min(d[i * m + j], d[i * m + k] + d[k * m + j]);
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < m; ++i) labels.push_back("p" + std::to_string(i));
        const auto sp = std::make_shared<const MetricSpace>(labels, d);
        auto draw = [&] {
            std::vector<double> w(m);
            for (auto& x : w) x = u(rng) < 0.2 ? 0.0 : u(rng) + 1e-3;
            if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) w[0] = 1.0;
            return FiniteMeasure::normalized(sp, w);
        };
        const auto a = draw(), b = draw();
        const double tv = tv_distance(a, b), fm = fm_distance(a, b), dp = prohorov_distance(a, b).distance;
        const double kl = relative_entropy(a, b);
        const double slack = 1e-9;
        violations += fm > tv + slack;
        violations += dp > tv / 2.0 + slack;
        violations += phi(dp) > fm + slack;
        violations += fm > 2.0 * dp + slack;
        violations += std::isfinite(kl) && tv > std::sqrt(2.0 * kl) + slack;
    }
    const double t = sw.seconds();
    return {violations == 0 && t < 30.0, fmt("1000 pairs, %d violations  %.3fs", violations, t)};
}

Outcome criterion5() {
    const Stopwatch sw;
    std::vector<double> grid(50);
    for (std::size_t i = 0; i < 50; ++i) grid[i] = -3.0 + 6.0 * static_cast<double>(i) / 49.0;
    const auto sp = MetricSpace::line(grid);
    auto bump = [&](double mean, double var) {
        std::vector<double> w(50);
        for (std::size_t i = 0; i < 50; ++i) w[i] = std::exp(-(grid[i] - mean) * (grid[i] - mean) / (2.0 * var));
        return FiniteMeasure::normalized(sp, w);
    };
    BridgeProblem pb = gaussian_reference(grid, 1.0, FiniteMeasure::uniform(sp));
    pb.nu0 = bump(-1.0, 0.5);
    pb.nu1 = bump(1.0, 0.5);
    const auto pot = sinkhorn(pb, 1e-12, 500);
    const auto h = bridge_entropy(pb, pot);
    const auto py = bridge_pythagoras(pb, pot, 100, 5, 1e-8);
    const double t = sw.seconds();
    const double dh = std::abs(h.direct - h.potentials);
    const bool pass = pot.residual < 1e-10 && pot.iterations <= 500 && dh <= 10.0 * pot.residual && py.violations == 0 && t < 10.0;
    return {pass, fmt("residual %.2e after %d iterations  |H_direct-H_pot|=%.2e  Pythagoras %zu/%zu ok (worst margin %.2e)  %.3fs",
                      pot.residual, pot.iterations, dh, py.competitors - py.violations, py.competitors, py.worst_margin, t)};
}

Outcome criterion6() {
    const Stopwatch sw;
    std::mt19937_64 eng(6);
    double worst = 0.0, worst_identical = 0.0;
    for (int i = 0; i < 50; ++i) {
        const int n = 2 + i % 7;
        const auto spec = lattice(n);
        std::uniform_real_distribution<double> sg(spec.sigma_min, spec.sigma_max), bb(spec.b0 - spec.s, spec.b0 + spec.s);
        auto surface = [&] {
            VolSurface s(n);
            for (int k = 0; k <= n; ++k)
                for (int j = -k; j <= k; ++j) s.set(k, j, sg(eng), bb(eng));
            return s;
        };
        const auto a = surface(), b = surface();
        worst = std::max(worst, std::abs(tree_entropy_chain(a, b, spec) - tree_entropy_paths(a, b, spec)));
        worst_identical = std::max({worst_identical, std::abs(tree_entropy_chain(a, a, spec)), std::abs(tree_entropy_paths(a, a, spec))});
    }
    const double t = sw.seconds();
    return {worst <= 1e-10 && worst_identical == 0.0 && t < 20.0,
            fmt("max |chain-paths| over 50 surfaces = %.2e, identical surfaces give %.1e  %.3fs", worst, worst_identical, t)};
}

Outcome criterion7() {
    const Stopwatch sw;
    const double q = q_rate(1.0, 1.44, 2.0);
    std::vector<double> gaps, ngaps;
    std::string rows;
    for (int n : {32, 64, 128, 256}) {
        const auto spec = lattice(n);
        const auto s = VolSurface::constant(n, 1.0, 0.1), s0 = VolSurface::constant(n, 1.2, 0.1);
        const double gap = std::abs(tree_entropy_chain(s, s0, spec) / n - q);
        gaps.push_back(gap);
        ngaps.push_back(dl_gap(s, s0, spec).n_times_gap);
        rows += fmt(" n=%d:%.3e", n, gap);
    }
    const double t = sw.seconds();
    bool decreasing = true;
    for (std::size_t i = 1; i < gaps.size(); ++i) decreasing = decreasing && gaps[i] < gaps[i - 1];
    const double lo = *std::min_element(ngaps.begin(), ngaps.end()), hi = *std::max_element(ngaps.begin(), ngaps.end());
    return {gaps.back() <= 0.01 && decreasing && hi <= 5.0 * lo && t < 60.0,
            fmt("q=%.6f |H/n-q|", q) + rows + fmt("  n*dl_gap in [%.4e, %.4e]  %.3fs", lo, hi, t)};
}

Outcome criterion8() {
    const Stopwatch sw;
    const int n = 64;
    const auto spec = lattice(n);
    const auto fwd = build_tree(VolSurface::constant(n, 1.1, spec.b0), spec);
    const double norm = expectation(fwd, [](double x) { return x * x; }, n);
    CalibProblem pb{VolSurface::constant(n, 1.3, spec.b0), {{1.0, [norm](double x) { return x * x / norm; }, 1.0}},
                    {FamilyKind::constant, 1, spec.sigma_min, spec.sigma_max}};
    const double eps = 0.01;
    const auto res = calibrate(pb, spec, eps);
    const auto audit = calibration_audit(pb, spec, eps, res, 200);
    const double t = sw.seconds();
    const double err = std::abs(res.theta_star[0] - 1.1);
    return {res.feasible && err <= 0.05 && audit.improvements == 0 && t < 60.0,
            fmt("theta*=%.6f |theta*-1.1|=%.4f  audit: %zu feasible of %zu, %zu improvements  %.3fs", res.theta_star[0], err,
                audit.feasible, audit.points, audit.improvements, t)};
}

Outcome criterion9() {
    const Stopwatch sw;
    const auto pb = bernoulli_problem();
    const auto sol = solve_dual(pb);
    auto rate = [&](int n) {
        const double eps = enlargement_berry_esseen(sol, n);
        return exact_event_log_probability(pb.alpha, n, MomentBand{pb.F, Eigen::VectorXd::Constant(1, 0.7), eps, BandNorm::sup}) / n;
    };
    const double r64 = rate(64), r512 = rate(512);
    const double t = sw.seconds();
    return {std::abs(r512) < std::abs(r64) && t < 10.0,
            fmt("(1/n)log P: n=64 %.4e, n=512 %.4e; (1/n)log P + H: %.4f -> %.4f  %.3fs", r64, r512, r64 + sol.entropy,
                r512 + sol.entropy, t)};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome criterion10() {
    const Stopwatch sw;
    const fs::path root = fs::temp_directory_path() / "thinsets_acceptance_10";
    int configs = 0, tables = 0, mismatches = 0;
    std::string bad;
    for (const auto& e : fs::directory_iterator(THINSETS_CONFIGS)) {
        if (e.path().extension() != ".json") continue;
        ++configs;
        const auto doc = io::json::parse(slurp(e.path()));
        const fs::path a = root / e.path().stem() / "a", b = root / e.path().stem() / "b";
        fs::remove_all(a);
        fs::remove_all(b);
        const auto ma = run(doc, 2, a), mb = run(doc, 2, b);
        // The last file is the manifest, which records wall time.
        for (std::size_t i = 0; i + 1 < ma.files.size(); ++i) {
            ++tables;
            if (i >= mb.files.size() || slurp(ma.files[i]) != slurp(mb.files[i])) {
                ++mismatches;
                bad += " " + ma.files[i].filename().string();
            }
        }
    }
    const double t = sw.seconds();
    return {configs > 0 && mismatches == 0,
            fmt("%d configs, %d tables compared, %d differ%s  %.3fs", configs, tables, mismatches, bad.c_str(), t)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Outcome()>> checks{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9, criterion10};
    std::vector<int> ids;
    if (argc > 1) {
        const int id = std::atoi(argv[1]);
        if (id < 1 || id > static_cast<int>(checks.size())) {
            std::fprintf(stderr, "usage: acceptance [1-%zu]\n", checks.size());
            return 2;
        }
        ids.push_back(id);
    } else {
        for (int i = 1; i <= static_cast<int>(checks.size()); ++i) ids.push_back(i);
    }
    int failed = 0;
    for (int id : ids) {
        Outcome o{false, ""};
        try {
            o = checks[static_cast<std::size_t>(id - 1)]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
