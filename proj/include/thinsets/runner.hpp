#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "thinsets/bridge.hpp"
#include "thinsets/error.hpp"
#include "thinsets/gibbs.hpp"
#include "thinsets/io.hpp"
#include "thinsets/iproj.hpp"
#include "thinsets/measures.hpp"
#include "thinsets/parallel.hpp"
#include "thinsets/tritree.hpp"

namespace thinsets {

inline constexpr const char* kVersion = "0.1.0";

/// Bad or missing configuration values (exit status 2 in the CLI).
class ConfigError : public Error {
public:
    using Error::Error;
};

namespace runner {

using io::json;

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"iproj", "gibbs", "bridge", "calibrate", "gamma", "covering", "schedules"};
    return names;
}

/// Typed access to a params document that records problems instead of throwing,
/// so validation can report every diagnostic at once.
class Reader {
public:
    Reader(const json& doc, std::string prefix, std::vector<std::string>& diags)
        : doc_(doc), prefix_(std::move(prefix)), diags_(diags) {}

    [[nodiscard]] bool has(const std::string& key) const { return doc_.is_object() && doc_.contains(key); }

    [[nodiscard]] Reader child(const std::string& key) const {
        static const json empty = json::object();
        if (!has(key)) return {empty, path(key), diags_};
        return {doc_.at(key), path(key), diags_};
    }

    [[nodiscard]] const json& raw() const { return doc_; }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            fail(path(key) + ": missing");
            return std::nan("");
        }
        try {
            return io::number_of(doc_.at(key));
        } catch (const std::exception&) {
            fail(path(key) + ": expected a number");
            return std::nan("");
        }
    }

    int integer(const std::string& key, std::optional<int> fallback = std::nullopt) const {
        const double x = number(key, fallback ? std::optional<double>(*fallback) : std::nullopt);
        if (std::isnan(x)) return fallback.value_or(0);
        if (x != std::floor(x) || std::abs(x) > 2e9) {
            fail(path(key) + ": expected an integer");
            return fallback.value_or(0);
        }
        return static_cast<int>(x);
    }

    std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            fail(path(key) + ": missing");
            return {};
        }
        if (!doc_.at(key).is_string()) {
            fail(path(key) + ": expected a string");
            return fallback.value_or("");
        }
        return doc_.at(key).get<std::string>();
    }

    bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        if (!doc_.at(key).is_boolean()) {
            fail(path(key) + ": expected true or false");
            return fallback;
        }
        return doc_.at(key).get<bool>();
    }

    std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            fail(path(key) + ": missing");
            return {};
        }
        const json& a = doc_.at(key);
        if (!a.is_array()) {
            fail(path(key) + ": expected an array");
            return {};
        }
        std::vector<double> out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            try {
                out.push_back(io::number_of(a[i]));
            } catch (const std::exception&) {
                fail(path(key) + "[" + std::to_string(i) + "]: expected a number");
            }
        }
        return out;
    }

    std::vector<int> integers(const std::string& key, std::optional<std::vector<int>> fallback = std::nullopt) const {
        std::optional<std::vector<double>> fb;
        if (fallback) fb = std::vector<double>(fallback->begin(), fallback->end());
        std::vector<int> out;
        for (double x : numbers(key, fb)) {
            if (x != std::floor(x) || std::abs(x) > 2e9) {
                fail(path(key) + ": expected integers");
                continue;
            }
            out.push_back(static_cast<int>(x));
        }
        return out;
    }

    std::vector<std::vector<double>> matrix(const std::string& key) const {
        std::vector<std::vector<double>> out;
        if (!has(key)) return out;
        const json& a = doc_.at(key);
        if (!a.is_array()) {
            fail(path(key) + ": expected an array of rows");
            return out;
        }
        for (const auto& row : a) {
            std::vector<double> r;
            if (row.is_array()) {
                for (const auto& x : row) {
                    try {
                        r.push_back(io::number_of(x));
                    } catch (const std::exception&) {
                        fail(path(key) + ": expected numbers");
                    }
                }
            } else {
                try {
                    r.push_back(io::number_of(row));
                } catch (const std::exception&) {
                    fail(path(key) + ": expected numbers");
                }
            }
            out.push_back(std::move(r));
        }
        return out;
    }

    void fail(const std::string& msg) const { diags_.push_back(msg); }
    void check(bool ok, const std::string& key, const std::string& msg) const {
        if (!ok) fail(path(key) + ": " + msg);
    }
    [[nodiscard]] std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
    [[nodiscard]] std::size_t errors() const { return diags_.size(); }

private:
    const json& doc_;
    std::string prefix_;
    std::vector<std::string>& diags_;
};

/// Parsed top level of a configuration document.
struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 0;
    json params = json::object();
    std::string format = "csv";
    std::string output_path = "out";
    json source;
};

inline std::optional<std::uint64_t> parse_seed(const json& j, std::vector<std::string>& diags) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer()) {
        diags.push_back("seed: must be a non-negative 64-bit integer, got " + j.dump());
        return std::nullopt;
    }
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            diags.push_back("seed: cannot parse '" + s + "' as an unsigned 64-bit integer");
            return std::nullopt;
        }
        return v;
    }
    diags.push_back("seed: must be an unsigned 64-bit integer");
    return std::nullopt;
}

inline ExperimentConfig parse_config(const json& doc, std::vector<std::string>& diags) {
    ExperimentConfig cfg;
    cfg.source = doc;
    if (!doc.is_object()) {
        diags.push_back("config: top level must be an object");
        return cfg;
    }
    if (!doc.contains("experiment") || !doc["experiment"].is_string()) {
        diags.push_back("experiment: missing or not a string");
    } else {
        cfg.experiment = doc["experiment"].get<std::string>();
        const auto& names = experiment_names();
        if (std::find(names.begin(), names.end(), cfg.experiment) == names.end())
            diags.push_back("experiment: unknown experiment '" + cfg.experiment + "'");
    }
    if (!doc.contains("seed")) diags.push_back("seed: missing (seeds are mandatory)");
    else if (auto s = parse_seed(doc["seed"], diags)) cfg.seed = *s;
    if (doc.contains("params")) {
        if (!doc["params"].is_object()) diags.push_back("params: must be an object");
        else cfg.params = doc["params"];
    }
    if (doc.contains("output")) {
        const json& o = doc["output"];
        if (!o.is_object()) {
            diags.push_back("output: must be an object");
        } else {
            if (o.contains("format")) {
                if (!o["format"].is_string() || (o["format"] != "csv" && o["format"] != "json"))
                    diags.push_back("output.format: must be 'csv' or 'json'");
                else cfg.format = o["format"].get<std::string>();
            }
            if (o.contains("path")) {
                if (!o["path"].is_string()) diags.push_back("output.path: must be a string");
                else cfg.output_path = o["path"].get<std::string>();
            }
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Shared parameter blocks

/// Base measure plus moment map: either a full measure document under "measure" or
/// the shortcut "support" (reals) + "alpha" (weights). "F" defaults to the identity on the support.
struct MomentSetup {
    std::optional<FiniteMeasure> alpha;
    Eigen::MatrixXd F;
    std::vector<double> support;
};

inline MomentSetup read_moment_setup(const Reader& r) {
    MomentSetup ms;
    std::vector<double> w;
    SpacePtr space;
    if (r.has("measure")) {
        try {
            ms.alpha = io::measure_from_json(r.raw().at("measure"));
        } catch (const std::exception& e) {
            r.fail(r.path("measure") + ": " + e.what());
            return ms;
        }
        for (const auto& l : ms.alpha->space()->labels()) {
            try {
                ms.support.push_back(io::parse_double(l));
            } catch (const std::exception&) {
                ms.support.push_back(std::nan(""));
            }
        }
    } else {
        ms.support = r.numbers("support");
        w = r.numbers("alpha");
        if (ms.support.empty()) {
            r.fail(r.path("support") + ": must be non-empty");
            return ms;
        }
        if (w.size() != ms.support.size()) {
            r.fail(r.path("alpha") + ": needs one weight per support point");
            return ms;
        }
        try {
            ms.alpha = FiniteMeasure::normalized(MetricSpace::line(ms.support), w);
        } catch (const std::exception& e) {
            r.fail(r.path("alpha") + ": " + e.what());
            return ms;
        }
    }
    const auto rows = r.matrix("F");
    const auto m = static_cast<Eigen::Index>(ms.alpha->size());
    if (rows.empty()) {
        ms.F.resize(m, 1);
        for (Eigen::Index i = 0; i < m; ++i) ms.F(i, 0) = ms.support[static_cast<std::size_t>(i)];
        if (!ms.F.allFinite()) r.fail(r.path("F") + ": required when support labels are not numbers");
    } else {
        if (static_cast<Eigen::Index>(rows.size()) != m || rows[0].empty()) {
            r.fail(r.path("F") + ": needs one row per support point");
            return ms;
        }
        ms.F.resize(m, static_cast<Eigen::Index>(rows[0].size()));
        for (Eigen::Index i = 0; i < m; ++i) {
            if (rows[static_cast<std::size_t>(i)].size() != rows[0].size()) {
                r.fail(r.path("F") + ": rows must have equal length");
                return ms;
            }
            for (Eigen::Index j = 0; j < ms.F.cols(); ++j) ms.F(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return ms;
}

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::optional<MomentTarget> read_target(const Reader& r, Eigen::Index d) {
    const Reader t = r.child("target");
    if (t.has("point")) {
        auto x = t.numbers("point");
        if (static_cast<Eigen::Index>(x.size()) != d) {
            t.fail(t.path("point") + ": dimension must match F");
            return std::nullopt;
        }
        return PointTarget{to_vector(x)};
    }
    if (t.has("box")) {
        const Reader b = t.child("box");
        auto lo = b.numbers("lo"), hi = b.numbers("hi");
        if (static_cast<Eigen::Index>(lo.size()) != d || static_cast<Eigen::Index>(hi.size()) != d) {
            b.fail(b.path("lo/hi") + ": dimension must match F");
            return std::nullopt;
        }
        for (std::size_t j = 0; j < lo.size(); ++j) b.check(lo[j] <= hi[j], "lo", "lo must not exceed hi");
        return BoxTarget{to_vector(lo), to_vector(hi)};
    }
    r.fail(r.path("target") + ": needs 'point' or 'box'");
    return std::nullopt;
}

inline LatticeSpec read_lattice(const Reader& r, bool need_n) {
    LatticeSpec s;
    s.n = need_n ? r.integer("n") : r.integer("n", 1);
    s.alpha = r.number("alpha");
    s.sigma_min = r.number("sigma_min");
    s.sigma_max = r.number("sigma_max");
    s.b0 = r.number("b0");
    s.s = r.number("s");
    const std::size_t before = r.errors();
    if (r.errors() == before) {
        try {
            s.validate();
        } catch (const std::exception& e) {
            r.fail(r.path("") + e.what());
        }
    }
    return s;
}

inline void check_n0(const Reader& r, const LatticeSpec& s, int n, const std::string& key) {
    const int n0 = min_level_n0(s);
    if (n < n0)
        r.fail(r.path(key) + ": n = " + std::to_string(n) + " is below min_level_n0 = " + std::to_string(n0) +
               " (kernel entries can turn negative)");
}

/// Terminal payoff: x^power (or |x - strike| style forms), optionally divided by its
/// expectation under a constant-volatility tree so the constraint target is 1.
struct PayoffSpec {
    std::string kind = "power";
    double power = 2.0;
    double strike = 0.0;
    std::optional<double> normalize_sigma;
    double scale = 1.0;
};

inline PayoffSpec read_payoff(const Reader& r) {
    PayoffSpec p;
    p.kind = r.text("kind", std::string("power"));
    if (p.kind == "power") p.power = r.number("power", 2.0);
    else if (p.kind == "call" || p.kind == "put") p.strike = r.number("strike");
    else r.fail(r.path("kind") + ": must be power, call or put");
    if (r.has("normalize_sigma")) p.normalize_sigma = r.number("normalize_sigma");
    p.scale = r.number("scale", 1.0);
    return p;
}

inline std::function<double(double)> raw_payoff(const PayoffSpec& p) {
    if (p.kind == "call") return [k = p.strike](double x) { return std::max(x - k, 0.0); };
    if (p.kind == "put") return [k = p.strike](double x) { return std::max(k - x, 0.0); };
    return [e = p.power](double x) { return std::pow(x, e); };
}

inline std::function<double(double)> make_payoff(const PayoffSpec& p, const LatticeSpec& spec) {
    auto f = raw_payoff(p);
    double scale = p.scale;
    if (p.normalize_sigma) {
        const TrinomialTree tree = build_tree(VolSurface::constant(spec.n, *p.normalize_sigma, spec.b0), spec);
        const double e = expectation(tree, f, spec.n);
        if (!(std::abs(e) > 0.0)) throw InvalidArgument("payoff normalization: zero expectation");
        scale /= e;
    }
    return [f, scale](double x) { return f(x) * scale; };
}

// ---------------------------------------------------------------------------
// Experiments. Each returns its tables; parse problems are collected in diags
// and cause an early return with no tables.

struct ExperimentContext {
    std::uint64_t seed;
    std::size_t workers;
};

using Tables = std::vector<io::Table>;

inline ScheduleParams read_schedule(const Reader& r) {
    ScheduleParams sp;
    const std::string kind = r.text("kind", std::string("sqrt_n"));
    if (kind == "sqrt_n") sp.kind = ScheduleKind::sqrt_n;
    else if (kind == "inv_n") sp.kind = ScheduleKind::inv_n;
    else r.fail(r.path("kind") + ": must be sqrt_n or inv_n");
    sp.c = r.number("c", 0.0);
    sp.a = r.number("a", 1.0);
    sp.margin = r.number("margin", 1.1);
    r.check(sp.c >= 0.0, "c", "must be >= 0 (0 derives c from the solution)");
    r.check(sp.a > 0.0, "a", "must be positive");
    r.check(sp.margin > 1.0, "margin", "must exceed 1");
    return sp;
}

inline Tables experiment_iproj(const Reader& r, const ExperimentContext&, bool dry) {
    MomentSetup ms = read_moment_setup(r);
    if (!ms.alpha) return {};
    auto target = read_target(r, ms.F.cols());
    const double step = r.number("brute_force_step", 0.0);
    const std::vector<int> ns = r.integers("n", std::vector<int>{});
    const double a = r.number("a", 1.0);
    const double margin = r.number("margin", 1.1);
    if (step != 0.0) r.check(step >= 1e-3 && ms.alpha->size() <= 4, "brute_force_step", ">= 1e-3 and support <= 4 points");
    if (dry || !target || r.errors() > 0) return {};

    const MomentProblem pb{*ms.alpha, ms.F, *target};
    const TiltedSolution sol = solve_dual(pb);
    io::Table summary{"iproj_summary", {"quantity", "value"}, {}};
    summary.add({std::string("entropy"), sol.entropy});
    summary.add({std::string("log_Z"), sol.log_Z});
    summary.add({std::string("variance"), sol.variance});
    summary.add({std::string("third_abs_moment"), sol.third_abs_moment});
    summary.add({std::string("iterations"), static_cast<std::int64_t>(sol.iterations)});
    if (step != 0.0) {
        const BruteForceResult bf = brute_force_projection(pb, step);
        summary.add({std::string("brute_force_entropy"), bf.entropy});
        summary.add({std::string("brute_force_gap"), std::abs(bf.entropy - sol.entropy)});
    }
    io::Table coords{"iproj_lambda", {"coordinate", "lambda_star", "moment"}, {}};
    for (Eigen::Index j = 0; j < sol.lambda_star.size(); ++j)
        coords.add({static_cast<std::int64_t>(j), sol.lambda_star(j), sol.moment(j)});
    io::Table star{"iproj_alpha_star", {"point", "alpha", "alpha_star"}, {}};
    for (std::size_t i = 0; i < sol.alpha_star.size(); ++i)
        star.add({ms.alpha->space()->label(i), (*ms.alpha)[i], sol.alpha_star[i]});
    Tables out{summary, coords, star};
    if (!ns.empty()) {
        io::Table sch{"iproj_schedules", {"n", "eps_sqrt", "eps_inv"}, {}};
        for (int n : ns) {
            const double inv = sol.lambda_star.size() == 1 && sol.variance > 0.0 ? enlargement_berry_esseen(sol, n, margin)
                                                                                 : std::nan("");
            sch.add({static_cast<std::int64_t>(n), enlargement_sqrt(sol, a, n), inv});
        }
        out.push_back(std::move(sch));
    }
    return out;
}

inline Tables experiment_gibbs(const Reader& r, const ExperimentContext& ctx, bool dry) {
    MomentSetup ms = read_moment_setup(r);
    if (!ms.alpha) return {};
    const std::string event = r.text("event", std::string("band"));
    r.check(event == "band" || event == "whole", "event", "must be 'band' or 'whole'");
    const std::vector<double> x0 = event == "band" ? r.numbers("x0") : std::vector<double>{};
    const ScheduleParams sched = read_schedule(r.child("schedule"));
    const std::vector<int> ns = r.integers("n");
    const int k = r.integer("k", 1);
    const std::string method = r.text("method", std::string("exact"));
    const int trials = r.integer("trials", 10000);
    const bool sanov = r.flag("sanov", false);
    r.check(method == "exact" || method == "mc", "method", "must be 'exact' or 'mc'");
    r.check(!ns.empty(), "n", "must be a non-empty list");
    for (int n : ns) r.check(n >= 1 && n >= k, "n", "every n must be >= max(1, k)");
    r.check(k >= 1, "k", "must be >= 1");
    r.check(trials >= 1, "trials", "must be >= 1");
    if (event == "band") r.check(static_cast<Eigen::Index>(x0.size()) == ms.F.cols(), "x0", "dimension must match F");
    if (dry || r.errors() > 0) return {};

    std::optional<TiltedSolution> sol;
    FiniteMeasure ref_k = product_measure(*ms.alpha, static_cast<std::size_t>(k));
    std::optional<ScheduleParams> resolved;
    if (event == "band") {
        sol = solve_dual(MomentProblem{*ms.alpha, ms.F, PointTarget{to_vector(x0)}});
        ref_k = product_measure(sol->alpha_star, static_cast<std::size_t>(k));
        resolved = sched.resolved(*sol);
    }
    io::Table t{"gibbs", {"n", "epsilon", "p_event", "log_p_over_n", "tv_k", "acceptance_rate"}, {}};
    for (int n : ns) {
        ConditioningEvent ev = WholeSpace{};
        double eps = 0.0;
        if (event == "band") {
            eps = resolved->epsilon(n);
            ev = MomentBand{ms.F, to_vector(x0), eps, BandNorm::sup};
        }
        if (method == "exact") {
            const ConditionalEstimate ce = exact_conditional(*ms.alpha, n, ev, static_cast<std::size_t>(k));
            t.add({static_cast<std::int64_t>(n), eps, ce.acceptance_rate, ce.log_probability / n, tv_distance(ce.law, ref_k),
                   ce.acceptance_rate});
        } else {
            const ConditionalEstimate ce = run_conditional_mc(*ms.alpha, n, ev, static_cast<std::size_t>(k),
                                                              static_cast<std::uint64_t>(trials), ctx.seed ^ static_cast<std::uint64_t>(n),
                                                              ctx.workers);
            t.add({static_cast<std::int64_t>(n), eps, ce.acceptance_rate, std::log(ce.acceptance_rate) / n,
                   tv_distance(ce.law, ref_k), ce.acceptance_rate});
        }
    }
    Tables out{t};
    if (sanov && sol) {
        const MomentProblem pb{*ms.alpha, ms.F, PointTarget{to_vector(x0)}};
        const auto rows = sanov_sandwich(pb, *sol, [&](double n) { return resolved->epsilon(n); }, ns);
        io::Table s{"sanov",
                    {"n", "epsilon", "log_p_over_n", "neg_H", "neg_H_event", "centering_lb", "dst_lb", "upper_ok", "lower_ok", "slack"},
                    {}};
        for (const auto& row : rows)
            s.add({static_cast<std::int64_t>(row.n), row.epsilon, row.log_p_over_n, row.neg_H, row.neg_H_event, row.centering_lb,
                   row.dst_lb, row.upper_ok, row.lower_ok, row.slack});
        out.push_back(std::move(s));
    }
    return out;
}

/// Weights on a grid: a list, "uniform", or {"gaussian": {"mean", "var"}}.
inline std::vector<double> read_grid_weights(const Reader& r, const std::string& key, const std::vector<double>& grid) {
    if (!r.has(key)) return std::vector<double>(grid.size(), 1.0);
    const json& j = r.raw().at(key);
    if (j.is_string() && j == "uniform") return std::vector<double>(grid.size(), 1.0);
    if (j.is_array()) {
        auto w = r.numbers(key);
        if (w.size() != grid.size()) r.fail(r.path(key) + ": needs one weight per grid point");
        return w;
    }
    if (j.is_object() && j.contains("gaussian")) {
        const Reader g = r.child(key).child("gaussian");
        const double mean = g.number("mean"), var = g.number("var");
        g.check(var > 0.0, "var", "must be positive");
        std::vector<double> w;
        for (double x : grid) w.push_back(std::exp(-(x - mean) * (x - mean) / (2.0 * var)));
        return w;
    }
    r.fail(r.path(key) + ": expected a weight list, \"uniform\" or {\"gaussian\": {...}}");
    return std::vector<double>(grid.size(), 1.0);
}

inline Tables experiment_bridge(const Reader& r, const ExperimentContext& ctx, bool dry) {
    const Reader g = r.child("grid");
    const double lo = g.number("lo"), hi = g.number("hi");
    const int pts = g.integer("points");
    g.check(pts >= 2 && pts <= 400, "points", "must lie in [2, 400]");
    g.check(lo < hi, "hi", "must exceed lo");
    const double t = r.number("t");
    r.check(t > 0.0, "t", "must be positive");
    const double tol = r.number("tol", 1e-12);
    const int max_iter = r.integer("max_iter", 500);
    const int competitors = r.integer("pythagoras", 0);
    r.check(tol > 0.0, "tol", "must be positive");
    r.check(max_iter >= 1, "max_iter", "must be >= 1");
    r.check(competitors >= 0, "pythagoras", "must be >= 0");
    if (r.errors() > 0) return {};
    std::vector<double> grid;
    for (int i = 0; i < pts; ++i) grid.push_back(lo + (hi - lo) * i / (pts - 1));
    const auto w0 = read_grid_weights(r, "mu0", grid);
    const auto a0 = read_grid_weights(r, "nu0", grid);
    const auto a1 = read_grid_weights(r, "nu1", grid);
    if (dry || r.errors() > 0) return {};

    const SpacePtr sp = MetricSpace::line(grid);
    BridgeProblem pb = gaussian_reference(grid, t, FiniteMeasure::normalized(sp, w0));
    if (r.has("nu0")) pb.nu0 = FiniteMeasure::normalized(sp, a0);
    if (r.has("nu1")) pb.nu1 = FiniteMeasure::normalized(sp, a1);
    const BridgePotentials pot = sinkhorn(pb, tol, max_iter);
    const BridgeEntropy ent = bridge_entropy(pb, pot);

    io::Table summary{"bridge_summary", {"quantity", "value"}, {}};
    summary.add({std::string("residual"), pot.residual});
    summary.add({std::string("iterations"), static_cast<std::int64_t>(pot.iterations)});
    summary.add({std::string("converged"), pot.converged});
    summary.add({std::string("H_direct"), ent.direct});
    summary.add({std::string("H_potentials"), ent.potentials});
    if (competitors > 0) {
        const PythagorasReport pr = bridge_pythagoras(pb, pot, static_cast<std::size_t>(competitors), ctx.seed);
        summary.add({std::string("pythagoras_competitors"), static_cast<std::int64_t>(pr.competitors)});
        summary.add({std::string("pythagoras_violations"), static_cast<std::int64_t>(pr.violations)});
        summary.add({std::string("pythagoras_worst_margin"), pr.worst_margin});
    }
    io::Table potentials{"bridge_potentials", {"index", "x", "f", "g"}, {}};
    for (std::size_t i = 0; i < grid.size(); ++i)
        potentials.add({static_cast<std::int64_t>(i), grid[i], pot.f[i], pot.g[i]});
    io::Table hist{"bridge_history", {"iteration", "residual"}, {}};
    for (std::size_t i = 0; i < pot.history.size(); ++i) hist.add({static_cast<std::int64_t>(i + 1), pot.history[i]});
    io::Table joint{"bridge_measure", {"u", "v", "weight"}, {}};
    const FiniteMeasure bm = bridge_measure(pb, pot);
    for (std::size_t u = 0; u < grid.size(); ++u)
        for (std::size_t v = 0; v < grid.size(); ++v) joint.add({grid[u], grid[v], bm[u * grid.size() + v]});
    if (!pot.converged)
        throw NumericError("sinkhorn: residual " + io::format_double(pot.residual) + " above tol after " +
                           std::to_string(pot.iterations) + " iterations");
    return {summary, potentials, hist, joint};
}

inline Tables experiment_calibrate(const Reader& r, const ExperimentContext& ctx, bool dry) {
    const Reader lat = r.child("lattice");
    const LatticeSpec spec = read_lattice(lat, true);
    const double sigma0 = r.number("sigma0");
    const Reader fam_r = r.child("family");
    CalibFamily fam;
    const std::string kind = fam_r.text("kind", std::string("constant"));
    fam_r.check(kind == "constant" || kind == "piecewise_time", "kind", "must be constant or piecewise_time");
    fam.kind = kind == "constant" ? FamilyKind::constant : FamilyKind::piecewise_time;
    fam.pieces = fam_r.integer("pieces", 1);
    fam.lo = fam_r.number("lo", spec.sigma_min);
    fam.hi = fam_r.number("hi", spec.sigma_max);
    fam_r.check(fam.pieces >= 1 && fam.pieces <= 16, "pieces", "must lie in [1, 16]");
    fam_r.check(fam.lo >= spec.sigma_min && fam.hi <= spec.sigma_max && fam.lo < fam.hi, "lo/hi",
                "must satisfy sigma_min <= lo < hi <= sigma_max");
    const PayoffSpec pay = read_payoff(r.child("payoff"));
    const bool eps_auto = r.has("epsilon") && r.raw().at("epsilon").is_string() && r.raw().at("epsilon") == "auto";
    const double eps = eps_auto ? 0.0 : r.number("epsilon");
    const int audit_points = r.integer("audit_points", 200);
    const int grid_points = r.integer("grid_points", 201);
    if (lat.errors() == 0 && r.errors() == 0) {
        check_n0(lat, spec, spec.n, "n");
        if (!eps_auto) {
            r.check(eps >= 0.0, "epsilon", "must be >= 0");
            r.check(eps <= spec.s, "epsilon", "must not exceed lattice.s = " + io::format_double(spec.s));
        }
        r.check(sigma0 >= spec.sigma_min && sigma0 <= spec.sigma_max, "sigma0", "must lie in [sigma_min, sigma_max]");
        r.check(audit_points >= 2, "audit_points", "must be >= 2");
        r.check(grid_points >= 3, "grid_points", "must be >= 3");
    }
    if (dry || r.errors() > 0) return {};

    const auto payoff = make_payoff(pay, spec);
    CalibProblem pb{VolSurface::constant(spec.n, sigma0, spec.b0), {MomentConstraint{1.0, payoff, 1.0}}, fam};
    // "auto": the band half-width that the reference itself would need, capped at s.
    const double epsilon = eps_auto ? epsilon0(pb.sigma0, spec, payoff) : eps;
    CalibOptions opt;
    opt.workers = ctx.workers;
    opt.grid_points = grid_points;
    const CalibResult res = calibrate(pb, spec, epsilon, opt);
    const CalibAudit audit = calibration_audit(pb, spec, epsilon, res, static_cast<std::size_t>(audit_points), ctx.seed);
    io::Table t{"calibration", {"quantity", "value"}, {}};
    for (std::size_t i = 0; i < res.theta_star.size(); ++i) t.add({"theta_star_" + std::to_string(i), res.theta_star[i]});
    t.add({std::string("epsilon"), epsilon});
    t.add({std::string("entropy"), res.entropy});
    t.add({std::string("H_over_n"), res.entropy / spec.n});
    t.add({std::string("moment"), res.moments.at(0)});
    t.add({std::string("constraint_slack"), res.slack});
    t.add({std::string("feasible"), res.feasible});
    t.add({std::string("epsilon0"), epsilon0(res.sigma_star, spec, payoff)});
    t.add({std::string("audit_points"), static_cast<std::int64_t>(audit.points)});
    t.add({std::string("audit_feasible"), static_cast<std::int64_t>(audit.feasible)});
    t.add({std::string("audit_improvements"), static_cast<std::int64_t>(audit.improvements)});
    return {t};
}

inline Tables experiment_gamma(const Reader& r, const ExperimentContext&, bool dry) {
    const Reader lat = r.child("lattice");
    LatticeSpec base = read_lattice(lat, false);
    const double sigma = r.number("sigma"), sigma0 = r.number("sigma0");
    const double b = r.number("b", base.b0);
    const std::vector<int> ns = r.integers("n");
    r.check(!ns.empty(), "n", "must be a non-empty list");
    if (lat.errors() == 0 && r.errors() == 0) {
        for (int n : ns) {
            r.check(n >= 1 && n <= 4096, "n", "entries must lie in [1, 4096]");
            check_n0(r, base, n, "n");
        }
        for (double s : {sigma, sigma0})
            r.check(s >= base.sigma_min && s <= base.sigma_max, "sigma", "sigma and sigma0 must lie in [sigma_min, sigma_max]");
        r.check(std::abs(b - base.b0) <= base.s, "b", "must lie within s of b0");
    }
    if (dry || r.errors() > 0) return {};
    io::Table t{"gamma", {"n", "H_over_n", "I_rate", "gap", "n_times_gap"}, {}};
    for (int n : ns) {
        LatticeSpec spec = base;
        spec.n = n;
        const VolSurface s = VolSurface::constant(n, sigma, b), s0 = VolSurface::constant(n, sigma0, base.b0);
        const double H = tree_entropy_chain(s, s0, spec);
        const DlGap dl = dl_gap(s, s0, spec);
        t.add({static_cast<std::int64_t>(n), H / n, I_rate(s, s0, spec), dl.max_gap, dl.n_times_gap});
    }
    return {t};
}

/// "space": a measure-style document, {"line": [...]}, or {"torus": {"points": N}} (unit circle, arc metric).
inline SpacePtr read_space(const Reader& r) {
    if (!r.has("space")) {
        r.fail(r.path("space") + ": missing");
        return nullptr;
    }
    const json& j = r.raw().at("space");
    const Reader s = r.child("space");
    try {
        if (j.contains("line")) return MetricSpace::line(s.numbers("line"));
        if (j.contains("torus")) {
            const int m = s.child("torus").integer("points");
            s.check(m >= 1 && m <= 2000, "torus.points", "must lie in [1, 2000]");
            if (s.errors() > 0) return nullptr;
            std::vector<std::string> labels;
            std::vector<double> d(static_cast<std::size_t>(m) * static_cast<std::size_t>(m));
            for (int i = 0; i < m; ++i) {
                labels.push_back(std::to_string(i));
                for (int k = 0; k < m; ++k) {
                    const double a = std::abs(i - k) / static_cast<double>(m);
                    d[static_cast<std::size_t>(i * m + k)] = std::min(a, 1.0 - a);
                }
            }
            return std::make_shared<const MetricSpace>(std::move(labels), std::move(d));
        }
        return io::space_from_json(j);
    } catch (const std::exception& e) {
        r.fail(r.path("space") + ": " + e.what());
        return nullptr;
    }
}

inline Tables experiment_covering(const Reader& r, const ExperimentContext&, bool dry) {
    const SpacePtr sp = read_space(r);
    const std::vector<double> eps = r.numbers("epsilons");
    for (double e : eps) r.check(e > 0.0 && e <= 1.0, "epsilons", "entries must lie in (0, 1]");
    if (sp && !sp->has_metric()) r.fail(r.path("space") + ": needs distances");
    if (dry || r.errors() > 0 || !sp) return {};
    io::Table t{"covering", {"epsilon", "count", "method", "count_half", "bound_prohorov", "bound_fortet_mourier"}, {}};
    for (double e : eps) {
        const CoveringReport c = covering_number(*sp, e);
        const CoveringReport h = covering_number(*sp, e / 2.0);
        t.add({e, static_cast<std::int64_t>(c.count), std::string(c.method == CoverMethod::exact ? "exact" : "greedy"),
               static_cast<std::int64_t>(h.count), covering_bound_measures(c.count, e, MeasureMetric::prohorov),
               covering_bound_measures(h.count, e, MeasureMetric::fortet_mourier)});
    }
    return {t};
}

inline Tables experiment_schedules(const Reader& r, const ExperimentContext& ctx, bool dry) {
    MomentSetup ms = read_moment_setup(r);
    if (!ms.alpha) return {};
    const std::vector<double> x0 = r.numbers("x0");
    const std::vector<int> ns = r.integers("n");
    const double a = r.number("a", 1.0), margin = r.number("margin", 1.1);
    const double t_dev = r.number("yurinskii_t", 0.1);
    const Reader cov = r.child("covering");
    const std::string cov_kind = cov.text("kind", std::string("constant"));
    const double cov_c = cov.number("c", 1.0);
    cov.check(cov_kind == "constant" || cov_kind == "inverse", "kind", "must be constant or inverse");
    cov.check(cov_c > 0.0, "c", "must be positive");
    r.check(!ns.empty(), "n", "must be a non-empty list");
    for (int n : ns) r.check(n >= 1, "n", "entries must be >= 1");
    r.check(static_cast<Eigen::Index>(x0.size()) == ms.F.cols(), "x0", "dimension must match F");
    std::optional<FiniteMeasure> nu;
    std::vector<int> mc_n;
    int trials = 0;
    double rate_c = 2.0, rate_b = 0.2;
    std::string metric = "fm";
    if (r.has("marginal_check")) {
        const Reader mc = r.child("marginal_check");
        const auto w = mc.numbers("weights");
        mc_n = mc.integers("n");
        trials = mc.integer("trials", 200);
        rate_c = mc.number("c", 2.0);
        rate_b = mc.number("b", 0.2);
        metric = mc.text("metric", std::string("fm"));
        mc.check(metric == "fm" || metric == "prohorov", "metric", "must be fm or prohorov");
        mc.check(trials >= 1, "trials", "must be >= 1");
        mc.check(!w.empty(), "weights", "must be non-empty");
        if (mc.errors() == 0) {
            std::vector<double> xs;
            for (std::size_t i = 0; i < w.size(); ++i) xs.push_back(static_cast<double>(i) / static_cast<double>(w.size()));
            try {
                nu = FiniteMeasure::normalized(MetricSpace::line(xs), w);
            } catch (const std::exception& e) {
                mc.fail(mc.path("weights") + ": " + e.what());
            }
        }
    }
    if (dry || r.errors() > 0) return {};

    const MomentProblem pb{*ms.alpha, ms.F, PointTarget{to_vector(x0)}};
    const TiltedSolution sol = solve_dual(pb);
    const YurinskiiConstants yc = yurinskii_constants(pb, sol);
    std::function<double(double)> covering_fn = [cov_kind, cov_c](double e) {
        return cov_kind == "constant" ? cov_c : std::ceil(cov_c / e);
    };
    io::Table t{"schedules", {"n", "eps_sqrt", "eps_inv", "yurinskii_tail", "eps_metric", "metric_criterion", "metric_warning"}, {}};
    for (int n : ns) {
        const double inv = sol.lambda_star.size() == 1 && sol.variance > 0.0 ? enlargement_berry_esseen(sol, n, margin) : std::nan("");
        const double tail = yc.M > 0.0 ? yurinskii_tail(yc.b, yc.M, n, t_dev) : 0.0;
        const MetricSchedule msch = epsilon_schedule_metric(covering_fn, n);
        t.add({static_cast<std::int64_t>(n), enlargement_sqrt(sol, a, n), inv, tail, msch.epsilon, msch.criterion, msch.warning});
    }
    Tables out{t};
    if (nu) {
        const auto rows = marginal_schedule_check(
            *nu, metric == "fm" ? MeasureMetric::fortet_mourier : MeasureMetric::prohorov,
            [rate_c, rate_b](double n) { return rate_c / std::pow(n, rate_b); }, mc_n, static_cast<std::uint64_t>(trials), ctx.seed,
            ctx.workers);
        io::Table m{"marginal_check", {"n", "epsilon", "probability"}, {}};
        for (const auto& row : rows) m.add({static_cast<std::int64_t>(row.n), row.epsilon, row.probability});
        out.push_back(std::move(m));
    }
    return out;
}

inline Tables dispatch(const ExperimentConfig& cfg, const ExperimentContext& ctx, bool dry, std::vector<std::string>& diags) {
    const Reader r(cfg.params, "params", diags);
    if (cfg.experiment == "iproj") return experiment_iproj(r, ctx, dry);
    if (cfg.experiment == "gibbs") return experiment_gibbs(r, ctx, dry);
    if (cfg.experiment == "bridge") return experiment_bridge(r, ctx, dry);
    if (cfg.experiment == "calibrate") return experiment_calibrate(r, ctx, dry);
    if (cfg.experiment == "gamma") return experiment_gamma(r, ctx, dry);
    if (cfg.experiment == "covering") return experiment_covering(r, ctx, dry);
    if (cfg.experiment == "schedules") return experiment_schedules(r, ctx, dry);
    return {};
}

}  // namespace runner

/// Schema and range diagnostics; empty means runnable.
[[nodiscard]] inline std::vector<std::string> validate(const io::json& doc) {
    std::vector<std::string> diags;
    const runner::ExperimentConfig cfg = runner::parse_config(doc, diags);
    if (!cfg.experiment.empty()) runner::dispatch(cfg, {cfg.seed, 1}, true, diags);
    return diags;
}

struct RunManifest {
    io::json document;
    std::vector<std::filesystem::path> files;
};

/// Runs the configured experiment and writes tables plus manifest.json under out_dir
/// (defaults to output.path from the config).
inline RunManifest run(const io::json& doc, std::size_t workers, const std::optional<std::filesystem::path>& out_dir) {
    std::vector<std::string> diags;
    const runner::ExperimentConfig cfg = runner::parse_config(doc, diags);
    if (!cfg.experiment.empty() && diags.empty()) runner::dispatch(cfg, {cfg.seed, 1}, true, diags);
    if (!diags.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& d : diags) msg += "\n  " + d;
        throw ConfigError(msg);
    }
    if (workers == 0) workers = default_workers();
    const auto t0 = std::chrono::steady_clock::now();
    const runner::Tables tables = runner::dispatch(cfg, {cfg.seed, workers}, false, diags);
    if (!diags.empty()) throw ConfigError(diags.front());
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::filesystem::path dir = out_dir ? *out_dir : std::filesystem::path(cfg.output_path);
    RunManifest man;
    io::json rows = io::json::object();
    for (const auto& t : tables) {
        const std::filesystem::path p = dir / (t.name + (cfg.format == "csv" ? ".csv" : ".json"));
        io::write_atomic(p, cfg.format == "csv" ? io::to_csv(t) : io::to_json(t).dump(2) + "\n");
        man.files.push_back(p);
        rows[t.name] = t.rows.size();
    }
    man.document = io::json{{"version", kVersion},
                            {"experiment", cfg.experiment},
                            {"seed", cfg.seed},
                            {"workers", workers},
                            {"wall_time_seconds", wall},
                            {"row_counts", rows},
                            {"config", cfg.source}};
    const std::filesystem::path mp = dir / "manifest.json";
    io::write_atomic(mp, man.document.dump(2) + "\n");
    man.files.push_back(mp);
    return man;
}

}  // namespace thinsets
