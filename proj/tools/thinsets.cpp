#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "thinsets/thinsets.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kNumeric = 3;
constexpr int kZeroAcceptance = 4;

int report(int code, const std::string& kind, const std::string& message, const thinsets::io::json& extra = {}) {
    thinsets::io::json doc{{"status", "error"}, {"kind", kind}, {"exit_code", code}, {"message", message}};
    if (extra.is_object())
        for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
    std::cerr << doc.dump() << "\n";
    return code;
}

std::optional<thinsets::io::json> load(const std::string& path, int& code) {
    std::ifstream is(path);
    if (!is) {
        code = report(kConfig, "config", "cannot open " + path);
        return std::nullopt;
    }
    try {
        return thinsets::io::json::parse(is);
    } catch (const std::exception& e) {
        code = report(kConfig, "config", std::string("malformed JSON: ") + e.what());
        return std::nullopt;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Finite-space relative entropy, conditional limit and trinomial calibration experiments"};
    app.set_version_flag("--version", std::string(thinsets::kVersion));
    app.require_subcommand(1);

    std::string config;
    std::size_t workers = 0;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "run an experiment and write its tables");
    run->add_option("--config", config, "experiment JSON")->required();
    run->add_option("--workers", workers, "threads (0 = hardware concurrency)");
    run->add_option("--out", out_dir, "output directory (default: output.path)");

    std::string vconfig;
    auto* val = app.add_subcommand("validate", "check a config without running it");
    val->add_option("--config", vconfig, "experiment JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    int code = kOk;
    if (*val) {
        auto doc = load(vconfig, code);
        if (!doc) return code;
        const auto diags = thinsets::validate(*doc);
        if (!diags.empty()) return report(kConfig, "config", "invalid configuration", {{"diagnostics", diags}});
        std::cout << thinsets::io::json{{"status", "ok"}, {"config", vconfig}}.dump() << "\n";
        return kOk;
    }

    auto doc = load(config, code);
    if (!doc) return code;
    try {
        std::optional<std::filesystem::path> out;
        if (!out_dir.empty()) out = out_dir;
        const auto man = thinsets::run(*doc, workers, out);
        thinsets::io::json files = thinsets::io::json::array();
        for (const auto& f : man.files) files.push_back(f.string());
        std::cout << thinsets::io::json{{"status", "ok"}, {"files", files}}.dump() << "\n";
        return kOk;
    } catch (const thinsets::ConfigError& e) {
        return report(kConfig, "config", e.what());
    } catch (const thinsets::ZeroAcceptanceError& e) {
        return report(kZeroAcceptance, "zero_acceptance", e.what(), {{"upper_bound", e.upper_bound()}});
    } catch (const thinsets::InfeasibleError& e) {
        return report(kNumeric, "infeasible", e.what(), {{"direction", e.direction()}});
    } catch (const thinsets::NumericError& e) {
        return report(kNumeric, "numeric", e.what());
    } catch (const thinsets::InvalidArgument& e) {
        return report(kConfig, "config", e.what());
    } catch (const thinsets::BudgetExceeded& e) {
        return report(kConfig, "budget", e.what());
    } catch (const std::exception& e) {
        return report(kNumeric, "internal", e.what());
    }
}
