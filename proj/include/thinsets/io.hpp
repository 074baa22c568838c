#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include "thinsets/error.hpp"
#include "thinsets/measures.hpp"

namespace thinsets::io {

using json = nlohmann::ordered_json;

/// Shortest decimal string that reads back to the same double.
[[nodiscard]] inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, res.ptr};
}

[[nodiscard]] inline double parse_double(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    double x = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, x);
    if (res.ec != std::errc() || res.ptr != last) throw InvalidArgument("not a decimal number: '" + s + "'");
    return x;
}

/// Accepts a JSON number or a decimal string.
[[nodiscard]] inline double number_of(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return parse_double(j.get<std::string>());
    throw InvalidArgument("expected a number or decimal string");
}

using Cell = std::variant<double, std::int64_t, std::string, bool>;

[[nodiscard]] inline std::string format_cell(const Cell& c) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>) return format_double(v);
            else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(v);
            else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
            else return v;
        },
        c);
}

/// A named table with fixed columns.
struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add(std::vector<Cell> row) {
        if (row.size() != columns.size()) throw InvalidArgument("Table " + name + ": row width differs from header");
        rows.push_back(std::move(row));
    }
};

[[nodiscard]] inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

[[nodiscard]] inline std::string to_csv(const Table& t) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + csv_escape(t.columns[i]);
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_escape(format_cell(row[i]));
        out += '\n';
    }
    return out;
}

/// JSON mirror of the CSV: {"columns": [...], "rows": [[...], ...]} with numbers as decimal strings.
[[nodiscard]] inline json to_json(const Table& t) {
    json rows = json::array();
    for (const auto& row : t.rows) {
        json r = json::array();
        for (const auto& c : row) {
            if (std::holds_alternative<bool>(c)) r.push_back(std::get<bool>(c));
            else r.push_back(format_cell(c));
        }
        rows.push_back(std::move(r));
    }
    return json{{"name", t.name}, {"columns", t.columns}, {"rows", std::move(rows)}};
}

/// Writes through a temporary sibling file and renames it into place.
inline void write_atomic(const std::filesystem::path& target, const std::string& content) {
    namespace fs = std::filesystem;
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open " + tmp.string() + " for writing");
        os << content;
        os.flush();
        if (!os) throw Error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

/// {points: [...], dist: [[...]], weights: [...]} with decimal strings.
[[nodiscard]] inline json measure_to_json(const FiniteMeasure& mu) {
    const MetricSpace& sp = *mu.space();
    json dist = json::array();
    if (sp.has_metric()) {
        for (std::size_t i = 0; i < sp.size(); ++i) {
            json row = json::array();
            for (std::size_t k = 0; k < sp.size(); ++k) row.push_back(format_double(sp.distance(i, k)));
            dist.push_back(std::move(row));
        }
    }
    json w = json::array();
    for (double x : mu.weights()) w.push_back(format_double(x));
    return json{{"points", sp.labels()}, {"dist", std::move(dist)}, {"weights", std::move(w)}};
}

[[nodiscard]] inline SpacePtr space_from_json(const json& j) {
    if (!j.contains("points") || !j["points"].is_array()) throw InvalidArgument("space document needs a 'points' array");
    std::vector<std::string> labels;
    for (const auto& p : j["points"]) labels.push_back(p.is_string() ? p.get<std::string>() : p.dump());
    if (!j.contains("dist") || j["dist"].empty()) return std::make_shared<const MetricSpace>(std::move(labels));
    const std::size_t m = labels.size();
    if (j["dist"].size() != m) throw InvalidArgument("space document: dist must be square");
    std::vector<double> d;
    d.reserve(m * m);
    for (const auto& row : j["dist"]) {
        if (row.size() != m) throw InvalidArgument("space document: dist must be square");
        for (const auto& x : row) d.push_back(number_of(x));
    }
    return std::make_shared<const MetricSpace>(std::move(labels), std::move(d));
}

[[nodiscard]] inline FiniteMeasure measure_from_json(const json& j) {
    SpacePtr sp = space_from_json(j);
    if (!j.contains("weights") || !j["weights"].is_array()) throw InvalidArgument("measure document needs 'weights'");
    std::vector<double> w;
    for (const auto& x : j["weights"]) w.push_back(number_of(x));
    return FiniteMeasure(std::move(sp), std::move(w));
}

}  // namespace thinsets::io
