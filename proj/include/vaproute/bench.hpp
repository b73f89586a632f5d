#pragma once

// Benchmark reporting: per-instance evaluation rows, the fixed CSV schema,
// and aggregate statistics. Aggregates are always derivable from the rows,
// so a report can be rebuilt from its own CSV.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vaproute/io.hpp"

namespace vaproute {

struct EvalRow {
    std::string instance_id;
    std::string variant;
    int n = 0;  // customers
    int k = 0;  // vehicle types
    std::string method;
    double objective = 0.0;
    double reference = 0.0;
    double gap_pct = 0.0;
    double time_s = 0.0;
};

// gap as a fraction of the reference; callers store it scaled to percent.
inline double relative_gap(double objective, double reference) {
    return (objective - reference) / reference;
}

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_objective = 0.0;
    double mean_gap_pct = 0.0;
    double mean_time_s = 0.0;
};

inline EvalReport make_report(std::vector<EvalRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
        return a.instance_id < b.instance_id;
    });
    EvalReport rep;
    rep.rows = std::move(rows);
    if (rep.rows.empty()) return rep;
    double so = 0.0, sg = 0.0, st = 0.0;
    for (const auto& r : rep.rows) {
        so += r.objective;
        sg += r.gap_pct;
        st += r.time_s;
    }
    const auto m = static_cast<double>(rep.rows.size());
    rep.mean_objective = so / m;
    rep.mean_gap_pct = sg / m;
    rep.mean_time_s = st / m;
    return rep;
}

inline constexpr const char* kEvalCsvHeader =
    "instance_id,variant,n,k,method,objective,reference,gap_pct,time_s";

namespace detail {

// shortest-exact is overkill here; %.17g makes the CSV reparse bit-exact so
// aggregates recomputed from the file match the report.
inline std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string to_csv(const EvalReport& rep) {
    std::string out = kEvalCsvHeader;
    out += '\n';
    for (const auto& r : rep.rows) {
        out += r.instance_id;
        out += ',';
        out += r.variant;
        out += ',';
        out += std::to_string(r.n);
        out += ',';
        out += std::to_string(r.k);
        out += ',';
        out += r.method;
        out += ',';
        out += detail::csv_double(r.objective);
        out += ',';
        out += detail::csv_double(r.reference);
        out += ',';
        out += detail::csv_double(r.gap_pct);
        out += ',';
        out += detail::csv_double(r.time_s);
        out += '\n';
    }
    return out;
}

inline std::vector<EvalRow> rows_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("eval csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kEvalCsvHeader)
        throw ParseError("eval csv: unexpected header '" + line + "'");
    std::vector<EvalRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 9)
            throw ParseError("eval csv: line " + std::to_string(lineno) +
                             " has " + std::to_string(f.size()) + " fields, expected 9");
        EvalRow r;
        try {
            r.instance_id = f[0];
            r.variant = f[1];
            r.n = std::stoi(f[2]);
            r.k = std::stoi(f[3]);
            r.method = f[4];
            r.objective = std::stod(f[5]);
            r.reference = std::stod(f[6]);
            r.gap_pct = std::stod(f[7]);
            r.time_s = std::stod(f[8]);
        } catch (const std::exception&) {
            throw ParseError("eval csv: line " + std::to_string(lineno) +
                             ": malformed numeric field");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline Json to_json(const EvalReport& rep) {
    Json rows = Json::array();
    for (const auto& r : rep.rows) {
        rows.push_back(Json{{"instance_id", r.instance_id},
                            {"variant", r.variant},
                            {"n", r.n},
                            {"k", r.k},
                            {"method", r.method},
                            {"objective", r.objective},
                            {"reference", r.reference},
                            {"gap_pct", r.gap_pct},
                            {"time_s", r.time_s}});
    }
    return Json{{"instances", rep.rows.size()},
                {"mean_objective", rep.mean_objective},
                {"mean_gap_pct", rep.mean_gap_pct},
                {"mean_time_s", rep.mean_time_s},
                {"rows", std::move(rows)}};
}

// Per-method aggregate view used by the gap-report command.
struct MethodSummary {
    std::string method;
    int count = 0;
    double mean_objective = 0.0;
    double mean_gap_pct = 0.0;
    double mean_time_s = 0.0;
    double worst_gap_pct = 0.0;
};

inline std::vector<MethodSummary> summarize_by_method(const std::vector<EvalRow>& rows) {
    std::vector<MethodSummary> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const MethodSummary& s) {
            return s.method == r.method;
        });
        if (it == out.end()) {
            out.push_back(MethodSummary{r.method, 0, 0.0, 0.0, 0.0, r.gap_pct});
            it = std::prev(out.end());
        }
        it->count += 1;
        it->mean_objective += r.objective;
        it->mean_gap_pct += r.gap_pct;
        it->mean_time_s += r.time_s;
        it->worst_gap_pct = std::max(it->worst_gap_pct, r.gap_pct);
    }
    for (auto& s : out) {
        s.mean_objective /= s.count;
        s.mean_gap_pct /= s.count;
        s.mean_time_s /= s.count;
    }
    std::sort(out.begin(), out.end(), [](const MethodSummary& a, const MethodSummary& b) {
        return a.method < b.method;
    });
    return out;
}

inline Json to_json(const std::vector<MethodSummary>& sums) {
    Json arr = Json::array();
    for (const auto& s : sums) {
        arr.push_back(Json{{"method", s.method},
                           {"count", s.count},
                           {"mean_objective", s.mean_objective},
                           {"mean_gap_pct", s.mean_gap_pct},
                           {"mean_time_s", s.mean_time_s},
                           {"worst_gap_pct", s.worst_gap_pct}});
    }
    return arr;
}

struct WallTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

}  // namespace vaproute
