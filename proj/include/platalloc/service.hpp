#pragma once
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "model.hpp"
#include "simulator.hpp"
#include "solver.hpp"
#include "tables.hpp"

/*
 * Request/response documents shared by the command line and the HTTP service.
 * Both front ends assemble a JSON request object, call one run_* function and
 * print the returned document, so their bodies cannot drift apart.
 */
namespace platalloc::service {

using json = nlohmann::json;

inline constexpr std::int64_t kHttpMaxReps = 1'000'000;
inline constexpr std::uint64_t kDefaultSeed = 20240101;

/// Exit code / HTTP status class of a failure.
enum class ErrorKind { Validation, Solver };

inline ErrorKind classify_error(const std::exception& e) {
    if (dynamic_cast<const DomainError*>(&e) || dynamic_cast<const SolverFailure*>(&e) ||
        dynamic_cast<const EstimandUndefined*>(&e))
        return ErrorKind::Solver;
    return ErrorKind::Validation;
}

inline int exit_code(ErrorKind kind) { return kind == ErrorKind::Validation ? 2 : 3; }
inline int http_status(ErrorKind kind) { return kind == ErrorKind::Validation ? 400 : 422; }

inline json error_document(const std::exception& e) {
    const auto kind = classify_error(e);
    return {{"error",
             {{"kind", kind == ErrorKind::Validation ? "validation" : "solver"},
              {"message", e.what()}}}};
}

/// Proportions are reported at 6 decimals; variances keep full precision.
inline double round6(double x) { return std::round(x * 1e6) / 1e6; }

namespace detail {

inline void check_keys(const json& req, const std::set<std::string>& allowed) {
    if (!req.is_object()) throw ValidationError("request must be a JSON object");
    for (const auto& [key, value] : req.items())
        if (!allowed.count(key)) throw ValidationError("unknown request field '" + key + "'");
}

inline double number(const json& req, const char* key, double fallback) {
    if (!req.contains(key)) return fallback;
    const auto& v = req.at(key);
    if (!v.is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
    return v.get<double>();
}

inline double required_number(const json& req, const char* key) {
    if (!req.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    return number(req, key, 0.0);
}

inline std::int64_t integer(const json& req, const char* key, std::int64_t fallback) {
    if (!req.contains(key)) return fallback;
    const double v = number(req, key, 0.0);
    if (v != std::floor(v) || std::abs(v) > 9.0e15)
        throw ValidationError(std::string("field '") + key + "' must be an integer");
    return static_cast<std::int64_t>(v);
}

inline std::string text(const json& req, const char* key, const std::string& fallback) {
    if (!req.contains(key)) return fallback;
    const auto& v = req.at(key);
    if (!v.is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline json plan_json(const AllocationPlan& plan) {
    json p = json::array();
    for (const auto& row : plan.p) p.push_back({round6(row[0]), round6(row[1]), round6(row[2])});
    return {{"r", {round6(plan.r[0]), round6(plan.r[1]), round6(plan.r[2])}}, {"p", p}};
}

inline json profile_json(const VarianceProfile& v) {
    return {{"var1", v.var1},
            {"var2", v.var2},
            {"max_var", v.max_var},
            {"ratio_vs_separate", v.ratio_vs_separate}};
}

inline json counts_json(const CountTable& c) {
    return {{"control", {c[0][0], c[1][0], c[2][0]}},
            {"arm1", {c[0][1], c[1][1], c[2][1]}},
            {"arm2", {c[0][2], c[1][2], c[2][2]}}};
}

inline CountTable counts_from_json(const json& j) {
    check_keys(j, {"control", "arm1", "arm2"});
    CountTable c{};
    const char* names[kArms] = {"control", "arm1", "arm2"};
    for (int arm = 0; arm < kArms; ++arm) {
        if (!j.contains(names[arm])) throw ValidationError(std::string("counts missing '") + names[arm] + "'");
        const auto& row = j.at(names[arm]);
        if (!row.is_array() || row.size() != kPeriods)
            throw ValidationError("each counts row needs three period entries");
        for (int s = 0; s < kPeriods; ++s) {
            if (!row[s].is_number_integer()) throw ValidationError("counts must be integers");
            c[s][arm] = row[s].get<int>();
        }
    }
    validate_counts(c);
    return c;
}

inline std::string fmt(const char* spec, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, x);
    return buf;
}

inline std::string num17(const json& v) { return v.is_null() ? "inf" : fmt("%.17g", v.get<double>()); }
inline std::string num6(const json& v) { return v.is_null() ? "nan" : fmt("%.6f", v.get<double>()); }

}  // namespace detail

// ---------------------------------------------------------------- solve

struct SolveRequest {
    DesignCase design_case = Unrestricted{};
    AnalysisMode mode = AnalysisMode::ConcurrentOnly;
    TrialParams params;
};

inline const std::set<std::string> kSolveKeys{"case", "r1", "r2", "mode", "n", "sigma"};

inline std::string case_name(const DesignCase& c) {
    if (std::holds_alternative<FixedR1>(c)) return "fixed_r1";
    if (std::holds_alternative<FixedR1R2>(c)) return "fixed_r1_r2";
    return "unrestricted";
}

inline SolveRequest parse_solve(const json& req, const std::set<std::string>& allowed = kSolveKeys) {
    detail::check_keys(req, allowed);
    SolveRequest out;
    const auto name = detail::text(req, "case", "unrestricted");
    if (name == "unrestricted") {
        if (req.contains("r1") || req.contains("r2"))
            throw ValidationError("case unrestricted takes no r1/r2");
        out.design_case = Unrestricted{};
    } else if (name == "fixed_r1") {
        if (req.contains("r2")) throw ValidationError("case fixed_r1 takes no r2");
        out.design_case = FixedR1{detail::required_number(req, "r1")};
    } else if (name == "fixed_r1_r2") {
        out.design_case = FixedR1R2{detail::required_number(req, "r1"), detail::required_number(req, "r2")};
    } else {
        throw ValidationError("unknown case '" + name + "' (expected unrestricted|fixed_r1|fixed_r1_r2)");
    }
    validate(out.design_case);
    out.mode = parse_mode(detail::text(req, "mode", "cc"));
    out.params.total_n = detail::number(req, "n", 1.0);
    out.params.sigma = detail::number(req, "sigma", 1.0);
    out.params.validate();
    return out;
}

inline json request_json(const SolveRequest& r) {
    json j{{"case", case_name(r.design_case)}, {"mode", to_string(r.mode)}};
    if (const auto* c = std::get_if<FixedR1>(&r.design_case)) j["r1"] = c->r1;
    if (const auto* c = std::get_if<FixedR1R2>(&r.design_case)) {
        j["r1"] = c->r1;
        j["r2"] = c->r2;
    }
    j["n"] = r.params.total_n;
    j["sigma"] = r.params.sigma;
    return j;
}

inline json design_json(const OptimalDesign& d) {
    return {{"regime", to_string(d.regime)},
            {"mode", to_string(d.mode)},
            {"plan", detail::plan_json(d.plan)},
            {"variances", detail::profile_json(d.profile)},
            {"information", {{"arm1", information_cc(d.plan, Arm::One)},
                             {"arm2", information_arm2(d.plan, d.mode)}}},
            {"equal_variance_gap", equal_variance_gap(d.profile)}};
}

inline json run_solve(const json& req) {
    const auto r = parse_solve(req);
    json out = design_json(solve(r.design_case, r.mode, {}, r.params));
    out["request"] = request_json(r);
    return out;
}

// ---------------------------------------------------------------- curve

struct CurveRequest {
    double r1 = 0.0;
    std::vector<AnalysisMode> modes;
    int grid = 101;
    TrialParams params;
};

inline CurveRequest parse_curve(const json& req) {
    detail::check_keys(req, {"r1", "mode", "grid", "n", "sigma"});
    CurveRequest out;
    out.r1 = detail::required_number(req, "r1");
    if (!(out.r1 >= 0.0 && out.r1 < 1.0)) throw ValidationError("r1 must lie in [0,1)");
    const auto mode = detail::text(req, "mode", "both");
    if (mode == "both") out.modes = {AnalysisMode::ConcurrentOnly, AnalysisMode::WithNonConcurrent};
    else out.modes = {parse_mode(mode)};
    const auto grid = detail::integer(req, "grid", 101);
    if (grid < 2 || grid > 10'000) throw ValidationError("grid must lie in [2, 10000]");
    out.grid = static_cast<int>(grid);
    out.params.total_n = detail::number(req, "n", 1.0);
    out.params.sigma = detail::number(req, "sigma", 1.0);
    out.params.validate();
    return out;
}

/// Optimal period-2 allocation as r2 sweeps [0, 1 - r1] on an even grid.
inline json run_curve(const json& req) {
    const auto r = parse_curve(req);
    json curves = json::object();
    for (auto mode : r.modes) {
        json rows = json::array();
        for (int k = 0; k < r.grid; ++k) {
            const double r2 = k == r.grid - 1 ? 1.0 - r.r1 : (1.0 - r.r1) * k / (r.grid - 1);
            const auto d = solve(FixedR1R2{r.r1, r2}, mode, {}, r.params);
            rows.push_back({{"r2", r2},
                            {"p02", round6(d.plan.p[1][0])},
                            {"p12", round6(d.plan.p[1][1])},
                            {"p22", round6(d.plan.p[1][2])},
                            {"max_var", d.profile.max_var},
                            {"ratio_vs_separate", d.profile.ratio_vs_separate},
                            {"regime", to_string(d.regime)}});
        }
        curves[to_string(mode)] = rows;
    }
    return {{"r1", r.r1}, {"grid", r.grid}, {"n", r.params.total_n}, {"sigma", r.params.sigma},
            {"curves", curves}};
}

// ---------------------------------------------------------------- tables

struct TablesRequest {
    SolveRequest design;
    int n = 0;
    CellRounding rounding = CellRounding::Nearest;
};

inline TablesRequest parse_tables(const json& req) {
    detail::check_keys(req, {"case", "r1", "r2", "mode", "n", "rounding"});
    json solve_part = req;
    solve_part.erase("n");
    solve_part.erase("rounding");
    TablesRequest out;
    out.design = parse_solve(solve_part);
    const auto n = detail::integer(req, "n", -1);
    if (n < 1 || n > 100'000'000) throw ValidationError("n must be a positive integer");
    out.n = static_cast<int>(n);
    out.design.params.total_n = static_cast<double>(n);
    out.rounding = parse_rounding(detail::text(req, "rounding", "nearest"));
    return out;
}

inline json run_tables(const json& req) {
    const auto r = parse_tables(req);
    const auto t = allocation_tables(r.design.design_case, r.design.mode, r.n, r.rounding);
    json strategies = json::object();
    for (auto s : {Strategy::OneToOne, Strategy::SqrtK, Strategy::Optimal}) {
        const auto& c = t.get(s);
        strategies[to_string(s)] = {{"counts", detail::counts_json(c)}, {"total", table_total(c)}};
    }
    json design = design_json(t.optimal_design);
    return {{"n", r.n},
            {"mode", to_string(r.design.mode)},
            {"rounding", to_string(r.rounding)},
            {"period_totals", t.period_totals},
            {"strategies", strategies},
            {"optimal_design", design}};
}

// ---------------------------------------------------------------- simulate

struct SimulateRequest {
    SimulationScenario scenario;
    std::int64_t reps = 10'000;
    std::uint64_t seed = kDefaultSeed;
};

inline Trend parse_trend(const json& j) {
    if (j.is_string()) {
        if (parse_trend_kind(j.get<std::string>()) != Trend::Kind::None)
            throw ValidationError("linear and step trends need parameters");
        return Trend::none();
    }
    detail::check_keys(j, {"kind", "slope", "shifts"});
    switch (parse_trend_kind(detail::text(j, "kind", "none"))) {
        case Trend::Kind::None: return Trend::none();
        case Trend::Kind::Linear: return Trend::linear(detail::required_number(j, "slope"));
        case Trend::Kind::Step: {
            const auto& s = j.contains("shifts") ? j.at("shifts") : json();
            if (!s.is_array() || s.size() != kPeriods || !s[0].is_number() || !s[1].is_number() ||
                !s[2].is_number())
                throw ValidationError("step trend needs three numeric period shifts");
            return Trend::step({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
        }
    }
    return Trend::none();
}

inline json trend_json(const Trend& t) {
    json j{{"kind", to_string(t.kind)}};
    if (t.kind == Trend::Kind::Linear) j["slope"] = t.slope;
    if (t.kind == Trend::Kind::Step) j["shifts"] = t.shifts;
    return j;
}

/*
 * The allocation is either explicit ("counts") or solved and rounded: the
 * design fields of a tables request plus "strategy" (default optimal).
 */
inline SimulateRequest parse_simulate(const json& req) {
    detail::check_keys(req, {"counts", "case", "r1", "r2", "n", "strategy", "rounding", "mu0", "theta",
                             "sigma", "trend", "alpha", "level", "mode", "inference", "reps", "seed"});
    SimulateRequest out;
    auto& sc = out.scenario;
    sc.mode = parse_mode(detail::text(req, "mode", "cc"));
    if (req.contains("counts")) {
        for (const char* k : {"case", "r1", "r2", "n", "strategy", "rounding"})
            if (req.contains(k))
                throw ValidationError(std::string("field '") + k + "' conflicts with explicit counts");
        sc.counts = detail::counts_from_json(req.at("counts"));
    } else {
        json tables_req = json::object();
        for (const char* k : {"case", "r1", "r2", "mode", "n", "rounding"})
            if (req.contains(k)) tables_req[k] = req.at(k);
        const auto t = parse_tables(tables_req);
        const auto strategy = parse_strategy(detail::text(req, "strategy", "optimal"));
        sc.counts = allocation_tables(t.design.design_case, t.design.mode, t.n, t.rounding).get(strategy);
    }
    sc.mu0 = detail::number(req, "mu0", 0.0);
    if (req.contains("theta")) {
        const auto& th = req.at("theta");
        if (th.is_number()) {
            sc.theta = {th.get<double>(), th.get<double>()};
        } else if (th.is_array() && th.size() == 2 && th[0].is_number() && th[1].is_number()) {
            sc.theta = {th[0].get<double>(), th[1].get<double>()};
        } else {
            throw ValidationError("theta must be a number or a pair of numbers");
        }
    }
    sc.sigma = detail::number(req, "sigma", 1.0);
    if (req.contains("trend")) sc.trend = parse_trend(req.at("trend"));
    sc.alpha = detail::number(req, "alpha", 0.025);
    sc.level = detail::number(req, "level", 0.95);
    const auto inference = detail::text(req, "inference", "t");
    if (inference == "t") sc.inference = Inference::StudentT;
    else if (inference == "z") sc.inference = Inference::KnownSigma;
    else throw ValidationError("inference must be t or z");
    sc.validate();
    out.reps = detail::integer(req, "reps", 10'000);
    if (out.reps < 1) throw ValidationError("reps must be at least 1");
    const auto seed = detail::integer(req, "seed", static_cast<std::int64_t>(kDefaultSeed));
    if (seed < 0) throw ValidationError("seed must be non-negative");
    out.seed = static_cast<std::uint64_t>(seed);
    return out;
}

inline json summary_json(const SimulateRequest& r, const SimulationSummary& s) {
    const auto& sc = r.scenario;
    json arms = json::array();
    for (int a = 0; a < 2; ++a) {
        const auto& x = s.arms[a];
        arms.push_back({{"arm", a + 1},
                        {"rejection_rate", x.rejection_rate},
                        {"mc_se", x.mc_se},
                        {"ci_width_mean", x.ci_width_mean},
                        {"estimate_mean", x.estimate_mean},
                        {"estimate_sd", x.estimate_sd},
                        {"se_mean", x.se_mean}});
    }
    return {{"reps", s.reps},
            {"seed", s.seed},
            {"mode", to_string(sc.mode)},
            {"inference", sc.inference == Inference::StudentT ? "t" : "z"},
            {"counts", detail::counts_json(sc.counts)},
            {"mu0", sc.mu0},
            {"theta", sc.theta},
            {"sigma", sc.sigma},
            {"trend", trend_json(sc.trend)},
            {"alpha", sc.alpha},
            {"level", sc.level},
            {"arms", arms}};
}

inline json run_simulate(const json& req, unsigned threads = 1,
                         const std::function<void(std::int64_t)>& progress = {},
                         std::int64_t max_reps = 0) {
    const auto r = parse_simulate(req);
    if (max_reps > 0 && r.reps > max_reps)
        throw ValidationError("reps exceeds the per-request cap of " + std::to_string(max_reps));
    return summary_json(r, run_simulation(r.scenario, r.reps, r.seed, threads, progress));
}

// ---------------------------------------------------------------- csv

inline std::string solve_csv(const json& doc) {
    std::ostringstream out;
    out << "regime,mode,r1,r2,r3,p01,p11,p02,p12,p22,p03,p23,var1,var2,max_var,ratio_vs_separate,"
           "equal_variance_gap\n";
    const auto& plan = doc.at("plan");
    const auto& v = doc.at("variances");
    out << doc.at("regime").get<std::string>() << ',' << doc.at("mode").get<std::string>();
    for (int s = 0; s < kPeriods; ++s) out << ',' << detail::num6(plan.at("r")[s]);
    out << ',' << detail::num6(plan["p"][0][0]) << ',' << detail::num6(plan["p"][0][1]);
    out << ',' << detail::num6(plan["p"][1][0]) << ',' << detail::num6(plan["p"][1][1]) << ','
        << detail::num6(plan["p"][1][2]);
    out << ',' << detail::num6(plan["p"][2][0]) << ',' << detail::num6(plan["p"][2][2]);
    for (const char* k : {"var1", "var2", "max_var", "ratio_vs_separate"})
        out << ',' << detail::num17(v.at(k));
    out << ',' << detail::num17(doc.at("equal_variance_gap")) << '\n';
    return out.str();
}

inline std::string curve_csv(const json& doc) {
    std::ostringstream out;
    out << "mode,r2,p02,p12,p22,max_var,ratio_vs_separate,regime\n";
    for (const auto& [mode, rows] : doc.at("curves").items())
        for (const auto& row : rows)
            out << mode << ',' << detail::num6(row.at("r2")) << ',' << detail::num6(row.at("p02")) << ','
                << detail::num6(row.at("p12")) << ',' << detail::num6(row.at("p22")) << ','
                << detail::num17(row.at("max_var")) << ',' << detail::num17(row.at("ratio_vs_separate"))
                << ',' << row.at("regime").get<std::string>() << '\n';
    return out.str();
}

inline std::string tables_csv(const json& doc) {
    std::ostringstream out;
    out << "strategy,arm,period1,period2,period3\n";
    for (auto s : {Strategy::OneToOne, Strategy::SqrtK, Strategy::Optimal}) {
        const auto& counts = doc.at("strategies").at(to_string(s)).at("counts");
        for (const char* arm : {"control", "arm1", "arm2"}) {
            const auto& row = counts.at(arm);
            out << to_string(s) << ',' << arm << ',' << row[0].get<int>() << ',' << row[1].get<int>()
                << ',' << row[2].get<int>() << '\n';
        }
    }
    return out.str();
}

inline std::string simulate_csv(const json& doc) {
    std::ostringstream out;
    out << "arm,reps,seed,rejection_rate,mc_se,ci_width_mean,estimate_mean,estimate_sd,se_mean\n";
    for (const auto& a : doc.at("arms")) {
        out << a.at("arm").get<int>() << ',' << doc.at("reps").get<std::int64_t>() << ','
            << doc.at("seed").get<std::uint64_t>();
        for (const char* k : {"rejection_rate", "mc_se", "ci_width_mean", "estimate_mean", "estimate_sd",
                              "se_mean"})
            out << ',' << detail::num17(a.at(k));
        out << '\n';
    }
    return out.str();
}

inline std::string to_csv(const std::string& command, const json& doc) {
    if (command == "solve") return solve_csv(doc);
    if (command == "curve") return curve_csv(doc);
    if (command == "tables") return tables_csv(doc);
    if (command == "simulate") return simulate_csv(doc);
    throw ValidationError("no CSV form for '" + command + "'");
}

/// Canonical text of a response: pretty JSON or CSV, newline-terminated.
inline std::string render(const std::string& command, const json& doc, const std::string& format) {
    if (format == "json") return doc.dump(2) + "\n";
    if (format == "csv") return to_csv(command, doc);
    throw ValidationError("unknown format '" + format + "' (expected json|csv)");
}

/// Query-string values become numbers when they parse completely as one.
inline json value_from_text(const std::string& s) {
    if (!s.empty()) {
        std::size_t used = 0;
        try {
            const double v = std::stod(s, &used);
            if (used == s.size()) {
                if (v == std::floor(v) && std::abs(v) < 9.0e15 &&
                    s.find_first_of(".eE") == std::string::npos)
                    return static_cast<std::int64_t>(v);
                return v;
            }
        } catch (const std::exception&) {
        }
    }
    return s;
}

inline json request_from_query(const std::multimap<std::string, std::string>& params,
                               const std::set<std::string>& ignore = {"format", "stream"}) {
    json req = json::object();
    for (const auto& [key, value] : params) {
        if (ignore.count(key)) continue;
        if (req.contains(key)) throw ValidationError("duplicate query parameter '" + key + "'");
        req[key] = value_from_text(value);
    }
    return req;
}

}  // namespace platalloc::service
