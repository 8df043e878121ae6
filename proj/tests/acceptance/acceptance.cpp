// One PASS/FAIL line per acceptance criterion. Exit status is non-zero if any fails.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "platalloc/platalloc.hpp"

using namespace platalloc;

namespace {

constexpr auto CC = AnalysisMode::ConcurrentOnly;
constexpr auto NCC = AnalysisMode::WithNonConcurrent;

// Tolerances.
constexpr double kCase1Tol = 1e-10;
constexpr double kIdentityTol = 1e-12;
constexpr double kOracleStep = 1e-3;
constexpr double kOracleTol = 3e-3;
constexpr double kGapTol = 1e-10;
constexpr double kEstimatorTol = 1e-10;
constexpr double kVarianceTol = 1e-8;
constexpr double kPowerTol = 0.005;
constexpr double kWidthTol = 0.01;
constexpr double kDominanceTol = 1e-12;
constexpr std::int64_t kReps = 100000;
constexpr std::uint64_t kSeed = 20240101;
constexpr int kN = 92;

struct Outcome {
    bool pass = true;
    std::string detail;
};

const unsigned kThreads = std::max(1u, std::thread::hardware_concurrency());

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double max_period2_dev(const OptimalDesign& a, const OptimalDesign& b) {
    double d = 0.0;
    for (int i = 0; i < 3; ++i) d = std::max(d, std::abs(a.plan.p[1][i] - b.plan.p[1][i]));
    return d;
}

Outcome case1_closed_form() {
    const double p0 = 1 / (1 + std::sqrt(2.0)), pk = 1 - 1 / std::sqrt(2.0);
    double dev = 0.0;
    for (auto mode : {CC, NCC}) {
        const auto d = solve(Unrestricted{}, mode);
        dev = std::max({dev, std::abs(d.plan.p[1][0] - p0), std::abs(d.plan.p[1][1] - pk),
                        std::abs(d.plan.p[1][2] - pk), std::abs(d.plan.r[1] - 1.0)});
    }
    return {dev <= kCase1Tol, fmt("max deviation %.2e (tol %.0e)", dev, kCase1Tol)};
}

Outcome lagrange_identity() {
    const double dev = std::abs(lagrange_ratio_rhs(1 - 1 / std::sqrt(2.0)) - 1.0);
    return {dev <= kIdentityTol, fmt("|rhs - 1| = %.2e (tol %.0e)", dev, kIdentityTol)};
}

Outcome oracle_equivalence() {
    struct Setting {
        double r1, r2;
        AnalysisMode mode;
    };
    const Setting settings[] = {
        {0.25, 0.75, CC},  {1.0 / 3, 4.0 / 9, CC}, {0.3, 0.5, CC},        {0.1, 0.6, CC},
        {0.6, 0.3, CC},    {0.2, 0.2, CC},         {0.25, 0.75, NCC},     {0.4, 0.6, NCC},
        {1.0 / 3, 1.0 / 3, NCC}, {0.25, 0.2525, NCC}, {0.6, 0.3, NCC},    {0.2, 0.25, NCC},
    };
    Outcome out;
    double worst = 0.0, worst_raw = 0.0, worst_gap = 0.0;
    int interior = 0;
    for (const auto& s : settings) {
        const auto d = solve(FixedR1R2{s.r1, s.r2}, s.mode);
        const auto raw = oracle_grid_search(FixedR1R2{s.r1, s.r2}, s.mode, kOracleStep);
        const auto polished = oracle_grid_search(FixedR1R2{s.r1, s.r2}, s.mode, kOracleStep, {}, true);
        const double dev = max_period2_dev(d, polished);
        worst = std::max(worst, dev);
        worst_raw = std::max(worst_raw, max_period2_dev(d, raw));
        if (dev > kOracleTol) {
            out.pass = false;
            out.detail += fmt("[r=(%.4f,%.4f) %s dev %.2e] ", s.r1, s.r2, to_string(s.mode).c_str(), dev);
        }
        if (raw.profile.max_var < d.profile.max_var * (1 - 1e-12)) {
            out.pass = false;
            out.detail += fmt("[grid beats solver at r=(%.4f,%.4f)] ", s.r1, s.r2);
        }
        if (d.regime == Regime::Interior) {
            ++interior;
            const double gap = equal_variance_gap(d.profile);
            worst_gap = std::max(worst_gap, gap);
            if (gap > kGapTol) out.pass = false;
        }
    }
    out.detail += fmt("12 settings, max deviation %.2e after polish (raw step-%.0e grid %.2e; tol %.0e), "
                      "%d interior with max gap %.2e (tol %.0e)",
                      worst, kOracleStep, worst_raw, kOracleTol, interior, worst_gap, kGapTol);
    return out;
}

Outcome estimator_equivalence() {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> eps(0, 1);
    double worst_est = 0.0, worst_var = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto c = oracle::random_counts(rng, 2, 30);
        TrialDataset data;
        const double shift[3] = {0, 0.8, -0.5}, mean[3] = {1, 1.3, 0.4};
        int index = 0;
        for (int s = 0; s < 3; ++s)
            for (int arm = 0; arm < 3; ++arm)
                for (int j = 0; j < c[s][arm]; ++j)
                    data.records.push_back({++index, s + 1, arm, mean[arm] + shift[s] + eps(rng)});
        for (Arm arm : {Arm::One, Arm::Two}) {
            const auto fit = fit_model(data, ModelSpec::for_arm(arm, CC));
            worst_est = std::max(worst_est, oracle::relative_error(fit.estimate, stratified_estimate(data, arm).estimate));
        }
        const auto d = build_design(data, ModelSpec::arm2_joint());
        const double cov = unscaled_covariance(d.x, d.columns)(d.target_column, d.target_column);
        const double closed = var_ncc_arm2(plan_from_counts(c), {static_cast<double>(index), 1.0});
        worst_var = std::max(worst_var, oracle::relative_error(cov, closed));
    }
    return {worst_est <= kEstimatorTol && worst_var <= kVarianceTol,
            fmt("100 datasets: estimate rel. err %.2e (tol %.0e), joint-model variance rel. err %.2e (tol %.0e)",
                worst_est, kEstimatorTol, worst_var, kVarianceTol)};
}

struct PublishedRow {
    const char* name;
    double r1, r2;
    Strategy strategy;
    double power[2], width[2];
};

SimulationScenario scenario(const CountTable& counts, double theta) {
    SimulationScenario sc;
    sc.counts = counts;
    sc.mu0 = 4.94;
    sc.theta = {theta, theta};
    sc.sigma = 1.0;
    sc.alpha = 0.025;
    sc.mode = CC;
    return sc;
}

Outcome power_table() {
    const PublishedRow rows[] = {
        {"1-period opt", 0.0, 1.0, Strategy::Optimal, {0.805, 0.805}, {1.100, 1.100}},
        {"2-period one", 0.25, 0.75, Strategy::OneToOne, {0.844, 0.671}, {1.006, 1.006}},
        {"2-period opt", 0.25, 0.75, Strategy::Optimal, {0.772, 0.757}, {0.998, 0.998}},
        {"2-period sqrt", 0.25, 0.75, Strategy::SqrtK, {0.851, 0.681}, {0.997, 0.997}},
        {"3-period equal opt", 1.0 / 3, 1.0 / 3, Strategy::Optimal, {0.725, 0.724}, {1.085, 1.096}},
        {"3-period unequal opt", 1.0 / 3, 4.0 / 9, Strategy::Optimal, {0.737, 0.730}, {1.038, 1.055}},
    };
    Outcome out;
    for (const auto& row : rows) {
        const auto tables = allocation_tables(FixedR1R2{row.r1, row.r2}, CC, kN);
        const auto s = run_simulation(scenario(tables.get(row.strategy), 0.72), kReps, kSeed, kThreads);
        bool power_ok = true, width_ok = true;
        for (int k = 0; k < 2; ++k) {
            power_ok &= std::abs(s.arms[k].rejection_rate - row.power[k]) <= kPowerTol;
            width_ok &= std::abs(s.arms[k].ci_width_mean - row.width[k]) <= kWidthTol;
        }
        out.pass &= power_ok && width_ok;
        out.detail += fmt("[%s: power %.4f/%.4f vs %.3f/%.3f %s, width %.4f/%.4f vs %.3f/%.3f %s] ", row.name,
                          s.arms[0].rejection_rate, s.arms[1].rejection_rate, row.power[0], row.power[1],
                          power_ok ? "ok" : "MISS", s.arms[0].ci_width_mean, s.arms[1].ci_width_mean, row.width[0],
                          row.width[1], width_ok ? "ok" : "MISS");
    }
    out.detail += fmt("(reps %lld, tol power %.3f, width %.2f)", static_cast<long long>(kReps), kPowerTol, kWidthTol);
    return out;
}

Outcome sample_size_tables() {
    // Published counts as {control, arm 1, arm 2} rows over the three periods.
    using Rows = std::array<std::array<int, 3>, 3>;
    struct Expected {
        double r1, r2;
        Strategy strategy;
        Rows rows;
    };
    const Expected expected[] = {
        {1.0 / 3, 1.0 / 3, Strategy::OneToOne, {{{16, 10, 16}, {16, 10, 0}, {0, 10, 16}}}},
        {1.0 / 3, 1.0 / 3, Strategy::SqrtK, {{{16, 12, 16}, {16, 9, 0}, {0, 9, 16}}}},
        {1.0 / 3, 1.0 / 3, Strategy::Optimal, {{{16, 12, 16}, {16, 9, 0}, {0, 9, 16}}}},
        {1.0 / 3, 4.0 / 9, Strategy::OneToOne, {{{16, 14, 10}, {16, 14, 0}, {0, 14, 10}}}},
        {1.0 / 3, 4.0 / 9, Strategy::SqrtK, {{{16, 17, 10}, {16, 12, 0}, {0, 12, 10}}}},
        {1.0 / 3, 4.0 / 9, Strategy::Optimal, {{{16, 17, 10}, {16, 8, 0}, {0, 16, 10}}}},
    };
    int mismatches = 0;
    for (const auto& e : expected) {
        const auto c = allocation_tables(FixedR1R2{e.r1, e.r2}, CC, kN).get(e.strategy);
        for (int arm = 0; arm < 3; ++arm)
            for (int s = 0; s < 3; ++s) mismatches += c[s][arm] != e.rows[arm][s];
    }
    return {mismatches == 0, fmt("6 tables x 9 cells at N=%d, %d mismatching cells", kN, mismatches)};
}

Outcome type1_error() {
    const struct {
        const char* name;
        double r1, r2;
    } designs[] = {{"1-period", 0.0, 1.0}, {"2-period", 0.25, 0.75}, {"3-period equal", 1.0 / 3, 1.0 / 3},
                   {"3-period unequal", 1.0 / 3, 4.0 / 9}};
    const Trend trends[] = {Trend::none(), Trend::step({0.0, 0.5, 1.0}), Trend::linear(1.0)};
    Outcome out;
    int runs = 0;
    double lo = 1.0, hi = 0.0;
    for (const auto& d : designs) {
        const auto tables = allocation_tables(FixedR1R2{d.r1, d.r2}, CC, kN);
        for (auto strategy : {Strategy::OneToOne, Strategy::SqrtK, Strategy::Optimal})
            for (const auto& trend : trends) {
                auto sc = scenario(tables.get(strategy), 0.0);
                sc.trend = trend;
                const auto s = run_simulation(sc, kReps, kSeed + static_cast<std::uint64_t>(runs), kThreads);
                ++runs;
                for (int k = 0; k < 2; ++k) {
                    const double rate = s.arms[k].rejection_rate;
                    lo = std::min(lo, rate);
                    hi = std::max(hi, rate);
                    if (std::abs(rate - sc.alpha) > 3 * s.arms[k].mc_se) {
                        out.pass = false;
                        out.detail += fmt("[%s %s %s arm %d: %.4f +- %.4f] ", d.name, to_string(strategy).c_str(),
                                          to_string(trend.kind).c_str(), k + 1, rate, s.arms[k].mc_se);
                    }
                }
            }
    }
    out.detail += fmt("%d design/strategy/trend runs x 2 arms, rates in [%.4f, %.4f], reps %lld", runs, lo, hi,
                      static_cast<long long>(kReps));
    return out;
}

Outcome ncc_dominance() {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    int violations = 0, plans = 0, zero_p12 = 0;
    for (; plans < 400; ++plans) {
        const double a = u(rng), b = u(rng), c = u(rng);
        const double r1 = a / (a + b + c), r2 = b / (a + b + c);
        double p0 = u(rng), p1 = plans % 4 == 0 ? 0.0 : u(rng), p2 = u(rng);
        const double t = p0 + p1 + p2;
        p0 /= t, p1 /= t, p2 /= t;
        zero_p12 += p1 == 0.0;
        const auto plan = make_plan({r1, r2, 1 - r1 - r2}, {{{0.5, 0.5, 0}, {p0, p1, p2}, {0.5, 0, 0.5}}});
        const TrialParams params{100.0, 1.0};
        const double ncc = var_ncc_arm2(plan, params), cc = var_cc(plan, Arm::Two, params);
        const bool equal = std::abs(ncc - cc) <= kDominanceTol * cc;
        if (ncc > cc + kDominanceTol || equal != (p1 == 0.0)) ++violations;
    }
    return {violations == 0, fmt("%d random plans (%d with p12 = 0), %d violations", plans, zero_p12, violations)};
}

Outcome sample_size_inversion() {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.05, 0.6);
    const DesignCase cases[] = {Unrestricted{}, FixedR1{0.25}, FixedR1R2{1.0 / 3, 4.0 / 9}, FixedR1R2{0.6, 0.2},
                                FixedR1{0.45}};
    int failures = 0;
    for (int k = 0; k < 20; ++k) {
        const auto& c = cases[k % 5];
        const auto mode = k % 2 ? NCC : CC;
        const double target = u(rng), sigma = 0.5 + u(rng);
        const auto n = min_sample_size(target, c, mode, sigma);
        const auto max_se = [&](std::int64_t size) {
            return std::sqrt(solve(c, mode, {}, {static_cast<double>(size), sigma}).profile.max_var);
        };
        if (max_se(n) > target || (n > 1 && max_se(n - 1) <= target)) ++failures;
    }
    return {failures == 0, fmt("20 random targets, %d failures", failures)};
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"case1-closed-form", case1_closed_form},
        {"lagrange-symmetric-identity", lagrange_identity},
        {"oracle-equivalence", oracle_equivalence},
        {"estimator-equivalence", estimator_equivalence},
        {"power-table-reproduction", power_table},
        {"sample-size-tables", sample_size_tables},
        {"type1-error-control", type1_error},
        {"ncc-dominance", ncc_dominance},
        {"min-sample-size-inversion", sample_size_inversion},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
    return failed ? 1 : 0;
}
