#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "solver.hpp"

namespace platalloc {

/*
 * How arm counts are obtained from p * N_s inside a period.
 *   LargestRemainder: floors plus largest remainders; each period sums to N_s.
 *   Nearest: each cell rounded half-up independently. This is the convention
 *            of the published case-study tables (e.g. 31 patients split 1:1
 *            become 16 + 16), so period rows may exceed N_s by a patient.
 * Period totals N_s are always apportioned by largest remainder and sum to N.
 */
enum class CellRounding { LargestRemainder, Nearest };

inline std::string to_string(CellRounding rounding) {
    return rounding == CellRounding::Nearest ? "nearest" : "largest-remainder";
}

inline CellRounding parse_rounding(const std::string& s) {
    if (s == "nearest") return CellRounding::Nearest;
    if (s == "largest-remainder") return CellRounding::LargestRemainder;
    throw ValidationError("unknown rounding '" + s + "' (expected nearest|largest-remainder)");
}

enum class Strategy { OneToOne, SqrtK, Optimal };

inline std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::OneToOne: return "one_to_one";
        case Strategy::SqrtK: return "sqrt_k";
        case Strategy::Optimal: return "optimal";
    }
    return "optimal";
}

inline Strategy parse_strategy(const std::string& s) {
    for (Strategy v : {Strategy::OneToOne, Strategy::SqrtK, Strategy::Optimal})
        if (to_string(v) == s) return v;
    throw ValidationError("unknown strategy '" + s + "' (expected one_to_one|sqrt_k|optimal)");
}

namespace detail {

inline constexpr double kRoundTol = 1e-9;

// Apportions `total` over `shares` (already scaled to sum to total). Cells with
// zero share never receive a unit; remainder ties within kRoundTol go to the
// earlier entry of `priority`.
template <std::size_t K>
std::array<int, K> largest_remainder(const std::array<double, K>& shares, int total,
                                     const std::array<int, K>& priority) {
    std::array<int, K> out{};
    std::array<double, K> rem{};
    int assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
        out[k] = static_cast<int>(std::floor(shares[k] + kRoundTol));
        rem[k] = shares[k] - out[k];
        assigned += out[k];
    }
    std::vector<int> order(priority.begin(), priority.end());
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return rem[a] > rem[b] + kRoundTol; });
    for (int k : order) {
        if (assigned >= total) break;
        if (shares[k] <= 0.0) continue;
        ++out[k];
        ++assigned;
    }
    return out;
}

}  // namespace detail

/// Period totals N_s by largest remainder on r * N; ties favour periods 1, 3, 2.
inline std::array<int, kPeriods> round_period_totals(const std::array<double, kPeriods>& r,
                                                     int total_n) {
    std::array<double, kPeriods> shares{};
    for (int s = 0; s < kPeriods; ++s) shares[s] = r[s] * total_n;
    return detail::largest_remainder(shares, total_n, {0, 2, 1});
}

inline int active_cells(const AllocationPlan& plan) {
    int n = 0;
    for (int s = 0; s < kPeriods; ++s)
        for (int i = 0; i < kArms; ++i) n += plan.r[s] > 0.0 && plan.p[s][i] > 0.0;
    return n;
}

/// Integer table counts[period][arm] realising `plan` with `total_n` patients.
inline CountTable round_allocation(const AllocationPlan& plan, int total_n,
                                   CellRounding rounding = CellRounding::LargestRemainder) {
    validate(plan);
    if (total_n < active_cells(plan))
        throw ValidationError("total_n is smaller than the number of active arm-period cells");
    const auto totals = round_period_totals(plan.r, total_n);
    CountTable counts{};
    for (int s = 0; s < kPeriods; ++s) {
        std::array<double, kArms> shares{};
        for (int i = 0; i < kArms; ++i) shares[i] = plan.p[s][i] * totals[s];
        if (rounding == CellRounding::LargestRemainder) {
            counts[s] = detail::largest_remainder(shares, totals[s], {0, 1, 2});
        } else {
            for (int i = 0; i < kArms; ++i)
                counts[s][i] = static_cast<int>(std::floor(shares[i] + 0.5 + detail::kRoundTol));
        }
    }
    return counts;
}

/// Fixed-rule plans on given period fractions: equal split among active arms,
/// or sqrt(2) weight for the control while both experimental arms recruit.
inline AllocationPlan strategy_plan(Strategy strategy, const std::array<double, kPeriods>& r) {
    if (strategy == Strategy::Optimal)
        throw ValidationError("the optimal strategy needs the solver, not a fixed rule");
    const double third = 1.0 / 3.0;
    const double sqrt2 = std::sqrt(2.0);
    const std::array<double, kArms> period2 =
        strategy == Strategy::OneToOne
            ? std::array<double, kArms>{third, third, third}
            : std::array<double, kArms>{sqrt2 / (2 + sqrt2), 1 / (2 + sqrt2), 1 / (2 + sqrt2)};
    return make_plan(r, {{{0.5, 0.5, 0.0}, period2, {0.5, 0.0, 0.5}}});
}

inline int table_total(const CountTable& counts) {
    int n = 0;
    for (const auto& row : counts) n += std::accumulate(row.begin(), row.end(), 0);
    return n;
}

struct StrategyTables {
    std::array<int, kPeriods> period_totals{};
    CountTable one_to_one{};
    CountTable sqrt_k{};
    CountTable optimal{};
    OptimalDesign optimal_design;  // solved at the realised period fractions

    const CountTable& get(Strategy s) const {
        return s == Strategy::OneToOne ? one_to_one : s == Strategy::SqrtK ? sqrt_k : optimal;
    }
};

/*
 * Sample-size tables for the three allocation strategies. Period sizes come
 * from the case (fixed fractions, or the optimum's fractions when free) and
 * are rounded first; the optimal allocation is then re-solved at the realised
 * fractions N_s / N before the cells are rounded.
 */
inline StrategyTables allocation_tables(const DesignCase& design_case, AnalysisMode mode,
                                        int total_n,
                                        CellRounding rounding = CellRounding::Nearest,
                                        const SolverSettings& settings = {}) {
    if (total_n < 1) throw ValidationError("total_n must be positive");
    std::array<double, kPeriods> r{};
    if (const auto* fixed = std::get_if<FixedR1R2>(&design_case)) {
        validate(design_case);
        r = {fixed->r1, fixed->r2, detail::remaining_fraction(fixed->r1, fixed->r2)};
    } else {
        r = solve(design_case, mode, settings).plan.r;
    }
    StrategyTables out;
    out.period_totals = round_period_totals(r, total_n);
    const double n = total_n;
    const std::array<double, kPeriods> realised{out.period_totals[0] / n,
                                                out.period_totals[1] / n,
                                                out.period_totals[2] / n};
    out.optimal_design = solve(FixedR1R2{realised[0], realised[1]}, mode, settings,
                               {static_cast<double>(total_n), 1.0});
    out.one_to_one = round_allocation(strategy_plan(Strategy::OneToOne, realised), total_n, rounding);
    out.sqrt_k = round_allocation(strategy_plan(Strategy::SqrtK, realised), total_n, rounding);
    out.optimal = round_allocation(out.optimal_design.plan, total_n, rounding);
    return out;
}

}  // namespace platalloc
