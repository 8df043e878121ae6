#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "errors.hpp"

/*
 * Structural types of a three-period platform trial with a shared control and
 * the closed-form variances of the period-stratified effect estimators.
 *
 * Periods and arms are zero-based in code: period 0 recruits {control, arm 1},
 * period 1 recruits {control, arm 1, arm 2}, period 2 recruits {control, arm 2}.
 * Arm index 0 is the control.
 */
namespace platalloc {

inline constexpr int kPeriods = 3;
inline constexpr int kArms = 3;

enum class Arm : int { One = 1, Two = 2 };

enum class AnalysisMode { ConcurrentOnly, WithNonConcurrent };

inline std::string to_string(AnalysisMode mode) {
    return mode == AnalysisMode::ConcurrentOnly ? "cc" : "ncc";
}

inline AnalysisMode parse_mode(const std::string& s) {
    if (s == "cc") return AnalysisMode::ConcurrentOnly;
    if (s == "ncc") return AnalysisMode::WithNonConcurrent;
    throw ValidationError("unknown analysis mode '" + s + "' (expected cc|ncc)");
}

/// The two periods in which an experimental arm recruits.
constexpr std::array<int, 2> arm_periods(Arm arm) {
    return arm == Arm::One ? std::array<int, 2>{0, 1} : std::array<int, 2>{1, 2};
}

/// Integer sample sizes, counts[period][arm].
using CountTable = std::array<std::array<int, kArms>, kPeriods>;

/// Period fractions r[s] = N_s / N and allocation proportions p[s][i].
struct AllocationPlan {
    std::array<double, kPeriods> r{};
    std::array<std::array<double, kArms>, kPeriods> p{};

    friend bool operator==(const AllocationPlan&, const AllocationPlan&) = default;
};

struct TrialParams {
    double total_n = 1.0;
    double sigma = 1.0;

    void validate() const {
        if (!(total_n >= 1.0) || !std::isfinite(total_n))
            throw ValidationError("total_n must be >= 1");
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw ValidationError("sigma must be positive");
    }
};

struct VarianceProfile {
    double var1 = 0.0;
    double var2 = 0.0;
    double max_var = 0.0;
    double ratio_vs_separate = 0.0;
};

inline constexpr double kPlanTol = 1e-9;

inline void validate(const AllocationPlan& plan) {
    double rsum = 0.0;
    for (int s = 0; s < kPeriods; ++s) {
        const double r = plan.r[s];
        if (!(r >= -kPlanTol && r <= 1.0 + kPlanTol))
            throw ValidationError("period fraction r[" + std::to_string(s + 1) + "] outside [0,1]");
        rsum += r;
        double psum = 0.0;
        for (int i = 0; i < kArms; ++i) {
            const double p = plan.p[s][i];
            if (!(p >= -kPlanTol && p <= 1.0 + kPlanTol))
                throw ValidationError("allocation proportion outside [0,1] in period " +
                                      std::to_string(s + 1));
            psum += p;
        }
        if (r > 0.0 && std::abs(psum - 1.0) > kPlanTol)
            throw ValidationError("allocation proportions of period " + std::to_string(s + 1) +
                                  " do not sum to 1");
        if (r == 0.0 && psum != 0.0)
            throw ValidationError("period " + std::to_string(s + 1) +
                                  " is empty but carries allocation proportions");
    }
    if (std::abs(rsum - 1.0) > kPlanTol) throw ValidationError("period fractions do not sum to 1");
    if (plan.p[0][2] != 0.0) throw ValidationError("arm 2 cannot recruit in period 1");
    if (plan.p[2][1] != 0.0) throw ValidationError("arm 1 cannot recruit in period 3");
}

/// Builds a plan, zeroing the proportions of empty periods, and validates it.
inline AllocationPlan make_plan(const std::array<double, kPeriods>& r,
                                const std::array<std::array<double, kArms>, kPeriods>& p) {
    AllocationPlan plan{r, p};
    for (int s = 0; s < kPeriods; ++s)
        if (plan.r[s] == 0.0) plan.p[s] = {0.0, 0.0, 0.0};
    validate(plan);
    return plan;
}

/// The plan realised by an integer table (fractions of the table total).
inline AllocationPlan plan_from_counts(const CountTable& counts) {
    double total = 0.0;
    std::array<double, kPeriods> ns{};
    for (int s = 0; s < kPeriods; ++s) {
        for (int i = 0; i < kArms; ++i) {
            if (counts[s][i] < 0) throw ValidationError("negative count");
            ns[s] += counts[s][i];
        }
        total += ns[s];
    }
    if (total <= 0.0) throw ValidationError("empty count table");
    AllocationPlan plan;
    for (int s = 0; s < kPeriods; ++s) {
        plan.r[s] = ns[s] / total;
        for (int i = 0; i < kArms; ++i) plan.p[s][i] = ns[s] > 0 ? counts[s][i] / ns[s] : 0.0;
    }
    validate(plan);
    return plan;
}

namespace detail {

// Per-patient information p_a p_0 / (p_a + p_0) of one treatment-control contrast.
inline double pair_information(double p_arm, double p_control) {
    const double sum = p_arm + p_control;
    return sum > 0.0 ? p_arm * p_control / sum : 0.0;
}

inline double to_variance(double information, const TrialParams& params) {
    if (information <= 0.0) return std::numeric_limits<double>::infinity();
    return params.sigma * params.sigma / (params.total_n * information);
}

}  // namespace detail

/// Information of one period for an arm's concurrent contrast, in units of N/sigma^2.
inline double period_information(const AllocationPlan& plan, Arm arm, int period) {
    const int i = static_cast<int>(arm);
    if (plan.r[period] <= 0.0) return 0.0;
    return plan.r[period] * detail::pair_information(plan.p[period][i], plan.p[period][0]);
}

/// The bracket of the concurrent-controls variance: Var = sigma^2 / (N * information).
inline double information_cc(const AllocationPlan& plan, Arm arm) {
    double info = 0.0;
    for (int s : arm_periods(arm)) info += period_information(plan, arm, s);
    return info;
}

inline double var_cc(const AllocationPlan& plan, Arm arm, const TrialParams& params = {}) {
    validate(plan);
    params.validate();
    return detail::to_variance(information_cc(plan, arm), params);
}

/// Inverse-variance weights of the two period-wise contrasts of an arm.
inline std::pair<double, double> weights_cc(const AllocationPlan& plan, Arm arm,
                                            const TrialParams& params = {}) {
    validate(plan);
    params.validate();
    const auto periods = arm_periods(arm);
    const double first = period_information(plan, arm, periods[0]);
    const double second = period_information(plan, arm, periods[1]);
    const double total = first + second;
    if (total <= 0.0) throw EstimandUndefined("estimand undefined: no period with arm and control");
    return {first / total, second / total};
}

/// Bracket of the arm-2 variance when non-concurrent controls enter via the joint model.
inline double information_ncc_arm2(const AllocationPlan& plan) {
    const auto q = [](double x) { return x * (1.0 - x); };
    const auto& [r1, r2, r3] = plan.r;
    const double p11 = plan.p[0][1];
    const double p12 = plan.p[1][1];
    const double p22 = plan.p[1][2];
    const double p23 = plan.p[2][2];
    const double bridge = r1 * q(p11) + r2 * q(p12);
    const double correction = bridge > 0.0 ? r2 * p12 * p12 * p22 * p22 / bridge : 0.0;
    return r3 * q(p23) + r2 * (q(p22) - correction);
}

inline double var_ncc_arm2(const AllocationPlan& plan, const TrialParams& params = {}) {
    validate(plan);
    params.validate();
    const double info = information_ncc_arm2(plan);
    if (info <= 1e-14) {
        const bool allocated = plan.r[1] * plan.p[1][2] > 0.0 || plan.r[2] * plan.p[2][2] > 0.0;
        if (allocated)
            throw DomainError("non-positive information for arm 2 under the joint model");
        return std::numeric_limits<double>::infinity();
    }
    return detail::to_variance(info, params);
}

/// Shrinkage factor of the two-period joint-model estimator of arm 2.
inline double rho_two_period(double n01, double n02, double n11, double n12) {
    if (!(n01 > 0 && n02 > 0 && n11 > 0 && n12 > 0))
        throw ValidationError("rho_two_period requires positive counts");
    return (1.0 / n02) / (1.0 / n01 + 1.0 / n02 + 1.0 / n11 + 1.0 / n12);
}

/// Var of theta2_22 + rho (theta_11 - theta_12) from raw two-period counts.
inline double var_ncc_two_period(double n01, double n02, double n11, double n12, double n22,
                                 double sigma = 1.0) {
    if (!(n22 > 0)) throw ValidationError("var_ncc_two_period requires n22 > 0");
    const double rho = rho_two_period(n01, n02, n11, n12);
    return sigma * sigma * (1.0 / n22 + (1.0 - rho) / n02);
}

/// Information of arm 2 under the requested analysis.
inline double information_arm2(const AllocationPlan& plan, AnalysisMode mode) {
    return mode == AnalysisMode::ConcurrentOnly ? information_cc(plan, Arm::Two)
                                                : information_ncc_arm2(plan);
}

/*
 * Reference for ratio_vs_separate: each experimental arm runs its own 1:1 trial
 * whose size is the arm's column total plus its matched controls. Period-1
 * controls go to arm 1, period-3 controls to arm 2, and shared period-2
 * controls are split in proportion to p12 : p22 (equally when both are zero),
 * so the two reference trials together use exactly N patients.
 */
inline double separate_trials_max_variance(const AllocationPlan& plan,
                                           const TrialParams& params = {}) {
    const auto& p = plan.p;
    const auto& r = plan.r;
    const double arms2 = p[1][1] + p[1][2];
    const double share1 = arms2 > 0.0 ? p[1][1] / arms2 : 0.5;
    const double m1 = r[0] * (p[0][0] + p[0][1]) + r[1] * (p[1][1] + share1 * p[1][0]);
    const double m2 = r[2] * (p[2][0] + p[2][2]) + r[1] * (p[1][2] + (1.0 - share1) * p[1][0]);
    const double worst = std::min(m1, m2);
    if (worst <= 0.0) return std::numeric_limits<double>::infinity();
    return 4.0 * params.sigma * params.sigma / (params.total_n * worst);
}

inline VarianceProfile max_variance(const AllocationPlan& plan, const TrialParams& params = {},
                                    AnalysisMode mode = AnalysisMode::ConcurrentOnly) {
    VarianceProfile out;
    out.var1 = var_cc(plan, Arm::One, params);
    out.var2 = mode == AnalysisMode::ConcurrentOnly ? var_cc(plan, Arm::Two, params)
                                                    : var_ncc_arm2(plan, params);
    out.max_var = std::max(out.var1, out.var2);
    const double reference = separate_trials_max_variance(plan, params);
    out.ratio_vs_separate = out.max_var / reference;
    return out;
}

}  // namespace platalloc
