#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "errors.hpp"
#include "model.hpp"

/*
 * Minimax-variance allocation for the three-period platform trial.
 *
 * Periods 1 and 3 always use equal allocation at the optimum (each proportion
 * only enters one variance through p(1-p)), so every solver here searches over
 * the period-2 proportions and, depending on the case, the period fractions.
 */
namespace platalloc {

enum class Regime { Interior, SeparateTrials, AllToArm1, MultiArm };

inline std::string to_string(Regime regime) {
    switch (regime) {
        case Regime::Interior: return "Interior";
        case Regime::SeparateTrials: return "SeparateTrials";
        case Regime::AllToArm1: return "AllToArm1";
        case Regime::MultiArm: return "MultiArm";
    }
    return "Interior";
}

inline Regime parse_regime(const std::string& s) {
    for (Regime r : {Regime::Interior, Regime::SeparateTrials, Regime::AllToArm1, Regime::MultiArm})
        if (to_string(r) == s) return r;
    throw ValidationError("unknown regime '" + s + "'");
}

struct Unrestricted {};
struct FixedR1 {
    double r1 = 0.0;
};
struct FixedR1R2 {
    double r1 = 0.0;
    double r2 = 0.0;
};
using DesignCase = std::variant<Unrestricted, FixedR1, FixedR1R2>;

struct SolverSettings {
    double root_tol = 1e-12;
    double constraint_tol = 1e-10;
    int max_iter = 200;

    void validate() const {
        if (!(root_tol > 0) || !(constraint_tol > 0) || max_iter < 10)
            throw ValidationError("solver settings must be positive with max_iter >= 10");
    }
};

struct OptimalDesign {
    AllocationPlan plan;
    VarianceProfile profile;
    Regime regime = Regime::Interior;
    AnalysisMode mode = AnalysisMode::ConcurrentOnly;
};

/// Relative gap |var1 - var2| / max_var; the equal-variance certificate.
inline double equal_variance_gap(const VarianceProfile& profile) {
    if (!std::isfinite(profile.max_var)) return std::numeric_limits<double>::infinity();
    return std::abs(profile.var1 - profile.var2) / profile.max_var;
}

namespace detail {

inline constexpr double kSqrt2 = 1.41421356237309504880;

inline void check_fraction(double r, const char* name) {
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0,1]");
}

inline void check_fractions(double r1, double r2) {
    check_fraction(r1, "r1");
    check_fraction(r2, "r2");
    if (r1 + r2 > 1.0 + 1e-12) throw ValidationError("r1 + r2 must not exceed 1");
}

// Period-3 fraction, with floating residue of r1 + r2 = 1 snapped to zero.
inline double remaining_fraction(double r1, double r2) {
    const double r3 = 1.0 - r1 - r2;
    return r3 < 1e-12 ? 0.0 : r3;
}

inline AllocationPlan period2_plan(double r1, double r2, double p02, double p12, double p22) {
    const double r3 = remaining_fraction(r1, r2);
    return make_plan({r1, r2, r3},
                     {{{0.5, 0.5, 0.0}, {std::max(0.0, p02), p12, p22}, {0.5, 0.0, 0.5}}});
}

inline OptimalDesign finish(const AllocationPlan& plan, Regime regime, AnalysisMode mode,
                            const TrialParams& params) {
    return {plan, max_variance(plan, params, mode), regime, mode};
}

inline OptimalDesign separate_trials(double r1, double r2, AnalysisMode mode,
                                     const TrialParams& params) {
    return finish(period2_plan(r1, r2, 0.5, 0.0, 0.5), Regime::SeparateTrials, mode, params);
}

inline OptimalDesign all_to_arm1(double r1, double r2, AnalysisMode mode,
                                 const TrialParams& params) {
    return finish(period2_plan(r1, r2, 0.5, 0.5, 0.0), Regime::AllToArm1, mode, params);
}

// When the boundary regimes coincide, keep the smaller max variance; ties go to SeparateTrials.
inline OptimalDesign pick_boundary(const OptimalDesign& separate, const OptimalDesign& arm1) {
    return arm1.profile.max_var < separate.profile.max_var ? arm1 : separate;
}

// Root of f on [lo, hi] given a sign change; endpoints that are exact roots are returned as is.
template <class F>
double bracketed_root(F f, double lo, double hi, double flo, double fhi, double tol,
                      int max_iter) {
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo < 0) == (fhi < 0)) {
        std::ostringstream msg;
        msg << "no sign change in bracket [" << lo << ", " << hi << "]: f(lo)=" << flo
            << ", f(hi)=" << fhi;
        throw SolverFailure(msg.str());
    }
    boost::uintmax_t iters = static_cast<boost::uintmax_t>(max_iter);
    const auto done = [tol](double a, double b) { return std::abs(b - a) <= tol; };
    const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, done, iters);
    return 0.5 * (a + b);
}

}  // namespace detail

/// Right-hand side of the Lagrange condition for p22 (pole at p22 = 1/2).
inline double lagrange_ratio_rhs(double p22) {
    const double x = p22;
    const double poly = x * (x * (x * (2 * x * (2 * x - 7) + 19) - 15) + 7) - 2;
    return std::pow(1.0 - x, 3) / ((2 * x - 1) * poly);
}

/// Control share in period 2 from the stationarity condition, given p22.
inline double lagrange_control_share(double p22) { return 1.0 / (2.0 * (1.0 - p22)) - p22; }

inline OptimalDesign solve_case1(AnalysisMode mode, const TrialParams& params = {}) {
    params.validate();
    const double p0 = 1.0 / (1.0 + detail::kSqrt2);
    const double pk = 1.0 - 1.0 / detail::kSqrt2;
    const auto plan = make_plan({0.0, 1.0, 0.0}, {{{0, 0, 0}, {p0, pk, pk}, {0, 0, 0}}});
    return detail::finish(plan, Regime::MultiArm, mode, params);
}

/// Fixed r1 and r2, concurrent controls only.
inline OptimalDesign solve_case3_cc(double r1, double r2, const SolverSettings& settings = {},
                                    const TrialParams& params = {}) {
    detail::check_fractions(r1, r2);
    settings.validate();
    params.validate();
    constexpr auto mode = AnalysisMode::ConcurrentOnly;

    const bool arm2_dominates = r1 >= 0.5;
    const bool arm1_dominates = r1 + r2 <= 0.5;
    if (arm2_dominates && arm1_dominates)
        return detail::pick_boundary(detail::separate_trials(r1, r2, mode, params),
                                     detail::all_to_arm1(r1, r2, mode, params));
    if (arm2_dominates) return detail::separate_trials(r1, r2, mode, params);
    if (arm1_dominates) return detail::all_to_arm1(r1, r2, mode, params);

    // Interior: r2 / (1 - 2 r1) = rhs(p22). Multiplying out the pole gives a
    // polynomial that is negative at 0 and positive at 1/2 whenever the ratio
    // exceeds 1/2, which the regime conditions guarantee.
    const double ratio = r2 / (1.0 - 2.0 * r1);
    const auto poly = [ratio](double x) {
        const double g = x * (x * (x * (2 * x * (2 * x - 7) + 19) - 15) + 7) - 2;
        return std::pow(1.0 - x, 3) - ratio * (2 * x - 1) * g;
    };

    constexpr int kScan = 64;
    std::vector<OptimalDesign> candidates;
    std::ostringstream diag;
    double lo = 0.0;
    double flo = poly(lo);
    for (int k = 1; k <= kScan; ++k) {
        const double hi = 0.5 * k / kScan;
        const double fhi = poly(hi);
        diag << " f(" << hi << ")=" << fhi;
        if (flo == 0.0 || (flo < 0) != (fhi < 0)) {
            const double p22 = detail::bracketed_root(poly, lo, hi, flo, fhi, settings.root_tol,
                                                      settings.max_iter);
            const double p02 = lagrange_control_share(p22);
            const double p12 = 1.0 - p02 - p22;
            if (p02 > 0 && p02 < 1 && p12 >= 0 && p12 < 1 && p22 > 0 && p22 <= 0.5) {
                const auto plan = detail::period2_plan(r1, r2, p02, p12, p22);
                candidates.push_back(detail::finish(plan, Regime::Interior, mode, params));
            }
        }
        lo = hi;
        flo = fhi;
    }
    if (candidates.empty())
        throw SolverFailure("no admissible root of the p22 condition for r2/(1-2r1)=" +
                            std::to_string(ratio) + ";" + diag.str());
    auto best = *std::min_element(candidates.begin(), candidates.end(), [](auto& a, auto& b) {
        return a.profile.max_var < b.profile.max_var;
    });
    if (r1 == 0.0 && best.plan.r[2] == 0.0) best.regime = Regime::MultiArm;
    return best;
}

/// Fixed r1, concurrent controls only; r2 is optimised (r3 = 0 unless r1 > 1/2).
inline OptimalDesign solve_case2_cc(double r1, const SolverSettings& settings = {},
                                    const TrialParams& params = {}) {
    detail::check_fraction(r1, "r1");
    params.validate();
    constexpr auto mode = AnalysisMode::ConcurrentOnly;
    if (r1 > 0.5) return detail::separate_trials(r1, 0.0, mode, params);
    if (r1 == 0.5) {
        // Limit of the interior branch: the Lagrange ratio is infinite and p22 -> 1/2.
        return detail::finish(detail::period2_plan(0.5, 0.5, 0.5, 0.0, 0.5), Regime::Interior,
                              mode, params);
    }
    return solve_case3_cc(r1, 1.0 - r1, settings, params);
}

namespace detail {

/*
 * Maximises min(info1, info2) over (p12, p22) for fixed (r1, r2), with
 * equal allocation in periods 1 and 3. For fixed p22 the arm-1 information
 * increases and the arm-2 information decreases in p12 on [0, (1-p22)/2],
 * so the best p12 is the crossing (equal variances) when it exists and an
 * endpoint otherwise. The outer problem in p22 is a 1-d maximisation, smooth
 * except where the crossing meets the endpoint p12 = (1-p22)/2.
 */
template <class Info2>
OptimalDesign nested_equal_variance(double r1, double r2, Info2 info2, AnalysisMode mode,
                                    const SolverSettings& settings, const TrialParams& params) {
    const double r3 = remaining_fraction(r1, r2);
    auto make = [&](double p12, double p22) {
        AllocationPlan plan;
        plan.r = {r1, r2, r3};
        plan.p = {{{0.5, 0.5, 0.0}, {std::max(0.0, 1.0 - p12 - p22), p12, p22}, {0.5, 0.0, 0.5}}};
        if (r3 == 0.0) plan.p[2] = {0, 0, 0};
        return plan;
    };
    auto best_p12 = [&](double p22) {
        const double hi = 0.5 * (1.0 - p22);
        const auto gap = [&](double p12) {
            const auto plan = make(p12, p22);
            return information_cc(plan, Arm::One) - info2(plan);
        };
        const double g0 = gap(0.0);
        if (g0 >= 0.0) return 0.0;
        const double ghi = gap(hi);
        if (ghi <= 0.0) return hi;
        boost::uintmax_t iters = static_cast<boost::uintmax_t>(settings.max_iter);
        const auto [a, b] = boost::math::tools::toms748_solve(
            gap, 0.0, hi, g0, ghi, boost::math::tools::eps_tolerance<double>(), iters);
        return 0.5 * (a + b);
    };
    auto objective = [&](double p22) {
        const auto plan = make(best_p12(p22), p22);
        return -std::min(information_cc(plan, Arm::One), info2(plan));
    };

    constexpr int kScan = 64;
    int best_k = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= kScan; ++k) {
        const double v = objective(static_cast<double>(k) / kScan);
        if (v < best_val) {
            best_val = v;
            best_k = k;
        }
    }
    const double lo = std::max(0.0, (best_k - 1.0) / kScan);
    const double hi = std::min(1.0, (best_k + 1.0) / kScan);
    boost::uintmax_t iters = static_cast<boost::uintmax_t>(settings.max_iter);
    const auto [p22, val] = boost::math::tools::brent_find_minima(
        objective, lo, hi, std::numeric_limits<double>::digits / 2, iters);
    double chosen = val <= best_val ? p22 : static_cast<double>(best_k) / kScan;
    // When arm 1 is capped at p12 = p02 the optimum is a kink that Brent only
    // brackets to sqrt(eps); pin it with a root of the capped gap instead.
    if (best_p12(chosen) == 0.5 * (1.0 - chosen)) {
        const auto capped_gap = [&](double x) {
            const auto plan = make(0.5 * (1.0 - x), x);
            return information_cc(plan, Arm::One) - info2(plan);
        };
        const double glo = capped_gap(lo), ghi = capped_gap(hi);
        if (glo > 0.0 && ghi < 0.0) {
            boost::uintmax_t it = static_cast<boost::uintmax_t>(settings.max_iter);
            const auto [a, b] = boost::math::tools::toms748_solve(
                capped_gap, lo, hi, glo, ghi, boost::math::tools::eps_tolerance<double>(), it);
            chosen = 0.5 * (a + b);
        }
    }
    const double p12 = best_p12(chosen);
    const auto plan = period2_plan(r1, r2, 1.0 - p12 - chosen, p12, chosen);
    auto design = finish(plan, Regime::Interior, mode, params);
    if (equal_variance_gap(design.profile) > settings.constraint_tol)
        throw SolverFailure("equal-variance constraint infeasible for r1=" + std::to_string(r1) +
                            ", r2=" + std::to_string(r2));
    return design;
}

}  // namespace detail

/// Fixed r1 and r2, arm 2 analysed with the joint model (non-concurrent controls).
inline OptimalDesign solve_case3_ncc(double r1, double r2, const SolverSettings& settings = {},
                                     const TrialParams& params = {}) {
    detail::check_fractions(r1, r2);
    settings.validate();
    params.validate();
    constexpr auto mode = AnalysisMode::WithNonConcurrent;

    const bool arm2_dominates = r1 > 0.5;
    const bool arm1_dominates = r1 + r2 <= 0.5;
    if (r1 >= 0.5 && arm1_dominates)
        return detail::pick_boundary(detail::separate_trials(r1, r2, mode, params),
                                     detail::all_to_arm1(r1, r2, mode, params));
    if (arm2_dominates) return detail::separate_trials(r1, r2, mode, params);
    if (arm1_dominates) return detail::all_to_arm1(r1, r2, mode, params);

    if (r1 == 0.0) {
        // No period 1: the joint model has no non-concurrent controls to borrow.
        auto design = solve_case3_cc(r1, r2, settings, params);
        return detail::finish(design.plan, design.regime, mode, params);
    }
    return detail::nested_equal_variance(
        r1, r2, [](const AllocationPlan& plan) { return information_ncc_arm2(plan); }, mode,
        settings, params);
}

/// Same nested search under concurrent controls; an independent route to solve_case3_cc.
inline OptimalDesign solve_case3_cc_numeric(double r1, double r2,
                                            const SolverSettings& settings = {},
                                            const TrialParams& params = {}) {
    detail::check_fractions(r1, r2);
    return detail::nested_equal_variance(
        r1, r2, [](const AllocationPlan& plan) { return information_cc(plan, Arm::Two); },
        AnalysisMode::ConcurrentOnly, settings, params);
}

/// Radicals a, b of the closed-form two-period optimum with non-concurrent controls.
struct Case2NccRadicals {
    double a = 0.0;
    double b = 0.0;
    double p22 = 0.0;
    double p12 = 0.0;
};

inline Case2NccRadicals case2_ncc_closed_form(double r1) {
    constexpr double kNegTol = 1e-12;
    auto clamp_radicand = [](double x, const char* what) {
        if (x < -kNegTol) throw DomainError(std::string("negative radicand in ") + what);
        return std::max(0.0, x);
    };
    const double sqrt3 = std::sqrt(3.0);
    const double inner =
        clamp_radicand(r1 * (16 - 9 * r1 * (3 * (r1 - 4) * r1 + 8)), "a");
    const double a =
        std::cbrt(9 * r1 * (3 * (r1 - 4) * r1 + 4) + 6 * sqrt3 * std::sqrt(inner) + 8);
    const double b = 6 * (a - 4) * r1 + (a - 2) * (a - 2) + 9 * r1 * r1;
    const double minus_b = clamp_radicand(-b, "b");
    if (minus_b == 0.0) throw DomainError("closed form is singular at this r1");
    const double cross = 12 * r1 * sqrt3 * std::sqrt(a * a * a * (1 - r1) / minus_b);
    const double tail =
        clamp_radicand(4 + 8 * a + a * a - 12 * (2 + a) * r1 + cross + 9 * r1 * r1, "p22");
    const double p22 = 1 + (std::sqrt(minus_b) - std::sqrt(tail)) /
                               (4 * sqrt3 * std::sqrt(a * (1 - r1)));
    // Equal variances with p01 = p11 = 1/2 and r2 = 1 - r1 reduce to
    // p12 (1 - p12) = p22 (1 - p22) - r1 / (4 (1 - r1)).
    const double disc = clamp_radicand((1 - 2 * p22) * (1 - 2 * p22) + r1 / (1 - r1), "p12");
    const double p12 = 0.5 * (1 - std::sqrt(disc));
    return {a, b, p22, p12};
}

/// Below this r1 the closed form loses precision to cancellation in b.
inline constexpr double kCase2NccClosedFormMin = 1e-4;

/// Fixed r1, arm 2 analysed with non-concurrent controls.
inline OptimalDesign solve_case2_ncc(double r1, const SolverSettings& settings = {},
                                     const TrialParams& params = {}) {
    detail::check_fraction(r1, "r1");
    params.validate();
    constexpr auto mode = AnalysisMode::WithNonConcurrent;
    if (r1 >= 0.5) return detail::separate_trials(r1, 0.0, mode, params);
    if (r1 == 0.0) return solve_case1(mode, params);
    if (r1 < kCase2NccClosedFormMin) return solve_case3_ncc(r1, 1.0 - r1, settings, params);
    const auto cf = case2_ncc_closed_form(r1);
    const auto plan = detail::period2_plan(r1, 1.0 - r1, 1.0 - cf.p12 - cf.p22, cf.p12, cf.p22);
    return detail::finish(plan, Regime::Interior, mode, params);
}

inline void validate(const DesignCase& design_case) {
    std::visit(
        [](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, FixedR1>) {
                detail::check_fraction(c.r1, "r1");
            } else if constexpr (std::is_same_v<T, FixedR1R2>) {
                detail::check_fractions(c.r1, c.r2);
            }
        },
        design_case);
}

inline OptimalDesign solve(const DesignCase& design_case, AnalysisMode mode,
                           const SolverSettings& settings = {}, const TrialParams& params = {}) {
    validate(design_case);
    const bool cc = mode == AnalysisMode::ConcurrentOnly;
    return std::visit(
        [&](const auto& c) -> OptimalDesign {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Unrestricted>) {
                return solve_case1(mode, params);
            } else if constexpr (std::is_same_v<T, FixedR1>) {
                return cc ? solve_case2_cc(c.r1, settings, params)
                          : solve_case2_ncc(c.r1, settings, params);
            } else {
                return cc ? solve_case3_cc(c.r1, c.r2, settings, params)
                          : solve_case3_ncc(c.r1, c.r2, settings, params);
            }
        },
        design_case);
}

/*
 * Smallest N whose optimal design reaches sqrt(max_var) <= target_se.
 * max_var scales as 1/N, so the answer follows from the per-patient
 * information of the optimum; the integer is then checked directly.
 */
inline std::int64_t min_sample_size(double target_se, const DesignCase& design_case,
                                    AnalysisMode mode, double sigma = 1.0,
                                    const SolverSettings& settings = {}) {
    if (!(target_se > 0.0) || !std::isfinite(target_se))
        throw ValidationError("target_se must be positive");
    if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
    const auto unit = solve(design_case, mode, settings, {1.0, 1.0});
    if (!std::isfinite(unit.profile.max_var))
        throw ValidationError("design has an arm without information; no N reaches the target");
    const auto se_at = [&](std::int64_t n) {
        return sigma * std::sqrt(unit.profile.max_var / static_cast<double>(n));
    };
    const double exact = sigma * sigma * unit.profile.max_var / (target_se * target_se);
    auto n = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(exact)));
    while (se_at(n) > target_se) ++n;
    while (n > 1 && se_at(n - 1) <= target_se) --n;
    return n;
}

/// Regime label read off a plan (used for oracle results).
inline Regime classify(const AllocationPlan& plan) {
    if (plan.r[0] == 0.0 && plan.r[2] == 0.0) return Regime::MultiArm;
    if (plan.r[1] == 0.0 || plan.p[1][1] == 0.0) return Regime::SeparateTrials;
    if (plan.p[1][2] == 0.0) return Regime::AllToArm1;
    return Regime::Interior;
}

namespace detail {

struct GridPoint {
    double r1, r2, p12, p22;
};

inline double grid_objective(const GridPoint& g, AnalysisMode mode) {
    AllocationPlan plan;
    plan.r = {g.r1, g.r2, remaining_fraction(g.r1, g.r2)};
    plan.p = {{{0.5, 0.5, 0.0}, {1.0 - g.p12 - g.p22, g.p12, g.p22}, {0.5, 0.0, 0.5}}};
    return std::min(information_cc(plan, Arm::One), information_arm2(plan, mode));
}

// Inclusive integer range of grid indices covering [lo, hi] at the given step.
inline std::pair<long, long> index_range(double lo, double hi, double step) {
    return {static_cast<long>(std::ceil(lo / step - 1e-9)),
            static_cast<long>(std::floor(hi / step + 1e-9))};
}

}  // namespace detail

/*
 * Brute-force reference optimum. With (r1, r2) fixed the period-2 simplex is
 * scanned exhaustively at the requested step. When period fractions are free
 * the full product grid is too large, so the scan runs coarse-to-fine: an
 * exhaustive pass at step 1/40, then passes at a quarter of the previous step
 * in a window of two previous steps around the incumbent, finishing at the
 * requested step. A window pass is repeated while the incumbent keeps moving.
 *
 * The maximin ridge is flat along its length, so a grid at step h can sit
 * O(sqrt(h)) away from the optimum in the proportions. With polish set and
 * (r1, r2) fixed, the grid incumbent is refined by nested one-dimensional
 * Brent searches of min(info1, info2): over p12 on the whole feasible range
 * (the minimum of a concave and a decreasing function is unimodal), and over
 * p22 within sqrt(step) of the incumbent. Ties keep the first point in
 * scan order.
 */
inline OptimalDesign oracle_grid_search(const DesignCase& design_case, AnalysisMode mode,
                                        double resolution, const TrialParams& params = {},
                                        bool polish = false) {
    if (!(resolution > 0.0 && resolution <= 0.1))
        throw ValidationError("resolution must lie in (0, 0.1]");
    validate(design_case);

    bool free_r1 = false, free_r2 = false;
    double r1 = 0.0, r2 = 0.0;
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Unrestricted>) {
                free_r1 = free_r2 = true;
            } else if constexpr (std::is_same_v<T, FixedR1>) {
                r1 = c.r1;
                free_r2 = true;
            } else {
                r1 = c.r1;
                r2 = c.r2;
            }
        },
        design_case);

    struct Box {
        double lo[4], hi[4];
    };
    detail::GridPoint best{r1, r2, 0.0, 0.0};
    double best_val = -1.0;

    const auto scan = [&](const Box& box, double step) {
        const auto [a1, b1] = free_r1 ? detail::index_range(box.lo[0], box.hi[0], step)
                                      : std::pair<long, long>{0, 0};
        for (long i1 = a1; i1 <= b1; ++i1) {
            const double x1 = free_r1 ? i1 * step : r1;
            const double r2_cap = 1.0 - x1;
            const auto [a2, b2] = free_r2 ? detail::index_range(box.lo[1], std::min(box.hi[1], r2_cap), step)
                                          : std::pair<long, long>{0, 0};
            for (long i2 = a2; i2 <= b2; ++i2) {
                const double x2 = free_r2 ? i2 * step : r2;
                if (x2 == 0.0) {
                    // Empty period 2: proportions are irrelevant.
                    const detail::GridPoint g{x1, x2, 0.0, 0.0};
                    const double v = detail::grid_objective(g, mode);
                    if (v > best_val) best_val = v, best = g;
                    continue;
                }
                const auto [a3, b3] = detail::index_range(box.lo[2], box.hi[2], step);
                for (long i3 = a3; i3 <= b3; ++i3) {
                    const double p12 = i3 * step;
                    const auto [a4, b4] =
                        detail::index_range(box.lo[3], std::min(box.hi[3], 1.0 - p12), step);
                    for (long i4 = a4; i4 <= b4; ++i4) {
                        const detail::GridPoint g{x1, x2, p12, i4 * step};
                        const double v = detail::grid_objective(g, mode);
                        if (v > best_val) best_val = v, best = g;
                    }
                }
            }
        }
    };

    const Box full{{0, 0, 0, 0}, {1, 1, 1, 1}};
    const auto zoom = [&](double step, double next) {
        for (int pass = 0; pass < 1000; ++pass) {
            const double centre[4] = {best.r1, best.r2, best.p12, best.p22};
            Box box;
            for (int d = 0; d < 4; ++d) {
                box.lo[d] = std::max(0.0, centre[d] - 2 * step);
                box.hi[d] = std::min(1.0, centre[d] + 2 * step);
            }
            const double before = best_val;
            scan(box, next);
            if (!(best_val > before)) break;
        }
    };

    double step = resolution;
    if (!free_r1 && !free_r2) {
        step = 1.0 / std::round(1.0 / resolution);
        scan(full, step);
    } else {
        step = std::max(1.0 / 40.0, resolution);
        scan(full, step);
        while (step > resolution) {
            const double next = std::max(step / 4.0, resolution);
            zoom(step, next);
            step = next;
        }
    }
    if (polish && !free_r1 && !free_r2 && r2 > 0.0) {
        constexpr int bits = std::numeric_limits<double>::digits;
        const auto inner = [&](double p22) {
            const auto f = [&](double p12) { return -detail::grid_objective({r1, r2, p12, p22}, mode); };
            return boost::math::tools::brent_find_minima(f, 0.0, 1.0 - p22, bits);
        };
        const auto [p22, v] = boost::math::tools::brent_find_minima(
            [&](double x) { return inner(x).second; }, std::max(0.0, best.p22 - std::sqrt(step)),
            std::min(1.0, best.p22 + std::sqrt(step)), bits);
        if (-v > best_val) best = {r1, r2, inner(p22).first, p22};
    }

    const auto plan = detail::period2_plan(best.r1, best.r2, 1.0 - best.p12 - best.p22, best.p12,
                                           best.p22);
    return detail::finish(plan, classify(plan), mode, params);
}

}  // namespace platalloc
