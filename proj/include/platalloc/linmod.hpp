#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"

/*
 * Period-adjusted linear models for the treatment effects:
 *   arm 1, concurrent:      y = eta + theta1 I(arm1) + theta2 I(arm2) + tau2 I(period 2), periods 1-2
 *   arm 2, concurrent:      y = eta + theta1 I(arm1) + theta2 I(arm2) + tau3 I(period 3), periods 2-3
 *   arm 2, joint (all data): y = eta + theta1 I(arm1) + theta2 I(arm2) + tau2 I(2) + tau3 I(3)
 */
namespace platalloc {

struct ModelSpec {
    Arm target_arm = Arm::One;
    AnalysisMode mode = AnalysisMode::ConcurrentOnly;
    std::vector<int> periods_used;    // 1-based
    std::vector<int> arms_used;       // 0 = control
    std::vector<int> period_effects;  // 1-based periods with an indicator column

    static ModelSpec arm1_concurrent() {
        return {Arm::One, AnalysisMode::ConcurrentOnly, {1, 2}, {0, 1, 2}, {2}};
    }
    static ModelSpec arm2_concurrent() {
        return {Arm::Two, AnalysisMode::ConcurrentOnly, {2, 3}, {0, 1, 2}, {3}};
    }
    static ModelSpec arm2_joint() {
        return {Arm::Two, AnalysisMode::WithNonConcurrent, {1, 2, 3}, {0, 1, 2}, {2, 3}};
    }
    /// Arm 1 is always analysed concurrently; arm 2 follows the mode.
    static ModelSpec for_arm(Arm arm, AnalysisMode mode) {
        if (arm == Arm::One) return arm1_concurrent();
        return mode == AnalysisMode::ConcurrentOnly ? arm2_concurrent() : arm2_joint();
    }

    bool uses_period(int period) const {
        return std::find(periods_used.begin(), periods_used.end(), period) != periods_used.end();
    }
    bool uses_arm(int arm) const {
        return std::find(arms_used.begin(), arms_used.end(), arm) != arms_used.end();
    }
};

struct DesignMatrix {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<std::string> columns;
    std::vector<std::string> dropped;
    int target_column = -1;
};

/*
 * Columns: intercept, treatment indicators of the non-control arms in the
 * spec, then period indicators. A treatment column without patients is
 * dropped; a period indicator is dropped when its period has no rows or is
 * the earliest period present (it would duplicate the intercept).
 */
inline DesignMatrix build_design(const TrialDataset& data, const ModelSpec& spec) {
    std::vector<const PatientRecord*> rows;
    rows.reserve(data.records.size());
    std::array<int, kArms> arm_rows{};
    std::array<int, kPeriods + 1> period_rows{};
    for (const auto& rec : data.records) {
        if (!spec.uses_period(rec.period) || !spec.uses_arm(rec.arm)) continue;
        rows.push_back(&rec);
        ++arm_rows[rec.arm];
        ++period_rows[rec.period];
    }
    if (rows.empty()) throw ValidationError("no patients fall within the model's periods and arms");
    const int target = static_cast<int>(spec.target_arm);
    if (arm_rows[target] == 0)
        throw ValidationError("target arm " + std::to_string(target) + " has no patients");

    DesignMatrix d;
    std::vector<int> arm_cols, period_cols;
    for (int arm : spec.arms_used) {
        if (arm == 0) continue;
        if (arm_rows[arm] > 0) arm_cols.push_back(arm);
        else d.dropped.push_back("arm" + std::to_string(arm));
    }
    int earliest = 0;
    for (int s = 1; s <= kPeriods && earliest == 0; ++s)
        if (period_rows[s] > 0) earliest = s;
    for (int s : spec.period_effects) {
        if (period_rows[s] > 0 && s != earliest) period_cols.push_back(s);
        else d.dropped.push_back("period" + std::to_string(s));
    }

    d.columns.push_back("intercept");
    for (int arm : arm_cols) {
        if (arm == target) d.target_column = static_cast<int>(d.columns.size());
        d.columns.push_back("arm" + std::to_string(arm));
    }
    for (int s : period_cols) d.columns.push_back("period" + std::to_string(s));

    const auto n = static_cast<Eigen::Index>(rows.size());
    d.x.setZero(n, static_cast<Eigen::Index>(d.columns.size()));
    d.y.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& rec = *rows[j];
        d.x(j, 0) = 1.0;
        Eigen::Index c = 1;
        for (int arm : arm_cols) d.x(j, c++) = rec.arm == arm ? 1.0 : 0.0;
        for (int s : period_cols) d.x(j, c++) = rec.period == s ? 1.0 : 0.0;
        d.y(j) = rec.outcome;
    }
    return d;
}

struct InferenceOptions {
    double level = 0.95;
    std::optional<double> known_sigma;  // z-based inference with this sigma when set

    void validate() const {
        if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0,1)");
        if (known_sigma && !(*known_sigma > 0.0)) throw ValidationError("known sigma must be positive");
    }
};

struct FitResult {
    std::vector<std::string> columns;
    std::vector<std::string> dropped;
    Eigen::VectorXd estimates;
    Eigen::VectorXd se;
    int target_column = -1;
    double estimate = 0.0;  // target arm's theta
    double target_se = 0.0;
    double statistic = 0.0;
    double p_one_sided = 1.0;  // H: theta <= 0
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    int residual_df = 0;
    double sigma_hat = 0.0;

    double ci_width() const { return ci_upper - ci_lower; }
    bool rejects(double alpha) const { return p_one_sided < alpha; }
};

namespace detail {

// Pivoted QR of X; ValidationError names the columns that are linear combinations of the others.
inline Eigen::ColPivHouseholderQR<Eigen::MatrixXd> checked_qr(
    const Eigen::MatrixXd& x, const std::vector<std::string>& columns) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols()) {
        std::string names;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < x.cols(); ++k)
            names += (names.empty() ? "" : ", ") + columns[static_cast<std::size_t>(perm(k))];
        throw ValidationError("design matrix is rank deficient; collinear column(s): " + names);
    }
    return qr;
}

}  // namespace detail

/// (X'X)^-1 for a full-rank design.
inline Eigen::MatrixXd unscaled_covariance(const Eigen::MatrixXd& x,
                                           const std::vector<std::string>& columns) {
    detail::checked_qr(x, columns);
    const Eigen::MatrixXd xtx = x.transpose() * x;
    return xtx.llt().solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
}

inline FitResult ols_fit(const DesignMatrix& d, const InferenceOptions& options = {}) {
    options.validate();
    const auto n = d.x.rows();
    const auto k = d.x.cols();
    if (n <= k)
        throw ValidationError("need more observations (" + std::to_string(n) + ") than columns (" +
                              std::to_string(k) + ")");
    if (d.target_column < 0 || d.target_column >= k)
        throw ValidationError("design has no target column");

    const auto qr = detail::checked_qr(d.x, d.columns);
    const Eigen::MatrixXd xtx = d.x.transpose() * d.x;
    const Eigen::MatrixXd cov = xtx.llt().solve(Eigen::MatrixXd::Identity(k, k));
    FitResult fit;
    fit.columns = d.columns;
    fit.dropped = d.dropped;
    fit.target_column = d.target_column;
    fit.estimates = qr.solve(d.y);
    const Eigen::VectorXd resid = d.y - d.x * fit.estimates;
    fit.residual_df = static_cast<int>(n - k);
    fit.sigma_hat = std::sqrt(resid.squaredNorm() / fit.residual_df);
    const double scale = options.known_sigma ? *options.known_sigma : fit.sigma_hat;
    fit.se = scale * cov.diagonal().cwiseSqrt();

    fit.estimate = fit.estimates(d.target_column);
    fit.target_se = fit.se(d.target_column);
    fit.statistic = fit.estimate / fit.target_se;
    const double tail = 0.5 * (1.0 - options.level);
    double critical = 0.0;
    if (options.known_sigma) {
        const boost::math::normal_distribution<> z;
        fit.p_one_sided = cdf(complement(z, fit.statistic));
        critical = quantile(complement(z, tail));
    } else {
        const boost::math::students_t_distribution<> t(fit.residual_df);
        fit.p_one_sided = cdf(complement(t, fit.statistic));
        critical = quantile(complement(t, tail));
    }
    fit.ci_lower = fit.estimate - critical * fit.target_se;
    fit.ci_upper = fit.estimate + critical * fit.target_se;
    return fit;
}

inline FitResult fit_model(const TrialDataset& data, const ModelSpec& spec,
                           const InferenceOptions& options = {}) {
    return ols_fit(build_design(data, spec), options);
}

struct StratifiedEstimate {
    double estimate = 0.0;
    double variance = 0.0;
};

/// Inverse-variance weighted mean of the per-period treatment-minus-control differences.
inline StratifiedEstimate stratified_estimate(const TrialDataset& data, Arm arm,
                                              double sigma = 1.0) {
    if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
    const int i = static_cast<int>(arm);
    std::array<std::array<double, kArms>, kPeriods> sum{};
    const CountTable n = data.counts();
    for (const auto& rec : data.records) sum[rec.period - 1][rec.arm] += rec.outcome;

    double info = 0.0, weighted = 0.0;
    for (int s : arm_periods(arm)) {
        const double na = n[s][i], n0 = n[s][0];
        if (na == 0 || n0 == 0) continue;
        const double w = na * n0 / (na + n0);
        weighted += w * (sum[s][i] / na - sum[s][0] / n0);
        info += w;
    }
    if (info == 0.0)
        throw EstimandUndefined("arm " + std::to_string(i) + " has no period with concurrent controls");
    return {weighted / info, sigma * sigma / info};
}

}  // namespace platalloc
