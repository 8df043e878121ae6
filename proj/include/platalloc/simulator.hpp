#pragma once
#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "linmod.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace platalloc {

/// Additive time trend shared by all arms.
struct Trend {
    enum class Kind { None, Linear, Step };
    Kind kind = Kind::None;
    double slope = 0.0;                     // Linear: slope * j / N for patient j
    std::array<double, kPeriods> shifts{};  // Step: shift of each period

    static Trend none() { return {}; }
    static Trend linear(double slope) { return {Kind::Linear, slope, {}}; }
    static Trend step(std::array<double, kPeriods> shifts) { return {Kind::Step, 0.0, shifts}; }

    double at(int index, int period, int total) const {
        switch (kind) {
            case Kind::None: return 0.0;
            case Kind::Linear: return slope * index / total;
            case Kind::Step: return shifts[period - 1];
        }
        return 0.0;
    }
};

inline std::string to_string(Trend::Kind kind) {
    switch (kind) {
        case Trend::Kind::None: return "none";
        case Trend::Kind::Linear: return "linear";
        case Trend::Kind::Step: return "step";
    }
    return "none";
}

inline Trend::Kind parse_trend_kind(const std::string& s) {
    for (auto k : {Trend::Kind::None, Trend::Kind::Linear, Trend::Kind::Step})
        if (to_string(k) == s) return k;
    throw ValidationError("unknown trend '" + s + "' (expected none|linear|step)");
}

enum class Inference { StudentT, KnownSigma };

struct SimulationScenario {
    CountTable counts{};
    double mu0 = 0.0;
    std::array<double, 2> theta{0.0, 0.0};
    double sigma = 1.0;
    Trend trend;
    double alpha = 0.025;  // one-sided
    double level = 0.95;   // two-sided CI
    AnalysisMode mode = AnalysisMode::ConcurrentOnly;
    Inference inference = Inference::StudentT;

    int total() const {
        int n = 0;
        for (const auto& row : counts)
            for (int c : row) n += c;
        return n;
    }

    void validate() const {
        validate_counts(counts);
        if (total() == 0) throw ValidationError("sample-size table is empty");
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be positive");
        if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must lie in (0, 0.5)");
        if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must lie in (0, 1)");
        if (!std::isfinite(mu0) || !std::isfinite(theta[0]) || !std::isfinite(theta[1]))
            throw ValidationError("means must be finite");
    }

    InferenceOptions inference_options() const {
        InferenceOptions opt;
        opt.level = level;
        if (inference == Inference::KnownSigma) opt.known_sigma = sigma;
        return opt;
    }
};

/// Exact per-cell counts; arm order within each period is a uniform random permutation.
template <class Engine>
TrialDataset generate_trial(const SimulationScenario& sc, Engine& rng) {
    const int total = sc.total();
    TrialDataset data;
    data.records.reserve(static_cast<std::size_t>(total));
    std::vector<int> labels;
    boost::random::normal_distribution<double> noise(0.0, sc.sigma);
    int index = 0;
    for (int s = 0; s < kPeriods; ++s) {
        labels.clear();
        for (int arm = 0; arm < kArms; ++arm) labels.insert(labels.end(), sc.counts[s][arm], arm);
        for (std::size_t k = labels.size(); k > 1; --k) {
            boost::random::uniform_int_distribution<std::size_t> pick(0, k - 1);
            std::swap(labels[k - 1], labels[pick(rng)]);
        }
        for (int arm : labels) {
            ++index;
            const double mean = sc.mu0 + (arm == 0 ? 0.0 : sc.theta[arm - 1]);
            const double y = mean + sc.trend.at(index, s + 1, total) + noise(rng);
            data.records.push_back({index, s + 1, arm, y});
        }
    }
    return data;
}

/// Arm 1 via its concurrent model; arm 2 via the concurrent or the joint model.
inline std::array<FitResult, 2> analyze(const TrialDataset& data, AnalysisMode mode,
                                        const InferenceOptions& options = {}) {
    return {fit_model(data, ModelSpec::for_arm(Arm::One, mode), options),
            fit_model(data, ModelSpec::for_arm(Arm::Two, mode), options)};
}

/// Count, mean and sum of squared deviations, mergeable in a fixed order.
struct Moments {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    void merge(const Moments& o) {
        if (o.n == 0) return;
        const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
        const double delta = o.mean - mean;
        const double total = na + nb;
        mean += delta * nb / total;
        m2 += o.m2 + delta * delta * na * nb / total;
        n += o.n;
    }
    double sd() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

struct ArmAccumulator {
    std::int64_t rejections = 0;
    Moments estimate, width, se;

    void add(const FitResult& fit, double alpha) {
        rejections += fit.rejects(alpha);
        estimate.add(fit.estimate);
        width.add(fit.ci_width());
        se.add(fit.target_se);
    }
    void merge(const ArmAccumulator& o) {
        rejections += o.rejections;
        estimate.merge(o.estimate);
        width.merge(o.width);
        se.merge(o.se);
    }
};

struct ArmSummary {
    double rejection_rate = 0.0;
    double mc_se = 0.0;
    double ci_width_mean = 0.0;
    double estimate_mean = 0.0;
    double estimate_sd = 0.0;
    double se_mean = 0.0;
};

struct SimulationSummary {
    std::int64_t reps = 0;
    std::uint64_t seed = 0;
    std::array<ArmSummary, 2> arms{};
};

inline constexpr std::int64_t kSimulationBlock = 1024;

/*
 * Replicate k draws from StreamEngine(seed, k). Replicates are processed in
 * fixed blocks whose accumulators are merged in block order, so the summary is
 * bit-identical for any thread count. progress receives completed replicates.
 */
inline SimulationSummary run_simulation(const SimulationScenario& sc, std::int64_t reps,
                                        std::uint64_t seed, unsigned threads = 1,
                                        const std::function<void(std::int64_t)>& progress = {}) {
    sc.validate();
    if (reps < 1) throw ValidationError("reps must be at least 1");
    const auto options = sc.inference_options();
    const std::int64_t blocks = (reps + kSimulationBlock - 1) / kSimulationBlock;
    std::vector<std::array<ArmAccumulator, 2>> acc(static_cast<std::size_t>(blocks));

    std::atomic<std::int64_t> next{0};
    std::atomic<std::int64_t> done{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (std::int64_t b; (b = next.fetch_add(1)) < blocks;) {
            try {
                auto& slot = acc[static_cast<std::size_t>(b)];
                const std::int64_t end = std::min(reps, (b + 1) * kSimulationBlock);
                for (std::int64_t k = b * kSimulationBlock; k < end; ++k) {
                    StreamEngine rng(seed, static_cast<std::uint64_t>(k));
                    const auto fits = analyze(generate_trial(sc, rng), sc.mode, options);
                    slot[0].add(fits[0], sc.alpha);
                    slot[1].add(fits[1], sc.alpha);
                }
                const auto finished = done.fetch_add(end - b * kSimulationBlock) +
                                      (end - b * kSimulationBlock);
                if (progress) {
                    std::lock_guard lock(error_mutex);
                    progress(finished);
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(blocks);
            }
        }
    };
    const unsigned n_threads =
        std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(blocks)));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);

    std::array<ArmAccumulator, 2> total;
    for (const auto& block : acc)
        for (int a = 0; a < 2; ++a) total[a].merge(block[a]);

    SimulationSummary out;
    out.reps = reps;
    out.seed = seed;
    for (int a = 0; a < 2; ++a) {
        const double rate = static_cast<double>(total[a].rejections) / static_cast<double>(reps);
        out.arms[a] = {rate,
                       std::sqrt(rate * (1.0 - rate) / static_cast<double>(reps)),
                       total[a].width.mean,
                       total[a].estimate.mean,
                       total[a].estimate.sd(),
                       total[a].se.mean};
    }
    return out;
}

}  // namespace platalloc
