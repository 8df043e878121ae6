#pragma once
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace platalloc {

/// One enrolled patient. period is 1..3 and arm is 0..2 (0 = control).
struct PatientRecord {
    int index = 0;
    int period = 1;
    int arm = 0;
    double outcome = 0.0;
};

struct TrialDataset {
    std::vector<PatientRecord> records;

    /// Realised counts[period][arm] (zero-based period).
    CountTable counts() const {
        CountTable c{};
        for (const auto& rec : records) {
            if (rec.period < 1 || rec.period > kPeriods || rec.arm < 0 || rec.arm >= kArms)
                throw ValidationError("patient record with period/arm out of range");
            ++c[rec.period - 1][rec.arm];
        }
        return c;
    }
};

/// Arm presence rules of the three-period design.
inline void validate_counts(const CountTable& counts) {
    for (const auto& row : counts)
        for (int n : row)
            if (n < 0) throw ValidationError("negative count in sample-size table");
    if (counts[0][2] != 0) throw ValidationError("arm 2 cannot recruit in period 1");
    if (counts[2][1] != 0) throw ValidationError("arm 1 cannot recruit in period 3");
}

}  // namespace platalloc
