#pragma once

// Forecast error metrics. MAPE is computed only where |y| > 1e-9; the
// normalized adversarial score divides adversarial MAE by the mean attack
// norm.

#include <cmath>
#include <cstddef>

#include "tsrob/linalg.hpp"

namespace tsrob {

struct Metrics {
    double mae = 0.0;
    double mse = 0.0;
    double mape = 0.0;  // percent
    std::size_t count = 0;
    std::size_t mape_count = 0;

    void accumulate(const Vec& pred, const Vec& truth) {
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double e = pred[i] - truth[i];
            mae += std::abs(e);
            mse += e * e;
            ++count;
            if (std::abs(truth[i]) > 1e-9) {
                mape += std::abs(e / truth[i]);
                ++mape_count;
            }
        }
    }

    Metrics finalized() const {
        Metrics m = *this;
        if (count > 0) {
            m.mae /= static_cast<double>(count);
            m.mse /= static_cast<double>(count);
        }
        m.mape = (mape_count > 0) ? 100.0 * mape / static_cast<double>(mape_count) : 0.0;
        return m;
    }
};

struct MetricsReport {
    Metrics clean;
    Metrics adversarial;
    double mean_attack_norm = 0.0;
    double adv_mae_per_attack_norm = 0.0;  // adversarial MAE / mean ||a||
    std::size_t alarms_at_attacked_steps = 0;
    std::size_t windows_evaluated = 0;
    std::size_t windows_skipped = 0;
};

} // namespace tsrob
