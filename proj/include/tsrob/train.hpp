#pragma once

// Adaptive-moment gradient descent on the flat parameter vector and the
// clean-data training loop (MSE on scaled windows). Batch gradients are
// computed per window in parallel and reduced in window order, so results
// do not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "tsrob/metrics.hpp"
#include "tsrob/model.hpp"
#include "tsrob/parallel.hpp"
#include "tsrob/series.hpp"

namespace tsrob {

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(std::size_t dim, AdamConfig cfg = {}) : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {}

    void step(Vec& params, const Vec& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

private:
    AdamConfig cfg_;
    Vec m_, v_;
    std::uint64_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 50;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    std::size_t max_windows = 5000;  // desk-scale subsample; 0 = use all
    std::size_t threads = 0;         // 0 = hardware concurrency
};

struct TrainHistory {
    std::vector<double> epoch_loss;      // mean batch MSE per epoch
    std::vector<double> val_loss;        // per epoch (when validation given)
};

// Mean parameter-gradient of the MSE loss over a set of windows; reduction
// runs in window order.
inline Vec batch_gradient(SpacetimeModel& m, const std::vector<SeriesWindow>& windows,
                          const std::vector<std::size_t>& idx, double* loss_out,
                          std::size_t threads = 0) {
    std::vector<GradResult> results(idx.size());
    // copies of the model per work item share no state; parameters are read-only here
    parallel_for(idx.size(), [&](std::size_t i) {
        SpacetimeModel local = m;
        results[i] = grad(local, windows[idx[i]].input, windows[idx[i]].target, LossKind::Mse);
    }, threads);
    Vec g(results.empty() ? 0 : results[0].wrt_params.size(), 0.0);
    double loss = 0.0;
    for (const auto& r : results) {
        loss += r.loss;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += r.wrt_params[j];
    }
    const double inv = idx.empty() ? 0.0 : 1.0 / static_cast<double>(idx.size());
    for (double& x : g) x *= inv;
    if (loss_out) *loss_out = loss * inv;
    return g;
}

inline double mean_mse(const SpacetimeModel& m, const std::vector<SeriesWindow>& windows,
                       std::size_t threads = 0) {
    if (windows.empty()) return 0.0;
    std::vector<double> per(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
        const Vec yhat = forecast(m, windows[i].input);
        double s = 0.0;
        for (std::size_t j = 0; j < yhat.size(); ++j) {
            const double e = yhat[j] - windows[i].target[j];
            s += e * e;
        }
        per[i] = s / static_cast<double>(yhat.size());
    }, threads);
    double total = 0.0;
    for (double v : per) total += v;
    return total / static_cast<double>(windows.size());
}

// Minimizes MSE on the given (scaled) training windows. Aborts with
// NonFiniteLoss when the loss stops being finite.
inline TrainHistory train_mse(SpacetimeModel& m, const std::vector<SeriesWindow>& train_windows,
                              const std::vector<SeriesWindow>& val_windows, const TrainConfig& cfg) {
    std::vector<std::size_t> order(train_windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.max_windows > 0 && order.size() > cfg.max_windows) order.resize(cfg.max_windows);

    Vec params = flatten_parameters(m);
    Adam opt(params.size(), AdamConfig{ cfg.lr });
    std::mt19937_64 rng(cfg.seed);
    TrainHistory hist;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            std::vector<std::size_t> idx(order.begin() + b,
                                         order.begin() + std::min(order.size(), b + cfg.batch));
            double loss = 0.0;
            Vec g = batch_gradient(m, train_windows, idx, &loss, cfg.threads);
            if (!std::isfinite(loss))
                throw NonFiniteLoss("training loss is not finite at epoch " +
                                    std::to_string(epoch) + " (diverged optimizer or bad data)");
            opt.step(params, g);
            unflatten_parameters(m, params);
            epoch_loss += loss;
            ++batches;
        }
        hist.epoch_loss.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
        if (!val_windows.empty()) hist.val_loss.push_back(mean_mse(m, val_windows, cfg.threads));
    }
    return hist;
}

// Domain-unit forecast metrics over windows given in domain units.
inline Metrics evaluate_forecaster(const ForecastPipeline& pipe,
                                   const std::vector<SeriesWindow>& windows,
                                   std::size_t threads = 0) {
    std::vector<Metrics> per(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
        const Vec pred = pipe.forecast_domain(windows[i].input);
        per[i].accumulate(pred, windows[i].target);
    }, threads);
    Metrics total;
    for (const auto& p : per) {
        total.mae += p.mae;
        total.mse += p.mse;
        total.mape += p.mape;
        total.count += p.count;
        total.mape_count += p.mape_count;
    }
    return total.finalized();
}

} // namespace tsrob
