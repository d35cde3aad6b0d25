#pragma once

// Runtime attack detectors: the prediction-average buffer, the norm-based
// statistic, the convolutional-autoencoder statistic, FAR-based threshold
// calibration and the streaming detector loop.
//
// Operating conventions (fixed here, carried by the Detector):
//   - the norm detector compares received data against prediction averages in
//     domain units, over the trailing h steps where the average is defined;
//   - the autoencoder detector reconstructs standard-scaled trailing input
//     windows and uses the mean squared reconstruction error.

#include <deque>
#include <optional>
#include <ostream>
#include <random>

#include "tsrob/model.hpp"
#include "tsrob/parallel.hpp"
#include "tsrob/series.hpp"
#include "tsrob/train.hpp"

namespace tsrob {

struct IncompatibleLength : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyCalibrationSet : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----------------------------------------------------------------------------
// Prediction buffer: ybar_k = (1/h) sum_{i=1..h} yhat_k^{(k-i)}
// ----------------------------------------------------------------------------

class PredictionBuffer {
public:
    explicit PredictionBuffer(std::size_t horizon) : horizon_(horizon) {}

    void push(std::size_t origin, Vec forecast) {
        ring_.emplace_back(origin, std::move(forecast));
        while (ring_.size() > horizon_) ring_.pop_front();
    }

    // Defined only once all h forecasts covering time k exist.
    std::optional<double> average_for(std::size_t k) const {
        if (ring_.size() < horizon_) return std::nullopt;
        double s = 0.0;
        for (std::size_t i = 1; i <= horizon_; ++i) {
            if (k < i) return std::nullopt;
            const std::size_t origin = k - i;
            bool found = false;
            for (const auto& [o, f] : ring_) {
                if (o == origin) {
                    s += f[i - 1];
                    found = true;
                    break;
                }
            }
            if (!found) return std::nullopt;
        }
        return s / static_cast<double>(horizon_);
    }

private:
    std::size_t horizon_;
    std::deque<std::pair<std::size_t, Vec>> ring_;
};

// ----------------------------------------------------------------------------
// Statistics
// ----------------------------------------------------------------------------

inline double statistic_norm(const Vec& window, const Vec& prediction_avg) {
    if (window.size() != prediction_avg.size())
        throw ShapeMismatch("statistic_norm: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < window.size(); ++i) {
        const double d = window[i] - prediction_avg[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// ----------------------------------------------------------------------------
// Convolutional autoencoder
// ----------------------------------------------------------------------------
// encoder: conv(1->8, k3, same) -> ReLU -> maxpool2 -> conv(8->16, k3, same)
//          -> ReLU -> maxpool2 -> flatten -> affine -> 2-dim code
// decoder: affine -> ReLU -> deconv(16->8, k4, s2) -> ReLU -> deconv(8->1, k4, s2)
// Windows are edge-padded to the next multiple of 4 and cropped after decoding.

struct Autoencoder {
    std::size_t input_len = 0;
    std::size_t padded_len = 0;
    Vec w_conv1, b_conv1;      // [8*1*3], [8]
    Vec w_conv2, b_conv2;      // [16*8*3], [16]
    Vec w_enc, b_enc;          // [2 x 16*(padded/4)], [2]
    Vec w_dec, b_dec;          // [16*(padded/4) x 2], [...]
    Vec w_deconv1, b_deconv1;  // [8*16*4], [8]
    Vec w_deconv2, b_deconv2;  // [1*8*4], [1]

    static constexpr std::size_t kCode = 2;
    std::size_t flat_len() const { return 16 * (padded_len / 4); }
};

inline Autoencoder make_autoencoder(std::size_t input_len, std::uint64_t seed) {
    if (input_len < 4) throw IncompatibleLength("autoencoder needs window length >= 4");
    Autoencoder ae;
    ae.input_len = input_len;
    ae.padded_len = ((input_len + 3) / 4) * 4;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto init = [&](Vec& w, std::size_t count, std::size_t fan_in) {
        w.resize(count);
        for (auto& v : w) v = gauss(rng) / std::sqrt(static_cast<double>(fan_in));
    };
    init(ae.w_conv1, 8 * 1 * 3, 3);
    ae.b_conv1.assign(8, 0.0);
    init(ae.w_conv2, 16 * 8 * 3, 24);
    ae.b_conv2.assign(16, 0.0);
    init(ae.w_enc, Autoencoder::kCode * ae.flat_len(), ae.flat_len());
    ae.b_enc.assign(Autoencoder::kCode, 0.0);
    init(ae.w_dec, ae.flat_len() * Autoencoder::kCode, Autoencoder::kCode);
    ae.b_dec.assign(ae.flat_len(), 0.0);
    init(ae.w_deconv1, 8 * 16 * 4, 64);
    ae.b_deconv1.assign(8, 0.0);
    init(ae.w_deconv2, 1 * 8 * 4, 32);
    ae.b_deconv2.assign(1, 0.0);
    return ae;
}

namespace detail {

inline Vec pad_edge(const Vec& w, std::size_t padded_len) {
    Vec x = w;
    x.resize(padded_len, w.empty() ? 0.0 : w.back());
    return x;
}

inline std::vector<Vec*> ae_params(Autoencoder& ae) {
    return { &ae.w_conv1, &ae.b_conv1, &ae.w_conv2, &ae.b_conv2, &ae.w_enc, &ae.b_enc,
             &ae.w_dec, &ae.b_dec, &ae.w_deconv1, &ae.b_deconv1, &ae.w_deconv2, &ae.b_deconv2 };
}

struct AeTapeForward {
    ad::Var input;
    ad::Var recon;  // cropped to input_len
    std::vector<ad::Var> param_leaves;
};

inline AeTapeForward ae_forward_tape(ad::Tape& tape, Autoencoder& ae, const Vec& window_scaled) {
    if (window_scaled.size() != ae.input_len)
        throw IncompatibleLength("autoencoder window length mismatch");
    const std::size_t lp = ae.padded_len;
    AeTapeForward tf;
    tf.input = tape.leaf(pad_edge(window_scaled, lp));
    auto ps = ae_params(ae);
    for (auto* p : ps) tf.param_leaves.push_back(tape.leaf(*p));
    std::size_t i = 0;
    ad::Var wc1 = tf.param_leaves[i++], bc1 = tf.param_leaves[i++];
    ad::Var wc2 = tf.param_leaves[i++], bc2 = tf.param_leaves[i++];
    ad::Var we = tf.param_leaves[i++], be = tf.param_leaves[i++];
    ad::Var wd = tf.param_leaves[i++], bd = tf.param_leaves[i++];
    ad::Var wdc1 = tf.param_leaves[i++], bdc1 = tf.param_leaves[i++];
    ad::Var wd2 = tf.param_leaves[i++], bd2 = tf.param_leaves[i++];

    ad::Var h = tape.conv1d(tf.input, wc1, bc1, 1, 8, lp, 3);
    h = tape.relu(h);
    h = tape.maxpool2(h, 8, lp);
    h = tape.conv1d(h, wc2, bc2, 8, 16, lp / 2, 3);
    h = tape.relu(h);
    h = tape.maxpool2(h, 16, lp / 2);
    ad::Var code = tape.fc(h, we, be, Autoencoder::kCode, ae.flat_len());
    ad::Var d = tape.fc(code, wd, bd, ae.flat_len(), Autoencoder::kCode);
    d = tape.relu(d);
    d = tape.deconv1d(d, wdc1, bdc1, 16, 8, lp / 4);
    d = tape.relu(d);
    d = tape.deconv1d(d, wd2, bd2, 8, 1, lp / 2);
    tf.recon = tape.slice(d, 0, ae.input_len);
    return tf;
}

} // namespace detail

inline Vec autoencoder_reconstruct(const Autoencoder& ae, const Vec& window_scaled) {
    if (window_scaled.size() != ae.input_len)
        throw IncompatibleLength("autoencoder window length mismatch");
    const std::size_t lp = ae.padded_len;
    Vec x = detail::pad_edge(window_scaled, lp);
    Vec h = kernels::conv1d_same(x, ae.w_conv1, ae.b_conv1, 1, 8, lp, 3);
    for (double& v : h) v = kernels::relu(v);
    h = kernels::maxpool2(h, 8, lp);
    h = kernels::conv1d_same(h, ae.w_conv2, ae.b_conv2, 8, 16, lp / 2, 3);
    for (double& v : h) v = kernels::relu(v);
    h = kernels::maxpool2(h, 16, lp / 2);
    Vec code = kernels::fc(h, ae.w_enc, ae.b_enc, Autoencoder::kCode, ae.flat_len());
    Vec d = kernels::fc(code, ae.w_dec, ae.b_dec, ae.flat_len(), Autoencoder::kCode);
    for (double& v : d) v = kernels::relu(v);
    d = kernels::deconv1d_k4s2(d, ae.w_deconv1, ae.b_deconv1, 16, 8, lp / 4);
    for (double& v : d) v = kernels::relu(v);
    d = kernels::deconv1d_k4s2(d, ae.w_deconv2, ae.b_deconv2, 8, 1, lp / 2);
    d.resize(ae.input_len);
    return d;
}

// Mean squared reconstruction error of the (scaled) window.
inline double statistic_autoencoder(const Autoencoder& ae, const Vec& window_scaled) {
    const Vec r = autoencoder_reconstruct(ae, window_scaled);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = r[i] - window_scaled[i];
        s += d * d;
    }
    return s / static_cast<double>(r.size());
}

struct AeTrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    std::size_t max_windows = 2000;
    std::size_t patience = 5;  // early stop on validation reconstruction error
    std::size_t threads = 0;
};

// Minimizes reconstruction MSE on clean scaled windows; returns the per-epoch
// validation errors. Keeps the best-validation weights when validation is given.
inline std::vector<double> train_autoencoder(Autoencoder& ae, const std::vector<Vec>& train_windows,
                                             const std::vector<Vec>& val_windows,
                                             const AeTrainConfig& cfg) {
    std::vector<std::size_t> order(train_windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.max_windows > 0 && order.size() > cfg.max_windows) order.resize(cfg.max_windows);

    auto params = detail::ae_params(ae);
    std::size_t dim = 0;
    for (auto* p : params) dim += p->size();
    Adam opt(dim, AdamConfig{ cfg.lr });
    std::mt19937_64 rng(cfg.seed);

    auto flatten = [&] {
        Vec f;
        for (auto* p : params) f.insert(f.end(), p->begin(), p->end());
        return f;
    };
    auto unflatten = [&](const Vec& f) {
        std::size_t off = 0;
        for (auto* p : params)
            for (double& v : *p) v = f[off++];
    };

    Vec flat = flatten();
    std::vector<double> val_hist;
    double best_val = std::numeric_limits<double>::infinity();
    Vec best_flat = flat;
    std::size_t since_best = 0;

    auto val_error = [&] {
        if (val_windows.empty()) return 0.0;
        std::vector<double> per(val_windows.size());
        parallel_for(val_windows.size(), [&](std::size_t i) {
            per[i] = statistic_autoencoder(ae, val_windows[i]);
        }, cfg.threads);
        double s = 0.0;
        for (double v : per) s += v;
        return s / static_cast<double>(per.size());
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            const std::size_t e = std::min(order.size(), b + cfg.batch);
            std::vector<Vec> grads(e - b);
            parallel_for(e - b, [&](std::size_t i) {
                Autoencoder local = ae;
                ad::Tape tape;
                auto tf = detail::ae_forward_tape(tape, local, train_windows[order[b + i]]);
                ad::Var loss = tape.mse_loss(tf.recon, train_windows[order[b + i]]);
                tape.backward(loss);
                Vec g;
                for (const auto& leaf : tf.param_leaves) {
                    const Vec& lg = tape.grad(leaf);
                    g.insert(g.end(), lg.begin(), lg.end());
                }
                grads[i] = std::move(g);
            }, cfg.threads);
            Vec g(dim, 0.0);
            for (const auto& gi : grads)
                for (std::size_t j = 0; j < dim; ++j) g[j] += gi[j];
            const double inv = 1.0 / static_cast<double>(e - b);
            for (double& x : g) x *= inv;
            opt.step(flat, g);
            unflatten(flat);
        }
        const double v = val_error();
        val_hist.push_back(v);
        if (!val_windows.empty()) {
            if (v < best_val) {
                best_val = v;
                best_flat = flat;
                since_best = 0;
            } else if (++since_best > cfg.patience) {
                break;
            }
        }
    }
    if (!val_windows.empty()) unflatten(best_flat);
    return val_hist;
}

// ----------------------------------------------------------------------------
// Detector
// ----------------------------------------------------------------------------

enum class DetectorKind { Norm, Autoencoder };

inline const char* to_string(DetectorKind k) {
    return k == DetectorKind::Norm ? "norm" : "autoencoder";
}

struct Detector {
    DetectorKind kind = DetectorKind::Norm;
    double threshold = 0.0;
    Autoencoder ae;  // populated when kind == Autoencoder

    double evaluate_norm(const Vec& received, const Vec& prediction_avg) const {
        return statistic_norm(received, prediction_avg);
    }
    double evaluate_autoencoder(const Vec& window_scaled) const {
        return statistic_autoencoder(ae, window_scaled);
    }
};

// delta = empirical lower (1-alpha)-quantile of the clean statistics.
inline double calibrate_threshold(std::vector<double> clean_statistics, double alpha) {
    if (clean_statistics.empty()) throw EmptyCalibrationSet("no clean statistics to calibrate on");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("calibrate: alpha must lie in (0,1)");
    std::sort(clean_statistics.begin(), clean_statistics.end());
    const double n = static_cast<double>(clean_statistics.size());
    std::size_t idx = static_cast<std::size_t>(std::ceil((1.0 - alpha) * n));
    if (idx == 0) idx = 1;
    if (idx > clean_statistics.size()) idx = clean_statistics.size();
    return clean_statistics[idx - 1];
}

// ----------------------------------------------------------------------------
// Streaming evaluation
// ----------------------------------------------------------------------------

struct DetectorRecord {
    std::size_t k = 0;
    double z = 0.0;
    bool alarm = false;
};

// Sequential pass over a domain-unit stream. Statistics are emitted only once
// defined (warm-up steps are skipped, not zero-filled):
//   norm: k >= lookback - 1 + 2h - 1 (trailing-h vector of prediction averages)
//   autoencoder: k >= lookback - 1
// `emit_from`/`emit_to` bound the emitted k range (emit_to = 0 means stream end).
inline std::vector<DetectorRecord> run_detector(const Detector& det, const ForecastPipeline& pipe,
                                                const RawSeries& stream, std::size_t emit_from = 0,
                                                std::size_t emit_to = 0) {
    const std::size_t lb = pipe.model.cfg.lookback;
    const std::size_t h = pipe.model.cfg.horizon;
    const std::size_t n = stream.size();
    if (emit_to == 0 || emit_to > n) emit_to = n;
    std::vector<DetectorRecord> out;
    if (n < lb) return out;

    if (det.kind == DetectorKind::Autoencoder) {
        for (std::size_t k = lb - 1; k < emit_to; ++k) {
            if (k < emit_from) continue;
            Vec win(stream.values.begin() + (k + 1 - lb), stream.values.begin() + (k + 1));
            const double z = det.evaluate_autoencoder(pipe.scaler.apply(win));
            out.push_back({ k, z, z > det.threshold });
        }
        return out;
    }

    // norm detector: forecasts at every origin feed the prediction buffer
    std::vector<double> ybar(n, 0.0);
    std::vector<bool> ybar_ok(n, false);
    {
        PredictionBuffer buf(h);
        for (std::size_t o = lb - 1; o < n; ++o) {
            Vec win(stream.values.begin() + (o + 1 - lb), stream.values.begin() + (o + 1));
            buf.push(o, pipe.forecast_domain(win));
            const std::size_t k = o + 1;  // earliest time whose h predictions may now exist
            if (k < n) {
                if (auto avg = buf.average_for(k)) {
                    ybar[k] = *avg;
                    ybar_ok[k] = true;
                }
            }
        }
    }
    for (std::size_t k = emit_from; k < emit_to; ++k) {
        if (k + 1 < h) continue;
        bool ok = true;
        for (std::size_t i = k + 1 - h; i <= k; ++i)
            if (!ybar_ok[i]) { ok = false; break; }
        if (!ok) continue;
        Vec rec(stream.values.begin() + (k + 1 - h), stream.values.begin() + (k + 1));
        Vec avg(h);
        for (std::size_t i = 0; i < h; ++i) avg[i] = ybar[k + 1 - h + i];
        const double z = det.evaluate_norm(rec, avg);
        out.push_back({ k, z, z > det.threshold });
    }
    return out;
}

// Clean statistics for calibration: z-values of a clean stream.
inline std::vector<double> clean_statistics(const Detector& det, const ForecastPipeline& pipe,
                                            const RawSeries& stream) {
    std::vector<double> zs;
    for (const auto& r : run_detector(det, pipe, stream)) zs.push_back(r.z);
    return zs;
}

inline void write_detector_csv(std::ostream& os, const std::vector<DetectorRecord>& records) {
    os << "k,z,alarm\n";
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%d\n", r.k, r.z, r.alarm ? 1 : 0);
        os << buf;
    }
}

} // namespace tsrob
