#pragma once

// Attack generation and hardening: detector-constrained normalized-gradient
// ascent, the input-clipped classical baseline, the model-free data-driven
// attack, and the adversarial fine-tuning loop.
//
// Stealth semantics: during generation the detector constraint is the
// window-wise proxy (norm kind: prediction-vs-target error norm in domain
// units; autoencoder kind: reconstruction statistic of the attacked scaled
// window). When a stream context is supplied, the final iterate must also
// pass a streaming replay audit at the attacked steps; accepted iterates are
// unwound until the audit is clean, so an outcome flagged stealthy replays
// with zero alarms by construction.

#include <optional>
#include <random>

#include "tsrob/detectors.hpp"
#include "tsrob/metrics.hpp"
#include "tsrob/model.hpp"
#include "tsrob/parallel.hpp"
#include "tsrob/train.hpp"

namespace tsrob {

struct DetectorViolatedAtInit : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct Infeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ZeroInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AttackMode { DetectorConstrained, InputClipped };

struct AttackConfig {
    double step_size = 1e-2;      // eta, applied in scaled units
    std::size_t max_iters = 100;  // M
    AttackMode mode = AttackMode::DetectorConstrained;
    double eps_clip = 0.0;   // per-coordinate bound (scaled units), input-clipped mode
    double norm_cap = 0.0;   // equal-attack-norm discipline: stop at ||a|| = cap (domain units)
};

struct AttackOutcome {
    Vec perturbation;     // a, domain units, length l (zero vector when skipped)
    Vec adv_prediction;   // forecast from the attacked window, domain units
    std::size_t iterations_used = 0;
    bool stealthy = false;
    bool zero_gradient = false;
    std::vector<double> statistic_trace;  // proxy statistic per accepted iterate
};

// Ties an attacked window to its position in a stream so the streaming
// detector can replay it. The attacked steps are the input-window span
// [origin - l + 1, origin] where the perturbation lives.
struct StreamContext {
    const RawSeries* series = nullptr;
    std::size_t origin = 0;
};

namespace detail {

inline double attack_proxy_statistic(const Detector& det, const ForecastPipeline& pipe,
                                     const Vec& u_scaled, const Vec& target_domain) {
    if (det.kind == DetectorKind::Autoencoder) return det.evaluate_autoencoder(u_scaled);
    const Vec pred = pipe.scaler.invert(forecast(pipe.model, u_scaled));
    return statistic_norm(pred, target_domain);
}

// Alarms at the attacked steps of the (possibly perturbed) stream. The
// substream is long enough that every emitted statistic matches a full-stream
// run exactly (per-origin forecasts are stateless).
inline std::size_t audit_alarms(const Detector& det, const ForecastPipeline& pipe,
                                const StreamContext& ctx, const Vec& perturbation_domain) {
    const std::size_t lb = pipe.model.cfg.lookback;
    const std::size_t h = pipe.model.cfg.horizon;
    const std::size_t attack_begin = ctx.origin + 1 - lb;
    const std::size_t context = lb + 2 * h + lb;  // prediction-buffer + window history
    const std::size_t sub_begin = attack_begin > context ? attack_begin - context : 0;

    RawSeries sub;
    sub.name = ctx.series->name;
    const std::size_t sub_end = std::min(ctx.series->size(), ctx.origin + 1);
    sub.values.assign(ctx.series->values.begin() + sub_begin,
                      ctx.series->values.begin() + sub_end);
    for (std::size_t i = 0; i < lb; ++i)
        sub.values[attack_begin - sub_begin + i] += perturbation_domain[i];

    const auto records = run_detector(det, pipe, sub, attack_begin - sub_begin,
                                      ctx.origin + 1 - sub_begin);
    std::size_t alarms = 0;
    for (const auto& r : records) alarms += r.alarm ? 1 : 0;
    return alarms;
}

} // namespace detail

// Normalized-gradient ascent on the forecast error with the detector as the
// stopping constraint (or a per-coordinate clip in input-clipped mode).
inline AttackOutcome pgd_attack(const ForecastPipeline& pipe, const SeriesWindow& window,
                                const AttackConfig& cfg, const Detector& detector,
                                const StreamContext* ctx = nullptr) {
    const std::size_t l = window.input.size();
    const Vec u0 = pipe.scaler.apply(window.input);
    const Vec target_scaled = pipe.scaler.apply(window.target);
    const double scale = pipe.scaler.scale;

    const bool constrained = (cfg.mode == AttackMode::DetectorConstrained);
    auto proxy = [&](const Vec& a_scaled) {
        Vec u = u0;
        for (std::size_t i = 0; i < l; ++i) u[i] += a_scaled[i];
        return detail::attack_proxy_statistic(detector, pipe, u, window.target);
    };

    const double z0 = proxy(Vec(l, 0.0));
    if (constrained && z0 > detector.threshold)
        throw DetectorViolatedAtInit("clean window statistic " + std::to_string(z0) +
                                     " already exceeds threshold " +
                                     std::to_string(detector.threshold));
    if (ctx && detail::audit_alarms(detector, pipe, *ctx, Vec(l, 0.0)) > 0)
        throw DetectorViolatedAtInit("clean stream already alarms at the attacked steps");

    AttackOutcome out;
    out.statistic_trace.push_back(z0);
    Vec a(l, 0.0);
    std::vector<Vec> accepted = { a };

    SpacetimeModel model_copy = pipe.model;  // grad needs mutable access
    bool capped = false;
    for (std::size_t t = 0; t < cfg.max_iters && !capped; ++t) {
        Vec u = u0;
        for (std::size_t i = 0; i < l; ++i) u[i] += a[i];
        GradResult gr = grad(model_copy, u, target_scaled, LossKind::L2Norm);
        const double gn = norm2(gr.wrt_input);
        if (gn < 1e-12) {
            out.zero_gradient = true;
            break;
        }
        Vec cand = a;
        for (std::size_t i = 0; i < l; ++i) cand[i] += cfg.step_size * gr.wrt_input[i] / gn;
        if (cfg.mode == AttackMode::InputClipped) {
            for (double& v : cand)
                v = std::clamp(v, -cfg.eps_clip, cfg.eps_clip);
        }
        if (cfg.norm_cap > 0.0) {
            const double cand_norm_domain = scale * norm2(cand);
            if (cand_norm_domain >= cfg.norm_cap) {
                const double f = cfg.norm_cap / cand_norm_domain;
                for (double& v : cand) v *= f;
                capped = true;
            }
        }
        if (constrained) {
            const double z = proxy(cand);
            if (z > detector.threshold) break;  // revert to a and stop
            out.statistic_trace.push_back(z);
        } else {
            out.statistic_trace.push_back(proxy(cand));
        }
        a = std::move(cand);
        accepted.push_back(a);
        out.iterations_used = t + 1;
    }

    // streaming replay audit; unwind accepted iterates until clean
    bool audited_ok = true;
    if (ctx) {
        std::size_t idx = accepted.size();
        audited_ok = false;
        while (idx-- > 0) {
            Vec a_dom = scaled(accepted[idx], scale);
            if (detail::audit_alarms(detector, pipe, *ctx, a_dom) == 0) {
                a = accepted[idx];
                out.iterations_used = idx;
                out.statistic_trace.resize(idx + 1);
                audited_ok = true;
                break;
            }
        }
    }

    out.perturbation = scaled(a, scale);
    Vec u = u0;
    for (std::size_t i = 0; i < l; ++i) u[i] += a[i];
    out.adv_prediction = pipe.scaler.invert(forecast(pipe.model, u));
    const double z_final = out.statistic_trace.back();
    out.stealthy = audited_ok && (!constrained || z_final <= detector.threshold);
    return out;
}

// ----------------------------------------------------------------------------
// Data-driven attack (model-free)
// ----------------------------------------------------------------------------

enum class DdaBranch { Auto, Plus, Minus };

struct DDAParams {
    double gamma = 1.0;
    double beta = 1.0;   // in (0, 1]
    double slack = 0.0;  // s > 0, same units as the threshold
    DdaBranch branch = DdaBranch::Auto;
};

// Rescales the received window along its own direction to the closed-form
// stealth-boundary norm target; needs no model or gradient access. The
// returned prediction is filled from the pipeline only for reporting.
inline AttackOutcome dda_attack(const SeriesWindow& window, const Detector& detector,
                                const DDAParams& params, double target_norm,
                                const ForecastPipeline* pipe_for_report = nullptr,
                                const StreamContext* ctx = nullptr) {
    if (detector.kind != DetectorKind::Norm)
        throw std::invalid_argument("dda_attack: closed form applies to the norm detector");
    const Vec& yi = window.input;
    const double ni = norm2(yi);
    if (ni == 0.0) throw ZeroInput("dda_attack: zero input window, direction undefined");

    const double mu = (detector.threshold - params.slack) * (detector.threshold - params.slack);
    const double rad = target_norm * target_norm * (params.beta * params.beta - 1.0) + mu;
    if (rad < 0.0)
        throw Infeasible("dda_attack: (delta - s)^2 < ||y_o||^2 (1 - beta^2)");
    const double root = std::sqrt(rad);
    const double tp = (params.beta * target_norm + root) / params.gamma;
    const double tm = (params.beta * target_norm - root) / params.gamma;
    double t = tp;
    switch (params.branch) {
        case DdaBranch::Plus: t = tp; break;
        case DdaBranch::Minus: t = tm; break;
        case DdaBranch::Auto: t = (std::abs(tp - ni) <= std::abs(tm - ni)) ? tp : tm; break;
    }

    AttackOutcome out;
    out.perturbation.assign(yi.size(), 0.0);
    const double f = t / ni;
    for (std::size_t i = 0; i < yi.size(); ++i) out.perturbation[i] = yi[i] * (f - 1.0);
    out.iterations_used = 0;
    out.statistic_trace = {};
    out.stealthy = true;
    if (pipe_for_report) {
        Vec attacked = yi;
        for (std::size_t i = 0; i < yi.size(); ++i) attacked[i] += out.perturbation[i];
        out.adv_prediction = pipe_for_report->forecast_domain(attacked);
    }
    if (ctx && pipe_for_report) {
        if (detail::audit_alarms(detector, *pipe_for_report, *ctx, Vec(yi.size(), 0.0)) > 0)
            throw DetectorViolatedAtInit("clean stream already alarms at the attacked steps");
        out.stealthy = detail::audit_alarms(detector, *pipe_for_report, *ctx, out.perturbation) == 0;
    }
    return out;
}

// The attacked-input norm target of the closed form (exposed for the exact
// algebraic identity checks).
inline double dda_norm_target(const DDAParams& p, double threshold, double target_norm,
                              bool plus_branch) {
    const double mu = (threshold - p.slack) * (threshold - p.slack);
    const double rad = target_norm * target_norm * (p.beta * p.beta - 1.0) + mu;
    const double root = std::sqrt(rad);
    return (p.beta * target_norm + (plus_branch ? root : -root)) / p.gamma;
}

// gamma = mean ||y_o|| / ||y_i|| over the windows; beta = 1 unless a bounded
// number of forecaster queries is allowed, in which case it is the mean
// prediction/target cosine. Uses no gradients.
inline std::pair<double, double> estimate_gamma_beta(const std::vector<SeriesWindow>& windows,
                                                     const ForecastPipeline* query_access = nullptr,
                                                     std::size_t max_queries = 64) {
    double gamma_sum = 0.0;
    std::size_t gamma_n = 0;
    for (const auto& w : windows) {
        const double ni = norm2(w.input);
        if (ni == 0.0) continue;
        gamma_sum += norm2(w.target) / ni;
        ++gamma_n;
    }
    const double gamma = gamma_n ? gamma_sum / static_cast<double>(gamma_n) : 1.0;
    double beta = 1.0;
    if (query_access) {
        double bsum = 0.0;
        std::size_t bn = 0;
        for (const auto& w : windows) {
            if (bn >= max_queries) break;
            const Vec pred = query_access->forecast_domain(w.input);
            const double np = norm2(pred), nt = norm2(w.target);
            if (np == 0.0 || nt == 0.0) continue;
            bsum += dot(pred, w.target) / (np * nt);
            ++bn;
        }
        if (bn) beta = bsum / static_cast<double>(bn);
    }
    return { gamma, beta };
}

// ----------------------------------------------------------------------------
// Adversarial fine-tuning (train on attacked inputs with clean targets)
// ----------------------------------------------------------------------------

struct FinetuneConfig {
    std::size_t batch = 64;       // L windows attacked per outer iteration
    std::size_t iters = 10;       // T outer iterations
    double lr = 2e-3;             // plain gradient step on the mixed batch
    std::size_t inner_epochs = 1;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
};

struct FinetuneHistory {
    std::vector<double> clean_loss;  // scaled-MSE on the batch's clean pairs
    std::vector<double> adv_loss;    // scaled-MSE on the attacked pairs
    std::size_t windows_skipped = 0;
};

// Each outer iteration freshly attacks a sampled batch against the current
// model, then descends the MSE of the attacked inputs paired with their
// clean targets. The clean pairs ride along in the same batch: without that
// anchor the model drifts off the data distribution and both clean and
// robust error degrade. Updates are plain gradient steps; the adaptive
// optimizer's bias-corrected warm-up kicks a converged model too hard.
inline FinetuneHistory adversarial_finetune(ForecastPipeline& pipe,
                                            const std::vector<SeriesWindow>& windows_domain,
                                            const Detector& detector, const AttackConfig& atk,
                                            const FinetuneConfig& cfg) {
    FinetuneHistory hist;
    if (cfg.iters == 0 || windows_domain.empty()) return hist;
    std::mt19937_64 rng(cfg.seed);
    Vec params = flatten_parameters(pipe.model);

    for (std::size_t t = 0; t < cfg.iters; ++t) {
        std::vector<std::size_t> pick(cfg.batch);
        std::uniform_int_distribution<std::size_t> uw(0, windows_domain.size() - 1);
        for (auto& i : pick) i = uw(rng);

        // attack phase (parallel over windows, frozen model)
        std::vector<std::optional<AttackOutcome>> outcomes(pick.size());
        parallel_for(pick.size(), [&](std::size_t i) {
            try {
                outcomes[i] = pgd_attack(pipe, windows_domain[pick[i]], atk, detector);
            } catch (const DetectorViolatedAtInit&) {
                outcomes[i] = std::nullopt;
            }
        }, cfg.threads);

        std::vector<SeriesWindow> adv_scaled, clean_scaled;
        for (std::size_t i = 0; i < pick.size(); ++i) {
            if (!outcomes[i]) {
                ++hist.windows_skipped;
                continue;
            }
            const SeriesWindow& w = windows_domain[pick[i]];
            SeriesWindow adv;
            adv.origin_index = w.origin_index;
            adv.input = w.input;
            for (std::size_t j = 0; j < adv.input.size(); ++j)
                adv.input[j] += outcomes[i]->perturbation[j];
            adv.input = pipe.scaler.apply(adv.input);
            adv.target = pipe.scaler.apply(w.target);
            adv_scaled.push_back(std::move(adv));

            SeriesWindow cl;
            cl.origin_index = w.origin_index;
            cl.input = pipe.scaler.apply(w.input);
            cl.target = pipe.scaler.apply(w.target);
            clean_scaled.push_back(std::move(cl));
        }
        if (adv_scaled.empty()) {
            hist.clean_loss.push_back(0.0);
            hist.adv_loss.push_back(0.0);
            continue;
        }
        std::vector<SeriesWindow> batch = adv_scaled;
        batch.insert(batch.end(), clean_scaled.begin(), clean_scaled.end());
        std::vector<std::size_t> idx(batch.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t e = 0; e < cfg.inner_epochs; ++e) {
            Vec g = batch_gradient(pipe.model, batch, idx, nullptr, cfg.threads);
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.lr * g[i];
            unflatten_parameters(pipe.model, params);
        }
        hist.adv_loss.push_back(mean_mse(pipe.model, adv_scaled, cfg.threads));
        hist.clean_loss.push_back(mean_mse(pipe.model, clean_scaled, cfg.threads));
    }
    return hist;
}

// ----------------------------------------------------------------------------
// Equal-attack-norm discipline
// ----------------------------------------------------------------------------
// Robustness comparisons between two models reuse an identical ||a||: both
// attacks are regenerated with a shared norm cap, lowered until both land on
// it (or one of them hits its detector boundary first, which lowers the cap).

inline std::pair<AttackOutcome, AttackOutcome> equal_norm_attack_pair(
    const ForecastPipeline& pipe_a, const ForecastPipeline& pipe_b, const SeriesWindow& window,
    const AttackConfig& base_cfg, const Detector& det_a, const Detector& det_b) {
    AttackOutcome oa = pgd_attack(pipe_a, window, base_cfg, det_a);
    AttackOutcome ob = pgd_attack(pipe_b, window, base_cfg, det_b);
    double cap = std::min(norm2(oa.perturbation), norm2(ob.perturbation));
    for (int round = 0; round < 4; ++round) {
        AttackConfig cfg = base_cfg;
        if (cap <= 0.0) {
            // one side admits no stealthy perturbation at all: compare clean
            cfg.max_iters = 0;
            oa = pgd_attack(pipe_a, window, cfg, det_a);
            ob = pgd_attack(pipe_b, window, cfg, det_b);
            break;
        }
        cfg.norm_cap = cap;
        oa = pgd_attack(pipe_a, window, cfg, det_a);
        ob = pgd_attack(pipe_b, window, cfg, det_b);
        const double na = norm2(oa.perturbation), nb = norm2(ob.perturbation);
        if (std::abs(na - nb) <= 1e-9 * std::max(1.0, cap)) break;
        cap = std::min(na, nb);
    }
    return { std::move(oa), std::move(ob) };
}

} // namespace tsrob
