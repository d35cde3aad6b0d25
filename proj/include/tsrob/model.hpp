#pragma once

// The forecaster: affine scalar->channel embedding, encoder layers (bank of
// SISO companion cells, GeLU MLP mixer across channels, skip connection),
// channel->scalar projection, and a SISO decoder cell with two output rows
// (forecast row and input-feedback row) that rolls the horizon out
// closed-loop, synthesizing its own future inputs.

#include <random>
#include <stdexcept>
#include <string>

#include "tsrob/autodiff.hpp"
#include "tsrob/kernels.hpp"
#include "tsrob/series.hpp"
#include "tsrob/ssm.hpp"

namespace tsrob {

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MlpMixer {
    std::size_t width = 0, hidden = 0;
    Vec w1, b1;  // [hidden x width], [hidden]
    Vec w2, b2;  // [width x hidden], [width]
    bool identity = false;  // bypass entirely (linearized model)
};

struct EncoderLayer {
    std::vector<CompanionSSM> ssm_bank;  // one cell per channel
    MlpMixer mixer;
    bool skip = true;
};

struct DecoderLayer {
    std::size_t order = 0;
    Vec a_coeffs;    // bottom row of the companion matrix
    Vec c_forecast;  // forecast output row
    Vec k_feedback;  // input-feedback row (predicts the decoder's next input)
};

struct ModelConfig {
    std::size_t lookback = 84;
    std::size_t horizon = 12;
    std::size_t channels = 8;
    std::size_t encoder_layers = 2;
    std::size_t order_enc = 4;
    std::size_t order_dec = 4;
    std::size_t mlp_hidden = 0;  // 0 -> same as channels
};

struct SpacetimeModel {
    ModelConfig cfg;
    Vec embed_w, embed_b;  // scalar -> channels
    std::vector<EncoderLayer> encoder;
    Vec proj_w;  // channels -> scalar
    double proj_b = 0.0;
    DecoderLayer decoder;

    std::size_t lookback() const { return cfg.lookback; }
    std::size_t horizon() const { return cfg.horizon; }
};

// ----------------------------------------------------------------------------
// Construction
// ----------------------------------------------------------------------------

// Coefficient rows uniform in [-0.5/n, 0.5/n] (initial spectral radius < 1
// with high probability, instability reachable by training); affine maps with
// small-variance init. Stability is never enforced afterwards.
inline SpacetimeModel make_model(const ModelConfig& cfg_in, std::uint64_t seed) {
    ModelConfig cfg = cfg_in;
    if (cfg.mlp_hidden == 0) cfg.mlp_hidden = cfg.channels;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto smallg = [&](std::size_t fan_in) {
        return gauss(rng) / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    };

    SpacetimeModel m;
    m.cfg = cfg;
    m.embed_w.resize(cfg.channels);
    m.embed_b.assign(cfg.channels, 0.0);
    for (auto& w : m.embed_w) w = 0.5 * smallg(1);

    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        EncoderLayer layer;
        for (std::size_t cch = 0; cch < cfg.channels; ++cch) {
            CompanionSSM cell(cfg.order_enc);
            std::uniform_real_distribution<double> ua(-0.5 / static_cast<double>(cfg.order_enc),
                                                      0.5 / static_cast<double>(cfg.order_enc));
            for (auto& a : cell.a_coeffs) a = ua(rng);
            for (auto& c : cell.c) c = smallg(cfg.order_enc);
            layer.ssm_bank.push_back(std::move(cell));
        }
        layer.mixer.width = cfg.channels;
        layer.mixer.hidden = cfg.mlp_hidden;
        layer.mixer.w1.resize(cfg.mlp_hidden * cfg.channels);
        layer.mixer.b1.assign(cfg.mlp_hidden, 0.0);
        layer.mixer.w2.resize(cfg.channels * cfg.mlp_hidden);
        layer.mixer.b2.assign(cfg.channels, 0.0);
        for (auto& w : layer.mixer.w1) w = smallg(cfg.channels);
        for (auto& w : layer.mixer.w2) w = smallg(cfg.mlp_hidden);
        m.encoder.push_back(std::move(layer));
    }

    m.proj_w.resize(cfg.channels);
    for (auto& w : m.proj_w) w = smallg(cfg.channels);
    m.proj_b = 0.0;

    m.decoder.order = cfg.order_dec;
    m.decoder.a_coeffs.assign(cfg.order_dec, 0.0);
    m.decoder.c_forecast.assign(cfg.order_dec, 0.0);
    m.decoder.k_feedback.assign(cfg.order_dec, 0.0);
    {
        std::uniform_real_distribution<double> ua(-0.5 / static_cast<double>(cfg.order_dec),
                                                  0.5 / static_cast<double>(cfg.order_dec));
        for (auto& a : m.decoder.a_coeffs) a = ua(rng);
        for (auto& c : m.decoder.c_forecast) c = smallg(cfg.order_dec);
        for (auto& k : m.decoder.k_feedback) k = 0.5 * smallg(cfg.order_dec);
    }
    return m;
}

// ----------------------------------------------------------------------------
// Parameter flattening (deterministic depth-first order)
// ----------------------------------------------------------------------------
// Order: embed.w, embed.b, then per encoder layer: per channel cell (a, c),
// mixer (w1, b1, w2, b2), then decoder (a, c, k), proj.w, proj.b.

struct ParamRef {
    std::string name;
    Vec* data;
};

inline std::vector<ParamRef> parameters(SpacetimeModel& m) {
    std::vector<ParamRef> ps;
    ps.push_back({ "embed.w", &m.embed_w });
    ps.push_back({ "embed.b", &m.embed_b });
    for (std::size_t l = 0; l < m.encoder.size(); ++l) {
        auto& layer = m.encoder[l];
        const std::string pfx = "enc" + std::to_string(l) + ".";
        for (std::size_t c = 0; c < layer.ssm_bank.size(); ++c) {
            const std::string cp = pfx + "ssm" + std::to_string(c) + ".";
            ps.push_back({ cp + "a", &layer.ssm_bank[c].a_coeffs });
            ps.push_back({ cp + "c", &layer.ssm_bank[c].c });
        }
        ps.push_back({ pfx + "mlp.w1", &layer.mixer.w1 });
        ps.push_back({ pfx + "mlp.b1", &layer.mixer.b1 });
        ps.push_back({ pfx + "mlp.w2", &layer.mixer.w2 });
        ps.push_back({ pfx + "mlp.b2", &layer.mixer.b2 });
    }
    ps.push_back({ "dec.a", &m.decoder.a_coeffs });
    ps.push_back({ "dec.c", &m.decoder.c_forecast });
    ps.push_back({ "dec.k", &m.decoder.k_feedback });
    ps.push_back({ "proj.w", &m.proj_w });
    return ps;
}

inline Vec flatten_parameters(SpacetimeModel& m) {
    Vec flat;
    for (const auto& p : parameters(m)) flat.insert(flat.end(), p.data->begin(), p.data->end());
    flat.push_back(m.proj_b);
    return flat;
}

inline void unflatten_parameters(SpacetimeModel& m, const Vec& flat) {
    std::size_t off = 0;
    for (const auto& p : parameters(m))
        for (double& v : *p.data) v = flat.at(off++);
    m.proj_b = flat.at(off++);
    if (off != flat.size()) throw ShapeMismatch("parameter vector length mismatch");
}

inline std::size_t parameter_count(SpacetimeModel& m) {
    std::size_t n = 1;  // proj_b
    for (const auto& p : parameters(m)) n += p.data->size();
    return n;
}

// ----------------------------------------------------------------------------
// Forward pass
// ----------------------------------------------------------------------------

namespace detail {

// embed -> encoder layers -> channel projection; returns the scalar encoded
// sequence the decoder consumes.
inline Vec encode_sequence(const SpacetimeModel& m, const Vec& y) {
    const std::size_t len = y.size();
    const std::size_t d = m.cfg.channels;
    Vec seq = kernels::time_fc(y, m.embed_w, m.embed_b, len, 1, d);
    for (const auto& layer : m.encoder) {
        std::vector<Vec> scans(d);
        for (std::size_t c = 0; c < d; ++c)
            scans[c] = kernels::channel_scan_post(seq, layer.ssm_bank[c].a_coeffs,
                                                  layer.ssm_bank[c].c, len, d, c);
        Vec h(len * d);
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t t = 0; t < len; ++t) h[t * d + c] = scans[c][t];
        Vec mixed;
        if (layer.mixer.identity) {
            mixed = h;
        } else {
            Vec z = kernels::time_fc(h, layer.mixer.w1, layer.mixer.b1, len, d, layer.mixer.hidden);
            for (double& v : z) v = kernels::gelu(v);
            mixed = kernels::time_fc(z, layer.mixer.w2, layer.mixer.b2, len, layer.mixer.hidden, d);
        }
        if (layer.skip)
            for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] += seq[i];
        seq = std::move(mixed);
    }
    return kernels::time_fc(seq, m.proj_w, Vec{ m.proj_b }, len, d, 1);
}

struct TapeForward {
    ad::Var input;
    ad::Var output;
    std::vector<ad::Var> param_leaves;  // flattening order, proj_b last
};

inline TapeForward forward_tape(ad::Tape& tape, SpacetimeModel& m, const Vec& window) {
    const std::size_t len = window.size();
    const std::size_t d = m.cfg.channels;
    TapeForward tf;
    tf.input = tape.leaf(window);

    auto params = parameters(m);
    std::vector<ad::Var> leaves;
    leaves.reserve(params.size() + 1);
    for (const auto& p : params) leaves.push_back(tape.leaf(*p.data));
    ad::Var proj_b_leaf = tape.leaf(Vec{ m.proj_b });
    leaves.push_back(proj_b_leaf);
    tf.param_leaves = leaves;

    std::size_t pi = 0;
    ad::Var embed_w = leaves[pi++];
    ad::Var embed_b = leaves[pi++];
    ad::Var seq = tape.time_fc(tf.input, embed_w, embed_b, len, 1, d);
    for (const auto& layer : m.encoder) {
        std::vector<ad::Var> cell_a(d), cell_c(d);
        for (std::size_t c = 0; c < d; ++c) {
            cell_a[c] = leaves[pi++];
            cell_c[c] = leaves[pi++];
        }
        std::vector<ad::Var> scans(d);
        for (std::size_t c = 0; c < d; ++c)
            scans[c] = tape.channel_scan(seq, cell_a[c], cell_c[c], len, d, c);
        ad::Var h = tape.stack_channels(scans, len);
        ad::Var w1 = leaves[pi++], b1 = leaves[pi++], w2 = leaves[pi++], b2 = leaves[pi++];
        ad::Var mixed;
        if (layer.mixer.identity) {
            mixed = h;
        } else {
            ad::Var z = tape.time_fc(h, w1, b1, len, d, layer.mixer.hidden);
            z = tape.gelu(z);
            mixed = tape.time_fc(z, w2, b2, len, layer.mixer.hidden, d);
        }
        seq = layer.skip ? tape.add(mixed, seq) : mixed;
    }
    ad::Var dec_a = leaves[pi++], dec_c = leaves[pi++], dec_k = leaves[pi++];
    ad::Var proj_w = leaves[pi++];
    ad::Var enc = tape.time_fc(seq, proj_w, proj_b_leaf, len, d, 1);
    tf.output = tape.decoder_forecast(enc, dec_a, dec_c, dec_k, m.cfg.horizon);
    return tf;
}

} // namespace detail

// h-step forecast from a scaled look-back window.
inline Vec forecast(const SpacetimeModel& m, const Vec& window) {
    if (window.size() != m.cfg.lookback)
        throw ShapeMismatch("forecast: window length " + std::to_string(window.size()) +
                            " != lookback " + std::to_string(m.cfg.lookback));
    const Vec enc = detail::encode_sequence(m, window);
    return kernels::decoder_forecast(enc, m.decoder.a_coeffs, m.decoder.c_forecast,
                                     m.decoder.k_feedback, m.cfg.horizon);
}

// One-step-ahead streaming predictions: output[t] predicts y[t+1] from
// y[0..t]. Encoder and decoder states are carried along the whole stream.
inline Vec predict_stream(const SpacetimeModel& m, const Vec& y) {
    const Vec enc = detail::encode_sequence(m, y);
    Vec xi(m.decoder.order, 0.0);
    Vec out(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
        CompanionSSM::step_state(xi, m.decoder.a_coeffs, enc[t]);
        out[t] = dot(m.decoder.c_forecast, xi);
    }
    return out;
}

// Returns a copy with every MLP replaced by identity, skip connections
// disabled and all biases zeroed, so the input -> forecast map is exactly
// linear. Idempotent.
inline SpacetimeModel linearize(const SpacetimeModel& m) {
    SpacetimeModel lin = m;
    for (double& b : lin.embed_b) b = 0.0;
    for (auto& layer : lin.encoder) {
        layer.mixer.identity = true;
        layer.skip = false;
        for (double& b : layer.mixer.b1) b = 0.0;
        for (double& b : layer.mixer.b2) b = 0.0;
    }
    lin.proj_b = 0.0;
    return lin;
}

inline bool is_linearized(const SpacetimeModel& m) {
    if (m.proj_b != 0.0) return false;
    for (double b : m.embed_b)
        if (b != 0.0) return false;
    for (const auto& layer : m.encoder)
        if (!layer.mixer.identity || layer.skip) return false;
    return true;
}

// Decoder-only model realizing the Luenberger observer
//   xhat_{k+1} = A xhat_k + L (y_k - C xhat_k),  yhat_{k+1} = C xhat_{k+1}
// via the similarity transform of (A - LC, L) into companion form. The
// feedback row is set to the forecast row: the decoder-only model's input
// stream is y itself, so predicting the next input equals predicting the next
// output; multi-step rollout then iterates the one-step predictor.
inline SpacetimeModel from_observer(const Mat& a, const Vec& l, const Vec& c_row,
                                    std::size_t horizon = 1, std::size_t lookback = 0) {
    const std::size_t p = a.rows;
    Mat f = a;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) f(i, j) -= l[i] * c_row[j];
    const CompanionRealization cr = to_companion(f, l, c_row);

    SpacetimeModel m;
    m.cfg.lookback = lookback ? lookback : p;
    m.cfg.horizon = horizon;
    m.cfg.channels = 1;
    m.cfg.encoder_layers = 0;
    m.cfg.order_enc = 0;
    m.cfg.order_dec = p;
    m.cfg.mlp_hidden = 1;
    m.embed_w = { 1.0 };
    m.embed_b = { 0.0 };
    m.proj_w = { 1.0 };
    m.proj_b = 0.0;
    m.decoder.order = p;
    m.decoder.a_coeffs = cr.a_coeffs;
    m.decoder.c_forecast = cr.c;
    m.decoder.k_feedback = cr.c;
    return m;
}

// ----------------------------------------------------------------------------
// Gradients
// ----------------------------------------------------------------------------

enum class LossKind { Mse, SumSquares, L2Norm };

struct GradResult {
    double loss = 0.0;
    Vec wrt_params;  // flat, aligned with flatten_parameters()
    Vec wrt_input;   // length = lookback
};

inline GradResult grad(SpacetimeModel& m, const Vec& window, const Vec& target, LossKind kind) {
    if (window.size() != m.cfg.lookback) throw ShapeMismatch("grad: bad window length");
    ad::Tape tape;
    auto tf = detail::forward_tape(tape, m, window);
    ad::Var loss;
    switch (kind) {
        case LossKind::Mse: loss = tape.mse_loss(tf.output, target); break;
        case LossKind::SumSquares: loss = tape.sum_sq_loss(tf.output, target); break;
        case LossKind::L2Norm: loss = tape.l2_diff_loss(tf.output, target); break;
    }
    tape.backward(loss);
    GradResult r;
    r.loss = tape.value(loss)[0];
    for (const auto& leaf : tf.param_leaves) {
        const Vec& g = tape.grad(leaf);
        r.wrt_params.insert(r.wrt_params.end(), g.begin(), g.end());
    }
    r.wrt_input = tape.grad(tf.input);
    return r;
}

// Forward through the tape; used to pin tape == plain equivalence in tests.
inline Vec forecast_via_tape(SpacetimeModel& m, const Vec& window) {
    ad::Tape tape;
    auto tf = detail::forward_tape(tape, m, window);
    return tape.value(tf.output);
}

// ----------------------------------------------------------------------------
// Forecaster pipeline = model + scaler (domain-unit interface)
// ----------------------------------------------------------------------------

struct ForecastPipeline {
    SpacetimeModel model;
    Scaler scaler;

    Vec forecast_domain(const Vec& window) const {
        return scaler.invert(tsrob::forecast(model, scaler.apply(window)));
    }
};

} // namespace tsrob
