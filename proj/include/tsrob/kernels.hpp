#pragma once

// Forward kernels shared by the plain evaluation path and the tape: both
// paths run exactly these loops, so plain and recorded forwards agree
// bit-for-bit.

#include <cmath>
#include <numbers>

#include "tsrob/linalg.hpp"
#include "tsrob/ssm.hpp"

namespace tsrob::kernels {

// Exact-erf GeLU (not the tanh approximation).
inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Per-time-step affine map over a [L x d_in] row-major sequence.
inline Vec time_fc(const Vec& x, const Vec& w, const Vec& b, std::size_t len,
                   std::size_t d_in, std::size_t d_out) {
    Vec y(len * d_out);
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t o = 0; o < d_out; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < d_in; ++i) s += w[o * d_in + i] * x[t * d_in + i];
            y[t * d_out + o] = s;
        }
    return y;
}

// Companion-cell scan over channel `ch` of a [L x d] sequence, output read
// after the state update. Returns outputs and (optionally) the state history
// x_0..x_L needed for backpropagation.
inline Vec channel_scan_post(const Vec& x, const Vec& a, const Vec& c, std::size_t len,
                             std::size_t d, std::size_t ch, Vec* state_history = nullptr) {
    const std::size_t n = a.size();
    Vec state(n, 0.0);
    Vec y(len);
    if (state_history) {
        state_history->assign((len + 1) * n, 0.0);
    }
    for (std::size_t t = 0; t < len; ++t) {
        if (state_history)
            for (std::size_t j = 0; j < n; ++j) (*state_history)[t * n + j] = state[j];
        CompanionSSM::step_state(state, a, x[t * d + ch]);
        y[t] = dot(c, state);
    }
    if (state_history)
        for (std::size_t j = 0; j < n; ++j) (*state_history)[len * n + j] = state[j];
    return y;
}

// Decoder: consume the encoded scalar sequence, then roll out h closed-loop
// steps feeding back the predicted next input k . xi. Forecast i reads
// c . (A + b k)^i xi_L. State histories are captured for backpropagation.
struct DecoderTrace {
    Vec consume_states;  // (L+1) x n : xi_0 .. xi_L
    Vec rollout_states;  // (h) x n   : zeta_0 = xi_L, zeta_1, ..., zeta_{h-1}
};

inline Vec decoder_forecast(const Vec& e, const Vec& a, const Vec& c, const Vec& k,
                            std::size_t horizon, DecoderTrace* trace = nullptr) {
    const std::size_t n = a.size();
    const std::size_t len = e.size();
    Vec xi(n, 0.0);
    if (trace) trace->consume_states.assign((len + 1) * n, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
        if (trace)
            for (std::size_t j = 0; j < n; ++j) trace->consume_states[t * n + j] = xi[j];
        CompanionSSM::step_state(xi, a, e[t]);
    }
    if (trace)
        for (std::size_t j = 0; j < n; ++j) trace->consume_states[len * n + j] = xi[j];

    Vec yhat(horizon);
    if (trace) trace->rollout_states.assign(horizon * n, 0.0);
    for (std::size_t i = 0; i < horizon; ++i) {
        if (i > 0) {
            const double u = dot(k, xi);
            CompanionSSM::step_state(xi, a, u);
        }
        if (trace)
            for (std::size_t j = 0; j < n; ++j) trace->rollout_states[i * n + j] = xi[j];
        yhat[i] = dot(c, xi);
    }
    return yhat;
}

// --- detector autoencoder kernels (channel-major [C x L] layout) ------------

// Same-padding 1-D convolution, kernel width K (weights [C_out][C_in][K]).
inline Vec conv1d_same(const Vec& x, const Vec& w, const Vec& b, std::size_t c_in,
                       std::size_t c_out, std::size_t len, std::size_t kw) {
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kw / 2);
    Vec y(c_out * len);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t t = 0; t < len; ++t) {
            double s = b[co];
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t kk = 0; kk < kw; ++kk) {
                    const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t) +
                                              static_cast<std::ptrdiff_t>(kk) - half;
                    if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(len)) continue;
                    s += w[(co * c_in + ci) * kw + kk] * x[ci * len + static_cast<std::size_t>(tt)];
                }
            y[co * len + t] = s;
        }
    return y;
}

// Max pooling, window 2 stride 2. Records winner indices when asked.
inline Vec maxpool2(const Vec& x, std::size_t channels, std::size_t len,
                    std::vector<std::size_t>* argmax = nullptr) {
    const std::size_t lo = len / 2;
    Vec y(channels * lo);
    if (argmax) argmax->assign(channels * lo, 0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < lo; ++t) {
            const std::size_t i0 = c * len + 2 * t, i1 = i0 + 1;
            const bool first = x[i0] >= x[i1];
            y[c * lo + t] = first ? x[i0] : x[i1];
            if (argmax) (*argmax)[c * lo + t] = first ? i0 : i1;
        }
    return y;
}

// Transposed convolution, kernel 4, stride 2, padding 1: output length is
// exactly 2 * len (weights [C_out][C_in][K]).
inline Vec deconv1d_k4s2(const Vec& x, const Vec& w, const Vec& b, std::size_t c_in,
                         std::size_t c_out, std::size_t len) {
    const std::size_t lo = 2 * len;
    constexpr std::size_t kw = 4;
    Vec y(c_out * lo);
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t t = 0; t < lo; ++t) y[co * lo + t] = b[co];
    for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t t = 0; t < len; ++t) {
            const double xv = x[ci * len + t];
            if (xv == 0.0) continue;
            for (std::size_t co = 0; co < c_out; ++co)
                for (std::size_t kk = 0; kk < kw; ++kk) {
                    const std::ptrdiff_t to = 2 * static_cast<std::ptrdiff_t>(t) +
                                              static_cast<std::ptrdiff_t>(kk) - 1;
                    if (to < 0 || to >= static_cast<std::ptrdiff_t>(lo)) continue;
                    y[co * lo + static_cast<std::size_t>(to)] +=
                        w[(co * c_in + ci) * kw + kk] * xv;
                }
        }
    return y;
}

inline Vec fc(const Vec& x, const Vec& w, const Vec& b, std::size_t m, std::size_t n) {
    Vec y(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < n; ++j) s += w[i * n + j] * x[j];
        y[i] = s;
    }
    return y;
}

} // namespace tsrob::kernels
