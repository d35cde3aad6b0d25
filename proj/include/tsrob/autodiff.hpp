#pragma once

// Reverse-mode differentiation over the model's primitive operations.
// A Tape records one forward pass (op kind, operand references, cached
// forward values); backward() walks the records in reverse, accumulating
// adjoints into every node. Gradients with respect to parameters and with
// respect to inputs are both read off leaf nodes.
//
// The recurrence primitives (channel_scan, decoder_forecast) backpropagate
// through time by storing all intermediate states (O(L*n) memory).

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tsrob/kernels.hpp"
#include "tsrob/linalg.hpp"

namespace tsrob::ad {

struct UnregisteredPrimitive : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class OpKind {
    Leaf,
    TimeFc,
    ChannelScan,
    StackChannels,
    Gelu,
    Relu,
    Add,
    Slice,
    DecoderForecast,
    Conv1d,
    MaxPool2,
    Deconv1d,
    Fc,
    MseLoss,
    L2DiffLoss,
    SumSqLoss,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::TimeFc: return "time_fc";
        case OpKind::ChannelScan: return "channel_scan";
        case OpKind::StackChannels: return "stack_channels";
        case OpKind::Gelu: return "gelu";
        case OpKind::Relu: return "relu";
        case OpKind::Add: return "add";
        case OpKind::Slice: return "slice";
        case OpKind::DecoderForecast: return "decoder_forecast";
        case OpKind::Conv1d: return "conv1d";
        case OpKind::MaxPool2: return "maxpool2";
        case OpKind::Deconv1d: return "deconv1d";
        case OpKind::Fc: return "fc";
        case OpKind::MseLoss: return "mse_loss";
        case OpKind::L2DiffLoss: return "l2_diff_loss";
        case OpKind::SumSqLoss: return "sum_sq_loss";
    }
    return nullptr;
}

struct Var {
    std::size_t idx = static_cast<std::size_t>(-1);
    bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

class Tape {
public:
    struct Node {
        OpKind kind;
        Vec value;
        Vec grad;  // adjoint, sized lazily on backward
        std::function<void(Tape&, const Node&)> backward;
    };

    Var leaf(Vec v) { return push(OpKind::Leaf, std::move(v), {}); }

    const Vec& value(Var v) const { return nodes_[v.idx].value; }
    const Vec& grad(Var v) const { return nodes_[v.idx].grad; }
    std::size_t size() const { return nodes_.size(); }

    // ---- primitive ops ------------------------------------------------------

    Var time_fc(Var x, Var w, Var b, std::size_t len, std::size_t d_in, std::size_t d_out) {
        Vec y = kernels::time_fc(value(x), value(w), value(b), len, d_in, d_out);
        return push(OpKind::TimeFc, std::move(y),
                    [x, w, b, len, d_in, d_out](Tape& t, const Node& self) {
                        const Vec& xv = t.value(x);
                        const Vec& wv = t.value(w);
                        Vec& gx = t.grad_ref(x);
                        Vec& gw = t.grad_ref(w);
                        Vec& gb = t.grad_ref(b);
                        for (std::size_t tt = 0; tt < len; ++tt)
                            for (std::size_t o = 0; o < d_out; ++o) {
                                const double g = self.grad[tt * d_out + o];
                                if (g == 0.0) continue;
                                gb[o] += g;
                                for (std::size_t i = 0; i < d_in; ++i) {
                                    gw[o * d_in + i] += g * xv[tt * d_in + i];
                                    gx[tt * d_in + i] += g * wv[o * d_in + i];
                                }
                            }
                    });
    }

    Var channel_scan(Var x, Var a, Var c, std::size_t len, std::size_t d, std::size_t ch) {
        auto states = std::make_shared<Vec>();
        Vec y = kernels::channel_scan_post(value(x), value(a), value(c), len, d, ch, states.get());
        return push(OpKind::ChannelScan, std::move(y),
                    [x, a, c, len, d, ch, states](Tape& t, const Node& self) {
                        const Vec& av = t.value(a);
                        const Vec& cv = t.value(c);
                        const std::size_t n = av.size();
                        Vec& gx = t.grad_ref(x);
                        Vec& ga = t.grad_ref(a);
                        Vec& gc = t.grad_ref(c);
                        Vec lam(n, 0.0);
                        for (std::size_t tt = len; tt-- > 0;) {
                            const double gy = self.grad[tt];
                            // y_t = c . x_{t+1}
                            if (gy != 0.0) {
                                for (std::size_t j = 0; j < n; ++j) {
                                    gc[j] += gy * (*states)[(tt + 1) * n + j];
                                    lam[j] += gy * cv[j];
                                }
                            }
                            // x_{t+1} = A x_t + b u_t  with b = e_{n-1}
                            gx[tt * d + ch] += lam[n - 1];
                            for (std::size_t j = 0; j < n; ++j)
                                ga[j] += lam[n - 1] * (*states)[tt * n + j];
                            CompanionSSM::step_adjoint(lam, av);
                        }
                    });
    }

    Var stack_channels(const std::vector<Var>& xs, std::size_t len) {
        const std::size_t d = xs.size();
        Vec y(len * d);
        for (std::size_t c = 0; c < d; ++c) {
            const Vec& xv = value(xs[c]);
            for (std::size_t t = 0; t < len; ++t) y[t * d + c] = xv[t];
        }
        return push(OpKind::StackChannels, std::move(y),
                    [xs, len, d](Tape& t, const Node& self) {
                        for (std::size_t c = 0; c < d; ++c) {
                            Vec& gx = t.grad_ref(xs[c]);
                            for (std::size_t tt = 0; tt < len; ++tt)
                                gx[tt] += self.grad[tt * d + c];
                        }
                    });
    }

    Var gelu(Var x) {
        const Vec& xv = value(x);
        Vec y(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = kernels::gelu(xv[i]);
        return push(OpKind::Gelu, std::move(y), [x](Tape& t, const Node& self) {
            const Vec& xv = t.value(x);
            Vec& gx = t.grad_ref(x);
            for (std::size_t i = 0; i < xv.size(); ++i)
                gx[i] += self.grad[i] * kernels::gelu_grad(xv[i]);
        });
    }

    Var relu(Var x) {
        const Vec& xv = value(x);
        Vec y(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = kernels::relu(xv[i]);
        return push(OpKind::Relu, std::move(y), [x](Tape& t, const Node& self) {
            const Vec& xv = t.value(x);
            Vec& gx = t.grad_ref(x);
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (xv[i] > 0.0) gx[i] += self.grad[i];
        });
    }

    Var add(Var x, Var y) {
        Vec v = value(x);
        const Vec& yv = value(y);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += yv[i];
        return push(OpKind::Add, std::move(v), [x, y](Tape& t, const Node& self) {
            Vec& gx = t.grad_ref(x);
            Vec& gy = t.grad_ref(y);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx[i] += self.grad[i];
                gy[i] += self.grad[i];
            }
        });
    }

    Var slice(Var x, std::size_t begin, std::size_t len) {
        const Vec& xv = value(x);
        Vec y(xv.begin() + begin, xv.begin() + begin + len);
        return push(OpKind::Slice, std::move(y), [x, begin, len](Tape& t, const Node& self) {
            Vec& gx = t.grad_ref(x);
            for (std::size_t i = 0; i < len; ++i) gx[begin + i] += self.grad[i];
        });
    }

    Var decoder_forecast(Var e, Var a, Var c, Var k, std::size_t horizon) {
        auto trace = std::make_shared<kernels::DecoderTrace>();
        Vec y = kernels::decoder_forecast(value(e), value(a), value(c), value(k), horizon,
                                          trace.get());
        return push(OpKind::DecoderForecast, std::move(y),
                    [e, a, c, k, horizon, trace](Tape& t, const Node& self) {
                        const Vec& av = t.value(a);
                        const Vec& cv = t.value(c);
                        const Vec& kv = t.value(k);
                        const std::size_t n = av.size();
                        const std::size_t len = t.value(e).size();
                        Vec& ge = t.grad_ref(e);
                        Vec& ga = t.grad_ref(a);
                        Vec& gc = t.grad_ref(c);
                        Vec& gk = t.grad_ref(k);
                        Vec lam(n, 0.0);
                        // rollout phase, reverse: i = horizon-1 .. 1
                        for (std::size_t i = horizon; i-- > 1;) {
                            const double gy = self.grad[i];
                            const double* zi = &trace->rollout_states[i * n];
                            if (gy != 0.0)
                                for (std::size_t j = 0; j < n; ++j) {
                                    gc[j] += gy * zi[j];
                                    lam[j] += gy * cv[j];
                                }
                            // zeta_i = A zeta_{i-1} + b (k . zeta_{i-1})
                            const double* zp = &trace->rollout_states[(i - 1) * n];
                            const double lam_last = lam[n - 1];
                            double kdotz = 0.0;
                            for (std::size_t j = 0; j < n; ++j) kdotz += kv[j] * zp[j];
                            (void)kdotz;
                            for (std::size_t j = 0; j < n; ++j) {
                                ga[j] += lam_last * zp[j];
                                gk[j] += lam_last * zp[j];
                            }
                            Vec lam_next(n, 0.0);
                            // lam_{i-1} = A' lam_i + k (b' lam_i)
                            lam_next = lam;
                            CompanionSSM::step_adjoint(lam_next, av);
                            for (std::size_t j = 0; j < n; ++j) lam_next[j] += kv[j] * lam_last;
                            lam = std::move(lam_next);
                        }
                        // forecast 0 reads xi_L = zeta_0
                        if (horizon > 0) {
                            const double gy = self.grad[0];
                            const double* z0 = &trace->rollout_states[0];
                            if (gy != 0.0)
                                for (std::size_t j = 0; j < n; ++j) {
                                    gc[j] += gy * z0[j];
                                    lam[j] += gy * cv[j];
                                }
                        }
                        // consume phase, reverse: t = len-1 .. 0
                        for (std::size_t tt = len; tt-- > 0;) {
                            const double lam_last = lam[n - 1];
                            ge[tt] += lam_last;
                            const double* xp = &trace->consume_states[tt * n];
                            for (std::size_t j = 0; j < n; ++j) ga[j] += lam_last * xp[j];
                            CompanionSSM::step_adjoint(lam, av);
                        }
                    });
    }

    Var conv1d(Var x, Var w, Var b, std::size_t c_in, std::size_t c_out, std::size_t len,
               std::size_t kw) {
        Vec y = kernels::conv1d_same(value(x), value(w), value(b), c_in, c_out, len, kw);
        return push(OpKind::Conv1d, std::move(y),
                    [x, w, b, c_in, c_out, len, kw](Tape& t, const Node& self) {
                        const Vec& xv = t.value(x);
                        const Vec& wv = t.value(w);
                        Vec& gx = t.grad_ref(x);
                        Vec& gw = t.grad_ref(w);
                        Vec& gb = t.grad_ref(b);
                        const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kw / 2);
                        for (std::size_t co = 0; co < c_out; ++co)
                            for (std::size_t tt = 0; tt < len; ++tt) {
                                const double g = self.grad[co * len + tt];
                                if (g == 0.0) continue;
                                gb[co] += g;
                                for (std::size_t ci = 0; ci < c_in; ++ci)
                                    for (std::size_t kk = 0; kk < kw; ++kk) {
                                        const std::ptrdiff_t src =
                                            static_cast<std::ptrdiff_t>(tt) +
                                            static_cast<std::ptrdiff_t>(kk) - half;
                                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len))
                                            continue;
                                        const std::size_t xi =
                                            ci * len + static_cast<std::size_t>(src);
                                        gw[(co * c_in + ci) * kw + kk] += g * xv[xi];
                                        gx[xi] += g * wv[(co * c_in + ci) * kw + kk];
                                    }
                            }
                    });
    }

    Var maxpool2(Var x, std::size_t channels, std::size_t len) {
        auto argmax = std::make_shared<std::vector<std::size_t>>();
        Vec y = kernels::maxpool2(value(x), channels, len, argmax.get());
        return push(OpKind::MaxPool2, std::move(y), [x, argmax](Tape& t, const Node& self) {
            Vec& gx = t.grad_ref(x);
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                gx[(*argmax)[i]] += self.grad[i];
        });
    }

    Var deconv1d(Var x, Var w, Var b, std::size_t c_in, std::size_t c_out, std::size_t len) {
        Vec y = kernels::deconv1d_k4s2(value(x), value(w), value(b), c_in, c_out, len);
        return push(OpKind::Deconv1d, std::move(y),
                    [x, w, b, c_in, c_out, len](Tape& t, const Node& self) {
                        const Vec& xv = t.value(x);
                        const Vec& wv = t.value(w);
                        Vec& gx = t.grad_ref(x);
                        Vec& gw = t.grad_ref(w);
                        Vec& gb = t.grad_ref(b);
                        const std::size_t lo = 2 * len;
                        constexpr std::size_t kw = 4;
                        for (std::size_t co = 0; co < c_out; ++co)
                            for (std::size_t to = 0; to < lo; ++to) gb[co] += self.grad[co * lo + to];
                        for (std::size_t ci = 0; ci < c_in; ++ci)
                            for (std::size_t tt = 0; tt < len; ++tt) {
                                const double xval = xv[ci * len + tt];
                                double gxi = 0.0;
                                for (std::size_t co = 0; co < c_out; ++co)
                                    for (std::size_t kk = 0; kk < kw; ++kk) {
                                        const std::ptrdiff_t to =
                                            2 * static_cast<std::ptrdiff_t>(tt) +
                                            static_cast<std::ptrdiff_t>(kk) - 1;
                                        if (to < 0 || to >= static_cast<std::ptrdiff_t>(lo))
                                            continue;
                                        const double g =
                                            self.grad[co * lo + static_cast<std::size_t>(to)];
                                        if (g == 0.0) continue;
                                        gw[(co * c_in + ci) * kw + kk] += g * xval;
                                        gxi += g * wv[(co * c_in + ci) * kw + kk];
                                    }
                                gx[ci * len + tt] += gxi;
                            }
                    });
    }

    Var fc(Var x, Var w, Var b, std::size_t m, std::size_t n) {
        Vec y = kernels::fc(value(x), value(w), value(b), m, n);
        return push(OpKind::Fc, std::move(y), [x, w, b, m, n](Tape& t, const Node& self) {
            const Vec& xv = t.value(x);
            const Vec& wv = t.value(w);
            Vec& gx = t.grad_ref(x);
            Vec& gw = t.grad_ref(w);
            Vec& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < m; ++i) {
                const double g = self.grad[i];
                if (g == 0.0) continue;
                gb[i] += g;
                for (std::size_t j = 0; j < n; ++j) {
                    gw[i * n + j] += g * xv[j];
                    gx[j] += g * wv[i * n + j];
                }
            }
        });
    }

    // ---- scalar losses (target is a constant, not a node) -------------------

    Var mse_loss(Var pred, Vec target) {
        const Vec& p = value(pred);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
        s /= static_cast<double>(p.size());
        auto tgt = std::make_shared<Vec>(std::move(target));
        return push(OpKind::MseLoss, Vec{ s }, [pred, tgt](Tape& t, const Node& self) {
            const Vec& p = t.value(pred);
            Vec& gp = t.grad_ref(pred);
            const double g = self.grad[0] * 2.0 / static_cast<double>(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * (p[i] - (*tgt)[i]);
        });
    }

    Var sum_sq_loss(Var pred, Vec target) {
        const Vec& p = value(pred);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
        auto tgt = std::make_shared<Vec>(std::move(target));
        return push(OpKind::SumSqLoss, Vec{ s }, [pred, tgt](Tape& t, const Node& self) {
            const Vec& p = t.value(pred);
            Vec& gp = t.grad_ref(pred);
            const double g = self.grad[0] * 2.0;
            for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * (p[i] - (*tgt)[i]);
        });
    }

    // L = || pred - target ||_2 ; gradient (p - t)/L, zero at the cusp.
    Var l2_diff_loss(Var pred, Vec target) {
        const Vec& p = value(pred);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
        const double l = std::sqrt(s);
        auto tgt = std::make_shared<Vec>(std::move(target));
        return push(OpKind::L2DiffLoss, Vec{ l }, [pred, tgt, l](Tape& t, const Node& self) {
            if (l == 0.0) return;
            const Vec& p = t.value(pred);
            Vec& gp = t.grad_ref(pred);
            const double g = self.grad[0] / l;
            for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * (p[i] - (*tgt)[i]);
        });
    }

    // ---- reverse pass --------------------------------------------------------

    void backward(Var loss) {
        if (value(loss).size() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
        nodes_[loss.idx].grad[0] = 1.0;
        for (std::size_t i = loss.idx + 1; i-- > 0;) {
            const Node& n = nodes_[i];
            if (n.backward) n.backward(*this, n);
        }
    }

    Vec& grad_ref(Var v) { return nodes_[v.idx].grad; }

private:
    Var push(OpKind kind, Vec value, std::function<void(Tape&, const Node&)> bwd) {
        if (op_name(kind) == nullptr) throw UnregisteredPrimitive("unknown primitive op kind");
        nodes_.push_back(Node{ kind, std::move(value), {}, std::move(bwd) });
        return Var{ nodes_.size() - 1 };
    }

    std::vector<Node> nodes_;
};

} // namespace tsrob::ad
