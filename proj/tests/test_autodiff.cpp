#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "tsrob/autodiff.hpp"
#include "tsrob/model.hpp"

using namespace tsrob;

namespace {

// relative error with an absolute floor, as used throughout the FD checks
double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({ std::abs(got), std::abs(want), 1e-6 });
}

SpacetimeModel random_model(std::uint64_t seed, std::size_t l = 10, std::size_t h = 4) {
    ModelConfig mc;
    mc.lookback = l;
    mc.horizon = h;
    mc.channels = 3;
    mc.encoder_layers = 2;
    mc.order_enc = 3;
    mc.order_dec = 3;
    return make_model(mc, seed);
}

} // namespace

TEST_CASE("gelu values and asymptotics") {
    REQUIRE(kernels::gelu(0.0) == 0.0);
    REQUIRE(kernels::gelu(30.0) == Catch::Approx(30.0).margin(1e-12));
    REQUIRE(std::abs(kernels::gelu(-10.0)) < 1e-12);
}

TEST_CASE("gelu gradient matches finite differences on a grid") {
    for (double x = -5.0; x <= 5.0; x += 0.125) {
        const double fd = (kernels::gelu(x + 1e-6) - kernels::gelu(x - 1e-6)) / 2e-6;
        REQUIRE(std::abs(kernels::gelu_grad(x) - fd) < 1e-7);
    }
}

TEST_CASE("gradient of a linear model is the normal-equations formula") {
    // With identity MLPs the model is linear: f(u) = H u, so
    // grad_u ||f(u) - y||^2 = 2 H' (H u - y).
    SpacetimeModel m = linearize(random_model(3));
    const std::size_t l = m.cfg.lookback, h = m.cfg.horizon;
    Mat hmat(h, l);
    for (std::size_t j = 0; j < l; ++j) {
        Vec e(l, 0.0);
        e[j] = 1.0;
        const Vec col = forecast(m, e);
        for (std::size_t i = 0; i < h; ++i) hmat(i, j) = col[i];
    }
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec u(l), y(h);
    for (auto& v : u) v = g(rng);
    for (auto& v : y) v = g(rng);
    const GradResult gr = grad(m, u, y, LossKind::SumSquares);
    const Vec hu = matvec(hmat, u);
    Vec resid(h);
    for (std::size_t i = 0; i < h; ++i) resid[i] = hu[i] - y[i];
    const Vec expect = scaled(matvec_t(hmat, resid), 2.0);
    for (std::size_t i = 0; i < l; ++i)
        REQUIRE(gr.wrt_input[i] == Catch::Approx(expect[i]).margin(1e-9));
}

TEST_CASE("reverse-mode gradients match central finite differences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        SpacetimeModel m = random_model(100 + trial);
        Vec u(m.cfg.lookback), y(m.cfg.horizon);
        for (auto& v : u) v = g(rng);
        for (auto& v : y) v = g(rng);
        const GradResult gr = grad(m, u, y, LossKind::Mse);
        auto loss_at_params = [&](const Vec& p) {
            SpacetimeModel mm = m;
            unflatten_parameters(mm, p);
            const Vec f = forecast(mm, u);
            double s = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - y[i]) * (f[i] - y[i]);
            return s / static_cast<double>(f.size());
        };
        const Vec p0 = flatten_parameters(m);
        for (std::size_t i = 0; i < p0.size(); i += 7) {  // stride keeps runtime modest
            const double fd = oracles::central_diff(loss_at_params, p0, i);
            worst = std::max(worst, rel_err(gr.wrt_params[i], fd));
        }
        auto loss_at_input = [&](const Vec& uu) {
            SpacetimeModel mm = m;
            const Vec f = forecast(mm, uu);
            double s = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - y[i]) * (f[i] - y[i]);
            return s / static_cast<double>(f.size());
        };
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double fd = oracles::central_diff(loss_at_input, u, i);
            worst = std::max(worst, rel_err(gr.wrt_input[i], fd));
        }
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("loss independent of the input has exactly zero input gradient") {
    SpacetimeModel m = random_model(6);
    // zero the embedding: the forecast no longer depends on the window
    for (auto& w : m.embed_w) w = 0.0;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec u(m.cfg.lookback), y(m.cfg.horizon);
    for (auto& v : u) v = g(rng);
    for (auto& v : y) v = g(rng);
    const GradResult gr = grad(m, u, y, LossKind::Mse);
    for (double v : gr.wrt_input) REQUIRE(v == 0.0);
}

TEST_CASE("gradients are deterministic bit for bit") {
    SpacetimeModel m = random_model(8);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec u(m.cfg.lookback), y(m.cfg.horizon);
    for (auto& v : u) v = g(rng);
    for (auto& v : y) v = g(rng);
    const GradResult a = grad(m, u, y, LossKind::Mse);
    const GradResult b = grad(m, u, y, LossKind::Mse);
    REQUIRE(a.loss == b.loss);
    REQUIRE(a.wrt_params == b.wrt_params);
    REQUIRE(a.wrt_input == b.wrt_input);
}

TEST_CASE("adjoint linearity: gradient of a sum equals the sum of gradients") {
    SpacetimeModel m = random_model(10);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec u(m.cfg.lookback), y1(m.cfg.horizon), y2(m.cfg.horizon);
    for (auto& v : u) v = g(rng);
    for (auto& v : y1) v = g(rng);
    for (auto& v : y2) v = g(rng);

    // sum of two sum-square losses on one tape
    ad::Tape tape;
    auto tf = detail::forward_tape(tape, m, u);
    ad::Var l1 = tape.sum_sq_loss(tf.output, y1);
    ad::Var l2 = tape.sum_sq_loss(tf.output, y2);
    ad::Var sum = tape.add(l1, l2);
    tape.backward(sum);
    const Vec combined = tape.grad(tf.input);

    const GradResult g1 = grad(m, u, y1, LossKind::SumSquares);
    const GradResult g2 = grad(m, u, y2, LossKind::SumSquares);
    for (std::size_t i = 0; i < u.size(); ++i)
        REQUIRE(combined[i] == Catch::Approx(g1.wrt_input[i] + g2.wrt_input[i]).margin(1e-12));
}

TEST_CASE("autoencoder primitives pass finite-difference checks") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t len = 16;

    // conv -> relu -> pool -> deconv -> fc chain exercising every op
    Vec x(len), wc(2 * 1 * 3), bc(2), wd(1 * 2 * 4), bd(1), wf(3 * 8), bf(3);
    for (auto* v : { &x, &wc, &bc, &wd, &bd, &wf, &bf })
        for (auto& e : *v) e = g(rng);

    auto build = [&](const Vec& xv, const Vec& wcv, const Vec& wdv, const Vec& wfv) {
        ad::Tape tape;
        ad::Var xi = tape.leaf(xv);
        ad::Var wci = tape.leaf(wcv), bci = tape.leaf(bc);
        ad::Var wdi = tape.leaf(wdv), bdi = tape.leaf(bd);
        ad::Var wfi = tape.leaf(wfv), bfi = tape.leaf(bf);
        ad::Var h = tape.conv1d(xi, wci, bci, 1, 2, len, 3);
        h = tape.relu(h);
        h = tape.maxpool2(h, 2, len);
        h = tape.deconv1d(h, wdi, bdi, 2, 1, len / 2);
        h = tape.slice(h, 2, 8);
        h = tape.fc(h, wfi, bfi, 3, 8);
        ad::Var loss = tape.sum_sq_loss(h, { 0.3, -0.2, 0.9 });
        tape.backward(loss);
        struct R {
            double loss;
            Vec gx, gwc, gwd, gwf;
        } r{ tape.value(loss)[0], tape.grad(xi), tape.grad(wci), tape.grad(wdi), tape.grad(wfi) };
        return r;
    };
    const auto base = build(x, wc, wd, wf);
    auto fd_check = [&](Vec& target, const Vec& grads, auto rebuild) {
        for (std::size_t i = 0; i < target.size(); i += 3) {
            const double keep = target[i];
            target[i] = keep + 1e-6;
            const double up = rebuild().loss;
            target[i] = keep - 1e-6;
            const double down = rebuild().loss;
            target[i] = keep;
            const double fd = (up - down) / 2e-6;
            REQUIRE(rel_err(grads[i], fd) < 1e-4);
        }
    };
    fd_check(x, base.gx, [&] { return build(x, wc, wd, wf); });
    fd_check(wc, base.gwc, [&] { return build(x, wc, wd, wf); });
    fd_check(wd, base.gwd, [&] { return build(x, wc, wd, wf); });
    fd_check(wf, base.gwf, [&] { return build(x, wc, wd, wf); });
}

TEST_CASE("plain and tape forwards agree bit for bit") {
    for (int trial = 0; trial < 5; ++trial) {
        SpacetimeModel m = random_model(40 + trial);
        std::mt19937_64 rng(50 + trial);
        std::normal_distribution<double> g(0.0, 1.0);
        Vec u(m.cfg.lookback);
        for (auto& v : u) v = g(rng);
        const Vec a = forecast(m, u);
        const Vec b = forecast_via_tape(m, u);
        REQUIRE(a == b);
    }
}
