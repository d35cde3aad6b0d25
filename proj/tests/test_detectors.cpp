#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "tsrob/detectors.hpp"
#include "tsrob/synth.hpp"

using namespace tsrob;

TEST_CASE("norm statistic basics") {
    REQUIRE(statistic_norm({ 1, 2, 3 }, { 1, 2, 3 }) == 0.0);
    REQUIRE(statistic_norm({ 3, 4 }, { 0, 0 }) == Catch::Approx(5.0));
    REQUIRE_THROWS_AS(statistic_norm({ 1, 2 }, { 1 }), ShapeMismatch);
}

TEST_CASE("zero-weight autoencoder reconstructs zero") {
    Autoencoder ae = make_autoencoder(16, 1);
    for (auto* p : detail::ae_params(ae)) std::fill(p->begin(), p->end(), 0.0);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec w(16);
    for (auto& v : w) v = g(rng);
    double msq = 0.0;
    for (double v : w) msq += v * v;
    msq /= 16.0;
    REQUIRE(statistic_autoencoder(ae, w) == Catch::Approx(msq).margin(1e-12));
}

TEST_CASE("autoencoder handles lengths that need padding") {
    Autoencoder ae = make_autoencoder(21, 3);  // pads to 24
    REQUIRE(ae.padded_len == 24);
    Vec w(21, 0.5);
    REQUIRE(autoencoder_reconstruct(ae, w).size() == 21);
    REQUIRE_THROWS_AS(statistic_autoencoder(ae, Vec(20, 0.0)), IncompatibleLength);
}

TEST_CASE("trained autoencoder flags high-frequency spikes") {
    // train on smooth sine windows; a spiky window must score higher than a
    // clean one in at least 95% of trials
    const std::size_t len = 24;
    RawSeries sine = synth::noisy_sine(1200, 5, 24.0, 0.05);
    const Scaler sc = fit_scaler(sine, ScalerKind::Standard);
    const RawSeries sines = apply_scaler(sc, sine);
    std::vector<Vec> train, val;
    for (std::size_t k = 0; k + len < 900; k += 3)
        train.emplace_back(sines.values.begin() + k, sines.values.begin() + k + len);
    for (std::size_t k = 900; k + len < 1100; k += 7)
        val.emplace_back(sines.values.begin() + k, sines.values.begin() + k + len);

    Autoencoder ae = make_autoencoder(len, 7);
    AeTrainConfig cfg;
    cfg.epochs = 18;
    cfg.max_windows = 250;
    cfg.seed = 11;
    train_autoencoder(ae, train, val, cfg);

    std::mt19937_64 rng(13);
    std::uniform_int_distribution<std::size_t> pick(0, val.size() - 1);
    std::uniform_int_distribution<std::size_t> pos(2, len - 3);
    std::size_t higher = 0;
    const std::size_t trials = 60;
    for (std::size_t t = 0; t < trials; ++t) {
        const Vec& clean = val[pick(rng)];
        Vec spiky = clean;
        const std::size_t p = pos(rng);
        spiky[p] += 3.0;
        spiky[p + 1] -= 3.0;  // high-frequency doublet
        if (statistic_autoencoder(ae, spiky) > statistic_autoencoder(ae, clean)) ++higher;
    }
    REQUIRE(higher >= trials * 95 / 100);
}

TEST_CASE("calibrate picks the lower empirical quantile") {
    std::vector<double> stats;
    for (int i = 1; i <= 100; ++i) stats.push_back(i);
    REQUIRE(calibrate_threshold(stats, 0.05) == Catch::Approx(95.0));
    REQUIRE(calibrate_threshold(stats, 1e-9) == Catch::Approx(100.0));  // alpha -> 0 gives max
    REQUIRE_THROWS_AS(calibrate_threshold({}, 0.05), EmptyCalibrationSet);
    REQUIRE_THROWS_AS(calibrate_threshold(stats, 0.0), std::invalid_argument);
}

TEST_CASE("calibrated threshold is nonincreasing in alpha") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> stats;
    for (int i = 0; i < 500; ++i) stats.push_back(std::abs(g(rng)));
    double prev = std::numeric_limits<double>::infinity();
    for (double alpha : { 0.001, 0.01, 0.05, 0.1, 0.3, 0.6 }) {
        const double delta = calibrate_threshold(stats, alpha);
        REQUIRE(delta <= prev + 1e-12);
        prev = delta;
    }
}

namespace {

// A forecaster that predicts the last seen value for every horizon step:
// decoder-only shift register reading the newest slot.
ForecastPipeline persistence_pipeline(std::size_t lookback, std::size_t horizon) {
    ForecastPipeline pipe;
    ModelConfig mc;
    mc.lookback = lookback;
    mc.horizon = horizon;
    mc.channels = 1;
    mc.encoder_layers = 0;
    mc.order_enc = 0;
    mc.order_dec = 2;
    mc.mlp_hidden = 1;
    SpacetimeModel m;
    m.cfg = mc;
    m.embed_w = { 1.0 };
    m.embed_b = { 0.0 };
    m.proj_w = { 1.0 };
    m.proj_b = 0.0;
    m.decoder.order = 2;
    m.decoder.a_coeffs = { 0.0, 0.0 };      // pure shift register
    m.decoder.c_forecast = { 0.0, 1.0 };    // read the newest value
    m.decoder.k_feedback = { 0.0, 1.0 };    // feed it back for the rollout
    pipe.model = std::move(m);
    pipe.scaler = Scaler{};  // identity
    return pipe;
}

} // namespace

TEST_CASE("prediction average identity for a persistence forecaster on constant input") {
    const std::size_t lookback = 4, horizon = 3;
    ForecastPipeline pipe = persistence_pipeline(lookback, horizon);
    RawSeries stream;
    stream.values.assign(40, 2.5);

    // all h predictions of any step coincide, so ybar equals any of them and
    // the statistic is exactly zero
    Detector det;
    det.kind = DetectorKind::Norm;
    det.threshold = 1e-9;
    const auto recs = run_detector(det, pipe, stream);
    REQUIRE_FALSE(recs.empty());
    for (const auto& r : recs) {
        REQUIRE(r.z == Catch::Approx(0.0).margin(1e-12));
        REQUIRE_FALSE(r.alarm);
    }
    // warm-up steps are skipped, not emitted as zeros
    REQUIRE(recs.front().k >= lookback - 1 + 2 * horizon - 1);
}

TEST_CASE("degenerate thresholds") {
    ForecastPipeline pipe = persistence_pipeline(4, 2);
    RawSeries stream = synth::noisy_sine(60, 3, 12.0, 0.3);
    Detector det;
    det.kind = DetectorKind::Norm;

    det.threshold = std::numeric_limits<double>::infinity();
    for (const auto& r : run_detector(det, pipe, stream)) REQUIRE_FALSE(r.alarm);

    det.threshold = 0.0;
    const auto recs = run_detector(det, pipe, stream);
    REQUIRE_FALSE(recs.empty());
    for (const auto& r : recs) REQUIRE(r.alarm);  // statistics are nonzero on noisy data
}

TEST_CASE("calibrated detector achieves the target false alarm rate") {
    ForecastPipeline pipe = persistence_pipeline(6, 2);
    RawSeries cal = synth::noisy_sine(1500, 21, 24.0, 0.1);
    RawSeries holdout = synth::noisy_sine(1500, 22, 24.0, 0.1);

    Detector det;
    det.kind = DetectorKind::Norm;
    const auto zs = clean_statistics(det, pipe, cal);
    const double alpha = 0.05;
    det.threshold = calibrate_threshold(zs, alpha);

    const auto recs = run_detector(det, pipe, holdout);
    std::size_t alarms = 0;
    for (const auto& r : recs) alarms += r.alarm ? 1 : 0;
    const double far = static_cast<double>(alarms) / static_cast<double>(recs.size());
    REQUIRE(far <= 2.0 * alpha);
}

TEST_CASE("detector records serialize to CSV") {
    std::ostringstream os;
    write_detector_csv(os, { { 5, 1.25, false }, { 6, 3.5, true } });
    REQUIRE(os.str() == "k,z,alarm\n5,1.25,0\n6,3.5,1\n");
}
