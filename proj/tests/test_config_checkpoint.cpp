#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "tsrob/checkpoint.hpp"
#include "tsrob/config.hpp"

using namespace tsrob;
namespace fs = std::filesystem;

TEST_CASE("config parses defaults and overrides") {
    nlohmann::json j = {
        { "schema_version", 1 },
        { "dataset", { { "path", "x.csv" }, { "column", "load" } } },
        { "window", { { "lookback", 24 }, { "horizon", 6 } } },
        { "train", { { "epochs", 3 }, { "lr", 0.01 } } },
        { "seed", 99 },
    };
    const ExperimentConfig cfg = parse_config(j);
    REQUIRE(cfg.dataset_path == "x.csv");
    REQUIRE(cfg.lookback == 24);
    REQUIRE(cfg.horizon == 6);
    REQUIRE(cfg.model.lookback == 24);
    REQUIRE(cfg.train.epochs == 3);
    REQUIRE(cfg.train.seed == 99);
    REQUIRE(cfg.detector.kind == "norm");
}

TEST_CASE("config rejects unknown fields at every level") {
    nlohmann::json top = { { "schema_version", 1 }, { "bogus", 1 } };
    REQUIRE_THROWS_AS(parse_config(top), ConfigError);

    nlohmann::json nested = { { "schema_version", 1 },
                              { "train", { { "epochs", 3 }, { "learning_rate", 0.1 } } } };
    REQUIRE_THROWS_AS(parse_config(nested), ConfigError);

    nlohmann::json dda = { { "schema_version", 1 },
                           { "attack", { { "dda", { { "gamma", 2.0 } } } } } };
    REQUIRE_THROWS_AS(parse_config(dda), ConfigError);
}

TEST_CASE("config requires a supported schema version") {
    REQUIRE_THROWS_AS(parse_config({ { "schema_version", 2 } }), ConfigError);
    REQUIRE_THROWS_AS(parse_config(nlohmann::json::object()), ConfigError);
}

TEST_CASE("config validates enumerations") {
    nlohmann::json bad_kind = { { "schema_version", 1 },
                                { "detector", { { "kind", "chi2" } } } };
    REQUIRE_THROWS_AS(parse_config(bad_kind), ConfigError);
    nlohmann::json bad_mode = { { "schema_version", 1 },
                                { "attack", { { "mode", "fgsm" } } } };
    REQUIRE_THROWS_AS(parse_config(bad_mode), ConfigError);
}

TEST_CASE("pipeline checkpoints round trip bit for bit") {
    ModelConfig mc;
    mc.lookback = 10;
    mc.horizon = 3;
    mc.channels = 3;
    mc.encoder_layers = 2;
    ForecastPipeline pipe;
    pipe.model = make_model(mc, 123);
    pipe.scaler.kind = ScalerKind::Standard;
    pipe.scaler.shift = 1.0 / 3.0;
    pipe.scaler.scale = 517.123456789;

    const auto path = (fs::temp_directory_path() / "tsrob_model.ckpt").string();
    save_pipeline(path, pipe);
    ForecastPipeline loaded = load_pipeline(path);
    REQUIRE(flatten_parameters(loaded.model) == flatten_parameters(pipe.model));
    REQUIRE(loaded.scaler.shift == pipe.scaler.shift);
    REQUIRE(loaded.scaler.scale == pipe.scaler.scale);
    REQUIRE(loaded.model.cfg.lookback == mc.lookback);

    // forecasts agree exactly after the round trip
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec u(mc.lookback);
    for (auto& v : u) v = g(rng);
    REQUIRE(forecast(loaded.model, u) == forecast(pipe.model, u));
}

TEST_CASE("detector checkpoints round trip") {
    Detector det;
    det.kind = DetectorKind::Autoencoder;
    det.threshold = 0.98;
    det.ae = make_autoencoder(20, 5);
    const auto path = (fs::temp_directory_path() / "tsrob_det.ckpt").string();
    save_detector(path, det);
    Detector loaded = load_detector(path);
    REQUIRE(loaded.kind == DetectorKind::Autoencoder);
    REQUIRE(loaded.threshold == det.threshold);
    Vec w(20, 0.25);
    REQUIRE(statistic_autoencoder(loaded.ae, w) == statistic_autoencoder(det.ae, w));

    Detector norm_det;
    norm_det.kind = DetectorKind::Norm;
    norm_det.threshold = 400.0;
    const auto path2 = (fs::temp_directory_path() / "tsrob_det2.ckpt").string();
    save_detector(path2, norm_det);
    Detector loaded2 = load_detector(path2);
    REQUIRE(loaded2.kind == DetectorKind::Norm);
    REQUIRE(loaded2.threshold == 400.0);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto path = (fs::temp_directory_path() / "tsrob_corrupt.ckpt").string();
    {
        std::ofstream os(path);
        os << "not-a-checkpoint\n";
    }
    REQUIRE_THROWS_AS(load_pipeline(path), CheckpointError);
    REQUIRE_THROWS_AS(load_pipeline("/nonexistent/x.ckpt"), CheckpointError);
}
