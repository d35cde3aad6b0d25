#pragma once

// Experiment configuration: versioned JSON schema, unknown fields rejected at
// every level so configs cannot drift silently. A config plus the code
// version determines every output bit (fixed floating-point environment).

#include <set>
#include <string>

#include <json.hpp>

#include "tsrob/attacks.hpp"
#include "tsrob/detectors.hpp"
#include "tsrob/model.hpp"
#include "tsrob/train.hpp"

namespace tsrob {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DdaConfig {
    double beta = 0.9907;
    double slack_frac = 0.05;  // s = slack_frac * threshold
    std::string branch = "auto";
    bool query_beta = false;   // estimate beta from bounded forecaster queries
};

struct DetectorConfig {
    std::string kind = "norm";
    double alpha = 2.5 / 8760.0;  // ~2-3 alarms/year at hourly sampling
    double threshold = 0.0;       // > 0 overrides calibration
    std::size_t ae_epochs = 25;
    double ae_lr = 1e-3;
    std::size_t ae_max_windows = 1500;
};

struct AttackSection {
    std::string mode = "detector-constrained";
    double eta = 1e-2;
    std::size_t max_iters = 100;
    double eps_clip = 0.25;
    DdaConfig dda;
};

struct FinetuneSection {
    std::size_t batch = 64;
    std::size_t iters = 10;
    double lr = 1e-4;
    std::size_t inner_epochs = 1;
};

struct ExperimentConfig {
    int schema_version = 1;
    std::string dataset_path;
    std::string dataset_column = "value";
    std::size_t lookback = 84;
    std::size_t horizon = 12;
    SplitFractions split;
    std::string scaler = "standard";
    ModelConfig model;  // lookback/horizon overwritten from window section
    TrainConfig train;
    DetectorConfig detector;
    AttackSection attack;
    FinetuneSection finetune;
    std::size_t eval_windows = 50;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
};

namespace detail {

using nlohmann::json;

inline void expect_keys(const json& j, const std::set<std::string>& allowed,
                        const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config field '" + it.key() + "' in " + where);
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using detail::expect_keys;
    using detail::maybe;
    ExperimentConfig cfg;
    expect_keys(j, { "schema_version", "dataset", "window", "split", "scaler", "model", "train",
                     "detector", "attack", "finetune", "eval", "seed", "out_dir" },
                "top level");
    if (!j.contains("schema_version")) throw ConfigError("config missing schema_version");
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1)
        throw ConfigError("unsupported schema_version " + std::to_string(cfg.schema_version));

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        expect_keys(d, { "path", "column" }, "dataset");
        maybe(d, "path", cfg.dataset_path);
        maybe(d, "column", cfg.dataset_column);
    }
    if (j.contains("window")) {
        const auto& w = j.at("window");
        expect_keys(w, { "lookback", "horizon" }, "window");
        maybe(w, "lookback", cfg.lookback);
        maybe(w, "horizon", cfg.horizon);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        expect_keys(s, { "train", "val", "test" }, "split");
        maybe(s, "train", cfg.split.train);
        maybe(s, "val", cfg.split.val);
        maybe(s, "test", cfg.split.test);
    }
    maybe(j, "scaler", cfg.scaler);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        expect_keys(m, { "channels", "encoder_layers", "order_enc", "order_dec", "mlp_hidden" },
                    "model");
        maybe(m, "channels", cfg.model.channels);
        maybe(m, "encoder_layers", cfg.model.encoder_layers);
        maybe(m, "order_enc", cfg.model.order_enc);
        maybe(m, "order_dec", cfg.model.order_dec);
        maybe(m, "mlp_hidden", cfg.model.mlp_hidden);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        expect_keys(t, { "lr", "epochs", "batch", "max_windows", "threads" }, "train");
        maybe(t, "lr", cfg.train.lr);
        maybe(t, "epochs", cfg.train.epochs);
        maybe(t, "batch", cfg.train.batch);
        maybe(t, "max_windows", cfg.train.max_windows);
        maybe(t, "threads", cfg.train.threads);
    }
    if (j.contains("detector")) {
        const auto& d = j.at("detector");
        expect_keys(d, { "kind", "alpha", "threshold", "ae_epochs", "ae_lr", "ae_max_windows" },
                    "detector");
        maybe(d, "kind", cfg.detector.kind);
        maybe(d, "alpha", cfg.detector.alpha);
        maybe(d, "threshold", cfg.detector.threshold);
        maybe(d, "ae_epochs", cfg.detector.ae_epochs);
        maybe(d, "ae_lr", cfg.detector.ae_lr);
        maybe(d, "ae_max_windows", cfg.detector.ae_max_windows);
        if (cfg.detector.kind != "norm" && cfg.detector.kind != "autoencoder")
            throw ConfigError("detector.kind must be 'norm' or 'autoencoder'");
    }
    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        expect_keys(a, { "mode", "eta", "max_iters", "eps_clip", "dda" }, "attack");
        maybe(a, "mode", cfg.attack.mode);
        maybe(a, "eta", cfg.attack.eta);
        maybe(a, "max_iters", cfg.attack.max_iters);
        maybe(a, "eps_clip", cfg.attack.eps_clip);
        if (cfg.attack.mode != "detector-constrained" && cfg.attack.mode != "input-clipped" &&
            cfg.attack.mode != "dda")
            throw ConfigError("attack.mode must be detector-constrained | input-clipped | dda");
        if (a.contains("dda")) {
            const auto& dd = a.at("dda");
            expect_keys(dd, { "beta", "slack_frac", "branch", "query_beta" }, "attack.dda");
            maybe(dd, "beta", cfg.attack.dda.beta);
            maybe(dd, "slack_frac", cfg.attack.dda.slack_frac);
            maybe(dd, "branch", cfg.attack.dda.branch);
            maybe(dd, "query_beta", cfg.attack.dda.query_beta);
        }
    }
    if (j.contains("finetune")) {
        const auto& f = j.at("finetune");
        expect_keys(f, { "batch", "iters", "lr", "inner_epochs" }, "finetune");
        maybe(f, "batch", cfg.finetune.batch);
        maybe(f, "iters", cfg.finetune.iters);
        maybe(f, "lr", cfg.finetune.lr);
        maybe(f, "inner_epochs", cfg.finetune.inner_epochs);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        expect_keys(e, { "num_windows" }, "eval");
        maybe(e, "num_windows", cfg.eval_windows);
    }
    maybe(j, "seed", cfg.seed);
    maybe(j, "out_dir", cfg.out_dir);

    if (cfg.lookback < 1 || cfg.horizon < 1) throw ConfigError("window sizes must be >= 1");
    cfg.model.lookback = cfg.lookback;
    cfg.model.horizon = cfg.horizon;
    cfg.train.seed = cfg.seed;
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline AttackMode attack_mode_from_string(const std::string& s) {
    if (s == "detector-constrained") return AttackMode::DetectorConstrained;
    if (s == "input-clipped") return AttackMode::InputClipped;
    throw ConfigError("not a PGD attack mode: " + s);
}

inline DdaBranch dda_branch_from_string(const std::string& s) {
    if (s == "auto") return DdaBranch::Auto;
    if (s == "plus") return DdaBranch::Plus;
    if (s == "minus") return DdaBranch::Minus;
    throw ConfigError("unknown DDA branch: " + s);
}

} // namespace tsrob
