#pragma once

// Versioned, self-describing text checkpoints readable without the library.
// Layout (line-oriented, ASCII):
//   tsrob-checkpoint v1
//   kind <model|detector-norm|detector-autoencoder>
//   meta <name> <value>            (repeated; numeric values use %.17g)
//   tensor <name> <rows> <cols>    (repeated; followed by `rows` lines of
//                                   `cols` space-separated %.17g numbers)
//   end
// %.17g round-trips IEEE doubles exactly, so save/load is lossless.

#include <fstream>
#include <map>
#include <sstream>

#include "tsrob/detectors.hpp"
#include "tsrob/model.hpp"

namespace tsrob {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class CheckpointWriter {
public:
    explicit CheckpointWriter(const std::string& path, const std::string& kind) : out_(path) {
        if (!out_) throw CheckpointError("cannot open checkpoint for write: " + path);
        out_ << "tsrob-checkpoint v1\n";
        out_ << "kind " << kind << "\n";
    }
    void meta(const std::string& name, const std::string& value) {
        out_ << "meta " << name << " " << value << "\n";
    }
    void meta(const std::string& name, double value) { meta(name, fmt17(value)); }
    void meta(const std::string& name, std::size_t value) { meta(name, std::to_string(value)); }
    void tensor(const std::string& name, const Vec& data, std::size_t rows, std::size_t cols) {
        out_ << "tensor " << name << " " << rows << " " << cols << "\n";
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                if (j) out_ << " ";
                out_ << fmt17(data[i * cols + j]);
            }
            out_ << "\n";
        }
    }
    void finish() { out_ << "end\n"; }

private:
    std::ofstream out_;
};

struct CheckpointData {
    std::string kind;
    std::map<std::string, std::string> meta;
    std::map<std::string, Vec> tensors;

    double meta_num(const std::string& name) const {
        auto it = meta.find(name);
        if (it == meta.end()) throw CheckpointError("checkpoint missing meta field: " + name);
        return std::stod(it->second);
    }
    std::size_t meta_size(const std::string& name) const {
        return static_cast<std::size_t>(meta_num(name));
    }
    const Vec& tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointError("checkpoint missing tensor: " + name);
        return it->second;
    }
};

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "tsrob-checkpoint v1")
        throw CheckpointError("bad checkpoint header in " + path);
    CheckpointData d;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "end") return d;
        if (tag == "kind") {
            ls >> d.kind;
        } else if (tag == "meta") {
            std::string name, value;
            ls >> name >> value;
            d.meta[name] = value;
        } else if (tag == "tensor") {
            std::string name;
            std::size_t rows = 0, cols = 0;
            ls >> name >> rows >> cols;
            Vec t(rows * cols);
            for (std::size_t i = 0; i < rows; ++i) {
                if (!std::getline(in, line))
                    throw CheckpointError("truncated tensor " + name + " in " + path);
                std::istringstream row(line);
                for (std::size_t j = 0; j < cols; ++j)
                    if (!(row >> t[i * cols + j]))
                        throw CheckpointError("short tensor row in " + name);
            }
            d.tensors[name] = std::move(t);
        } else if (!tag.empty()) {
            throw CheckpointError("unknown checkpoint record '" + tag + "' in " + path);
        }
    }
    throw CheckpointError("checkpoint missing 'end' marker: " + path);
}

} // namespace detail

// ----------------------------------------------------------------------------
// Forecaster pipeline (model + scaler)
// ----------------------------------------------------------------------------

inline void save_pipeline(const std::string& path, const ForecastPipeline& pipe) {
    const auto& m = pipe.model;
    detail::CheckpointWriter w(path, "model");
    w.meta("lookback", m.cfg.lookback);
    w.meta("horizon", m.cfg.horizon);
    w.meta("channels", m.cfg.channels);
    w.meta("encoder_layers", m.cfg.encoder_layers);
    w.meta("order_enc", m.cfg.order_enc);
    w.meta("order_dec", m.cfg.order_dec);
    w.meta("mlp_hidden", m.cfg.mlp_hidden);
    w.meta("scaler_kind", std::string(to_string(pipe.scaler.kind)));
    w.meta("scaler_shift", pipe.scaler.shift);
    w.meta("scaler_scale", pipe.scaler.scale);
    SpacetimeModel& mm = const_cast<SpacetimeModel&>(m);
    for (const auto& p : parameters(mm)) w.tensor(p.name, *p.data, 1, p.data->size());
    w.tensor("proj.b", Vec{ m.proj_b }, 1, 1);
    w.finish();
}

inline ForecastPipeline load_pipeline(const std::string& path) {
    const auto d = detail::read_checkpoint(path);
    if (d.kind != "model") throw CheckpointError("expected a model checkpoint, got " + d.kind);
    ModelConfig cfg;
    cfg.lookback = d.meta_size("lookback");
    cfg.horizon = d.meta_size("horizon");
    cfg.channels = d.meta_size("channels");
    cfg.encoder_layers = d.meta_size("encoder_layers");
    cfg.order_enc = d.meta_size("order_enc");
    cfg.order_dec = d.meta_size("order_dec");
    cfg.mlp_hidden = d.meta_size("mlp_hidden");
    ForecastPipeline pipe;
    pipe.model = make_model(cfg, 0);
    for (const auto& p : parameters(pipe.model)) {
        const Vec& t = d.tensor(p.name);
        if (t.size() != p.data->size())
            throw CheckpointError("tensor " + p.name + " has wrong size");
        *p.data = t;
    }
    pipe.model.proj_b = d.tensor("proj.b").at(0);
    pipe.scaler.kind = scaler_kind_from_string(d.meta.at("scaler_kind"));
    pipe.scaler.shift = d.meta_num("scaler_shift");
    pipe.scaler.scale = d.meta_num("scaler_scale");
    return pipe;
}

// ----------------------------------------------------------------------------
// Detector (shares the checkpoint format)
// ----------------------------------------------------------------------------

inline void save_detector(const std::string& path, const Detector& det) {
    const bool ae = det.kind == DetectorKind::Autoencoder;
    detail::CheckpointWriter w(path, ae ? "detector-autoencoder" : "detector-norm");
    w.meta("threshold", det.threshold);
    if (ae) {
        w.meta("input_len", det.ae.input_len);
        Autoencoder& a = const_cast<Autoencoder&>(det.ae);
        const char* names[] = { "conv1.w", "conv1.b", "conv2.w", "conv2.b", "enc.w", "enc.b",
                                "dec.w", "dec.b", "deconv1.w", "deconv1.b", "deconv2.w",
                                "deconv2.b" };
        auto ps = detail::ae_params(a);
        for (std::size_t i = 0; i < ps.size(); ++i) w.tensor(names[i], *ps[i], 1, ps[i]->size());
    }
    w.finish();
}

inline Detector load_detector(const std::string& path) {
    const auto d = detail::read_checkpoint(path);
    Detector det;
    det.threshold = d.meta_num("threshold");
    if (d.kind == "detector-norm") {
        det.kind = DetectorKind::Norm;
        return det;
    }
    if (d.kind != "detector-autoencoder")
        throw CheckpointError("expected a detector checkpoint, got " + d.kind);
    det.kind = DetectorKind::Autoencoder;
    det.ae = make_autoencoder(d.meta_size("input_len"), 0);
    const char* names[] = { "conv1.w", "conv1.b", "conv2.w", "conv2.b", "enc.w", "enc.b",
                            "dec.w", "dec.b", "deconv1.w", "deconv1.b", "deconv2.w", "deconv2.b" };
    auto ps = detail::ae_params(det.ae);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Vec& t = d.tensor(names[i]);
        if (t.size() != ps[i]->size()) throw CheckpointError(std::string("tensor ") + names[i] + " has wrong size");
        *ps[i] = t;
    }
    return det;
}

} // namespace tsrob
