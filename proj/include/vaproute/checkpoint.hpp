#pragma once

// Versioned model checkpoints. The JSON layout is deterministic (ordered
// keys, tensors in registry order) so identical states produce identical
// bytes.

#include <string>
#include <vector>

#include <json.hpp>

#include "vaproute/io.hpp"
#include "vaproute/model.hpp"

namespace vaproute {

inline constexpr const char* kCheckpointFormat = "vaproute-checkpoint";
inline constexpr int kCheckpointVersion = 1;

// AdamW first/second moments, aligned with ModelParams::for_each_tensor order.
struct OptimizerState {
    long t = 0;  // update count driving bias correction
    std::vector<Mat> m, v;
};

struct Checkpoint {
    ModelParams params;
    long epoch = 0;
    long step = 0;
    bool has_optimizer = false;
    OptimizerState opt;
};

namespace detail {

inline Json tensor_to_json(const Mat& m) {
    Json data = Json::array();
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline void tensor_from_json(const Json& j, const std::string& name, Mat& out) {
    const long rows = require<long>(j, "rows", name.c_str());
    const long cols = require<long>(j, "cols", name.c_str());
    if (rows != out.rows() || cols != out.cols())
        throw ParseError("checkpoint: tensor '" + name + "' has shape " +
                         std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                         std::to_string(out.rows()) + "x" + std::to_string(out.cols()));
    const auto data = require<std::vector<double>>(j, "data", name.c_str());
    if (static_cast<long>(data.size()) != rows * cols)
        throw ParseError("checkpoint: tensor '" + name + "' data length mismatch");
    std::size_t k = 0;
    for (long i = 0; i < rows; ++i)
        for (long c = 0; c < cols; ++c) out(i, c) = data[k++];
}

}  // namespace detail

inline Json to_json(const Checkpoint& cp) {
    const ModelConfig& cfg = cp.params.config;
    Json config{{"hidden_dim", cfg.hidden_dim}, {"layers", cfg.layers},
                {"heads", cfg.heads},           {"vehicle_types", cfg.vehicle_types},
                {"ff_mult", cfg.ff_mult},       {"logit_clip", cfg.logit_clip}};
    Json tensors = Json::object();
    cp.params.for_each_tensor([&](const std::string& name, const Mat& m) {
        tensors[name] = detail::tensor_to_json(m);
    });
    Json j{{"format", kCheckpointFormat},
           {"version", kCheckpointVersion},
           {"config", std::move(config)},
           {"epoch", cp.epoch},
           {"step", cp.step},
           {"tensors", std::move(tensors)}};
    if (cp.has_optimizer) {
        Json m = Json::object(), v = Json::object();
        std::size_t k = 0;
        cp.params.for_each_tensor([&](const std::string& name, const Mat&) {
            m[name] = detail::tensor_to_json(cp.opt.m[k]);
            v[name] = detail::tensor_to_json(cp.opt.v[k]);
            ++k;
        });
        j["optimizer"] = Json{{"t", cp.opt.t}, {"m", std::move(m)}, {"v", std::move(v)}};
    } else {
        j["optimizer"] = nullptr;
    }
    return j;
}

inline std::string serialize(const Checkpoint& cp) { return to_json(cp).dump(2) + "\n"; }

inline Checkpoint checkpoint_from_json(const Json& j) {
    const auto format = detail::require<std::string>(j, "format", "checkpoint");
    if (format != kCheckpointFormat)
        throw ParseError("checkpoint: unexpected format tag '" + format + "'");
    const int version = detail::require<int>(j, "version", "checkpoint");
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));

    if (!j.contains("config")) throw ParseError("checkpoint: missing key 'config'");
    const Json& cj = j.at("config");
    ModelConfig cfg;
    cfg.hidden_dim = detail::require<int>(cj, "hidden_dim", "config");
    cfg.layers = detail::require<int>(cj, "layers", "config");
    cfg.heads = detail::require<int>(cj, "heads", "config");
    cfg.vehicle_types = detail::require<int>(cj, "vehicle_types", "config");
    cfg.ff_mult = detail::require<int>(cj, "ff_mult", "config");
    cfg.logit_clip = detail::require<double>(cj, "logit_clip", "config");
    cfg.validate();

    Checkpoint cp;
    cp.params = init_params(cfg, 0);  // allocates shapes; every value overwritten below
    cp.epoch = detail::require<long>(j, "epoch", "checkpoint");
    cp.step = detail::require<long>(j, "step", "checkpoint");

    if (!j.contains("tensors") || !j.at("tensors").is_object())
        throw ParseError("checkpoint: missing tensor table");
    const Json& tensors = j.at("tensors");
    std::size_t expected = 0;
    cp.params.for_each_tensor([&](const std::string& name, Mat& m) {
        ++expected;
        if (!tensors.contains(name))
            throw ParseError("checkpoint: missing tensor '" + name + "'");
        detail::tensor_from_json(tensors.at(name), name, m);
    });
    if (tensors.size() != expected)
        throw ParseError("checkpoint: unexpected extra tensors");

    if (j.contains("optimizer") && !j.at("optimizer").is_null()) {
        const Json& oj = j.at("optimizer");
        cp.has_optimizer = true;
        cp.opt.t = detail::require<long>(oj, "t", "optimizer");
        if (!oj.contains("m") || !oj.contains("v"))
            throw ParseError("optimizer: missing moment tables");
        cp.params.for_each_tensor([&](const std::string& name, Mat& p) {
            Mat m = Mat::Zero(p.rows(), p.cols());
            Mat v = Mat::Zero(p.rows(), p.cols());
            if (!oj.at("m").contains(name) || !oj.at("v").contains(name))
                throw ParseError("optimizer: missing moments for '" + name + "'");
            detail::tensor_from_json(oj.at("m").at(name), name, m);
            detail::tensor_from_json(oj.at("v").at(name), name, v);
            cp.opt.m.push_back(std::move(m));
            cp.opt.v.push_back(std::move(v));
        });
    }
    return cp;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_json(parse_json(read_file(path), "checkpoint"));
}

inline void save_checkpoint(const Checkpoint& cp, const std::string& path) {
    write_file(path, serialize(cp));
}

}  // namespace vaproute
