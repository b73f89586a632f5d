#pragma once

// Run configuration file: one JSON document with "generator", "model" and
// "train" sections mirroring the in-memory config structs. Parsing is
// strict: any key that is not recognized is an error naming that key, so a
// typo cannot silently fall back to a default.

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include <json.hpp>

#include "vaproute/generator.hpp"
#include "vaproute/instance.hpp"
#include "vaproute/io.hpp"
#include "vaproute/model.hpp"
#include "vaproute/training.hpp"

namespace vaproute {

struct RunConfig {
    GeneratorConfig generator;
    ModelConfig model;
    TrainConfig train;
};

namespace detail {

template <typename T>
T config_value(const Json& v, const std::string& section, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("run config: bad value for '" + section + "." + key +
                          "': " + e.what());
    }
}

using KeyHandler = std::function<void(const Json&)>;

inline void apply_section(const Json& j, const std::string& section,
                          const std::map<std::string, KeyHandler>& handlers) {
    if (!j.is_object())
        throw ConfigError("run config: section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        const auto it = handlers.find(key);
        if (it == handlers.end())
            throw ConfigError("run config: unknown key '" + key + "' in section '" +
                              section + "'");
        it->second(value);
    }
}

}  // namespace detail

inline RunConfig run_config_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("run config: top level must be an object");
    RunConfig rc;

    for (const auto& [section, body] : j.items()) {
        if (section == "generator") {
            GeneratorConfig& g = rc.generator;
            detail::apply_section(body, section, {
                {"customers", [&](const Json& v) { g.customers = detail::config_value<int>(v, section, "customers"); }},
                {"fleet_size", [&](const Json& v) { g.fleet_size = detail::config_value<int>(v, section, "fleet_size"); }},
                {"vehicle_types", [&](const Json& v) { g.vehicle_types = detail::config_value<int>(v, section, "vehicle_types"); }},
                {"variant", [&](const Json& v) { g.variant = variant_from_string(detail::config_value<std::string>(v, section, "variant")); }},
                {"seed", [&](const Json& v) { g.seed = detail::config_value<std::uint64_t>(v, section, "seed"); }},
                {"demand_min", [&](const Json& v) { g.demand_min = detail::config_value<int>(v, section, "demand_min"); }},
                {"demand_max", [&](const Json& v) { g.demand_max = detail::config_value<int>(v, section, "demand_max"); }},
                {"capacity_choices", [&](const Json& v) { g.capacity_choices = detail::config_value<std::vector<double>>(v, section, "capacity_choices"); }},
                {"base_fixed_cost", [&](const Json& v) { g.base_fixed_cost = detail::config_value<double>(v, section, "base_fixed_cost"); }},
                {"fixed_cost_noise", [&](const Json& v) { g.fixed_cost_noise = detail::config_value<double>(v, section, "fixed_cost_noise"); }},
                {"base_unit_cost", [&](const Json& v) { g.base_unit_cost = detail::config_value<double>(v, section, "base_unit_cost"); }},
                {"unit_cost_exponent", [&](const Json& v) { g.unit_cost_exponent = detail::config_value<double>(v, section, "unit_cost_exponent"); }},
                {"backhaul_fraction", [&](const Json& v) { g.backhaul_fraction = detail::config_value<double>(v, section, "backhaul_fraction"); }},
                {"dist_limit_floor", [&](const Json& v) { g.dist_limit_floor = detail::config_value<double>(v, section, "dist_limit_floor"); }},
                {"dist_limit_slack", [&](const Json& v) { g.dist_limit_slack = detail::config_value<double>(v, section, "dist_limit_slack"); }},
                {"time_horizon", [&](const Json& v) { g.time_horizon = detail::config_value<double>(v, section, "time_horizon"); }},
                {"service_min", [&](const Json& v) { g.service_min = detail::config_value<double>(v, section, "service_min"); }},
                {"service_max", [&](const Json& v) { g.service_max = detail::config_value<double>(v, section, "service_max"); }},
                {"tw_width_min", [&](const Json& v) { g.tw_width_min = detail::config_value<double>(v, section, "tw_width_min"); }},
                {"tw_width_max", [&](const Json& v) { g.tw_width_max = detail::config_value<double>(v, section, "tw_width_max"); }},
            });
        } else if (section == "model") {
            ModelConfig& m = rc.model;
            detail::apply_section(body, section, {
                {"hidden_dim", [&](const Json& v) { m.hidden_dim = detail::config_value<int>(v, section, "hidden_dim"); }},
                {"layers", [&](const Json& v) { m.layers = detail::config_value<int>(v, section, "layers"); }},
                {"heads", [&](const Json& v) { m.heads = detail::config_value<int>(v, section, "heads"); }},
                {"vehicle_types", [&](const Json& v) { m.vehicle_types = detail::config_value<int>(v, section, "vehicle_types"); }},
                {"ff_mult", [&](const Json& v) { m.ff_mult = detail::config_value<int>(v, section, "ff_mult"); }},
                {"logit_clip", [&](const Json& v) { m.logit_clip = detail::config_value<double>(v, section, "logit_clip"); }},
            });
        } else if (section == "train") {
            TrainConfig& t = rc.train;
            detail::apply_section(body, section, {
                {"epochs", [&](const Json& v) { t.epochs = detail::config_value<int>(v, section, "epochs"); }},
                {"batches_per_epoch", [&](const Json& v) { t.batches_per_epoch = detail::config_value<int>(v, section, "batches_per_epoch"); }},
                {"batch_size", [&](const Json& v) { t.batch_size = detail::config_value<int>(v, section, "batch_size"); }},
                {"samples", [&](const Json& v) { t.samples = detail::config_value<int>(v, section, "samples"); }},
                {"lr_start", [&](const Json& v) { t.lr_start = detail::config_value<double>(v, section, "lr_start"); }},
                {"lr_end", [&](const Json& v) { t.lr_end = detail::config_value<double>(v, section, "lr_end"); }},
                {"warmup_steps", [&](const Json& v) { t.warmup_steps = detail::config_value<int>(v, section, "warmup_steps"); }},
                {"weight_decay", [&](const Json& v) { t.weight_decay = detail::config_value<double>(v, section, "weight_decay"); }},
                {"sigma0", [&](const Json& v) { t.sigma0 = detail::config_value<double>(v, section, "sigma0"); }},
                {"cov_clamp_lo", [&](const Json& v) { t.cov_clamp_lo = detail::config_value<double>(v, section, "cov_clamp_lo"); }},
                {"cov_clamp_hi", [&](const Json& v) { t.cov_clamp_hi = detail::config_value<double>(v, section, "cov_clamp_hi"); }},
                {"p_detach", [&](const Json& v) { t.p_detach = detail::config_value<double>(v, section, "p_detach"); }},
                {"eta_quantile", [&](const Json& v) { t.eta_quantile = detail::config_value<double>(v, section, "eta_quantile"); }},
                {"eta_absolute", [&](const Json& v) { t.eta_absolute = detail::config_value<double>(v, section, "eta_absolute"); }},
                {"patience", [&](const Json& v) { t.patience = detail::config_value<int>(v, section, "patience"); }},
                {"val_size", [&](const Json& v) { t.val_size = detail::config_value<int>(v, section, "val_size"); }},
                {"seed", [&](const Json& v) { t.seed = detail::config_value<std::uint64_t>(v, section, "seed"); }},
            });
        } else {
            throw ConfigError("run config: unknown section '" + section + "'");
        }
    }

    validate_config(rc.generator);
    rc.model.validate();
    rc.train.validate();
    if (rc.generator.vehicle_types != rc.model.vehicle_types)
        throw ConfigError("run config: generator.vehicle_types and model.vehicle_types differ");
    return rc;
}

inline Json to_json(const RunConfig& rc) {
    Json gen{{"customers", rc.generator.customers},
             {"fleet_size", rc.generator.fleet_size},
             {"vehicle_types", rc.generator.vehicle_types},
             {"variant", variant_name(rc.generator.variant)},
             {"seed", rc.generator.seed}};
    Json model{{"hidden_dim", rc.model.hidden_dim},
               {"layers", rc.model.layers},
               {"heads", rc.model.heads},
               {"vehicle_types", rc.model.vehicle_types},
               {"ff_mult", rc.model.ff_mult},
               {"logit_clip", rc.model.logit_clip}};
    Json train{{"epochs", rc.train.epochs},
               {"batches_per_epoch", rc.train.batches_per_epoch},
               {"batch_size", rc.train.batch_size},
               {"samples", rc.train.samples},
               {"lr_start", rc.train.lr_start},
               {"lr_end", rc.train.lr_end},
               {"warmup_steps", rc.train.warmup_steps},
               {"weight_decay", rc.train.weight_decay},
               {"sigma0", rc.train.sigma0},
               {"cov_clamp_lo", rc.train.cov_clamp_lo},
               {"cov_clamp_hi", rc.train.cov_clamp_hi},
               {"p_detach", rc.train.p_detach},
               {"eta_quantile", rc.train.eta_quantile},
               {"patience", rc.train.patience},
               {"val_size", rc.train.val_size},
               {"seed", rc.train.seed}};
    if (!std::isnan(rc.train.eta_absolute)) train["eta_absolute"] = rc.train.eta_absolute;
    return Json{{"generator", std::move(gen)}, {"model", std::move(model)},
                {"train", std::move(train)}};
}

inline RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(parse_json(read_file(path), "run config"));
}

}  // namespace vaproute
