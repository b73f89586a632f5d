#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vaproute/instance.hpp"
#include "vaproute/rng.hpp"

namespace vaproute {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Synthetic instance distribution. Identical config + seed yields a
// bit-identical instance; the draw order below is part of the contract,
// do not reorder.
struct GeneratorConfig {
    int customers = 50;      // N
    int fleet_size = 20;     // K, total vehicles across types
    int vehicle_types = 3;   // V
    VariantFlags variant;
    std::uint64_t seed = 0;

    // Demands are integer units scaled by the largest raw capacity, so a
    // capacity-1.0 vehicle corresponds to the largest raw capacity below.
    int demand_min = 1;
    int demand_max = 9;
    std::vector<double> capacity_choices = {30.0, 40.0, 50.0};

    // Larger vehicles cost more: fc scales linearly with capacity share,
    // ac sublinearly (economies of scale).
    double base_fixed_cost = 0.2;
    double fixed_cost_noise = 0.05;
    double base_unit_cost = 1.0;
    double unit_cost_exponent = 0.7;

    double backhaul_fraction = 0.2;  // share of backhaul-only customers under B

    double dist_limit_floor = 3.0;
    double dist_limit_slack = 1.05;  // keeps every depot round trip feasible

    double time_horizon = 3.0;  // depot closing time floor under TW
    double service_min = 0.1;
    double service_max = 0.2;
    double tw_width_min = 0.15;
    double tw_width_max = 0.5;
};

inline void validate_config(const GeneratorConfig& cfg) {
    if (cfg.customers < 1) throw ConfigError("generator: customers must be >= 1");
    if (cfg.fleet_size < 1) throw ConfigError("generator: fleet_size must be >= 1");
    if (cfg.vehicle_types < 1) throw ConfigError("generator: vehicle_types must be >= 1");
    if (cfg.vehicle_types > cfg.fleet_size)
        throw ConfigError("generator: vehicle_types must not exceed fleet_size");
    if (cfg.demand_min < 0 || cfg.demand_max < cfg.demand_min)
        throw ConfigError("generator: bad demand range");
    if (cfg.capacity_choices.empty()) throw ConfigError("generator: no capacity choices");
    for (double q : cfg.capacity_choices)
        if (!(q > 0.0)) throw ConfigError("generator: capacities must be positive");
    if (cfg.backhaul_fraction < 0.0 || cfg.backhaul_fraction > 1.0)
        throw ConfigError("generator: backhaul_fraction outside [0,1]");
}

inline Instance generate_instance(const GeneratorConfig& cfg) {
    validate_config(cfg);
    Rng rng(cfg.seed);
    Instance inst;
    inst.variant = cfg.variant;

    const int n = cfg.customers;
    const int v = cfg.vehicle_types;

    // Fleet: assign capacities by cycling a shuffled copy of the choices.
    std::vector<double> choices = cfg.capacity_choices;
    rng.shuffle(choices);
    std::vector<double> raw_caps(v);
    double q_max_raw = 0.0;
    for (int t = 0; t < v; ++t) {
        raw_caps[t] = choices[t % choices.size()];
        q_max_raw = std::max(q_max_raw, raw_caps[t]);
    }
    inst.fleet.resize(v);
    for (int t = 0; t < v; ++t) {
        VehicleType& vt = inst.fleet[t];
        vt.id = t;
        vt.capacity = raw_caps[t] / q_max_raw;
        const double noise = rng.uniform(-cfg.fixed_cost_noise, cfg.fixed_cost_noise);
        vt.fixed_cost = std::max(0.0, cfg.base_fixed_cost * vt.capacity + noise);
        vt.unit_cost = cfg.base_unit_cost * std::pow(vt.capacity, cfg.unit_cost_exponent);
        vt.count = cfg.fleet_size / v + (t < cfg.fleet_size % v ? 1 : 0);
    }

    // Coordinates, depot first.
    inst.nodes.resize(n + 1);
    for (int i = 0; i <= n; ++i) {
        inst.nodes[i].id = i;
        inst.nodes[i].x = rng.uniform();
        inst.nodes[i].y = rng.uniform();
    }

    // Demands in integer units normalized by the largest raw capacity.
    for (int i = 1; i <= n; ++i) {
        const auto units = rng.uniform_int(cfg.demand_min, cfg.demand_max);
        inst.nodes[i].linehaul = static_cast<double>(units) / q_max_raw;
    }

    // Under backhauls, a fixed fraction of customers are pickup-only.
    if (cfg.variant.backhauls) {
        for (int i = 1; i <= n; ++i) {
            if (rng.uniform() < cfg.backhaul_fraction) {
                inst.nodes[i].backhaul = inst.nodes[i].linehaul;
                inst.nodes[i].linehaul = 0.0;
            }
        }
    }

    if (cfg.variant.time_windows) {
        for (int i = 1; i <= n; ++i)
            inst.nodes[i].service = rng.uniform(cfg.service_min, cfg.service_max);

        // Depot close must leave room for a dedicated round trip to the
        // farthest customer; 5% slack keeps the window draw below robust.
        double need = 0.0;
        for (int i = 1; i <= n; ++i) {
            const double d0 = inst.dist(0, i);
            need = std::max(need, 2.0 * d0 + inst.nodes[i].service);
        }
        inst.depot_close = std::max(cfg.time_horizon, need * 1.05);
        inst.nodes[0].tw_open = 0.0;
        inst.nodes[0].tw_close = inst.depot_close;

        for (int i = 1; i <= n; ++i) {
            Node& c = inst.nodes[i];
            const double d0 = inst.dist(0, i);
            const double lo = d0;                                   // earliest useful start
            const double hi = inst.depot_close - c.service - d0;    // latest start with return
            const double width = rng.uniform(cfg.tw_width_min, cfg.tw_width_max);
            c.tw_open = rng.uniform(lo, std::max(lo, hi - width));
            c.tw_close = std::min(c.tw_open + width, hi);
        }
    }

    if (cfg.variant.distance_limit) {
        double max_d0 = 0.0;
        for (int i = 1; i <= n; ++i) max_d0 = std::max(max_d0, inst.dist(0, i));
        inst.dist_limit = std::max(cfg.dist_limit_floor, 2.0 * max_d0 * cfg.dist_limit_slack);
    }

    return inst;
}

}  // namespace vaproute
