#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "vaproute/env.hpp"
#include "vaproute/instance.hpp"

namespace vaproute {

// Ordered action sequence with per-step rewards.
struct Trajectory {
    std::vector<ActionId> actions;
    std::vector<double> rewards;
    double total_reward = 0.0;
    bool complete = false;    // reached a terminal state
    bool infeasible = false;  // terminated through the penalty path

    void record(ActionId a, double r) {
        actions.push_back(a);
        rewards.push_back(r);
        total_reward += r;
    }
};

struct Route {
    int vehicle_type = 0;
    std::vector<int> customers;  // node ids in visit order
    bool closed = true;          // true when the return leg is traveled
};

struct Solution {
    std::vector<Route> routes;
    double objective = 0.0;
};

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FeasibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Independent feasibility check against the variant constraints. This is a
// separate code path from feasible_mask on purpose: it recomputes loads,
// clocks and distances from the routes alone.
inline std::vector<std::string> check_feasibility(const Solution& sol, const Instance& inst) {
    std::vector<std::string> out;
    const int n = inst.num_customers();

    std::vector<int> seen(inst.nodes.size(), 0);
    std::vector<int> used(inst.fleet.size(), 0);

    for (std::size_t r = 0; r < sol.routes.size(); ++r) {
        const Route& route = sol.routes[r];
        const std::string tag = "route " + std::to_string(r);
        if (route.vehicle_type < 0 || route.vehicle_type >= inst.num_types()) {
            out.push_back(tag + ": unknown vehicle type " + std::to_string(route.vehicle_type));
            continue;
        }
        ++used[route.vehicle_type];
        const VehicleType& vt = inst.fleet[route.vehicle_type];

        if (route.customers.empty()) out.push_back(tag + ": empty route");

        double linehaul = 0.0, backhaul = 0.0;
        bool pickup_seen = false;
        double dist = 0.0, clock = 0.0;
        int prev = 0;
        for (int j : route.customers) {
            if (j < 1 || j > n) {
                out.push_back(tag + ": invalid customer id " + std::to_string(j));
                continue;
            }
            ++seen[j];
            const Node& c = inst.nodes[j];
            linehaul += c.linehaul;
            if (inst.variant.backhauls) {
                if (c.backhaul > 0.0) {
                    pickup_seen = true;
                    backhaul += c.backhaul;
                } else if (pickup_seen) {
                    out.push_back(tag + ": linehaul customer " + std::to_string(j) +
                                  " served after a backhaul pickup");
                }
            }
            const double leg = inst.dist(prev, j);
            dist += leg;
            const double arrive = clock + leg;
            if (inst.variant.time_windows) {
                if (arrive > c.tw_close + kCheckerEps)
                    out.push_back(tag + ": customer " + std::to_string(j) +
                                  " served after its window closes");
            }
            clock = std::max(arrive, c.tw_open) + c.service;
            prev = j;
        }
        if (route.closed) {
            const double leg = inst.dist(prev, 0);
            dist += leg;
            clock += leg;
        }

        if (linehaul > vt.capacity + kCheckerEps)
            out.push_back(tag + ": linehaul load exceeds capacity");
        if (inst.variant.backhauls && backhaul > vt.capacity + kCheckerEps)
            out.push_back(tag + ": backhaul load exceeds capacity");
        if (inst.variant.distance_limit && dist > inst.dist_limit + kCheckerEps)
            out.push_back(tag + ": distance " + std::to_string(dist) + " exceeds limit");
        if (inst.variant.time_windows && clock > inst.depot_close + kCheckerEps)
            out.push_back(tag + ": finishes after depot close");
    }

    for (std::size_t t = 0; t < used.size(); ++t)
        if (used[t] > inst.fleet[t].count)
            out.push_back("vehicle type " + std::to_string(t) + " used " + std::to_string(used[t]) +
                          " times, only " + std::to_string(inst.fleet[t].count) + " available");

    for (int j = 1; j <= n; ++j) {
        if (seen[j] == 0) out.push_back("customer " + std::to_string(j) + " is never served");
        if (seen[j] > 1)
            out.push_back("customer " + std::to_string(j) + " served " + std::to_string(seen[j]) +
                          " times");
    }

    return out;
}

// Total cost: per route, the fixed cost plus unit cost times the traveled
// legs (return leg included only for closed routes). Legs are accumulated in
// visit order. Throws FeasibilityError on an infeasible solution.
inline double evaluate_cost(const Solution& sol, const Instance& inst) {
    const auto violations = check_feasibility(sol, inst);
    if (!violations.empty()) {
        std::string msg = "infeasible solution:";
        for (const auto& v : violations) msg += "\n  " + v;
        throw FeasibilityError(msg);
    }
    double total = 0.0;
    for (const Route& route : sol.routes) {
        const VehicleType& vt = inst.fleet[route.vehicle_type];
        double legs = 0.0;
        int prev = 0;
        for (int j : route.customers) {
            legs += inst.dist(prev, j);
            prev = j;
        }
        if (route.closed) legs += inst.dist(prev, 0);
        total += vt.fixed_cost + vt.unit_cost * legs;
    }
    return total;
}

// Splits a complete feasible trajectory into routes at vehicle prompts and
// end tokens, then prices it. Throws DecodeError on malformed input.
inline Solution decode_solution(const Trajectory& traj, const Instance& inst) {
    if (!traj.complete) throw DecodeError("decode: trajectory is incomplete");
    if (traj.infeasible) throw DecodeError("decode: trajectory ended infeasible");

    Solution sol;
    bool open = false;
    for (ActionId a : traj.actions) {
        if (is_vehicle_action(inst, a)) {
            if (open) throw DecodeError("decode: vehicle prompt inside an open route");
            sol.routes.push_back(Route{a - 1, {}, !inst.variant.open_routes});
            open = true;
        } else if (is_customer_action(inst, a)) {
            if (!open) throw DecodeError("decode: customer visit outside a route");
            sol.routes.back().customers.push_back(action_node(inst, a));
        } else if (a == 0) {
            if (!open) throw DecodeError("decode: end token outside a route");
            open = false;
        } else {
            throw DecodeError("decode: action id out of range");
        }
    }
    if (open) throw DecodeError("decode: trajectory leaves a route open");

    sol.objective = evaluate_cost(sol, inst);
    return sol;
}

}  // namespace vaproute
