#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "vaproute/instance.hpp"

namespace vaproute {

// Unified action space of size 1 + V + N:
//   0        end-of-route token (return to depot unless open routes)
//   1..V     vehicle-prompt tokens, one per vehicle type
//   V+1..V+N customer nodes
using ActionId = int;

inline int num_actions(const Instance& inst) {
    return 1 + inst.num_types() + inst.num_customers();
}
inline ActionId vehicle_action(const Instance&, int type_id) { return 1 + type_id; }
inline ActionId customer_action(const Instance& inst, int node_id) {
    return inst.num_types() + node_id;
}
inline bool is_vehicle_action(const Instance& inst, ActionId a) {
    return a >= 1 && a <= inst.num_types();
}
inline bool is_customer_action(const Instance& inst, ActionId a) {
    return a > inst.num_types() && a < num_actions(inst);
}
inline int action_node(const Instance& inst, ActionId a) { return a - inst.num_types(); }

// Slack for floating-point comparisons in the mask. The independent
// feasibility checker uses a strictly looser tolerance so that every
// mask-legal move stays checker-feasible.
inline constexpr double kMaskEps = 1e-9;
inline constexpr double kCheckerEps = 1e-6;

struct StepOutcome {
    double reward = 0.0;  // negative incremental cost
    bool done = false;
    bool infeasible = false;  // set only by the penalty path; implies done
};

// Dynamic MDP context. One state is owned by one worker at a time.
struct EnvState {
    std::vector<char> visited;       // per customer, index 1..N (slot 0 unused)
    int active_type = -1;            // -1 when no route is open
    int current_node = 0;            // node id; 0 while at the depot
    bool route_open = false;         // a vehicle prompt has been selected
    bool route_has_customer = false;
    bool route_backhaul_started = false;
    double remaining_capacity = 0.0;  // linehaul headroom of the active vehicle
    double backhaul_load = 0.0;       // picked-up load of the active vehicle
    double route_distance = 0.0;
    double clock = 0.0;               // per-route clock, starts at 0 at dispatch
    std::vector<int> remaining_count;  // per vehicle type
    int served_count = 0;
    int step_index = 0;
    bool done = false;
    bool infeasible = false;
};

inline EnvState reset(const Instance& inst) {
    EnvState s;
    s.visited.assign(inst.nodes.size(), 0);
    s.remaining_count.resize(inst.fleet.size());
    for (std::size_t t = 0; t < inst.fleet.size(); ++t)
        s.remaining_count[t] = inst.fleet[t].count;
    return s;
}

namespace detail {

// Capacity / time-window / distance-limit feasibility of moving the active
// vehicle from its current position to unvisited customer j. Precedence and
// generation-order rules are layered on top by feasible_mask.
inline bool physically_feasible(const EnvState& s, const Instance& inst, int j) {
    const Node& c = inst.nodes[j];
    const VehicleType& vt = inst.fleet[s.active_type];

    if (c.linehaul > s.remaining_capacity + kMaskEps) return false;
    if (inst.variant.backhauls &&
        c.backhaul > vt.capacity - s.backhaul_load + kMaskEps)
        return false;

    const double leg = inst.dist(s.current_node, j);

    if (inst.variant.distance_limit) {
        const double ret = inst.variant.open_routes ? 0.0 : inst.dist(j, 0);
        if (s.route_distance + leg + ret > inst.dist_limit + kMaskEps) return false;
    }

    if (inst.variant.time_windows) {
        const double arrive = s.clock + leg;
        if (arrive > c.tw_close + kMaskEps) return false;
        const double finish = std::max(arrive, c.tw_open) + c.service;
        const double home = inst.variant.open_routes ? finish : finish + inst.dist(j, 0);
        if (home > inst.depot_close + kMaskEps) return false;
    }

    return true;
}

inline bool is_backhaul_customer(const Instance& inst, int j) {
    return inst.variant.backhauls && inst.nodes[j].backhaul > 0.0;
}

}  // namespace detail

// Conjunction of the constraint mask and the generation-order mask.
// Entry a is true iff action a is legal in state s. An all-false vector is a
// valid output and signals an infeasible (dead-end) state.
inline std::vector<char> feasible_mask(const EnvState& s, const Instance& inst) {
    std::vector<char> mask(num_actions(inst), 0);
    if (s.done) return mask;

    const int v = inst.num_types();
    const int n = inst.num_customers();

    if (!s.route_open) {
        // Start of a route: only available vehicle prompts.
        for (int t = 0; t < v; ++t)
            if (s.remaining_count[t] > 0) mask[1 + t] = 1;
        return mask;
    }

    // Mid-route: unvisited feasible customers, and the end token once the
    // route is non-empty (an empty route is strictly dominated).
    bool any_linehaul = false;
    for (int j = 1; j <= n; ++j) {
        if (s.visited[j] || detail::is_backhaul_customer(inst, j)) continue;
        if (s.route_backhaul_started) continue;  // no deliveries after a pickup
        if (!detail::physically_feasible(s, inst, j)) continue;
        mask[v + j] = 1;
        any_linehaul = true;
    }
    for (int j = 1; j <= n; ++j) {
        if (s.visited[j] || !detail::is_backhaul_customer(inst, j)) continue;
        // Pickups open up only once the active vehicle has no selectable
        // delivery left.
        if (any_linehaul) continue;
        if (detail::physically_feasible(s, inst, j)) mask[v + j] = 1;
    }
    mask[0] = s.route_has_customer ? 1 : 0;
    return mask;
}

// Applies one legal action. Throws on a masked action; infeasible dead ends
// are handled by terminate_infeasible, not here.
inline StepOutcome step(EnvState& s, ActionId a, const Instance& inst) {
    const auto mask = feasible_mask(s, inst);
    if (a < 0 || a >= static_cast<int>(mask.size()) || !mask[a])
        throw std::logic_error("env: action " + std::to_string(a) +
                               " is masked in the current state");

    StepOutcome out;
    const int n = inst.num_customers();

    if (is_vehicle_action(inst, a)) {
        const int t = a - 1;
        const VehicleType& vt = inst.fleet[t];
        out.reward = -vt.fixed_cost;
        s.active_type = t;
        --s.remaining_count[t];
        s.remaining_capacity = vt.capacity;
        s.backhaul_load = 0.0;
        s.route_distance = 0.0;
        s.clock = 0.0;
        s.route_open = true;
        s.route_has_customer = false;
        s.route_backhaul_started = false;
        s.current_node = 0;
    } else if (is_customer_action(inst, a)) {
        const int j = action_node(inst, a);
        const Node& c = inst.nodes[j];
        const VehicleType& vt = inst.fleet[s.active_type];
        const double leg = inst.dist(s.current_node, j);
        out.reward = -vt.unit_cost * leg;
        s.route_distance += leg;
        const double arrive = s.clock + leg;
        s.clock = std::max(arrive, c.tw_open) + c.service;
        s.visited[j] = 1;
        ++s.served_count;
        s.remaining_capacity -= c.linehaul;
        if (inst.variant.backhauls && c.backhaul > 0.0) {
            s.backhaul_load += c.backhaul;
            s.route_backhaul_started = true;
        }
        s.current_node = j;
        s.route_has_customer = true;
    } else {  // end-of-route token
        if (!inst.variant.open_routes) {
            const VehicleType& vt = inst.fleet[s.active_type];
            const double leg = inst.dist(s.current_node, 0);
            out.reward = -vt.unit_cost * leg;
            s.route_distance += leg;
            s.clock += leg;
        }
        s.route_open = false;
        s.route_has_customer = false;
        s.route_backhaul_started = false;
        s.active_type = -1;
        s.current_node = 0;
        s.remaining_capacity = 0.0;
        s.backhaul_load = 0.0;
        if (s.served_count == n) s.done = true;
    }

    ++s.step_index;
    out.done = s.done;
    return out;
}

// Worst-case cost of serving each unvisited customer independently by direct
// round trips with the most expensive vehicle. Negative (it is a reward).
inline double infeasibility_penalty(const EnvState& s, const Instance& inst) {
    const double max_ac = inst.max_unit_cost();
    const double max_fc = inst.max_fixed_cost();
    double total = 0.0;
    for (int j = 1; j <= inst.num_customers(); ++j) {
        if (s.visited[j]) continue;
        total += max_ac * (inst.dist(0, j) + inst.dist(j, 0)) + max_fc;
    }
    return -total;
}

// Terminal transition for dead-end states: unvisited customers remain and the
// mask is all false. Marks the episode infeasible and done.
inline StepOutcome terminate_infeasible(EnvState& s, const Instance& inst) {
    if (s.done) throw std::logic_error("env: penalty on a finished episode");
    if (s.served_count == inst.num_customers())
        throw std::logic_error("env: penalty requires unvisited customers");
    const auto mask = feasible_mask(s, inst);
    for (char m : mask)
        if (m) throw std::logic_error("env: penalty on a state with feasible actions");

    StepOutcome out;
    out.reward = infeasibility_penalty(s, inst);
    out.done = true;
    out.infeasible = true;
    s.done = true;
    s.infeasible = true;
    ++s.step_index;
    return out;
}

}  // namespace vaproute
