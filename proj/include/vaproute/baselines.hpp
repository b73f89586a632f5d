#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vaproute/env.hpp"
#include "vaproute/instance.hpp"
#include "vaproute/solution.hpp"

namespace vaproute {

struct OracleSizeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct OracleResult {
    Solution best_solution;
    double best_cost = std::numeric_limits<double>::infinity();
    long nodes_explored = 0;
};

// Cheapest-dispatch preference order: fixed cost per unit capacity, then
// unit cost, then id. Used by the greedy heuristic and as the oracle's
// initial upper bound.
inline std::vector<int> dispatch_order(const Instance& inst) {
    std::vector<int> order(inst.fleet.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& ta = inst.fleet[a];
        const auto& tb = inst.fleet[b];
        const double ra = ta.fixed_cost / ta.capacity;
        const double rb = tb.fixed_cost / tb.capacity;
        if (ra != rb) return ra < rb;
        if (ta.unit_cost != tb.unit_cost) return ta.unit_cost < tb.unit_cost;
        return a < b;
    });
    return order;
}

// Mask-driven constructive heuristic: open the cheapest-per-capacity vehicle
// that can still serve someone, then repeatedly extend with the nearest
// feasible customer. Throws FeasibilityError when the fleet cannot cover the
// remaining customers.
inline Solution greedy_construct(const Instance& inst) {
    EnvState s = reset(inst);
    Trajectory traj;
    const auto order = dispatch_order(inst);

    while (!s.done) {
        const auto mask = feasible_mask(s, inst);
        if (!s.route_open) {
            int chosen = -1;
            for (int t : order) {
                if (!mask[1 + t]) continue;
                EnvState trial = s;
                step(trial, vehicle_action(inst, t), inst);
                const auto tm = feasible_mask(trial, inst);
                bool serves = false;
                for (int j = 1; j <= inst.num_customers(); ++j)
                    if (tm[inst.num_types() + j]) serves = true;
                if (serves) {
                    chosen = t;
                    break;
                }
            }
            if (chosen < 0)
                throw FeasibilityError("greedy: no available vehicle can serve the remaining customers");
            const auto out = step(s, vehicle_action(inst, chosen), inst);
            traj.record(vehicle_action(inst, chosen), out.reward);
        } else {
            int best_j = -1;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= inst.num_customers(); ++j) {
                if (!mask[inst.num_types() + j]) continue;
                const double d = inst.dist(s.current_node, j);
                if (d < best_d) {
                    best_d = d;
                    best_j = j;
                }
            }
            const ActionId a = best_j >= 0 ? customer_action(inst, best_j) : 0;
            const auto out = step(s, a, inst);
            traj.record(a, out.reward);
        }
    }
    traj.complete = true;
    return decode_solution(traj, inst);
}

namespace detail {

struct OracleSearch {
    const Instance& inst;
    OracleResult result;
    std::vector<ActionId> stack;
    std::vector<ActionId> best_actions;
    std::vector<double> min_incoming;  // cheapest incoming leg per customer
    double min_unit_cost = 0.0;

    explicit OracleSearch(const Instance& i) : inst(i) {
        const int n = inst.num_customers();
        min_incoming.assign(n + 1, std::numeric_limits<double>::infinity());
        for (int j = 1; j <= n; ++j)
            for (int i2 = 0; i2 <= n; ++i2)
                if (i2 != j) min_incoming[j] = std::min(min_incoming[j], inst.dist(i2, j));
        min_unit_cost = std::numeric_limits<double>::infinity();
        for (const auto& t : inst.fleet) min_unit_cost = std::min(min_unit_cost, t.unit_cost);
    }

    // Admissible bound: every unvisited customer still needs one incoming leg.
    double lower_bound(const EnvState& s) const {
        double lb = 0.0;
        for (int j = 1; j <= inst.num_customers(); ++j)
            if (!s.visited[j]) lb += min_incoming[j] * min_unit_cost;
        return lb;
    }

    // prev_first: first-customer id of the previous route. Routes are
    // enumerated with strictly increasing first customers, which picks one
    // canonical order per set of routes without losing any solution.
    void dfs(const EnvState& s, double cost, int prev_first) {
        ++result.nodes_explored;
        if (s.done) {
            if (cost < result.best_cost) {
                result.best_cost = cost;
                best_actions = stack;
            }
            return;
        }
        if (cost + lower_bound(s) >= result.best_cost - 1e-12) return;

        const auto mask = feasible_mask(s, inst);
        const bool fresh_route = s.route_open && !s.route_has_customer;

        for (ActionId a = 0; a < static_cast<int>(mask.size()); ++a) {
            if (!mask[a]) continue;
            if (fresh_route && is_customer_action(inst, a) && action_node(inst, a) <= prev_first)
                continue;
            if (is_vehicle_action(inst, a)) {
                // A new route must still have a first customer above prev_first.
                bool possible = false;
                for (int j = prev_first + 1; j <= inst.num_customers(); ++j)
                    if (!s.visited[j]) possible = true;
                if (!possible) continue;
            }
            EnvState child = s;
            const auto out = step(child, a, inst);
            stack.push_back(a);
            const int next_first =
                fresh_route && is_customer_action(inst, a) ? action_node(inst, a) : prev_first;
            dfs(child, cost - out.reward, next_first);
            stack.pop_back();
        }
    }
};

}  // namespace detail

// Exact optimum by depth-first enumeration through the environment masks
// with cost-bound pruning. Guarded to tiny instances.
inline OracleResult exhaustive_solve(const Instance& inst) {
    if (inst.num_customers() > 7)
        throw OracleSizeError("oracle: limited to instances with at most 7 customers");
    if (inst.fleet_size() > 4)
        throw OracleSizeError("oracle: limited to fleets with at most 4 vehicles");

    detail::OracleSearch search(inst);

    // Greedy upper bound tightens pruning from the start.
    try {
        Solution greedy = greedy_construct(inst);
        search.result.best_cost = greedy.objective;
        search.result.best_solution = std::move(greedy);
    } catch (const FeasibilityError&) {
        // fall back to unbounded search
    }

    search.dfs(reset(inst), 0.0, 0);

    if (search.result.best_cost == std::numeric_limits<double>::infinity())
        throw FeasibilityError("oracle: instance has no feasible solution");

    if (!search.best_actions.empty()) {
        Trajectory traj;
        for (ActionId a : search.best_actions) traj.record(a, 0.0);
        traj.complete = true;
        search.result.best_solution = decode_solution(traj, inst);
        // Rebuilt objective and summed rewards agree by construction; keep
        // the decode-side value.
        search.result.best_cost = search.result.best_solution.objective;
    }
    return search.result;
}

}  // namespace vaproute
