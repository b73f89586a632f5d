#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace vaproute {

// Constraint toggles. All false is the plain heterogeneous-fleet CVRP;
// capacity is always active.
struct VariantFlags {
    bool open_routes = false;     // routes end at the last customer, no return leg
    bool backhauls = false;       // pickup demands, linehaul-before-backhaul precedence
    bool distance_limit = false;  // per-route travel distance bound
    bool time_windows = false;    // hard service windows plus a depot closing time

    bool any() const { return open_routes || backhauls || distance_limit || time_windows; }
    bool operator==(const VariantFlags&) const = default;
};

// Canonical short name, e.g. "C", "O", "BTW". Used in CSV output and CLI flags.
inline std::string variant_name(const VariantFlags& v) {
    std::string s;
    if (v.open_routes) s += "O";
    if (v.backhauls) s += "B";
    if (v.distance_limit) s += "L";
    if (v.time_windows) s += "TW";
    return s.empty() ? "C" : s;
}

// Inverse of variant_name, case-insensitive: "c" -> plain, "otw" -> open
// routes + time windows. Throws std::invalid_argument on junk input.
inline VariantFlags variant_from_string(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    VariantFlags v;
    if (s == "C") return v;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == 'O' && !v.open_routes) {
            v.open_routes = true;
            ++i;
        } else if (s[i] == 'B' && !v.backhauls) {
            v.backhauls = true;
            ++i;
        } else if (s[i] == 'L' && !v.distance_limit) {
            v.distance_limit = true;
            ++i;
        } else if (s[i] == 'T' && i + 1 < s.size() && s[i + 1] == 'W' && !v.time_windows) {
            v.time_windows = true;
            i += 2;
        } else {
            throw std::invalid_argument("unknown variant name: " + s);
        }
    }
    return v;
}

struct Node {
    int id = 0;
    double x = 0.0;
    double y = 0.0;
    double linehaul = 0.0;  // delivery demand
    double backhaul = 0.0;  // pickup demand
    double tw_open = 0.0;
    double tw_close = 0.0;
    double service = 0.0;
};

struct VehicleType {
    int id = 0;
    double capacity = 0.0;
    double fixed_cost = 0.0;
    double unit_cost = 0.0;  // travel cost per unit distance
    int count = 0;           // available vehicles of this type
};

inline double distance(double ax, double ay, double bx, double by) {
    const double dx = ax - bx;
    const double dy = ay - by;
    return std::sqrt(dx * dx + dy * dy);
}

inline double distance(const Node& a, const Node& b) { return distance(a.x, a.y, b.x, b.y); }

// Static problem datum: depot + customers + heterogeneous fleet + variant flags.
// Immutable after construction; safe to share read-only across workers.
struct Instance {
    std::vector<Node> nodes;  // depot first (id 0)
    std::vector<VehicleType> fleet;
    VariantFlags variant;
    double dist_limit = 0.0;   // active iff variant.distance_limit
    double depot_close = 0.0;  // active iff variant.time_windows

    int num_customers() const { return static_cast<int>(nodes.size()) - 1; }
    int num_types() const { return static_cast<int>(fleet.size()); }
    int fleet_size() const {
        int k = 0;
        for (const auto& t : fleet) k += t.count;
        return k;
    }
    const Node& depot() const { return nodes.front(); }

    double dist(int i, int j) const { return distance(nodes[i], nodes[j]); }

    double max_capacity() const {
        double q = 0.0;
        for (const auto& t : fleet) q = std::max(q, t.capacity);
        return q;
    }
    double max_fixed_cost() const {
        double f = 0.0;
        for (const auto& t : fleet) f = std::max(f, t.fixed_cost);
        return f;
    }
    double max_unit_cost() const {
        double a = 0.0;
        for (const auto& t : fleet) a = std::max(a, t.unit_cost);
        return a;
    }
};

// Structural validation; returns one message per violated invariant,
// empty when the instance is well formed.
inline std::vector<std::string> validate_instance(const Instance& inst) {
    std::vector<std::string> out;
    if (inst.nodes.empty()) {
        out.push_back("instance has no nodes");
        return out;
    }
    if (inst.fleet.empty()) out.push_back("instance has no vehicle types");

    const Node& depot = inst.nodes.front();
    if (depot.id != 0) out.push_back("depot must have id 0");
    if (depot.linehaul != 0.0 || depot.backhaul != 0.0)
        out.push_back("depot must have zero demand");
    if (depot.service != 0.0) out.push_back("depot must have zero service time");

    for (std::size_t i = 0; i < inst.nodes.size(); ++i) {
        const Node& n = inst.nodes[i];
        if (n.id != static_cast<int>(i))
            out.push_back("node at position " + std::to_string(i) + " has id " + std::to_string(n.id));
        if (!(n.x >= 0.0 && n.x <= 1.0 && n.y >= 0.0 && n.y <= 1.0))
            out.push_back("node " + std::to_string(n.id) + " coordinates outside [0,1]^2");
        if (n.linehaul < 0.0 || n.backhaul < 0.0)
            out.push_back("node " + std::to_string(n.id) + " has negative demand");
        if (n.service < 0.0)
            out.push_back("node " + std::to_string(n.id) + " has negative service time");
        if (n.tw_open > n.tw_close)
            out.push_back("node " + std::to_string(n.id) + " has window open > close");
    }

    double max_q = 0.0;
    for (const auto& t : inst.fleet) {
        if (t.capacity <= 0.0)
            out.push_back("vehicle type " + std::to_string(t.id) + " has non-positive capacity");
        if (t.unit_cost <= 0.0)
            out.push_back("vehicle type " + std::to_string(t.id) + " has non-positive unit cost");
        if (t.fixed_cost < 0.0)
            out.push_back("vehicle type " + std::to_string(t.id) + " has negative fixed cost");
        if (t.count < 0)
            out.push_back("vehicle type " + std::to_string(t.id) + " has negative count");
        max_q = std::max(max_q, t.capacity);
    }

    for (std::size_t i = 1; i < inst.nodes.size(); ++i) {
        const Node& n = inst.nodes[i];
        if (n.linehaul > max_q)
            out.push_back("customer " + std::to_string(n.id) + " linehaul demand exceeds max capacity");
        if (n.backhaul > max_q)
            out.push_back("customer " + std::to_string(n.id) + " backhaul demand exceeds max capacity");
        if (inst.variant.backhauls && n.linehaul > 0.0 && n.backhaul > 0.0)
            out.push_back("customer " + std::to_string(n.id) + " has both linehaul and backhaul demand");
    }

    if (inst.variant.distance_limit) {
        if (!(inst.dist_limit > 0.0)) out.push_back("distance limit flag set but dist_limit <= 0");
        for (std::size_t i = 1; i < inst.nodes.size(); ++i) {
            const double round_trip = 2.0 * distance(depot, inst.nodes[i]);
            if (round_trip > inst.dist_limit)
                out.push_back("customer " + std::to_string(inst.nodes[i].id) +
                              " depot round trip exceeds dist_limit");
        }
    }

    if (inst.variant.time_windows) {
        if (!(inst.depot_close > 0.0)) out.push_back("time window flag set but depot_close <= 0");
        for (std::size_t i = 1; i < inst.nodes.size(); ++i) {
            const Node& n = inst.nodes[i];
            const double arrive = distance(depot, n);
            const double start = std::max(arrive, n.tw_open);
            if (start > n.tw_close)
                out.push_back("customer " + std::to_string(n.id) +
                              " unreachable within its window from the depot");
            const double finish = start + n.service;
            const double back = inst.variant.open_routes ? finish : finish + arrive;
            if (back > inst.depot_close)
                out.push_back("customer " + std::to_string(n.id) +
                              " cannot be served before depot close on a dedicated route");
        }
    }

    return out;
}

}  // namespace vaproute
