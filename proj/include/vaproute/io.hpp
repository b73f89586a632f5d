#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "vaproute/instance.hpp"
#include "vaproute/solution.hpp"

namespace vaproute {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

inline Json to_json(const VariantFlags& v) {
    return Json{{"open_routes", v.open_routes},
                {"backhauls", v.backhauls},
                {"distance_limit", v.distance_limit},
                {"time_windows", v.time_windows}};
}

inline Json to_json(const Instance& inst) {
    Json nodes = Json::array();
    for (const Node& n : inst.nodes) {
        nodes.push_back(Json{{"id", n.id},
                             {"x", n.x},
                             {"y", n.y},
                             {"q_l", n.linehaul},
                             {"q_b", n.backhaul},
                             {"e", n.tw_open},
                             {"l", n.tw_close},
                             {"s", n.service}});
    }
    Json fleet = Json::array();
    for (const VehicleType& t : inst.fleet) {
        fleet.push_back(Json{{"id", t.id},
                             {"capacity", t.capacity},
                             {"fixed_cost", t.fixed_cost},
                             {"unit_cost", t.unit_cost},
                             {"count", t.count}});
    }
    return Json{{"variant", to_json(inst.variant)},
                {"nodes", std::move(nodes)},
                {"fleet", std::move(fleet)},
                {"dist_limit", inst.dist_limit},
                {"depot_close", inst.depot_close}};
}

inline std::string serialize(const Instance& inst) { return to_json(inst).dump(2) + "\n"; }

namespace detail {

template <typename T>
T require(const Json& j, const char* key, const char* ctx) {
    if (!j.contains(key))
        throw ParseError(std::string(ctx) + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string(ctx) + ": bad value for '" + key + "': " + e.what());
    }
}

}  // namespace detail

inline Instance instance_from_json(const Json& j) {
    Instance inst;
    const Json& var = j.contains("variant") ? j.at("variant") : throw ParseError("instance: missing key 'variant'");
    inst.variant.open_routes = detail::require<bool>(var, "open_routes", "variant");
    inst.variant.backhauls = detail::require<bool>(var, "backhauls", "variant");
    inst.variant.distance_limit = detail::require<bool>(var, "distance_limit", "variant");
    inst.variant.time_windows = detail::require<bool>(var, "time_windows", "variant");

    if (!j.contains("nodes") || !j.at("nodes").is_array())
        throw ParseError("instance: missing node array");
    for (const Json& nj : j.at("nodes")) {
        Node n;
        n.id = detail::require<int>(nj, "id", "node");
        n.x = detail::require<double>(nj, "x", "node");
        n.y = detail::require<double>(nj, "y", "node");
        n.linehaul = detail::require<double>(nj, "q_l", "node");
        n.backhaul = detail::require<double>(nj, "q_b", "node");
        n.tw_open = detail::require<double>(nj, "e", "node");
        n.tw_close = detail::require<double>(nj, "l", "node");
        n.service = detail::require<double>(nj, "s", "node");
        inst.nodes.push_back(n);
    }
    if (!j.contains("fleet") || !j.at("fleet").is_array())
        throw ParseError("instance: missing fleet array");
    for (const Json& tj : j.at("fleet")) {
        VehicleType t;
        t.id = detail::require<int>(tj, "id", "vehicle type");
        t.capacity = detail::require<double>(tj, "capacity", "vehicle type");
        t.fixed_cost = detail::require<double>(tj, "fixed_cost", "vehicle type");
        t.unit_cost = detail::require<double>(tj, "unit_cost", "vehicle type");
        t.count = detail::require<int>(tj, "count", "vehicle type");
        inst.fleet.push_back(t);
    }
    inst.dist_limit = detail::require<double>(j, "dist_limit", "instance");
    inst.depot_close = detail::require<double>(j, "depot_close", "instance");
    return inst;
}

inline Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(what + ": " + e.what());
    }
}

inline Instance deserialize_instance(const std::string& text) {
    return instance_from_json(parse_json(text, "instance"));
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << text;
}

inline Instance load_instance(const std::string& path) {
    return deserialize_instance(read_file(path));
}

inline void save_instance(const Instance& inst, const std::string& path) {
    write_file(path, serialize(inst));
}

inline Json to_json(const Solution& sol, bool feasible = true) {
    Json routes = Json::array();
    for (const Route& r : sol.routes) {
        routes.push_back(Json{{"vehicle_type", r.vehicle_type},
                              {"customers", r.customers},
                              {"closed", r.closed}});
    }
    return Json{{"objective", sol.objective}, {"routes", std::move(routes)}, {"feasible", feasible}};
}

inline Solution solution_from_json(const Json& j) {
    Solution sol;
    sol.objective = detail::require<double>(j, "objective", "solution");
    if (!j.contains("routes") || !j.at("routes").is_array())
        throw ParseError("solution: missing route array");
    for (const Json& rj : j.at("routes")) {
        Route r;
        r.vehicle_type = detail::require<int>(rj, "vehicle_type", "route");
        r.customers = detail::require<std::vector<int>>(rj, "customers", "route");
        r.closed = detail::require<bool>(rj, "closed", "route");
        sol.routes.push_back(std::move(r));
    }
    return sol;
}

inline Json to_json(const Trajectory& traj) {
    return Json{{"actions", traj.actions},
                {"rewards", traj.rewards},
                {"total_reward", traj.total_reward},
                {"complete", traj.complete},
                {"infeasible", traj.infeasible}};
}

}  // namespace vaproute
