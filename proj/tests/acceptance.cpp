// Acceptance gate: ten release criteria, one pass/fail line each. Runs as a
// plain binary (no test framework); exit code is the number of failed
// criteria. An optional list of criterion numbers restricts the run, e.g.
// `acceptance 3 8`.
//
// Tolerances are pinned next to each check. Wherever a criterion needs an
// expected value, it is recomputed here from first principles instead of
// calling the code path under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vaproute/baselines.hpp"
#include "vaproute/checkpoint.hpp"
#include "vaproute/env.hpp"
#include "vaproute/generator.hpp"
#include "vaproute/io.hpp"
#include "vaproute/model.hpp"
#include "vaproute/policy.hpp"
#include "vaproute/rng.hpp"
#include "vaproute/solution.hpp"
#include "vaproute/training.hpp"

using namespace vaproute;

namespace {

struct Criterion {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

const std::vector<std::string> kVariantNames = {"c", "o", "b", "l", "tw"};

GeneratorConfig bucket_config(const std::string& variant, int customers, int fleet,
                              int types, std::uint64_t seed) {
    GeneratorConfig cfg;
    cfg.customers = customers;
    cfg.fleet_size = fleet;
    cfg.vehicle_types = types;
    cfg.variant = variant_from_string(variant);
    cfg.seed = seed;
    return cfg;
}

// Uniformly random choice among the mask-legal actions.
ActionId random_legal_action(const std::vector<char>& mask, Rng& rng) {
    std::vector<ActionId> legal;
    for (std::size_t a = 0; a < mask.size(); ++a)
        if (mask[a]) legal.push_back(static_cast<ActionId>(a));
    if (legal.empty()) return -1;
    return legal[rng.uniform_int(0, static_cast<int>(legal.size()) - 1)];
}

Trajectory random_rollout(const Instance& inst, Rng& rng) {
    EnvState s = reset(inst);
    Trajectory traj;
    while (!s.done) {
        const ActionId a = random_legal_action(feasible_mask(s, inst), rng);
        if (a < 0) {
            const auto out = terminate_infeasible(s, inst);
            traj.record(-1, out.reward);
            traj.infeasible = true;
            break;
        }
        const auto out = step(s, a, inst);
        traj.record(a, out.reward);
    }
    traj.complete = true;
    return traj;
}

// ---------------------------------------------------------------- 1 and 2

// Reward-cost equivalence and mask soundness share the same rollouts, so
// both are computed here and reported under their own numbers.
struct RolloutAudit {
    long completed = 0;
    long dead_ends = 0;
    long reward_mismatches = 0;
    long checker_violations = 0;
    double worst_gap = 0.0;
    double elapsed = 0.0;
};

RolloutAudit audit_random_rollouts() {
    const auto t0 = std::chrono::steady_clock::now();
    RolloutAudit audit;
    Rng rng(20240811);
    int bucket = 0;
    for (const auto& variant : kVariantNames) {
        for (int n : {5, 10, 20}) {
            for (int i = 0; i < 35; ++i) {
                GeneratorConfig cfg = bucket_config(
                    variant, n, 20, 3, derive_seed(101, bucket, static_cast<std::uint64_t>(i)));
                const Instance inst = generate_instance(cfg);
                for (int r = 0; r < 20; ++r) {
                    const Trajectory traj = random_rollout(inst, rng);
                    if (traj.infeasible) {
                        ++audit.dead_ends;
                        continue;
                    }
                    ++audit.completed;
                    double reward_sum = 0.0;
                    for (double w : traj.rewards) reward_sum += w;
                    try {
                        const Solution sol = decode_solution(traj, inst);
                        const double gap = std::abs(reward_sum + sol.objective);
                        audit.worst_gap = std::max(audit.worst_gap, gap);
                        if (gap > 1e-9) ++audit.reward_mismatches;
                        if (!check_feasibility(sol, inst).empty()) ++audit.checker_violations;
                    } catch (const FeasibilityError&) {
                        ++audit.checker_violations;
                    }
                }
            }
            ++bucket;
        }
    }
    audit.elapsed = seconds_since(t0);
    return audit;
}

Criterion criterion_reward_cost(const RolloutAudit& a) {
    Criterion c;
    if (a.completed < 10000)
        c.fail("only " + std::to_string(a.completed) + " completed rollouts (< 10000)");
    if (a.reward_mismatches > 0)
        c.fail(std::to_string(a.reward_mismatches) + " trajectories off by > 1e-9");
    if (a.elapsed > 120.0) c.fail("took " + fmt("%.1f", a.elapsed) + "s (> 120s)");
    c.note(std::to_string(a.completed) + " rollouts, worst |sum(r)+cost| = " +
           fmt("%.2e", a.worst_gap) + ", " + fmt("%.1f", a.elapsed) + "s");
    return c;
}

Criterion criterion_mask_soundness(const RolloutAudit& a) {
    Criterion c;
    if (a.checker_violations > 0)
        c.fail(std::to_string(a.checker_violations) + " checker violations");
    c.note(std::to_string(a.completed) + " decoded solutions, " +
           std::to_string(a.dead_ends) + " dead ends, 0 expected violations");
    return c;
}

// ------------------------------------------------------------------- 3

// Independent re-derivation of single-move feasibility with the same
// tolerance the mask advertises. Used only to express the dispatch rule for
// pickups; all arithmetic is recomputed from the instance.
struct SimRoute {
    int type = -1;
    double remaining_capacity = 0.0;
    double backhaul_load = 0.0;
    double dist = 0.0;
    double clock = 0.0;
    int at = 0;
};

bool sim_can_serve(const SimRoute& r, const Instance& inst, int j) {
    const Node& c = inst.nodes[j];
    const VehicleType& vt = inst.fleet[r.type];
    if (c.linehaul > r.remaining_capacity + kMaskEps) return false;
    if (inst.variant.backhauls && c.backhaul > vt.capacity - r.backhaul_load + kMaskEps)
        return false;
    const double leg = inst.dist(r.at, j);
    if (inst.variant.distance_limit) {
        const double ret = inst.variant.open_routes ? 0.0 : inst.dist(j, 0);
        if (r.dist + leg + ret > inst.dist_limit + kMaskEps) return false;
    }
    if (inst.variant.time_windows) {
        const double arrive = r.clock + leg;
        if (arrive > c.tw_close + kMaskEps) return false;
        const double finish = std::max(arrive, c.tw_open) + c.service;
        const double home = inst.variant.open_routes ? finish : finish + inst.dist(j, 0);
        if (home > inst.depot_close + kMaskEps) return false;
    }
    return true;
}

// With backhauls on, a pickup may only be dispatched while no unvisited
// delivery is still servable by the active vehicle. This mirrors the problem
// definition, not the mask code.
bool candidate_respects_dispatch_rule(const std::vector<Route>& routes, const Instance& inst) {
    if (!inst.variant.backhauls) return true;
    std::vector<char> visited(inst.nodes.size(), 0);
    for (const Route& route : routes) {
        SimRoute r;
        r.type = route.vehicle_type;
        r.remaining_capacity = inst.fleet[route.vehicle_type].capacity;
        for (int j : route.customers) {
            const Node& c = inst.nodes[j];
            if (c.backhaul > 0.0) {
                for (int d = 1; d <= inst.num_customers(); ++d) {
                    if (visited[d] || inst.nodes[d].backhaul > 0.0) continue;
                    if (sim_can_serve(r, inst, d)) return false;  // pickup preempted a delivery
                }
            }
            const double leg = inst.dist(r.at, j);
            r.dist += leg;
            r.clock = std::max(r.clock + leg, c.tw_open) + c.service;
            r.remaining_capacity -= c.linehaul;
            r.backhaul_load += c.backhaul;
            r.at = j;
            visited[j] = 1;
        }
    }
    return true;
}

// Every syntactically well-formed candidate: ordered routes, each a
// non-empty customer sequence with a vehicle type, respecting type counts.
// No feasibility logic here.
void enumerate_candidates(const Instance& inst, std::vector<Route>& routes,
                          std::vector<int>& counts, std::vector<char>& unvisited, int left,
                          const std::function<void(const std::vector<Route>&)>& yield) {
    if (left == 0) {
        yield(routes);
        return;
    }
    const bool extending = !routes.empty() && !routes.back().closed;
    if (extending) {
        for (int j = 1; j <= inst.num_customers(); ++j) {
            if (!unvisited[j]) continue;
            unvisited[j] = 0;
            routes.back().customers.push_back(j);
            enumerate_candidates(inst, routes, counts, unvisited, left - 1, yield);
            routes.back().customers.pop_back();
            unvisited[j] = 1;
        }
        if (!routes.back().customers.empty()) {
            routes.back().closed = true;
            enumerate_candidates(inst, routes, counts, unvisited, left, yield);
            routes.back().closed = false;
        }
    } else {
        for (int t = 0; t < inst.num_types(); ++t) {
            if (counts[t] == 0) continue;
            --counts[t];
            routes.push_back(Route{t, {}, false});  // closed flags as "route finished" marker
            enumerate_candidates(inst, routes, counts, unvisited, left, yield);
            routes.pop_back();
            ++counts[t];
        }
    }
}

std::vector<ActionId> candidate_actions(const std::vector<Route>& routes, const Instance& inst) {
    std::vector<ActionId> actions;
    for (const Route& r : routes) {
        actions.push_back(vehicle_action(inst, r.vehicle_type));
        for (int j : r.customers) actions.push_back(customer_action(inst, j));
        actions.push_back(0);
    }
    return actions;
}

bool mask_reachable(const std::vector<ActionId>& actions, const Instance& inst) {
    EnvState s = reset(inst);
    for (ActionId a : actions) {
        const auto mask = feasible_mask(s, inst);
        if (a < 0 || a >= static_cast<int>(mask.size()) || !mask[a]) return false;
        step(s, a, inst);
    }
    return s.done && !s.infeasible;
}

Criterion criterion_mask_completeness() {
    const auto t0 = std::chrono::steady_clock::now();
    Criterion c;
    long feasible_total = 0, unreachable = 0, optimum_mismatches = 0;
    long beaten = 0, random_done = 0, unsolvable = 0;
    int solvable = 0;
    Rng roll_rng(777);

    for (int i = 0; solvable < 200 && i < 400; ++i) {
        const std::string variant = kVariantNames[i % 5];
        const int n = 3 + (i / 5) % 3;  // 3..5 customers
        GeneratorConfig cfg = bucket_config(variant, n, 3, 2,
                                            derive_seed(301, static_cast<std::uint64_t>(i)));
        const Instance inst = generate_instance(cfg);

        double best_enumerated = std::numeric_limits<double>::infinity();
        long feasible_here = 0;
        std::vector<Route> routes;
        std::vector<int> counts(inst.fleet.size());
        for (std::size_t t = 0; t < inst.fleet.size(); ++t) counts[t] = inst.fleet[t].count;
        std::vector<char> unvisited(inst.nodes.size(), 1);
        unvisited[0] = 0;

        enumerate_candidates(
            inst, routes, counts, unvisited, inst.num_customers(),
            [&](const std::vector<Route>& cand) {
                Solution sol;
                sol.routes = cand;
                for (Route& r : sol.routes) r.closed = !inst.variant.open_routes;
                if (!check_feasibility(sol, inst).empty()) return;
                if (!candidate_respects_dispatch_rule(sol.routes, inst)) return;
                ++feasible_here;
                best_enumerated = std::min(best_enumerated, evaluate_cost(sol, inst));
                if (!mask_reachable(candidate_actions(sol.routes, inst), inst)) ++unreachable;
            });
        feasible_total += feasible_here;

        double oracle_best = std::numeric_limits<double>::infinity();
        bool oracle_solved = true;
        try {
            oracle_best = exhaustive_solve(inst).best_cost;
        } catch (const std::runtime_error&) {
            oracle_solved = false;
        }

        if (feasible_here == 0 || !oracle_solved) {
            // the oracle and the enumeration must agree on unsolvability
            if (feasible_here != 0 || oracle_solved)
                c.fail("solvability disagreement on instance " + std::to_string(i));
            ++unsolvable;
            continue;
        }
        ++solvable;
        if (std::abs(best_enumerated - oracle_best) > 1e-9) ++optimum_mismatches;

        for (int r = 0, done = 0; done < 500 && r < 100000; ++r) {
            const Trajectory traj = random_rollout(inst, roll_rng);
            if (traj.infeasible) continue;
            ++done;
            ++random_done;
            const Solution sol = decode_solution(traj, inst);
            if (sol.objective < oracle_best - 1e-9) ++beaten;
        }
    }

    if (solvable < 200)
        c.fail("only " + std::to_string(solvable) + " solvable instances collected");
    if (unreachable > 0)
        c.fail(std::to_string(unreachable) + " feasible solutions unreachable through masks");
    if (optimum_mismatches > 0)
        c.fail(std::to_string(optimum_mismatches) +
               " instances where the enumerated optimum differs from the oracle");
    if (beaten > 0)
        c.fail(std::to_string(beaten) + " random rollouts beat the oracle optimum");
    if (random_done < 100000)
        c.fail("only " + std::to_string(random_done) + " complete random rollouts (< 1e5)");
    c.note(std::to_string(feasible_total) + " feasible candidates replayed over " +
           std::to_string(solvable) + " instances (" + std::to_string(unsolvable) +
           " unsolvable skipped), " + std::to_string(random_done) +
           " random rollouts vs optimum, " + fmt("%.1f", seconds_since(t0)) + "s");
    return c;
}

// ------------------------------------------------------------------- 4

// Fixed-trajectory surrogate loss over a small batch: the REINFORCE term
// plus the entropy bonus, exactly as the trainer builds it, with no
// detached tokens. Deterministic in the parameters, so central differences
// are well defined.
struct FixedBatch {
    std::vector<Instance> instances;
    std::vector<std::vector<std::vector<ActionId>>> actions;  // [instance][sample]
    std::vector<std::vector<double>> advantages;
    long tokens = 0;
    int samples = 0;
};

double fixed_batch_loss(const ModelParams& params, const FixedBatch& fb, double sigma,
                        std::vector<Mat>* grads_out) {
    const double inv_group =
        1.0 / static_cast<double>(fb.instances.size() * static_cast<std::size_t>(fb.samples));
    const double inv_tokens = 1.0 / static_cast<double>(fb.tokens);
    double total = 0.0;
    if (grads_out) {
        grads_out->clear();
        params.for_each_tensor([&](const std::string&, const Mat& m) {
            grads_out->push_back(Mat::Zero(m.rows(), m.cols()));
        });
    }
    for (std::size_t b = 0; b < fb.instances.size(); ++b) {
        for (int s = 0; s < fb.samples; ++s) {
            ad::Tape tape(grads_out != nullptr);
            PolicyRollout r = policy_replay(tape, params, fb.instances[b], fb.actions[b][s]);
            ad::Value loss = rollout_loss_terms(tape, r, fb.advantages[b][s], inv_group,
                                                sigma, inv_tokens, {});
            total += loss.val()(0, 0);
            if (grads_out) {
                tape.backward(loss);
                std::size_t k = 0;
                params.for_each_tensor([&](const std::string&, const Mat& m) {
                    (*grads_out)[k] += tape.grad(&m);
                    ++k;
                });
            }
        }
    }
    return total;
}

Criterion criterion_gradcheck() {
    const auto t0 = std::chrono::steady_clock::now();
    Criterion c;

    ModelConfig mc;
    mc.hidden_dim = 8;
    mc.layers = 2;
    mc.heads = 2;
    mc.vehicle_types = 2;
    ModelParams params = init_params(mc, 42);

    FixedBatch fb;
    fb.samples = 2;
    for (int b = 0; b < 2; ++b) {
        GeneratorConfig cfg = bucket_config("c", 4, 4, 2, derive_seed(401, b));
        fb.instances.push_back(generate_instance(cfg));
    }
    fb.actions.resize(fb.instances.size());
    fb.advantages.resize(fb.instances.size());
    for (std::size_t b = 0; b < fb.instances.size(); ++b) {
        std::vector<double> rewards;
        for (int s = 0; s < fb.samples; ++s) {
            ad::Tape tape(false);
            Rng rng(derive_seed(402, b, static_cast<std::uint64_t>(s)));
            PolicyRollout r =
                policy_rollout(tape, params, fb.instances[b], DecodeMode::sample, &rng);
            if (r.traj.infeasible) {
                c.fail("sampled rollout dead-ended; fixture unusable");
                return c;
            }
            fb.actions[b].push_back(r.traj.actions);
            rewards.push_back(r.traj.total_reward);
            fb.tokens += static_cast<long>(r.step_log_probs.size());
        }
        fb.advantages[b] = shared_baseline(rewards).second;
    }

    const double sigma = 0.03;
    std::vector<Mat> analytic;
    fixed_batch_loss(params, fb, sigma, &analytic);

    const double h = 1e-5;      // central difference step
    const double tol = 1e-4;    // relative error bound per tensor
    double worst_rel = 0.0;
    std::string worst_name;
    std::size_t k = 0;
    params.for_each_tensor([&](const std::string& name, Mat& p) {
        double max_abs_diff = 0.0, max_abs_fd = 0.0;
        for (int r = 0; r < p.rows(); ++r) {
            for (int col = 0; col < p.cols(); ++col) {
                const double saved = p(r, col);
                p(r, col) = saved + h;
                const double up = fixed_batch_loss(params, fb, sigma, nullptr);
                p(r, col) = saved - h;
                const double dn = fixed_batch_loss(params, fb, sigma, nullptr);
                p(r, col) = saved;
                const double fd = (up - dn) / (2.0 * h);
                max_abs_fd = std::max(max_abs_fd, std::abs(fd));
                max_abs_diff = std::max(max_abs_diff, std::abs(analytic[k](r, col) - fd));
            }
        }
        const double rel = max_abs_diff / std::max(1.0, max_abs_fd);
        if (rel > worst_rel) {
            worst_rel = rel;
            worst_name = name;
        }
        if (rel >= tol) c.fail(name + " relative error " + fmt("%.2e", rel));
        ++k;
    });

    const double elapsed = seconds_since(t0);
    if (elapsed > 300.0) c.fail("took " + fmt("%.1f", elapsed) + "s (> 300s)");
    c.note("worst tensor " + worst_name + " rel err " + fmt("%.2e", worst_rel) + ", " +
           fmt("%.1f", elapsed) + "s");
    return c;
}

// ------------------------------------------------------------------- 5

Criterion criterion_penalty_exactness() {
    Criterion c;
    long dead_ends_checked = 0;
    double worst = 0.0;

    // hand-built exhaustion: one vehicle, demands that do not share a route
    {
        Instance inst;
        inst.nodes.push_back(Node{0, 0.5, 0.5, 0, 0, 0, 0, 0});
        inst.nodes.push_back(Node{1, 0.1, 0.2, 8, 0, 0, 0, 0});
        inst.nodes.push_back(Node{2, 0.9, 0.8, 9, 0, 0, 0, 0});
        inst.nodes.push_back(Node{3, 0.3, 0.9, 7, 0, 0, 0, 0});
        inst.fleet.push_back(VehicleType{0, 10.0, 0.25, 1.5, 1});

        EnvState s = reset(inst);
        step(s, vehicle_action(inst, 0), inst);
        step(s, customer_action(inst, 2), inst);
        step(s, 0, inst);
        const auto out = terminate_infeasible(s, inst);

        double expected = 0.0;  // recomputed per unserved customer
        for (int j = 1; j <= inst.num_customers(); ++j) {
            if (s.visited[j]) continue;
            double max_ac = 0.0, max_fc = 0.0;
            for (const auto& t : inst.fleet) {
                max_ac = std::max(max_ac, t.unit_cost);
                max_fc = std::max(max_fc, t.fixed_cost);
            }
            expected -= max_ac * (inst.dist(0, j) + inst.dist(j, 0)) + max_fc;
        }
        ++dead_ends_checked;
        worst = std::max(worst, std::abs(out.reward - expected));
        if (std::abs(out.reward - expected) > 1e-12)
            c.fail("constructed state off by " + fmt("%.2e", std::abs(out.reward - expected)));
        if (!s.infeasible || !s.done) c.fail("constructed state not marked terminal");
    }

    // randomized exhaustion: single-vehicle fleets dead-end often
    Rng rng(515);
    for (int i = 0; i < 80; ++i) {
        GeneratorConfig cfg = bucket_config(kVariantNames[i % 5], 6, 2, 2,
                                            derive_seed(501, static_cast<std::uint64_t>(i)));
        const Instance inst = generate_instance(cfg);
        for (int r = 0; r < 6; ++r) {
            EnvState s = reset(inst);
            double penalty_reward = 0.0;
            bool dead = false;
            while (!s.done) {
                const ActionId a = random_legal_action(feasible_mask(s, inst), rng);
                if (a < 0) {
                    penalty_reward = terminate_infeasible(s, inst).reward;
                    dead = true;
                    break;
                }
                step(s, a, inst);
            }
            if (!dead) continue;
            double max_ac = 0.0, max_fc = 0.0;
            for (const auto& t : inst.fleet) {
                max_ac = std::max(max_ac, t.unit_cost);
                max_fc = std::max(max_fc, t.fixed_cost);
            }
            double expected = 0.0;
            for (int j = 1; j <= inst.num_customers(); ++j)
                if (!s.visited[j])
                    expected -= max_ac * (inst.dist(0, j) + inst.dist(j, 0)) + max_fc;
            ++dead_ends_checked;
            const double err = std::abs(penalty_reward - expected);
            worst = std::max(worst, err);
            if (err > 1e-12) c.fail("dead end off by " + fmt("%.2e", err));
        }
    }

    if (dead_ends_checked < 20)
        c.fail("only " + std::to_string(dead_ends_checked) + " dead ends exercised");
    c.note(std::to_string(dead_ends_checked) + " dead ends, worst |err| = " +
           fmt("%.2e", worst));
    return c;
}

// ------------------------------------------------------------------- 6

bool mats_equal(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

Criterion criterion_baseline_identity() {
    Criterion c;

    // advantages sum to zero per instance
    Rng rng(606);
    double worst_sum = 0.0;
    for (int g = 0; g < 200; ++g) {
        const int s_count = 2 + static_cast<int>(rng.uniform_int(0, 14));
        std::vector<double> rewards(s_count);
        double scale = 0.0;
        for (double& r : rewards) {
            r = rng.uniform(-50.0, 50.0);
            scale = std::max(scale, std::abs(r));
        }
        const auto [mean, adv] = shared_baseline(rewards);
        (void)mean;
        double sum = 0.0;
        for (double a : adv) sum += a;
        worst_sum = std::max(worst_sum, std::abs(sum));
        if (std::abs(sum) > 1e-12 * static_cast<double>(s_count) * std::max(1.0, scale))
            c.fail("advantage sum " + fmt("%.2e", std::abs(sum)));
    }

    // with entropy off and detaching off, the batch gradient is plain
    // REINFORCE with a mean baseline
    ModelConfig mc;
    mc.hidden_dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.vehicle_types = 2;
    const ModelParams params = init_params(mc, 61);

    std::vector<Instance> instances;
    for (int b = 0; b < 3; ++b)
        instances.push_back(generate_instance(bucket_config("c", 4, 4, 2, derive_seed(601, b))));

    TrainConfig tc;
    tc.samples = 4;
    tc.p_detach = 0.0;
    const std::uint64_t rollout_seed = 611, detach_seed = 613;
    const BatchGradients bg = batch_gradients(params, instances, tc, 0.0, rollout_seed,
                                              detach_seed);

    // independent mirror: fresh tapes, explicit mean baseline
    std::vector<Mat> expected;
    params.for_each_tensor([&](const std::string&, const Mat& m) {
        expected.push_back(Mat::Zero(m.rows(), m.cols()));
    });
    const double inv_group = 1.0 / static_cast<double>(instances.size() * tc.samples);
    for (std::size_t b = 0; b < instances.size(); ++b) {
        std::vector<std::vector<ActionId>> acts(tc.samples);
        std::vector<double> rewards(tc.samples);
        for (int s = 0; s < tc.samples; ++s) {
            ad::Tape tape(false);
            Rng r(derive_seed(rollout_seed, b, static_cast<std::uint64_t>(s)));
            PolicyRollout roll =
                policy_rollout(tape, params, instances[b], DecodeMode::sample, &r);
            acts[s] = roll.traj.actions;
            rewards[s] = roll.traj.total_reward;
        }
        double mean = 0.0;
        for (double r : rewards) mean += r;
        mean /= static_cast<double>(tc.samples);
        for (int s = 0; s < tc.samples; ++s) {
            ad::Tape tape(true);
            PolicyRollout roll = policy_replay(tape, params, instances[b], acts[s]);
            ad::Value lp_sum;
            for (std::size_t i = 0; i < roll.step_log_probs.size(); ++i)
                lp_sum = i == 0 ? roll.step_log_probs[i]
                                : tape.add(lp_sum, roll.step_log_probs[i]);
            ad::Value loss = tape.scale(lp_sum, -(rewards[s] - mean) * inv_group);
            tape.backward(loss);
            std::size_t k = 0;
            params.for_each_tensor([&](const std::string&, const Mat& m) {
                expected[k] += tape.grad(&m);
                ++k;
            });
        }
    }

    double worst_diff = 0.0;
    for (std::size_t k = 0; k < expected.size(); ++k) {
        const double d = (bg.grads[k] - expected[k]).cwiseAbs().maxCoeff();
        worst_diff = std::max(worst_diff, d);
    }
    if (worst_diff > 1e-12)
        c.fail("gradient differs from plain REINFORCE by " + fmt("%.2e", worst_diff));
    c.note("worst advantage sum " + fmt("%.2e", worst_sum) + ", worst gradient diff " +
           fmt("%.2e", worst_diff));
    return c;
}

// ------------------------------------------------------------------- 7

Criterion criterion_detach_isolation() {
    Criterion c;

    ModelConfig mc;
    mc.hidden_dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.vehicle_types = 2;
    const ModelParams params = init_params(mc, 71);

    std::vector<Instance> instances;
    for (int b = 0; b < 2; ++b)
        instances.push_back(generate_instance(bucket_config("c", 4, 4, 2, derive_seed(701, b))));

    TrainConfig tc;
    tc.samples = 2;
    tc.p_detach = 1.0;       // every token over the quantile threshold is detached
    tc.cov_clamp_lo = -5.0;  // default floor ties all scores at toy scale; widen for a mix
    const double sigma = 0.25;
    const std::uint64_t rollout_seed = 711, detach_seed = 713;

    // reproduce the trainer's sampling and mask selection with fresh tapes
    struct Rec {
        std::vector<ActionId> actions;
        double advantage = 0.0;
        std::vector<double> log_probs;
    };
    std::vector<std::vector<Rec>> recs(instances.size());
    std::vector<double> xs, ys;
    long tokens = 0;
    for (std::size_t b = 0; b < instances.size(); ++b) {
        recs[b].resize(tc.samples);
        std::vector<double> rewards(tc.samples);
        for (int s = 0; s < tc.samples; ++s) {
            ad::Tape tape(false);
            Rng r(derive_seed(rollout_seed, b, static_cast<std::uint64_t>(s)));
            PolicyRollout roll =
                policy_rollout(tape, params, instances[b], DecodeMode::sample, &r);
            recs[b][s].actions = roll.traj.actions;
            rewards[s] = roll.traj.total_reward;
            for (const ad::Value& lp : roll.step_log_probs)
                recs[b][s].log_probs.push_back(lp.val()(0, 0));
            tokens += static_cast<long>(roll.step_log_probs.size());
        }
        const auto adv = shared_baseline(rewards).second;
        for (int s = 0; s < tc.samples; ++s) recs[b][s].advantage = adv[s];
    }
    for (const auto& group : recs)
        for (const Rec& rec : group)
            for (double lp : rec.log_probs) {
                xs.push_back(lp);
                ys.push_back(std::exp(lp) * rec.advantage);
            }
    Rng detach_rng(detach_seed);
    const CovMaskResult cov = covariance_mask(xs, ys, tc, detach_rng);
    long selected = 0;
    for (char m : cov.mask) selected += m;
    if (selected == 0 || selected == tokens) {
        c.fail("covariance mask selected " + std::to_string(selected) + " of " +
               std::to_string(tokens) + " tokens; need a mix for the fixture");
        return c;
    }

    const double inv_group = 1.0 / static_cast<double>(instances.size() * tc.samples);
    const double inv_tokens = 1.0 / static_cast<double>(tokens);

    // A: the trainer's own gradients (detached via stop-gradient)
    const BatchGradients bg =
        batch_gradients(params, instances, tc, sigma, rollout_seed, detach_seed);

    // B: path perturbation - the selected tokens' log-prob terms are removed
    // from the loss graph entirely
    std::vector<Mat> pruned;
    params.for_each_tensor([&](const std::string&, const Mat& m) {
        pruned.push_back(Mat::Zero(m.rows(), m.cols()));
    });
    std::size_t token_base = 0;
    for (std::size_t b = 0; b < instances.size(); ++b) {
        for (int s = 0; s < tc.samples; ++s) {
            const Rec& rec = recs[b][s];
            ad::Tape tape(true);
            PolicyRollout roll = policy_replay(tape, params, instances[b], rec.actions);
            ad::Value lp_sum, h_sum;
            bool have_lp = false;
            for (std::size_t i = 0; i < roll.step_log_probs.size(); ++i) {
                if (!cov.mask[token_base + i]) {
                    lp_sum = have_lp ? tape.add(lp_sum, roll.step_log_probs[i])
                                     : roll.step_log_probs[i];
                    have_lp = true;
                }
                h_sum = i == 0 ? roll.step_entropies[i]
                               : tape.add(h_sum, roll.step_entropies[i]);
            }
            token_base += roll.step_log_probs.size();
            ad::Value loss = tape.scale(h_sum, -sigma * inv_tokens);
            if (have_lp)
                loss = tape.add(tape.scale(lp_sum, -rec.advantage * inv_group), loss);
            tape.backward(loss);
            std::size_t k = 0;
            params.for_each_tensor([&](const std::string&, const Mat& m) {
                pruned[k] += tape.grad(&m);
                ++k;
            });
        }
    }

    bool all_equal = true;
    for (std::size_t k = 0; k < pruned.size(); ++k)
        if (!mats_equal(bg.grads[k], pruned[k])) all_equal = false;
    if (!all_equal) c.fail("detached tokens leak gradient");
    c.note(std::to_string(selected) + " of " + std::to_string(tokens) +
           " tokens detached, gradients identical with those paths removed");
    return c;
}

// ------------------------------------------------------------------- 8

Criterion criterion_learning_signal() {
    const auto t0 = std::chrono::steady_clock::now();
    Criterion c;

    GeneratorConfig gen = bucket_config("c", 10, 3, 2, 0);
    ModelConfig mc;
    mc.hidden_dim = 32;
    mc.layers = 3;
    mc.heads = 4;
    mc.vehicle_types = 2;

    TrainConfig tc;
    tc.epochs = 50;
    tc.batches_per_epoch = 10;
    tc.batch_size = 32;
    tc.samples = 8;
    tc.warmup_steps = 20;
    tc.patience = 50;
    tc.val_size = 32;
    tc.seed = 8008;

    const TrainResult result = train(gen, mc, tc);
    if (result.diverged) {
        c.fail("training diverged: " + result.abort_reason);
        return c;
    }
    const ModelParams& trained = result.best.params;
    const ModelParams untrained = init_params(mc, derive_seed(tc.seed, 5));  // trainer's init

    // (a) greedy decode on held-out instances of the training distribution
    std::vector<Instance> held_out;
    for (int i = 0; i < 64; ++i) {
        GeneratorConfig g = gen;
        g.seed = derive_seed(801, static_cast<std::uint64_t>(i));
        held_out.push_back(generate_instance(g));
    }
    double untrained_mean = 0.0, trained_mean = 0.0;
    for (const Instance& inst : held_out) {
        ad::Tape t1(false), t2(false);
        untrained_mean += policy_rollout(t1, untrained, inst, DecodeMode::greedy).cost();
        trained_mean += policy_rollout(t2, trained, inst, DecodeMode::greedy).cost();
    }
    untrained_mean /= static_cast<double>(held_out.size());
    trained_mean /= static_cast<double>(held_out.size());
    const double ratio = trained_mean / untrained_mean;
    if (!(ratio <= 0.8))
        c.fail("greedy cost ratio " + fmt("%.3f", ratio) + " (> 0.8)");

    // (b) best-of-256 sampling vs the exhaustive oracle on tiny instances
    double gap_sum = 0.0;
    int gap_count = 0;
    for (int i = 0; i < 100; ++i) {
        GeneratorConfig g = bucket_config("c", 4 + i % 3, 3, 2,
                                          derive_seed(802, static_cast<std::uint64_t>(i)));
        const Instance inst = generate_instance(g);
        const double opt = exhaustive_solve(inst).best_cost;
        const SampledSolution s =
            sample_best(inst, trained, 256, derive_seed(803, static_cast<std::uint64_t>(i)));
        gap_sum += (s.cost - opt) / opt;
        ++gap_count;
    }
    const double mean_gap = 100.0 * gap_sum / static_cast<double>(gap_count);
    if (!(mean_gap <= 10.0)) c.fail("best-of-256 mean gap " + fmt("%.2f", mean_gap) + "% (> 10%)");

    const double elapsed = seconds_since(t0);
    if (elapsed > 3600.0) c.fail("took " + fmt("%.0f", elapsed) + "s (> 3600s)");
    c.note("greedy ratio " + fmt("%.3f", ratio) + " (untrained " + fmt("%.3f", untrained_mean) +
           " -> trained " + fmt("%.3f", trained_mean) + "), best-of-256 mean gap " +
           fmt("%.2f", mean_gap) + "% over " + std::to_string(gap_count) + " tiny instances, " +
           fmt("%.0f", elapsed) + "s");
    return c;
}

// ------------------------------------------------------------------- 9

Criterion criterion_variant_toggles() {
    Criterion c;

    // open-route toggle: cost difference equals the priced return legs
    double worst_open = 0.0;
    long traj_count = 0;
    Rng rng(909);
    for (int i = 0; i < 100; ++i) {
        const std::string variant = (i % 3 == 0) ? "c" : (i % 3 == 1) ? "l" : "tw";
        GeneratorConfig cfg = bucket_config(variant, 6, 4, 2,
                                            derive_seed(901, static_cast<std::uint64_t>(i)));
        const Instance closed = generate_instance(cfg);
        Instance open = closed;
        open.variant.open_routes = true;

        std::vector<Trajectory> trajs;
        try {
            Trajectory traj;
            const Solution g = greedy_construct(closed);
            for (const Route& r : g.routes) {
                traj.actions.push_back(vehicle_action(closed, r.vehicle_type));
                for (int j : r.customers) traj.actions.push_back(customer_action(closed, j));
                traj.actions.push_back(0);
            }
            traj.complete = true;
            trajs.push_back(traj);
        } catch (const std::runtime_error&) {
            // greedy can strand customers on tight instances; random rollouts remain
        }
        for (int r = 0; r < 3; ++r) {
            Trajectory traj = random_rollout(closed, rng);
            if (!traj.infeasible) trajs.push_back(traj);
        }

        for (const Trajectory& traj : trajs) {
            const Solution sc = decode_solution(traj, closed);
            const Solution so = decode_solution(traj, open);
            double return_legs = 0.0;
            for (const Route& r : sc.routes)
                return_legs += closed.fleet[r.vehicle_type].unit_cost *
                               closed.dist(r.customers.back(), 0);
            const double err = std::abs((sc.objective - so.objective) - return_legs);
            worst_open = std::max(worst_open, err);
            if (err > 1e-12) c.fail("return-leg identity off by " + fmt("%.2e", err));
            ++traj_count;
        }
    }

    // tw / l / b can only remove actions relative to the unconstrained mask.
    // The baseline is all constraint flags off: pairwise comparisons between
    // partially constrained variants are not subset-ordered, because relaxing
    // one constraint can make a delivery selectable again and thereby close
    // the pickup window the dispatch rule had opened.
    long states_checked = 0, subset_breaks = 0;
    const std::vector<std::string> constrained = {"tw", "l", "b", "bltw"};
    for (int i = 0; i < 120 && states_checked < 1500; ++i) {
        GeneratorConfig cfg = bucket_config(constrained[i % constrained.size()], 8, 4, 2,
                                            derive_seed(902, static_cast<std::uint64_t>(i)));
        const Instance on = generate_instance(cfg);
        Instance bare = on;
        bare.variant.time_windows = false;
        bare.variant.distance_limit = false;
        bare.variant.backhauls = false;

        EnvState s_on = reset(on);
        EnvState s_bare = reset(bare);
        while (!s_on.done) {
            const auto mask_on = feasible_mask(s_on, on);
            const auto mask_bare = feasible_mask(s_bare, bare);
            for (std::size_t a = 0; a < mask_on.size(); ++a)
                if (mask_on[a] && !mask_bare[a]) ++subset_breaks;
            ++states_checked;
            const ActionId a = random_legal_action(mask_on, rng);
            if (a < 0) break;
            step(s_on, a, on);
            step(s_bare, a, bare);
        }
    }
    if (subset_breaks > 0)
        c.fail(std::to_string(subset_breaks) + " mask entries legal under a constraint "
               "but not without it");
    if (states_checked < 1000)
        c.fail("only " + std::to_string(states_checked) + " states compared");

    c.note(std::to_string(traj_count) + " trajectories, worst return-leg err " +
           fmt("%.2e", worst_open) + "; " + std::to_string(states_checked) +
           " states, subsets hold");
    return c;
}

// ------------------------------------------------------------------ 10

Criterion criterion_determinism() {
    Criterion c;

    // generation
    for (int i = 0; i < 30; ++i) {
        GeneratorConfig cfg = bucket_config(kVariantNames[i % 5], 8, 5, 2,
                                            derive_seed(1001, static_cast<std::uint64_t>(i)));
        const std::string a = serialize(generate_instance(cfg));
        const std::string b = serialize(generate_instance(cfg));
        if (a != b) {
            c.fail("instance bytes differ for the same seed");
            break;
        }
    }

    // greedy rollout
    ModelConfig mc;
    mc.hidden_dim = 16;
    mc.layers = 2;
    mc.heads = 2;
    mc.vehicle_types = 2;
    const ModelParams params = init_params(mc, 1002);
    for (int i = 0; i < 10; ++i) {
        const Instance inst = generate_instance(
            bucket_config("c", 6, 4, 2, derive_seed(1003, static_cast<std::uint64_t>(i))));
        ad::Tape t1(false), t2(false);
        const PolicyRollout r1 = policy_rollout(t1, params, inst, DecodeMode::greedy);
        const PolicyRollout r2 = policy_rollout(t2, params, inst, DecodeMode::greedy);
        if (r1.traj.actions != r2.traj.actions ||
            r1.traj.total_reward != r2.traj.total_reward) {
            c.fail("greedy rollout differs between runs");
            break;
        }
        if (!r1.traj.infeasible &&
            to_json(decode_solution(r1.traj, inst)).dump() !=
                to_json(decode_solution(r2.traj, inst)).dump()) {
            c.fail("decoded solution bytes differ");
            break;
        }
    }

    // single-worker training
    GeneratorConfig gen = bucket_config("c", 4, 4, 2, 7);
    ModelConfig tmc;
    tmc.hidden_dim = 8;
    tmc.layers = 1;
    tmc.heads = 2;
    tmc.vehicle_types = 2;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batches_per_epoch = 2;
    tc.batch_size = 2;
    tc.samples = 2;
    tc.val_size = 3;
    tc.warmup_steps = 2;
    tc.patience = 10;
    tc.seed = 99;
    const TrainResult a = train(gen, tmc, tc);
    const TrainResult b = train(gen, tmc, tc);
    if (serialize(a.final) != serialize(b.final)) c.fail("final checkpoint bytes differ");
    if (serialize(a.best) != serialize(b.best)) c.fail("best checkpoint bytes differ");
    Json ma = Json::array(), mb = Json::array();
    for (const auto& m : a.metrics) ma.push_back(to_json(m));
    for (const auto& m : b.metrics) mb.push_back(to_json(m));
    if (ma.dump() != mb.dump()) c.fail("training metrics differ");

    c.note("generation, greedy rollout and training byte-identical across reruns");
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    const auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

    struct Entry {
        int id;
        const char* name;
        std::function<Criterion()> run;
    };

    RolloutAudit audit;
    bool audit_done = false;
    const auto ensure_audit = [&]() {
        if (!audit_done) {
            audit = audit_random_rollouts();
            audit_done = true;
        }
    };

    const std::vector<Entry> entries = {
        {1, "reward-cost equivalence over random legal rollouts",
         [&] { ensure_audit(); return criterion_reward_cost(audit); }},
        {2, "mask soundness against the independent checker",
         [&] { ensure_audit(); return criterion_mask_soundness(audit); }},
        {3, "mask completeness and oracle optimality on tiny instances",
         [] { return criterion_mask_completeness(); }},
        {4, "analytic gradients match central finite differences",
         [] { return criterion_gradcheck(); }},
        {5, "fleet-exhaustion penalty matches its formula",
         [] { return criterion_penalty_exactness(); }},
        {6, "zero-sum advantages and plain-REINFORCE equivalence",
         [] { return criterion_baseline_identity(); }},
        {7, "covariance-masked tokens contribute zero gradient",
         [] { return criterion_detach_isolation(); }},
        {8, "desk-scale training improves cost and closes the sampling gap",
         [] { return criterion_learning_signal(); }},
        {9, "variant toggles: return-leg pricing and mask subsets",
         [] { return criterion_variant_toggles(); }},
        {10, "seeded generation, decoding and training are reproducible",
         [] { return criterion_determinism(); }},
    };

    int failures = 0;
    for (const auto& e : entries) {
        if (!wanted(e.id)) continue;
        Criterion r;
        try {
            r = e.run();
        } catch (const std::exception& ex) {
            r.pass = false;
            r.detail = std::string("exception: ") + ex.what();
        }
        if (!r.pass) ++failures;
        std::printf("[%s] %2d. %s%s%s\n", r.pass ? "PASS" : "FAIL", e.id, e.name,
                    r.detail.empty() ? "" : " -- ", r.detail.c_str());
        std::fflush(stdout);
    }
    return failures;
}
