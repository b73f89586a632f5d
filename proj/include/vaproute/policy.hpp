#pragma once

// Running the policy network against the environment: greedy and sampled
// rollouts, teacher-forced replay for training, and best-of-n sampling.

#include <cstdint>
#include <functional>
#include <vector>

#include "vaproute/autodiff.hpp"
#include "vaproute/baselines.hpp"
#include "vaproute/env.hpp"
#include "vaproute/instance.hpp"
#include "vaproute/model.hpp"
#include "vaproute/rng.hpp"
#include "vaproute/solution.hpp"

namespace vaproute {

enum class DecodeMode { greedy, sample };

struct PolicyRollout {
    Trajectory traj;
    EnvState final_state;
    // One entry per decision step (the penalty transition records none).
    std::vector<ad::Value> step_log_probs;
    std::vector<ad::Value> step_entropies;

    double cost() const { return -traj.total_reward; }
};

namespace detail {

// Shared episode loop over a precomputed encoding. chooser maps the current
// distribution to an action; dead ends go through the penalty transition and
// record the sentinel -1.
template <class Chooser>
PolicyRollout run_episode(ad::Tape& t, const ModelParams& params, const Instance& inst,
                          const EmbeddingSet& emb, const DecoderCache& cache,
                          Chooser&& chooser) {
    PolicyRollout out;
    EnvState s = reset(inst);
    while (!s.done) {
        const auto mask = feasible_mask(s, inst);
        bool any = false;
        for (char m : mask) any = any || m;
        if (!any) {
            const auto res = terminate_infeasible(s, inst);
            out.traj.record(-1, res.reward);
            out.traj.infeasible = true;
            break;
        }
        ad::Value logits = decode_logits(t, params, cache, emb, s, inst);
        const ActionDistribution dist = action_distribution(logits.val(), mask);
        const int a = chooser(dist, mask);
        out.step_log_probs.push_back(t.masked_logprob(logits, mask, a));
        out.step_entropies.push_back(t.masked_entropy(logits, mask));
        const auto res = step(s, a, inst);
        out.traj.record(a, res.reward);
    }
    out.traj.complete = true;
    out.final_state = std::move(s);
    return out;
}

// Highest probability, lowest action index on ties.
inline int greedy_action(const ActionDistribution& dist) {
    int best = -1;
    double best_p = -1.0;
    for (std::size_t j = 0; j < dist.probs.size(); ++j)
        if (dist.probs[j] > best_p) {
            best_p = dist.probs[j];
            best = static_cast<int>(j);
        }
    return best;
}

}  // namespace detail

// rng is consulted only in sample mode and may be null for greedy.
inline PolicyRollout policy_rollout(ad::Tape& t, const ModelParams& params,
                                    const Instance& inst, DecodeMode mode,
                                    Rng* rng = nullptr) {
    if (mode == DecodeMode::sample && rng == nullptr)
        throw std::invalid_argument("policy_rollout: sampling needs an rng");
    EmbeddingSet emb = encode(t, params, embed_instance(t, params, inst));
    DecoderCache cache = decoder_precompute(t, params, emb);
    return detail::run_episode(t, params, inst, emb, cache,
                               [&](const ActionDistribution& dist, const std::vector<char>&) {
                                   if (mode == DecodeMode::greedy)
                                       return detail::greedy_action(dist);
                                   return rng->categorical(dist.probs);
                               });
}

// Teacher-forced replay of a recorded action sequence on a fresh tape; used
// to rebuild the computation graph for the learning step. The environment
// re-validates every action.
inline PolicyRollout policy_replay(ad::Tape& t, const ModelParams& params,
                                   const Instance& inst,
                                   const std::vector<ActionId>& actions) {
    EmbeddingSet emb = encode(t, params, embed_instance(t, params, inst));
    DecoderCache cache = decoder_precompute(t, params, emb);
    std::size_t next = 0;
    PolicyRollout out = detail::run_episode(
        t, params, inst, emb, cache,
        [&](const ActionDistribution&, const std::vector<char>&) {
            if (next >= actions.size())
                throw std::logic_error("replay: ran out of recorded actions");
            const ActionId a = actions[next++];
            if (a < 0) throw std::logic_error("replay: penalty sentinel in action list");
            return a;
        });
    // A trailing -1 in `actions` is legal: the replayed episode hits the same
    // dead end and the loop above never asks for it.
    if (next != actions.size() && !(next + 1 == actions.size() && actions.back() == -1))
        throw std::logic_error("replay: recorded actions left over");
    return out;
}

struct SampledSolution {
    Solution solution;
    double cost = 0.0;         // objective of the returned solution
    int feasible_samples = 0;  // how many of the n rollouts decoded feasible
    bool fallback = false;     // no feasible sample; greedy construction used
};

// Best of n sampled rollouts. Sample i always uses the seed derived from
// (seed, i), so nested sample sets share their prefix and the best cost is
// non-increasing in n. When every sample dead-ends the deterministic greedy
// construction stands in.
inline SampledSolution sample_best(const Instance& inst, const ModelParams& params, int n,
                                   std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_best: n must be >= 1");
    ad::Tape tape(false);
    EmbeddingSet emb = encode(tape, params, embed_instance(tape, params, inst));
    DecoderCache cache = decoder_precompute(tape, params, emb);
    const std::size_t mark = tape.mark();

    SampledSolution out;
    Trajectory best;
    double best_reward = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        PolicyRollout r = detail::run_episode(
            tape, params, inst, emb, cache,
            [&](const ActionDistribution& dist, const std::vector<char>&) {
                return rng.categorical(dist.probs);
            });
        tape.truncate(mark);
        if (r.traj.infeasible) continue;
        ++out.feasible_samples;
        if (r.traj.total_reward > best_reward) {
            best_reward = r.traj.total_reward;
            best = std::move(r.traj);
        }
    }
    if (out.feasible_samples == 0) {
        out.fallback = true;
        out.solution = greedy_construct(inst);
    } else {
        out.solution = decode_solution(best, inst);
    }
    out.cost = out.solution.objective;
    return out;
}

}  // namespace vaproute
