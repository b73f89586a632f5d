#pragma once

// REINFORCE with a sample-shared mean baseline, entropy regularization with
// a decaying coefficient, and covariance-guided selective gradient blocking.
// Optimizer: adaptive moments with decoupled weight decay, linear warmup and
// cosine annealing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaproute/checkpoint.hpp"
#include "vaproute/generator.hpp"
#include "vaproute/model.hpp"
#include "vaproute/policy.hpp"

namespace vaproute {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int epochs = 1000;
    int batches_per_epoch = 40;
    int batch_size = 250;  // instances per batch
    int samples = 8;       // S rollouts per instance, shared-baseline group

    double lr_start = 3e-4;
    double lr_end = 2e-4;
    int warmup_steps = 20;
    double weight_decay = 0.01;

    double sigma0 = 0.03;        // entropy coefficient; decays after 40% of epochs
    double cov_clamp_lo = 0.1;   // covariance score clamp
    double cov_clamp_hi = 5.0;
    double p_detach = 0.15;      // detach probability for above-threshold tokens
    double eta_quantile = 0.8;   // threshold = this quantile of clamped scores
    double eta_absolute = std::numeric_limits<double>::quiet_NaN();  // overrides quantile

    int patience = 50;   // epochs without validation improvement before stopping
    int val_size = 32;   // fixed seeded validation instances
    std::uint64_t seed = 0;

    long total_steps() const {
        return static_cast<long>(epochs) * batches_per_epoch;
    }

    void validate() const {
        if (epochs < 1 || batches_per_epoch < 1 || batch_size < 1)
            throw std::invalid_argument("train config: epoch/batch sizes must be positive");
        if (samples < 2)
            throw std::invalid_argument("train config: samples must be >= 2");
        if (lr_end > lr_start)
            throw std::invalid_argument("train config: lr_end must not exceed lr_start");
        if (warmup_steps < 0 || weight_decay < 0.0 || sigma0 < 0.0)
            throw std::invalid_argument("train config: negative hyperparameter");
        if (cov_clamp_lo > cov_clamp_hi)
            throw std::invalid_argument("train config: bad covariance clamp range");
        if (p_detach < 0.0 || p_detach > 1.0)
            throw std::invalid_argument("train config: p_detach outside [0,1]");
        if (eta_quantile < 0.0 || eta_quantile > 1.0)
            throw std::invalid_argument("train config: eta_quantile outside [0,1]");
        if (patience < 1 || val_size < 1)
            throw std::invalid_argument("train config: patience/val_size must be positive");
    }
};

// Mean-of-samples baseline; advantages sum to zero by construction.
inline std::pair<double, std::vector<double>> shared_baseline(
    const std::vector<double>& rewards) {
    if (rewards.empty()) throw std::invalid_argument("baseline: no rewards");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    std::vector<double> adv(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
    return {mean, adv};
}

// step counts completed optimizer updates: the first update uses step 1.
// Linear warmup 0 -> lr_start over warmup_steps, then cosine to lr_end at
// total_steps; constant lr_end beyond.
inline double lr_schedule(long step, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
    if (step < cfg.warmup_steps)
        return cfg.lr_start * static_cast<double>(step) / cfg.warmup_steps;
    const long total = cfg.total_steps();
    if (step >= total || total <= cfg.warmup_steps) return cfg.lr_end;
    const double u = static_cast<double>(step - cfg.warmup_steps) /
                     static_cast<double>(total - cfg.warmup_steps);
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * 0.5 * (1.0 + std::cos(M_PI * u));
}

// Entropy coefficient: constant through the epoch at the 40% mark, then
// linear to zero at the final epoch.
inline double sigma_at(long epoch, const TrainConfig& cfg) {
    const long hold = static_cast<long>(std::floor(0.4 * cfg.epochs));
    if (epoch <= hold || cfg.epochs - 1 <= hold) return cfg.sigma0;
    const double u = static_cast<double>(epoch - hold) /
                     static_cast<double>(cfg.epochs - 1 - hold);
    return cfg.sigma0 * (1.0 - std::min(1.0, u));
}

struct CovMaskResult {
    std::vector<char> mask;       // true = detach this token's log-prob
    std::vector<double> scores;   // clamped centered products
    double eta = 0.0;
};

// Per-token covariance score over the batch population: the centered product
// of x = log pi(a) and y = pi(a) * A, clamped before thresholding. A token is
// detached when its score reaches eta and an independent uniform draw falls
// below p_detach. One draw is consumed per token regardless of the threshold
// so the rng stream does not depend on the scores.
inline CovMaskResult covariance_mask(const std::vector<double>& x,
                                     const std::vector<double>& y, const TrainConfig& cfg,
                                     Rng& rng) {
    if (x.size() != y.size()) throw std::invalid_argument("covariance_mask: size mismatch");
    CovMaskResult out;
    const std::size_t m = x.size();
    out.mask.assign(m, 0);
    out.scores.assign(m, 0.0);
    if (m == 0) return out;

    double xm = 0.0, ym = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        xm += x[i];
        ym += y[i];
    }
    xm /= static_cast<double>(m);
    ym /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
        out.scores[i] =
            std::clamp((x[i] - xm) * (y[i] - ym), cfg.cov_clamp_lo, cfg.cov_clamp_hi);

    if (std::isnan(cfg.eta_absolute)) {
        std::vector<double> sorted = out.scores;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t idx = std::min(
            m - 1, static_cast<std::size_t>(cfg.eta_quantile * static_cast<double>(m)));
        out.eta = sorted[idx];
    } else {
        out.eta = cfg.eta_absolute;
    }

    for (std::size_t i = 0; i < m; ++i) {
        const double alpha = rng.uniform();
        out.mask[i] = out.scores[i] >= out.eta && alpha < cfg.p_detach;
    }
    return out;
}

// Minimization-convention loss contribution of one rollout:
//   -(A / (B*S)) * sum_t logpi~(a_t)  -  (sigma / M) * sum_t H_t
// where logpi~ is stop-gradient for detached tokens and M is the total token
// count of the batch (so the entropy term aggregates to sigma * mean H).
// Summing this over every rollout of the batch yields the batch loss.
inline ad::Value rollout_loss_terms(ad::Tape& t, const PolicyRollout& r, double advantage,
                                    double inv_group, double sigma, double inv_tokens,
                                    const std::vector<char>& detach) {
    if (r.step_log_probs.empty()) throw std::logic_error("loss: rollout has no tokens");
    if (!detach.empty() && detach.size() != r.step_log_probs.size())
        throw std::logic_error("loss: detach mask length mismatch");
    ad::Value lp_sum, h_sum;
    for (std::size_t i = 0; i < r.step_log_probs.size(); ++i) {
        ad::Value lp = r.step_log_probs[i];
        if (!detach.empty() && detach[i]) lp = t.detach(lp);
        lp_sum = i == 0 ? lp : t.add(lp_sum, lp);
        h_sum = i == 0 ? r.step_entropies[i] : t.add(h_sum, r.step_entropies[i]);
    }
    return t.add(t.scale(lp_sum, -advantage * inv_group),
                 t.scale(h_sum, -sigma * inv_tokens));
}

// Adaptive-moment optimizer with decoupled weight decay. With zero gradients
// the update reduces to pure shrinkage p *= (1 - lr * wd).
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    OptimizerState state;

    explicit AdamW(ModelParams& params, double wd) : weight_decay(wd) {
        params.for_each_tensor([&](const std::string&, Mat& m) {
            state.m.push_back(Mat::Zero(m.rows(), m.cols()));
            state.v.push_back(Mat::Zero(m.rows(), m.cols()));
        });
    }

    void step(ModelParams& params, const std::vector<Mat>& grads, double lr) {
        ++state.t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
        std::size_t k = 0;
        params.for_each_tensor([&](const std::string&, Mat& p) {
            const Mat& g = grads[k];
            Mat& m = state.m[k];
            Mat& v = state.v[k];
            m = beta1 * m + (1.0 - beta1) * g;
            v = (beta2 * v.array() + (1.0 - beta2) * g.array().square()).matrix();
            const Mat m_hat = m / bc1;
            const Mat v_hat = v / bc2;
            p -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps) +
                       weight_decay * p.array())
                     .matrix();
            ++k;
        });
    }
};

struct EpochMetrics {
    long epoch = 0;
    double loss = 0.0;
    double val_cost = 0.0;
    double mean_reward = 0.0;
    double mean_entropy = 0.0;
    double detach_fraction = 0.0;
    double infeasible_fraction = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double sigma = 0.0;
};

inline Json to_json(const EpochMetrics& m) {
    return Json{{"epoch", m.epoch},
                {"loss", m.loss},
                {"val_cost", m.val_cost},
                {"mean_reward", m.mean_reward},
                {"mean_entropy", m.mean_entropy},
                {"detach_fraction", m.detach_fraction},
                {"infeasible_fraction", m.infeasible_fraction},
                {"grad_norm", m.grad_norm},
                {"lr", m.lr},
                {"sigma", m.sigma}};
}

struct TrainResult {
    Checkpoint final;
    Checkpoint best;          // lowest validation cost
    double best_val = std::numeric_limits<double>::infinity();
    double initial_val = 0.0;  // validation cost before any update
    std::vector<EpochMetrics> metrics;
    bool early_stopped = false;
    bool diverged = false;
    std::string abort_reason;
};

namespace detail {

// rng stream tags so every consumer derives from the one master seed
inline constexpr std::uint64_t kStreamInstances = 1;
inline constexpr std::uint64_t kStreamRollouts = 2;
inline constexpr std::uint64_t kStreamDetach = 3;
inline constexpr std::uint64_t kStreamValidation = 4;
inline constexpr std::uint64_t kStreamInit = 5;

inline double greedy_validation_cost(const ModelParams& params,
                                     const std::vector<Instance>& val_set) {
    double total = 0.0;
    for (const Instance& inst : val_set) {
        ad::Tape t(false);
        total += policy_rollout(t, params, inst, DecodeMode::greedy).cost();
    }
    return total / static_cast<double>(val_set.size());
}

}  // namespace detail

// One REINFORCE update over a batch of instances. Exposed separately so the
// gradient contracts are testable without running a full epoch; returns the
// accumulated gradients without touching the parameters.
struct BatchGradients {
    std::vector<Mat> grads;  // registry order
    double loss = 0.0;
    double mean_reward = 0.0;
    double mean_entropy = 0.0;
    double detach_fraction = 0.0;
    double infeasible_fraction = 0.0;
    double grad_norm = 0.0;
};

inline BatchGradients batch_gradients(const ModelParams& params,
                                      const std::vector<Instance>& instances,
                                      const TrainConfig& cfg, double sigma,
                                      std::uint64_t rollout_seed,
                                      std::uint64_t detach_seed) {
    const int s_count = cfg.samples;
    const std::size_t groups = instances.size();

    // stage A: sampled rollouts without gradient recording
    struct SampleRecord {
        std::vector<ActionId> actions;
        double reward = 0.0;
        double advantage = 0.0;
        bool infeasible = false;
        std::vector<double> log_probs;  // numeric, per token
    };
    std::vector<std::vector<SampleRecord>> batch(groups);
    double reward_sum = 0.0, entropy_sum = 0.0;
    long token_count = 0, infeasible_count = 0;
    for (std::size_t b = 0; b < groups; ++b) {
        batch[b].resize(s_count);
        ad::Tape tape(false);
        EmbeddingSet emb = encode(tape, params, embed_instance(tape, params, instances[b]));
        DecoderCache cache = decoder_precompute(tape, params, emb);
        const std::size_t mark = tape.mark();
        for (int s = 0; s < s_count; ++s) {
            Rng rng(derive_seed(rollout_seed, b, static_cast<std::uint64_t>(s)));
            PolicyRollout r = detail::run_episode(
                tape, params, instances[b], emb, cache,
                [&](const ActionDistribution& dist, const std::vector<char>&) {
                    return rng.categorical(dist.probs);
                });
            SampleRecord& rec = batch[b][s];
            rec.actions = r.traj.actions;
            rec.reward = r.traj.total_reward;
            rec.infeasible = r.traj.infeasible;
            infeasible_count += rec.infeasible;
            reward_sum += rec.reward;
            for (const ad::Value& lp : r.step_log_probs)
                rec.log_probs.push_back(lp.val()(0, 0));
            for (const ad::Value& h : r.step_entropies) entropy_sum += h.val()(0, 0);
            token_count += static_cast<long>(rec.log_probs.size());
            tape.truncate(mark);
        }
        std::vector<double> rewards(s_count);
        for (int s = 0; s < s_count; ++s) rewards[s] = batch[b][s].reward;
        const auto [baseline, adv] = shared_baseline(rewards);
        (void)baseline;
        for (int s = 0; s < s_count; ++s) batch[b][s].advantage = adv[s];
    }

    // covariance scores over the whole batch token population
    std::vector<double> xs, ys;
    xs.reserve(token_count);
    ys.reserve(token_count);
    for (const auto& group : batch)
        for (const SampleRecord& rec : group)
            for (double lp : rec.log_probs) {
                xs.push_back(lp);
                ys.push_back(std::exp(lp) * rec.advantage);
            }
    Rng detach_rng(detach_seed);
    const CovMaskResult cov = covariance_mask(xs, ys, cfg, detach_rng);
    long detached = 0;
    for (char m : cov.mask) detached += m;

    // stage B: teacher-forced replay per sample, gradient accumulation
    BatchGradients out;
    params.for_each_tensor([&](const std::string&, const Mat& m) {
        out.grads.push_back(Mat::Zero(m.rows(), m.cols()));
    });
    const double inv_group = 1.0 / static_cast<double>(groups * s_count);
    const double inv_tokens = 1.0 / static_cast<double>(token_count);
    std::size_t token_base = 0;
    for (std::size_t b = 0; b < groups; ++b) {
        for (int s = 0; s < s_count; ++s) {
            const SampleRecord& rec = batch[b][s];
            std::vector<char> detach(rec.log_probs.size(), 0);
            for (std::size_t i = 0; i < detach.size(); ++i)
                detach[i] = cov.mask[token_base + i];
            token_base += detach.size();

            ad::Tape tape(true);
            PolicyRollout r = policy_replay(tape, params, instances[b], rec.actions);
            ad::Value loss = rollout_loss_terms(tape, r, rec.advantage, inv_group, sigma,
                                                inv_tokens, detach);
            out.loss += loss.val()(0, 0);
            tape.backward(loss);
            std::size_t k = 0;
            params.for_each_tensor([&](const std::string&, const Mat& m) {
                out.grads[k] += tape.grad(&m);
                ++k;
            });
        }
    }

    double norm_sq = 0.0;
    for (const Mat& g : out.grads) norm_sq += g.squaredNorm();
    out.grad_norm = std::sqrt(norm_sq);
    out.mean_reward = reward_sum * inv_group;
    out.mean_entropy = entropy_sum * inv_tokens;
    out.detach_fraction =
        token_count > 0 ? static_cast<double>(detached) / token_count : 0.0;
    out.infeasible_fraction = static_cast<double>(infeasible_count) * inv_group;
    return out;
}

// Full training run. Deterministic for a fixed config: every rng stream is
// derived from cfg.seed. Resuming from a checkpoint continues the epoch and
// update counters. NaN anywhere aborts with the current state checkpointed
// in the result.
inline TrainResult train(const GeneratorConfig& gen_base, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                         const std::function<void(const EpochMetrics&)>& on_epoch = nullptr) {
    cfg.validate();
    model_cfg.validate();
    if (gen_base.vehicle_types != model_cfg.vehicle_types)
        throw std::invalid_argument("train: generator and model disagree on vehicle types");

    TrainResult result;
    ModelParams params;
    long start_epoch = 0;
    long update_count = 0;
    if (resume) {
        if (!(resume->params.config == model_cfg))
            throw std::invalid_argument("train: resume checkpoint has a different model config");
        params = resume->params;
        start_epoch = resume->epoch;
        update_count = resume->step;
    } else {
        params = init_params(model_cfg, derive_seed(cfg.seed, detail::kStreamInit));
    }
    AdamW opt(params, cfg.weight_decay);
    if (resume && resume->has_optimizer) opt.state = resume->opt;
    opt.state.t = update_count;

    std::vector<Instance> val_set;
    for (int i = 0; i < cfg.val_size; ++i) {
        GeneratorConfig g = gen_base;
        g.seed = derive_seed(cfg.seed, detail::kStreamValidation, static_cast<std::uint64_t>(i));
        val_set.push_back(generate_instance(g));
    }

    auto snapshot = [&](long epoch) {
        Checkpoint cp;
        cp.params = params;
        cp.epoch = epoch;
        cp.step = update_count;
        cp.has_optimizer = true;
        cp.opt = opt.state;
        return cp;
    };

    result.initial_val = detail::greedy_validation_cost(params, val_set);
    result.best_val = result.initial_val;
    result.best = snapshot(start_epoch);
    int stale_epochs = 0;

    for (long epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double sigma = sigma_at(epoch, cfg);
        EpochMetrics em;
        em.epoch = epoch;
        em.sigma = sigma;
        for (int batch = 0; batch < cfg.batches_per_epoch; ++batch) {
            const std::uint64_t batch_tag =
                static_cast<std::uint64_t>(epoch) * cfg.batches_per_epoch + batch;
            std::vector<Instance> instances;
            instances.reserve(cfg.batch_size);
            for (int b = 0; b < cfg.batch_size; ++b) {
                GeneratorConfig g = gen_base;
                g.seed = derive_seed(cfg.seed, detail::kStreamInstances, batch_tag,
                                     static_cast<std::uint64_t>(b));
                instances.push_back(generate_instance(g));
            }
            BatchGradients bg;
            try {
                bg = batch_gradients(
                    params, instances, cfg, sigma,
                    derive_seed(cfg.seed, detail::kStreamRollouts, batch_tag),
                    derive_seed(cfg.seed, detail::kStreamDetach, batch_tag));
            } catch (const NumericFault& e) {
                result.diverged = true;
                result.abort_reason = e.what();
                result.final = snapshot(epoch);
                result.metrics.push_back(em);
                return result;
            }
            if (!std::isfinite(bg.loss) || !std::isfinite(bg.grad_norm)) {
                result.diverged = true;
                result.abort_reason = "non-finite loss or gradient at epoch " +
                                      std::to_string(epoch) + " batch " +
                                      std::to_string(batch);
                result.final = snapshot(epoch);
                result.metrics.push_back(em);
                return result;
            }

            ++update_count;
            opt.step(params, bg.grads, lr_schedule(update_count, cfg));

            em.loss += bg.loss;
            em.mean_reward += bg.mean_reward;
            em.mean_entropy += bg.mean_entropy;
            em.detach_fraction += bg.detach_fraction;
            em.infeasible_fraction += bg.infeasible_fraction;
            em.grad_norm += bg.grad_norm;
        }
        const double nb = static_cast<double>(cfg.batches_per_epoch);
        em.loss /= nb;
        em.mean_reward /= nb;
        em.mean_entropy /= nb;
        em.detach_fraction /= nb;
        em.infeasible_fraction /= nb;
        em.grad_norm /= nb;
        em.lr = lr_schedule(update_count, cfg);
        em.val_cost = detail::greedy_validation_cost(params, val_set);

        if (em.val_cost < result.best_val - 1e-12) {
            result.best_val = em.val_cost;
            result.best = snapshot(epoch + 1);
            stale_epochs = 0;
        } else {
            ++stale_epochs;
        }
        result.metrics.push_back(em);
        if (on_epoch) on_epoch(em);
        if (stale_epochs >= cfg.patience) {
            result.early_stopped = true;
            result.final = snapshot(epoch + 1);
            return result;
        }
    }
    result.final = snapshot(cfg.epochs);
    return result;
}

}  // namespace vaproute
