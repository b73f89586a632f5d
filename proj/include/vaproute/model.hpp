#pragma once

// Policy network: feature embedding, cross-semantic encoder (node/vehicle
// self-attention, vehicle-node cross-attention, dual attention fusing the
// constraint prompt), and the multi-view pointer decoder. All forward math
// runs on the autodiff tape; a non-recording tape gives plain inference.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaproute/autodiff.hpp"
#include "vaproute/env.hpp"
#include "vaproute/instance.hpp"
#include "vaproute/rng.hpp"

namespace vaproute {

using ad::Mat;

struct NumericFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int hidden_dim = 128;    // d_h
    int layers = 6;          // U encoder layers
    int heads = 8;           // attention heads
    int vehicle_types = 3;   // V; fixes the status-feature width
    int ff_mult = 2;         // SwiGLU hidden width multiplier
    double logit_clip = 10.0;  // tanh clip for pointer scores; <= 0 disables

    // Feature widths fixed by the instance schema.
    static constexpr int variant_features = 4;   // [phi_o, phi_b, phi_l, phi_tw]
    static constexpr int depot_features = 2;     // [x, y]
    static constexpr int customer_features = 7;  // [x, y, q_l, q_b, e, l, s]
    static constexpr int vehicle_features = 4;   // [Q, fc, ac, count share]

    int head_dim() const { return hidden_dim / heads; }
    int ff_dim() const { return ff_mult * hidden_dim; }
    int status_features() const { return 3 + vehicle_types; }

    void validate() const {
        if (hidden_dim <= 0 || layers <= 0 || heads <= 0 || vehicle_types <= 0 || ff_mult <= 0)
            throw std::invalid_argument("model config: dimensions must be positive");
        if (hidden_dim % heads != 0)
            throw std::invalid_argument("model config: hidden_dim must be divisible by heads");
    }

    bool operator==(const ModelConfig&) const = default;
};

struct AttentionParams {
    Mat w_q, w_k, w_v, w_o;  // each d_h x d_h
};

struct SwigluParams {
    Mat w1, w2;  // d_h x ff
    Mat w3;      // ff x d_h
};

// One encoder layer. The two dual-attention branches (global sequence and
// prompt-augmented sequence) carry their own weights: sharing QKV across the
// branches would collapse them into a single view up to the combine matrix
// (same reasoning as the node/vehicle self-attention pair).
struct EncoderLayerParams {
    AttentionParams node_attn;
    SwigluParams node_ff;
    Mat node_gain1, node_gain2;  // LayerNorm gains, 1 x d_h

    AttentionParams veh_attn;
    SwigluParams veh_ff;
    Mat veh_gain1, veh_gain2;

    AttentionParams cross_attn;
    SwigluParams cross_ff;
    Mat cross_gain1, cross_gain2;

    AttentionParams dual_g_attn;
    SwigluParams dual_g_ff;
    Mat dual_g_gain1, dual_g_gain2;  // RMSNorm gains

    AttentionParams dual_c_attn;
    SwigluParams dual_c_ff;
    Mat dual_c_gain1, dual_c_gain2;
};

struct ModelParams {
    ModelConfig config;

    // Constraint prompt MLP: P0 = LayerNorm(v_p W_a + b_a) W_b + b_b
    Mat w_a, b_a, w_b, b_b;

    // Input projections.
    Mat w_d, w_c, w_v, w_vd;

    std::vector<EncoderLayerParams> layer;

    // Decoder: per-view K/V projections, query projection, context fusion.
    Mat w_k_g, w_v_g, w_k_n, w_v_n, w_k_veh, w_v_veh, w_k_vd, w_v_vd;
    Mat w_q_dec;  // (d_h + status) x d_h
    Mat w_cmb;    // d_h x d_h

    // Stable traversal over every trainable tensor; the single source of
    // truth for initialization, checkpoints, optimizer state, and tests.
    template <class F>
    void for_each_tensor(F&& f) {
        f("prompt.w_a", w_a);
        f("prompt.b_a", b_a);
        f("prompt.w_b", w_b);
        f("prompt.b_b", b_b);
        f("embed.w_d", w_d);
        f("embed.w_c", w_c);
        f("embed.w_v", w_v);
        f("embed.w_vd", w_vd);
        for (std::size_t l = 0; l < layer.size(); ++l) {
            const std::string p = "enc." + std::to_string(l) + ".";
            auto& L = layer[l];
            auto attn = [&](const std::string& n, AttentionParams& a) {
                f(p + n + ".w_q", a.w_q);
                f(p + n + ".w_k", a.w_k);
                f(p + n + ".w_v", a.w_v);
                f(p + n + ".w_o", a.w_o);
            };
            auto ff = [&](const std::string& n, SwigluParams& s) {
                f(p + n + ".w1", s.w1);
                f(p + n + ".w2", s.w2);
                f(p + n + ".w3", s.w3);
            };
            attn("node", L.node_attn);
            ff("node_ff", L.node_ff);
            f(p + "node.gain1", L.node_gain1);
            f(p + "node.gain2", L.node_gain2);
            attn("veh", L.veh_attn);
            ff("veh_ff", L.veh_ff);
            f(p + "veh.gain1", L.veh_gain1);
            f(p + "veh.gain2", L.veh_gain2);
            attn("cross", L.cross_attn);
            ff("cross_ff", L.cross_ff);
            f(p + "cross.gain1", L.cross_gain1);
            f(p + "cross.gain2", L.cross_gain2);
            attn("dual_g", L.dual_g_attn);
            ff("dual_g_ff", L.dual_g_ff);
            f(p + "dual_g.gain1", L.dual_g_gain1);
            f(p + "dual_g.gain2", L.dual_g_gain2);
            attn("dual_c", L.dual_c_attn);
            ff("dual_c_ff", L.dual_c_ff);
            f(p + "dual_c.gain1", L.dual_c_gain1);
            f(p + "dual_c.gain2", L.dual_c_gain2);
        }
        f("dec.w_k_g", w_k_g);
        f("dec.w_v_g", w_v_g);
        f("dec.w_k_n", w_k_n);
        f("dec.w_v_n", w_v_n);
        f("dec.w_k_veh", w_k_veh);
        f("dec.w_v_veh", w_v_veh);
        f("dec.w_k_vd", w_k_vd);
        f("dec.w_v_vd", w_v_vd);
        f("dec.w_q", w_q_dec);
        f("dec.w_cmb", w_cmb);
    }

    template <class F>
    void for_each_tensor(F&& f) const {
        const_cast<ModelParams*>(this)->for_each_tensor(
            [&](const std::string& n, Mat& m) { f(n, static_cast<const Mat&>(m)); });
    }

    long parameter_count() const {
        long n = 0;
        for_each_tensor([&](const std::string&, const Mat& m) { n += m.size(); });
        return n;
    }
};

// Closed-form tensor-count of the architecture; cross-checked in tests
// against the actual traversal.
inline long expected_parameter_count(const ModelConfig& cfg) {
    const long d = cfg.hidden_dim;
    const long f = cfg.ff_dim();
    const long v = cfg.vehicle_types;
    const long u = cfg.layers;
    const long prompt = ModelConfig::variant_features * d + d + d * d + d;
    const long inputs = ModelConfig::depot_features * d + ModelConfig::customer_features * d +
                        ModelConfig::vehicle_features * d +
                        (ModelConfig::depot_features + ModelConfig::vehicle_features) * d;
    const long per_block = 4 * d * d + 3 * d * f + 2 * d;  // MHA + SwiGLU + gains
    const long per_layer = 5 * per_block;  // node, veh, cross, dual_g, dual_c
    const long decoder = 8 * d * d + (d + 3 + v) * d + d * d;
    return prompt + inputs + u * per_layer + decoder;
}

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    const int d = cfg.hidden_dim;
    const int f = cfg.ff_dim();

    p.w_a.resize(ModelConfig::variant_features, d);
    p.b_a.resize(1, d);
    p.w_b.resize(d, d);
    p.b_b.resize(1, d);
    p.w_d.resize(ModelConfig::depot_features, d);
    p.w_c.resize(ModelConfig::customer_features, d);
    p.w_v.resize(ModelConfig::vehicle_features, d);
    p.w_vd.resize(ModelConfig::depot_features + ModelConfig::vehicle_features, d);

    p.layer.resize(cfg.layers);
    for (auto& L : p.layer) {
        for (AttentionParams* a :
             {&L.node_attn, &L.veh_attn, &L.cross_attn, &L.dual_g_attn, &L.dual_c_attn}) {
            a->w_q.resize(d, d);
            a->w_k.resize(d, d);
            a->w_v.resize(d, d);
            a->w_o.resize(d, d);
        }
        for (SwigluParams* s : {&L.node_ff, &L.veh_ff, &L.cross_ff, &L.dual_g_ff, &L.dual_c_ff}) {
            s->w1.resize(d, f);
            s->w2.resize(d, f);
            s->w3.resize(f, d);
        }
        for (Mat* g : {&L.node_gain1, &L.node_gain2, &L.veh_gain1, &L.veh_gain2, &L.cross_gain1,
                       &L.cross_gain2, &L.dual_g_gain1, &L.dual_g_gain2, &L.dual_c_gain1,
                       &L.dual_c_gain2})
            g->resize(1, d);
    }

    for (Mat* m : {&p.w_k_g, &p.w_v_g, &p.w_k_n, &p.w_v_n, &p.w_k_veh, &p.w_v_veh, &p.w_k_vd,
                   &p.w_v_vd, &p.w_cmb})
        m->resize(d, d);
    p.w_q_dec.resize(d + cfg.status_features(), d);

    // uniform(-1/sqrt(d_h), 1/sqrt(d_h)) for projections, ones for norm gains
    Rng rng(seed);
    const double b = 1.0 / std::sqrt(static_cast<double>(d));
    p.for_each_tensor([&](const std::string& name, Mat& m) {
        if (name.find("gain") != std::string::npos) {
            m.setOnes();
            return;
        }
        for (long i = 0; i < m.rows(); ++i)
            for (long j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-b, b);
    });
    return p;
}

// ---- raw feature rows ----

inline Mat variant_vector(const Instance& inst) {
    Mat v(1, ModelConfig::variant_features);
    v << (inst.variant.open_routes ? 1.0 : 0.0), (inst.variant.backhauls ? 1.0 : 0.0),
        (inst.variant.distance_limit ? 1.0 : 0.0), (inst.variant.time_windows ? 1.0 : 0.0);
    return v;
}

inline Mat depot_feature_row(const Instance& inst) {
    Mat x(1, ModelConfig::depot_features);
    x << inst.depot().x, inst.depot().y;
    return x;
}

inline Mat customer_feature_rows(const Instance& inst) {
    const int n = inst.num_customers();
    const double horizon = inst.variant.time_windows && inst.depot_close > 0.0
                               ? inst.depot_close
                               : 1.0;  // keeps time entries O(1)
    Mat x(n, ModelConfig::customer_features);
    for (int j = 1; j <= n; ++j) {
        const Node& c = inst.nodes[j];
        x.row(j - 1) << c.x, c.y, c.linehaul, c.backhaul, c.tw_open / horizon,
            c.tw_close / horizon, c.service / horizon;
    }
    return x;
}

inline Mat vehicle_feature_rows(const Instance& inst) {
    const int v = inst.num_types();
    const double fleet = std::max(1, inst.fleet_size());
    Mat x(v, ModelConfig::vehicle_features);
    for (int t = 0; t < v; ++t) {
        const VehicleType& vt = inst.fleet[t];
        x.row(t) << vt.capacity, vt.fixed_cost, vt.unit_cost,
            static_cast<double>(vt.count) / fleet;
    }
    return x;
}

// Dynamic decoder context: route-scoped load/distance/time ratios plus
// per-type fleet availability. Zeros when no route is open.
inline Mat status_feature_row(const EnvState& s, const Instance& inst) {
    const int v = inst.num_types();
    Mat x = Mat::Zero(1, 3 + v);
    if (s.route_open && s.active_type >= 0) {
        const VehicleType& vt = inst.fleet[s.active_type];
        x(0, 0) = s.remaining_capacity / vt.capacity;
        const double dist_den = inst.variant.distance_limit && inst.dist_limit > 0.0
                                    ? inst.dist_limit
                                    : 1.0;
        x(0, 1) = s.route_distance / dist_den;
        const double time_den =
            inst.variant.time_windows && inst.depot_close > 0.0 ? inst.depot_close : 1.0;
        x(0, 2) = s.clock / time_den;
    }
    for (int t = 0; t < v; ++t)
        x(0, 3 + t) = static_cast<double>(s.remaining_count[t]) /
                      std::max(1, inst.fleet[t].count);
    return x;
}

// ---- network building blocks on the tape ----

namespace detail {

inline ad::Value mha(ad::Tape& t, const AttentionParams& p, ad::Value q_seq, ad::Value kv_seq,
                     int heads) {
    const long d = p.w_q.cols();
    const long dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    ad::Value q = t.matmul(q_seq, t.leaf(&p.w_q));
    ad::Value k = t.matmul(kv_seq, t.leaf(&p.w_k));
    ad::Value v = t.matmul(kv_seq, t.leaf(&p.w_v));
    std::vector<ad::Value> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        ad::Value qh = t.slice_cols(q, h * dk, dk);
        ad::Value kh = t.slice_cols(k, h * dk, dk);
        ad::Value vh = t.slice_cols(v, h * dk, dk);
        ad::Value attn = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale));
        outs.push_back(t.matmul(attn, vh));
    }
    return t.matmul(t.concat_cols(outs), t.leaf(&p.w_o));
}

inline ad::Value swiglu(ad::Tape& t, const SwigluParams& p, ad::Value x) {
    ad::Value gate = t.silu(t.matmul(x, t.leaf(&p.w1)));
    ad::Value lin = t.matmul(x, t.leaf(&p.w2));
    return t.matmul(t.hadamard(gate, lin), t.leaf(&p.w3));
}

// LayerNorm + gain, as used by the self/cross attention blocks.
inline ad::Value ln(ad::Tape& t, ad::Value x, const Mat& gain) {
    return t.mul_rowvec(t.layer_norm(x), t.leaf(&gain));
}

// RMSNorm + gain, as used by the dual-attention block.
inline ad::Value rms(ad::Tape& t, ad::Value x, const Mat& gain) {
    return t.mul_rowvec(t.rms_norm(x), t.leaf(&gain));
}

}  // namespace detail

struct EmbeddingSet {
    ad::Value h_g;   // (1+V+N) x d_h, rows aligned with action ids
    ad::Value h_n;   // (1+N) x d_h
    ad::Value h_v;   // (1+V) x d_h
    ad::Value h_vd;  // (1+V) x d_h
    ad::Value c;     // (1+V) x d_h prompt-augmented sequence
    ad::Value p0;    // 1 x d_h constraint prompt
};

// P0 = LayerNorm(v_p W_a + b_a) W_b + b_b (plain LayerNorm, no gain).
inline ad::Value embed_prompt(ad::Tape& t, const ModelParams& p, const Mat& v_p) {
    ad::Value h = t.add_rowvec(t.matmul(t.constant(v_p), t.leaf(&p.w_a)), t.leaf(&p.b_a));
    return t.add_rowvec(t.matmul(t.layer_norm(h), t.leaf(&p.w_b)), t.leaf(&p.b_b));
}

inline EmbeddingSet embed_instance(ad::Tape& t, const ModelParams& p, const Instance& inst) {
    if (inst.num_types() != p.config.vehicle_types)
        throw std::invalid_argument("model: instance vehicle types do not match config");

    const Mat xd = depot_feature_row(inst);
    const Mat xc = customer_feature_rows(inst);
    const Mat xv = vehicle_feature_rows(inst);
    Mat xvd(xv.rows(), xd.cols() + xv.cols());  // depot row broadcast onto each type
    for (long i = 0; i < xv.rows(); ++i) xvd.row(i) << xd.row(0), xv.row(i);

    ad::Value e_d = t.matmul(t.constant(xd), t.leaf(&p.w_d));
    ad::Value e_c = t.matmul(t.constant(xc), t.leaf(&p.w_c));
    ad::Value e_v = t.matmul(t.constant(xv), t.leaf(&p.w_v));
    ad::Value e_vd = t.matmul(t.constant(xvd), t.leaf(&p.w_vd));

    EmbeddingSet emb;
    emb.h_n = t.concat_rows({e_d, e_c});
    emb.h_v = t.concat_rows({e_d, e_vd});
    emb.h_vd = emb.h_v;
    emb.h_g = t.concat_rows({e_d, e_vd, e_c});
    emb.p0 = embed_prompt(t, p, variant_vector(inst));
    emb.c = t.concat_rows({emb.p0, e_v});
    return emb;
}

// U encoder layers; all four sequences read the previous layer's values
// (parallel update). Throws NumericFault naming the layer when a sequence
// goes non-finite.
inline EmbeddingSet encode(ad::Tape& t, const ModelParams& p, EmbeddingSet emb) {
    const int heads = p.config.heads;
    for (int l = 0; l < p.config.layers; ++l) {
        const EncoderLayerParams& L = p.layer[l];

        // node / vehicle self-attention
        ad::Value n_hat = detail::ln(
            t, t.add(emb.h_n, detail::mha(t, L.node_attn, emb.h_n, emb.h_n, heads)),
            L.node_gain1);
        ad::Value h_n = detail::ln(t, t.add(n_hat, detail::swiglu(t, L.node_ff, n_hat)),
                                   L.node_gain2);

        ad::Value v_hat = detail::ln(
            t, t.add(emb.h_v, detail::mha(t, L.veh_attn, emb.h_v, emb.h_v, heads)),
            L.veh_gain1);
        ad::Value h_v = detail::ln(t, t.add(v_hat, detail::swiglu(t, L.veh_ff, v_hat)),
                                   L.veh_gain2);

        // vehicle-node cross-attention: Query = H_vd, Key/Value = H_n
        ad::Value x_hat = detail::ln(
            t, t.add(emb.h_vd, detail::mha(t, L.cross_attn, emb.h_vd, emb.h_n, heads)),
            L.cross_gain1);
        ad::Value h_vd = detail::ln(t, t.add(x_hat, detail::swiglu(t, L.cross_ff, x_hat)),
                                    L.cross_gain2);

        // dual attention: both branches attend over Concat[H_g, C]
        ad::Value joint = t.concat_rows({emb.h_g, emb.c});
        ad::Value g_hat = detail::rms(
            t, t.add(emb.h_g, detail::mha(t, L.dual_g_attn, emb.h_g, joint, heads)),
            L.dual_g_gain1);
        ad::Value h_g = detail::rms(t, t.add(g_hat, detail::swiglu(t, L.dual_g_ff, g_hat)),
                                    L.dual_g_gain2);

        ad::Value c_hat = detail::rms(
            t, t.add(emb.c, detail::mha(t, L.dual_c_attn, emb.c, joint, heads)),
            L.dual_c_gain1);
        ad::Value c_new = detail::rms(t, t.add(c_hat, detail::swiglu(t, L.dual_c_ff, c_hat)),
                                      L.dual_c_gain2);

        emb.h_n = h_n;
        emb.h_v = h_v;
        emb.h_vd = h_vd;
        emb.h_g = h_g;
        emb.c = c_new;

        for (const ad::Value* s : {&emb.h_n, &emb.h_v, &emb.h_vd, &emb.h_g, &emb.c})
            if (!s->val().allFinite())
                throw NumericFault("encoder layer " + std::to_string(l) +
                                   ": non-finite values");
    }
    return emb;
}

struct DecoderCache {
    ad::Value k_g, v_g, k_n, v_n, k_veh, v_veh, k_vd, v_vd;
};

inline DecoderCache decoder_precompute(ad::Tape& t, const ModelParams& p,
                                       const EmbeddingSet& emb) {
    DecoderCache c;
    c.k_g = t.matmul(emb.h_g, t.leaf(&p.w_k_g));
    c.v_g = t.matmul(emb.h_g, t.leaf(&p.w_v_g));
    c.k_n = t.matmul(emb.h_n, t.leaf(&p.w_k_n));
    c.v_n = t.matmul(emb.h_n, t.leaf(&p.w_v_n));
    c.k_veh = t.matmul(emb.h_v, t.leaf(&p.w_k_veh));
    c.v_veh = t.matmul(emb.h_v, t.leaf(&p.w_v_veh));
    c.k_vd = t.matmul(emb.h_vd, t.leaf(&p.w_k_vd));
    c.v_vd = t.matmul(emb.h_vd, t.leaf(&p.w_v_vd));
    return c;
}

struct ActionDistribution {
    std::vector<double> probs;      // zero exactly where masked
    std::vector<double> log_probs;  // -inf where masked
    double entropy = 0.0;
};

// H_g row of the current token: the previously selected action's row. Before
// any action (and right after token 0) this is the depot row.
inline long current_token_row(const EnvState& s, const Instance& inst) {
    if (!s.route_open) return 0;
    if (!s.route_has_customer) return 1 + s.active_type;
    return inst.num_types() + s.current_node;
}

// One decoder step: pointer logits over the unified action space (1 x 1+V+N),
// before masking. The caller applies the mask via the fused tape ops or via
// action_distribution below.
inline ad::Value decode_logits(ad::Tape& t, const ModelParams& p, const DecoderCache& cache,
                               const EmbeddingSet& emb, const EnvState& s,
                               const Instance& inst) {
    const long dk = p.config.head_dim();
    const int heads = p.config.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    ad::Value h_cur = t.slice_rows(emb.h_g, current_token_row(s, inst), 1);
    ad::Value q_in = t.concat_cols({h_cur, t.constant(status_feature_row(s, inst))});
    ad::Value q = t.matmul(q_in, t.leaf(&p.w_q_dec));

    const ad::Value* ks[] = {&cache.k_g, &cache.k_n, &cache.k_veh, &cache.k_vd};
    const ad::Value* vs[] = {&cache.v_g, &cache.v_n, &cache.v_veh, &cache.v_vd};
    ad::Value fused;
    for (int view = 0; view < 4; ++view) {
        std::vector<ad::Value> outs;
        outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            ad::Value qh = t.slice_cols(q, h * dk, dk);
            ad::Value kh = t.slice_cols(*ks[view], h * dk, dk);
            ad::Value vh = t.slice_cols(*vs[view], h * dk, dk);
            ad::Value attn = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale));
            outs.push_back(t.matmul(attn, vh));
        }
        ad::Value ctx = t.concat_cols(outs);
        fused = view == 0 ? ctx : t.add(fused, ctx);  // equal-weight sum
    }
    ad::Value m = t.matmul(fused, t.leaf(&p.w_cmb));

    ad::Value u = t.matmul_nt(m, emb.h_g);  // pointer scores over all rows
    if (p.config.logit_clip > 0.0) u = t.scale(t.tanh(u), p.config.logit_clip);
    return u;
}

// Numeric distribution for action selection.
inline ActionDistribution action_distribution(const Mat& logits,
                                              const std::vector<char>& mask) {
    bool any = false;
    for (char m : mask) any = any || m;
    if (!any) throw std::logic_error("decode: all actions masked (penalty path)");

    ActionDistribution d;
    d.probs = ad::Tape::masked_softmax(logits, mask);
    d.log_probs.assign(mask.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < mask.size(); ++j) {
        if (!mask[j]) continue;
        d.log_probs[j] = std::log(d.probs[j]);
        if (d.probs[j] > 0.0 && d.probs[j] < 1.0)
            d.entropy -= d.probs[j] * d.log_probs[j];
    }
    return d;
}

}  // namespace vaproute
