#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "secvit/cluster.hpp"
#include "secvit/flops.hpp"
#include "secvit/random.hpp"
#include "secvit/tape.hpp"

namespace secvit {

// Parameter structs are generic over the handle type: Tensor<T> for storage,
// Var<T> once lifted onto a tape.
template <typename H>
struct LinearParamsT {
    H weight;  // [out, in]
    H bias;    // [out]
    bool has_bias = true;
};

template <typename H>
struct AttentionParamsT {
    LinearParamsT<H> wq, wk, wv, wo;
    std::size_t num_heads = 1;
};

template <typename T>
using LinearParams = LinearParamsT<Tensor<T>>;
template <typename T>
using LinearVars = LinearParamsT<Var<T>>;
template <typename T>
using AttentionParams = AttentionParamsT<Tensor<T>>;
template <typename T>
using AttentionVars = AttentionParamsT<Var<T>>;

// weights ~ U(-s, s) with s = sqrt(1/fan_in), biases zero
template <typename T>
LinearParams<T> init_linear(Rng& rng, std::size_t out, std::size_t in, bool bias = true) {
    LinearParams<T> p;
    double s = std::sqrt(1.0 / double(in));
    p.weight = rng.tensor_uniform<T>({out, in}, -s, s);
    p.bias = Tensor<T>(Shape{out});
    p.has_bias = bias;
    return p;
}

template <typename T>
AttentionParams<T> init_attention(Rng& rng, std::size_t dim, std::size_t heads) {
    if (heads == 0 || dim % heads != 0)
        throw std::invalid_argument("init_attention: heads must divide the model dim");
    AttentionParams<T> p;
    p.wq = init_linear<T>(rng, dim, dim);
    p.wk = init_linear<T>(rng, dim, dim);
    p.wv = init_linear<T>(rng, dim, dim);
    p.wo = init_linear<T>(rng, dim, dim);
    p.num_heads = heads;
    return p;
}

template <typename T>
LinearVars<T> lift(Tape<T>& t, const LinearParams<T>& p) {
    LinearVars<T> v;
    v.weight = t.input(p.weight, true);
    v.bias = t.input(p.bias, true);
    v.has_bias = p.has_bias;
    return v;
}

template <typename T>
AttentionVars<T> lift(Tape<T>& t, const AttentionParams<T>& p) {
    AttentionVars<T> v;
    v.wq = lift(t, p.wq);
    v.wk = lift(t, p.wk);
    v.wv = lift(t, p.wv);
    v.wo = lift(t, p.wo);
    v.num_heads = p.num_heads;
    return v;
}

template <typename T>
Var<T> apply_linear(Var<T> x, const LinearVars<T>& p) {
    return p.has_bias ? linear(x, p.weight, p.bias) : linear(x, p.weight);
}

namespace detail {

// [B*N, d] -> [B*h, N, dh] with B groups of N rows each.
template <typename T>
Var<T> split_group_heads(Var<T> x, std::size_t groups, std::size_t n, std::size_t heads) {
    std::size_t d = x.tape->value(x).dim(1);
    std::size_t dh = d / heads;
    Var<T> r = reshape(x, {groups, n, heads, dh});
    r = swap_middle_axes(r);  // [B, h, n, dh]
    return reshape(r, {groups * heads, n, dh});
}

template <typename T>
Var<T> merge_group_heads(Var<T> x, std::size_t groups, std::size_t n, std::size_t heads) {
    std::size_t dh = x.tape->value(x).dim(2);
    Var<T> r = reshape(x, {groups, heads, n, dh});
    r = swap_middle_axes(r);  // [B, n, h, dh]
    return reshape(r, {groups * n, heads * dh});
}

}  // namespace detail

template <typename T>
struct ClusterAttentionTrace {
    ClusterPlan plan;
    Var<T> probs;     // [M*h, N, N]
    Var<T> restored;  // pre-output-projection, original token order [L, d]
    Var<T> out;
};

// Cluster-local multi-head attention. The plan is built from the full-channel
// keys (before the head split) and shared by all heads; the sort indices act
// as constants in backward, while gradients flow through the gathered
// projections. A frozen plan can be supplied to pin the assignment.
template <typename T>
Var<T> cluster_attention(Tape<T>& t, Var<T> x, const AttentionVars<T>& p, std::size_t M,
                         const ClusterPlan* frozen = nullptr,
                         ClusterAttentionTrace<T>* trace = nullptr) {
    const Tensor<T>& xv = t.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("cluster_attention: expected [L, d]");
    std::size_t L = xv.dim(0), d = xv.dim(1);
    std::size_t h = p.num_heads;
    if (h == 0 || d % h != 0)
        throw std::invalid_argument("cluster_attention: heads must divide the model dim");
    if (M == 0 || M > L)
        throw std::invalid_argument("cluster_attention: need 1 <= M <= L");
    std::size_t dh = d / h;

    Var<T> q, k, v;
    {
        flops::Region region(flops::Cat::proj);
        q = apply_linear(x, p.wq);
        k = apply_linear(x, p.wk);
        v = apply_linear(x, p.wv);
    }

    ClusterPlan plan = frozen ? *frozen : build_cluster_plan(t.value(k), M);
    std::size_t N = plan.cluster_size;

    Var<T> qs = gather_rows(q, plan.idx);
    Var<T> ks = gather_rows(k, plan.idx);
    Var<T> vs = gather_rows(v, plan.idx);
    if (plan.padded > 0) {
        qs = pad_rows(qs, plan.padded);
        ks = pad_rows(ks, plan.padded);
        vs = pad_rows(vs, plan.padded);
    }

    Var<T> qb = detail::split_group_heads(qs, M, N, h);
    Var<T> kb = detail::split_group_heads(ks, M, N, h);
    Var<T> vb = detail::split_group_heads(vs, M, N, h);

    Var<T> scores;
    {
        flops::Region region(flops::Cat::scores);
        scores = matmul(qb, transpose_last2(kb));
    }
    scores = scale(scores, T(1.0 / std::sqrt(double(dh))));

    Var<T> probs;
    if (plan.padded > 0) {
        std::vector<std::size_t> valid(M * h);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t j = 0; j < h; ++j) valid[m * h + j] = plan.cluster_valid(m);
        probs = masked_softmax_lastdim(scores, std::move(valid));
    } else {
        probs = softmax_lastdim(scores);
    }

    Var<T> ctx;
    {
        flops::Region region(flops::Cat::values);
        ctx = matmul(probs, vb);
    }

    Var<T> merged = detail::merge_group_heads(ctx, M, N, h);  // [M*N, d]
    if (plan.padded > 0) merged = slice_rows(merged, 0, L);
    Var<T> restored = gather_rows(merged, plan.inv_idx);

    Var<T> out;
    {
        flops::Region region(flops::Cat::proj);
        out = apply_linear(restored, p.wo);
    }

    if (trace) {
        trace->plan = std::move(plan);
        trace->probs = probs;
        trace->restored = restored;
        trace->out = out;
    }
    return out;
}

// Plain global multi-head attention over all tokens; serves as the reference
// the one-cluster path must reproduce, so it deliberately shares no gather /
// partition code with cluster_attention.
template <typename T>
Var<T> full_attention(Tape<T>& t, Var<T> x, const AttentionVars<T>& p) {
    const Tensor<T>& xv = t.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("full_attention: expected [L, d]");
    std::size_t L = xv.dim(0), d = xv.dim(1);
    std::size_t h = p.num_heads;
    if (h == 0 || d % h != 0)
        throw std::invalid_argument("full_attention: heads must divide the model dim");
    std::size_t dh = d / h;

    Var<T> q, k, v;
    {
        flops::Region region(flops::Cat::proj);
        q = apply_linear(x, p.wq);
        k = apply_linear(x, p.wk);
        v = apply_linear(x, p.wv);
    }

    Var<T> qb = detail::split_group_heads(q, 1, L, h);
    Var<T> kb = detail::split_group_heads(k, 1, L, h);
    Var<T> vb = detail::split_group_heads(v, 1, L, h);

    Var<T> scores;
    {
        flops::Region region(flops::Cat::scores);
        scores = matmul(qb, transpose_last2(kb));
    }
    Var<T> probs = softmax_lastdim(scale(scores, T(1.0 / std::sqrt(double(dh)))));

    Var<T> ctx;
    {
        flops::Region region(flops::Cat::values);
        ctx = matmul(probs, vb);
    }

    Var<T> merged = detail::merge_group_heads(ctx, 1, L, h);
    flops::Region region(flops::Cat::proj);
    return apply_linear(merged, p.wo);
}

struct ConnectorConfig {
    std::size_t out_tokens = 0;  // G
    bool interleaved = true;
};

template <typename T>
struct ConnectorTrace {
    GroupPlan plan;
    Var<T> weights;  // attentive-pooling rows [G*h, 1, S]
    Var<T> out;
};

// Token compressor: rank all tokens once, form G groups over the sorted
// order (interleaved by default), then attend each group's keys/values
// against its mean-pooled query, emitting one token per group.
template <typename T>
Var<T> connector_compress(Tape<T>& t, Var<T> x, const AttentionVars<T>& p,
                          const ConnectorConfig& cfg, ConnectorTrace<T>* trace = nullptr) {
    const Tensor<T>& xv = t.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("connector_compress: expected [L, d]");
    std::size_t L = xv.dim(0), d = xv.dim(1);
    std::size_t G = cfg.out_tokens;
    std::size_t h = p.num_heads;
    if (h == 0 || d % h != 0)
        throw std::invalid_argument("connector_compress: heads must divide the model dim");
    if (G == 0 || L % G != 0)
        throw std::invalid_argument("connector_compress: output count must divide the token count");
    std::size_t dh = d / h;
    std::size_t S = L / G;

    Var<T> q, k, v;
    {
        flops::Region region(flops::Cat::proj);
        q = apply_linear(x, p.wq);
        k = apply_linear(x, p.wk);
        v = apply_linear(x, p.wv);
    }

    Tensor<T> center = compute_center(t.value(k));
    auto [sim, idx] = similarity_rank(t.value(k), center);
    GroupPlan plan = cfg.interleaved ? build_group_plan(idx, G) : sequential_group_plan(idx, G);

    // group-major permutation: row g*S + s holds group g's s-th member
    std::vector<std::uint32_t> perm(L);
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t s = 0; s < S; ++s) perm[g * S + s] = plan.members[g][s];

    Var<T> qg = detail::split_group_heads(gather_rows(q, perm), G, S, h);
    Var<T> kg = detail::split_group_heads(gather_rows(k, perm), G, S, h);
    Var<T> vg = detail::split_group_heads(gather_rows(v, perm), G, S, h);

    Var<T> pooled = mean_rows_mid(qg);  // [G*h, 1, dh]

    Var<T> scores;
    {
        flops::Region region(flops::Cat::scores);
        scores = matmul(pooled, transpose_last2(kg));
    }
    Var<T> weights = softmax_lastdim(scale(scores, T(1.0 / std::sqrt(double(dh)))));

    Var<T> ctx;
    {
        flops::Region region(flops::Cat::values);
        ctx = matmul(weights, vg);  // [G*h, 1, dh]
    }

    Var<T> merged = detail::merge_group_heads(ctx, G, 1, h);  // [G, d]

    Var<T> out;
    {
        flops::Region region(flops::Cat::proj);
        out = apply_linear(merged, p.wo);
    }

    if (trace) {
        trace->plan = std::move(plan);
        trace->weights = weights;
        trace->out = out;
    }
    return out;
}

// ---- forward-only conveniences ----------------------------------------------

template <typename T>
Tensor<T> cluster_attention_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                                    std::size_t M) {
    Tape<T> t;
    t.set_recording(false);
    Var<T> out = cluster_attention(t, t.constant(x), lift(t, p), M);
    return t.value(out);
}

template <typename T>
Tensor<T> full_attention_forward(const Tensor<T>& x, const AttentionParams<T>& p) {
    Tape<T> t;
    t.set_recording(false);
    Var<T> out = full_attention(t, t.constant(x), lift(t, p));
    return t.value(out);
}

template <typename T>
Tensor<T> connector_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                            const ConnectorConfig& cfg) {
    Tape<T> t;
    t.set_recording(false);
    Var<T> out = connector_compress(t, t.constant(x), lift(t, p), cfg);
    return t.value(out);
}

}  // namespace secvit
