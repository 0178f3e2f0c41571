#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "secvit/kernels.hpp"
#include "secvit/tensor.hpp"

// Single-pass balanced token clustering: pool the keys into one center, rank
// every token by cosine similarity to it, then slice the sorted order into
// equal clusters. The plan is a pure permutation object; attention layers
// gather with it and restore afterwards.

namespace secvit {

struct ClusterPlan {
    std::vector<double> sim;        // per original token, in [-1, 1]
    std::vector<std::uint32_t> idx;      // sorted rank -> original index, descending sim
    std::vector<std::uint32_t> inv_idx;  // original index -> sorted rank
    std::size_t num_clusters = 0;        // M
    std::size_t cluster_size = 0;        // N tokens per cluster, dummies included
    std::size_t padded = 0;              // appended dummy tokens, always at the tail
    int iterations = 0;                  // ranking passes taken to build the plan

    std::size_t num_tokens() const { return idx.size(); }
    std::size_t total() const { return idx.size() + padded; }  // == M * N

    // Real (non-dummy) tokens in cluster m. Dummies rank below every real
    // token, so they fill the trailing clusters.
    std::size_t cluster_valid(std::size_t m) const {
        std::size_t lo = m * cluster_size;
        std::size_t L = idx.size();
        if (lo >= L) return 0;
        return std::min(cluster_size, L - lo);
    }

    std::size_t cluster_of(std::size_t original) const {
        return inv_idx[original] / cluster_size;
    }
};

// k_c: mean over all key vectors.
template <typename T>
Tensor<T> compute_center(const Tensor<T>& k) {
    return mean_pool_tokens(k);
}

// Cosine similarity of every row against the center, and the stable
// descending argsort (ties broken by ascending original index). Similarity
// is accumulated in f64 regardless of the input dtype; zero-norm rows score 0.
template <typename T>
std::pair<std::vector<double>, std::vector<std::uint32_t>> similarity_rank(
    const Tensor<T>& k, const Tensor<T>& center, double eps = 1e-12) {
    if (k.rank() != 2) throw std::invalid_argument("similarity_rank: expected [L, d]");
    std::size_t L = k.dim(0), d = k.dim(1);
    if (L == 0) throw std::invalid_argument("similarity_rank: no tokens");
    if (center.size() != d) throw std::invalid_argument("similarity_rank: center width mismatch");

    double cnorm = 0;
    for (std::size_t j = 0; j < d; ++j) cnorm += double(center[j]) * double(center[j]);
    cnorm = std::max(std::sqrt(cnorm), eps);

    std::vector<double> sim(L);
    for (std::size_t i = 0; i < L; ++i) {
        double dot = 0, norm = 0;
        const T* row = k.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            dot += double(row[j]) * double(center[j]);
            norm += double(row[j]) * double(row[j]);
        }
        sim[i] = dot / (std::max(std::sqrt(norm), eps) * cnorm);
    }

    std::vector<std::uint32_t> idx(L);
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return sim[a] > sim[b]; });
    return {std::move(sim), std::move(idx)};
}

// Dummy tokens needed so M divides the token count.
inline std::size_t pad_to_divisible(std::size_t L, std::size_t M) {
    if (M == 0) throw std::invalid_argument("pad_to_divisible: M must be >= 1");
    return (M - L % M) % M;
}

// Contiguous rank ranges [m*N, (m+1)*N) over the sorted order.
inline std::vector<std::pair<std::size_t, std::size_t>> equal_partition(std::size_t L,
                                                                        std::size_t M) {
    if (M == 0) throw std::invalid_argument("equal_partition: M must be >= 1");
    if (M > L) throw std::invalid_argument("equal_partition: more clusters than tokens");
    if (L % M != 0) throw std::invalid_argument("equal_partition: M does not divide L; pad first");
    std::size_t N = L / M;
    std::vector<std::pair<std::size_t, std::size_t>> ranges(M);
    for (std::size_t m = 0; m < M; ++m) ranges[m] = {m * N, (m + 1) * N};
    return ranges;
}

inline std::vector<std::uint32_t> invert_permutation(const std::vector<std::uint32_t>& idx) {
    std::vector<std::uint32_t> inv(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) inv[idx[r]] = std::uint32_t(r);
    return inv;
}

// Center -> rank -> pad -> partition, in one ranking pass. Dummy tokens (if
// any) conceptually carry sim = -inf: they sit after every real rank and are
// masked out of attention, so only `idx`'s L real entries are stored.
template <typename T>
ClusterPlan build_cluster_plan(const Tensor<T>& k, std::size_t M) {
    if (k.rank() != 2) throw std::invalid_argument("build_cluster_plan: expected [L, d]");
    std::size_t L = k.dim(0);
    if (M == 0 || M > L)
        throw std::invalid_argument("build_cluster_plan: need 1 <= M <= L, got M=" +
                                    std::to_string(M) + " L=" + std::to_string(L));
    ClusterPlan plan;
    Tensor<T> center = compute_center(k);
    auto [sim, idx] = similarity_rank(k, center);
    plan.sim = std::move(sim);
    plan.idx = std::move(idx);
    plan.inv_idx = invert_permutation(plan.idx);
    plan.padded = pad_to_divisible(L, M);
    plan.num_clusters = M;
    plan.cluster_size = (L + plan.padded) / M;
    plan.iterations = 1;
    equal_partition(plan.total(), M);  // validates the arithmetic
    return plan;
}

// Interleaved group over the sorted order: group n takes ranks
// {n, n+G, n+2G, ...}, mapped back to original token indices. Every group
// spans the full similarity range.
struct GroupPlan {
    std::size_t num_groups = 0;  // G
    std::size_t group_size = 0;  // L / G
    bool interleaved = true;
    std::vector<std::vector<std::uint32_t>> members;  // original token indices per group
};

inline GroupPlan build_group_plan(const std::vector<std::uint32_t>& idx, std::size_t G) {
    std::size_t L = idx.size();
    if (G == 0) throw std::invalid_argument("build_group_plan: G must be >= 1");
    if (L % G != 0) throw std::invalid_argument("build_group_plan: G does not divide L");
    GroupPlan plan;
    plan.num_groups = G;
    plan.group_size = L / G;
    plan.interleaved = true;
    plan.members.resize(G);
    for (std::size_t n = 0; n < G; ++n) {
        plan.members[n].reserve(plan.group_size);
        for (std::size_t s = 0; s < plan.group_size; ++s) plan.members[n].push_back(idx[n + s * G]);
    }
    return plan;
}

// Baseline grouping: group n takes the contiguous rank block
// [n*(L/G), (n+1)*(L/G)).
inline GroupPlan sequential_group_plan(const std::vector<std::uint32_t>& idx, std::size_t G) {
    std::size_t L = idx.size();
    if (G == 0) throw std::invalid_argument("sequential_group_plan: G must be >= 1");
    if (L % G != 0) throw std::invalid_argument("sequential_group_plan: G does not divide L");
    GroupPlan plan;
    plan.num_groups = G;
    plan.group_size = L / G;
    plan.interleaved = false;
    plan.members.resize(G);
    for (std::size_t n = 0; n < G; ++n) {
        plan.members[n].reserve(plan.group_size);
        for (std::size_t s = 0; s < plan.group_size; ++s)
            plan.members[n].push_back(idx[n * plan.group_size + s]);
    }
    return plan;
}

// Scatter sorted-order rows back to original token positions:
// out[idx[rank]] = y_sorted[rank]. Input must already have the dummy rows
// stripped.
template <typename T>
Tensor<T> restore_order(const Tensor<T>& y_sorted, const ClusterPlan& plan) {
    if (y_sorted.rank() != 2 || y_sorted.dim(0) != plan.num_tokens())
        throw std::invalid_argument("restore_order: expected [L, d] with the plan's token count");
    std::size_t d = y_sorted.dim(1);
    Tensor<T> out(y_sorted.shape());
    for (std::size_t r = 0; r < plan.idx.size(); ++r) {
        const T* src = y_sorted.data() + r * d;
        std::copy(src, src + d, out.data() + std::size_t(plan.idx[r]) * d);
    }
    return out;
}

}  // namespace secvit
