#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "secvit/cluster.hpp"
#include "secvit/random.hpp"
#include "secvit/tensor.hpp"

// Reference partitioners and the metrics that make the three-way comparison
// (spatial windows / iterative k-means / single-pass similarity clustering)
// quantitative.

namespace secvit {

struct Partition {
    std::vector<std::uint32_t> assignment;  // token index -> group id
    std::size_t num_groups = 0;
    int iteration_count = 0;
};

struct PartitionMetrics {
    double balance = 1.0;  // max group size / min group size
    double purity = 0.0;   // same-label pairs co-grouped / same-label pairs
    int iterations = 0;
    std::uint64_t wall_ns = 0;
};

// Tokens on an H x W grid, grouped by win x win spatial tiles. Ignores the
// token contents entirely.
inline Partition window_partition(std::size_t H, std::size_t W, std::size_t win) {
    if (win == 0 || H % win != 0 || W % win != 0)
        throw std::invalid_argument("window_partition: window must divide both extents");
    Partition p;
    p.num_groups = (H / win) * (W / win);
    p.iteration_count = 0;
    p.assignment.resize(H * W);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c)
            p.assignment[r * W + c] = std::uint32_t((r / win) * (W / win) + (c / win));
    return p;
}

struct KMeansOptions {
    int max_iter = 50;
    bool cosine = true;  // matches the ranking geometry; euclidean for the classic variant
    std::uint64_t seed = 0;
};

// Initial centers: k distinct token indices from a seeded partial shuffle.
inline std::vector<std::uint32_t> kmeans_select_init(std::size_t L, std::size_t k,
                                                     std::uint64_t seed) {
    Rng rng(seed);
    return rng.sample_distinct(L, k);
}

// Lloyd iterations. Each assignment pass bumps iteration_count; ties pick the
// lowest center index; an empty cluster steals the point farthest from its
// own center (ascending empty ids); stops when a pass changes nothing or at
// max_iter.
template <typename T>
Partition kmeans_cluster(const Tensor<T>& x, std::size_t k, const KMeansOptions& opt = {}) {
    if (x.rank() != 2) throw std::invalid_argument("kmeans_cluster: expected [L, d]");
    std::size_t L = x.dim(0), d = x.dim(1);
    if (k == 0 || k > L) throw std::invalid_argument("kmeans_cluster: need 1 <= k <= L");

    std::vector<std::uint32_t> init = kmeans_select_init(L, k, opt.seed);
    std::vector<std::vector<double>> centers(k, std::vector<double>(d));
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) centers[c][j] = double(x.at(init[c], j));

    auto distance = [&](std::size_t row, const std::vector<double>& ctr) {
        if (!opt.cosine) {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = double(x.at(row, j)) - ctr[j];
                s += diff * diff;
            }
            return s;
        }
        double dot = 0, a = 0, b = 0;
        for (std::size_t j = 0; j < d; ++j) {
            double xv = double(x.at(row, j));
            dot += xv * ctr[j];
            a += xv * xv;
            b += ctr[j] * ctr[j];
        }
        return 1.0 - dot / (std::max(std::sqrt(a), 1e-12) * std::max(std::sqrt(b), 1e-12));
    };

    Partition p;
    p.num_groups = k;
    p.assignment.assign(L, 0);
    for (int pass = 0; pass < opt.max_iter; ++pass) {
        ++p.iteration_count;
        bool changed = (pass == 0);
        for (std::size_t i = 0; i < L; ++i) {
            std::size_t best = 0;
            double bd = distance(i, centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                double dd = distance(i, centers[c]);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (p.assignment[i] != best) {
                changed = true;
                p.assignment[i] = std::uint32_t(best);
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            std::size_t members = 0;
            for (std::size_t i = 0; i < L; ++i)
                if (p.assignment[i] == c) ++members;
            if (members) continue;
            std::size_t far = 0;
            double fd = -1;
            for (std::size_t i = 0; i < L; ++i) {
                double dd = distance(i, centers[p.assignment[i]]);
                if (dd > fd) {
                    fd = dd;
                    far = i;
                }
            }
            p.assignment[far] = std::uint32_t(c);
            changed = true;
        }
        if (!changed) break;
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<double> mean(d, 0.0);
            std::size_t members = 0;
            for (std::size_t i = 0; i < L; ++i)
                if (p.assignment[i] == c) {
                    ++members;
                    for (std::size_t j = 0; j < d; ++j) mean[j] += double(x.at(i, j));
                }
            if (members)
                for (std::size_t j = 0; j < d; ++j) centers[c][j] = mean[j] / double(members);
        }
    }
    return p;
}

// The similarity-ranked equal partition exposed through the same interface:
// always a single pass, always balanced when M divides L.
template <typename T>
Partition sec_partition(const Tensor<T>& k, std::size_t M) {
    ClusterPlan plan = build_cluster_plan(k, M);
    Partition p;
    p.num_groups = M;
    p.iteration_count = plan.iterations;
    p.assignment.resize(plan.num_tokens());
    for (std::size_t i = 0; i < p.assignment.size(); ++i)
        p.assignment[i] = std::uint32_t(plan.cluster_of(i));
    return p;
}

// balance: max/min real group size (empty group -> +inf). purity: fraction of
// same-label pairs that share a group; with no co-grouped pairs (e.g. all
// singleton groups) this is 0 by convention.
inline PartitionMetrics score_partition(const Partition& p, const std::vector<int>& labels,
                                        std::uint64_t wall_ns = 0) {
    if (labels.size() != p.assignment.size())
        throw std::invalid_argument("score_partition: one label per token required");
    PartitionMetrics m;
    m.iterations = p.iteration_count;
    m.wall_ns = wall_ns;

    std::vector<std::size_t> sizes(p.num_groups, 0);
    for (std::uint32_t g : p.assignment) {
        if (g >= p.num_groups) throw std::invalid_argument("score_partition: group id out of range");
        ++sizes[g];
    }
    std::size_t mx = 0, mn = std::numeric_limits<std::size_t>::max();
    for (std::size_t s : sizes) {
        mx = std::max(mx, s);
        mn = std::min(mn, s);
    }
    m.balance = mn == 0 ? std::numeric_limits<double>::infinity() : double(mx) / double(mn);

    std::uint64_t same_label = 0, co_grouped = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = i + 1; j < labels.size(); ++j)
            if (labels[i] == labels[j]) {
                ++same_label;
                if (p.assignment[i] == p.assignment[j]) ++co_grouped;
            }
    m.purity = same_label == 0 ? 0.0 : double(co_grouped) / double(same_label);
    return m;
}

// Planted evaluation data: `bands` groups of tokens whose cosine against a
// common axis sits in well-separated bands, equal tokens per band, labels =
// band id. Band order is shuffled across token positions.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> make_banded_tokens(std::size_t L, std::size_t d,
                                                          std::size_t bands, std::uint64_t seed) {
    if (bands == 0 || L % bands != 0)
        throw std::invalid_argument("make_banded_tokens: bands must divide L");
    if (d < 2) throw std::invalid_argument("make_banded_tokens: need d >= 2");
    Rng rng(seed);

    std::vector<int> labels(L);
    for (std::size_t i = 0; i < L; ++i) labels[i] = int(i % bands);
    // shuffle token positions so spatial layouts carry no band information
    auto perm = rng.permutation(L);
    std::vector<int> shuffled(L);
    for (std::size_t i = 0; i < L; ++i) shuffled[i] = labels[perm[i]];

    Tensor<T> x(Shape{L, d});
    for (std::size_t i = 0; i < L; ++i) {
        int band = shuffled[i];
        // cosine targets spaced far apart relative to the jitter; the mean
        // stays positive along the axis so similarity ranking tracks the bands
        double target = 0.9 - 1.1 * double(band) / double(std::max<std::size_t>(bands - 1, 1));
        double cosv = std::clamp(target + rng.uniform(-0.02, 0.02), -0.99, 0.99);
        double sinv = std::sqrt(1.0 - cosv * cosv);
        // unit vector orthogonal to the axis, random in the remaining dims
        std::vector<double> w(d, 0.0);
        double norm = 0;
        for (std::size_t j = 1; j < d; ++j) {
            w[j] = rng.normal();
            norm += w[j] * w[j];
        }
        norm = std::max(std::sqrt(norm), 1e-9);
        x.at(i, 0) = T(cosv);
        for (std::size_t j = 1; j < d; ++j) x.at(i, j) = T(sinv * w[j] / norm);
    }
    return {std::move(x), std::move(shuffled)};
}

}  // namespace secvit
