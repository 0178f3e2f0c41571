#pragma once

// Independent reference implementations used only by the test suite. These
// deliberately avoid the library's kernels: plain nested loops, direct
// formulas, separate data walks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "secvit/tensor.hpp"

namespace oracle {

using secvit::Shape;
using secvit::Tensor;

// a [p, q] x b [q, r], element-wise triple loop (j outer, k inner).
inline Tensor<double> matmul2d(const Tensor<double>& a, const Tensor<double>& b) {
    std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
    Tensor<double> c(Shape{p, r});
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < q; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

// Mean over the token axis by independent per-column summation.
inline std::vector<double> column_means(const Tensor<double>& x) {
    std::size_t L = x.dim(0), d = x.dim(1);
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < L; ++i) s += x.at(i, j);
        out[j] = s / double(L);
    }
    return out;
}

// Direct 6-loop depthwise 3x3 convolution with zero padding 1.
inline Tensor<double> dwconv3x3(const Tensor<double>& x, const Tensor<double>& k) {
    std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<double> y(x.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double acc = 0;
                for (int u = -1; u <= 1; ++u)
                    for (int v = -1; v <= 1; ++v) {
                        int ii = int(i) + u, jj = int(j) + v;
                        if (ii < 0 || jj < 0 || ii >= int(H) || jj >= int(W)) continue;
                        acc += x.at(c, std::size_t(ii), std::size_t(jj)) *
                               k.at(c, std::size_t(u + 1), std::size_t(v + 1));
                    }
                y.at(c, i, j) = acc;
            }
    return y;
}

// Naive strided 3x3 convolution, zero padding 1.
inline Tensor<double> conv3x3(const Tensor<double>& x, const Tensor<double>& w,
                              const std::vector<double>& bias, int stride) {
    std::size_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2), Co = w.dim(0);
    std::size_t Ho = (H + std::size_t(stride) - 1) / std::size_t(stride);
    std::size_t Wo = (W + std::size_t(stride) - 1) / std::size_t(stride);
    Tensor<double> y(Shape{Co, Ho, Wo});
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (std::size_t ci = 0; ci < Ci; ++ci)
                    for (int u = -1; u <= 1; ++u)
                        for (int v = -1; v <= 1; ++v) {
                            int ii = int(i) * stride + u, jj = int(j) * stride + v;
                            if (ii < 0 || jj < 0 || ii >= int(H) || jj >= int(W)) continue;
                            acc += x.at(ci, std::size_t(ii), std::size_t(jj)) *
                                   w[((o * Ci + ci) * 3 + std::size_t(u + 1)) * 3 +
                                     std::size_t(v + 1)];
                        }
                y.at(o, i, j) = acc;
            }
    return y;
}

inline std::vector<double> softmax_row(const std::vector<double>& x) {
    double m = *std::max_element(x.begin(), x.end());
    std::vector<double> e(x.size());
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(x[i] - m);
        s += e[i];
    }
    for (double& v : e) v /= s;
    return e;
}

// Dense multi-head attention over an explicit token subset, written as
// straight-line loops: per head, per query, score row -> softmax -> weighted
// value sum. Inputs are full [L, d] projections; `rows` selects the subset.
inline Tensor<double> subset_attention(const Tensor<double>& q, const Tensor<double>& k,
                                       const Tensor<double>& v,
                                       const std::vector<std::uint32_t>& rows,
                                       std::size_t heads) {
    std::size_t n = rows.size(), d = q.dim(1), dh = d / heads;
    Tensor<double> out(Shape{n, d});
    double scale = 1.0 / std::sqrt(double(dh));
    for (std::size_t h = 0; h < heads; ++h) {
        std::size_t off = h * dh;
        for (std::size_t a = 0; a < n; ++a) {
            std::vector<double> logits(n);
            for (std::size_t b = 0; b < n; ++b) {
                double dot = 0;
                for (std::size_t c = 0; c < dh; ++c)
                    dot += q.at(rows[a], off + c) * k.at(rows[b], off + c);
                logits[b] = dot * scale;
            }
            std::vector<double> w = softmax_row(logits);
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0;
                for (std::size_t b = 0; b < n; ++b) acc += w[b] * v.at(rows[b], off + c);
                out.at(a, off + c) = acc;
            }
        }
    }
    return out;
}

// Cosine similarities of each row against a fixed center, plus a brute-force
// descending sort of (sim, index) pairs.
inline std::vector<double> cosine_sims(const Tensor<double>& k, const std::vector<double>& center,
                                       double eps = 1e-12) {
    std::size_t L = k.dim(0), d = k.dim(1);
    double cn = 0;
    for (double c : center) cn += c * c;
    cn = std::max(std::sqrt(cn), eps);
    std::vector<double> sims(L);
    for (std::size_t i = 0; i < L; ++i) {
        double dot = 0, nn = 0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += k.at(i, j) * center[j];
            nn += k.at(i, j) * k.at(i, j);
        }
        sims[i] = dot / (std::max(std::sqrt(nn), eps) * cn);
    }
    return sims;
}

inline std::vector<std::uint32_t> descending_argsort(const std::vector<double>& sims) {
    std::vector<std::uint32_t> order(sims.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    });
    return order;
}

// Lloyd's algorithm, written independently of the library partitioner but
// following the same published rules: cosine or euclidean distance, nearest
// center wins ties by lower index, empty clusters grab the point farthest
// from its own center (ascending empty ids), assignment passes are counted.
struct LloydResult {
    std::vector<std::uint32_t> assign;
    int iterations = 0;
};

inline LloydResult lloyd(const Tensor<double>& x, std::size_t kk,
                         const std::vector<std::uint32_t>& init, bool cosine, int max_iter) {
    std::size_t L = x.dim(0), d = x.dim(1);
    std::vector<std::vector<double>> centers(kk, std::vector<double>(d));
    for (std::size_t c = 0; c < kk; ++c)
        for (std::size_t j = 0; j < d; ++j) centers[c][j] = x.at(init[c], j);

    auto dist = [&](std::size_t row, const std::vector<double>& ctr) {
        if (!cosine) {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = x.at(row, j) - ctr[j];
                s += diff * diff;
            }
            return s;
        }
        double dot = 0, a = 0, b = 0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += x.at(row, j) * ctr[j];
            a += x.at(row, j) * x.at(row, j);
            b += ctr[j] * ctr[j];
        }
        double denom = std::max(std::sqrt(a), 1e-12) * std::max(std::sqrt(b), 1e-12);
        return 1.0 - dot / denom;
    };

    std::vector<std::uint32_t> assign(L, 0);
    LloydResult res;
    for (int pass = 0; pass < max_iter; ++pass) {
        ++res.iterations;
        bool changed = (pass == 0);  // the first assignment pass always counts as a change
        for (std::size_t i = 0; i < L; ++i) {
            std::size_t best = 0;
            double bd = dist(i, centers[0]);
            for (std::size_t c = 1; c < kk; ++c) {
                double dd = dist(i, centers[c]);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (assign[i] != best) {
                changed = true;
                assign[i] = best;
            }
        }
        // empty clusters steal the point farthest from its own center,
        // ascending over empty ids
        for (std::size_t c = 0; c < kk; ++c) {
            bool empty = true;
            for (std::size_t i = 0; i < L; ++i)
                if (assign[i] == c) {
                    empty = false;
                    break;
                }
            if (!empty) continue;
            std::size_t far = 0;
            double fd = -1;
            for (std::size_t i = 0; i < L; ++i) {
                double dd = dist(i, centers[assign[i]]);
                if (dd > fd) {
                    fd = dd;
                    far = i;
                }
            }
            assign[far] = std::uint32_t(c);
            changed = true;
        }
        if (!changed) break;
        for (std::size_t c = 0; c < kk; ++c) {
            std::vector<double> mean(d, 0.0);
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < L; ++i)
                if (assign[i] == c) {
                    ++cnt;
                    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j);
                }
            if (cnt > 0)
                for (std::size_t j = 0; j < d; ++j) centers[c][j] = mean[j] / double(cnt);
        }
    }
    res.assign = assign;
    return res;
}

}  // namespace oracle
