#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "secvit/flops.hpp"
#include "secvit/tensor.hpp"

// Forward math on plain tensors. The autodiff tape wraps these and adds the
// backward passes; oracles in the test suite intentionally do NOT use them.

namespace secvit {

namespace detail {

// Split a shape of rank >= 2 into (batch extent, rows, cols).
inline void split_batch(const Shape& s, std::size_t& batch, std::size_t& rows, std::size_t& cols) {
    rows = s[s.size() - 2];
    cols = s[s.size() - 1];
    batch = 1;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) batch *= s[i];
}

inline bool same_batch_dims(const Shape& a, const Shape& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i + 2 < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace detail

// C[.., p, r] = A[.., p, q] x B[.., q, r]. Batch dims must match, or one
// operand may be a plain rank-2 matrix shared across the other's batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw std::invalid_argument("matmul: both operands must have rank >= 2");
    std::size_t ab, p, q, bb, q2, r;
    detail::split_batch(a.shape(), ab, p, q);
    detail::split_batch(b.shape(), bb, q2, r);
    if (q != q2)
        throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    bool a_bcast = a.rank() == 2 && b.rank() > 2;
    bool b_bcast = b.rank() == 2 && a.rank() > 2;
    if (!a_bcast && !b_bcast && !detail::same_batch_dims(a.shape(), b.shape()))
        throw std::invalid_argument("matmul: batch dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));

    std::size_t batch = std::max(ab, bb);
    Shape out_shape = (b_bcast || !a_bcast) ? a.shape() : b.shape();
    out_shape[out_shape.size() - 2] = p;
    out_shape[out_shape.size() - 1] = r;
    Tensor<T> c(out_shape);

    const T* A = a.data();
    const T* B = b.data();
    T* C = c.data();
    // One output row per task; per-element accumulation order is fixed
    // (ascending k), so results are independent of the thread count.
    parallel_for(batch * p, [&](std::size_t task) {
        std::size_t bi = task / p;
        std::size_t i = task % p;
        const T* Ab = A + (a_bcast ? 0 : bi * p * q) + i * q;
        const T* Bb = B + (b_bcast ? 0 : bi * q * r);
        T* Cb = C + bi * p * r + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            T av = Ab[k];
            const T* Brow = Bb + k * r;
            for (std::size_t j = 0; j < r; ++j) Cb[j] += av * Brow[j];
        }
    });
    flops::add_macs(std::uint64_t(batch) * p * q * r);
    return c;
}

// y[.., out] = x[.., in] . W[out, in]^T (+ bias[out])
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
    if (x.rank() < 1) throw std::invalid_argument("linear: input must have rank >= 1");
    std::size_t in = x.dim(x.rank() - 1);
    std::size_t out = w.dim(0);
    if (w.dim(1) != in)
        throw std::invalid_argument("linear: input dim " + std::to_string(in) +
                                    " vs weight " + shape_str(w.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != out))
        throw std::invalid_argument("linear: bias shape mismatch");
    std::size_t rows = x.size() / std::max<std::size_t>(in, 1);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 1] = out;
    Tensor<T> y(out_shape);
    const T* X = x.data();
    const T* W = w.data();
    T* Y = y.data();
    parallel_for(rows, [&](std::size_t rI) {
        const T* xr = X + rI * in;
        T* yr = Y + rI * out;
        for (std::size_t o = 0; o < out; ++o) {
            T acc = bias ? (*bias)[o] : T(0);
            const T* wr = W + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    });
    flops::add_macs(std::uint64_t(rows) * in * out);
    return y;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() < 2) throw std::invalid_argument("transpose_last2: rank must be >= 2");
    std::size_t batch, p, q;
    detail::split_batch(x.shape(), batch, p, q);
    Shape s = x.shape();
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    Tensor<T> y(s);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xb = x.data() + b * p * q;
        T* yb = y.data() + b * p * q;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) yb[j * p + i] = xb[i * q + j];
    }
    return y;
}

// [A, B, C, D] -> [A, C, B, D]
template <typename T>
Tensor<T> swap_middle_axes(const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("swap_middle_axes: rank must be 4");
    std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
    Tensor<T> y(Shape{A, C, B, D});
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T* src = x.data() + ((a * B + b) * C + c) * D;
                T* dst = y.data() + ((a * C + c) * B + b) * D;
                std::copy(src, src + D, dst);
            }
    return y;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
        throw std::invalid_argument("softmax_lastdim: last dim must be >= 1");
    std::size_t k = x.dim(x.rank() - 1);
    std::size_t rows = x.size() / k;
    Tensor<T> y(x.shape());
    for (std::size_t rI = 0; rI < rows; ++rI) {
        const T* xr = x.data() + rI * k;
        T* yr = y.data() + rI * k;
        T m = xr[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, xr[j]);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        for (std::size_t j = 0; j < k; ++j) yr[j] /= s;
    }
    return y;
}

// Softmax over the first valid[b] columns of each row in batch b; the
// remaining columns get exactly zero weight. valid[b] == 0 yields zero rows.
template <typename T>
Tensor<T> masked_softmax_lastdim(const Tensor<T>& x, const std::vector<std::size_t>& valid) {
    if (x.rank() != 3) throw std::invalid_argument("masked_softmax_lastdim: expected [B, n, k]");
    std::size_t B = x.dim(0), n = x.dim(1), k = x.dim(2);
    if (valid.size() != B)
        throw std::invalid_argument("masked_softmax_lastdim: one valid count per batch required");
    Tensor<T> y(x.shape());
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t v = valid[b];
        if (v > k) throw std::invalid_argument("masked_softmax_lastdim: valid count exceeds width");
        for (std::size_t i = 0; i < n; ++i) {
            const T* xr = x.data() + (b * n + i) * k;
            T* yr = y.data() + (b * n + i) * k;
            if (v == 0) {
                std::fill(yr, yr + k, T(0));
                continue;
            }
            T m = xr[0];
            for (std::size_t j = 1; j < v; ++j) m = std::max(m, xr[j]);
            T s = 0;
            for (std::size_t j = 0; j < v; ++j) {
                yr[j] = std::exp(xr[j] - m);
                s += yr[j];
            }
            for (std::size_t j = 0; j < v; ++j) yr[j] /= s;
            std::fill(yr + v, yr + k, T(0));
        }
    }
    return y;
}

template <typename T>
Tensor<T> mean_pool_tokens(const Tensor<T>& x) {
    if (x.rank() != 2) throw std::invalid_argument("mean_pool_tokens: expected [L, d]");
    std::size_t L = x.dim(0), d = x.dim(1);
    if (L == 0) throw std::invalid_argument("mean_pool_tokens: no tokens to pool");
    Tensor<T> y(Shape{d});
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) y[j] += x.at(i, j);
    for (std::size_t j = 0; j < d; ++j) y[j] /= T(L);
    return y;
}

// [B, S, d] -> [B, 1, d]
template <typename T>
Tensor<T> mean_rows_mid(const Tensor<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("mean_rows_mid: expected [B, S, d]");
    std::size_t B = x.dim(0), S = x.dim(1), d = x.dim(2);
    if (S == 0) throw std::invalid_argument("mean_rows_mid: no rows to pool");
    Tensor<T> y(Shape{B, 1, d});
    for (std::size_t b = 0; b < B; ++b) {
        T* yr = y.data() + b * d;
        for (std::size_t i = 0; i < S; ++i) {
            const T* xr = x.data() + (b * S + i) * d;
            for (std::size_t j = 0; j < d; ++j) yr[j] += xr[j];
        }
        for (std::size_t j = 0; j < d; ++j) yr[j] /= T(S);
    }
    return y;
}

inline void check_permutation(const std::vector<std::uint32_t>& idx, std::size_t L) {
    if (idx.size() != L) throw std::invalid_argument("gather_rows: index count != row count");
    std::vector<bool> seen(L, false);
    for (std::uint32_t v : idx) {
        if (v >= L) throw std::invalid_argument("gather_rows: index out of range");
        if (seen[v]) throw std::invalid_argument("gather_rows: repeated index");
        seen[v] = true;
    }
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::uint32_t>& idx) {
    if (x.rank() != 2) throw std::invalid_argument("gather_rows: expected [L, d]");
    std::size_t L = x.dim(0), d = x.dim(1);
    check_permutation(idx, L);
    Tensor<T> y(x.shape());
    for (std::size_t rI = 0; rI < L; ++rI) {
        const T* src = x.data() + std::size_t(idx[rI]) * d;
        std::copy(src, src + d, y.data() + rI * d);
    }
    return y;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
    if (x.rank() != 2) throw std::invalid_argument("slice_rows: expected [L, d]");
    if (r0 > r1 || r1 > x.dim(0)) throw std::invalid_argument("slice_rows: bad row range");
    std::size_t d = x.dim(1);
    Tensor<T> y(Shape{r1 - r0, d});
    std::copy(x.data() + r0 * d, x.data() + r1 * d, y.data());
    return y;
}

template <typename T>
Tensor<T> pad_rows(const Tensor<T>& x, std::size_t extra) {
    if (x.rank() != 2) throw std::invalid_argument("pad_rows: expected [L, d]");
    Tensor<T> y(Shape{x.dim(0) + extra, x.dim(1)});
    std::copy(x.data(), x.data() + x.size(), y.data());
    return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank must be >= 1");
    std::size_t d = x.dim(x.rank() - 1);
    if (gamma.size() != d || beta.size() != d)
        throw std::invalid_argument("layer_norm: gamma/beta must have the normalized width");
    std::size_t rows = x.size() / d;
    Tensor<T> y(x.shape());
    for (std::size_t rI = 0; rI < rows; ++rI) {
        const T* xr = x.data() + rI * d;
        T* yr = y.data() + rI * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= T(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= T(d);
        T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) yr[j] = gamma[j] * ((xr[j] - mu) * inv) + beta[j];
    }
    return y;
}

template <typename T>
inline T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    T phi = std::exp(T(-0.5) * x * x) * T(1.0 / std::sqrt(2.0 * std::numbers::pi));
    T Phi = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
    return Phi + x * phi;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
    return y;
}

// Per-channel 3x3 cross-correlation, zero padding 1, stride 1.
template <typename T>
Tensor<T> dwconv2d_3x3(const Tensor<T>& x, const Tensor<T>& k) {
    if (x.rank() != 3) throw std::invalid_argument("dwconv2d_3x3: expected [C, H, W]");
    std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (k.rank() != 3 || k.dim(0) != C || k.dim(1) != 3 || k.dim(2) != 3)
        throw std::invalid_argument("dwconv2d_3x3: kernels must be [C, 3, 3]");
    Tensor<T> y(x.shape());
    parallel_for(C, [&](std::size_t c) {
        const T* xc = x.data() + c * H * W;
        const T* kc = k.data() + c * 9;
        T* yc = y.data() + c * H * W;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                T acc = 0;
                for (std::size_t u = 0; u < 3; ++u) {
                    std::ptrdiff_t ii = std::ptrdiff_t(i + u) - 1;
                    if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
                    for (std::size_t v = 0; v < 3; ++v) {
                        std::ptrdiff_t jj = std::ptrdiff_t(j + v) - 1;
                        if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
                        acc += xc[ii * std::ptrdiff_t(W) + jj] * kc[u * 3 + v];
                    }
                }
                yc[i * W + j] = acc;
            }
    });
    flops::add_macs(std::uint64_t(C) * H * W * 9);
    return y;
}

// 3x3 cross-correlation, zero padding 1, stride in {1, 2}.
template <typename T>
Tensor<T> conv2d_stride(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride) {
    if (x.rank() != 3) throw std::invalid_argument("conv2d_stride: expected [C, H, W]");
    if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
        throw std::invalid_argument("conv2d_stride: weights must be [Co, Ci, 3, 3]");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d_stride: stride must be 1 or 2");
    std::size_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    std::size_t Co = w.dim(0);
    if (w.dim(1) != Ci) throw std::invalid_argument("conv2d_stride: channel mismatch");
    if (bias && bias->size() != Co) throw std::invalid_argument("conv2d_stride: bias mismatch");
    std::size_t Ho = (H + std::size_t(stride) - 1) / std::size_t(stride);
    std::size_t Wo = (W + std::size_t(stride) - 1) / std::size_t(stride);
    Tensor<T> y(Shape{Co, Ho, Wo});
    parallel_for(Co, [&](std::size_t o) {
        T* yo = y.data() + o * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                T acc = bias ? (*bias)[o] : T(0);
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    const T* xc = x.data() + ci * H * W;
                    const T* wc = w.data() + (o * Ci + ci) * 9;
                    for (std::size_t u = 0; u < 3; ++u) {
                        std::ptrdiff_t ii = std::ptrdiff_t(i) * stride + std::ptrdiff_t(u) - 1;
                        if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
                        for (std::size_t v = 0; v < 3; ++v) {
                            std::ptrdiff_t jj = std::ptrdiff_t(j) * stride + std::ptrdiff_t(v) - 1;
                            if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
                            acc += xc[ii * std::ptrdiff_t(W) + jj] * wc[u * 3 + v];
                        }
                    }
                }
                yo[i * Wo + j] = acc;
            }
    });
    flops::add_macs(std::uint64_t(Co) * Ho * Wo * Ci * 9);
    return y;
}

}  // namespace secvit
