#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "secvit/kernels.hpp"
#include "secvit/tensor.hpp"

namespace secvit {

template <typename T>
class Tape;

// Handle into a tape. Ops are free functions over Var so model code reads
// like plain math.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::int32_t id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape with a dynamic graph. Records are appended in execution
// order, so every record's inputs precede it; backward() replays the records
// exactly once, in reverse. A tape is confined to one thread for its
// lifetime and is meant to be cleared or discarded after backward.
template <typename T>
class Tape {
public:
    Var<T> input(Tensor<T> value, bool requires_grad = false) {
        ensure_finite(value, "tape input");
        (void)requires_grad;
        return alloc_unchecked(std::move(value));
    }

    Var<T> constant(Tensor<T> value) { return input(std::move(value), false); }

    const Tensor<T>& value(Var<T> v) const { return nodes_[check(v)].value; }

    // Valid after backward(); empty until then.
    const Tensor<T>& grad(Var<T> v) const { return nodes_[check(v)].grad; }

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_records() const { return records_.size(); }

    void clear() {
        nodes_.clear();
        records_.clear();
    }

    void backward(Var<T> loss) {
        auto& ln = nodes_[check(loss)];
        if (ln.value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
        for (auto& n : nodes_) n.grad = Tensor<T>(n.value.shape());
        ln.grad[0] = T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward(*this);
        records_.clear();
    }

    // --- op plumbing --------------------------------------------------------
    // Ops call alloc() for the result node, then record() a closure that
    // accumulates into grad_of(input ids) from grad_of(output id).
    Var<T> alloc(const char* op, Tensor<T> value) {
        ensure_finite(value, op);
        return alloc_unchecked(std::move(value));
    }

    void record(const char* op, std::function<void(Tape&)> bw) {
        if (recording_ && bw) records_.push_back(Record{op, std::move(bw)});
    }

    Tensor<T>& grad_of(std::int32_t id) { return nodes_[std::size_t(id)].grad; }
    const Tensor<T>& value_of(std::int32_t id) const { return nodes_[std::size_t(id)].value; }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
    };
    struct Record {
        const char* op;
        std::function<void(Tape&)> backward;
    };

    Var<T> alloc_unchecked(Tensor<T> value) {
        nodes_.push_back(Node{std::move(value), Tensor<T>()});
        return Var<T>{this, std::int32_t(nodes_.size() - 1)};
    }

    std::size_t check(Var<T> v) const {
        if (v.tape != this || v.id < 0 || std::size_t(v.id) >= nodes_.size())
            throw std::invalid_argument("tape: foreign or stale variable handle");
        return std::size_t(v.id);
    }

    std::vector<Node> nodes_;
    std::vector<Record> records_;
    bool recording_ = true;
};

namespace detail {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw std::invalid_argument("op: operands live on different tapes");
    return *a.tape;
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
    if (a.tape == nullptr) throw std::invalid_argument("op: unbound variable handle");
    return *a.tape;
}

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    const Tensor<T>&av = t.value(a), &bv = t.value(b);
    if (!av.same_shape(bv))
        throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                                    shape_str(bv.shape()));
    Tensor<T> y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    Var<T> out = t.alloc("add", std::move(y));
    t.record("add", [a = a.id, b = b.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        detail::axpy(tp.grad_of(a), g);
        detail::axpy(tp.grad_of(b), g);
    });
    return out;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    const Tensor<T>&av = t.value(a), &bv = t.value(b);
    if (!av.same_shape(bv))
        throw std::invalid_argument("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                                    shape_str(bv.shape()));
    Tensor<T> y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    Var<T> out = t.alloc("mul", std::move(y));
    t.record("mul", [a = a.id, b = b.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>&av2 = tp.value_of(a), &bv2 = tp.value_of(b);
        Tensor<T>&ga = tp.grad_of(a), &gb = tp.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av2[i];
        }
    });
    return out;
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
    Tape<T>& t = detail::tape_of(a);
    const Tensor<T>& av = t.value(a);
    Tensor<T> y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = c * av[i];
    Var<T> out = t.alloc("scale", std::move(y));
    t.record("scale", [a = a.id, o = out.id, c](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
    return out;
}

template <typename T>
Var<T> gelu(Var<T> a) {
    Tape<T>& t = detail::tape_of(a);
    Var<T> out = t.alloc("gelu", gelu(t.value(a)));
    t.record("gelu", [a = a.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>& x = tp.value_of(a);
        Tensor<T>& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad_scalar(x[i]);
    });
    return out;
}

template <typename T>
Var<T> sum_all(Var<T> a) {
    Tape<T>& t = detail::tape_of(a);
    const Tensor<T>& av = t.value(a);
    T s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    Tensor<T> y(Shape{});
    y[0] = s;
    Var<T> out = t.alloc("sum_all", std::move(y));
    t.record("sum_all", [a = a.id, o = out.id](Tape<T>& tp) {
        T g = tp.grad_of(o)[0];
        Tensor<T>& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
    return out;
}

// ---- contractions ----------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    Var<T> out = t.alloc("matmul", matmul(t.value(a), t.value(b)));
    t.record("matmul", [a = a.id, b = b.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>&av = tp.value_of(a), &bv = tp.value_of(b);
        // da = g . b^T, db = a^T . g, reducing over the batch when one
        // operand was a shared rank-2 matrix.
        Tensor<T> bt = transpose_last2(bv);
        Tensor<T> at = transpose_last2(av);
        if (av.rank() == 2 && bv.rank() > 2) {
            std::size_t bb, q, r;
            detail::split_batch(bv.shape(), bb, q, r);
            std::size_t p = av.dim(0);
            Tensor<T>& ga = tp.grad_of(a);
            for (std::size_t i = 0; i < bb; ++i) {
                Tensor<T> gb_i(Shape{p, r});
                std::copy(g.data() + i * p * r, g.data() + (i + 1) * p * r, gb_i.data());
                Tensor<T> bt_i(Shape{r, q});
                std::copy(bt.data() + i * q * r, bt.data() + (i + 1) * q * r, bt_i.data());
                detail::axpy(ga, matmul(gb_i, bt_i));
            }
            detail::axpy(tp.grad_of(b), matmul(at, g));
        } else if (bv.rank() == 2 && av.rank() > 2) {
            std::size_t ab, p, q;
            detail::split_batch(av.shape(), ab, p, q);
            std::size_t r = bv.dim(1);
            Tensor<T>& gb = tp.grad_of(b);
            for (std::size_t i = 0; i < ab; ++i) {
                Tensor<T> at_i(Shape{q, p});
                std::copy(at.data() + i * p * q, at.data() + (i + 1) * p * q, at_i.data());
                Tensor<T> g_i(Shape{p, r});
                std::copy(g.data() + i * p * r, g.data() + (i + 1) * p * r, g_i.data());
                detail::axpy(gb, matmul(at_i, g_i));
            }
            detail::axpy(tp.grad_of(a), matmul(g, bt));
        } else {
            detail::axpy(tp.grad_of(a), matmul(g, bt));
            detail::axpy(tp.grad_of(b), matmul(at, g));
        }
    });
    return out;
}

namespace detail {

template <typename T>
Var<T> linear_impl(Var<T> x, Var<T> w, const Var<T>* bias) {
    Tape<T>& t = detail::same_tape(x, w);
    const Tensor<T>* bp = bias ? &t.value(*bias) : nullptr;
    Var<T> out = t.alloc("linear", linear(t.value(x), t.value(w), bp));
    std::int32_t bid = bias ? bias->id : -1;
    t.record("linear", [x = x.id, w = w.id, bid, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>&xv = tp.value_of(x), &wv = tp.value_of(w);
        std::size_t in = wv.dim(1), outd = wv.dim(0);
        std::size_t rows = xv.size() / in;
        Tensor<T>&gx = tp.grad_of(x), &gw = tp.grad_of(w);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * outd;
            const T* xr = xv.data() + r * in;
            T* gxr = gx.data() + r * in;
            for (std::size_t o2 = 0; o2 < outd; ++o2) {
                T gv = gr[o2];
                const T* wr = wv.data() + o2 * in;
                T* gwr = gw.data() + o2 * in;
                for (std::size_t i = 0; i < in; ++i) {
                    gxr[i] += gv * wr[i];
                    gwr[i] += gv * xr[i];
                }
            }
        }
        if (bid >= 0) {
            Tensor<T>& gb = tp.grad_of(bid);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o2 = 0; o2 < outd; ++o2) gb[o2] += g[r * outd + o2];
        }
    });
    return out;
}

}  // namespace detail

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) {
    return detail::linear_impl(x, w, static_cast<const Var<T>*>(nullptr));
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    return detail::linear_impl(x, w, &bias);
}

// ---- data movement ---------------------------------------------------------

template <typename T>
Var<T> transpose_last2(Var<T> a) {
    Tape<T>& t = detail::tape_of(a);
    Var<T> out = t.alloc("transpose_last2", transpose_last2(t.value(a)));
    t.record("transpose_last2", [a = a.id, o = out.id](Tape<T>& tp) {
        detail::axpy(tp.grad_of(a), transpose_last2(tp.grad_of(o)));
    });
    return out;
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tape<T>& t = detail::tape_of(a);
    Var<T> out = t.alloc("reshape", t.value(a).reshaped(shape));
    t.record("reshape", [a = a.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
}

template <typename T>
Var<T> swap_middle_axes(Var<T> a) {
    Tape<T>& t = detail::tape_of(a);
    Var<T> out = t.alloc("swap_middle_axes", swap_middle_axes(t.value(a)));
    t.record("swap_middle_axes", [a = a.id, o = out.id](Tape<T>& tp) {
        detail::axpy(tp.grad_of(a), swap_middle_axes(tp.grad_of(o)));
    });
    return out;
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<std::uint32_t> idx) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("gather_rows", gather_rows(t.value(x), idx));
    t.record("gather_rows", [x = x.id, o = out.id, idx = std::move(idx)](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& gx = tp.grad_of(x);
        std::size_t d = g.dim(1);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const T* gr = g.data() + r * d;
            T* dst = gx.data() + std::size_t(idx[r]) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += gr[j];
        }
    });
    return out;
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t r0, std::size_t r1) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("slice_rows", slice_rows(t.value(x), r0, r1));
    t.record("slice_rows", [x = x.id, o = out.id, r0](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& gx = tp.grad_of(x);
        std::size_t d = g.dim(1);
        for (std::size_t i = 0; i < g.size(); ++i) gx[r0 * d + i] += g[i];
    });
    return out;
}

template <typename T>
Var<T> pad_rows(Var<T> x, std::size_t extra) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("pad_rows", pad_rows(t.value(x), extra));
    t.record("pad_rows", [x = x.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& gx = tp.grad_of(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
    return out;
}

// ---- reductions and normalizers ---------------------------------------------

template <typename T>
Var<T> mean_pool_tokens(Var<T> x) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("mean_pool_tokens", mean_pool_tokens(t.value(x)));
    t.record("mean_pool_tokens", [x = x.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& gx = tp.grad_of(x);
        std::size_t L = gx.dim(0), d = gx.dim(1);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] / T(L);
    });
    return out;
}

template <typename T>
Var<T> mean_rows_mid(Var<T> x) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("mean_rows_mid", mean_rows_mid(t.value(x)));
    t.record("mean_rows_mid", [x = x.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        Tensor<T>& gx = tp.grad_of(x);
        std::size_t B = gx.dim(0), S = gx.dim(1), d = gx.dim(2);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < S; ++i)
                for (std::size_t j = 0; j < d; ++j) gx[(b * S + i) * d + j] += g[b * d + j] / T(S);
    });
    return out;
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("softmax_lastdim", softmax_lastdim(t.value(x)));
    t.record("softmax_lastdim", [x = x.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>& y = tp.value_of(o);
        Tensor<T>& gx = tp.grad_of(x);
        std::size_t k = y.dim(y.rank() - 1);
        std::size_t rows = y.size() / k;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * k;
            const T* gr = g.data() + r * k;
            T dot = 0;
            for (std::size_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
            T* gxr = gx.data() + r * k;
            for (std::size_t j = 0; j < k; ++j) gxr[j] += yr[j] * (gr[j] - dot);
        }
    });
    return out;
}

template <typename T>
Var<T> masked_softmax_lastdim(Var<T> x, std::vector<std::size_t> valid) {
    Tape<T>& t = detail::tape_of(x);
    Var<T> out = t.alloc("masked_softmax_lastdim", masked_softmax_lastdim(t.value(x), valid));
    t.record("masked_softmax_lastdim",
             [x = x.id, o = out.id, valid = std::move(valid)](Tape<T>& tp) {
                 const Tensor<T>& g = tp.grad_of(o);
                 const Tensor<T>& y = tp.value_of(o);
                 Tensor<T>& gx = tp.grad_of(x);
                 std::size_t B = y.dim(0), n = y.dim(1), k = y.dim(2);
                 for (std::size_t b = 0; b < B; ++b) {
                     std::size_t v = valid[b];
                     for (std::size_t i = 0; i < n; ++i) {
                         const T* yr = y.data() + (b * n + i) * k;
                         const T* gr = g.data() + (b * n + i) * k;
                         T dot = 0;
                         for (std::size_t j = 0; j < v; ++j) dot += gr[j] * yr[j];
                         T* gxr = gx.data() + (b * n + i) * k;
                         for (std::size_t j = 0; j < v; ++j) gxr[j] += yr[j] * (gr[j] - dot);
                     }
                 }
             });
    return out;
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6)) {
    Tape<T>& t = detail::same_tape(x, gamma);
    detail::same_tape(gamma, beta);
    Var<T> out = t.alloc("layer_norm", layer_norm(t.value(x), t.value(gamma), t.value(beta), eps));
    t.record("layer_norm", [x = x.id, ga = gamma.id, be = beta.id, o = out.id, eps](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>& xv = tp.value_of(x);
        const Tensor<T>& gav = tp.value_of(ga);
        Tensor<T>& gx = tp.grad_of(x);
        Tensor<T>& gga = tp.grad_of(ga);
        Tensor<T>& gbe = tp.grad_of(be);
        std::size_t d = xv.dim(xv.rank() - 1);
        std::size_t rows = xv.size() / d;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * d;
            const T* gr = g.data() + r * d;
            T mu = 0;
            for (std::size_t j = 0; j < d; ++j) mu += xr[j];
            mu /= T(d);
            T var = 0;
            for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
            var /= T(d);
            T inv = T(1) / std::sqrt(var + eps);
            // ghat = g * gamma; dx = (ghat - mean(ghat) - xhat * mean(ghat*xhat)) / sigma
            T mean_gh = 0, mean_ghx = 0;
            for (std::size_t j = 0; j < d; ++j) {
                T xhat = (xr[j] - mu) * inv;
                T gh = gr[j] * gav[j];
                mean_gh += gh;
                mean_ghx += gh * xhat;
            }
            mean_gh /= T(d);
            mean_ghx /= T(d);
            T* gxr = gx.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
                T xhat = (xr[j] - mu) * inv;
                T gh = gr[j] * gav[j];
                gxr[j] += (gh - mean_gh - xhat * mean_ghx) * inv;
                gga[j] += gr[j] * xhat;
                gbe[j] += gr[j];
            }
        }
    });
    return out;
}

// ---- convolutions ----------------------------------------------------------

template <typename T>
Var<T> dwconv2d_3x3(Var<T> x, Var<T> k) {
    Tape<T>& t = detail::same_tape(x, k);
    Var<T> out = t.alloc("dwconv2d_3x3", dwconv2d_3x3(t.value(x), t.value(k)));
    t.record("dwconv2d_3x3", [x = x.id, k = k.id, o = out.id](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>& xv = tp.value_of(x);
        const Tensor<T>& kv = tp.value_of(k);
        Tensor<T>& gx = tp.grad_of(x);
        Tensor<T>& gk = tp.grad_of(k);
        std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
        for (std::size_t c = 0; c < C; ++c) {
            const T* xc = xv.data() + c * H * W;
            const T* kc = kv.data() + c * 9;
            const T* gc = g.data() + c * H * W;
            T* gxc = gx.data() + c * H * W;
            T* gkc = gk.data() + c * 9;
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    T gv = gc[i * W + j];
                    for (std::size_t u = 0; u < 3; ++u) {
                        std::ptrdiff_t ii = std::ptrdiff_t(i + u) - 1;
                        if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
                        for (std::size_t v = 0; v < 3; ++v) {
                            std::ptrdiff_t jj = std::ptrdiff_t(j + v) - 1;
                            if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
                            gxc[ii * std::ptrdiff_t(W) + jj] += gv * kc[u * 3 + v];
                            gkc[u * 3 + v] += gv * xc[ii * std::ptrdiff_t(W) + jj];
                        }
                    }
                }
        }
    });
    return out;
}

namespace detail {

template <typename T>
Var<T> conv2d_stride_impl(Var<T> x, Var<T> w, const Var<T>* bias, int stride) {
    Tape<T>& t = detail::same_tape(x, w);
    const Tensor<T>* bp = bias ? &t.value(*bias) : nullptr;
    Var<T> out = t.alloc("conv2d_stride", conv2d_stride(t.value(x), t.value(w), bp, stride));
    std::int32_t bid = bias ? bias->id : -1;
    t.record("conv2d_stride", [x = x.id, w = w.id, bid, o = out.id, stride](Tape<T>& tp) {
        const Tensor<T>& g = tp.grad_of(o);
        const Tensor<T>& xv = tp.value_of(x);
        const Tensor<T>& wv = tp.value_of(w);
        Tensor<T>& gx = tp.grad_of(x);
        Tensor<T>& gw = tp.grad_of(w);
        std::size_t Ci = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
        std::size_t Co = g.dim(0), Ho = g.dim(1), Wo = g.dim(2);
        for (std::size_t o2 = 0; o2 < Co; ++o2) {
            const T* go = g.data() + o2 * Ho * Wo;
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    T gv = go[i * Wo + j];
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        const T* xc = xv.data() + ci * H * W;
                        const T* wc = wv.data() + (o2 * Ci + ci) * 9;
                        T* gxc = gx.data() + ci * H * W;
                        T* gwc = gw.data() + (o2 * Ci + ci) * 9;
                        for (std::size_t u = 0; u < 3; ++u) {
                            std::ptrdiff_t ii = std::ptrdiff_t(i) * stride + std::ptrdiff_t(u) - 1;
                            if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
                            for (std::size_t v = 0; v < 3; ++v) {
                                std::ptrdiff_t jj =
                                    std::ptrdiff_t(j) * stride + std::ptrdiff_t(v) - 1;
                                if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
                                gxc[ii * std::ptrdiff_t(W) + jj] += gv * wc[u * 3 + v];
                                gwc[u * 3 + v] += gv * xc[ii * std::ptrdiff_t(W) + jj];
                            }
                        }
                    }
                }
        }
        if (bid >= 0) {
            Tensor<T>& gb = tp.grad_of(bid);
            for (std::size_t o2 = 0; o2 < Co; ++o2)
                for (std::size_t i = 0; i < Ho * Wo; ++i) gb[o2] += g[o2 * Ho * Wo + i];
        }
    });
    return out;
}

}  // namespace detail

template <typename T>
Var<T> conv2d_stride(Var<T> x, Var<T> w, int stride) {
    return detail::conv2d_stride_impl(x, w, static_cast<const Var<T>*>(nullptr), stride);
}

template <typename T>
Var<T> conv2d_stride(Var<T> x, Var<T> w, Var<T> bias, int stride) {
    return detail::conv2d_stride_impl(x, w, &bias, stride);
}

// ---- losses ------------------------------------------------------------------

// Mean cross-entropy of logits [B, K] against integer labels.
template <typename T>
Var<T> cross_entropy_logits(Var<T> logits, std::vector<int> labels) {
    Tape<T>& t = detail::tape_of(logits);
    const Tensor<T>& lv = t.value(logits);
    if (lv.rank() != 2) throw std::invalid_argument("cross_entropy_logits: expected [B, K]");
    std::size_t B = lv.dim(0), K = lv.dim(1);
    if (labels.size() != B)
        throw std::invalid_argument("cross_entropy_logits: one label per row required");
    T loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
        int lab = labels[b];
        if (lab < 0 || std::size_t(lab) >= K)
            throw std::invalid_argument("cross_entropy_logits: label out of range");
        const T* row = lv.data() + b * K;
        T m = row[0];
        for (std::size_t j = 1; j < K; ++j) m = std::max(m, row[j]);
        T s = 0;
        for (std::size_t j = 0; j < K; ++j) s += std::exp(row[j] - m);
        loss += (m + std::log(s)) - row[std::size_t(lab)];
    }
    Tensor<T> y(Shape{});
    y[0] = loss / T(B);
    Var<T> out = t.alloc("cross_entropy_logits", std::move(y));
    t.record("cross_entropy_logits",
             [x = logits.id, o = out.id, labels = std::move(labels)](Tape<T>& tp) {
                 T g = tp.grad_of(o)[0];
                 const Tensor<T>& lv2 = tp.value_of(x);
                 Tensor<T>& gx = tp.grad_of(x);
                 std::size_t B2 = lv2.dim(0), K2 = lv2.dim(1);
                 for (std::size_t b = 0; b < B2; ++b) {
                     const T* row = lv2.data() + b * K2;
                     T* grow = gx.data() + b * K2;
                     T m = row[0];
                     for (std::size_t j = 1; j < K2; ++j) m = std::max(m, row[j]);
                     T s = 0;
                     for (std::size_t j = 0; j < K2; ++j) s += std::exp(row[j] - m);
                     for (std::size_t j = 0; j < K2; ++j) {
                         T p = std::exp(row[j] - m) / s;
                         T onehot = (std::size_t(labels[b]) == j) ? T(1) : T(0);
                         grow[j] += g * (p - onehot) / T(B2);
                     }
                 }
             });
    return out;
}

}  // namespace secvit
