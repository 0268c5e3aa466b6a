#pragma once

// Differentiable dense ops. Every op validates shapes, computes its result
// eagerly, and (when a tape is active and an input is tracked) records a
// closure that scatters d(loss)/d(output) into the input gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cable/blas.hpp"
#include "cable/rng.hpp"
#include "cable/tensor.hpp"
#include "cable/vecmath.hpp"

namespace cable {

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// Row count when the last dimension is treated as the reduced axis.
template <typename T>
int64_t lead_rows(const Tensor<T>& x) {
    return x.ndim() == 0 ? 1 : x.numel() / x.dim(static_cast<int>(x.ndim()) - 1);
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                    "matmul: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::uninit({m, n});
    blas::gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0),
               out.ptr(), n);
    if (auto* tape = grads_wanted<T>({&a, &b})) {
        out.enable_grad();
        tape->record([a, b, out, m, n, k] {
            const T* g = out.grad_ptr();
            if (a.tracked())
                blas::gemm(false, true, m, k, n, T(1), g, n, b.ptr(), n, T(1),
                           a.grad_ptr(), k);
            if (b.tracked())
                blas::gemm(true, false, k, n, m, T(1), a.ptr(), k, g, n, T(1),
                           b.grad_ptr(), n);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require(a.ndim() == 2, "transpose: need 2-d, got " +
                                       shape_str(a.shape()));
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out = Tensor<T>::uninit({n, m});
    const T* src = a.ptr();
    T* dst = out.ptr();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    if (auto* tape = grads_wanted<T>({&a})) {
        out.enable_grad();
        tape->record([a, out, m, n] {
            const T* g = out.grad_ptr();
            T* ag = a.grad_ptr();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ag[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.shape() == b.shape(), "add: " + shape_str(a.shape()) +
                                                " vs " + shape_str(b.shape()));
    const int64_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (auto* tape = grads_wanted<T>({&a, &b})) {
        out.enable_grad();
        tape->record([a, b, out, n] {
            const T* g = out.grad_ptr();
            if (a.tracked()) {
                T* ag = a.grad_ptr();
                for (int64_t i = 0; i < n; ++i) ag[i] += g[i];
            }
            if (b.tracked()) {
                T* bg = b.grad_ptr();
                for (int64_t i = 0; i < n; ++i) bg[i] += g[i];
            }
        });
    }
    return out;
}

// x[r, :] + v for every row r.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    detail::require(x.ndim() == 2 && v.ndim() == 1 && v.dim(0) == x.dim(1),
                    "add_rowvec: " + shape_str(x.shape()) + " + " +
                        shape_str(v.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    const T* px = x.ptr();
    const T* pv = v.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pv[j];
    if (auto* tape = grads_wanted<T>({&x, &v})) {
        out.enable_grad();
        tape->record([x, v, out, m, n] {
            const T* g = out.grad_ptr();
            if (x.tracked()) {
                T* xg = x.grad_ptr();
                for (int64_t i = 0; i < m * n; ++i) xg[i] += g[i];
            }
            if (v.tracked()) {
                T* vg = v.grad_ptr();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) vg[j] += g[i * n + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.shape() == b.shape(), "mul: " + shape_str(a.shape()) +
                                                " vs " + shape_str(b.shape()));
    const int64_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (auto* tape = grads_wanted<T>({&a, &b})) {
        out.enable_grad();
        tape->record([a, b, out, n] {
            const T* g = out.grad_ptr();
            if (a.tracked()) {
                const T* pb2 = b.ptr();
                T* ag = a.grad_ptr();
                for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * pb2[i];
            }
            if (b.tracked()) {
                const T* pa2 = a.ptr();
                T* bg = b.grad_ptr();
                for (int64_t i = 0; i < n; ++i) bg[i] += g[i] * pa2[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    const int64_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (auto* tape = grads_wanted<T>({&a})) {
        out.enable_grad();
        tape->record([a, out, c, n] {
            const T* g = out.grad_ptr();
            T* ag = a.grad_ptr();
            for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    const int64_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    if (auto* tape = grads_wanted<T>({&a})) {
        out.enable_grad();
        tape->record([a, out, n] {
            const T* g = out.grad_ptr();
            const T* pa2 = a.ptr();
            T* ag = a.grad_ptr();
            // subgradient 0 at the kink
            for (int64_t i = 0; i < n; ++i)
                if (pa2[i] > T(0)) ag[i] += g[i];
        });
    }
    return out;
}

template <typename T>
T softplus_val(T x) {
    // max(x,0) + log1p(exp(-|x|)) never overflows and underflows gracefully
    T ax = x < T(0) ? -x : x;
    T mx = x > T(0) ? x : T(0);
    return mx + std::log1p(std::exp(-ax));
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    const int64_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = softplus_val(pa[i]);
    if (auto* tape = grads_wanted<T>({&a})) {
        out.enable_grad();
        tape->record([a, out, n] {
            const T* g = out.grad_ptr();
            const T* pa2 = a.ptr();
            T* ag = a.grad_ptr();
            for (int64_t i = 0; i < n; ++i) {
                T s = T(1) / (T(1) + std::exp(-pa2[i]));  // sigmoid
                ag[i] += g[i] * s;
            }
        });
    }
    return out;
}

// tanh-approximated gelu, as in GPT-2
template <typename T>
T gelu_val(T x) {
    constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kB = T(0.044715);
    T u = kC * (x + kB * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T kC = T(0.7978845608028654);
    constexpr T kB = T(0.044715);
    const int64_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.ptr();
    T* po = out.ptr();
    auto* tape = grads_wanted<T>({&a});
    if (!tape) {
        for (int64_t i = 0; i < n; ++i) {
            T x = pa[i];
            po[i] = kC * (x + kB * x * x * x);
        }
        vtanh(po, po, n);
        for (int64_t i = 0; i < n; ++i)
            po[i] = T(0.5) * pa[i] * (T(1) + po[i]);
        return out;
    }
    // cache tanh(u) for the backward pass; tanh dominates the op's cost
    auto tanhs = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    T* pt = tanhs->data();
    for (int64_t i = 0; i < n; ++i) {
        T x = pa[i];
        pt[i] = kC * (x + kB * x * x * x);
    }
    vtanh(pt, pt, n);
    for (int64_t i = 0; i < n; ++i)
        po[i] = T(0.5) * pa[i] * (T(1) + pt[i]);
    out.enable_grad();
    tape->record([a, out, tanhs, n] {
        const T* g = out.grad_ptr();
        const T* pa2 = a.ptr();
        const T* pt2 = tanhs->data();
        T* ag = a.grad_ptr();
        for (int64_t i = 0; i < n; ++i) {
            T x = pa2[i];
            T t = pt2[i];
            T du = kC * (T(1) + T(3) * kB * x * x);
            T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
            ag[i] += g[i] * d;
        }
    });
    return out;
}

// Row softmax over the last dimension. Masked-out entries (keep == 0) come
// back exactly 0; masking happens before the softmax by pinning those logits
// to -1e9, which underflows to zero weight at either precision.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x,
                       const std::vector<uint8_t>* keep = nullptr) {
    detail::require(x.ndim() >= 1, "softmax: need at least 1-d");
    const int64_t n = x.dim(static_cast<int>(x.ndim()) - 1);
    const int64_t rows = detail::lead_rows(x);
    if (keep)
        detail::require(static_cast<int64_t>(keep->size()) == rows * n,
                        "softmax: mask size mismatch");
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    constexpr T kNegInf = T(-1e9);
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * n;
        const uint8_t* km = keep ? keep->data() + r * n : nullptr;
        T mx = kNegInf;
        bool any = false;
        for (int64_t j = 0; j < n; ++j) {
            if (km && !km[j]) continue;
            any = true;
            mx = std::max(mx, row[j]);
        }
        if (!any) throw NumericError("softmax: fully masked row");
        T sum = T(0);
        for (int64_t j = 0; j < n; ++j) {
            T lv = (km && !km[j]) ? kNegInf : row[j];
            T e = std::exp(lv - mx);
            po[r * n + j] = e;
            sum += e;
        }
        T inv = T(1) / sum;
        for (int64_t j = 0; j < n; ++j) {
            po[r * n + j] *= inv;
            if (km && !km[j]) po[r * n + j] = T(0);
        }
    }
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, rows, n] {
            const T* g = out.grad_ptr();
            const T* y = out.ptr();
            T* xg = x.grad_ptr();
            for (int64_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j)
                    dot += g[r * n + j] * y[r * n + j];
                for (int64_t j = 0; j < n; ++j)
                    xg[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
            }
        });
    }
    return out;
}

// Running sum along a 1-d tensor. inclusive: out[i] = sum_{j<=i} x[j];
// otherwise out[i] = sum_{j<i} x[j] with out[0] = 0.
template <typename T>
Tensor<T> prefix_sum(const Tensor<T>& x, bool inclusive = true) {
    detail::require(x.ndim() == 1, "prefix_sum: need 1-d, got " +
                                       shape_str(x.shape()));
    const int64_t n = x.dim(0);
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        if (inclusive) {
            acc += px[i];
            po[i] = acc;
        } else {
            po[i] = acc;
            acc += px[i];
        }
    }
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, n, inclusive] {
            // reverse cumulative sum of the output gradient
            const T* g = out.grad_ptr();
            T* xg = x.grad_ptr();
            T acc2 = T(0);
            for (int64_t i = n - 1; i >= 0; --i) {
                if (inclusive) {
                    acc2 += g[i];
                    xg[i] += acc2;
                } else {
                    xg[i] += acc2;
                    acc2 += g[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const int64_t n = x.numel();
    const T* px = x.ptr();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, n] {
            T g = out.grad_ptr()[0];
            T* xg = x.grad_ptr();
            for (int64_t i = 0; i < n; ++i) xg[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
    detail::require(x.ndim() == 2, "layer_norm: need 2-d input");
    const int64_t m = x.dim(0), n = x.dim(1);
    detail::require(gain.ndim() == 1 && gain.dim(0) == n && bias.ndim() == 1 &&
                        bias.dim(0) == n,
                    "layer_norm: gain/bias must be " + std::to_string(n));
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    Tensor<T> xhat = Tensor<T>::uninit(x.shape());
    std::vector<T> inv_sd(static_cast<size_t>(m));
    const T* px = x.ptr();
    const T* pg = gain.ptr();
    const T* pb = bias.ptr();
    T* po = out.ptr();
    T* ph = xhat.ptr();
    for (int64_t i = 0; i < m; ++i) {
        const T* row = px + i * n;
        T mean = T(0);
        for (int64_t j = 0; j < n; ++j) mean += row[j];
        mean /= T(n);
        T var = T(0);
        for (int64_t j = 0; j < n; ++j) {
            T d = row[j] - mean;
            var += d * d;
        }
        var /= T(n);
        T inv = T(1) / std::sqrt(var + eps);
        inv_sd[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < n; ++j) {
            T h = (row[j] - mean) * inv;
            ph[i * n + j] = h;
            po[i * n + j] = pg[j] * h + pb[j];
        }
    }
    if (auto* tape = grads_wanted<T>({&x, &gain, &bias})) {
        out.enable_grad();
        tape->record([x, gain, bias, out, xhat, inv_sd, m, n] {
            const T* g = out.grad_ptr();
            const T* ph2 = xhat.ptr();
            const T* pg2 = gain.ptr();
            for (int64_t i = 0; i < m; ++i) {
                if (gain.tracked()) {
                    T* gg = gain.grad_ptr();
                    for (int64_t j = 0; j < n; ++j)
                        gg[j] += g[i * n + j] * ph2[i * n + j];
                }
                if (bias.tracked()) {
                    T* bg = bias.grad_ptr();
                    for (int64_t j = 0; j < n; ++j) bg[j] += g[i * n + j];
                }
                if (x.tracked()) {
                    T mean_dh = T(0), mean_dhh = T(0);
                    for (int64_t j = 0; j < n; ++j) {
                        T dh = g[i * n + j] * pg2[j];
                        mean_dh += dh;
                        mean_dhh += dh * ph2[i * n + j];
                    }
                    mean_dh /= T(n);
                    mean_dhh /= T(n);
                    T inv = inv_sd[static_cast<size_t>(i)];
                    T* xg = x.grad_ptr();
                    for (int64_t j = 0; j < n; ++j) {
                        T dh = g[i * n + j] * pg2[j];
                        xg[i * n + j] +=
                            inv * (dh - mean_dh - ph2[i * n + j] * mean_dhh);
                    }
                }
            }
        });
    }
    return out;
}

// Gather rows of table by id. Backward scatter-adds into the table rows.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table,
                           const std::vector<int32_t>& ids) {
    detail::require(table.ndim() == 2, "embedding: table must be 2-d");
    const int64_t v = table.dim(0), d = table.dim(1);
    const int64_t n = static_cast<int64_t>(ids.size());
    for (int32_t id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding: id " + std::to_string(id) +
                             " outside table of " + std::to_string(v));
    Tensor<T> out = Tensor<T>::uninit({n, d});
    const T* pt = table.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i)
        std::copy(pt + ids[static_cast<size_t>(i)] * d,
                  pt + (ids[static_cast<size_t>(i)] + 1) * d, po + i * d);
    if (auto* tape = grads_wanted<T>({&table})) {
        out.enable_grad();
        tape->record([table, out, ids, n, d] {
            const T* g = out.grad_ptr();
            T* tg = table.grad_ptr();
            for (int64_t i = 0; i < n; ++i) {
                T* dst = tg + ids[static_cast<size_t>(i)] * d;
                const T* src = g + i * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Mean negative log-likelihood of targets under row-wise softmax of logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int32_t>& targets) {
    detail::require(logits.ndim() == 2, "cross_entropy: logits must be 2-d");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    detail::require(static_cast<int64_t>(targets.size()) == n,
                    "cross_entropy: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(n) + " rows");
    for (int32_t t : targets)
        if (t < 0 || t >= v)
            throw IndexError("cross_entropy: target " + std::to_string(t) +
                             " outside vocab of " + std::to_string(v));
    const T* pl = logits.ptr();
    auto* tape = grads_wanted<T>({&logits});
    // cache softmax probs when training; backward is then softmax - onehot
    std::shared_ptr<std::vector<T>> probs;
    T* pp = nullptr;
    if (tape) {
        probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n * v));
        pp = probs->data();
    }
    std::vector<T> scratch;
    if (!pp) scratch.resize(static_cast<size_t>(v));
    T total = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T* row = pl + i * v;
        T mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T* prow = pp ? pp + i * v : scratch.data();
        for (int64_t j = 0; j < v; ++j) prow[j] = row[j] - mx;
        vexp(prow, prow, v);
        T sum = T(0);
        for (int64_t j = 0; j < v; ++j) sum += prow[j];
        if (pp) {
            T inv = T(1) / sum;
            for (int64_t j = 0; j < v; ++j) prow[j] *= inv;
        }
        total += mx + std::log(sum) - row[targets[static_cast<size_t>(i)]];
    }
    Tensor<T> out = Tensor<T>::scalar(total / T(n));
    if (tape) {
        out.enable_grad();
        tape->record([logits, out, targets, probs, n, v] {
            T g = out.grad_ptr()[0] / T(n);
            T* lg = logits.grad_ptr();
            const T* pp2 = probs->data();
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < v; ++j)
                    lg[i * v + j] += g * pp2[i * v + j];
                lg[i * v + targets[static_cast<size_t>(i)]] -= g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int64_t r0, int64_t rows) {
    detail::require(x.ndim() == 2, "slice_rows: need 2-d");
    detail::require(r0 >= 0 && rows >= 0 && r0 + rows <= x.dim(0),
                    "slice_rows: [" + std::to_string(r0) + "," +
                        std::to_string(r0 + rows) + ") of " +
                        std::to_string(x.dim(0)));
    const int64_t n = x.dim(1);
    Tensor<T> out = Tensor<T>::uninit({rows, n});
    std::copy(x.ptr() + r0 * n, x.ptr() + (r0 + rows) * n, out.ptr());
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, r0, rows, n] {
            const T* g = out.grad_ptr();
            T* xg = x.grad_ptr() + r0 * n;
            for (int64_t i = 0; i < rows * n; ++i) xg[i] += g[i];
        });
    }
    return out;
}

// Contiguous sub-matrix copy: rows [r0, r0+rows) by cols [c0, c0+cols).
template <typename T>
Tensor<T> block(const Tensor<T>& x, int64_t r0, int64_t rows, int64_t c0,
                int64_t cols) {
    detail::require(x.ndim() == 2, "block: need 2-d");
    detail::require(r0 >= 0 && rows >= 0 && r0 + rows <= x.dim(0) && c0 >= 0 &&
                        cols >= 0 && c0 + cols <= x.dim(1),
                    "block: out of range for " + shape_str(x.shape()));
    const int64_t n = x.dim(1);
    Tensor<T> out = Tensor<T>::uninit({rows, cols});
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < rows; ++i)
        std::copy(px + (r0 + i) * n + c0, px + (r0 + i) * n + c0 + cols,
                  po + i * cols);
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, r0, rows, c0, cols, n] {
            const T* g = out.grad_ptr();
            T* xg = x.grad_ptr();
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < cols; ++j)
                    xg[(r0 + i) * n + c0 + j] += g[i * cols + j];
        });
    }
    return out;
}

// Inverted dropout; active only while a tape is recording (training).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
    if (rate <= 0.0 || !Tape<T>::active()) return x;
    if (rate >= 1.0) throw ArgumentError("dropout: rate must be < 1");
    const int64_t n = x.numel();
    const T keep_scale = T(1.0 / (1.0 - rate));
    std::vector<uint8_t> keep(static_cast<size_t>(n));
    for (auto& k : keep) k = rng.uniform() >= rate ? 1 : 0;
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < n; ++i)
        po[i] = keep[static_cast<size_t>(i)] ? px[i] * keep_scale : T(0);
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, keep, keep_scale, n] {
            const T* g = out.grad_ptr();
            T* xg = x.grad_ptr();
            for (int64_t i = 0; i < n; ++i)
                if (keep[static_cast<size_t>(i)]) xg[i] += g[i] * keep_scale;
        });
    }
    return out;
}

}  // namespace cable
