#pragma once

// Causal multi-head attention. The batched path is one fused op: per-head
// logits, additive bias, mask, softmax and the value mix happen inside a
// single tape node operating on strided views of [batch*t x d_model]
// matrices. The streaming path keeps per-head K/V rows plus the cumulative
// bias scalars, so decoding one more token never recomputes history.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cable/blas.hpp"
#include "cable/ops.hpp"
#include "cable/posenc.hpp"
#include "cable/tensor.hpp"

namespace cable {

template <typename T>
struct AttentionLayer {
    int64_t n_heads = 0;
    int64_t d_head = 0;
    PosencKind kind = PosencKind::kNope;
    CableVariant variant = CableVariant::kFull;
    double rope_theta = 10000.0;

    Tensor<T> w_q, w_k, w_v, w_o;  // [d_model x d_model], bias-free

    std::vector<CableHeadParams<T>> cable;    // per head
    std::vector<T> alibi;                     // per-head slopes, fixed
    std::vector<KerpleHeadParams<T>> kerple;  // per head
    std::vector<Tensor<T>> t5_tables;         // per head, [buckets + 1]
    std::vector<FireHeadParams<T>> fire;      // per head

    int64_t d_model() const { return n_heads * d_head; }
};

// Fused attention core over strided head views. biases holds 0 matrices
// (none), n_heads (shared across the batch) or batch*n_heads (per sequence,
// indexed s*n_heads + h) additive [t x t] logit deltas. cable_terms holds 0
// or batch*n_heads separable deltas g_i (S_j - S_i) applied straight to the
// score matrix.
template <typename T>
Tensor<T> masked_multihead_attention(
    const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
    std::span<const Tensor<T>> biases, int64_t batch, int64_t t,
    int64_t n_heads, bool causal = true,
    std::span<const CableTerms<T>> cable_terms = {}) {
    detail::require(q.ndim() == 2 && q.shape() == k.shape() &&
                        q.shape() == v.shape(),
                    "attention: q/k/v must share a 2-d shape");
    const int64_t rows = q.dim(0), d = q.dim(1);
    detail::require(rows == batch * t, "attention: rows != batch * t");
    detail::require(d % n_heads == 0, "attention: heads must divide d_model");
    const int64_t dh = d / n_heads;
    const bool per_seq = static_cast<int64_t>(biases.size()) == batch * n_heads;
    detail::require(biases.empty() || per_seq ||
                        static_cast<int64_t>(biases.size()) == n_heads,
                    "attention: bias count must be 0, H or B*H");
    for (const Tensor<T>& b : biases)
        detail::require(b.ndim() == 2 && b.dim(0) == t && b.dim(1) == t,
                        "attention: bias must be [t x t]");
    detail::require(cable_terms.empty() ||
                        static_cast<int64_t>(cable_terms.size()) ==
                            batch * n_heads,
                    "attention: cable term count must be 0 or B*H");
    for (const CableTerms<T>& tm : cable_terms) {
        detail::require(tm.s.ndim() == 1 && tm.s.dim(0) == t,
                        "attention: cable S must be [t]");
        detail::require(!tm.g.defined() ||
                            (tm.g.ndim() == 1 && tm.g.dim(0) == t),
                        "attention: cable g must be [t]");
    }
    const T inv = T(1) / std::sqrt(static_cast<T>(dh));

    Tensor<T> out = Tensor<T>::uninit({rows, d});
    auto probs = detail::make_buffer<T>(batch * n_heads * t * t, false);
    std::vector<Tensor<T>> bias_vec(biases.begin(), biases.end());
    std::vector<CableTerms<T>> term_vec(cable_terms.begin(),
                                        cable_terms.end());

    for (int64_t s = 0; s < batch; ++s) {
        for (int64_t h = 0; h < n_heads; ++h) {
            const T* qp = q.ptr() + s * t * d + h * dh;
            const T* kp = k.ptr() + s * t * d + h * dh;
            const T* vp = v.ptr() + s * t * d + h * dh;
            T* pblk = probs->data() + (s * n_heads + h) * t * t;
            blas::gemm(false, true, t, t, dh, inv, qp, d, kp, d, T(0), pblk, t);
            if (!bias_vec.empty()) {
                const T* bp =
                    bias_vec[static_cast<size_t>(per_seq ? s * n_heads + h : h)]
                        .ptr();
                if (causal)
                    for (int64_t i = 0; i < t; ++i)
                        for (int64_t j = 0; j <= i; ++j)
                            pblk[i * t + j] += bp[i * t + j];
                else
                    for (int64_t i = 0; i < t * t; ++i) pblk[i] += bp[i];
            }
            if (!term_vec.empty()) {
                const auto& tm =
                    term_vec[static_cast<size_t>(s * n_heads + h)];
                const T* sv = tm.s.ptr();
                const T* gv = tm.g.defined() ? tm.g.ptr() : nullptr;
                for (int64_t i = 0; i < t; ++i) {
                    const T gi = gv ? gv[i] : T(1);
                    const T si = sv[i];
                    T* row = pblk + i * t;
                    const int64_t m = causal ? i + 1 : t;
                    for (int64_t j = 0; j < m; ++j)
                        row[j] += gi * (sv[j] - si);
                }
            }
            // Causal rows only touch keys j <= i; masked entries get exact 0.
            for (int64_t i = 0; i < t; ++i) {
                T* row = pblk + i * t;
                const int64_t m = causal ? i + 1 : t;
                T mx = row[0];
                for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
                for (int64_t j = 0; j < m; ++j) row[j] -= mx;
                vexp(row, row, m);
                T sum = T(0);
                for (int64_t j = 0; j < m; ++j) sum += row[j];
                T norm = T(1) / sum;
                for (int64_t j = 0; j < m; ++j) row[j] *= norm;
                for (int64_t j = m; j < t; ++j) row[j] = T(0);
            }
            blas::gemm(false, false, t, dh, t, T(1), pblk, t, vp, d, T(0),
                       out.ptr() + s * t * d + h * dh, d);
        }
    }

    Tape<T>* tape = Tape<T>::active();
    bool track = tape && (q.tracked() || k.tracked() || v.tracked());
    if (tape && !track)
        for (const Tensor<T>& b : bias_vec)
            if (b.tracked()) {
                track = true;
                break;
            }
    if (tape && !track)
        for (const CableTerms<T>& tm : term_vec)
            if (tm.s.tracked() || (tm.g.defined() && tm.g.tracked())) {
                track = true;
                break;
            }
    if (track) {
        out.enable_grad();
        tape->record([q, k, v, out, bias_vec, term_vec, probs, batch, t,
                      n_heads, dh, d, inv, per_seq, causal] {
            std::vector<T> dp(static_cast<size_t>(t * t));
            std::vector<T> dl(static_cast<size_t>(t * t));
            for (int64_t s = 0; s < batch; ++s) {
                for (int64_t h = 0; h < n_heads; ++h) {
                    const T* qp = q.ptr() + s * t * d + h * dh;
                    const T* kp = k.ptr() + s * t * d + h * dh;
                    const T* vp = v.ptr() + s * t * d + h * dh;
                    const T* pblk = probs->data() + (s * n_heads + h) * t * t;
                    const T* go = out.grad_ptr() + s * t * d + h * dh;
                    // dP = dO V^T
                    blas::gemm(false, true, t, t, dh, T(1), go, d, vp, d, T(0),
                               dp.data(), t);
                    if (v.tracked())  // dV += P^T dO
                        blas::gemm(true, false, t, dh, t, T(1), pblk, t, go, d,
                                   T(1), v.grad_ptr() + s * t * d + h * dh, d);
                    // back through softmax; masked entries have p == 0
                    for (int64_t i = 0; i < t; ++i) {
                        const int64_t m = causal ? i + 1 : t;
                        T dot = T(0);
                        for (int64_t j = 0; j < m; ++j)
                            dot += dp[static_cast<size_t>(i * t + j)] *
                                   pblk[i * t + j];
                        for (int64_t j = 0; j < m; ++j)
                            dl[static_cast<size_t>(i * t + j)] =
                                pblk[i * t + j] *
                                (dp[static_cast<size_t>(i * t + j)] - dot);
                        for (int64_t j = m; j < t; ++j)
                            dl[static_cast<size_t>(i * t + j)] = T(0);
                    }
                    if (!bias_vec.empty()) {
                        const Tensor<T>& b = bias_vec[static_cast<size_t>(
                            per_seq ? s * n_heads + h : h)];
                        if (b.tracked()) {
                            T* bg = b.grad_ptr();
                            if (causal)
                                for (int64_t i = 0; i < t; ++i)
                                    for (int64_t j = 0; j <= i; ++j)
                                        bg[i * t + j] +=
                                            dl[static_cast<size_t>(i * t + j)];
                            else
                                for (int64_t i = 0; i < t * t; ++i)
                                    bg[i] += dl[static_cast<size_t>(i)];
                        }
                    }
                    if (!term_vec.empty()) {
                        const auto& tm =
                            term_vec[static_cast<size_t>(s * n_heads + h)];
                        const bool s_tr = tm.s.tracked();
                        const bool g_tr = tm.g.defined() && tm.g.tracked();
                        if (s_tr || g_tr) {
                            const T* sv = tm.s.ptr();
                            const T* gv = tm.g.defined() ? tm.g.ptr() : nullptr;
                            T* sgr = s_tr ? tm.s.grad_ptr() : nullptr;
                            T* ggr = g_tr ? tm.g.grad_ptr() : nullptr;
                            for (int64_t i = 0; i < t; ++i) {
                                const T gi = gv ? gv[i] : T(1);
                                const T si = sv[i];
                                const int64_t m = causal ? i + 1 : t;
                                T dsi = T(0), dgi = T(0);
                                for (int64_t j = 0; j < m; ++j) {
                                    if (j == i) continue;
                                    const T go =
                                        dl[static_cast<size_t>(i * t + j)];
                                    if (go == T(0)) continue;
                                    if (sgr) sgr[j] += go * gi;
                                    dsi -= go * gi;
                                    dgi += go * (sv[j] - si);
                                }
                                if (sgr) sgr[i] += dsi;
                                if (ggr) ggr[i] += dgi;
                            }
                        }
                    }
                    if (q.tracked())  // dQ += dL K / sqrt(dh)
                        blas::gemm(false, false, t, dh, t, inv, dl.data(), t,
                                   kp, d, T(1),
                                   q.grad_ptr() + s * t * d + h * dh, d);
                    if (k.tracked())  // dK += dL^T Q / sqrt(dh)
                        blas::gemm(true, false, t, dh, t, inv, dl.data(), t,
                                   qp, d, T(1),
                                   k.grad_ptr() + s * t * d + h * dh, d);
                }
            }
        });
    }
    return out;
}

// Per-head additive bias matrices for one sequence's key-side inputs
// k_proj = [t x d_model]. Empty for non-additive kinds. With causal_only the
// CABLE matrices carry exact zeros above the diagonal (cheaper to build);
// full attention never reads that region under a causal mask.
template <typename T>
std::vector<Tensor<T>> additive_bias_matrices(const Tensor<T>& k_proj,
                                              const AttentionLayer<T>& layer,
                                              int64_t t,
                                              bool causal_only = false) {
    std::vector<Tensor<T>> biases;
    const int64_t dh = layer.d_head;
    switch (layer.kind) {
        case PosencKind::kCable:
            for (int64_t h = 0; h < layer.n_heads; ++h)
                biases.push_back(cable_bias(
                    block(k_proj, 0, t, h * dh, dh),
                    layer.cable[static_cast<size_t>(h)], causal_only));
            break;
        case PosencKind::kAlibi:
            for (int64_t h = 0; h < layer.n_heads; ++h)
                biases.push_back(
                    alibi_bias(t, layer.alibi[static_cast<size_t>(h)]));
            break;
        case PosencKind::kKerple:
            for (int64_t h = 0; h < layer.n_heads; ++h) {
                const auto& kp = layer.kerple[static_cast<size_t>(h)];
                biases.push_back(kerple_log_bias(t, softplus(kp.pre_r1),
                                                 softplus(kp.pre_r2)));
            }
            break;
        case PosencKind::kT5:
            for (int64_t h = 0; h < layer.n_heads; ++h)
                biases.push_back(
                    t5_bias(t, layer.t5_tables[static_cast<size_t>(h)]));
            break;
        case PosencKind::kFire:
            for (int64_t h = 0; h < layer.n_heads; ++h)
                biases.push_back(
                    fire_bias(t, layer.fire[static_cast<size_t>(h)]));
            break;
        default:
            break;
    }
    return biases;
}

// Full attention over a batch of equal-length sequences packed row-major
// into [batch*t x d_model].
template <typename T>
Tensor<T> attend_batch(const Tensor<T>& x, const AttentionLayer<T>& layer,
                       int64_t batch, int64_t t, bool causal = true) {
    detail::require(x.ndim() == 2 && x.dim(0) == batch * t &&
                        x.dim(1) == layer.d_model(),
                    "attend: input must be [batch*t x d_model]");
    Tensor<T> q = matmul(x, layer.w_q);
    Tensor<T> k = matmul(x, layer.w_k);
    Tensor<T> v = matmul(x, layer.w_v);
    if (layer.kind == PosencKind::kRope) {
        q = rope_rotate_heads(q, layer.n_heads, t, layer.rope_theta);
        k = rope_rotate_heads(k, layer.n_heads, t, layer.rope_theta);
    }
    std::vector<Tensor<T>> biases;
    std::vector<CableTerms<T>> terms;
    if (is_additive(layer.kind)) {
        if (layer.kind == PosencKind::kCable) {
            // content-aware: one delta per (sequence, head)
            bool any_kern = false;
            for (const auto& hp : layer.cable)
                any_kern =
                    any_kern || hp.variant == CableVariant::kKernelized;
            if (any_kern)
                biases = cable_bias_batch(k, layer.cable, batch, t, causal);
            else
                terms = cable_stream_scalars(k, layer.cable, batch, t);
        } else {
            biases = additive_bias_matrices(k, layer, t);  // shared over batch
        }
    }
    Tensor<T> mixed = masked_multihead_attention(
        q, k, v, std::span<const Tensor<T>>(biases), batch, t, layer.n_heads,
        causal, std::span<const CableTerms<T>>(terms));
    return matmul(mixed, layer.w_o);
}

template <typename T>
Tensor<T> attend_full(const Tensor<T>& x, const AttentionLayer<T>& layer,
                      bool causal = true) {
    return attend_batch(x, layer, 1, x.dim(0), causal);
}

// ---------------------------------------------------------------------------
// Streaming decode cache

template <typename T>
struct StreamState {
    int64_t capacity = 0;
    int64_t n_heads = 0;
    int64_t d_head = 0;
    int64_t pos = 0;          // tokens consumed so far
    std::vector<T> k_cache;   // [h][capacity][d_head]
    std::vector<T> v_cache;   // [h][capacity][d_head]
    std::vector<T> s_cache;   // [h][capacity], cumulative contributions
    std::vector<T> g_cache;   // [h][capacity], per-token scales

    StreamState() = default;
    StreamState(int64_t cap, int64_t heads, int64_t dh)
        : capacity(cap), n_heads(heads), d_head(dh) {
        if (cap <= 0) throw ArgumentError("stream: capacity must be positive");
        k_cache.assign(static_cast<size_t>(heads * cap * dh), T(0));
        v_cache.assign(static_cast<size_t>(heads * cap * dh), T(0));
        s_cache.assign(static_cast<size_t>(heads * cap), T(0));
        g_cache.assign(static_cast<size_t>(heads * cap), T(0));
    }
};

namespace detail {

template <typename T>
T dot_n(const T* a, const T* b, int64_t n) {
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T fire_entry(const FireHeadParams<T>& p, int64_t i, int64_t j) {
    const T c = static_cast<T>(p.c);
    const T l = softplus_val(p.pre_l.ptr()[0]);
    const T fi = static_cast<T>(i);
    T denom = std::log(c * (l > fi ? l : fi) + T(1));
    T arg = std::log(c * static_cast<T>(i - j) + T(1)) / denom;
    const int64_t hidden = p.b1.dim(0);
    T acc = p.b2.ptr()[0];
    for (int64_t m = 0; m < hidden; ++m)
        acc += gelu_val(arg * p.w1.ptr()[m] + p.b1.ptr()[m]) * p.w2.ptr()[m];
    return acc;
}

}  // namespace detail

// One decode step: project the new token, extend the caches, and attend to
// everything seen so far. Work for the bias row is O(t) on top of the O(1)
// update of the cumulative sum, never a recompute of past contributions.
template <typename T>
std::vector<T> attend_step(StreamState<T>& state, const std::vector<T>& x,
                           const AttentionLayer<T>& layer) {
    const int64_t d = layer.d_model(), dh = layer.d_head, H = layer.n_heads;
    if (static_cast<int64_t>(x.size()) != d)
        throw ShapeError("attend_step: input must be d_model");
    if (state.pos >= state.capacity)
        throw CapacityError("attend_step: cache of " +
                            std::to_string(state.capacity) + " is full");
    const int64_t i = state.pos;
    const T inv = T(1) / std::sqrt(static_cast<T>(dh));

    std::vector<T> q(static_cast<size_t>(d)), k(static_cast<size_t>(d)),
        v(static_cast<size_t>(d)), mixed(static_cast<size_t>(d));
    blas::gemv(true, d, d, T(1), layer.w_q.ptr(), d, x.data(), T(0), q.data());
    blas::gemv(true, d, d, T(1), layer.w_k.ptr(), d, x.data(), T(0), k.data());
    blas::gemv(true, d, d, T(1), layer.w_v.ptr(), d, x.data(), T(0), v.data());

    std::vector<T> logits(static_cast<size_t>(i + 1));
    for (int64_t h = 0; h < H; ++h) {
        T* qh = q.data() + h * dh;
        T* kh = k.data() + h * dh;
        const T* vh = v.data() + h * dh;

        if (layer.kind == PosencKind::kRope) {
            // rotate in place at this absolute position
            for (int64_t c = 0; c < dh / 2; ++c) {
                const double freq = std::pow(
                    layer.rope_theta,
                    -2.0 * static_cast<double>(c) / static_cast<double>(dh));
                const T cs = static_cast<T>(std::cos(static_cast<double>(i) * freq));
                const T sn = static_cast<T>(std::sin(static_cast<double>(i) * freq));
                T a = qh[2 * c], b = qh[2 * c + 1];
                qh[2 * c] = cs * a - sn * b;
                qh[2 * c + 1] = sn * a + cs * b;
                a = kh[2 * c], b = kh[2 * c + 1];
                kh[2 * c] = cs * a - sn * b;
                kh[2 * c + 1] = sn * a + cs * b;
            }
        }

        T* kc = state.k_cache.data() + (h * state.capacity + i) * dh;
        T* vc = state.v_cache.data() + (h * state.capacity + i) * dh;
        std::copy(kh, kh + dh, kc);
        std::copy(vh, vh + dh, vc);

        T g_i = T(1);
        if (layer.kind == PosencKind::kCable) {
            const auto& cp = layer.cable[static_cast<size_t>(h)];
            T f_pre = detail::dot_n(kh, cp.w_c.ptr(), dh);
            T f = f_pre > T(0) ? f_pre : T(0);
            T s_prev = i > 0 ? state.s_cache[static_cast<size_t>(h * state.capacity + i - 1)]
                             : T(0);
            T s_i = s_prev + f;
            state.s_cache[static_cast<size_t>(h * state.capacity + i)] = s_i;
            if (cp.variant != CableVariant::kNoWeights)
                g_i = softplus_val(detail::dot_n(kh, cp.w_s.ptr(), dh));
            state.g_cache[static_cast<size_t>(h * state.capacity + i)] = g_i;
            if (!std::isfinite(s_i) || !std::isfinite(g_i))
                throw NumericError("attend_step: non-finite bias state");
        }

        T kr1 = T(0), kr2 = T(0);
        if (layer.kind == PosencKind::kKerple) {
            const auto& kp = layer.kerple[static_cast<size_t>(h)];
            kr1 = softplus_val(kp.pre_r1.ptr()[0]);
            kr2 = softplus_val(kp.pre_r2.ptr()[0]);
        }

        const T* kcache = state.k_cache.data() + h * state.capacity * dh;
        for (int64_t j = 0; j <= i; ++j) {
            T l = detail::dot_n(qh, kcache + j * dh, dh) * inv;
            switch (layer.kind) {
                case PosencKind::kCable: {
                    const T s_i = state.s_cache[static_cast<size_t>(h * state.capacity + i)];
                    const T s_j = state.s_cache[static_cast<size_t>(h * state.capacity + j)];
                    const T b = g_i * (s_i - s_j);
                    l += layer.cable[static_cast<size_t>(h)].variant ==
                                 CableVariant::kKernelized
                             ? -std::log(b * b + T(1))
                             : -b;
                    break;
                }
                case PosencKind::kAlibi:
                    l += -layer.alibi[static_cast<size_t>(h)] *
                         static_cast<T>(i - j);
                    break;
                case PosencKind::kKerple:
                    l += -kr1 * std::log1p(kr2 * static_cast<T>(i - j));
                    break;
                case PosencKind::kT5: {
                    const Tensor<T>& table =
                        layer.t5_tables[static_cast<size_t>(h)];
                    const int64_t buckets = table.dim(0) - 1;
                    const int64_t dist = i - j;
                    l += table.ptr()[dist < buckets ? dist : buckets];
                    break;
                }
                case PosencKind::kFire:
                    l += detail::fire_entry(layer.fire[static_cast<size_t>(h)],
                                            i, j);
                    break;
                default:
                    break;
            }
            logits[static_cast<size_t>(j)] = l;
        }

        T mx = logits[0];
        for (int64_t j = 1; j <= i; ++j)
            mx = std::max(mx, logits[static_cast<size_t>(j)]);
        T sum = T(0);
        for (int64_t j = 0; j <= i; ++j) {
            logits[static_cast<size_t>(j)] =
                std::exp(logits[static_cast<size_t>(j)] - mx);
            sum += logits[static_cast<size_t>(j)];
        }
        const T norm = T(1) / sum;
        const T* vcache = state.v_cache.data() + h * state.capacity * dh;
        T* oh = mixed.data() + h * dh;
        std::fill(oh, oh + dh, T(0));
        for (int64_t j = 0; j <= i; ++j) {
            const T w = logits[static_cast<size_t>(j)] * norm;
            const T* vr = vcache + j * dh;
            for (int64_t c = 0; c < dh; ++c) oh[c] += w * vr[c];
        }
    }
    state.pos += 1;

    std::vector<T> out(static_cast<size_t>(d));
    blas::gemv(true, d, d, T(1), layer.w_o.ptr(), d, mixed.data(), T(0),
               out.data());
    return out;
}

// Introspection used by the bias dumper and tests: per-head [t x t]
// matrices of either the additive delta (additive kinds) or the scaled,
// rotation-aware q.k logits (everything else). Tape-free.
template <typename T>
std::vector<Tensor<T>> attention_introspect(const Tensor<T>& x,
                                            const AttentionLayer<T>& layer) {
    const int64_t t = x.dim(0), dh = layer.d_head;
    Tensor<T> k = matmul(x, layer.w_k);
    if (is_additive(layer.kind)) return additive_bias_matrices(k, layer, t);
    Tensor<T> q = matmul(x, layer.w_q);
    if (layer.kind == PosencKind::kRope) {
        q = rope_rotate_heads(q, layer.n_heads, t, layer.rope_theta);
        k = rope_rotate_heads(k, layer.n_heads, t, layer.rope_theta);
    }
    std::vector<Tensor<T>> out;
    const T inv = T(1) / std::sqrt(static_cast<T>(dh));
    for (int64_t h = 0; h < layer.n_heads; ++h) {
        Tensor<T> qh = block(q, 0, t, h * dh, dh);
        Tensor<T> kh = block(k, 0, t, h * dh, dh);
        out.push_back(scale(matmul(qh, transpose(kh)), inv));
    }
    return out;
}

}  // namespace cable
