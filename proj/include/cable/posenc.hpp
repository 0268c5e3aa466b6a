#pragma once

// Positional encodings. The additive families (CABLE, ALiBi, Kerple-log,
// T5 buckets, Fire) produce per-head [t x t] logit deltas that attention
// adds after q.k scaling; RoPE rotates q/k in place; APE variants act on
// the embeddings and contribute nothing here.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cable/ops.hpp"
#include "cable/tensor.hpp"

namespace cable {

enum class PosencKind {
    kCable,
    kAlibi,
    kKerple,
    kFire,
    kT5,
    kRope,
    kSinusoidal,
    kLearnable,
    kNope,
};

enum class CableVariant { kFull, kNoWeights, kKernelized };

struct PosencSelector {
    PosencKind kind;
    CableVariant variant;  // meaningful only for kCable
};

inline PosencSelector parse_posenc(const std::string& name) {
    if (name == "cable") return {PosencKind::kCable, CableVariant::kFull};
    if (name == "cable-nw")
        return {PosencKind::kCable, CableVariant::kNoWeights};
    if (name == "kcable")
        return {PosencKind::kCable, CableVariant::kKernelized};
    if (name == "alibi") return {PosencKind::kAlibi, CableVariant::kFull};
    if (name == "kerple") return {PosencKind::kKerple, CableVariant::kFull};
    if (name == "fire") return {PosencKind::kFire, CableVariant::kFull};
    if (name == "t5") return {PosencKind::kT5, CableVariant::kFull};
    if (name == "rope") return {PosencKind::kRope, CableVariant::kFull};
    if (name == "sinusoidal")
        return {PosencKind::kSinusoidal, CableVariant::kFull};
    if (name == "learnable")
        return {PosencKind::kLearnable, CableVariant::kFull};
    if (name == "nope") return {PosencKind::kNope, CableVariant::kFull};
    throw ConfigError("unknown positional encoding: " + name);
}

inline std::string posenc_name(PosencKind kind, CableVariant variant) {
    switch (kind) {
        case PosencKind::kCable:
            return variant == CableVariant::kFull        ? "cable"
                   : variant == CableVariant::kNoWeights ? "cable-nw"
                                                         : "kcable";
        case PosencKind::kAlibi: return "alibi";
        case PosencKind::kKerple: return "kerple";
        case PosencKind::kFire: return "fire";
        case PosencKind::kT5: return "t5";
        case PosencKind::kRope: return "rope";
        case PosencKind::kSinusoidal: return "sinusoidal";
        case PosencKind::kLearnable: return "learnable";
        case PosencKind::kNope: return "nope";
    }
    return "?";
}

inline bool is_additive(PosencKind k) {
    return k == PosencKind::kCable || k == PosencKind::kAlibi ||
           k == PosencKind::kKerple || k == PosencKind::kFire ||
           k == PosencKind::kT5;
}

// ---------------------------------------------------------------------------
// CABLE

template <typename T>
struct CableHeadParams {
    Tensor<T> w_c;  // [d_head], drives per-token bias contributions
    Tensor<T> w_s;  // [d_head], drives per-query scale (unused by NoWeights)
    CableVariant variant = CableVariant::kFull;
};

// Fused map from cumulative contributions S and query scales g to the logit
// delta. delta[i][j] uses only S_i, S_j and g_i, so a streaming decoder can
// reproduce row i from cached scalars. Diagonal entries are exactly zero and
// the upper triangle, while defined, carries no gradient unless attended to.
template <typename T>
Tensor<T> cable_logit_delta(const Tensor<T>& s, const Tensor<T>& g,
                            CableVariant variant, bool causal_only = false) {
    detail::require(s.ndim() == 1, "cable delta: S must be 1-d");
    const int64_t t = s.dim(0);
    const bool weighted = variant != CableVariant::kNoWeights;
    if (weighted)
        detail::require(g.defined() && g.shape() == s.shape(),
                        "cable delta: g must match S");
    Tensor<T> out = Tensor<T>::uninit({t, t});
    const T* ps = s.ptr();
    const T* pg = weighted ? g.ptr() : nullptr;
    T* po = out.ptr();
    for (int64_t i = 0; i < t; ++i) {
        const T gi = weighted ? pg[i] : T(1);
        const int64_t jend = causal_only ? i : t;
        for (int64_t j = 0; j < jend; ++j) {
            if (i == j) {
                po[i * t + j] = T(0);
                continue;
            }
            T b = gi * (ps[i] - ps[j]);
            po[i * t + j] = variant == CableVariant::kKernelized
                                ? -std::log(b * b + T(1))
                                : -b;
        }
        for (int64_t j = jend; j < t; ++j) po[i * t + j] = T(0);
    }
    Tape<T>* tape =
        weighted ? grads_wanted<T>({&s, &g}) : grads_wanted<T>({&s});
    if (tape) {
        out.enable_grad();
        tape->record([s, g, out, t, variant, weighted, causal_only] {
            const T* gout = out.grad_ptr();
            const T* ps2 = s.ptr();
            const T* pg2 = weighted ? g.ptr() : nullptr;
            T* sg = s.tracked() ? s.grad_ptr() : nullptr;
            T* gg = weighted && g.tracked() ? g.grad_ptr() : nullptr;
            for (int64_t i = 0; i < t; ++i) {
                const T gi = weighted ? pg2[i] : T(1);
                const int64_t jend = causal_only ? i : t;
                for (int64_t j = 0; j < jend; ++j) {
                    if (i == j) continue;
                    const T go = gout[i * t + j];
                    if (go == T(0)) continue;
                    const T raw = ps2[i] - ps2[j];
                    if (variant == CableVariant::kKernelized) {
                        const T b = gi * raw;
                        const T c = -T(2) * b / (b * b + T(1)) * go;
                        if (sg) {
                            sg[i] += c * gi;
                            sg[j] -= c * gi;
                        }
                        if (gg) gg[i] += c * raw;
                    } else {
                        if (sg) {
                            sg[i] -= gi * go;
                            sg[j] += gi * go;
                        }
                        if (gg) gg[i] -= raw * go;
                    }
                }
            }
        });
    }
    return out;
}

// Full CABLE bias from the head's post-projection key-side inputs:
// f = relu(X w_c), S = running sum of f, g = softplus(X w_s),
// delta[i][j] = -(g_i (S_i - S_j)) (or its kernelized form).
template <typename T>
Tensor<T> cable_bias(const Tensor<T>& x_head, const CableHeadParams<T>& p,
                     bool causal_only = false) {
    detail::require(x_head.ndim() == 2, "cable_bias: input must be [t x d_head]");
    const int64_t dh = x_head.dim(1);
    detail::require(p.w_c.ndim() == 1 && p.w_c.dim(0) == dh,
                    "cable_bias: w_c must be [d_head]");
    Tensor<T> f = relu(matmul(x_head, p.w_c.reshaped({dh, 1})).reshaped({x_head.dim(0)}));
    Tensor<T> s = prefix_sum(f, true);
    Tensor<T> g;
    if (p.variant != CableVariant::kNoWeights) {
        detail::require(p.w_s.ndim() == 1 && p.w_s.dim(0) == dh,
                        "cable_bias: w_s must be [d_head]");
        g = softplus(matmul(x_head, p.w_s.reshaped({dh, 1})).reshaped({x_head.dim(0)}));
    }
    Tensor<T> delta = cable_logit_delta(s, g, p.variant, causal_only);
    const int64_t t = delta.dim(0);
    const T* pd = delta.ptr();
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < (causal_only ? i : t); ++j)
            if (!std::isfinite(pd[i * t + j]))
                throw NumericError("cable_bias: non-finite bias value");
    return delta;
}

namespace detail {

// Shared forward plumbing for the batched CABLE paths: per-head vectors
// embedded as block-diagonal [d x H] columns, the two pre-activation GEMMs,
// softplus scales and the per-(sequence, head) running sums of relu(fpre).
// All flat buffers are [rows x H], row-major.
template <typename T>
struct CablePre {
    int64_t n_heads = 0, d = 0, dh = 0, rows = 0;
    bool any_weighted = false;
    Tensor<T> wc_mat, ws_mat;
    std::shared_ptr<Buf<T>> fpre, gpre, gval, scum;
};

template <typename T>
CablePre<T> cable_pre(const Tensor<T>& k_proj,
                      const std::vector<CableHeadParams<T>>& heads,
                      int64_t batch, int64_t t) {
    CablePre<T> pre;
    pre.n_heads = static_cast<int64_t>(heads.size());
    require(k_proj.ndim() == 2 && pre.n_heads > 0 &&
                k_proj.dim(1) % pre.n_heads == 0,
            "cable batch: input must be [batch*t x d_model]");
    require(batch > 0 && t > 0 && k_proj.dim(0) == batch * t,
            "cable batch: rows != batch * t");
    pre.d = k_proj.dim(1);
    pre.dh = pre.d / pre.n_heads;
    pre.rows = batch * t;
    const int64_t n_heads = pre.n_heads, d = pre.d, dh = pre.dh,
                  rows = pre.rows;
    for (const auto& hp : heads) {
        require(hp.w_c.ndim() == 1 && hp.w_c.dim(0) == dh,
                "cable batch: w_c must be [d_head]");
        if (hp.variant != CableVariant::kNoWeights) {
            require(hp.w_s.ndim() == 1 && hp.w_s.dim(0) == dh,
                    "cable batch: w_s must be [d_head]");
            pre.any_weighted = true;
        }
    }

    pre.wc_mat = Tensor<T>({d, n_heads}, T(0));
    if (pre.any_weighted) pre.ws_mat = Tensor<T>({d, n_heads}, T(0));
    for (int64_t h = 0; h < n_heads; ++h) {
        const auto& hp = heads[static_cast<size_t>(h)];
        for (int64_t c = 0; c < dh; ++c)
            pre.wc_mat.ptr()[(h * dh + c) * n_heads + h] = hp.w_c.ptr()[c];
        if (hp.variant != CableVariant::kNoWeights)
            for (int64_t c = 0; c < dh; ++c)
                pre.ws_mat.ptr()[(h * dh + c) * n_heads + h] = hp.w_s.ptr()[c];
    }

    pre.fpre = make_buffer<T>(rows * n_heads, false);
    blas::gemm(false, false, rows, n_heads, d, T(1), k_proj.ptr(), d,
               pre.wc_mat.ptr(), n_heads, T(0), pre.fpre->data(), n_heads);
    if (pre.any_weighted) {
        pre.gpre = make_buffer<T>(rows * n_heads, false);
        blas::gemm(false, false, rows, n_heads, d, T(1), k_proj.ptr(), d,
                   pre.ws_mat.ptr(), n_heads, T(0), pre.gpre->data(), n_heads);
        pre.gval = make_buffer<T>(rows * n_heads, false);
        for (int64_t i = 0; i < rows * n_heads; ++i)
            pre.gval->data()[i] = softplus_val(pre.gpre->data()[i]);
    }

    // inclusive running sums of f = relu(fpre), per sequence and head
    pre.scum = make_buffer<T>(rows * n_heads, false);
    {
        std::vector<T> acc(static_cast<size_t>(n_heads));
        const T* fp = pre.fpre->data();
        T* sp = pre.scum->data();
        for (int64_t s = 0; s < batch; ++s) {
            std::fill(acc.begin(), acc.end(), T(0));
            for (int64_t i = 0; i < t; ++i)
                for (int64_t h = 0; h < n_heads; ++h) {
                    const int64_t idx = (s * t + i) * n_heads + h;
                    acc[static_cast<size_t>(h)] +=
                        fp[idx] > T(0) ? fp[idx] : T(0);
                    sp[idx] = acc[static_cast<size_t>(h)];
                }
        }
    }
    return pre;
}

// Routes accumulated pre-activation gradients back through the GEMMs to the
// packed key input and the per-head vectors.
template <typename T>
void cable_pre_backward(const CablePre<T>& pre, const Tensor<T>& k_proj,
                        const std::vector<CableHeadParams<T>>& heads,
                        const std::vector<T>& dfpre,
                        const std::vector<T>& dgpre) {
    const int64_t n_heads = pre.n_heads, d = pre.d, dh = pre.dh,
                  rows = pre.rows;
    if (k_proj.tracked()) {
        blas::gemm(false, true, rows, d, n_heads, T(1), dfpre.data(), n_heads,
                   pre.wc_mat.ptr(), n_heads, T(1), k_proj.grad_ptr(), d);
        if (pre.any_weighted)
            blas::gemm(false, true, rows, d, n_heads, T(1), dgpre.data(),
                       n_heads, pre.ws_mat.ptr(), n_heads, T(1),
                       k_proj.grad_ptr(), d);
    }
    bool any_wc = false, any_ws = false;
    for (const auto& hp : heads) {
        any_wc = any_wc || hp.w_c.tracked();
        any_ws = any_ws || (hp.variant != CableVariant::kNoWeights &&
                            hp.w_s.tracked());
    }
    std::vector<T> dw(static_cast<size_t>(d * n_heads));
    if (any_wc) {
        blas::gemm(true, false, d, n_heads, rows, T(1), k_proj.ptr(), d,
                   dfpre.data(), n_heads, T(0), dw.data(), n_heads);
        for (int64_t h = 0; h < n_heads; ++h) {
            const auto& hp = heads[static_cast<size_t>(h)];
            if (!hp.w_c.tracked()) continue;
            T* wg = hp.w_c.grad_ptr();
            for (int64_t c = 0; c < dh; ++c)
                wg[c] += dw[static_cast<size_t>((h * dh + c) * n_heads + h)];
        }
    }
    if (any_ws) {
        blas::gemm(true, false, d, n_heads, rows, T(1), k_proj.ptr(), d,
                   dgpre.data(), n_heads, T(0), dw.data(), n_heads);
        for (int64_t h = 0; h < n_heads; ++h) {
            const auto& hp = heads[static_cast<size_t>(h)];
            if (hp.variant == CableVariant::kNoWeights || !hp.w_s.tracked())
                continue;
            T* wg = hp.w_s.grad_ptr();
            for (int64_t c = 0; c < dh; ++c)
                wg[c] += dw[static_cast<size_t>((h * dh + c) * n_heads + h)];
        }
    }
}

template <typename T>
bool cable_wants_grads(Tape<T>* tape, const Tensor<T>& k_proj,
                       const std::vector<CableHeadParams<T>>& heads) {
    if (!tape) return false;
    if (k_proj.tracked()) return true;
    for (const auto& hp : heads)
        if (hp.w_c.tracked() ||
            (hp.variant != CableVariant::kNoWeights && hp.w_s.tracked()))
            return true;
    return false;
}

}  // namespace detail

// Every (sequence, head) CABLE bias for a packed batch [batch*t x d_model]
// in one fused op. The f/g pre-activations come from two GEMMs against
// block-diagonal embeddings of the per-head vectors, so the per-matrix work
// reduces to a prefix sum and a triangular fill. Returns batch*n_heads
// matrices indexed s*n_heads + h, each equal to cable_bias of that
// sequence's key slice and head.
template <typename T>
std::vector<Tensor<T>> cable_bias_batch(
    const Tensor<T>& k_proj, const std::vector<CableHeadParams<T>>& heads,
    int64_t batch, int64_t t, bool causal_only = false) {
    detail::CablePre<T> pre = detail::cable_pre(k_proj, heads, batch, t);
    const int64_t n_heads = pre.n_heads;
    const auto& gval = pre.gval;
    const auto& scum = pre.scum;

    std::vector<Tensor<T>> out;
    out.reserve(static_cast<size_t>(batch * n_heads));
    std::vector<T> scol(static_cast<size_t>(t));
    std::vector<T> gcol(static_cast<size_t>(t));
    for (int64_t s = 0; s < batch; ++s)
        for (int64_t h = 0; h < n_heads; ++h) {
            const auto& hp = heads[static_cast<size_t>(h)];
            const bool weighted = hp.variant != CableVariant::kNoWeights;
            const bool kern = hp.variant == CableVariant::kKernelized;
            Tensor<T> delta = Tensor<T>::uninit({t, t});
            const T* sp = scum->data() + s * t * n_heads + h;
            for (int64_t i = 0; i < t; ++i)
                scol[static_cast<size_t>(i)] = sp[i * n_heads];
            if (weighted) {
                const T* gp = gval->data() + s * t * n_heads + h;
                for (int64_t i = 0; i < t; ++i)
                    gcol[static_cast<size_t>(i)] = gp[i * n_heads];
            }
            T* po = delta.ptr();
            for (int64_t i = 0; i < t; ++i) {
                const T gi = weighted ? gcol[static_cast<size_t>(i)] : T(1);
                const T si = scol[static_cast<size_t>(i)];
                const int64_t jend = causal_only ? i : t;
                for (int64_t j = 0; j < jend; ++j) {
                    if (i == j) {
                        po[i * t + j] = T(0);
                        continue;
                    }
                    T b = gi * (si - scol[static_cast<size_t>(j)]);
                    po[i * t + j] = kern ? -std::log(b * b + T(1)) : -b;
                }
                for (int64_t j = jend; j < t; ++j) po[i * t + j] = T(0);
            }
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < (causal_only ? i : t); ++j)
                    if (!std::isfinite(po[i * t + j]))
                        throw NumericError("cable_bias: non-finite bias value");
            out.push_back(std::move(delta));
        }

    Tape<T>* tape = Tape<T>::active();
    if (!detail::cable_wants_grads(tape, k_proj, heads)) return out;

    for (Tensor<T>& delta : out) delta.enable_grad();
    std::vector<CableHeadParams<T>> heads_copy = heads;
    std::vector<Tensor<T>> out_copy = out;
    tape->record([k_proj, heads_copy, out_copy, pre, batch, t, n_heads,
                  causal_only] {
        const auto& gval = pre.gval;
        const auto& scum = pre.scum;
        std::vector<T> dfpre(static_cast<size_t>(pre.rows * n_heads), T(0));
        std::vector<T> dgpre;
        if (pre.any_weighted)
            dgpre.assign(static_cast<size_t>(pre.rows * n_heads), T(0));
        std::vector<T> ds(static_cast<size_t>(t));
        std::vector<T> dg(static_cast<size_t>(t));
        std::vector<T> scol(static_cast<size_t>(t));
        std::vector<T> gcol(static_cast<size_t>(t));
        for (int64_t s = 0; s < batch; ++s)
            for (int64_t h = 0; h < n_heads; ++h) {
                const auto& hp = heads_copy[static_cast<size_t>(h)];
                const bool weighted = hp.variant != CableVariant::kNoWeights;
                const bool kern = hp.variant == CableVariant::kKernelized;
                const Tensor<T>& delta =
                    out_copy[static_cast<size_t>(s * n_heads + h)];
                const T* bg = delta.grad_ptr();
                const T* sp = scum->data() + s * t * n_heads + h;
                for (int64_t i = 0; i < t; ++i)
                    scol[static_cast<size_t>(i)] = sp[i * n_heads];
                if (weighted) {
                    const T* gp = gval->data() + s * t * n_heads + h;
                    for (int64_t i = 0; i < t; ++i)
                        gcol[static_cast<size_t>(i)] = gp[i * n_heads];
                }
                std::fill(ds.begin(), ds.end(), T(0));
                if (weighted) std::fill(dg.begin(), dg.end(), T(0));
                for (int64_t i = 0; i < t; ++i) {
                    const T gi = weighted ? gcol[static_cast<size_t>(i)] : T(1);
                    const T si = scol[static_cast<size_t>(i)];
                    const int64_t jend = causal_only ? i : t;
                    for (int64_t j = 0; j < jend; ++j) {
                        if (i == j) continue;
                        const T go = bg[i * t + j];
                        if (go == T(0)) continue;
                        const T raw = si - scol[static_cast<size_t>(j)];
                        if (kern) {
                            const T b = gi * raw;
                            const T c = -T(2) * b / (b * b + T(1)) * go;
                            ds[static_cast<size_t>(i)] += c * gi;
                            ds[static_cast<size_t>(j)] -= c * gi;
                            if (weighted) dg[static_cast<size_t>(i)] += c * raw;
                        } else {
                            ds[static_cast<size_t>(i)] -= gi * go;
                            ds[static_cast<size_t>(j)] += gi * go;
                            if (weighted)
                                dg[static_cast<size_t>(i)] -= raw * go;
                        }
                    }
                }
                // through the running sum (suffix), relu mask and softplus
                const T* fp = pre.fpre->data() + s * t * n_heads + h;
                T acc = T(0);
                for (int64_t i = t - 1; i >= 0; --i) {
                    acc += ds[static_cast<size_t>(i)];
                    if (fp[i * n_heads] > T(0))
                        dfpre[static_cast<size_t>((s * t + i) * n_heads + h)] +=
                            acc;
                }
                if (weighted) {
                    const T* gpr = pre.gpre->data() + s * t * n_heads + h;
                    for (int64_t i = 0; i < t; ++i) {
                        T sg = T(1) / (T(1) + std::exp(-gpr[i * n_heads]));
                        dgpre[static_cast<size_t>((s * t + i) * n_heads + h)] +=
                            dg[static_cast<size_t>(i)] * sg;
                    }
                }
            }
        detail::cable_pre_backward(pre, k_proj, heads_copy, dfpre, dgpre);
    });
    return out;
}

// Per-(sequence, head) running-sum and scale vectors for the separable CABLE
// delta g_i (S_j - S_i). The attention core folds these into the score
// matrix directly, so no [t x t] bias is ever materialized; the kernelized
// variant is not separable and must go through cable_bias_batch. Undefined g
// means an unweighted head (g == 1). Results are indexed s*n_heads + h.
template <typename T>
struct CableTerms {
    Tensor<T> s, g;
};

template <typename T>
std::vector<CableTerms<T>> cable_stream_scalars(
    const Tensor<T>& k_proj, const std::vector<CableHeadParams<T>>& heads,
    int64_t batch, int64_t t) {
    for (const auto& hp : heads)
        detail::require(hp.variant != CableVariant::kKernelized,
                        "cable terms: kernelized delta is not separable");
    detail::CablePre<T> pre = detail::cable_pre(k_proj, heads, batch, t);
    const int64_t n_heads = pre.n_heads;

    std::vector<CableTerms<T>> out;
    out.reserve(static_cast<size_t>(batch * n_heads));
    for (int64_t s = 0; s < batch; ++s)
        for (int64_t h = 0; h < n_heads; ++h) {
            const auto& hp = heads[static_cast<size_t>(h)];
            const bool weighted = hp.variant != CableVariant::kNoWeights;
            CableTerms<T> terms;
            terms.s = Tensor<T>::uninit({t});
            const T* sp = pre.scum->data() + s * t * n_heads + h;
            T* sv = terms.s.ptr();
            for (int64_t i = 0; i < t; ++i) sv[i] = sp[i * n_heads];
            T gmax = T(1);
            if (weighted) {
                terms.g = Tensor<T>::uninit({t});
                const T* gp = pre.gval->data() + s * t * n_heads + h;
                T* gv = terms.g.ptr();
                for (int64_t i = 0; i < t; ++i) {
                    gv[i] = gp[i * n_heads];
                    gmax = std::max(gmax, gv[i]);
                }
            }
            // worst-magnitude bias this pair can produce
            if (!std::isfinite(gmax * (sv[t - 1] - sv[0])))
                throw NumericError("cable_bias: non-finite bias value");
            out.push_back(std::move(terms));
        }

    Tape<T>* tape = Tape<T>::active();
    if (!detail::cable_wants_grads(tape, k_proj, heads)) return out;

    for (auto& terms : out) {
        terms.s.enable_grad();
        if (terms.g.defined()) terms.g.enable_grad();
    }
    std::vector<CableHeadParams<T>> heads_copy = heads;
    std::vector<CableTerms<T>> out_copy = out;
    tape->record([k_proj, heads_copy, out_copy, pre, batch, t, n_heads] {
        std::vector<T> dfpre(static_cast<size_t>(pre.rows * n_heads), T(0));
        std::vector<T> dgpre;
        if (pre.any_weighted)
            dgpre.assign(static_cast<size_t>(pre.rows * n_heads), T(0));
        for (int64_t s = 0; s < batch; ++s)
            for (int64_t h = 0; h < n_heads; ++h) {
                const auto& terms =
                    out_copy[static_cast<size_t>(s * n_heads + h)];
                const T* dsv = terms.s.grad_ptr();
                const T* fp = pre.fpre->data() + s * t * n_heads + h;
                T acc = T(0);
                for (int64_t i = t - 1; i >= 0; --i) {
                    acc += dsv[i];
                    if (fp[i * n_heads] > T(0))
                        dfpre[static_cast<size_t>((s * t + i) * n_heads + h)] +=
                            acc;
                }
                if (terms.g.defined()) {
                    const T* dgv = terms.g.grad_ptr();
                    const T* gpr = pre.gpre->data() + s * t * n_heads + h;
                    for (int64_t i = 0; i < t; ++i) {
                        T sg = T(1) / (T(1) + std::exp(-gpr[i * n_heads]));
                        dgpre[static_cast<size_t>((s * t + i) * n_heads + h)] +=
                            dgv[i] * sg;
                    }
                }
            }
        detail::cable_pre_backward(pre, k_proj, heads_copy, dfpre, dgpre);
    });
    return out;
}

// ---------------------------------------------------------------------------
// ALiBi

inline std::vector<double> alibi_slopes(int64_t n_heads) {
    if (n_heads <= 0) throw ArgumentError("alibi: need at least one head");
    std::vector<double> slopes(static_cast<size_t>(n_heads));
    const bool pow2 = (n_heads & (n_heads - 1)) == 0;
    for (int64_t h = 0; h < n_heads; ++h)
        slopes[static_cast<size_t>(h)] =
            pow2 ? std::pow(2.0, -static_cast<double>(h + 1))
                 : std::pow(2.0, -8.0 * static_cast<double>(h + 1) /
                                     static_cast<double>(n_heads));
    return slopes;
}

template <typename T>
Tensor<T> alibi_bias(int64_t t, T slope) {
    Tensor<T> out = Tensor<T>::uninit({t, t});
    T* po = out.ptr();
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < t; ++j)
            po[i * t + j] = -slope * static_cast<T>(i > j ? i - j : j - i);
    return out;
}

// ---------------------------------------------------------------------------
// Kerple (logarithmic variant)

template <typename T>
struct KerpleHeadParams {
    Tensor<T> pre_r1;  // [1]; r1 = softplus(pre_r1) keeps it positive
    Tensor<T> pre_r2;  // [1]
};

// bias[i][j] = -r1 * log(1 + r2 * |i - j|), r1/r2 already positive here.
template <typename T>
Tensor<T> kerple_log_bias(int64_t t, const Tensor<T>& r1, const Tensor<T>& r2) {
    detail::require(r1.numel() == 1 && r2.numel() == 1,
                    "kerple: r1/r2 must be scalars");
    const T v1 = r1.ptr()[0], v2 = r2.ptr()[0];
    Tensor<T> out = Tensor<T>::uninit({t, t});
    T* po = out.ptr();
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < t; ++j) {
            T d = static_cast<T>(i > j ? i - j : j - i);
            po[i * t + j] = -v1 * std::log1p(v2 * d);
        }
    if (auto* tape = grads_wanted<T>({&r1, &r2})) {
        out.enable_grad();
        tape->record([r1, r2, out, t, v1, v2] {
            const T* gout = out.grad_ptr();
            T d1 = T(0), d2 = T(0);
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < t; ++j) {
                    const T go = gout[i * t + j];
                    if (go == T(0)) continue;
                    T d = static_cast<T>(i > j ? i - j : j - i);
                    d1 += -std::log1p(v2 * d) * go;
                    d2 += -v1 * d / (T(1) + v2 * d) * go;
                }
            if (r1.tracked()) r1.grad()[0] += d1;
            if (r2.tracked()) r2.grad()[0] += d2;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// T5 relative bias buckets

inline std::vector<int32_t> t5_bucket_ids(int64_t t, int64_t n_buckets) {
    std::vector<int32_t> ids(static_cast<size_t>(t * t));
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < t; ++j) {
            int64_t d = i - j;
            if (d < 0) d = 0;  // future keys are masked anyway
            ids[static_cast<size_t>(i * t + j)] =
                static_cast<int32_t>(d < n_buckets ? d : n_buckets);
        }
    return ids;
}

// table has n_buckets+1 entries; distances >= n_buckets share the last one.
template <typename T>
Tensor<T> t5_bias(int64_t t, const Tensor<T>& table) {
    detail::require(table.ndim() == 1 && table.dim(0) >= 2,
                    "t5: table must be 1-d with at least 2 entries");
    const int64_t n_buckets = table.dim(0) - 1;
    auto ids = t5_bucket_ids(t, n_buckets);
    Tensor<T> col = embedding_lookup(table.reshaped({n_buckets + 1, 1}), ids);
    return col.reshaped({t, t});
}

// ---------------------------------------------------------------------------
// Fire (functional interpolation, progressive normalization)

template <typename T>
struct FireHeadParams {
    Tensor<T> w1;     // [1 x hidden]
    Tensor<T> b1;     // [hidden]
    Tensor<T> w2;     // [hidden x 1]
    Tensor<T> b2;     // [1]
    Tensor<T> pre_l;  // [1]; L = softplus(pre_l)
    double c = 1.0;   // fixed log-transform coefficient
};

// arg[i][j] = psi(i - j) / psi(max(L, i)) with psi(x) = log(c x + 1).
// L is a learnable positive length; beyond it the normalizer follows the
// query position, which is what lets the MLP extrapolate.
template <typename T>
Tensor<T> fire_argument(int64_t t, const Tensor<T>& l_pos, T c) {
    detail::require(l_pos.numel() == 1, "fire: L must be a scalar");
    const T lv = l_pos.ptr()[0];
    auto psi = [c](T x) { return std::log(c * x + T(1)); };
    Tensor<T> out = Tensor<T>::uninit({t, t});
    T* po = out.ptr();
    for (int64_t i = 0; i < t; ++i) {
        const T fi = static_cast<T>(i);
        const T denom = psi(lv > fi ? lv : fi);
        for (int64_t j = 0; j < t; ++j) {
            T d = static_cast<T>(i > j ? i - j : 0);
            po[i * t + j] = psi(d) / denom;
        }
    }
    if (auto* tape = grads_wanted<T>({&l_pos})) {
        out.enable_grad();
        tape->record([l_pos, out, t, c, lv, psi] {
            const T* gout = out.grad_ptr();
            const T* pv = out.ptr();
            T dl = T(0);
            const T dpsi_l = c / (c * lv + T(1));
            for (int64_t i = 0; i < t; ++i) {
                const T fi = static_cast<T>(i);
                if (!(lv > fi)) continue;  // normalizer pinned to position i
                const T denom = psi(lv);
                for (int64_t j = 0; j < t; ++j) {
                    const T go = gout[i * t + j];
                    if (go == T(0)) continue;
                    dl += -pv[i * t + j] / denom * dpsi_l * go;
                }
            }
            l_pos.grad()[0] += dl;
        });
    }
    return out;
}

template <typename T>
Tensor<T> fire_bias(int64_t t, const FireHeadParams<T>& p) {
    Tensor<T> l = softplus(p.pre_l);
    Tensor<T> arg = fire_argument(t, l, static_cast<T>(p.c));
    Tensor<T> h = gelu(add_rowvec(matmul(arg.reshaped({t * t, 1}), p.w1), p.b1));
    Tensor<T> o = add_rowvec(matmul(h, p.w2), p.b2);
    return o.reshaped({t, t});
}

// ---------------------------------------------------------------------------
// RoPE

// Rotates each even/odd channel pair of row r by angle
// (start_pos + r) * theta^(-2k/d). Works on a per-head [t x d_head] matrix.
template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, double theta, int64_t start_pos = 0) {
    detail::require(x.ndim() == 2 && x.dim(1) % 2 == 0,
                    "rope: need [t x even] input");
    const int64_t t = x.dim(0), d = x.dim(1);
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < t; ++r) {
        const double pos = static_cast<double>(start_pos + r);
        for (int64_t k = 0; k < d / 2; ++k) {
            const double freq =
                std::pow(theta, -2.0 * static_cast<double>(k) /
                                    static_cast<double>(d));
            const T cs = static_cast<T>(std::cos(pos * freq));
            const T sn = static_cast<T>(std::sin(pos * freq));
            const T a = px[r * d + 2 * k];
            const T b = px[r * d + 2 * k + 1];
            po[r * d + 2 * k] = cs * a - sn * b;
            po[r * d + 2 * k + 1] = sn * a + cs * b;
        }
    }
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, t, d, theta, start_pos] {
            const T* g = out.grad_ptr();
            T* xg = x.grad_ptr();
            for (int64_t r = 0; r < t; ++r) {
                const double pos = static_cast<double>(start_pos + r);
                for (int64_t k = 0; k < d / 2; ++k) {
                    const double freq =
                        std::pow(theta, -2.0 * static_cast<double>(k) /
                                            static_cast<double>(d));
                    const T cs = static_cast<T>(std::cos(pos * freq));
                    const T sn = static_cast<T>(std::sin(pos * freq));
                    const T ga = g[r * d + 2 * k];
                    const T gb = g[r * d + 2 * k + 1];
                    xg[r * d + 2 * k] += cs * ga + sn * gb;
                    xg[r * d + 2 * k + 1] += -sn * ga + cs * gb;
                }
            }
        });
    }
    return out;
}

// Same rotation applied head-block by head-block across a [rows x d_model]
// matrix whose rows cycle through positions 0..t-1 (batched layout).
template <typename T>
Tensor<T> rope_rotate_heads(const Tensor<T>& x, int64_t n_heads, int64_t t,
                            double theta) {
    detail::require(x.ndim() == 2 && x.dim(1) % n_heads == 0,
                    "rope: d_model must split across heads");
    const int64_t rows = x.dim(0), d = x.dim(1), dh = d / n_heads;
    detail::require(dh % 2 == 0, "rope: d_head must be even");
    detail::require(rows % t == 0, "rope: rows must be a multiple of t");
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    std::vector<double> freqs(static_cast<size_t>(dh / 2));
    for (int64_t k = 0; k < dh / 2; ++k)
        freqs[static_cast<size_t>(k)] =
            std::pow(theta, -2.0 * static_cast<double>(k) /
                                static_cast<double>(dh));
    for (int64_t r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(r % t);
        for (int64_t h = 0; h < n_heads; ++h) {
            const int64_t base = r * d + h * dh;
            for (int64_t k = 0; k < dh / 2; ++k) {
                const T cs = static_cast<T>(std::cos(pos * freqs[static_cast<size_t>(k)]));
                const T sn = static_cast<T>(std::sin(pos * freqs[static_cast<size_t>(k)]));
                const T a = px[base + 2 * k];
                const T b = px[base + 2 * k + 1];
                po[base + 2 * k] = cs * a - sn * b;
                po[base + 2 * k + 1] = sn * a + cs * b;
            }
        }
    }
    if (auto* tape = grads_wanted<T>({&x})) {
        out.enable_grad();
        tape->record([x, out, rows, d, dh, n_heads, t, freqs] {
            const T* g = out.grad_ptr();
            T* xg = x.grad_ptr();
            for (int64_t r = 0; r < rows; ++r) {
                const double pos = static_cast<double>(r % t);
                for (int64_t h = 0; h < n_heads; ++h) {
                    const int64_t base = r * d + h * dh;
                    for (int64_t k = 0; k < dh / 2; ++k) {
                        const T cs = static_cast<T>(
                            std::cos(pos * freqs[static_cast<size_t>(k)]));
                        const T sn = static_cast<T>(
                            std::sin(pos * freqs[static_cast<size_t>(k)]));
                        const T ga = g[base + 2 * k];
                        const T gb = g[base + 2 * k + 1];
                        xg[base + 2 * k] += cs * ga + sn * gb;
                        xg[base + 2 * k + 1] += -sn * ga + cs * gb;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Absolute position embeddings

// Classic interleaved sin/cos table rows, valid for any position.
template <typename T>
Tensor<T> sinusoidal_rows(const std::vector<int64_t>& positions,
                          int64_t d_model) {
    const int64_t n = static_cast<int64_t>(positions.size());
    Tensor<T> out = Tensor<T>::uninit({n, d_model});
    T* po = out.ptr();
    for (int64_t r = 0; r < n; ++r) {
        const double pos = static_cast<double>(positions[static_cast<size_t>(r)]);
        for (int64_t k = 0; 2 * k < d_model; ++k) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                      static_cast<double>(d_model));
            po[r * d_model + 2 * k] = static_cast<T>(std::sin(pos * freq));
            if (2 * k + 1 < d_model)
                po[r * d_model + 2 * k + 1] =
                    static_cast<T>(std::cos(pos * freq));
        }
    }
    return out;
}

}  // namespace cable
