#pragma once

// Decoder-only transformer: token embedding (+ optional absolute position
// table), pre-norm blocks of attention and a 4x GELU MLP, final layer norm,
// and a (by default tied) projection back to the vocabulary.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cable/attention.hpp"
#include "cable/ops.hpp"
#include "cable/posenc.hpp"
#include "cable/rng.hpp"

namespace cable {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
    int64_t n_layers = 4;
    int64_t n_heads = 4;
    int64_t d_model = 128;
    int64_t vocab_size = 0;
    int64_t max_train_len = 128;
    PosencKind posenc_kind = PosencKind::kCable;
    CableVariant cable_variant = CableVariant::kFull;
    double dropout = 0.0;
    bool tie_embeddings = true;
    int64_t t5_buckets = 32;
    int64_t fire_hidden = 32;
    double fire_c = 1.0;
    double rope_theta = 10000.0;
    int64_t ape_max_len = 0;  // 0 -> max_train_len

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1)
            throw ConfigError("model: layers/heads/d_model must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("model: n_heads must divide d_model");
        if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
        if (max_train_len < 1)
            throw ConfigError("model: max_train_len must be positive");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("model: dropout must lie in [0, 1)");
        if (t5_buckets < 1 || fire_hidden < 1)
            throw ConfigError("model: t5_buckets/fire_hidden must be positive");
    }
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;  // handle sharing the model's buffers
    bool decay = false;
};

template <typename T>
struct Block {
    Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
    AttentionLayer<T> attn;
    Tensor<T> fc;    // [d x 4d]
    Tensor<T> proj;  // [4d x d]
};

template <typename T>
class Gpt {
  public:
    explicit Gpt(ModelConfig cfg, uint64_t seed = 1)
        : cfg_(cfg), drop_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
        cfg_.validate();
        if (cfg_.ape_max_len <= 0) cfg_.ape_max_len = cfg_.max_train_len;
        init_weights(seed);
        for_each_param([](const std::string&, Tensor<T>& t) { t.enable_grad(); });
        if (param_count() != expected_param_count())
            throw std::logic_error("model: parameter registry disagrees with "
                                   "the documented count formula");
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<Block<T>>& blocks() { return blocks_; }
    const std::vector<Block<T>>& blocks() const { return blocks_; }
    Rng& dropout_rng() { return drop_rng_; }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for_each_param([&out](const std::string& name, Tensor<T>& t) {
            out.push_back({name, t, t.ndim() >= 2});
        });
        return out;
    }

    int64_t param_count() {
        int64_t n = 0;
        for_each_param([&n](const std::string&, Tensor<T>& t) { n += t.numel(); });
        return n;
    }

    // embeddings + per-layer 12 d^2 for qkvo+mlp, 4d of layer-norm affines,
    // the encoding's own parameters, and the final norm
    int64_t expected_param_count() const {
        const int64_t d = cfg_.d_model, h = cfg_.n_heads;
        int64_t posenc = 0;
        switch (cfg_.posenc_kind) {
            case PosencKind::kCable: posenc = 2 * d; break;  // 2 H d_head
            case PosencKind::kKerple: posenc = 2 * h; break;
            case PosencKind::kT5: posenc = h * (cfg_.t5_buckets + 1); break;
            case PosencKind::kFire: posenc = h * (3 * cfg_.fire_hidden + 2); break;
            default: break;
        }
        int64_t n = cfg_.vocab_size * d;
        if (cfg_.posenc_kind == PosencKind::kLearnable)
            n += cfg_.ape_max_len * d;
        n += cfg_.n_layers * (12 * d * d + 4 * d + posenc);
        n += 2 * d;
        if (!cfg_.tie_embeddings) n += d * cfg_.vocab_size;
        return n;
    }

    // [batch*t x vocab] next-token logits
    Tensor<T> forward_batch(const std::vector<int32_t>& ids, int64_t batch,
                            int64_t t) {
        if (batch < 1 || t < 1 ||
            static_cast<int64_t>(ids.size()) != batch * t)
            throw ArgumentError("forward: ids must hold batch*t tokens");
        Tensor<T> x = embedding_lookup(tok_emb_, ids);
        if (cfg_.posenc_kind == PosencKind::kSinusoidal) {
            std::vector<int64_t> pos(static_cast<size_t>(batch * t));
            for (int64_t r = 0; r < batch * t; ++r)
                pos[static_cast<size_t>(r)] = r % t;
            x = add(x, sinusoidal_rows<T>(pos, cfg_.d_model));
        } else if (cfg_.posenc_kind == PosencKind::kLearnable) {
            std::vector<int32_t> pos(static_cast<size_t>(batch * t));
            for (int64_t r = 0; r < batch * t; ++r)
                pos[static_cast<size_t>(r)] = static_cast<int32_t>(r % t);
            x = add(x, embedding_lookup(pos_emb_, pos));
        }
        x = dropout(x, static_cast<T>(cfg_.dropout), drop_rng_);
        for (Block<T>& b : blocks_) {
            Tensor<T> a = attend_batch(
                layer_norm(x, b.ln1_g, b.ln1_b, static_cast<T>(kLayerNormEps)),
                b.attn, batch, t);
            x = add(x, dropout(a, static_cast<T>(cfg_.dropout), drop_rng_));
            Tensor<T> m = matmul(
                gelu(matmul(layer_norm(x, b.ln2_g, b.ln2_b,
                                       static_cast<T>(kLayerNormEps)),
                            b.fc)),
                b.proj);
            x = add(x, dropout(m, static_cast<T>(cfg_.dropout), drop_rng_));
        }
        x = layer_norm(x, ln_f_g_, ln_f_b_, static_cast<T>(kLayerNormEps));
        return cfg_.tie_embeddings ? matmul(x, transpose(tok_emb_))
                                   : matmul(x, head_);
    }

    Tensor<T> forward(const std::vector<int32_t>& ids) {
        return forward_batch(ids, 1, static_cast<int64_t>(ids.size()));
    }

    Tensor<T> loss_batch(const std::vector<int32_t>& inputs,
                         const std::vector<int32_t>& targets, int64_t batch,
                         int64_t t) {
        if (inputs.size() != targets.size())
            throw ArgumentError("loss: inputs and targets must align");
        return cross_entropy(forward_batch(inputs, batch, t), targets);
    }

    // mean next-token cross-entropy in nats over one sequence
    Tensor<T> loss(const std::vector<int32_t>& ids) {
        if (ids.size() < 2)
            throw ArgumentError("loss: need at least two tokens");
        std::vector<int32_t> inputs(ids.begin(), ids.end() - 1);
        std::vector<int32_t> targets(ids.begin() + 1, ids.end());
        return loss_batch(inputs, targets, 1,
                          static_cast<int64_t>(inputs.size()));
    }

    // the input the given block's attention sees (post first norm); used by
    // the bias dumper
    Tensor<T> attention_input(const std::vector<int32_t>& ids, int64_t layer) {
        if (layer < 0 || layer >= cfg_.n_layers)
            throw ArgumentError("layer index out of range");
        const int64_t t = static_cast<int64_t>(ids.size());
        Tensor<T> x = embed_only(ids, t);
        for (int64_t l = 0;; ++l) {
            Block<T>& b = blocks_[static_cast<size_t>(l)];
            Tensor<T> normed =
                layer_norm(x, b.ln1_g, b.ln1_b, static_cast<T>(kLayerNormEps));
            if (l == layer) return normed;
            x = add(x, attend_batch(normed, b.attn, 1, t));
            Tensor<T> m = matmul(
                gelu(matmul(layer_norm(x, b.ln2_g, b.ln2_b,
                                       static_cast<T>(kLayerNormEps)),
                            b.fc)),
                b.proj);
            x = add(x, m);
        }
    }

    // --- streaming generation ----------------------------------------------

    struct GenState {
        std::vector<StreamState<T>> layers;
        int64_t pos = 0;
        int64_t capacity = 0;
    };

    GenState gen_state(int64_t capacity) const {
        GenState st;
        st.capacity = capacity;
        for (int64_t l = 0; l < cfg_.n_layers; ++l)
            st.layers.emplace_back(capacity, cfg_.n_heads,
                                   cfg_.d_model / cfg_.n_heads);
        return st;
    }

    // advance one token; returns vocab logits when asked for
    std::vector<T> step_token(GenState& st, int32_t id, bool want_logits) {
        const int64_t d = cfg_.d_model, V = cfg_.vocab_size;
        if (id < 0 || id >= V)
            throw IndexError("generate: token id " + std::to_string(id) +
                             " outside vocabulary");
        if (cfg_.posenc_kind == PosencKind::kLearnable &&
            st.pos >= cfg_.ape_max_len)
            throw IndexError("generate: position " + std::to_string(st.pos) +
                             " beyond the learned table of " +
                             std::to_string(cfg_.ape_max_len));
        std::vector<T> x(static_cast<size_t>(d));
        const T* row = tok_emb_.ptr() + static_cast<int64_t>(id) * d;
        std::copy(row, row + d, x.begin());
        if (cfg_.posenc_kind == PosencKind::kSinusoidal) {
            Tensor<T> pe = sinusoidal_rows<T>({st.pos}, d);
            for (int64_t c = 0; c < d; ++c)
                x[static_cast<size_t>(c)] += pe.ptr()[c];
        } else if (cfg_.posenc_kind == PosencKind::kLearnable) {
            const T* pr = pos_emb_.ptr() + st.pos * d;
            for (int64_t c = 0; c < d; ++c) x[static_cast<size_t>(c)] += pr[c];
        }
        std::vector<T> h, m1(static_cast<size_t>(4 * d)), m2(static_cast<size_t>(d));
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            Block<T>& b = blocks_[static_cast<size_t>(l)];
            h = vec_layer_norm(x, b.ln1_g, b.ln1_b);
            std::vector<T> a =
                attend_step(st.layers[static_cast<size_t>(l)], h, b.attn);
            for (int64_t c = 0; c < d; ++c)
                x[static_cast<size_t>(c)] += a[static_cast<size_t>(c)];
            h = vec_layer_norm(x, b.ln2_g, b.ln2_b);
            blas::gemv(true, d, 4 * d, T(1), b.fc.ptr(), 4 * d, h.data(), T(0),
                       m1.data());
            for (auto& v : m1) v = gelu_val(v);
            blas::gemv(true, 4 * d, d, T(1), b.proj.ptr(), d, m1.data(), T(0),
                       m2.data());
            for (int64_t c = 0; c < d; ++c)
                x[static_cast<size_t>(c)] += m2[static_cast<size_t>(c)];
        }
        st.pos += 1;
        if (!want_logits) return {};
        x = vec_layer_norm(x, ln_f_g_, ln_f_b_);
        std::vector<T> logits(static_cast<size_t>(V));
        if (cfg_.tie_embeddings)
            blas::gemv(false, V, d, T(1), tok_emb_.ptr(), d, x.data(), T(0),
                       logits.data());
        else
            blas::gemv(true, d, V, T(1), head_.ptr(), V, x.data(), T(0),
                       logits.data());
        return logits;
    }

    std::vector<int32_t> generate(const std::vector<int32_t>& prompt,
                                  int64_t n_new, double temperature, Rng& rng,
                                  int64_t context_cap = 0) {
        if (prompt.empty())
            throw ArgumentError("generate: prompt must be non-empty");
        if (temperature < 0.0)
            throw ArgumentError("generate: temperature must be >= 0");
        const int64_t cap =
            context_cap > 0
                ? context_cap
                : static_cast<int64_t>(prompt.size()) + std::max<int64_t>(n_new, 1);
        GenState st = gen_state(cap);
        std::vector<int32_t> out(prompt);
        std::vector<T> logits;
        for (size_t i = 0; i < prompt.size(); ++i)
            logits = step_token(st, prompt[i], i + 1 == prompt.size());
        for (int64_t k = 0; k < n_new; ++k) {
            int32_t next = sample_logits(logits, temperature, rng);
            out.push_back(next);
            if (k + 1 < n_new) logits = step_token(st, next, true);
        }
        return out;
    }

    static int32_t sample_logits(const std::vector<T>& logits,
                                 double temperature, Rng& rng) {
        if (logits.empty()) throw ArgumentError("sample: empty logits");
        if (temperature <= 1e-9) {
            size_t best = 0;
            for (size_t i = 1; i < logits.size(); ++i)
                if (logits[i] > logits[best]) best = i;
            return static_cast<int32_t>(best);
        }
        double mx = static_cast<double>(logits[0]);
        for (T v : logits) mx = std::max(mx, static_cast<double>(v));
        std::vector<double> w(logits.size());
        double sum = 0.0;
        for (size_t i = 0; i < logits.size(); ++i) {
            w[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
            sum += w[i];
        }
        double u = rng.uniform() * sum, acc = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc) return static_cast<int32_t>(i);
        }
        return static_cast<int32_t>(w.size() - 1);
    }

  private:
    void init_weights(uint64_t seed) {
        Rng rng(seed);
        const int64_t d = cfg_.d_model, V = cfg_.vocab_size, H = cfg_.n_heads;
        const int64_t dh = d / H;
        const T base = T(0.02);
        const T resid = static_cast<T>(
            0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers)));
        auto fill = [&rng](Tensor<T>& t, T sd) {
            for (auto& v : t.values()) v = static_cast<T>(rng.gaussian()) * sd;
        };
        tok_emb_ = Tensor<T>::uninit({V, d});
        fill(tok_emb_, base);
        if (cfg_.posenc_kind == PosencKind::kLearnable) {
            pos_emb_ = Tensor<T>::uninit({cfg_.ape_max_len, d});
            fill(pos_emb_, base);
        }
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            Block<T> b;
            b.ln1_g = Tensor<T>({d}, T(1));
            b.ln1_b = Tensor<T>({d}, T(0));
            b.attn.n_heads = H;
            b.attn.d_head = dh;
            b.attn.kind = cfg_.posenc_kind;
            b.attn.variant = cfg_.cable_variant;
            b.attn.rope_theta = cfg_.rope_theta;
            b.attn.w_q = Tensor<T>::uninit({d, d});
            b.attn.w_k = Tensor<T>::uninit({d, d});
            b.attn.w_v = Tensor<T>::uninit({d, d});
            b.attn.w_o = Tensor<T>::uninit({d, d});
            fill(b.attn.w_q, base);
            fill(b.attn.w_k, base);
            fill(b.attn.w_v, base);
            fill(b.attn.w_o, resid);
            switch (cfg_.posenc_kind) {
                case PosencKind::kCable:
                    for (int64_t h = 0; h < H; ++h) {
                        CableHeadParams<T> p;
                        p.w_c = Tensor<T>::uninit({dh});
                        p.w_s = Tensor<T>::uninit({dh});
                        fill(p.w_c, base);
                        fill(p.w_s, base);
                        p.variant = cfg_.cable_variant;
                        b.attn.cable.push_back(p);
                    }
                    break;
                case PosencKind::kAlibi: {
                    auto s = alibi_slopes(H);
                    b.attn.alibi.assign(s.begin(), s.end());
                    break;
                }
                case PosencKind::kKerple:
                    for (int64_t h = 0; h < H; ++h) {
                        KerpleHeadParams<T> p;
                        const T pre = static_cast<T>(
                            std::log(std::exp(1.0) - 1.0));  // softplus -> 1
                        p.pre_r1 = Tensor<T>({1}, pre);
                        p.pre_r2 = Tensor<T>({1}, pre);
                        b.attn.kerple.push_back(p);
                    }
                    break;
                case PosencKind::kT5:
                    for (int64_t h = 0; h < H; ++h) {
                        Tensor<T> table =
                            Tensor<T>::uninit({cfg_.t5_buckets + 1});
                        fill(table, base);
                        b.attn.t5_tables.push_back(table);
                    }
                    break;
                case PosencKind::kFire:
                    for (int64_t h = 0; h < H; ++h) {
                        FireHeadParams<T> p;
                        p.w1 = Tensor<T>::uninit({1, cfg_.fire_hidden});
                        p.w2 = Tensor<T>::uninit({cfg_.fire_hidden, 1});
                        fill(p.w1, base);
                        fill(p.w2, base);
                        p.b1 = Tensor<T>({cfg_.fire_hidden}, T(0));
                        p.b2 = Tensor<T>({1}, T(0));
                        p.pre_l = Tensor<T>(
                            {1}, static_cast<T>(cfg_.max_train_len));
                        p.c = cfg_.fire_c;
                        b.attn.fire.push_back(p);
                    }
                    break;
                default:
                    break;
            }
            b.ln2_g = Tensor<T>({d}, T(1));
            b.ln2_b = Tensor<T>({d}, T(0));
            b.fc = Tensor<T>::uninit({d, 4 * d});
            b.proj = Tensor<T>::uninit({4 * d, d});
            fill(b.fc, base);
            fill(b.proj, resid);
            blocks_.push_back(std::move(b));
        }
        ln_f_g_ = Tensor<T>({d}, T(1));
        ln_f_b_ = Tensor<T>({d}, T(0));
        if (!cfg_.tie_embeddings)
            head_ = Tensor<T>({d, V}, T(0));  // uniform logits until trained
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("tok_emb", tok_emb_);
        if (cfg_.posenc_kind == PosencKind::kLearnable) fn("pos_emb", pos_emb_);
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            Block<T>& b = blocks_[static_cast<size_t>(l)];
            const std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "ln1.gain", b.ln1_g);
            fn(p + "ln1.bias", b.ln1_b);
            fn(p + "attn.w_q", b.attn.w_q);
            fn(p + "attn.w_k", b.attn.w_k);
            fn(p + "attn.w_v", b.attn.w_v);
            fn(p + "attn.w_o", b.attn.w_o);
            for (size_t h = 0; h < b.attn.cable.size(); ++h) {
                fn(p + "cable.h" + std::to_string(h) + ".w_c",
                   b.attn.cable[h].w_c);
                fn(p + "cable.h" + std::to_string(h) + ".w_s",
                   b.attn.cable[h].w_s);
            }
            for (size_t h = 0; h < b.attn.kerple.size(); ++h) {
                fn(p + "kerple.h" + std::to_string(h) + ".r1",
                   b.attn.kerple[h].pre_r1);
                fn(p + "kerple.h" + std::to_string(h) + ".r2",
                   b.attn.kerple[h].pre_r2);
            }
            for (size_t h = 0; h < b.attn.t5_tables.size(); ++h)
                fn(p + "t5.h" + std::to_string(h) + ".table",
                   b.attn.t5_tables[h]);
            for (size_t h = 0; h < b.attn.fire.size(); ++h) {
                const std::string f = p + "fire.h" + std::to_string(h) + ".";
                fn(f + "w1", b.attn.fire[h].w1);
                fn(f + "b1", b.attn.fire[h].b1);
                fn(f + "w2", b.attn.fire[h].w2);
                fn(f + "b2", b.attn.fire[h].b2);
                fn(f + "pre_l", b.attn.fire[h].pre_l);
            }
            fn(p + "ln2.gain", b.ln2_g);
            fn(p + "ln2.bias", b.ln2_b);
            fn(p + "mlp.fc", b.fc);
            fn(p + "mlp.proj", b.proj);
        }
        fn("ln_f.gain", ln_f_g_);
        fn("ln_f.bias", ln_f_b_);
        if (!cfg_.tie_embeddings) fn("head", head_);
    }

    Tensor<T> embed_only(const std::vector<int32_t>& ids, int64_t t) {
        Tensor<T> x = embedding_lookup(tok_emb_, ids);
        if (cfg_.posenc_kind == PosencKind::kSinusoidal) {
            std::vector<int64_t> pos(static_cast<size_t>(t));
            for (int64_t r = 0; r < t; ++r) pos[static_cast<size_t>(r)] = r;
            x = add(x, sinusoidal_rows<T>(pos, cfg_.d_model));
        } else if (cfg_.posenc_kind == PosencKind::kLearnable) {
            std::vector<int32_t> pos(static_cast<size_t>(t));
            for (int64_t r = 0; r < t; ++r)
                pos[static_cast<size_t>(r)] = static_cast<int32_t>(r);
            x = add(x, embedding_lookup(pos_emb_, pos));
        }
        return x;
    }

    std::vector<T> vec_layer_norm(const std::vector<T>& x, const Tensor<T>& g,
                                  const Tensor<T>& b) const {
        const int64_t d = static_cast<int64_t>(x.size());
        T mean = T(0);
        for (T v : x) mean += v;
        mean /= static_cast<T>(d);
        T var = T(0);
        for (T v : x) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        std::vector<T> out(x.size());
        for (int64_t c = 0; c < d; ++c)
            out[static_cast<size_t>(c)] =
                (x[static_cast<size_t>(c)] - mean) * inv * g.ptr()[c] +
                b.ptr()[c];
        return out;
    }

    ModelConfig cfg_;
    Rng drop_rng_;
    Tensor<T> tok_emb_;  // [vocab x d]
    Tensor<T> pos_emb_;  // [ape_max_len x d], learnable kind only
    Tensor<T> head_;     // [d x vocab], untied only
    std::vector<Block<T>> blocks_;
    Tensor<T> ln_f_g_, ln_f_b_;
};

}  // namespace cable
