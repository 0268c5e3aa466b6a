#include <cmath>
#include <vector>

#include "cable/attention.hpp"
#include "cable/grad_check.hpp"
#include "cable/ops.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cable;
using testutil::all_attention_kinds;
using testutil::make_layer;
using testutil::ref_attend_full;

namespace {

double max_abs_diff(const Tensor<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.values()[static_cast<size_t>(i)] -
                                  b[static_cast<size_t>(i)]));
    return m;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.numel() == b.numel());
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.values()[static_cast<size_t>(i)] -
                                  b.values()[static_cast<size_t>(i)]));
    return m;
}

Tensor<double> weighted_sum(const Tensor<double>& x, const Tensor<double>& w) {
    return sum(mul(x, w));
}

double inv_softplus(double y) { return std::log(std::exp(y) - 1.0); }

// smallest |f_pre| over all tokens/heads of a cable layer, to keep finite
// differences away from the relu corner
double min_abs_fpre(const Tensor<double>& x, const AttentionLayer<double>& l) {
    Tensor<double> k = matmul(x, l.w_k);
    double m = 1e300;
    for (int64_t h = 0; h < l.n_heads; ++h)
        for (int64_t r = 0; r < x.dim(0); ++r) {
            double fp = 0.0;
            for (int64_t c = 0; c < l.d_head; ++c)
                fp += k(r, h * l.d_head + c) *
                      l.cable[static_cast<size_t>(h)].w_c.values()[static_cast<size_t>(c)];
            m = std::min(m, std::fabs(fp));
        }
    return m;
}

}  // namespace

TEST_CASE("attend_full matches the scalar reference for every encoding") {
    Rng rng(2024);
    for (const auto& spec : all_attention_kinds()) {
        for (int trial = 0; trial < 6; ++trial) {
            const int64_t H = 1 + static_cast<int64_t>(rng.below(3));
            const int64_t dh = 2 * (1 + static_cast<int64_t>(rng.below(3)));
            const int64_t t = 2 + static_cast<int64_t>(rng.below(11));
            auto layer = make_layer(spec.kind, spec.variant, H, dh, rng, t);
            Tensor<double> x = oracle::random_tensor({t, H * dh}, rng, 0.5);
            Tensor<double> got = attend_full(x, layer);
            auto want = ref_attend_full(x, layer);
            CHECK(max_abs_diff(got, want) < 1e-9);
        }
    }
}

TEST_CASE("attend_full matches the reference without the causal mask") {
    Rng rng(77);
    for (PosencKind kind : {PosencKind::kCable, PosencKind::kAlibi}) {
        auto layer = make_layer(kind, CableVariant::kFull, 2, 4, rng);
        Tensor<double> x = oracle::random_tensor({7, 8}, rng, 0.5);
        Tensor<double> got = attend_full(x, layer, /*causal=*/false);
        auto want = ref_attend_full(x, layer, /*causal=*/false);
        CHECK(max_abs_diff(got, want) < 1e-9);
    }
}

TEST_CASE("attention weights sum to one along every row") {
    Rng rng(5);
    const int64_t B = 2, t = 6, H = 2, dh = 3, d = H * dh;
    Tensor<double> q = oracle::random_tensor({B * t, d}, rng);
    Tensor<double> k = oracle::random_tensor({B * t, d}, rng);
    Tensor<double> ones({B * t, d}, std::vector<double>(B * t * d, 1.0));
    std::vector<Tensor<double>> biases;
    for (int64_t h = 0; h < H; ++h)
        biases.push_back(alibi_bias<double>(t, 0.5 / static_cast<double>(h + 1)));
    for (bool causal : {true, false}) {
        Tensor<double> out = masked_multihead_attention(
            q, k, ones, std::span<const Tensor<double>>(biases), B, t, H,
            causal);
        for (int64_t i = 0; i < out.numel(); ++i)
            CHECK(std::fabs(out.values()[static_cast<size_t>(i)] - 1.0) < 1e-12);
    }
}

TEST_CASE("editing a future token leaves earlier outputs untouched") {
    Rng rng(41);
    for (const auto& spec : all_attention_kinds()) {
        const int64_t t = 8, H = 2, dh = 4;
        auto layer = make_layer(spec.kind, spec.variant, H, dh, rng);
        Tensor<double> x1 = oracle::random_tensor({t, H * dh}, rng, 0.5);
        Tensor<double> x2 = Tensor<double>::uninit(x1.shape());
        std::copy(x1.values().begin(), x1.values().end(), x2.values().begin());
        for (int64_t c = 0; c < x2.dim(1); ++c)
            x2(t - 1, c) = rng.gaussian();
        Tensor<double> o1 = attend_full(x1, layer);
        Tensor<double> o2 = attend_full(x2, layer);
        double m = 0.0;
        for (int64_t r = 0; r < t - 1; ++r)
            for (int64_t c = 0; c < o1.dim(1); ++c)
                m = std::max(m, std::fabs(o1(r, c) - o2(r, c)));
        CHECK(m <= 1e-13);
        // and the final row does change
        double last = 0.0;
        for (int64_t c = 0; c < o1.dim(1); ++c)
            last = std::max(last, std::fabs(o1(t - 1, c) - o2(t - 1, c)));
        CHECK(last > 1e-8);
    }
}

TEST_CASE("attend_batch agrees with one attend_full per sequence") {
    Rng rng(99);
    const int64_t B = 3, t = 6, H = 2, dh = 4, d = H * dh;
    for (const auto& spec : all_attention_kinds()) {
        auto layer = make_layer(spec.kind, spec.variant, H, dh, rng);
        Tensor<double> x = oracle::random_tensor({B * t, d}, rng, 0.5);
        Tensor<double> packed = attend_batch(x, layer, B, t);
        for (int64_t s = 0; s < B; ++s) {
            Tensor<double> xs = Tensor<double>::uninit({t, d});
            for (int64_t r = 0; r < t; ++r)
                for (int64_t c = 0; c < d; ++c) xs(r, c) = x(s * t + r, c);
            Tensor<double> os = attend_full(xs, layer);
            double m = 0.0;
            for (int64_t r = 0; r < t; ++r)
                for (int64_t c = 0; c < d; ++c)
                    m = std::max(m, std::fabs(os(r, c) - packed(s * t + r, c)));
            CHECK(m < 1e-12);
        }
    }
}

TEST_CASE("streaming decode reproduces full attention row by row") {
    Rng rng(314);
    for (const auto& spec : all_attention_kinds()) {
        const int64_t t = 10, H = 2, dh = 4, d = H * dh;
        auto layer = make_layer(spec.kind, spec.variant, H, dh, rng, t);
        Tensor<double> x = oracle::random_tensor({t, d}, rng, 0.5);
        Tensor<double> full = attend_full(x, layer);
        StreamState<double> state(t, H, dh);
        for (int64_t r = 0; r < t; ++r) {
            std::vector<double> row(static_cast<size_t>(d));
            for (int64_t c = 0; c < d; ++c)
                row[static_cast<size_t>(c)] = x(r, c);
            auto out = attend_step(state, row, layer);
            for (int64_t c = 0; c < d; ++c)
                CHECK(std::fabs(out[static_cast<size_t>(c)] - full(r, c)) <
                      1e-10);
        }
        CHECK(state.pos == t);
    }
}

TEST_CASE("stream cache enforces capacity and input shape") {
    Rng rng(7);
    auto layer = make_layer(PosencKind::kCable, CableVariant::kFull, 2, 4, rng);
    CHECK_THROWS_AS(StreamState<double>(0, 2, 4), ArgumentError);
    StreamState<double> state(3, 2, 4);
    std::vector<double> row(8, 0.1);
    CHECK_THROWS_AS(attend_step(state, std::vector<double>(7, 0.1), layer),
                    ShapeError);
    for (int step = 0; step < 3; ++step) attend_step(state, row, layer);
    CHECK_THROWS_AS(attend_step(state, row, layer), CapacityError);
    CHECK(state.pos == 3);
}

TEST_CASE("fused attention validates shapes and bias counts") {
    Rng rng(11);
    Tensor<double> q = oracle::random_tensor({4, 4}, rng);
    Tensor<double> k = oracle::random_tensor({4, 4}, rng);
    Tensor<double> v = oracle::random_tensor({4, 4}, rng);
    std::vector<Tensor<double>> three(3, alibi_bias<double>(2, 0.5));
    CHECK_THROWS_AS(masked_multihead_attention(
                        q, k, v, std::span<const Tensor<double>>(three), 2, 2, 2),
                    ShapeError);
    std::vector<Tensor<double>> wrong_shape{
        alibi_bias<double>(3, 0.5), alibi_bias<double>(3, 0.5)};
    CHECK_THROWS_AS(masked_multihead_attention(
                        q, k, v, std::span<const Tensor<double>>(wrong_shape),
                        2, 2, 2),
                    ShapeError);
    Tensor<double> bad = oracle::random_tensor({4, 3}, rng);
    CHECK_THROWS_AS(masked_multihead_attention(
                        q, k, bad, std::span<const Tensor<double>>(), 2, 2, 2),
                    ShapeError);
    CHECK_THROWS_AS(masked_multihead_attention(
                        q, k, v, std::span<const Tensor<double>>(), 2, 3, 2),
                    ShapeError);
}

TEST_CASE("fused attention records nothing when no input is tracked") {
    Rng rng(13);
    Tensor<double> x = oracle::random_tensor({5, 8}, rng, 0.5);
    auto layer = make_layer(PosencKind::kAlibi, CableVariant::kFull, 2, 4, rng);
    Tape<double> tape;
    Tensor<double> out = attend_full(x, layer);
    CHECK_FALSE(out.tracked());
    CHECK(tape.node_count() == 0);
}

TEST_CASE("planted cable parameters reproduce alibi attention exactly") {
    Rng rng(512);
    const int64_t H = 4, dh = 4, d = H * dh, t = 16;
    auto slopes = alibi_slopes(H);

    Tensor<double> x = oracle::random_tensor({t, d}, rng, 0.4);
    for (int64_t r = 0; r < t; ++r) x(r, 0) = 1.0;
    Tensor<double> w_k = oracle::random_tensor({d, d}, rng, 0.3);
    for (int64_t h = 0; h < H; ++h)
        for (int64_t m = 0; m < d; ++m) w_k(m, h * dh) = m == 0 ? 1.0 : 0.0;

    AttentionLayer<double> cable_layer =
        make_layer(PosencKind::kCable, CableVariant::kFull, H, dh, rng);
    cable_layer.w_k = w_k;
    for (int64_t h = 0; h < H; ++h) {
        auto& p = cable_layer.cable[static_cast<size_t>(h)];
        for (auto& wv : p.w_c.values()) wv = 0.0;
        for (auto& wv : p.w_s.values()) wv = 0.0;
        p.w_c.values()[0] = 1.0;  // f == K[:, h*dh] == 1
        p.w_s.values()[0] = inv_softplus(slopes[static_cast<size_t>(h)]);
    }
    AttentionLayer<double> alibi_layer = cable_layer;
    alibi_layer.kind = PosencKind::kAlibi;
    alibi_layer.cable.clear();
    alibi_layer.alibi.assign(slopes.begin(), slopes.end());

    // the additive deltas agree on the causal region
    auto cable_mats = attention_introspect(x, cable_layer);
    auto alibi_mats = attention_introspect(x, alibi_layer);
    REQUIRE(cable_mats.size() == static_cast<size_t>(H));
    for (int64_t h = 0; h < H; ++h)
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j <= i; ++j)
                CHECK(std::fabs(cable_mats[static_cast<size_t>(h)](i, j) -
                                alibi_mats[static_cast<size_t>(h)](i, j)) <
                      1e-9);

    // and so do the attention outputs
    Tensor<double> oc = attend_full(x, cable_layer);
    Tensor<double> oa = attend_full(x, alibi_layer);
    CHECK(max_abs_diff(oc, oa) < 1e-9);
}

TEST_CASE("static encodings ignore content, cable does not") {
    Rng rng(21);
    const int64_t t = 6, H = 2, dh = 4, d = H * dh;
    Tensor<double> ka = oracle::random_tensor({t, d}, rng);
    Tensor<double> kb = oracle::random_tensor({t, d}, rng);
    for (PosencKind kind : {PosencKind::kAlibi, PosencKind::kKerple,
                            PosencKind::kT5, PosencKind::kFire}) {
        auto layer = make_layer(kind, CableVariant::kFull, H, dh, rng);
        auto ma = additive_bias_matrices(ka, layer, t);
        auto mb = additive_bias_matrices(kb, layer, t);
        REQUIRE(ma.size() == mb.size());
        for (size_t h = 0; h < ma.size(); ++h)
            for (int64_t i = 0; i < t * t; ++i)
                CHECK(ma[h].values()[static_cast<size_t>(i)] ==
                      mb[h].values()[static_cast<size_t>(i)]);
    }
    auto layer = make_layer(PosencKind::kCable, CableVariant::kFull, H, dh, rng);
    auto ma = additive_bias_matrices(ka, layer, t);
    auto mb = additive_bias_matrices(kb, layer, t);
    double m = 0.0;
    for (size_t h = 0; h < ma.size(); ++h)
        m = std::max(m, max_abs_diff(ma[h], mb[h]));
    CHECK(m > 1e-6);
}

TEST_CASE("introspection returns per-head matrices for every kind") {
    Rng rng(31);
    const int64_t t = 5, H = 3, dh = 4;
    for (const auto& spec : all_attention_kinds()) {
        auto layer = make_layer(spec.kind, spec.variant, H, dh, rng);
        Tensor<double> x = oracle::random_tensor({t, H * dh}, rng, 0.5);
        auto mats = attention_introspect(x, layer);
        REQUIRE(mats.size() == static_cast<size_t>(H));
        for (const auto& m : mats) {
            CHECK(m.dim(0) == t);
            CHECK(m.dim(1) == t);
            for (double v : m.values()) CHECK(std::isfinite(v));
        }
        if (spec.kind == PosencKind::kCable)
            for (const auto& m : mats)
                for (int64_t i = 0; i < t; ++i) CHECK(m(i, i) == 0.0);
    }
}

TEST_CASE("a single token attends only to itself for every encoding") {
    Rng rng(53);
    for (const auto& spec : all_attention_kinds()) {
        const int64_t H = 2, dh = 4, d = H * dh;
        auto layer = make_layer(spec.kind, spec.variant, H, dh, rng);
        Tensor<double> x = oracle::random_tensor({1, d}, rng, 0.5);
        Tensor<double> out = attend_full(x, layer);
        // with one token the probability matrix is [[1.0]], so the output is
        // exactly (x W_v) W_o, rotation included for rope at position 0
        Tensor<double> want = matmul(matmul(x, layer.w_v), layer.w_o);
        CHECK(max_abs_diff(out, want) < 1e-12);
    }
}

TEST_CASE("an explicit zero bias reproduces the unbiased output") {
    Rng rng(59);
    const int64_t t = 6, H = 2, dh = 4, d = H * dh;
    Tensor<double> q = oracle::random_tensor({t, d}, rng);
    Tensor<double> k = oracle::random_tensor({t, d}, rng);
    Tensor<double> v = oracle::random_tensor({t, d}, rng);
    std::vector<Tensor<double>> zeros(static_cast<size_t>(H),
                                      Tensor<double>({t, t}, 0.0));
    Tensor<double> biased = masked_multihead_attention(
        q, k, v, std::span<const Tensor<double>>(zeros), 1, t, H);
    Tensor<double> plain = masked_multihead_attention(
        q, k, v, std::span<const Tensor<double>>(), 1, t, H);
    for (int64_t i = 0; i < biased.numel(); ++i)
        CHECK(biased.values()[static_cast<size_t>(i)] ==
              plain.values()[static_cast<size_t>(i)]);
}

TEST_CASE("streamed S cache equals batch prefix sums of f") {
    Rng rng(61);
    const int64_t t = 12, H = 3, dh = 4, d = H * dh;
    auto layer = make_layer(PosencKind::kCable, CableVariant::kFull, H, dh, rng);
    Tensor<double> x = oracle::random_tensor({t, d}, rng, 0.5);
    StreamState<double> state(t, H, dh);
    for (int64_t r = 0; r < t; ++r) {
        std::vector<double> row(static_cast<size_t>(d));
        for (int64_t c = 0; c < d; ++c) row[static_cast<size_t>(c)] = x(r, c);
        attend_step(state, row, layer);
    }
    Tensor<double> k = matmul(x, layer.w_k);
    for (int64_t h = 0; h < H; ++h) {
        const auto& p = layer.cable[static_cast<size_t>(h)];
        Tensor<double> f = relu(
            matmul(block(k, 0, t, h * dh, dh), p.w_c.reshaped({dh, 1})));
        Tensor<double> s = prefix_sum(f.reshaped({t}));
        double prev = 0.0;
        for (int64_t i = 0; i < t; ++i) {
            double cached =
                state.s_cache[static_cast<size_t>(h * state.capacity + i)];
            CHECK(std::fabs(cached - s.values()[static_cast<size_t>(i)]) <
                  1e-6);
            CHECK(cached >= prev);  // nondecreasing
            prev = cached;
        }
    }
}

TEST_CASE("bare bidirectional attention is position-agnostic") {
    Rng rng(67);
    const int64_t t = 7, H = 2, dh = 4, d = H * dh;
    auto layer = make_layer(PosencKind::kNope, CableVariant::kFull, H, dh, rng);
    Tensor<double> x = oracle::random_tensor({t, d}, rng, 0.5);
    std::vector<int64_t> perm{3, 0, 6, 2, 5, 1, 4};
    Tensor<double> xp = Tensor<double>::uninit({t, d});
    for (int64_t r = 0; r < t; ++r)
        for (int64_t c = 0; c < d; ++c) xp(r, c) = x(perm[static_cast<size_t>(r)], c);
    Tensor<double> o = attend_full(x, layer, /*causal=*/false);
    Tensor<double> op = attend_full(xp, layer, /*causal=*/false);
    double m = 0.0;
    for (int64_t r = 0; r < t; ++r)
        for (int64_t c = 0; c < d; ++c)
            m = std::max(m,
                         std::fabs(op(r, c) - o(perm[static_cast<size_t>(r)], c)));
    CHECK(m < 1e-12);
}

TEST_CASE("attention gradients match central differences end to end") {
    Rng rng(616);
    const int64_t B = 2, t = 5, H = 2, dh = 4, d = H * dh;
    for (const auto& spec : all_attention_kinds()) {
        AttentionLayer<double> layer =
            make_layer(spec.kind, spec.variant, H, dh, rng, t);
        Tensor<double> x = oracle::random_tensor({B * t, d}, rng, 0.5);
        if (spec.kind == PosencKind::kCable)
            while (min_abs_fpre(x, layer) < 1e-2) {
                layer = make_layer(spec.kind, spec.variant, H, dh, rng, t);
                x = oracle::random_tensor({B * t, d}, rng, 0.5);
            }
        Tensor<double> w = oracle::random_tensor({B * t, d}, rng);

        NamedParams params;
        auto track = [&params](const std::string& name, Tensor<double>& p) {
            p.enable_grad();
            params.emplace_back(name, p);
        };
        track("x", x);
        track("w_q", layer.w_q);
        track("w_k", layer.w_k);
        track("w_v", layer.w_v);
        track("w_o", layer.w_o);
        if (spec.kind == PosencKind::kCable)
            for (int64_t h = 0; h < H; ++h) {
                track("w_c" + std::to_string(h),
                      layer.cable[static_cast<size_t>(h)].w_c);
                if (spec.variant != CableVariant::kNoWeights)
                    track("w_s" + std::to_string(h),
                          layer.cable[static_cast<size_t>(h)].w_s);
            }
        if (spec.kind == PosencKind::kKerple)
            for (int64_t h = 0; h < H; ++h) {
                track("pre_r1." + std::to_string(h),
                      layer.kerple[static_cast<size_t>(h)].pre_r1);
                track("pre_r2." + std::to_string(h),
                      layer.kerple[static_cast<size_t>(h)].pre_r2);
            }
        if (spec.kind == PosencKind::kT5)
            for (int64_t h = 0; h < H; ++h)
                track("table" + std::to_string(h),
                      layer.t5_tables[static_cast<size_t>(h)]);
        if (spec.kind == PosencKind::kFire)
            for (int64_t h = 0; h < H; ++h) {
                auto& f = layer.fire[static_cast<size_t>(h)];
                track("fire_w1." + std::to_string(h), f.w1);
                track("fire_b1." + std::to_string(h), f.b1);
                track("fire_w2." + std::to_string(h), f.w2);
                track("fire_b2." + std::to_string(h), f.b2);
                track("fire_l." + std::to_string(h), f.pre_l);
            }

        auto make_loss = [&]() {
            return weighted_sum(attend_batch(x, layer, B, t), w);
        };
        auto report = grad_check(make_loss, params);
        INFO("kind ", posenc_name(spec.kind, spec.variant), " max rel err ",
             report.max_rel_err);
        CHECK(report.within(1e-4));
    }
}
