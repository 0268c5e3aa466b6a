#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cable/checkpoint.hpp"
#include "cable/train.hpp"
#include "doctest.h"

using namespace cable;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

ModelConfig toy_model(PosencKind kind, int64_t vocab) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 32;
    cfg.vocab_size = vocab;
    cfg.max_train_len = 16;
    cfg.posenc_kind = kind;
    return cfg;
}

TrainConfig toy_train() {
    TrainConfig cfg;
    cfg.steps = 200;
    cfg.batch_size = 4;
    cfg.t_train = 16;
    cfg.tokens_per_update = 64;  // one micro-batch per step
    cfg.lr_max = 3e-3;
    cfg.lr_min = 3e-4;
    cfg.warmup_steps = 20;
    cfg.checkpoint_every = 0;  // final only
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("learning rate schedule hits its landmarks") {
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.warmup_steps = 750;
    cfg.lr_max = 6e-4;
    cfg.lr_min = 6e-5;
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(375, cfg) == doctest::Approx(3e-4).epsilon(1e-12));
    CHECK(lr_at(750, cfg) == doctest::Approx(6e-4).epsilon(1e-12));
    const int64_t mid = (750 + 2000) / 2;
    CHECK(lr_at(mid, cfg) ==
          doctest::Approx(0.5 * (6e-4 + 6e-5)).epsilon(1e-9));
    CHECK(lr_at(2000, cfg) == doctest::Approx(6e-5).epsilon(1e-12));
    CHECK(lr_at(5000, cfg) == doctest::Approx(6e-5).epsilon(1e-12));
    // monotone decay after warmup
    double prev = lr_at(750, cfg);
    for (int64_t s = 751; s <= 2000; s += 125) {
        CHECK(lr_at(s, cfg) < prev);
        prev = lr_at(s, cfg);
    }
    CHECK_THROWS_AS(lr_at(-1, cfg), ArgumentError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.warmup_steps = cfg.steps;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_min = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.grad_clip = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("adamw update rule") {
    TrainConfig cfg;
    auto make_param = [](float value, bool decay) {
        Tensor<float> t({2, 1}, value);
        t.enable_grad();
        return ParamRef<float>{"p", t, decay};
    };

    SUBCASE("zero gradient and zero decay leave parameters unchanged") {
        auto p = make_param(0.7f, false);
        std::vector<ParamRef<float>> params{p};
        AdamState st;
        adamw_step(params, st, 0.1, cfg);
        CHECK(p.tensor.values()[0] == 0.7f);
        CHECK(st.t == 1);
    }

    SUBCASE("beta1=beta2=0 reduces to g/(|g|+eps)") {
        TrainConfig c0;
        c0.beta1 = 0.0;
        c0.beta2 = 0.0;
        auto p = make_param(1.0f, false);
        p.tensor.grad_ptr()[0] = 1.0f;
        p.tensor.grad_ptr()[1] = -2.0f;
        std::vector<ParamRef<float>> params{p};
        AdamState st;
        adamw_step(params, st, 0.5, c0);
        CHECK(p.tensor.values()[0] ==
              doctest::Approx(1.0 - 0.5 * (1.0 / (1.0 + 1e-8))).epsilon(1e-6));
        CHECK(p.tensor.values()[1] ==
              doctest::Approx(1.0 - 0.5 * (-2.0 / (2.0 + 1e-8))).epsilon(1e-6));
    }

    SUBCASE("decay-only step shrinks matrices by (1 - lr*wd)") {
        auto p = make_param(2.0f, true);
        std::vector<ParamRef<float>> params{p};
        AdamState st;
        adamw_step(params, st, 0.1, cfg);  // wd = 0.1
        CHECK(p.tensor.values()[0] ==
              doctest::Approx(2.0 * (1.0 - 0.1 * 0.1)).epsilon(1e-6));
    }

    SUBCASE("state size mismatch is rejected") {
        auto p = make_param(1.0f, false);
        std::vector<ParamRef<float>> params{p};
        AdamState st;
        st.m.assign(5, 0.0f);
        st.v.assign(5, 0.0f);
        CHECK_THROWS_AS(adamw_step(params, st, 0.1, cfg), ArgumentError);
    }
}

TEST_CASE("gradient clipping bounds the global norm") {
    Tensor<float> a({3}, 0.0f);
    a.enable_grad();
    a.grad_ptr()[0] = 3.0f;
    a.grad_ptr()[1] = 4.0f;
    a.grad_ptr()[2] = 0.0f;
    std::vector<ParamRef<float>> params{{"a", a, false}};
    double norm = clip_gradients(params, 1.0, 0);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-9));
    double post = 0.0;
    for (int i = 0; i < 3; ++i)
        post += static_cast<double>(a.grad_ptr()[i]) * a.grad_ptr()[i];
    CHECK(std::sqrt(post) == doctest::Approx(1.0).epsilon(1e-6));

    a.grad_ptr()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(clip_gradients(params, 1.0, 3), TrainAbortError);
}

TEST_CASE("cable bias parameters receive gradient immediately") {
    Gpt<float> model(toy_model(PosencKind::kCable, 8), 5);
    Rng rng(9);
    std::vector<int32_t> inputs(32), targets(32);
    for (auto& v : inputs) v = static_cast<int32_t>(rng.below(8));
    for (auto& v : targets) v = static_cast<int32_t>(rng.below(8));
    {
        Tape<float> tape;
        tape.backward(model.loss_batch(inputs, targets, 2, 16));
    }
    for (auto& p : model.params()) {
        if (p.name.find("cable.") == std::string::npos) continue;
        double norm = 0.0;
        for (int64_t i = 0; i < p.tensor.numel(); ++i)
            norm += std::fabs(static_cast<double>(p.tensor.grad_ptr()[i]));
        INFO(p.name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("training memorizes an alternating corpus") {
    namespace fs = std::filesystem;
    fs::create_directories("train_toy");
    std::string text;
    for (int i = 0; i < 2000; ++i) text += (i % 2 ? 'b' : 'a');
    Corpus corpus = corpus_from_text(text, 0.1);
    REQUIRE(corpus.vocab_size() == 2);

    Gpt<float> model(toy_model(PosencKind::kCable, corpus.vocab_size()), 3);
    TrainConfig cfg = toy_train();
    TrainResult res = train_loop(model, corpus, cfg, "train_toy", "{}");

    // perplexity of the memorizable language approaches 1
    CHECK(std::exp(res.final_loss) < 1.1);

    // the trace carries the configured schedule from the very first row
    std::ifstream trace(res.trace_path);
    REQUIRE(trace);
    std::string header, first;
    std::getline(trace, header);
    CHECK(header == "step,loss,lr,tokens_seen");
    std::getline(trace, first);
    int step = -1;
    double loss = 0, lr = 0;
    long long tokens = 0;
    REQUIRE(std::sscanf(first.c_str(), "%d,%lf,%lf,%lld", &step, &loss, &lr,
                        &tokens) == 4);
    CHECK(step == 0);
    CHECK(lr == 0.0);
    CHECK(tokens == 64);

    // final checkpoint exists and carries the step counter
    CheckpointData data = load_checkpoint(res.checkpoint_path);
    CHECK(data.step == static_cast<uint64_t>(cfg.steps));
    CHECK(data.has_optimizer);
    CHECK(data.params == flatten_params(model));
}

TEST_CASE("same seed reproduces the loss trace byte for byte") {
    namespace fs = std::filesystem;
    std::string text;
    Rng tr(31);
    for (int i = 0; i < 4000; ++i)
        text += static_cast<char>('a' + tr.below(6));
    Corpus corpus = corpus_from_text(text, 0.1);

    TrainConfig cfg = toy_train();
    cfg.steps = 12;
    cfg.warmup_steps = 4;
    cfg.checkpoint_every = 5;
    std::string traces[2];
    for (int run = 0; run < 2; ++run) {
        const std::string dir = "train_rep" + std::to_string(run);
        fs::create_directories(dir);
        Gpt<float> model(toy_model(PosencKind::kCable, corpus.vocab_size()),
                         11);
        TrainResult res = train_loop(model, corpus, cfg, dir, "{}");
        traces[run] = slurp(res.trace_path);
    }
    CHECK(traces[0] == traces[1]);

    // on random text the untrained loss starts near ln(vocab)
    std::istringstream ts(traces[0]);
    std::string header, first;
    std::getline(ts, header);
    std::getline(ts, first);
    CHECK(std::stod(first.substr(first.find(',') + 1)) ==
          doctest::Approx(std::log(6.0)).epsilon(0.10));
    CHECK(slurp("train_rep0/checkpoint.bin") ==
          slurp("train_rep1/checkpoint.bin"));
}
