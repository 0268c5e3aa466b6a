#include "cable/evalx.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cable/config.hpp"
#include "cable/grad_check.hpp"

namespace cable {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["model_tag"] = model_tag;
    j["encoding"] = encoding;
    auto rows = nlohmann::ordered_json::array();
    for (const PplRow& r : perplexity) {
        nlohmann::ordered_json o;
        o["sequence_length"] = r.sequence_length;
        if (std::isnan(r.perplexity))
            o["perplexity"] = nullptr;
        else
            o["perplexity"] = r.perplexity;
        o["tokens_evaluated"] = r.tokens_evaluated;
        if (!r.error.empty()) o["error"] = r.error;
        rows.push_back(std::move(o));
    }
    j["perplexity"] = std::move(rows);
    auto tp = nlohmann::ordered_json::array();
    for (const ThroughputRow& r : throughput) {
        nlohmann::ordered_json o;
        o["mode"] = r.mode;
        o["tokens_per_second"] = r.tokens_per_second;
        o["peak_bytes"] = r.peak_bytes;
        tp.push_back(std::move(o));
    }
    j["throughput"] = std::move(tp);
    j["timestamp"] = timestamp;
    j["config_hash"] = config_hash;
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::ordered_json& j) {
    EvalReport r;
    r.model_tag = j.at("model_tag").get<std::string>();
    r.encoding = j.at("encoding").get<std::string>();
    for (const auto& o : j.at("perplexity")) {
        PplRow row;
        row.sequence_length = o.at("sequence_length").get<int64_t>();
        row.perplexity = o.at("perplexity").is_null()
                             ? kNan
                             : o.at("perplexity").get<double>();
        row.tokens_evaluated = o.at("tokens_evaluated").get<int64_t>();
        if (o.contains("error")) row.error = o.at("error").get<std::string>();
        r.perplexity.push_back(std::move(row));
    }
    for (const auto& o : j.at("throughput")) {
        ThroughputRow row;
        row.mode = o.at("mode").get<std::string>();
        row.tokens_per_second = o.at("tokens_per_second").get<double>();
        row.peak_bytes = o.at("peak_bytes").get<int64_t>();
        r.throughput.push_back(std::move(row));
    }
    r.timestamp = j.at("timestamp").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    return r;
}

bool EvalReport::operator==(const EvalReport& other) const {
    auto same = [](double a, double b) {
        return (std::isnan(a) && std::isnan(b)) || a == b;
    };
    if (model_tag != other.model_tag || encoding != other.encoding ||
        timestamp != other.timestamp || config_hash != other.config_hash ||
        perplexity.size() != other.perplexity.size() ||
        throughput.size() != other.throughput.size())
        return false;
    for (size_t i = 0; i < perplexity.size(); ++i) {
        const PplRow& a = perplexity[i];
        const PplRow& b = other.perplexity[i];
        if (a.sequence_length != b.sequence_length ||
            !same(a.perplexity, b.perplexity) ||
            a.tokens_evaluated != b.tokens_evaluated || a.error != b.error)
            return false;
    }
    for (size_t i = 0; i < throughput.size(); ++i) {
        const ThroughputRow& a = throughput[i];
        const ThroughputRow& b = other.throughput[i];
        if (a.mode != b.mode || a.tokens_per_second != b.tokens_per_second ||
            a.peak_bytes != b.peak_bytes)
            return false;
    }
    return true;
}

std::string utc_timestamp() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

EvalReport ppl_sweep(Gpt<float>& model, const Corpus& corpus,
                     const std::vector<int64_t>& lengths,
                     const std::string& model_tag,
                     const std::string& config_hash) {
    if (lengths.empty()) throw ArgumentError("ppl_sweep: no lengths given");
    for (size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] < 2)
            throw ArgumentError("ppl_sweep: lengths must be >= 2");
        if (i > 0 && lengths[i] <= lengths[i - 1])
            throw ArgumentError("ppl_sweep: lengths must be strictly increasing");
    }
    EvalReport rep;
    rep.model_tag = model_tag;
    rep.encoding = selector_name(model.config().posenc_kind,
                                 model.config().cable_variant);
    rep.config_hash = config_hash;
    rep.timestamp = utc_timestamp();

    const int64_t eval_begin = corpus.train_len;
    const int64_t eval_len = corpus.eval_len();
    for (int64_t L : lengths) {
        PplRow row;
        row.sequence_length = L;
        const int64_t windows = eval_len / L;
        if (windows == 0) {
            row.perplexity = kNan;
            row.error = "eval split of " + std::to_string(eval_len) +
                        " tokens has no full window of " + std::to_string(L);
            rep.perplexity.push_back(std::move(row));
            continue;
        }
        double nll_sum = 0.0;
        for (int64_t w = 0; w < windows && row.error.empty(); ++w) {
            auto begin = corpus.ids.begin() + eval_begin + w * L;
            std::vector<int32_t> ids(begin, begin + L);
            try {
                nll_sum += static_cast<double>(model.loss(ids).item());
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        }
        if (row.error.empty()) {
            row.perplexity = std::exp(nll_sum / static_cast<double>(windows));
            row.tokens_evaluated = windows * (L - 1);
        } else {
            row.perplexity = kNan;
        }
        rep.perplexity.push_back(std::move(row));
    }
    return rep;
}

DumpResult dump_bias(Gpt<float>& model, const std::vector<int32_t>& ids,
                     int64_t layer, std::vector<int64_t> heads,
                     const std::string& out_dir, int64_t dump_cap) {
    const int64_t t = static_cast<int64_t>(ids.size());
    if (t < 1) throw ArgumentError("dump: input is empty");
    if (t > dump_cap)
        throw ArgumentError("dump: t=" + std::to_string(t) +
                            " exceeds the cap of " + std::to_string(dump_cap));
    const ModelConfig& mc = model.config();
    if (layer < 0 || layer >= mc.n_layers)
        throw ArgumentError("dump: layer " + std::to_string(layer) +
                            " out of range");
    if (heads.empty())
        for (int64_t h = 0; h < mc.n_heads; ++h) heads.push_back(h);
    for (int64_t h : heads)
        if (h < 0 || h >= mc.n_heads)
            throw ArgumentError("dump: head " + std::to_string(h) +
                                " out of range");

    Tensor<float> x = model.attention_input(ids, layer);
    const AttentionLayer<float>& att =
        model.blocks()[static_cast<size_t>(layer)].attn;
    std::vector<Tensor<float>> mats = attention_introspect(x, att);

    fs::create_directories(out_dir);
    DumpResult res;
    nlohmann::ordered_json manifest;
    manifest["layer"] = layer;
    manifest["t"] = t;
    manifest["encoding"] = selector_name(mc.posenc_kind, mc.cable_variant);
    manifest["content"] = is_additive(mc.posenc_kind)
                              ? "additive_bias"
                              : (mc.posenc_kind == PosencKind::kRope
                                     ? "rope_logits"
                                     : "qk_logits");
    manifest["heads"] = heads;
    auto names = nlohmann::ordered_json::array();
    for (int64_t h : heads) {
        const std::string name = "layer" + std::to_string(layer) + "_head" +
                                 std::to_string(h) + ".csv";
        const std::string path = out_dir + "/" + name;
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw IoError("dump: cannot write " + path);
        const float* m = mats[static_cast<size_t>(h)].ptr();
        std::string line;
        for (int64_t i = 0; i < t; ++i) {
            line.clear();
            char cell[32];
            for (int64_t j = 0; j < t; ++j) {
                std::snprintf(cell, sizeof(cell), "%.6g",
                              static_cast<double>(m[i * t + j]));
                if (j) line += ',';
                line += cell;
            }
            line += '\n';
            f << line;
        }
        if (!f) throw IoError("dump: writing " + path + " failed");
        res.files.push_back(path);
        names.push_back(name);
    }
    manifest["files"] = std::move(names);
    res.manifest = out_dir + "/manifest.json";
    std::ofstream mf(res.manifest, std::ios::trunc);
    if (!mf) throw IoError("dump: cannot write " + res.manifest);
    mf << manifest.dump(2) << "\n";
    return res;
}

double timed_train_step(Gpt<float>& model,
                        const std::vector<ParamRef<float>>& params,
                        AdamState& state, const TrainConfig& cfg,
                        const Batch& batch, int64_t step) {
    const auto t0 = Clock::now();
    for (const auto& p : params) {
        Tensor<float> handle = p.tensor;
        handle.zero_grad();
    }
    {
        Tape<float> tape;
        Tensor<float> loss = model.loss_batch(batch.inputs, batch.targets,
                                              batch.batch, batch.t);
        tape.backward(loss);
    }
    clip_gradients(params, cfg.grad_clip, step);
    adamw_step(params, state, lr_at(step, cfg), cfg);
    return seconds_since(t0);
}

double timed_stream_decode(Gpt<float>& model, int64_t n_tokens) {
    if (n_tokens < 2) throw ArgumentError("bench: decode needs >= 2 tokens");
    Rng rng(1);
    const auto t0 = Clock::now();
    model.generate({0}, n_tokens - 1, 0.0, rng, n_tokens);
    return seconds_since(t0);
}

double timed_naive_decode(Gpt<float>& model, int64_t n_tokens) {
    if (n_tokens < 2) throw ArgumentError("bench: decode needs >= 2 tokens");
    std::vector<int32_t> out = {0};
    const int64_t v = model.config().vocab_size;
    const auto t0 = Clock::now();
    for (int64_t k = 1; k < n_tokens; ++k) {
        Tensor<float> logits = model.forward(out);
        const float* last = logits.ptr() + (k - 1) * v;
        int32_t best = 0;
        for (int64_t c = 1; c < v; ++c)
            if (last[c] > last[best]) best = static_cast<int32_t>(c);
        out.push_back(best);
    }
    return seconds_since(t0);
}

int64_t gen_state_bytes(const ModelConfig& cfg, int64_t capacity) {
    const int64_t dh = cfg.d_model / cfg.n_heads;
    return cfg.n_layers * cfg.n_heads * capacity * (2 * dh + 2) *
           static_cast<int64_t>(sizeof(float));
}

BenchResult bench(Gpt<float>& model, const TrainConfig& tcfg, int64_t decode_t,
                  int64_t reps, bool include_naive) {
    if (reps < 1) throw ArgumentError("bench: reps must be >= 1");
    const ModelConfig& mc = model.config();
    auto params = model.params();
    AdamState state;
    const int64_t per = tcfg.batch_size * tcfg.t_train;
    const int64_t micro = (tcfg.tokens_per_update + per - 1) / per;

    Rng rng(tcfg.seed ^ 0x5bdca5ull);
    auto synth = [&]() {
        Batch b;
        b.batch = tcfg.batch_size;
        b.t = tcfg.t_train;
        b.inputs.resize(static_cast<size_t>(per));
        b.targets.resize(static_cast<size_t>(per));
        for (auto& id : b.inputs)
            id = static_cast<int32_t>(rng.below(mc.vocab_size));
        for (auto& id : b.targets)
            id = static_cast<int32_t>(rng.below(mc.vocab_size));
        return b;
    };

    BenchResult res;
    {
        Batch warm = synth();
        timed_train_step(model, params, state, tcfg, warm, 0);
        TensorBytes::reset_peak();
        std::vector<double> times;
        int64_t step = 1;
        for (int64_t r = 0; r < reps; ++r) {
            double sec = 0.0;
            for (int64_t u = 0; u < micro; ++u) {
                Batch b = synth();
                sec += timed_train_step(model, params, state, tcfg, b, step);
                ++step;
            }
            times.push_back(sec);
        }
        res.rows.push_back({"train_batched",
                            static_cast<double>(micro * per) / median(times),
                            TensorBytes::peak.load()});
    }
    {
        timed_stream_decode(model, std::min<int64_t>(32, decode_t));
        std::vector<double> times;
        for (int64_t r = 0; r < reps; ++r)
            times.push_back(timed_stream_decode(model, decode_t));
        res.rows.push_back({"infer_unbatched",
                            static_cast<double>(decode_t) / median(times),
                            gen_state_bytes(mc, decode_t)});
    }
    if (include_naive)
        res.naive_decode_tps = static_cast<double>(decode_t) /
                               timed_naive_decode(model, decode_t);
    return res;
}

GradAuditReport grad_audit(Gpt<double>& model,
                           const std::vector<int32_t>& ids) {
    auto params = model.params();
    NamedParams groups;
    NamedParams cable_groups;
    for (const auto& p : params) {
        groups.emplace_back(p.name, p.tensor);
        if (p.name.find("cable.") != std::string::npos)
            cable_groups.emplace_back(p.name, p.tensor);
    }
    auto make_loss = [&]() { return model.loss(ids); };

    GradAuditReport rep;
    GradCheckReport all = grad_check(make_loss, groups);
    rep.worst = all.max_rel_err;
    for (const auto& g : all.groups)
        rep.rows.push_back({g.name, g.max_rel_err, g.max_rel_err <= kAuditTol});
    rep.pass = all.within(kAuditTol);

    if (!cable_groups.empty()) {
        GradCheckReport iso = grad_check(make_loss, cable_groups);
        rep.cable_isolated = iso.max_rel_err;
        rep.pass = rep.pass && iso.max_rel_err <= kAuditCableTol;

        // frozen-bias control: w_c == 0 makes f and S identically zero, so
        // nothing flows to w_s through the bias product
        std::vector<std::vector<double>> saved;
        for (auto& b : model.blocks())
            for (auto& hp : b.attn.cable) {
                saved.emplace_back(hp.w_c.values().begin(),
                                   hp.w_c.values().end());
                for (auto& v : hp.w_c.values()) v = 0.0;
            }
        for (const auto& p : params) {
            Tensor<double> handle = p.tensor;
            handle.zero_grad();
        }
        {
            Tape<double> tape;
            Tensor<double> loss = model.loss(ids);
            tape.backward(loss);
        }
        rep.frozen_bias_zero = true;
        for (auto& b : model.blocks())
            for (auto& hp : b.attn.cable)
                for (double g : hp.w_s.grad())
                    rep.frozen_bias_zero = rep.frozen_bias_zero && g == 0.0;
        size_t idx = 0;
        for (auto& b : model.blocks())
            for (auto& hp : b.attn.cable) {
                std::copy(saved[idx].begin(), saved[idx].end(),
                          hp.w_c.values().begin());
                ++idx;
            }
        rep.pass = rep.pass && rep.frozen_bias_zero;
    }
    return rep;
}

GradAuditReport grad_audit_small(PosencKind kind, CableVariant variant,
                                 uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = 32;
    cfg.vocab_size = 13;
    cfg.max_train_len = 8;
    cfg.posenc_kind = kind;
    cfg.cable_variant = variant;
    Gpt<double> model(cfg, seed);
    Rng rng(seed ^ 0xa0d17ull);
    std::vector<int32_t> ids(8);
    for (auto& id : ids) id = static_cast<int32_t>(rng.below(cfg.vocab_size));
    return grad_audit(model, ids);
}

}  // namespace cable
