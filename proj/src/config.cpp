#include "cable/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cable/errors.hpp"

namespace cable {
namespace {

using nlohmann::json;

int64_t as_int(const std::string& key, const json& v) {
    if (!v.is_number_integer())
        throw ConfigError("config: key '" + key + "' expects an integer");
    return v.get<int64_t>();
}

double as_real(const std::string& key, const json& v) {
    if (!v.is_number())
        throw ConfigError("config: key '" + key + "' expects a number");
    return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
    if (!v.is_boolean())
        throw ConfigError("config: key '" + key + "' expects true/false");
    return v.get<bool>();
}

std::string as_str(const std::string& key, const json& v) {
    if (!v.is_string())
        throw ConfigError("config: key '" + key + "' expects a string");
    return v.get<std::string>();
}

std::vector<int64_t> as_int_list(const std::string& key, const json& v) {
    if (!v.is_array())
        throw ConfigError("config: key '" + key + "' expects an array");
    std::vector<int64_t> out;
    for (const auto& e : v) out.push_back(as_int(key, e));
    return out;
}

uint64_t as_seed(const std::string& key, const json& v) {
    if (!v.is_number_integer())
        throw ConfigError("config: key '" + key + "' expects an integer");
    return v.is_number_unsigned() ? v.get<uint64_t>()
                                  : static_cast<uint64_t>(v.get<int64_t>());
}

using Setter = std::function<void(RunConfig&, const std::string&, const json&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model.n_layers",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.n_layers = as_int(k, v);
         }},
        {"model.n_heads",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.n_heads = as_int(k, v);
         }},
        {"model.d_model",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.d_model = as_int(k, v);
         }},
        {"model.vocab_size",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.vocab_size = as_int(k, v);
         }},
        {"model.max_train_len",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.max_train_len = as_int(k, v);
         }},
        {"model.posenc",
         [](RunConfig& c, const std::string& k, const json& v) {
             auto [kind, variant] = parse_selector(as_str(k, v));
             c.model.posenc_kind = kind;
             c.model.cable_variant = variant;
         }},
        {"model.dropout",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.dropout = as_real(k, v);
         }},
        {"model.tie_embeddings",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.tie_embeddings = as_bool(k, v);
         }},
        {"model.t5_buckets",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.t5_buckets = as_int(k, v);
         }},
        {"model.fire_hidden",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.fire_hidden = as_int(k, v);
         }},
        {"model.fire_c",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.fire_c = as_real(k, v);
         }},
        {"model.rope_theta",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.rope_theta = as_real(k, v);
         }},
        {"model.ape_max_len",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.model.ape_max_len = as_int(k, v);
         }},
        {"train.steps",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.steps = as_int(k, v);
         }},
        {"train.tokens_per_update",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.tokens_per_update = as_int(k, v);
         }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.batch_size = as_int(k, v);
         }},
        {"train.t_train",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.t_train = as_int(k, v);
         }},
        {"train.lr_max",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.lr_max = as_real(k, v);
         }},
        {"train.lr_min",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.lr_min = as_real(k, v);
         }},
        {"train.warmup_steps",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.warmup_steps = as_int(k, v);
         }},
        {"train.beta1",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.beta1 = as_real(k, v);
         }},
        {"train.beta2",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.beta2 = as_real(k, v);
         }},
        {"train.weight_decay",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.weight_decay = as_real(k, v);
         }},
        {"train.grad_clip",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.grad_clip = as_real(k, v);
         }},
        {"train.seed",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.seed = as_seed(k, v);
         }},
        {"train.checkpoint_every",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.train.checkpoint_every = as_int(k, v);
         }},
        {"data.corpus",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.corpus_path = as_str(k, v);
         }},
        {"data.eval_fraction",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.eval_fraction = as_real(k, v);
         }},
        {"eval.lengths",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.eval_lengths = as_int_list(k, v);
         }},
        {"bench.t",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.bench_t = as_int(k, v);
         }},
        {"bench.reps",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.bench_reps = as_int(k, v);
         }},
        {"out.dir",
         [](RunConfig& c, const std::string& k, const json& v) {
             c.out_dir = as_str(k, v);
         }},
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = 2;  // derived later; placeholder
    m.validate();
    train.validate();
    if (corpus_path.empty()) throw ConfigError("config: data.corpus is empty");
    if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
        throw ConfigError("config: data.eval_fraction must lie in (0, 1)");
    if (eval_lengths.empty())
        throw ConfigError("config: eval.lengths must be non-empty");
    for (size_t i = 0; i < eval_lengths.size(); ++i) {
        if (eval_lengths[i] < 2)
            throw ConfigError("config: eval lengths must be >= 2");
        if (i > 0 && eval_lengths[i] <= eval_lengths[i - 1])
            throw ConfigError("config: eval.lengths must be strictly increasing");
    }
    if (bench_t < 1 || bench_reps < 1)
        throw ConfigError("config: bench.t and bench.reps must be positive");
    if (out_dir.empty()) throw ConfigError("config: out.dir is empty");
}

const std::vector<std::string>& selector_names() {
    static const std::vector<std::string> names = {
        "cable", "cable-nw", "kcable",     "alibi",     "kerple", "fire",
        "t5",    "rope",     "sinusoidal", "learnable", "nope"};
    return names;
}

std::pair<PosencKind, CableVariant> parse_selector(const std::string& name) {
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
    std::string all;
    for (const auto& n : selector_names()) all += (all.empty() ? "" : ", ") + n;
    throw ConfigError("config: unknown encoding '" + name + "' (expected one of " +
                      all + ")");
}

std::string selector_name(PosencKind kind, CableVariant variant) {
    switch (kind) {
        case PosencKind::kCable:
            switch (variant) {
                case CableVariant::kFull: return "cable";
                case CableVariant::kNoWeights: return "cable-nw";
                case CableVariant::kKernelized: return "kcable";
            }
            break;
        case PosencKind::kAlibi: return "alibi";
        case PosencKind::kKerple: return "kerple";
        case PosencKind::kFire: return "fire";
        case PosencKind::kT5: return "t5";
        case PosencKind::kRope: return "rope";
        case PosencKind::kSinusoidal: return "sinusoidal";
        case PosencKind::kLearnable: return "learnable";
        case PosencKind::kNope: return "nope";
    }
    throw ArgumentError("selector_name: unmapped encoding");
}

void apply_key(RunConfig& cfg, const std::string& key,
               const nlohmann::json& value) {
    auto it = setters().find(key);
    if (it == setters().end())
        throw ConfigError("config: unknown key '" + key + "'");
    it->second(cfg, key, value);
}

void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& raw) {
    json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (v.is_discarded() || v.is_object() || v.is_null()) v = json(raw);
    apply_key(cfg, key, v);
}

RunConfig config_from_json(const nlohmann::json& object) {
    if (!object.is_object())
        throw ConfigError("config: top level must be a JSON object");
    RunConfig cfg;
    for (const auto& [key, value] : object.items()) apply_key(cfg, key, value);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open " + path);
    json parsed = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded())
        throw ConfigError("config: " + path + " is not valid JSON");
    return config_from_json(parsed);
}

nlohmann::json run_config_json(const RunConfig& cfg) {
    json j;  // std::map-backed: keys serialize sorted
    j["model.n_layers"] = cfg.model.n_layers;
    j["model.n_heads"] = cfg.model.n_heads;
    j["model.d_model"] = cfg.model.d_model;
    j["model.vocab_size"] = cfg.model.vocab_size;
    j["model.max_train_len"] = cfg.model.max_train_len;
    j["model.posenc"] =
        selector_name(cfg.model.posenc_kind, cfg.model.cable_variant);
    j["model.dropout"] = cfg.model.dropout;
    j["model.tie_embeddings"] = cfg.model.tie_embeddings;
    j["model.t5_buckets"] = cfg.model.t5_buckets;
    j["model.fire_hidden"] = cfg.model.fire_hidden;
    j["model.fire_c"] = cfg.model.fire_c;
    j["model.rope_theta"] = cfg.model.rope_theta;
    j["model.ape_max_len"] = cfg.model.ape_max_len;
    j["train.steps"] = cfg.train.steps;
    j["train.tokens_per_update"] = cfg.train.tokens_per_update;
    j["train.batch_size"] = cfg.train.batch_size;
    j["train.t_train"] = cfg.train.t_train;
    j["train.lr_max"] = cfg.train.lr_max;
    j["train.lr_min"] = cfg.train.lr_min;
    j["train.warmup_steps"] = cfg.train.warmup_steps;
    j["train.beta1"] = cfg.train.beta1;
    j["train.beta2"] = cfg.train.beta2;
    j["train.weight_decay"] = cfg.train.weight_decay;
    j["train.grad_clip"] = cfg.train.grad_clip;
    j["train.seed"] = cfg.train.seed;
    j["train.checkpoint_every"] = cfg.train.checkpoint_every;
    j["data.corpus"] = cfg.corpus_path;
    j["data.eval_fraction"] = cfg.eval_fraction;
    j["eval.lengths"] = cfg.eval_lengths;
    j["bench.t"] = cfg.bench_t;
    j["bench.reps"] = cfg.bench_reps;
    j["out.dir"] = cfg.out_dir;
    return j;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = run_config_json(cfg).dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cable
