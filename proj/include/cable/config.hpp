#pragma once

// Flat dotted-key run configuration. A single JSON object file (keys like
// "model.n_layers") merges over the defaults, CLI overrides merge over the
// file, and the fully resolved config is serialized with sorted keys next to
// every run's outputs. Unknown keys are hard errors.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cable/model.hpp"
#include "cable/train.hpp"

namespace cable {

struct RunConfig {
    ModelConfig model;  // vocab_size 0 -> derived from the corpus at load
    TrainConfig train;
    std::string corpus_path = "data/corpus.txt";
    double eval_fraction = 0.01;
    std::vector<int64_t> eval_lengths = {64, 128, 256, 512, 1024};
    int64_t bench_t = 512;
    int64_t bench_reps = 5;
    std::string out_dir = "runs";

    void validate() const;
};

// Encoding selector <-> (kind, variant). One flag drives the whole zoo:
// cable, cable-nw, kcable, alibi, kerple, fire, t5, rope, sinusoidal,
// learnable, nope.
const std::vector<std::string>& selector_names();
std::pair<PosencKind, CableVariant> parse_selector(const std::string& name);
std::string selector_name(PosencKind kind, CableVariant variant);

// Applies one dotted key; throws ConfigError for unknown keys or bad types.
void apply_key(RunConfig& cfg, const std::string& key,
               const nlohmann::json& value);
// CLI form: raw text is parsed as JSON when possible, else taken as a string.
void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& raw);

RunConfig config_from_json(const nlohmann::json& object);
RunConfig load_run_config(const std::string& path);

// Sorted-key flat object; the canonical serialization hashed below.
nlohmann::json run_config_json(const RunConfig& cfg);
// FNV-1a 64-bit over the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace cable
