#pragma once

// Extrapolation perplexity sweeps, bias-matrix dumps for plotting,
// throughput/memory benchmarks, and the finite-difference gradient audit.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "cable/data.hpp"
#include "cable/model.hpp"
#include "cable/train.hpp"

namespace cable {

struct PplRow {
    int64_t sequence_length = 0;
    double perplexity = 0.0;  // NaN when this length errored
    int64_t tokens_evaluated = 0;
    std::string error;  // empty on success
};

struct ThroughputRow {
    std::string mode;  // "train_batched" | "infer_unbatched"
    double tokens_per_second = 0.0;
    int64_t peak_bytes = 0;
};

struct EvalReport {
    std::string model_tag;
    std::string encoding;
    std::vector<PplRow> perplexity;
    std::vector<ThroughputRow> throughput;
    std::string timestamp;  // ISO 8601 UTC
    std::string config_hash;

    nlohmann::ordered_json to_json() const;
    static EvalReport from_json(const nlohmann::ordered_json& j);
    // field-wise; treats two NaN perplexities as equal
    bool operator==(const EvalReport& other) const;
};

std::string utc_timestamp();

// For each length: mean next-token NLL over non-overlapping windows of the
// eval split, perplexity = exp(mean). Lengths must be strictly increasing.
// A length that cannot be evaluated (no full window, or the model rejects
// it) contributes an error row with null perplexity and the sweep continues.
EvalReport ppl_sweep(Gpt<float>& model, const Corpus& corpus,
                     const std::vector<int64_t>& lengths,
                     const std::string& model_tag = "",
                     const std::string& config_hash = "");

struct DumpResult {
    std::vector<std::string> files;  // one CSV per head, head order
    std::string manifest;
};

// Writes one t x t CSV per selected head (empty selector = all heads) under
// out_dir, 6 significant digits, named layer{L}_head{H}.csv, plus
// manifest.json. Additive kinds dump the logit delta; RoPE dumps the
// post-rotation q.k logits; other kinds dump the plain scaled logits.
DumpResult dump_bias(Gpt<float>& model, const std::vector<int32_t>& ids,
                     int64_t layer, std::vector<int64_t> heads,
                     const std::string& out_dir, int64_t dump_cap = 512);

// --- throughput -----------------------------------------------------------

// One optimizer-shaped step on the given batch: zero grads, forward, scaled
// cross-entropy, backward, clip, AdamW update. Returns wall seconds.
double timed_train_step(Gpt<float>& model,
                        const std::vector<ParamRef<float>>& params,
                        AdamState& state, const TrainConfig& cfg,
                        const Batch& batch, int64_t step);

// Greedy streaming decode of n_tokens total (prompt of one token) through
// the per-layer caches. Returns wall seconds.
double timed_stream_decode(Gpt<float>& model, int64_t n_tokens);

// Reference decode that recomputes the full prefix for every token.
double timed_naive_decode(Gpt<float>& model, int64_t n_tokens);

// Streaming-cache footprint of a decode session at the given capacity.
int64_t gen_state_bytes(const ModelConfig& cfg, int64_t capacity);

struct BenchResult {
    std::vector<ThroughputRow> rows;  // train_batched, infer_unbatched
    double naive_decode_tps = 0.0;    // single-rep full-recompute reference
};

// Medians over reps timed repetitions, one untimed warmup per mode. The
// train mode runs full token-budget updates (tokens_per_update per rep) on
// synthetic ids; decode modes stream decode_t tokens.
BenchResult bench(Gpt<float>& model, const TrainConfig& tcfg, int64_t decode_t,
                  int64_t reps, bool include_naive = true);

// --- gradient audit -------------------------------------------------------

struct GradAuditRow {
    std::string group;
    double max_rel_err = 0.0;
    bool pass = false;  // <= 1e-3
};

struct GradAuditReport {
    std::vector<GradAuditRow> rows;
    double worst = 0.0;
    double cable_isolated = 0.0;   // w_c/w_s-only pass, tolerance 1e-4
    bool frozen_bias_zero = true;  // w_c == 0 forces exactly zero w_s grads
    bool pass = false;
};

inline constexpr double kAuditTol = 1e-3;
inline constexpr double kAuditCableTol = 1e-4;

// Verifies every parameter group of the given 64-bit model against central
// finite differences of the sequence loss. The CABLE-specific checks run
// only when the model carries cable heads.
GradAuditReport grad_audit(Gpt<double>& model, const std::vector<int32_t>& ids);

// Convenience: 2-layer, d=32 64-bit model with the given encoding on a
// random length-8 sequence.
GradAuditReport grad_audit_small(PosencKind kind, CableVariant variant,
                                 uint64_t seed = 7);

}  // namespace cable
