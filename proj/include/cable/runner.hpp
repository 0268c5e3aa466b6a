#pragma once

// Orchestrates training runs: resolves a RunConfig into a per-run directory
// named by the config hash, trains, and writes the resolved config, loss
// trace, checkpoint, and vocabulary sidecar. Also rebuilds a model from a
// finished run's checkpoint for evaluation.

#include <memory>
#include <string>

#include "cable/config.hpp"
#include "cable/data.hpp"
#include "cable/model.hpp"

namespace cable {

struct RunPaths {
    std::string run_dir;
    std::string resolved_config;
    std::string checkpoint;
    std::string loss_trace;
    std::string vocab;
};

RunPaths run_paths(const RunConfig& cfg);

// True when the run directory already holds a finished run of exactly this
// config: the stored resolved config parses to the same JSON object and the
// checkpoint's step counter equals train.steps.
bool run_is_cached(const RunConfig& cfg);

// Trains from scratch, overwriting any partial outputs. The model is seeded
// from train.seed; model.vocab_size 0 resolves to the corpus vocabulary.
RunPaths run_training(const RunConfig& cfg);

struct LoadedRun {
    RunConfig cfg;
    Corpus corpus;
    std::unique_ptr<Gpt<float>> model;
    uint64_t step = 0;
    std::string config_hash;
};

// Rebuilds config, corpus, and model from a checkpoint. corpus_override
// replaces the checkpoint's data.corpus path when non-empty.
LoadedRun load_run(const std::string& checkpoint_path,
                   const std::string& corpus_override = "");

}  // namespace cable
