#pragma once

// AdamW with decoupled decay on matrices only, warmup + cosine learning
// rate, global gradient clipping, and a token-budgeted accumulation loop.

#include <cstdint>
#include <string>
#include <vector>

#include "cable/data.hpp"
#include "cable/model.hpp"

namespace cable {

struct TrainConfig {
    int64_t steps = 2000;
    int64_t tokens_per_update = 16384;
    int64_t batch_size = 16;
    int64_t t_train = 128;
    double lr_max = 6e-4;
    double lr_min = 6e-5;
    int64_t warmup_steps = 750;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    uint64_t seed = 1;
    int64_t checkpoint_every = 500;

    void validate() const {
        if (steps < 1 || batch_size < 1 || t_train < 1 ||
            tokens_per_update < 1)
            throw ConfigError("train: steps/batch/t/tokens must be positive");
        if (lr_min > lr_max)
            throw ConfigError("train: lr_min must not exceed lr_max");
        if (warmup_steps < 0 || warmup_steps >= steps)
            throw ConfigError("train: warmup_steps must lie in [0, steps)");
        if (grad_clip <= 0.0)
            throw ConfigError("train: grad_clip must be positive");
    }
};

// linear ramp 0 -> lr_max over warmup, cosine to lr_min at steps, flat after
double lr_at(int64_t step, const TrainConfig& cfg);

struct AdamState {
    uint64_t t = 0;
    std::vector<float> m, v;  // flat, canonical parameter order
};

// global-norm clip; returns the pre-clip norm, throws TrainAbortError when
// any gradient is non-finite
double clip_gradients(const std::vector<ParamRef<float>>& params,
                      double max_norm, int64_t step);

void adamw_step(const std::vector<ParamRef<float>>& params, AdamState& state,
                double lr, const TrainConfig& cfg);

struct TrainResult {
    double final_loss = 0.0;
    std::string trace_path;
    std::string checkpoint_path;
};

// Trains in place. Writes loss_trace.csv (`step,loss,lr,tokens_seen`) and
// checkpoint.bin under out_dir; config_json is embedded in the checkpoint.
TrainResult train_loop(Gpt<float>& model, const Corpus& corpus,
                       const TrainConfig& cfg, const std::string& out_dir,
                       const std::string& config_json);

}  // namespace cable
