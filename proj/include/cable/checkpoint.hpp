#pragma once

// Checkpoint file: magic "CBLCKPT1", little-endian throughout.
//   u32 config_len, config JSON (UTF-8)
//   u64 n_params,   float32 parameters in canonical registry order
//   u8 has_optimizer; if set: u64 adam_t, u64 n (== n_params),
//                             float32 m[n], float32 v[n]
//   u32 rng_len,    RNG state text
//   u64 step
// Reloading restores every parameter bit-for-bit.

#include <cstdint>
#include <string>
#include <vector>

#include "cable/model.hpp"

namespace cable {

struct CheckpointData {
    std::string config_json;
    std::vector<float> params;
    bool has_optimizer = false;
    uint64_t opt_t = 0;
    std::vector<float> opt_m, opt_v;
    std::string rng_state;
    uint64_t step = 0;
};

std::vector<float> flatten_params(Gpt<float>& model);
void load_params(Gpt<float>& model, const std::vector<float>& flat);

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace cable
