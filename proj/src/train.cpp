#include "cable/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cable/checkpoint.hpp"

namespace cable {

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0) throw ArgumentError("lr_at: step must be >= 0");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr_max * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    if (step >= cfg.steps) return cfg.lr_min;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) /
        static_cast<double>(cfg.steps - cfg.warmup_steps);
    return cfg.lr_min +
           0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

double clip_gradients(const std::vector<ParamRef<float>>& params,
                      double max_norm, int64_t step) {
    double sq = 0.0;
    for (const auto& p : params) {
        const float* g = p.tensor.grad_ptr();
        for (int64_t i = 0; i < p.tensor.numel(); ++i)
            sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    if (!std::isfinite(sq))
        throw TrainAbortError("non-finite gradient at step " +
                              std::to_string(step));
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (const auto& p : params) {
            float* g = p.tensor.grad_ptr();
            for (int64_t i = 0; i < p.tensor.numel(); ++i) g[i] *= s;
        }
    }
    return norm;
}

void adamw_step(const std::vector<ParamRef<float>>& params, AdamState& state,
                double lr, const TrainConfig& cfg) {
    int64_t total = 0;
    for (const auto& p : params) total += p.tensor.numel();
    if (state.m.empty()) {
        state.m.assign(static_cast<size_t>(total), 0.0f);
        state.v.assign(static_cast<size_t>(total), 0.0f);
    } else if (static_cast<int64_t>(state.m.size()) != total ||
               static_cast<int64_t>(state.v.size()) != total) {
        throw ArgumentError("adamw: optimizer state does not match parameters");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    constexpr double kEps = 1e-8;
    size_t off = 0;
    for (const auto& p : params) {
        Tensor<float> w = p.tensor;  // shared-buffer handle
        float* wp = w.ptr();
        const float* g = p.tensor.grad_ptr();
        for (int64_t i = 0; i < w.numel(); ++i, ++off) {
            const double gi = static_cast<double>(g[i]);
            const double m = cfg.beta1 * state.m[off] + (1.0 - cfg.beta1) * gi;
            const double v =
                cfg.beta2 * state.v[off] + (1.0 - cfg.beta2) * gi * gi;
            state.m[off] = static_cast<float>(m);
            state.v[off] = static_cast<float>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + kEps);
            double next = static_cast<double>(wp[i]) - lr * update;
            if (p.decay) next -= lr * cfg.weight_decay * wp[i];
            wp[i] = static_cast<float>(next);
        }
    }
}

TrainResult train_loop(Gpt<float>& model, const Corpus& corpus,
                       const TrainConfig& cfg, const std::string& out_dir,
                       const std::string& config_json) {
    cfg.validate();
    BatchSampler sampler(corpus, /*eval_split=*/false, cfg.t_train,
                         cfg.batch_size, cfg.seed);
    auto params = model.params();
    AdamState state;

    const int64_t per_batch = cfg.batch_size * cfg.t_train;
    const int64_t micro = (cfg.tokens_per_update + per_batch - 1) / per_batch;
    const int64_t tokens_per_step = micro * per_batch;

    const std::string trace_path = out_dir + "/loss_trace.csv";
    const std::string ckpt_path = out_dir + "/checkpoint.bin";
    std::ofstream trace(trace_path, std::ios::trunc);
    if (!trace) throw IoError("train: cannot write " + trace_path);
    trace << "step,loss,lr,tokens_seen\n";

    TrainResult result;
    result.trace_path = trace_path;
    result.checkpoint_path = ckpt_path;

    auto save = [&](int64_t step) {
        CheckpointData data;
        data.config_json = config_json;
        data.params = flatten_params(model);
        data.has_optimizer = true;
        data.opt_t = state.t;
        data.opt_m = state.m;
        data.opt_v = state.v;
        data.rng_state = sampler.rng().serialize();
        data.step = static_cast<uint64_t>(step);
        save_checkpoint(ckpt_path, data);
    };

    for (int64_t step = 0; step < cfg.steps; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        double step_loss = 0.0;
        for (int64_t u = 0; u < micro; ++u) {
            Batch batch = sampler.next();
            Tape<float> tape;
            Tensor<float> loss = model.loss_batch(batch.inputs, batch.targets,
                                                  batch.batch, batch.t);
            Tensor<float> root =
                scale(loss, 1.0f / static_cast<float>(micro));
            tape.backward(root);
            step_loss += static_cast<double>(loss.item());
        }
        step_loss /= static_cast<double>(micro);
        clip_gradients(params, cfg.grad_clip, step);
        adamw_step(params, state, lr_at(step, cfg), cfg);

        char line[128];
        std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%lld\n",
                      static_cast<long long>(step), step_loss,
                      lr_at(step, cfg),
                      static_cast<long long>((step + 1) * tokens_per_step));
        trace << line;
        trace.flush();
        result.final_loss = step_loss;

        if ((cfg.checkpoint_every > 0 &&
             (step + 1) % cfg.checkpoint_every == 0) ||
            step + 1 == cfg.steps)
            save(step + 1);
    }
    if (!trace) throw IoError("train: writing " + trace_path + " failed");
    return result;
}

}  // namespace cable
