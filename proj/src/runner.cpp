#include "cable/runner.hpp"

#include <filesystem>
#include <fstream>

#include "cable/checkpoint.hpp"
#include "cable/train.hpp"

namespace cable {
namespace {

namespace fs = std::filesystem;

ModelConfig resolve_model(const RunConfig& cfg, const Corpus& corpus) {
    ModelConfig mc = cfg.model;
    if (mc.vocab_size == 0) {
        mc.vocab_size = corpus.vocab_size();
    } else if (mc.vocab_size < corpus.vocab_size()) {
        throw ConfigError("config: model.vocab_size " +
                          std::to_string(mc.vocab_size) +
                          " is smaller than the corpus vocabulary of " +
                          std::to_string(corpus.vocab_size()));
    }
    return mc;
}

}  // namespace

RunPaths run_paths(const RunConfig& cfg) {
    RunPaths p;
    p.run_dir = cfg.out_dir + "/" + config_hash(cfg);
    p.resolved_config = p.run_dir + "/resolved_config.json";
    p.checkpoint = p.run_dir + "/checkpoint.bin";
    p.loss_trace = p.run_dir + "/loss_trace.csv";
    p.vocab = p.run_dir + "/vocab.txt";
    return p;
}

bool run_is_cached(const RunConfig& cfg) {
    const RunPaths p = run_paths(cfg);
    std::ifstream rc(p.resolved_config, std::ios::binary);
    if (!rc) return false;
    nlohmann::json stored =
        nlohmann::json::parse(rc, nullptr, /*allow_exceptions=*/false);
    if (stored.is_discarded() || stored != run_config_json(cfg)) return false;
    if (!fs::exists(p.checkpoint)) return false;
    try {
        CheckpointData data = load_checkpoint(p.checkpoint);
        return data.step == static_cast<uint64_t>(cfg.train.steps);
    } catch (const std::exception&) {
        return false;
    }
}

RunPaths run_training(const RunConfig& cfg) {
    cfg.validate();
    const RunPaths p = run_paths(cfg);
    fs::create_directories(p.run_dir);

    const std::string resolved = run_config_json(cfg).dump(2) + "\n";
    {
        std::ofstream out(p.resolved_config, std::ios::trunc);
        if (!out) throw IoError("train: cannot write " + p.resolved_config);
        out << resolved;
    }

    Corpus corpus = load_corpus(cfg.corpus_path, cfg.eval_fraction);
    write_vocab_sidecar(corpus, p.vocab);
    Gpt<float> model(resolve_model(cfg, corpus), cfg.train.seed);
    train_loop(model, corpus, cfg.train, p.run_dir,
               run_config_json(cfg).dump());
    return p;
}

LoadedRun load_run(const std::string& checkpoint_path,
                   const std::string& corpus_override) {
    CheckpointData data = load_checkpoint(checkpoint_path);
    nlohmann::json stored = nlohmann::json::parse(
        data.config_json, nullptr, /*allow_exceptions=*/false);
    if (stored.is_discarded())
        throw IoError("checkpoint: embedded config is not valid JSON");

    LoadedRun run;
    run.cfg = config_from_json(stored);
    run.config_hash = config_hash(run.cfg);
    run.step = data.step;
    const std::string corpus_path =
        corpus_override.empty() ? run.cfg.corpus_path : corpus_override;
    run.corpus = load_corpus(corpus_path, run.cfg.eval_fraction);
    run.model = std::make_unique<Gpt<float>>(
        resolve_model(run.cfg, run.corpus), run.cfg.train.seed);
    if (run.model->param_count() != static_cast<int64_t>(data.params.size()))
        throw ConfigError(
            "checkpoint: parameter count mismatch against corpus '" +
            corpus_path + "' (wrong corpus or config?)");
    load_params(*run.model, data.params);
    return run;
}

}  // namespace cable
