// Command-line front end: train / eval / compare / dump-bias / bench / audit.
// Configs are flat dotted-key JSON files; flags beat file values beat
// defaults. Every failure prints one machine-readable JSON line on stderr;
// invalid config keys exit 2, missing checkpoints exit 3.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cable/blas.hpp"
#include "cable/config.hpp"
#include "cable/errors.hpp"
#include "cable/evalx.hpp"
#include "cable/runner.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
    std::string posenc;
    std::string cable_variant;
    int64_t steps = -1;
    int64_t seed = -1;
    std::string corpus;
    std::string out;
};

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--set", o.sets,
                    "override one dotted key, e.g. --set train.steps=10");
    sub->add_option("--posenc", o.posenc,
                    "encoding selector (cable, cable-nw, kcable, alibi, "
                    "kerple, fire, t5, rope, sinusoidal, learnable, nope)");
    sub->add_option("--cable-variant", o.cable_variant,
                    "cable variant: full, nw, kernelized");
    sub->add_option("--steps", o.steps, "training steps");
    sub->add_option("--seed", o.seed, "training/model seed");
    sub->add_option("--corpus", o.corpus, "corpus text file");
    sub->add_option("--out", o.out, "output root directory");
}

cable::RunConfig make_config(const CommonOpts& o) {
    cable::RunConfig cfg;
    if (!o.config_path.empty()) cfg = cable::load_run_config(o.config_path);
    for (const std::string& kv : o.sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw cable::ConfigError("config: --set expects key=value, got '" +
                                     kv + "'");
        cable::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.posenc.empty())
        cable::apply_key(cfg, "model.posenc", nlohmann::json(o.posenc));
    if (!o.cable_variant.empty()) {
        if (cfg.model.posenc_kind != cable::PosencKind::kCable)
            throw cable::ConfigError(
                "config: --cable-variant requires a cable encoding");
        if (o.cable_variant == "full")
            cfg.model.cable_variant = cable::CableVariant::kFull;
        else if (o.cable_variant == "nw")
            cfg.model.cable_variant = cable::CableVariant::kNoWeights;
        else if (o.cable_variant == "kernelized")
            cfg.model.cable_variant = cable::CableVariant::kKernelized;
        else
            throw cable::ConfigError("config: unknown cable variant '" +
                                     o.cable_variant +
                                     "' (expected full, nw, kernelized)");
    }
    if (o.steps >= 0) cfg.train.steps = o.steps;
    if (o.seed >= 0) cfg.train.seed = static_cast<uint64_t>(o.seed);
    if (!o.corpus.empty()) cfg.corpus_path = o.corpus;
    if (!o.out.empty()) cfg.out_dir = o.out;
    cfg.validate();
    return cfg;
}

std::string default_tag(const cable::LoadedRun& run) {
    return cable::selector_name(run.cfg.model.posenc_kind,
                                run.cfg.model.cable_variant) +
           "-" + run.config_hash.substr(0, 8);
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw cable::IoError("cannot write " + path);
    out << text;
    if (!out) throw cable::IoError("writing " + path + " failed");
}

int cmd_train(const CommonOpts& o, bool force) {
    cable::RunConfig cfg = make_config(o);
    ordered_json out;
    const cable::RunPaths paths = cable::run_paths(cfg);
    out["run_dir"] = paths.run_dir;
    out["checkpoint"] = paths.checkpoint;
    out["loss_trace"] = paths.loss_trace;
    if (!force && cable::run_is_cached(cfg)) {
        out["cached"] = true;
    } else {
        cable::run_training(cfg);
        out["cached"] = false;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, std::vector<int64_t> lengths,
             const std::string& corpus, const std::string& tag,
             const std::string& report_path) {
    cable::LoadedRun run = cable::load_run(checkpoint, corpus);
    if (lengths.empty()) lengths = run.cfg.eval_lengths;
    cable::EvalReport rep =
        cable::ppl_sweep(*run.model, run.corpus, lengths,
                         tag.empty() ? default_tag(run) : tag,
                         run.config_hash);
    const std::string out_path =
        report_path.empty()
            ? (fs::path(checkpoint).parent_path() / "eval_report.json").string()
            : report_path;
    const std::string text = rep.to_json().dump(2) + "\n";
    write_text(out_path, text);
    std::cout << text;
    return 0;
}

int cmd_compare(const std::vector<std::string>& report_files,
                const std::string& out_path) {
    if (report_files.empty())
        throw cable::ArgumentError("compare: no report files given");
    std::vector<cable::EvalReport> reports;
    for (const std::string& path : report_files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw cable::IoError("compare: cannot open " + path);
        ordered_json j = ordered_json::parse(in, nullptr, false);
        if (j.is_discarded())
            throw cable::IoError("compare: " + path + " is not valid JSON");
        reports.push_back(cable::EvalReport::from_json(j));
    }
    // column labels: encoding, disambiguated by tag when encodings repeat
    std::map<std::string, int> enc_count;
    for (const auto& r : reports) enc_count[r.encoding] += 1;
    std::vector<std::string> labels;
    for (const auto& r : reports)
        labels.push_back(enc_count[r.encoding] > 1 && !r.model_tag.empty()
                             ? r.model_tag
                             : r.encoding);
    std::vector<int64_t> lengths;
    for (const auto& r : reports)
        for (const auto& row : r.perplexity)
            if (std::find(lengths.begin(), lengths.end(),
                          row.sequence_length) == lengths.end())
                lengths.push_back(row.sequence_length);
    std::sort(lengths.begin(), lengths.end());

    std::string csv = "length";
    for (const auto& label : labels) csv += "," + label;
    csv += "\n";
    for (int64_t L : lengths) {
        csv += std::to_string(L);
        for (const auto& r : reports) {
            csv += ",";
            for (const auto& row : r.perplexity)
                if (row.sequence_length == L && !std::isnan(row.perplexity)) {
                    char cell[32];
                    std::snprintf(cell, sizeof(cell), "%.6g", row.perplexity);
                    csv += cell;
                    break;
                }
        }
        csv += "\n";
    }
    if (out_path.empty())
        std::cout << csv;
    else
        write_text(out_path, csv);
    return 0;
}

int cmd_dump_bias(const std::string& checkpoint, const std::string& input_path,
                  int64_t layer, const std::vector<int64_t>& heads,
                  const std::string& corpus, std::string out_dir,
                  int64_t cap) {
    cable::LoadedRun run = cable::load_run(checkpoint, corpus);
    std::ifstream in(input_path, std::ios::binary);
    if (!in) throw cable::IoError("dump: cannot open " + input_path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    const std::vector<int32_t> ids = run.corpus.encode(text);
    if (out_dir.empty())
        out_dir = (fs::path(checkpoint).parent_path() /
                   ("bias_layer" + std::to_string(layer)))
                      .string();
    cable::DumpResult res =
        cable::dump_bias(*run.model, ids, layer, heads, out_dir, cap);
    ordered_json out;
    out["files"] = res.files;
    out["manifest"] = res.manifest;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_bench(const CommonOpts& o, bool skip_naive,
              const std::string& report_path) {
    cable::RunConfig cfg = make_config(o);
    cable::ModelConfig mc = cfg.model;
    if (mc.vocab_size == 0) {
        try {
            mc.vocab_size =
                cable::load_corpus(cfg.corpus_path, cfg.eval_fraction)
                    .vocab_size();
        } catch (const std::exception&) {
            throw cable::ConfigError(
                "bench: set model.vocab_size or point data.corpus at an "
                "existing file");
        }
    }
    cable::Gpt<float> model(mc, cfg.train.seed);
    cable::BenchResult res =
        cable::bench(model, cfg.train, cfg.bench_t, cfg.bench_reps,
                     !skip_naive);
    ordered_json out;
    auto rows = ordered_json::array();
    for (const auto& r : res.rows) {
        ordered_json row;
        row["mode"] = r.mode;
        row["tokens_per_second"] = r.tokens_per_second;
        row["peak_bytes"] = r.peak_bytes;
        rows.push_back(std::move(row));
    }
    out["throughput"] = std::move(rows);
    if (!skip_naive)
        out["naive_decode_tokens_per_second"] = res.naive_decode_tps;
    const std::string text = out.dump(2) + "\n";
    if (!report_path.empty()) write_text(report_path, text);
    std::cout << text;
    return 0;
}

int cmd_audit(const CommonOpts& o) {
    cable::RunConfig cfg = make_config(o);
    cable::GradAuditReport rep = cable::grad_audit_small(
        cfg.model.posenc_kind, cfg.model.cable_variant, cfg.train.seed);
    ordered_json out;
    auto rows = ordered_json::array();
    for (const auto& r : rep.rows) {
        ordered_json row;
        row["group"] = r.group;
        row["max_rel_err"] = r.max_rel_err;
        row["pass"] = r.pass;
        rows.push_back(std::move(row));
    }
    out["groups"] = std::move(rows);
    out["worst"] = rep.worst;
    out["cable_isolated"] = rep.cable_isolated;
    out["frozen_bias_zero"] = rep.frozen_bias_zero;
    out["pass"] = rep.pass;
    std::cout << out.dump(2) << "\n";
    if (!rep.pass) {
        ordered_json err;
        err["error"] = {{"kind", "audit"},
                        {"message", "gradient audit failed"}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}

int fail(const std::exception& e) {
    const char* kind = "internal";
    int code = 1;
    if (dynamic_cast<const cable::ConfigError*>(&e)) {
        kind = "config";
        code = 2;
    } else if (dynamic_cast<const cable::CheckpointMissingError*>(&e)) {
        kind = "checkpoint_missing";
        code = 3;
    } else if (dynamic_cast<const cable::IoError*>(&e)) {
        kind = "io";
    } else if (dynamic_cast<const cable::ArgumentError*>(&e)) {
        kind = "argument";
    } else if (dynamic_cast<const cable::IngestionError*>(&e)) {
        kind = "ingestion";
    } else if (dynamic_cast<const cable::NumericError*>(&e)) {
        kind = "numeric";
    } else if (dynamic_cast<const cable::TrainAbortError*>(&e)) {
        kind = "train_abort";
    } else if (dynamic_cast<const cable::IndexError*>(&e)) {
        kind = "index";
    } else if (dynamic_cast<const cable::ShapeError*>(&e)) {
        kind = "shape";
    } else if (dynamic_cast<const cable::CapacityError*>(&e)) {
        kind = "capacity";
    }
    ordered_json err;
    err["error"] = {{"kind", kind}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    cable::blas::ensure_fast_kernels(argv);
    cable::blas::use_single_thread();

    CLI::App app{"CABLE positional-encoding toolkit"};
    app.require_subcommand(1);

    CommonOpts train_o;
    bool train_force = false;
    CLI::App* train = app.add_subcommand("train", "train a model");
    add_common(train, train_o);
    train->add_flag("--force", train_force, "retrain even when cached");

    std::string eval_ckpt, eval_corpus, eval_tag, eval_report;
    std::vector<int64_t> eval_lengths;
    CLI::App* eval = app.add_subcommand("eval", "perplexity sweep");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--lengths", eval_lengths, "sequence lengths")
        ->delimiter(',');
    eval->add_option("--corpus", eval_corpus, "override corpus path");
    eval->add_option("--tag", eval_tag, "model tag for the report");
    eval->add_option("--report", eval_report, "report output path");

    std::vector<std::string> cmp_files;
    std::string cmp_out;
    CLI::App* cmp = app.add_subcommand("compare", "merge reports into a CSV");
    cmp->add_option("reports", cmp_files, "eval report JSON files")
        ->required();
    cmp->add_option("--out", cmp_out, "CSV output path (default stdout)");

    std::string dump_ckpt, dump_input, dump_corpus, dump_out;
    int64_t dump_layer = 0, dump_cap = 512;
    std::vector<int64_t> dump_heads;
    CLI::App* dump = app.add_subcommand("dump-bias", "write bias CSV dumps");
    dump->add_option("--checkpoint", dump_ckpt, "checkpoint file")->required();
    dump->add_option("--input", dump_input, "UTF-8 text file")->required();
    dump->add_option("--layer", dump_layer, "layer index")->required();
    dump->add_option("--heads", dump_heads, "head indices (default all)")
        ->delimiter(',');
    dump->add_option("--corpus", dump_corpus, "override corpus path");
    dump->add_option("--out", dump_out, "output directory");
    dump->add_option("--cap", dump_cap, "max dumpable t");

    CommonOpts bench_o;
    bool bench_skip_naive = false;
    std::string bench_report;
    CLI::App* bench = app.add_subcommand("bench", "throughput benchmark");
    add_common(bench, bench_o);
    bench->add_flag("--skip-naive", bench_skip_naive,
                    "skip the full-recompute decode reference");
    bench->add_option("--report", bench_report, "also write rows to a file");

    CommonOpts audit_o;
    CLI::App* audit = app.add_subcommand("audit", "finite-difference audit");
    add_common(audit, audit_o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*train) return cmd_train(train_o, train_force);
        if (*eval)
            return cmd_eval(eval_ckpt, eval_lengths, eval_corpus, eval_tag,
                            eval_report);
        if (*cmp) return cmd_compare(cmp_files, cmp_out);
        if (*dump)
            return cmd_dump_bias(dump_ckpt, dump_input, dump_layer, dump_heads,
                                 dump_corpus, dump_out, dump_cap);
        if (*bench) return cmd_bench(bench_o, bench_skip_naive, bench_report);
        if (*audit) return cmd_audit(audit_o);
    } catch (const std::exception& e) {
        return fail(e);
    }
    return 0;
}
