// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

// bkv-cli: prefill / query / bench / sweep / train / gradcheck.
// Exit codes: 0 success, 2 capacity error, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bkv/cache_io.hpp"
#include "bkv/checkpoint.hpp"
#include "bkv/corpus.hpp"
#include "bkv/harness.hpp"
#include "bkv/training.hpp"

namespace {

using namespace bkv;

struct Options {
    std::uint64_t seed = 0;
    std::string model_path;
    std::size_t l = 16;
    std::size_t window = 32768;
    std::size_t eta = 4096;
    std::size_t chunk = 0;
    std::string mode = "acre";
    std::string cache_in;
    std::string cache_out;
    std::string metrics_out;
    std::string input;
    std::string text;
    std::string query;
    std::size_t max_new = 16;
    std::size_t cap = 65536;
    std::size_t sinks = 4;
    std::size_t stream_window = 1024;
    bool raw = false;
    bool timing = false;

    // sweep
    std::string param;
    std::vector<std::size_t> values;

    // train / gradcheck
    std::string stage = "1";
    std::size_t steps = 200;
    double lr = 1.0;
    std::string model_out;
    double eps = 1e-4;
    std::size_t samples = 50;
    std::string cache_mode = "l1-only";
};

class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) {
                throw IoError("cannot open " + path + " for writing");
            }
        }
    }
    void line(const std::string& s) {
        std::ostream& os = file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout;
        os << s << '\n';
        if (!os) {
            throw IoError("failed to write metrics");
        }
    }

private:
    std::ofstream file_;
};

TinyModel<float> make_model(const Options& o, std::size_t vocab = 64) {
    if (!o.model_path.empty()) {
        return load_model(o.model_path);
    }
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.seed = RngSeed{o.seed};
    return init_model(cfg);
}

ExperimentConfig experiment(const Options& o, const ModelConfig& model) {
    ExperimentConfig cfg;
    cfg.mode = parse_mode(o.mode);
    cfg.model = model;
    cfg.interval = o.l;
    cfg.window = o.window;
    cfg.eta = o.eta;
    cfg.chunk = o.chunk;
    cfg.max_new = o.max_new;
    cfg.full_cap = o.cap;
    cfg.sinks = o.sinks;
    cfg.streaming_window = o.stream_window;
    return cfg;
}

std::vector<TokenId> context_tokens(const Options& o, std::size_t vocab) {
    if (o.input.empty() == o.text.empty()) {
        throw UsageError("give exactly one of --input or --text");
    }
    const auto body = o.input.empty() ? ingest_text(o.text, vocab) : ingest_file(o.input, vocab);
    return o.raw ? body : PromptTemplate{}.wrap(body, vocab);
}

std::vector<TokenId> query_tokens(const Options& o, std::size_t vocab) {
    if (o.query.empty()) {
        throw UsageError("--query is required");
    }
    return ingest_text(o.query, vocab);
}

int cmd_prefill(const Options& o) {
    if (o.cache_out.empty()) {
        throw UsageError("--cache-out is required");
    }
    const auto model = make_model(o);
    ExperimentConfig cfg = experiment(o, model.config);
    cfg.mode = RunMode::Acre;
    cfg.validate();
    const auto context = context_tokens(o, model.config.vocab_size);
    const auto pre = prefill(model, context, cfg.prefill());
    save_cache(pre.cache, o.cache_out);

    RunResult r;
    r.n = pre.cache.n();
    r.m = pre.cache.m();
    r.metrics.peak_view_entries = pre.stats.peak_view_entries;
    r.metrics.hot_entries = pre.cache.store().hot_entries();
    r.metrics.cold_entries = pre.cache.store().cold_entries();
    r.metrics.prefill_steps = pre.stats.steps;
    Output(o.metrics_out).line(metrics_json(cfg, r, o.timing));
    return 0;
}

int cmd_query(const Options& o) {
    if (o.cache_in.empty()) {
        throw UsageError("--cache-in is required");
    }
    const auto model = make_model(o);
    const auto cache = load_cache(o.cache_in);
    ExperimentConfig cfg = experiment(o, model.config);
    cfg.mode = RunMode::Acre;
    cfg.interval = cache.interval();
    if (cache.n_layers() != model.config.n_layers || cache.n_heads() != model.config.n_heads ||
        cache.head_dim() != model.config.head_dim) {
        throw ConfigError("cache geometry does not match the model");
    }
    const RunResult r = run_acre_on_cache(model, cache, query_tokens(o, model.config.vocab_size), cfg);
    Output(o.metrics_out).line(metrics_json(cfg, r, o.timing));
    return 0;
}

int cmd_bench(const Options& o) {
    const auto model = make_model(o);
    const ExperimentConfig cfg = experiment(o, model.config);
    const RunResult r = run(model, context_tokens(o, model.config.vocab_size),
                            query_tokens(o, model.config.vocab_size), cfg);
    Output(o.metrics_out).line(metrics_json(cfg, r, o.timing));
    return 0;
}

int cmd_sweep(const Options& o) {
    const SweepParam param = parse_sweep_param(o.param);
    if (o.values.empty()) {
        throw UsageError("--values is required");
    }
    const auto model = make_model(o);
    const ExperimentConfig base = experiment(o, model.config);
    const SweepResult res = sweep(model, context_tokens(o, model.config.vocab_size),
                                  query_tokens(o, model.config.vocab_size), param, o.values, base);
    Output out(o.metrics_out);
    for (const auto& row : res.rows) {
        out.line(metrics_json(row.config, row.result, o.timing));
    }
    std::cerr << sweep_table(res);
    return res.violations.empty() ? 0 : 1;
}

TrainStage parse_stage(const std::string& s) {
    if (s == "base") {
        return TrainStage::Base;
    }
    if (s == "1") {
        return TrainStage::Stage1;
    }
    if (s == "2") {
        return TrainStage::Stage2;
    }
    throw UsageError("unknown stage '" + s + "' (expected base, 1 or 2)");
}

CacheMode parse_cache_mode(const std::string& s) {
    if (s == "l1-only") {
        return CacheMode::L1Only;
    }
    if (s == "refilled") {
        return CacheMode::Refilled;
    }
    if (s == "full") {
        return CacheMode::Full;
    }
    throw UsageError("unknown cache mode '" + s + "' (expected l1-only, refilled or full)");
}

constexpr RecallVocab kRecall{8, 4};

// Synthetic batches: Markov sequences for stage 1, recall questions otherwise.
std::vector<TrainBatch> synthetic_batches(TrainStage stage, std::size_t vocab, std::size_t l, std::uint64_t seed) {
    std::vector<TrainBatch> batches;
    if (stage == TrainStage::Stage1) {
        const std::size_t len = std::max<std::size_t>(64, 4 * l);
        const auto corpus = markov_corpus(vocab, 4 * len, 2, seed);
        TrainBatch b;
        for (std::size_t i = 0; i < 4; ++i) {
            b.sequences.push_back({std::vector<TokenId>(corpus.begin() + static_cast<std::ptrdiff_t>(i * len),
                                                        corpus.begin() + static_cast<std::ptrdiff_t>((i + 1) * len)),
                                   l});
        }
        batches.push_back(std::move(b));
        return batches;
    }
    if (vocab < kRecall.size()) {
        throw ConfigError("recall task needs a vocab of at least " + std::to_string(kRecall.size()));
    }
    for (std::size_t i = 0; i < 64; ++i) {
        TrainBatch b;
        b.qa = recall_set(kRecall, 16, 8, l, seed + 1000 + i);
        batches.push_back(std::move(b));
    }
    return batches;
}

int cmd_train(const Options& o) {
    const TrainStage stage = parse_stage(o.stage);
    auto model = make_model(o, stage == TrainStage::Stage1 ? 64 : kRecall.size());
    TrainOptions opts;
    opts.stage = stage;
    opts.lr = o.lr;
    opts.steps = o.steps;
    opts.trainable = stage == TrainStage::Base ? TrainableSet::Original : TrainableSet::L1Only;
    opts.prefill = o.chunk == 0 ? PrefillConfig::fitted(o.window, o.l) : PrefillConfig{o.window, o.chunk, o.l};
    opts.stage2.prefill = opts.prefill;
    opts.stage2.refill = RefillConfig{o.eta, o.window, o.l};
    opts.stage2.mode = parse_cache_mode(o.cache_mode);
    const auto batches = synthetic_batches(stage, model.config.vocab_size, o.l, o.seed);
    const auto trace = train_steps(model, batches, opts);
    Output out(o.metrics_out);
    for (const auto& row : trace) {
        nlohmann::ordered_json j;
        j["step"] = row.step;
        j["stage"] = static_cast<int>(row.stage);
        j["loss"] = row.loss;
        j["lr"] = row.lr;
        out.line(j.dump());
    }
    if (!o.model_out.empty()) {
        save_model(model, o.model_out);
    }
    return 0;
}

int cmd_gradcheck(const Options& o) {
    const TrainStage stage = parse_stage(o.stage);
    if (stage == TrainStage::Base) {
        throw UsageError("gradcheck covers stage 1 and 2");
    }
    TinyModel<double> model;
    if (!o.model_path.empty()) {
        model = load_model(o.model_path).cast<double>();
    } else {
        ModelConfig cfg;
        cfg.n_heads = 4;
        cfg.head_dim = 16;
        cfg.vocab_size = stage == TrainStage::Stage1 ? 64 : kRecall.size();
        cfg.seed = RngSeed{o.seed};
        model = init_model(cfg).cast<double>();
    }
    const std::size_t l = 4;
    const PrefillConfig pc{24, 8, l};
    const auto batches = synthetic_batches(stage, model.config.vocab_size, l, o.seed);
    LossFn fn;
    if (stage == TrainStage::Stage1) {
        std::vector<Stage1Sample> seqs = batches.front().sequences;
        seqs.resize(2);
        for (auto& s : seqs) {
            s.tokens.resize(40);
        }
        fn = [seqs, pc](const TinyModel<double>& m, bool g) { return stage1_loss(m, seqs, pc, g); };
    } else {
        std::vector<QaSample> qa(batches.front().qa.begin(), batches.front().qa.begin() + 2);
        Stage2Options s2;
        s2.mode = parse_cache_mode(o.cache_mode);
        s2.prefill = pc;
        s2.refill = RefillConfig{2 * l, pc.window, l};
        fn = [qa, s2](const TinyModel<double>& m, bool g) { return stage2_loss(m, qa, s2, g); };
    }
    const GradReport rep = check_gradients(model, fn, o.eps, o.samples, o.seed);
    Output out(o.metrics_out);
    for (const auto& f : rep.families) {
        nlohmann::ordered_json j;
        j["family"] = family_name(f.family);
        j["trainable"] = f.trainable;
        j["sampled"] = f.sampled;
        j["max_rel_error"] = f.max_rel_error;
        j["max_abs_analytic"] = f.max_abs_analytic;
        j["max_abs_numeric"] = f.max_abs_numeric;
        out.line(j.dump());
    }
    return rep.max_trainable_error() < 1e-3 && rep.frozen_exactly_zero() ? 0 : 1;
}

void add_model_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--seed", o.seed, "model init seed");
    cmd->add_option("--model", o.model_path, "model checkpoint (overrides --seed)");
    cmd->add_option("--metrics-out", o.metrics_out, "JSONL output file (default stdout)");
    cmd->add_flag("--timing", o.timing, "include wall_ms in metrics");
}

void add_run_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--l", o.l, "L1/L2 interval");
    cmd->add_option("--window", o.window, "working window W");
    cmd->add_option("--eta", o.eta, "maximum refill length");
    cmd->add_option("--chunk", o.chunk, "prefill chunk in L2 tokens (0 = auto)");
    cmd->add_option("--max-new", o.max_new, "tokens to generate");
}

void add_input_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--input", o.input, "context file");
    cmd->add_option("--text", o.text, "inline context");
    cmd->add_flag("--raw", o.raw, "do not wrap the context in the prompt template");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-layer KV cache toy engine"};
    app.require_subcommand(1);
    Options o;

    auto* pre = app.add_subcommand("prefill", "build a bi-layer cache from a context");
    add_model_flags(pre, o);
    add_run_flags(pre, o);
    add_input_flags(pre, o);
    pre->add_option("--cache-out", o.cache_out, "cache file to write");

    auto* query = app.add_subcommand("query", "refill and decode against a saved cache");
    add_model_flags(query, o);
    add_run_flags(query, o);
    query->add_option("--cache-in", o.cache_in, "cache file to read");
    query->add_option("--query", o.query, "query text");

    auto* bench = app.add_subcommand("bench", "run one pipeline end to end");
    add_model_flags(bench, o);
    add_run_flags(bench, o);
    add_input_flags(bench, o);
    bench->add_option("--query", o.query, "query text");
    bench->add_option("--mode", o.mode, "full | streaming | acre");
    bench->add_option("--cap", o.cap, "full-mode live entry cap");
    bench->add_option("--sinks", o.sinks, "streaming sink tokens");
    bench->add_option("--stream-window", o.stream_window, "streaming recent window");

    auto* sw = app.add_subcommand("sweep", "acre runs over one parameter");
    add_model_flags(sw, o);
    add_run_flags(sw, o);
    add_input_flags(sw, o);
    sw->add_option("--query", o.query, "query text");
    sw->add_option("--param", o.param, "l | eta | W")->required();
    sw->add_option("--values", o.values, "comma separated values")->delimiter(',')->required();

    auto* train = app.add_subcommand("train", "SGD on synthetic data");
    add_model_flags(train, o);
    train->add_option("--l", o.l, "L1/L2 interval");
    train->add_option("--window", o.window, "working window W");
    train->add_option("--eta", o.eta, "maximum refill length");
    train->add_option("--chunk", o.chunk, "prefill chunk in L2 tokens (0 = auto)");
    train->add_option("--stage", o.stage, "base | 1 | 2");
    train->add_option("--steps", o.steps, "SGD steps");
    train->add_option("--lr", o.lr, "learning rate");
    train->add_option("--cache-mode", o.cache_mode, "stage-2 cache: l1-only | refilled | full");
    train->add_option("--model-out", o.model_out, "checkpoint to write");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_model_flags(gc, o);
    gc->add_option("--stage", o.stage, "1 | 2");
    gc->add_option("--eps", o.eps, "central difference step");
    gc->add_option("--samples", o.samples, "scalars per trainable family");
    gc->add_option("--cache-mode", o.cache_mode, "stage-2 cache: l1-only | refilled | full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*pre) {
            return cmd_prefill(o);
        }
        if (*query) {
            return cmd_query(o);
        }
        if (*bench) {
            return cmd_bench(o);
        }
        if (*sw) {
            return cmd_sweep(o);
        }
        if (*train) {
            return cmd_train(o);
        }
        if (*gc) {
            return cmd_gradcheck(o);
        }
    } catch (const CapacityError& e) {
        std::cerr << "capacity: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
