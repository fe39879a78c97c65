// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "bkv/bytes.hpp"

namespace bkv {

std::vector<TokenId> ingest_text(std::string_view text, std::size_t vocab) {
    if (vocab == 0) {
        throw ConfigError("vocab must be nonzero");
    }
    if (text.empty()) {
        throw PreconditionError("input text is empty");
    }
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        out.push_back(static_cast<TokenId>(c % vocab));
    }
    return out;
}

std::vector<TokenId> ingest_file(const std::filesystem::path& path, std::size_t vocab) {
    const auto bytes = read_file(path.string());
    if (bytes.empty()) {
        throw PreconditionError("input file " + path.string() + " is empty");
    }
    return ingest_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), vocab);
}

std::vector<TokenId> PromptTemplate::wrap(std::span<const TokenId> context, std::size_t vocab) const {
    const auto at = text.find(kPlaceholder);
    if (at == std::string::npos) {
        throw ConfigError("prompt template has no " + std::string(kPlaceholder) + " placeholder");
    }
    std::vector<TokenId> out;
    if (at > 0) {
        out = ingest_text(std::string_view(text).substr(0, at), vocab);
    }
    out.insert(out.end(), context.begin(), context.end());
    const auto tail = std::string_view(text).substr(at + kPlaceholder.size());
    if (!tail.empty()) {
        const auto t = ingest_text(tail, vocab);
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

std::string_view mode_name(RunMode mode) {
    switch (mode) {
    case RunMode::Full: return "full";
    case RunMode::Streaming: return "streaming";
    case RunMode::Acre: return "acre";
    }
    return "unknown";
}

RunMode parse_mode(std::string_view name) {
    if (name == "full") {
        return RunMode::Full;
    }
    if (name == "streaming") {
        return RunMode::Streaming;
    }
    if (name == "acre") {
        return RunMode::Acre;
    }
    throw UsageError("unknown mode '" + std::string(name) + "' (expected full, streaming or acre)");
}

PrefillConfig ExperimentConfig::prefill() const {
    if (chunk == 0) {
        return PrefillConfig::fitted(window, interval);
    }
    return PrefillConfig{window, chunk, interval};
}

RefillConfig ExperimentConfig::refill() const { return RefillConfig{eta, window, interval}; }

void ExperimentConfig::validate() const {
    model.validate();
    switch (mode) {
    case RunMode::Acre: prefill().validate(); break;
    case RunMode::Streaming:
        if (streaming_window == 0) {
            throw ConfigError("streaming window must be positive");
        }
        break;
    case RunMode::Full:
        if (full_cap == 0) {
            throw ConfigError("full-attention cap must be positive");
        }
        break;
    }
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::uint64_t per_head(const ModelConfig& cfg, std::size_t entries) {
    return static_cast<std::uint64_t>(entries) * cfg.n_layers * cfg.n_heads;
}

} // namespace

RunResult run_acre_on_cache(const TinyModel<float>& model, const BiLayerCache<float>& cache,
                            std::span<const TokenId> query, const ExperimentConfig& cfg) {
    const auto start = Clock::now();
    RunResult r;
    r.n = cache.n();
    r.m = cache.m();
    const std::uint64_t reads_before = cache.store().cold_reads();
    RefillConfig rc = cfg.refill();
    rc.interval = cache.interval();
    r.plan = plan_refill(model, cache, query, rc);
    const CacheView<float> view = refill(cache, r.plan);
    std::size_t widest = 0;
    for (const auto& layer : view.layers) {
        widest = std::max(widest, layer.size());
    }
    r.answer = decode(model, view, query, static_cast<Position>(cache.layout().total()), cfg.max_new, cfg.eos);

    r.metrics.peak_view_entries = widest;
    r.metrics.hot_entries = cache.store().hot_entries();
    r.metrics.cold_entries = cache.store().cold_entries();
    r.metrics.cold_reads = cache.store().cold_reads() - reads_before;
    r.metrics.refill_entries = refilled_entries(cache, r.plan);
    r.metrics.decode_tokens = r.answer.size();
    r.metrics.wall_ms = elapsed_ms(start);
    return r;
}

RunResult run_acre(const TinyModel<float>& model, std::span<const TokenId> context, std::span<const TokenId> query,
                   const ExperimentConfig& cfg) {
    cfg.validate();
    const auto start = Clock::now();
    const PrefillResult<float> pre = prefill(model, context, cfg.prefill());
    RunResult r = run_acre_on_cache(model, pre.cache, query, cfg);
    r.metrics.prefill_steps = pre.stats.steps;
    r.metrics.peak_view_entries = std::max<std::uint64_t>(r.metrics.peak_view_entries, pre.stats.peak_view_entries);
    r.metrics.wall_ms = elapsed_ms(start);
    return r;
}

RunResult run_baseline(const TinyModel<float>& model, std::span<const TokenId> context,
                       std::span<const TokenId> query, const ExperimentConfig& cfg) {
    cfg.validate();
    if (context.empty()) {
        throw PreconditionError("context is empty");
    }
    if (query.empty()) {
        throw PreconditionError("query must hold at least one token");
    }
    const auto start = Clock::now();
    const std::vector<TokenId> tokens(context.begin(), context.end());
    const auto items = plain_items(tokens, 0);
    const Position first = static_cast<Position>(tokens.size());
    RunResult r;
    r.n = tokens.size();
    CacheView<float> view(model.config);

    if (cfg.mode == RunMode::Full) {
        const std::size_t need = tokens.size() + query.size() + cfg.max_new;
        if (need > cfg.full_cap) {
            throw CapacityError("full attention needs " + std::to_string(need) + " live KV entries, cap is " +
                                std::to_string(cfg.full_cap));
        }
        forward_hidden(model, view, std::span<const NestedItem>(items));
        r.metrics.prefill_steps = 1;
        r.metrics.peak_view_entries = need;
        r.metrics.hot_entries = per_head(model.config, tokens.size());
    } else if (cfg.mode == RunMode::Streaming) {
        const std::size_t chunk = std::min(cfg.prefill().chunk, cfg.streaming_window);
        for (std::size_t begin = 0; begin < items.size(); begin += chunk) {
            const std::size_t size = std::min(chunk, items.size() - begin);
            const std::size_t keep = cfg.sinks + cfg.streaming_window - size;
            if (view.size() > keep) {
                std::vector<std::size_t> kept;
                const std::size_t sinks = std::min(cfg.sinks, keep);
                for (std::size_t i = 0; i < sinks; ++i) {
                    kept.push_back(i);
                }
                for (std::size_t i = view.size() - (keep - sinks); i < view.size(); ++i) {
                    kept.push_back(i);
                }
                for (auto& layer : view.layers) {
                    layer = layer.select(kept);
                }
            }
            r.metrics.peak_view_entries = std::max<std::uint64_t>(r.metrics.peak_view_entries, view.size() + size);
            forward_hidden(model, view, std::span<const NestedItem>(items.data() + begin, size));
            ++r.metrics.prefill_steps;
        }
        r.metrics.hot_entries = per_head(model.config, view.size());
    } else {
        throw ConfigError("run_baseline expects full or streaming mode");
    }
    r.answer = decode(model, std::move(view), query, first, cfg.max_new, cfg.eos);
    r.metrics.decode_tokens = r.answer.size();
    r.metrics.wall_ms = elapsed_ms(start);
    return r;
}

RunResult run(const TinyModel<float>& model, std::span<const TokenId> context, std::span<const TokenId> query,
              const ExperimentConfig& cfg) {
    return cfg.mode == RunMode::Acre ? run_acre(model, context, query, cfg)
                                     : run_baseline(model, context, query, cfg);
}

SweepParam parse_sweep_param(std::string_view name) {
    if (name == "l") {
        return SweepParam::Interval;
    }
    if (name == "eta") {
        return SweepParam::Eta;
    }
    if (name == "W") {
        return SweepParam::Window;
    }
    throw UsageError("unknown sweep parameter '" + std::string(name) + "' (expected l, eta or W)");
}

std::string_view sweep_param_name(SweepParam param) {
    switch (param) {
    case SweepParam::Interval: return "l";
    case SweepParam::Eta: return "eta";
    case SweepParam::Window: return "W";
    }
    return "unknown";
}

SweepResult sweep(const TinyModel<float>& model, std::span<const TokenId> context, std::span<const TokenId> query,
                  SweepParam param, std::span<const std::size_t> values, const ExperimentConfig& base) {
    SweepResult out;
    out.param = param;
    for (std::size_t v : values) {
        ExperimentConfig cfg = base;
        cfg.mode = RunMode::Acre;
        switch (param) {
        case SweepParam::Interval:
            cfg.interval = v;
            cfg.chunk = 0;
            break;
        case SweepParam::Eta: cfg.eta = v; break;
        case SweepParam::Window:
            cfg.window = v;
            cfg.chunk = 0;
            break;
        }
        out.rows.push_back({v, cfg, run_acre(model, context, query, cfg)});
    }
    for (std::size_t i = 1; i < out.rows.size(); ++i) {
        const auto& a = out.rows[i - 1];
        const auto& b = out.rows[i];
        if (b.value <= a.value) {
            continue;
        }
        if (param == SweepParam::Interval && b.result.metrics.hot_entries > a.result.metrics.hot_entries) {
            out.violations.push_back("hot_entries grew from l=" + std::to_string(a.value) + " to l=" +
                                     std::to_string(b.value));
        }
        if (param == SweepParam::Eta && b.result.metrics.refill_entries < a.result.metrics.refill_entries) {
            out.violations.push_back("refill_entries shrank from eta=" + std::to_string(a.value) + " to eta=" +
                                     std::to_string(b.value));
        }
    }
    return out;
}

std::string metrics_json(const ExperimentConfig& cfg, const RunResult& result, bool timing) {
    nlohmann::ordered_json j;
    j["mode"] = mode_name(cfg.mode);
    j["seed"] = cfg.model.seed.value;
    j["l"] = cfg.interval;
    j["window"] = cfg.window;
    j["eta"] = cfg.eta;
    j["chunk"] = cfg.mode == RunMode::Full ? 0 : cfg.prefill().chunk;
    j["max_new"] = cfg.max_new;
    j["full_cap"] = cfg.full_cap;
    j["sinks"] = cfg.sinks;
    j["streaming_window"] = cfg.streaming_window;
    j["n"] = result.n;
    j["m"] = result.m;
    j["k"] = result.plan.k;
    const RunMetrics& mt = result.metrics;
    j["peak_view_entries"] = mt.peak_view_entries;
    j["hot_entries"] = mt.hot_entries;
    j["cold_entries"] = mt.cold_entries;
    j["cold_reads"] = mt.cold_reads;
    j["refill_entries"] = mt.refill_entries;
    j["prefill_steps"] = mt.prefill_steps;
    j["decode_tokens"] = mt.decode_tokens;
    if (timing) {
        j["wall_ms"] = mt.wall_ms;
    }
    j["answer"] = result.answer;
    return j.dump();
}

std::string sweep_table(const SweepResult& result) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%8s %6s %6s %12s %12s %10s %10s\n", std::string(sweep_param_name(result.param)).c_str(),
                  "m", "k", "hot", "cold", "refill", "peak");
    os << line;
    for (const auto& row : result.rows) {
        const auto& mt = row.result.metrics;
        std::snprintf(line, sizeof line, "%8zu %6zu %6zu %12llu %12llu %10llu %10llu\n", row.value, row.result.m,
                      row.result.plan.k, static_cast<unsigned long long>(mt.hot_entries),
                      static_cast<unsigned long long>(mt.cold_entries),
                      static_cast<unsigned long long>(mt.refill_entries),
                      static_cast<unsigned long long>(mt.peak_view_entries));
        os << line;
    }
    for (const auto& v : result.violations) {
        os << "violation: " << v << "\n";
    }
    return os.str();
}

} // namespace bkv
