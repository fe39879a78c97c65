// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bkv/bilayer_cache.hpp"
#include "bkv/model.hpp"
#include "bkv/prefill.hpp"
#include "bkv/refill.hpp"

namespace bkv {

/// Byte-level tokenizer: each byte maps to byte % vocab.
std::vector<TokenId> ingest_text(std::string_view text, std::size_t vocab);

/// Throws IoError when the file cannot be read and PreconditionError when it
/// is empty.
std::vector<TokenId> ingest_file(const std::filesystem::path& path, std::size_t vocab);

/// Cache-construction prompt. The context replaces the placeholder.
struct PromptTemplate {
    static constexpr std::string_view kPlaceholder = "[context]";

    std::string text = "You are provided with a long article. Read the article carefully.\n\n"
                       "After reading, you will be asked to perform specific tasks based on the content of the "
                       "article.\n\n"
                       "Now, the article begins:\n\n"
                       "Article Content: [context]\n\n"
                       "The article ends here.\n\n"
                       "Next, follow the instructions provided to complete the tasks.\n";

    /// Tokenized template with `context` spliced in. Throws ConfigError when
    /// the placeholder is missing.
    std::vector<TokenId> wrap(std::span<const TokenId> context, std::size_t vocab) const;
};

enum class RunMode : std::uint8_t { Full, Streaming, Acre };

std::string_view mode_name(RunMode mode);
RunMode parse_mode(std::string_view name); // UsageError on unknown names

struct ExperimentConfig {
    RunMode mode = RunMode::Acre;
    ModelConfig model{};
    std::size_t interval = 16;  // l
    std::size_t window = 32768; // W
    std::size_t eta = 4096;
    std::size_t chunk = 0; // 0 picks PrefillConfig::fitted(W, l)
    std::size_t max_new = 16;
    std::optional<TokenId> eos;

    std::size_t full_cap = 65536;        // live-entry cap of full mode
    std::size_t sinks = 4;               // streaming sink tokens
    std::size_t streaming_window = 1024; // streaming recent entries

    /// Throws ConfigError for settings the mode cannot run with.
    void validate() const;

    PrefillConfig prefill() const;
    RefillConfig refill() const;
};

struct RunMetrics {
    std::uint64_t peak_view_entries = 0; // acre: max of prefill views and the refilled view
    std::uint64_t hot_entries = 0;       // entries x layers x heads
    std::uint64_t cold_entries = 0;
    std::uint64_t cold_reads = 0; // cold entries read by this run
    std::uint64_t refill_entries = 0;
    std::uint64_t prefill_steps = 0;
    std::uint64_t decode_tokens = 0;
    double wall_ms = 0.0;
};

struct RunResult {
    std::vector<TokenId> answer;
    RunMetrics metrics;
    std::size_t n = 0; // context tokens
    std::size_t m = 0; // L1 tokens (acre)
    RefillPlan plan;   // acre only
};

/// Prefill, score, refill and decode. Decoding starts at position n + m.
RunResult run_acre(const TinyModel<float>& model, std::span<const TokenId> context, std::span<const TokenId> query,
                   const ExperimentConfig& cfg);

/// Query half of run_acre over an existing cache; prefill_steps stays 0.
RunResult run_acre_on_cache(const TinyModel<float>& model, const BiLayerCache<float>& cache,
                            std::span<const TokenId> query, const ExperimentConfig& cfg);

/// Full mode: unchunked full attention over the plain context; throws
/// CapacityError when n + |query| + max_new exceeds full_cap. Streaming mode:
/// chunked prefill keeping the first `sinks` entries and the most recent
/// entries so each step sees at most sinks + streaming_window entries.
RunResult run_baseline(const TinyModel<float>& model, std::span<const TokenId> context,
                       std::span<const TokenId> query, const ExperimentConfig& cfg);

RunResult run(const TinyModel<float>& model, std::span<const TokenId> context, std::span<const TokenId> query,
              const ExperimentConfig& cfg);

enum class SweepParam : std::uint8_t { Interval, Eta, Window };

SweepParam parse_sweep_param(std::string_view name); // UsageError otherwise
std::string_view sweep_param_name(SweepParam param);

struct SweepRow {
    std::size_t value;
    ExperimentConfig config;
    RunResult result;
};

struct SweepResult {
    SweepParam param;
    std::vector<SweepRow> rows;
    std::vector<std::string> violations; // broken monotonicity, empty when fine
};

/// One acre run per value. Checks hot_entries nonincreasing in l and
/// refill_entries nondecreasing in eta; values are taken in the given order.
SweepResult sweep(const TinyModel<float>& model, std::span<const TokenId> context, std::span<const TokenId> query,
                  SweepParam param, std::span<const std::size_t> values, const ExperimentConfig& base);

/// One JSONL line: config echo followed by the metrics. wall_ms is included
/// only when `timing` is set.
std::string metrics_json(const ExperimentConfig& cfg, const RunResult& result, bool timing);

/// Fixed-width summary of a sweep.
std::string sweep_table(const SweepResult& result);

} // namespace bkv
