// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "bkv/diff_model.hpp"
#include "bkv/model.hpp"
#include "bkv/prefill.hpp"
#include "bkv/refill.hpp"

namespace bkv {

struct Stage1Sample {
    std::vector<TokenId> tokens;
    std::size_t interval = 16;
};

struct QaSample {
    std::vector<TokenId> context;
    std::vector<TokenId> query;
    std::vector<TokenId> answer;
    std::size_t interval = 16;
};

struct TrainBatch {
    std::vector<Stage1Sample> sequences;
    std::vector<QaSample> qa;
};

/// How the stage-2 answer sees the context.
enum class CacheMode : std::uint8_t {
    L1Only,   // hot tier only
    Refilled, // query-guided refill with RefillConfig's k
    Full,     // every L2 entry back in place
};

std::string_view cache_mode_name(CacheMode mode);

struct LossResult {
    double loss = 0.0;
    std::size_t targets = 0;
    std::vector<MatrixD> grads; // parameters() order; empty without grad
};

/// Prefill settings for a sample of interval l: `base` itself when its
/// interval is l, otherwise PrefillConfig::fitted(base.window, l).
PrefillConfig prefill_for(const PrefillConfig& base, std::size_t interval);

/// Mean next-L2-token cross-entropy over the pruned chunked view. Each L2
/// token except the first is predicted from the logits of the previous L2
/// token; L1 tokens are never targets.
LossResult stage1_loss(const TinyModel<double>& model, std::span<const Stage1Sample> batch, const PrefillConfig& cfg,
                       bool with_grad, TrainableSet trainable = TrainableSet::L1Only);

struct Stage2Options {
    CacheMode mode = CacheMode::L1Only;
    PrefillConfig prefill{};
    RefillConfig refill{}; // window and interval are taken from the sample
};

/// Mean answer cross-entropy. The context is prefilled on the tape; the query
/// and the answer (teacher forced) follow at positions n + m onward.
LossResult stage2_loss(const TinyModel<double>& model, std::span<const QaSample> batch, const Stage2Options& opts,
                       bool with_grad, TrainableSet trainable = TrainableSet::L1Only);

struct FamilyReport {
    ParamFamily family;
    bool trainable = false;
    std::size_t sampled = 0;
    double max_rel_error = 0.0;    // trainable families
    double max_abs_analytic = 0.0; // exactly 0 for frozen families
    double max_abs_numeric = 0.0;
};

struct GradReport {
    std::vector<FamilyReport> families; // ParamFamily order
    double max_trainable_error() const;
    bool frozen_exactly_zero() const;
};

using LossFn = std::function<LossResult(const TinyModel<double>&, bool with_grad)>;

/// Central differences on up to `samples` random scalars per family (all of
/// them when the family is smaller). Frozen families get a few numeric probes
/// to show they still influence the loss.
GradReport check_gradients(const TinyModel<double>& model, const LossFn& loss, double eps, std::size_t samples,
                           std::uint64_t seed, TrainableSet trainable = TrainableSet::L1Only);

enum class TrainStage : std::uint8_t { Base = 0, Stage1 = 1, Stage2 = 2 };

struct TrainOptions {
    TrainStage stage = TrainStage::Stage1;
    double lr = 0.1;
    std::size_t steps = 1;
    TrainableSet trainable = TrainableSet::L1Only;
    PrefillConfig prefill{};
    Stage2Options stage2{};
};

struct TraceRow {
    std::size_t step;
    TrainStage stage;
    double loss;
    double lr;
};

/// Plain SGD on a 64-bit master copy; step s uses batches[s % size]. Only
/// trainable families are written back. Base uses the full nested cache and
/// stage 2 uses opts.stage2. Throws TrainingError on a non-finite loss.
std::vector<TraceRow> train_steps(TinyModel<float>& model, std::span<const TrainBatch> batches,
                                  const TrainOptions& opts);

/// Moving average over full windows: entry i averages losses[i..i+window).
std::vector<double> smoothed(std::span<const double> losses, std::size_t window);

} // namespace bkv
