// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "bkv/bilayer_cache.hpp"
#include "bkv/model.hpp"

namespace bkv {

struct RefillConfig {
    std::size_t max_refill = 4096; // eta
    std::size_t window = 32768;    // W
    std::size_t interval = 16;     // l
};

/// Number of L1 groups to refill: max(0, floor(min(W - m, eta) / l)), with
/// W - m clamped at zero.
std::size_t compute_k(const RefillConfig& cfg, std::size_t m);

/// Mean over heads and query tokens of the softmax attention of each query
/// row over the m L1 keys of one layer.
struct ScoreVector {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
};

/// Rotated per-layer, per-head query states of the query tokens, taken from
/// a forward pass of the query over the L1-only cache. The pass does not
/// modify the cache.
template <typename T>
struct QueryProbe {
    std::vector<std::vector<Matrix<T>>> queries; // [layer][head], t x head_dim
};

template <typename T>
QueryProbe<T> probe_queries(const TinyModel<T>& model, const BiLayerCache<T>& cache,
                            std::span<const TokenId> query_tokens);

/// Scores from precomputed query states. Depends only on the queries and the
/// L1 keys of `layer`.
template <typename T>
ScoreVector score_l1(const QueryProbe<T>& probe, std::size_t layer, const BiLayerCache<T>& cache);

template <typename T>
ScoreVector score_l1(const TinyModel<T>& model, std::size_t layer, const BiLayerCache<T>& cache,
                     std::span<const TokenId> query_tokens);

/// The min(k, m) highest-scoring indices, ties to the lower index, returned
/// in ascending order.
std::vector<std::size_t> select_indices(const ScoreVector& scores, std::size_t k);

/// Per-layer selections for one query.
struct RefillPlan {
    std::size_t k = 0;
    std::vector<std::vector<std::size_t>> selected; // [layer], ascending
};

/// Probes, scores and selects independently for every layer.
template <typename T>
RefillPlan plan_refill(const TinyModel<T>& model, const BiLayerCache<T>& cache, std::span<const TokenId> query_tokens,
                       const RefillConfig& cfg);

/// Per-layer recompose() of the plan's selections.
template <typename T>
CacheView<T> refill(const BiLayerCache<T>& cache, const RefillPlan& plan);

/// Number of L2 entries a plan brings back, summed over layers.
template <typename T>
std::size_t refilled_entries(const BiLayerCache<T>& cache, const RefillPlan& plan);

/// Greedy decoding (argmax, ties to the lowest id). The query is appended to
/// `view` at positions starting from `first_position`; generation stops after
/// `max_new` tokens or at `eos`, which is not included in the output.
template <typename T>
std::vector<TokenId> decode(const TinyModel<T>& model, CacheView<T> view, std::span<const TokenId> query_tokens,
                            Position first_position, std::size_t max_new, std::optional<TokenId> eos = std::nullopt);

/// Lowest index among the row's maxima.
template <typename T>
TokenId argmax_row(std::span<const T> row);

} // namespace bkv
