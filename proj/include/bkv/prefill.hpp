// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bkv/bilayer_cache.hpp"
#include "bkv/model.hpp"
#include "bkv/nested.hpp"

namespace bkv {

/// Selective-attention prefill settings. `chunk` counts L2 tokens and must be
/// a multiple of `interval`, so every chunk holds whole L1 groups; a chunk
/// spans chunk + chunk / interval nested items.
struct PrefillConfig {
    std::size_t window = 32768; // W: max KV entries visible while prefilling
    std::size_t chunk = 16 * 64;
    std::size_t interval = 16; // l

    /// chunk = interval * 64, reduced to the largest multiple of interval
    /// whose nested span is at most half the window.
    static PrefillConfig fitted(std::size_t window, std::size_t interval);

    std::size_t chunk_items() const noexcept { return chunk + (chunk + interval - 1) / interval; }

    /// Throws ConfigError unless interval >= 1, chunk is a positive multiple
    /// of interval, window >= chunk + interval + 1 and a chunk's nested span
    /// leaves room for at least one earlier entry.
    void validate() const;
};

/// Indices of entries kept in a pruned attention view.
struct PrunedView {
    std::vector<std::size_t> kept;
    std::size_t dropped = 0;
    std::size_t l1_entries = 0;

    std::size_t size() const noexcept { return kept.size(); }
};

/// Drops the oldest L2 entries (never L1) until at most `budget` remain.
/// `kinds` must be in position order. Throws OverflowError when the L1
/// entries alone exceed the budget.
PrunedView prune_view(std::span<const TokenKind> kinds, std::size_t budget);

/// Nested item ranges [begin, end) of each prefill chunk.
std::vector<ProxyRange> chunk_spans(const NestedLayout& layout, std::size_t chunk);

struct PrefillStats {
    std::size_t peak_view_entries = 0;     // max over steps of |pruned view| + |chunk|
    std::vector<std::size_t> view_sizes;   // per step, same quantity
    std::size_t steps = 0;
    std::size_t dropped_entries = 0;       // cumulative, per layer
};

template <typename T>
struct PrefillResult {
    BiLayerCache<T> cache;
    PrefillStats stats;
};

/// Interleaves `tokens`, processes the nested stream chunk by chunk against a
/// view pruned to the working window, and decomposes every produced entry
/// (pruning limits attention only) into a bi-layer cache.
template <typename T>
PrefillResult<T> prefill(const TinyModel<T>& model, std::span<const TokenId> tokens, const PrefillConfig& cfg);

/// Single-pass full attention over the whole nested stream; the reference
/// the chunked path must reproduce when nothing gets pruned.
template <typename T>
CacheView<T> full_attention_nested(const TinyModel<T>& model, std::span<const TokenId> tokens, std::size_t interval);

} // namespace bkv
