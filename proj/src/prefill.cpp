// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/prefill.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace bkv {

PrefillConfig PrefillConfig::fitted(std::size_t window, std::size_t interval) {
    PrefillConfig cfg;
    cfg.window = window;
    cfg.interval = interval;
    if (interval == 0) {
        throw ConfigError("L1/L2 interval must be at least 1");
    }
    std::size_t groups = 64;
    while (groups > 1 && groups * (interval + 1) > window / 2) {
        --groups;
    }
    cfg.chunk = groups * interval;
    return cfg;
}

void PrefillConfig::validate() const {
    if (interval == 0) {
        throw ConfigError("L1/L2 interval must be at least 1");
    }
    if (chunk == 0 || chunk % interval != 0) {
        throw ConfigError("chunk size " + std::to_string(chunk) + " must be a positive multiple of l=" +
                          std::to_string(interval));
    }
    if (window < chunk + interval + 1) {
        throw ConfigError("working window " + std::to_string(window) + " is below chunk + l + 1 = " +
                          std::to_string(chunk + interval + 1));
    }
    if (chunk_items() >= window) {
        throw ConfigError("a chunk spans " + std::to_string(chunk_items()) + " nested items, leaving no room in W=" +
                          std::to_string(window));
    }
}

PrunedView prune_view(std::span<const TokenKind> kinds, std::size_t budget) {
    PrunedView view;
    view.l1_entries = static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), TokenKind::L1));
    if (view.l1_entries > budget) {
        throw OverflowError("retaining " + std::to_string(view.l1_entries) + " L1 entries exceeds the view budget of " +
                            std::to_string(budget) + "; use a larger window W or a larger interval l");
    }
    const std::size_t excess = kinds.size() > budget ? kinds.size() - budget : 0;
    view.kept.reserve(kinds.size() - excess);
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        if (view.dropped < excess && kinds[i] == TokenKind::L2) {
            ++view.dropped;
            continue;
        }
        view.kept.push_back(i);
    }
    return view;
}

std::vector<ProxyRange> chunk_spans(const NestedLayout& layout, std::size_t chunk) {
    if (chunk == 0 || chunk % layout.l != 0) {
        throw ConfigError("chunk size must be a positive multiple of l");
    }
    std::vector<ProxyRange> spans;
    const std::size_t groups_per_chunk = chunk / layout.l;
    for (std::size_t g = 0; g < layout.m(); g += groups_per_chunk) {
        const std::size_t last = std::min(g + groups_per_chunk, layout.m()) - 1;
        spans.push_back({layout.l2_position(g * layout.l), static_cast<std::size_t>(layout.l1_position(last)) + 1});
    }
    return spans;
}

template <typename T>
PrefillResult<T> prefill(const TinyModel<T>& model, std::span<const TokenId> tokens, const PrefillConfig& cfg) {
    cfg.validate();
    const NestedSequence seq = interleave(tokens, cfg.interval);
    const NestedLayout layout = seq.layout();

    PrefillResult<T> result;
    CacheView<T> view(model.config);
    CacheView<T> produced(model.config);
    for (const ProxyRange span : chunk_spans(layout, cfg.chunk)) {
        const std::span<const NestedItem> items(seq.items.data() + span.begin, span.size());
        const PrunedView pruned = prune_view(view.layers.front().kinds, cfg.window - items.size());
        if (pruned.dropped > 0) {
            for (auto& layer : view.layers) {
                layer = layer.select(pruned.kept);
            }
            result.stats.dropped_entries += pruned.dropped;
        }
        const std::size_t live = view.size() + items.size();
        result.stats.view_sizes.push_back(live);
        result.stats.peak_view_entries = std::max(result.stats.peak_view_entries, live);
        ++result.stats.steps;

        const std::size_t before = view.size();
        forward_hidden(model, view, items);
        std::vector<std::size_t> fresh(items.size());
        std::iota(fresh.begin(), fresh.end(), before);
        for (std::size_t l = 0; l < view.layers.size(); ++l) {
            produced.layers[l].append(view.layers[l].select(fresh));
        }
    }
    result.cache = decompose(produced, cfg.interval);
    return result;
}

template <typename T>
CacheView<T> full_attention_nested(const TinyModel<T>& model, std::span<const TokenId> tokens,
                                   std::size_t interval) {
    const NestedSequence seq = interleave(tokens, interval);
    CacheView<T> view(model.config);
    forward_hidden(model, view, std::span<const NestedItem>(seq.items));
    return view;
}

template PrefillResult<float> prefill(const TinyModel<float>&, std::span<const TokenId>, const PrefillConfig&);
template PrefillResult<double> prefill(const TinyModel<double>&, std::span<const TokenId>, const PrefillConfig&);
template CacheView<float> full_attention_nested(const TinyModel<float>&, std::span<const TokenId>, std::size_t);
template CacheView<double> full_attention_nested(const TinyModel<double>&, std::span<const TokenId>, std::size_t);

} // namespace bkv
