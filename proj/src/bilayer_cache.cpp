// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/bilayer_cache.hpp"

#include <string>

namespace bkv {

template <typename T>
KVBlock<T> TieredStore<T>::read_cold(std::size_t layer, ProxyRange range) const {
    const auto& src = cold_.at(layer);
    KVBlock<T> out;
    for (std::size_t h = 0; h < src.keys.size(); ++h) {
        out.keys.push_back(src.keys[h].slice_rows(range.begin, range.end));
        out.values.push_back(src.values[h].slice_rows(range.begin, range.end));
    }
    const std::uint64_t entries = static_cast<std::uint64_t>(range.size()) * src.keys.size();
    const std::uint64_t dim = src.keys.empty() ? 0 : src.keys.front().cols();
    counters_.record(entries, entries * dim * 2 * sizeof(T));
    return out;
}

template <typename T>
std::uint64_t TieredStore<T>::hot_entries() const {
    std::uint64_t total = 0;
    for (const auto& b : hot_) {
        total += static_cast<std::uint64_t>(b.entries()) * b.keys.size();
    }
    return total;
}

template <typename T>
std::uint64_t TieredStore<T>::cold_entries() const {
    std::uint64_t total = 0;
    for (const auto& b : cold_) {
        total += static_cast<std::uint64_t>(b.entries()) * b.keys.size();
    }
    return total;
}

template <typename T>
BiLayerCache<T>::BiLayerCache(NestedLayout layout, std::size_t n_heads, std::size_t head_dim, TieredStore<T> store)
    : layout_(layout), n_heads_(n_heads), head_dim_(head_dim), store_(std::move(store)) {
    for (std::size_t l = 0; l < store_.n_layers(); ++l) {
        const auto& hot = store_.hot(l);
        const auto& cold = store_.cold_unmetered(l);
        if (hot.keys.size() != n_heads_ || cold.keys.size() != n_heads_ || hot.entries() != layout_.m() ||
            cold.entries() != layout_.n) {
            throw ShapeError("layer " + std::to_string(l) + " does not hold m=" + std::to_string(layout_.m()) +
                             " L1 and n=" + std::to_string(layout_.n) + " L2 entries over " +
                             std::to_string(n_heads_) + " heads");
        }
    }
}

template <typename T>
LayerKV<T> BiLayerCache<T>::l1_layer(std::size_t layer) const {
    const auto& hot = store_.hot(layer);
    LayerKV<T> out;
    out.keys = hot.keys;
    out.values = hot.values;
    out.kinds.assign(m(), TokenKind::L1);
    out.positions.reserve(m());
    for (std::size_t i = 0; i < m(); ++i) {
        out.positions.push_back(layout_.l1_position(i));
    }
    return out;
}

template <typename T>
BiLayerCache<T> BiLayerCache<T>::scaled_l1_values(T factor) const {
    std::vector<KVBlock<T>> hot;
    std::vector<KVBlock<T>> cold;
    for (std::size_t l = 0; l < n_layers(); ++l) {
        KVBlock<T> block = store_.hot(l);
        for (auto& v : block.values) {
            for (auto& x : v.data()) {
                x *= factor;
            }
        }
        hot.push_back(std::move(block));
        cold.push_back(store_.cold_unmetered(l));
    }
    return BiLayerCache(layout_, n_heads_, head_dim_, TieredStore<T>(std::move(hot), std::move(cold)));
}

template <typename T>
BiLayerCache<T> decompose(const CacheView<T>& nested, std::size_t l) {
    if (l == 0) {
        throw ConfigError("L1/L2 interval must be at least 1");
    }
    if (nested.layers.empty()) {
        throw PreconditionError("cannot decompose a cache with no layers");
    }
    const auto& first = nested.layers.front();
    std::size_t n = 0;
    for (TokenKind k : first.kinds) {
        n += k == TokenKind::L2 ? 1 : 0;
    }
    const NestedLayout layout(n, l);
    if (n == 0) {
        throw StructuralError("nested cache holds no L2 entries", 0);
    }

    // Expected kind at each nested index.
    std::vector<TokenKind> expected;
    expected.reserve(layout.total());
    for (std::size_t j = 0; j < n; ++j) {
        expected.push_back(TokenKind::L2);
        if ((j + 1) % l == 0 || j + 1 == n) {
            expected.push_back(TokenKind::L1);
        }
    }

    std::vector<std::size_t> l1_rows;
    std::vector<std::size_t> l2_rows;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        (expected[i] == TokenKind::L1 ? l1_rows : l2_rows).push_back(i);
    }

    std::vector<KVBlock<T>> hot;
    std::vector<KVBlock<T>> cold;
    const std::size_t n_heads = first.n_heads();
    const std::size_t head_dim = n_heads == 0 ? 0 : first.keys.front().cols();
    for (const auto& layer : nested.layers) {
        const std::size_t limit = std::min(layer.size(), expected.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (layer.kinds[i] != expected[i]) {
                throw StructuralError("entry kind breaks the interleaving pattern of interval " + std::to_string(l),
                                      i);
            }
            if (layer.positions[i] != i) {
                throw StructuralError("entry position is not its nested index", i);
            }
        }
        if (layer.size() != expected.size()) {
            throw StructuralError("nested cache length " + std::to_string(layer.size()) + " != n + m = " +
                                      std::to_string(expected.size()),
                                  limit);
        }
        if (layer.n_heads() != n_heads) {
            throw ShapeError("layers disagree on head count");
        }
        KVBlock<T> h_block;
        KVBlock<T> c_block;
        for (std::size_t h = 0; h < n_heads; ++h) {
            h_block.keys.push_back(layer.keys[h].select_rows(l1_rows));
            h_block.values.push_back(layer.values[h].select_rows(l1_rows));
            c_block.keys.push_back(layer.keys[h].select_rows(l2_rows));
            c_block.values.push_back(layer.values[h].select_rows(l2_rows));
        }
        hot.push_back(std::move(h_block));
        cold.push_back(std::move(c_block));
    }
    return BiLayerCache<T>(layout, n_heads, head_dim, TieredStore<T>(std::move(hot), std::move(cold)));
}

template <typename T>
LayerKV<T> recompose(const BiLayerCache<T>& cache, std::size_t layer, std::span<const std::size_t> selected) {
    const std::size_t m = cache.m();
    std::vector<bool> chosen(m, false);
    for (std::size_t i : selected) {
        if (i >= m) {
            throw SelectionError("L1 index " + std::to_string(i) + " out of range for m=" + std::to_string(m));
        }
        if (chosen[i]) {
            throw SelectionError("L1 index " + std::to_string(i) + " selected twice");
        }
        chosen[i] = true;
    }

    const auto& layout = cache.layout();
    const auto& hot = cache.store().hot(layer);
    LayerKV<T> out(cache.n_heads(), cache.head_dim());
    for (std::size_t i = 0; i < m; ++i) {
        if (chosen[i]) {
            const ProxyRange range = layout.proxy_range(i);
            const KVBlock<T> block = cache.store().read_cold(layer, range);
            for (std::size_t h = 0; h < cache.n_heads(); ++h) {
                out.keys[h].append_rows(block.keys[h]);
                out.values[h].append_rows(block.values[h]);
            }
            for (std::size_t j = range.begin; j < range.end; ++j) {
                out.kinds.push_back(TokenKind::L2);
                out.positions.push_back(layout.l2_position(j));
            }
        }
        for (std::size_t h = 0; h < cache.n_heads(); ++h) {
            out.keys[h].append_rows(hot.keys[h].slice_rows(i, i + 1));
            out.values[h].append_rows(hot.values[h].slice_rows(i, i + 1));
        }
        out.kinds.push_back(TokenKind::L1);
        out.positions.push_back(layout.l1_position(i));
    }
    return out;
}

template <typename T>
CacheView<T> full_nested_view(const BiLayerCache<T>& cache) {
    std::vector<std::size_t> all(cache.m());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    CacheView<T> view;
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        view.layers.push_back(recompose(cache, l, all));
    }
    return view;
}

#define BKV_INSTANTIATE_CACHE(T)                                                                          \
    template class TieredStore<T>;                                                                        \
    template class BiLayerCache<T>;                                                                       \
    template BiLayerCache<T> decompose(const CacheView<T>&, std::size_t);                                 \
    template LayerKV<T> recompose(const BiLayerCache<T>&, std::size_t, std::span<const std::size_t>);     \
    template CacheView<T> full_nested_view(const BiLayerCache<T>&);

BKV_INSTANTIATE_CACHE(float)
BKV_INSTANTIATE_CACHE(double)

#undef BKV_INSTANTIATE_CACHE

} // namespace bkv
