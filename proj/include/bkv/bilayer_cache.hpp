// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "bkv/model.hpp"
#include "bkv/nested.hpp"

namespace bkv {

/// Per-head key and value matrices of one layer, without positional metadata.
template <typename T>
struct KVBlock {
    std::vector<Matrix<T>> keys;
    std::vector<Matrix<T>> values;

    std::size_t entries() const noexcept { return keys.empty() ? 0 : keys.front().rows(); }
    friend bool operator==(const KVBlock&, const KVBlock&) = default;
};

/// Monotone access counters; safe to bump from concurrent readers.
class AccessCounters {
public:
    AccessCounters() = default;
    AccessCounters(const AccessCounters& other)
        : reads_(other.reads_.load()), bytes_(other.bytes_.load()) {}
    AccessCounters& operator=(const AccessCounters& other) {
        reads_ = other.reads_.load();
        bytes_ = other.bytes_.load();
        return *this;
    }

    void record(std::uint64_t entries, std::uint64_t bytes) const {
        reads_.fetch_add(entries, std::memory_order_relaxed);
        bytes_.fetch_add(bytes, std::memory_order_relaxed);
    }
    std::uint64_t reads() const { return reads_.load(); }
    std::uint64_t bytes() const { return bytes_.load(); }

private:
    mutable std::atomic<std::uint64_t> reads_{0};
    mutable std::atomic<std::uint64_t> bytes_{0};
};

/// Hot tier holds the L1 cache (always resident); the cold tier holds the L2
/// cache behind read_cold(), which counts every (layer, head, entry) read.
template <typename T>
class TieredStore {
public:
    TieredStore() = default;
    TieredStore(std::vector<KVBlock<T>> hot, std::vector<KVBlock<T>> cold)
        : hot_(std::move(hot)), cold_(std::move(cold)) {}

    const KVBlock<T>& hot(std::size_t layer) const { return hot_.at(layer); }

    /// Metered read of L2 entries [range.begin, range.end) of one layer.
    KVBlock<T> read_cold(std::size_t layer, ProxyRange range) const;

    /// Unmetered access, for serialization and comparisons only.
    const KVBlock<T>& cold_unmetered(std::size_t layer) const { return cold_.at(layer); }

    std::size_t n_layers() const noexcept { return hot_.size(); }
    std::uint64_t hot_entries() const;
    std::uint64_t cold_entries() const;

    std::uint64_t cold_reads() const { return counters_.reads(); }
    std::uint64_t cold_bytes_read() const { return counters_.bytes(); }

    friend bool operator==(const TieredStore& a, const TieredStore& b) {
        return a.hot_ == b.hot_ && a.cold_ == b.cold_;
    }

private:
    std::vector<KVBlock<T>> hot_;
    std::vector<KVBlock<T>> cold_;
    AccessCounters counters_;
};

/// Decomposed nested cache: per layer m L1 entries (hot) and n L2 entries
/// (cold), with L1 entry i proxying L2 range [i*l, min((i+1)*l, n)).
template <typename T>
class BiLayerCache {
public:
    BiLayerCache() = default;
    BiLayerCache(NestedLayout layout, std::size_t n_heads, std::size_t head_dim, TieredStore<T> store);

    const NestedLayout& layout() const noexcept { return layout_; }
    std::size_t interval() const noexcept { return layout_.l; }
    std::size_t n() const noexcept { return layout_.n; }
    std::size_t m() const noexcept { return layout_.m(); }
    std::size_t n_layers() const noexcept { return store_.n_layers(); }
    std::size_t n_heads() const noexcept { return n_heads_; }
    std::size_t head_dim() const noexcept { return head_dim_; }

    std::vector<ProxyRange> proxy_map() const { return layout_.proxy_map(); }
    const TieredStore<T>& store() const noexcept { return store_; }

    /// L1 entries of one layer with kinds and nested positions.
    LayerKV<T> l1_layer(std::size_t layer) const;

    /// Copy with every L1 value multiplied by `factor` (keys untouched).
    BiLayerCache scaled_l1_values(T factor) const;

    friend bool operator==(const BiLayerCache& a, const BiLayerCache& b) {
        return a.layout_ == b.layout_ && a.n_heads_ == b.n_heads_ && a.head_dim_ == b.head_dim_ &&
               a.store_ == b.store_;
    }

private:
    NestedLayout layout_;
    std::size_t n_heads_ = 0;
    std::size_t head_dim_ = 0;
    TieredStore<T> store_;
};

/// Splits a nested per-layer KV cache into L1 (hot) and L2 (cold) entries.
/// Throws StructuralError naming the first entry that breaks the interleaving
/// pattern of interval l (kinds or positions).
template <typename T>
BiLayerCache<T> decompose(const CacheView<T>& nested, std::size_t l);

/// L1 entries of `layer` in index order, with the proxied L2 entries of each
/// selected index placed immediately before that L1 entry. Throws
/// SelectionError on out-of-range or repeated indices. Cold reads are counted.
template <typename T>
LayerKV<T> recompose(const BiLayerCache<T>& cache, std::size_t layer, std::span<const std::size_t> selected);

/// recompose() with every index selected, for all layers: the full nested cache.
template <typename T>
CacheView<T> full_nested_view(const BiLayerCache<T>& cache);

} // namespace bkv
