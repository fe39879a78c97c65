// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/cache_io.hpp"

#include "bkv/bytes.hpp"

namespace bkv {

namespace {

void put_heads(ByteWriter& w, const std::vector<Matrix<float>>& heads) {
    for (const auto& m : heads) {
        w.put_f32s(m.data());
    }
}

std::vector<Matrix<float>> get_heads(ByteReader& r, std::size_t heads, std::size_t entries, std::size_t dim) {
    std::vector<Matrix<float>> out;
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix<float> m(entries, dim);
        r.get_f32s(m.data());
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace

std::vector<std::uint8_t> serialize_cache(const BiLayerCache<float>& cache) {
    ByteWriter w;
    w.put_bytes("ACKV");
    w.put_u32(kCacheFormatVersion);
    w.put_u32(static_cast<std::uint32_t>(cache.interval()));
    w.put_u64(cache.m());
    w.put_u64(cache.n());
    w.put_u32(static_cast<std::uint32_t>(cache.n_layers()));
    w.put_u32(static_cast<std::uint32_t>(cache.n_heads()));
    w.put_u32(static_cast<std::uint32_t>(cache.head_dim()));
    const std::size_t payload_begin = w.size();
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        const auto& hot = cache.store().hot(l);
        const auto& cold = cache.store().cold_unmetered(l);
        put_heads(w, hot.keys);
        put_heads(w, hot.values);
        put_heads(w, cold.keys);
        put_heads(w, cold.values);
    }
    const auto& bytes = w.bytes();
    const std::uint32_t crc =
        crc32_of(std::span<const std::uint8_t>(bytes).subspan(payload_begin, bytes.size() - payload_begin));
    w.put_u32(crc);
    return w.take();
}

BiLayerCache<float> deserialize_cache(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.get_bytes(4) != "ACKV") {
        throw FormatError("bad cache magic", 0);
    }
    const std::size_t version_at = r.offset();
    if (const auto v = r.get_u32(); v != kCacheFormatVersion) {
        throw FormatError("unsupported cache version " + std::to_string(v), version_at);
    }
    const std::size_t l = r.get_u32();
    const std::size_t m_at = r.offset();
    const std::uint64_t m = r.get_u64();
    const std::uint64_t n = r.get_u64();
    const std::size_t n_layers = r.get_u32();
    const std::size_t n_heads = r.get_u32();
    const std::size_t head_dim = r.get_u32();
    if (l == 0) {
        throw FormatError("interval l is zero", 8);
    }
    if (n == 0 || m != (n + l - 1) / l) {
        throw FormatError("header m does not equal ceil(n / l)", m_at);
    }
    // Bounds keep the size arithmetic below far from overflow.
    constexpr std::uint64_t kMaxDim = 1u << 16;
    constexpr std::uint64_t kMaxEntries = std::uint64_t{1} << 36;
    if (n_layers == 0 || n_heads == 0 || head_dim == 0 || n_layers > kMaxDim || n_heads > kMaxDim ||
        head_dim > kMaxDim || n > kMaxEntries) {
        throw FormatError("invalid cache geometry", kCacheHeaderBytes - 12);
    }
    const std::uint64_t floats_per_layer = 2 * (m + n) * n_heads * head_dim;
    if (floats_per_layer > bytes.size()) {
        throw FormatError("truncated cache payload", kCacheHeaderBytes);
    }
    const std::size_t payload_begin = r.offset();
    r.require(4 * floats_per_layer * n_layers + 4, "truncated cache payload");

    std::vector<KVBlock<float>> hot;
    std::vector<KVBlock<float>> cold;
    for (std::size_t layer = 0; layer < n_layers; ++layer) {
        KVBlock<float> h;
        KVBlock<float> c;
        h.keys = get_heads(r, n_heads, m, head_dim);
        h.values = get_heads(r, n_heads, m, head_dim);
        c.keys = get_heads(r, n_heads, n, head_dim);
        c.values = get_heads(r, n_heads, n, head_dim);
        hot.push_back(std::move(h));
        cold.push_back(std::move(c));
    }
    const std::size_t payload_end = r.offset();
    const std::uint32_t stored = r.get_u32();
    if (r.remaining() != 0) {
        throw FormatError("trailing bytes after cache checksum", r.offset());
    }
    const std::uint32_t actual = crc32_of(bytes.subspan(payload_begin, payload_end - payload_begin));
    if (stored != actual) {
        throw FormatError("cache payload checksum mismatch", payload_end);
    }
    return BiLayerCache<float>(NestedLayout(n, l), n_heads, head_dim,
                               TieredStore<float>(std::move(hot), std::move(cold)));
}

void save_cache(const BiLayerCache<float>& cache, const std::string& path) {
    write_file(path, serialize_cache(cache));
}

BiLayerCache<float> load_cache(const std::string& path) {
    return deserialize_cache(read_file(path));
}

} // namespace bkv
