// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bkv/bilayer_cache.hpp"

namespace bkv {

inline constexpr std::uint32_t kCacheFormatVersion = 1;
inline constexpr std::size_t kCacheHeaderBytes = 4 + 4 + 4 + 8 + 8 + 4 + 4 + 4;

/// Layout (little-endian): "ACKV", version u32, l u32, m u64, n u64,
/// n_layers u32, n_heads u32, head_dim u32; then per layer L1 keys, L1
/// values, L2 keys, L2 values as raw f32 blobs, each blob head-major
/// [head][entry][dim]; then CRC-32 (u32) of the blob payload.
std::vector<std::uint8_t> serialize_cache(const BiLayerCache<float>& cache);

/// Throws FormatError (with byte offset) on bad magic, version, header
/// geometry, truncation, trailing bytes or checksum mismatch.
BiLayerCache<float> deserialize_cache(std::span<const std::uint8_t> bytes);

void save_cache(const BiLayerCache<float>& cache, const std::string& path);
BiLayerCache<float> load_cache(const std::string& path);

} // namespace bkv
