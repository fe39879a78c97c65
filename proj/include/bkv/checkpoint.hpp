// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bkv/model.hpp"

namespace bkv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "ACRE", version u32, n_layers u32, n_heads u32,
/// head_dim u32, vocab_size u32, ffn_dim u32, seed u64, then every parameter
/// as raw f32 in the declaration order of parameters().
std::vector<std::uint8_t> serialize_model(const TinyModel<float>& model);
TinyModel<float> deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const TinyModel<float>& model, const std::string& path);
TinyModel<float> load_model(const std::string& path);

} // namespace bkv
