// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "bkv/kernels.hpp"

namespace bkv {

using TokenId = std::uint32_t;

/// L2 tokens are the original context tokens; L1 tokens are the interleaved
/// proxies, one after every l L2 tokens.
enum class TokenKind : std::uint8_t { L2 = 0, L1 = 1 };

/// One element of a nested (interleaved) token stream.
struct NestedItem {
    TokenId token = 0;
    TokenKind kind = TokenKind::L2;
    Position position = 0;

    friend bool operator==(const NestedItem&, const NestedItem&) = default;
};

/// Plain L2 items at consecutive positions starting from `first_position`.
inline std::vector<NestedItem> plain_items(const std::vector<TokenId>& tokens, Position first_position) {
    std::vector<NestedItem> items;
    items.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        items.push_back({tokens[i], TokenKind::L2, static_cast<Position>(first_position + i)});
    }
    return items;
}

} // namespace bkv
