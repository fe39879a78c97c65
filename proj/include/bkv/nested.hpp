// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "bkv/types.hpp"

namespace bkv {

/// Token id carried by L1 items. L1 tokens all share one embedding row, so
/// the id is only a marker.
inline constexpr TokenId kL1Token = std::numeric_limits<TokenId>::max();

/// Half-open range [begin, end) of L2 indices proxied by one L1 entry.
struct ProxyRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    friend bool operator==(const ProxyRange&, const ProxyRange&) = default;
};

/// Index arithmetic of an interleaved stream with n L2 tokens and interval l.
/// m = ceil(n / l); a trailing partial group gets its own L1 token.
struct NestedLayout {
    std::size_t n = 0;
    std::size_t l = 1;

    NestedLayout() = default;
    NestedLayout(std::size_t n_l2, std::size_t interval);

    std::size_t m() const noexcept { return (n + l - 1) / l; }
    std::size_t total() const noexcept { return n + m(); }

    ProxyRange proxy_range(std::size_t l1_index) const noexcept {
        return {l1_index * l, std::min((l1_index + 1) * l, n)};
    }
    Position l2_position(std::size_t l2_index) const noexcept {
        return static_cast<Position>(l2_index + l2_index / l);
    }
    Position l1_position(std::size_t l1_index) const noexcept {
        return static_cast<Position>(std::min((l1_index + 1) * l, n) + l1_index);
    }
    std::vector<ProxyRange> proxy_map() const;

    friend bool operator==(const NestedLayout&, const NestedLayout&) = default;
};

struct NestedSequence {
    std::vector<NestedItem> items;
    std::size_t interval = 1;
    std::size_t n = 0; // L2 tokens
    std::size_t m = 0; // L1 tokens

    NestedLayout layout() const { return {n, interval}; }
};

/// Inserts an L1 item after every l L2 tokens and after a trailing partial
/// group. Positions are the nested index 0..n+m-1.
/// Throws ConfigError for l = 0 and PreconditionError for empty input.
NestedSequence interleave(std::span<const TokenId> tokens, std::size_t l);

} // namespace bkv
