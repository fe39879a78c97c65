// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/nested.hpp"

#include <string>

namespace bkv {

NestedLayout::NestedLayout(std::size_t n_l2, std::size_t interval) : n(n_l2), l(interval) {
    if (l == 0) {
        throw ConfigError("L1/L2 interval must be at least 1");
    }
}

std::vector<ProxyRange> NestedLayout::proxy_map() const {
    std::vector<ProxyRange> out;
    out.reserve(m());
    for (std::size_t i = 0; i < m(); ++i) {
        out.push_back(proxy_range(i));
    }
    return out;
}

NestedSequence interleave(std::span<const TokenId> tokens, std::size_t l) {
    if (l == 0) {
        throw ConfigError("L1/L2 interval must be at least 1");
    }
    if (tokens.empty()) {
        throw PreconditionError("cannot interleave an empty token list");
    }
    NestedSequence seq;
    seq.interval = l;
    seq.n = tokens.size();
    seq.m = (tokens.size() + l - 1) / l;
    seq.items.reserve(seq.n + seq.m);
    Position pos = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        seq.items.push_back({tokens[i], TokenKind::L2, pos++});
        if ((i + 1) % l == 0 || i + 1 == tokens.size()) {
            seq.items.push_back({kL1Token, TokenKind::L1, pos++});
        }
    }
    return seq;
}

} // namespace bkv
