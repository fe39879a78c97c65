// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bkv/training.hpp"
#include "bkv/types.hpp"

namespace bkv {

/// Seeded first-order Markov byte stream: every token has `branching`
/// successors with random weights.
std::vector<TokenId> markov_corpus(std::size_t vocab, std::size_t length, std::size_t branching, std::uint64_t seed);

/// Token layout of the key-value recall task. A fact token encodes one
/// key -> value pair; queries name a key and answers are value tokens.
struct RecallVocab {
    std::size_t keys = 16;
    std::size_t values = 8;

    std::size_t size() const noexcept { return keys * values + keys + values; }
    TokenId fact(std::size_t key, std::size_t value) const { return static_cast<TokenId>(key * values + value); }
    TokenId key(std::size_t k) const { return static_cast<TokenId>(keys * values + k); }
    TokenId value(std::size_t v) const { return static_cast<TokenId>(keys * values + keys + v); }
};

/// One recall example: `facts` distinct keys in random order with random
/// values, queried on one of them.
QaSample recall_sample(const RecallVocab& vocab, std::size_t facts, std::size_t interval, Rng& rng);

std::vector<QaSample> recall_set(const RecallVocab& vocab, std::size_t count, std::size_t facts, std::size_t interval,
                                 std::uint64_t seed);

} // namespace bkv
