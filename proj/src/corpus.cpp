// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/corpus.hpp"

#include <numeric>
#include <string>

namespace bkv {

std::vector<TokenId> markov_corpus(std::size_t vocab, std::size_t length, std::size_t branching, std::uint64_t seed) {
    if (vocab == 0 || branching == 0) {
        throw ConfigError("markov corpus needs a nonempty vocab and branching >= 1");
    }
    Rng rng(RngSeed{seed});
    std::vector<std::vector<TokenId>> next(vocab);
    std::vector<std::vector<double>> cumulative(vocab);
    for (std::size_t s = 0; s < vocab; ++s) {
        double total = 0.0;
        for (std::size_t b = 0; b < branching; ++b) {
            next[s].push_back(static_cast<TokenId>(rng.below(vocab)));
            total += 0.1 + rng.uniform();
            cumulative[s].push_back(total);
        }
        for (double& c : cumulative[s]) {
            c /= total;
        }
    }
    std::vector<TokenId> out;
    out.reserve(length);
    TokenId cur = static_cast<TokenId>(rng.below(vocab));
    for (std::size_t i = 0; i < length; ++i) {
        out.push_back(cur);
        const double u = rng.uniform();
        std::size_t b = 0;
        while (b + 1 < branching && u >= cumulative[cur][b]) {
            ++b;
        }
        cur = next[cur][b];
    }
    return out;
}

QaSample recall_sample(const RecallVocab& vocab, std::size_t facts, std::size_t interval, Rng& rng) {
    if (facts == 0 || facts > vocab.keys) {
        throw ConfigError("recall sample needs between 1 and " + std::to_string(vocab.keys) + " facts");
    }
    std::vector<std::size_t> keys(vocab.keys);
    std::iota(keys.begin(), keys.end(), 0);
    for (std::size_t i = 0; i < facts; ++i) {
        std::swap(keys[i], keys[i + rng.below(keys.size() - i)]);
    }
    QaSample s;
    s.interval = interval;
    std::vector<std::size_t> values(facts);
    for (std::size_t i = 0; i < facts; ++i) {
        values[i] = rng.below(vocab.values);
        s.context.push_back(vocab.fact(keys[i], values[i]));
    }
    const std::size_t asked = rng.below(facts);
    s.query = {vocab.key(keys[asked])};
    s.answer = {vocab.value(values[asked])};
    return s;
}

std::vector<QaSample> recall_set(const RecallVocab& vocab, std::size_t count, std::size_t facts, std::size_t interval,
                                 std::uint64_t seed) {
    Rng rng(RngSeed{seed});
    std::vector<QaSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(recall_sample(vocab, facts, interval, rng));
    }
    return out;
}

} // namespace bkv
