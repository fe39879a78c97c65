// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/refill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bkv {

std::size_t compute_k(const RefillConfig& cfg, std::size_t m) {
    if (cfg.interval == 0) {
        throw ConfigError("L1/L2 interval must be at least 1");
    }
    const std::size_t room = cfg.window > m ? cfg.window - m : 0;
    return std::min(room, cfg.max_refill) / cfg.interval;
}

template <typename T>
QueryProbe<T> probe_queries(const TinyModel<T>& model, const BiLayerCache<T>& cache,
                            std::span<const TokenId> query_tokens) {
    if (cache.m() == 0) {
        throw PreconditionError("cannot score an empty L1 cache");
    }
    if (query_tokens.empty()) {
        throw PreconditionError("query must hold at least one token");
    }
    CacheView<T> view;
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        view.layers.push_back(cache.l1_layer(l));
    }
    const std::vector<TokenId> tokens(query_tokens.begin(), query_tokens.end());
    const auto items = plain_items(tokens, static_cast<Position>(cache.layout().total()));
    ForwardTrace<T> trace;
    forward_hidden(model, view, std::span<const NestedItem>(items), &trace);
    return QueryProbe<T>{std::move(trace.queries)};
}

template <typename T>
ScoreVector score_l1(const QueryProbe<T>& probe, std::size_t layer, const BiLayerCache<T>& cache) {
    const auto& keys = cache.store().hot(layer).keys;
    const auto& queries = probe.queries.at(layer);
    const std::size_t m = cache.m();
    if (m == 0) {
        throw PreconditionError("cannot score an empty L1 cache");
    }
    const T scale = T{1} / std::sqrt(static_cast<T>(cache.head_dim()));
    ScoreVector out;
    out.values.assign(m, 0.0);
    std::size_t rows = 0;
    for (std::size_t h = 0; h < queries.size(); ++h) {
        Matrix<T> logits = matmul_bt(queries[h], keys[h]);
        for (auto& v : logits.data()) {
            v *= scale;
        }
        const Matrix<T> attn = softmax_rows(logits);
        for (std::size_t t = 0; t < attn.rows(); ++t) {
            for (std::size_t i = 0; i < m; ++i) {
                out.values[i] += static_cast<double>(attn(t, i));
            }
        }
        rows += attn.rows();
    }
    for (auto& v : out.values) {
        v /= static_cast<double>(rows);
    }
    return out;
}

template <typename T>
ScoreVector score_l1(const TinyModel<T>& model, std::size_t layer, const BiLayerCache<T>& cache,
                     std::span<const TokenId> query_tokens) {
    return score_l1(probe_queries(model, cache, query_tokens), layer, cache);
}

std::vector<std::size_t> select_indices(const ScoreVector& scores, std::size_t k) {
    const std::size_t take = std::min(k, scores.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores.values[a] != scores.values[b]) {
                              return scores.values[a] > scores.values[b];
                          }
                          return a < b;
                      });
    order.resize(take);
    std::sort(order.begin(), order.end());
    return order;
}

template <typename T>
RefillPlan plan_refill(const TinyModel<T>& model, const BiLayerCache<T>& cache, std::span<const TokenId> query_tokens,
                       const RefillConfig& cfg) {
    RefillPlan plan;
    plan.k = compute_k(cfg, cache.m());
    plan.selected.resize(cache.n_layers());
    if (plan.k == 0) {
        return plan;
    }
    const QueryProbe<T> probe = probe_queries(model, cache, query_tokens);
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        plan.selected[l] = select_indices(score_l1(probe, l, cache), plan.k);
    }
    return plan;
}

template <typename T>
CacheView<T> refill(const BiLayerCache<T>& cache, const RefillPlan& plan) {
    if (plan.selected.size() != cache.n_layers()) {
        throw SelectionError("refill plan covers " + std::to_string(plan.selected.size()) + " layers, cache has " +
                             std::to_string(cache.n_layers()));
    }
    CacheView<T> view;
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        view.layers.push_back(recompose(cache, l, plan.selected[l]));
    }
    return view;
}

template <typename T>
std::size_t refilled_entries(const BiLayerCache<T>& cache, const RefillPlan& plan) {
    std::size_t total = 0;
    for (const auto& layer : plan.selected) {
        for (std::size_t i : layer) {
            total += cache.layout().proxy_range(i).size();
        }
    }
    return total;
}

template <typename T>
TokenId argmax_row(std::span<const T> row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) {
            best = i;
        }
    }
    return static_cast<TokenId>(best);
}

template <typename T>
std::vector<TokenId> decode(const TinyModel<T>& model, CacheView<T> view, std::span<const TokenId> query_tokens,
                            Position first_position, std::size_t max_new, std::optional<TokenId> eos) {
    std::vector<TokenId> out;
    if (max_new == 0) {
        return out;
    }
    for (const auto& layer : view.layers) {
        layer.check_positions();
    }
    const std::vector<TokenId> query(query_tokens.begin(), query_tokens.end());
    std::vector<NestedItem> items = plain_items(query, first_position);
    Position next_pos = static_cast<Position>(first_position + query.size());
    while (out.size() < max_new) {
        const Matrix<T> logits = forward_logits(model, view, std::span<const NestedItem>(items));
        const TokenId next = argmax_row(logits.row(logits.rows() - 1));
        if (eos && next == *eos) {
            break;
        }
        out.push_back(next);
        items = {NestedItem{next, TokenKind::L2, next_pos++}};
    }
    return out;
}

#define BKV_INSTANTIATE_REFILL(T)                                                                            \
    template QueryProbe<T> probe_queries(const TinyModel<T>&, const BiLayerCache<T>&, std::span<const TokenId>); \
    template ScoreVector score_l1(const QueryProbe<T>&, std::size_t, const BiLayerCache<T>&);               \
    template ScoreVector score_l1(const TinyModel<T>&, std::size_t, const BiLayerCache<T>&,                 \
                                  std::span<const TokenId>);                                                \
    template RefillPlan plan_refill(const TinyModel<T>&, const BiLayerCache<T>&, std::span<const TokenId>,  \
                                    const RefillConfig&);                                                   \
    template CacheView<T> refill(const BiLayerCache<T>&, const RefillPlan&);                                \
    template std::size_t refilled_entries(const BiLayerCache<T>&, const RefillPlan&);                       \
    template TokenId argmax_row(std::span<const T>);                                                        \
    template std::vector<TokenId> decode(const TinyModel<T>&, CacheView<T>, std::span<const TokenId>,       \
                                         Position, std::size_t, std::optional<TokenId>);

BKV_INSTANTIATE_REFILL(float)
BKV_INSTANTIATE_REFILL(double)

#undef BKV_INSTANTIATE_REFILL

} // namespace bkv
