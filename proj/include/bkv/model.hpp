// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "bkv/kernels.hpp"
#include "bkv/matrix.hpp"
#include "bkv/types.hpp"

namespace bkv {

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t head_dim = 8;
    std::size_t vocab_size = 64;
    std::size_t ffn_dim = 32;
    RngSeed seed{0};

    std::size_t hidden_dim() const noexcept { return n_heads * head_dim; }

    /// Throws ConfigError on zero dims or an odd head dim.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weight families. The L1 families are the only trainable ones; everything
/// else is the frozen original model.
enum class ParamFamily : std::uint8_t {
    TokenEmbedding,
    L1Embedding,
    AttnNorm,
    Wq,
    Wk,
    Wv,
    Wo,
    WqL1,
    WkL1,
    WvL1,
    FfnNorm,
    FfnUp,
    FfnDown,
    FinalNorm,
    OutputHead,
};

inline constexpr std::size_t kParamFamilyCount = 15;

std::string_view family_name(ParamFamily family);

constexpr bool is_l1_family(ParamFamily f) {
    return f == ParamFamily::L1Embedding || f == ParamFamily::WqL1 || f == ParamFamily::WkL1 ||
           f == ParamFamily::WvL1;
}

template <typename T>
struct LayerWeights {
    Matrix<T> attn_norm;  // 1 x H
    Matrix<T> wq, wk, wv; // H x H
    Matrix<T> wo;         // H x H
    Matrix<T> wq_l1, wk_l1, wv_l1;
    Matrix<T> ffn_norm; // 1 x H
    Matrix<T> ffn_up;   // H x F
    Matrix<T> ffn_down; // F x H

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Pre-norm decoder: rmsnorm -> attention -> residual -> rmsnorm -> SiLU MLP
/// -> residual, final rmsnorm and an untied output head. L1 tokens share one
/// embedding row and use the *_l1 projections for queries, keys and values.
template <typename T>
struct TinyModel {
    ModelConfig config;
    Matrix<T> token_embedding; // V x H
    Matrix<T> l1_embedding;    // 1 x H
    std::vector<LayerWeights<T>> layers;
    Matrix<T> final_norm;  // 1 x H
    Matrix<T> output_head; // H x V

    template <typename U>
    TinyModel<U> cast() const;

    friend bool operator==(const TinyModel&, const TinyModel&) = default;
};

template <typename T>
struct ParamRef {
    ParamFamily family;
    std::size_t layer; // 0 for non-layer parameters
    Matrix<T>* matrix;
};

template <typename T>
struct ConstParamRef {
    ParamFamily family;
    std::size_t layer;
    const Matrix<T>* matrix;
};

/// All parameters in fixed declaration order (the checkpoint blob order):
/// token_embedding, l1_embedding, per layer {attn_norm, wq, wk, wv, wo, wq_l1,
/// wk_l1, wv_l1, ffn_norm, ffn_up, ffn_down}, final_norm, output_head.
template <typename T>
std::vector<ParamRef<T>> parameters(TinyModel<T>& model);

template <typename T>
std::vector<ConstParamRef<T>> parameters(const TinyModel<T>& model);

/// Closed-form scalar parameter count for `cfg`.
std::size_t parameter_count(const ModelConfig& cfg);

/// Gaussian(0, 0.02) matrices; norm gains start at one.
TinyModel<float> init_model(const ModelConfig& cfg);

/// Per-layer KV entries. Keys are stored after rotary embedding.
template <typename T>
struct LayerKV {
    std::vector<Matrix<T>> keys;   // per head, entries x head_dim
    std::vector<Matrix<T>> values; // per head, entries x head_dim
    std::vector<TokenKind> kinds;
    std::vector<Position> positions;

    LayerKV() = default;
    LayerKV(std::size_t n_heads, std::size_t head_dim)
        : keys(n_heads, Matrix<T>(0, head_dim)), values(n_heads, Matrix<T>(0, head_dim)) {}

    std::size_t size() const noexcept { return positions.size(); }
    std::size_t n_heads() const noexcept { return keys.size(); }

    /// Appends all entries of `other` (same head geometry).
    void append(const LayerKV& other);

    /// Entries at `indices`, in the given order.
    LayerKV select(std::span<const std::size_t> indices) const;

    /// Throws PreconditionError unless positions strictly increase.
    void check_positions() const;

    friend bool operator==(const LayerKV&, const LayerKV&) = default;
};

/// A mutable per-layer KV view that forward passes read and extend.
template <typename T>
struct CacheView {
    std::vector<LayerKV<T>> layers;

    CacheView() = default;
    explicit CacheView(const ModelConfig& cfg)
        : layers(cfg.n_layers, LayerKV<T>(cfg.n_heads, cfg.head_dim)) {}

    std::size_t size() const noexcept { return layers.empty() ? 0 : layers.front().size(); }

    friend bool operator==(const CacheView&, const CacheView&) = default;
};

/// Optional capture of intermediate states during a forward pass.
template <typename T>
struct ForwardTrace {
    /// queries[layer][head]: rotated queries of the new items.
    std::vector<std::vector<Matrix<T>>> queries;
};

template <typename T>
Matrix<T> embed(const TinyModel<T>& model, std::span<const NestedItem> items);

/// Projects normalized hidden rows to per-head keys and values, using the L1
/// family for rows whose kind is L1. Keys are rotated by item position.
template <typename T>
LayerKV<T> project_kv(const TinyModel<T>& model, std::size_t layer, const Matrix<T>& hidden,
                      std::span<const NestedItem> items);

/// Per-head rotated queries; L1 rows use wq_l1.
template <typename T>
std::vector<Matrix<T>> project_queries(const TinyModel<T>& model, std::size_t layer, const Matrix<T>& hidden,
                                       std::span<const NestedItem> items);

/// Scaled dot-product attention per head with a causal mask over positions
/// (key visible iff key position <= query position), heads concatenated and
/// projected by wo.
template <typename T>
Matrix<T> attend(const TinyModel<T>& model, std::size_t layer, const std::vector<Matrix<T>>& queries,
                 std::span<const Position> query_positions, const LayerKV<T>& kv);

/// Runs all layers over `items`, appending their KV entries to `view`.
/// Returns the final-normalized hidden states of the new items.
template <typename T>
Matrix<T> forward_hidden(const TinyModel<T>& model, CacheView<T>& view, std::span<const NestedItem> items,
                         ForwardTrace<T>* trace = nullptr);

template <typename T>
Matrix<T> output_logits(const TinyModel<T>& model, const Matrix<T>& normed_hidden);

/// forward_hidden followed by the output head: (items x vocab) logits.
template <typename T>
Matrix<T> forward_logits(const TinyModel<T>& model, CacheView<T>& view, std::span<const NestedItem> items);

} // namespace bkv
