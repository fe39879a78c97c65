// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bkv/autodiff.hpp"
#include "bkv/model.hpp"

namespace bkv {

/// Which weight families receive gradients.
enum class TrainableSet : std::uint8_t {
    L1Only,   // the L1 embedding and the three L1 projections
    Original, // everything except the L1 families
    All,
    None, // everything recorded as a constant
};

bool is_trainable(TrainableSet set, ParamFamily family);

/// TinyModel<double> lifted onto a tape. Frozen families are recorded as
/// constants, so their gradients are exactly zero.
struct DiffModel {
    struct Layer {
        ad::Var attn_norm, wq, wk, wv, wo, wq_l1, wk_l1, wv_l1, ffn_norm, ffn_up, ffn_down;
    };

    ModelConfig config;
    ad::Var token_embedding;
    ad::Var l1_embedding;
    std::vector<Layer> layers;
    ad::Var final_norm;
    ad::Var output_head;
    std::vector<ad::Var> params; // parameters() order

    DiffModel(ad::Tape& tape, const TinyModel<double>& model, TrainableSet trainable);

    /// Gradients after tape.backward(), in parameters() order.
    std::vector<MatrixD> gradients() const;
};

struct DiffLayerKV {
    std::vector<ad::Var> keys;   // per head
    std::vector<ad::Var> values; // per head
    std::vector<TokenKind> kinds;
    std::vector<Position> positions;

    std::size_t size() const noexcept { return positions.size(); }
};

struct DiffView {
    std::vector<DiffLayerKV> layers;

    std::size_t size() const noexcept { return layers.empty() ? 0 : layers.front().size(); }
};

/// Empty per-layer view with 0-row key/value constants.
DiffView empty_view(ad::Tape& tape, const ModelConfig& cfg);

/// Lifts an eager cache view as constants.
DiffView constant_view(ad::Tape& tape, const CacheView<double>& view);

void append(DiffLayerKV& dst, const DiffLayerKV& src);
DiffLayerKV select(const DiffLayerKV& kv, std::span<const std::size_t> indices);

/// Mirrors forward_hidden() on the tape.
ad::Var diff_forward_hidden(const DiffModel& model, DiffView& view, std::span<const NestedItem> items);

ad::Var diff_logits(const DiffModel& model, ad::Var normed_hidden);

} // namespace bkv
