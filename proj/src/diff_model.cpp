// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/diff_model.hpp"

#include <cmath>
#include <string>

namespace bkv {

bool is_trainable(TrainableSet set, ParamFamily family) {
    switch (set) {
    case TrainableSet::L1Only: return is_l1_family(family);
    case TrainableSet::Original: return !is_l1_family(family);
    case TrainableSet::All: return true;
    case TrainableSet::None: return false;
    }
    return false;
}

DiffModel::DiffModel(ad::Tape& tape, const TinyModel<double>& model, TrainableSet trainable)
    : config(model.config) {
    for (const auto& p : parameters(model)) {
        params.push_back(is_trainable(trainable, p.family) ? tape.parameter(*p.matrix) : tape.constant(*p.matrix));
    }
    std::size_t i = 0;
    token_embedding = params[i++];
    l1_embedding = params[i++];
    layers.resize(model.layers.size());
    for (auto& w : layers) {
        w.attn_norm = params[i++];
        w.wq = params[i++];
        w.wk = params[i++];
        w.wv = params[i++];
        w.wo = params[i++];
        w.wq_l1 = params[i++];
        w.wk_l1 = params[i++];
        w.wv_l1 = params[i++];
        w.ffn_norm = params[i++];
        w.ffn_up = params[i++];
        w.ffn_down = params[i++];
    }
    final_norm = params[i++];
    output_head = params[i++];
}

std::vector<MatrixD> DiffModel::gradients() const {
    std::vector<MatrixD> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(p.tape->grad(p));
    }
    return out;
}

DiffView empty_view(ad::Tape& tape, const ModelConfig& cfg) {
    DiffView view;
    view.layers.resize(cfg.n_layers);
    for (auto& layer : view.layers) {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            layer.keys.push_back(tape.constant(MatrixD(0, cfg.head_dim)));
            layer.values.push_back(tape.constant(MatrixD(0, cfg.head_dim)));
        }
    }
    return view;
}

DiffView constant_view(ad::Tape& tape, const CacheView<double>& view) {
    DiffView out;
    for (const auto& layer : view.layers) {
        DiffLayerKV kv;
        for (std::size_t h = 0; h < layer.n_heads(); ++h) {
            kv.keys.push_back(tape.constant(layer.keys[h]));
            kv.values.push_back(tape.constant(layer.values[h]));
        }
        kv.kinds = layer.kinds;
        kv.positions = layer.positions;
        out.layers.push_back(std::move(kv));
    }
    return out;
}

void append(DiffLayerKV& dst, const DiffLayerKV& src) {
    if (dst.keys.size() != src.keys.size()) {
        throw ShapeError("cannot append KV across different head counts");
    }
    for (std::size_t h = 0; h < dst.keys.size(); ++h) {
        const ad::Var k[] = {dst.keys[h], src.keys[h]};
        const ad::Var v[] = {dst.values[h], src.values[h]};
        dst.keys[h] = ad::concat_rows(k);
        dst.values[h] = ad::concat_rows(v);
    }
    dst.kinds.insert(dst.kinds.end(), src.kinds.begin(), src.kinds.end());
    dst.positions.insert(dst.positions.end(), src.positions.begin(), src.positions.end());
}

DiffLayerKV select(const DiffLayerKV& kv, std::span<const std::size_t> indices) {
    DiffLayerKV out;
    for (std::size_t h = 0; h < kv.keys.size(); ++h) {
        out.keys.push_back(ad::gather_rows(kv.keys[h], indices));
        out.values.push_back(ad::gather_rows(kv.values[h], indices));
    }
    for (std::size_t i : indices) {
        out.kinds.push_back(kv.kinds[i]);
        out.positions.push_back(kv.positions[i]);
    }
    return out;
}

namespace {

struct RowSplit {
    std::vector<std::size_t> l1;
    std::vector<std::size_t> l2;
};

RowSplit split_rows(std::span<const NestedItem> items) {
    RowSplit s;
    for (std::size_t i = 0; i < items.size(); ++i) {
        (items[i].kind == TokenKind::L1 ? s.l1 : s.l2).push_back(i);
    }
    return s;
}

ad::Var project_rows(ad::Var x, const RowSplit& split, ad::Var w, ad::Var w_l1) {
    if (split.l1.empty()) {
        return ad::matmul(x, w);
    }
    if (split.l2.empty()) {
        return ad::matmul(x, w_l1);
    }
    const ad::Var parts[] = {ad::matmul(ad::gather_rows(x, split.l2), w),
                             ad::matmul(ad::gather_rows(x, split.l1), w_l1)};
    return ad::scatter_rows(parts, {split.l2, split.l1}, x.rows());
}

ad::Var embed(const DiffModel& model, std::span<const NestedItem> items, const RowSplit& split) {
    std::vector<std::size_t> ids;
    for (std::size_t i : split.l2) {
        if (items[i].token >= model.config.vocab_size) {
            throw PreconditionError("token id " + std::to_string(items[i].token) + " outside vocab of " +
                                    std::to_string(model.config.vocab_size));
        }
        ids.push_back(items[i].token);
    }
    const std::vector<std::size_t> zeros(split.l1.size(), 0);
    if (split.l1.empty()) {
        return ad::gather_rows(model.token_embedding, ids);
    }
    if (split.l2.empty()) {
        return ad::gather_rows(model.l1_embedding, zeros);
    }
    const ad::Var parts[] = {ad::gather_rows(model.token_embedding, ids), ad::gather_rows(model.l1_embedding, zeros)};
    return ad::scatter_rows(parts, {split.l2, split.l1}, items.size());
}

void check_increasing(const std::vector<Position>& pos) {
    for (std::size_t i = 1; i < pos.size(); ++i) {
        if (pos[i] <= pos[i - 1]) {
            throw PreconditionError("KV entry positions must strictly increase; entry " + std::to_string(i) +
                                    " has position " + std::to_string(pos[i]) + " after " +
                                    std::to_string(pos[i - 1]));
        }
    }
}

} // namespace

ad::Var diff_forward_hidden(const DiffModel& model, DiffView& view, std::span<const NestedItem> items) {
    const ModelConfig& cfg = model.config;
    if (view.layers.size() != cfg.n_layers) {
        throw PreconditionError("cache view has " + std::to_string(view.layers.size()) + " layers, model has " +
                                std::to_string(cfg.n_layers));
    }
    if (items.empty()) {
        throw PreconditionError("forward pass over no items");
    }
    std::vector<Position> pos;
    for (const auto& it : items) {
        pos.push_back(it.position);
    }
    if (view.size() > 0 && pos.front() <= view.layers.front().positions.back()) {
        throw PreconditionError("new token position " + std::to_string(pos.front()) + " overlaps the cache view");
    }
    check_increasing(pos);

    const RowSplit split = split_rows(items);
    const std::size_t d = cfg.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<TokenKind> kinds;
    for (const auto& it : items) {
        kinds.push_back(it.kind);
    }

    ad::Var x = embed(model, items, split);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& w = model.layers[l];
        const ad::Var a = ad::rmsnorm(x, w.attn_norm);
        const ad::Var q = project_rows(a, split, w.wq, w.wq_l1);
        const ad::Var k = project_rows(a, split, w.wk, w.wk_l1);
        const ad::Var v = project_rows(a, split, w.wv, w.wv_l1);

        DiffLayerKV fresh;
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            fresh.keys.push_back(ad::rope(ad::slice_cols(k, h * d, (h + 1) * d), pos));
            fresh.values.push_back(ad::slice_cols(v, h * d, (h + 1) * d));
        }
        fresh.kinds = kinds;
        fresh.positions = pos;
        DiffLayerKV& kv = view.layers[l];
        append(kv, fresh);

        std::vector<ad::Var> heads;
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const ad::Var qh = ad::rope(ad::slice_cols(q, h * d, (h + 1) * d), pos);
            const ad::Var p = ad::causal_softmax(ad::matmul_bt(qh, kv.keys[h]), scale, pos, kv.positions);
            heads.push_back(ad::matmul(p, kv.values[h]));
        }
        x = ad::add(x, ad::matmul(ad::concat_cols(heads), w.wo));
        const ad::Var f = ad::rmsnorm(x, w.ffn_norm);
        x = ad::add(x, ad::matmul(ad::silu(ad::matmul(f, w.ffn_up)), w.ffn_down));
    }
    return ad::rmsnorm(x, model.final_norm);
}

ad::Var diff_logits(const DiffModel& model, ad::Var normed_hidden) {
    return ad::matmul(normed_hidden, model.output_head);
}

} // namespace bkv
