// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/model.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace bkv {

void ModelConfig::validate() const {
    if (n_layers == 0 || n_heads == 0 || head_dim == 0 || vocab_size == 0 || ffn_dim == 0) {
        throw ConfigError("model dimensions must be nonzero");
    }
    if (head_dim % 2 != 0) {
        throw ConfigError("head_dim must be even for rotary embedding, got " + std::to_string(head_dim));
    }
}

std::string_view family_name(ParamFamily family) {
    switch (family) {
    case ParamFamily::TokenEmbedding: return "token_embedding";
    case ParamFamily::L1Embedding: return "l1_embedding";
    case ParamFamily::AttnNorm: return "attn_norm";
    case ParamFamily::Wq: return "wq";
    case ParamFamily::Wk: return "wk";
    case ParamFamily::Wv: return "wv";
    case ParamFamily::Wo: return "wo";
    case ParamFamily::WqL1: return "wq_l1";
    case ParamFamily::WkL1: return "wk_l1";
    case ParamFamily::WvL1: return "wv_l1";
    case ParamFamily::FfnNorm: return "ffn_norm";
    case ParamFamily::FfnUp: return "ffn_up";
    case ParamFamily::FfnDown: return "ffn_down";
    case ParamFamily::FinalNorm: return "final_norm";
    case ParamFamily::OutputHead: return "output_head";
    }
    return "unknown";
}

namespace {

template <typename Model, typename Fn>
void visit_parameters(Model& model, Fn&& fn) {
    fn(ParamFamily::TokenEmbedding, 0, model.token_embedding);
    fn(ParamFamily::L1Embedding, 0, model.l1_embedding);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& w = model.layers[l];
        fn(ParamFamily::AttnNorm, l, w.attn_norm);
        fn(ParamFamily::Wq, l, w.wq);
        fn(ParamFamily::Wk, l, w.wk);
        fn(ParamFamily::Wv, l, w.wv);
        fn(ParamFamily::Wo, l, w.wo);
        fn(ParamFamily::WqL1, l, w.wq_l1);
        fn(ParamFamily::WkL1, l, w.wk_l1);
        fn(ParamFamily::WvL1, l, w.wv_l1);
        fn(ParamFamily::FfnNorm, l, w.ffn_norm);
        fn(ParamFamily::FfnUp, l, w.ffn_up);
        fn(ParamFamily::FfnDown, l, w.ffn_down);
    }
    fn(ParamFamily::FinalNorm, 0, model.final_norm);
    fn(ParamFamily::OutputHead, 0, model.output_head);
}

// Rows of kind L1 go through `w_l1`, the rest through `w`.
template <typename T>
Matrix<T> project_rows(const Matrix<T>& x, std::span<const NestedItem> items, const Matrix<T>& w,
                       const Matrix<T>& w_l1) {
    std::vector<std::size_t> l1_rows;
    std::vector<std::size_t> l2_rows;
    for (std::size_t i = 0; i < items.size(); ++i) {
        (items[i].kind == TokenKind::L1 ? l1_rows : l2_rows).push_back(i);
    }
    if (l1_rows.empty()) {
        return matmul(x, w);
    }
    if (l2_rows.empty()) {
        return matmul(x, w_l1);
    }
    Matrix<T> out(x.rows(), w.cols());
    auto scatter = [&out](const Matrix<T>& part, const std::vector<std::size_t>& rows) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto src = part.row(i);
            std::copy(src.begin(), src.end(), out.row(rows[i]).begin());
        }
    };
    scatter(matmul(x.select_rows(l2_rows), w), l2_rows);
    scatter(matmul(x.select_rows(l1_rows), w_l1), l1_rows);
    return out;
}

std::vector<Position> positions_of(std::span<const NestedItem> items) {
    std::vector<Position> pos(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        pos[i] = items[i].position;
    }
    return pos;
}

} // namespace

template <typename T>
std::vector<ParamRef<T>> parameters(TinyModel<T>& model) {
    std::vector<ParamRef<T>> out;
    visit_parameters(model, [&](ParamFamily f, std::size_t l, Matrix<T>& m) { out.push_back({f, l, &m}); });
    return out;
}

template <typename T>
std::vector<ConstParamRef<T>> parameters(const TinyModel<T>& model) {
    std::vector<ConstParamRef<T>> out;
    visit_parameters(model, [&](ParamFamily f, std::size_t l, const Matrix<T>& m) { out.push_back({f, l, &m}); });
    return out;
}

template <typename T>
template <typename U>
TinyModel<U> TinyModel<T>::cast() const {
    TinyModel<U> out;
    out.config = config;
    out.layers.resize(layers.size());
    auto dst = parameters(out);
    auto src = parameters(*this);
    for (std::size_t i = 0; i < src.size(); ++i) {
        *dst[i].matrix = src[i].matrix->template cast<U>();
    }
    return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    const std::size_t h = cfg.hidden_dim();
    const std::size_t per_layer = 2 * h          // norms
                                  + 7 * h * h    // wq wk wv wo + three L1 projections
                                  + 2 * h * cfg.ffn_dim;
    return cfg.vocab_size * h + h + cfg.n_layers * per_layer + h + h * cfg.vocab_size;
}

TinyModel<float> init_model(const ModelConfig& cfg) {
    cfg.validate();
    constexpr double kStd = 0.02;
    const std::size_t h = cfg.hidden_dim();
    TinyModel<float> model;
    model.config = cfg;
    model.layers.resize(cfg.n_layers);

    Rng rng(cfg.seed);
    auto gaussian = [&](std::size_t r, std::size_t c) { return random_normal<float>(r, c, kStd, rng); };
    auto ones = [](std::size_t c) { return Matrix<float>(1, c, 1.0f); };

    model.token_embedding = gaussian(cfg.vocab_size, h);
    model.l1_embedding = gaussian(1, h);
    for (auto& w : model.layers) {
        w.attn_norm = ones(h);
        w.wq = gaussian(h, h);
        w.wk = gaussian(h, h);
        w.wv = gaussian(h, h);
        w.wo = gaussian(h, h);
        w.wq_l1 = gaussian(h, h);
        w.wk_l1 = gaussian(h, h);
        w.wv_l1 = gaussian(h, h);
        w.ffn_norm = ones(h);
        w.ffn_up = gaussian(h, cfg.ffn_dim);
        w.ffn_down = gaussian(cfg.ffn_dim, h);
    }
    model.final_norm = ones(h);
    model.output_head = gaussian(h, cfg.vocab_size);
    return model;
}

template <typename T>
void LayerKV<T>::append(const LayerKV& other) {
    if (other.keys.size() != keys.size()) {
        throw ShapeError("cannot append KV with " + std::to_string(other.keys.size()) + " heads to " +
                         std::to_string(keys.size()) + " heads");
    }
    for (std::size_t h = 0; h < keys.size(); ++h) {
        keys[h].append_rows(other.keys[h]);
        values[h].append_rows(other.values[h]);
    }
    kinds.insert(kinds.end(), other.kinds.begin(), other.kinds.end());
    positions.insert(positions.end(), other.positions.begin(), other.positions.end());
}

template <typename T>
LayerKV<T> LayerKV<T>::select(std::span<const std::size_t> indices) const {
    LayerKV out;
    out.keys.reserve(keys.size());
    out.values.reserve(values.size());
    for (std::size_t h = 0; h < keys.size(); ++h) {
        out.keys.push_back(keys[h].select_rows(indices));
        out.values.push_back(values[h].select_rows(indices));
    }
    out.kinds.reserve(indices.size());
    out.positions.reserve(indices.size());
    for (std::size_t i : indices) {
        out.kinds.push_back(kinds[i]);
        out.positions.push_back(positions[i]);
    }
    return out;
}

template <typename T>
void LayerKV<T>::check_positions() const {
    for (std::size_t i = 1; i < positions.size(); ++i) {
        if (positions[i] <= positions[i - 1]) {
            throw PreconditionError("KV entry positions must strictly increase; entry " + std::to_string(i) +
                                    " has position " + std::to_string(positions[i]) + " after " +
                                    std::to_string(positions[i - 1]));
        }
    }
}

template <typename T>
Matrix<T> embed(const TinyModel<T>& model, std::span<const NestedItem> items) {
    const std::size_t h = model.config.hidden_dim();
    Matrix<T> x(items.size(), h);
    for (std::size_t i = 0; i < items.size(); ++i) {
        std::span<const T> src;
        if (items[i].kind == TokenKind::L1) {
            src = model.l1_embedding.row(0);
        } else {
            if (items[i].token >= model.config.vocab_size) {
                throw PreconditionError("token id " + std::to_string(items[i].token) + " outside vocab of " +
                                        std::to_string(model.config.vocab_size));
            }
            src = model.token_embedding.row(items[i].token);
        }
        std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return x;
}

template <typename T>
LayerKV<T> project_kv(const TinyModel<T>& model, std::size_t layer, const Matrix<T>& hidden,
                      std::span<const NestedItem> items) {
    if (items.size() != hidden.rows()) {
        throw ShapeError("project_kv: " + std::to_string(items.size()) + " kinds for hidden " + hidden.shape());
    }
    const auto& w = model.layers.at(layer);
    const std::size_t d = model.config.head_dim;
    const Matrix<T> k = project_rows(hidden, items, w.wk, w.wk_l1);
    const Matrix<T> v = project_rows(hidden, items, w.wv, w.wv_l1);
    const auto pos = positions_of(items);

    LayerKV<T> out;
    for (std::size_t h = 0; h < model.config.n_heads; ++h) {
        out.keys.push_back(rope_apply(slice_cols(k, h * d, (h + 1) * d), std::span<const Position>(pos)));
        out.values.push_back(slice_cols(v, h * d, (h + 1) * d));
    }
    out.positions = pos;
    out.kinds.reserve(items.size());
    for (const auto& it : items) {
        out.kinds.push_back(it.kind);
    }
    return out;
}

template <typename T>
std::vector<Matrix<T>> project_queries(const TinyModel<T>& model, std::size_t layer, const Matrix<T>& hidden,
                                       std::span<const NestedItem> items) {
    const auto& w = model.layers.at(layer);
    const std::size_t d = model.config.head_dim;
    const Matrix<T> q = project_rows(hidden, items, w.wq, w.wq_l1);
    const auto pos = positions_of(items);
    std::vector<Matrix<T>> out;
    for (std::size_t h = 0; h < model.config.n_heads; ++h) {
        out.push_back(rope_apply(slice_cols(q, h * d, (h + 1) * d), std::span<const Position>(pos)));
    }
    return out;
}

template <typename T>
Matrix<T> attend(const TinyModel<T>& model, std::size_t layer, const std::vector<Matrix<T>>& queries,
                 std::span<const Position> query_positions, const LayerKV<T>& kv) {
    const std::size_t n_q = query_positions.size();
    if (n_q > 0 && kv.size() == 0) {
        throw PreconditionError("attend called with an empty KV cache");
    }
    kv.check_positions();
    const std::size_t d = model.config.head_dim;
    const T scale = T{1} / std::sqrt(static_cast<T>(d));
    Matrix<T> heads(n_q, model.config.hidden_dim());

    for (std::size_t h = 0; h < queries.size(); ++h) {
        Matrix<T> scores = matmul_bt(queries[h], kv.keys[h]);
        for (std::size_t i = 0; i < n_q; ++i) {
            auto row = scores.row(i);
            bool any = false;
            for (std::size_t j = 0; j < kv.size(); ++j) {
                if (kv.positions[j] <= query_positions[i]) {
                    row[j] *= scale;
                    any = true;
                } else {
                    row[j] = -std::numeric_limits<T>::infinity();
                }
            }
            if (!any) {
                throw PreconditionError("query at position " + std::to_string(query_positions[i]) +
                                        " sees no KV entry");
            }
        }
        const Matrix<T> out = matmul(softmax_rows(scores), kv.values[h]);
        for (std::size_t i = 0; i < n_q; ++i) {
            auto src = out.row(i);
            std::copy(src.begin(), src.end(), heads.row(i).begin() + static_cast<std::ptrdiff_t>(h * d));
        }
    }
    return matmul(heads, model.layers.at(layer).wo);
}

template <typename T>
Matrix<T> forward_hidden(const TinyModel<T>& model, CacheView<T>& view, std::span<const NestedItem> items,
                         ForwardTrace<T>* trace) {
    if (view.layers.size() != model.config.n_layers) {
        throw PreconditionError("cache view has " + std::to_string(view.layers.size()) + " layers, model has " +
                                std::to_string(model.config.n_layers));
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        const bool after_view = view.size() == 0 || items[i].position > view.layers.front().positions.back();
        const bool increasing = i == 0 || items[i].position > items[i - 1].position;
        if (!after_view || !increasing) {
            throw PreconditionError("new token position " + std::to_string(items[i].position) +
                                    " overlaps the cache view or earlier new tokens");
        }
    }
    if (trace != nullptr) {
        trace->queries.assign(model.config.n_layers, {});
    }
    const auto pos = positions_of(items);
    Matrix<T> x = embed(model, items);
    for (std::size_t l = 0; l < model.config.n_layers; ++l) {
        const auto& w = model.layers[l];
        const Matrix<T> a = rmsnorm(x, w.attn_norm);
        view.layers[l].append(project_kv(model, l, a, items));
        auto q = project_queries(model, l, a, items);
        x = add(x, attend(model, l, q, std::span<const Position>(pos), view.layers[l]));
        if (trace != nullptr) {
            trace->queries[l] = std::move(q);
        }
        const Matrix<T> f = rmsnorm(x, w.ffn_norm);
        x = add(x, matmul(silu(matmul(f, w.ffn_up)), w.ffn_down));
    }
    return rmsnorm(x, model.final_norm);
}

template <typename T>
Matrix<T> output_logits(const TinyModel<T>& model, const Matrix<T>& normed_hidden) {
    return matmul(normed_hidden, model.output_head);
}

template <typename T>
Matrix<T> forward_logits(const TinyModel<T>& model, CacheView<T>& view, std::span<const NestedItem> items) {
    return output_logits(model, forward_hidden(model, view, items));
}

#define BKV_INSTANTIATE_MODEL(T)                                                                              \
    template std::vector<ParamRef<T>> parameters(TinyModel<T>&);                                              \
    template std::vector<ConstParamRef<T>> parameters(const TinyModel<T>&);                                   \
    template struct LayerKV<T>;                                                                               \
    template Matrix<T> embed(const TinyModel<T>&, std::span<const NestedItem>);                               \
    template LayerKV<T> project_kv(const TinyModel<T>&, std::size_t, const Matrix<T>&,                        \
                                   std::span<const NestedItem>);                                              \
    template std::vector<Matrix<T>> project_queries(const TinyModel<T>&, std::size_t, const Matrix<T>&,       \
                                                    std::span<const NestedItem>);                             \
    template Matrix<T> attend(const TinyModel<T>&, std::size_t, const std::vector<Matrix<T>>&,                \
                              std::span<const Position>, const LayerKV<T>&);                                  \
    template Matrix<T> forward_hidden(const TinyModel<T>&, CacheView<T>&, std::span<const NestedItem>,        \
                                      ForwardTrace<T>*);                                                      \
    template Matrix<T> output_logits(const TinyModel<T>&, const Matrix<T>&);                                  \
    template Matrix<T> forward_logits(const TinyModel<T>&, CacheView<T>&, std::span<const NestedItem>);

BKV_INSTANTIATE_MODEL(float)
BKV_INSTANTIATE_MODEL(double)

#undef BKV_INSTANTIATE_MODEL

template TinyModel<double> TinyModel<float>::cast<double>() const;
template TinyModel<float> TinyModel<double>::cast<float>() const;
template TinyModel<float> TinyModel<float>::cast<float>() const;
template TinyModel<double> TinyModel<double>::cast<double>() const;

} // namespace bkv
