// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bkv/nested.hpp"

namespace bkv {

std::string_view cache_mode_name(CacheMode mode) {
    switch (mode) {
    case CacheMode::L1Only: return "l1-only";
    case CacheMode::Refilled: return "refilled";
    case CacheMode::Full: return "full";
    }
    return "unknown";
}

PrefillConfig prefill_for(const PrefillConfig& base, std::size_t interval) {
    if (base.interval == interval) {
        return base;
    }
    return PrefillConfig::fitted(base.window, interval);
}

namespace {

// Chunked selective prefill on the tape. Returns every produced entry per
// layer; `on_chunk` sees each chunk's final hidden states.
template <typename OnChunk>
DiffView diff_prefill(const DiffModel& dm, ad::Tape& tape, const NestedSequence& seq, const PrefillConfig& cfg,
                      OnChunk&& on_chunk) {
    DiffView view = empty_view(tape, dm.config);
    DiffView produced = empty_view(tape, dm.config);
    for (const ProxyRange span : chunk_spans(seq.layout(), cfg.chunk)) {
        const std::span<const NestedItem> items(seq.items.data() + span.begin, span.size());
        const PrunedView pruned = prune_view(view.layers.front().kinds, cfg.window - items.size());
        if (pruned.dropped > 0) {
            for (auto& layer : view.layers) {
                layer = select(layer, pruned.kept);
            }
        }
        const std::size_t before = view.size();
        const ad::Var hidden = diff_forward_hidden(dm, view, items);
        on_chunk(span, hidden);
        std::vector<std::size_t> fresh(items.size());
        std::iota(fresh.begin(), fresh.end(), before);
        for (std::size_t l = 0; l < view.layers.size(); ++l) {
            append(produced.layers[l], select(view.layers[l], fresh));
        }
    }
    return produced;
}

LossResult finish(ad::Tape& tape, const DiffModel& dm, std::vector<ad::Var>& sums, std::size_t targets,
                  bool with_grad) {
    const ad::Var total = ad::scale(ad::sum_scalars(sums), 1.0 / static_cast<double>(targets));
    LossResult out;
    out.loss = total.value()(0, 0);
    out.targets = targets;
    if (with_grad) {
        tape.backward(total);
        out.grads = dm.gradients();
    }
    return out;
}

} // namespace

LossResult stage1_loss(const TinyModel<double>& model, std::span<const Stage1Sample> batch, const PrefillConfig& cfg,
                       bool with_grad, TrainableSet trainable) {
    if (batch.empty()) {
        throw PreconditionError("stage-1 batch is empty");
    }
    ad::Tape tape;
    const DiffModel dm(tape, model, with_grad ? trainable : TrainableSet::None);
    std::vector<ad::Var> sums;
    std::size_t targets = 0;
    for (const auto& sample : batch) {
        if (sample.interval == 0 || sample.tokens.size() < 2 * sample.interval) {
            throw PreconditionError("stage-1 sequence of " + std::to_string(sample.tokens.size()) +
                                    " tokens is shorter than 2l = " + std::to_string(2 * sample.interval));
        }
        const PrefillConfig pc = prefill_for(cfg, sample.interval);
        pc.validate();
        const NestedSequence seq = interleave(sample.tokens, sample.interval);

        // Nested index of the previous L2 item for each L2 target.
        std::vector<std::size_t> prev_of(seq.items.size(), SIZE_MAX);
        std::size_t prev = SIZE_MAX;
        for (std::size_t i = 0; i < seq.items.size(); ++i) {
            if (seq.items[i].kind == TokenKind::L2) {
                prev_of[i] = prev;
                prev = i;
            }
        }
        std::vector<std::size_t> target_of(seq.items.size(), SIZE_MAX); // predictor -> target
        for (std::size_t i = 0; i < seq.items.size(); ++i) {
            if (prev_of[i] != SIZE_MAX) {
                target_of[prev_of[i]] = i;
            }
        }

        diff_prefill(dm, tape, seq, pc, [&](ProxyRange span, ad::Var hidden) {
            std::vector<std::size_t> rows;
            std::vector<std::size_t> tgt;
            for (std::size_t i = span.begin; i < span.end; ++i) {
                if (target_of[i] != SIZE_MAX) {
                    rows.push_back(i - span.begin);
                    tgt.push_back(seq.items[target_of[i]].token);
                }
            }
            if (!rows.empty()) {
                sums.push_back(ad::cross_entropy_sum(diff_logits(dm, hidden), rows, tgt));
                targets += rows.size();
            }
        });
    }
    return finish(tape, dm, sums, targets, with_grad);
}

namespace {

// Nested indices of the entries a decode view keeps for one layer.
std::vector<std::size_t> kept_indices(const NestedLayout& layout, std::span<const std::size_t> selected) {
    std::vector<bool> chosen(layout.m(), false);
    for (std::size_t i : selected) {
        chosen.at(i) = true;
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layout.m(); ++i) {
        if (chosen[i]) {
            const ProxyRange r = layout.proxy_range(i);
            for (std::size_t j = r.begin; j < r.end; ++j) {
                out.push_back(layout.l2_position(j));
            }
        }
        out.push_back(layout.l1_position(i));
    }
    return out;
}

} // namespace

LossResult stage2_loss(const TinyModel<double>& model, std::span<const QaSample> batch, const Stage2Options& opts,
                       bool with_grad, TrainableSet trainable) {
    if (batch.empty()) {
        throw PreconditionError("stage-2 batch is empty");
    }
    ad::Tape tape;
    const DiffModel dm(tape, model, with_grad ? trainable : TrainableSet::None);
    std::vector<ad::Var> sums;
    std::size_t targets = 0;
    for (const auto& sample : batch) {
        if (sample.answer.empty()) {
            throw PreconditionError("stage-2 answer is empty");
        }
        if (sample.query.empty()) {
            throw PreconditionError("stage-2 query is empty");
        }
        const PrefillConfig pc = prefill_for(opts.prefill, sample.interval);
        pc.validate();
        const NestedSequence seq = interleave(sample.context, sample.interval);
        const NestedLayout layout = seq.layout();
        const DiffView produced = diff_prefill(dm, tape, seq, pc, [](ProxyRange, ad::Var) {});

        std::vector<std::vector<std::size_t>> selected(model.config.n_layers);
        if (opts.mode == CacheMode::Full) {
            for (auto& s : selected) {
                s.resize(layout.m());
                std::iota(s.begin(), s.end(), 0);
            }
        } else if (opts.mode == CacheMode::Refilled) {
            RefillConfig rc = opts.refill;
            rc.interval = sample.interval;
            const auto cache = prefill(model, sample.context, pc).cache;
            selected = plan_refill(model, cache, sample.query, rc).selected;
        }

        DiffView view;
        for (std::size_t l = 0; l < produced.layers.size(); ++l) {
            view.layers.push_back(select(produced.layers[l], kept_indices(layout, selected[l])));
        }

        std::vector<TokenId> stream = sample.query;
        stream.insert(stream.end(), sample.answer.begin(), sample.answer.end() - 1);
        const auto items = plain_items(stream, static_cast<Position>(layout.total()));
        const ad::Var logits = diff_logits(dm, diff_forward_hidden(dm, view, items));
        std::vector<std::size_t> rows;
        std::vector<std::size_t> tgt;
        for (std::size_t a = 0; a < sample.answer.size(); ++a) {
            rows.push_back(sample.query.size() - 1 + a);
            tgt.push_back(sample.answer[a]);
        }
        if (std::any_of(tgt.begin(), tgt.end(), [&](std::size_t t) { return t >= model.config.vocab_size; })) {
            throw PreconditionError("answer token outside the vocab");
        }
        sums.push_back(ad::cross_entropy_sum(logits, rows, tgt));
        targets += rows.size();
    }
    return finish(tape, dm, sums, targets, with_grad);
}

double GradReport::max_trainable_error() const {
    double worst = 0.0;
    for (const auto& f : families) {
        if (f.trainable) {
            worst = std::max(worst, f.max_rel_error);
        }
    }
    return worst;
}

bool GradReport::frozen_exactly_zero() const {
    return std::all_of(families.begin(), families.end(),
                       [](const FamilyReport& f) { return f.trainable || f.max_abs_analytic == 0.0; });
}

GradReport check_gradients(const TinyModel<double>& model, const LossFn& loss, double eps, std::size_t samples,
                           std::uint64_t seed, TrainableSet trainable) {
    if (!(eps >= 1e-4 && eps <= 1e-2)) {
        throw PreconditionError("finite-difference step must lie in [1e-4, 1e-2]");
    }
    constexpr std::size_t kFrozenProbes = 4;
    const LossResult base = loss(model, true);
    TinyModel<double> probe = model;
    auto refs = parameters(probe);
    Rng rng(RngSeed{seed});

    GradReport report;
    for (std::size_t f = 0; f < kParamFamilyCount; ++f) {
        const auto family = static_cast<ParamFamily>(f);
        FamilyReport fr{family, is_trainable(trainable, family)};

        // (parameter index, flat offset) for every scalar of the family.
        std::vector<std::pair<std::size_t, std::size_t>> scalars;
        for (std::size_t p = 0; p < refs.size(); ++p) {
            if (refs[p].family != family) {
                continue;
            }
            for (std::size_t k = 0; k < refs[p].matrix->size(); ++k) {
                scalars.emplace_back(p, k);
            }
            for (double g : base.grads.at(p).data()) {
                fr.max_abs_analytic = std::max(fr.max_abs_analytic, std::abs(g));
            }
        }
        const std::size_t take = std::min(fr.trainable ? samples : kFrozenProbes, scalars.size());
        for (std::size_t i = 0; i < take; ++i) {
            std::swap(scalars[i], scalars[i + rng.below(scalars.size() - i)]);
        }
        for (std::size_t i = 0; i < take; ++i) {
            const auto [p, k] = scalars[i];
            double& w = refs[p].matrix->data()[k];
            const double saved = w;
            w = saved + eps;
            const double up = loss(probe, false).loss;
            w = saved - eps;
            const double down = loss(probe, false).loss;
            w = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = base.grads[p].data()[k];
            fr.max_abs_numeric = std::max(fr.max_abs_numeric, std::abs(numeric));
            if (fr.trainable) {
                const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
                fr.max_rel_error = std::max(fr.max_rel_error, std::abs(analytic - numeric) / denom);
            }
        }
        fr.sampled = take;
        report.families.push_back(fr);
    }
    return report;
}

std::vector<TraceRow> train_steps(TinyModel<float>& model, std::span<const TrainBatch> batches,
                                  const TrainOptions& opts) {
    if (opts.steps == 0) {
        throw PreconditionError("training needs at least one step");
    }
    if (batches.empty()) {
        throw PreconditionError("training needs at least one batch");
    }
    TinyModel<double> master = model.cast<double>();
    std::vector<TraceRow> trace;
    for (std::size_t s = 0; s < opts.steps; ++s) {
        const TrainBatch& batch = batches[s % batches.size()];
        LossResult r;
        switch (opts.stage) {
        case TrainStage::Base: {
            Stage2Options full = opts.stage2;
            full.mode = CacheMode::Full;
            r = stage2_loss(master, batch.qa, full, true, opts.trainable);
            break;
        }
        case TrainStage::Stage1: r = stage1_loss(master, batch.sequences, opts.prefill, true, opts.trainable); break;
        case TrainStage::Stage2: r = stage2_loss(master, batch.qa, opts.stage2, true, opts.trainable); break;
        }
        if (!std::isfinite(r.loss)) {
            throw TrainingError("loss diverged", s);
        }
        trace.push_back({s, opts.stage, r.loss, opts.lr});
        auto refs = parameters(master);
        for (std::size_t p = 0; p < refs.size(); ++p) {
            if (!is_trainable(opts.trainable, refs[p].family)) {
                continue;
            }
            auto w = refs[p].matrix->data();
            auto g = r.grads[p].data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= opts.lr * g[i];
            }
        }
    }
    auto dst = parameters(model);
    const auto src = parameters(static_cast<const TinyModel<double>&>(master));
    for (std::size_t p = 0; p < dst.size(); ++p) {
        if (is_trainable(opts.trainable, dst[p].family)) {
            *dst[p].matrix = src[p].matrix->cast<float>();
        }
    }
    return trace;
}

std::vector<double> smoothed(std::span<const double> losses, std::size_t window) {
    if (window == 0) {
        throw PreconditionError("smoothing window must be positive");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i + window <= losses.size(); ++i) {
        const auto first = losses.begin() + static_cast<std::ptrdiff_t>(i);
        out.push_back(std::accumulate(first, first + static_cast<std::ptrdiff_t>(window), 0.0) /
                      static_cast<double>(window));
    }
    return out;
}

} // namespace bkv
