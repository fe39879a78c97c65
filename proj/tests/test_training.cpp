// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "bkv/corpus.hpp"
#include "bkv/diff_model.hpp"
#include "bkv/prefill.hpp"
#include "bkv/training.hpp"
#include "support/reference.hpp"

using namespace bkv;

namespace {

TinyModel<double> model_d(std::uint64_t seed, double gain = 1.0, std::size_t vocab = 64) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.seed = RngSeed{seed};
    auto m = init_model(cfg).cast<double>();
    for (auto& p : parameters(m)) {
        if (p.family != ParamFamily::AttnNorm && p.family != ParamFamily::FfnNorm &&
            p.family != ParamFamily::FinalNorm) {
            for (auto& v : p.matrix->data()) {
                v *= gain;
            }
        }
    }
    return m;
}

std::vector<TokenId> tokens(std::size_t n, std::uint64_t seed, std::size_t vocab = 64) {
    Rng rng(RngSeed{seed});
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(static_cast<TokenId>(rng.below(vocab)));
    }
    return out;
}

// Stage-1 loss with the pruned view materialized step by step on the
// reference model. Returns the summed cross-entropy and the target count.
std::pair<double, std::size_t> stage1_oracle(const TinyModel<double>& m, const std::vector<TokenId>& toks,
                                             const PrefillConfig& cfg) {
    const auto items = ref::nest(toks, cfg.interval);
    const std::size_t span = cfg.chunk + cfg.chunk / cfg.interval;
    ref::Cache live(m.config.n_layers);
    ref::Rows hidden;
    for (std::size_t begin = 0; begin < items.size(); begin += span) {
        const std::vector<NestedItem> chunk(
            items.begin() + static_cast<std::ptrdiff_t>(begin),
            items.begin() + static_cast<std::ptrdiff_t>(std::min(begin + span, items.size())));
        for (auto& layer : live) {
            while (layer.size() > cfg.window - chunk.size()) {
                layer.erase(std::find_if(layer.begin(), layer.end(),
                                         [](const ref::Entry& e) { return e.kind == TokenKind::L2; }));
            }
        }
        const auto h = ref::step(m, live, chunk);
        hidden.insert(hidden.end(), h.begin(), h.end());
    }
    double total = 0.0;
    std::size_t count = 0;
    std::size_t prev = items.size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].kind != TokenKind::L2) {
            continue;
        }
        if (prev != items.size()) {
            total += ref::cross_entropy(ref::logits(m, hidden[prev]), items[i].token);
            ++count;
        }
        prev = i;
    }
    return {total, count};
}

ref::Cache to_ref(const CacheView<double>& view) {
    ref::Cache out;
    for (const auto& kv : view.layers) {
        ref::Layer layer;
        for (std::size_t e = 0; e < kv.size(); ++e) {
            ref::Entry entry{{}, {}, kv.kinds[e], kv.positions[e]};
            for (std::size_t h = 0; h < kv.n_heads(); ++h) {
                const auto k = kv.keys[h].row(e);
                const auto v = kv.values[h].row(e);
                entry.k.emplace_back(k.begin(), k.end());
                entry.v.emplace_back(v.begin(), v.end());
            }
            layer.push_back(entry);
        }
        out.push_back(layer);
    }
    return out;
}

double single_answer_oracle(const TinyModel<double>& m, const QaSample& s, const CacheView<double>& view,
                            Position start) {
    ref::Cache cache = to_ref(view);
    std::vector<NestedItem> items;
    for (std::size_t t = 0; t < s.query.size(); ++t) {
        items.push_back({s.query[t], TokenKind::L2, static_cast<Position>(start + t)});
    }
    const auto hidden = ref::step(m, cache, items);
    return ref::cross_entropy(ref::logits(m, hidden.back()), s.answer.front());
}

QaSample qa_sample(std::uint64_t seed) {
    QaSample s;
    s.context = tokens(40, seed);
    s.query = tokens(3, seed + 1);
    s.answer = tokens(1, seed + 2);
    s.interval = 4;
    return s;
}

} // namespace

TEST(Stage1, InitLossNearLogVocab) {
    const auto md = model_d(1);
    std::vector<Stage1Sample> batch{{tokens(64, 2), 8}, {tokens(64, 3), 8}};
    const auto r = stage1_loss(md, batch, PrefillConfig{40, 16, 8}, false);
    EXPECT_NEAR(r.loss, std::log(64.0), 0.2);
    EXPECT_EQ(r.targets, 126u);
    EXPECT_TRUE(r.grads.empty());
}

TEST(Stage1, MatchesExplicitViewOracle) {
    const auto md = model_d(4, 20.0);
    const PrefillConfig cfg{24, 8, 8};
    std::vector<Stage1Sample> batch{{tokens(64, 5), 8}, {tokens(37, 6), 8}};
    const auto r = stage1_loss(md, batch, cfg, true);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : batch) {
        const auto [t, c] = stage1_oracle(md, s.tokens, cfg);
        total += t;
        count += c;
    }
    EXPECT_EQ(r.targets, count);
    EXPECT_NEAR(r.loss, total / static_cast<double>(count), 1e-5);
    EXPECT_EQ(r.grads.size(), parameters(md).size());
}

TEST(Stage1, PerSampleIntervalUsesFittedConfig) {
    const auto md = model_d(7, 20.0);
    const PrefillConfig cfg{48, 16, 8};
    std::vector<Stage1Sample> batch{{tokens(40, 8), 4}};
    const auto r = stage1_loss(md, batch, cfg, false);
    const auto [t, c] = stage1_oracle(md, batch[0].tokens, PrefillConfig::fitted(48, 4));
    EXPECT_NEAR(r.loss, t / static_cast<double>(c), 1e-9);
}

TEST(Stage1, ShortSequenceIsPreconditionError) {
    const auto md = model_d(9);
    std::vector<Stage1Sample> batch{{tokens(10, 10), 8}};
    EXPECT_THROW(stage1_loss(md, batch, PrefillConfig{40, 16, 8}, false), PreconditionError);
}

TEST(Stage2, InitLossNearLogVocab) {
    const auto md = model_d(11);
    std::vector<QaSample> batch{qa_sample(12), qa_sample(13)};
    Stage2Options opts;
    opts.prefill = PrefillConfig{64, 16, 4};
    EXPECT_NEAR(stage2_loss(md, batch, opts, false).loss, std::log(64.0), 0.2);
}

TEST(Stage2, SingleAnswerMatchesOracle) {
    const auto md = model_d(14, 20.0);
    const auto s = qa_sample(15);
    std::vector<QaSample> batch{s};
    Stage2Options opts;
    opts.prefill = PrefillConfig{24, 8, 4};
    const auto cache = prefill(md, s.context, opts.prefill).cache;
    const Position start = static_cast<Position>(cache.layout().total());

    opts.mode = CacheMode::L1Only;
    CacheView<double> l1;
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        l1.layers.push_back(cache.l1_layer(l));
    }
    EXPECT_NEAR(stage2_loss(md, batch, opts, false).loss, single_answer_oracle(md, s, l1, start), 1e-9);

    opts.mode = CacheMode::Full;
    EXPECT_NEAR(stage2_loss(md, batch, opts, false).loss,
                single_answer_oracle(md, s, full_nested_view(cache), start), 1e-9);

    opts.mode = CacheMode::Refilled;
    opts.refill = RefillConfig{8, 1000, 4};
    const auto plan = plan_refill(md, cache, s.query, RefillConfig{8, opts.prefill.window, 4});
    EXPECT_NEAR(stage2_loss(md, batch, opts, false).loss, single_answer_oracle(md, s, refill(cache, plan), start),
                1e-9);
}

TEST(Stage2, ModesDiffer) {
    const auto md = model_d(16, 20.0);
    std::vector<QaSample> batch{qa_sample(17)};
    Stage2Options opts;
    opts.prefill = PrefillConfig{64, 16, 4};
    opts.refill = RefillConfig{8, 1000, 4};
    opts.mode = CacheMode::L1Only;
    const double l1 = stage2_loss(md, batch, opts, false).loss;
    opts.mode = CacheMode::Refilled;
    const double refilled = stage2_loss(md, batch, opts, false).loss;
    opts.refill.max_refill = 0;
    const double zero_k = stage2_loss(md, batch, opts, false).loss;
    EXPECT_NE(l1, refilled);
    EXPECT_EQ(l1, zero_k);
}

TEST(Stage2, TeacherForcedTargetCount) {
    const auto md = model_d(18);
    auto s = qa_sample(19);
    s.answer = tokens(4, 20);
    std::vector<QaSample> batch{s};
    Stage2Options opts;
    opts.prefill = PrefillConfig{64, 16, 4};
    EXPECT_EQ(stage2_loss(md, batch, opts, false).targets, 4u);
}

TEST(Stage2, EmptyAnswerIsPreconditionError) {
    const auto md = model_d(21);
    auto s = qa_sample(22);
    s.answer.clear();
    std::vector<QaSample> batch{s};
    EXPECT_THROW(stage2_loss(md, batch, Stage2Options{}, false), PreconditionError);
}

TEST(GradCheck, FrozenFamiliesExactlyZero) {
    ModelConfig cfg{2, 4, 16, 32, 2, RngSeed{23}};
    auto md = init_model(cfg).cast<double>();
    std::vector<Stage1Sample> batch{{tokens(24, 24, 32), 4}};
    const PrefillConfig pc{24, 8, 4};
    const LossFn fn = [&](const TinyModel<double>& m, bool g) { return stage1_loss(m, batch, pc, g); };
    const auto report = check_gradients(md, fn, 1e-4, 8, 1);
    EXPECT_TRUE(report.frozen_exactly_zero());
    EXPECT_LT(report.max_trainable_error(), 1e-3);
    for (const auto& f : report.families) {
        EXPECT_EQ(f.trainable, is_l1_family(f.family));
        if (!f.trainable) {
            EXPECT_GT(f.max_abs_numeric, 0.0) << family_name(f.family);
        }
    }
}

TEST(GradCheck, EpsOutOfRangeIsPreconditionError) {
    const auto md = model_d(25);
    const LossFn fn = [](const TinyModel<double>&, bool) { return LossResult{}; };
    EXPECT_THROW(check_gradients(md, fn, 1e-7, 4, 1), PreconditionError);
    EXPECT_THROW(check_gradients(md, fn, 0.5, 4, 1), PreconditionError);
}

TEST(TrainSteps, ZeroLearningRateKeepsWeights) {
    auto model = init_model(ModelConfig{});
    const auto before = model;
    std::vector<TrainBatch> batches{{{{tokens(48, 26), 8}}, {}}};
    TrainOptions opts;
    opts.lr = 0.0;
    opts.steps = 3;
    opts.prefill = PrefillConfig{40, 16, 8};
    const auto trace = train_steps(model, batches, opts);
    EXPECT_EQ(trace.size(), 3u);
    EXPECT_EQ(model, before);
}

TEST(TrainSteps, OnlyTrainableFamiliesChange) {
    auto model = model_d(30, 10.0).cast<float>();
    const auto before = model;
    std::vector<TrainBatch> batches{{{{tokens(48, 27), 8}}, {}}};
    TrainOptions opts;
    opts.lr = 0.5;
    opts.steps = 2;
    opts.prefill = PrefillConfig{40, 16, 8};
    train_steps(model, batches, opts);
    const auto a = parameters(before);
    const auto b = parameters(model);
    std::size_t wq_l1_seen = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        // The last layer's L1 queries only feed L1 outputs, which predict nothing.
        const bool last_wq_l1 = a[i].family == ParamFamily::WqL1 && ++wq_l1_seen == model.config.n_layers;
        if (last_wq_l1) {
            EXPECT_TRUE(*a[i].matrix == *b[i].matrix);
        } else if (is_l1_family(a[i].family)) {
            EXPECT_FALSE(*a[i].matrix == *b[i].matrix) << family_name(a[i].family);
        } else {
            EXPECT_TRUE(*a[i].matrix == *b[i].matrix) << family_name(a[i].family);
        }
    }
}

TEST(TrainSteps, LossDecreasesOnRepeatedBatch) {
    auto model = init_model(ModelConfig{});
    std::vector<TrainBatch> batches{{{{tokens(48, 28), 8}}, {}}};
    TrainOptions opts;
    opts.lr = 1.0;
    opts.steps = 20;
    opts.prefill = PrefillConfig{40, 16, 8};
    const auto trace = train_steps(model, batches, opts);
    EXPECT_LT(trace.back().loss, trace.front().loss);
}

TEST(TrainSteps, NanLossIsTrainingError) {
    auto model = init_model(ModelConfig{});
    model.l1_embedding(0, 0) = std::numeric_limits<float>::quiet_NaN();
    std::vector<TrainBatch> batches{{{{tokens(48, 29), 8}}, {}}};
    TrainOptions opts;
    opts.prefill = PrefillConfig{40, 16, 8};
    try {
        train_steps(model, batches, opts);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.step(), 0u);
    }
}

TEST(Smoothed, FullWindowsOnly) {
    const std::vector<double> xs{1, 2, 3, 4, 5};
    EXPECT_EQ(smoothed(xs, 2), (std::vector<double>{1.5, 2.5, 3.5, 4.5}));
    EXPECT_TRUE(smoothed(xs, 6).empty());
}

TEST(Corpus, MarkovDeterministicAndBranching) {
    const auto a = markov_corpus(32, 500, 2, 5);
    EXPECT_EQ(a, markov_corpus(32, 500, 2, 5));
    EXPECT_NE(a, markov_corpus(32, 500, 2, 6));
    std::vector<std::vector<bool>> seen(32, std::vector<bool>(32, false));
    for (std::size_t i = 1; i < a.size(); ++i) {
        ASSERT_LT(a[i], 32u);
        seen[a[i - 1]][a[i]] = true;
    }
    for (const auto& row : seen) {
        EXPECT_LE(std::count(row.begin(), row.end(), true), 2);
    }
}

TEST(Corpus, RecallSampleAnswersItsQuery) {
    const RecallVocab rv{8, 4};
    for (const auto& s : recall_set(rv, 30, 6, 2, 7)) {
        ASSERT_EQ(s.context.size(), 6u);
        ASSERT_EQ(s.query.size(), 1u);
        const std::size_t key = s.query[0] - rv.keys * rv.values;
        const std::size_t value = s.answer[0] - rv.keys * rv.values - rv.keys;
        EXPECT_EQ(std::count(s.context.begin(), s.context.end(), rv.fact(key, value)), 1);
    }
    EXPECT_EQ(rv.size(), 44u);
}
