// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bkv/bytes.hpp"
#include "bkv/cache_io.hpp"
#include "bkv/checkpoint.hpp"
#include "bkv/corpus.hpp"
#include "bkv/harness.hpp"
#include "bkv/prefill.hpp"
#include "bkv/refill.hpp"
#include "bkv/training.hpp"
#include "support/golden.hpp"

using namespace bkv;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool pass = false;
    std::string detail;
};

template <typename T>
TinyModel<T> scaled(TinyModel<T> m, T gain) {
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

TinyModel<float> model_f(std::uint64_t seed, float gain = 1.0f) {
    ModelConfig cfg;
    cfg.seed = RngSeed{seed};
    return scaled(init_model(cfg), gain);
}

std::vector<TokenId> tokens(std::size_t n, Rng& rng, std::size_t vocab = 64) {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(static_cast<TokenId>(rng.below(vocab)));
    }
    return out;
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.shape() != b.shape()) {
        return INFINITY;
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    }
    return worst;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// 1. Chunked prefill against single-pass full attention.
Verdict prefill_equivalence() {
    double worst = 0.0;
    bool structure = true;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto model = model_f(seed, seed % 2 == 0 ? 25.0f : 1.0f);
        Rng rng(RngSeed{seed + 1000});
        const auto toks = tokens(48, rng);
        const PrefillConfig cfg{128, 16, 8}; // W >= n + m = 54, three chunks
        const auto result = prefill(model, toks, cfg);
        structure = structure && result.stats.steps == 3 && result.stats.dropped_entries == 0;
        const auto chunked = full_nested_view(result.cache);
        const auto full = full_attention_nested(model, toks, 8);
        for (std::size_t l = 0; l < full.layers.size(); ++l) {
            structure = structure && chunked.layers[l].kinds == full.layers[l].kinds &&
                        chunked.layers[l].positions == full.layers[l].positions;
            for (std::size_t h = 0; h < full.layers[l].n_heads(); ++h) {
                worst = std::max(worst, max_abs_diff(chunked.layers[l].keys[h], full.layers[l].keys[h]));
                worst = std::max(worst, max_abs_diff(chunked.layers[l].values[h], full.layers[l].values[h]));
            }
        }
    }
    return {structure && worst <= 1e-5, "20 seeds, n=48 l=8 W=128 c=16, max |diff| " + fmt("%.3g", worst)};
}

// 2. Full refill decodes exactly like the full nested cache.
Verdict end_to_end_equivalence() {
    std::size_t identical = 0;
    std::size_t nontrivial = 0;
    const std::array<std::size_t, 3> intervals{2, 4, 8};
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(RngSeed{seed + 2000});
        const auto model = model_f(seed + 50, seed % 2 == 0 ? 25.0f : 1.0f);
        const std::size_t n = 20 + rng.below(60);
        const auto ctx = tokens(n, rng);
        const auto q = tokens(1 + rng.below(3), rng);
        ExperimentConfig cfg;
        cfg.interval = intervals[rng.below(3)];
        cfg.window = 4096;
        cfg.eta = 4096;
        cfg.max_new = 6;
        const auto r = run_acre(model, ctx, q, cfg);
        const auto full = full_attention_nested(model, ctx, cfg.interval);
        const auto expected = decode(model, full, q, static_cast<Position>(r.n + r.m), cfg.max_new);
        if (r.plan.k >= r.m && r.answer == expected) {
            ++identical;
        }
        std::vector<TokenId> sorted = expected;
        std::sort(sorted.begin(), sorted.end());
        nontrivial += std::unique(sorted.begin(), sorted.end()) - sorted.begin() > 1 ? 1 : 0;
    }
    return {identical == 20, std::to_string(identical) + "/20 token-identical (" + std::to_string(nontrivial) +
                                 " with more than one distinct token)"};
}

// 3. Geometry and layout invariants.
Verdict structure_invariants() {
    std::size_t checked = 0;
    for (std::size_t n = 1; n <= 512; ++n) {
        for (std::size_t l = 1; l <= 64; ++l) {
            const NestedLayout lay(n, l);
            if (lay.m() != (n + l - 1) / l || lay.m() * l < n || (lay.m() - 1) * l >= n) {
                return {false, "m != ceil(n/l) at n=" + std::to_string(n) + " l=" + std::to_string(l)};
            }
            std::size_t next = 0;
            for (const auto& r : lay.proxy_map()) {
                if (r.begin != next || r.end <= r.begin) {
                    return {false, "proxy ranges do not partition at n=" + std::to_string(n)};
                }
                next = r.end;
            }
            if (next != n) {
                return {false, "proxy ranges do not cover [0,n) at n=" + std::to_string(n)};
            }
            ++checked;
        }
    }
    ModelConfig tiny{1, 1, 4, 64, 2, RngSeed{9}};
    const auto model = init_model(tiny);
    Rng rng(RngSeed{3000});
    std::size_t views = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(200);
        const std::size_t l = 1 + rng.below(32);
        const auto nested = full_attention_nested(model, tokens(n, rng), l);
        const auto cache = decompose(nested, l);
        if (!(full_nested_view(cache) == nested)) {
            return {false, "recompose(all) differs from nested order at n=" + std::to_string(n)};
        }
        for (int s = 0; s < 5; ++s) {
            RefillPlan plan;
            plan.selected.resize(cache.n_layers());
            for (std::size_t i = 0; i < cache.m(); ++i) {
                if (rng.below(2) == 0) {
                    plan.selected[0].push_back(i);
                }
            }
            for (const auto& layer : refill(cache, plan).layers) {
                for (std::size_t e = 1; e < layer.size(); ++e) {
                    if (layer.positions[e] <= layer.positions[e - 1]) {
                        return {false, "refilled positions not increasing"};
                    }
                }
            }
            ++views;
        }
    }
    return {true, std::to_string(checked) + " (n,l) layouts, 200 roundtrips, " + std::to_string(views) +
                      " refilled views"};
}

// 4. Score normalization and invariance to L1 value scaling.
Verdict score_normalization() {
    double worst = 0.0;
    bool invariant = true;
    std::size_t vectors = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        Rng rng(RngSeed{4000 + t});
        const float gains[3] = {1.0f, 10.0f, 25.0f};
        const auto model = model_f(t + 100, gains[t % 3]);
        const std::size_t n = 8 + rng.below(193);
        const std::size_t l = 1 + rng.below(16);
        const auto cache = prefill(model, tokens(n, rng), PrefillConfig::fitted(4 * (n + n / l + 8), l)).cache;
        const auto q = tokens(1 + rng.below(4), rng);
        const auto probe = probe_queries(model, cache, q);
        const float factor = 0.25f + static_cast<float>(rng.below(16)) * 0.25f;
        const auto rescaled = cache.scaled_l1_values(factor);
        for (std::size_t layer = 0; layer < cache.n_layers(); ++layer) {
            const auto s = score_l1(probe, layer, cache);
            worst = std::max(worst, std::abs(std::accumulate(s.values.begin(), s.values.end(), 0.0) - 1.0));
            invariant = invariant && s.values == score_l1(probe, layer, rescaled).values;
            ++vectors;
        }
        invariant = invariant && score_l1(model, 0, cache, q).values == score_l1(model, 0, rescaled, q).values;
    }
    return {worst <= 1e-5 && invariant, std::to_string(vectors) + " score vectors over 100 triples, max |sum-1| " +
                                            fmt("%.3g", worst) + (invariant ? ", scaling invariance exact" : ", scaling changed S")};
}

// 5. compute_k against the floor formula.
std::size_t k_oracle(long long w, long long m, long long eta, long long l) {
    const long long room = std::min(w - m, eta);
    return room <= 0 ? 0 : static_cast<std::size_t>(std::floor(static_cast<double>(room) / static_cast<double>(l)));
}

Verdict k_formula() {
    if (compute_k({4096, 32768, 16}, 2048) != 256) {
        return {false, "W=32768 m=2048 eta=4096 l=16 gives " + std::to_string(compute_k({4096, 32768, 16}, 2048))};
    }
    std::uint64_t points = 1;
    // compute_k sees W and m only through W - m: every (W - m, eta, l) value
    // with W - m in 0..4096 ...
    for (std::size_t l = 1; l <= 128; ++l) {
        for (std::size_t eta = 0; eta <= 4096; ++eta) {
            for (std::size_t m = 0; m <= 4096; ++m) {
                if (compute_k({eta, 4096, l}, m) != k_oracle(4096, static_cast<long long>(m), static_cast<long long>(eta),
                                                            static_cast<long long>(l))) {
                    return {false, "mismatch at W=4096 m=" + std::to_string(m) + " eta=" + std::to_string(eta) +
                                       " l=" + std::to_string(l)};
                }
            }
        }
        points += 4097 * 4097;
    }
    // ... and every (W, m) pair, including W < m, on an eta x l lattice.
    const std::array<std::size_t, 6> etas{0, 1, 15, 16, 1000, 4096};
    const std::array<std::size_t, 5> ls{1, 3, 16, 100, 128};
    for (std::size_t eta : etas) {
        for (std::size_t l : ls) {
            for (std::size_t w = 0; w <= 4096; ++w) {
                for (std::size_t m = 0; m <= 4096; ++m) {
                    if (compute_k({eta, w, l}, m) != k_oracle(static_cast<long long>(w), static_cast<long long>(m),
                                                              static_cast<long long>(eta), static_cast<long long>(l))) {
                        return {false, "mismatch at W=" + std::to_string(w) + " m=" + std::to_string(m)};
                    }
                }
            }
            points += 4097 * 4097;
        }
    }
    return {true, std::to_string(points) + " points incl. (32768, 2048, 4096, 16) -> 256"};
}

// 6. Finite-difference gradient check in 64-bit mode.
Verdict gradient_check() {
    ModelConfig cfg;
    cfg.n_heads = 4;
    cfg.head_dim = 16; // H = 64 so every trainable family has at least 50 scalars
    cfg.seed = RngSeed{7};
    const auto model = init_model(cfg).cast<double>();
    Rng rng(RngSeed{6000});
    std::vector<Stage1Sample> seqs;
    for (int s = 0; s < 2; ++s) {
        seqs.push_back({tokens(40, rng), 4});
    }
    const PrefillConfig pc{24, 8, 4};
    std::vector<QaSample> qa;
    for (int s = 0; s < 2; ++s) {
        qa.push_back({tokens(16, rng), tokens(2, rng), tokens(2, rng), 4});
    }
    Stage2Options opts;
    opts.prefill = pc;
    opts.mode = CacheMode::Refilled;
    opts.refill = RefillConfig{8, 24, 4};

    const auto r1 = check_gradients(
        model, [&](const TinyModel<double>& m, bool g) { return stage1_loss(m, seqs, pc, g); }, 1e-4, 50, 1);
    const auto r2 = check_gradients(
        model, [&](const TinyModel<double>& m, bool g) { return stage2_loss(m, qa, opts, g); }, 1e-4, 50, 2);
    std::size_t min_sampled = SIZE_MAX;
    for (const auto* r : {&r1, &r2}) {
        for (const auto& f : r->families) {
            if (f.trainable) {
                min_sampled = std::min(min_sampled, f.sampled);
            }
        }
    }
    const double err = std::max(r1.max_trainable_error(), r2.max_trainable_error());
    const bool frozen = r1.frozen_exactly_zero() && r2.frozen_exactly_zero();
    return {err < 1e-3 && frozen && min_sampled >= 50,
            "max rel error " + fmt("%.3g", err) + ", >= " + std::to_string(min_sampled) +
                " samples per trainable family, frozen analytic " + (frozen ? "exactly 0" : "NONZERO")};
}

double recall_accuracy(const TinyModel<float>& model, const std::vector<QaSample>& set, std::size_t eta,
                       const PrefillConfig& pc) {
    std::size_t hits = 0;
    for (const auto& s : set) {
        const auto cache = prefill(model, s.context, pc).cache;
        const auto plan = plan_refill(model, cache, s.query, RefillConfig{eta, pc.window, s.interval});
        const auto out = decode(model, refill(cache, plan), s.query, static_cast<Position>(cache.layout().total()), 1);
        hits += !out.empty() && out[0] == s.answer[0] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(set.size());
}

// 7. Stage-1 loss curve and the refill advantage on key-value recall.
Verdict trainability() {
    ModelConfig cfg;
    cfg.seed = RngSeed{5};
    auto model = init_model(cfg);
    const auto corpus = markov_corpus(64, 4 * 64, 2, 17);
    TrainBatch batch;
    for (std::size_t i = 0; i < 4; ++i) {
        batch.sequences.push_back({std::vector<TokenId>(corpus.begin() + static_cast<std::ptrdiff_t>(i * 64),
                                                        corpus.begin() + static_cast<std::ptrdiff_t>((i + 1) * 64)),
                                   8});
    }
    TrainOptions o1;
    o1.stage = TrainStage::Stage1;
    o1.lr = 1.0;
    o1.steps = 200;
    o1.prefill = PrefillConfig{40, 16, 8};
    const std::vector<TrainBatch> b1{batch};
    const auto trace = train_steps(model, b1, o1);
    std::vector<double> losses;
    for (const auto& row : trace) {
        losses.push_back(row.loss);
    }
    const auto smooth = smoothed(losses, 20);
    bool monotone = !smooth.empty();
    for (std::size_t i = 1; i < smooth.size(); ++i) {
        monotone = monotone && smooth[i] < smooth[i - 1];
    }
    const bool starts_at_uniform = std::abs(losses.front() - std::log(64.0)) <= 0.2;

    const RecallVocab rv{8, 4};
    const std::size_t l = 2;
    const std::size_t facts = 8; // m = 4
    ModelConfig qcfg;
    qcfg.vocab_size = rv.size();
    qcfg.seed = RngSeed{11};
    auto qa_model = init_model(qcfg);
    const PrefillConfig pc{256, 4 * l, l};
    std::vector<TrainBatch> batches;
    for (std::uint64_t b = 0; b < 64; ++b) {
        TrainBatch tb;
        tb.qa = recall_set(rv, 16, facts, l, 1000 + b);
        batches.push_back(tb);
    }
    const auto held_out = recall_set(rv, 50, facts, l, 99);
    TrainOptions base;
    base.stage = TrainStage::Base;
    base.lr = 0.3;
    base.steps = 1500;
    base.trainable = TrainableSet::Original;
    base.prefill = pc;
    base.stage2.prefill = pc;
    train_steps(qa_model, batches, base);
    TrainOptions toy = base;
    toy.stage = TrainStage::Stage2;
    toy.trainable = TrainableSet::L1Only;
    toy.steps = 300;
    toy.stage2.mode = CacheMode::L1Only;
    train_steps(qa_model, batches, toy);
    const double refilled = recall_accuracy(qa_model, held_out, l, pc); // k = 1 of m = 4
    const double l1_only = recall_accuracy(qa_model, held_out, 0, pc);

    return {monotone && starts_at_uniform && refilled > l1_only,
            "stage-1 loss " + fmt("%.4f", losses.front()) + " -> " + fmt("%.4f", losses.back()) + " (ln 64 = " +
                fmt("%.4f", std::log(64.0)) + "), smoothed " + (monotone ? "strictly decreasing" : "NOT monotone") +
                "; recall accuracy refilled k=1 " + fmt("%.2f", refilled) + " vs L1-only " + fmt("%.2f", l1_only)};
}

// 8. Hot tier scales with ceil(n/l); full attention with n and hits its cap.
Verdict memory_scaling() {
    const auto model = model_f(8);
    ExperimentConfig acre;
    acre.interval = 16;
    acre.window = 512;
    acre.eta = 256;
    acre.max_new = 2;
    ExperimentConfig full = acre;
    full.mode = RunMode::Full;
    full.full_cap = 3000;
    const std::uint64_t per = model.config.n_layers * model.config.n_heads;
    std::string detail;
    bool ok = true;
    std::uint64_t first_full = 0;
    for (std::size_t n : {1024u, 2048u, 4096u}) {
        Rng rng(RngSeed{8000 + n});
        const auto ctx = tokens(n, rng);
        const auto q = tokens(2, rng);
        const auto r = run_acre(model, ctx, q, acre);
        const std::uint64_t expect_hot = ((n + 15) / 16) * per;
        ok = ok && r.metrics.hot_entries == expect_hot && r.metrics.peak_view_entries <= acre.window;
        detail += "n=" + std::to_string(n) + " hot " + std::to_string(r.metrics.hot_entries) + " peak " +
                  std::to_string(r.metrics.peak_view_entries);
        try {
            const auto f = run_baseline(model, ctx, q, full);
            first_full = first_full == 0 ? f.metrics.hot_entries / n : first_full;
            ok = ok && f.metrics.hot_entries == n * per && f.metrics.hot_entries / n == first_full &&
                 n + q.size() + full.max_new <= full.full_cap;
            detail += " full " + std::to_string(f.metrics.hot_entries) + "; ";
        } catch (const CapacityError&) {
            ok = ok && n + q.size() + full.max_new > full.full_cap;
            detail += " full capacity error; ";
        }
    }
    return {ok, detail + "W=512 l=16 cap=3000"};
}

// 9. Serialization roundtrips, CRC and the golden digest.
Verdict serialization() {
    const auto model = model_f(42);
    Rng rng(RngSeed{9000});
    const auto cache = prefill(model, tokens(77, rng), PrefillConfig::fitted(256, 8)).cache;
    const auto bytes = serialize_cache(cache);
    bool ok = deserialize_cache(bytes) == cache && serialize_cache(deserialize_cache(bytes)) == bytes;
    const auto model_bytes = serialize_model(model);
    ok = ok && deserialize_model(model_bytes) == model && serialize_model(deserialize_model(model_bytes)) == model_bytes;

    const auto dir = std::filesystem::temp_directory_path();
    const auto cache_path = (dir / "bkv_accept_cache.ackv").string();
    const auto model_path = (dir / "bkv_accept_model.bin").string();
    save_cache(cache, cache_path);
    save_model(model, model_path);
    ok = ok && load_cache(cache_path) == cache && load_model(model_path) == model;
    std::filesystem::remove(cache_path);
    std::filesystem::remove(model_path);

    std::size_t detected = 0;
    for (std::size_t at = kCacheHeaderBytes; at + 4 < bytes.size(); at += 97) {
        auto bad = bytes;
        bad[at] ^= 0x01;
        try {
            deserialize_cache(bad);
        } catch (const FormatError&) {
            ++detected;
        }
    }
    const std::size_t flips = (bytes.size() - 4 - kCacheHeaderBytes + 96) / 97;
    const bool little_endian = bytes[4] == 1 && bytes[5] == 0 && bytes[6] == 0 && bytes[7] == 0 && bytes[8] == 8;
    const auto digest = golden::hex(golden::fnv1a(golden::cache_bytes()));
    const bool golden_ok = digest == golden::expected_digest();
    return {ok && detected == flips && little_endian && golden_ok,
            std::string("roundtrips ") + (ok ? "bit-exact" : "DIFFER") + ", " + std::to_string(detected) + "/" +
                std::to_string(flips) + " payload flips caught, golden " + digest +
                (golden_ok ? " matches" : " MISMATCH")};
}

std::string run_cli(const std::string& args, int& code) {
    const std::string cmd = std::string(BKV_CLI_PATH) + " " + args + " 2>/dev/null";
    std::string out;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) {
        code = -1;
        return out;
    }
    std::array<char, 4096> buf{};
    std::size_t got = 0;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        out.append(buf.data(), got);
    }
    const int status = pclose(pipe);
    code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

// 10. Repeated CLI invocations produce identical metrics.
Verdict determinism() {
    const auto dir = std::filesystem::temp_directory_path();
    const auto cache = (dir / "bkv_accept_cli.ackv").string();
    const std::string ctx = "--text \"the cache keeps one proxy per group of tokens\"";
    const std::vector<std::string> invocations{
        "bench --seed 4 --l 4 --eta 16 --max-new 6 --query \"which\" " + ctx,
        "bench --seed 4 --mode full --max-new 6 --query \"which\" " + ctx,
        "bench --seed 4 --mode streaming --stream-window 64 --max-new 6 --query \"which\" " + ctx,
        "prefill --seed 4 --l 8 " + ctx + " --cache-out " + cache,
        "query --seed 4 --eta 32 --max-new 6 --query \"which\" --cache-in " + cache,
        "sweep --seed 4 --param eta --values 0,8,64 --max-new 2 --query \"which\" " + ctx,
        "train --seed 4 --stage 1 --steps 5",
        "train --seed 4 --stage 2 --steps 3 --cache-mode refilled",
        "gradcheck --seed 4 --stage 1 --samples 8",
    };
    std::size_t same = 0;
    for (const auto& args : invocations) {
        int a_code = 0;
        int b_code = 0;
        const std::string metrics_a = (dir / "bkv_accept_a.jsonl").string();
        const std::string metrics_b = (dir / "bkv_accept_b.jsonl").string();
        std::filesystem::remove(metrics_a);
        std::filesystem::remove(metrics_b);
        const auto a = run_cli(args + " --metrics-out " + metrics_a, a_code);
        const auto b = run_cli(args + " --metrics-out " + metrics_b, b_code);
        const auto read = [](const std::string& p) {
            return std::filesystem::exists(p) ? read_file(p) : std::vector<std::uint8_t>{};
        };
        const auto fa = read(metrics_a);
        const auto fb = read(metrics_b);
        if (a_code == 0 && a_code == b_code && a == b && !fa.empty() && fa == fb) {
            ++same;
        } else {
            std::fprintf(stderr, "not deterministic: %s\n", args.c_str());
        }
        std::filesystem::remove(metrics_a);
        std::filesystem::remove(metrics_b);
    }
    std::filesystem::remove(cache);
    return {same == invocations.size(), std::to_string(same) + "/" + std::to_string(invocations.size()) +
                                            " invocations byte-identical across two runs"};
}

struct Criterion {
    int id;
    const char* name;
    double limit_s; // 0 = none
    std::function<Verdict()> check;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "prefill oracle equivalence", 10, prefill_equivalence},
        {2, "end-to-end oracle equivalence", 10, end_to_end_equivalence},
        {3, "structure invariants", 30, structure_invariants},
        {4, "score normalization", 0, score_normalization},
        {5, "k-formula conformance", 0, k_formula},
        {6, "gradient check", 60, gradient_check},
        {7, "trainability", 300, trainability},
        {8, "memory-scaling shape", 0, memory_scaling},
        {9, "serialization", 0, serialization},
        {10, "determinism", 0, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = Clock::now();
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - start).count();
        const bool in_time = c.limit_s == 0 || secs < c.limit_s;
        const bool pass = v.pass && in_time;
        failures += pass ? 0 : 1;
        std::string timing = fmt("%.2fs", secs);
        if (c.limit_s > 0) {
            timing += fmt(" < %.0fs", c.limit_s);
            if (!in_time) {
                timing += " EXCEEDED";
            }
        }
        std::printf("%s %2d %s: %s [%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), timing.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
