// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bkv/matrix.hpp"

namespace bkv {

using Position = std::uint32_t;

inline constexpr double kRmsNormEps = 1e-6;
inline constexpr double kRopeBase = 10000.0;

/// Dense product a * b. Throws ShapeError naming both shapes on mismatch.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

/// a * b^T, the attention-score form.
template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b);

/// Row-wise softmax with row-max subtraction.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& m);

/// Rotary embedding over adjacent pairs (2i, 2i+1), frequency base^(-2i/d).
/// Row r is rotated by positions[r]; position 0 is the identity.
template <typename T>
Matrix<T> rope_apply(const Matrix<T>& x, std::span<const Position> positions);

/// x / sqrt(mean(x^2) + eps) * gain, per row. `gain` is 1 x cols.
template <typename T>
Matrix<T> rmsnorm(const Matrix<T>& x, const Matrix<T>& gain);

template <typename T>
Matrix<T> silu(const Matrix<T>& x);

/// Column block [begin, end) of every row.
template <typename T>
Matrix<T> slice_cols(const Matrix<T>& x, std::size_t begin, std::size_t end);

struct RngSeed {
    std::uint64_t value = 0;
    friend bool operator==(RngSeed, RngSeed) = default;
};

/// mt19937_64 with hand-rolled uniform and Box-Muller conversions, so the
/// stream is identical across standard library implementations.
class Rng {
public:
    explicit Rng(RngSeed seed) : engine_(seed.value) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal();

    /// Uniform integer in [0, bound). bound must be nonzero.
    std::uint64_t below(std::uint64_t bound);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

template <typename T>
Matrix<T> random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix<T> m(rows, cols);
    for (auto& v : m.data()) {
        v = static_cast<T>(stddev * rng.normal());
    }
    return m;
}

template <typename T>
bool all_finite(const Matrix<T>& m);

} // namespace bkv
