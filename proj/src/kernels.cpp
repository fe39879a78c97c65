// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/kernels.hpp"

#include <cmath>
#include <numbers>

namespace bkv {

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape() + " * " + b.shape());
    }
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const T aik = a(i, k);
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                dst[j] += aik * src[j];
            }
        }
    }
    return out;
}

template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_bt shape mismatch: " + a.shape() + " * " + b.shape() + "^T");
    }
    Matrix<T> out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto br = b.row(j);
            T acc{0};
            for (std::size_t k = 0; k < ar.size(); ++k) {
                acc += ar[k] * br[k];
            }
            out(i, j) = acc;
        }
    }
    return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("add shape mismatch: " + a.shape() + " + " + b.shape());
    }
    Matrix<T> out = a;
    auto dst = out.data();
    auto src = b.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
    return out;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& m) {
    Matrix<T> out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r);
        auto dst = out.row(r);
        if (src.empty()) {
            continue;
        }
        T mx = src[0];
        for (T v : src) {
            mx = std::max(mx, v);
        }
        T sum{0};
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = std::exp(src[c] - mx);
            sum += dst[c];
        }
        for (auto& v : dst) {
            v /= sum;
        }
    }
    return out;
}

template <typename T>
Matrix<T> rope_apply(const Matrix<T>& x, std::span<const Position> positions) {
    if (x.cols() % 2 != 0) {
        throw ConfigError("rotary embedding needs an even head dim, got " + std::to_string(x.cols()));
    }
    if (positions.size() != x.rows()) {
        throw ShapeError("rope positions length " + std::to_string(positions.size()) +
                         " does not match rows of " + x.shape());
    }
    const std::size_t half = x.cols() / 2;
    Matrix<T> out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double pos = static_cast<double>(positions[r]);
        auto src = x.row(r);
        auto dst = out.row(r);
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(x.cols()));
            const T c = static_cast<T>(std::cos(pos * freq));
            const T s = static_cast<T>(std::sin(pos * freq));
            const T x0 = src[2 * i];
            const T x1 = src[2 * i + 1];
            dst[2 * i] = x0 * c - x1 * s;
            dst[2 * i + 1] = x0 * s + x1 * c;
        }
    }
    return out;
}

template <typename T>
Matrix<T> rmsnorm(const Matrix<T>& x, const Matrix<T>& gain) {
    if (gain.rows() != 1 || gain.cols() != x.cols()) {
        throw ShapeError("rmsnorm gain " + gain.shape() + " does not fit input " + x.shape());
    }
    Matrix<T> out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        T ss{0};
        for (T v : src) {
            ss += v * v;
        }
        const T inv = T{1} / std::sqrt(ss / static_cast<T>(src.size()) + static_cast<T>(kRmsNormEps));
        auto dst = out.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = src[c] * inv * gain(0, c);
        }
    }
    return out;
}

template <typename T>
Matrix<T> silu(const Matrix<T>& x) {
    Matrix<T> out(x.rows(), x.cols());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = src[i] / (T{1} + std::exp(-src[i]));
    }
    return out;
}

template <typename T>
Matrix<T> slice_cols(const Matrix<T>& x, std::size_t begin, std::size_t end) {
    if (begin > end || end > x.cols()) {
        throw ShapeError("column slice out of range for " + x.shape());
    }
    Matrix<T> out(x.rows(), end - begin);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
                  src.begin() + static_cast<std::ptrdiff_t>(end), out.row(r).begin());
    }
    return out;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
    for (T v : m.data()) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double Rng::normal() {
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    // Rejection sampling: no modulo bias, no dependence on library distributions.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v = engine_();
    while (v >= limit) {
        v = engine_();
    }
    return v % bound;
}

#define BKV_INSTANTIATE_KERNELS(T)                                                    \
    template Matrix<T> matmul(const Matrix<T>&, const Matrix<T>&);                    \
    template Matrix<T> matmul_bt(const Matrix<T>&, const Matrix<T>&);                 \
    template Matrix<T> add(const Matrix<T>&, const Matrix<T>&);                       \
    template Matrix<T> softmax_rows(const Matrix<T>&);                                \
    template Matrix<T> rope_apply(const Matrix<T>&, std::span<const Position>);       \
    template Matrix<T> rmsnorm(const Matrix<T>&, const Matrix<T>&);                   \
    template Matrix<T> silu(const Matrix<T>&);                                        \
    template Matrix<T> slice_cols(const Matrix<T>&, std::size_t, std::size_t);        \
    template bool all_finite(const Matrix<T>&);

BKV_INSTANTIATE_KERNELS(float)
BKV_INSTANTIATE_KERNELS(double)

#undef BKV_INSTANTIATE_KERNELS

} // namespace bkv
