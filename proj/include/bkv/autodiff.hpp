// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bkv/kernels.hpp"
#include "bkv/matrix.hpp"

namespace bkv::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const MatrixD& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape over 64-bit matrices. Nodes are appended in evaluation
/// order, so a single reverse sweep visits every consumer before its inputs.
class Tape {
public:
    using Backward = std::function<void(Tape&, const MatrixD& grad_out)>;

    Var constant(MatrixD value);
    Var parameter(MatrixD value);

    /// Records an op result. `backward` runs only if some input needs grad.
    Var record(MatrixD value, std::initializer_list<Var> inputs, Backward backward);
    Var record(MatrixD value, std::span<const Var> inputs, Backward backward);

    const MatrixD& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient of the last backward() target with respect to `v`; zeros when
    /// `v` does not require grad.
    MatrixD grad(Var v) const;

    /// Adds `g` into the gradient of `v` (no-op for constants).
    void accumulate(Var v, const MatrixD& g);

    /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and sweeps backwards.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        MatrixD value;
        MatrixD grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var a, double s);
Var rmsnorm(Var x, Var gain);
Var silu(Var x);
Var rope(Var x, std::span<const Position> positions);

/// Row softmax of scale * scores where key j is visible to query i iff
/// key_positions[j] <= query_positions[i]; hidden entries get probability 0.
Var causal_softmax(Var scores, double scale, std::span<const Position> query_positions,
                   std::span<const Position> key_positions);

Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var x, std::span<const std::size_t> rows);

/// Output row dest[p][i] is row i of parts[p]; every output row is written once.
Var scatter_rows(std::span<const Var> parts, const std::vector<std::vector<std::size_t>>& dest, std::size_t total_rows);

/// Sum over the listed rows of -log softmax(logits[row])[target]. 1x1.
Var cross_entropy_sum(Var logits, std::span<const std::size_t> rows, std::span<const std::size_t> targets);

/// Sum of 1x1 vars.
Var sum_scalars(std::span<const Var> parts);

} // namespace bkv::ad
