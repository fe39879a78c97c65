// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include "bkv/autodiff.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace bkv::ad {

const MatrixD& Var::value() const { return tape->value(*this); }

Var Tape::constant(MatrixD value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, {}});
    return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(MatrixD value) {
    nodes_.push_back(Node{std::move(value), {}, true, false, {}});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(MatrixD value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(MatrixD value, std::span<const Var> inputs, Backward backward) {
    bool rg = false;
    for (const Var& v : inputs) {
        rg = rg || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, rg, false, rg ? std::move(backward) : Backward{}});
    return Var{this, nodes_.size() - 1};
}

MatrixD Tape::grad(Var v) const {
    const Node& node = nodes_[v.id];
    if (!node.has_grad) {
        return MatrixD(node.value.rows(), node.value.cols());
    }
    return node.grad;
}

void Tape::accumulate(Var v, const MatrixD& g) {
    Node& node = nodes_[v.id];
    if (!node.requires_grad) {
        return;
    }
    if (!node.has_grad) {
        node.grad = g;
        node.has_grad = true;
        return;
    }
    auto dst = node.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.rows() != 1 || nodes_[loss.id].value.cols() != 1) {
        throw ShapeError("backward needs a 1x1 loss, got " + nodes_[loss.id].value.shape());
    }
    for (auto& node : nodes_) {
        node.has_grad = false;
        node.grad = MatrixD();
    }
    accumulate(loss, MatrixD(1, 1, 1.0));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.has_grad && node.backward) {
            node.backward(*this, node.grad);
        }
    }
}

namespace {

MatrixD transpose_times(const MatrixD& a, const MatrixD& g) {
    // a^T * g
    MatrixD out(a.cols(), g.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto ar = a.row(r);
        auto gr = g.row(r);
        for (std::size_t i = 0; i < ar.size(); ++i) {
            auto dst = out.row(i);
            for (std::size_t j = 0; j < gr.size(); ++j) {
                dst[j] += ar[i] * gr[j];
            }
        }
    }
    return out;
}

MatrixD rotate(const MatrixD& x, std::span<const Position> positions, double sign) {
    const std::size_t half = x.cols() / 2;
    MatrixD out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double pos = static_cast<double>(positions[r]);
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(x.cols()));
            const double c = std::cos(pos * freq);
            const double s = sign * std::sin(pos * freq);
            const double x0 = x(r, 2 * i);
            const double x1 = x(r, 2 * i + 1);
            out(r, 2 * i) = x0 * c - x1 * s;
            out(r, 2 * i + 1) = x0 * s + x1 * c;
        }
    }
    return out;
}

} // namespace

Var matmul(Var a, Var b) {
    return a.tape->record(bkv::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& t, const MatrixD& g) {
        if (t.requires_grad(a)) {
            t.accumulate(a, bkv::matmul_bt(g, t.value(b)));
        }
        if (t.requires_grad(b)) {
            t.accumulate(b, transpose_times(t.value(a), g));
        }
    });
}

Var matmul_bt(Var a, Var b) {
    return a.tape->record(bkv::matmul_bt(a.value(), b.value()), {a, b}, [a, b](Tape& t, const MatrixD& g) {
        if (t.requires_grad(a)) {
            t.accumulate(a, bkv::matmul(g, t.value(b)));
        }
        if (t.requires_grad(b)) {
            t.accumulate(b, transpose_times(g, t.value(a)));
        }
    });
}

Var add(Var a, Var b) {
    return a.tape->record(bkv::add(a.value(), b.value()), {a, b}, [a, b](Tape& t, const MatrixD& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var scale(Var a, double s) {
    MatrixD v = a.value();
    for (auto& x : v.data()) {
        x *= s;
    }
    return a.tape->record(std::move(v), {a}, [a, s](Tape& t, const MatrixD& g) {
        MatrixD ga = g;
        for (auto& x : ga.data()) {
            x *= s;
        }
        t.accumulate(a, ga);
    });
}

Var rmsnorm(Var x, Var gain) {
    return x.tape->record(bkv::rmsnorm(x.value(), gain.value()), {x, gain}, [x, gain](Tape& t, const MatrixD& g) {
        const MatrixD& xv = t.value(x);
        const MatrixD& gv = t.value(gain);
        const std::size_t n = xv.cols();
        MatrixD gx(xv.rows(), n);
        MatrixD gg(1, n);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            double ss = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                ss += xv(r, c) * xv(r, c);
            }
            const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n) + kRmsNormEps);
            double dot = 0.0; // sum_i du_i * x_i
            for (std::size_t c = 0; c < n; ++c) {
                const double du = g(r, c) * gv(0, c);
                dot += du * xv(r, c);
                gg(0, c) += g(r, c) * xv(r, c) * inv;
            }
            for (std::size_t c = 0; c < n; ++c) {
                const double du = g(r, c) * gv(0, c);
                gx(r, c) = inv * du - inv * inv * inv * xv(r, c) * dot / static_cast<double>(n);
            }
        }
        t.accumulate(x, gx);
        t.accumulate(gain, gg);
    });
}

Var silu(Var x) {
    return x.tape->record(bkv::silu(x.value()), {x}, [x](Tape& t, const MatrixD& g) {
        const MatrixD& xv = t.value(x);
        MatrixD gx(xv.rows(), xv.cols());
        auto src = xv.data();
        auto gs = g.data();
        auto dst = gx.data();
        for (std::size_t i = 0; i < src.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-src[i]));
            dst[i] = gs[i] * s * (1.0 + src[i] * (1.0 - s));
        }
        t.accumulate(x, gx);
    });
}

Var rope(Var x, std::span<const Position> positions) {
    if (x.cols() % 2 != 0) {
        throw ConfigError("rotary embedding needs an even head dim");
    }
    if (positions.size() != x.rows()) {
        throw ShapeError("rope positions do not match rows of " + x.value().shape());
    }
    std::vector<Position> pos(positions.begin(), positions.end());
    return x.tape->record(rotate(x.value(), pos, 1.0), {x}, [x, pos](Tape& t, const MatrixD& g) {
        t.accumulate(x, rotate(g, pos, -1.0));
    });
}

Var causal_softmax(Var scores, double s, std::span<const Position> query_positions,
                   std::span<const Position> key_positions) {
    const MatrixD& sv = scores.value();
    if (sv.rows() != query_positions.size() || sv.cols() != key_positions.size()) {
        throw ShapeError("causal_softmax positions do not match scores " + sv.shape());
    }
    MatrixD p(sv.rows(), sv.cols());
    for (std::size_t i = 0; i < sv.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        bool visible = false;
        for (std::size_t j = 0; j < sv.cols(); ++j) {
            if (key_positions[j] <= query_positions[i]) {
                mx = std::max(mx, s * sv(i, j));
                visible = true;
            }
        }
        if (!visible) {
            throw PreconditionError("query at position " + std::to_string(query_positions[i]) + " sees no key");
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < sv.cols(); ++j) {
            if (key_positions[j] <= query_positions[i]) {
                p(i, j) = std::exp(s * sv(i, j) - mx);
                sum += p(i, j);
            }
        }
        for (std::size_t j = 0; j < sv.cols(); ++j) {
            p(i, j) /= sum;
        }
    }
    const std::size_t self = scores.tape->size();
    return scores.tape->record(std::move(p), {scores}, [scores, s, self](Tape& t, const MatrixD& g) {
        const MatrixD& pv = t.value(Var{&t, self});
        MatrixD gs(pv.rows(), pv.cols());
        for (std::size_t i = 0; i < pv.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < pv.cols(); ++j) {
                dot += g(i, j) * pv(i, j);
            }
            for (std::size_t j = 0; j < pv.cols(); ++j) {
                gs(i, j) = s * pv(i, j) * (g(i, j) - dot);
            }
        }
        t.accumulate(scores, gs);
    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    return x.tape->record(bkv::slice_cols(x.value(), begin, end), {x}, [x, begin, end](Tape& t, const MatrixD& g) {
        const MatrixD& xv = t.value(x);
        MatrixD gx(xv.rows(), xv.cols());
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            for (std::size_t c = begin; c < end; ++c) {
                gx(r, c) = g(r, c - begin);
            }
        }
        t.accumulate(x, gx);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols of nothing");
    }
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) {
            throw ShapeError("concat_cols row mismatch");
        }
        cols += p.cols();
    }
    MatrixD out(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const MatrixD& v = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < v.cols(); ++c) {
                out(r, off + c) = v(r, c);
            }
        }
        off += v.cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return parts.front().tape->record(std::move(out), parts, [ins](Tape& t, const MatrixD& g) {
        std::size_t o = 0;
        for (const Var& p : ins) {
            const std::size_t w = t.value(p).cols();
            if (t.requires_grad(p)) {
                t.accumulate(p, bkv::slice_cols(g, o, o + w));
            }
            o += w;
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows of nothing");
    }
    MatrixD out(0, parts.front().cols());
    for (const Var& p : parts) {
        out.append_rows(p.value());
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return parts.front().tape->record(std::move(out), parts, [ins](Tape& t, const MatrixD& g) {
        std::size_t o = 0;
        for (const Var& p : ins) {
            const std::size_t h = t.value(p).rows();
            if (t.requires_grad(p)) {
                t.accumulate(p, g.slice_rows(o, o + h));
            }
            o += h;
        }
    });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    for (std::size_t r : idx) {
        if (r >= x.rows()) {
            throw ShapeError("gather_rows index " + std::to_string(r) + " out of range for " + x.value().shape());
        }
    }
    return x.tape->record(x.value().select_rows(idx), {x}, [x, idx](Tape& t, const MatrixD& g) {
        const MatrixD& xv = t.value(x);
        MatrixD gx(xv.rows(), xv.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = g.row(i);
            auto dst = gx.row(idx[i]);
            for (std::size_t c = 0; c < src.size(); ++c) {
                dst[c] += src[c];
            }
        }
        t.accumulate(x, gx);
    });
}

Var scatter_rows(std::span<const Var> parts, const std::vector<std::vector<std::size_t>>& dest, std::size_t total_rows) {
    if (parts.empty() || parts.size() != dest.size()) {
        throw ShapeError("scatter_rows needs one destination list per part");
    }
    MatrixD out(total_rows, parts.front().cols());
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const MatrixD& v = parts[p].value();
        if (v.rows() != dest[p].size()) {
            throw ShapeError("scatter_rows destination count mismatch");
        }
        for (std::size_t i = 0; i < v.rows(); ++i) {
            auto src = v.row(i);
            std::copy(src.begin(), src.end(), out.row(dest[p][i]).begin());
        }
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return parts.front().tape->record(std::move(out), parts, [ins, dest](Tape& t, const MatrixD& g) {
        for (std::size_t p = 0; p < ins.size(); ++p) {
            if (t.requires_grad(ins[p])) {
                t.accumulate(ins[p], g.select_rows(dest[p]));
            }
        }
    });
}

Var cross_entropy_sum(Var logits, std::span<const std::size_t> rows, std::span<const std::size_t> targets) {
    if (rows.size() != targets.size()) {
        throw ShapeError("cross_entropy_sum needs one target per row");
    }
    const MatrixD& z = logits.value();
    MatrixD probs(rows.size(), z.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto zr = z.row(rows[i]);
        double mx = zr[0];
        for (double v : zr) {
            mx = std::max(mx, v);
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < zr.size(); ++c) {
            probs(i, c) = std::exp(zr[c] - mx);
            sum += probs(i, c);
        }
        for (std::size_t c = 0; c < zr.size(); ++c) {
            probs(i, c) /= sum;
        }
        total += std::log(sum) + mx - zr[targets[i]];
    }
    std::vector<std::size_t> r(rows.begin(), rows.end());
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    return logits.tape->record(MatrixD(1, 1, total), {logits},
                               [logits, r, tg, probs = std::move(probs)](Tape& t, const MatrixD& g) {
                                   const MatrixD& zv = t.value(logits);
                                   MatrixD gz(zv.rows(), zv.cols());
                                   const double scale = g(0, 0);
                                   for (std::size_t i = 0; i < r.size(); ++i) {
                                       for (std::size_t c = 0; c < zv.cols(); ++c) {
                                           gz(r[i], c) += scale * (probs(i, c) - (c == tg[i] ? 1.0 : 0.0));
                                       }
                                   }
                                   t.accumulate(logits, gz);
                               });
}

Var sum_scalars(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("sum of no scalars");
    }
    double total = 0.0;
    for (const Var& p : parts) {
        total += p.value()(0, 0);
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return parts.front().tape->record(MatrixD(1, 1, total), parts, [ins](Tape& t, const MatrixD& g) {
        for (const Var& p : ins) {
            t.accumulate(p, g);
        }
    });
}

} // namespace bkv::ad
