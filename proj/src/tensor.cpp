// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace wsdlab {

namespace {

thread_local bool g_grad_enabled = true;

enum class Broadcast { same, scalar, row };

Broadcast classify_broadcast(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        return Broadcast::same;
    }
    if (b.numel() == 1) {
        return Broadcast::scalar;
    }
    const bool row_shaped = b.rank() == 1 || (b.rank() == 2 && b.extent(0) == 1);
    if (a.rank() >= 1 && row_shaped && b.numel() == a.shape().back()) {
        return Broadcast::row;
    }
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, bool requires_grad) :
    Tensor(shape, std::vector<Scalar>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad) :
    impl_(std::make_shared<detail::TensorImpl>()) {
    for (auto extent : shape) {
        if (extent == 0) {
            throw DimensionError("tensor extents must be positive: " + shape_str(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                             " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    return impl_->shape;
}

std::size_t Tensor::numel() const {
    return impl_->data.size();
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

std::span<const Scalar> Tensor::values() const {
    return impl_->data;
}

std::span<Scalar> Tensor::mutable_values() {
    return impl_->data;
}

Scalar Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const {
    return impl_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
}

bool Tensor::has_grad() const {
    return !impl_->grad.empty();
}

std::span<const Scalar> Tensor::grad() const {
    return impl_->grad;
}

std::span<Scalar> Tensor::mutable_grad() {
    if (impl_->grad.empty()) {
        impl_->grad.assign(impl_->data.size(), 0.0);
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.clear();
}

bool Tensor::is_leaf() const {
    return !impl_->backward;
}

const char* Tensor::op_name() const {
    return impl_->op;
}

Tensor Tensor::detach() const {
    return Tensor(impl_->shape, impl_->data, false);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw DimensionError("backward() requires a single-element tensor, got " + shape_str(shape()));
    }
    if (!impl_->requires_grad) {
        return;
    }

    // Iterative post-order DFS; reversed, it is a topological order from the
    // root, so every node's gradient is complete before its backward runs.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::TensorImpl* child = node->inputs[next++].impl();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    impl_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(node->grad);
        }
    }
    for (auto* node : order) {
        if (node->backward) {
            node->backward = nullptr;
            node->inputs.clear();
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

namespace detail {

bool grad_enabled() {
    return g_grad_enabled;
}

Tensor make_result(const char* op, Shape shape, std::vector<Scalar> values, std::vector<Tensor> inputs,
                   BackwardFn backward) {
    for (Scalar v : values) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string(op) + " produced a non-finite value");
        }
    }
    Tensor out(std::move(shape), std::move(values), false);
    const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                           return t.requires_grad();
                       });
    auto* impl = out.impl();
    impl->op = op;
    if (track) {
        impl->requires_grad = true;
        impl->inputs = std::move(inputs);
        impl->backward = std::move(backward);
    }
    return out;
}

std::span<Scalar> grad_sink(const Tensor& t) {
    if (!t.requires_grad()) {
        return {};
    }
    auto& grad = t.impl()->grad;
    if (grad.empty()) {
        grad.assign(t.numel(), 0.0);
    }
    return grad;
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
    constexpr std::size_t kRowBlock = 4;
    for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
        const std::size_t rows = std::min(kRowBlock, m - i0);
        for (std::size_t t = 0; t < k; ++t) {
            const Scalar* brow = b + t * n;
            for (std::size_t r = 0; r < rows; ++r) {
                const Scalar av = a[(i0 + r) * k + t];
                Scalar* crow = c + (i0 + r) * n;
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
    std::vector<Scalar> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < k; ++t) {
            bt[t * n + j] = b[j * k + t];
        }
    }
    gemm_nn(m, k, n, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
    constexpr std::size_t kBlock = 64;
    for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
        const std::size_t i1 = std::min(m, i0 + kBlock);
        for (std::size_t t = 0; t < k; ++t) {
            Scalar* crow = c + t * n;
            for (std::size_t i = i0; i < i1; ++i) {
                const Scalar av = a[i * k + t];
                const Scalar* brow = b + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k) {
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<Scalar> out(m * n, 0.0);
    detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
    return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const Scalar> g) {
        if (auto ga = detail::grad_sink(a); !ga.empty()) {
            detail::gemm_nt(m, n, k, g.data(), b.values().data(), ga.data());
        }
        if (auto gb = detail::grad_sink(b); !gb.empty()) {
            detail::gemm_tn(m, k, n, a.values().data(), g.data(), gb.data());
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight) {
    require_rank2("linear", x);
    require_rank2("linear", weight);
    const std::size_t rows = x.extent(0), in = x.extent(1), out = weight.extent(0);
    if (weight.extent(1) != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                             shape_str(weight.shape()));
    }
    std::vector<Scalar> y(rows * out, 0.0);
    detail::gemm_nt(rows, in, out, x.values().data(), weight.values().data(), y.data());
    return detail::make_result("linear", {rows, out}, std::move(y), {x, weight},
                               [x, weight, rows, in, out](std::span<const Scalar> g) {
                                   if (auto gx = detail::grad_sink(x); !gx.empty()) {
                                       detail::gemm_nn(rows, out, in, g.data(), weight.values().data(), gx.data());
                                   }
                                   if (auto gw = detail::grad_sink(weight); !gw.empty()) {
                                       detail::gemm_tn(rows, out, in, g.data(), x.values().data(), gw.data());
                                   }
                               });
}

namespace {

template <bool Multiply>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b) {
    const Broadcast mode = classify_broadcast(op, a, b);
    const std::size_t n = a.numel();
    const std::size_t width = mode == Broadcast::row ? b.numel() : 1;
    auto bv = b.values();
    auto av = a.values();
    auto b_at = [&](std::size_t i) {
        switch (mode) {
            case Broadcast::same: return bv[i];
            case Broadcast::scalar: return bv[0];
            case Broadcast::row: return bv[i % width];
        }
        return bv[0];
    };
    std::vector<Scalar> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = Multiply ? av[i] * b_at(i) : av[i] + b_at(i);
    }
    return detail::make_result(op, a.shape(), std::move(out), {a, b}, [a, b, mode, width](std::span<const Scalar> g) {
        const std::size_t count = g.size();
        auto avals = a.values();
        auto bvals = b.values();
        auto bval_at = [&](std::size_t i) {
            return mode == Broadcast::same ? bvals[i] : mode == Broadcast::scalar ? bvals[0] : bvals[i % width];
        };
        if (auto ga = detail::grad_sink(a); !ga.empty()) {
            for (std::size_t i = 0; i < count; ++i) {
                ga[i] += Multiply ? g[i] * bval_at(i) : g[i];
            }
        }
        if (auto gb = detail::grad_sink(b); !gb.empty()) {
            for (std::size_t i = 0; i < count; ++i) {
                const Scalar contrib = Multiply ? g[i] * avals[i] : g[i];
                const std::size_t target = mode == Broadcast::same ? i : mode == Broadcast::scalar ? 0 : i % width;
                gb[target] += contrib;
            }
        }
    });
}

template <class Forward, class Derivative>
Tensor unary_op(const char* op, const Tensor& a, Forward f, Derivative df) {
    auto av = a.values();
    std::vector<Scalar> out(av.size());
    std::transform(av.begin(), av.end(), out.begin(), f);
    return detail::make_result(op, a.shape(), std::move(out), {a}, [a, df](std::span<const Scalar> g) {
        if (auto ga = detail::grad_sink(a); !ga.empty()) {
            auto x = a.values();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * df(x[i]);
            }
        }
    });
}

Scalar sigmoid(Scalar x) {
    return 1.0 / (1.0 + std::exp(-x));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op<false>("add", a, b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op<true>("mul", a, b);
}

Tensor scale(const Tensor& a, Scalar factor) {
    return unary_op(
        "scale", a, [factor](Scalar x) { return x * factor; }, [factor](Scalar) { return factor; });
}

Tensor silu(const Tensor& a) {
    return unary_op(
        "silu", a, [](Scalar x) { return x * sigmoid(x); },
        [](Scalar x) {
            const Scalar s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor square(const Tensor& a) {
    return unary_op(
        "square", a, [](Scalar x) { return x * x; }, [](Scalar x) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
    Scalar total = 0.0;
    for (Scalar v : a.values()) {
        total += v;
    }
    return detail::make_result("sum", {1}, {total}, {a}, [a](std::span<const Scalar> g) {
        if (auto ga = detail::grad_sink(a); !ga.empty()) {
            for (auto& v : ga) {
                v += g[0];
            }
        }
    });
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<Scalar>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    std::vector<Scalar> values(a.values().begin(), a.values().end());
    return detail::make_result("reshape", std::move(shape), std::move(values), {a}, [a](std::span<const Scalar> g) {
        if (auto ga = detail::grad_sink(a); !ga.empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_rank2("embedding", table);
    const std::size_t vocab = table.extent(0), width = table.extent(1);
    if (ids.empty()) {
        throw DimensionError("embedding: empty id list");
    }
    std::vector<std::int32_t> rows(ids.begin(), ids.end());
    std::vector<Scalar> out(rows.size() * width);
    auto tv = table.values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= vocab) {
            throw IndexError("embedding: id " + std::to_string(rows[r]) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    const std::size_t n = rows.size();
    return detail::make_result("embedding", {n, width}, std::move(out), {table},
                               [table, rows = std::move(rows), width](std::span<const Scalar> g) {
                                   if (auto gt = detail::grad_sink(table); !gt.empty()) {
                                       for (std::size_t r = 0; r < rows.size(); ++r) {
                                           Scalar* dst = gt.data() + static_cast<std::size_t>(rows[r]) * width;
                                           const Scalar* src = g.data() + r * width;
                                           for (std::size_t j = 0; j < width; ++j) {
                                               dst[j] += src[j];
                                           }
                                       }
                                   }
                               });
}

namespace {

void check_targets(const Tensor& logits, std::span<const std::int32_t> targets, std::size_t& rows,
                   std::size_t& vocab) {
    if (logits.rank() < 2) {
        throw DimensionError("softmax_xent: logits must have a vocabulary axis");
    }
    vocab = logits.shape().back();
    rows = logits.numel() / vocab;
    if (targets.size() != rows) {
        throw DimensionError("softmax_xent: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(rows) + " rows");
    }
    for (auto t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw IndexError("softmax_xent: target " + std::to_string(t) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
    }
}

}  // namespace

Tensor softmax_xent(const Tensor& logits, std::span<const std::int32_t> targets) {
    std::size_t rows = 0, vocab = 0;
    check_targets(logits, targets, rows, vocab);
    auto x = logits.values();
    std::vector<Scalar> probs(x.size());
    Scalar total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* row = x.data() + r * vocab;
        Scalar* p = probs.data() + r * vocab;
        const Scalar peak = *std::max_element(row, row + vocab);
        Scalar denom = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            p[v] = std::exp(row[v] - peak);
            denom += p[v];
        }
        for (std::size_t v = 0; v < vocab; ++v) {
            p[v] /= denom;
        }
        total += std::log(denom) + peak - row[static_cast<std::size_t>(targets[r])];
    }
    const Scalar inv_rows = 1.0 / static_cast<Scalar>(rows);
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    return detail::make_result(
        "softmax_xent", {1}, {total * inv_rows}, {logits},
        [logits, probs = std::move(probs), tgt = std::move(tgt), rows, vocab, inv_rows](std::span<const Scalar> g) {
            if (auto gl = detail::grad_sink(logits); !gl.empty()) {
                const Scalar coef = g[0] * inv_rows;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t v = 0; v < vocab; ++v) {
                        const Scalar onehot = static_cast<std::size_t>(tgt[r]) == v ? 1.0 : 0.0;
                        gl[r * vocab + v] += coef * (probs[r * vocab + v] - onehot);
                    }
                }
            }
        });
}

std::vector<Scalar> row_nll(const Tensor& logits, std::span<const std::int32_t> targets) {
    std::size_t rows = 0, vocab = 0;
    check_targets(logits, targets, rows, vocab);
    auto x = logits.values();
    std::vector<Scalar> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* row = x.data() + r * vocab;
        const Scalar peak = *std::max_element(row, row + vocab);
        Scalar denom = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            denom += std::exp(row[v] - peak);
        }
        out[r] = std::log(denom) + peak - row[static_cast<std::size_t>(targets[r])];
    }
    return out;
}

// ---------------------------------------------------------------------------
// grad_check

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           const GradCheckOptions& options) {
    if (!(options.eps > 0.0)) {
        throw EvaluationError("grad_check: eps must be positive");
    }
    for (const auto& p : params) {
        for (Scalar v : p.values()) {
            if (!std::isfinite(v)) {
                throw EvaluationError("grad_check: non-finite parameter");
            }
        }
    }
    auto evaluate = [&]() {
        Scalar value = 0.0;
        try {
            NoGradGuard guard;
            value = loss_fn().item();
        } catch (const NonFiniteError& e) {
            throw EvaluationError(std::string("grad_check: ") + e.what());
        }
        if (!std::isfinite(value)) {
            throw EvaluationError("grad_check: non-finite loss");
        }
        return value;
    };

    for (auto& p : params) {
        p.zero_grad();
    }
    Tensor loss;
    try {
        loss = loss_fn();
    } catch (const NonFiniteError& e) {
        throw EvaluationError(std::string("grad_check: ") + e.what());
    }
    if (!std::isfinite(loss.item())) {
        throw EvaluationError("grad_check: non-finite loss");
    }
    loss.backward();

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<Scalar> analytic(p.numel(), 0.0);
        if (p.has_grad()) {
            std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        }
        const std::size_t n = p.numel();
        std::size_t stride = 1;
        if (options.max_coords_per_param != 0 && n > options.max_coords_per_param) {
            stride = (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
        }
        auto values = p.mutable_values();
        for (std::size_t idx = 0; idx < n; idx += stride) {
            const Scalar x = values[idx];
            const Scalar h = options.eps * std::max(1.0, std::abs(x));
            values[idx] = x + h;
            const Scalar plus = evaluate();
            values[idx] = x - h;
            const Scalar minus = evaluate();
            values[idx] = x;
            const Scalar numeric = (plus - minus) / (2.0 * h);
            const Scalar denom = std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
            const Scalar rel = std::abs(analytic[idx] - numeric) / denom;
            ++report.coordinates;
            if (rel > report.max_rel_err || report.coordinates == 1) {
                report.max_rel_err = rel;
                report.worst_param = pi;
                report.worst_index = idx;
                report.worst_analytic = analytic[idx];
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace wsdlab
