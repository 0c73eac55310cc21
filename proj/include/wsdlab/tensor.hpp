// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a recorded compute graph for reverse-mode
// differentiation. Every op accumulates each output element sequentially
// over its contraction axis, so replaying a forward pass on identical inputs
// is bit-identical.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wsdlab/error.hpp"

namespace wsdlab {

using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

/// Reads the output gradient and accumulates into the recorded inputs.
using BackwardFn = std::function<void(std::span<const Scalar> grad_out)>;

struct TensorImpl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until something flows into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<Tensor> inputs;
    BackwardFn backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    /// Zero-filled tensor.
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

    static Tensor scalar(Scalar value, bool requires_grad = false);

    [[nodiscard]] bool defined() const { return impl_ != nullptr; }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::size_t rank() const { return shape().size(); }
    [[nodiscard]] std::size_t numel() const;
    [[nodiscard]] std::size_t extent(std::size_t axis) const;

    [[nodiscard]] std::span<const Scalar> values() const;
    /// Direct write access for initialisers and optimizers. Must not be used
    /// on a tensor whose graph is still pending a backward pass.
    [[nodiscard]] std::span<Scalar> mutable_values();
    [[nodiscard]] Scalar item() const;

    [[nodiscard]] bool requires_grad() const;
    void set_requires_grad(bool flag);
    [[nodiscard]] bool has_grad() const;
    /// Empty span when no gradient has been accumulated.
    [[nodiscard]] std::span<const Scalar> grad() const;
    /// Allocates a zero gradient on first use.
    [[nodiscard]] std::span<Scalar> mutable_grad();
    void zero_grad();

    /// Reverse-mode sweep from a single-element tensor. Intermediate graph
    /// nodes are released afterwards; leaf gradients accumulate.
    void backward() const;

    /// Same values, new leaf without history.
    [[nodiscard]] Tensor detach() const;
    [[nodiscard]] bool is_leaf() const;
    [[nodiscard]] const char* op_name() const;
    [[nodiscard]] bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

    [[nodiscard]] detail::TensorImpl* impl() const { return impl_.get(); }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

bool grad_enabled();

/// Builds an op result. Throws NonFiniteError when `values` contains a
/// non-finite entry; records the graph only when grad mode is on and some
/// input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<Scalar> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Gradient buffer of `t`, or an empty span when `t` takes no gradient.
std::span<Scalar> grad_sink(const Tensor& t);

// Plain kernels. Each output element accumulates over the contraction index
// in ascending order.
// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);
// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c);

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

/// C[m,n] = A[m,k] · B[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Y[n,out] = X[n,in] · W[out,in]^T, the projection layout used by the model.
Tensor linear(const Tensor& x, const Tensor& weight);

/// `b` may match `a`, hold a single element, or match the trailing extent of
/// `a` (row broadcast). Nothing else broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor silu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Gathers rows of `table[vocab, d]`; result is [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Mean next-token negative log-likelihood. `logits` is [..., vocab] with
/// one target per leading row.
Tensor softmax_xent(const Tensor& logits, std::span<const std::int32_t> targets);

/// Per-row NLL without graph recording.
std::vector<Scalar> row_nll(const Tensor& logits, std::span<const std::int32_t> targets);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
};

struct GradCheckOptions {
    /// Relative step: h = eps * max(1, |x|).
    double eps = 1e-4;
    /// When non-zero, check at most this many evenly strided coordinates per
    /// parameter tensor.
    std::size_t max_coords_per_param = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// over every coordinate of `params`. The relative error denominator is
/// max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace wsdlab
