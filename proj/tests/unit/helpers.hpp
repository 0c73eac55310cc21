// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "wsdlab/rng.hpp"
#include "wsdlab/run_config.hpp"
#include "wsdlab/tensor.hpp"

namespace wsdlab::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double std = 1.0, bool requires_grad = true) {
    KeyedRng rng{seed, 0x7E57};
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = std * rng.normal();
    }
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double rms(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s / static_cast<double>(v.size()));
}

inline Eigen::MatrixXd to_eigen(std::span<const double> v, std::size_t rows, std::size_t cols) {
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i * cols + j];
        }
    }
    return m;
}

/// U V^T from a full-pivot Jacobi SVD.
inline Eigen::MatrixXd polar_factor(const Eigen::MatrixXd& g) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU() * svd.matrixV().transpose();
}

/// Width-32 model on a ~110-step plan with 32-token context.
inline RunConfig tiny_run_config() {
    RunConfig c;
    c.model.d_model = 32;
    c.model.d_ff = 80;
    c.model.n_layers = 2;
    c.model.n_q_heads = 4;
    c.model.n_kv_heads = 2;
    c.model.seq_len = 32;
    c.model.max_positions = 128;
    c.mup.base_width = 32;
    c.plan = PlanSpec::desk(0.0002);
    c.plan.batch_sequences = {2, 2, 4, 4, 1};
    c.plan.seq_len = 32;
    c.plan.long_seq_mid = 64;
    c.plan.long_seq_final = 128;
    c.log_every = 5;
    c.checkpoint_every = 0;
    c.eval.heldout_blocks = 1;
    c.eval.heldout_batch = 2;
    c.eval.long_blocks = 1;
    c.eval.long_batch = 1;
    return c;
}

}  // namespace wsdlab::testing
