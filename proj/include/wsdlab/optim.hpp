// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW, Muon and the AdamW -> Muon switch at the decay boundary.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wsdlab/checkpoint.hpp"
#include "wsdlab/schedule.hpp"
#include "wsdlab/tensor.hpp"

namespace wsdlab {

/// One parameter as seen by an optimizer step. Gradients are read from the
/// tensor itself.
struct ParamRef {
    std::string name;
    Tensor param;
    /// Effective LR (schedule x group multiplier).
    double lr = 0.0;
    bool weight_decay = false;
    /// Muon candidates; ignored by AdamW.
    bool orthogonalize = false;
};

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;

    bool operator==(const AdamWConfig&) const = default;
};

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamWState {
    AdamWConfig config;
    std::map<std::string, Moments> moments;
    std::int64_t t = 0;
};

/// Decoupled decay p <- p(1 - lr*wd) on flagged tensors, then the
/// bias-corrected Adam update. Throws NonFiniteError (before touching any
/// parameter) when a gradient holds a non-finite value.
void adamw_step(AdamWState& state, std::span<const ParamRef> params);

// ---------------------------------------------------------------------------
// Newton-Schulz

/// Per-iteration coefficients (a, b, c) of X <- aX + (bA + cA^2)X with
/// A = XX^T. Iterations past the end of the list reuse the last entry.
struct NsCoefficients {
    std::vector<std::array<double, 3>> schedule;

    /// (3.4445, -4.7750, 2.0315) at every iteration.
    static NsCoefficients reference_quintic();
    /// Five iterations fitted by minimax on singular values in [0.005, 1]
    /// after Frobenius normalization; lands within 4e-4 of one.
    static NsCoefficients minimax5();

    bool operator==(const NsCoefficients&) const = default;
};

struct NsResult {
    std::vector<double> values;  // rows x cols, row-major
    /// Set when the input was all zeros; `values` is zero.
    bool zero_input = false;
};

/// Approximate polar factor U V^T of G[rows, cols]. G is normalized by
/// ||G||_F + 1e-7 and iterated on its wide orientation.
NsResult newton_schulz_orthogonalize(std::span<const double> g, std::size_t rows, std::size_t cols,
                                     std::size_t iters = 5,
                                     const NsCoefficients& coefficients = NsCoefficients::minimax5());

// ---------------------------------------------------------------------------
// Muon

struct MuonConfig {
    double momentum = 0.95;
    std::size_t ns_iters = 5;
    NsCoefficients coefficients = NsCoefficients::minimax5();
    double weight_decay = 0.1;

    bool operator==(const MuonConfig&) const = default;
};

struct MuonState {
    MuonConfig config;
    std::map<std::string, std::vector<double>> momentum;
    /// Non-orthogonalized tensors keep stepping with AdamW.
    AdamWState fallback;
    std::uint64_t zero_updates = 0;
};

/// B <- beta B + g; p <- p(1 - lr*wd) - lr * NS(B) * sqrt(max(1, rows/cols))
/// for tensors flagged `orthogonalize` (rank 2 required), embedded AdamW for
/// the rest.
void muon_step(MuonState& state, std::span<const ParamRef> params);

struct SwitchRecord {
    std::int64_t switch_step = 0;
    OptimizerId before = OptimizerId::adamw;
    OptimizerId after = OptimizerId::muon;
    std::string carryover = "muon-momentum-zero;adamw-moments-kept";
};

/// Builds the Muon state at `step`. Momentum for every name in
/// `orthogonalized` starts at zero; AdamW moments of all other tensors are
/// carried over unchanged, as is the step counter. Throws ScheduleError when
/// `step` is not the plan's decay start.
MuonState switch_optimizer(const AdamWState& adamw, const PhasePlan& plan, std::int64_t step,
                           const std::vector<std::string>& orthogonalized, const MuonConfig& config,
                           SwitchRecord* record = nullptr);

// ---------------------------------------------------------------------------
// Gradient clipping

/// Global L2 norm of all gradients. Missing gradients count as zero.
double global_grad_norm(std::span<const Tensor> params);

/// Rescales every gradient by threshold/norm when norm > threshold (a
/// non-positive threshold disables clipping). Returns the pre-clip norm;
/// throws NonFiniteError on a non-finite norm.
double clip_grad_norm(std::span<Tensor> params, double threshold);

// ---------------------------------------------------------------------------
// Serialization. Arrays are stored under "<optimizer>.<kind>.<param>".

void save_optimizer(Checkpoint& ckpt, const AdamWState& state);
void save_optimizer(Checkpoint& ckpt, const MuonState& state);
AdamWState load_adamw(const Checkpoint& ckpt, const AdamWConfig& config);
MuonState load_muon(const Checkpoint& ckpt, const MuonConfig& muon, const AdamWConfig& adamw);

}  // namespace wsdlab
