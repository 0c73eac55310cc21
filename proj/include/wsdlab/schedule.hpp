// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Five-phase Warmup-Stable-Decay plan: per-step LR multiplier, batch shape,
// context length, data mixture and optimizer identity. All queries are pure
// functions of (step, plan).

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace wsdlab {

enum class OptimizerId : std::uint8_t { adamw, muon };
const char* optimizer_name(OptimizerId id);
OptimizerId parse_optimizer(const std::string& name);

enum class PhaseId : std::uint8_t { warmup, stable1, stable2, decay, long_context };
inline constexpr std::size_t kPhaseCount = 5;
const char* phase_name(PhaseId id);
PhaseId parse_phase(const std::string& name);

enum class LrLawKind : std::uint8_t { linear_up, constant, exponential_decay, constant_at_decayed };
const char* law_name(LrLawKind kind);

struct LrLaw {
    double peak_lr = 1.0;
    std::int64_t warmup_steps = 0;
    double decay_final_ratio = 0.1;
    std::int64_t decay_start = 0;
    std::int64_t decay_steps = 0;
};

struct Phase {
    PhaseId id;
    std::int64_t start = 0;
    std::int64_t steps = 0;
    LrLawKind law = LrLawKind::constant;
    std::size_t batch_sequences = 0;
    std::size_t seq_len = 0;
    /// Long-context phase only: length used for the first `ramp_fraction` of
    /// the phase. Zero means no ramp.
    std::size_t ramp_seq_len = 0;
    double ramp_fraction = 0.0;
    std::string mixture;
    OptimizerId optimizer = OptimizerId::adamw;

    [[nodiscard]] std::int64_t end() const { return start + steps; }
    [[nodiscard]] std::uint64_t tokens_per_step() const {
        return static_cast<std::uint64_t>(batch_sequences) * seq_len;
    }
};

enum class OptimizerPolicy : std::uint8_t { switch_at_decay, adamw_only };

/// Compact description a PhasePlan is built from. Reference spans are scaled
/// by `shrink` (ceil); batch shapes are given per phase directly.
struct PlanSpec {
    std::array<std::int64_t, kPhaseCount> reference_steps{2000, 270000, 260000, 20000, 10000};
    double shrink = 1.0;
    std::array<std::size_t, kPhaseCount> batch_sequences{480, 480, 960, 960, 240};
    std::size_t seq_len = 3712;
    std::size_t long_seq_mid = 8192;
    std::size_t long_seq_final = 16384;
    double ramp_fraction = 0.3;
    double decay_final_ratio = 0.1;
    std::array<std::string, kPhaseCount> mixtures{"stable", "stable", "stable", "decay", "long_context"};
    OptimizerPolicy optimizer_policy = OptimizerPolicy::switch_at_decay;

    static PlanSpec full_scale();
    /// Byte-level CPU defaults: 128 -> 256 -> 512 context, 4 -> 8 sequences at
    /// the batch jump.
    static PlanSpec desk(double shrink);

    bool operator==(const PlanSpec&) const = default;
};

struct PhasePlan {
    std::vector<Phase> phases;
    LrLaw law;

    [[nodiscard]] std::int64_t total_steps() const;
    [[nodiscard]] std::int64_t decay_start() const;
    [[nodiscard]] const Phase& phase(PhaseId id) const;
    /// Throws ConfigError when the plan breaks a structural invariant.
    void validate() const;
};

PhasePlan build_plan(const PlanSpec& spec);

/// LR as a multiplier of the peak: warmup step/warmup_steps, stable 1,
/// decay r^((step - decay_start)/decay_steps), long context constant r.
double lr_at(std::int64_t step, const PhasePlan& plan);

struct PhaseInfo {
    PhaseId id;
    std::size_t batch_sequences;
    std::size_t seq_len;
    std::uint64_t tokens_per_step;
    std::string mixture;
    OptimizerId optimizer;
};

/// The active phase's nominal row.
PhaseInfo phase_at(std::int64_t step, const PhasePlan& plan);

/// Context length inside the long-context phase: the mid length for the
/// first ramp_fraction of the phase (rounded up), the final length after.
std::size_t context_ramp(std::int64_t step, const PhasePlan& plan);

/// Sequence length actually trained at `step` (context_ramp inside the
/// long-context phase, the phase length elsewhere).
std::size_t seq_len_at(std::int64_t step, const PhasePlan& plan);
std::uint64_t tokens_at(std::int64_t step, const PhasePlan& plan);

/// Σ phases span × nominal tokens/step.
std::uint64_t total_tokens(const PhasePlan& plan);

}  // namespace wsdlab
