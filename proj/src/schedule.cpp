// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/schedule.hpp"

#include <cmath>

#include "wsdlab/error.hpp"

namespace wsdlab {

namespace {

constexpr std::array<PhaseId, kPhaseCount> kOrder{PhaseId::warmup, PhaseId::stable1, PhaseId::stable2,
                                                  PhaseId::decay, PhaseId::long_context};

// ceil() that ignores binary representation noise in the product.
std::int64_t scaled_ceil(double value) {
    return static_cast<std::int64_t>(std::ceil(value - 1e-9 * std::max(1.0, std::abs(value))));
}

const Phase& phase_for(std::int64_t step, const PhasePlan& plan) {
    for (const auto& p : plan.phases) {
        if (step >= p.start && step < p.end()) {
            return p;
        }
    }
    throw RangeError("step " + std::to_string(step) + " outside the plan [0, " + std::to_string(plan.total_steps()) +
                     ")");
}

std::int64_t ramp_steps(const Phase& p) {
    return scaled_ceil(static_cast<double>(p.steps) * p.ramp_fraction);
}

}  // namespace

const char* optimizer_name(OptimizerId id) {
    return id == OptimizerId::adamw ? "adamw" : "muon";
}

OptimizerId parse_optimizer(const std::string& name) {
    if (name == "adamw") {
        return OptimizerId::adamw;
    }
    if (name == "muon") {
        return OptimizerId::muon;
    }
    throw ConfigError("unknown optimizer '" + name + "'");
}

const char* phase_name(PhaseId id) {
    switch (id) {
        case PhaseId::warmup: return "warmup";
        case PhaseId::stable1: return "stable1";
        case PhaseId::stable2: return "stable2";
        case PhaseId::decay: return "decay";
        case PhaseId::long_context: return "long_context";
    }
    return "?";
}

PhaseId parse_phase(const std::string& name) {
    for (auto id : kOrder) {
        if (name == phase_name(id)) {
            return id;
        }
    }
    throw ConfigError("unknown phase '" + name + "'");
}

const char* law_name(LrLawKind kind) {
    switch (kind) {
        case LrLawKind::linear_up: return "linear-up";
        case LrLawKind::constant: return "constant";
        case LrLawKind::exponential_decay: return "exponential-decay";
        case LrLawKind::constant_at_decayed: return "constant-at-decayed";
    }
    return "?";
}

PlanSpec PlanSpec::full_scale() {
    return PlanSpec{};
}

PlanSpec PlanSpec::desk(double shrink) {
    PlanSpec spec;
    spec.shrink = shrink;
    spec.batch_sequences = {4, 4, 8, 8, 2};
    spec.seq_len = 128;
    spec.long_seq_mid = 256;
    spec.long_seq_final = 512;
    return spec;
}

std::int64_t PhasePlan::total_steps() const {
    return phases.empty() ? 0 : phases.back().end();
}

std::int64_t PhasePlan::decay_start() const {
    return phase(PhaseId::decay).start;
}

const Phase& PhasePlan::phase(PhaseId id) const {
    for (const auto& p : phases) {
        if (p.id == id) {
            return p;
        }
    }
    throw ConfigError(std::string("plan has no ") + phase_name(id) + " phase");
}

void PhasePlan::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("phase plan: " + what); };
    if (phases.size() != kPhaseCount) {
        fail("expected five phases");
    }
    std::int64_t cursor = 0;
    int switches = 0;
    for (std::size_t i = 0; i < phases.size(); ++i) {
        const Phase& p = phases[i];
        if (p.id != kOrder[i]) {
            fail("phases out of order");
        }
        if (p.start != cursor || p.steps <= 0) {
            fail(std::string(phase_name(p.id)) + " span is not contiguous and non-empty");
        }
        if (p.batch_sequences == 0 || p.seq_len == 0) {
            fail(std::string(phase_name(p.id)) + " has an empty batch");
        }
        if (p.mixture.empty()) {
            fail(std::string(phase_name(p.id)) + " has no mixture");
        }
        if (i > 0 && p.optimizer != phases[i - 1].optimizer) {
            ++switches;
            if (p.id != PhaseId::decay) {
                fail("the optimizer may only change at the decay start");
            }
        }
        cursor = p.end();
    }
    if (switches > 1) {
        fail("more than one optimizer switch");
    }
    const Phase& lc = phase(PhaseId::long_context);
    if (lc.ramp_seq_len != 0 && !(lc.ramp_fraction > 0.0 && lc.ramp_fraction <= 1.0)) {
        fail("ramp fraction must lie in (0, 1]");
    }
    if (!(law.decay_final_ratio > 0.0 && law.decay_final_ratio <= 1.0)) {
        fail("decay_final_ratio must lie in (0, 1]");
    }
}

PhasePlan build_plan(const PlanSpec& spec) {
    if (!(spec.shrink > 0.0 && spec.shrink <= 1.0)) {
        throw ConfigError("phase plan: shrink must lie in (0, 1]");
    }
    PhasePlan plan;
    std::int64_t cursor = 0;
    for (std::size_t i = 0; i < kPhaseCount; ++i) {
        Phase p;
        p.id = kOrder[i];
        p.start = cursor;
        p.steps = scaled_ceil(static_cast<double>(spec.reference_steps[i]) * spec.shrink);
        p.batch_sequences = spec.batch_sequences[i];
        p.seq_len = spec.seq_len;
        p.mixture = spec.mixtures[i];
        const bool after_switch = p.id == PhaseId::decay || p.id == PhaseId::long_context;
        p.optimizer = spec.optimizer_policy == OptimizerPolicy::switch_at_decay && after_switch ? OptimizerId::muon
                                                                                               : OptimizerId::adamw;
        switch (p.id) {
            case PhaseId::warmup: p.law = LrLawKind::linear_up; break;
            case PhaseId::stable1:
            case PhaseId::stable2: p.law = LrLawKind::constant; break;
            case PhaseId::decay: p.law = LrLawKind::exponential_decay; break;
            case PhaseId::long_context:
                p.law = LrLawKind::constant_at_decayed;
                p.seq_len = spec.long_seq_final;
                p.ramp_seq_len = spec.long_seq_mid;
                p.ramp_fraction = spec.ramp_fraction;
                break;
        }
        cursor = p.end();
        plan.phases.push_back(std::move(p));
    }
    plan.law.peak_lr = 1.0;
    plan.law.warmup_steps = plan.phase(PhaseId::warmup).steps;
    plan.law.decay_final_ratio = spec.decay_final_ratio;
    plan.law.decay_start = plan.phase(PhaseId::decay).start;
    plan.law.decay_steps = plan.phase(PhaseId::decay).steps;
    plan.validate();
    return plan;
}

double lr_at(std::int64_t step, const PhasePlan& plan) {
    const Phase& p = phase_for(step, plan);
    const LrLaw& law = plan.law;
    switch (p.law) {
        case LrLawKind::linear_up:
            return law.peak_lr * static_cast<double>(step) / static_cast<double>(law.warmup_steps);
        case LrLawKind::constant: return law.peak_lr;
        case LrLawKind::exponential_decay:
            return law.peak_lr * std::pow(law.decay_final_ratio, static_cast<double>(step - law.decay_start) /
                                                                     static_cast<double>(law.decay_steps));
        case LrLawKind::constant_at_decayed: return law.peak_lr * law.decay_final_ratio;
    }
    return 0.0;
}

PhaseInfo phase_at(std::int64_t step, const PhasePlan& plan) {
    const Phase& p = phase_for(step, plan);
    return {p.id, p.batch_sequences, p.seq_len, p.tokens_per_step(), p.mixture, p.optimizer};
}

std::size_t context_ramp(std::int64_t step, const PhasePlan& plan) {
    const Phase& p = phase_for(step, plan);
    if (p.id != PhaseId::long_context) {
        throw RangeError("context_ramp: step " + std::to_string(step) + " is not in the long-context phase");
    }
    if (p.ramp_seq_len == 0) {
        return p.seq_len;
    }
    return step - p.start < ramp_steps(p) ? p.ramp_seq_len : p.seq_len;
}

std::size_t seq_len_at(std::int64_t step, const PhasePlan& plan) {
    const Phase& p = phase_for(step, plan);
    return p.id == PhaseId::long_context ? context_ramp(step, plan) : p.seq_len;
}

std::uint64_t tokens_at(std::int64_t step, const PhasePlan& plan) {
    return static_cast<std::uint64_t>(phase_for(step, plan).batch_sequences) * seq_len_at(step, plan);
}

std::uint64_t total_tokens(const PhasePlan& plan) {
    std::uint64_t total = 0;
    for (const auto& p : plan.phases) {
        total += static_cast<std::uint64_t>(p.steps) * p.tokens_per_step();
    }
    return total;
}

}  // namespace wsdlab
