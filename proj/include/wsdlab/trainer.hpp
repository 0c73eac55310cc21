// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end training over a PhasePlan. With an output directory the
// trainer writes:
//
//   manifest.json        config + plan table + optimizer switch records
//   metrics.jsonl        one record per logging interval
//   eval.jsonl           held-out evaluations at phase boundaries
//   checkpoints/*.ckpt   <phase>_start, latest, final

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "wsdlab/data.hpp"
#include "wsdlab/fp8.hpp"
#include "wsdlab/mup.hpp"
#include "wsdlab/optim.hpp"
#include "wsdlab/run_config.hpp"
#include "wsdlab/schedule.hpp"

namespace wsdlab {

struct StepStat {
    std::int64_t step = 0;
    PhaseId phase = PhaseId::warmup;
    OptimizerId optimizer = OptimizerId::adamw;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::uint64_t tokens_seen = 0;
    std::size_t batch_sequences = 0;
    std::size_t seq_len = 0;
    std::uint64_t data_hash = 0;
    std::uint64_t fp8_saturated_e4m3 = 0;
    std::uint64_t fp8_saturated_e5m2 = 0;
};

struct EvalRecord {
    std::int64_t step = 0;
    std::string label;
    double heldout_ppl = 0.0;
    /// Answer-token NLL on the long-gap recall domain at the final context.
    double long_recall_nll = 0.0;
    /// Same tokens, context cut to the pre-extension length.
    double long_recall_nll_windowed = 0.0;
};

/// Thrown when the loss or an update goes non-finite; checkpoints written
/// before the failing step are left in place.
class TrainingDiverged : public NonFiniteError {
public:
    using NonFiniteError::NonFiniteError;
};

Json to_json(const StepStat& s, bool with_fp8);
Json to_json(const EvalRecord& e);

class Trainer {
public:
    /// Validates the config and initializes weights. An empty `out_dir`
    /// keeps everything in memory.
    explicit Trainer(RunConfig config, std::filesystem::path out_dir = {});

    /// Restores weights, optimizer, FP8 scaling state and the step counter.
    /// The checkpoint's model shape must match this trainer's config.
    void resume(const std::filesystem::path& checkpoint);
    void resume(const Checkpoint& checkpoint);

    /// Trains until `stop_at` (exclusive; negative means the plan end).
    void run(std::int64_t stop_at = -1);

    [[nodiscard]] EvalRecord evaluate(const std::string& label);

    [[nodiscard]] Checkpoint checkpoint() const;
    void save_checkpoint(const std::filesystem::path& path) const;

    [[nodiscard]] const RunConfig& config() const { return config_; }
    [[nodiscard]] const PhasePlan& plan() const { return plan_; }
    [[nodiscard]] std::int64_t step() const { return step_; }
    [[nodiscard]] bool finished() const { return step_ >= plan_.total_steps(); }
    [[nodiscard]] OptimizerId optimizer() const { return muon_ ? OptimizerId::muon : OptimizerId::adamw; }
    [[nodiscard]] const std::vector<StepStat>& history() const { return history_; }
    [[nodiscard]] const std::vector<EvalRecord>& evals() const { return evals_; }
    [[nodiscard]] const std::vector<SwitchRecord>& switches() const { return switches_; }
    [[nodiscard]] const ParameterizedModel& model() const { return model_; }
    [[nodiscard]] ModelView view();
    [[nodiscard]] const std::filesystem::path& out_dir() const { return out_dir_; }

    static constexpr const char* kManifest = "manifest.json";
    static constexpr const char* kMetrics = "metrics.jsonl";
    static constexpr const char* kEvals = "eval.jsonl";

private:
    void train_step();
    void write_manifest() const;
    void open_streams(bool fresh);
    void boundary_actions();

    RunConfig config_;
    std::filesystem::path out_dir_;
    PhasePlan plan_;
    ParameterizedModel model_;
    RopeTable rope_;
    AdamWState adamw_;
    std::optional<MuonState> muon_;
    fp8::Context fp8_;
    std::vector<std::string> orthogonalized_;
    std::int64_t step_ = 0;
    std::uint64_t tokens_seen_ = 0;
    std::vector<StepStat> history_;
    std::vector<EvalRecord> evals_;
    std::vector<SwitchRecord> switches_;
    std::ofstream metrics_;
    std::ofstream eval_stream_;
    bool streams_open_ = false;
};

struct AblationBranch {
    std::string name;
    /// Shared prefix followed by this branch's decay and long-context steps.
    std::vector<StepStat> history;
    std::vector<EvalRecord> evals;
    std::vector<SwitchRecord> switches;
    double final_heldout_ppl = 0.0;
};

struct AblationReport {
    std::int64_t branch_step = 0;
    AblationBranch adamw_only;
    AblationBranch muon_switch;
    /// Branch losses agree bit-for-bit before the branch step.
    bool prefix_identical = false;
    /// Per-step data hashes agree over the whole run.
    bool streams_identical = false;
    /// First step at which the branch losses differ (-1 if never).
    std::int64_t first_divergent_step = -1;
    /// muon_switch minus adamw_only held-out perplexity at the end.
    double delta_ppl = 0.0;
};

Json to_json(const AblationReport& report);

/// Trains the shared prefix up to the decay start once, checkpoints it, and
/// resumes two branches from that checkpoint: AdamW throughout and the Muon
/// switch. Writes shared/, adamw_only/ and muon_switch/ under `out_dir`
/// when it is non-empty.
AblationReport ablate_optimizer(const RunConfig& config, const std::filesystem::path& out_dir = {});

}  // namespace wsdlab
