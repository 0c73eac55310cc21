// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Complete description of one training run. Serialized as JSON into the run
// manifest before step 0; loading a manifest back yields the same config.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsdlab/data.hpp"
#include "wsdlab/model.hpp"
#include "wsdlab/mup.hpp"
#include "wsdlab/optim.hpp"
#include "wsdlab/schedule.hpp"

namespace wsdlab {

using Json = nlohmann::ordered_json;

struct Fp8Config {
    bool enabled = false;
    std::size_t history_length = 128;

    bool operator==(const Fp8Config&) const = default;
};

struct EvalConfig {
    bool enabled = true;
    /// Held-out pretraining perplexity: blocks x batch sequences at the
    /// stable context length.
    std::string heldout_mixture = "stable";
    std::size_t heldout_blocks = 4;
    std::size_t heldout_batch = 4;
    /// Long-gap recall, evaluated at the final long-context length and with
    /// a window equal to the pre-extension context.
    std::string long_domain = "sft_recall_long";
    std::size_t long_blocks = 4;
    std::size_t long_batch = 2;

    bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
    ModelConfig model;
    MuPConfig mup;
    PlanSpec plan = PlanSpec::desk(0.0054);
    AdamWConfig adamw;
    MuonConfig muon;
    /// Layer matrices Muon orthogonalizes after the switch.
    std::vector<std::string> muon_targets{"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"};
    double clip = 1.0;
    Fp8Config fp8;
    std::uint64_t init_seed = 1;
    std::uint64_t data_seed = 2;
    std::size_t log_every = 10;
    /// Rolling latest.ckpt interval in steps; 0 keeps only phase boundaries.
    std::int64_t checkpoint_every = 500;
    EvalConfig eval;
    Corpus corpus = Corpus::standard();

    /// Width-64 byte-level run of about 3k steps.
    static RunConfig desk();

    /// Throws ConfigError on the first violated constraint.
    void validate() const;

    bool operator==(const RunConfig&) const;
};

Json to_json(const RunConfig& config);
/// Accepts either a bare config or a run manifest (reads its "config").
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

Json to_json(const PhasePlan& plan);
Json to_json(const SwitchRecord& record);

}  // namespace wsdlab
