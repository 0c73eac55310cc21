// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Maximal-update parameterization. Every weight is assigned to one group
// that fixes its init std and LR multiplier; the forward pass receives the
// attention-logit scale and the tied-head output multiplier.
//
//   group           init std               LR multiplier
//   embedding       init_std_base          1 (at peak_lr_embed)
//   hidden_matrix   init_std_base/sqrt(in) 1/m
//   norm_gain       ones                   1
//
// with m = d_model / base_width. Tied-head logits are multiplied by 1/m.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsdlab/model.hpp"

namespace wsdlab {

enum class Parameterization : std::uint8_t { mup, standard };
const char* parameterization_name(Parameterization p);
Parameterization parse_parameterization(const std::string& name);

struct MuPConfig {
    std::size_t base_width = 64;
    double peak_lr_hidden = 1.67e-3;
    double peak_lr_embed = 0.01;
    double init_std_base = 0.02;
    /// Divides the init std of wo and w_down by sqrt(2 * n_layers).
    bool residual_init_scaling = false;
    Parameterization parameterization = Parameterization::mup;

    [[nodiscard]] double width_mult(std::size_t d_model) const;
    void validate() const;

    bool operator==(const MuPConfig&) const = default;
};

enum class GroupKind : std::uint8_t { embedding, hidden_matrix, norm_gain, tied_head_readout };
const char* group_kind_name(GroupKind kind);

struct ParamGroup {
    std::string name;
    GroupKind kind = GroupKind::hidden_matrix;
    double lr_multiplier = 1.0;
    double init_std = 0.0;
    /// Only meaningful for the tied-head readout.
    double output_multiplier = 1.0;
};

/// 1/d_head.
double attention_logit_scale(std::size_t d_head);

/// Group assignment for one parameter name. Throws GroupingError for a name
/// the model does not define.
ParamGroup group_for(const std::string& name, const ModelConfig& model, const MuPConfig& mup);

/// The virtual readout group carrying the logit multiplier. It owns no
/// tensor: the head reads the embedding.
ParamGroup tied_head_group(const ModelConfig& model, const MuPConfig& mup);

ForwardScales forward_scales(const ModelConfig& model, const MuPConfig& mup);

struct ParameterizedModel {
    ModelConfig config;
    MuPConfig mup;
    Params params;
    /// Aligned with params.named().
    std::vector<ParamGroup> groups;
    ParamGroup readout;
    ForwardScales scales;

    [[nodiscard]] const ParamGroup& group(const std::string& name) const;
};

/// Allocates and initializes the model. Each tensor draws from its own
/// keyed stream (seed, name), so values do not depend on allocation order.
ParameterizedModel parameterize(const ModelConfig& model, const MuPConfig& mup, std::uint64_t seed);

/// schedule_lr is the hidden-group LR before multipliers (the peak hidden LR
/// times the schedule factor). Embeddings are rescaled to their own peak.
double effective_lr(const ParamGroup& group, double schedule_lr, const MuPConfig& mup);

// ---------------------------------------------------------------------------
// Coordinate check

struct CoordCheckOptions {
    std::vector<std::size_t> widths{64, 128, 256};
    std::size_t steps = 10;
    std::uint64_t seed = 0;
    Parameterization parameterization = Parameterization::mup;
    /// Base configuration; d_model and d_ff are rescaled per width
    /// (d_ff = d_model * ff_ratio), head counts stay fixed.
    ModelConfig base_model{};
    double ff_ratio = 2.5;
    MuPConfig mup{};
    /// Constant factor applied to both peak LRs during the check.
    double lr_scale = 1.0;
    std::size_t batch_sequences = 4;
    std::size_t seq_len = 64;
    double slope_bound = 0.2;
};

struct CoordCheckRow {
    std::size_t width;
    std::size_t step;
    std::string site;
    double rms;
};

struct SiteSlope {
    std::string site;
    double slope;
    bool within_bound;
};

struct CoordCheckResult {
    std::vector<CoordCheckRow> rows;
    /// Least-squares slope of log2(rms) against log2(width) at the final step.
    std::vector<SiteSlope> slopes;
    bool pass = false;
    /// Empty on PASS; otherwise names the failing sites or the divergence.
    std::string report;

    [[nodiscard]] std::string csv() const;
    [[nodiscard]] double slope(const std::string& site) const;
};

/// Trains each width for `steps` AdamW steps at constant peak LRs on the
/// same batches and records the RMS of the embedding output, every residual
/// block output and the logits.
CoordCheckResult coord_check(const CoordCheckOptions& options);

}  // namespace wsdlab
