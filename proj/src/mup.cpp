// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/mup.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "wsdlab/checkpoint.hpp"
#include "wsdlab/data.hpp"
#include "wsdlab/error.hpp"
#include "wsdlab/optim.hpp"
#include "wsdlab/rng.hpp"

namespace wsdlab {

namespace {

constexpr std::array<const char*, 7> kLayerMatrices{"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"};
constexpr std::array<const char*, 2> kLayerGains{"attn_norm", "mlp_norm"};

template <std::size_t N>
bool contains(const std::array<const char*, N>& names, const std::string& s) {
    return std::any_of(names.begin(), names.end(), [&](const char* n) { return s == n; });
}

std::size_t fan_in(const std::string& leaf, const ModelConfig& model) {
    if (leaf == "wo") {
        return model.q_width();
    }
    if (leaf == "w_down") {
        return model.d_ff;
    }
    return model.d_model;
}

}  // namespace

const char* parameterization_name(Parameterization p) {
    return p == Parameterization::mup ? "mup" : "standard";
}

Parameterization parse_parameterization(const std::string& name) {
    if (name == "mup") {
        return Parameterization::mup;
    }
    if (name == "standard" || name == "sp") {
        return Parameterization::standard;
    }
    throw ConfigError("unknown parameterization '" + name + "'");
}

const char* group_kind_name(GroupKind kind) {
    switch (kind) {
        case GroupKind::embedding: return "embedding";
        case GroupKind::hidden_matrix: return "hidden_matrix";
        case GroupKind::norm_gain: return "norm_gain";
        case GroupKind::tied_head_readout: return "tied_head_readout";
    }
    return "?";
}

double MuPConfig::width_mult(std::size_t d_model) const {
    return static_cast<double>(d_model) / static_cast<double>(base_width);
}

void MuPConfig::validate() const {
    if (base_width == 0) {
        throw ConfigError("mup: base_width must be positive");
    }
    if (!(peak_lr_hidden >= 0.0) || !(peak_lr_embed >= 0.0) || !(init_std_base > 0.0)) {
        throw ConfigError("mup: learning rates must be non-negative and init_std_base positive");
    }
}

double attention_logit_scale(std::size_t d_head) {
    if (d_head == 0) {
        throw ConfigError("attention_logit_scale: d_head must be at least 1");
    }
    return 1.0 / static_cast<double>(d_head);
}

ParamGroup group_for(const std::string& name, const ModelConfig& model, const MuPConfig& mup) {
    const bool is_mup = mup.parameterization == Parameterization::mup;
    const double m = mup.width_mult(model.d_model);
    ParamGroup g;
    g.name = name;
    if (name == "embedding") {
        g.kind = GroupKind::embedding;
        g.init_std = mup.init_std_base;
        return g;
    }
    if (name == "final_norm") {
        g.kind = GroupKind::norm_gain;
        return g;
    }
    constexpr std::string_view prefix = "layers.";
    if (name.starts_with(prefix)) {
        const auto dot = name.find('.', prefix.size());
        if (dot != std::string::npos && dot > prefix.size()) {
            const std::string index = name.substr(prefix.size(), dot - prefix.size());
            const std::string leaf = name.substr(dot + 1);
            const bool numeric = std::all_of(index.begin(), index.end(), [](char c) { return c >= '0' && c <= '9'; });
            if (numeric && index.size() < 6 && std::stoul(index) < model.n_layers) {
                if (contains(kLayerGains, leaf)) {
                    g.kind = GroupKind::norm_gain;
                    return g;
                }
                if (contains(kLayerMatrices, leaf)) {
                    g.kind = GroupKind::hidden_matrix;
                    g.lr_multiplier = is_mup ? 1.0 / m : 1.0;
                    g.init_std = mup.init_std_base / std::sqrt(static_cast<double>(fan_in(leaf, model)));
                    if (mup.residual_init_scaling && (leaf == "wo" || leaf == "w_down")) {
                        g.init_std /= std::sqrt(2.0 * static_cast<double>(model.n_layers));
                    }
                    return g;
                }
            }
        }
    }
    throw GroupingError("no parameter group for '" + name + "'");
}

ParamGroup tied_head_group(const ModelConfig& model, const MuPConfig& mup) {
    ParamGroup g;
    g.name = "head";
    g.kind = GroupKind::tied_head_readout;
    g.output_multiplier =
        mup.parameterization == Parameterization::mup ? 1.0 / mup.width_mult(model.d_model) : 1.0;
    return g;
}

ForwardScales forward_scales(const ModelConfig& model, const MuPConfig& mup) {
    ForwardScales s;
    s.attention_logit_scale = mup.parameterization == Parameterization::mup
                                  ? attention_logit_scale(model.d_head())
                                  : 1.0 / std::sqrt(static_cast<double>(model.d_head()));
    s.output_multiplier = tied_head_group(model, mup).output_multiplier;
    return s;
}

const ParamGroup& ParameterizedModel::group(const std::string& name) const {
    for (const auto& g : groups) {
        if (g.name == name) {
            return g;
        }
    }
    throw GroupingError("no parameter group for '" + name + "'");
}

ParameterizedModel parameterize(const ModelConfig& model, const MuPConfig& mup, std::uint64_t seed) {
    model.validate();
    mup.validate();
    ParameterizedModel pm;
    pm.config = model;
    pm.mup = mup;
    pm.params = Params::allocate(model);
    for (auto& [name, tensor] : pm.params.named()) {
        ParamGroup g = group_for(name, model, mup);
        if (g.kind != GroupKind::norm_gain) {
            KeyedRng rng{seed, fnv1a(name)};
            for (double& v : tensor.mutable_values()) {
                v = g.init_std * rng.normal();
            }
        }
        pm.groups.push_back(std::move(g));
    }
    pm.readout = tied_head_group(model, mup);
    pm.scales = forward_scales(model, mup);
    return pm;
}

double effective_lr(const ParamGroup& group, double schedule_lr, const MuPConfig& mup) {
    if (!(schedule_lr >= 0.0)) {
        throw ConfigError("effective_lr: schedule LR must be non-negative");
    }
    double lr = schedule_lr * group.lr_multiplier;
    if (group.kind == GroupKind::embedding) {
        lr *= mup.peak_lr_embed / mup.peak_lr_hidden;
    }
    return lr;
}

// ---------------------------------------------------------------------------
// Coordinate check

std::string CoordCheckResult::csv() const {
    std::ostringstream out;
    out << "width,step,site,rms\n";
    for (const auto& r : rows) {
        out << r.width << ',' << r.step << ',' << r.site << ',' << format_double(r.rms) << '\n';
    }
    return out.str();
}

double CoordCheckResult::slope(const std::string& site) const {
    for (const auto& s : slopes) {
        if (s.site == site) {
            return s.slope;
        }
    }
    throw ConfigError("coord_check: no site '" + site + "'");
}

CoordCheckResult coord_check(const CoordCheckOptions& options) {
    if (options.widths.size() < 3) {
        throw ConfigError("coord_check: needs at least three widths");
    }
    for (std::size_t i = 1; i < options.widths.size(); ++i) {
        if (options.widths[i] != options.widths[i - 1] * 2) {
            throw ConfigError("coord_check: widths must double at each step");
        }
    }
    const Corpus corpus = Corpus::standard();
    CoordCheckResult result;
    // site -> (log2 width, log2 rms) at the final step
    std::map<std::string, std::vector<std::pair<double, double>>> finals;
    std::vector<std::string> site_order;

    for (std::size_t width : options.widths) {
        ModelConfig mc = options.base_model;
        mc.d_model = width;
        mc.d_ff = static_cast<std::size_t>(std::llround(static_cast<double>(width) * options.ff_ratio));
        mc.seq_len = options.seq_len;
        MuPConfig mu = options.mup;
        mu.parameterization = options.parameterization;
        ParameterizedModel pm = parameterize(mc, mu, options.seed);
        RopeTable rope(mc.d_head(), mc.rope_base);
        AdamWState opt;
        const auto named = pm.params.named();
        const double schedule_lr = mu.peak_lr_hidden * options.lr_scale;
        try {
            for (std::size_t step = 0;; ++step) {
                const Batch batch = make_batch(corpus, "stable", Stream::train, options.seed, step,
                                               options.batch_sequences, options.seq_len);
                ActivationTrace trace;
                ForwardOptions fo;
                fo.trace = &trace;
                const Tensor logits = forward(pm.params, mc, pm.scales, rope, batch.inputs, fo);
                for (const auto& [site, rms] : trace.sites) {
                    result.rows.push_back({width, step, site, rms});
                    if (step == options.steps) {
                        if (!finals.contains(site)) {
                            site_order.push_back(site);
                        }
                        finals[site].emplace_back(std::log2(static_cast<double>(width)), std::log2(rms));
                    }
                }
                if (step == options.steps) {
                    break;
                }
                const Tensor loss = softmax_xent(logits, batch.targets);
                loss.backward();
                std::vector<ParamRef> refs;
                for (std::size_t i = 0; i < named.size(); ++i) {
                    refs.push_back({named[i].name, named[i].tensor, effective_lr(pm.groups[i], schedule_lr, mu),
                                    named[i].tensor.rank() == 2, false});
                }
                adamw_step(opt, refs);
                pm.params.zero_grad();
            }
        } catch (const NonFiniteError& e) {
            result.pass = false;
            result.report = "width " + std::to_string(width) + " diverged: " + e.what();
            return result;
        }
    }

    result.pass = true;
    std::ostringstream report;
    for (const auto& site : site_order) {
        const auto& pts = finals[site];
        double mx = 0.0, my = 0.0;
        for (auto [x, y] : pts) {
            mx += x;
            my += y;
        }
        mx /= static_cast<double>(pts.size());
        my /= static_cast<double>(pts.size());
        double sxy = 0.0, sxx = 0.0;
        for (auto [x, y] : pts) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
        const double slope = sxy / sxx;
        const bool ok = std::abs(slope) <= options.slope_bound;
        result.slopes.push_back({site, slope, ok});
        if (!ok) {
            result.pass = false;
            report << site << " slope " << slope << "; ";
        }
    }
    result.report = report.str();
    return result;
}

}  // namespace wsdlab
