// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "wsdlab/error.hpp"

namespace wsdlab {

namespace {

// Reads an object field by field and rejects keys nobody asked for.
class Reader {
public:
    Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw ConfigError(where_ + ": expected an object");
        }
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const Json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.contains(it.key())) {
                throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

Json model_json(const ModelConfig& m) {
    return Json{{"d_model", m.d_model},       {"d_ff", m.d_ff},
                {"n_layers", m.n_layers},     {"n_q_heads", m.n_q_heads},
                {"n_kv_heads", m.n_kv_heads}, {"seq_len", m.seq_len},
                {"max_positions", m.max_positions}, {"rope_base", m.rope_base},
                {"vocab_size", m.vocab_size}, {"norm_eps", m.norm_eps}};
}

ModelConfig model_from(const Json& j) {
    ModelConfig m;
    Reader r(j, "model");
    r.get("d_model", m.d_model);
    r.get("d_ff", m.d_ff);
    r.get("n_layers", m.n_layers);
    r.get("n_q_heads", m.n_q_heads);
    r.get("n_kv_heads", m.n_kv_heads);
    r.get("seq_len", m.seq_len);
    r.get("max_positions", m.max_positions);
    r.get("rope_base", m.rope_base);
    r.get("vocab_size", m.vocab_size);
    r.get("norm_eps", m.norm_eps);
    r.finish();
    return m;
}

Json mup_json(const MuPConfig& m) {
    return Json{{"parameterization", parameterization_name(m.parameterization)},
                {"base_width", m.base_width},
                {"peak_lr_hidden", m.peak_lr_hidden},
                {"peak_lr_embed", m.peak_lr_embed},
                {"init_std_base", m.init_std_base},
                {"residual_init_scaling", m.residual_init_scaling}};
}

MuPConfig mup_from(const Json& j) {
    MuPConfig m;
    Reader r(j, "mup");
    std::string p = parameterization_name(m.parameterization);
    r.get("parameterization", p);
    m.parameterization = parse_parameterization(p);
    r.get("base_width", m.base_width);
    r.get("peak_lr_hidden", m.peak_lr_hidden);
    r.get("peak_lr_embed", m.peak_lr_embed);
    r.get("init_std_base", m.init_std_base);
    r.get("residual_init_scaling", m.residual_init_scaling);
    r.finish();
    return m;
}

Json plan_spec_json(const PlanSpec& p) {
    return Json{{"reference_steps", p.reference_steps},
                {"shrink", p.shrink},
                {"batch_sequences", p.batch_sequences},
                {"seq_len", p.seq_len},
                {"long_seq_mid", p.long_seq_mid},
                {"long_seq_final", p.long_seq_final},
                {"ramp_fraction", p.ramp_fraction},
                {"decay_final_ratio", p.decay_final_ratio},
                {"mixtures", p.mixtures},
                {"optimizer_policy", p.optimizer_policy == OptimizerPolicy::switch_at_decay ? "switch_at_decay"
                                                                                             : "adamw_only"}};
}

PlanSpec plan_spec_from(const Json& j) {
    PlanSpec p = PlanSpec::desk(0.0054);
    Reader r(j, "plan");
    std::string preset;
    r.get("preset", preset);
    if (preset == "full") {
        p = PlanSpec::full_scale();
    } else if (!preset.empty() && preset != "desk") {
        throw ConfigError("plan.preset: expected 'full' or 'desk'");
    }
    r.get("reference_steps", p.reference_steps);
    r.get("shrink", p.shrink);
    r.get("batch_sequences", p.batch_sequences);
    r.get("seq_len", p.seq_len);
    r.get("long_seq_mid", p.long_seq_mid);
    r.get("long_seq_final", p.long_seq_final);
    r.get("ramp_fraction", p.ramp_fraction);
    r.get("decay_final_ratio", p.decay_final_ratio);
    r.get("mixtures", p.mixtures);
    std::string policy = "switch_at_decay";
    r.get("optimizer_policy", policy);
    if (policy == "switch_at_decay") {
        p.optimizer_policy = OptimizerPolicy::switch_at_decay;
    } else if (policy == "adamw_only") {
        p.optimizer_policy = OptimizerPolicy::adamw_only;
    } else {
        throw ConfigError("plan.optimizer_policy: expected 'switch_at_decay' or 'adamw_only'");
    }
    r.finish();
    return p;
}

Json adamw_json(const AdamWConfig& a) {
    return Json{{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

AdamWConfig adamw_from(const Json& j) {
    AdamWConfig a;
    Reader r(j, "adamw");
    r.get("beta1", a.beta1);
    r.get("beta2", a.beta2);
    r.get("eps", a.eps);
    r.get("weight_decay", a.weight_decay);
    r.finish();
    return a;
}

Json muon_json(const MuonConfig& m, const std::vector<std::string>& targets) {
    return Json{{"momentum", m.momentum},
                {"ns_iters", m.ns_iters},
                {"ns_coefficients", m.coefficients.schedule},
                {"weight_decay", m.weight_decay},
                {"targets", targets}};
}

void muon_from(const Json& j, MuonConfig& m, std::vector<std::string>& targets) {
    Reader r(j, "muon");
    r.get("momentum", m.momentum);
    r.get("ns_iters", m.ns_iters);
    r.get("weight_decay", m.weight_decay);
    r.get("targets", targets);
    if (const Json* c = r.child("ns_coefficients")) {
        if (c->is_string()) {
            const auto name = c->get<std::string>();
            if (name == "minimax5") {
                m.coefficients = NsCoefficients::minimax5();
            } else if (name == "reference_quintic") {
                m.coefficients = NsCoefficients::reference_quintic();
            } else {
                throw ConfigError("muon.ns_coefficients: unknown preset '" + name + "'");
            }
        } else {
            try {
                m.coefficients.schedule = c->get<std::vector<std::array<double, 3>>>();
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("muon.ns_coefficients: ") + e.what());
            }
        }
    }
    r.finish();
}

GeneratorKind parse_generator(const std::string& s) {
    for (auto k : {GeneratorKind::uniform_bytes, GeneratorKind::arithmetic, GeneratorKind::copy,
                   GeneratorKind::kv_recall}) {
        if (s == generator_name(k)) {
            return k;
        }
    }
    throw ConfigError("corpus: unknown generator '" + s + "'");
}

Json corpus_json(const Corpus& c) {
    Json domains = Json::array();
    for (const auto& d : c.domains) {
        domains.push_back(Json{{"id", d.id},
                               {"kind", generator_name(d.kind)},
                               {"quality", quality_name(d.quality)},
                               {"alphabet_lo", d.alphabet_lo},
                               {"alphabet_size", d.alphabet_size},
                               {"min_len", d.min_len},
                               {"max_len", d.max_len},
                               {"min_gap", d.min_gap},
                               {"pairs", d.pairs},
                               {"max_operand", d.max_operand},
                               {"subtract", d.subtract}});
    }
    Json mixtures = Json::object();
    for (const auto& [name, m] : c.mixtures) {
        Json w = Json::object();
        for (const auto& [id, weight] : m.weights) {
            w[id] = weight;
        }
        mixtures[name] = w;
    }
    return Json{{"domains", domains}, {"mixtures", mixtures}};
}

Corpus corpus_from(const Json& j) {
    Corpus c;
    Reader r(j, "corpus");
    const Json* domains = r.child("domains");
    const Json* mixtures = r.child("mixtures");
    r.finish();
    if (!domains || !domains->is_array() || !mixtures || !mixtures->is_object()) {
        throw ConfigError("corpus: needs a 'domains' array and a 'mixtures' object");
    }
    for (const auto& dj : *domains) {
        Domain d;
        Reader dr(dj, "corpus.domains");
        std::string kind = generator_name(d.kind), quality = quality_name(d.quality);
        dr.get("id", d.id);
        dr.get("kind", kind);
        dr.get("quality", quality);
        dr.get("alphabet_lo", d.alphabet_lo);
        dr.get("alphabet_size", d.alphabet_size);
        dr.get("min_len", d.min_len);
        dr.get("max_len", d.max_len);
        dr.get("min_gap", d.min_gap);
        dr.get("pairs", d.pairs);
        dr.get("max_operand", d.max_operand);
        dr.get("subtract", d.subtract);
        dr.finish();
        d.kind = parse_generator(kind);
        if (quality != "pretrain" && quality != "sft") {
            throw ConfigError("corpus: unknown quality '" + quality + "'");
        }
        d.quality = quality == "sft" ? Quality::sft : Quality::pretrain;
        c.domains.push_back(std::move(d));
    }
    for (auto it = mixtures->begin(); it != mixtures->end(); ++it) {
        Mixture m;
        m.name = it.key();
        if (!it->is_object()) {
            throw ConfigError("corpus.mixtures." + it.key() + ": expected an object");
        }
        for (auto w = it->begin(); w != it->end(); ++w) {
            if (!w->is_number()) {
                throw ConfigError("corpus.mixtures." + it.key() + "." + w.key() + ": expected a number");
            }
            m.weights.emplace_back(w.key(), w->get<double>());
        }
        c.mixtures[m.name] = std::move(m);
    }
    return c;
}

}  // namespace

RunConfig RunConfig::desk() {
    return RunConfig{};
}

void RunConfig::validate() const {
    model.validate();
    mup.validate();
    corpus.validate();
    if (model.vocab_size != kByteVocab) {
        throw ConfigError("model.vocab_size must be " + std::to_string(kByteVocab) + " for the byte tokenizer");
    }
    if (mup.parameterization == Parameterization::mup && model.d_model % mup.base_width != 0 &&
        mup.base_width % model.d_model != 0) {
        throw ConfigError("mup.base_width must divide d_model (or be a multiple of it)");
    }
    const PhasePlan p = build_plan(plan);
    if (model.seq_len != plan.seq_len) {
        throw ConfigError("model.seq_len must equal plan.seq_len");
    }
    for (const auto& ph : p.phases) {
        (void)corpus.mixture(ph.mixture);
        if (std::max(ph.seq_len, ph.ramp_seq_len) > model.max_positions) {
            throw ConfigError(std::string("phase ") + phase_name(ph.id) + " is longer than model.max_positions");
        }
    }
    static const std::vector<std::string> leaves{"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"};
    for (const auto& t : muon_targets) {
        if (std::find(leaves.begin(), leaves.end(), t) == leaves.end()) {
            throw ConfigError("muon.targets: '" + t + "' is not a layer matrix");
        }
    }
    if (muon.ns_iters == 0 || muon.coefficients.schedule.empty()) {
        throw ConfigError("muon: needs at least one Newton-Schulz iteration and coefficient row");
    }
    if (!(muon.momentum >= 0.0 && muon.momentum < 1.0)) {
        throw ConfigError("muon.momentum must lie in [0, 1)");
    }
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0 && adamw.eps > 0.0)) {
        throw ConfigError("adamw: betas must lie in [0, 1) and eps be positive");
    }
    if (!(clip >= 0.0)) {
        throw ConfigError("clip must be non-negative");
    }
    if (log_every == 0) {
        throw ConfigError("log_every must be positive");
    }
    if (checkpoint_every < 0) {
        throw ConfigError("checkpoint_every must be non-negative");
    }
    if (fp8.enabled && fp8.history_length == 0) {
        throw ConfigError("fp8.history_length must be positive");
    }
    if (eval.enabled) {
        (void)corpus.mixture(eval.heldout_mixture);
        (void)corpus.domain(eval.long_domain);
        if (eval.heldout_blocks == 0 || eval.heldout_batch == 0 || eval.long_blocks == 0 || eval.long_batch == 0) {
            throw ConfigError("eval: block and batch counts must be positive");
        }
        if (plan.long_seq_final % plan.seq_len != 0) {
            throw ConfigError("eval: the long-context length must be a multiple of the stable length");
        }
    }
}

bool RunConfig::operator==(const RunConfig& other) const {
    return to_json(*this) == to_json(other);
}

Json to_json(const RunConfig& c) {
    return Json{{"model", model_json(c.model)},
                {"mup", mup_json(c.mup)},
                {"plan", plan_spec_json(c.plan)},
                {"adamw", adamw_json(c.adamw)},
                {"muon", muon_json(c.muon, c.muon_targets)},
                {"clip", c.clip},
                {"fp8", Json{{"enabled", c.fp8.enabled}, {"history_length", c.fp8.history_length}}},
                {"seeds", Json{{"init", c.init_seed}, {"data", c.data_seed}}},
                {"log_every", c.log_every},
                {"checkpoint_every", c.checkpoint_every},
                {"eval", Json{{"enabled", c.eval.enabled},
                              {"heldout_mixture", c.eval.heldout_mixture},
                              {"heldout_blocks", c.eval.heldout_blocks},
                              {"heldout_batch", c.eval.heldout_batch},
                              {"long_domain", c.eval.long_domain},
                              {"long_blocks", c.eval.long_blocks},
                              {"long_batch", c.eval.long_batch}}},
                {"corpus", corpus_json(c.corpus)}};
}

RunConfig run_config_from_json(const Json& root) {
    const Json& j = root.contains("config") && root.contains("manifest_version") ? root.at("config") : root;
    RunConfig c;
    Reader r(j, "config");
    if (const Json* m = r.child("model")) {
        c.model = model_from(*m);
    }
    if (const Json* m = r.child("mup")) {
        c.mup = mup_from(*m);
    }
    if (const Json* p = r.child("plan")) {
        c.plan = plan_spec_from(*p);
    }
    if (const Json* a = r.child("adamw")) {
        c.adamw = adamw_from(*a);
    }
    if (const Json* m = r.child("muon")) {
        muon_from(*m, c.muon, c.muon_targets);
    }
    r.get("clip", c.clip);
    if (const Json* f = r.child("fp8")) {
        Reader fr(*f, "fp8");
        fr.get("enabled", c.fp8.enabled);
        fr.get("history_length", c.fp8.history_length);
        fr.finish();
    }
    if (const Json* s = r.child("seeds")) {
        Reader sr(*s, "seeds");
        sr.get("init", c.init_seed);
        sr.get("data", c.data_seed);
        sr.finish();
    }
    r.get("log_every", c.log_every);
    r.get("checkpoint_every", c.checkpoint_every);
    if (const Json* e = r.child("eval")) {
        Reader er(*e, "eval");
        er.get("enabled", c.eval.enabled);
        er.get("heldout_mixture", c.eval.heldout_mixture);
        er.get("heldout_blocks", c.eval.heldout_blocks);
        er.get("heldout_batch", c.eval.heldout_batch);
        er.get("long_domain", c.eval.long_domain);
        er.get("long_blocks", c.eval.long_blocks);
        er.get("long_batch", c.eval.long_batch);
        er.finish();
    }
    if (const Json* k = r.child("corpus")) {
        c.corpus = corpus_from(*k);
    }
    r.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

Json to_json(const PhasePlan& plan) {
    Json phases = Json::array();
    for (const auto& p : plan.phases) {
        phases.push_back(Json{{"phase", phase_name(p.id)},
                              {"start", p.start},
                              {"steps", p.steps},
                              {"law", law_name(p.law)},
                              {"batch_sequences", p.batch_sequences},
                              {"seq_len", p.seq_len},
                              {"ramp_seq_len", p.ramp_seq_len},
                              {"ramp_fraction", p.ramp_fraction},
                              {"tokens_per_step", p.tokens_per_step()},
                              {"mixture", p.mixture},
                              {"optimizer", optimizer_name(p.optimizer)}});
    }
    return Json{{"phases", phases}, {"total_steps", plan.total_steps()}, {"total_tokens", total_tokens(plan)}};
}

Json to_json(const SwitchRecord& r) {
    return Json{{"switch_step", r.switch_step},
                {"before", optimizer_name(r.before)},
                {"after", optimizer_name(r.after)},
                {"carryover", r.carryover}};
}

}  // namespace wsdlab
