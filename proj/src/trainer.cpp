// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "wsdlab/checkpoint.hpp"
#include "wsdlab/error.hpp"

namespace wsdlab {

namespace {

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

constexpr std::array<std::pair<const char*, fp8::Meta fp8::GemmMeta::*>, 3> kFp8Roles{{
    {"input", &fp8::GemmMeta::input},
    {"weight", &fp8::GemmMeta::weight},
    {"grad_output", &fp8::GemmMeta::grad_output},
}};

std::string layer_leaf(const std::string& name) {
    const auto dot = name.rfind('.');
    return dot == std::string::npos ? name : name.substr(dot + 1);
}

// Keeps the lines of a JSONL file whose "step" is below `step`.
void truncate_jsonl(const std::filesystem::path& path, std::int64_t step) {
    std::vector<std::string> keep;
    {
        std::ifstream in(path);
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) {
                continue;
            }
            const Json j = Json::parse(line, nullptr, false);
            if (!j.is_discarded() && j.contains("step") && j.at("step").get<std::int64_t>() < step) {
                keep.push_back(line);
            }
        }
    }
    std::ofstream out(path, std::ios::trunc);
    for (const auto& line : keep) {
        out << line << '\n';
    }
}

}  // namespace

Json to_json(const StepStat& s, bool with_fp8) {
    Json j{{"step", s.step},
           {"phase", phase_name(s.phase)},
           {"lr", s.lr},
           {"tokens", s.tokens_seen},
           {"loss", s.loss},
           {"grad_norm", s.grad_norm},
           {"optimizer", optimizer_name(s.optimizer)},
           {"batch", s.batch_sequences},
           {"seq_len", s.seq_len},
           {"data_hash", hex64(s.data_hash)}};
    if (with_fp8) {
        j["fp8_saturated_e4m3"] = s.fp8_saturated_e4m3;
        j["fp8_saturated_e5m2"] = s.fp8_saturated_e5m2;
    }
    return j;
}

Json to_json(const EvalRecord& e) {
    return Json{{"step", e.step},
                {"label", e.label},
                {"heldout_ppl", e.heldout_ppl},
                {"long_recall_nll", e.long_recall_nll},
                {"long_recall_nll_windowed", e.long_recall_nll_windowed}};
}

Trainer::Trainer(RunConfig config, std::filesystem::path out_dir)
    : config_(std::move(config)),
      out_dir_(std::move(out_dir)),
      plan_((config_.validate(), build_plan(config_.plan))),
      model_(parameterize(config_.model, config_.mup, config_.init_seed)),
      rope_(config_.model.d_head(), config_.model.rope_base),
      fp8_(config_.fp8.history_length) {
    adamw_.config = config_.adamw;
    for (std::size_t i = 0; i < model_.groups.size(); ++i) {
        const auto& g = model_.groups[i];
        if (g.kind == GroupKind::hidden_matrix &&
            std::find(config_.muon_targets.begin(), config_.muon_targets.end(), layer_leaf(g.name)) !=
                config_.muon_targets.end()) {
            orthogonalized_.push_back(g.name);
        }
    }
}

ModelView Trainer::view() {
    return ModelView{&model_.params, &model_.config, model_.scales, &rope_};
}

void Trainer::write_manifest() const {
    if (out_dir_.empty()) {
        return;
    }
    Json switches = Json::array();
    for (const auto& s : switches_) {
        switches.push_back(to_json(s));
    }
    const Json manifest{{"manifest_version", 1},
                        {"vocab_size", kByteVocab},
                        {"config", to_json(config_)},
                        {"plan", to_json(plan_)},
                        {"switch_records", switches}};
    std::filesystem::create_directories(out_dir_);
    const auto path = out_dir_ / kManifest;
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << manifest.dump(2) << '\n';
        if (!out) {
            throw FormatError("cannot write " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void Trainer::open_streams(bool fresh) {
    streams_open_ = true;
    if (out_dir_.empty()) {
        return;
    }
    std::filesystem::create_directories(out_dir_ / "checkpoints");
    const auto metrics = out_dir_ / kMetrics;
    const auto evals = out_dir_ / kEvals;
    if (!fresh) {
        truncate_jsonl(metrics, step_);
        truncate_jsonl(evals, step_);
    }
    const auto mode = fresh ? std::ios::trunc : std::ios::app;
    metrics_.open(metrics, std::ios::out | mode);
    eval_stream_.open(evals, std::ios::out | mode);
    if (!metrics_ || !eval_stream_) {
        throw FormatError("cannot open metric streams in " + out_dir_.string());
    }
}

void Trainer::run(std::int64_t stop_at) {
    const std::int64_t total = plan_.total_steps();
    const std::int64_t stop = stop_at < 0 ? total : std::min(stop_at, total);
    if (!streams_open_) {
        open_streams(step_ == 0);
        write_manifest();
    }
    if (step_ >= total) {
        return;
    }
    while (step_ < stop) {
        boundary_actions();
        train_step();
        ++step_;
        if (!out_dir_.empty() && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
            save_checkpoint(out_dir_ / "checkpoints" / "latest.ckpt");
        }
    }
    if (finished()) {
        if (config_.eval.enabled) {
            (void)evaluate("final");
        }
        if (!out_dir_.empty()) {
            save_checkpoint(out_dir_ / "checkpoints" / "final.ckpt");
            save_checkpoint(out_dir_ / "checkpoints" / "latest.ckpt");
        }
    } else if (!out_dir_.empty()) {
        save_checkpoint(out_dir_ / "checkpoints" / "latest.ckpt");
    }
}

void Trainer::boundary_actions() {
    const std::int64_t s = step_;
    for (const auto& p : plan_.phases) {
        if (s > 0 && s == p.start) {
            if (config_.eval.enabled) {
                (void)evaluate(std::string(phase_name(p.id)) + "_start");
            }
            if (!out_dir_.empty()) {
                save_checkpoint(out_dir_ / "checkpoints" / (std::string(phase_name(p.id)) + "_start.ckpt"));
            }
        }
    }
    const Phase& lc = plan_.phase(PhaseId::long_context);
    if (config_.eval.enabled && lc.ramp_seq_len != 0 && s > lc.start && seq_len_at(s, plan_) != seq_len_at(s - 1, plan_)) {
        (void)evaluate("ramp_switch");
    }
    if (s == plan_.decay_start() && plan_.phase(PhaseId::decay).optimizer == OptimizerId::muon && !muon_) {
        SwitchRecord record;
        muon_ = switch_optimizer(adamw_, plan_, s, orthogonalized_, config_.muon, &record);
        adamw_ = AdamWState{};
        adamw_.config = config_.adamw;
        switches_.push_back(record);
        write_manifest();
    }
}

void Trainer::train_step() {
    const std::int64_t s = step_;
    const Batch batch = sample_batch(s, plan_, config_.corpus, config_.data_seed);
    const PhaseInfo info = phase_at(s, plan_);
    const double schedule_lr = lr_at(s, plan_) * config_.mup.peak_lr_hidden;

    ForwardOptions fo;
    if (config_.fp8.enabled) {
        fo.fp8 = &fp8_;
    }
    StepStat stat;
    try {
        const Tensor logits = forward(model_.params, model_.config, model_.scales, rope_, batch.inputs, fo);
        const Tensor loss = softmax_xent(logits, batch.targets);
        stat.loss = loss.item();
        loss.backward();

        const auto named = model_.params.named();
        std::vector<Tensor> tensors;
        std::vector<ParamRef> refs;
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto& g = model_.groups[i];
            tensors.push_back(named[i].tensor);
            const bool ortho = std::find(orthogonalized_.begin(), orthogonalized_.end(), g.name) !=
                               orthogonalized_.end();
            refs.push_back({named[i].name, named[i].tensor, effective_lr(g, schedule_lr, config_.mup),
                            named[i].tensor.rank() == 2, ortho});
        }
        stat.grad_norm = clip_grad_norm(tensors, config_.clip);
        if (muon_) {
            muon_step(*muon_, refs);
        } else {
            adamw_step(adamw_, refs);
        }
        model_.params.zero_grad();
    } catch (const NonFiniteError& e) {
        model_.params.zero_grad();
        throw TrainingDiverged("training diverged at step " + std::to_string(s) + ": " + e.what());
    }

    tokens_seen_ += static_cast<std::uint64_t>(batch.inputs.batch) * batch.inputs.seq;
    stat.step = s;
    stat.phase = info.id;
    stat.optimizer = optimizer();
    stat.lr = schedule_lr;
    stat.tokens_seen = tokens_seen_;
    stat.batch_sequences = batch.inputs.batch;
    stat.seq_len = batch.inputs.seq;
    stat.data_hash = batch.hash;
    if (config_.fp8.enabled) {
        stat.fp8_saturated_e4m3 = fp8_.saturation_count(fp8::FormatTag::e4m3);
        stat.fp8_saturated_e5m2 = fp8_.saturation_count(fp8::FormatTag::e5m2);
    }
    history_.push_back(stat);
    if (metrics_.is_open() &&
        (s % static_cast<std::int64_t>(config_.log_every) == 0 || s + 1 == plan_.total_steps())) {
        metrics_ << to_json(stat, config_.fp8.enabled).dump() << '\n';
        metrics_.flush();
    }
}

EvalRecord Trainer::evaluate(const std::string& label) {
    const auto& ec = config_.eval;
    const ModelView v = view();
    EvalRecord r;
    r.step = step_;
    r.label = label;
    r.heldout_ppl = heldout_perplexity(v, config_.corpus, ec.heldout_mixture, config_.data_seed, ec.heldout_blocks,
                                       ec.heldout_batch, config_.plan.seq_len);
    double full = 0.0, windowed = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < ec.long_blocks; ++b) {
        const Batch batch = heldout_batch(config_.corpus, "domain:" + ec.long_domain, config_.data_seed, b,
                                          ec.long_batch, config_.plan.long_seq_final);
        const EvalResult a = wsdlab::evaluate(v, batch);
        const EvalResult w = wsdlab::evaluate(v, batch, config_.plan.seq_len);
        if (a.answer_tokens > 0) {
            full += a.answer_nll * static_cast<double>(a.answer_tokens);
            windowed += w.answer_nll * static_cast<double>(w.answer_tokens);
            n += a.answer_tokens;
        }
    }
    r.long_recall_nll = n ? full / static_cast<double>(n) : 0.0;
    r.long_recall_nll_windowed = n ? windowed / static_cast<double>(n) : 0.0;
    evals_.push_back(r);
    if (eval_stream_.is_open()) {
        eval_stream_ << to_json(r).dump() << '\n';
        eval_stream_.flush();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.meta["step"] = std::to_string(step_);
    ck.meta["tokens_seen"] = std::to_string(tokens_seen_);
    ck.meta["config"] = to_json(config_).dump();
    ck.meta["switch.count"] = std::to_string(switches_.size());
    for (std::size_t i = 0; i < switches_.size(); ++i) {
        ck.meta["switch." + std::to_string(i) + ".step"] = std::to_string(switches_[i].switch_step);
    }
    for (const auto& [name, t] : model_.params.named()) {
        ck.put("param." + name, t);
    }
    if (muon_) {
        save_optimizer(ck, *muon_);
    } else {
        save_optimizer(ck, adamw_);
    }
    std::string sites;
    for (const auto& [site, gm] : fp8_.sites()) {
        sites += (sites.empty() ? "" : ",") + site;
        for (const auto& [role, member] : kFp8Roles) {
            const fp8::Meta& m = gm.*member;
            const std::string key = "fp8." + site + "." + role;
            ck.put(key + ".history", {m.history.size()}, m.history);
            ck.meta[key + ".next_slot"] = std::to_string(m.next_slot);
            ck.meta[key + ".scale"] = format_double(m.scale);
            ck.meta[key + ".saturation_count"] = std::to_string(m.saturation_count);
            ck.meta[key + ".passthrough_count"] = std::to_string(m.passthrough_count);
        }
    }
    ck.meta["fp8.sites"] = sites;
    return ck;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    write_checkpoint(path, checkpoint());
}

void Trainer::resume(const std::filesystem::path& path) {
    resume(read_checkpoint(path));
}

void Trainer::resume(const Checkpoint& ck) {
    const RunConfig saved = run_config_from_json(Json::parse(ck.get("config")));
    if (!(saved.model == config_.model)) {
        throw ConfigError("resume: checkpoint model shape differs from the config");
    }
    const std::int64_t step = std::stoll(ck.get("step"));
    if (step < 0 || step > plan_.total_steps()) {
        throw ConfigError("resume: checkpoint step lies outside the plan");
    }
    for (auto& [name, t] : model_.params.named()) {
        ck.load_into("param." + name, t);
    }
    if (ck.get("optimizer") == optimizer_name(OptimizerId::muon)) {
        muon_ = load_muon(ck, config_.muon, config_.adamw);
        adamw_ = AdamWState{};
        adamw_.config = config_.adamw;
    } else {
        muon_.reset();
        adamw_ = load_adamw(ck, config_.adamw);
    }
    fp8_ = fp8::Context(config_.fp8.history_length);
    std::stringstream sites(ck.get("fp8.sites"));
    for (std::string site; std::getline(sites, site, ',');) {
        fp8::GemmMeta& gm = fp8_.site(site);
        for (const auto& [role, member] : kFp8Roles) {
            fp8::Meta& m = gm.*member;
            const std::string key = "fp8." + site + "." + role;
            m.history = ck.array(key + ".history").values;
            m.next_slot = std::stoull(ck.get(key + ".next_slot"));
            m.scale = parse_double(ck.get(key + ".scale"));
            m.saturation_count = std::stoull(ck.get(key + ".saturation_count"));
            m.passthrough_count = std::stoull(ck.get(key + ".passthrough_count"));
        }
    }
    switches_.clear();
    const auto count = std::stoull(ck.get("switch.count"));
    for (std::size_t i = 0; i < count; ++i) {
        SwitchRecord r;
        r.switch_step = std::stoll(ck.get("switch." + std::to_string(i) + ".step"));
        switches_.push_back(r);
    }
    step_ = step;
    tokens_seen_ = std::stoull(ck.get("tokens_seen"));
    history_.clear();
    evals_.clear();
    if (streams_open_) {
        metrics_.close();
        eval_stream_.close();
    }
    open_streams(false);
    write_manifest();
}

}  // namespace wsdlab

namespace wsdlab {

Json to_json(const AblationReport& r) {
    auto branch = [](const AblationBranch& b) {
        Json losses = Json::array();
        for (const auto& s : b.history) {
            losses.push_back(s.loss);
        }
        return Json{{"name", b.name}, {"final_heldout_ppl", b.final_heldout_ppl}, {"losses", losses}};
    };
    return Json{{"branch_step", r.branch_step},
                {"prefix_identical", r.prefix_identical},
                {"streams_identical", r.streams_identical},
                {"first_divergent_step", r.first_divergent_step},
                {"delta_ppl", r.delta_ppl},
                {"adamw_only", branch(r.adamw_only)},
                {"muon_switch", branch(r.muon_switch)}};
}

AblationReport ablate_optimizer(const RunConfig& config, const std::filesystem::path& out_dir) {
    auto sub = [&](const char* name) { return out_dir.empty() ? std::filesystem::path{} : out_dir / name; };
    RunConfig shared_cfg = config;
    shared_cfg.plan.optimizer_policy = OptimizerPolicy::switch_at_decay;
    Trainer shared(shared_cfg, sub("shared"));
    const std::int64_t branch_step = shared.plan().decay_start();
    shared.run(branch_step);
    const Checkpoint at_branch = shared.checkpoint();

    auto run_branch = [&](const char* name, OptimizerPolicy policy) {
        RunConfig cfg = config;
        cfg.plan.optimizer_policy = policy;
        const auto dir = sub(name);
        if (!dir.empty()) {
            std::filesystem::create_directories(dir);
            std::filesystem::copy_file(sub("shared") / Trainer::kMetrics, dir / Trainer::kMetrics,
                                       std::filesystem::copy_options::overwrite_existing);
            std::filesystem::copy_file(sub("shared") / Trainer::kEvals, dir / Trainer::kEvals,
                                       std::filesystem::copy_options::overwrite_existing);
        }
        Trainer t(cfg, dir);
        t.resume(at_branch);
        t.run();
        AblationBranch b;
        b.name = name;
        b.history = shared.history();
        b.history.insert(b.history.end(), t.history().begin(), t.history().end());
        b.evals = shared.evals();
        b.evals.insert(b.evals.end(), t.evals().begin(), t.evals().end());
        b.switches = t.switches();
        b.final_heldout_ppl = t.evals().empty() ? 0.0 : t.evals().back().heldout_ppl;
        return b;
    };

    AblationReport r;
    r.branch_step = branch_step;
    r.adamw_only = run_branch("adamw_only", OptimizerPolicy::adamw_only);
    r.muon_switch = run_branch("muon_switch", OptimizerPolicy::switch_at_decay);
    const auto& a = r.adamw_only.history;
    const auto& b = r.muon_switch.history;
    r.prefix_identical = a.size() == b.size();
    r.streams_identical = a.size() == b.size();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        if (a[i].data_hash != b[i].data_hash) {
            r.streams_identical = false;
        }
        if (a[i].loss != b[i].loss && r.first_divergent_step < 0) {
            r.first_divergent_step = a[i].step;
        }
        if (a[i].step < branch_step && a[i].loss != b[i].loss) {
            r.prefix_identical = false;
        }
    }
    r.delta_ppl = r.muon_switch.final_heldout_ppl - r.adamw_only.final_heldout_ppl;
    if (!out_dir.empty()) {
        std::ofstream(out_dir / "ablation.json") << to_json(r).dump(2) << '\n';
    }
    return r;
}

}  // namespace wsdlab
