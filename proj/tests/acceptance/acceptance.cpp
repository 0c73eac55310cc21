// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner. One PASS/FAIL line per criterion; exit 0 only when
// every selected criterion passes.
//
//   acceptance [--criterion N] [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wsdlab/checkpoint.hpp"
#include "wsdlab/data.hpp"
#include "wsdlab/error.hpp"
#include "wsdlab/fp8.hpp"
#include "wsdlab/model.hpp"
#include "wsdlab/mup.hpp"
#include "wsdlab/optim.hpp"
#include "wsdlab/rng.hpp"
#include "wsdlab/run_config.hpp"
#include "wsdlab/schedule.hpp"
#include "wsdlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace wsdlab;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

double cpu_seconds() {
    return static_cast<double>(std::clock()) / CLOCKS_PER_SEC;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh(const fs::path& p) {
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double mean_loss(const std::vector<StepStat>& h, std::int64_t lo, std::int64_t hi) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& st : h) {
        if (st.step >= lo && st.step < hi) {
            s += st.loss;
            ++n;
        }
    }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

const EvalRecord* find_eval(const std::vector<EvalRecord>& evals, const std::string& label) {
    for (const auto& e : evals) {
        if (e.label == label) {
            return &e;
        }
    }
    return nullptr;
}

Eigen::MatrixXd to_eigen(std::span<const double> v, std::size_t rows, std::size_t cols) {
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i * cols + j];
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome criterion_1(const fs::path&) {
    const double t0 = cpu_seconds();
    ModelConfig mc;
    mc.d_model = 64;
    mc.d_ff = 160;
    mc.n_layers = 2;
    mc.n_q_heads = 4;
    mc.n_kv_heads = 2;
    mc.seq_len = 16;
    const MuPConfig mu;
    auto pm = parameterize(mc, mu, 7);
    RopeTable rope(mc.d_head(), mc.rope_base);
    TokenBlock tokens{2, 16, {}};
    KeyedRng rng{0xACCE, 1};
    for (std::size_t i = 0; i < 32; ++i) {
        tokens.tokens.push_back(static_cast<std::int32_t>(rng.below(258)));
    }
    std::vector<std::int32_t> targets(tokens.tokens.begin() + 1, tokens.tokens.end());
    targets.push_back(kEos);
    std::vector<Tensor> params;
    for (const auto& n : pm.params.named()) {
        params.push_back(n.tensor);
    }
    GradCheckOptions opt;
    opt.max_coords_per_param = 400;
    const GradCheckReport r = grad_check(
        [&] { return softmax_xent(forward(pm.params, mc, pm.scales, rope, tokens), targets); }, params, opt);
    const double secs = cpu_seconds() - t0;
    const bool pass = r.max_rel_err <= 1e-4 && secs < 60.0;
    return {pass, fmt("max_rel_err %.3g over %zu coordinates (bound 1e-4; worst %s[%zu] analytic %.6g numeric %.6g), "
                      "%.1f s CPU (< 60 s)",
                      r.max_rel_err, r.coordinates, pm.params.named()[r.worst_param].name.c_str(), r.worst_index,
                      r.worst_analytic, r.worst_numeric, secs)};
}

// ---------------------------------------------------------------------------
// 2. Coordinate check

Outcome criterion_2(const fs::path& work) {
    const double t0 = cpu_seconds();
    CoordCheckOptions o;
    const CoordCheckResult mup = coord_check(o);
    o.parameterization = Parameterization::standard;
    const CoordCheckResult sp = coord_check(o);
    const double secs = cpu_seconds() - t0;
    std::ofstream(work / "coord_check_mup.csv") << mup.csv();
    std::ofstream(work / "coord_check_sp.csv") << sp.csv();
    std::string slopes;
    for (const auto& s : mup.slopes) {
        slopes += fmt("%s %+.3f ", s.site.c_str(), s.slope);
    }
    double sp_logits = std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : sp.slopes) {
        if (s.site == "logits") {
            sp_logits = s.slope;
        }
    }
    const bool pass = mup.pass && std::abs(sp_logits) > 0.2 && secs < 600.0;
    return {pass, fmt("muP slopes [%s] (|slope| <= 0.2: %s); SP logits slope %+.3f (> 0.2 expected), %.0f s CPU "
                      "(< 600 s)",
                      slopes.c_str(), mup.pass ? "yes" : mup.report.c_str(), sp_logits, secs)};
}

// ---------------------------------------------------------------------------
// 3. LR transfer

constexpr std::size_t kTransferSteps = 400;
constexpr std::size_t kTransferBatch = 4;
constexpr std::size_t kTransferSeq = 64;

double transfer_loss(std::size_t width, double lr_scale) {
    ModelConfig mc;
    mc.d_model = width;
    mc.d_ff = width * 5 / 2;
    mc.n_layers = 2;
    mc.seq_len = kTransferSeq;
    const MuPConfig mu;  // base width 64
    auto pm = parameterize(mc, mu, 3);
    RopeTable rope(mc.d_head(), mc.rope_base);
    const Corpus corpus = Corpus::standard();
    AdamWState opt;
    const auto named = pm.params.named();
    std::vector<Tensor> tensors;
    for (const auto& n : named) {
        tensors.push_back(n.tensor);
    }
    try {
        for (std::size_t step = 0; step < kTransferSteps; ++step) {
            const Batch b = make_batch(corpus, "stable", Stream::train, 5, step, kTransferBatch, kTransferSeq);
            const Tensor loss = softmax_xent(forward(pm.params, mc, pm.scales, rope, b.inputs), b.targets);
            loss.backward();
            (void)clip_grad_norm(tensors, 1.0);
            // Warmup 10%, constant, linear cooldown over the last 20%.
            const double t = static_cast<double>(step + 1) / static_cast<double>(kTransferSteps);
            const double shape = std::min({1.0, t / 0.1, (1.0 - t) / 0.2 + 0.05});
            const double schedule_lr = mu.peak_lr_hidden * lr_scale * shape;
            std::vector<ParamRef> refs;
            for (std::size_t i = 0; i < named.size(); ++i) {
                refs.push_back({named[i].name, named[i].tensor, effective_lr(pm.groups[i], schedule_lr, mu),
                                named[i].tensor.rank() == 2, false});
            }
            adamw_step(opt, refs);
            pm.params.zero_grad();
        }
        const ModelView v{&pm.params, &pm.config, pm.scales, &rope};
        return std::log(heldout_perplexity(v, corpus, "stable", 5, 8, 4, kTransferSeq));
    } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::infinity();
    }
}

Outcome criterion_3(const fs::path& work) {
    const double t0 = cpu_seconds();
    std::ofstream csv(work / "lr_transfer.csv");
    csv << "width,k,lr_hidden,heldout_nll\n";
    std::string detail;
    std::vector<int> argmins;
    for (std::size_t width : {64u, 256u}) {
        int best = 0;
        double best_loss = std::numeric_limits<double>::infinity();
        std::string row;
        for (int k = -3; k <= 3; ++k) {
            const double scale = std::ldexp(1.0, k);
            const double l = transfer_loss(width, scale);
            csv << width << ',' << k << ',' << format_double(1.67e-3 * scale) << ',' << format_double(l) << '\n';
            row += fmt("%.4f ", l);
            if (l < best_loss) {
                best_loss = l;
                best = k;
            }
        }
        argmins.push_back(best);
        detail += fmt("width %zu: nll [%s] argmin k=%+d; ", width, row.c_str(), best);
    }
    const double secs = cpu_seconds() - t0;
    const bool pass = std::abs(argmins[0] - argmins[1]) <= 1 && secs < 1800.0;
    return {pass, detail + fmt("|dk| = %d (<= 1), %.0f s CPU (< 1800 s)", std::abs(argmins[0] - argmins[1]), secs)};
}

// ---------------------------------------------------------------------------
// 4. Newton-Schulz against SVD

Outcome criterion_4(const fs::path&) {
    KeyedRng rng{0x4E53};
    double worst_err = 0.0, sv_lo = std::numeric_limits<double>::infinity(), sv_hi = 0.0;
    std::string worst_shape;
    for (int trial = 0; trial < 100; ++trial) {
        // 2:1 or longer aspect up to 64x32, half of them wide.
        const std::size_t small = 2 + rng.below(31);               // 2..32
        const std::size_t large = 2 * small + rng.below(65 - 2 * small);  // 2*small..64
        const bool wide = rng.below(2) == 1;
        const std::size_t rows = wide ? small : large, cols = wide ? large : small;
        std::vector<double> g(rows * cols);
        for (auto& x : g) {
            x = rng.normal();
        }
        const NsResult o = newton_schulz_orthogonalize(g, rows, cols);
        const Eigen::MatrixXd gm = to_eigen(g, rows, cols);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(gm, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::MatrixXd uv = svd.matrixU() * svd.matrixV().transpose();
        const Eigen::MatrixXd om = to_eigen(o.values, rows, cols);
        const double err = (om - uv).norm() / uv.norm();
        if (err > worst_err) {
            worst_err = err;
            worst_shape = fmt("%zux%zu", rows, cols);
        }
        const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(om).singularValues();
        sv_lo = std::min(sv_lo, sv.minCoeff());
        sv_hi = std::max(sv_hi, sv.maxCoeff());
    }
    const bool pass = worst_err <= 0.05 && sv_lo >= 0.7 && sv_hi <= 1.3;
    return {pass, fmt("100 matrices: worst relative error %.3g at %s (<= 0.05); singular values in [%.4f, %.4f] "
                      "(within [0.7, 1.3])",
                      worst_err, worst_shape.c_str(), sv_lo, sv_hi)};
}

// ---------------------------------------------------------------------------
// 5. Optimizer switch protocol

RunConfig switch_config() {
    RunConfig c = RunConfig::desk();
    c.plan.shrink = 0.001;  // 2/270/260/20/10 steps
    c.checkpoint_every = 0;
    c.eval.heldout_blocks = 2;
    c.eval.long_blocks = 1;
    return c;
}

Outcome criterion_5(const fs::path& work) {
    RunConfig a_cfg = switch_config();
    a_cfg.plan.optimizer_policy = OptimizerPolicy::adamw_only;
    RunConfig b_cfg = switch_config();
    b_cfg.plan.optimizer_policy = OptimizerPolicy::switch_at_decay;
    Trainer a(a_cfg, fresh(work / "c5_adamw_only"));
    a.run();
    Trainer b(b_cfg, fresh(work / "c5_muon_switch"));
    b.run();
    const PhasePlan& plan = b.plan();
    const std::int64_t ds = plan.decay_start();

    bool prefix_identical = a.history().size() == b.history().size();
    bool hashes_identical = prefix_identical;
    bool lr_identical = prefix_identical;
    std::int64_t first_diff = -1;
    for (std::size_t i = 0; i < std::min(a.history().size(), b.history().size()); ++i) {
        const auto &x = a.history()[i], &y = b.history()[i];
        hashes_identical &= x.data_hash == y.data_hash;
        lr_identical &= x.lr == y.lr;
        if (x.step < ds) {
            prefix_identical &= x.loss == y.loss;
        }
        if (x.loss != y.loss && first_diff < 0) {
            first_diff = x.step;
        }
    }
    const bool diverges = first_diff > ds - 1 && first_diff >= 0;
    // Frozen schedule: the LR used at the switch step is the decay law's
    // value there, r^0 times the hidden peak.
    const double lr_switch = b.history()[static_cast<std::size_t>(ds)].lr;
    const double law = plan.law.peak_lr * std::pow(plan.law.decay_final_ratio, 0.0) * b_cfg.mup.peak_lr_hidden;
    const bool lr_ok = lr_switch == law && lr_switch == lr_at(ds, plan) * b_cfg.mup.peak_lr_hidden;
    const double lr_next = b.history()[static_cast<std::size_t>(ds) + 1].lr;
    const double law_next =
        std::pow(plan.law.decay_final_ratio, 1.0 / static_cast<double>(plan.law.decay_steps)) * b_cfg.mup.peak_lr_hidden;
    const bool lr_next_ok = std::abs(lr_next - law_next) <= 1e-15 * law_next;

    const Json manifest = Json::parse(slurp(work / "c5_muon_switch" / Trainer::kManifest));
    const bool record_ok = manifest.at("switch_records").size() == 1 &&
                           manifest.at("switch_records")[0].at("switch_step").get<std::int64_t>() == ds &&
                           Json::parse(slurp(work / "c5_adamw_only" / Trainer::kManifest)).at("switch_records").empty();

    // The ablation command branches both arms from one checkpoint; each arm
    // must equal the matching independent run bit for bit.
    const AblationReport ab = ablate_optimizer(switch_config(), fresh(work / "c5_ablation"));
    bool ablation_matches = ab.adamw_only.history.size() == a.history().size() &&
                            ab.muon_switch.history.size() == b.history().size();
    for (std::size_t i = 0; ablation_matches && i < a.history().size(); ++i) {
        ablation_matches = ab.adamw_only.history[i].loss == a.history()[i].loss &&
                           ab.muon_switch.history[i].loss == b.history()[i].loss;
    }
    const bool pass = prefix_identical && hashes_identical && lr_identical && diverges && lr_ok && lr_next_ok &&
                      record_ok && ablation_matches && ab.prefix_identical && ab.streams_identical;
    return {pass, fmt("%zu steps, switch at %lld: prefix losses identical %s, batch hashes identical %s, LR streams "
                      "identical %s, first differing loss at step %lld; LR at switch %.6g == decay law %.6g (%s), next "
                      "step %.6g vs %.6g; switch record %s; ablation arms equal independent runs %s; delta ppl "
                      "(muon - adamw) %+.4f",
                      b.history().size(), static_cast<long long>(ds), prefix_identical ? "yes" : "no",
                      hashes_identical ? "yes" : "no", lr_identical ? "yes" : "no", static_cast<long long>(first_diff),
                      lr_switch, law, lr_ok ? "exact" : "MISMATCH", lr_next, law_next, record_ok ? "ok" : "BAD",
                      ablation_matches ? "yes" : "no", ab.delta_ppl)};
}

// ---------------------------------------------------------------------------
// 6. FP8 codec and delayed scaling

double bitfield_value(unsigned code, int ebits, int mbits) {
    const int bias = (1 << (ebits - 1)) - 1;
    const unsigned emax = (1u << ebits) - 1, mmax = (1u << mbits) - 1;
    const unsigned e = (code >> mbits) & emax, m = code & mmax;
    const double sign = (code & 0x80u) ? -1.0 : 1.0;
    if (ebits == 4 && e == emax && m == mmax) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (ebits == 5 && e == emax) {
        return m ? std::numeric_limits<double>::quiet_NaN() : sign * std::numeric_limits<double>::infinity();
    }
    const double frac = static_cast<double>(m) / static_cast<double>(1u << mbits);
    return e == 0 ? sign * std::ldexp(frac, 1 - bias) : sign * std::ldexp(1.0 + frac, static_cast<int>(e) - bias);
}

Outcome criterion_6(const fs::path&) {
    int verified = 0;
    double max_e4m3 = 0.0, max_e5m2 = 0.0;
    bool e4m3_inf = false;
    for (auto [tag, eb, mb] : {std::tuple{fp8::FormatTag::e4m3, 4, 3}, std::tuple{fp8::FormatTag::e5m2, 5, 2}}) {
        const auto table = fp8::code_table(tag);
        for (unsigned c = 0; c < 256; ++c) {
            const double want = bitfield_value(c, eb, mb);
            const double got = table[c];
            bool ok = std::isnan(want) ? std::isnan(got)
                                       : (got == want && std::signbit(got) == std::signbit(want));
            if (std::isfinite(want)) {
                // Grid values round-trip through the encoder.
                ok &= fp8::decode(fp8::encode(want, tag).code, tag) == want;
                (tag == fp8::FormatTag::e4m3 ? max_e4m3 : max_e5m2) =
                    std::max(tag == fp8::FormatTag::e4m3 ? max_e4m3 : max_e5m2, want);
            }
            if (tag == fp8::FormatTag::e4m3 && std::isinf(got)) {
                e4m3_inf = true;
            }
            verified += ok ? 1 : 0;
        }
    }
    // Delayed scaling against an independent sliding window.
    int streams_ok = 0;
    constexpr int kStreams = 20;
    for (int s = 0; s < kStreams; ++s) {
        KeyedRng rng{0xF8, static_cast<std::uint64_t>(s)};
        const fp8::FormatTag tag = s % 2 ? fp8::FormatTag::e5m2 : fp8::FormatTag::e4m3;
        const double maxf = s % 2 ? 57344.0 : 448.0;
        fp8::Meta meta(tag, 128);
        std::deque<double> window;
        double scale = 1.0;
        bool ok = true;
        for (int i = 0; i < 1000; ++i) {
            const double amax = rng.below(10) == 0 ? 0.0 : std::exp(8.0 * rng.uniform() - 4.0);
            window.push_back(amax);
            if (window.size() > 128) {
                window.pop_front();
            }
            const double peak = *std::max_element(window.begin(), window.end());
            if (peak > 0.0) {
                scale = maxf / peak;
            }
            ok &= fp8::update_scale(meta, amax) == scale;
        }
        streams_ok += ok ? 1 : 0;
    }
    const bool pass = verified == 512 && max_e4m3 == 448.0 && max_e5m2 == 57344.0 && !e4m3_inf &&
                      streams_ok == kStreams;
    return {pass, fmt("%d/512 code points match the bit-field enumeration (E4M3 max %g, no inf: %s; E5M2 max %g); "
                      "delayed scaling matches the 128-entry sliding-window max on %d/%d random amax streams",
                      verified, max_e4m3, e4m3_inf ? "no" : "yes", max_e5m2, streams_ok, kStreams)};
}

// ---------------------------------------------------------------------------
// 7. FP8 training parity

Outcome criterion_7(const fs::path&) {
    RunConfig c = RunConfig::desk();
    c.model.seq_len = 64;
    c.plan.reference_steps = {20, 130, 130, 14, 6};
    c.plan.shrink = 1.0;
    c.plan.batch_sequences = {4, 4, 8, 8, 4};
    c.plan.seq_len = 64;
    c.plan.long_seq_mid = 128;
    c.plan.long_seq_final = 128;
    c.eval.enabled = false;
    c.checkpoint_every = 0;
    Trainer wide(c);
    wide.run();
    c.fp8.enabled = true;
    Trainer fp8(c);
    fp8.run();
    const double lw = wide.history().back().loss, lf = fp8.history().back().loss;
    const double rel = std::abs(lf - lw) / lw;
    const std::int64_t n = wide.plan().total_steps();
    const double mw = mean_loss(wide.history(), n - 20, n), mf = mean_loss(fp8.history(), n - 20, n);
    const bool pass = n == 300 && rel <= 0.05;
    return {pass, fmt("%lld steps: final loss wide %.4f, fp8 %.4f, relative gap %.4f (<= 0.05); last-20 mean %.4f vs "
                      "%.4f; saturations E4M3 %llu, E5M2 %llu",
                      static_cast<long long>(n), lw, lf, rel, mw, mf,
                      static_cast<unsigned long long>(fp8.history().back().fp8_saturated_e4m3),
                      static_cast<unsigned long long>(fp8.history().back().fp8_saturated_e5m2))};
}

// ---------------------------------------------------------------------------
// 8. Schedule arithmetic

Outcome criterion_8(const fs::path&) {
    const PhasePlan p = build_plan(PlanSpec::full_scale());
    const double total = static_cast<double>(total_tokens(p));
    const double rel = total / 1.4e12 - 1.0;
    const bool total_ok = std::abs(rel) <= 0.05;
    const double s1 = static_cast<double>(p.phase(PhaseId::stable1).tokens_per_step());
    const double s2 = static_cast<double>(p.phase(PhaseId::stable2).tokens_per_step());
    const double lc = static_cast<double>(p.phase(PhaseId::long_context).tokens_per_step());
    const bool doubling = s2 == 2.0 * s1 && std::abs(s1 - 1.78e6) / 1.78e6 < 0.005 &&
                          std::abs(s2 - 3.56e6) / 3.56e6 < 0.005;
    const bool lc_ok = std::abs(lc - 3.93e6) / 3.93e6 < 0.005;
    const double bound = std::max(1.0 / static_cast<double>(p.law.warmup_steps),
                                  1.0 - std::pow(p.law.decay_final_ratio, 1.0 / static_cast<double>(p.law.decay_steps)));
    double worst_jump = 0.0;
    for (const auto& ph : p.phases) {
        if (ph.start > 0) {
            worst_jump = std::max(worst_jump, std::abs(lr_at(ph.start, p) - lr_at(ph.start - 1, p)));
        }
    }
    const bool continuous = worst_jump <= bound;
    // Ramp-aware count for reference.
    std::uint64_t ramped = 0;
    for (const auto& ph : p.phases) {
        if (ph.id == PhaseId::long_context) {
            for (std::int64_t s = ph.start; s < ph.end(); ++s) {
                ramped += tokens_at(s, p);
            }
        } else {
            ramped += static_cast<std::uint64_t>(ph.steps) * ph.tokens_per_step();
        }
    }
    const bool pass = total_ok && doubling && lc_ok && continuous;
    return {pass, fmt("total %.6e tokens vs 1.4e12: %+.2f%% (within 5%%: %s; with the 8192->16384 ramp %.6e, %+.2f%%); "
                      "tokens/step %.4gM -> %.4gM (doubles: %s); long context %.4gM (~3.93M: %s); worst LR jump at a "
                      "boundary %.3g (<= %.3g: %s)",
                      total, 100.0 * rel, total_ok ? "yes" : "NO", static_cast<double>(ramped),
                      100.0 * (static_cast<double>(ramped) / 1.4e12 - 1.0), s1 / 1e6, s2 / 1e6,
                      doubling ? "yes" : "no", lc / 1e6, lc_ok ? "yes" : "no", worst_jump, bound,
                      continuous ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 9. WSD loss shape

Outcome criterion_9(const fs::path& work) {
    const double t0 = cpu_seconds();
    const RunConfig cfg = RunConfig::desk();
    const fs::path main_dir = fresh(work / "c9_desk");
    Trainer run(cfg, main_dir);
    run.run();
    const PhasePlan& p = run.plan();
    const auto& s2 = p.phase(PhaseId::stable2);
    const auto& decay = p.phase(PhaseId::decay);
    const auto& lc = p.phase(PhaseId::long_context);

    // (a) batch jump: the 100 steps after the jump do not train worse than
    // the 100 steps before it.
    const double before_jump = mean_loss(run.history(), s2.start - 100, s2.start);
    const double after_jump = mean_loss(run.history(), s2.start, s2.start + 100);
    const bool a_ok = after_jump <= before_jump;

    // (b) decay drop against a control that keeps the stable mixture.
    RunConfig ctl_cfg = cfg;
    ctl_cfg.plan.mixtures[3] = "stable";
    Trainer ctl(ctl_cfg, fresh(work / "c9_control"));
    ctl.resume(main_dir / "checkpoints" / "decay_start.ckpt");
    ctl.run(lc.start);
    const std::int64_t tail = std::max<std::int64_t>(decay.steps / 4, 1);
    const double stable_end = mean_loss(run.history(), decay.start - 100, decay.start);
    const double blend_end = mean_loss(run.history(), decay.end() - tail, decay.end());
    const double control_end = mean_loss(ctl.history(), decay.end() - tail, decay.end());
    const double blend_drop = blend_end - stable_end;
    const double control_drop = control_end - stable_end;
    const bool b_ok = blend_drop < 0.0 && blend_drop < control_drop;

    // (c) context ramp: held-out perplexity rises somewhere in the phase
    // while long-gap recall NLL falls.
    const EvalRecord* e0 = find_eval(run.evals(), "long_context_start");
    const EvalRecord* er = find_eval(run.evals(), "ramp_switch");
    const EvalRecord* ef = find_eval(run.evals(), "final");
    bool c_ok = false;
    std::string c_detail = "missing evaluations";
    if (e0 && er && ef) {
        const double peak = std::max(er->heldout_ppl, ef->heldout_ppl);
        const bool bump = peak > e0->heldout_ppl;
        const bool recall = ef->long_recall_nll < e0->long_recall_nll;
        c_ok = bump && recall;
        c_detail = fmt("held-out ppl %.4f -> %.4f (ramp) -> %.4f (final), bump %s; long recall NLL %.4f -> %.4f, "
                       "improves %s (windowed to %zu: %.4f -> %.4f; chance ln10 = %.4f)",
                       e0->heldout_ppl, er->heldout_ppl, ef->heldout_ppl, bump ? "yes" : "no", e0->long_recall_nll,
                       ef->long_recall_nll, recall ? "yes" : "no", cfg.plan.seq_len, e0->long_recall_nll_windowed,
                       ef->long_recall_nll_windowed, std::log(10.0));
    }
    const double secs = cpu_seconds() - t0;
    const bool pass = a_ok && b_ok && c_ok && secs < 3600.0;
    return {pass, fmt("(a) loss %.4f before vs %.4f after the batch jump: %s; (b) decay-end minus stable-end loss: "
                      "blend %+.4f, control %+.4f: %s; (c) %s: %s; %.0f s CPU (< 3600 s)",
                      before_jump, after_jump, a_ok ? "ok" : "no", blend_drop, control_drop, b_ok ? "ok" : "no",
                      c_detail.c_str(), c_ok ? "ok" : "no", secs)};
}

// ---------------------------------------------------------------------------
// 10. Reproducibility

bool same_final_params(const fs::path& a, const fs::path& b) {
    const Checkpoint x = read_checkpoint(a), y = read_checkpoint(b);
    for (const auto& arr : x.arrays) {
        if (arr.name.rfind("param.", 0) == 0 && y.array(arr.name).values != arr.values) {
            return false;
        }
    }
    return true;
}

Outcome criterion_10(const fs::path& work) {
    const fs::path dir_a = fresh(work / "c10_original");
    Trainer a(RunConfig::desk(), dir_a);
    a.run();

    // Manifest only.
    const fs::path dir_b = fresh(work / "c10_manifest_only");
    fs::copy_file(dir_a / Trainer::kManifest, dir_b / "manifest_input.json");
    Trainer b(load_run_config(dir_b / "manifest_input.json"), dir_b);
    b.run();
    const bool metrics_same = slurp(dir_a / Trainer::kMetrics) == slurp(dir_b / Trainer::kMetrics);
    const bool evals_same = slurp(dir_a / Trainer::kEvals) == slurp(dir_b / Trainer::kEvals);
    const bool params_same =
        same_final_params(dir_a / "checkpoints" / "final.ckpt", dir_b / "checkpoints" / "final.ckpt");

    // Resume from the pre-switch and the post-switch boundary checkpoints.
    std::string resume_detail;
    bool resume_ok = true;
    for (const char* tag : {"decay_start", "long_context_start"}) {
        const fs::path dir_c = fresh(work / (std::string("c10_resume_") + tag));
        fs::copy_file(dir_a / Trainer::kMetrics, dir_c / Trainer::kMetrics);
        fs::copy_file(dir_a / Trainer::kEvals, dir_c / Trainer::kEvals);
        Trainer c(RunConfig::desk(), dir_c);
        c.resume(dir_a / "checkpoints" / (std::string(tag) + ".ckpt"));
        c.run();
        const bool ok = slurp(dir_a / Trainer::kMetrics) == slurp(dir_c / Trainer::kMetrics) &&
                        slurp(dir_a / Trainer::kEvals) == slurp(dir_c / Trainer::kEvals) &&
                        same_final_params(dir_a / "checkpoints" / "final.ckpt", dir_c / "checkpoints" / "final.ckpt");
        resume_ok &= ok;
        resume_detail += fmt("%sresume at %s: %s", resume_detail.empty() ? "" : "; ", tag, ok ? "bit-exact" : "DIFFERS");
    }
    const bool pass = metrics_same && evals_same && params_same && resume_ok;
    return {pass, fmt("manifest-only rerun: metrics %s, evals %s, final params %s; %s",
                      metrics_same ? "bit-identical" : "DIFFER", evals_same ? "bit-identical" : "DIFFER",
                      params_same ? "bit-identical" : "DIFFER", resume_detail.c_str())};
}

const char* kTitles[] = {"",
                         "gradient correctness",
                         "muP coordinate check",
                         "LR transfer 64 -> 256",
                         "Newton-Schulz vs SVD",
                         "optimizer switch protocol",
                         "FP8 codec and delayed scaling",
                         "FP8 training parity",
                         "schedule arithmetic",
                         "WSD loss shape",
                         "reproducibility"};

using Fn = Outcome (*)(const fs::path&);
const Fn kCriteria[] = {nullptr,     criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                        criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    fs::path work = fs::temp_directory_path() / "wsdlab_acceptance";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::fprintf(stderr, "usage: acceptance [--criterion N] [--workdir DIR]\n");
            return 2;
        }
    }
    if (only < 0 || only > 10) {
        std::fprintf(stderr, "criterion must be 1..10\n");
        return 2;
    }
    fs::create_directories(work);
    bool all = true;
    for (int n = 1; n <= 10; ++n) {
        if (only && n != only) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = kCriteria[n](work);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %d (%s): %s [%.1f s wall]\n", o.pass ? "PASS" : "FAIL", n, kTitles[n],
                    o.detail.c_str(), wall);
        std::fflush(stdout);
        all &= o.pass;
    }
    return all ? 0 : 1;
}
