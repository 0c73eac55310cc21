// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// wsdlab command-line entry point.
//
// Exit codes: 0 success or PASS, 1 FAIL or divergence, 2 configuration error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "wsdlab/checkpoint.hpp"
#include "wsdlab/data.hpp"
#include "wsdlab/error.hpp"
#include "wsdlab/fp8.hpp"
#include "wsdlab/mup.hpp"
#include "wsdlab/run_config.hpp"
#include "wsdlab/schedule.hpp"
#include "wsdlab/trainer.hpp"

namespace {

using namespace wsdlab;

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kConfigError = 2;

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig::desk() : load_run_config(path);
}

void print_phase_table(const PhasePlan& plan, std::ostream& out) {
    out << "phase         start     steps   law                  batch  seq    ramp   tokens/step  mixture       "
           "optimizer\n";
    for (const auto& p : plan.phases) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-12s %7lld %9lld   %-20s %5zu %6zu %6zu %12llu  %-13s %s\n",
                      phase_name(p.id), static_cast<long long>(p.start), static_cast<long long>(p.steps),
                      law_name(p.law), p.batch_sequences, p.seq_len, p.ramp_seq_len,
                      static_cast<unsigned long long>(p.tokens_per_step()), p.mixture.c_str(),
                      optimizer_name(p.optimizer));
        out << line;
    }
    out << "total steps " << plan.total_steps() << ", total tokens " << total_tokens(plan) << '\n';
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out, bool dry_run, const std::string& resume,
              std::int64_t stop_at, std::size_t dump_n) {
    const RunConfig config = config_or_default(config_path);
    const PhasePlan plan = build_plan(config.plan);
    if (dry_run) {
        print_phase_table(plan, std::cout);
        return kOk;
    }
    if (dump_n > 0) {
        const std::filesystem::path dir = out.empty() ? "." : out;
        std::filesystem::create_directories(dir);
        dump_corpus(dir / "corpus.bin", config.corpus, plan, config.data_seed, dump_n);
        std::cout << "wrote " << dump_n << " sequences to " << (dir / "corpus.bin").string() << '\n';
        return kOk;
    }
    if (out.empty()) {
        throw ConfigError("train: --out is required");
    }
    Trainer trainer(config, out);
    if (!resume.empty()) {
        trainer.resume(resume);
    }
    trainer.run(stop_at);
    if (!trainer.history().empty()) {
        const auto& last = trainer.history().back();
        std::cout << "step " << last.step << " loss " << last.loss << " tokens " << last.tokens_seen << '\n';
    }
    for (const auto& e : trainer.evals()) {
        std::cout << "eval " << e.label << " @" << e.step << ": heldout_ppl " << e.heldout_ppl << ", long_recall_nll "
                  << e.long_recall_nll << " (windowed " << e.long_recall_nll_windowed << ")\n";
    }
    return kOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out) {
    const RunConfig config = config_or_default(config_path);
    const AblationReport r = ablate_optimizer(config, out);
    std::cout << "branch step " << r.branch_step << '\n'
              << "shared prefix bit-identical: " << (r.prefix_identical ? "yes" : "no") << '\n'
              << "batch streams hash-identical: " << (r.streams_identical ? "yes" : "no") << '\n'
              << "first divergent step: " << r.first_divergent_step << '\n'
              << "final held-out ppl adamw_only " << r.adamw_only.final_heldout_ppl << ", muon_switch "
              << r.muon_switch.final_heldout_ppl << ", delta " << std::showpos << r.delta_ppl << std::noshowpos
              << '\n';
    return r.prefix_identical && r.streams_identical ? kOk : kFail;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw ConfigError("--widths: cannot parse '" + item + "'");
        }
    }
    return out;
}

int cmd_coord_check(const std::string& widths, std::size_t steps, std::uint64_t seed, const std::string& param,
                    double lr_scale, const std::string& csv_path) {
    CoordCheckOptions o;
    o.widths = parse_widths(widths);
    o.steps = steps;
    o.seed = seed;
    o.parameterization = parse_parameterization(param);
    o.lr_scale = lr_scale;
    const CoordCheckResult r = coord_check(o);
    if (csv_path.empty()) {
        std::cout << r.csv();
    } else {
        std::ofstream(csv_path) << r.csv();
    }
    for (const auto& s : r.slopes) {
        std::cerr << "slope " << s.site << ' ' << s.slope << '\n';
    }
    std::cout << (r.pass ? "PASS" : "FAIL") << " coord-check " << parameterization_name(o.parameterization)
              << (r.report.empty() ? "" : ": " + r.report) << '\n';
    return r.pass ? kOk : kFail;
}

// Value of a code from its bit fields, computed independently of fp8::decode.
double field_value(std::uint8_t code, int exp_bits, int man_bits) {
    const int bias = (1 << (exp_bits - 1)) - 1;
    const int sign = code >> 7;
    const int e = (code >> man_bits) & ((1 << exp_bits) - 1);
    const int m = code & ((1 << man_bits) - 1);
    const double mag = e == 0 ? std::ldexp(m, 1 - bias - man_bits) : std::ldexp((1 << man_bits) + m, e - bias - man_bits);
    return sign ? -mag : mag;
}

int cmd_fp8_selftest(bool dump_tables) {
    int verified = 0, total = 0;
    for (auto tag : {fp8::FormatTag::e4m3, fp8::FormatTag::e5m2}) {
        const bool e4m3 = tag == fp8::FormatTag::e4m3;
        const int eb = e4m3 ? 4 : 5, mb = e4m3 ? 3 : 2;
        const auto table = fp8::code_table(tag);
        for (int c = 0; c < 256; ++c) {
            ++total;
            const auto code = static_cast<std::uint8_t>(c);
            const int e = (c >> mb) & ((1 << eb) - 1), m = c & ((1 << mb) - 1);
            bool ok;
            if (e4m3 && e == 15 && m == 7) {
                ok = std::isnan(table[c]) && fp8::is_nan_code(code, tag);
            } else if (!e4m3 && e == 31) {
                ok = m == 0 ? std::isinf(table[c]) && std::signbit(table[c]) == (c >> 7 == 1)
                            : std::isnan(table[c]) && fp8::is_nan_code(code, tag);
            } else {
                const double want = field_value(code, eb, mb);
                ok = table[c] == want && std::signbit(table[c]) == std::signbit(want) &&
                     fp8::encode(want, tag).code == code;
            }
            verified += ok ? 1 : 0;
            if (dump_tables) {
                std::printf("%s 0x%02x %.17g%s\n", fp8::format_name(tag), c, table[c], ok ? "" : "  MISMATCH");
            }
        }
    }
    const bool pass = verified == total;
    std::printf("%s fp8-selftest: %d/%d code points verified (E4M3 max %g, E5M2 max %g)\n", pass ? "PASS" : "FAIL",
                verified, total, fp8::format(fp8::FormatTag::e4m3).max_finite,
                fp8::format(fp8::FormatTag::e5m2).max_finite);
    return pass ? kOk : kFail;
}

int cmd_schedule_dump(const std::string& preset, double shrink, const std::string& config_path,
                      const std::string& csv_path) {
    PlanSpec spec;
    if (!config_path.empty()) {
        spec = load_run_config(config_path).plan;
    } else if (preset == "full") {
        spec = PlanSpec::full_scale();
        spec.shrink = shrink > 0.0 ? shrink : 1.0;
    } else if (preset == "desk") {
        spec = PlanSpec::desk(shrink > 0.0 ? shrink : RunConfig::desk().plan.shrink);
    } else {
        throw ConfigError("schedule dump: --preset must be 'full' or 'desk'");
    }
    const PhasePlan plan = build_plan(spec);
    print_phase_table(plan, std::cout);
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        out << "step,phase,lr,batch_sequences,seq_len,tokens,mixture,optimizer\n";
        for (std::int64_t s = 0; s < plan.total_steps(); ++s) {
            const PhaseInfo info = phase_at(s, plan);
            out << s << ',' << phase_name(info.id) << ',' << format_double(lr_at(s, plan)) << ','
                << info.batch_sequences << ',' << seq_len_at(s, plan) << ',' << tokens_at(s, plan) << ','
                << info.mixture << ',' << optimizer_name(info.optimizer) << '\n';
        }
        std::cout << "per-step table written to " << csv_path << '\n';
    }
    return kOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path) {
    const Checkpoint ck = read_checkpoint(checkpoint_path);
    const RunConfig config =
        config_path.empty() ? run_config_from_json(Json::parse(ck.get("config"))) : load_run_config(config_path);
    Trainer trainer(config);
    trainer.resume(ck);
    const EvalRecord r = trainer.evaluate("eval");
    std::cout << to_json(r).dump() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wsdlab: warmup-stable-decay training lab"};
    app.require_subcommand(1);

    std::string config, out, resume, widths = "64,128,256", param = "mup", csv, preset = "full", checkpoint;
    bool dry_run = false, dump_tables = false;
    std::int64_t stop_at = -1;
    std::size_t dump_n = 0, steps = 10;
    std::uint64_t seed = 0;
    double lr_scale = 1.0, shrink = 0.0;

    auto* train = app.add_subcommand("train", "Run all five phases end to end");
    train->add_option("--config", config, "Run config or manifest (JSON); desk defaults when omitted");
    train->add_option("--out", out, "Output directory");
    train->add_flag("--dry-run", dry_run, "Print the phase table and exit");
    train->add_option("--resume", resume, "Checkpoint to resume from");
    train->add_option("--stop-at", stop_at, "Stop before this step");
    train->add_option("--dump-corpus", dump_n, "Write N training sequences to <out>/corpus.bin and exit");

    auto* ablate = app.add_subcommand("ablate-optimizer", "AdamW-only vs Muon-switch branches from one prefix");
    ablate->add_option("--config", config, "Run config (JSON)");
    ablate->add_option("--out", out, "Output directory");

    auto* coord = app.add_subcommand("coord-check", "µP coordinate check across widths");
    coord->add_option("--widths", widths, "Comma-separated widths (each double the previous)");
    coord->add_option("--steps", steps, "Training steps per width");
    coord->add_option("--seed", seed, "Seed for init and data");
    coord->add_option("--parameterization", param, "mup or standard");
    coord->add_option("--lr-scale", lr_scale, "Factor on both peak LRs");
    coord->add_option("--csv", csv, "Write the table here instead of stdout");

    auto* fp8cmd = app.add_subcommand("fp8-selftest", "Verify all 512 FP8 code points");
    fp8cmd->add_flag("--dump-tables", dump_tables, "Print every code and value");

    auto* schedule = app.add_subcommand("schedule", "Phase-plan utilities");
    schedule->require_subcommand(1);
    auto* dump = schedule->add_subcommand("dump", "Print the phase table and totals");
    dump->add_option("--preset", preset, "full or desk");
    dump->add_option("--shrink", shrink, "Span scale factor");
    dump->add_option("--config", config, "Take the plan from a run config instead");
    dump->add_option("--csv", csv, "Write a per-step table here");

    auto* eval = app.add_subcommand("eval", "Held-out perplexity and long-gap recall of a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--config", config, "Override the config stored in the checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (train->parsed()) {
            return cmd_train(config, out, dry_run, resume, stop_at, dump_n);
        }
        if (ablate->parsed()) {
            return cmd_ablate(config, out);
        }
        if (coord->parsed()) {
            return cmd_coord_check(widths, steps, seed, param, lr_scale, csv);
        }
        if (fp8cmd->parsed()) {
            return cmd_fp8_selftest(dump_tables);
        }
        if (dump->parsed()) {
            return cmd_schedule_dump(preset, shrink, config, csv);
        }
        if (eval->parsed()) {
            return cmd_eval(checkpoint, config);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NonFiniteError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return kFail;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFail;
    }
    return kConfigError;
}
