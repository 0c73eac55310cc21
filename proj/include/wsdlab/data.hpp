// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic byte-level corpus. Documents come from a handful of generators
// keyed by (seed, stream, step, sequence, document); every sequence is filled
// from one domain drawn from the phase's mixture.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wsdlab/model.hpp"
#include "wsdlab/schedule.hpp"

namespace wsdlab {

inline constexpr std::int32_t kBos = 256;
inline constexpr std::int32_t kEos = 257;
inline constexpr std::size_t kByteVocab = 258;

std::vector<std::int32_t> tokenize(std::string_view bytes);
/// Specials are dropped; ids outside [0, 258) throw IndexError.
std::string detokenize(std::span<const std::int32_t> ids);

enum class GeneratorKind : std::uint8_t { uniform_bytes, arithmetic, copy, kv_recall };
enum class Quality : std::uint8_t { pretrain, sft };
const char* generator_name(GeneratorKind kind);
const char* quality_name(Quality q);

struct Domain {
    std::string id;
    GeneratorKind kind = GeneratorKind::uniform_bytes;
    Quality quality = Quality::pretrain;
    /// uniform_bytes: bytes drawn from [alphabet_lo, alphabet_lo + alphabet_size).
    std::uint8_t alphabet_lo = 0;
    std::uint16_t alphabet_size = 256;
    /// uniform_bytes: document length; copy: payload length range.
    std::size_t min_len = 8;
    std::size_t max_len = 16;
    /// kv_recall: minimum token distance between the queried pair and the
    /// query. Filler pairs pad the gap.
    std::size_t min_gap = 0;
    std::size_t pairs = 4;
    /// arithmetic: operands in [0, max_operand]; `subtract` also draws '-'.
    std::uint32_t max_operand = 999;
    bool subtract = true;
};

/// One generated document: BOS, body, EOS. `answer[i]` marks tokens that
/// are fully determined by earlier tokens (copied halves, results, values).
struct Document {
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> answer;
};

Document generate(const Domain& domain, std::uint64_t seed, std::uint64_t index);

struct Mixture {
    std::string name;
    std::vector<std::pair<std::string, double>> weights;
};

enum class Stream : std::uint64_t { train = 0x7472, heldout = 0x686F };

struct Corpus {
    std::vector<Domain> domains;
    std::map<std::string, Mixture> mixtures;

    /// Stable: web/math/repeat. Decay and long_context put 0.669 on sft
    /// domains; long_context adds the long-gap recall domain.
    static Corpus standard();

    [[nodiscard]] const Domain& domain(const std::string& id) const;
    [[nodiscard]] const Mixture& mixture(const std::string& name) const;
    /// Total weight of sft-tagged domains.
    [[nodiscard]] double sft_weight(const std::string& mixture_name) const;
    /// Weights non-negative, summing to one, domains known.
    void validate() const;
};

struct Batch {
    TokenBlock inputs;
    std::vector<std::int32_t> targets;   // [batch*seq], next token
    std::vector<std::uint8_t> answer;    // mask over targets
    std::vector<std::string> domains;    // one per sequence
    std::uint64_t hash = 0;              // FNV-1a over inputs and targets
};

/// Fills `batch` sequences of `seq_len` (+1 for the shifted targets).
/// Sequence i's domain and documents depend only on (seed, stream, key, i).
Batch make_batch(const Corpus& corpus, const std::string& mixture, Stream stream, std::uint64_t seed,
                 std::uint64_t key, std::size_t batch, std::size_t seq_len);

/// Training batch for `step`: shape, mixture and context from the plan.
Batch sample_batch(std::int64_t step, const PhasePlan& plan, const Corpus& corpus, std::uint64_t seed);

/// Held-out block `index` of one mixture (or single domain when `mixture`
/// names a domain prefixed with "domain:").
Batch heldout_batch(const Corpus& corpus, const std::string& mixture, std::uint64_t seed, std::uint64_t index,
                    std::size_t batch, std::size_t seq_len);

struct ModelView {
    const Params* params;
    const ModelConfig* config;
    ForwardScales scales;
    RopeTable* rope;
};

struct EvalResult {
    double mean_nll = 0.0;
    double answer_nll = 0.0;  // NaN when no answer tokens were scored
    std::size_t tokens = 0;
    std::size_t answer_tokens = 0;
};

/// Mean NLL over a batch without recording a graph. When window > 0, each
/// sequence is cut into independent chunks of at most `window` tokens, so
/// no prediction sees further back than the window.
EvalResult evaluate(const ModelView& model, const Batch& batch, std::size_t window = 0);

/// exp(mean NLL) over `blocks` held-out batches.
double heldout_perplexity(const ModelView& model, const Corpus& corpus, const std::string& mixture,
                          std::uint64_t seed, std::size_t blocks, std::size_t batch, std::size_t seq_len);

/// Length-prefixed records: u32 token count, then int32 tokens.
void dump_corpus(const std::filesystem::path& path, const Corpus& corpus, const PhasePlan& plan, std::uint64_t seed,
                 std::size_t sequences);
std::vector<std::vector<std::int32_t>> read_corpus_dump(const std::filesystem::path& path);

}  // namespace wsdlab
