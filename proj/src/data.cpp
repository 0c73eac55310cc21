// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "wsdlab/error.hpp"
#include "wsdlab/rng.hpp"

namespace wsdlab {

namespace {

struct Builder {
    Document doc;

    void push(std::int32_t token, bool answer = false) {
        doc.tokens.push_back(token);
        doc.answer.push_back(answer ? 1 : 0);
    }
    void text(std::string_view s, bool answer = false) {
        for (unsigned char ch : s) {
            push(ch, answer);
        }
    }
};

std::size_t draw_len(KeyedRng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

std::string draw_bytes(KeyedRng& rng, const Domain& d, std::size_t n) {
    std::string s(n, '\0');
    for (auto& ch : s) {
        ch = static_cast<char>(d.alphabet_lo + rng.below(d.alphabet_size));
    }
    return s;
}

std::string draw_key(KeyedRng& rng) {
    return {static_cast<char>('a' + rng.below(26)), static_cast<char>('a' + rng.below(26))};
}

std::string draw_value(KeyedRng& rng) {
    return {static_cast<char>('0' + rng.below(10)), static_cast<char>('0' + rng.below(10))};
}

void gen_arithmetic(Builder& b, KeyedRng& rng, const Domain& d) {
    const auto x = static_cast<std::int64_t>(rng.below(d.max_operand + 1ull));
    const auto y = static_cast<std::int64_t>(rng.below(d.max_operand + 1ull));
    const bool minus = d.subtract && rng.below(2) == 1;
    const std::int64_t z = minus ? x - y : x + y;
    b.text(std::to_string(x) + (minus ? "-" : "+") + std::to_string(y) + "=");
    b.text(std::to_string(z), true);
}

void gen_copy(Builder& b, KeyedRng& rng, const Domain& d) {
    const std::string payload = draw_bytes(rng, d, draw_len(rng, d.min_len, d.max_len));
    b.text(payload);
    b.text("|");
    b.text(payload, true);
}

void gen_kv_recall(Builder& b, KeyedRng& rng, const Domain& d) {
    const std::string key = draw_key(rng);
    const std::string value = draw_value(rng);
    auto filler = [&] {
        std::string k = draw_key(rng);
        while (k == key) {
            k = draw_key(rng);
        }
        return k + "=" + draw_value(rng) + ";";
    };
    const std::string target = key + "=" + value + ";";
    if (d.min_gap == 0) {
        const std::size_t pairs = std::max<std::size_t>(d.pairs, 1);
        const std::size_t slot = rng.below(pairs);
        for (std::size_t i = 0; i < pairs; ++i) {
            b.text(i == slot ? target : filler());
        }
    } else {
        b.text(target);
        std::size_t gap = 0;
        while (gap < d.min_gap) {
            const std::string f = filler();
            b.text(f);
            gap += f.size();
        }
    }
    b.text("?" + key + "=");
    b.text(value, true);
}

}  // namespace

std::vector<std::int32_t> tokenize(std::string_view bytes) {
    std::vector<std::int32_t> ids;
    ids.reserve(bytes.size());
    for (unsigned char ch : bytes) {
        ids.push_back(ch);
    }
    return ids;
}

std::string detokenize(std::span<const std::int32_t> ids) {
    std::string out;
    out.reserve(ids.size());
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= kByteVocab) {
            throw IndexError("detokenize: id " + std::to_string(id) + " outside the vocabulary");
        }
        if (id < 256) {
            out.push_back(static_cast<char>(id));
        }
    }
    return out;
}

const char* generator_name(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::uniform_bytes: return "uniform-bytes";
        case GeneratorKind::arithmetic: return "arithmetic";
        case GeneratorKind::copy: return "copy";
        case GeneratorKind::kv_recall: return "kv-recall";
    }
    return "?";
}

const char* quality_name(Quality q) {
    return q == Quality::pretrain ? "pretrain" : "sft";
}

Document generate(const Domain& domain, std::uint64_t seed, std::uint64_t index) {
    KeyedRng rng{seed, fnv1a(domain.id), index};
    Builder b;
    b.push(kBos);
    switch (domain.kind) {
        case GeneratorKind::uniform_bytes:
            b.text(draw_bytes(rng, domain, draw_len(rng, domain.min_len, domain.max_len)));
            break;
        case GeneratorKind::arithmetic: gen_arithmetic(b, rng, domain); break;
        case GeneratorKind::copy: gen_copy(b, rng, domain); break;
        case GeneratorKind::kv_recall: gen_kv_recall(b, rng, domain); break;
    }
    b.push(kEos);
    return std::move(b.doc);
}

// ---------------------------------------------------------------------------
// Corpus

Corpus Corpus::standard() {
    Corpus c;
    auto add = [&](Domain d) { c.domains.push_back(std::move(d)); };
    // Printable ASCII, so every byte the structured domains use is seen in
    // pretraining.
    add({.id = "web", .kind = GeneratorKind::uniform_bytes, .alphabet_lo = ' ', .alphabet_size = 95, .min_len = 24,
         .max_len = 64});
    add({.id = "math", .kind = GeneratorKind::arithmetic, .max_operand = 999, .subtract = true});
    add({.id = "repeat", .kind = GeneratorKind::copy, .alphabet_lo = 'a', .alphabet_size = 26, .min_len = 8,
         .max_len = 24});
    add({.id = "sft_copy", .kind = GeneratorKind::copy, .quality = Quality::sft, .alphabet_lo = 'A',
         .alphabet_size = 8, .min_len = 4, .max_len = 12});
    add({.id = "sft_recall", .kind = GeneratorKind::kv_recall, .quality = Quality::sft, .pairs = 4});
    add({.id = "sft_math", .kind = GeneratorKind::arithmetic, .quality = Quality::sft, .max_operand = 99,
         .subtract = false});
    add({.id = "sft_recall_long", .kind = GeneratorKind::kv_recall, .quality = Quality::sft, .min_gap = 160});
    add({.id = "noise", .kind = GeneratorKind::uniform_bytes, .min_len = 64, .max_len = 64});

    c.mixtures["stable"] = {"stable", {{"web", 0.4}, {"math", 0.3}, {"repeat", 0.3}}};
    c.mixtures["decay"] = {"decay",
                           {{"web", 0.131},
                            {"math", 0.1},
                            {"repeat", 0.1},
                            {"sft_copy", 0.223},
                            {"sft_recall", 0.223},
                            {"sft_math", 0.223}}};
    c.mixtures["long_context"] = {"long_context",
                                  {{"web", 0.131},
                                   {"math", 0.1},
                                   {"repeat", 0.1},
                                   {"sft_copy", 0.1},
                                   {"sft_recall", 0.1},
                                   {"sft_math", 0.1},
                                   {"sft_recall_long", 0.369}}};
    c.validate();
    return c;
}

const Domain& Corpus::domain(const std::string& id) const {
    for (const auto& d : domains) {
        if (d.id == id) {
            return d;
        }
    }
    throw ConfigError("corpus: unknown domain '" + id + "'");
}

const Mixture& Corpus::mixture(const std::string& name) const {
    auto it = mixtures.find(name);
    if (it == mixtures.end()) {
        throw ConfigError("corpus: unknown mixture '" + name + "'");
    }
    return it->second;
}

double Corpus::sft_weight(const std::string& mixture_name) const {
    double w = 0.0;
    for (const auto& [id, weight] : mixture(mixture_name).weights) {
        if (domain(id).quality == Quality::sft) {
            w += weight;
        }
    }
    return w;
}

void Corpus::validate() const {
    for (const auto& d : domains) {
        if (d.id.empty() || d.alphabet_size == 0 || d.alphabet_lo + d.alphabet_size > 256 || d.min_len > d.max_len) {
            throw ConfigError("corpus: domain '" + d.id + "' is malformed");
        }
    }
    for (const auto& [name, m] : mixtures) {
        double total = 0.0;
        for (const auto& [id, weight] : m.weights) {
            (void)domain(id);
            if (!(weight >= 0.0)) {
                throw ConfigError("corpus: mixture '" + name + "' has a negative weight");
            }
            total += weight;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw ConfigError("corpus: mixture '" + name + "' weights sum to " + std::to_string(total));
        }
    }
}

// ---------------------------------------------------------------------------
// Batches

Batch make_batch(const Corpus& corpus, const std::string& mixture, Stream stream, std::uint64_t seed,
                 std::uint64_t key, std::size_t batch, std::size_t seq_len) {
    if (batch == 0 || seq_len == 0) {
        throw ConfigError("make_batch: empty batch shape");
    }
    const Domain* single = nullptr;
    const Mixture* mix = nullptr;
    if (mixture.starts_with("domain:")) {
        single = &corpus.domain(mixture.substr(7));
    } else {
        mix = &corpus.mixture(mixture);
    }
    const auto stream_tag = static_cast<std::uint64_t>(stream);
    const std::uint64_t doc_seed = splitmix64(seed ^ splitmix64(stream_tag));

    Batch out;
    out.inputs.batch = batch;
    out.inputs.seq = seq_len;
    out.inputs.tokens.reserve(batch * seq_len);
    out.targets.reserve(batch * seq_len);
    out.answer.reserve(batch * seq_len);
    std::vector<std::int32_t> seq;
    std::vector<std::uint8_t> ans;
    for (std::size_t i = 0; i < batch; ++i) {
        KeyedRng rng{seed, stream_tag, key, i};
        const Domain* dom = single;
        if (!dom) {
            const double u = rng.uniform();
            double acc = 0.0;
            for (const auto& [id, w] : mix->weights) {
                acc += w;
                dom = &corpus.domain(id);
                if (u < acc) {
                    break;
                }
            }
        }
        out.domains.push_back(dom->id);
        seq.clear();
        ans.clear();
        for (std::uint64_t k = 0; seq.size() < seq_len + 1; ++k) {
            const std::uint64_t index = KeyedRng{stream_tag, key, i, k}.next_u64();
            const Document doc = generate(*dom, doc_seed, index);
            seq.insert(seq.end(), doc.tokens.begin(), doc.tokens.end());
            ans.insert(ans.end(), doc.answer.begin(), doc.answer.end());
        }
        out.inputs.tokens.insert(out.inputs.tokens.end(), seq.begin(), seq.begin() + seq_len);
        out.targets.insert(out.targets.end(), seq.begin() + 1, seq.begin() + seq_len + 1);
        out.answer.insert(out.answer.end(), ans.begin() + 1, ans.begin() + seq_len + 1);
    }
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto mix_in = [&h](const std::vector<std::int32_t>& v) {
        h = fnv1a({reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::int32_t)}, h);
    };
    mix_in(out.inputs.tokens);
    mix_in(out.targets);
    out.hash = h;
    return out;
}

Batch sample_batch(std::int64_t step, const PhasePlan& plan, const Corpus& corpus, std::uint64_t seed) {
    const PhaseInfo info = phase_at(step, plan);
    return make_batch(corpus, info.mixture, Stream::train, seed, static_cast<std::uint64_t>(step),
                      info.batch_sequences, seq_len_at(step, plan));
}

Batch heldout_batch(const Corpus& corpus, const std::string& mixture, std::uint64_t seed, std::uint64_t index,
                    std::size_t batch, std::size_t seq_len) {
    return make_batch(corpus, mixture, Stream::heldout, seed, index, batch, seq_len);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const ModelView& model, const Batch& batch, std::size_t window) {
    NoGradGuard no_grad;
    const std::size_t seq = batch.inputs.seq;
    TokenBlock block = batch.inputs;
    if (window > 0 && window < seq) {
        if (seq % window != 0) {
            throw ConfigError("evaluate: window must divide the sequence length");
        }
        block.batch = batch.inputs.batch * (seq / window);
        block.seq = window;
    }
    const Tensor logits = forward(*model.params, *model.config, model.scales, *model.rope, block);
    const std::vector<double> nll = row_nll(logits, batch.targets);
    EvalResult r;
    double total = 0.0;
    double answer_total = 0.0;
    for (std::size_t i = 0; i < nll.size(); ++i) {
        total += nll[i];
        if (batch.answer[i]) {
            answer_total += nll[i];
            ++r.answer_tokens;
        }
    }
    r.tokens = nll.size();
    r.mean_nll = total / static_cast<double>(r.tokens);
    r.answer_nll = r.answer_tokens ? answer_total / static_cast<double>(r.answer_tokens)
                                   : std::numeric_limits<double>::quiet_NaN();
    return r;
}

double heldout_perplexity(const ModelView& model, const Corpus& corpus, const std::string& mixture,
                          std::uint64_t seed, std::size_t blocks, std::size_t batch, std::size_t seq_len) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
        const EvalResult r = evaluate(model, heldout_batch(corpus, mixture, seed, b, batch, seq_len));
        total += r.mean_nll * static_cast<double>(r.tokens);
        tokens += r.tokens;
    }
    return std::exp(total / static_cast<double>(tokens));
}

// ---------------------------------------------------------------------------
// Dump

void dump_corpus(const std::filesystem::path& path, const Corpus& corpus, const PhasePlan& plan, std::uint64_t seed,
                 std::size_t sequences) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("dump_corpus: cannot open " + path.string());
    }
    std::size_t written = 0;
    for (std::int64_t step = 0; written < sequences && step < plan.total_steps(); ++step) {
        const Batch b = sample_batch(step, plan, corpus, seed);
        for (std::size_t i = 0; i < b.inputs.batch && written < sequences; ++i, ++written) {
            const std::size_t T = b.inputs.seq;
            std::vector<std::int32_t> record(b.inputs.tokens.begin() + i * T, b.inputs.tokens.begin() + (i + 1) * T);
            record.push_back(b.targets[(i + 1) * T - 1]);
            const auto n = static_cast<std::uint32_t>(record.size());
            out.write(reinterpret_cast<const char*>(&n), sizeof(n));
            out.write(reinterpret_cast<const char*>(record.data()), static_cast<std::streamsize>(n * sizeof(std::int32_t)));
        }
    }
    if (!out) {
        throw FormatError("dump_corpus: write failed");
    }
}

std::vector<std::vector<std::int32_t>> read_corpus_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("read_corpus_dump: cannot open " + path.string());
    }
    std::vector<std::vector<std::int32_t>> records;
    std::uint32_t n = 0;
    while (in.read(reinterpret_cast<char*>(&n), sizeof(n))) {
        std::vector<std::int32_t> r(n);
        in.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(n * sizeof(std::int32_t)));
        if (!in) {
            throw FormatError("read_corpus_dump: truncated record");
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace wsdlab
