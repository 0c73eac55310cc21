// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "unit/helpers.hpp"
#include "wsdlab/data.hpp"
#include "wsdlab/error.hpp"
#include "wsdlab/mup.hpp"

using namespace wsdlab;

namespace {

std::string text_of(const Document& d) {
    return detokenize(d.tokens);
}

std::string answer_of(const Document& d) {
    std::vector<std::int32_t> ids;
    for (std::size_t i = 0; i < d.tokens.size(); ++i) {
        if (d.answer[i]) {
            ids.push_back(d.tokens[i]);
        }
    }
    return detokenize(ids);
}

}  // namespace

TEST(Tokenizer, RoundTripsBytes) {
    std::string all;
    for (int c = 0; c < 256; ++c) {
        all.push_back(static_cast<char>(c));
    }
    EXPECT_EQ(detokenize(tokenize(all)), all);
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_TRUE(detokenize(std::vector<std::int32_t>{}).empty());
    EXPECT_EQ(detokenize(std::vector<std::int32_t>{kBos, 'h', 'i', kEos}), "hi");
    EXPECT_THROW((void)detokenize(std::vector<std::int32_t>{258}), IndexError);
    EXPECT_THROW((void)detokenize(std::vector<std::int32_t>{-1}), IndexError);
    EXPECT_EQ(kByteVocab, 258u);
}

TEST(Corpus, GeneratorsArePureAndWellFormed) {
    const Corpus c = Corpus::standard();
    for (const auto& d : c.domains) {
        const Document a = generate(d, 5, 17);
        const Document b = generate(d, 5, 17);
        EXPECT_EQ(a.tokens, b.tokens) << d.id;
        EXPECT_NE(a.tokens, generate(d, 5, 18).tokens) << d.id;
        EXPECT_EQ(a.tokens.front(), kBos);
        EXPECT_EQ(a.tokens.back(), kEos);
        EXPECT_EQ(a.tokens.size(), a.answer.size());
    }
}

TEST(Corpus, ArithmeticAnswersAreCorrect) {
    const Corpus c = Corpus::standard();
    for (const char* id : {"math", "sft_math"}) {
        for (std::uint64_t i = 0; i < 200; ++i) {
            const Document d = generate(c.domain(id), 3, i);
            const std::string t = text_of(d);
            const auto eq = t.find('=');
            const auto op = t.find_first_of("+-", 1);
            const long x = std::stol(t.substr(0, op));
            const long y = std::stol(t.substr(op + 1, eq - op - 1));
            const long z = t[op] == '+' ? x + y : x - y;
            EXPECT_EQ(answer_of(d), std::to_string(z)) << t;
            EXPECT_EQ(t.substr(eq + 1), std::to_string(z));
            if (std::string(id) == "sft_math") {
                EXPECT_EQ(t[op], '+');
                EXPECT_LE(x, 99);
            }
        }
    }
}

TEST(Corpus, RecallAnswerIsTheStoredValue) {
    const Corpus c = Corpus::standard();
    for (const char* id : {"sft_recall", "sft_recall_long"}) {
        for (std::uint64_t i = 0; i < 100; ++i) {
            const Document d = generate(c.domain(id), 4, i);
            const std::string t = text_of(d);
            const auto q = t.rfind('?');
            const std::string key = t.substr(q + 1, 2);
            const auto stored = t.find(key + "=");
            ASSERT_LT(stored, q);
            EXPECT_EQ(answer_of(d), t.substr(stored + 3, 2)) << t;
            // The key appears exactly once before the query.
            EXPECT_EQ(t.find(key + "=", stored + 1), q + 1);
            if (std::string(id) == "sft_recall_long") {
                EXPECT_GT(q - stored, 128u);
            }
        }
    }
}

TEST(Corpus, CopyAnswerRepeatsThePayload) {
    const Corpus c = Corpus::standard();
    const Document d = generate(c.domain("sft_copy"), 1, 2);
    const std::string t = text_of(d);
    const auto bar = t.find('|');
    EXPECT_EQ(t.substr(0, bar), answer_of(d));
}

TEST(Corpus, MixtureWeights) {
    const Corpus c = Corpus::standard();
    EXPECT_DOUBLE_EQ(c.sft_weight("decay"), 0.669);
    EXPECT_DOUBLE_EQ(c.sft_weight("long_context"), 0.669);
    EXPECT_EQ(c.sft_weight("stable"), 0.0);
    Corpus bad = c;
    bad.mixtures["stable"].weights[0].second = 0.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_THROW((void)c.mixture("nope"), ConfigError);
}

TEST(Batches, DeterministicAndShaped) {
    const Corpus c = Corpus::standard();
    const PhasePlan plan = build_plan(PlanSpec::desk(0.0054));
    const Batch a = sample_batch(500, plan, c, 7);
    const Batch b = sample_batch(500, plan, c, 7);
    EXPECT_EQ(a.inputs.tokens, b.inputs.tokens);
    EXPECT_EQ(a.hash, b.hash);
    EXPECT_NE(a.hash, sample_batch(501, plan, c, 7).hash);
    EXPECT_NE(a.hash, sample_batch(500, plan, c, 8).hash);
    EXPECT_EQ(a.inputs.batch, 4u);
    EXPECT_EQ(a.inputs.seq, 128u);
    ASSERT_EQ(a.targets.size(), 4u * 128u);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t t = 0; t + 1 < 128; ++t) {
            EXPECT_EQ(a.targets[r * 128 + t], a.inputs.tokens[r * 128 + t + 1]);
        }
    }
    const Batch lc = sample_batch(plan.phase(PhaseId::long_context).start, plan, c, 7);
    EXPECT_EQ(lc.inputs.seq, 256u);
}

TEST(Batches, DecaySftFractionMatchesMixture) {
    const Corpus c = Corpus::standard();
    const Batch big = make_batch(c, "decay", Stream::train, 11, 0, 10000, 4);
    std::size_t sft = 0;
    for (const auto& id : big.domains) {
        sft += c.domain(id).quality == Quality::sft ? 1 : 0;
    }
    EXPECT_NEAR(static_cast<double>(sft) / 10000.0, 0.669, 0.01);

    const Batch stable = make_batch(c, "stable", Stream::train, 11, 0, 2000, 4);
    for (const auto& id : stable.domains) {
        EXPECT_EQ(c.domain(id).quality, Quality::pretrain);
    }
}

TEST(Batches, ReblendTakesEffectImmediately) {
    const Corpus c = Corpus::standard();
    const PhasePlan plan = build_plan(PlanSpec::desk(0.0054));
    const std::int64_t d = plan.decay_start();
    auto sft_in = [&](std::int64_t step) {
        std::size_t n = 0;
        for (const auto& id : sample_batch(step, plan, c, 2).domains) {
            n += c.domain(id).quality == Quality::sft ? 1 : 0;
        }
        return n;
    };
    EXPECT_EQ(sft_in(d - 1), 0u);
    EXPECT_EQ(sft_in(d - 2), 0u);
    EXPECT_GT(sft_in(d) + sft_in(d + 1), 0u);
}

TEST(Batches, HeldoutStreamIsDisjoint) {
    const Corpus c = Corpus::standard();
    std::set<std::vector<std::int32_t>> train;
    for (std::uint64_t k = 0; k < 50; ++k) {
        const Batch b = make_batch(c, "domain:web", Stream::train, 3, k, 4, 32);
        for (std::size_t r = 0; r < 4; ++r) {
            train.emplace(b.inputs.tokens.begin() + r * 32, b.inputs.tokens.begin() + (r + 1) * 32);
        }
    }
    for (std::uint64_t k = 0; k < 50; ++k) {
        const Batch b = heldout_batch(c, "domain:web", 3, k, 4, 32);
        for (std::size_t r = 0; r < 4; ++r) {
            EXPECT_FALSE(train.contains({b.inputs.tokens.begin() + r * 32, b.inputs.tokens.begin() + (r + 1) * 32}));
        }
    }
}

TEST(Eval, UntrainedModelOnNoiseIsNearUniform) {
    ModelConfig mc;
    mc.d_model = 64;
    mc.seq_len = 64;
    const auto pm = parameterize(mc, MuPConfig{}, 1);
    RopeTable rope(mc.d_head(), mc.rope_base);
    const ModelView v{&pm.params, &pm.config, pm.scales, &rope};
    const Corpus c = Corpus::standard();
    const double ppl = heldout_perplexity(v, c, "domain:noise", 5, 2, 4, 64);
    EXPECT_NEAR(ppl, 258.0, 258.0 * 0.05);
    EXPECT_EQ(ppl, heldout_perplexity(v, c, "domain:noise", 5, 2, 4, 64));
}

TEST(Eval, WindowedEvaluationChunksSequences) {
    ModelConfig mc;
    mc.d_model = 32;
    mc.seq_len = 64;
    const auto pm = parameterize(mc, MuPConfig{.base_width = 32}, 2);
    RopeTable rope(mc.d_head(), mc.rope_base);
    const ModelView v{&pm.params, &pm.config, pm.scales, &rope};
    const Corpus c = Corpus::standard();
    const Batch b = make_batch(c, "domain:sft_recall", Stream::heldout, 1, 0, 2, 64);
    const EvalResult full = evaluate(v, b);
    EXPECT_EQ(full.tokens, 128u);
    EXPECT_GT(full.answer_tokens, 0u);
    const EvalResult same = evaluate(v, b, 64);
    EXPECT_EQ(full.mean_nll, same.mean_nll);
    const EvalResult chunked = evaluate(v, b, 16);
    EXPECT_EQ(chunked.tokens, 128u);
    EXPECT_NE(chunked.mean_nll, full.mean_nll);
    EXPECT_THROW((void)evaluate(v, b, 24), ConfigError);
}

TEST(Dump, RoundTripsRecords) {
    const Corpus c = Corpus::standard();
    const PhasePlan plan = build_plan(PlanSpec::desk(0.0054));
    const auto path = std::filesystem::temp_directory_path() / "wsdlab_test_corpus.bin";
    dump_corpus(path, c, plan, 4, 10);
    const auto records = read_corpus_dump(path);
    ASSERT_EQ(records.size(), 10u);
    const Batch b0 = sample_batch(0, plan, c, 4);
    EXPECT_EQ(records[0].size(), 129u);
    EXPECT_TRUE(std::equal(b0.inputs.tokens.begin(), b0.inputs.tokens.begin() + 128, records[0].begin()));
    EXPECT_EQ(records[0][128], b0.targets[127]);
    std::filesystem::remove(path);
}
