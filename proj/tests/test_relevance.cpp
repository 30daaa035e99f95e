#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sar/logmath.hpp"
#include "sar/relevance.hpp"
#include "sar/rouge.hpp"
#include "test_support.hpp"

using namespace sar;
using sar::testing::make_generation;
using sar::testing::Random;

TEST(TextWithoutToken, SplicesByPosition) {
  const auto g = make_generation({"density", " of", " an", " object"}, {-1, -1, -1, -1});
  EXPECT_EQ(text_without_token(g, 0), " of an object");
  EXPECT_EQ(text_without_token(g, 1), "density an object");
  EXPECT_EQ(text_without_token(g, 3), "density of an");
  EXPECT_EQ(join_prompt("Q: x? A:", "y", " "), "Q: x? A: y");
  EXPECT_EQ(join_prompt("P", "y", "\n"), "P\ny");
}

TEST(TokenRelevance, SingleTokenRemovesWholeAnswer) {
  const std::string prompt = "Q: capital of France? A:";
  const auto g = make_generation({"Paris"}, {-0.2});
  auto lexical = SimilarityProvider::lexical();
  const auto full = rouge_tokens(prompt + " Paris");
  const auto reduced = rouge_tokens(prompt + " ");
  const double g_oracle = oracle::f1_from_lcs(oracle::lcs_by_enumeration(reduced, full),
                                              full.size(), reduced.size());
  EXPECT_DOUBLE_EQ(token_relevance(g, 0, prompt, lexical), 1.0 - g_oracle);
  EXPECT_GT(token_relevance(g, 0, prompt, lexical), 0.0);
}

TEST(TokenRelevance, DuplicateTokensGetEqualRelevance) {
  const auto g = make_generation({"a", " a"}, {-1, -2});
  auto lexical = SimilarityProvider::lexical();
  EXPECT_EQ(token_relevance(g, 0, "Q: letter? A:", lexical),
            token_relevance(g, 1, "Q: letter? A:", lexical));
}

// Lexical overlap cannot tell content words from function words (every
// single-word deletion gives the same F1), so the ordering is checked against
// a precomputed table shaped like a sentence-similarity model's output.
TEST(TokenRelevance, ContentWordOutranksFunctionWord) {
  const std::string prompt = "What is the ratio of the mass of an object to its volume?";
  const auto g = make_generation({"density", " of", " an", " object"}, {-0.3, -0.2, -0.4, -0.1});
  const std::string full = join_prompt(prompt, g.surface(), " ");
  const std::vector<double> kept = {0.31, 0.96, 0.97, 0.74};
  std::map<std::string, double> sims;
  for (std::size_t i = 0; i < g.size(); ++i) {
    sims[pair_key(full, join_prompt(prompt, text_without_token(g, i), " "))] = kept[i];
  }
  auto provider = SimilarityProvider::precomputed(sims);
  const double r_density = token_relevance(g, 0, prompt, provider);
  const double r_of = token_relevance(g, 1, prompt, provider);
  EXPECT_GT(r_density, r_of);
  EXPECT_NEAR(r_density, 0.69, 1e-12);

  const auto raw = raw_token_relevances(g, prompt, provider);
  const auto top = std::max_element(raw.begin(), raw.end()) - raw.begin();
  EXPECT_EQ(top, 0);
}

TEST(TokenRelevance, BatchedMatchesSingletonAndRange) {
  Random rng(21);
  auto lexical = SimilarityProvider::lexical();
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = rng.generation();
    const std::string prompt = "Q: " + rng.words(4) + "? A:";
    const auto raw = raw_token_relevances(g, prompt, lexical);
    ASSERT_EQ(raw.size(), g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_EQ(raw[i], token_relevance(g, i, prompt, lexical));
      EXPECT_GE(raw[i], 0.0);
      EXPECT_LE(raw[i], 1.0);
    }
    const auto v = normalized_token_relevance(g, prompt, lexical);
    EXPECT_EQ(v.raw, raw);
    EXPECT_NEAR(std::accumulate(v.normalized.begin(), v.normalized.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(TokenRelevance, JoinerIsConfigurable) {
  const auto g = make_generation({"x", " y"}, {-1, -1});
  std::map<std::string, double> sims;
  sims[pair_key("P\nx y", "P\n y")] = 0.5;
  sims[pair_key("P\nx y", "P\nx")] = 0.25;
  auto provider = SimilarityProvider::precomputed(sims);
  RelevanceOptions opts;
  opts.joiner = "\n";
  EXPECT_EQ(raw_token_relevances(g, "P", provider, opts), (std::vector<double>{0.5, 0.75}));
}

TEST(NormalizeTokenRelevance, Examples) {
  auto a = normalize_token_relevance({0.2, 0.2, 0.6});
  EXPECT_DOUBLE_EQ(a.normalized[0], 0.2);
  EXPECT_DOUBLE_EQ(a.normalized[2], 0.6);
  EXPECT_FALSE(a.uniform_fallback);

  auto b = normalize_token_relevance({0.0, 0.0});
  EXPECT_EQ(b.normalized, (std::vector<double>{0.5, 0.5}));
  EXPECT_TRUE(b.uniform_fallback);

  auto c = normalize_token_relevance({1.0, 3.0});
  EXPECT_EQ(c.normalized, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(c.raw, (std::vector<double>{1.0, 3.0}));
}

TEST(PairwiseMatrix, Examples) {
  auto lexical = SimilarityProvider::lexical();
  const std::vector<GenerationRecord> one = {make_generation({"x"}, {-1})};
  const auto m1 = pairwise_matrix(one, lexical);
  ASSERT_EQ(m1.size(), 1u);
  EXPECT_EQ(m1(0, 0), 1.0);

  const std::vector<GenerationRecord> same = {make_generation({"a", " b"}, {-1, -1}),
                                              make_generation({"a", " b"}, {-2, -2})};
  const auto m2 = pairwise_matrix(same, lexical);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(m2(i, j), 1.0);
  }

  Random rng(4);
  std::vector<GenerationRecord> three = {rng.generation(), rng.generation(), rng.generation()};
  const auto m3 = pairwise_matrix(three, lexical);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m3(i, i), 1.0);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(m3(i, j), m3(j, i));
      if (i != j) {
        EXPECT_EQ(m3(i, j), lexical_similarity(three[i].surface(), three[j].surface()));
      }
    }
  }
  EXPECT_THROW(pairwise_matrix(std::vector<GenerationRecord>{}, lexical), std::invalid_argument);
}

TEST(SentenceRelevance, Examples) {
  SimilarityMatrix one(1);
  const std::vector<double> lp1 = {-1.0};
  EXPECT_EQ(sentence_relevance(0, one, lp1), kNegInf);

  SimilarityMatrix two(2);
  two.set(0, 1, 1.0);
  const std::vector<double> lp2 = {-0.5, -2.0};
  EXPECT_DOUBLE_EQ(sentence_relevance(0, two, lp2), -2.0);

  SimilarityMatrix zero(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) zero.set(i, j, 0.0);
  }
  const std::vector<double> lp3 = {-1, -2, -3};
  for (double v : sentence_relevances(zero, lp3)) EXPECT_EQ(v, kNegInf);
}

TEST(SentenceRelevance, MatchesExtendedPrecisionSum) {
  Random rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = rng.index(2, 6);
    const auto m = rng.matrix(k, 0.1);
    const auto lps = rng.logprobs(k, -60.0);
    const auto all = sentence_relevances(m, lps);
    for (std::size_t j = 0; j < k; ++j) {
      const auto want = oracle::sentence_relevance(j, m, lps);
      if (want == 0) {
        EXPECT_EQ(all[j], kNegInf);
        continue;
      }
      EXPECT_LE(sar::testing::rel_error(all[j], static_cast<double>(log(want))), 1e-12);
    }
  }
}
