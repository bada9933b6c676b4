#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "genrec/dataset.hpp"
#include "genrec/decode.hpp"
#include "genrec/error.hpp"
#include "test_util.hpp"

namespace genrec {
namespace {

Catalog make_catalog(const std::vector<std::pair<std::string, std::string>>& entries) {
  Catalog c;
  for (const auto& [id, title] : entries) c.add(id, title);
  return c;
}

// Walks the trie depth first and collects every terminal path.
void collect(const TitleTrie& trie, std::size_t node, std::vector<TokenId>& path,
             std::vector<std::pair<std::vector<TokenId>, ItemId>>& out) {
  if (const ItemId* id = trie.terminal(node)) out.push_back({path, *id});
  for (const auto& [t, child] : trie.children(node)) {
    path.push_back(t);
    collect(trie, child, path, out);
    path.pop_back();
  }
}

TEST(TitleTrie, SharedPrefixAndTerminals) {
  const Tokenizer tok;
  const auto trie = TitleTrie::build(make_catalog({{"a", "A"}, {"b", "AB"}}), tok);
  EXPECT_EQ(trie.num_titles(), 2u);
  EXPECT_EQ(trie.num_nodes(), 3u);
  EXPECT_EQ(trie.max_depth(), 2u);
  const TokenId a = tok.encode("A")[0], b = tok.encode("B")[0];

  auto root = trie.allowed_next({});
  EXPECT_EQ(root.tokens, std::vector<TokenId>{a});
  EXPECT_FALSE(root.may_terminate);
  const std::vector<TokenId> pa = {a}, pab = {a, b}, bad = {b};
  auto mid = trie.allowed_next(pa);
  EXPECT_EQ(mid.tokens, std::vector<TokenId>{b});
  EXPECT_TRUE(mid.may_terminate);
  auto leaf = trie.allowed_next(pab);
  EXPECT_TRUE(leaf.tokens.empty());
  EXPECT_TRUE(leaf.may_terminate);
  EXPECT_THROW(trie.allowed_next(bad), ContractError);
  EXPECT_EQ(*trie.item_for("AB"), "b");
  EXPECT_EQ(trie.item_for("C"), nullptr);
}

TEST(TitleTrie, EmptyCatalogIsError) {
  EXPECT_THROW(TitleTrie::build(Catalog{}, Tokenizer{}), ContractError);
}

TEST(TitleTrie, EveryTerminalDecodesToItsTitle) {
  const auto toy = testing::load_toy("toy100");
  const auto tok = testing::corpus_tokenizer(toy.catalog, 400);
  const auto trie = TitleTrie::build(toy.catalog, tok);
  std::vector<std::pair<std::vector<TokenId>, ItemId>> paths;
  std::vector<TokenId> path;
  collect(trie, TitleTrie::kRoot, path, paths);
  ASSERT_EQ(paths.size(), toy.catalog.size());
  for (const auto& [tokens, id] : paths) EXPECT_EQ(tok.decode(tokens), toy.catalog.title(id));
}

TEST(TitleTrie, DuplicateTitleGoesToMorePopularItem) {
  const Tokenizer tok;
  const auto catalog = make_catalog({{"a", "Same"}, {"b", "Same"}, {"c", "Other"}});
  EXPECT_EQ(*TitleTrie::build(catalog, tok).item_for("Same"), "a");
  EXPECT_EQ(*TitleTrie::build(catalog, tok, {{"b", 3}, {"a", 1}}).item_for("Same"), "b");
  EXPECT_EQ(*TitleTrie::build(catalog, tok, {{"b", 2}, {"a", 2}}).item_for("Same"), "a");
  EXPECT_EQ(TitleTrie::build(catalog, tok).num_titles(), 2u);
}

// Independent scoring: full forward over prompt + title, log-softmax written
// out here, summed over title tokens and the end marker.
double oracle_log_prob(const Parameters<double>& p, const std::vector<TokenId>& prompt,
                       const std::vector<TokenId>& title) {
  std::vector<TokenId> seq = prompt;
  seq.insert(seq.end(), title.begin(), title.end());
  const auto logits = forward(p, seq, 1, seq.size());
  const std::size_t V = p.config.vocab_size;
  double total = 0.0;
  for (std::size_t i = 0; i <= title.size(); ++i) {
    const double* row_ptr = nullptr;
    std::vector<double> row(logits.row(prompt.size() - 1 + i), logits.row(prompt.size() - 1 + i) + V);
    row_ptr = row.data();
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(row_ptr[v] - mx);
    const TokenId next = i < title.size() ? title[i] : kEosToken;
    total += row_ptr[next] - mx - std::log(z);
  }
  return total;
}

TEST(Beam, MatchesExhaustiveRankingOnFiveTitles) {
  const std::vector<std::pair<std::string, std::string>> entries = {
      {"i1", "ab"}, {"i2", "abc"}, {"i3", "b"}, {"i4", "bd"}, {"i5", "ca"}};
  const auto catalog = make_catalog(entries);
  const Tokenizer tok;
  const auto trie = TitleTrie::build(catalog, tok);
  std::mt19937_64 rng(11);
  for (int model = 0; model < 50; ++model) {
    auto cfg = testing::tiny_config(tok.vocab_size());
    auto p = Parameters<double>::init(cfg, 100 + model);
    testing::randomize_adapters(p, 200 + model, 0.5);
    std::vector<TokenId> prompt = {kBosToken};
    for (int i = 0; i < 4; ++i) prompt.push_back(static_cast<TokenId>(3 + rng() % 256));

    std::vector<ScoredItem> expected;
    for (const auto& [id, title] : entries) {
      const auto t = tok.encode(title);
      const double lp = oracle_log_prob(p, prompt, t);
      expected.push_back({id, lp / static_cast<double>(t.size() + 1), lp});
    }
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
      return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
    });

    const auto got = recommend_topk(p, trie, prompt, BeamOptions{5, 64});
    ASSERT_EQ(got.items.size(), 5u);
    EXPECT_TRUE(got.warnings.empty());
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(got.items[i].item_id, expected[i].item_id) << "model " << model << " rank " << i;
      EXPECT_NEAR(got.items[i].log_prob, expected[i].log_prob, 1e-10);
      EXPECT_NEAR(got.items[i].score, expected[i].score, 1e-10);
    }
    // Exhaustive search finds the best score; any narrower beam cannot beat it.
    for (std::size_t w : {1u, 2u, 3u}) {
      const auto narrow = recommend_topk(p, trie, prompt, BeamOptions{1, w});
      ASSERT_FALSE(narrow.items.empty());
      EXPECT_LE(narrow.items[0].score, got.items[0].score + 1e-12);
    }
  }
}

TEST(Beam, SingleItemCatalogAlwaysReturnsIt) {
  const Tokenizer tok;
  const auto trie = TitleTrie::build(make_catalog({{"only", "Solo (2001)"}}), tok);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = testing::tiny_config(tok.vocab_size());
    const auto p = Parameters<float>::init(cfg, seed);
    const std::vector<TokenId> prompt = {kBosToken, 40, 41};
    const auto r = recommend_topk(p, trie, prompt, BeamOptions{1, 1});
    ASSERT_EQ(r.items.size(), 1u);
    EXPECT_EQ(r.items[0].item_id, "only");
    const auto wide = recommend_topk(p, trie, prompt, BeamOptions{5, 10});
    EXPECT_EQ(wide.items.size(), 1u);
    EXPECT_EQ(wide.warnings.size(), 1u);
  }
}

TEST(Beam, DuplicateTitlesNeverBothReturned) {
  const Tokenizer tok;
  const auto catalog = make_catalog({{"a", "Twin"}, {"b", "Twin"}, {"c", "Other"}, {"d", "Third"}});
  const auto trie = TitleTrie::build(catalog, tok, {{"b", 4}});
  const auto p = Parameters<float>::init(testing::tiny_config(tok.vocab_size()), 3);
  const std::vector<TokenId> prompt = {kBosToken, 50};
  const auto r = recommend_topk(p, trie, prompt, BeamOptions{4, 8});
  ASSERT_EQ(r.items.size(), 3u);
  for (const auto& it : r.items) EXPECT_NE(it.item_id, "a");
}

class ToyBeam : public ::testing::Test {
 protected:
  void SetUp() override {
    toy = testing::load_toy("toy100");
    tok = testing::corpus_tokenizer(toy.catalog, 400);
    trie = TitleTrie::build(toy.catalog, tok);
    auto cfg = testing::tiny_config(tok.vocab_size());
    cfg.max_len = 128;
    params = Parameters<float>::init(cfg, 5);
    testing::randomize_adapters(params, 6, 0.3);
  }
  testing::ToyData toy;
  Tokenizer tok;
  TitleTrie trie;
  Parameters<float> params;
};

TEST_F(ToyBeam, RandomPromptsGiveValidDistinctSortedItems) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenId> prompt = {kBosToken};
    const std::size_t len = 1 + rng() % 12;
    for (std::size_t i = 0; i < len; ++i) {
      prompt.push_back(static_cast<TokenId>(3 + rng() % (tok.vocab_size() - 3)));
    }
    const auto r = recommend_topk(params, trie, prompt, BeamOptions{10, 20});
    ASSERT_LE(r.items.size(), 10u);
    ASSERT_FALSE(r.items.empty());
    EXPECT_EQ(r.items.size() < 10, !r.warnings.empty());
    std::set<ItemId> seen;
    for (std::size_t i = 0; i < r.items.size(); ++i) {
      const auto& it = r.items[i];
      ASSERT_TRUE(toy.catalog.contains(it.item_id));
      ASSERT_TRUE(seen.insert(it.item_id).second);
      ASSERT_LE(std::exp(it.log_prob), 1.0);
      const auto n = trie.tokens_for(toy.catalog.title(it.item_id))->size();
      ASSERT_DOUBLE_EQ(it.score, it.log_prob / static_cast<double>(n + 1));
      if (i) ASSERT_GE(r.items[i - 1].score, it.score);
    }
  }
}

TEST_F(ToyBeam, ScoreTitleAgreesWithBeam) {
  const auto& ex = toy.split.test.front();
  const auto prompt = encode_prompt(ex.history, toy.catalog, templates_for(Domain::kMovies).front(),
                                    tok, params.config.max_len, trie.max_depth() + 1);
  const auto r = recommend_topk(params, trie, prompt, BeamOptions{5, 20});
  for (const auto& it : r.items) {
    const auto s = score_title(params, trie, prompt, toy.catalog.title(it.item_id));
    EXPECT_EQ(s.item_id, it.item_id);
    EXPECT_NEAR(s.log_prob, it.log_prob, 1e-5);
    EXPECT_NEAR(s.score, it.score, 1e-5);
  }
  EXPECT_THROW(score_title(params, trie, prompt, "Not A Title"), ContractError);
}

TEST_F(ToyBeam, TextOverloadFitsTheLongestTitle) {
  const auto& ex = toy.split.test.front();
  const auto r = recommend_topk(params, trie, tok, toy.catalog, ex.history,
                                templates_for(Domain::kMovies).front(), BeamOptions{});
  EXPECT_EQ(r.items.size(), 10u);
}

TEST_F(ToyBeam, BadOptionsAreErrors) {
  const std::vector<TokenId> prompt = {kBosToken};
  EXPECT_THROW(recommend_topk(params, trie, prompt, BeamOptions{10, 5}), ContractError);
  EXPECT_THROW(recommend_topk(params, trie, prompt, BeamOptions{0, 5}), ContractError);
  EXPECT_THROW(recommend_topk(params, trie, std::span<const TokenId>{}, BeamOptions{}),
               ContractError);
  const std::vector<TokenId> long_prompt(128, kBosToken);
  EXPECT_THROW(recommend_topk(params, trie, long_prompt, BeamOptions{}), ContractError);
}

TEST(Predictions, RoundTrip) {
  std::vector<UserPrediction> preds = {{"u1", {{"i1", -0.5, 0}, {"i2", -1.25, 0}}}, {"u2", {}}};
  std::stringstream ss;
  write_predictions(ss, preds);
  const auto back = read_predictions(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].user_id, "u1");
  EXPECT_EQ(back[0].items[1].item_id, "i2");
  EXPECT_EQ(back[0].items[1].score, -1.25);
  EXPECT_TRUE(back[1].items.empty());
}

TEST(Predictions, MalformedLineNamesTheLine) {
  std::stringstream ss("{\"user_id\":\"u\",\"items\":[]}\n{oops\n");
  try {
    read_predictions(ss, "p.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

}  // namespace
}  // namespace genrec
