#include <gtest/gtest.h>

#include "fig2_fixture.hpp"
#include "genrec/dataset.hpp"
#include "genrec/error.hpp"
#include "test_util.hpp"

namespace genrec {
namespace {

class EncodeTest : public ::testing::Test {
 protected:
  Catalog catalog = testing::pinocchio_catalog();
  Tokenizer tokenizer = testing::corpus_tokenizer(catalog, 400);
  PromptTemplate tmpl = default_template_bank()[0];
  SplitExample example{"u", testing::pinocchio_history(), "m7"};
};

TEST_F(EncodeTest, BosTitleEos) {
  const auto e = encode_example(example, catalog, tmpl, tokenizer, 256);
  EXPECT_EQ(e.tokens.front(), kBosToken);
  EXPECT_EQ(e.tokens.back(), kEosToken);
  EXPECT_EQ(e.history_used, 7u);
  const std::vector<TokenId> title(e.tokens.begin() + static_cast<std::ptrdiff_t>(e.target_start),
                                   e.tokens.end() - 1);
  EXPECT_EQ(tokenizer.decode(title), "In the Line of Fire (1993)");
}

TEST_F(EncodeTest, TruncationDropsOldestFirst) {
  const auto full = encode_example(example, catalog, tmpl, tokenizer, 256);
  const std::size_t limit = full.tokens.size() - 10;
  const auto cut = encode_example(example, catalog, tmpl, tokenizer, limit);
  EXPECT_LE(cut.tokens.size(), limit);
  EXPECT_LT(cut.history_used, 7u);
  EXPECT_GE(cut.history_used, 1u);
  const std::string text = tokenizer.decode(cut.tokens);
  EXPECT_EQ(text.find("Pinocchio"), std::string::npos);
  EXPECT_NE(text.find("Quiz Show (1994)"), std::string::npos);
  // Keeping one more title would not fit.
  SplitExample more = example;
  more.history.assign(example.history.end() - static_cast<std::ptrdiff_t>(cut.history_used + 1),
                      example.history.end());
  EXPECT_GT(encode_example(more, catalog, tmpl, tokenizer, 256).tokens.size(), limit);
}

TEST_F(EncodeTest, ImpossibleLengthIsError) {
  EXPECT_THROW(encode_example(example, catalog, tmpl, tokenizer, 20), ContractError);
}

TEST_F(EncodeTest, PromptEndsAtResponseHeaderAndReservesRoom) {
  const auto p = encode_prompt(example.history, catalog, tmpl, tokenizer, 256, 0);
  const auto e = encode_example(example, catalog, tmpl, tokenizer, 256);
  ASSERT_EQ(p.size(), e.target_start);
  EXPECT_TRUE(std::equal(p.begin(), p.end(), e.tokens.begin()));
  const auto short_p = encode_prompt(example.history, catalog, tmpl, tokenizer, p.size() + 5, 20);
  EXPECT_LE(short_p.size() + 20, p.size() + 5);
}

TEST_F(EncodeTest, TrainingAndInferenceCutTheSamePrompt) {
  const std::size_t reserve = title_reserve(catalog, tokenizer);
  const auto full = encode_prompt(example.history, catalog, tmpl, tokenizer, 1024, reserve);
  for (std::size_t limit = full.size() + reserve; limit > reserve + 20; limit -= 3) {
    std::vector<TokenId> p;
    try {
      p = encode_prompt(example.history, catalog, tmpl, tokenizer, limit, reserve);
    } catch (const ContractError&) {
      break;
    }
    const auto e = encode_example(example, catalog, tmpl, tokenizer, limit, reserve);
    ASSERT_EQ(p.size(), e.target_start) << limit;
    EXPECT_TRUE(std::equal(p.begin(), p.end(), e.tokens.begin())) << limit;
    EXPECT_LE(e.tokens.size(), limit);
  }
}

TEST_F(EncodeTest, TitleReserveCoversLongestTitlePlusEnd) {
  std::size_t longest = 0;
  for (const auto& [id, title] : catalog.entries()) {
    longest = std::max(longest, tokenizer.encode(title).size());
  }
  EXPECT_EQ(title_reserve(catalog, tokenizer), longest + 1);
}

TEST_F(EncodeTest, BatchPadsAndMasksOutputRegion) {
  const auto a = encode_example(example, catalog, tmpl, tokenizer, 256);
  SplitExample shorter{"v", {"m0"}, "m1"};
  const auto b = encode_example(shorter, catalog, tmpl, tokenizer, 256);
  const std::vector<const EncodedExample*> members = {&a, &b};
  const Batch batch = make_batch(members);
  EXPECT_EQ(batch.seq, a.tokens.size());
  for (std::size_t t = 0; t < batch.seq; ++t) {
    const bool in_a = t >= a.target_start;
    const bool in_b = t >= b.target_start && t < b.tokens.size();
    EXPECT_EQ(batch.loss_mask[t], in_a ? 1 : 0);
    EXPECT_EQ(batch.loss_mask[batch.seq + t], in_b ? 1 : 0);
    if (t >= b.tokens.size()) EXPECT_EQ(batch.tokens[batch.seq + t], kPadToken);
  }
  EXPECT_EQ(batch.masked_count(), (a.tokens.size() - a.target_start) + (b.tokens.size() - b.target_start));
}

TEST(MakeBatch, EmptyIsError) {
  EXPECT_THROW(make_batch({}), ContractError);
}

}  // namespace
}  // namespace genrec
