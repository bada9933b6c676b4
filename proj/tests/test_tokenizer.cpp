#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "fig2_fixture.hpp"
#include "genrec/error.hpp"
#include "genrec/prompt.hpp"
#include "genrec/tokenizer.hpp"
#include "test_util.hpp"

namespace genrec {
namespace {

// Random valid UTF-8 drawn from 1- to 4-byte code points, skipping surrogates.
std::string random_utf8(std::mt19937_64& rng) {
  std::string s;
  const auto n = rng() % 24;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t cp = 0;
    switch (rng() % 4) {
      case 0: cp = static_cast<std::uint32_t>(rng() % 0x80); break;
      case 1: cp = 0x80 + static_cast<std::uint32_t>(rng() % (0x800 - 0x80)); break;
      case 2:
        do cp = 0x800 + static_cast<std::uint32_t>(rng() % (0x10000 - 0x800));
        while (cp >= 0xD800 && cp <= 0xDFFF);
        break;
      default: cp = 0x10000 + static_cast<std::uint32_t>(rng() % (0x110000 - 0x10000));
    }
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xC0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      s += static_cast<char>(0xE0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      s += static_cast<char>(0xF0 | (cp >> 18));
      s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }
  return s;
}

Tokenizer title_tokenizer(std::size_t vocab = 400) {
  std::vector<std::string> corpus(testing::kPinocchioHistoryTitles.begin(),
                                  testing::kPinocchioHistoryTitles.end());
  for (const auto& t : default_template_bank()) corpus.push_back(t.instruction_text);
  return Tokenizer::train(corpus, vocab);
}

TEST(Pretokenize, NewlinesAndSpaces) {
  // Only a space after a non-space opens a piece, so runs of spaces stay together.
  const auto p = pretokenize("ab cd\n\nx  y");
  const std::vector<std::string_view> want = {"ab", " cd", "\n", "\n", "x", "  y"};
  EXPECT_EQ(p, want);
}

TEST(TrainTokenizer, FirstMergeOnRepeatedLetter) {
  const std::vector<std::string> corpus = {"aaaa"};
  const auto t = Tokenizer::train(corpus, 260);
  ASSERT_EQ(t.merges().size(), 1u);
  EXPECT_EQ(t.token_bytes(t.merges()[0].first), "a");
  EXPECT_EQ(t.token_bytes(t.merges()[0].second), "a");
  EXPECT_EQ(t.token_bytes(259), "aa");
  EXPECT_EQ(t.encode("aaaa"), (std::vector<TokenId>{259, 259}));
}

TEST(TrainTokenizer, TieGoesToSmallerPair) {
  // "ab" and "cd" both occur twice.
  const std::vector<std::string> corpus = {"cd ab", "ab cd"};
  const auto t = Tokenizer::train(corpus, 260);
  ASSERT_EQ(t.merges().size(), 1u);
  EXPECT_EQ(t.token_bytes(259), "ab");
}

TEST(TrainTokenizer, EmptyCorpusGivesBaseVocab) {
  const auto t = Tokenizer::train({}, 8192);
  EXPECT_EQ(t.vocab_size(), kBaseVocabSize);
  EXPECT_TRUE(t.merges().empty());
}

TEST(TrainTokenizer, Deterministic) {
  EXPECT_EQ(title_tokenizer().merges(), title_tokenizer().merges());
}

TEST(TrainTokenizer, RejectsTinyVocab) {
  EXPECT_THROW(Tokenizer::train({}, 258), ContractError);
}

TEST(TrainTokenizer, NoMergeCrossesNewline) {
  const std::vector<std::string> corpus = {"x\nx\nx\nx\nx\n"};
  const auto t = Tokenizer::train(corpus, 300);
  for (std::size_t id = kBaseVocabSize; id < t.vocab_size(); ++id) {
    const auto& b = t.token_bytes(static_cast<TokenId>(id));
    EXPECT_TRUE(b.find('\n') == std::string::npos || b.size() == 1) << b;
  }
}

TEST(Encode, EmptyAndSpecials) {
  const auto t = title_tokenizer();
  EXPECT_TRUE(t.encode("").empty());
  EXPECT_EQ(t.encode("", true, true), (std::vector<TokenId>{kBosToken, kEosToken}));
}

TEST(Encode, RoundTripTitle) {
  const auto t = title_tokenizer();
  const auto ids = t.encode("Pinocchio (1940)");
  EXPECT_EQ(t.decode(ids), "Pinocchio (1940)");
  for (TokenId id : ids) EXPECT_GE(id, kFirstByteToken);
}

TEST(Encode, RoundTripRandomUtf8) {
  const auto t = title_tokenizer();
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto s = random_utf8(rng);
    const auto ids = t.encode(s);
    ASSERT_EQ(t.decode(ids), s);
    for (TokenId id : ids) ASSERT_GE(id, kFirstByteToken);
  }
}

TEST(Decode, DropsSpecialsRejectsOutOfRange) {
  const auto t = title_tokenizer();
  auto ids = t.encode("Heat", true, true);
  ids.insert(ids.begin() + 2, kPadToken);
  EXPECT_EQ(t.decode(ids), "Heat");
  const std::vector<TokenId> bad = {static_cast<TokenId>(t.vocab_size())};
  EXPECT_THROW((void)t.decode(bad), ContractError);
  const std::vector<TokenId> negative = {-1};
  EXPECT_THROW((void)t.decode(negative), ContractError);
}

TEST(OffsetToTokenIndex, OriginEndAndInterior) {
  const auto t = title_tokenizer();
  const std::string s = "Quiz Show (1994)";
  EXPECT_EQ(t.offset_to_token_index(s, 0), 0u);
  EXPECT_EQ(t.offset_to_token_index(s, 0, true), 1u);
  EXPECT_EQ(t.offset_to_token_index(s, s.size()), t.encode(s).size());
  EXPECT_EQ(t.offset_to_token_index(s, s.size(), true), t.encode(s).size() + 1);
  // "Quiz" is one piece; an offset inside a multi-byte token must fail.
  const auto ids = t.encode(s);
  const auto& first = t.token_bytes(ids[0]);
  if (first.size() > 1) EXPECT_THROW((void)t.offset_to_token_index(s, 1), ContractError);
}

TEST(OffsetToTokenIndex, PinocchioOutputRegion) {
  const auto t = title_tokenizer();
  const auto cat = testing::pinocchio_catalog();
  const auto ex = format_example(testing::pinocchio_history(), "m7", cat, default_template_bank()[0]);
  const auto r = render_for_training(ex);
  const auto ids = t.encode(r.text, true, true);
  const auto idx = t.offset_to_token_index(r.text, r.output_offset, true);
  const std::vector<TokenId> out(ids.begin() + static_cast<std::ptrdiff_t>(idx), ids.end() - 1);
  EXPECT_EQ(t.decode(out), "In the Line of Fire (1993)");
  EXPECT_EQ(out, t.encode("In the Line of Fire (1993)"));
}

TEST(Serialization, JsonRoundTrip) {
  const auto t = title_tokenizer();
  testing::TempDir dir("tok");
  t.save(dir.path() / "tok.json");
  const auto u = Tokenizer::load(dir.path() / "tok.json");
  EXPECT_EQ(u.merges(), t.merges());
  EXPECT_EQ(u.vocab_size(), t.vocab_size());
  EXPECT_EQ(u.encode("Shadowlands (1993)"), t.encode("Shadowlands (1993)"));
  const auto j = t.to_json();
  EXPECT_EQ(j.at("vocab_size"), t.vocab_size());
  EXPECT_EQ(j.at("specials").at("eos"), kEosToken);
}

TEST(Serialization, LoadValidates) {
  auto j = title_tokenizer().to_json();
  j["merges"].push_back({100000, 3});
  EXPECT_THROW(Tokenizer::from_json(j), DataError);
  auto k = title_tokenizer().to_json();
  k["vocab_size"] = 7;
  EXPECT_THROW(Tokenizer::from_json(k), DataError);
}

}  // namespace
}  // namespace genrec
