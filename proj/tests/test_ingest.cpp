#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "genrec/error.hpp"
#include "genrec/ingest.hpp"

namespace genrec {
namespace {

ParsedDataset parse_ml(const std::string& ratings, const std::string& movies,
                       ParseOptions opts = {}) {
  std::istringstream r(ratings), m(movies);
  return parse_movielens(r, m, opts);
}

UserSequence seq(const std::string& user, std::vector<ItemId> items) {
  UserSequence s;
  s.user_id = user;
  s.items = std::move(items);
  for (std::size_t i = 0; i < s.items.size(); ++i) s.timestamps.push_back(static_cast<std::int64_t>(i));
  return s;
}

TEST(NormalizeTitle, TrimsAndCollapses) {
  EXPECT_EQ(normalize_title("  Toy   Story\t(1995) "), "Toy Story (1995)");
  EXPECT_EQ(normalize_title("Amélie"), "Amélie");
  EXPECT_EQ(normalize_title("   "), "");
}

TEST(Catalog, RejectsDuplicateIdsAndEmptyTitles) {
  Catalog c;
  c.add("1", "A");
  EXPECT_THROW(c.add("1", "B"), DataError);
  EXPECT_THROW(c.add("2", "  "), DataError);
  EXPECT_THROW(c.add("", "C"), DataError);
  EXPECT_THROW((void)c.title("9"), DataError);
}

TEST(Catalog, RecordsTitleCollisions) {
  Catalog c;
  c.add("b", "Same");
  c.add("a", "Same ");
  c.add("c", "Other");
  const auto col = c.title_collisions();
  ASSERT_EQ(col.size(), 1u);
  EXPECT_EQ(col.at("Same"), (std::vector<ItemId>{"a", "b"}));
  EXPECT_EQ(c.size(), 3u);
}

TEST(ParseMovielens, TwoRowFixture) {
  const auto d = parse_ml("userId,movieId,rating,timestamp\n1,10,4.0,100\n1,20,3.5,200\n",
                          "movieId,title,genres\n10,Toy Story (1995),Animation\n20,Heat (1995),Action\n");
  EXPECT_EQ(d.interactions.size(), 2u);
  EXPECT_EQ(d.catalog.size(), 2u);
  EXPECT_EQ(d.interactions[1].item_id, "20");
  EXPECT_EQ(d.interactions[1].timestamp, 200);
  EXPECT_DOUBLE_EQ(*d.interactions[1].rating, 3.5);
}

TEST(ParseMovielens, QuotedTitles) {
  const auto d = parse_ml("userId,movieId,rating,timestamp\n1,1,4,1\n",
                          "movieId,title,genres\n1,\"Good, the Bad and the \"\"Ugly\"\" (1966)\",Western\n");
  EXPECT_EQ(d.catalog.title("1"), "Good, the Bad and the \"Ugly\" (1966)");
}

TEST(ParseMovielens, UnknownMovieDroppedAndCounted) {
  const auto d = parse_ml("userId,movieId,rating,timestamp\n1,10,4.0,100\n1,99,3.0,200\n",
                          "movieId,title,genres\n10,A,x\n");
  EXPECT_EQ(d.interactions.size(), 1u);
  EXPECT_EQ(d.counters.dropped_unknown_item, 1u);
}

TEST(ParseMovielens, MissingHeaderIsHardError) {
  EXPECT_THROW(parse_ml("1,10,4.0,100\n", "movieId,title,genres\n10,A,x\n"), DataError);
  ParseOptions lenient;
  lenient.strict = false;
  EXPECT_THROW(parse_ml("userId,movieId,rating,timestamp\n", "10,A,x\n", lenient), DataError);
}

TEST(ParseMovielens, StrictNamesLineLenientCounts) {
  const std::string ratings = "userId,movieId,rating,timestamp\n1,10,4.0,100\n1,10,oops,200\n1,10,9.0,300\n";
  const std::string movies = "movieId,title,genres\n10,A,x\n";
  ParseOptions strict;
  strict.ratings_name = "ratings.csv";
  try {
    parse_ml(ratings, movies, strict);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.file(), "ratings.csv");
    EXPECT_EQ(e.line(), 3u);
  }
  ParseOptions lenient;
  lenient.strict = false;
  const auto d = parse_ml(ratings, movies, lenient);
  EXPECT_EQ(d.interactions.size(), 1u);
  EXPECT_EQ(d.counters.malformed_rows, 2u);  // bad number, rating out of range
}

TEST(ParseAmazon, ThreeLineFixture) {
  std::istringstream reviews(
      R"({"reviewerID":"u1","asin":"A","unixReviewTime":10,"overall":5.0})"
      "\n"
      R"({"reviewerID":"u1","asin":"B","unixReviewTime":20,"overall":4.0})"
      "\n"
      R"({"reviewerID":"u2","asin":"C","unixReviewTime":30,"overall":3.0})"
      "\n");
  std::istringstream meta(R"({"asin":"A","title":"Lego Set"})"
                          "\n"
                          R"({"asin":"B","title":"Puzzle"})"
                          "\n"
                          R"({"asin":"C","title":"Kite"})"
                          "\n");
  const auto d = parse_amazon(reviews, meta);
  EXPECT_EQ(d.interactions.size(), 3u);
  EXPECT_EQ(d.catalog.title("A"), "Lego Set");
}

TEST(ParseAmazon, UntitledItemDroppedAndCounted) {
  std::istringstream reviews(
      R"({"reviewerID":"u1","asin":"A","unixReviewTime":10,"overall":5.0})"
      "\n"
      R"({"reviewerID":"u1","asin":"B","unixReviewTime":20,"overall":4.0})"
      "\n");
  std::istringstream meta(R"({"asin":"A","title":"Lego Set"})"
                          "\n"
                          R"({"asin":"B"})"
                          "\n");
  const auto d = parse_amazon(reviews, meta);
  EXPECT_EQ(d.interactions.size(), 1u);
  EXPECT_EQ(d.counters.dropped_unknown_item, 1u);
  EXPECT_EQ(d.counters.items_without_title, 1u);
}

TEST(ParseAmazon, InvalidJsonStrictAndLenient) {
  const std::string reviews =
      R"({"reviewerID":"u1","asin":"A","unixReviewTime":10,"overall":5.0})"
      "\n{not json\n";
  const std::string meta = R"({"asin":"A","title":"Lego"})"
                           "\n";
  {
    std::istringstream r(reviews), m(meta);
    EXPECT_THROW(parse_amazon(r, m), DataError);
  }
  std::istringstream r(reviews), m(meta);
  ParseOptions lenient;
  lenient.strict = false;
  const auto d = parse_amazon(r, m, lenient);
  EXPECT_EQ(d.interactions.size(), 1u);
  EXPECT_EQ(d.counters.malformed_rows, 1u);
}

Interaction at(const std::string& u, const std::string& i, std::int64_t t) {
  return {u, i, t, std::nullopt};
}

TEST(BuildSequences, SortsByTimestamp) {
  const auto s = build_sequences({at("u", "C", 5), at("u", "A", 1), at("u", "B", 3)});
  ASSERT_EQ(s.users.size(), 1u);
  EXPECT_EQ(s.users[0].items, (std::vector<ItemId>{"A", "B", "C"}));
}

TEST(BuildSequences, ShortUsersDiscarded) {
  const auto s = build_sequences({at("u", "A", 1), at("u", "B", 2), at("v", "A", 1),
                                  at("v", "B", 2), at("v", "C", 3)});
  ASSERT_EQ(s.users.size(), 1u);
  EXPECT_EQ(s.users[0].user_id, "v");
  EXPECT_EQ(s.discarded_users, 1u);
}

TEST(BuildSequences, EqualTimestampsKeepFileOrder) {
  const auto s = build_sequences({at("u", "Z", 7), at("u", "A", 7), at("u", "M", 7)});
  EXPECT_EQ(s.users[0].items, (std::vector<ItemId>{"Z", "A", "M"}));
}

TEST(BuildSequences, RejectsMinLengthBelowThree) {
  EXPECT_THROW(build_sequences({}, 2), ContractError);
}

TEST(Split, FourItems) {
  const auto s = split_leave_one_out({seq("u", {"A", "B", "C", "D"})});
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.test[0], (SplitExample{"u", {"A", "B", "C"}, "D"}));
  EXPECT_EQ(s.valid[0], (SplitExample{"u", {"A", "B"}, "C"}));
  ASSERT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.train[0], (SplitExample{"u", {"A"}, "B"}));
}

TEST(Split, ThreeItemsHaveNoTrainExample) {
  const auto s = split_leave_one_out({seq("u", {"A", "B", "C"})});
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.valid.size(), 1u);
  EXPECT_TRUE(s.train.empty());
}

TEST(Split, SlidingWindows) {
  SplitOptions opts;
  opts.sliding_windows = true;
  const auto s = split_leave_one_out({seq("u", {"A", "B", "C", "D", "E"})}, opts);
  ASSERT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.train[0], (SplitExample{"u", {"A"}, "B"}));
  EXPECT_EQ(s.train[1], (SplitExample{"u", {"A", "B"}, "C"}));
}

TEST(Split, ShortSequenceIsContractError) {
  EXPECT_THROW(split_leave_one_out({seq("u", {"A", "B"})}), ContractError);
}

TEST(Split, ReconstructionOnRandomUsers) {
  std::mt19937_64 rng(3);
  std::vector<UserSequence> seqs;
  for (int u = 0; u < 200; ++u) {
    std::vector<ItemId> items;
    const int n = 3 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) items.push_back("i" + std::to_string(rng() % 40));
    seqs.push_back(seq("u" + std::to_string(u), items));
  }
  const auto s = split_leave_one_out(seqs);
  ASSERT_EQ(s.test.size(), seqs.size());
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    std::vector<ItemId> rebuilt = s.valid[u].history;
    rebuilt.push_back(s.valid[u].target);
    rebuilt.push_back(s.test[u].target);
    EXPECT_EQ(rebuilt, seqs[u].items);
    EXPECT_EQ(s.test[u].history.size() + 1, seqs[u].items.size());
  }
}

TEST(Stats, EmptyInput) {
  EXPECT_EQ(compute_stats({}, Catalog{}), (DatasetStats{0, 0, 0, 0}));
}

TEST(Stats, TwoUsersOneSharedItem) {
  Catalog c;
  for (auto id : {"a", "b", "c", "d", "e", "f"}) c.add(id, id);
  const auto st = compute_stats({seq("u", {"a", "b", "c"}), seq("v", {"c", "d", "e"})}, c);
  EXPECT_EQ(st.num_users, 2u);
  EXPECT_EQ(st.num_items, 5u);
  EXPECT_EQ(st.num_interactions, 6u);
  EXPECT_EQ(st.catalog_size, 6u);
}

TEST(Popularity, CountsTrainVisiblePrefix) {
  const auto pop = train_popularity({seq("u", {"a", "b", "c", "d"}), seq("v", {"a", "c", "d"})});
  EXPECT_EQ(pop.at("a"), 2u);
  EXPECT_EQ(pop.at("b"), 1u);
  EXPECT_EQ(pop.count("c"), 0u);
}

TEST(Bundle, RoundTripIsByteStable) {
  const auto d = parse_ml("userId,movieId,rating,timestamp\n2,1,4,5\n2,2,4,6\n2,3,4,7\n1,3,4,1\n1,1,4,2\n1,2,4,2\n",
                          "movieId,title,genres\n1,\"A, the\",x\n2,B,x\n3,C,x\n");
  const auto s = build_sequences(d.interactions);
  const auto split = split_leave_one_out(s.users);
  std::ostringstream c1, q1, p1;
  write_catalog(c1, d.catalog);
  write_sequences(q1, s.users);
  write_split(p1, split);

  std::istringstream ci(c1.str()), qi(q1.str()), pi(p1.str());
  const auto cat = read_catalog(ci);
  const auto seqs = read_sequences(qi);
  const auto sp = read_split(pi);
  std::ostringstream c2, q2, p2;
  write_catalog(c2, cat);
  write_sequences(q2, seqs);
  write_split(p2, sp);
  EXPECT_EQ(c1.str(), c2.str());
  EXPECT_EQ(q1.str(), q2.str());
  EXPECT_EQ(p1.str(), p2.str());
  EXPECT_NE(c1.str().find(R"({"item_id":"1","title":"A, the"})"), std::string::npos);
  EXPECT_EQ(s.users[0].user_id, "2");  // first-appearance order
}

}  // namespace
}  // namespace genrec
