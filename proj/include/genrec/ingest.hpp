#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace genrec {

using ItemId = std::string;
using UserId = std::string;

struct Interaction {
  UserId user_id;
  ItemId item_id;
  std::int64_t timestamp = 0;
  std::optional<double> rating;
};

// Trim and collapse internal whitespace runs to one space. No case folding.
std::string normalize_title(std::string_view raw);

// Immutable-after-build map from item id to display title.
class Catalog {
 public:
  // Throws DataError if the id is empty, already present, or the title is
  // empty after normalization.
  void add(const ItemId& id, std::string_view title);

  bool contains(const ItemId& id) const { return titles_.count(id) != 0; }
  const std::string& title(const ItemId& id) const;  // throws DataError
  std::size_t size() const { return titles_.size(); }
  bool empty() const { return titles_.empty(); }

  // Sorted by item id.
  const std::map<ItemId, std::string>& entries() const { return titles_; }

  // Titles shared by more than one item id, with the colliding ids sorted.
  std::map<std::string, std::vector<ItemId>> title_collisions() const;

 private:
  std::map<ItemId, std::string> titles_;
};

struct ParseOptions {
  bool strict = true;           // abort on the first malformed row
  std::string ratings_name = "ratings";  // used in error messages
  std::string items_name = "items";
};

struct ParseCounters {
  std::size_t malformed_rows = 0;       // skipped in lenient mode
  std::size_t dropped_unknown_item = 0; // interaction without a catalog title
  std::size_t items_without_title = 0;  // metadata records excluded
  std::vector<std::string> messages;    // first few row-level errors
};

struct ParsedDataset {
  Catalog catalog;
  std::vector<Interaction> interactions;
  ParseCounters counters;
};

// ratings: `userId,movieId,rating,timestamp`; movies: `movieId,title,genres`.
// Both carry one header row; fields follow RFC-4180 quoting.
ParsedDataset parse_movielens(std::istream& ratings, std::istream& movies,
                              const ParseOptions& options = {});

// reviews: JSON-lines with reviewerID, asin, unixReviewTime, overall.
// metadata: JSON-lines with asin, title.
ParsedDataset parse_amazon(std::istream& reviews, std::istream& metadata,
                           const ParseOptions& options = {});

struct UserSequence {
  UserId user_id;
  std::vector<ItemId> items;
  std::vector<std::int64_t> timestamps;  // parallel to items
};

struct SequenceSet {
  std::vector<UserSequence> users;  // in order of first appearance
  std::size_t discarded_users = 0;  // fewer than min_length interactions
};

constexpr std::size_t kMinSequenceLength = 3;

SequenceSet build_sequences(const std::vector<Interaction>& interactions,
                            std::size_t min_length = kMinSequenceLength);

struct SplitExample {
  UserId user_id;
  std::vector<ItemId> history;
  ItemId target;

  bool operator==(const SplitExample&) const = default;
};

struct LeaveOneOutSplit {
  std::vector<SplitExample> train;
  std::vector<SplitExample> valid;
  std::vector<SplitExample> test;
};

struct SplitOptions {
  // Emit every prefix of the train-visible region as a training example
  // rather than only the longest one.
  bool sliding_windows = false;
};

// Throws ContractError for any sequence shorter than three items.
LeaveOneOutSplit split_leave_one_out(const std::vector<UserSequence>& sequences,
                                     const SplitOptions& options = {});

struct DatasetStats {
  std::size_t num_users = 0;
  std::size_t num_items = 0;  // distinct items in kept interactions
  std::size_t num_interactions = 0;
  std::size_t catalog_size = 0;

  bool operator==(const DatasetStats&) const = default;
};

DatasetStats compute_stats(const std::vector<UserSequence>& sequences,
                           const Catalog& catalog);

// Interaction counts over the train-visible prefix (all but the last two
// items) of every sequence. Used to resolve duplicate titles.
std::unordered_map<ItemId, std::size_t> train_popularity(
    const std::vector<UserSequence>& sequences);

// Canonical bundle files: JSON-lines, sorted keys, LF newlines.
void write_catalog(std::ostream& out, const Catalog& catalog);
Catalog read_catalog(std::istream& in, const std::string& name = "catalog");
void write_sequences(std::ostream& out, const std::vector<UserSequence>& sequences);
std::vector<UserSequence> read_sequences(std::istream& in,
                                         const std::string& name = "sequences");
void write_split(std::ostream& out, const LeaveOneOutSplit& split);
LeaveOneOutSplit read_split(std::istream& in, const std::string& name = "split");

}  // namespace genrec
