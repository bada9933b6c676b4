#include "genrec/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "genrec/error.hpp"
#include "json.hpp"

namespace genrec {
namespace {

using json = nlohmann::json;

constexpr std::size_t kMaxKeptMessages = 20;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// RFC-4180 record reader. Quoted fields may contain commas, doubled quotes
// and line breaks; `line` reports where the record started.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  bool next(std::vector<std::string>& fields, std::size_t& line) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    line = line_ + 1;
    char c;
    while (in_.get(c)) {
      any = true;
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get(c);
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        ++line_;
        if (!field.empty() && field.back() == '\r') field.pop_back();
        fields.push_back(std::move(field));
        return true;
      } else {
        field.push_back(c);
      }
    }
    if (in_quotes) throw DataError("unterminated quoted field starting at line " + std::to_string(line));
    if (!any) return false;
    ++line_;
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(std::move(field));
    return true;
  }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

template <typename T>
bool parse_number(std::string_view text, T& value) {
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

void row_error(const ParseOptions& options, ParseCounters& counters,
               const std::string& file, std::size_t line, const std::string& what) {
  if (options.strict) throw DataError(file, line, what);
  ++counters.malformed_rows;
  if (counters.messages.size() < kMaxKeptMessages) {
    counters.messages.push_back(file + ":" + std::to_string(line) + ": " + what);
  }
}

bool is_blank(const std::vector<std::string>& fields) {
  return fields.size() == 1 && fields[0].empty();
}

void keep_known_items(ParsedDataset& parsed, std::vector<Interaction> raw) {
  parsed.interactions.reserve(raw.size());
  for (auto& interaction : raw) {
    if (parsed.catalog.contains(interaction.item_id)) {
      parsed.interactions.push_back(std::move(interaction));
    } else {
      ++parsed.counters.dropped_unknown_item;
    }
  }
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), is_space)) continue;
    fn(line, number);
  }
}

std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw DataError(std::string("field \"") + key + "\" is not a string");
  std::string value = it->get<std::string>();
  if (value.empty()) throw DataError(std::string("field \"") + key + "\" is empty");
  return value;
}

std::vector<std::string> string_array(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) {
    throw DataError(std::string("missing array field \"") + key + "\"");
  }
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw DataError(std::string("non-string entry in \"") + key + "\"");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

std::string normalize_title(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

void Catalog::add(const ItemId& id, std::string_view title) {
  if (id.empty()) throw DataError("empty item id");
  std::string normalized = normalize_title(title);
  if (normalized.empty()) throw DataError("item " + id + " has an empty title");
  if (!titles_.emplace(id, std::move(normalized)).second) {
    throw DataError("duplicate item id " + id);
  }
}

const std::string& Catalog::title(const ItemId& id) const {
  auto it = titles_.find(id);
  if (it == titles_.end()) throw DataError("unknown item id \"" + id + "\"");
  return it->second;
}

std::map<std::string, std::vector<ItemId>> Catalog::title_collisions() const {
  std::map<std::string, std::vector<ItemId>> by_title;
  for (const auto& [id, title] : titles_) by_title[title].push_back(id);
  std::erase_if(by_title, [](const auto& kv) { return kv.second.size() < 2; });
  return by_title;
}

ParsedDataset parse_movielens(std::istream& ratings, std::istream& movies,
                              const ParseOptions& options) {
  ParsedDataset parsed;
  std::vector<std::string> fields;
  std::size_t line = 0;

  CsvReader movie_reader(movies);
  if (!movie_reader.next(fields, line) || fields.size() < 2 || fields[0] != "movieId") {
    throw DataError(options.items_name, 1, "missing header `movieId,title,genres`");
  }
  while (true) {
    try {
      if (!movie_reader.next(fields, line)) break;
    } catch (const DataError& e) {
      throw DataError(options.items_name, line, e.what());
    }
    if (is_blank(fields)) continue;
    if (fields.size() != 3) {
      row_error(options, parsed.counters, options.items_name, line,
                "expected 3 fields, got " + std::to_string(fields.size()));
      continue;
    }
    try {
      parsed.catalog.add(fields[0], fields[1]);
    } catch (const DataError& e) {
      row_error(options, parsed.counters, options.items_name, line, e.what());
    }
  }

  CsvReader rating_reader(ratings);
  if (!rating_reader.next(fields, line) || fields.size() < 4 || fields[0] != "userId") {
    throw DataError(options.ratings_name, 1, "missing header `userId,movieId,rating,timestamp`");
  }
  std::vector<Interaction> raw;
  while (true) {
    try {
      if (!rating_reader.next(fields, line)) break;
    } catch (const DataError& e) {
      throw DataError(options.ratings_name, line, e.what());
    }
    if (is_blank(fields)) continue;
    if (fields.size() != 4) {
      row_error(options, parsed.counters, options.ratings_name, line,
                "expected 4 fields, got " + std::to_string(fields.size()));
      continue;
    }
    Interaction interaction;
    interaction.user_id = fields[0];
    interaction.item_id = fields[1];
    double rating = 0.0;
    if (interaction.user_id.empty() || interaction.item_id.empty()) {
      row_error(options, parsed.counters, options.ratings_name, line, "empty user or movie id");
      continue;
    }
    if (!parse_number(fields[2], rating) || rating < 0.5 || rating > 5.0) {
      row_error(options, parsed.counters, options.ratings_name, line,
                "bad rating \"" + fields[2] + "\"");
      continue;
    }
    if (!parse_number(fields[3], interaction.timestamp) || interaction.timestamp < 0) {
      row_error(options, parsed.counters, options.ratings_name, line,
                "bad timestamp \"" + fields[3] + "\"");
      continue;
    }
    interaction.rating = rating;
    raw.push_back(std::move(interaction));
  }
  keep_known_items(parsed, std::move(raw));
  return parsed;
}

ParsedDataset parse_amazon(std::istream& reviews, std::istream& metadata,
                           const ParseOptions& options) {
  ParsedDataset parsed;
  std::unordered_set<std::string> seen_asins;

  for_each_line(metadata, [&](const std::string& text, std::size_t line) {
    try {
      json record = json::parse(text);
      if (!record.is_object()) throw DataError("record is not a JSON object");
      std::string asin = require_string(record, "asin");
      if (!seen_asins.insert(asin).second) throw DataError("duplicate asin " + asin);
      auto title = record.find("title");
      if (title == record.end() || !title->is_string() ||
          normalize_title(title->get<std::string>()).empty()) {
        ++parsed.counters.items_without_title;
        return;
      }
      parsed.catalog.add(asin, title->get<std::string>());
    } catch (const json::exception& e) {
      row_error(options, parsed.counters, options.items_name, line, e.what());
    } catch (const DataError& e) {
      row_error(options, parsed.counters, options.items_name, line, e.what());
    }
  });

  std::vector<Interaction> raw;
  for_each_line(reviews, [&](const std::string& text, std::size_t line) {
    try {
      json record = json::parse(text);
      if (!record.is_object()) throw DataError("record is not a JSON object");
      Interaction interaction;
      interaction.user_id = require_string(record, "reviewerID");
      interaction.item_id = require_string(record, "asin");
      auto time = record.find("unixReviewTime");
      if (time == record.end() || !time->is_number_integer() || time->get<std::int64_t>() < 0) {
        throw DataError("missing or invalid unixReviewTime");
      }
      interaction.timestamp = time->get<std::int64_t>();
      auto overall = record.find("overall");
      if (overall != record.end() && overall->is_number()) {
        interaction.rating = overall->get<double>();
      }
      raw.push_back(std::move(interaction));
    } catch (const json::exception& e) {
      row_error(options, parsed.counters, options.ratings_name, line, e.what());
    } catch (const DataError& e) {
      row_error(options, parsed.counters, options.ratings_name, line, e.what());
    }
  });
  keep_known_items(parsed, std::move(raw));
  return parsed;
}

SequenceSet build_sequences(const std::vector<Interaction>& interactions,
                            std::size_t min_length) {
  if (min_length < kMinSequenceLength) {
    throw ContractError("min_length must be at least 3");
  }
  // Group indices per user, preserving first-appearance order of users.
  std::unordered_map<UserId, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<const UserId*> order;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(interactions[i].user_id, groups.size());
    if (inserted) {
      groups.emplace_back();
      order.push_back(&it->first);
    }
    groups[it->second].push_back(i);
  }

  SequenceSet result;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    if (idx.size() < min_length) {
      ++result.discarded_users;
      continue;
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return interactions[a].timestamp < interactions[b].timestamp;
    });
    UserSequence seq;
    seq.user_id = *order[g];
    seq.items.reserve(idx.size());
    seq.timestamps.reserve(idx.size());
    for (std::size_t i : idx) {
      seq.items.push_back(interactions[i].item_id);
      seq.timestamps.push_back(interactions[i].timestamp);
    }
    result.users.push_back(std::move(seq));
  }
  return result;
}

LeaveOneOutSplit split_leave_one_out(const std::vector<UserSequence>& sequences,
                                     const SplitOptions& options) {
  LeaveOneOutSplit split;
  auto prefix = [](const std::vector<ItemId>& items, std::size_t n) {
    return std::vector<ItemId>(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n));
  };
  for (const auto& seq : sequences) {
    const std::size_t n = seq.items.size();
    if (n < kMinSequenceLength) {
      throw ContractError("sequence for user " + seq.user_id + " has " + std::to_string(n) +
                          " items; leave-one-out needs at least 3");
    }
    split.test.push_back({seq.user_id, prefix(seq.items, n - 1), seq.items[n - 1]});
    split.valid.push_back({seq.user_id, prefix(seq.items, n - 2), seq.items[n - 2]});
    // Train targets come from positions 2..n-3 (1-based: 2..n-2).
    const std::size_t last_target = n - 3;  // 0-based index of i(n-2)
    if (last_target == 0) continue;
    const std::size_t first_target = options.sliding_windows ? 1 : last_target;
    for (std::size_t t = first_target; t <= last_target; ++t) {
      split.train.push_back({seq.user_id, prefix(seq.items, t), seq.items[t]});
    }
  }
  return split;
}

DatasetStats compute_stats(const std::vector<UserSequence>& sequences,
                           const Catalog& catalog) {
  DatasetStats stats;
  stats.catalog_size = catalog.size();
  std::unordered_set<std::string_view> items;
  for (const auto& seq : sequences) {
    if (seq.items.empty()) continue;
    ++stats.num_users;
    stats.num_interactions += seq.items.size();
    for (const auto& item : seq.items) items.insert(item);
  }
  stats.num_items = items.size();
  return stats;
}

std::unordered_map<ItemId, std::size_t> train_popularity(
    const std::vector<UserSequence>& sequences) {
  std::unordered_map<ItemId, std::size_t> counts;
  for (const auto& seq : sequences) {
    if (seq.items.size() < 2) continue;
    for (std::size_t i = 0; i + 2 < seq.items.size(); ++i) ++counts[seq.items[i]];
  }
  return counts;
}

void write_catalog(std::ostream& out, const Catalog& catalog) {
  for (const auto& [id, title] : catalog.entries()) {
    out << json{{"item_id", id}, {"title", title}}.dump() << '\n';
  }
}

Catalog read_catalog(std::istream& in, const std::string& name) {
  Catalog catalog;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    try {
      json record = json::parse(text);
      catalog.add(require_string(record, "item_id"), require_string(record, "title"));
    } catch (const json::exception& e) {
      throw DataError(name, line, e.what());
    } catch (const DataError& e) {
      throw DataError(name, line, e.what());
    }
  });
  return catalog;
}

void write_sequences(std::ostream& out, const std::vector<UserSequence>& sequences) {
  for (const auto& seq : sequences) {
    out << json{{"user_id", seq.user_id}, {"items", seq.items}}.dump() << '\n';
  }
}

std::vector<UserSequence> read_sequences(std::istream& in, const std::string& name) {
  std::vector<UserSequence> sequences;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    try {
      json record = json::parse(text);
      UserSequence seq;
      seq.user_id = require_string(record, "user_id");
      seq.items = string_array(record, "items");
      sequences.push_back(std::move(seq));
    } catch (const json::exception& e) {
      throw DataError(name, line, e.what());
    } catch (const DataError& e) {
      throw DataError(name, line, e.what());
    }
  });
  return sequences;
}

void write_split(std::ostream& out, const LeaveOneOutSplit& split) {
  auto emit = [&](const std::vector<SplitExample>& examples, const char* role) {
    for (const auto& ex : examples) {
      out << json{{"user_id", ex.user_id},
                  {"role", role},
                  {"history", ex.history},
                  {"target", ex.target}}
                 .dump()
          << '\n';
    }
  };
  emit(split.train, "train");
  emit(split.valid, "valid");
  emit(split.test, "test");
}

LeaveOneOutSplit read_split(std::istream& in, const std::string& name) {
  LeaveOneOutSplit split;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    try {
      json record = json::parse(text);
      SplitExample ex{require_string(record, "user_id"), string_array(record, "history"),
                      require_string(record, "target")};
      const std::string role = require_string(record, "role");
      if (role == "train") {
        split.train.push_back(std::move(ex));
      } else if (role == "valid") {
        split.valid.push_back(std::move(ex));
      } else if (role == "test") {
        split.test.push_back(std::move(ex));
      } else {
        throw DataError("unknown role \"" + role + "\"");
      }
    } catch (const json::exception& e) {
      throw DataError(name, line, e.what());
    } catch (const DataError& e) {
      throw DataError(name, line, e.what());
    }
  });
  return split;
}

}  // namespace genrec
