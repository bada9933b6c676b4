#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "genrec/ingest.hpp"
#include "genrec/model.hpp"
#include "genrec/prompt.hpp"
#include "genrec/tokenizer.hpp"

namespace genrec {

// Prefix tree over the token sequences of every catalog title. Identical
// titles share one terminal, owned by the item with the most train
// interactions (ties: smallest id). Throws ContractError on an empty catalog.
class TitleTrie {
 public:
  struct Allowed {
    std::vector<TokenId> tokens;  // ascending
    bool may_terminate = false;   // the prefix is a complete title
  };

  static TitleTrie build(const Catalog& catalog, const Tokenizer& tokenizer,
                         const std::unordered_map<ItemId, std::size_t>& popularity = {});

  static constexpr std::size_t kRoot = 0;

  // Throws ContractError when `prefix` leaves the trie.
  Allowed allowed_next(std::span<const TokenId> prefix) const;

  std::optional<std::size_t> child(std::size_t node, TokenId token) const;
  const std::vector<std::pair<TokenId, std::size_t>>& children(std::size_t node) const {
    return nodes_[node].children;
  }
  const ItemId* terminal(std::size_t node) const {
    return nodes_[node].item ? &*nodes_[node].item : nullptr;
  }

  // Tokens of a catalog title, or nullopt when no item carries it.
  std::optional<std::vector<TokenId>> tokens_for(const std::string& title) const;
  const ItemId* item_for(const std::string& title) const;

  std::size_t max_depth() const { return max_depth_; }
  std::size_t num_titles() const { return titles_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::pair<TokenId, std::size_t>> children;  // sorted by token
    std::optional<ItemId> item;
  };
  struct Title {
    ItemId item;
    std::vector<TokenId> tokens;
  };

  std::size_t insert(std::span<const TokenId> tokens);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, Title> titles_;
  std::size_t max_depth_ = 0;
};

struct ScoredItem {
  ItemId item_id;
  double score = 0.0;     // log_prob / (title tokens + 1)
  double log_prob = 0.0;  // title tokens plus the end marker

  bool operator==(const ScoredItem&) const = default;
};

struct RankedList {
  std::vector<ScoredItem> items;
  std::vector<std::string> warnings;
};

struct BeamOptions {
  std::size_t k = 10;
  std::size_t beam_width = 20;
};

// Constrained beam search from a tokenized prompt. Each step expands every
// live beam by the trie's allowed tokens, plus termination at complete
// titles, and keeps the beam_width candidates with the highest cumulative
// log-probability. Finished titles are ranked by score, then log_prob, then
// item id. Throws ContractError when beam_width < k or the prompt leaves no
// room for the longest title.
template <typename T>
RankedList recommend_topk(const Parameters<T>& params, const TitleTrie& trie,
                          std::span<const TokenId> prompt, const BeamOptions& options);

// Tokenizes the evaluation prompt for `history`, truncated so the longest
// title and its end marker still fit, the same cut training uses.
template <typename T>
RankedList recommend_topk(const Parameters<T>& params, const TitleTrie& trie,
                          const Tokenizer& tokenizer, const Catalog& catalog,
                          std::span<const ItemId> history, const PromptTemplate& tmpl,
                          const BeamOptions& options);

// Log-probability of `title` followed by the end marker after `prompt`,
// summed in the same order as the beam search, and its length-normalized
// score. item_id is the title's resolved owner. Throws ContractError for a
// title outside the catalog.
template <typename T>
ScoredItem score_title(const Parameters<T>& params, const TitleTrie& trie,
                   std::span<const TokenId> prompt, const std::string& title);

struct UserPrediction {
  UserId user_id;
  std::vector<ScoredItem> items;
};

// JSON-lines: {"user_id": ..., "items": [{"item_id": ..., "score": ...}]}.
void write_predictions(std::ostream& out, const std::vector<UserPrediction>& predictions);
std::vector<UserPrediction> read_predictions(std::istream& in,
                                             const std::string& name = "predictions");

}  // namespace genrec
