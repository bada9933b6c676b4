#include "genrec/decode.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include "genrec/dataset.hpp"
#include "genrec/error.hpp"
#include "json.hpp"

namespace genrec {

std::size_t TitleTrie::insert(std::span<const TokenId> tokens) {
  std::size_t node = kRoot;
  for (TokenId t : tokens) {
    auto& kids = nodes_[node].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), t,
                               [](const auto& e, TokenId v) { return e.first < v; });
    if (it != kids.end() && it->first == t) {
      node = it->second;
      continue;
    }
    const std::size_t fresh = nodes_.size();
    kids.insert(it, {t, fresh});
    nodes_.emplace_back();
    node = fresh;
  }
  return node;
}

TitleTrie TitleTrie::build(const Catalog& catalog, const Tokenizer& tokenizer,
                           const std::unordered_map<ItemId, std::size_t>& popularity) {
  if (catalog.empty()) throw ContractError("TitleTrie: empty catalog");
  TitleTrie trie;
  trie.nodes_.emplace_back();
  auto pop = [&](const ItemId& id) {
    auto it = popularity.find(id);
    return it == popularity.end() ? std::size_t{0} : it->second;
  };
  // entries() is sorted by id, so a strict comparison keeps the smallest id
  // among equally popular duplicates.
  for (const auto& [id, title] : catalog.entries()) {
    auto it = trie.titles_.find(title);
    if (it == trie.titles_.end()) {
      trie.titles_.emplace(title, Title{id, tokenizer.encode(title)});
    } else if (pop(id) > pop(it->second.item)) {
      it->second.item = id;
    }
  }
  for (const auto& [title, entry] : trie.titles_) {
    if (entry.tokens.empty()) throw ContractError("TitleTrie: title encodes to no tokens");
    const std::size_t node = trie.insert(entry.tokens);
    trie.nodes_[node].item = entry.item;
    trie.max_depth_ = std::max(trie.max_depth_, entry.tokens.size());
  }
  return trie;
}

std::optional<std::size_t> TitleTrie::child(std::size_t node, TokenId token) const {
  const auto& kids = nodes_[node].children;
  auto it = std::lower_bound(kids.begin(), kids.end(), token,
                             [](const auto& e, TokenId v) { return e.first < v; });
  if (it == kids.end() || it->first != token) return std::nullopt;
  return it->second;
}

TitleTrie::Allowed TitleTrie::allowed_next(std::span<const TokenId> prefix) const {
  std::size_t node = kRoot;
  for (TokenId t : prefix) {
    auto next = child(node, t);
    if (!next) throw ContractError("allowed_next: prefix is not part of any title");
    node = *next;
  }
  Allowed allowed;
  for (const auto& [t, _] : nodes_[node].children) allowed.tokens.push_back(t);
  allowed.may_terminate = nodes_[node].item.has_value();
  return allowed;
}

std::optional<std::vector<TokenId>> TitleTrie::tokens_for(const std::string& title) const {
  auto it = titles_.find(title);
  if (it == titles_.end()) return std::nullopt;
  return it->second.tokens;
}

const ItemId* TitleTrie::item_for(const std::string& title) const {
  auto it = titles_.find(title);
  return it == titles_.end() ? nullptr : &it->second.item;
}

namespace {

template <typename T>
struct Beam {
  std::size_t node = TitleTrie::kRoot;
  double log_prob = 0.0;
  std::vector<TokenId> path;
  KeyValueCache<T> cache;
  std::vector<T> next;  // log-probs for the following token
};

struct Candidate {
  std::size_t beam = 0;
  TokenId token = 0;  // kEosToken terminates
  double log_prob = 0.0;
};

bool rank_finished(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.item_id < b.item_id;
}

}  // namespace

template <typename T>
RankedList recommend_topk(const Parameters<T>& params, const TitleTrie& trie,
                          std::span<const TokenId> prompt, const BeamOptions& options) {
  if (options.k == 0 || options.beam_width == 0) {
    throw ContractError("recommend_topk: k and beam_width must be positive");
  }
  if (options.beam_width < options.k) throw ContractError("recommend_topk: beam_width < k");
  if (prompt.empty()) throw ContractError("recommend_topk: empty prompt");
  if (prompt.size() + trie.max_depth() > params.config.max_len) {
    throw ContractError("recommend_topk: prompt of " + std::to_string(prompt.size()) +
                        " tokens leaves no room for titles of " +
                        std::to_string(trie.max_depth()) + " tokens");
  }

  KeyValueCache<T> prefix;
  std::vector<Beam<T>> beams(1);
  beams[0].next = prefill(params, prompt, prefix);

  RankedList result;
  std::vector<ScoredItem> finished;
  while (!beams.empty()) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const auto& beam = beams[b];
      if (trie.terminal(beam.node)) {
        candidates.push_back({b, kEosToken, beam.log_prob + static_cast<double>(beam.next[kEosToken])});
      }
      for (const auto& [t, _] : trie.children(beam.node)) {
        candidates.push_back({b, t, beam.log_prob + static_cast<double>(beam.next[t])});
      }
    }
    // Ties fall back to the token path, which makes the order total.
    auto before = [&](const Candidate& a, const Candidate& c) {
      if (a.log_prob != c.log_prob) return a.log_prob > c.log_prob;
      const auto& pa = beams[a.beam].path;
      const auto& pc = beams[c.beam].path;
      if (pa != pc) return pa < pc;
      return a.token < c.token;
    };
    const std::size_t keep = std::min(options.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(), before);
    candidates.resize(keep);

    std::vector<Beam<T>> grown;
    std::vector<TokenId> fed;
    for (const auto& c : candidates) {
      const auto& parent = beams[c.beam];
      if (c.token == kEosToken) {
        const double len = static_cast<double>(parent.path.size() + 1);
        finished.push_back({*trie.terminal(parent.node), c.log_prob / len, c.log_prob});
        continue;
      }
      Beam<T> child;
      child.node = *trie.child(parent.node, c.token);
      child.log_prob = c.log_prob;
      child.path = parent.path;
      child.path.push_back(c.token);
      child.cache = parent.cache;
      grown.push_back(std::move(child));
      fed.push_back(c.token);
    }
    if (!grown.empty()) {
      std::vector<KeyValueCache<T>*> caches;
      for (auto& g : grown) caches.push_back(&g.cache);
      const Tensor<T> lp = extend(params, prefix, std::span<KeyValueCache<T>* const>(caches), fed);
      for (std::size_t i = 0; i < grown.size(); ++i) {
        grown[i].next.assign(lp.row(i), lp.row(i) + params.config.vocab_size);
      }
    }
    beams = std::move(grown);
  }

  std::sort(finished.begin(), finished.end(), rank_finished);
  if (finished.size() > options.k) finished.resize(options.k);
  if (finished.size() < options.k) {
    result.warnings.push_back("only " + std::to_string(finished.size()) + " of " +
                              std::to_string(options.k) + " requested titles finished");
  }
  result.items = std::move(finished);
  return result;
}

template <typename T>
RankedList recommend_topk(const Parameters<T>& params, const TitleTrie& trie,
                          const Tokenizer& tokenizer, const Catalog& catalog,
                          std::span<const ItemId> history, const PromptTemplate& tmpl,
                          const BeamOptions& options) {
  const auto prompt =
      encode_prompt(history, catalog, tmpl, tokenizer, params.config.max_len,
                    trie.max_depth() + 1);
  return recommend_topk(params, trie, prompt, options);
}

template <typename T>
ScoredItem score_title(const Parameters<T>& params, const TitleTrie& trie,
                   std::span<const TokenId> prompt, const std::string& title) {
  const auto tokens = trie.tokens_for(title);
  if (!tokens) throw ContractError("score_title: title not in catalog: " + title);
  if (prompt.empty()) throw ContractError("score_title: empty prompt");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), tokens->begin(), tokens->end());
  if (seq.size() > params.config.max_len) throw ContractError("score_title: sequence too long");
  std::vector<std::size_t> positions(tokens->size() + 1);
  std::iota(positions.begin(), positions.end(), prompt.size() - 1);
  const auto lp = log_probs_at(params, seq, positions);
  double total = 0.0;
  for (std::size_t i = 0; i < tokens->size(); ++i) {
    total += static_cast<double>(lp[i][static_cast<std::size_t>((*tokens)[i])]);
  }
  total += static_cast<double>(lp.back()[kEosToken]);
  const double len = static_cast<double>(tokens->size() + 1);
  return {*trie.item_for(title), total / len, total};
}

void write_predictions(std::ostream& out, const std::vector<UserPrediction>& predictions) {
  for (const auto& p : predictions) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : p.items) items.push_back({{"item_id", it.item_id}, {"score", it.score}});
    out << nlohmann::json{{"user_id", p.user_id}, {"items", items}}.dump() << '\n';
  }
}

std::vector<UserPrediction> read_predictions(std::istream& in, const std::string& name) {
  std::vector<UserPrediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UserPrediction p;
      p.user_id = j.at("user_id").get<std::string>();
      for (const auto& it : j.at("items")) {
        ScoredItem s;
        s.item_id = it.at("item_id").get<std::string>();
        s.score = it.value("score", 0.0);
        p.items.push_back(std::move(s));
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(name, line_no, e.what());
    }
  }
  return out;
}

#define GENREC_INSTANTIATE_DECODE(T)                                                        \
  template RankedList recommend_topk<T>(const Parameters<T>&, const TitleTrie&,            \
                                        std::span<const TokenId>, const BeamOptions&);     \
  template RankedList recommend_topk<T>(const Parameters<T>&, const TitleTrie&,            \
                                        const Tokenizer&, const Catalog&,                  \
                                        std::span<const ItemId>, const PromptTemplate&,    \
                                        const BeamOptions&);                               \
  template ScoredItem score_title<T>(const Parameters<T>&, const TitleTrie&,                   \
                                     std::span<const TokenId>, const std::string&);

GENREC_INSTANTIATE_DECODE(float)
GENREC_INSTANTIATE_DECODE(double)

#undef GENREC_INSTANTIATE_DECODE

}  // namespace genrec
