#include "genrec/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <unordered_set>

#include "genrec/error.hpp"

namespace genrec {
namespace {

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}

TokenId byte_token(unsigned char b) { return kFirstByteToken + static_cast<TokenId>(b); }

struct Word {
  std::vector<TokenId> symbols;
  std::int64_t count = 0;
};

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      if (i > start) pieces.push_back(text.substr(start, i - start));
      pieces.push_back(text.substr(i, 1));
      start = i + 1;
    } else if (c == ' ' && i > start && text[i - 1] != ' ') {
      pieces.push_back(text.substr(start, i - start));
      start = i;
    }
  }
  if (start < text.size()) pieces.push_back(text.substr(start));
  return pieces;
}

Tokenizer::Tokenizer() {
  vocab_.reserve(kBaseVocabSize);
  vocab_.emplace_back("<pad>");
  vocab_.emplace_back("<bos>");
  vocab_.emplace_back("<eos>");
  for (int b = 0; b < 256; ++b) vocab_.emplace_back(1, static_cast<char>(b));
}

void Tokenizer::add_merge(TokenId left, TokenId right) {
  const auto id = static_cast<TokenId>(vocab_.size());
  vocab_.push_back(vocab_[left] + vocab_[right]);
  merges_.emplace_back(left, right);
  merged_id_.emplace(pair_key(left, right), id);
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(vocab_.size()));
  }
  return vocab_[id];
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, std::size_t vocab_size) {
  if (vocab_size < kBaseVocabSize) {
    throw ContractError("vocab_size must be at least " + std::to_string(kBaseVocabSize));
  }
  Tokenizer tok;

  std::map<std::string_view, std::int64_t> piece_counts;
  for (const auto& doc : corpus) {
    for (auto piece : pretokenize(doc)) {
      if (piece != "\n") ++piece_counts[piece];
    }
  }
  std::vector<Word> words;
  words.reserve(piece_counts.size());
  for (const auto& [piece, count] : piece_counts) {
    Word w;
    w.count = count;
    for (unsigned char b : piece) w.symbols.push_back(byte_token(b));
    words.push_back(std::move(w));
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;
  auto add_pairs = [&](std::size_t wi, std::int64_t sign,
                       std::vector<std::uint64_t>* touched) {
    const auto& s = words[wi].symbols;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const auto key = pair_key(s[i], s[i + 1]);
      pair_counts[key] += sign * words[wi].count;
      if (sign > 0) where[key].push_back(wi);
      if (touched) touched->push_back(key);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) add_pairs(wi, +1, nullptr);

  // Max-heap on count; among equal counts the lexicographically smaller
  // (left bytes, right bytes) pair wins. Stale entries are skipped on pop.
  struct Entry {
    std::int64_t count;
    std::uint64_t key;
  };
  auto bytes_of = [&tok](std::uint64_t key) {
    return std::pair<const std::string&, const std::string&>(
        tok.vocab_[static_cast<TokenId>(key >> 32)],
        tok.vocab_[static_cast<TokenId>(key & 0xffffffffu)]);
  };
  auto worse = [&](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    auto [al, ar] = bytes_of(a.key);
    auto [bl, br] = bytes_of(b.key);
    if (al != bl) return al > bl;
    return ar > br;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (const auto& [key, count] : pair_counts) heap.push({count, key});

  while (tok.vocab_.size() < vocab_size && !heap.empty()) {
    const Entry top = heap.top();
    heap.pop();
    auto it = pair_counts.find(top.key);
    if (it == pair_counts.end() || it->second != top.count) continue;
    if (top.count < 2) break;

    const auto left = static_cast<TokenId>(top.key >> 32);
    const auto right = static_cast<TokenId>(top.key & 0xffffffffu);
    const auto merged = static_cast<TokenId>(tok.vocab_.size());
    tok.add_merge(left, right);

    std::vector<std::size_t> affected = std::move(where[top.key]);
    where.erase(top.key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());

    std::vector<std::uint64_t> touched;
    for (std::size_t wi : affected) {
      auto& s = words[wi].symbols;
      bool present = false;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] == left && s[i + 1] == right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      add_pairs(wi, -1, &touched);
      std::vector<TokenId> next;
      next.reserve(s.size());
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(s[i]);
          ++i;
        }
      }
      s = std::move(next);
      add_pairs(wi, +1, &touched);
    }
    pair_counts.erase(top.key);
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (auto key : touched) {
      auto pc = pair_counts.find(key);
      if (pc == pair_counts.end()) continue;
      if (pc->second <= 0) {
        pair_counts.erase(pc);
        continue;
      }
      heap.push({pc->second, key});
    }
  }
  return tok;
}

void Tokenizer::encode_piece(std::string_view piece, std::vector<TokenId>& out) const {
  std::vector<TokenId> s;
  s.reserve(piece.size());
  for (unsigned char b : piece) s.push_back(byte_token(b));
  while (s.size() > 1) {
    // Lowest merged id == earliest learned merge.
    TokenId best = std::numeric_limits<TokenId>::max();
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      auto it = merged_id_.find(pair_key(s[i], s[i + 1]));
      if (it != merged_id_.end() && it->second < best) best = it->second;
    }
    if (best == std::numeric_limits<TokenId>::max()) break;
    const auto& [left, right] = merges_[static_cast<std::size_t>(best) - kBaseVocabSize];
    std::size_t w = 0;
    for (std::size_t i = 0; i < s.size();) {
      if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
        s[w++] = best;
        i += 2;
      } else {
        s[w++] = s[i++];
      }
    }
    s.resize(w);
  }
  out.insert(out.end(), s.begin(), s.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text, bool add_bos,
                                       bool add_eos) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size() / 2 + 2);
  if (add_bos) ids.push_back(kBosToken);
  for (auto piece : pretokenize(text)) encode_piece(piece, ids);
  if (add_eos) ids.push_back(kEosToken);
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    const auto& bytes = token_bytes(id);
    if (id >= kFirstByteToken) out += bytes;
  }
  return out;
}

std::size_t Tokenizer::offset_to_token_index(std::string_view text, std::size_t byte_offset,
                                             bool add_bos) const {
  if (byte_offset > text.size()) {
    throw ContractError("offset " + std::to_string(byte_offset) + " past end of text");
  }
  const auto ids = encode(text);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (pos == byte_offset) return i + (add_bos ? 1 : 0);
    if (pos > byte_offset) break;
    pos += vocab_[ids[i]].size();
  }
  if (pos == byte_offset) return ids.size() + (add_bos ? 1 : 0);
  throw ContractError("byte offset " + std::to_string(byte_offset) +
                      " is not a token boundary");
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  return {{"vocab_size", vocab_.size()},
          {"merges", std::move(merges)},
          {"specials", {{"pad", kPadToken}, {"bos", kBosToken}, {"eos", kEosToken}}}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    const auto& specials = j.at("specials");
    if (specials.at("pad").get<int>() != kPadToken ||
        specials.at("bos").get<int>() != kBosToken ||
        specials.at("eos").get<int>() != kEosToken) {
      throw DataError("tokenizer: unexpected special token ids");
    }
    Tokenizer tok;
    for (const auto& m : j.at("merges")) {
      if (!m.is_array() || m.size() != 2) throw DataError("tokenizer: malformed merge entry");
      const auto l = m[0].get<TokenId>();
      const auto r = m[1].get<TokenId>();
      const auto limit = static_cast<TokenId>(tok.vocab_.size());
      if (l < kFirstByteToken || r < kFirstByteToken || l >= limit || r >= limit) {
        throw DataError("tokenizer: merge refers to an unknown token");
      }
      if (tok.merged_id_.count(pair_key(l, r))) throw DataError("tokenizer: repeated merge");
      tok.add_merge(l, r);
    }
    if (j.at("vocab_size").get<std::size_t>() != tok.vocab_.size()) {
      throw DataError("tokenizer: vocab_size does not match merges");
    }
    return tok;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tokenizer: ") + e.what());
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace genrec
