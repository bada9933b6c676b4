#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace genrec {

using TokenId = std::int32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kBosToken = 1;
inline constexpr TokenId kEosToken = 2;
inline constexpr TokenId kFirstByteToken = 3;
inline constexpr std::size_t kBaseVocabSize = 256 + 3;

// Splits text into the units BPE merges never cross: every '\n' is its own
// piece, and a space following a non-space starts a new piece.
std::vector<std::string_view> pretokenize(std::string_view text);

// Byte-level BPE. Ids 0..2 are PAD/BOS/EOS, 3..258 the raw bytes, then one
// id per learned merge in learning order. Immutable once built.
class Tokenizer {
 public:
  using Merge = std::pair<TokenId, TokenId>;

  // Base byte vocabulary only.
  Tokenizer();

  // Greedy most-frequent-pair merging until `vocab_size` is reached or no
  // pair occurs at least twice. Ties go to the lexicographically smaller
  // (left bytes, right bytes) pair.
  static Tokenizer train(std::span<const std::string> corpus, std::size_t vocab_size);

  std::vector<TokenId> encode(std::string_view text, bool add_bos = false,
                              bool add_eos = false) const;

  // Specials are dropped. Throws ContractError on an id outside the vocab.
  std::string decode(std::span<const TokenId> ids) const;

  // Index of the token of encode(text, add_bos) whose span starts at
  // `byte_offset`; text.size() maps to the number of text tokens (plus BOS).
  // Throws ContractError when the offset falls inside a token.
  std::size_t offset_to_token_index(std::string_view text, std::size_t byte_offset,
                                    bool add_bos = false) const;

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& token_bytes(TokenId id) const;

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void add_merge(TokenId left, TokenId right);
  void encode_piece(std::string_view piece, std::vector<TokenId>& out) const;

  std::vector<std::string> vocab_;
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, TokenId> merged_id_;  // pair key -> new id
};

}  // namespace genrec
