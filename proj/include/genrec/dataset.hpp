#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "genrec/ingest.hpp"
#include "genrec/model.hpp"
#include "genrec/prompt.hpp"
#include "genrec/tokenizer.hpp"

namespace genrec {

// BOS + rendered text + EOS, with the index of the first output token.
struct EncodedExample {
  std::vector<TokenId> tokens;
  std::size_t target_start = 0;
  std::size_t history_used = 0;  // titles kept after truncation
};

// Encodes a training example. Oldest history titles are dropped first until
// the sequence fits max_len and the prompt leaves `reserve` tokens free;
// throws ContractError if not even the most recent title fits. Passing the
// same reserve as encode_prompt gives identical prompts for a history.
EncodedExample encode_example(const SplitExample& example, const Catalog& catalog,
                              const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                              std::size_t max_len, std::size_t reserve = 0);

// Room for the longest catalog title plus the end marker.
std::size_t title_reserve(const Catalog& catalog, const Tokenizer& tokenizer);

// BOS + prompt up to the response header, truncated so that `reserve` more
// tokens still fit within max_len.
std::vector<TokenId> encode_prompt(std::span<const ItemId> history, const Catalog& catalog,
                                   const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                                   std::size_t max_len, std::size_t reserve);

// Right-pads to the longest member; the loss mask covers the output title
// tokens and the end marker.
Batch make_batch(std::span<const EncodedExample* const> examples);

}  // namespace genrec
