#include "genrec/dataset.hpp"

#include <algorithm>

#include "genrec/error.hpp"

namespace genrec {
namespace {

// Largest count of most-recent titles whose encoding satisfies `fits`,
// found by bisection over the history length.
template <typename Encode, typename Fits>
auto fit_history(std::span<const ItemId> history, std::size_t cap, Encode&& encode, Fits&& fits) {
  if (history.empty()) throw ContractError("empty history");
  std::size_t hi = std::min(history.size(), cap);
  auto attempt = [&](std::size_t keep) { return encode(history.subspan(history.size() - keep)); };
  auto best = attempt(hi);
  if (fits(best)) return std::make_pair(best, hi);
  std::size_t lo = 1;
  auto low = attempt(lo);
  if (!fits(low)) {
    throw ContractError("prompt exceeds the maximum length even with a single history item");
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    auto candidate = attempt(mid);
    if (fits(candidate)) {
      lo = mid;
      low = std::move(candidate);
    } else {
      hi = mid;
    }
  }
  return std::make_pair(low, lo);
}

}  // namespace

EncodedExample encode_example(const SplitExample& example, const Catalog& catalog,
                              const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                              std::size_t max_len, std::size_t reserve) {
  auto encode = [&](std::span<const ItemId> hist) {
    const auto formatted = format_example(hist, example.target, catalog, tmpl, example.user_id);
    const auto rendered = render_for_training(formatted);
    EncodedExample out;
    out.tokens = tokenizer.encode(rendered.text, /*add_bos=*/true, /*add_eos=*/true);
    out.target_start = tokenizer.offset_to_token_index(rendered.text, rendered.output_offset,
                                                       /*add_bos=*/true);
    return out;
  };
  auto fits = [&](const EncodedExample& e) {
    return e.tokens.size() <= max_len && e.target_start + reserve <= max_len;
  };
  auto [encoded, kept] = fit_history(example.history, max_len, encode, fits);
  encoded.history_used = kept;
  return encoded;
}

std::size_t title_reserve(const Catalog& catalog, const Tokenizer& tokenizer) {
  std::size_t longest = 0;
  for (const auto& [id, title] : catalog.entries()) {
    longest = std::max(longest, tokenizer.encode(title).size());
  }
  return longest + 1;
}

std::vector<TokenId> encode_prompt(std::span<const ItemId> history, const Catalog& catalog,
                                   const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                                   std::size_t max_len, std::size_t reserve) {
  auto encode = [&](std::span<const ItemId> hist) {
    FormattedExample ex;
    ex.instruction = tmpl.instruction_text;
    for (std::size_t i = 0; i < hist.size(); ++i) {
      if (i) ex.input += kTitleJoiner;
      ex.input += catalog.title(hist[i]);
    }
    return tokenizer.encode(render_prompt(ex), /*add_bos=*/true);
  };
  auto fits = [&](const std::vector<TokenId>& t) { return t.size() + reserve <= max_len; };
  return fit_history(history, max_len, encode, fits).first;
}

Batch make_batch(std::span<const EncodedExample* const> examples) {
  if (examples.empty()) throw ContractError("make_batch: no examples");
  Batch batch;
  batch.batch = examples.size();
  for (const auto* ex : examples) batch.seq = std::max(batch.seq, ex->tokens.size());
  batch.tokens.assign(batch.batch * batch.seq, kPadToken);
  batch.loss_mask.assign(batch.batch * batch.seq, 0);
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& ex = *examples[b];
    std::copy(ex.tokens.begin(), ex.tokens.end(), batch.tokens.begin() + b * batch.seq);
    for (std::size_t t = std::max<std::size_t>(ex.target_start, 1); t < ex.tokens.size(); ++t) {
      batch.loss_mask[b * batch.seq + t] = 1;
    }
  }
  return batch;
}

}  // namespace genrec
