#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "genrec/ingest.hpp"

namespace genrec {

enum class Domain { kMovies, kGeneric };

struct PromptTemplate {
  int template_id = 0;
  Domain domain = Domain::kMovies;
  std::string instruction_text;
};

struct FormattedExample {
  std::string instruction;
  std::string input;   // history titles joined by ", "
  std::string output;  // title of the target item
  UserId user_id;
  int template_id = 0;

  bool operator==(const FormattedExample&) const = default;
};

// Section headers of the rendered layout. Each ends in a newline, which the
// tokenizer never merges across.
inline constexpr std::string_view kInstructionHeader = "### Instruction:\n";
inline constexpr std::string_view kInputHeader = "\n### Input:\n";
inline constexpr std::string_view kResponseHeader = "\n### Response:\n";
inline constexpr std::string_view kTitleJoiner = ", ";

// Entry 0 is the movie-recommendation directive used for every evaluation
// prompt on movie catalogs. Ids equal positions.
std::vector<PromptTemplate> default_template_bank();

// The subset of the bank phrased for one domain, ids preserved.
std::vector<PromptTemplate> templates_for(Domain domain);

FormattedExample format_example(std::span<const ItemId> history, const ItemId& target,
                                const Catalog& catalog, const PromptTemplate& tmpl,
                                const UserId& user_id = {});

struct RenderedExample {
  std::string text;             // ends right after the output title
  std::size_t output_offset = 0;  // byte offset of the first output byte
};

// `### Instruction:\n{instruction}\n### Input:\n{input}\n### Response:\n{output}`.
// The end-of-sequence marker is a token, appended by the tokenizer.
RenderedExample render_for_training(const FormattedExample& ex);

// The rendered text up to and including the response header; the decoder
// generates the output from here.
std::string render_prompt(const FormattedExample& ex);

// Pick a template per example with a seeded draw. Same seed, same result.
std::vector<FormattedExample> assign_templates(const std::vector<SplitExample>& examples,
                                               const Catalog& catalog,
                                               std::span<const PromptTemplate> bank,
                                               std::uint64_t seed);

void write_formatted(std::ostream& out, const std::vector<FormattedExample>& examples);

}  // namespace genrec
