#include "genrec/prompt.hpp"

#include <ostream>
#include <random>

#include "genrec/error.hpp"
#include "json.hpp"

namespace genrec {

std::vector<PromptTemplate> default_template_bank() {
  // Entry 0 is the published example directive; the rest are our own wording.
  static const std::vector<std::pair<Domain, const char*>> kTexts = {
      {Domain::kMovies,
       "Given the movie viewing habits, what is the most probable movie they will choose to "
       "watch next?"},
      {Domain::kMovies,
       "Here is the list of movies this user watched, oldest first. Which movie will they "
       "watch next?"},
      {Domain::kMovies,
       "Predict the next film this viewer is going to watch from their viewing history."},
      {Domain::kMovies,
       "Using the films below as the viewer's recent history, name the one movie they are "
       "most likely to see next."},
      {Domain::kGeneric,
       "Given the user's interaction history, what is the most probable item they will "
       "interact with next?"},
      {Domain::kGeneric,
       "Here is the list of items this user interacted with, oldest first. Which item comes "
       "next?"},
      {Domain::kGeneric,
       "Predict the next product this customer is going to purchase from their purchase "
       "history."},
      {Domain::kGeneric,
       "Using the items below as the user's recent history, name the one item they are most "
       "likely to choose next."},
  };
  std::vector<PromptTemplate> bank;
  bank.reserve(kTexts.size());
  for (std::size_t i = 0; i < kTexts.size(); ++i) {
    bank.push_back({static_cast<int>(i), kTexts[i].first, kTexts[i].second});
  }
  return bank;
}

std::vector<PromptTemplate> templates_for(Domain domain) {
  std::vector<PromptTemplate> out;
  for (auto& t : default_template_bank()) {
    if (t.domain == domain) out.push_back(std::move(t));
  }
  return out;
}

FormattedExample format_example(std::span<const ItemId> history, const ItemId& target,
                                const Catalog& catalog, const PromptTemplate& tmpl,
                                const UserId& user_id) {
  if (history.empty()) throw ContractError("format_example: empty history");
  FormattedExample ex;
  ex.instruction = tmpl.instruction_text;
  ex.template_id = tmpl.template_id;
  ex.user_id = user_id;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) ex.input += kTitleJoiner;
    ex.input += catalog.title(history[i]);
  }
  ex.output = catalog.title(target);
  return ex;
}

std::string render_prompt(const FormattedExample& ex) {
  std::string text;
  text.reserve(kInstructionHeader.size() + ex.instruction.size() + kInputHeader.size() +
               ex.input.size() + kResponseHeader.size() + ex.output.size());
  text += kInstructionHeader;
  text += ex.instruction;
  text += kInputHeader;
  text += ex.input;
  text += kResponseHeader;
  return text;
}

RenderedExample render_for_training(const FormattedExample& ex) {
  RenderedExample r;
  r.text = render_prompt(ex);
  r.output_offset = r.text.size();
  r.text += ex.output;
  return r;
}

std::vector<FormattedExample> assign_templates(const std::vector<SplitExample>& examples,
                                               const Catalog& catalog,
                                               std::span<const PromptTemplate> bank,
                                               std::uint64_t seed) {
  if (bank.empty()) throw ContractError("assign_templates: empty template bank");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
  std::vector<FormattedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto& tmpl = bank[pick(rng)];
    out.push_back(format_example(ex.history, ex.target, catalog, tmpl, ex.user_id));
  }
  return out;
}

void write_formatted(std::ostream& out, const std::vector<FormattedExample>& examples) {
  for (const auto& ex : examples) {
    out << nlohmann::json{{"instruction", ex.instruction},
                          {"input", ex.input},
                          {"output", ex.output},
                          {"user_id", ex.user_id},
                          {"template_id", ex.template_id}}
               .dump()
        << '\n';
  }
}

}  // namespace genrec
