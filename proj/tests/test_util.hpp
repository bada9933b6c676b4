#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "genrec/model.hpp"

namespace genrec::testing {

inline ModelConfig tiny_config(std::size_t vocab = 50) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 32;
  c.adapter_rank = 4;
  c.adapter_alpha = 8.0;
  return c;
}

// Random B so adapter gradients are not trivially zero.
template <typename T>
void randomize_adapters(Parameters<T>& p, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  p.for_each([&](const std::string& name, TensorKind kind, Tensor<T>& t) {
    if (kind == TensorKind::kAdapter && name.find("lora_b") != std::string::npos) {
      for (auto& v : t.data) v = static_cast<T>(dist(rng));
    }
  });
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("genrec_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace genrec::testing

#include <fstream>

#include "genrec/error.hpp"
#include "genrec/ingest.hpp"
#include "genrec/prompt.hpp"
#include "genrec/tokenizer.hpp"

namespace genrec::testing {

struct ToyData {
  Catalog catalog;
  std::vector<UserSequence> sequences;
  LeaveOneOutSplit split;
};

// One of the bundled MovieLens-format fixtures under data/.
inline ToyData load_toy(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(GENREC_SOURCE_DIR) / "data" / name;
  std::ifstream ratings(dir / "ratings.csv"), movies(dir / "movies.csv");
  if (!ratings || !movies) throw DataError("missing fixture " + dir.string());
  auto parsed = parse_movielens(ratings, movies);
  ToyData toy;
  toy.catalog = std::move(parsed.catalog);
  toy.sequences = build_sequences(parsed.interactions).users;
  toy.split = split_leave_one_out(toy.sequences);
  return toy;
}

// Tokenizer over titles, instructions and section headers, the same corpus
// the train command uses.
inline Tokenizer corpus_tokenizer(const Catalog& catalog, std::size_t vocab) {
  std::vector<std::string> corpus;
  for (const auto& [id, title] : catalog.entries()) corpus.push_back(title);
  for (const auto& t : default_template_bank()) corpus.push_back(t.instruction_text);
  corpus.emplace_back(std::string(kInstructionHeader) + std::string(kInputHeader) +
                      std::string(kResponseHeader));
  return Tokenizer::train(corpus, vocab);
}

}  // namespace genrec::testing
