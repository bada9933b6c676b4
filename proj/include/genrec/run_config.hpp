#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "genrec/model.hpp"
#include "genrec/train.hpp"
#include "json.hpp"

namespace genrec {

enum class DatasetKind { kMovieLens, kAmazon };

// Everything a command needs. Loaded from an INI file with sections
// [data], [split], [tokenizer], [model], [train], [decode]; see README.
struct RunConfig {
  DatasetKind dataset = DatasetKind::kMovieLens;
  std::string dataset_name = "movielens";
  std::filesystem::path interactions;  // ratings.csv or reviews JSON-lines
  std::filesystem::path items;         // movies.csv or metadata JSON-lines
  bool strict = true;
  std::size_t min_length = 3;
  bool sliding_windows = false;
  std::size_t tokenizer_vocab = 8192;
  ModelConfig model;
  TrainConfig train;
  std::size_t k = 10;
  std::size_t beam_width = 20;
  std::uint64_t seed = 42;

  nlohmann::json to_json() const;
};

// Applies `section.key=value` assignments on top of `cfg`. Throws
// ContractError for unknown keys or unparsable values.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

// Reads an INI file; every key must be known. Throws DataError on a
// malformed file and ContractError on an unknown key.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace genrec
