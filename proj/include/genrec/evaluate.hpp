#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/decode.hpp"
#include "genrec/ingest.hpp"
#include "json.hpp"

namespace genrec {

// 1 if target is among the first k entries, else 0.
double hr_at_k(std::span<const ItemId> ranked, const ItemId& target, std::size_t k);

// One relevant item, ideal DCG 1: 1/log2(1 + rank) when rank <= k, else 0.
double ndcg_at_k(std::span<const ItemId> ranked, const ItemId& target, std::size_t k);

inline const std::vector<std::size_t> kDefaultCutoffs = {5, 10};

struct MetricsReport {
  std::string dataset;
  std::string model;
  std::map<std::size_t, double> hr;
  std::map<std::size_t, double> ndcg;
  std::size_t num_users = 0;

  std::vector<std::size_t> cutoffs() const;
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Per-cutoff means over the test users. Users without a prediction count as
// misses and are reported in `warnings`. Throws DataError on a user listed
// twice or a ranked list with repeated items.
MetricsReport evaluate_split(const std::vector<UserPrediction>& predictions,
                             const std::vector<SplitExample>& test,
                             const std::vector<std::size_t>& cutoffs = kDefaultCutoffs,
                             std::vector<std::string>* warnings = nullptr);

struct Comparison {
  std::string table;     // aligned text, best value per column marked with '*'
  nlohmann::json json;   // {"columns": [...], "rows": [...], "best": {...}}
  // column label -> models holding the best value (all of them on a tie)
  std::map<std::string, std::vector<std::string>> best;
};

// Rows are models, columns are (dataset, metric@k). Throws ContractError for
// an empty list or reports with different cutoffs.
Comparison compare_reports(const std::vector<MetricsReport>& reports);

}  // namespace genrec
