#include "genrec/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "genrec/error.hpp"

namespace genrec {

namespace {

std::size_t rank_of(std::span<const ItemId> ranked, const ItemId& target, std::size_t k) {
  if (k == 0) throw ContractError("cutoff k must be at least 1");
  const std::size_t limit = std::min(k, ranked.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (ranked[i] == target) return i + 1;
  }
  return 0;
}

std::string format_value(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

double hr_at_k(std::span<const ItemId> ranked, const ItemId& target, std::size_t k) {
  return rank_of(ranked, target, k) ? 1.0 : 0.0;
}

double ndcg_at_k(std::span<const ItemId> ranked, const ItemId& target, std::size_t k) {
  const std::size_t rank = rank_of(ranked, target, k);
  return rank ? 1.0 / std::log2(1.0 + static_cast<double>(rank)) : 0.0;
}

std::vector<std::size_t> MetricsReport::cutoffs() const {
  std::vector<std::size_t> ks;
  for (const auto& [k, _] : hr) ks.push_back(k);
  return ks;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json h = nlohmann::json::object(), n = nlohmann::json::object();
  for (const auto& [k, v] : hr) h[std::to_string(k)] = v;
  for (const auto& [k, v] : ndcg) n[std::to_string(k)] = v;
  return {{"dataset", dataset}, {"model", model}, {"hr", h}, {"ndcg", n}, {"num_users", num_users}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.num_users = j.value("num_users", std::size_t{0});
    for (const auto& [k, v] : j.at("hr").items()) r.hr[std::stoul(k)] = v.get<double>();
    for (const auto& [k, v] : j.at("ndcg").items()) r.ndcg[std::stoul(k)] = v.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("metrics report: bad cutoff key: ") + e.what());
  }
  if (r.cutoffs() != [&] {
        std::vector<std::size_t> ks;
        for (const auto& [k, _] : r.ndcg) ks.push_back(k);
        return ks;
      }()) {
    throw DataError("metrics report: hr and ndcg list different cutoffs");
  }
  return r;
}

MetricsReport evaluate_split(const std::vector<UserPrediction>& predictions,
                             const std::vector<SplitExample>& test,
                             const std::vector<std::size_t>& cutoffs,
                             std::vector<std::string>* warnings) {
  if (cutoffs.empty()) throw ContractError("evaluate_split: no cutoffs");
  std::unordered_map<UserId, const UserPrediction*> by_user;
  for (const auto& p : predictions) {
    if (!by_user.emplace(p.user_id, &p).second) {
      throw DataError("predictions list user " + p.user_id + " more than once");
    }
    std::unordered_set<ItemId> seen;
    for (const auto& it : p.items) {
      if (!seen.insert(it.item_id).second) {
        throw DataError("predictions for user " + p.user_id + " repeat item " + it.item_id);
      }
    }
  }

  MetricsReport report;
  report.num_users = test.size();
  std::map<std::size_t, double> hr_sum, ndcg_sum;
  for (std::size_t k : cutoffs) hr_sum[k] = ndcg_sum[k] = 0.0;
  std::size_t missing = 0;
  std::unordered_set<UserId> test_users;
  for (const auto& ex : test) {
    test_users.insert(ex.user_id);
    auto it = by_user.find(ex.user_id);
    if (it == by_user.end()) {
      ++missing;
      continue;
    }
    std::vector<ItemId> ranked;
    ranked.reserve(it->second->items.size());
    for (const auto& s : it->second->items) ranked.push_back(s.item_id);
    for (std::size_t k : cutoffs) {
      hr_sum[k] += hr_at_k(ranked, ex.target, k);
      ndcg_sum[k] += ndcg_at_k(ranked, ex.target, k);
    }
  }
  const double n = static_cast<double>(test.size());
  for (std::size_t k : cutoffs) {
    report.hr[k] = test.empty() ? 0.0 : hr_sum[k] / n;
    report.ndcg[k] = test.empty() ? 0.0 : ndcg_sum[k] / n;
  }
  if (warnings) {
    if (missing) {
      warnings->push_back(std::to_string(missing) +
                          " test users have no prediction and count as misses");
    }
    std::size_t extra = 0;
    for (const auto& p : predictions) extra += test_users.count(p.user_id) ? 0 : 1;
    if (extra) warnings->push_back(std::to_string(extra) + " predictions name users outside the test split");
  }
  return report;
}

Comparison compare_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("compare_reports: no reports");
  const auto ks = reports.front().cutoffs();
  for (const auto& r : reports) {
    if (r.cutoffs() != ks) {
      throw ContractError("compare_reports: " + r.model + " on " + r.dataset +
                          " uses different cutoffs");
    }
  }

  std::vector<std::string> datasets, models;
  for (const auto& r : reports) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
    if (std::find(models.begin(), models.end(), r.model) == models.end()) {
      models.push_back(r.model);
    }
  }
  auto find = [&](const std::string& model, const std::string& dataset) -> const MetricsReport* {
    const MetricsReport* found = nullptr;
    for (const auto& r : reports) {
      if (r.model == model && r.dataset == dataset) {
        if (found) throw ContractError("compare_reports: duplicate " + model + " on " + dataset);
        found = &r;
      }
    }
    return found;
  };

  struct Column {
    std::string label;
    std::string dataset;
    bool is_hr;
    std::size_t k;
  };
  std::vector<Column> columns;
  for (const auto& ds : datasets) {
    for (std::size_t k : ks) {
      columns.push_back({ds + " HR@" + std::to_string(k), ds, true, k});
      columns.push_back({ds + " NDCG@" + std::to_string(k), ds, false, k});
    }
  }

  Comparison out;
  std::vector<std::vector<std::string>> cells(models.size(),
                                              std::vector<std::string>(columns.size(), "-"));
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t m = 0; m < models.size(); ++m) rows.push_back({{"model", models[m]}});
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto& col = columns[c];
    double best = -1.0;
    std::vector<std::optional<double>> values(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
      if (const auto* r = find(models[m], col.dataset)) {
        values[m] = col.is_hr ? r->hr.at(col.k) : r->ndcg.at(col.k);
        best = std::max(best, *values[m]);
      }
    }
    for (std::size_t m = 0; m < models.size(); ++m) {
      if (!values[m]) {
        rows[m][col.label] = nullptr;
        continue;
      }
      rows[m][col.label] = *values[m];
      const bool is_best = *values[m] == best;
      cells[m][c] = format_value(*values[m]) + (is_best ? "*" : "");
      if (is_best) out.best[col.label].push_back(models[m]);
    }
  }

  std::vector<std::size_t> width(columns.size() + 1);
  width[0] = std::string("model").size();
  for (const auto& m : models) width[0] = std::max(width[0], m.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    width[c + 1] = columns[c].label.size();
    for (const auto& row : cells) width[c + 1] = std::max(width[c + 1], row[c].size());
  }
  std::ostringstream table;
  table << std::left << std::setw(static_cast<int>(width[0])) << "model";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    table << "  " << std::right << std::setw(static_cast<int>(width[c + 1])) << columns[c].label;
  }
  table << '\n';
  for (std::size_t m = 0; m < models.size(); ++m) {
    table << std::left << std::setw(static_cast<int>(width[0])) << models[m];
    for (std::size_t c = 0; c < columns.size(); ++c) {
      table << "  " << std::right << std::setw(static_cast<int>(width[c + 1])) << cells[m][c];
    }
    table << '\n';
  }
  table << "* best in column\n";
  out.table = table.str();

  nlohmann::json labels = nlohmann::json::array();
  for (const auto& col : columns) labels.push_back(col.label);
  out.json = {{"columns", labels}, {"rows", rows}, {"best", out.best}};
  return out;
}

}  // namespace genrec
