#include "genrec/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <functional>
#include <map>

#include "genrec/error.hpp"

namespace genrec {
namespace {

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ContractError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ContractError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"data.kind",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "movielens") c.dataset = DatasetKind::kMovieLens;
         else if (v == "amazon") c.dataset = DatasetKind::kAmazon;
         else throw ContractError(k + ": expected movielens or amazon, got '" + v + "'");
       }},
      {"data.name", [](RunConfig& c, auto&, const std::string& v) { c.dataset_name = v; }},
      {"data.interactions", [](RunConfig& c, auto&, const std::string& v) { c.interactions = v; }},
      {"data.items", [](RunConfig& c, auto&, const std::string& v) { c.items = v; }},
      {"data.strict", [](RunConfig& c, auto& k, auto& v) { c.strict = to_bool(k, v); }},
      {"split.min_length", [](RunConfig& c, auto& k, auto& v) { c.min_length = to_u64(k, v); }},
      {"split.sliding_windows",
       [](RunConfig& c, auto& k, auto& v) { c.sliding_windows = to_bool(k, v); }},
      {"tokenizer.vocab_size",
       [](RunConfig& c, auto& k, auto& v) { c.tokenizer_vocab = to_u64(k, v); }},
      {"model.d_model", [](RunConfig& c, auto& k, auto& v) { c.model.d_model = to_u64(k, v); }},
      {"model.n_layers", [](RunConfig& c, auto& k, auto& v) { c.model.n_layers = to_u64(k, v); }},
      {"model.n_heads", [](RunConfig& c, auto& k, auto& v) { c.model.n_heads = to_u64(k, v); }},
      {"model.d_ff", [](RunConfig& c, auto& k, auto& v) { c.model.d_ff = to_u64(k, v); }},
      {"model.max_len", [](RunConfig& c, auto& k, auto& v) { c.model.max_len = to_u64(k, v); }},
      {"model.dropout", [](RunConfig& c, auto& k, auto& v) { c.model.dropout = to_double(k, v); }},
      {"model.adapter_rank",
       [](RunConfig& c, auto& k, auto& v) { c.model.adapter_rank = to_u64(k, v); }},
      {"model.adapter_alpha",
       [](RunConfig& c, auto& k, auto& v) { c.model.adapter_alpha = to_double(k, v); }},
      {"model.adapter_targets",
       [](RunConfig& c, auto&, const std::string& v) {
         c.model.adapter_targets = adapter_sites_from_string(v);
       }},
      {"train.peak_lr", [](RunConfig& c, auto& k, auto& v) { c.train.peak_lr = to_double(k, v); }},
      {"train.warmup_steps",
       [](RunConfig& c, auto& k, auto& v) { c.train.warmup_steps = to_u64(k, v); }},
      {"train.batch_size",
       [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = to_u64(k, v); }},
      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = to_u64(k, v); }},
      {"train.weight_decay",
       [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = to_double(k, v); }},
      {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = to_double(k, v); }},
      {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = to_double(k, v); }},
      {"train.adam_eps",
       [](RunConfig& c, auto& k, auto& v) { c.train.adam_eps = to_double(k, v); }},
      {"train.grad_clip_norm",
       [](RunConfig& c, auto& k, const std::string& v) {
         if (v == "none") c.train.grad_clip_norm.reset();
         else c.train.grad_clip_norm = to_double(k, v);
       }},
      {"train.final_lr_fraction",
       [](RunConfig& c, auto& k, auto& v) { c.train.final_lr_fraction = to_double(k, v); }},
      {"train.adapters_only",
       [](RunConfig& c, auto& k, auto& v) { c.train.adapters_only = to_bool(k, v); }},
      {"decode.k", [](RunConfig& c, auto& k, auto& v) { c.k = to_u64(k, v); }},
      {"decode.beam_width", [](RunConfig& c, auto& k, auto& v) { c.beam_width = to_u64(k, v); }},
      {"run.seed", [](RunConfig& c, auto& k, auto& v) {
         c.seed = to_u64(k, v);
         c.train.seed = c.seed;
       }},
  };
  return table;
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ContractError("unknown config key: " + key);
  it->second(cfg, key, value);
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  return {{"data",
           {{"kind", dataset == DatasetKind::kMovieLens ? "movielens" : "amazon"},
            {"name", dataset_name},
            {"interactions", interactions.string()},
            {"items", items.string()},
            {"strict", strict}}},
          {"split", {{"min_length", min_length}, {"sliding_windows", sliding_windows}}},
          {"tokenizer", {{"vocab_size", tokenizer_vocab}}},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"decode", {{"k", k}, {"beam_width", beam_width}}},
          {"seed", seed}};
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ContractError("override must look like section.key=value: " + a);
    assign(cfg, a.substr(0, eq), a.substr(eq + 1));
  }
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw DataError(path.string(), e.line(), e.message());
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty()) throw ContractError(path.string() + ": key outside a section: " + section);
    for (const auto& [key, node] : entries) {
      assign(base, section + "." + key, node.get_value<std::string>());
    }
  }
  return base;
}

}  // namespace genrec
