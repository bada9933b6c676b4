// genrec: ingest, split, train, recommend, evaluate, compare.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 numerical failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "genrec/checkpoint.hpp"
#include "genrec/decode.hpp"
#include "genrec/error.hpp"
#include "genrec/evaluate.hpp"
#include "genrec/ingest.hpp"
#include "genrec/manifest.hpp"
#include "genrec/prompt.hpp"
#include "genrec/run_config.hpp"
#include "genrec/tokenizer.hpp"
#include "genrec/train.hpp"

namespace fs = std::filesystem;
using namespace genrec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << '\n'; }

Catalog load_catalog(const fs::path& p) {
  auto in = open_in(p);
  return read_catalog(in, p.string());
}

LeaveOneOutSplit load_split(const fs::path& p) {
  auto in = open_in(p);
  return read_split(in, p.string());
}

Domain domain_of(const RunConfig& cfg) {
  return cfg.dataset == DatasetKind::kMovieLens ? Domain::kMovies : Domain::kGeneric;
}

// Train-visible counts: every test history minus its last item, which is the
// validation target.
std::unordered_map<ItemId, std::size_t> popularity_from_split(const LeaveOneOutSplit& split) {
  std::unordered_map<ItemId, std::size_t> counts;
  for (const auto& ex : split.test) {
    for (std::size_t i = 0; i + 1 < ex.history.size(); ++i) ++counts[ex.history[i]];
  }
  return counts;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) cfg = load_run_config(g.config);
  apply_overrides(cfg, g.overrides);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  return cfg;
}

fs::path output_dir(const Globals& g) {
  if (g.out.empty()) throw ContractError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

int cmd_ingest(const Globals& g, std::optional<std::string> kind, std::string interactions,
               std::string items, bool lenient) {
  RunConfig cfg = resolve(g);
  if (kind) apply_overrides(cfg, {"data.kind=" + *kind});
  if (!interactions.empty()) cfg.interactions = interactions;
  if (!items.empty()) cfg.items = items;
  if (lenient) cfg.strict = false;
  if (cfg.interactions.empty() || cfg.items.empty()) {
    throw ContractError("ingest needs --interactions and --items (or data.* in the config)");
  }
  const fs::path out = output_dir(g);

  ParseOptions opts;
  opts.strict = cfg.strict;
  opts.ratings_name = cfg.interactions.string();
  opts.items_name = cfg.items.string();
  auto ri = open_in(cfg.interactions);
  auto ii = open_in(cfg.items);
  ParsedDataset parsed = cfg.dataset == DatasetKind::kMovieLens ? parse_movielens(ri, ii, opts)
                                                                : parse_amazon(ri, ii, opts);
  const SequenceSet seqs = build_sequences(parsed.interactions, cfg.min_length);
  const DatasetStats stats = compute_stats(seqs.users, parsed.catalog);

  {
    auto f = open_out(out / "catalog.jsonl");
    write_catalog(f, parsed.catalog);
  }
  {
    auto f = open_out(out / "sequences.jsonl");
    write_sequences(f, seqs.users);
  }
  const auto& c = parsed.counters;
  write_json(out / "stats.json",
             {{"num_users", stats.num_users},
              {"num_items", stats.num_items},
              {"num_interactions", stats.num_interactions},
              {"catalog_size", stats.catalog_size},
              {"discarded_users", seqs.discarded_users},
              {"malformed_rows", c.malformed_rows},
              {"dropped_unknown_item", c.dropped_unknown_item},
              {"items_without_title", c.items_without_title},
              {"title_collisions", parsed.catalog.title_collisions().size()}});
  for (const auto& m : c.messages) std::cerr << "warning: " << m << '\n';
  Manifest{"ingest", cfg.to_json(), {cfg.interactions, cfg.items},
           {"catalog.jsonl", "sequences.jsonl", "stats.json"}}
      .write(out);
  std::cout << "users " << stats.num_users << ", items " << stats.num_items << ", interactions "
            << stats.num_interactions << ", catalog " << stats.catalog_size << '\n';
  return kExitOk;
}

int cmd_split(const Globals& g, const std::string& bundle, bool sliding) {
  RunConfig cfg = resolve(g);
  if (sliding) cfg.sliding_windows = true;
  const fs::path out = output_dir(g);
  const fs::path seq_path = fs::path(bundle) / "sequences.jsonl";
  auto in = open_in(seq_path);
  const auto seqs = read_sequences(in, seq_path.string());
  SplitOptions opts;
  opts.sliding_windows = cfg.sliding_windows;
  const auto split = split_leave_one_out(seqs, opts);
  {
    auto f = open_out(out / "split.jsonl");
    write_split(f, split);
  }
  Manifest{"split", cfg.to_json(), {seq_path}, {"split.jsonl"}}.write(out);
  std::cout << "train " << split.train.size() << ", valid " << split.valid.size() << ", test "
            << split.test.size() << '\n';
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& catalog_path, const std::string& split_path,
              bool resume) {
  RunConfig cfg = resolve(g);
  const fs::path out = output_dir(g);
  const Catalog catalog = load_catalog(catalog_path);
  const LeaveOneOutSplit split = load_split(split_path);
  const auto templates = templates_for(domain_of(cfg));

  Tokenizer tokenizer;
  const fs::path tok_path = out / "tokenizer.json";
  if (resume && fs::exists(tok_path)) {
    tokenizer = Tokenizer::load(tok_path);
  } else {
    std::vector<std::string> corpus;
    for (const auto& [id, title] : catalog.entries()) corpus.push_back(title);
    for (const auto& t : templates) corpus.push_back(t.instruction_text);
    corpus.emplace_back(std::string(kInstructionHeader) + std::string(kInputHeader) +
                        std::string(kResponseHeader) + std::string(kTitleJoiner));
    tokenizer = Tokenizer::train(corpus, cfg.tokenizer_vocab);
    tokenizer.save(tok_path);
  }
  cfg.model.vocab_size = tokenizer.vocab_size();
  cfg.train.seed = cfg.seed;

  FitInputs inputs{split, catalog, tokenizer, templates, templates.front()};
  FitOptions options;
  options.resume = resume;
  options.metadata = {{"command", "train"}};
  options.on_epoch = [](const EpochSummary& s, const Parameters<float>&) {
    std::cout << "epoch " << s.epoch << " step " << s.step << " train_loss " << s.train_loss
              << " val_loss " << s.val_loss << '\n';
    return true;
  };
  const FitResult result = fit(inputs, cfg.model, cfg.train, out, options);
  write_json(out / "config.json", cfg.to_json());
  Manifest{"train", cfg.to_json(), {catalog_path, split_path},
           {"tokenizer.json", "best.ckpt", "last.ckpt", "config.json"}}
      .write(out);
  std::cout << "steps " << result.steps << ", checkpoint " << result.best_checkpoint.string()
            << '\n';
  return kExitOk;
}

int cmd_recommend(const Globals& g, const std::string& model_dir, const std::string& which,
                  const std::string& catalog_path, const std::string& split_path,
                  const std::string& role) {
  RunConfig cfg = resolve(g);
  const fs::path out = output_dir(g);
  const fs::path ckpt = fs::path(model_dir) / (which + ".ckpt");
  const fs::path tok_path = fs::path(model_dir) / "tokenizer.json";
  const auto params = load_checkpoint<float>(ckpt);
  const auto tokenizer = Tokenizer::load(tok_path);
  if (tokenizer.vocab_size() != params.config.vocab_size) {
    throw DataError(ckpt.string() + ": vocabulary does not match " + tok_path.string());
  }
  const Catalog catalog = load_catalog(catalog_path);
  const LeaveOneOutSplit split = load_split(split_path);
  const auto& examples = role == "valid" ? split.valid : split.test;
  const auto trie = TitleTrie::build(catalog, tokenizer, popularity_from_split(split));
  const auto tmpl = templates_for(domain_of(cfg)).front();

  BeamOptions beam;
  beam.k = cfg.k;
  beam.beam_width = cfg.beam_width;
  std::vector<UserPrediction> predictions;
  std::size_t short_lists = 0;
  for (const auto& ex : examples) {
    auto ranked = recommend_topk(params, trie, tokenizer, catalog, ex.history, tmpl, beam);
    short_lists += ranked.warnings.empty() ? 0 : 1;
    predictions.push_back({ex.user_id, std::move(ranked.items)});
  }
  if (short_lists) {
    std::cerr << "warning: " << short_lists << " users received fewer than " << beam.k
              << " recommendations\n";
  }
  {
    auto f = open_out(out / "predictions.jsonl");
    write_predictions(f, predictions);
  }
  Manifest{"recommend", cfg.to_json(), {ckpt, tok_path, catalog_path, split_path},
           {"predictions.jsonl"}}
      .write(out);
  std::cout << "wrote " << predictions.size() << " ranked lists\n";
  return kExitOk;
}

int cmd_evaluate(const Globals& g, const std::string& pred_path, const std::string& split_path,
                 const std::vector<std::size_t>& ks, const std::string& model_name,
                 const std::string& role) {
  RunConfig cfg = resolve(g);
  const fs::path out = output_dir(g);
  auto in = open_in(pred_path);
  const auto predictions = read_predictions(in, pred_path);
  const auto split = load_split(split_path);
  std::vector<std::string> warnings;
  auto report = evaluate_split(predictions, role == "valid" ? split.valid : split.test, ks,
                               &warnings);
  report.dataset = cfg.dataset_name;
  report.model = model_name;
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  write_json(out / "metrics.json", report.to_json());
  const auto table = compare_reports({report}).table;
  open_out(out / "metrics.txt") << table;
  Manifest{"evaluate", cfg.to_json(), {pred_path, split_path}, {"metrics.json", "metrics.txt"}}
      .write(out);
  std::cout << table;
  return kExitOk;
}

int cmd_compare(const Globals& g, const std::vector<std::string>& paths) {
  RunConfig cfg = resolve(g);
  const fs::path out = output_dir(g);
  std::vector<MetricsReport> reports;
  std::vector<fs::path> inputs;
  for (const auto& p : paths) {
    auto in = open_in(p);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(p + ": " + e.what());
    }
    reports.push_back(MetricsReport::from_json(j));
    inputs.emplace_back(p);
  }
  const auto cmp = compare_reports(reports);
  open_out(out / "comparison.txt") << cmp.table;
  write_json(out / "comparison.json", cmp.json);
  Manifest{"compare", cfg.to_json(), inputs, {"comparison.txt", "comparison.json"}}.write(out);
  std::cout << cmp.table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative sequential recommendation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "INI run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random draw");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--set", g.overrides, "Override a config key: section.key=value");

  auto* ingest = app.add_subcommand("ingest", "Parse raw data into a bundle");
  std::optional<std::string> kind;
  std::string interactions, items;
  bool lenient = false;
  ingest->add_option("--kind", kind)->check(CLI::IsMember({"movielens", "amazon"}));
  ingest->add_option("--interactions", interactions, "ratings.csv or reviews JSON-lines");
  ingest->add_option("--items", items, "movies.csv or metadata JSON-lines");
  ingest->add_flag("--lenient", lenient, "Skip and count malformed rows");

  auto* split = app.add_subcommand("split", "Leave-one-out split of a bundle");
  std::string bundle;
  bool sliding = false;
  split->add_option("--bundle", bundle, "Directory written by ingest")->required();
  split->add_flag("--sliding-windows", sliding);

  auto* train = app.add_subcommand("train", "Train tokenizer and model");
  std::string catalog_path, split_path;
  bool resume = false;
  train->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);
  train->add_option("--split", split_path)->required()->check(CLI::ExistingFile);
  train->add_flag("--resume", resume, "Continue from last.ckpt in --out");

  auto* recommend = app.add_subcommand("recommend", "Top-k titles per user");
  std::string model_dir, which = "best", role = "test";
  recommend->add_option("--model", model_dir, "Directory written by train")->required();
  recommend->add_option("--checkpoint", which)->check(CLI::IsMember({"best", "last"}));
  recommend->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);
  recommend->add_option("--split", split_path)->required()->check(CLI::ExistingFile);
  recommend->add_option("--role", role)->check(CLI::IsMember({"test", "valid"}));

  auto* evaluate = app.add_subcommand("evaluate", "HR and NDCG of a prediction file");
  std::string pred_path, model_name = "genrec";
  std::vector<std::size_t> ks = kDefaultCutoffs;
  evaluate->add_option("--predictions", pred_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", split_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--k", ks, "Cutoffs")->delimiter(',');
  evaluate->add_option("--model-name", model_name);
  evaluate->add_option("--role", role)->check(CLI::IsMember({"test", "valid"}));

  auto* compare = app.add_subcommand("compare", "Side-by-side table of metric reports");
  std::vector<std::string> reports;
  compare->add_option("reports", reports, "metrics.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*ingest) return cmd_ingest(g, kind, interactions, items, lenient);
    if (*split) return cmd_split(g, bundle, sliding);
    if (*train) return cmd_train(g, catalog_path, split_path, resume);
    if (*recommend) return cmd_recommend(g, model_dir, which, catalog_path, split_path, role);
    if (*evaluate) return cmd_evaluate(g, pred_path, split_path, ks, model_name, role);
    if (*compare) return cmd_compare(g, reports);
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
