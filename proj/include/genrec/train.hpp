#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "genrec/dataset.hpp"
#include "genrec/ingest.hpp"
#include "genrec/model.hpp"
#include "genrec/prompt.hpp"
#include "genrec/tokenizer.hpp"
#include "json.hpp"

namespace genrec {

struct TrainConfig {
  double peak_lr = 3e-4;
  std::size_t warmup_steps = 1000;
  std::size_t batch_size = 128;
  std::size_t epochs = 5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> grad_clip_norm = 1.0;
  double final_lr_fraction = 0.1;  // lr at the last step, relative to peak
  bool adapters_only = false;
  std::uint64_t seed = 42;

  void validate() const;  // throws ContractError
  nlohmann::json to_json() const;
};

std::size_t steps_per_epoch(std::size_t num_examples, std::size_t batch_size);

// Linear warmup to peak over warmup_steps, then linear decay to
// final_lr_fraction * peak at total_steps. Steps are 1-based.
double lr_schedule(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

// One decoupled-weight-decay Adam update on a flat tensor. `step` is the
// 1-based update count used for bias correction.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> first_moment,
                  std::span<T> second_moment, std::size_t step, double lr, const TrainConfig& cfg,
                  bool decay);

template <typename T>
struct TrainState {
  std::size_t step = 0;
  std::size_t epochs_done = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  std::vector<Tensor<T>> first_moment;   // aligned with trainable_parameters()
  std::vector<Tensor<T>> second_moment;

  static TrainState create(Parameters<T>& params, const TrainConfig& cfg);
  void save(const std::filesystem::path& path, Parameters<T>& params, bool adapters_only) const;
  static TrainState load(const std::filesystem::path& path, Parameters<T>& params,
                         bool adapters_only);
};

// One optimizer step at learning rate `lr`. Returns the batch's mean loss.
// Throws NumericalError on a non-finite loss or gradient.
template <typename T>
double train_step(Parameters<T>& params, TrainState<T>& state, const Batch& batch,
                  const TrainConfig& cfg, double lr);

struct EpochSummary {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FitOptions {
  bool resume = false;
  // Starting weights; random init from cfg.seed when null.
  const Parameters<float>* initial = nullptr;
  // Called after each epoch; return false to stop early.
  std::function<bool(const EpochSummary&, const Parameters<float>&)> on_epoch;
  nlohmann::json metadata = nlohmann::json::object();  // copied into checkpoints
};

struct FitInputs {
  const LeaveOneOutSplit& split;
  const Catalog& catalog;
  const Tokenizer& tokenizer;
  std::span<const PromptTemplate> train_templates;
  PromptTemplate eval_template;
};

struct FitResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::size_t steps = 0;
  std::vector<EpochSummary> epochs;
};

// Mean masked loss over `examples`, evaluated in chunks of batch_size.
double evaluate_loss(const Parameters<float>& params, std::span<const EncodedExample> examples,
                     std::size_t batch_size);

// Writes best.ckpt, last.ckpt, last.state and train_log.jsonl to out_dir.
FitResult fit(const FitInputs& inputs, const ModelConfig& model_cfg, const TrainConfig& cfg,
              const std::filesystem::path& out_dir, const FitOptions& options = {});

}  // namespace genrec
