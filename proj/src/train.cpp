#include "genrec/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "genrec/checkpoint.hpp"
#include "genrec/error.hpp"

namespace genrec {
namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

bool decays(TensorKind kind) {
  return kind == TensorKind::kWeight || kind == TensorKind::kEmbedding;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ContractError("peak_lr must be positive");
  if (batch_size < 1) throw ContractError("batch_size must be at least 1");
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  if (weight_decay < 0.0) throw ContractError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("betas must lie in [0, 1)");
  }
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
    throw ContractError("grad_clip_norm must be positive when set");
  }
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    throw ContractError("final_lr_fraction must lie in [0, 1]");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"peak_lr", peak_lr},
          {"warmup_steps", warmup_steps},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"grad_clip_norm", grad_clip_norm ? nlohmann::json(*grad_clip_norm) : nlohmann::json()},
          {"final_lr_fraction", final_lr_fraction},
          {"adapters_only", adapters_only},
          {"seed", seed},
          {"schedule", "linear warmup, then linear decay to final_lr_fraction * peak_lr"}};
}

std::size_t steps_per_epoch(std::size_t num_examples, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch_size must be at least 1");
  return (num_examples + batch_size - 1) / batch_size;
}

double lr_schedule(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (step == 0) throw ContractError("lr_schedule: steps are 1-based");
  if (step <= cfg.warmup_steps) {
    return cfg.peak_lr * (static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
  }
  if (total_steps <= cfg.warmup_steps) return cfg.peak_lr;
  const double progress = std::min(
      1.0, static_cast<double>(step - cfg.warmup_steps) /
               static_cast<double>(total_steps - cfg.warmup_steps));
  return cfg.peak_lr * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
}

template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> first_moment,
                  std::span<T> second_moment, std::size_t step, double lr, const TrainConfig& cfg,
                  bool decay) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T wd = decay ? static_cast<T>(cfg.weight_decay) : T(0);
  const T lr_t = static_cast<T>(lr);
  const T inv_c1 = static_cast<T>(1.0 / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.adam_eps);
  const auto size = static_cast<std::ptrdiff_t>(param.size());
#pragma omp parallel for schedule(static) if (param.size() > (1u << 15))
  for (std::ptrdiff_t i = 0; i < size; ++i) {
    const T g = grad[i];
    first_moment[i] = b1 * first_moment[i] + (T(1) - b1) * g;
    second_moment[i] = b2 * second_moment[i] + (T(1) - b2) * g * g;
    const T m_hat = first_moment[i] * inv_c1;
    const T v_hat = second_moment[i] * inv_c2;
    param[i] -= lr_t * (m_hat / (std::sqrt(v_hat) + eps) + wd * param[i]);
  }
}

template <typename T>
TrainState<T> TrainState<T>::create(Parameters<T>& params, const TrainConfig& cfg) {
  TrainState state;
  state.seed = cfg.seed;
  for (const auto& nt : trainable_parameters(params, cfg.adapters_only)) {
    state.first_moment.emplace_back(nt.tensor->shape);
    state.second_moment.emplace_back(nt.tensor->shape);
  }
  return state;
}

template <typename T>
void TrainState<T>::save(const std::filesystem::path& path, Parameters<T>& params,
                         bool adapters_only) const {
  const auto trainable = trainable_parameters(params, adapters_only);
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    tensors.emplace_back("m/" + trainable[i].name, &first_moment[i]);
    tensors.emplace_back("v/" + trainable[i].name, &second_moment[i]);
  }
  nlohmann::json extra = {{"step", step},
                          {"epochs_done", epochs_done},
                          {"seed", seed},
                          {"best_val_loss", std::isfinite(best_val_loss)
                                                ? nlohmann::json(best_val_loss)
                                                : nlohmann::json()}};
  save_tensors<T>(path, extra, tensors);
}

template <typename T>
TrainState<T> TrainState<T>::load(const std::filesystem::path& path, Parameters<T>& params,
                                  bool adapters_only) {
  nlohmann::json header;
  auto tensors = load_tensors<T>(path, &header);
  TrainState state;
  state.step = header.at("step").get<std::size_t>();
  state.epochs_done = header.at("epochs_done").get<std::size_t>();
  state.seed = header.at("seed").get<std::uint64_t>();
  if (!header.at("best_val_loss").is_null()) {
    state.best_val_loss = header.at("best_val_loss").get<double>();
  }
  for (const auto& nt : trainable_parameters(params, adapters_only)) {
    for (auto [prefix, dest] : {std::pair{"m/", &state.first_moment},
                                std::pair{"v/", &state.second_moment}}) {
      auto it = tensors.find(prefix + nt.name);
      if (it == tensors.end() || it->second.shape != nt.tensor->shape) {
        throw DataError(path.string() + ": optimizer state does not match " + nt.name);
      }
      dest->push_back(std::move(it->second));
    }
  }
  return state;
}

template <typename T>
double train_step(Parameters<T>& params, TrainState<T>& state, const Batch& batch,
                  const TrainConfig& cfg, double lr) {
  auto grads = Parameters<T>::zeros_like(params);
  BackwardOptions options;
  options.base_gradients = !cfg.adapters_only;
  options.training = true;
  options.dropout_seed = mix_seed(cfg.seed, state.step);
  const LossSum ls = accumulate_gradients(params, batch, grads, options);
  if (ls.count == 0) throw ContractError("train_step: batch has no target tokens");
  const double mean = ls.mean();
  if (!std::isfinite(mean)) {
    throw NumericalError("non-finite loss at step " + std::to_string(state.step + 1));
  }

  auto trainable = trainable_parameters(params, cfg.adapters_only);
  auto grad_views = trainable_parameters(grads, cfg.adapters_only);
  const T inv_count = static_cast<T>(1.0 / static_cast<double>(ls.count));
  double norm_sq = 0.0;
  for (auto& g : grad_views) {
    for (auto& v : g.tensor->data) {
      v *= inv_count;
      norm_sq += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm)) {
    throw NumericalError("non-finite gradient norm at step " + std::to_string(state.step + 1));
  }
  if (cfg.grad_clip_norm && norm > *cfg.grad_clip_norm) {
    const T factor = static_cast<T>(*cfg.grad_clip_norm / norm);
    for (auto& g : grad_views) {
      for (auto& v : g.tensor->data) v *= factor;
    }
  }

  ++state.step;
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    adamw_update<T>(trainable[i].tensor->span(), grad_views[i].tensor->span(),
                    state.first_moment[i].span(), state.second_moment[i].span(), state.step, lr,
                    cfg, decays(trainable[i].kind));
  }
  return mean;
}

double evaluate_loss(const Parameters<float>& params, std::span<const EncodedExample> examples,
                     std::size_t batch_size) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<const EncodedExample*> members;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) {
      members.push_back(&examples[i]);
    }
    const Batch batch = make_batch(members);
    const LossSum ls = loss_sum(params, batch);
    sum += ls.sum;
    count += ls.count;
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

FitResult fit(const FitInputs& inputs, const ModelConfig& model_cfg, const TrainConfig& cfg,
              const std::filesystem::path& out_dir, const FitOptions& options) {
  cfg.validate();
  model_cfg.validate();
  if (inputs.split.train.empty()) throw ContractError("fit: empty training set");
  if (model_cfg.vocab_size != inputs.tokenizer.vocab_size()) {
    throw ContractError("fit: model vocab_size does not match the tokenizer");
  }
  std::filesystem::create_directories(out_dir);

  const std::size_t reserve = title_reserve(inputs.catalog, inputs.tokenizer);
  const auto formatted_templates =
      assign_templates(inputs.split.train, inputs.catalog, inputs.train_templates, cfg.seed);
  std::vector<EncodedExample> train;
  train.reserve(inputs.split.train.size());
  for (std::size_t i = 0; i < inputs.split.train.size(); ++i) {
    const int id = formatted_templates[i].template_id;
    const auto& tmpl = *std::find_if(inputs.train_templates.begin(), inputs.train_templates.end(),
                                     [id](const PromptTemplate& t) { return t.template_id == id; });
    train.push_back(encode_example(inputs.split.train[i], inputs.catalog, tmpl, inputs.tokenizer,
                                   model_cfg.max_len, reserve));
  }
  std::vector<EncodedExample> valid;
  valid.reserve(inputs.split.valid.size());
  for (const auto& ex : inputs.split.valid) {
    valid.push_back(encode_example(ex, inputs.catalog, inputs.eval_template, inputs.tokenizer,
                                   model_cfg.max_len, reserve));
  }

  FitResult result;
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";
  const auto state_path = out_dir / "last.state";
  const auto log_path = out_dir / "train_log.jsonl";

  Parameters<float> params;
  TrainState<float> state;
  const bool resuming = options.resume && std::filesystem::exists(result.last_checkpoint) &&
                        std::filesystem::exists(state_path);
  if (resuming) {
    params = load_checkpoint<float>(result.last_checkpoint);
    if (!(params.config == model_cfg)) {
      throw ContractError("fit: resume checkpoint config differs from the requested config");
    }
    state = TrainState<float>::load(state_path, params, cfg.adapters_only);
  } else {
    params = options.initial ? *options.initial : Parameters<float>::init(model_cfg, cfg.seed);
    if (!(params.config == model_cfg)) {
      throw ContractError("fit: initial parameters do not match the model config");
    }
    state = TrainState<float>::create(params, cfg);
  }

  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  const auto wall_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  };

  const std::size_t per_epoch = steps_per_epoch(train.size(), cfg.batch_size);
  const std::size_t total_steps = per_epoch * cfg.epochs;
  log << nlohmann::json{{"event", resuming ? "resume" : "start"},
                        {"train_config", cfg.to_json()},
                        {"model_config", model_cfg.to_json()},
                        {"train_examples", train.size()},
                        {"valid_examples", valid.size()},
                        {"steps_per_epoch", per_epoch},
                        {"total_steps", total_steps},
                        {"seed", cfg.seed}}
             .dump()
      << '\n';

  nlohmann::json metadata = options.metadata;
  metadata["seed"] = cfg.seed;

  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, 1000003ull + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const EncodedExample*> members;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        members.push_back(&train[order[i]]);
      }
      const Batch batch = make_batch(members);
      const double lr = lr_schedule(cfg, state.step + 1, total_steps);
      const double step_loss = train_step(params, state, batch, cfg, lr);
      epoch_loss += step_loss;
      ++epoch_batches;
      log << nlohmann::json{{"step", state.step}, {"lr", lr}, {"loss", step_loss},
                            {"wall_time", elapsed()}}
                 .dump()
          << '\n';
    }

    EpochSummary summary;
    summary.epoch = epoch + 1;
    summary.step = state.step;
    summary.train_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
    summary.val_loss = evaluate_loss(params, valid, cfg.batch_size);
    result.epochs.push_back(summary);
    state.epochs_done = epoch + 1;

    const bool improved = !std::isnan(summary.val_loss) && summary.val_loss < state.best_val_loss;
    if (improved) state.best_val_loss = summary.val_loss;
    metadata["epoch"] = summary.epoch;
    metadata["step"] = summary.step;
    save_checkpoint(result.last_checkpoint, params, metadata);
    state.save(state_path, params, cfg.adapters_only);
    if (improved || !std::filesystem::exists(result.best_checkpoint)) {
      save_checkpoint(result.best_checkpoint, params, metadata);
    }
    log << nlohmann::json{{"epoch", summary.epoch},
                          {"step", summary.step},
                          {"train_loss", summary.train_loss},
                          {"val_loss", std::isnan(summary.val_loss) ? nlohmann::json()
                                                                    : nlohmann::json(summary.val_loss)},
                          {"wall_time", elapsed()}}
               .dump()
        << '\n';
    log.flush();
    if (options.on_epoch && !options.on_epoch(summary, params)) break;
  }
  result.steps = state.step;
  return result;
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                  std::span<float>, std::size_t, double, const TrainConfig&, bool);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, std::size_t, double, const TrainConfig&,
                                   bool);
template struct TrainState<float>;
template struct TrainState<double>;
template double train_step<float>(Parameters<float>&, TrainState<float>&, const Batch&,
                                  const TrainConfig&, double);
template double train_step<double>(Parameters<double>&, TrainState<double>&, const Batch&,
                                   const TrainConfig&, double);

}  // namespace genrec
