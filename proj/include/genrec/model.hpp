#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "genrec/tensor.hpp"
#include "genrec/tokenizer.hpp"
#include "json.hpp"

namespace genrec {

// Attention projections that may carry a low-rank adapter.
enum AdapterSite : unsigned {
  kAdapterQuery = 1u << 0,
  kAdapterKey = 1u << 1,
  kAdapterValue = 1u << 2,
  kAdapterOutput = 1u << 3,
};

std::string adapter_sites_to_string(unsigned sites);    // e.g. "q,v"
unsigned adapter_sites_from_string(const std::string& text);

struct ModelConfig {
  std::size_t vocab_size = 8192;
  std::size_t d_model = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 1024;
  std::size_t max_len = 256;
  double dropout = 0.0;
  std::size_t adapter_rank = 8;  // 0 disables adapters
  double adapter_alpha = 16.0;
  unsigned adapter_targets = kAdapterQuery | kAdapterValue;
  double norm_eps = 1e-5;

  void validate() const;  // throws ContractError
  std::size_t head_dim() const { return d_model / n_heads; }
  double adapter_scale() const {
    return adapter_rank ? adapter_alpha / static_cast<double>(adapter_rank) : 0.0;
  }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

enum class TensorKind { kEmbedding, kWeight, kNorm, kAdapter };

// y = x W^T + (alpha/r) * (x A^T) B^T. W is [out, in], A is [r, in], B is [out, r].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> lora_a;
  Tensor<T> lora_b;
  bool has_adapter() const { return !lora_a.empty(); }
};

template <typename T>
struct Block {
  Tensor<T> attn_norm;
  Linear<T> query, key, value, output;
  Tensor<T> ffn_norm;
  Linear<T> up, down;
};

template <typename T>
struct Parameters {
  ModelConfig config;
  Tensor<T> token_embedding;     // [vocab, d]
  Tensor<T> position_embedding;  // [max_len, d]
  std::vector<Block<T>> blocks;
  Tensor<T> final_norm;          // [d]
  Tensor<T> lm_head;             // [vocab, d]

  // Weights and embeddings ~ N(0, 0.02), norms = 1, adapter A ~
  // U(-1/sqrt(in), 1/sqrt(in)), adapter B = 0.
  static Parameters init(const ModelConfig& config, std::uint64_t seed);
  // Same shapes, all zero. Used as a gradient buffer.
  static Parameters zeros_like(const Parameters& other);

  // Visits every tensor in a fixed order with its canonical name.
  void for_each(const std::function<void(const std::string&, TensorKind, Tensor<T>&)>& fn);
  void for_each(const std::function<void(const std::string&, TensorKind, const Tensor<T>&)>& fn) const;

  std::size_t num_values() const;
};

template <typename T>
struct NamedTensor {
  std::string name;
  TensorKind kind;
  Tensor<T>* tensor;
};

// adapters_only selects exactly the adapter A/B tensors; throws ContractError
// when the model has no adapters.
template <typename T>
std::vector<NamedTensor<T>> trainable_parameters(Parameters<T>& params, bool adapters_only);

// Right-padded token matrix. loss_mask[b, t] = 1 marks token t as a
// prediction target (scored from position t-1); column 0 is never a target.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> loss_mask;

  void validate(const ModelConfig& config) const;  // throws ContractError
  std::size_t masked_count() const;
};

struct LossSum {
  double sum = 0.0;        // summed negative log-likelihood
  std::size_t count = 0;   // number of masked positions
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

struct BackwardOptions {
  bool base_gradients = true;  // false skips dW for frozen base weights
  bool training = false;       // enables dropout
  std::uint64_t dropout_seed = 0;
};

// Logits [batch, seq, vocab] in evaluation mode.
template <typename T>
Tensor<T> forward(const Parameters<T>& params, std::span<const TokenId> tokens,
                  std::size_t batch, std::size_t seq);

// Mean masked next-token cross-entropy. Throws ContractError on an all-zero mask.
template <typename T>
T loss(const Parameters<T>& params, const Batch& batch);

// Summed masked cross-entropy and its position count, evaluation mode.
template <typename T>
LossSum loss_sum(const Parameters<T>& params, const Batch& batch);

// x W^T + scale * (x A^T) B^T for n rows of x.
template <typename T>
std::vector<T> project(const Linear<T>& lin, double scale, std::span<const T> x, std::size_t n);

// Adds the gradient of the *summed* masked loss into `grads` and returns the
// sum with its position count. Callers divide by the total count, which makes
// splitting a batch and summing the parts exact up to rounding.
template <typename T>
LossSum accumulate_gradients(const Parameters<T>& params, const Batch& batch,
                             Parameters<T>& grads, const BackwardOptions& options = {});

// Log-softmax rows of a single sequence at the requested positions.
template <typename T>
std::vector<std::vector<T>> log_probs_at(const Parameters<T>& params,
                                         std::span<const TokenId> tokens,
                                         std::span<const std::size_t> positions);

// Keys and values for a run of consecutive positions, one [rows, d] buffer
// per layer.
template <typename T>
struct KeyValueCache {
  std::size_t rows = 0;
  std::vector<std::vector<T>> keys;
  std::vector<std::vector<T>> values;
};

// Runs `tokens` from position 0, fills `cache`, and returns the next-token
// log-probabilities after the last token.
template <typename T>
std::vector<T> prefill(const Parameters<T>& params, std::span<const TokenId> tokens,
                       KeyValueCache<T>& cache);

// Feeds one token to each of several continuations that share `prefix`.
// suffixes[i] holds the continuation's own positions and grows by one row.
// Returns [n, vocab] log-probabilities. Bitwise equal to a full forward over
// prefix + suffix + token.
template <typename T>
Tensor<T> extend(const Parameters<T>& params, const KeyValueCache<T>& prefix,
                 std::span<KeyValueCache<T>* const> suffixes, std::span<const TokenId> tokens);

}  // namespace genrec
