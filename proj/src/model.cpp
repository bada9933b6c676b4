#include "genrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "genrec/error.hpp"
#include "genrec/kernels.hpp"

namespace genrec {
namespace {

using I64 = std::int64_t;

template <typename T>
std::span<const T> cspan(const std::vector<T>& v) {
  return std::span<const T>(v);
}

template <typename T>
std::span<const T> cspan(const Tensor<T>& t) {
  return t.span();
}

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
}

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, std::size_t rank, bool adapter) {
  Linear<T> lin;
  lin.weight = Tensor<T>({static_cast<I64>(out), static_cast<I64>(in)});
  if (adapter && rank > 0) {
    lin.lora_a = Tensor<T>({static_cast<I64>(rank), static_cast<I64>(in)});
    lin.lora_b = Tensor<T>({static_cast<I64>(out), static_cast<I64>(rank)});
  }
  return lin;
}

// ---------------------------------------------------------------------------
// Forward pieces shared by the batched pass and the incremental decoder.

template <typename T>
struct LinearTrace {
  std::vector<T> scaled_low_rank;  // (alpha/r) * x A^T, [n, r]
};

template <typename T>
void linear_forward(const Linear<T>& lin, T scale, std::span<const T> x, std::size_t n,
                    std::span<T> y, LinearTrace<T>* trace) {
  const auto out = static_cast<std::size_t>(lin.weight.shape[0]);
  const auto in = static_cast<std::size_t>(lin.weight.shape[1]);
  kernels::matmul_nt<T>(x, cspan(lin.weight), y, n, in, out);
  if (!lin.has_adapter()) return;
  const auto rank = static_cast<std::size_t>(lin.lora_a.shape[0]);
  std::vector<T> z(n * rank);
  kernels::matmul_nt<T>(x, cspan(lin.lora_a), z, n, in, rank);
  for (auto& v : z) v *= scale;
  kernels::matmul_nt<T>(z, cspan(lin.lora_b), y, n, rank, out, /*accumulate=*/true);
  if (trace) trace->scaled_low_rank = std::move(z);
}

template <typename T>
void linear_backward(const Linear<T>& lin, Linear<T>& grad, T scale, std::span<const T> x,
                     const LinearTrace<T>& trace, std::span<const T> dy, std::size_t n,
                     std::span<T> dx, bool base_gradients) {
  const auto out = static_cast<std::size_t>(lin.weight.shape[0]);
  const auto in = static_cast<std::size_t>(lin.weight.shape[1]);
  kernels::matmul_nn<T>(dy, cspan(lin.weight), dx, n, out, in, /*accumulate=*/true);
  if (base_gradients) kernels::matmul_tn<T>(dy, x, grad.weight.span(), n, out, in, true);
  if (!lin.has_adapter()) return;
  const auto rank = static_cast<std::size_t>(lin.lora_a.shape[0]);
  kernels::matmul_tn<T>(dy, cspan(trace.scaled_low_rank), grad.lora_b.span(), n, out, rank, true);
  std::vector<T> dz(n * rank);
  kernels::matmul_nn<T>(dy, cspan(lin.lora_b), dz, n, out, rank);
  for (auto& v : dz) v *= scale;
  kernels::matmul_tn<T>(dz, x, grad.lora_a.span(), n, rank, in, true);
  kernels::matmul_nn<T>(dz, cspan(lin.lora_a), dx, n, rank, in, true);
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void apply_dropout(std::vector<T>& values, std::vector<T>& mask, double p, std::mt19937_64& rng) {
  mask.resize(values.size());
  std::bernoulli_distribution keep(1.0 - p);
  const T kept = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < values.size(); ++i) {
    mask[i] = keep(rng) ? kept : T(0);
    values[i] *= mask[i];
  }
}

template <typename T>
struct LayerTrace {
  std::vector<T> x_in, h1, inv1, q, k, v, probs, att, attn_drop, x_mid, h2, inv2, up, act,
      ffn_drop;
  LinearTrace<T> tq, tk, tv, to, tup, tdown;
};

template <typename T>
struct ForwardTrace {
  std::vector<LayerTrace<T>> layers;
  std::vector<T> x_final, h_final, inv_final;
};

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens, std::size_t batch,
                  std::size_t seq) {
  if (seq == 0 || batch == 0) throw ContractError("empty token matrix");
  if (seq > config.max_len) {
    throw ContractError("sequence length " + std::to_string(seq) + " exceeds max_len " +
                        std::to_string(config.max_len));
  }
  if (tokens.size() != batch * seq) throw ContractError("token matrix size mismatch");
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

// Runs the decoder over a [batch, seq] token matrix and leaves the final
// normalized hidden states in trace.h_final.
template <typename T>
void forward_trace(const Parameters<T>& params, std::span<const TokenId> tokens,
                   std::size_t batch, std::size_t seq, ForwardTrace<T>& trace, bool training,
                   std::uint64_t dropout_seed) {
  const auto& cfg = params.config;
  check_tokens(cfg, tokens, batch, seq);
  const std::size_t n = batch * seq;
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  const T eps = static_cast<T>(cfg.norm_eps);
  const T scale = static_cast<T>(cfg.adapter_scale());
  const bool dropout = training && cfg.dropout > 0.0;
  std::mt19937_64 rng(dropout_seed);

  std::vector<T> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* te = params.token_embedding.row(static_cast<std::size_t>(tokens[i]));
    const T* pe = params.position_embedding.row(i % seq);
    T* xr = x.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) xr[j] = te[j] + pe[j];
  }

  trace.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& blk = params.blocks[l];
    auto& lt = trace.layers[l];
    lt.x_in = x;
    lt.h1.resize(n * d);
    lt.inv1.resize(n);
    kernels::rmsnorm_forward<T>(x, cspan(blk.attn_norm), lt.h1, lt.inv1, n, d, eps);
    lt.q.resize(n * d);
    lt.k.resize(n * d);
    lt.v.resize(n * d);
    linear_forward(blk.query, scale, cspan(lt.h1), n, std::span<T>(lt.q), &lt.tq);
    linear_forward(blk.key, scale, cspan(lt.h1), n, std::span<T>(lt.k), &lt.tk);
    linear_forward(blk.value, scale, cspan(lt.h1), n, std::span<T>(lt.v), &lt.tv);
    lt.probs.resize(batch * cfg.n_heads * seq * seq);
    lt.att.resize(n * d);
    kernels::attention_forward<T>(lt.q, lt.k, lt.v, lt.probs, lt.att, batch, seq, cfg.n_heads,
                                  cfg.head_dim());
    std::vector<T> o(n * d);
    linear_forward(blk.output, scale, cspan(lt.att), n, std::span<T>(o), &lt.to);
    if (dropout) apply_dropout(o, lt.attn_drop, cfg.dropout, rng);
    add_into<T>(x, o);
    lt.x_mid = x;
    lt.h2.resize(n * d);
    lt.inv2.resize(n);
    kernels::rmsnorm_forward<T>(x, cspan(blk.ffn_norm), lt.h2, lt.inv2, n, d, eps);
    lt.up.resize(n * ff);
    lt.act.resize(n * ff);
    linear_forward(blk.up, scale, cspan(lt.h2), n, std::span<T>(lt.up), &lt.tup);
    kernels::gelu_forward<T>(lt.up, lt.act);
    std::vector<T> f(n * d);
    linear_forward(blk.down, scale, cspan(lt.act), n, std::span<T>(f), &lt.tdown);
    if (dropout) apply_dropout(f, lt.ffn_drop, cfg.dropout, rng);
    add_into<T>(x, f);
  }
  trace.x_final = std::move(x);
  trace.h_final.resize(n * d);
  trace.inv_final.resize(n);
  kernels::rmsnorm_forward<T>(trace.x_final, cspan(params.final_norm), trace.h_final,
                              trace.inv_final, n, d, eps);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string adapter_sites_to_string(unsigned sites) {
  std::string out;
  auto add = [&](unsigned bit, const char* name) {
    if (!(sites & bit)) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(kAdapterQuery, "q");
  add(kAdapterKey, "k");
  add(kAdapterValue, "v");
  add(kAdapterOutput, "o");
  return out;
}

unsigned adapter_sites_from_string(const std::string& text) {
  unsigned sites = 0;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part.erase(std::remove_if(part.begin(), part.end(), ::isspace), part.end());
    if (part == "q" || part == "query") {
      sites |= kAdapterQuery;
    } else if (part == "k" || part == "key") {
      sites |= kAdapterKey;
    } else if (part == "v" || part == "value") {
      sites |= kAdapterValue;
    } else if (part == "o" || part == "output") {
      sites |= kAdapterOutput;
    } else if (!part.empty()) {
      throw ContractError("unknown adapter target \"" + part + "\"");
    }
  }
  return sites;
}

void ModelConfig::validate() const {
  if (vocab_size < 3) throw ContractError("vocab_size must cover the special tokens");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ContractError("d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0 || d_ff == 0) throw ContractError("n_layers and d_ff must be positive");
  if (max_len < 2) throw ContractError("max_len must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must be in [0, 1)");
  if (adapter_rank > 0 && !(adapter_alpha > 0.0)) {
    throw ContractError("adapter_alpha must be positive");
  }
  if (!(norm_eps > 0.0)) throw ContractError("norm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},     {"d_model", d_model},
          {"n_layers", n_layers},         {"n_heads", n_heads},
          {"d_ff", d_ff},                 {"max_len", max_len},
          {"dropout", dropout},           {"adapter_rank", adapter_rank},
          {"adapter_alpha", adapter_alpha},
          {"adapter_targets", adapter_sites_to_string(adapter_targets)},
          {"norm_eps", norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.adapter_rank = j.at("adapter_rank").get<std::size_t>();
  c.adapter_alpha = j.at("adapter_alpha").get<double>();
  c.adapter_targets = adapter_sites_from_string(j.at("adapter_targets").get<std::string>());
  c.norm_eps = j.at("norm_eps").get<double>();
  c.validate();
  return c;
}

template <typename T>
Parameters<T> Parameters<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Parameters p;
  p.config = config;
  const auto d = static_cast<I64>(config.d_model);
  const auto ff = config.d_ff;
  const auto r = config.adapter_rank;
  const unsigned sites = config.adapter_targets;
  p.token_embedding = Tensor<T>({static_cast<I64>(config.vocab_size), d});
  p.position_embedding = Tensor<T>({static_cast<I64>(config.max_len), d});
  p.blocks.resize(config.n_layers);
  for (auto& b : p.blocks) {
    b.attn_norm = Tensor<T>({d});
    b.query = make_linear<T>(config.d_model, config.d_model, r, sites & kAdapterQuery);
    b.key = make_linear<T>(config.d_model, config.d_model, r, sites & kAdapterKey);
    b.value = make_linear<T>(config.d_model, config.d_model, r, sites & kAdapterValue);
    b.output = make_linear<T>(config.d_model, config.d_model, r, sites & kAdapterOutput);
    b.ffn_norm = Tensor<T>({d});
    b.up = make_linear<T>(config.d_model, ff, 0, false);
    b.down = make_linear<T>(ff, config.d_model, 0, false);
  }
  p.final_norm = Tensor<T>({d});
  p.lm_head = Tensor<T>({static_cast<I64>(config.vocab_size), d});

  std::mt19937_64 rng(seed);
  p.for_each([&](const std::string&, TensorKind kind, Tensor<T>& t) {
    switch (kind) {
      case TensorKind::kEmbedding:
      case TensorKind::kWeight:
        fill_normal(t, rng, 0.02);
        break;
      case TensorKind::kNorm:
        std::fill(t.data.begin(), t.data.end(), T(1));
        break;
      case TensorKind::kAdapter:
        break;  // handled below
    }
  });
  for (auto& b : p.blocks) {
    for (Linear<T>* lin : {&b.query, &b.key, &b.value, &b.output}) {
      if (!lin->has_adapter()) continue;
      fill_uniform(lin->lora_a, rng, 1.0 / std::sqrt(static_cast<double>(lin->lora_a.shape[1])));
      lin->lora_b.zero();
    }
  }
  return p;
}

template <typename T>
Parameters<T> Parameters<T>::zeros_like(const Parameters& other) {
  Parameters p = other;
  p.for_each([](const std::string&, TensorKind, Tensor<T>& t) { t.zero(); });
  return p;
}

template <typename T>
void Parameters<T>::for_each(
    const std::function<void(const std::string&, TensorKind, Tensor<T>&)>& fn) {
  fn("tok_emb", TensorKind::kEmbedding, token_embedding);
  fn("pos_emb", TensorKind::kEmbedding, position_embedding);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto& b = blocks[l];
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    fn(prefix + "attn_norm", TensorKind::kNorm, b.attn_norm);
    auto linear = [&](const std::string& name, Linear<T>& lin) {
      fn(prefix + name + ".weight", TensorKind::kWeight, lin.weight);
      if (lin.has_adapter()) {
        fn(prefix + name + ".lora_a", TensorKind::kAdapter, lin.lora_a);
        fn(prefix + name + ".lora_b", TensorKind::kAdapter, lin.lora_b);
      }
    };
    linear("attn.q", b.query);
    linear("attn.k", b.key);
    linear("attn.v", b.value);
    linear("attn.o", b.output);
    fn(prefix + "ffn_norm", TensorKind::kNorm, b.ffn_norm);
    linear("ffn.up", b.up);
    linear("ffn.down", b.down);
  }
  fn("final_norm", TensorKind::kNorm, final_norm);
  fn("lm_head", TensorKind::kWeight, lm_head);
}

template <typename T>
void Parameters<T>::for_each(
    const std::function<void(const std::string&, TensorKind, const Tensor<T>&)>& fn) const {
  const_cast<Parameters*>(this)->for_each(
      [&](const std::string& name, TensorKind kind, Tensor<T>& t) { fn(name, kind, t); });
}

template <typename T>
std::size_t Parameters<T>::num_values() const {
  std::size_t total = 0;
  for_each([&](const std::string&, TensorKind, const Tensor<T>& t) { total += t.size(); });
  return total;
}

template <typename T>
std::vector<NamedTensor<T>> trainable_parameters(Parameters<T>& params, bool adapters_only) {
  std::vector<NamedTensor<T>> out;
  params.for_each([&](const std::string& name, TensorKind kind, Tensor<T>& t) {
    if (!adapters_only || kind == TensorKind::kAdapter) out.push_back({name, kind, &t});
  });
  if (out.empty()) throw ContractError("adapters_only requested but the model has no adapters");
  return out;
}

void Batch::validate(const ModelConfig& config) const {
  check_tokens(config, tokens, batch, seq);
  if (loss_mask.size() != tokens.size()) throw ContractError("loss mask size mismatch");
  for (std::size_t b = 0; b < batch; ++b) {
    if (loss_mask[b * seq]) throw ContractError("position 0 cannot be a prediction target");
  }
  for (auto m : loss_mask) {
    if (m > 1) throw ContractError("loss mask values must be 0 or 1");
  }
}

std::size_t Batch::masked_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1));
}

template <typename T>
Tensor<T> forward(const Parameters<T>& params, std::span<const TokenId> tokens,
                  std::size_t batch, std::size_t seq) {
  ForwardTrace<T> trace;
  forward_trace(params, tokens, batch, seq, trace, false, 0);
  const auto& cfg = params.config;
  Tensor<T> logits({static_cast<I64>(batch), static_cast<I64>(seq),
                    static_cast<I64>(cfg.vocab_size)});
  kernels::matmul_nt<T>(trace.h_final, cspan(params.lm_head), logits.span(), batch * seq,
                        cfg.d_model, cfg.vocab_size);
  return logits;
}

template <typename T>
LossSum loss_sum(const Parameters<T>& params, const Batch& batch) {
  batch.validate(params.config);
  ForwardTrace<T> trace;
  forward_trace(params, batch.tokens, batch.batch, batch.seq, trace, false, 0);
  const auto& cfg = params.config;
  const std::size_t d = cfg.d_model;
  const std::size_t vocab = cfg.vocab_size;
  std::vector<T> logits(vocab), lp(vocab);
  LossSum result;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 1; t < batch.seq; ++t) {
      if (!batch.loss_mask[b * batch.seq + t]) continue;
      const std::size_t row = b * batch.seq + t - 1;
      kernels::matmul_nt<T>(std::span<const T>(trace.h_final.data() + row * d, d),
                            cspan(params.lm_head), logits, 1, d, vocab);
      kernels::log_softmax_row(logits.data(), lp.data(), vocab);
      result.sum -= static_cast<double>(lp[static_cast<std::size_t>(batch.tokens[b * batch.seq + t])]);
      ++result.count;
    }
  }
  return result;
}

template <typename T>
T loss(const Parameters<T>& params, const Batch& batch) {
  if (batch.masked_count() == 0) throw ContractError("loss: all-zero loss mask");
  return static_cast<T>(loss_sum(params, batch).mean());
}

template <typename T>
std::vector<T> project(const Linear<T>& lin, double scale, std::span<const T> x, std::size_t n) {
  const auto in = static_cast<std::size_t>(lin.weight.shape[1]);
  if (x.size() != n * in) throw ContractError("project: input size mismatch");
  std::vector<T> y(n * static_cast<std::size_t>(lin.weight.shape[0]));
  linear_forward<T>(lin, static_cast<T>(scale), x, n, std::span<T>(y), nullptr);
  return y;
}

template <typename T>
LossSum accumulate_gradients(const Parameters<T>& params, const Batch& batch,
                             Parameters<T>& grads, const BackwardOptions& options) {
  batch.validate(params.config);
  const auto& cfg = params.config;
  const std::size_t n = batch.batch * batch.seq;
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  const std::size_t vocab = cfg.vocab_size;
  const T scale = static_cast<T>(cfg.adapter_scale());
  const bool base = options.base_gradients;

  ForwardTrace<T> trace;
  forward_trace(params, batch.tokens, batch.batch, batch.seq, trace, options.training,
                options.dropout_seed);

  // Only rows that predict a masked token reach the output projection.
  std::vector<std::size_t> rows;
  std::vector<TokenId> targets;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 1; t < batch.seq; ++t) {
      if (!batch.loss_mask[b * batch.seq + t]) continue;
      rows.push_back(b * batch.seq + t - 1);
      targets.push_back(batch.tokens[b * batch.seq + t]);
    }
  }
  LossSum result;
  result.count = rows.size();
  if (rows.empty()) return result;

  const std::size_t m = rows.size();
  std::vector<T> hsel(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(trace.h_final.data() + rows[i] * d, d, hsel.data() + i * d);
  }
  std::vector<T> logits(m * vocab);
  kernels::matmul_nt<T>(hsel, cspan(params.lm_head), logits, m, d, vocab);
  std::vector<T> lp(vocab);
  for (std::size_t i = 0; i < m; ++i) {
    T* row = logits.data() + i * vocab;
    kernels::log_softmax_row(row, lp.data(), vocab);
    result.sum -= static_cast<double>(lp[static_cast<std::size_t>(targets[i])]);
    for (std::size_t j = 0; j < vocab; ++j) row[j] = std::exp(lp[j]);
    row[targets[i]] -= T(1);
  }
  if (!std::isfinite(result.sum)) throw NumericalError("non-finite loss");

  if (base) kernels::matmul_tn<T>(logits, hsel, grads.lm_head.span(), m, vocab, d, true);
  std::vector<T> dhsel(m * d);
  kernels::matmul_nn<T>(logits, cspan(params.lm_head), dhsel, m, vocab, d);
  std::vector<T> dh(n * d, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(dhsel.data() + i * d, d, dh.data() + rows[i] * d);
  }

  std::vector<T> dgain_scratch(d);
  auto gain_grad = [&](Tensor<T>& g) -> std::span<T> {
    if (base) return g.span();
    return std::span<T>(dgain_scratch);
  };

  std::vector<T> dx(n * d, T(0));
  kernels::rmsnorm_backward<T>(trace.x_final, cspan(params.final_norm), trace.inv_final, dh, dx,
                               gain_grad(grads.final_norm), n, d);

  std::vector<T> dbranch(n * d), dact(n * ff), dup(n * ff), dh2(n * d), datt(n * d);
  std::vector<T> dq(n * d), dk(n * d), dv(n * d), dh1(n * d);
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& blk = params.blocks[li];
    auto& gblk = grads.blocks[li];
    const auto& lt = trace.layers[li];

    // x_out = x_mid + drop(down(gelu(up(norm(x_mid)))))
    dbranch = dx;
    if (!lt.ffn_drop.empty()) {
      for (std::size_t i = 0; i < dbranch.size(); ++i) dbranch[i] *= lt.ffn_drop[i];
    }
    std::fill(dact.begin(), dact.end(), T(0));
    linear_backward(blk.down, gblk.down, scale, cspan(lt.act), lt.tdown, cspan(dbranch), n,
                    std::span<T>(dact), base);
    kernels::gelu_backward<T>(lt.up, dact, dup);
    std::fill(dh2.begin(), dh2.end(), T(0));
    linear_backward(blk.up, gblk.up, scale, cspan(lt.h2), lt.tup, cspan(dup), n,
                    std::span<T>(dh2), base);
    kernels::rmsnorm_backward<T>(lt.x_mid, cspan(blk.ffn_norm), lt.inv2, dh2, dx,
                                 gain_grad(gblk.ffn_norm), n, d);

    // x_mid = x_in + drop(out(attention(q, k, v)))
    dbranch = dx;
    if (!lt.attn_drop.empty()) {
      for (std::size_t i = 0; i < dbranch.size(); ++i) dbranch[i] *= lt.attn_drop[i];
    }
    std::fill(datt.begin(), datt.end(), T(0));
    linear_backward(blk.output, gblk.output, scale, cspan(lt.att), lt.to, cspan(dbranch), n,
                    std::span<T>(datt), base);
    kernels::attention_backward<T>(lt.q, lt.k, lt.v, lt.probs, datt, dq, dk, dv, batch.batch,
                                   batch.seq, cfg.n_heads, cfg.head_dim());
    std::fill(dh1.begin(), dh1.end(), T(0));
    linear_backward(blk.query, gblk.query, scale, cspan(lt.h1), lt.tq, cspan(dq), n,
                    std::span<T>(dh1), base);
    linear_backward(blk.key, gblk.key, scale, cspan(lt.h1), lt.tk, cspan(dk), n,
                    std::span<T>(dh1), base);
    linear_backward(blk.value, gblk.value, scale, cspan(lt.h1), lt.tv, cspan(dv), n,
                    std::span<T>(dh1), base);
    kernels::rmsnorm_backward<T>(lt.x_in, cspan(blk.attn_norm), lt.inv1, dh1, dx,
                                 gain_grad(gblk.attn_norm), n, d);
  }

  if (base) {
    for (std::size_t i = 0; i < n; ++i) {
      T* gt = grads.token_embedding.row(static_cast<std::size_t>(batch.tokens[i]));
      T* gp = grads.position_embedding.row(i % batch.seq);
      const T* g = dx.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        gt[j] += g[j];
        gp[j] += g[j];
      }
    }
  }
  return result;
}

template <typename T>
std::vector<std::vector<T>> log_probs_at(const Parameters<T>& params,
                                         std::span<const TokenId> tokens,
                                         std::span<const std::size_t> positions) {
  ForwardTrace<T> trace;
  forward_trace(params, tokens, 1, tokens.size(), trace, false, 0);
  const auto& cfg = params.config;
  std::vector<std::vector<T>> out;
  std::vector<T> logits(cfg.vocab_size);
  for (std::size_t pos : positions) {
    if (pos >= tokens.size()) throw ContractError("log_probs_at: position out of range");
    kernels::matmul_nt<T>(
        std::span<const T>(trace.h_final.data() + pos * cfg.d_model, cfg.d_model),
        cspan(params.lm_head), logits, 1, cfg.d_model, cfg.vocab_size);
    std::vector<T> lp(cfg.vocab_size);
    kernels::log_softmax_row(logits.data(), lp.data(), cfg.vocab_size);
    out.push_back(std::move(lp));
  }
  return out;
}

template <typename T>
std::vector<T> prefill(const Parameters<T>& params, std::span<const TokenId> tokens,
                       KeyValueCache<T>& cache) {
  ForwardTrace<T> trace;
  forward_trace(params, tokens, 1, tokens.size(), trace, false, 0);
  const auto& cfg = params.config;
  cache.rows = tokens.size();
  cache.keys.resize(cfg.n_layers);
  cache.values.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    cache.keys[l] = std::move(trace.layers[l].k);
    cache.values[l] = std::move(trace.layers[l].v);
  }
  std::vector<T> logits(cfg.vocab_size), lp(cfg.vocab_size);
  const std::size_t last = tokens.size() - 1;
  kernels::matmul_nt<T>(
      std::span<const T>(trace.h_final.data() + last * cfg.d_model, cfg.d_model),
      cspan(params.lm_head), logits, 1, cfg.d_model, cfg.vocab_size);
  kernels::log_softmax_row(logits.data(), lp.data(), cfg.vocab_size);
  return lp;
}

template <typename T>
Tensor<T> extend(const Parameters<T>& params, const KeyValueCache<T>& prefix,
                 std::span<KeyValueCache<T>* const> suffixes, std::span<const TokenId> tokens) {
  const auto& cfg = params.config;
  const std::size_t n = tokens.size();
  if (suffixes.size() != n) throw ContractError("extend: one token per continuation");
  if (n == 0) return Tensor<T>({0, static_cast<I64>(cfg.vocab_size)});
  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim();
  const T eps = static_cast<T>(cfg.norm_eps);
  const T scale = static_cast<T>(cfg.adapter_scale());

  std::vector<T> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    auto& suffix = *suffixes[i];
    if (suffix.keys.empty()) {
      suffix.keys.resize(cfg.n_layers);
      suffix.values.resize(cfg.n_layers);
    }
    const std::size_t pos = prefix.rows + suffix.rows;
    if (pos >= cfg.max_len) throw ContractError("extend: sequence would exceed max_len");
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= cfg.vocab_size) {
      throw ContractError("extend: token outside vocabulary");
    }
    const T* te = params.token_embedding.row(static_cast<std::size_t>(tokens[i]));
    const T* pe = params.position_embedding.row(pos);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = te[j] + pe[j];
  }

  std::vector<T> h(n * d), inv(n), q(n * d), k(n * d), v(n * d), att(n * d), o(n * d);
  std::vector<T> up(n * cfg.d_ff), act(n * cfg.d_ff), f(n * d);
  std::vector<T> probs(cfg.max_len);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& blk = params.blocks[l];
    kernels::rmsnorm_forward<T>(x, cspan(blk.attn_norm), h, inv, n, d, eps);
    linear_forward<T>(blk.query, scale, cspan(h), n, std::span<T>(q), nullptr);
    linear_forward<T>(blk.key, scale, cspan(h), n, std::span<T>(k), nullptr);
    linear_forward<T>(blk.value, scale, cspan(h), n, std::span<T>(v), nullptr);
    for (std::size_t i = 0; i < n; ++i) {
      auto& suffix = *suffixes[i];
      suffix.keys[l].insert(suffix.keys[l].end(), k.begin() + i * d, k.begin() + (i + 1) * d);
      suffix.values[l].insert(suffix.values[l].end(), v.begin() + i * d,
                              v.begin() + (i + 1) * d);
      const std::size_t own_rows = suffix.keys[l].size() / d;
      for (std::size_t hh = 0; hh < cfg.n_heads; ++hh) {
        const kernels::KeyValueSegment<T> segs[2] = {
            {prefix.keys[l].data() + hh * hd, prefix.values[l].data() + hh * hd, prefix.rows, d},
            {suffix.keys[l].data() + hh * hd, suffix.values[l].data() + hh * hd, own_rows, d}};
        kernels::attention_row<T>(q.data() + i * d + hh * hd, segs, hd, probs.data(),
                                  att.data() + i * d + hh * hd);
      }
    }
    linear_forward<T>(blk.output, scale, cspan(att), n, std::span<T>(o), nullptr);
    add_into<T>(x, o);
    kernels::rmsnorm_forward<T>(x, cspan(blk.ffn_norm), h, inv, n, d, eps);
    linear_forward<T>(blk.up, scale, cspan(h), n, std::span<T>(up), nullptr);
    kernels::gelu_forward<T>(up, act);
    linear_forward<T>(blk.down, scale, cspan(act), n, std::span<T>(f), nullptr);
    add_into<T>(x, f);
  }
  for (auto* suffix : suffixes) ++suffix->rows;

  kernels::rmsnorm_forward<T>(x, cspan(params.final_norm), h, inv, n, d, eps);
  Tensor<T> out({static_cast<I64>(n), static_cast<I64>(cfg.vocab_size)});
  std::vector<T> logits(cfg.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::matmul_nt<T>(std::span<const T>(h.data() + i * d, d), cspan(params.lm_head),
                          logits, 1, d, cfg.vocab_size);
    kernels::log_softmax_row(logits.data(), out.row(i), cfg.vocab_size);
  }
  return out;
}

#define GENREC_INSTANTIATE_MODEL(T)                                                          \
  template struct Parameters<T>;                                                            \
  template std::vector<NamedTensor<T>> trainable_parameters<T>(Parameters<T>&, bool);       \
  template Tensor<T> forward<T>(const Parameters<T>&, std::span<const TokenId>, std::size_t, \
                                std::size_t);                                               \
  template T loss<T>(const Parameters<T>&, const Batch&);                                   \
  template LossSum loss_sum<T>(const Parameters<T>&, const Batch&);                         \
  template std::vector<T> project<T>(const Linear<T>&, double, std::span<const T>,          \
                                     std::size_t);                                          \
  template LossSum accumulate_gradients<T>(const Parameters<T>&, const Batch&,              \
                                           Parameters<T>&, const BackwardOptions&);         \
  template std::vector<std::vector<T>> log_probs_at<T>(                                     \
      const Parameters<T>&, std::span<const TokenId>, std::span<const std::size_t>);        \
  template std::vector<T> prefill<T>(const Parameters<T>&, std::span<const TokenId>,        \
                                     KeyValueCache<T>&);                                    \
  template Tensor<T> extend<T>(const Parameters<T>&, const KeyValueCache<T>&,               \
                               std::span<KeyValueCache<T>* const>, std::span<const TokenId>);

GENREC_INSTANTIATE_MODEL(float)
GENREC_INSTANTIATE_MODEL(double)

#undef GENREC_INSTANTIATE_MODEL

}  // namespace genrec
