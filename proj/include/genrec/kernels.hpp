#pragma once

// Dense kernels behind the decoder. The default namespace holds the
// OpenMP-parallel versions; kernels::reference holds straightforward serial
// loops with the same signatures, kept for tests and benchmarks.
//
// Every parallel kernel computes each output row with a fixed arithmetic
// order that does not depend on the number of rows or threads, so results
// are bitwise reproducible and a row's value is independent of its
// neighbours (causality and padding invariance rely on this).
//
// Matrices are row-major. `accumulate` adds into the output instead of
// overwriting it.

#include <cstddef>
#include <span>

namespace genrec::kernels {

// y[n,m] = x[n,k] * w[m,k]^T
template <typename T>
void matmul_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t n,
               std::size_t k, std::size_t m, bool accumulate = false);

// dx[n,k] = dy[n,m] * w[m,k]
template <typename T>
void matmul_nn(std::span<const T> dy, std::span<const T> w, std::span<T> dx, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate = false);

// dw[m,k] = dy[n,m]^T * x[n,k]
template <typename T>
void matmul_tn(std::span<const T> dy, std::span<const T> x, std::span<T> dw, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate = false);

// y = gain * x / sqrt(mean(x^2) + eps), row-wise; inv_rms[n] is saved for backward.
template <typename T>
void rmsnorm_forward(std::span<const T> x, std::span<const T> gain, std::span<T> y,
                     std::span<T> inv_rms, std::size_t n, std::size_t d, T eps);

// dx += ..., dgain += ...
template <typename T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> inv_rms,
                      std::span<const T> dy, std::span<T> dx, std::span<T> dgain, std::size_t n,
                      std::size_t d);

// tanh-approximated GELU.
template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y);

// dx = dy * gelu'(x)
template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

// A run of cached key/value rows for one attention call. Rows are `stride`
// apart; the head's slice starts at the given pointers.
template <typename T>
struct KeyValueSegment {
  const T* keys = nullptr;
  const T* values = nullptr;
  std::size_t rows = 0;
  std::size_t stride = 0;
};

// One query row against the concatenation of `segments`, in order.
// probs receives the softmax weights (sum of segment rows entries).
template <typename T>
void attention_row(const T* query, std::span<const KeyValueSegment<T>> segments,
                   std::size_t head_dim, T* probs, T* out);

// Causal multi-head attention over [batch*seq, heads*head_dim] rows.
// probs is [batch, heads, seq, seq]; entries above the diagonal are zero.
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> probs, std::span<T> out, std::size_t batch, std::size_t seq,
                       std::size_t heads, std::size_t head_dim);

// dq, dk, dv are overwritten.
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, std::size_t batch, std::size_t seq,
                        std::size_t heads, std::size_t head_dim);

// out = log_softmax(logits) for one row of length n.
template <typename T>
void log_softmax_row(const T* logits, T* out, std::size_t n);

namespace reference {

template <typename T>
void matmul_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t n,
               std::size_t k, std::size_t m, bool accumulate = false);
template <typename T>
void matmul_nn(std::span<const T> dy, std::span<const T> w, std::span<T> dx, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate = false);
template <typename T>
void matmul_tn(std::span<const T> dy, std::span<const T> x, std::span<T> dw, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate = false);
template <typename T>
void rmsnorm_forward(std::span<const T> x, std::span<const T> gain, std::span<T> y,
                     std::span<T> inv_rms, std::size_t n, std::size_t d, T eps);
template <typename T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> inv_rms,
                      std::span<const T> dy, std::span<T> dx, std::span<T> dgain, std::size_t n,
                      std::size_t d);
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> probs, std::span<T> out, std::size_t batch, std::size_t seq,
                       std::size_t heads, std::size_t head_dim);
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, std::size_t batch, std::size_t seq,
                        std::size_t heads, std::size_t head_dim);

}  // namespace reference
}  // namespace genrec::kernels
