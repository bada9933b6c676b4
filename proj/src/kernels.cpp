#include "genrec/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace genrec::kernels {
namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelThreshold = 1 << 14;

// Fixed eight-lane accumulation: vectorizes and gives the same result for a
// given pair of rows no matter which kernel or thread computes it.
template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) +
         tail;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = static_cast<T>(0.044715);

}  // namespace

template <typename T>
void matmul_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t n,
               std::size_t k, std::size_t m, bool accumulate) {
  const T* xp = x.data();
  const T* wp = w.data();
  T* yp = y.data();
  const auto rows = static_cast<std::ptrdiff_t>(n);
  const auto cols = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for collapse(2) schedule(static) if (n * m * k > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (std::ptrdiff_t j = 0; j < cols; ++j) {
      const T v = dot(xp + i * k, wp + j * k, k);
      T& out = yp[i * m + j];
      out = accumulate ? out + v : v;
    }
  }
}

template <typename T>
void matmul_nn(std::span<const T> dy, std::span<const T> w, std::span<T> dx, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * m * k > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    T* out = dx.data() + i * k;
    if (!accumulate) std::fill(out, out + k, T(0));
    const T* g = dy.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) axpy(g[j], w.data() + j * k, out, k);
  }
}

template <typename T>
void matmul_tn(std::span<const T> dy, std::span<const T> x, std::span<T> dw, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate) {
  const auto outs = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (n * m * k > kParallelThreshold)
  for (std::ptrdiff_t j = 0; j < outs; ++j) {
    T* out = dw.data() + j * k;
    if (!accumulate) std::fill(out, out + k, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      const T g = dy[i * m + j];
      if (g != T(0)) axpy(g, x.data() + i * k, out, k);
    }
  }
}

template <typename T>
void rmsnorm_forward(std::span<const T> x, std::span<const T> gain, std::span<T> y,
                     std::span<T> inv_rms, std::size_t n, std::size_t d, T eps) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * d > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const T* xr = x.data() + i * d;
    T* yr = y.data() + i * d;
    const T r = T(1) / std::sqrt(dot(xr, xr, d) / static_cast<T>(d) + eps);
    inv_rms[i] = r;
    for (std::size_t j = 0; j < d; ++j) yr[j] = gain[j] * (xr[j] * r);
  }
}

template <typename T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> inv_rms,
                      std::span<const T> dy, std::span<T> dx, std::span<T> dgain, std::size_t n,
                      std::size_t d) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel if (n * d > kParallelThreshold)
  {
    std::vector<T> g(d);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      const T* xr = x.data() + i * d;
      const T* dyr = dy.data() + i * d;
      T* dxr = dx.data() + i * d;
      const T r = inv_rms[i];
      for (std::size_t j = 0; j < d; ++j) g[j] = gain[j] * dyr[j];
      const T c = dot(g.data(), xr, d) * r * r * r / static_cast<T>(d);
      for (std::size_t j = 0; j < d; ++j) dxr[j] += r * g[j] - c * xr[j];
    }
    const auto cols = static_cast<std::ptrdiff_t>(d);
#pragma omp for schedule(static)
    for (std::ptrdiff_t j = 0; j < cols; ++j) {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += dy[i * d + j] * x[i * d + j] * inv_rms[i];
      dgain[j] += acc;
    }
  }
}

template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y) {
  const auto size = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < size; ++i) {
    const T v = x[i];
    const T t = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
    y[i] = T(0.5) * v * (T(1) + t);
  }
}

template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  const auto size = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < size; ++i) {
    const T v = x[i];
    const T t = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
    const T dt = (T(1) - t * t) * kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
    dx[i] = dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
  }
}

template <typename T>
void attention_row(const T* query, std::span<const KeyValueSegment<T>> segments,
                   std::size_t head_dim, T* probs, T* out) {
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::size_t total = 0;
  T max_score = -std::numeric_limits<T>::infinity();
  for (const auto& seg : segments) {
    for (std::size_t s = 0; s < seg.rows; ++s) {
      const T score = dot(query, seg.keys + s * seg.stride, head_dim) * scale;
      probs[total++] = score;
      max_score = std::max(max_score, score);
    }
  }
  T sum = 0;
  for (std::size_t s = 0; s < total; ++s) {
    probs[s] = std::exp(probs[s] - max_score);
    sum += probs[s];
  }
  const T inv = T(1) / sum;
  for (std::size_t s = 0; s < total; ++s) probs[s] *= inv;
  std::fill(out, out + head_dim, T(0));
  std::size_t idx = 0;
  for (const auto& seg : segments) {
    for (std::size_t s = 0; s < seg.rows; ++s) {
      axpy(probs[idx++], seg.values + s * seg.stride, out, head_dim);
    }
  }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> probs, std::span<T> out, std::size_t batch, std::size_t seq,
                       std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const auto units = static_cast<std::ptrdiff_t>(batch * heads);
#pragma omp parallel for schedule(static) if (batch * heads * seq * seq * head_dim > kParallelThreshold)
  for (std::ptrdiff_t u = 0; u < units; ++u) {
    const std::size_t b = static_cast<std::size_t>(u) / heads;
    const std::size_t h = static_cast<std::size_t>(u) % heads;
    const std::size_t base = b * seq * d + h * head_dim;
    T* p = probs.data() + static_cast<std::size_t>(u) * seq * seq;
    for (std::size_t t = 0; t < seq; ++t) {
      const KeyValueSegment<T> seg{k.data() + base, v.data() + base, t + 1, d};
      T* prow = p + t * seq;
      attention_row<T>(q.data() + base + t * d, std::span(&seg, 1), head_dim, prow,
                       out.data() + base + t * d);
      std::fill(prow + t + 1, prow + seq, T(0));
    }
  }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, std::size_t batch, std::size_t seq,
                        std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const auto units = static_cast<std::ptrdiff_t>(batch * heads);
#pragma omp parallel if (batch * heads * seq * seq * head_dim > kParallelThreshold)
  {
    std::vector<T> dscore(seq);
#pragma omp for schedule(static)
    for (std::ptrdiff_t u = 0; u < units; ++u) {
      const std::size_t b = static_cast<std::size_t>(u) / heads;
      const std::size_t h = static_cast<std::size_t>(u) % heads;
      const std::size_t base = b * seq * d + h * head_dim;
      const T* p = probs.data() + static_cast<std::size_t>(u) * seq * seq;
      for (std::size_t t = 0; t < seq; ++t) {
        std::fill_n(dq.data() + base + t * d, head_dim, T(0));
        std::fill_n(dk.data() + base + t * d, head_dim, T(0));
        std::fill_n(dv.data() + base + t * d, head_dim, T(0));
      }
      for (std::size_t t = 0; t < seq; ++t) {
        const T* prow = p + t * seq;
        const T* go = dout.data() + base + t * d;
        T weighted = 0;
        for (std::size_t s = 0; s <= t; ++s) {
          dscore[s] = dot(go, v.data() + base + s * d, head_dim);
          weighted += prow[s] * dscore[s];
          axpy(prow[s], go, dv.data() + base + s * d, head_dim);
        }
        T* gq = dq.data() + base + t * d;
        const T* qt = q.data() + base + t * d;
        for (std::size_t s = 0; s <= t; ++s) {
          const T ds = prow[s] * (dscore[s] - weighted) * scale;
          axpy(ds, k.data() + base + s * d, gq, head_dim);
          axpy(ds, qt, dk.data() + base + s * d, head_dim);
        }
      }
    }
  }
}

template <typename T>
void log_softmax_row(const T* logits, T* out, std::size_t n) {
  T max_v = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) max_v = std::max(max_v, logits[i]);
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - max_v);
  const T lse = max_v + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

#define GENREC_INSTANTIATE_KERNELS(T)                                                        \
  template void matmul_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,          \
                             std::size_t, std::size_t, std::size_t, bool);                  \
  template void matmul_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,          \
                             std::size_t, std::size_t, std::size_t, bool);                  \
  template void matmul_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,          \
                             std::size_t, std::size_t, std::size_t, bool);                  \
  template void rmsnorm_forward<T>(std::span<const T>, std::span<const T>, std::span<T>,    \
                                   std::span<T>, std::size_t, std::size_t, T);              \
  template void rmsnorm_backward<T>(std::span<const T>, std::span<const T>,                 \
                                    std::span<const T>, std::span<const T>, std::span<T>,   \
                                    std::span<T>, std::size_t, std::size_t);                \
  template void gelu_forward<T>(std::span<const T>, std::span<T>);                          \
  template void gelu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);     \
  template void attention_row<T>(const T*, std::span<const KeyValueSegment<T>>,             \
                                 std::size_t, T*, T*);                                      \
  template void attention_forward<T>(std::span<const T>, std::span<const T>,                \
                                     std::span<const T>, std::span<T>, std::span<T>,        \
                                     std::size_t, std::size_t, std::size_t, std::size_t);   \
  template void attention_backward<T>(                                                      \
      std::span<const T>, std::span<const T>, std::span<const T>, std::span<const T>,       \
      std::span<const T>, std::span<T>, std::span<T>, std::span<T>, std::size_t,            \
      std::size_t, std::size_t, std::size_t);                                               \
  template void log_softmax_row<T>(const T*, T*, std::size_t);

GENREC_INSTANTIATE_KERNELS(float)
GENREC_INSTANTIATE_KERNELS(double)

#undef GENREC_INSTANTIATE_KERNELS

}  // namespace genrec::kernels
