// Serial textbook loops. Slow on purpose; used to check the parallel kernels.

#include <cmath>
#include <limits>
#include <vector>

#include "genrec/kernels.hpp"

namespace genrec::kernels::reference {

template <typename T>
void matmul_nt(std::span<const T> x, std::span<const T> w, std::span<T> y, std::size_t n,
               std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += x[i * k + p] * w[j * k + p];
      y[i * m + j] = accumulate ? y[i * m + j] + acc : acc;
    }
  }
}

template <typename T>
void matmul_nn(std::span<const T> dy, std::span<const T> w, std::span<T> dx, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      T acc = 0;
      for (std::size_t j = 0; j < m; ++j) acc += dy[i * m + j] * w[j * k + p];
      dx[i * k + p] = accumulate ? dx[i * k + p] + acc : acc;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> dy, std::span<const T> x, std::span<T> dw, std::size_t n,
               std::size_t m, std::size_t k, bool accumulate) {
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t p = 0; p < k; ++p) {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += dy[i * m + j] * x[i * k + p];
      dw[j * k + p] = accumulate ? dw[j * k + p] + acc : acc;
    }
  }
}

template <typename T>
void rmsnorm_forward(std::span<const T> x, std::span<const T> gain, std::span<T> y,
                     std::span<T> inv_rms, std::size_t n, std::size_t d, T eps) {
  for (std::size_t i = 0; i < n; ++i) {
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += x[i * d + j] * x[i * d + j];
    const T r = T(1) / std::sqrt(ms / static_cast<T>(d) + eps);
    inv_rms[i] = r;
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = gain[j] * x[i * d + j] * r;
  }
}

template <typename T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> inv_rms,
                      std::span<const T> dy, std::span<T> dx, std::span<T> dgain, std::size_t n,
                      std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const T r = inv_rms[i];
    T c = 0;
    for (std::size_t j = 0; j < d; ++j) c += gain[j] * dy[i * d + j] * x[i * d + j];
    for (std::size_t j = 0; j < d; ++j) {
      dx[i * d + j] += r * gain[j] * dy[i * d + j] - r * r * r * x[i * d + j] * c / static_cast<T>(d);
      dgain[j] += dy[i * d + j] * x[i * d + j] * r;
    }
  }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> probs, std::span<T> out, std::size_t batch, std::size_t seq,
                       std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<T> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t t = 0; t < seq; ++t) {
        T max_s = -std::numeric_limits<T>::infinity();
        for (std::size_t s = 0; s < seq; ++s) {
          if (s > t) {
            scores[s] = -std::numeric_limits<T>::infinity();
            continue;
          }
          T acc = 0;
          for (std::size_t e = 0; e < head_dim; ++e) {
            acc += q[(b * seq + t) * d + h * head_dim + e] * k[(b * seq + s) * d + h * head_dim + e];
          }
          scores[s] = acc * scale;
          if (scores[s] > max_s) max_s = scores[s];
        }
        T sum = 0;
        for (std::size_t s = 0; s < seq; ++s) {
          p[t * seq + s] = s > t ? T(0) : std::exp(scores[s] - max_s);
          sum += p[t * seq + s];
        }
        for (std::size_t s = 0; s < seq; ++s) p[t * seq + s] /= sum;
        for (std::size_t e = 0; e < head_dim; ++e) {
          T acc = 0;
          for (std::size_t s = 0; s <= t; ++s) {
            acc += p[t * seq + s] * v[(b * seq + s) * d + h * head_dim + e];
          }
          out[(b * seq + t) * d + h * head_dim + e] = acc;
        }
      }
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
  std::fill(dq.begin(), dq.end(), T(0));
  std::fill(dk.begin(), dk.end(), T(0));
  std::fill(dv.begin(), dv.end(), T(0));
  std::vector<T> dp(seq);
  auto at = [&](std::size_t b, std::size_t t, std::size_t h, std::size_t e) {
    return (b * seq + t) * d + h * head_dim + e;
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t t = 0; t < seq; ++t) {
        for (std::size_t s = 0; s <= t; ++s) {
          dp[s] = 0;
          for (std::size_t e = 0; e < head_dim; ++e) dp[s] += dout[at(b, t, h, e)] * v[at(b, s, h, e)];
          for (std::size_t e = 0; e < head_dim; ++e) dv[at(b, s, h, e)] += p[t * seq + s] * dout[at(b, t, h, e)];
        }
        T dot_pd = 0;
        for (std::size_t s = 0; s <= t; ++s) dot_pd += p[t * seq + s] * dp[s];
        for (std::size_t s = 0; s <= t; ++s) {
          const T ds = p[t * seq + s] * (dp[s] - dot_pd);
          for (std::size_t e = 0; e < head_dim; ++e) {
            dq[at(b, t, h, e)] += ds * k[at(b, s, h, e)] * scale;
            dk[at(b, s, h, e)] += ds * q[at(b, t, h, e)] * scale;
          }
        }
      }
    }
  }
}

#define GENREC_INSTANTIATE_REFERENCE(T)                                                      \
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
  template void attention_forward<T>(std::span<const T>, std::span<const T>,                \
                                     std::span<const T>, std::span<T>, std::span<T>,        \
                                     std::size_t, std::size_t, std::size_t, std::size_t);   \
  template void attention_backward<T>(                                                      \
      std::span<const T>, std::span<const T>, std::span<const T>, std::span<const T>,       \
      std::span<const T>, std::span<T>, std::span<T>, std::span<T>, std::size_t,            \
      std::size_t, std::size_t, std::size_t);

GENREC_INSTANTIATE_REFERENCE(float)
GENREC_INSTANTIATE_REFERENCE(double)

#undef GENREC_INSTANTIATE_REFERENCE

}  // namespace genrec::kernels::reference
