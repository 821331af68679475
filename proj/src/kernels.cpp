#include "ecgd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ecgd::kernels {
namespace {

constexpr std::size_t kForkWork = std::size_t{1} << 16;

bool should_fork(std::size_t work) {
#ifdef _OPENMP
  return work >= kForkWork && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

inline float a_at(const GemmArgs& g, std::size_t i, std::size_t p) {
  return g.trans_a == Trans::yes ? g.a[p * g.m + i] : g.a[i * g.k + p];
}

inline float b_at(const GemmArgs& g, std::size_t p, std::size_t j) {
  return g.trans_b == Trans::yes ? g.b[j * g.k + p] : g.b[p * g.n + j];
}

template <bool TransA>
inline float a_elem(const GemmArgs& g, std::size_t i, std::size_t p) {
  return TransA ? g.a[p * g.m + i] : g.a[i * g.k + p];
}

inline void store_row(const GemmArgs& g, std::size_t i, const float* tmp) {
  float* crow = g.c + i * g.n;
  if (g.accumulate) {
    for (std::size_t j = 0; j < g.n; ++j) crow[j] += tmp[j];
  } else {
    std::copy(tmp, tmp + g.n, crow);
  }
}

// One output row of C from row-major B [k x n]; `tmp` has room for n floats.
// Each element sums over p in increasing order, like the serial reference.
template <bool TransA>
void gemm_row(const GemmArgs& g, const float* b, std::size_t i, float* tmp) {
  std::fill(tmp, tmp + g.n, 0.0f);
  for (std::size_t p = 0; p < g.k; ++p) {
    const float av = a_elem<TransA>(g, i, p);
    const float* brow = b + p * g.n;
    for (std::size_t j = 0; j < g.n; ++j) tmp[j] += av * brow[j];
  }
  store_row(g, i, tmp);
}

// Narrow outputs (attention heads are 4 wide) keep the row in registers.
template <bool TransA, std::size_t N>
void gemm_row_fixed(const GemmArgs& g, const float* b, std::size_t i, float*) {
  float acc[N] = {};
  for (std::size_t p = 0; p < g.k; ++p) {
    const float av = a_elem<TransA>(g, i, p);
    const float* brow = b + p * N;
    for (std::size_t j = 0; j < N; ++j) acc[j] += av * brow[j];
  }
  store_row(g, i, acc);
}

using RowFn = void (*)(const GemmArgs&, const float*, std::size_t, float*);

template <bool TransA>
RowFn pick_row_fn(std::size_t n) {
  switch (n) {
    case 2: return gemm_row_fixed<TransA, 2>;
    case 4: return gemm_row_fixed<TransA, 4>;
    case 8: return gemm_row_fixed<TransA, 8>;
    default: return gemm_row<TransA>;
  }
}

inline std::size_t pad_of(const Conv1dShape& s) { return (s.kernel - 1) / 2; }

// Valid output range [t0, t1) for tap j: 0 <= t + j - pad < len.
inline void tap_range(const Conv1dShape& s, std::size_t j, std::size_t& t0, std::size_t& t1) {
  const std::size_t pad = pad_of(s);
  t0 = j < pad ? pad - j : 0;
  t1 = s.len + pad > j ? std::min(s.len, s.len + pad - j) : 0;
  if (t1 < t0) t1 = t0;
}

void conv_forward_channel(const Conv1dShape& s, const float* x, const float* w,
                          const float* bias, float* out, std::size_t o) {
  const std::size_t pad = pad_of(s);
  float* orow = out + o * s.len;
  std::fill(orow, orow + s.len, bias ? bias[o] : 0.0f);
  for (std::size_t c = 0; c < s.c_in; ++c) {
    const float* xrow = x + c * s.len;
    const float* wk = w + (o * s.c_in + c) * s.kernel;
    for (std::size_t j = 0; j < s.kernel; ++j) {
      std::size_t t0, t1;
      tap_range(s, j, t0, t1);
      const float wv = wk[j];
      for (std::size_t t = t0; t < t1; ++t) orow[t] += wv * xrow[t + j - pad];
    }
  }
}

void conv_backward_input_channel(const Conv1dShape& s, const float* w, const float* dy,
                                 float* dx, std::size_t c, float* tmp) {
  const std::size_t pad = pad_of(s);
  std::fill(tmp, tmp + s.len, 0.0f);
  for (std::size_t o = 0; o < s.c_out; ++o) {
    const float* dyrow = dy + o * s.len;
    const float* wk = w + (o * s.c_in + c) * s.kernel;
    for (std::size_t j = 0; j < s.kernel; ++j) {
      // dx[c, u] += w[o,c,j] * dy[o, u - j + pad] for valid u.
      std::size_t t0, t1;
      tap_range(s, j, t0, t1);
      const float wv = wk[j];
      const std::size_t u0 = t0 + j - pad;
      const std::size_t u1 = t1 + j - pad;
      for (std::size_t u = u0; u < u1; ++u) tmp[u] += wv * dyrow[u + pad - j];
    }
  }
  float* dxrow = dx + c * s.len;
  for (std::size_t u = 0; u < s.len; ++u) dxrow[u] += tmp[u];
}

void conv_backward_weight_channel(const Conv1dShape& s, const float* x, const float* dy,
                                  float* dw, float* dbias, std::size_t o) {
  const std::size_t pad = pad_of(s);
  const float* dyrow = dy + o * s.len;
  if (dbias) {
    float acc = 0.0f;
    for (std::size_t t = 0; t < s.len; ++t) acc += dyrow[t];
    dbias[o] += acc;
  }
  if (!dw) return;
  for (std::size_t c = 0; c < s.c_in; ++c) {
    const float* xrow = x + c * s.len;
    for (std::size_t j = 0; j < s.kernel; ++j) {
      std::size_t t0, t1;
      tap_range(s, j, t0, t1);
      float acc = 0.0f;
      for (std::size_t t = t0; t < t1; ++t) acc += dyrow[t] * xrow[t + j - pad];
      dw[(o * s.c_in + c) * s.kernel + j] += acc;
    }
  }
}

void softmax_row(std::size_t cols, const float* x, float* y) {
  float mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  float sum = 0.0f;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const float inv = 1.0f / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

void layernorm_row(std::size_t cols, const float* x, const float* gain, const float* bias,
                   float eps, float* y, float* mean_out, float* rstd_out) {
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) sum += x[j];
  const double mean = sum / static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const auto mu = static_cast<float>(mean);
  const auto rstd = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
  for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * rstd * gain[j] + bias[j];
  *mean_out = mu;
  *rstd_out = rstd;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void gemm(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < g.k; ++p) acc += a_at(g, i, p) * b_at(g, p, j);
      float& c = g.c[i * g.n + j];
      c = g.accumulate ? c + acc : acc;
    }
  }
}

void conv1d_forward(const Conv1dShape& s, const float* x, const float* w, const float* bias,
                    float* out) {
  const auto pad = static_cast<std::ptrdiff_t>(pad_of(s));
  const auto len = static_cast<std::ptrdiff_t>(s.len);
  for (std::size_t o = 0; o < s.c_out; ++o) {
    for (std::ptrdiff_t t = 0; t < len; ++t) {
      float acc = bias ? bias[o] : 0.0f;
      for (std::size_t c = 0; c < s.c_in; ++c) {
        for (std::size_t j = 0; j < s.kernel; ++j) {
          const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - pad;
          if (src < 0 || src >= len) continue;
          acc += w[(o * s.c_in + c) * s.kernel + j] * x[c * s.len + static_cast<std::size_t>(src)];
        }
      }
      out[o * s.len + static_cast<std::size_t>(t)] = acc;
    }
  }
}

void conv1d_backward(const Conv1dShape& s, const float* x, const float* w, const float* dy,
                     float* dx, float* dw, float* dbias) {
  const auto pad = static_cast<std::ptrdiff_t>(pad_of(s));
  const auto len = static_cast<std::ptrdiff_t>(s.len);
  if (dx) {
    for (std::size_t c = 0; c < s.c_in; ++c) {
      for (std::ptrdiff_t u = 0; u < len; ++u) {
        float acc = 0.0f;
        for (std::size_t o = 0; o < s.c_out; ++o) {
          for (std::size_t j = 0; j < s.kernel; ++j) {
            const std::ptrdiff_t t = u - static_cast<std::ptrdiff_t>(j) + pad;
            if (t < 0 || t >= len) continue;
            acc += w[(o * s.c_in + c) * s.kernel + j] * dy[o * s.len + static_cast<std::size_t>(t)];
          }
        }
        dx[c * s.len + static_cast<std::size_t>(u)] += acc;
      }
    }
  }
  for (std::size_t o = 0; o < s.c_out; ++o) {
    if (dbias) {
      float acc = 0.0f;
      for (std::ptrdiff_t t = 0; t < len; ++t) acc += dy[o * s.len + static_cast<std::size_t>(t)];
      dbias[o] += acc;
    }
    if (!dw) continue;
    for (std::size_t c = 0; c < s.c_in; ++c) {
      for (std::size_t j = 0; j < s.kernel; ++j) {
        float acc = 0.0f;
        for (std::ptrdiff_t t = 0; t < len; ++t) {
          const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - pad;
          if (src < 0 || src >= len) continue;
          acc += dy[o * s.len + static_cast<std::size_t>(t)] * x[c * s.len + static_cast<std::size_t>(src)];
        }
        dw[(o * s.c_in + c) * s.kernel + j] += acc;
      }
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, const float* x, float* y) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x + r * cols, y + r * cols);
}

void layernorm_rows(std::size_t rows, std::size_t cols, const float* x, const float* gain,
                    const float* bias, float eps, float* y, float* mean, float* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    layernorm_row(cols, x + r * cols, gain, bias, eps, y + r * cols, mean + r, rstd + r);
  }
}

}  // namespace serial

void gemm(const GemmArgs& g) {
  const auto m = static_cast<std::int64_t>(g.m);
  std::vector<float> packed;
  const float* b = g.b;
  if (g.trans_b == Trans::yes) {
    packed.resize(g.k * g.n);
    for (std::size_t j = 0; j < g.n; ++j) {
      for (std::size_t p = 0; p < g.k; ++p) packed[p * g.n + j] = g.b[j * g.k + p];
    }
    b = packed.data();
  }
  const RowFn row = g.trans_a == Trans::yes ? pick_row_fn<true>(g.n) : pick_row_fn<false>(g.n);
  if (should_fork(g.m * g.n * g.k)) {
#pragma omp parallel
    {
      std::vector<float> tmp(g.n);
#pragma omp for schedule(static)
      for (std::int64_t i = 0; i < m; ++i) row(g, b, static_cast<std::size_t>(i), tmp.data());
    }
  } else {
    std::vector<float> tmp(g.n);
    for (std::size_t i = 0; i < g.m; ++i) row(g, b, i, tmp.data());
  }
}

void conv1d_forward(const Conv1dShape& s, const float* x, const float* w, const float* bias,
                    float* out) {
  const auto c_out = static_cast<std::int64_t>(s.c_out);
  const bool fork = should_fork(s.c_out * s.c_in * s.kernel * s.len);
#pragma omp parallel for schedule(static) if (fork)
  for (std::int64_t o = 0; o < c_out; ++o) {
    conv_forward_channel(s, x, w, bias, out, static_cast<std::size_t>(o));
  }
}

void conv1d_backward(const Conv1dShape& s, const float* x, const float* w, const float* dy,
                     float* dx, float* dw, float* dbias) {
  const bool fork = should_fork(s.c_out * s.c_in * s.kernel * s.len);
  if (dx) {
    const auto c_in = static_cast<std::int64_t>(s.c_in);
#pragma omp parallel if (fork)
    {
      std::vector<float> tmp(s.len);
#pragma omp for schedule(static)
      for (std::int64_t c = 0; c < c_in; ++c) {
        conv_backward_input_channel(s, w, dy, dx, static_cast<std::size_t>(c), tmp.data());
      }
    }
  }
  if (dw || dbias) {
    const auto c_out = static_cast<std::int64_t>(s.c_out);
#pragma omp parallel for schedule(static) if (fork)
    for (std::int64_t o = 0; o < c_out; ++o) {
      conv_backward_weight_channel(s, x, dy, dw, dbias, static_cast<std::size_t>(o));
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, const float* x, float* y) {
  const auto n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (should_fork(rows * cols * 8))
  for (std::int64_t r = 0; r < n; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    softmax_row(cols, x + off, y + off);
  }
}

void layernorm_rows(std::size_t rows, std::size_t cols, const float* x, const float* gain,
                    const float* bias, float eps, float* y, float* mean, float* rstd) {
  const auto n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (should_fork(rows * cols * 8))
  for (std::int64_t r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(r);
    layernorm_row(cols, x + i * cols, gain, bias, eps, y + i * cols, mean + i, rstd + i);
  }
}

}  // namespace ecgd::kernels
