#pragma once

// Dense f32 kernels behind the autodiff ops.
//
// Each kernel has a plain serial reference in `serial::` and an OpenMP
// version at namespace scope. Both accumulate every output element in the
// same order, so results are bitwise identical regardless of thread count.
// The OpenMP versions only fork when called outside a parallel region and
// the work is large enough to amortize the fork.

#include <cstddef>
#include <span>

namespace ecgd::kernels {

enum class Trans { no, yes };

/// C[m x n] (+)= op(A) * op(B), row-major, op(A) is m x k and op(B) is k x n.
/// A is stored [m x k] (or [k x m] when transposed); B likewise.
struct GemmArgs {
  std::size_t m = 0, n = 0, k = 0;
  const float* a = nullptr;
  const float* b = nullptr;
  float* c = nullptr;
  Trans trans_a = Trans::no;
  Trans trans_b = Trans::no;
  bool accumulate = false;
};

/// out[o, t] = bias[o] + sum_{c, j} w[o, c, j] * x[c, t + j - (K - 1) / 2],
/// zero padded. x is [c_in x len], w is [c_out x c_in x K], out [c_out x len].
struct Conv1dShape {
  std::size_t c_in = 0, c_out = 0, len = 0, kernel = 0;
};

namespace serial {
void gemm(const GemmArgs& g);
void conv1d_forward(const Conv1dShape& s, const float* x, const float* w, const float* bias,
                    float* out);
/// dx (+)= conv1d^T(dy); dw += ...; dbias += ...  (accumulating)
void conv1d_backward(const Conv1dShape& s, const float* x, const float* w, const float* dy,
                     float* dx, float* dw, float* dbias);
void softmax_rows(std::size_t rows, std::size_t cols, const float* x, float* y);
/// Writes y, and per-row mean and reciprocal std for the backward pass.
void layernorm_rows(std::size_t rows, std::size_t cols, const float* x, const float* gain,
                    const float* bias, float eps, float* y, float* mean, float* rstd);
}  // namespace serial

void gemm(const GemmArgs& g);
void conv1d_forward(const Conv1dShape& s, const float* x, const float* w, const float* bias,
                    float* out);
void conv1d_backward(const Conv1dShape& s, const float* x, const float* w, const float* dy,
                     float* dx, float* dw, float* dbias);
void softmax_rows(std::size_t rows, std::size_t cols, const float* x, float* y);
void layernorm_rows(std::size_t rows, std::size_t cols, const float* x, const float* gain,
                    const float* bias, float eps, float* y, float* mean, float* rstd);

/// Number of threads the OpenMP kernels may use (1 without OpenMP).
int max_threads();

}  // namespace ecgd::kernels
