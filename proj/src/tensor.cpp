#include "ecgd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "ecgd/error.hpp"
#include "ecgd/kernels.hpp"

namespace ecgd::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<bool> g_checked{false};

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorKind::Shape, op + ": " + detail);
}

void check_finite(std::span<const float> v, const char* what) {
  for (float x : v) {
    if (!std::isfinite(x)) {
      throw Error(ErrorKind::Numeric, std::string("non-finite value produced by ") + what);
    }
  }
}

Tensor finish(Tensor out, const char* op) {
  if (g_checked.load(std::memory_order_relaxed)) check_finite(out.data(), op);
  return out;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void record(Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  g_active_tape->record(out, std::move(fn));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct Split {
  std::size_t outer = 1, axis = 1, inner = 1;
};

Split split_at(const Shape& s, std::size_t axis) {
  Split sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

constexpr float kSqrt2OverPi = 0.7978845608028654f;
constexpr float kGeluCubic = 0.044715f;

}  // namespace

std::size_t numel(const Shape& s) noexcept {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor make_result(Shape shape, std::vector<float> data) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<float>>(std::move(data));
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::filled(Shape shape, float value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  Tensor t = make_result(std::move(shape), std::vector<float>(n, value));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    shape_error("Tensor::from", to_string(shape) + " needs " + std::to_string(ad::numel(shape)) +
                                    " values, got " + std::to_string(values.size()));
  }
  Tensor t = make_result(std::move(shape), std::move(values));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (numel() != 1) shape_error("item", "tensor " + to_string(shape()) + " is not a scalar");
  return (*node_->data)[0];
}

std::span<float> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(numel(), 0.0f);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::alias(bool requires_grad) const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t = make_result(shape(), *node_->data);
  t.node_->requires_grad = requires_grad;
  return t;
}

// ---------------------------------------------------------------------------

void Tape::record(const Tensor& output, std::function<void()> backward) {
  entries_.push_back({output.node(), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorKind::Shape, "backward: loss must be a scalar, got " +
                                      (loss.defined() ? to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw Error(ErrorKind::Domain, "backward: loss does not depend on any tracked tensor");
  }
  for (auto& e : entries_) e.output->grad.clear();
  const bool is_leaf = std::none_of(entries_.begin(), entries_.end(), [&](const Entry& e) {
    return e.output == loss.node();
  });
  if (is_leaf) {
    Tensor l = loss;
    l.grad()[0] += 1.0f;
    return;
  }
  loss.node()->grad.assign(1, 1.0f);
  const bool check = g_checked.load(std::memory_order_relaxed);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    if (check) check_finite(it->output->grad, "backward");
    it->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

void set_checked(bool on) noexcept { g_checked.store(on, std::memory_order_relaxed); }
bool checked() noexcept { return g_checked.load(std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<float> v(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  Tensor out = make_result(a.shape(), std::move(v));
  if (tracking({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return finish(out, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<float> v(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  Tensor out = make_result(a.shape(), std::move(v));
  if (tracking({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return finish(out, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<float> v(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  Tensor out = make_result(a.shape(), std::move(v));
  if (tracking({&a, &b})) {
    record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      const auto av = a.data();
      const auto bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return finish(out, "mul");
}

Tensor scale(const Tensor& x, float s) {
  std::vector<float> v(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] * s;
  Tensor out = make_result(x.shape(), std::move(v));
  if (tracking({&x})) {
    record(out, [x, out, s]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
  }
  return finish(out, "scale");
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    shape_error("add_bias", to_string(x.shape()) + " + " + to_string(bias.shape()));
  }
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.numel() / d;
  std::vector<float> v(x.numel());
  const auto xv = x.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) v[r * d + j] = xv[r * d + j] + bv[j];
  }
  Tensor out = make_result(x.shape(), std::move(v));
  if (tracking({&x, &bias})) {
    record(out, [x, bias, out, rows, d]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
      }
    });
  }
  return finish(out, "add_bias");
}

// ---------------------------------------------------------------------------
// Products

namespace {

// One [m x k] * [k x n] problem at the given offsets; used by both the plain
// and batched forms.
void matmul_backward(const float* a, const float* b, const float* g, float* ga, float* gb,
                     std::size_t m, std::size_t k, std::size_t n) {
  using kernels::Trans;
  if (ga) {
    kernels::gemm({.m = m, .n = k, .k = n, .a = g, .b = b, .c = ga,
                   .trans_a = Trans::no, .trans_b = Trans::yes, .accumulate = true});
  }
  if (gb) {
    kernels::gemm({.m = k, .n = n, .k = m, .a = a, .b = g, .c = gb,
                   .trans_a = Trans::yes, .trans_b = Trans::no, .accumulate = true});
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3 && b.rank() == 3;
  if (!batched && !(a.rank() == 2 && b.rank() == 2)) {
    shape_error("matmul", "expected 2-D or batched 3-D operands, got " + to_string(a.shape()) +
                              " and " + to_string(b.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(off), k = a.dim(off + 1), n = b.dim(off + 1);
  if (b.dim(off) != k || (batched && b.dim(0) != batch)) {
    shape_error("matmul", "inner dimensions disagree: " + to_string(a.shape()) + " * " +
                              to_string(b.shape()));
  }
  std::vector<float> v(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm({.m = m, .n = n, .k = k, .a = a.data().data() + i * m * k,
                   .b = b.data().data() + i * k * n, .c = v.data() + i * m * n});
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor out = make_result(std::move(shape), std::move(v));
  if (tracking({&a, &b})) {
    record(out, [a, b, out, batch, m, k, n]() mutable {
      const float* g = out.grad().data();
      float* ga = a.requires_grad() ? a.grad().data() : nullptr;
      float* gb = b.requires_grad() ? b.grad().data() : nullptr;
      for (std::size_t i = 0; i < batch; ++i) {
        matmul_backward(a.data().data() + i * m * k, b.data().data() + i * k * n, g + i * m * n,
                        ga ? ga + i * m * k : nullptr, gb ? gb + i * k * n : nullptr, m, k, n);
      }
    });
  }
  return finish(out, "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() == 0 || w.rank() != 2 || b.rank() != 1 || w.dim(0) != x.shape().back() ||
      b.dim(0) != w.dim(1)) {
    shape_error("linear", to_string(x.shape()) + " * " + to_string(w.shape()) + " + " +
                              to_string(b.shape()));
  }
  const std::size_t in = w.dim(0), outd = w.dim(1);
  const std::size_t rows = x.numel() / in;
  std::vector<float> v(rows * outd);
  kernels::gemm({.m = rows, .n = outd, .k = in, .a = x.data().data(), .b = w.data().data(),
                 .c = v.data()});
  const auto bv = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < outd; ++j) v[r * outd + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = outd;
  Tensor out = make_result(std::move(shape), std::move(v));
  if (tracking({&x, &w, &b})) {
    record(out, [x, w, b, out, rows, in, outd]() mutable {
      const auto g = out.grad();
      matmul_backward(x.data().data(), w.data().data(), g.data(),
                      x.requires_grad() ? x.grad().data() : nullptr,
                      w.requires_grad() ? w.grad().data() : nullptr, rows, in, outd);
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
        }
      }
    });
  }
  return finish(out, "linear");
}

// ---------------------------------------------------------------------------
// Structural

Tensor reshape(const Tensor& x, Shape shape) {
  if (ad::numel(shape) != x.numel()) {
    shape_error("reshape", to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor out = x.alias(false);
  out.node()->shape = std::move(shape);
  if (tracking({&x})) {
    record(out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x, std::size_t d0, std::size_t d1) {
  if (d0 > d1) std::swap(d0, d1);
  if (d1 >= x.rank()) {
    shape_error("transpose", "axes " + std::to_string(d0) + "," + std::to_string(d1) +
                                 " out of range for " + to_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t pre = 1, mid = 1, post = 1;
  for (std::size_t i = 0; i < d0; ++i) pre *= s[i];
  for (std::size_t i = d0 + 1; i < d1; ++i) mid *= s[i];
  for (std::size_t i = d1 + 1; i < s.size(); ++i) post *= s[i];
  const std::size_t A = s[d0], B = s[d1];

  // in (p, a, q, b, r) -> out (p, b, q, a, r)
  auto permute = [=](const float* in, float* out, bool forward) {
    for (std::size_t p = 0; p < pre; ++p) {
      for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t q = 0; q < mid; ++q) {
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t src = (((p * A + a) * mid + q) * B + b) * post;
            const std::size_t dst = (((p * B + b) * mid + q) * A + a) * post;
            for (std::size_t r = 0; r < post; ++r) {
              if (forward) {
                out[dst + r] = in[src + r];
              } else {
                out[src + r] += in[dst + r];
              }
            }
          }
        }
      }
    }
  };

  std::vector<float> v(x.numel());
  permute(x.data().data(), v.data(), true);
  Shape shape = s;
  std::swap(shape[d0], shape[d1]);
  Tensor out = make_result(std::move(shape), std::move(v));
  if (tracking({&x})) {
    record(out, [x, out, permute]() mutable { permute(out.grad().data(), x.grad().data(), false); });
  }
  return out;
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) shape_error("concat", "no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) shape_error("concat", "axis out of range for " + to_string(s0));
  std::size_t total = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != s0.size()) shape_error("concat", "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        shape_error("concat", to_string(s) + " vs " + to_string(s0));
      }
    }
    total += s[axis];
  }
  Shape shape = s0;
  shape[axis] = total;
  const Split sp = split_at(shape, axis);
  std::vector<float> v(ad::numel(shape));
  std::size_t start = 0;
  for (const auto& t : xs) {
    const std::size_t len = t.dim(axis) * sp.inner;
    const auto src = t.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.data() + o * len, len, v.data() + (o * total + start) * sp.inner);
    }
    start += t.dim(axis);
  }
  Tensor out = make_result(std::move(shape), std::move(v));

  bool any = false;
  for (const auto& t : xs) any = any || t.requires_grad();
  if (any && active_tape()) {
    std::vector<Tensor> inputs(xs.begin(), xs.end());
    record(out, [inputs, out, sp, total]() mutable {
      const auto g = out.grad();
      std::size_t start = 0;
      for (auto& t : inputs) {
        const std::size_t width = t.dim(0) == 0 ? 0 : t.numel() / sp.outer / sp.inner;
        if (t.requires_grad()) {
          auto gt = t.grad();
          const std::size_t len = width * sp.inner;
          for (std::size_t o = 0; o < sp.outer; ++o) {
            const float* src = g.data() + (o * total + start) * sp.inner;
            float* dst = gt.data() + o * len;
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
          }
        }
        start += width;
      }
    });
  }
  return finish(out, "concat");
}

Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    shape_error("slice", "[" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  const Split sp = split_at(x.shape(), axis);
  const std::size_t width = end - begin;
  Shape shape = x.shape();
  shape[axis] = width;
  std::vector<float> v(ad::numel(shape));
  const auto src = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src.data() + (o * sp.axis + begin) * sp.inner, width * sp.inner,
                v.data() + o * width * sp.inner);
  }
  Tensor out = make_result(std::move(shape), std::move(v));
  if (tracking({&x})) {
    record(out, [x, out, sp, begin, width]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const float* s = g.data() + o * width * sp.inner;
        float* d = gx.data() + (o * sp.axis + begin) * sp.inner;
        for (std::size_t i = 0; i < width * sp.inner; ++i) d[i] += s[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations and normalization

Tensor relu(const Tensor& x) {
  std::vector<float> v(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  Tensor out = make_result(x.shape(), std::move(v));
  if (tracking({&x})) {
    record(out, [x, out]() mutable {
      const auto g = out.grad();
      const auto xv = x.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > 0.0f) gx[i] += g[i];
      }
    });
  }
  return finish(out, "relu");
}

Tensor gelu(const Tensor& x) {
  std::vector<float> v(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float z = xv[i];
    const float u = kSqrt2OverPi * (z + kGeluCubic * z * z * z);
    v[i] = 0.5f * z * (1.0f + std::tanh(u));
  }
  Tensor out = make_result(x.shape(), std::move(v));
  if (tracking({&x})) {
    record(out, [x, out]() mutable {
      const auto g = out.grad();
      const auto xv = x.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float z = xv[i];
        const float u = kSqrt2OverPi * (z + kGeluCubic * z * z * z);
        const float th = std::tanh(u);
        const float du = kSqrt2OverPi * (1.0f + 3.0f * kGeluCubic * z * z);
        gx[i] += g[i] * (0.5f * (1.0f + th) + 0.5f * z * (1.0f - th * th) * du);
      }
    });
  }
  return finish(out, "gelu");
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) shape_error("softmax", "empty last dimension");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<float> v(x.numel());
  kernels::softmax_rows(rows, d, x.data().data(), v.data());
  Tensor out = make_result(x.shape(), std::move(v));
  if (tracking({&x})) {
    record(out, [x, out, rows, d]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * d;
        float dot = 0.0f;
        for (std::size_t j = 0; j < d; ++j) dot += g[o + j] * y[o + j];
        for (std::size_t j = 0; j < d; ++j) gx[o + j] += y[o + j] * (g[o + j] - dot);
      }
    });
  }
  return finish(out, "softmax");
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() == 0 || x.shape().back() == 0) shape_error("layernorm", "empty last dimension");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    shape_error("layernorm", "gain/bias must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.numel() / d;
  std::vector<float> v(x.numel());
  auto stats = std::make_shared<std::vector<float>>(2 * rows);
  kernels::layernorm_rows(rows, d, x.data().data(), gain.data().data(), bias.data().data(), eps,
                          v.data(), stats->data(), stats->data() + rows);
  Tensor out = make_result(x.shape(), std::move(v));
  if (tracking({&x, &gain, &bias})) {
    record(out, [x, gain, bias, out, stats, rows, d]() mutable {
      const auto g = out.grad();
      const auto xv = x.data();
      const auto gv = gain.data();
      const float* mean = stats->data();
      const float* rstd = stats->data() + rows;
      float* gx = x.requires_grad() ? x.grad().data() : nullptr;
      float* gg = gain.requires_grad() ? gain.grad().data() : nullptr;
      float* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
      const float inv_d = 1.0f / static_cast<float>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * d;
        float sum_dxhat = 0.0f;
        float sum_dxhat_xhat = 0.0f;
        for (std::size_t j = 0; j < d; ++j) {
          const float xhat = (xv[o + j] - mean[r]) * rstd[r];
          const float dxhat = g[o + j] * gv[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gg) gg[j] += g[o + j] * xhat;
          if (gb) gb[j] += g[o + j];
        }
        if (!gx) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const float xhat = (xv[o + j] - mean[r]) * rstd[r];
          const float dxhat = g[o + j] * gv[j];
          gx[o + j] += rstd[r] * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
      }
    });
  }
  return finish(out, "layernorm");
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
      b.dim(0) != w.dim(0)) {
    shape_error("conv1d", "x " + to_string(x.shape()) + ", w " + to_string(w.shape()) + ", b " +
                              to_string(b.shape()));
  }
  const kernels::Conv1dShape s{.c_in = x.dim(0), .c_out = w.dim(0), .len = x.dim(1),
                               .kernel = w.dim(2)};
  if (s.kernel % 2 == 0) {
    throw Error(ErrorKind::Unsupported,
                "conv1d: kernel size " + std::to_string(s.kernel) + " is even; only odd sizes keep "
                "'same' padding symmetric");
  }
  std::vector<float> v(s.c_out * s.len);
  kernels::conv1d_forward(s, x.data().data(), w.data().data(), b.data().data(), v.data());
  Tensor out = make_result({s.c_out, s.len}, std::move(v));
  if (tracking({&x, &w, &b})) {
    record(out, [x, w, b, out, s]() mutable {
      kernels::conv1d_backward(s, x.data().data(), w.data().data(), out.grad().data(),
                               x.requires_grad() ? x.grad().data() : nullptr,
                               w.requires_grad() ? w.grad().data() : nullptr,
                               b.requires_grad() ? b.grad().data() : nullptr);
    });
  }
  return finish(out, "conv1d");
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = make_result({1}, {static_cast<float>(acc)});
  if (tracking({&x})) {
    record(out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (float& v : x.grad()) v += g;
    });
  }
  return finish(out, "sum");
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) shape_error("mean", "empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  Tensor out = make_result({1}, {static_cast<float>(acc / n)});
  if (tracking({&x})) {
    record(out, [x, out, n]() mutable {
      const auto g = static_cast<float>(out.grad()[0] / n);
      for (float& v : x.grad()) v += g;
    });
  }
  return finish(out, "mean");
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse_loss", pred, target);
  if (pred.numel() == 0) shape_error("mse_loss", "empty tensors");
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  Tensor out = make_result({1}, {static_cast<float>(acc / n)});
  if (tracking({&pred, &target})) {
    record(out, [pred, target, out, n]() mutable {
      const auto scale = static_cast<float>(2.0 * out.grad()[0] / n);
      const auto p = pred.data();
      const auto t = target.data();
      if (pred.requires_grad()) {
        auto gp = pred.grad();
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += scale * (p[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.grad();
        for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= scale * (p[i] - t[i]);
      }
    });
  }
  return finish(out, "mse_loss");
}

}  // namespace ecgd::ad
