#pragma once

// Dense f32 tensors with tape-based reverse-mode differentiation.
//
// Ops record a backward closure on the calling thread's active tape (see
// TapeScope) when any input requires a gradient. Without an active tape the
// ops run forward only. A tape and the tensors it references belong to one
// thread.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ecgd::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s) noexcept;
std::string to_string(const Shape& s);

struct Node {
  Shape shape;
  /// Shared so that reshapes and parameter views alias storage.
  std::shared_ptr<std::vector<float>> data;
  std::vector<float> grad;  // empty until first touched
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data->size(); }

  std::span<float> data() { return *node_->data; }
  std::span<const float> data() const { return *node_->data; }
  float item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  /// Gradient buffer, zero-initialized on first access. The handle is shared,
  /// so a const handle still grants write access to the gradient.
  std::span<float> grad() const;
  void zero_grad();

  /// New leaf that aliases this tensor's data but owns a separate gradient.
  Tensor alias(bool requires_grad) const;
  /// Deep copy of the data as a leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_node(const Tensor& o) const noexcept { return node_ == o.node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
  friend Tensor make_result(Shape shape, std::vector<float> data);
};

/// Result tensor for op implementations.
Tensor make_result(Shape shape, std::vector<float> data);

class Tape {
 public:
  void record(const Tensor& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs recorded rules in reverse. Gradients
  /// of intermediate results are reset at the start of every call; leaf
  /// gradients accumulate across calls.
  void backward(const Tensor& loss);

  void clear() noexcept { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

/// Installs `tape` as the active tape of the current thread for the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// Checked mode: every op verifies its outputs (and backward its gradients)
/// are finite and throws Error(Numeric) otherwise.
void set_checked(bool on) noexcept;
bool checked() noexcept;

// ---------------------------------------------------------------------------
// Ops. Shape mismatches throw Error(Shape).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
/// x[..., D] + bias[D]
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// [m x k] * [k x n], or batched [B x m x k] * [B x k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * w[in x out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t d0, std::size_t d1);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor relu(const Tensor& x);
/// tanh approximation
Tensor gelu(const Tensor& x);
/// Over the last dimension, max-subtracted.
Tensor softmax(const Tensor& x);
/// Over the last dimension.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
/// x [C_in x L], w [C_out x C_in x K], b [C_out]; K odd, "same" zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace ecgd::ad
