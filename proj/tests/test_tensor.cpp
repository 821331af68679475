#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "ecgd/error.hpp"
#include "ecgd/optim.hpp"
#include "ecgd/tensor.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "suites.hpp"

using namespace ecgd;
using namespace ecgd::ad;
using testing::check_op;
using testing::random_tensor;

namespace {

constexpr double kOpTol = 1e-3;

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(values(matmul(a, eye)) == values(a));
  const Tensor p = Tensor::from({2, 2}, {1, 0, 0, 0});
  const Tensor q = Tensor::from({2, 2}, {0, 1, 1, 0});
  CHECK(values(matmul(p, q)) == std::vector<float>{0, 1, 0, 0});
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
  CHECK(matmul(Tensor::zeros({3, 2, 4}), Tensor::zeros({3, 4, 5})).shape() == Shape{3, 2, 5});
}

TEST_CASE("conv1d examples") {
  Rng rng(3);
  const Tensor x = random_tensor({1, 12}, rng);
  CHECK(values(conv1d(x, Tensor::from({1, 1, 1}, {1}), Tensor::zeros({1}))) == values(x));
  CHECK(values(conv1d(x, Tensor::from({1, 1, 3}, {0, 1, 0}), Tensor::zeros({1}))) == values(x));
  for (std::size_t k : {1, 3, 5, 7, 9}) {
    CHECK(conv1d(random_tensor({2, 17}, rng), random_tensor({3, 2, k}, rng), Tensor::zeros({3}))
              .shape() == Shape{3, 17});
  }
  try {
    conv1d(x, Tensor::zeros({1, 1, 4}), Tensor::zeros({1}));
    FAIL("even kernel accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unsupported);
  }
}

TEST_CASE("layernorm examples and statistics") {
  const Tensor one = Tensor::filled({4}, 1.0f);
  const Tensor zero = Tensor::zeros({4});
  CHECK(values(layernorm(Tensor::filled({2, 4}, 3.5f), one, zero)) == std::vector<float>(8, 0.0f));
  const Tensor y = layernorm(Tensor::from({1, 2}, {1, -1}), Tensor::filled({2}, 1.0f),
                             Tensor::zeros({2}), 0.0f);
  CHECK(values(y) == std::vector<float>{1, -1});
  CHECK_THROWS_AS(layernorm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0})), Error);

  Rng rng(4);
  const Tensor x = random_tensor({50, 16}, rng, -3.0, 5.0);
  const Tensor z = layernorm(x, Tensor::filled({16}, 1.0f), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 50; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 16; ++j) m += z.data()[r * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += std::pow(z.data()[r * 16 + j] - m, 2);
    v /= 16;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-3);
  }
}

TEST_CASE("softmax examples and row sums") {
  CHECK(values(softmax(Tensor::from({2}, {0, 0}))) == std::vector<float>{0.5f, 0.5f});
  CHECK(values(softmax(Tensor::from({2}, {1000, 0}))) == std::vector<float>{1.0f, 0.0f});
  Rng rng(5);
  const Tensor p = softmax(random_tensor({3, 40, 40}, rng, -10, 10));
  for (std::size_t r = 0; r < 120; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 40; ++j) {
      const float v = p.data()[r * 40 + j];
      CHECK(v >= 0.0f);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("structural ops") {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(values(transpose(a, 0, 1)) == std::vector<float>{1, 4, 2, 5, 3, 6});
  CHECK(values(reshape(a, {3, 2})) == values(a));
  CHECK(values(concat({a, a}, 0)) == std::vector<float>{1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6});
  CHECK(values(concat({a, a}, 1)) == std::vector<float>{1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6});
  CHECK(values(slice(a, 1, 1, 3)) == std::vector<float>{2, 3, 5, 6});
  CHECK_THROWS_AS(reshape(a, {4, 2}), Error);
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), Error);
}

TEST_CASE("losses and reductions") {
  Rng rng(6);
  const Tensor x = random_tensor({7}, rng);
  CHECK(mse_loss(x, x).item() == 0.0f);
  CHECK(mse_loss(Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 1})).item() == 1.0f);
  CHECK(sum(Tensor::from({3}, {1, 2, 3})).item() == 6.0f);
  CHECK(mean(Tensor::from({4}, {1, 2, 3, 6})).item() == 3.0f);
  CHECK(values(relu(Tensor::from({3}, {-1, 0, 2}))) == std::vector<float>{0, 0, 2});
  CHECK(gelu(Tensor::from({1}, {0})).item() == 0.0f);
  CHECK(gelu(Tensor::from({1}, {1})).item() == doctest::Approx(0.841192).epsilon(1e-5));
}

TEST_CASE("backward contract") {
  Tape tape;
  TapeScope scope(tape);

  Tensor x = Tensor::from({4}, {1, 2, 3, 4}, true);
  tape.backward(mean(x));
  CHECK(values(Tensor::from({4}, {x.grad().begin(), x.grad().end()})) ==
        std::vector<float>(4, 0.25f));

  tape.clear();
  Tensor s = Tensor::scalar(3.0f, true);
  const Tensor y = mul(s, s);
  tape.backward(y);
  CHECK(s.grad()[0] == 6.0f);
  tape.backward(y);
  CHECK(s.grad()[0] == 12.0f);
  s.zero_grad();
  CHECK(s.grad()[0] == 0.0f);

  CHECK_THROWS_AS(tape.backward(mul(x, x)), Error);
}

TEST_CASE("ops without a tape record nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(active_tape() == nullptr);
}

TEST_CASE("checked mode flags non-finite values") {
  set_checked(true);
  CHECK_THROWS_AS(scale(Tensor::from({1}, {std::numeric_limits<float>::max()}), 10.0f), Error);
  set_checked(false);
  CHECK_NOTHROW(scale(Tensor::from({1}, {std::numeric_limits<float>::max()}), 10.0f));
}

TEST_CASE("finite-difference gradients of every op") {
  for (const auto& c : testing::op_cases()) {
    const auto report = testing::check_op_case(c);
    CHECK_MESSAGE(report.max_rel_err < kOpTol, c.name << ": " << report.max_rel_err << " at " << report.worst);
  }
}

TEST_CASE("adam: one hand-executed step") {
  Tensor p = Tensor::from({3}, {0.5f, -1.0f, 2.0f}, true);
  for (float& g : p.grad()) g = 1.0f;
  AdamState st;
  std::vector<Tensor> params{p};
  adam_step(params, st, 0.001f);
  CHECK(st.t == 1);
  // m_hat = 1, v_hat = 1, step = lr * 1 / (1 + 1e-8).
  const double step = 0.001 / (1.0 + 1e-8);
  CHECK(p.data()[0] == doctest::Approx(0.5 - step).epsilon(1e-6));
  CHECK(0.5f - p.data()[0] == doctest::Approx(0.000999999).epsilon(1e-4));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from({2}, {0.25f, 3.0f}, true);
  p.grad();
  AdamState st;
  std::vector<Tensor> params{p};
  adam_step(params, st, 0.001f);
  adam_step(params, st, 0.001f);
  CHECK(values(p) == std::vector<float>{0.25f, 3.0f});
}

TEST_CASE("adam: deterministic and validated") {
  auto run = [] {
    Tensor p = Tensor::from({2}, {0.1f, 0.2f}, true);
    AdamState st;
    std::vector<Tensor> params{p};
    for (int i = 0; i < 2; ++i) {
      p.grad()[0] = 0.3f;
      p.grad()[1] = -0.7f;
      adam_step(params, st, 0.001f);
    }
    return values(p);
  };
  CHECK(run() == run());

  Tensor p = Tensor::from({1}, {0.0f}, true);
  std::vector<Tensor> params{p};
  AdamState st;
  CHECK_THROWS_AS(adam_step(params, st, 0.0f), Error);
  p.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  set_checked(true);
  CHECK_THROWS_AS(adam_step(params, st, 0.001f), Error);
  set_checked(false);
}
