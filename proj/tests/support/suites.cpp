#include "suites.hpp"

#include <cmath>

#include "fixtures.hpp"

namespace ecgd::testing {

using namespace ecgd::ad;

namespace {

// Nudges values away from a kink at zero so central differences stay on one side.
Tensor away_from_zero(Tensor t, float margin) {
  for (float& v : t.data()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
  return t;
}

}  // namespace

const std::vector<OpCase>& op_cases() {
  static const std::vector<OpCase> cases{
    {"add", [](const auto& in) { return add(in[0], in[1]); },
      [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; }},
    {"sub", [](const auto& in) { return sub(in[0], in[1]); },
      [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; }},
    {"mul", [](const auto& in) { return mul(in[0], in[1]); },
      [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; }},
    {"scale", [](const auto& in) { return scale(in[0], -1.7f); },
      [](Rng& r) { return std::vector{random_tensor({5}, r)}; }},
    {"add_bias", [](const auto& in) { return add_bias(in[0], in[1]); },
      [](Rng& r) { return std::vector{random_tensor({2, 3, 4}, r), random_tensor({4}, r)}; }},
    {"matmul", [](const auto& in) { return matmul(in[0], in[1]); },
      [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; }},
    {"matmul batched", [](const auto& in) { return matmul(in[0], in[1]); },
      [](Rng& r) {
        return std::vector{random_tensor({2, 3, 4}, r), random_tensor({2, 4, 5}, r)};
      }},
    {"linear", [](const auto& in) { return linear(in[0], in[1], in[2]); },
      [](Rng& r) {
        return std::vector{random_tensor({5, 3}, r), random_tensor({3, 4}, r),
                           random_tensor({4}, r)};
      }},
    {"reshape", [](const auto& in) { return reshape(in[0], {4, 3}); },
      [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; }},
    {"transpose", [](const auto& in) { return transpose(in[0], 0, 2); },
      [](Rng& r) { return std::vector{random_tensor({2, 3, 4}, r)}; }},
    {"concat", [](const auto& in) { return concat({in[0], in[1]}, 1); },
      [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({2, 5}, r)}; }},
    {"slice", [](const auto& in) { return slice(in[0], 1, 1, 4); },
      [](Rng& r) { return std::vector{random_tensor({3, 5}, r)}; }},
    {"relu", [](const auto& in) { return relu(in[0]); },
      [](Rng& r) { return std::vector{away_from_zero(random_tensor({4, 4}, r), 0.01f)}; }},
    {"gelu", [](const auto& in) { return gelu(in[0]); },
      [](Rng& r) { return std::vector{random_tensor({4, 4}, r, -3, 3)}; }},
    {"softmax", [](const auto& in) { return softmax(in[0]); },
      [](Rng& r) { return std::vector{random_tensor({3, 6}, r)}; }},
    {"layernorm", [](const auto& in) { return layernorm(in[0], in[1], in[2]); },
      [](Rng& r) {
        return std::vector{random_tensor({3, 6}, r), random_tensor({6}, r),
                           random_tensor({6}, r)};
      }},
    {"conv1d", [](const auto& in) { return conv1d(in[0], in[1], in[2]); },
      [](Rng& r) {
        return std::vector{random_tensor({2, 12}, r), random_tensor({3, 2, 5}, r),
                           random_tensor({3}, r)};
      }},
    {"sum", [](const auto& in) { return sum(in[0]); },
      [](Rng& r) { return std::vector{random_tensor({3, 3}, r)}; }},
    {"mean", [](const auto& in) { return mean(in[0]); },
      [](Rng& r) { return std::vector{random_tensor({3, 3}, r)}; }},
    {"mse_loss", [](const auto& in) { return mse_loss(in[0], in[1]); },
      [](Rng& r) { return std::vector{random_tensor({2, 5}, r), random_tensor({2, 5}, r)}; }},
  };
  return cases;
}

GradReport check_op_case(const OpCase& c, int n_seeds) {
  GradReport worst;
  for (int s = 1; s <= n_seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    Rng rng(seed * 1000 + 7);
    const GradReport r = check_op(c.op, c.make_inputs(rng), seed);
    worst.checked += r.checked;
    if (r.max_rel_err >= worst.max_rel_err) {
      worst.max_rel_err = r.max_rel_err;
      worst.worst = "seed " + std::to_string(seed) + " " + r.worst;
    }
  }
  return worst;
}

std::array<std::int32_t, 2> reference_212(std::uint8_t b0, std::uint8_t b1, std::uint8_t b2) {
  std::array<int, 12> bits1{}, bits2{};
  for (int k = 0; k < 8; ++k) {
    bits1[k] = (b0 >> k) & 1;
    bits2[k] = (b2 >> k) & 1;
  }
  for (int k = 0; k < 4; ++k) {
    bits1[8 + k] = (b1 >> k) & 1;
    bits2[8 + k] = (b1 >> (4 + k)) & 1;
  }
  auto value = [](const std::array<int, 12>& bits) {
    std::int32_t v = 0;
    for (int k = 0; k < 11; ++k) v += bits[k] * (1 << k);
    return v - bits[11] * 2048;
  };
  return {value(bits1), value(bits2)};
}

}  // namespace ecgd::testing
