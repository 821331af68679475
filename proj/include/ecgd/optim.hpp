#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ecgd/tensor.hpp"

namespace ecgd::ad {

struct AdamHyper {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// First/second moments per parameter (same order as the parameter list)
/// and the step count.
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t t = 0;

  /// Sizes the moment buffers for `params` if empty; throws on mismatch.
  void bind(std::span<const Tensor> params);
};

/// One Adam update with bias correction, reading each parameter's gradient.
/// Parameters without a gradient buffer are treated as having zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, float lr, const AdamHyper& hyper = {});

}  // namespace ecgd::ad
