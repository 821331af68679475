#include "ecgd/optim.hpp"

#include <cmath>
#include <string>

#include "ecgd/error.hpp"

namespace ecgd::ad {

void AdamState::bind(std::span<const Tensor> params) {
  if (m.empty() && v.empty()) {
    m.resize(params.size());
    v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].numel(), 0.0f);
      v[i].assign(params[i].numel(), 0.0f);
    }
    return;
  }
  if (m.size() != params.size() || v.size() != params.size()) {
    throw Error(ErrorKind::Shape, "adam: state tracks " + std::to_string(m.size()) +
                                      " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m[i].size() != params[i].numel() || v[i].size() != params[i].numel()) {
      throw Error(ErrorKind::Shape, "adam: moment shape mismatch for parameter " +
                                        std::to_string(i));
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state, float lr, const AdamHyper& hyper) {
  if (!(lr > 0.0f)) throw Error(ErrorKind::Domain, "adam: learning rate must be > 0");
  state.bind(params);
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const auto c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(hyper.beta1), t));
  const auto c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(hyper.beta2), t));
  const bool check = checked();

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) {
      // Zero gradient still decays the moments.
      for (auto& mv : state.m[i]) mv *= hyper.beta1;
      for (auto& vv : state.v[i]) vv *= hyper.beta2;
    }
    const std::span<const float> g = p.has_grad() ? std::span<const float>(p.grad())
                                                  : std::span<const float>();
    auto w = p.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!g.empty()) {
        const float gj = g[j];
        if (check && !std::isfinite(gj)) {
          throw Error(ErrorKind::Numeric, "adam: non-finite gradient in parameter " +
                                              std::to_string(i));
        }
        m[j] = hyper.beta1 * m[j] + (1.0f - hyper.beta1) * gj;
        v[j] = hyper.beta2 * v[j] + (1.0f - hyper.beta2) * gj * gj;
      }
      const float mhat = m[j] / c1;
      const float vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

}  // namespace ecgd::ad
