#pragma once

// U-shaped Transformer denoiser: multi-scale convolutional patch embedding,
// pre-norm Transformer stages joined by parameter-free patch merging and
// separating, additive skip connections, and a multi-scale output head.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ecgd/tensor.hpp"

namespace ecgd::net {

struct ModelConfig {
  std::size_t input_channels = 2;
  std::size_t input_length = 256;
  std::size_t embed_dim = 8;
  std::vector<std::size_t> kernel_sizes{3, 5, 7, 9};
  std::vector<std::size_t> stage_dims{8, 16, 32, 64};
  std::vector<std::size_t> stage_heads{2, 4, 8, 16};
  std::size_t blocks_per_stage = 2;
  std::size_t ffn_multiplier = 4;
  bool positional_encoding = true;
  bool skip_connections = true;

  /// Two stages (dims 8, 16) for fast gradient checks.
  static ModelConfig reduced();

  std::size_t stages() const { return stage_dims.size(); }
  std::size_t branch_channels() const { return embed_dim / kernel_sizes.size(); }

  /// Throws Error(Config) naming the first violated invariant.
  void validate() const;

  /// Flat key=value lines; parse() accepts the same keys (unknown keys are
  /// an error, missing keys keep their defaults).
  std::string serialize() const;
  static ModelConfig parse(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvBranch {
  std::size_t kernel = 0;
  ad::Tensor w;  // [c_out x c_in x kernel]
  ad::Tensor b;  // [c_out]
};

struct BlockParams {
  ad::Tensor ln1_g, ln1_b;
  ad::Tensor qkv_w, qkv_b;    // [D x 3D], [3D]
  ad::Tensor proj_w, proj_b;  // [D x D], [D]
  ad::Tensor ln2_g, ln2_b;
  ad::Tensor ffn1_w, ffn1_b;  // [D x mD], [mD]
  ad::Tensor ffn2_w, ffn2_b;  // [mD x D], [D]
};

struct StageParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::vector<BlockParams> blocks;
};

using NamedTensor = std::pair<std::string, ad::Tensor>;

struct ModelParams {
  std::vector<ConvBranch> embed;
  std::vector<StageParams> encoder;
  std::vector<StageParams> decoder;  // decoder[0] runs first (deepest)
  std::vector<ConvBranch> head;

  /// Every learnable tensor in a fixed order with its hierarchical name.
  /// Entries are handles: writing through them updates the parameters.
  std::vector<NamedTensor> named() const;
  std::vector<ad::Tensor> tensors() const;
  std::size_t count() const;

  /// Same structure, each tensor aliasing this one's storage with its own
  /// gradient buffer. Used for per-worker gradient accumulation.
  ModelParams alias(bool requires_grad) const;
  ModelParams clone() const;
};

/// Allocates every parameter for `config` (zero-filled, no gradients).
ModelParams allocate_params(const ModelConfig& config);

/// Glorot-uniform weights, zero biases, unit layer-norm gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Fixed sinusoidal table, [embed_dim x input_length].
ad::Tensor sinusoidal_positions(std::size_t dim, std::size_t length);

/// Records shapes (channel-major [C x L]) and attention statistics.
struct ForwardTrace {
  std::vector<std::pair<std::size_t, std::size_t>> encoder_shapes;
  std::pair<std::size_t, std::size_t> bottleneck{0, 0};
  std::vector<std::pair<std::size_t, std::size_t>> decoder_shapes;
  /// max |sum(row) - 1| over all attention rows seen.
  double max_attention_row_error = 0.0;
  std::size_t attention_rows = 0;
};

// Building blocks. Signals are channel-major [C x L]; Transformer blocks see
// token-major [L x D].

/// Parallel "same" convolutions concatenated along channels in kernel order.
/// `positions` may be undefined to skip the positional encoding.
ad::Tensor multi_scale_embed(const ad::Tensor& x, const std::vector<ConvBranch>& branches,
                             const ad::Tensor& positions);

ad::Tensor transformer_block(const ad::Tensor& x, std::size_t heads, const BlockParams& p,
                             ForwardTrace* trace = nullptr);

/// [C x L] -> [2C x L/2]; column t is columns 2t and 2t+1 stacked.
ad::Tensor patch_merge(const ad::Tensor& x);
/// Exact inverse of patch_merge: [2C x L] -> [C x 2L].
ad::Tensor patch_separate(const ad::Tensor& x);

/// Token-major equivalents: [L x C] <-> [L/2 x 2C] are plain reshapes.
ad::Tensor patch_merge_tokens(const ad::Tensor& tokens);
ad::Tensor patch_separate_tokens(const ad::Tensor& tokens);

/// Average of parallel "same" convolutions, each mapping to the output channels.
ad::Tensor output_head(const ad::Tensor& x, const std::vector<ConvBranch>& branches);

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams params);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const;

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const ad::Tensor& positions() const { return positions_; }

  /// x is [input_channels x input_length]; returns the same shape.
  ad::Tensor forward(const ad::Tensor& x, ForwardTrace* trace = nullptr) const;
  /// Forward with an explicit parameter set (e.g. a worker alias).
  ad::Tensor forward(const ad::Tensor& x, const ModelParams& params,
                     ForwardTrace* trace = nullptr) const;

 private:
  ModelConfig config_;
  ModelParams params_;
  ad::Tensor positions_;
};

}  // namespace ecgd::net
