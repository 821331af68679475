#include "ecgd/net.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "ecgd/error.hpp"
#include "ecgd/rng.hpp"

namespace ecgd::net {

using ad::Shape;
using ad::Tensor;

namespace {

[[noreturn]] void config_error(const std::string& msg) {
  throw Error(ErrorKind::Config, "model config: " + msg);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    config_error("'" + std::string(key) + "' expects an unsigned integer, got '" +
                 std::string(s) + "'");
  }
  return v;
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const auto item = s.substr(pos, comma == std::string_view::npos ? s.npos : comma - pos);
    out.push_back(parse_size(key, item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  config_error("'" + std::string(key) + "' expects 0/1, got '" + std::string(s) + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

ConvBranch conv_branch(std::size_t c_in, std::size_t c_out, std::size_t k) {
  return {k, Tensor::zeros({c_out, c_in, k}), Tensor::zeros({c_out})};
}

BlockParams block_params(std::size_t d, std::size_t mult) {
  BlockParams p;
  p.ln1_g = Tensor::filled({d}, 1.0f);
  p.ln1_b = Tensor::zeros({d});
  p.qkv_w = Tensor::zeros({d, 3 * d});
  p.qkv_b = Tensor::zeros({3 * d});
  p.proj_w = Tensor::zeros({d, d});
  p.proj_b = Tensor::zeros({d});
  p.ln2_g = Tensor::filled({d}, 1.0f);
  p.ln2_b = Tensor::zeros({d});
  p.ffn1_w = Tensor::zeros({d, mult * d});
  p.ffn1_b = Tensor::zeros({mult * d});
  p.ffn2_w = Tensor::zeros({mult * d, d});
  p.ffn2_b = Tensor::zeros({d});
  return p;
}

template <typename Fn>
void for_each_block_tensor(const BlockParams& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + "ln1.g", b.ln1_g);
  fn(prefix + "ln1.b", b.ln1_b);
  fn(prefix + "qkv.w", b.qkv_w);
  fn(prefix + "qkv.b", b.qkv_b);
  fn(prefix + "proj.w", b.proj_w);
  fn(prefix + "proj.b", b.proj_b);
  fn(prefix + "ln2.g", b.ln2_g);
  fn(prefix + "ln2.b", b.ln2_b);
  fn(prefix + "ffn1.w", b.ffn1_w);
  fn(prefix + "ffn1.b", b.ffn1_b);
  fn(prefix + "ffn2.w", b.ffn2_w);
  fn(prefix + "ffn2.b", b.ffn2_b);
}

// Applies `map` to every tensor, building a structurally identical set.
template <typename Map>
ModelParams transform(const ModelParams& src, Map&& map) {
  ModelParams out = src;
  auto conv = [&](std::vector<ConvBranch>& bs) {
    for (auto& b : bs) {
      b.w = map(b.w);
      b.b = map(b.b);
    }
  };
  auto stage = [&](std::vector<StageParams>& ss) {
    for (auto& s : ss) {
      for (auto& b : s.blocks) {
        for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b,
                          &b.ln2_g, &b.ln2_b, &b.ffn1_w, &b.ffn1_b, &b.ffn2_w, &b.ffn2_b}) {
          *t = map(*t);
        }
      }
    }
  };
  conv(out.embed);
  stage(out.encoder);
  stage(out.decoder);
  conv(out.head);
  return out;
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

ModelConfig ModelConfig::reduced() {
  ModelConfig c;
  c.stage_dims = {8, 16};
  c.stage_heads = {2, 4};
  return c;
}

void ModelConfig::validate() const {
  if (input_channels == 0) config_error("input_channels must be >= 1");
  if (kernel_sizes.empty()) config_error("kernel_sizes is empty");
  for (auto k : kernel_sizes) {
    if (k % 2 == 0) config_error("kernel size " + std::to_string(k) + " is even");
  }
  if (embed_dim % kernel_sizes.size() != 0 || embed_dim == 0) {
    config_error("embed_dim " + std::to_string(embed_dim) + " is not a multiple of the " +
                 std::to_string(kernel_sizes.size()) + " embedding branches");
  }
  if (stage_dims.empty()) config_error("at least one stage is required");
  if (stage_heads.size() != stage_dims.size()) {
    config_error("stage_heads and stage_dims differ in length");
  }
  if (stage_dims[0] != embed_dim) config_error("stage 1 dim must equal embed_dim");
  for (std::size_t i = 0; i < stage_dims.size(); ++i) {
    if (i + 1 < stage_dims.size() && stage_dims[i + 1] != 2 * stage_dims[i]) {
      config_error("stage " + std::to_string(i + 2) + " dim must double stage " +
                   std::to_string(i + 1));
    }
    if (stage_heads[i] == 0 || stage_dims[i] % stage_heads[i] != 0) {
      config_error(std::to_string(stage_heads[i]) + " heads do not divide stage dim " +
                   std::to_string(stage_dims[i]));
    }
  }
  const std::size_t factor = std::size_t{1} << stage_dims.size();
  if (input_length == 0 || input_length % factor != 0) {
    config_error("input_length " + std::to_string(input_length) + " is not divisible by " +
                 std::to_string(factor));
  }
  if (blocks_per_stage == 0) config_error("blocks_per_stage must be >= 1");
  if (ffn_multiplier == 0) config_error("ffn_multiplier must be >= 1");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "input_channels=" << input_channels << '\n'
     << "input_length=" << input_length << '\n'
     << "embed_dim=" << embed_dim << '\n'
     << "kernel_sizes=" << join(kernel_sizes) << '\n'
     << "stage_dims=" << join(stage_dims) << '\n'
     << "stage_heads=" << join(stage_heads) << '\n'
     << "blocks_per_stage=" << blocks_per_stage << '\n'
     << "ffn_multiplier=" << ffn_multiplier << '\n'
     << "positional_encoding=" << (positional_encoding ? 1 : 0) << '\n'
     << "skip_connections=" << (skip_connections ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig c;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const auto line = trim(text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) config_error("expected key=value, got '" + std::string(line) + "'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "input_channels") c.input_channels = parse_size(key, value);
    else if (key == "input_length") c.input_length = parse_size(key, value);
    else if (key == "embed_dim") c.embed_dim = parse_size(key, value);
    else if (key == "kernel_sizes") c.kernel_sizes = parse_list(key, value);
    else if (key == "stage_dims") c.stage_dims = parse_list(key, value);
    else if (key == "stage_heads") c.stage_heads = parse_list(key, value);
    else if (key == "blocks_per_stage") c.blocks_per_stage = parse_size(key, value);
    else if (key == "ffn_multiplier") c.ffn_multiplier = parse_size(key, value);
    else if (key == "positional_encoding") c.positional_encoding = parse_bool(key, value);
    else if (key == "skip_connections") c.skip_connections = parse_bool(key, value);
    else config_error("unknown key '" + std::string(key) + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  auto push = [&](std::string name, const Tensor& t) { out.emplace_back(std::move(name), t); };
  for (const auto& b : embed) {
    const std::string p = "embed.k" + std::to_string(b.kernel) + ".";
    push(p + "w", b.w);
    push(p + "b", b.b);
  }
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    for (std::size_t j = 0; j < encoder[i].blocks.size(); ++j) {
      for_each_block_tensor(encoder[i].blocks[j],
                            "enc" + std::to_string(i + 1) + ".blk" + std::to_string(j + 1) + ".",
                            push);
    }
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    for (std::size_t j = 0; j < decoder[i].blocks.size(); ++j) {
      for_each_block_tensor(decoder[i].blocks[j],
                            "dec" + std::to_string(i + 1) + ".blk" + std::to_string(j + 1) + ".",
                            push);
    }
  }
  for (const auto& b : head) {
    const std::string p = "head.k" + std::to_string(b.kernel) + ".";
    push(p + "w", b.w);
    push(p + "b", b.b);
  }
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

ModelParams ModelParams::alias(bool requires_grad) const {
  return transform(*this, [&](const Tensor& t) { return t.alias(requires_grad); });
}

ModelParams ModelParams::clone() const {
  return transform(*this, [](const Tensor& t) { return t.clone(t.requires_grad()); });
}

ModelParams allocate_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  const std::size_t branch = config.branch_channels();
  for (auto k : config.kernel_sizes) {
    p.embed.push_back(conv_branch(config.input_channels, branch, k));
  }
  for (std::size_t i = 0; i < config.stages(); ++i) {
    StageParams s{config.stage_dims[i], config.stage_heads[i], {}};
    for (std::size_t j = 0; j < config.blocks_per_stage; ++j) {
      s.blocks.push_back(block_params(s.dim, config.ffn_multiplier));
    }
    p.encoder.push_back(std::move(s));
  }
  for (std::size_t i = config.stages(); i-- > 0;) {
    StageParams s{config.stage_dims[i], config.stage_heads[i], {}};
    for (std::size_t j = 0; j < config.blocks_per_stage; ++j) {
      s.blocks.push_back(block_params(s.dim, config.ffn_multiplier));
    }
    p.decoder.push_back(std::move(s));
  }
  for (auto k : config.kernel_sizes) {
    p.head.push_back(conv_branch(config.embed_dim, config.input_channels, k));
  }
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = allocate_params(config);
  Rng rng(seed);
  auto init_conv = [&](std::vector<ConvBranch>& bs) {
    for (auto& b : bs) {
      const double fan_in = static_cast<double>(b.w.dim(1) * b.kernel);
      const double fan_out = static_cast<double>(b.w.dim(0) * b.kernel);
      fill_uniform(b.w, std::sqrt(6.0 / (fan_in + fan_out)), rng);
    }
  };
  auto init_linear = [&](Tensor& w) {
    const double fan_in = static_cast<double>(w.dim(0));
    const double fan_out = static_cast<double>(w.dim(1));
    fill_uniform(w, std::sqrt(6.0 / (fan_in + fan_out)), rng);
  };
  auto init_stages = [&](std::vector<StageParams>& ss) {
    for (auto& s : ss) {
      for (auto& b : s.blocks) {
        init_linear(b.qkv_w);
        init_linear(b.proj_w);
        init_linear(b.ffn1_w);
        init_linear(b.ffn2_w);
      }
    }
  };
  init_conv(p.embed);
  init_stages(p.encoder);
  init_stages(p.decoder);
  init_conv(p.head);
  return p;
}

Tensor sinusoidal_positions(std::size_t dim, std::size_t length) {
  std::vector<float> v(dim * length);
  for (std::size_t c = 0; c < dim; ++c) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(dim));
    for (std::size_t t = 0; t < length; ++t) {
      const double angle = static_cast<double>(t) * freq;
      v[c * length + t] = static_cast<float>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor::from({dim, length}, std::move(v));
}

// ---------------------------------------------------------------------------

Tensor multi_scale_embed(const Tensor& x, const std::vector<ConvBranch>& branches,
                         const Tensor& positions) {
  if (branches.empty()) throw Error(ErrorKind::Config, "multi_scale_embed: no branches");
  if (x.rank() != 2 || x.dim(0) != branches.front().w.dim(1)) {
    throw Error(ErrorKind::Shape, "multi_scale_embed: expected [" +
                                      std::to_string(branches.front().w.dim(1)) +
                                      " x L] input, got " + ad::to_string(x.shape()));
  }
  std::vector<Tensor> outs;
  outs.reserve(branches.size());
  for (const auto& b : branches) outs.push_back(ad::conv1d(x, b.w, b.b));
  Tensor e = ad::concat(outs, 0);
  if (positions.defined()) {
    if (positions.shape() != e.shape()) {
      throw Error(ErrorKind::Shape, "multi_scale_embed: positional table " +
                                        ad::to_string(positions.shape()) + " does not match " +
                                        ad::to_string(e.shape()));
    }
    e = ad::add(e, positions);
  }
  return e;
}

Tensor transformer_block(const Tensor& x, std::size_t heads, const BlockParams& p,
                         ForwardTrace* trace) {
  if (x.rank() != 2) {
    throw Error(ErrorKind::Shape, "transformer_block: expected [L x D], got " +
                                      ad::to_string(x.shape()));
  }
  const std::size_t len = x.dim(0);
  const std::size_t d = x.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::Config, "transformer_block: " + std::to_string(heads) +
                                       " heads do not divide dim " + std::to_string(d));
  }
  const std::size_t dh = d / heads;

  // Multi-head self-attention on the normalized input.
  Tensor h = ad::layernorm(x, p.ln1_g, p.ln1_b);
  Tensor qkv = ad::linear(h, p.qkv_w, p.qkv_b);                    // [L x 3D]
  qkv = ad::transpose(ad::reshape(qkv, {len, 3 * heads, dh}), 0, 1);  // [3H x L x dh]
  Tensor q = ad::slice(qkv, 0, 0, heads);
  Tensor k = ad::slice(qkv, 0, heads, 2 * heads);
  Tensor v = ad::slice(qkv, 0, 2 * heads, 3 * heads);
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k, 1, 2)),
                            1.0f / std::sqrt(static_cast<float>(dh)));  // [H x L x L]
  Tensor attn = ad::softmax(scores);
  if (trace) {
    const auto a = attn.data();
    for (std::size_t r = 0; r < heads * len; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += a[r * len + j];
      trace->max_attention_row_error = std::max(trace->max_attention_row_error, std::abs(s - 1.0));
    }
    trace->attention_rows += heads * len;
  }
  Tensor ctx = ad::matmul(attn, v);                                // [H x L x dh]
  ctx = ad::reshape(ad::transpose(ctx, 0, 1), {len, d});
  Tensor y = ad::add(x, ad::linear(ctx, p.proj_w, p.proj_b));

  // Position-wise feed-forward.
  Tensor f = ad::layernorm(y, p.ln2_g, p.ln2_b);
  f = ad::linear(ad::gelu(ad::linear(f, p.ffn1_w, p.ffn1_b)), p.ffn2_w, p.ffn2_b);
  return ad::add(y, f);
}

Tensor patch_merge(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) % 2 != 0) {
    throw Error(ErrorKind::Shape, "patch_merge: need [C x L] with even L, got " +
                                      ad::to_string(x.shape()));
  }
  return ad::transpose(patch_merge_tokens(ad::transpose(x, 0, 1)), 0, 1);
}

Tensor patch_separate(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) % 2 != 0) {
    throw Error(ErrorKind::Shape, "patch_separate: need [C x L] with even C, got " +
                                      ad::to_string(x.shape()));
  }
  return ad::transpose(patch_separate_tokens(ad::transpose(x, 0, 1)), 0, 1);
}

Tensor patch_merge_tokens(const Tensor& tokens) {
  if (tokens.rank() != 2 || tokens.dim(0) % 2 != 0) {
    throw Error(ErrorKind::Shape, "patch_merge: need an even token count, got " +
                                      ad::to_string(tokens.shape()));
  }
  return ad::reshape(tokens, {tokens.dim(0) / 2, tokens.dim(1) * 2});
}

Tensor patch_separate_tokens(const Tensor& tokens) {
  if (tokens.rank() != 2 || tokens.dim(1) % 2 != 0) {
    throw Error(ErrorKind::Shape, "patch_separate: need an even channel count, got " +
                                      ad::to_string(tokens.shape()));
  }
  return ad::reshape(tokens, {tokens.dim(0) * 2, tokens.dim(1) / 2});
}

Tensor output_head(const Tensor& x, const std::vector<ConvBranch>& branches) {
  if (branches.empty()) throw Error(ErrorKind::Config, "output_head: no branches");
  if (x.rank() != 2 || x.dim(0) != branches.front().w.dim(1)) {
    throw Error(ErrorKind::Shape, "output_head: expected [" +
                                      std::to_string(branches.front().w.dim(1)) +
                                      " x L] input, got " + ad::to_string(x.shape()));
  }
  Tensor acc = ad::conv1d(x, branches.front().w, branches.front().b);
  for (std::size_t i = 1; i < branches.size(); ++i) {
    acc = ad::add(acc, ad::conv1d(x, branches[i].w, branches[i].b));
  }
  return ad::scale(acc, 1.0f / static_cast<float>(branches.size()));
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed)
    : Model(config, init_params(config, seed)) {}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (config_.positional_encoding) {
    positions_ = sinusoidal_positions(config_.embed_dim, config_.input_length);
  }
}

Model Model::clone() const { return Model(config_, params_.clone()); }

Tensor Model::forward(const Tensor& x, ForwardTrace* trace) const {
  return forward(x, params_, trace);
}

Tensor Model::forward(const Tensor& x, const ModelParams& p, ForwardTrace* trace) const {
  const auto& c = config_;
  if (x.shape() != Shape{c.input_channels, c.input_length}) {
    throw Error(ErrorKind::Shape, "forward: expected [" + std::to_string(c.input_channels) +
                                      " x " + std::to_string(c.input_length) + "] input, got " +
                                      ad::to_string(x.shape()));
  }
  auto guard = [](const Tensor& t, std::size_t tokens, std::size_t dim, const char* where) {
    if (t.dim(0) != tokens || t.dim(1) != dim) {
      throw Error(ErrorKind::Shape, std::string("forward: internal shape invariant violated at ") +
                                        where + ": " + ad::to_string(t.shape()));
    }
  };

  Tensor h = ad::transpose(multi_scale_embed(x, p.embed, positions_), 0, 1);  // [L x D]
  std::size_t tokens = c.input_length;

  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const auto& stage = p.encoder[i];
    guard(h, tokens, stage.dim, "encoder input");
    for (const auto& blk : stage.blocks) h = transformer_block(h, stage.heads, blk, trace);
    if (trace) trace->encoder_shapes.emplace_back(stage.dim, tokens);
    skips.push_back(h);
    h = patch_merge_tokens(h);
    tokens /= 2;
  }
  if (trace) trace->bottleneck = {h.dim(1), h.dim(0)};

  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const auto& stage = p.decoder[i];
    h = patch_separate_tokens(h);
    tokens *= 2;
    guard(h, tokens, stage.dim, "decoder input");
    if (c.skip_connections) h = ad::add(h, skips[skips.size() - 1 - i]);
    for (const auto& blk : stage.blocks) h = transformer_block(h, stage.heads, blk, trace);
    if (trace) trace->decoder_shapes.emplace_back(stage.dim, tokens);
  }

  return output_head(ad::transpose(h, 0, 1), p.head);
}

}  // namespace ecgd::net
