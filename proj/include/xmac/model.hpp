#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xmac/ops.hpp"

namespace xmac {

enum class BlockKind { kFused, kSeparable };

// One RGB-branch stage: `depth` blocks, the first carrying the stage stride.
// "fused" blocks expand with a full 3x3 convolution; "separable" blocks use
// 1x1 expand + depthwise 3x3. Both project back with a 1x1 convolution and
// add a residual when the stride is 1 and the channel count is unchanged.
struct StageSpec {
  BlockKind kind = BlockKind::kFused;
  int depth = 1;
  int out_channels = 16;
  int stride = 1;
};

struct IndexStageSpec {
  int out_channels = 16;
  int stride = 1;
};

struct AttentionSpec {
  bool enabled = true;
  int reduction = 8;
};

struct ModelConfig {
  int input_h = 224;
  int input_w = 224;
  int num_classes = 6;
  int stem_channels = 16;
  int expansion = 2;
  std::vector<StageSpec> rgb_stages;
  std::vector<IndexStageSpec> index_stages;
  int fusion_channels = 128;
  AttentionSpec attention;
  bool index_branch_enabled = true;
  double dropout_rate = 0.2;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// The default scaled-down architecture: every structural element present at
// a size that trains on a CPU in minutes. Parameter count stays well under
// one million.
ModelConfig toy_config(int input_size = 224, int num_classes = 6);

// A narrower variant for fast cross-validation experiments.
ModelConfig small_config(int input_size = 64, int num_classes = 6);

ModelConfig config_by_preset(const std::string& name, int input_size, int num_classes);

template <typename T>
struct ConvLayerT {
  TensorT<T> w;
  int64_t stride = 1;
  int64_t pad = 0;
};

template <typename T>
struct BnLayerT {
  TensorT<T> gamma, beta;
  std::shared_ptr<std::vector<T>> run_mean, run_var;
};

template <typename T>
struct BlockT {
  BlockKind kind = BlockKind::kFused;
  bool residual = false;
  ConvLayerT<T> expand;
  BnLayerT<T> bn1;
  ConvLayerT<T> dw;  // separable blocks only
  BnLayerT<T> bn_dw;
  ConvLayerT<T> project;
  BnLayerT<T> bn2;
};

template <typename T>
struct IndexLayerT {
  ConvLayerT<T> conv;
  BnLayerT<T> bn;
};

template <typename T>
struct AttentionT {
  ConvLayerT<T> q, k, v;  // 1x1 projections
  TensorT<T> gamma;       // learned residual weight, initialized to 0
  int reduction = 8;
};

/// The assembled network: RGB backbone, index branch, concat + 1x1 fusion,
/// self-attention and the pooled softmax head. Parameters are registered by
/// stable names, so checkpoints and ablated variants line up by name.
template <typename T>
struct ModelT {
  ModelConfig config;

  ConvLayerT<T> stem;
  BnLayerT<T> stem_bn;
  std::vector<std::vector<BlockT<T>>> rgb_stages;
  std::vector<IndexLayerT<T>> index_layers;
  ConvLayerT<T> fuse;
  BnLayerT<T> fuse_bn;
  AttentionT<T> attention;
  TensorT<T> fc_w, fc_b;

  std::vector<std::pair<std::string, TensorT<T>>> params;
  std::vector<std::pair<std::string, std::shared_ptr<std::vector<T>>>> buffers;

  TensorT<T>* find_param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, t] : params) t.zero_grad();
  }
};

using Model = ModelT<float>;

template <typename T>
struct ForwardOutputT {
  TensorT<T> logits;         // [N, num_classes]
  TensorT<T> probabilities;  // softmax(logits)
  TensorT<T> attended;       // post-attention feature map kept for saliency
  std::shared_ptr<TapeT<T>> tape;
};

using ForwardOutput = ForwardOutputT<float>;

namespace model_detail {

template <typename T>
TensorT<T> init_tensor(std::vector<int64_t> shape, const std::string& name, uint64_t seed,
                       double scale) {
  TensorT<T> t = TensorT<T>::zeros(shape);
  if (scale > 0) {
    Rng rng(Rng::mix(seed) ^ hash_name(name));
    for (auto& v : *t.data) v = static_cast<T>(rng.normal() * scale);
  }
  return t;
}

}  // namespace model_detail

/// Builds and He-initializes a model. Each parameter is seeded from
/// (seed, name), so two builds with the same seed are bit-identical and
/// ablated variants share the values of every parameter they have in common.
template <typename T>
ModelT<T> build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelT<T> m;
  m.config = config;

  auto reg = [&m](const std::string& name, TensorT<T> t) -> TensorT<T> {
    t.set_requires_grad();
    m.params.emplace_back(name, t);
    return t;
  };
  auto make_conv = [&](const std::string& name, int64_t cout, int64_t cin, int64_t k,
                       int64_t stride, int64_t pad) {
    ConvLayerT<T> c;
    const double fan_in = static_cast<double>(cin) * k * k;
    c.w = reg(name + ".w", model_detail::init_tensor<T>({cout, cin, k, k}, name + ".w", seed,
                                                        std::sqrt(2.0 / fan_in)));
    c.stride = stride;
    c.pad = pad;
    return c;
  };
  auto make_dw = [&](const std::string& name, int64_t c, int64_t k, int64_t stride, int64_t pad) {
    ConvLayerT<T> l;
    const double fan_in = static_cast<double>(k) * k;
    l.w = reg(name + ".w", model_detail::init_tensor<T>({c, 1, k, k}, name + ".w", seed,
                                                        std::sqrt(2.0 / fan_in)));
    l.stride = stride;
    l.pad = pad;
    return l;
  };
  auto make_bn = [&](const std::string& name, int64_t c) {
    BnLayerT<T> bn;
    bn.gamma = reg(name + ".gamma", TensorT<T>::full({c}, T(1)));
    bn.beta = reg(name + ".beta", TensorT<T>::zeros({c}));
    bn.run_mean = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
    bn.run_var = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(1));
    m.buffers.emplace_back(name + ".running_mean", bn.run_mean);
    m.buffers.emplace_back(name + ".running_var", bn.run_var);
    return bn;
  };

  m.stem = make_conv("stem.conv", config.stem_channels, 3, 3, 2, 1);
  m.stem_bn = make_bn("stem.bn", config.stem_channels);

  int in_ch = config.stem_channels;
  for (size_t s = 0; s < config.rgb_stages.size(); ++s) {
    const StageSpec& spec = config.rgb_stages[s];
    std::vector<BlockT<T>> blocks;
    for (int b = 0; b < spec.depth; ++b) {
      const std::string base = "rgb.s" + std::to_string(s) + ".b" + std::to_string(b);
      const int stride = b == 0 ? spec.stride : 1;
      const int mid = spec.out_channels * config.expansion;
      BlockT<T> block;
      block.kind = spec.kind;
      block.residual = stride == 1 && in_ch == spec.out_channels;
      if (spec.kind == BlockKind::kFused) {
        block.expand = make_conv(base + ".expand", mid, in_ch, 3, stride, 1);
        block.bn1 = make_bn(base + ".bn1", mid);
      } else {
        block.expand = make_conv(base + ".expand", mid, in_ch, 1, 1, 0);
        block.bn1 = make_bn(base + ".bn1", mid);
        block.dw = make_dw(base + ".dw", mid, 3, stride, 1);
        block.bn_dw = make_bn(base + ".bn_dw", mid);
      }
      block.project = make_conv(base + ".project", spec.out_channels, mid, 1, 1, 0);
      block.bn2 = make_bn(base + ".bn2", spec.out_channels);
      blocks.push_back(std::move(block));
      in_ch = spec.out_channels;
    }
    m.rgb_stages.push_back(std::move(blocks));
  }

  if (config.index_branch_enabled) {
    int ich = 3;
    for (size_t l = 0; l < config.index_stages.size(); ++l) {
      const std::string base = "idx.l" + std::to_string(l);
      IndexLayerT<T> layer;
      layer.conv = make_conv(base + ".conv", config.index_stages[l].out_channels, ich, 3,
                             config.index_stages[l].stride, 1);
      layer.bn = make_bn(base + ".bn", config.index_stages[l].out_channels);
      ich = config.index_stages[l].out_channels;
      m.index_layers.push_back(std::move(layer));
    }
    in_ch += ich;
  }

  m.fuse = make_conv("fuse.conv", config.fusion_channels, in_ch, 1, 1, 0);
  m.fuse_bn = make_bn("fuse.bn", config.fusion_channels);

  if (config.attention.enabled) {
    const int c = config.fusion_channels;
    const int cr = c / config.attention.reduction;
    m.attention.q = make_conv("attn.q", cr, c, 1, 1, 0);
    m.attention.k = make_conv("attn.k", cr, c, 1, 1, 0);
    m.attention.v = make_conv("attn.v", c, c, 1, 1, 0);
    m.attention.gamma = reg("attn.gamma", TensorT<T>::zeros({1}));
    m.attention.reduction = config.attention.reduction;
  }

  m.fc_w = reg("head.fc.w",
               model_detail::init_tensor<T>({config.num_classes, config.fusion_channels},
                                            "head.fc.w", seed,
                                            std::sqrt(2.0 / config.fusion_channels)));
  m.fc_b = reg("head.fc.b", TensorT<T>::zeros({config.num_classes}));
  return m;
}

template <typename T>
int64_t parameter_count(const ModelT<T>& model) {
  int64_t total = 0;
  for (const auto& [name, t] : model.params) total += t.numel();
  return total;
}

/// Non-local single-head attention over the spatial grid. Writes the
/// softmaxed affinity matrix to `attn_rows` when requested (tests inspect
/// the row sums).
template <typename T>
TensorT<T> self_attention_block(TapeT<T>* tape, const TensorT<T>& features, AttentionT<T>& attn,
                                TensorT<T>* attn_rows = nullptr) {
  const int64_t n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (c % attn.reduction != 0)
    throw ConfigError("attention: reduction " + std::to_string(attn.reduction) +
                      " does not divide " + std::to_string(c) + " channels");
  const int64_t cr = c / attn.reduction;
  const int64_t len = h * w;

  TensorT<T> q = conv2d(tape, features, attn.q.w, nullptr, 1, 0);
  TensorT<T> k = conv2d(tape, features, attn.k.w, nullptr, 1, 0);
  TensorT<T> v = conv2d(tape, features, attn.v.w, nullptr, 1, 0);
  q = reshape(tape, q, {n, cr, len});
  k = reshape(tape, k, {n, cr, len});
  v = reshape(tape, v, {n, c, len});

  TensorT<T> scores = matmul_batched(tape, transpose_last2(tape, q), k);  // [n,len,len]
  scores = scale(tape, scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(cr))));
  TensorT<T> rows = softmax(tape, scores);  // row i: weights over key positions
  if (attn_rows) *attn_rows = rows;

  TensorT<T> context = matmul_batched(tape, v, transpose_last2(tape, rows));  // [n,c,len]
  context = reshape(tape, context, {n, c, h, w});
  return add(tape, features, mul_scalar_param(tape, context, attn.gamma));
}

namespace model_detail {

template <typename T>
TensorT<T> conv_bn_relu(TapeT<T>* tape, const TensorT<T>& x, ConvLayerT<T>& conv, BnLayerT<T>& bn,
                        Mode mode) {
  TensorT<T> y = conv2d(tape, x, conv.w, nullptr, conv.stride, conv.pad);
  y = batchnorm2d(tape, y, bn.gamma, bn.beta, *bn.run_mean, *bn.run_var, mode);
  return relu(tape, y);
}

template <typename T>
TensorT<T> run_block(TapeT<T>* tape, const TensorT<T>& x, BlockT<T>& block, Mode mode) {
  TensorT<T> y;
  if (block.kind == BlockKind::kFused) {
    y = conv_bn_relu(tape, x, block.expand, block.bn1, mode);
  } else {
    y = conv_bn_relu(tape, x, block.expand, block.bn1, mode);
    y = depthwise_conv2d(tape, y, block.dw.w, block.dw.stride, block.dw.pad);
    y = batchnorm2d(tape, y, block.bn_dw.gamma, block.bn_dw.beta, *block.bn_dw.run_mean,
                    *block.bn_dw.run_var, mode);
    y = relu(tape, y);
  }
  y = conv2d(tape, y, block.project.w, nullptr, block.project.stride, block.project.pad);
  y = batchnorm2d(tape, y, block.bn2.gamma, block.bn2.beta, *block.bn2.run_mean,
                  *block.bn2.run_var, mode);
  if (block.residual) y = add(tape, y, x);
  return y;
}

template <typename T>
void check_input_range(const TensorT<T>& t, const char* what) {
  for (const T v : *t.data)
    if (!(v >= T(0) && v <= T(1)))
      throw ShapeError(std::string(what) + ": input values must lie in [0,1]");
}

}  // namespace model_detail

template <typename T>
ForwardOutputT<T> forward(ModelT<T>& model, const TensorT<T>& rgb, const TensorT<T>& index,
                          Mode mode, Rng& rng, bool record_tape) {
  const ModelConfig& cfg = model.config;
  if (rgb.ndim() != 4 || rgb.dim(1) != 3 || rgb.dim(2) != cfg.input_h || rgb.dim(3) != cfg.input_w)
    throw ShapeError("forward: rgb input " + rgb.shape_str() + " does not match configured [N,3," +
                     std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w) + "]");
  if (cfg.index_branch_enabled) {
    if (!index.defined())
      throw ShapeError("forward: index branch is enabled but no index tensor was supplied");
    if (index.shape != rgb.shape)
      throw ShapeError("forward: index input " + index.shape_str() + " does not match rgb " +
                       rgb.shape_str());
  }
  model_detail::check_input_range(rgb, "forward(rgb)");
  if (cfg.index_branch_enabled) model_detail::check_input_range(index, "forward(index)");

  ForwardOutputT<T> out;
  out.tape = record_tape ? std::make_shared<TapeT<T>>() : nullptr;
  TapeT<T>* tape = out.tape.get();

  TensorT<T> x = model_detail::conv_bn_relu(tape, rgb, model.stem, model.stem_bn, mode);
  for (auto& stage : model.rgb_stages)
    for (auto& block : stage) x = model_detail::run_block(tape, x, block, mode);

  if (cfg.index_branch_enabled) {
    TensorT<T> ix = index;
    for (auto& layer : model.index_layers)
      ix = model_detail::conv_bn_relu(tape, ix, layer.conv, layer.bn, mode);
    x = concat_channels(tape, x, ix);
  }

  x = conv2d(tape, x, model.fuse.w, nullptr, 1, 0);
  x = batchnorm2d(tape, x, model.fuse_bn.gamma, model.fuse_bn.beta, *model.fuse_bn.run_mean,
                  *model.fuse_bn.run_var, mode);
  x = relu(tape, x);

  if (cfg.attention.enabled) x = self_attention_block(tape, x, model.attention);
  out.attended = x;

  TensorT<T> pooled = global_avg_pool(tape, x);
  pooled = dropout(tape, pooled, cfg.dropout_rate, rng, mode);
  out.logits = linear(tape, pooled, model.fc_w, &model.fc_b);
  out.probabilities = softmax(tape, out.logits);
  return out;
}

template <typename T>
ForwardOutputT<T> forward(ModelT<T>& model, const TensorT<T>& rgb, const TensorT<T>& index,
                          Mode mode, Rng& rng) {
  return forward(model, rgb, index, mode, rng, mode == Mode::kTrain);
}

}  // namespace xmac
