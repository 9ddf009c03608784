#pragma once

// ViT building blocks: patch tokenizers, CLS/position embeddings,
// multi-head self-attention, the feed-forward network and the pre-LN
// encoder block, plus a plain single-branch ViT built from them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "crossvit/config.hpp"
#include "crossvit/instrument.hpp"
#include "crossvit/interp.hpp"
#include "crossvit/ops.hpp"
#include "crossvit/rng.hpp"

namespace crossvit {

inline constexpr double kLayerNormEps = 1e-6;

// Callback used to enumerate parameters in a fixed order.
using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

struct LinearParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct NormParams {
  Tensor gamma, beta;

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, kLayerNormEps); }
  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// Per-head projections are the column blocks [h*d, (h+1)*d) of the
// [C x C] q/k/v matrices. No q/k/v bias; the output projection has one.
struct AttentionParams {
  Tensor wq, wk, wv;
  LinearParams proj;
  std::size_t heads = 1;

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    proj.visit(prefix + ".proj", f);
  }
};

struct FfnParams {
  LinearParams fc1, fc2;
  void visit(const std::string& prefix, const ParamVisitor& f) {
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

struct EncoderParams {
  NormParams norm1;
  AttentionParams attn;
  NormParams norm2;
  FfnParams ffn;

  void visit(const std::string& prefix, const ParamVisitor& f) {
    norm1.visit(prefix + ".norm1", f);
    attn.visit(prefix + ".attn", f);
    norm2.visit(prefix + ".norm2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

struct ConvLayerParams {
  ConvLayerSpec spec{};
  LinearParams conv;  // weight [k*k*in x out], rows ordered (ky, kx, channel)
};

struct TokenizerParams {
  TokenizerKind kind = TokenizerKind::Linear;
  std::size_t patch_size = 16;
  LinearParams linear;  // [P*P*3 x C] for the linear tokenizer
  std::vector<ConvLayerParams> conv;

  void visit(const std::string& prefix, const ParamVisitor& f) {
    if (kind == TokenizerKind::Linear) {
      linear.visit(prefix + ".proj", f);
    } else {
      for (std::size_t i = 0; i < conv.size(); ++i)
        conv[i].conv.visit(prefix + ".conv" + std::to_string(i), f);
    }
  }
};

struct EmbeddingParams {
  TokenizerParams tokenizer;
  Tensor cls_token;  // [1 x C]; undefined in the no-CLS variant
  Tensor pos_embed;  // [(1+N) x C]; row 0 is the CLS slot

  void visit(const std::string& prefix, const ParamVisitor& f) {
    tokenizer.visit(prefix + ".tokenizer", f);
    if (cls_token.defined()) f(prefix + ".cls_token", cls_token);
    f(prefix + ".pos_embed", pos_embed);
  }
};

struct HeadParams {
  NormParams norm;
  LinearParams fc;
  void visit(const std::string& prefix, const ParamVisitor& f) {
    norm.visit(prefix + ".norm", f);
    fc.visit(prefix + ".fc", f);
  }
};

// One branch's activation: a CLS row and N patch rows on a rows x cols grid.
struct TokenSequence {
  Tensor cls;    // [1 x C]
  Tensor patch;  // [N x C]
  Grid grid;

  std::size_t width() const { return cls.dim(1); }
  std::size_t num_patches() const { return patch.dim(0); }
  Tensor joined() const { return concat({cls, patch}, 0); }

  static TokenSequence split(const Tensor& x, const Grid& grid) {
    if (x.rank() != 2 || x.dim(0) != grid.size() + 1)
      throw ShapeError("token sequence " + shape_str(x.shape()) + " does not hold 1+" +
                       std::to_string(grid.size()) + " rows");
    return {slice(x, 0, 0, 1), slice(x, 0, 1, x.dim(0)), grid};
  }
};

// ---------------------------------------------------------------------------
// Initialization: truncated normal projections, zero biases, unit LN gain.

class Initializer {
 public:
  Initializer(Rng& rng, double std) : rng_(rng), std_(std) {}

  Tensor normal(Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng_.truncated_normal(std_);
    return Tensor::from(std::move(shape), std::move(v), true);
  }
  static Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
  static Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

  LinearParams linear(std::size_t in, std::size_t out) { return {normal({in, out}), zeros({out})}; }
  static NormParams norm(std::size_t c) { return {ones({c}), zeros({c})}; }

  AttentionParams attention(std::size_t c, std::size_t heads) {
    AttentionParams a;
    a.wq = normal({c, c});
    a.wk = normal({c, c});
    a.wv = normal({c, c});
    a.proj = linear(c, c);
    a.heads = heads;
    return a;
  }

  EncoderParams encoder(std::size_t c, std::size_t heads, std::size_t ratio) {
    EncoderParams e;
    e.norm1 = norm(c);
    e.attn = attention(c, heads);
    e.norm2 = norm(c);
    e.ffn = {linear(c, ratio * c), linear(ratio * c, c)};
    return e;
  }

  EmbeddingParams embedding(const BranchConfig& b, bool with_cls) {
    EmbeddingParams e;
    e.tokenizer.kind = b.tokenizer;
    e.tokenizer.patch_size = b.patch_size;
    if (b.tokenizer == TokenizerKind::Linear) {
      e.tokenizer.linear = linear(b.patch_size * b.patch_size * 3, b.embed_dim);
    } else {
      for (const auto& spec : b.conv_layers())
        e.tokenizer.conv.push_back(
            {spec, linear(spec.kernel * spec.kernel * spec.in_channels, spec.out_channels)});
    }
    if (with_cls) e.cls_token = normal({1, b.embed_dim});
    e.pos_embed = normal({b.num_patches() + 1, b.embed_dim});
    return e;
  }

  HeadParams head(std::size_t c, std::size_t classes) { return {norm(c), linear(c, classes)}; }

 private:
  Rng& rng_;
  double std_;
};

// ---------------------------------------------------------------------------
// Tokenizers

// Channel-planar [3 x S x S] image -> channel-last [S*S x 3] pixel rows.
inline Tensor image_to_pixel_rows(std::span<const double> planar, std::size_t side) {
  std::vector<double> out(side * side * 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < side * side; ++i) out[i * 3 + c] = planar[c * side * side + i];
  return Tensor::from({side * side, 3}, std::move(out));
}

inline std::size_t image_side(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2))
    throw ShapeError("expected a square [3 x S x S] image, got " + shape_str(image.shape()));
  return image.dim(1);
}

// Prepends the CLS row (or the patch mean when `cls_token` is undefined) and
// adds the position embedding to all 1+N rows.
inline TokenSequence add_cls_and_position(const Tensor& patches, const Grid& grid,
                                          const EmbeddingParams& params) {
  const std::size_t c = patches.dim(1);
  if (params.pos_embed.dim(0) != grid.size() + 1 || params.pos_embed.dim(1) != c)
    throw ShapeError("pos_embed " + shape_str(params.pos_embed.shape()) + " does not fit " +
                     std::to_string(grid.size()) + " patches of width " + std::to_string(c));
  Tensor cls = params.cls_token.defined() ? params.cls_token : mean_rows(patches);
  Tensor x = add(concat({cls, patches}, 0), params.pos_embed);
  return TokenSequence::split(x, grid);
}

inline TokenSequence patch_embed_linear(const Tensor& image, const EmbeddingParams& params) {
  const std::size_t side = image_side(image);
  const std::size_t p = params.tokenizer.patch_size;
  if (side % p)
    throw ConfigError("image side " + std::to_string(side) + " not divisible by patch size " +
                      std::to_string(p));
  Tensor pixels = image_to_pixel_rows(image.data(), side);
  Tensor cols = im2col(pixels, {side, side, 3, p, p, 0});
  Tensor tokens = params.tokenizer.linear(cols);
  return add_cls_and_position(tokens, {side / p, side / p}, params);
}

inline TokenSequence patch_embed_conv(const Tensor& image, const EmbeddingParams& params) {
  const std::size_t side = image_side(image);
  const auto& layers = params.tokenizer.conv;
  std::size_t stride = 1;
  for (const auto& l : layers) stride *= l.spec.stride;
  if (layers.size() != 3 || stride != params.tokenizer.patch_size)
    throw ConfigError("conv tokenizer strides multiply to " + std::to_string(stride) +
                      ", expected patch size " + std::to_string(params.tokenizer.patch_size));
  if (side % stride)
    throw ConfigError("image side " + std::to_string(side) + " not divisible by patch size " +
                      std::to_string(stride));
  Tensor x = image_to_pixel_rows(image.data(), side);
  std::size_t h = side, w = side, ch = 3;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& s = layers[i].spec;
    ConvGeometry geo{h, w, ch, s.kernel, s.stride, s.pad};
    x = layers[i].conv(im2col(x, geo));
    if (i + 1 < layers.size()) x = gelu(x);
    h = geo.out_height();
    w = geo.out_width();
    ch = s.out_channels;
  }
  if (h != side / stride || w != side / stride)
    throw ConfigError("conv tokenizer produced a " + std::to_string(h) + "x" + std::to_string(w) +
                      " grid, expected " + std::to_string(side / stride));
  return add_cls_and_position(x, {h, w}, params);
}

inline TokenSequence patch_embed(const Tensor& image, const EmbeddingParams& params) {
  return params.tokenizer.kind == TokenizerKind::Linear ? patch_embed_linear(image, params)
                                                        : patch_embed_conv(image, params);
}

// ---------------------------------------------------------------------------
// Attention, FFN, encoder block

namespace detail {

// softmax(q k^T / sqrt(d)) v for one head; q is [Tq x d], k/v are [T x d].
inline Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v,
                     std::vector<Tensor>* maps) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor a = softmax(matmul(scale(q, inv), transpose(k)), 1);
  tally_attention(a.numel());
  if (maps) maps->push_back(a);
  return matmul(a, v);
}

inline Tensor head_columns(const Tensor& x, std::size_t head, std::size_t d) {
  return slice(x, 1, head * d, (head + 1) * d);
}

}  // namespace detail

// Multi-head self-attention over [T x C]. When `maps` is given, each head's
// attention matrix is appended to it.
inline Tensor msa(const Tensor& x, const AttentionParams& p, std::vector<Tensor>* maps = nullptr) {
  const std::size_t c = x.dim(1);
  if (p.heads == 0 || c % p.heads)
    throw ShapeError("msa: width " + std::to_string(c) + " not divisible by " +
                     std::to_string(p.heads) + " heads");
  if (p.wq.dim(0) != c)
    throw ShapeError("msa: input " + shape_str(x.shape()) + " vs wq " + shape_str(p.wq.shape()));
  const std::size_t d = c / p.heads;
  Tensor q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < p.heads; ++h)
    heads.push_back(detail::attend(detail::head_columns(q, h, d), detail::head_columns(k, h, d),
                                   detail::head_columns(v, h, d), maps));
  return p.proj(p.heads == 1 ? heads[0] : concat(heads, 1));
}

inline Tensor ffn(const Tensor& x, const FfnParams& p) { return p.fc2(gelu(p.fc1(x))); }

// Stochastic depth: in training mode each residual branch is dropped for
// the whole sample with probability p and rescaled by 1/(1-p) when kept.
struct DropPath {
  double p = 0.0;
  bool training = false;
  Rng* rng = nullptr;

  void check() const {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("drop path probability must lie in [0, 1)");
    if (training && p > 0.0 && rng == nullptr)
      throw ContractError("training-mode drop path needs a random generator");
  }

  template <class Branch>
  Tensor residual(const Tensor& x, Branch&& branch) const {
    if (training && p > 0.0) {
      if (rng->uniform() < p) return x;
      return add(x, scale(branch(), 1.0 / (1.0 - p)));
    }
    return add(x, branch());
  }
};

// x + MSA(LN(x)), then y + FFN(LN(y)).
inline Tensor encoder_block(const Tensor& x, const EncoderParams& p, const DropPath& drop = {}) {
  drop.check();
  Tensor y = drop.residual(x, [&] { return msa(p.norm1(x), p.attn); });
  return drop.residual(y, [&] { return ffn(p.norm2(y), p.ffn); });
}

inline Tensor classify(const Tensor& cls, const HeadParams& p) { return p.fc(p.norm(cls)); }

// ---------------------------------------------------------------------------
// Position-embedding resize

// Keeps row 0, bicubically resamples the patch rows from `old_grid` to
// `new_grid` per channel. Returns a fresh leaf.
inline Tensor resize_pos_embed(const Tensor& pos, const Grid& old_grid, const Grid& new_grid) {
  if (pos.rank() != 2 || pos.dim(0) != old_grid.size() + 1)
    throw ShapeError("resize_pos_embed: " + shape_str(pos.shape()) + " does not hold 1+" +
                     std::to_string(old_grid.rows) + "x" + std::to_string(old_grid.cols) +
                     " rows");
  if (new_grid.size() == 0) throw ShapeError("resize_pos_embed: empty target grid");
  if (old_grid == new_grid) return pos.clone(true);
  const std::size_t c = pos.dim(1);
  const auto mix = interp::grid_mix(old_grid, new_grid, true);
  const auto src = pos.data();
  std::vector<double> out((new_grid.size() + 1) * c, 0.0);
  std::copy_n(src.begin(), c, out.begin());
  for (std::size_t i = 0; i < mix.rows.size(); ++i)
    for (const auto& [j, w] : mix.rows[i])
      for (std::size_t ch = 0; ch < c; ++ch) out[(i + 1) * c + ch] += w * src[(j + 1) * c + ch];
  return Tensor::from({new_grid.size() + 1, c}, std::move(out), true);
}

// ---------------------------------------------------------------------------
// Plain ViT: one branch, `depth` blocks, one head.

struct VitParams {
  EmbeddingParams embed;
  std::vector<EncoderParams> blocks;
  HeadParams head;

  void visit(const ParamVisitor& f) {
    embed.visit("embed", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("blocks." + std::to_string(i), f);
    head.visit("head", f);
  }
};

inline VitParams build_vit(const BranchConfig& b, std::size_t depth, std::size_t num_classes,
                           std::uint64_t seed, double init_std = 0.02) {
  Rng rng(seed);
  Initializer init(rng, init_std);
  VitParams v;
  v.embed = init.embedding(b, true);
  for (std::size_t i = 0; i < depth; ++i) v.blocks.push_back(init.encoder(b.embed_dim, b.heads, b.ffn_ratio));
  v.head = init.head(b.embed_dim, num_classes);
  return v;
}

inline Tensor vit_forward(const VitParams& v, const Tensor& image, const DropPath& drop = {}) {
  Tensor x;
  {
    CostRecorder::Scope scope("embed");
    x = patch_embed(image, v.embed).joined();
  }
  {
    CostRecorder::Scope scope("blocks");
    for (const auto& b : v.blocks) x = encoder_block(x, b, drop);
  }
  CostRecorder::Scope scope("head");
  return classify(slice(x, 0, 0, 1), v.head);
}

}  // namespace crossvit
