#pragma once

// Closed-form parameter, FLOP and attention-map accounting.
//
// One multiply-accumulate counts as one FLOP. Elementwise work (bias and
// residual adds, scaling, softmax, layer norm, GELU, interpolation) is
// tallied separately, one unit per output element. Image resizing is
// preprocessing and is not counted.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "crossvit/config.hpp"
#include "crossvit/fusion.hpp"
#include "crossvit/model.hpp"

namespace crossvit {

struct CostRow {
  std::string component;
  std::uint64_t param_count = 0;
  std::uint64_t flops = 0;
  std::uint64_t attn_entries = 0;
  std::uint64_t elementwise_ops = 0;

  CostRow& operator+=(const CostRow& o) {
    param_count += o.param_count;
    flops += o.flops;
    attn_entries += o.attn_entries;
    elementwise_ops += o.elementwise_ops;
    return *this;
  }
};

struct CostReport {
  std::vector<CostRow> rows;

  CostRow total() const {
    CostRow t{"total"};
    for (const auto& r : rows) t += r;
    return t;
  }

  const CostRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.component == name) return r;
    throw std::out_of_range("no cost row '" + name + "'");
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "component,param_count,flops,attn_entries\n";
    auto line = [&](const CostRow& r) {
      os << r.component << ',' << r.param_count << ',' << r.flops << ',' << r.attn_entries << '\n';
    };
    for (const auto& r : rows) line(r);
    line(total());
    return os.str();
  }
};

namespace cost {

using u64 = std::uint64_t;

inline u64 linear_params(u64 in, u64 out) { return in * out + out; }
inline u64 norm_params(u64 c) { return 2 * c; }
inline u64 attention_params(u64 c) { return 3 * c * c + linear_params(c, c); }
inline u64 encoder_params(u64 c, u64 ratio) {
  return 2 * norm_params(c) + attention_params(c) + linear_params(c, ratio * c) +
         linear_params(ratio * c, c);
}
inline u64 projection_pair_params(u64 own, u64 target) {
  return own == target ? 0 : linear_params(own, target) + linear_params(target, own);
}
inline u64 conv_stem_params(const BranchConfig& b) {
  u64 n = 0;
  for (const auto& l : b.conv_layers())
    n += static_cast<u64>(l.kernel) * l.kernel * l.in_channels * l.out_channels + l.out_channels;
  return n;
}

inline u64 embedding_params(const BranchConfig& b, bool no_cls) {
  const u64 c = b.embed_dim;
  const u64 tokenizer = b.tokenizer == TokenizerKind::Linear
                            ? linear_params(static_cast<u64>(b.patch_size) * b.patch_size * 3, c)
                            : conv_stem_params(b);
  return tokenizer + (no_cls ? 0 : c) + (b.num_patches() + 1) * c;
}

inline u64 head_params(u64 c, u64 classes) { return norm_params(c) + linear_params(c, classes); }

inline u64 fusion_pass_params(const ModelConfig& m) {
  const u64 cl = m.large.embed_dim, cs = m.small.embed_dim, d = shared_fusion_width(m);
  switch (m.fusion) {
    case FusionScheme::None: return 0;
    case FusionScheme::AllAttention:
      return projection_pair_params(cl, d) + projection_pair_params(cs, d) + norm_params(d) +
             attention_params(d);
    case FusionScheme::ClassToken:
    case FusionScheme::Pairwise: return projection_pair_params(cl, d) + projection_pair_params(cs, d);
    case FusionScheme::CrossAttention:
      return projection_pair_params(cl, cs) + norm_params(cs) + attention_params(cs) +
             projection_pair_params(cs, cl) + norm_params(cl) + attention_params(cl);
  }
  return 0;
}

// Work of one self-attention block over t tokens of width c (LN included).
struct Work {
  u64 macs = 0, elementwise = 0, attn = 0;
  Work& operator+=(const Work& o) {
    macs += o.macs;
    elementwise += o.elementwise;
    attn += o.attn;
    return *this;
  }
};

// Dense layer over `rows` rows, with bias.
inline Work dense(u64 rows, u64 in, u64 out) { return {rows * in * out, rows * out, 0}; }
inline Work maybe_dense(u64 rows, u64 in, u64 out) { return in == out ? Work{} : dense(rows, in, out); }

// Multi-head attention interior: q/k/v, scores, weighting, output projection.
// `queries` rows attend over `t` rows.
inline Work attention(u64 queries, u64 t, u64 c, u64 heads) {
  Work w;
  w.macs = queries * c * c + 2 * t * c * c  // q, k, v
           + 2 * queries * t * c            // scores and weighted sum, all heads
           + queries * c * c;               // output projection
  w.elementwise = queries * c               // query scaling
                  + heads * queries * t     // softmax
                  + queries * c;            // output bias
  w.attn = heads * queries * t;
  return w;
}

inline Work encoder_block(u64 t, u64 c, u64 heads, u64 ratio) {
  const u64 h = ratio * c;
  Work w = attention(t, t, c, heads);
  w.elementwise += 2 * t * c  // two layer norms
                   + 2 * t * c;  // two residual adds
  w += dense(t, c, h);
  w.elementwise += t * h;  // GELU
  w += dense(t, h, c);
  return w;
}

inline Work embedding(const BranchConfig& b, u64 side, bool no_cls) {
  const u64 c = b.embed_dim, p = b.patch_size;
  const u64 n = (side / p) * (side / p);
  Work w;
  if (b.tokenizer == TokenizerKind::Linear) {
    w += dense(n, p * p * 3, c);
  } else {
    const auto layers = b.conv_layers();
    u64 s = side;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      s = (s + 2 * l.pad - l.kernel) / l.stride + 1;
      w += dense(s * s, static_cast<u64>(l.kernel) * l.kernel * l.in_channels, l.out_channels);
      if (i + 1 < layers.size()) w.elementwise += s * s * l.out_channels;  // GELU
    }
  }
  if (no_cls) w.elementwise += n * c;  // patch mean as CLS
  w.elementwise += (n + 1) * c;       // position embedding
  return w;
}

inline Work head(u64 c, u64 classes) {
  Work w{0, c, 0};  // layer norm
  w += dense(1, c, classes);
  return w;
}

inline Work cross_attention_direction(u64 own, u64 other, u64 other_patches, u64 other_heads) {
  const u64 t = other_patches + 1;
  Work w = maybe_dense(1, own, other);  // f
  w.elementwise += t * other;           // layer norm
  w += attention(1, t, other, other_heads);
  w.elementwise += other;               // residual
  w += maybe_dense(1, other, own);      // g
  return w;
}

inline Work fusion_pass(const ModelConfig& m, u64 nl, u64 ns) {
  const u64 cl = m.large.embed_dim, cs = m.small.embed_dim;
  const u64 d = shared_fusion_width(m);
  Work w;
  if (m.no_cls && m.fusion != FusionScheme::None) w.elementwise += nl * cl + ns * cs;
  switch (m.fusion) {
    case FusionScheme::None: break;
    case FusionScheme::AllAttention: {
      const u64 tl = nl + 1, ts = ns + 1, t = tl + ts;
      w += maybe_dense(tl, cl, d);
      w += maybe_dense(ts, cs, d);
      w.elementwise += t * d;  // layer norm
      w += attention(t, t, d, shared_fusion_heads(m));
      w.elementwise += t * d;  // residual
      w += maybe_dense(tl, d, cl);
      w += maybe_dense(ts, d, cs);
      break;
    }
    case FusionScheme::ClassToken:
    case FusionScheme::Pairwise: {
      w += maybe_dense(1, cl, d);
      w += maybe_dense(1, cs, d);
      w.elementwise += d;  // CLS sum
      w += maybe_dense(1, d, cl);
      w += maybe_dense(1, d, cs);
      if (m.fusion == FusionScheme::ClassToken) break;
      const bool same_grid = m.large.grid() == m.small.grid();
      // Large-branch patches: own projection + resized small patches.
      w += maybe_dense(nl, cl, d);
      if (!same_grid) w.elementwise += nl * cs;
      w += maybe_dense(nl, cs, d);
      w.elementwise += nl * d;
      w += maybe_dense(nl, d, cl);
      // Small-branch patches.
      w += maybe_dense(ns, cs, d);
      if (!same_grid) w.elementwise += ns * cl;
      w += maybe_dense(ns, cl, d);
      w.elementwise += ns * d;
      w += maybe_dense(ns, d, cs);
      break;
    }
    case FusionScheme::CrossAttention:
      w += cross_attention_direction(cl, cs, ns, m.small.heads);
      w += cross_attention_direction(cs, cl, nl, m.large.heads);
      break;
  }
  return w;
}

inline CostRow row(std::string name, u64 params, const Work& w) {
  return {std::move(name), params, w.macs, w.attn, w.elementwise};
}

}  // namespace cost

inline std::uint64_t count_params(const ModelConfig& m) {
  m.validate();
  using namespace cost;
  const u64 k = m.encoders;
  return embedding_params(m.large, m.no_cls) + k * m.large.blocks * encoder_params(m.large.embed_dim, m.large.ffn_ratio) +
         embedding_params(m.small, m.no_cls) + k * m.small.blocks * encoder_params(m.small.embed_dim, m.small.ffn_ratio) +
         k * m.fusion_passes() * fusion_pass_params(m) + head_params(m.large.embed_dim, m.num_classes) +
         head_params(m.small.embed_dim, m.num_classes);
}

// Per-component costs of one forward pass at base side `input_side`.
// Rows: embed.large, embed.small, blocks.large, blocks.small, fusion,
// head.large, head.small, ensemble.
inline CostReport count_flops(const ModelConfig& m, std::size_t input_side) {
  m.validate();
  using namespace cost;
  if (input_side == 0) throw ConfigError("input side must be positive");
  ModelConfig at = m;
  const auto [side_l, side_s] = branch_sides_for(m, input_side);
  at.large.input_side = side_l;
  at.small.input_side = side_s;
  at.base_input_side = input_side;
  at.validate();
  const u64 nl = at.large.num_patches(), ns = at.small.num_patches();
  const u64 k = m.encoders, classes = m.num_classes;

  auto blocks = [&](const BranchConfig& b, u64 n) {
    Work w;
    const Work one = cost::encoder_block(n + 1, b.embed_dim, b.heads, b.ffn_ratio);
    for (u64 i = 0; i < k * b.blocks; ++i) w += one;
    return w;
  };
  Work fusion;
  const Work pass = fusion_pass(at, nl, ns);
  for (u64 i = 0; i < k * m.fusion_passes(); ++i) fusion += pass;

  CostReport r;
  r.rows.push_back(row("embed.large", embedding_params(at.large, m.no_cls), embedding(at.large, side_l, m.no_cls)));
  r.rows.push_back(row("embed.small", embedding_params(at.small, m.no_cls), embedding(at.small, side_s, m.no_cls)));
  r.rows.push_back(row("blocks.large", k * m.large.blocks * encoder_params(m.large.embed_dim, m.large.ffn_ratio),
                       blocks(m.large, nl)));
  r.rows.push_back(row("blocks.small", k * m.small.blocks * encoder_params(m.small.embed_dim, m.small.ffn_ratio),
                       blocks(m.small, ns)));
  r.rows.push_back(row("fusion", k * m.fusion_passes() * fusion_pass_params(at), fusion));
  r.rows.push_back(row("head.large", head_params(m.large.embed_dim, classes), head(m.large.embed_dim, classes)));
  r.rows.push_back(row("head.small", head_params(m.small.embed_dim, classes), head(m.small.embed_dim, classes)));
  r.rows.push_back(row("ensemble", 0, Work{0, 2 * classes, 0}));
  return r;
}

// Single-branch ViT of `depth` blocks. Rows: embed, blocks, head.
inline CostReport count_vit_flops(const BranchConfig& b, std::size_t depth, std::size_t num_classes,
                                  std::size_t input_side) {
  using namespace cost;
  if (input_side == 0 || input_side % b.patch_size)
    throw ConfigError("input side " + std::to_string(input_side) + " not divisible by patch size " +
                      std::to_string(b.patch_size));
  BranchConfig at = b;
  at.input_side = input_side;
  const u64 n = at.num_patches();
  Work blocks;
  const Work one = cost::encoder_block(n + 1, b.embed_dim, b.heads, b.ffn_ratio);
  for (std::size_t i = 0; i < depth; ++i) blocks += one;
  CostReport r;
  r.rows.push_back(row("embed", embedding_params(at, false), embedding(at, input_side, false)));
  r.rows.push_back(row("blocks", depth * encoder_params(b.embed_dim, b.ffn_ratio), blocks));
  r.rows.push_back(row("head", head_params(b.embed_dim, num_classes), head(b.embed_dim, num_classes)));
  return r;
}

// Attention-map entries generated by one fusion pass.
inline std::uint64_t cross_attention_entries(std::uint64_t n_large, std::uint64_t n_small,
                                             std::uint64_t heads_large, std::uint64_t heads_small) {
  // Large CLS queries 1 + N_s keys with the small branch's heads, and vice versa.
  return heads_small * (1 + n_small) + heads_large * (1 + n_large);
}
inline std::uint64_t all_attention_entries(std::uint64_t n_large, std::uint64_t n_small,
                                           std::uint64_t heads) {
  const std::uint64_t t = 2 + n_large + n_small;
  return heads * t * t;
}

struct AttentionCost {
  std::uint64_t n_large = 0, n_small = 0;
  std::uint64_t cross_attention = 0;  // per fusion pass
  std::uint64_t all_attention = 0;    // per fusion pass
  double ratio = 0.0;                 // all / cross
};

inline AttentionCost attn_cost(const ModelConfig& m) {
  AttentionCost a;
  a.n_large = m.large.num_patches();
  a.n_small = m.small.num_patches();
  a.cross_attention = cross_attention_entries(a.n_large, a.n_small, m.large.heads, m.small.heads);
  a.all_attention = all_attention_entries(a.n_large, a.n_small, shared_fusion_heads(m));
  a.ratio = static_cast<double>(a.all_attention) / static_cast<double>(a.cross_attention);
  return a;
}

}  // namespace crossvit
