#pragma once

// Two-branch token fusion: all-attention, class-token, pairwise and
// cross-attention schemes. Branch widths are aligned by projection f and
// back-projection g, each a single linear layer or the identity when the
// widths already agree.

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <variant>

#include "crossvit/config.hpp"
#include "crossvit/interp.hpp"
#include "crossvit/vit.hpp"

namespace crossvit {

struct Projection {
  std::optional<LinearParams> map;  // nullopt = identity

  Tensor operator()(const Tensor& x) const { return map ? (*map)(x) : x; }
  bool identity() const { return !map; }
  void visit(const std::string& prefix, const ParamVisitor& f) {
    if (map) map->visit(prefix, f);
  }
};

struct ProjectionPair {
  Projection f;  // own width -> target width
  Projection g;  // target width -> own width

  void visit(const std::string& prefix, const ParamVisitor& v) {
    f.visit(prefix + ".f", v);
    g.visit(prefix + ".g", v);
  }
};

// Both branches projected into one shared width.
struct SharedProjection {
  std::size_t width = 0;
  ProjectionPair large, small;

  void visit(const std::string& prefix, const ParamVisitor& v) {
    large.visit(prefix + ".large", v);
    small.visit(prefix + ".small", v);
  }
};

// One direction of cross-attention: this branch's CLS queries the other
// branch's patch tokens in the other branch's width. There is no FFN.
struct CrossAttnParams {
  ProjectionPair proj;
  NormParams norm;
  AttentionParams attn;

  void visit(const std::string& prefix, const ParamVisitor& v) {
    proj.visit(prefix + ".proj", v);
    norm.visit(prefix + ".norm", v);
    attn.visit(prefix + ".attn", v);
  }
};

struct AllAttentionFusion {
  SharedProjection proj;
  NormParams norm;
  AttentionParams attn;
};
struct ClassTokenFusion {
  SharedProjection proj;
};
struct PairwiseFusion {
  SharedProjection proj;
};
struct CrossAttentionFusion {
  CrossAttnParams large;  // large-branch CLS attends to small-branch patches
  CrossAttnParams small;
};

using FusionParams = std::variant<std::monostate, AllAttentionFusion, ClassTokenFusion,
                                  PairwiseFusion, CrossAttentionFusion>;

inline void visit_fusion(FusionParams& p, const std::string& prefix, const ParamVisitor& f) {
  std::visit(
      [&](auto& fp) {
        using T = std::decay_t<decltype(fp)>;
        if constexpr (std::is_same_v<T, AllAttentionFusion>) {
          fp.proj.visit(prefix + ".proj", f);
          fp.norm.visit(prefix + ".norm", f);
          fp.attn.visit(prefix + ".attn", f);
        } else if constexpr (std::is_same_v<T, ClassTokenFusion> ||
                             std::is_same_v<T, PairwiseFusion>) {
          fp.proj.visit(prefix + ".proj", f);
        } else if constexpr (std::is_same_v<T, CrossAttentionFusion>) {
          fp.large.visit(prefix + ".large", f);
          fp.small.visit(prefix + ".small", f);
        }
      },
      p);
}

// ---------------------------------------------------------------------------
// Initialization

// Shared width for all-attention, class-token and pairwise fusion is the
// larger of the two branch widths.
inline std::size_t shared_fusion_width(const ModelConfig& c) {
  return std::max(c.large.embed_dim, c.small.embed_dim);
}
inline std::size_t shared_fusion_heads(const ModelConfig& c) {
  return c.large.embed_dim >= c.small.embed_dim ? c.large.heads : c.small.heads;
}

inline ProjectionPair make_projection(Initializer& init, std::size_t own, std::size_t target) {
  ProjectionPair p;
  if (own != target) {
    p.f.map = init.linear(own, target);
    p.g.map = init.linear(target, own);
  }
  return p;
}

inline FusionParams make_fusion(const ModelConfig& c, Initializer& init) {
  const std::size_t cl = c.large.embed_dim, cs = c.small.embed_dim;
  auto shared = [&] {
    SharedProjection s;
    s.width = shared_fusion_width(c);
    s.large = make_projection(init, cl, s.width);
    s.small = make_projection(init, cs, s.width);
    return s;
  };
  switch (c.fusion) {
    case FusionScheme::None: return std::monostate{};
    case FusionScheme::AllAttention: {
      AllAttentionFusion p;
      p.proj = shared();
      p.norm = Initializer::norm(p.proj.width);
      p.attn = init.attention(p.proj.width, shared_fusion_heads(c));
      return p;
    }
    case FusionScheme::ClassToken: return ClassTokenFusion{shared()};
    case FusionScheme::Pairwise: return PairwiseFusion{shared()};
    case FusionScheme::CrossAttention: {
      CrossAttentionFusion p;
      p.large.proj = make_projection(init, cl, cs);
      p.large.norm = Initializer::norm(cs);
      p.large.attn = init.attention(cs, c.small.heads);
      p.small.proj = make_projection(init, cs, cl);
      p.small.norm = Initializer::norm(cl);
      p.small.attn = init.attention(cl, c.large.heads);
      return p;
    }
  }
  return std::monostate{};
}

// ---------------------------------------------------------------------------
// Operations

using FusedPair = std::pair<TokenSequence, TokenSequence>;

// Mean of the patch rows; stands in for the CLS token in the no-CLS variant.
inline Tensor cls_surrogate(const TokenSequence& x) { return mean_rows(x.patch); }

inline FusedPair fuse_all_attention(const TokenSequence& xl, const TokenSequence& xs,
                                    const AllAttentionFusion& p,
                                    std::vector<Tensor>* maps = nullptr) {
  const std::size_t rows_l = xl.num_patches() + 1;
  Tensor y = concat({p.proj.large.f(xl.joined()), p.proj.small.f(xs.joined())}, 0);
  Tensor o = add(y, msa(p.norm(y), p.attn, maps));
  Tensor zl = p.proj.large.g(slice(o, 0, 0, rows_l));
  Tensor zs = p.proj.small.g(slice(o, 0, rows_l, o.dim(0)));
  return {TokenSequence::split(zl, xl.grid), TokenSequence::split(zs, xs.grid)};
}

inline FusedPair fuse_class_token(const TokenSequence& xl, const TokenSequence& xs,
                                  const ClassTokenFusion& p) {
  Tensor s = add(p.proj.large.f(xl.cls), p.proj.small.f(xs.cls));
  return {TokenSequence{p.proj.large.g(s), xl.patch, xl.grid},
          TokenSequence{p.proj.small.g(s), xs.patch, xs.grid}};
}

inline void check_pairwise_grids(const Grid& a, const Grid& b) {
  if (a.rows * b.cols != a.cols * b.rows)
    throw ShapeError("pairwise fusion: grids " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " and " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + " differ in aspect ratio");
}

inline FusedPair fuse_pairwise(const TokenSequence& xl, const TokenSequence& xs,
                               const PairwiseFusion& p) {
  check_pairwise_grids(xl.grid, xs.grid);
  const auto& pl = p.proj.large;
  const auto& ps = p.proj.small;
  Tensor cls = add(pl.f(xl.cls), ps.f(xs.cls));
  Tensor patch_l =
      add(pl.f(xl.patch), ps.f(interp::resize_tokens_bilinear(xs.patch, xs.grid, xl.grid)));
  Tensor patch_s =
      add(ps.f(xs.patch), pl.f(interp::resize_tokens_bilinear(xl.patch, xl.grid, xs.grid)));
  return {TokenSequence{pl.g(cls), pl.g(patch_l), xl.grid},
          TokenSequence{ps.g(cls), ps.g(patch_s), xs.grid}};
}

// The CLS token of one branch, projected into the other branch's width, is
// the only query against [f(cls) || other patches]:
//   y = f(cls) + MCA(LN([f(cls) || patches])),  result g(y).
// `other_patch` may be undefined (no patches: the CLS attends to itself).
inline Tensor cross_attention(const Tensor& cls, const Tensor& other_patch,
                              const CrossAttnParams& p, std::vector<Tensor>* maps = nullptr) {
  const Tensor query_token = p.proj.f(cls);
  const std::size_t c = query_token.dim(1);
  if (other_patch.defined() && other_patch.dim(1) != c)
    throw ShapeError("cross_attention: projected CLS " + shape_str(query_token.shape()) +
                     " vs patches " + shape_str(other_patch.shape()));
  if (p.attn.heads == 0 || c % p.attn.heads || p.attn.wq.dim(0) != c)
    throw ShapeError("cross_attention: attention weights do not fit width " + std::to_string(c));
  const Tensor x = other_patch.defined() ? concat({query_token, other_patch}, 0) : query_token;
  const Tensor xn = p.norm(x);
  const std::size_t d = c / p.attn.heads;
  const Tensor q = matmul(slice(xn, 0, 0, 1), p.attn.wq);
  const Tensor k = matmul(xn, p.attn.wk);
  const Tensor v = matmul(xn, p.attn.wv);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < p.attn.heads; ++h)
    heads.push_back(detail::attend(detail::head_columns(q, h, d), detail::head_columns(k, h, d),
                                   detail::head_columns(v, h, d), maps));
  const Tensor mca = p.attn.proj(p.attn.heads == 1 ? heads[0] : concat(heads, 1));
  return p.proj.g(add(query_token, mca));
}

inline FusedPair fuse_cross_attention(const TokenSequence& xl, const TokenSequence& xs,
                                      const CrossAttentionFusion& p,
                                      std::vector<Tensor>* maps = nullptr) {
  return {TokenSequence{cross_attention(xl.cls, xs.patch, p.large, maps), xl.patch, xl.grid},
          TokenSequence{cross_attention(xs.cls, xl.patch, p.small, maps), xs.patch, xs.grid}};
}

// Dispatches on the configured scheme. With `no_cls`, each branch's CLS
// input is replaced by the mean of its patch tokens.
inline FusedPair fuse(const TokenSequence& xl, const TokenSequence& xs, const FusionParams& params,
                      bool no_cls = false, std::vector<Tensor>* maps = nullptr) {
  TokenSequence l = xl, s = xs;
  if (no_cls && !std::holds_alternative<std::monostate>(params)) {
    l.cls = cls_surrogate(xl);
    s.cls = cls_surrogate(xs);
  }
  return std::visit(
      [&](const auto& fp) -> FusedPair {
        using T = std::decay_t<decltype(fp)>;
        if constexpr (std::is_same_v<T, std::monostate>) return {xl, xs};
        else if constexpr (std::is_same_v<T, AllAttentionFusion>) return fuse_all_attention(l, s, fp, maps);
        else if constexpr (std::is_same_v<T, ClassTokenFusion>) return fuse_class_token(l, s, fp);
        else if constexpr (std::is_same_v<T, PairwiseFusion>) return fuse_pairwise(l, s, fp);
        else return fuse_cross_attention(l, s, fp, maps);
      },
      params);
}

}  // namespace crossvit
