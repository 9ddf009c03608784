#include <gtest/gtest.h>

#include <chrono>

#include "test_util.hpp"

using namespace crossvit;

namespace {

TokenSequence random_sequence(const Grid& grid, std::size_t width, Rng& rng) {
  return TokenSequence{testutil::random({1, width}, rng), testutil::random({grid.size(), width}, rng),
                       grid};
}

ModelConfig fusion_config(FusionScheme f, std::size_t cl, std::size_t cs, std::size_t heads = 2) {
  ModelConfig c = presets::micro();
  c.large.embed_dim = cl;
  c.small.embed_dim = cs;
  c.large.heads = c.small.heads = heads;
  c.fusion = f;
  return c;
}

void zero(Tensor& t) {
  for (double& x : t.mutable_data()) x = 0.0;
}

void perturb_norm(NormParams& n, Rng& rng) {
  for (double& x : n.gamma.mutable_data()) x += 0.2 * rng.normal();
  for (double& x : n.beta.mutable_data()) x += 0.2 * rng.normal();
}

}  // namespace

TEST(ClsSurrogate, IsPatchMean) {
  TokenSequence x{Tensor::zeros({1, 2}), Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}), {1, 3}};
  const Tensor m = cls_surrogate(x);
  EXPECT_EQ(m.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(m[0], 3.0);
  EXPECT_DOUBLE_EQ(m[1], 4.0);
}

// ---------------------------------------------------------------------------
// All-attention

TEST(AllAttention, ZeroAttentionGivesRoundTripProjection) {
  Rng rng(1);
  const ModelConfig c = fusion_config(FusionScheme::AllAttention, 8, 4);
  Initializer init(rng, 0.3);
  auto p = std::get<AllAttentionFusion>(make_fusion(c, init));
  EXPECT_EQ(p.proj.width, 8u);
  EXPECT_TRUE(p.proj.large.f.identity());
  EXPECT_FALSE(p.proj.small.f.identity());
  zero(p.attn.proj.weight);
  zero(p.attn.proj.bias);
  const TokenSequence xl = random_sequence({2, 2}, 8, rng), xs = random_sequence({4, 4}, 4, rng);
  const auto [zl, zs] = fuse_all_attention(xl, xs, p);
  EXPECT_TRUE(testutil::bit_equal(zl.joined(), xl.joined()));
  const Tensor expected = p.proj.small.g(p.proj.small.f(xs.joined()));
  EXPECT_LT(testutil::max_abs_diff(zs.joined().data(), expected.data()), 1e-14);
}

TEST(AllAttention, AttentionEntriesAreQuadraticInTotalTokens) {
  Rng rng(2);
  const ModelConfig c = fusion_config(FusionScheme::AllAttention, 8, 8);
  Initializer init(rng, 0.02);
  const auto p = std::get<AllAttentionFusion>(make_fusion(c, init));
  const TokenSequence xl = random_sequence({14, 14}, 8, rng), xs = random_sequence({20, 20}, 8, rng);
  CostRecorder rec;
  std::vector<Tensor> maps;
  fuse_all_attention(xl, xs, p, &maps);
  ASSERT_EQ(maps.size(), 2u);
  EXPECT_EQ(maps[0].shape(), (Shape{598, 598}));
  EXPECT_EQ(rec.total().attn_entries, 2u * 598u * 598u);
}

// ---------------------------------------------------------------------------
// Class-token and pairwise

TEST(ClassToken, IdentityProjectionsSumClsTokens) {
  Rng rng(3);
  Initializer init(rng, 0.02);
  const auto p = std::get<ClassTokenFusion>(make_fusion(fusion_config(FusionScheme::ClassToken, 6, 6), init));
  const TokenSequence xl = random_sequence({2, 2}, 6, rng), xs = random_sequence({3, 3}, 6, rng);
  const auto [zl, zs] = fuse_class_token(xl, xs, p);
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(zl.cls[c], xl.cls[c] + xs.cls[c]);
    EXPECT_EQ(zs.cls[c], xl.cls[c] + xs.cls[c]);
  }
  EXPECT_TRUE(testutil::bit_equal(zl.patch, xl.patch));
  EXPECT_TRUE(testutil::bit_equal(zs.patch, xs.patch));
}

TEST(ClassToken, ProjectedWidths) {
  Rng rng(4);
  Initializer init(rng, 0.3);
  const auto p = std::get<ClassTokenFusion>(make_fusion(fusion_config(FusionScheme::ClassToken, 8, 4), init));
  const TokenSequence xl = random_sequence({2, 2}, 8, rng), xs = random_sequence({4, 4}, 4, rng);
  const auto [zl, zs] = fuse_class_token(xl, xs, p);
  const Tensor s = add(xl.cls, p.proj.small.f(xs.cls));
  EXPECT_LT(testutil::max_abs_diff(zl.cls.data(), s.data()), 1e-15);
  EXPECT_LT(testutil::max_abs_diff(zs.cls.data(), p.proj.small.g(s).data()), 1e-15);
}

TEST(Pairwise, IdentityProjectionsAddResampledPatches) {
  Rng rng(5);
  Initializer init(rng, 0.02);
  const auto p = std::get<PairwiseFusion>(make_fusion(fusion_config(FusionScheme::Pairwise, 4, 4), init));
  const TokenSequence xl = random_sequence({2, 2}, 4, rng), xs = random_sequence({4, 4}, 4, rng);
  const auto [zl, zs] = fuse_pairwise(xl, xs, p);
  // 4x4 -> 2x2 half-pixel bilinear averages each 2x2 block's inner corner
  // samples: output (y, x) reads source (2y + 0.5, 2x + 0.5).
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 4; ++c) {
        double avg = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) avg += 0.25 * xs.patch.at((2 * y + dy) * 4 + 2 * x + dx, c);
        EXPECT_NEAR(zl.patch.at(y * 2 + x, c), xl.patch.at(y * 2 + x, c) + avg, 1e-14);
      }
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(zs.cls[c], xl.cls[c] + xs.cls[c]);
  EXPECT_EQ(zs.patch.shape(), (Shape{16, 4}));
}

TEST(Pairwise, ConstantFieldsAdd) {
  Rng rng(6);
  Initializer init(rng, 0.02);
  const auto p = std::get<PairwiseFusion>(make_fusion(fusion_config(FusionScheme::Pairwise, 4, 4), init));
  const TokenSequence xl{Tensor::zeros({1, 4}), Tensor::full({9, 4}, 0.5), {3, 3}};
  const TokenSequence xs{Tensor::zeros({1, 4}), Tensor::full({25, 4}, -2.0), {5, 5}};
  const auto [zl, zs] = fuse_pairwise(xl, xs, p);
  for (double v : zl.patch.data()) EXPECT_NEAR(v, -1.5, 1e-14);
  for (double v : zs.patch.data()) EXPECT_NEAR(v, -1.5, 1e-14);
}

TEST(Pairwise, AspectMismatchIsRejected) {
  Rng rng(7);
  Initializer init(rng, 0.02);
  const auto p = std::get<PairwiseFusion>(make_fusion(fusion_config(FusionScheme::Pairwise, 4, 4), init));
  const TokenSequence xl = random_sequence({2, 3}, 4, rng), xs = random_sequence({4, 4}, 4, rng);
  EXPECT_THROW(fuse_pairwise(xl, xs, p), ShapeError);
}

// ---------------------------------------------------------------------------
// Cross-attention

TEST(CrossAttention, MatchesFullSelfAttentionRowZero) {
  // Row 0 of full multi-head self-attention over [f(cls) || patches] is the
  // single-query cross-attention output.
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t heads = 1 + rng.below(4);
    const std::size_t own = heads * (1 + rng.below(4));
    const std::size_t other = heads * (1 + rng.below(4));
    const std::size_t n = rng.below(12);
    Initializer init(rng, 0.4);
    CrossAttnParams p;
    p.proj = make_projection(init, own, other);
    p.norm = Initializer::norm(other);
    perturb_norm(p.norm, rng);
    p.attn = init.attention(other, heads);
    const Tensor cls = testutil::random({1, own}, rng);
    const Tensor patches = n ? testutil::random({n, other}, rng) : Tensor();
    const Tensor got = cross_attention(cls, patches, p);

    const Tensor fc = p.proj.f(cls);
    const Tensor seq = n ? concat({fc, patches}, 0) : fc;
    const Tensor full = msa(p.norm(seq), p.attn);
    const Tensor expected = p.proj.g(add(fc, slice(full, 0, 0, 1)));
    ASSERT_EQ(got.shape(), (Shape{1, own}));
    EXPECT_LT(testutil::max_abs_diff(got.data(), expected.data()), 1e-9)
        << "trial " << trial << " heads " << heads << " widths " << own << "/" << other << " n " << n;
  }
}

TEST(CrossAttention, EntriesAreLinearInPatches) {
  Rng rng(9);
  Initializer init(rng, 0.02);
  CrossAttnParams p;
  p.proj = make_projection(init, 8, 4);
  p.norm = Initializer::norm(4);
  p.attn = init.attention(4, 2);
  for (std::size_t n : {0u, 1u, 196u, 400u}) {
    CostRecorder rec;
    std::vector<Tensor> maps;
    cross_attention(testutil::random({1, 8}, rng), n ? testutil::random({n, 4}, rng) : Tensor(), p, &maps);
    EXPECT_EQ(rec.total().attn_entries, 2 * (1 + n));
    ASSERT_EQ(maps.size(), 2u);
    EXPECT_EQ(maps[0].shape(), (Shape{1, 1 + n}));
  }
}

TEST(CrossAttention, SingleTokenAttendsToItself) {
  Rng rng(10);
  Initializer init(rng, 0.4);
  CrossAttnParams p;
  p.proj = make_projection(init, 6, 6);
  p.norm = Initializer::norm(6);
  p.attn = init.attention(6, 3);
  const Tensor cls = testutil::random({1, 6}, rng);
  std::vector<Tensor> maps;
  const Tensor got = cross_attention(cls, Tensor(), p, &maps);
  for (const Tensor& a : maps) EXPECT_DOUBLE_EQ(a.item(), 1.0);
  const Tensor expected = add(cls, p.attn.proj(matmul(p.norm(cls), p.attn.wv)));
  EXPECT_LT(testutil::max_abs_diff(got.data(), expected.data()), 1e-14);
}

TEST(CrossAttention, ZeroOutputProjectionRoundTripsCls) {
  Rng rng(11);
  Initializer init(rng, 0.4);
  CrossAttnParams p;
  p.proj = make_projection(init, 8, 4);
  p.norm = Initializer::norm(4);
  p.attn = init.attention(4, 2);
  zero(p.attn.proj.weight);
  zero(p.attn.proj.bias);
  const Tensor cls = testutil::random({1, 8}, rng);
  const Tensor got = cross_attention(cls, testutil::random({5, 4}, rng), p);
  EXPECT_LT(testutil::max_abs_diff(got.data(), p.proj.g(p.proj.f(cls)).data()), 1e-15);
}

TEST(CrossAttention, PatchTokensPassThrough) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cl = 2 * (1 + rng.below(4)), cs = 2 * (1 + rng.below(4));
    Initializer init(rng, 0.3);
    const auto p = std::get<CrossAttentionFusion>(make_fusion(fusion_config(FusionScheme::CrossAttention, cl, cs), init));
    const TokenSequence xl = random_sequence({2, 2}, cl, rng), xs = random_sequence({3, 3}, cs, rng);
    const auto [zl, zs] = fuse_cross_attention(xl, xs, p);
    EXPECT_TRUE(testutil::bit_equal(zl.patch, xl.patch));
    EXPECT_TRUE(testutil::bit_equal(zs.patch, xs.patch));
    EXPECT_EQ(zl.cls.shape(), (Shape{1, cl}));
    EXPECT_EQ(zs.cls.shape(), (Shape{1, cs}));
  }
}

TEST(CrossAttention, HasNoFeedForward) {
  Rng rng(13);
  Initializer init(rng, 0.02);
  FusionParams f = make_fusion(fusion_config(FusionScheme::CrossAttention, 8, 4), init);
  std::size_t count = 0;
  visit_fusion(f, "x", [&](const std::string& name, Tensor& t) {
    EXPECT_EQ(name.find("ffn"), std::string::npos) << name;
    count += t.numel();
  });
  // Per direction: f and g (8<->4), LN and attention in the other width.
  auto direction = [](std::size_t own, std::size_t other) {
    return 2 * own * other + own + other + 2 * other + 4 * other * other + other;
  };
  EXPECT_EQ(count, direction(8, 4) + direction(4, 8));
}

TEST(CrossAttention, WallClockScalesLinearly) {
  // Loose check: 8x the patches should cost well under the 64x a quadratic
  // scheme would.
  Rng rng(14);
  Initializer init(rng, 0.02);
  CrossAttnParams p;
  p.proj = make_projection(init, 64, 64);
  p.norm = Initializer::norm(64);
  p.attn = init.attention(64, 4);
  const Tensor cls = testutil::random({1, 64}, rng, 1.0, false);
  auto time = [&](std::size_t n) {
    const Tensor patches = testutil::random({n, 64}, rng, 1.0, false);
    double best = 1e9;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      cross_attention(cls, patches, p);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double ratio = time(2048) / time(256);
  EXPECT_LT(ratio, 24.0) << "ratio " << ratio;
}

TEST(Fuse, NoClsFeedsPatchMeans) {
  Rng rng(15);
  Initializer init(rng, 0.02);
  const FusionParams f = make_fusion(fusion_config(FusionScheme::ClassToken, 4, 4), init);
  const TokenSequence xl = random_sequence({2, 2}, 4, rng), xs = random_sequence({3, 3}, 4, rng);
  const auto [zl, zs] = fuse(xl, xs, f, true);
  const Tensor expected = add(mean_rows(xl.patch), mean_rows(xs.patch));
  EXPECT_LT(testutil::max_abs_diff(zl.cls.data(), expected.data()), 1e-15);
  EXPECT_LT(testutil::max_abs_diff(zs.cls.data(), expected.data()), 1e-15);
}

TEST(Fuse, NoneIsIdentity) {
  Rng rng(16);
  const TokenSequence xl = random_sequence({2, 2}, 4, rng), xs = random_sequence({3, 3}, 4, rng);
  const auto [zl, zs] = fuse(xl, xs, FusionParams{}, true);
  EXPECT_EQ(zl.cls.handle(), xl.cls.handle());
  EXPECT_EQ(zs.patch.handle(), xs.patch.handle());
}
