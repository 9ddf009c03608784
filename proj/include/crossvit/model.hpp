#pragma once

// Dual-branch multi-scale model: a coarse (large) and a fine (small) branch,
// K multi-scale encoders each running the branches' blocks followed by L
// fusion passes, and one classification head per branch whose logits are
// averaged.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crossvit/config.hpp"
#include "crossvit/fusion.hpp"
#include "crossvit/instrument.hpp"
#include "crossvit/interp.hpp"
#include "crossvit/rng.hpp"
#include "crossvit/vit.hpp"

namespace crossvit {

struct BranchParams {
  EmbeddingParams embed;
  std::vector<EncoderParams> blocks;  // encoders * blocks-per-encoder, in execution order

  void visit(const std::string& prefix, const ParamVisitor& f) {
    embed.visit(prefix + ".embed", f);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
  }
};

using NamedTensor = std::pair<std::string, Tensor>;

// All learnable tensors. Enumeration order (which is also the checkpoint
// layout): large branch (embedding, blocks), small branch (embedding,
// blocks), fusion passes ordered by (encoder, pass), large head, small head.
struct Parameters {
  BranchParams large, small;
  std::vector<FusionParams> fusion;  // encoders * fusion passes
  HeadParams head_large, head_small;

  void visit(const ParamVisitor& f) {
    large.visit("large", f);
    small.visit("small", f);
    for (std::size_t i = 0; i < fusion.size(); ++i) visit_fusion(fusion[i], "fusion." + std::to_string(i), f);
    head_large.visit("head.large", f);
    head_small.visit("head.small", f);
  }

  // Handles alias the stored tensors.
  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    const_cast<Parameters*>(this)->visit(
        [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : named()) n += t.numel();
    return n;
  }

  Parameters clone() const {
    Parameters copy = *this;
    copy.visit([](const std::string&, Tensor& t) { t = t.clone(t.requires_grad()); });
    return copy;
  }

  void zero_grad() {
    visit([](const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

inline Parameters build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Initializer init(rng, config.init_std);
  Parameters p;
  auto branch = [&](const BranchConfig& b) {
    BranchParams out;
    out.embed = init.embedding(b, !config.no_cls);
    for (std::size_t i = 0; i < config.encoders * b.blocks; ++i)
      out.blocks.push_back(init.encoder(b.embed_dim, b.heads, b.ffn_ratio));
    return out;
  };
  p.large = branch(config.large);
  p.small = branch(config.small);
  for (std::size_t i = 0; i < config.encoders * config.fusion_passes(); ++i)
    p.fusion.push_back(make_fusion(config, init));
  p.head_large = init.head(config.large.embed_dim, config.num_classes);
  p.head_small = init.head(config.small.embed_dim, config.num_classes);
  return p;
}

struct Logits {
  Tensor large;     // [1 x classes]
  Tensor small;     // [1 x classes]
  Tensor ensemble;  // mean of the two
};

// Each head is LN + linear on its branch's final CLS; the ensemble is the
// unweighted mean of the two logit vectors.
inline Logits predict_heads(const Parameters& p, const Tensor& cls_large, const Tensor& cls_small) {
  Logits out;
  {
    CostRecorder::Scope scope("head.large");
    out.large = classify(cls_large, p.head_large);
  }
  {
    CostRecorder::Scope scope("head.small");
    out.small = classify(cls_small, p.head_small);
  }
  CostRecorder::Scope scope("ensemble");
  out.ensemble = scale(add(out.large, out.small), 0.5);
  return out;
}

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;  // drop-path stream in training mode
  std::vector<Tensor>* attention_maps = nullptr;
};

struct BranchStates {
  TokenSequence large, small;
};

// Runs tokenization, all encoders and fusion passes; returns the final
// token sequences of both branches.
inline BranchStates encode(const Parameters& p, const ModelConfig& config, const Tensor& image,
                           const ForwardOptions& opts = {}) {
  const std::size_t side = image_side(image);
  if (side != config.base_input_side)
    throw ShapeError("input side " + std::to_string(side) + " does not match base_input_side " +
                     std::to_string(config.base_input_side));
  Rng rng(opts.seed);
  const DropPath drop{config.drop_path, opts.training, &rng};
  drop.check();

  auto embed = [&](const BranchConfig& b, const EmbeddingParams& e, const char* label) {
    Tensor input = image;
    if (b.input_side != side)
      input = Tensor::from({3, b.input_side, b.input_side},
                           interp::resize_image_bilinear(image.data(), 3, side, b.input_side));
    CostRecorder::Scope scope(label);
    return patch_embed(input, e);
  };
  TokenSequence xl = embed(config.large, p.large.embed, "embed.large");
  TokenSequence xs = embed(config.small, p.small.embed, "embed.small");

  auto run_blocks = [&](TokenSequence& x, const std::vector<EncoderParams>& blocks,
                        std::size_t per_encoder, std::size_t k, const char* label) {
    CostRecorder::Scope scope(label);
    Tensor t = x.joined();
    for (std::size_t i = k * per_encoder; i < (k + 1) * per_encoder; ++i)
      t = encoder_block(t, blocks[i], drop);
    x = TokenSequence::split(t, x.grid);
  };

  const std::size_t passes = config.fusion_passes();
  for (std::size_t k = 0; k < config.encoders; ++k) {
    run_blocks(xl, p.large.blocks, config.large.blocks, k, "blocks.large");
    run_blocks(xs, p.small.blocks, config.small.blocks, k, "blocks.small");
    CostRecorder::Scope scope("fusion");
    for (std::size_t l = 0; l < passes; ++l)
      std::tie(xl, xs) = fuse(xl, xs, p.fusion[k * passes + l], config.no_cls, opts.attention_maps);
  }
  return {xl, xs};
}

inline Logits forward(const Parameters& p, const ModelConfig& config, const Tensor& image,
                      const ForwardOptions& opts = {}) {
  const auto states = encode(p, config, image, opts);
  return predict_heads(p, states.large.cls, states.small.cls);
}

// ---------------------------------------------------------------------------
// Resolution adaptation

// Branch input sides for a new base side. A branch fed at the base side
// follows it exactly (and must stay divisible by its patch size); a branch
// with its own side keeps its ratio to the base, rounded to the nearest
// multiple of its patch size.
inline std::pair<std::size_t, std::size_t> branch_sides_for(const ModelConfig& c,
                                                            std::size_t base_side) {
  auto side = [&](const BranchConfig& b, const char* name) -> std::size_t {
    if (base_side == c.base_input_side) return b.input_side;
    if (b.input_side == c.base_input_side) {
      if (base_side % b.patch_size)
        throw ConfigError(std::string(name) + " branch: side " + std::to_string(base_side) +
                          " not divisible by patch size " + std::to_string(b.patch_size));
      return base_side;
    }
    const double scaled = static_cast<double>(b.input_side) * static_cast<double>(base_side) /
                          static_cast<double>(c.base_input_side);
    const auto units = static_cast<std::size_t>(std::llround(scaled / static_cast<double>(b.patch_size)));
    if (units == 0)
      throw ConfigError(std::string(name) + " branch: side " + std::to_string(base_side) +
                        " is smaller than one patch");
    return units * b.patch_size;
  };
  return {side(c.large, "large"), side(c.small, "small")};
}

// Re-targets a model to a new input side: position embeddings are resized
// bicubically, every other tensor is copied unchanged.
inline std::pair<Parameters, ModelConfig> adapt_resolution(const Parameters& p,
                                                           const ModelConfig& config,
                                                           std::size_t new_base_side) {
  const auto [side_l, side_s] = branch_sides_for(config, new_base_side);
  ModelConfig adapted = config;
  adapted.base_input_side = new_base_side;
  adapted.large.input_side = side_l;
  adapted.small.input_side = side_s;
  adapted.validate();
  Parameters out = p.clone();
  out.large.embed.pos_embed =
      resize_pos_embed(p.large.embed.pos_embed, config.large.grid(), adapted.large.grid());
  out.small.embed.pos_embed =
      resize_pos_embed(p.small.embed.pos_embed, config.small.grid(), adapted.small.grid());
  return {std::move(out), adapted};
}

}  // namespace crossvit
