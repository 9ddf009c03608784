#pragma once

// Architecture and training configuration, plus the INI-style text format
// used by config files and embedded in checkpoints.
//
//   [model]            num_classes, base_input_side, encoders (K),
//                      fusion_depth (L), fusion, drop_path, no_cls, init_std
//   [model.large]      patch_size, embed_dim, blocks, heads, ffn_ratio,
//   [model.small]      tokenizer, input_side, conv_kernels, conv_strides,
//                      conv_channels
//   [train]            epochs, warmup_epochs, batch_size, base_lr,
//                      weight_decay, momentum, seed, optimizer, drop_path,
//                      metrics_log, checkpoint, best_checkpoint
//   [data]             kind, path, n, seed, record_side, split, normalize
//
// Lines are `key = value`; `#` and `;` start comments.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "crossvit/interp.hpp"

namespace crossvit {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed checkpoint or dataset file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FusionScheme { None, AllAttention, ClassToken, Pairwise, CrossAttention };
enum class TokenizerKind { Linear, Conv3 };

inline const char* to_string(FusionScheme f) {
  switch (f) {
    case FusionScheme::None: return "none";
    case FusionScheme::AllAttention: return "all_attention";
    case FusionScheme::ClassToken: return "class_token";
    case FusionScheme::Pairwise: return "pairwise";
    case FusionScheme::CrossAttention: return "cross_attention";
  }
  return "?";
}

inline FusionScheme parse_fusion(std::string_view s) {
  for (auto f : {FusionScheme::None, FusionScheme::AllAttention, FusionScheme::ClassToken,
                 FusionScheme::Pairwise, FusionScheme::CrossAttention})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown fusion scheme '" + std::string(s) + "'");
}

inline const char* to_string(TokenizerKind t) {
  return t == TokenizerKind::Linear ? "linear" : "conv3";
}

inline TokenizerKind parse_tokenizer(std::string_view s) {
  if (s == "linear") return TokenizerKind::Linear;
  if (s == "conv3") return TokenizerKind::Conv3;
  throw ConfigError("unknown tokenizer '" + std::string(s) + "'");
}

struct ConvLayerSpec {
  std::size_t kernel, stride, pad, in_channels, out_channels;
};

struct BranchConfig {
  std::size_t patch_size = 16;
  std::size_t embed_dim = 192;
  std::size_t blocks = 4;  // regular encoder blocks per multi-scale encoder
  std::size_t heads = 3;
  std::size_t ffn_ratio = 4;
  TokenizerKind tokenizer = TokenizerKind::Linear;
  std::size_t input_side = 224;
  // Conv stem overrides; empty means derived from patch_size.
  std::vector<std::size_t> conv_kernels, conv_strides, conv_channels;

  Grid grid() const { return grid_for(input_side); }
  Grid grid_for(std::size_t side) const { return {side / patch_size, side / patch_size}; }
  std::size_t num_patches() const { return grid().size(); }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t hidden_dim() const { return ffn_ratio * embed_dim; }

  // The three conv layers of the conv3 tokenizer. Default strides factor the
  // patch size greedily (16 -> 4,2,2; 12 -> 4,3,1); kernel 7 for stride 4,
  // otherwise the smallest odd kernel >= max(stride, 3); channels ramp
  // C/4, C/2, C. Padding is kernel/2 so each layer maps side n to ceil(n/s).
  std::vector<ConvLayerSpec> conv_layers() const {
    std::vector<std::size_t> strides = conv_strides;
    if (strides.empty()) {
      auto pick = [](std::size_t n, std::initializer_list<std::size_t> options) {
        for (std::size_t o : options)
          if (n % o == 0) return o;
        return n;
      };
      const std::size_t s1 = pick(patch_size, {4, 3, 2, 1});
      const std::size_t rest = patch_size / s1;
      const std::size_t s2 = pick(rest, {2, 3, rest});
      strides = {s1, s2, rest / s2};
    }
    std::vector<std::size_t> kernels = conv_kernels;
    if (kernels.empty())
      for (std::size_t s : strides) {
        std::size_t k = s == 4 ? 7 : std::max<std::size_t>(s, 3);
        if (k % 2 == 0) ++k;
        kernels.push_back(k);
      }
    std::vector<std::size_t> channels = conv_channels;
    if (channels.empty())
      channels = {std::max<std::size_t>(embed_dim / 4, 1), std::max<std::size_t>(embed_dim / 2, 1),
                  embed_dim};
    std::vector<ConvLayerSpec> layers;
    std::size_t in = 3;
    for (std::size_t i = 0; i < strides.size() && i < kernels.size() && i < channels.size(); ++i) {
      layers.push_back({kernels[i], strides[i], kernels[i] / 2, in, channels[i]});
      in = channels[i];
    }
    return layers;
  }

  friend bool operator==(const BranchConfig&, const BranchConfig&) = default;
};

struct ModelConfig {
  BranchConfig large;
  BranchConfig small;
  std::size_t encoders = 3;      // K
  std::size_t fusion_depth = 1;  // L
  FusionScheme fusion = FusionScheme::CrossAttention;
  std::size_t num_classes = 1000;
  std::size_t base_input_side = 224;
  double drop_path = 0.0;
  bool no_cls = false;
  double init_std = 0.02;

  // Every violated invariant, one message each.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    auto branch = [&](const BranchConfig& b, const char* name) {
      const std::string p = std::string(name) + ": ";
      if (b.patch_size == 0) out.push_back(p + "patch_size must be positive");
      if (b.embed_dim == 0) out.push_back(p + "embed_dim must be positive");
      if (b.heads == 0) out.push_back(p + "heads must be positive");
      if (b.ffn_ratio == 0) out.push_back(p + "ffn_ratio must be positive");
      if (b.blocks == 0) out.push_back(p + "blocks must be at least 1");
      if (b.heads && b.embed_dim % b.heads)
        out.push_back(p + "embed_dim " + std::to_string(b.embed_dim) +
                      " not divisible by heads " + std::to_string(b.heads));
      if (b.patch_size && (b.input_side == 0 || b.input_side % b.patch_size))
        out.push_back(p + "input_side " + std::to_string(b.input_side) +
                      " not divisible by patch_size " + std::to_string(b.patch_size));
      if (b.tokenizer == TokenizerKind::Conv3) {
        const auto layers = b.conv_layers();
        std::size_t stride = 1;
        for (const auto& l : layers) stride *= l.stride;
        if (layers.size() != 3) out.push_back(p + "conv3 tokenizer needs exactly three layers");
        if (stride != b.patch_size)
          out.push_back(p + "conv stride product " + std::to_string(stride) +
                        " != patch_size " + std::to_string(b.patch_size));
        if (!layers.empty() && layers.back().out_channels != b.embed_dim)
          out.push_back(p + "last conv layer must output embed_dim channels");
        for (const auto& l : layers)
          if (l.kernel == 0 || l.stride == 0 || l.out_channels == 0)
            out.push_back(p + "conv layers need positive kernel, stride and channels");
      }
    };
    branch(large, "large");
    branch(small, "small");
    if (small.patch_size >= large.patch_size)
      out.push_back("small patch_size must be smaller than large patch_size");
    if (encoders == 0) out.push_back("encoders (K) must be at least 1");
    if (fusion != FusionScheme::None && fusion_depth == 0)
      out.push_back("fusion_depth (L) must be at least 1 when fusion is enabled");
    if (num_classes == 0) out.push_back("num_classes must be positive");
    if (base_input_side == 0) out.push_back("base_input_side must be positive");
    if (!(drop_path >= 0.0 && drop_path < 1.0)) out.push_back("drop_path must lie in [0, 1)");
    if (fusion == FusionScheme::Pairwise) {
      const Grid gl = large.grid(), gs = small.grid();
      if (gl.rows * gs.cols != gl.cols * gs.rows)
        out.push_back("pairwise fusion needs grids of matching aspect ratio");
    }
    return out;
  }

  void validate() const {
    const auto issues = problems();
    if (issues.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& i : issues) msg += "\n  - " + i;
    throw ConfigError(msg);
  }

  // Fusion passes actually executed per multi-scale encoder.
  std::size_t fusion_passes() const { return fusion == FusionScheme::None ? 0 : fusion_depth; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DataSpec {
  std::string kind = "synth";  // synth | cifar10
  std::string path;
  std::size_t n = 64;
  std::uint64_t seed = 0;
  std::size_t record_side = 32;
  std::string split = "train";
  bool normalize = false;
};

struct TrainConfig {
  // Documentation defaults from the reference ImageNet recipe; desk-scale
  // runs override them.
  std::size_t epochs = 300;
  std::size_t warmup_epochs = 30;
  std::size_t batch_size = 4096;
  double base_lr = 0.004;
  double weight_decay = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::string optimizer = "sgd";  // sgd | adamw
  std::optional<double> drop_path;
  DataSpec data;
  std::string metrics_log = "metrics.csv";
  std::string checkpoint = "final.crvt";
  std::string best_checkpoint = "best.crvt";

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (epochs == 0) out.push_back("epochs must be positive");
    if (warmup_epochs >= epochs) out.push_back("warmup_epochs must be < epochs");
    if (batch_size == 0) out.push_back("batch_size must be at least 1");
    if (optimizer != "sgd" && optimizer != "adamw")
      out.push_back("optimizer must be sgd or adamw");
    if (drop_path && !(*drop_path >= 0.0 && *drop_path < 1.0))
      out.push_back("drop_path must lie in [0, 1)");
    return out;
  }
  void validate() const {
    const auto issues = problems();
    if (issues.empty()) return;
    std::string msg = "invalid train config:";
    for (const auto& i : issues) msg += "\n  - " + i;
    throw ConfigError(msg);
  }
};

// ---------------------------------------------------------------------------
// Text format

// Flat `section.key -> value` view of a config file.
using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace detail

inline KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    std::string line = detail::trim(raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = value;
  }
  return kv;
}

// Applies `section.key=value`.
inline void apply_override(KeyValues& kv, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  kv[detail::trim(assignment.substr(0, eq))] = detail::trim(assignment.substr(eq + 1));
}

namespace detail {

// Reads recognized keys under `prefix`, erasing them from `kv` so leftovers
// can be reported as unknown.
class Reader {
 public:
  Reader(KeyValues& kv, std::string prefix) : kv_(kv), prefix_(std::move(prefix)) {}

  template <class T>
  void number(const char* name, T& out) {
    if (auto v = take(name)) out = parse_number<T>(prefix_ + name, *v);
  }
  void flag(const char* name, bool& out) {
    if (auto v = take(name)) out = parse_bool(prefix_ + name, *v);
  }
  void text(const char* name, std::string& out) {
    if (auto v = take(name)) out = *v;
  }
  void list(const char* name, std::vector<std::size_t>& out) {
    if (auto v = take(name)) out = parse_list(prefix_ + name, *v);
  }
  std::optional<std::string> take(const char* name) {
    auto it = kv_.find(prefix_ + name);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

 private:
  KeyValues& kv_;
  std::string prefix_;
};

inline void read_branch(KeyValues& kv, const std::string& prefix, BranchConfig& b) {
  Reader r(kv, prefix);
  r.number("patch_size", b.patch_size);
  r.number("embed_dim", b.embed_dim);
  r.number("blocks", b.blocks);
  r.number("heads", b.heads);
  r.number("ffn_ratio", b.ffn_ratio);
  if (auto t = r.take("tokenizer")) b.tokenizer = parse_tokenizer(*t);
  r.number("input_side", b.input_side);
  r.list("conv_kernels", b.conv_kernels);
  r.list("conv_strides", b.conv_strides);
  r.list("conv_channels", b.conv_channels);
}

inline void reject_leftovers(const KeyValues& kv, const std::string& prefix) {
  for (const auto& [k, v] : kv)
    if (k.rfind(prefix, 0) == 0) throw ConfigError("unknown config key '" + k + "'");
}

}  // namespace detail

// Overlays the `model.*` keys of `kv` onto `base`.
inline ModelConfig model_config_from(KeyValues kv, ModelConfig base = {}) {
  detail::Reader r(kv, "model.");
  r.number("num_classes", base.num_classes);
  r.number("base_input_side", base.base_input_side);
  r.number("encoders", base.encoders);
  r.number("fusion_depth", base.fusion_depth);
  if (auto f = r.take("fusion")) base.fusion = parse_fusion(*f);
  r.number("drop_path", base.drop_path);
  r.flag("no_cls", base.no_cls);
  r.number("init_std", base.init_std);
  detail::read_branch(kv, "model.large.", base.large);
  detail::read_branch(kv, "model.small.", base.small);
  detail::reject_leftovers(kv, "model.");
  return base;
}

inline TrainConfig train_config_from(KeyValues kv, TrainConfig base = {}) {
  detail::Reader r(kv, "train.");
  r.number("epochs", base.epochs);
  r.number("warmup_epochs", base.warmup_epochs);
  r.number("batch_size", base.batch_size);
  r.number("base_lr", base.base_lr);
  r.number("weight_decay", base.weight_decay);
  r.number("momentum", base.momentum);
  r.number("seed", base.seed);
  r.text("optimizer", base.optimizer);
  if (auto v = r.take("drop_path")) base.drop_path = detail::parse_number<double>("train.drop_path", *v);
  r.text("metrics_log", base.metrics_log);
  r.text("checkpoint", base.checkpoint);
  r.text("best_checkpoint", base.best_checkpoint);
  detail::Reader d(kv, "data.");
  d.text("kind", base.data.kind);
  d.text("path", base.data.path);
  d.number("n", base.data.n);
  d.number("seed", base.data.seed);
  d.number("record_side", base.data.record_side);
  d.text("split", base.data.split);
  d.flag("normalize", base.data.normalize);
  detail::reject_leftovers(kv, "train.");
  detail::reject_leftovers(kv, "data.");
  return base;
}

inline std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "[model]\n"
     << "num_classes = " << c.num_classes << "\n"
     << "base_input_side = " << c.base_input_side << "\n"
     << "encoders = " << c.encoders << "\n"
     << "fusion_depth = " << c.fusion_depth << "\n"
     << "fusion = " << to_string(c.fusion) << "\n"
     << "drop_path = " << detail::format_double(c.drop_path) << "\n"
     << "no_cls = " << (c.no_cls ? "true" : "false") << "\n"
     << "init_std = " << detail::format_double(c.init_std) << "\n";
  auto branch = [&](const char* name, const BranchConfig& b) {
    os << "\n[model." << name << "]\n"
       << "patch_size = " << b.patch_size << "\n"
       << "embed_dim = " << b.embed_dim << "\n"
       << "blocks = " << b.blocks << "\n"
       << "heads = " << b.heads << "\n"
       << "ffn_ratio = " << b.ffn_ratio << "\n"
       << "tokenizer = " << to_string(b.tokenizer) << "\n"
       << "input_side = " << b.input_side << "\n";
    if (!b.conv_kernels.empty()) os << "conv_kernels = " << detail::format_list(b.conv_kernels) << "\n";
    if (!b.conv_strides.empty()) os << "conv_strides = " << detail::format_list(b.conv_strides) << "\n";
    if (!b.conv_channels.empty())
      os << "conv_channels = " << detail::format_list(b.conv_channels) << "\n";
  };
  branch("large", c.large);
  branch("small", c.small);
  return os.str();
}

inline ModelConfig parse_model_config(std::string_view text) {
  return model_config_from(parse_key_values(text));
}

// ---------------------------------------------------------------------------
// Presets

namespace presets {

inline BranchConfig branch(std::size_t patch, std::size_t width, std::size_t blocks,
                           std::size_t heads, std::size_t side) {
  BranchConfig b;
  b.patch_size = patch;
  b.embed_dim = width;
  b.blocks = blocks;
  b.heads = heads;
  b.input_side = side;
  return b;
}

// Ti/S/B: the large branch mirrors DeiT-Ti/S/B (12 blocks as K=3 x M=4);
// the small branch is half as wide with one block per encoder.
inline ModelConfig crossvit(std::size_t width, std::size_t heads) {
  ModelConfig c;
  c.large = branch(16, width, 4, heads, 224);
  std::size_t small_width = width / 2;
  small_width -= small_width % heads;
  c.small = branch(12, small_width, 1, heads, 240);
  c.encoders = 3;
  c.fusion_depth = 1;
  c.fusion = FusionScheme::CrossAttention;
  c.num_classes = 1000;
  c.base_input_side = 224;
  return c;
}

inline ModelConfig tiny() { return crossvit(192, 3); }
inline ModelConfig small() { return crossvit(384, 6); }
inline ModelConfig base() { return crossvit(768, 12); }

// Smallest configuration that exercises every component; used by gradcheck.
inline ModelConfig micro() {
  ModelConfig c;
  c.large = branch(4, 16, 1, 2, 8);
  c.small = branch(2, 16, 1, 2, 8);
  c.encoders = 1;
  c.fusion_depth = 1;
  c.num_classes = 5;
  c.base_input_side = 8;
  return c;
}

// Desk-scale model for 32x32 inputs.
inline ModelConfig desk() {
  ModelConfig c;
  c.large = branch(8, 64, 2, 4, 32);
  c.small = branch(4, 32, 1, 2, 32);
  c.encoders = 2;
  c.fusion_depth = 1;
  c.num_classes = 10;
  c.base_input_side = 32;
  return c;
}

// Overfits 64 synthetic desk-preset images. SGD with momentum stalls on this
// suite (the small branch stays at chance), so it uses AdamW.
inline TrainConfig desk_training() {
  TrainConfig t;
  t.epochs = 200;
  t.warmup_epochs = 10;
  t.batch_size = 16;
  t.base_lr = 5e-4;
  t.weight_decay = 0.0;
  t.optimizer = "adamw";
  t.drop_path = 0.0;
  t.data.kind = "synth";
  t.data.n = 64;
  t.data.record_side = 32;
  return t;
}

inline std::vector<std::string> names() { return {"tiny", "small", "base", "micro", "desk"}; }

inline ModelConfig by_name(std::string_view name) {
  if (name == "tiny") return tiny();
  if (name == "small") return small();
  if (name == "base") return base();
  if (name == "micro") return micro();
  if (name == "desk") return desk();
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

inline TrainConfig training_by_name(std::string_view name) {
  if (name == "default") return TrainConfig{};
  if (name == "desk") return desk_training();
  throw ConfigError("unknown training preset '" + std::string(name) + "'");
}

}  // namespace presets

// `model.preset` and `train.preset` select the base that the remaining keys
// overlay; without them the bases are presets::micro() and TrainConfig{}.
inline ModelConfig load_model_config(KeyValues kv) {
  ModelConfig base = presets::micro();
  if (auto it = kv.find("model.preset"); it != kv.end()) {
    base = presets::by_name(it->second);
    kv.erase(it);
  }
  return model_config_from(std::move(kv), base);
}

inline TrainConfig load_train_config(KeyValues kv) {
  TrainConfig base;
  if (auto it = kv.find("train.preset"); it != kv.end()) {
    base = presets::training_by_name(it->second);
    kv.erase(it);
  }
  return train_config_from(std::move(kv), base);
}

}  // namespace crossvit
