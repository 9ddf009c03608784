#pragma once

// Training and evaluation harness: cosine schedule with linear warm-up,
// SGD with momentum (or AdamW) and decoupled weight decay, cross-entropy on
// the ensemble logits, per-epoch CSV metrics and checkpoints.
//
// Determinism: sample order, drop-path streams and gradient reduction order
// depend only on (seed, epoch, sample index). Per-sample gradients are summed
// into a fixed number of shards in sample order and the shards are summed in
// shard order, so results do not depend on the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "crossvit/checkpoint.hpp"
#include "crossvit/config.hpp"
#include "crossvit/data.hpp"
#include "crossvit/model.hpp"
#include "crossvit/rng.hpp"

namespace crossvit {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Worker cap from CRVT_THREADS, else the hardware concurrency.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("CRVT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; fn(i, worker).
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i, w);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Linear ramp 0 -> base over the warm-up steps, then cosine decay to 0.
class LrSchedule {
 public:
  LrSchedule(double base, std::size_t warmup_steps, std::size_t total_steps)
      : base_(base), warmup_(warmup_steps), total_(total_steps) {}

  double at(std::size_t step) const {
    if (step < warmup_) return base_ * static_cast<double>(step) / static_cast<double>(warmup_);
    const double span = static_cast<double>(total_ - warmup_);
    const double progress = span > 0 ? static_cast<double>(step - warmup_) / span : 1.0;
    return base_ * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  }

 private:
  double base_;
  std::size_t warmup_, total_;
};

// Weight decay applies to projection matrices only: not to biases, norm
// parameters, the CLS token or position embeddings.
inline bool decays(const std::string& name, const Tensor& t) {
  auto ends_with = [&](const char* s) {
    const std::string suffix(s);
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return t.rank() >= 2 && !ends_with("pos_embed") && !ends_with("cls_token");
}

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<NamedTensor>& params, double lr) = 0;
};

class SgdMomentum : public Optimizer {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), decay_(weight_decay) {}

  void step(std::vector<NamedTensor>& params, double lr) override {
    if (velocity_.empty())
      for (const auto& [_, t] : params) velocity_.emplace_back(t.numel(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& [name, t] = params[i];
      if (!t.has_grad()) continue;
      const bool wd = decay_ != 0.0 && decays(name, t);
      auto w = t.mutable_data();
      const auto g = t.grad();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j];
        if (wd) w[j] -= lr * decay_ * w[j];
        w[j] -= lr * v[j];
      }
    }
  }

 private:
  double momentum_, decay_;
  std::vector<std::vector<double>> velocity_;
};

class AdamW : public Optimizer {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<NamedTensor>& params, double lr) override {
    if (m_.empty())
      for (const auto& [_, t] : params) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
      }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& [name, t] = params[i];
      if (!t.has_grad()) continue;
      const bool wd = decay_ != 0.0 && decays(name, t);
      auto w = t.mutable_data();
      const auto g = t.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
        if (wd) w[j] -= lr * decay_ * w[j];
        w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      }
    }
  }

 private:
  double decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& tc) {
  if (tc.optimizer == "adamw") return std::make_unique<AdamW>(tc.weight_decay);
  return std::make_unique<SgdMomentum>(tc.momentum, tc.weight_decay);
}

inline std::size_t argmax(const Tensor& logits) {
  const auto d = logits.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  std::size_t n = 0;
  double acc_large = 0.0;
  double acc_small = 0.0;
  double acc_ensemble = 0.0;
};

struct SampleLogits {
  std::size_t label = 0;
  std::vector<double> large, small, ensemble;
};

// Eval-mode accuracy of each head and of the ensemble. Images whose side
// differs from the model's base side are resized first.
inline EvalResult evaluate(const Parameters& params, const ModelConfig& config, const Dataset& data,
                           std::vector<SampleLogits>* dump = nullptr) {
  if (data.num_classes != config.num_classes)
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(config.num_classes));
  data.validate();
  std::vector<SampleLogits> out(data.size());
  parallel_for(data.size(), worker_threads(), [&](std::size_t i, std::size_t) {
    Tensor image = data.image(i);
    if (data.side != config.base_input_side)
      image = Tensor::from({3, config.base_input_side, config.base_input_side},
                           interp::resize_image_bilinear(image.data(), 3, data.side,
                                                         config.base_input_side));
    const Logits l = forward(params, config, image);
    auto vec = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
    out[i] = {data.labels[i], vec(l.large), vec(l.small), vec(l.ensemble)};
  });
  EvalResult r;
  r.n = data.size();
  auto top = [](const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  std::size_t hl = 0, hs = 0, he = 0;
  for (const auto& s : out) {
    hl += top(s.large) == s.label;
    hs += top(s.small) == s.label;
    he += top(s.ensemble) == s.label;
  }
  if (r.n) {
    r.acc_large = static_cast<double>(hl) / static_cast<double>(r.n);
    r.acc_small = static_cast<double>(hs) / static_cast<double>(r.n);
    r.acc_ensemble = static_cast<double>(he) / static_cast<double>(r.n);
  }
  if (dump) *dump = std::move(out);
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  EvalResult eval;
};

inline const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,acc_l,acc_s,acc_ensemble";

inline std::string metrics_line(const EpochMetrics& m) {
  using detail::format_double;
  return std::to_string(m.epoch) + ',' + format_double(m.lr) + ',' + format_double(m.train_loss) +
         ',' + format_double(m.train_acc) + ',' + format_double(m.eval.acc_large) + ',' +
         format_double(m.eval.acc_small) + ',' + format_double(m.eval.acc_ensemble);
}

struct TrainResult {
  Parameters params;
  ModelConfig config;
  std::vector<EpochMetrics> history;
};

inline constexpr std::size_t kGradShards = 8;

namespace detail {

inline std::string first_non_finite(const std::vector<NamedTensor>& params) {
  for (const auto& [name, t] : params)
    for (double v : t.data())
      if (!std::isfinite(v)) return name + " (value)";
  for (const auto& [name, t] : params)
    if (t.has_grad())
      for (double v : t.grad())
        if (!std::isfinite(v)) return name + " (gradient)";
  return "";
}

}  // namespace detail

struct TrainHooks {
  std::ostream* progress = nullptr;  // receives each metrics line
  // Called after every epoch; returning true ends training early.
  std::function<bool(const EpochMetrics&)> stop;
};

// Trains from scratch. Writes tc.metrics_log, tc.checkpoint and
// tc.best_checkpoint when those paths are non-empty.
inline TrainResult train(const ModelConfig& model_config, const TrainConfig& tc, const Dataset& data,
                         const TrainHooks& hooks = {}) {
  ModelConfig config = model_config;
  if (tc.drop_path) config.drop_path = *tc.drop_path;
  config.validate();
  tc.validate();
  data.validate();
  if (data.size() == 0) throw ConfigError("training dataset is empty");
  if (data.num_classes != config.num_classes)
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(config.num_classes));
  if (data.side != config.base_input_side)
    throw ConfigError("dataset side " + std::to_string(data.side) + " != base_input_side " +
                      std::to_string(config.base_input_side));

  TrainResult result{build(config, tc.seed), config, {}};
  auto master = result.params.named();
  auto optimizer = make_optimizer(tc);

  const std::size_t n = data.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const LrSchedule schedule(tc.base_lr, tc.warmup_epochs * steps_per_epoch, tc.epochs * steps_per_epoch);

  const std::size_t threads = std::min(worker_threads(), kGradShards);
  std::vector<Parameters> replicas;
  for (std::size_t w = 0; w < threads; ++w) replicas.push_back(result.params.clone());
  std::vector<std::vector<NamedTensor>> replica_views;
  for (auto& r : replicas) replica_views.push_back(r.named());

  std::ofstream log;
  if (!tc.metrics_log.empty()) {
    log.open(tc.metrics_log, std::ios::trunc);
    if (!log) throw FormatError("cannot open metrics log '" + tc.metrics_log + "'");
    log << kMetricsHeader << '\n';
  }

  std::size_t total_params = 0;
  for (const auto& [_, t] : master) total_params += t.numel();
  std::vector<std::vector<double>> shard_grads(kGradShards, std::vector<double>(total_params));

  double best = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = Rng::derive(tc.seed, epoch, ~std::uint64_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    std::vector<double> sample_loss(n, 0.0);
    std::vector<char> sample_hit(n, 0);
    double lr = 0.0;
    for (std::size_t begin = 0; begin < n; begin += tc.batch_size, ++step) {
      const std::size_t end = std::min(n, begin + tc.batch_size);
      const std::size_t batch = end - begin;
      const std::size_t shards = std::min(kGradShards, batch);
      const double inv_batch = 1.0 / static_cast<double>(batch);

      for (auto& view : replica_views)
        for (std::size_t t = 0; t < view.size(); ++t) {
          auto dst = view[t].second.mutable_data();
          const auto src = master[t].second.data();
          std::copy(src.begin(), src.end(), dst.begin());
        }

      parallel_for(shards, threads, [&](std::size_t shard, std::size_t worker) {
        Parameters& p = replicas[worker];
        p.zero_grad();
        const std::size_t lo = begin + shard * batch / shards;
        const std::size_t hi = begin + (shard + 1) * batch / shards;
        for (std::size_t pos = lo; pos < hi; ++pos) {
          const std::size_t idx = order[pos];
          ForwardOptions opts;
          opts.training = true;
          opts.seed = Rng::derive(tc.seed, epoch, idx).next();
          const Logits logits = forward(p, config, data.image(idx), opts);
          const Tensor loss = cross_entropy(logits.ensemble, data.labels[idx]);
          sample_loss[idx] = loss.item();
          sample_hit[idx] = argmax(logits.ensemble) == data.labels[idx];
          backward(scale(loss, inv_batch));
        }
        auto& flat = shard_grads[shard];
        std::size_t off = 0;
        for (const auto& [_, t] : replica_views[worker]) {
          if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), flat.begin() + off);
          else std::fill_n(flat.begin() + off, t.numel(), 0.0);
          off += t.numel();
        }
      });

      std::size_t off = 0;
      for (auto& [_, t] : master) {
        auto g = t.mutable_grad();
        for (std::size_t j = 0; j < g.size(); ++j) {
          double acc = 0.0;
          for (std::size_t s = 0; s < shards; ++s) acc += shard_grads[s][off + j];
          g[j] = acc;
        }
        off += t.numel();
      }

      for (std::size_t pos = begin; pos < end; ++pos)
        if (!std::isfinite(sample_loss[order[pos]])) {
          const std::string culprit = detail::first_non_finite(master);
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                              std::to_string(step) + "; first non-finite tensor: " +
                              (culprit.empty() ? std::string("logits (parameters finite)") : culprit));
        }

      lr = schedule.at(step);
      optimizer->step(master, lr);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    for (std::size_t i = 0; i < n; ++i) {
      m.train_loss += sample_loss[i];
      m.train_acc += sample_hit[i];
    }
    m.train_loss /= static_cast<double>(n);
    m.train_acc /= static_cast<double>(n);
    m.eval = evaluate(result.params, config, data);
    result.history.push_back(m);
    if (log.is_open()) log << metrics_line(m) << '\n' << std::flush;
    if (hooks.progress) *hooks.progress << metrics_line(m) << '\n' << std::flush;
    if (m.eval.acc_ensemble > best) {
      best = m.eval.acc_ensemble;
      if (!tc.best_checkpoint.empty()) save_checkpoint(result.params, config, tc.best_checkpoint);
    }
    if (hooks.stop && hooks.stop(m)) break;
  }
  if (!tc.checkpoint.empty()) save_checkpoint(result.params, config, tc.checkpoint);
  result.params.zero_grad();
  return result;
}

// Loads a dataset according to `spec`, resized to `side`.
inline Dataset load_dataset(const DataSpec& spec, std::size_t num_classes, std::size_t side) {
  Dataset d;
  if (spec.kind == "synth") {
    d = synth_dataset(spec.n, num_classes, spec.record_side, spec.seed);
  } else if (spec.kind == "cifar10") {
    CifarOptions opts;
    opts.record_side = spec.record_side;
    opts.split = spec.split;
    opts.normalize = spec.normalize;
    d = load_cifar10_binary(spec.path, opts);
    if (spec.n && spec.n < d.size()) {
      std::vector<std::size_t> first(spec.n);
      for (std::size_t i = 0; i < spec.n; ++i) first[i] = i;
      d = d.subset(first);
    }
  } else {
    throw ConfigError("unknown data kind '" + spec.kind + "'");
  }
  d.resize_to(side);
  return d;
}

}  // namespace crossvit
