#pragma once

// Central-difference gradient check of a full model forward pass.
//
// relative error = |analytic - numeric| / max(|analytic|, |numeric|, floor)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "crossvit/config.hpp"
#include "crossvit/model.hpp"
#include "crossvit/ops.hpp"
#include "crossvit/rng.hpp"

namespace crossvit {

struct GradcheckOptions {
  double eps = 1e-4;
  double tolerance = 1e-3;
  double floor = 1e-6;
  bool training = false;  // exercise drop-path with a fixed stream
  // Applied to each tensor's analytic gradient before comparison; used as a
  // negative control.
  std::function<void(const std::string&, std::vector<double>&)> corrupt;
};

struct TensorGradError {
  std::string name;
  std::size_t numel = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<TensorGradError> tensors;
  double tolerance = 0.0;

  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.max_rel_error);
    return w;
  }
  bool passed() const { return worst() < tolerance; }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(3);
    for (const auto& t : tensors)
      os << (t.max_rel_error < tolerance ? "ok   " : "FAIL ") << t.name << " numel=" << t.numel
         << " max_rel=" << std::scientific << t.max_rel_error << " max_abs=" << t.max_abs_error
         << std::defaultfloat << '\n';
    os << (passed() ? "PASS" : "FAIL") << " worst relative error " << std::scientific << worst()
       << " (tolerance " << tolerance << ")\n";
    return os.str();
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Checks every parameter of a model built from (config, seed) on one random
// image, using cross-entropy of the ensemble logits as the scalar loss.
inline GradcheckReport gradcheck(const ModelConfig& config, std::uint64_t seed,
                                 const GradcheckOptions& opts = {}) {
  config.validate();
  Parameters params = build(config, seed);
  Rng rng = Rng::derive(seed, 1, 0);
  const std::size_t side = config.base_input_side;
  std::vector<double> pixels(3 * side * side);
  for (double& v : pixels) v = rng.uniform();
  const Tensor image = Tensor::from({3, side, side}, pixels);
  const std::size_t label = static_cast<std::size_t>(seed % config.num_classes);

  ForwardOptions fo;
  fo.training = opts.training;
  fo.seed = seed;
  auto loss = [&] { return cross_entropy(forward(params, config, image, fo).ensemble, label); };

  params.zero_grad();
  backward(loss());

  GradcheckReport report;
  report.tolerance = opts.tolerance;
  for (auto& [name, t] : params.named()) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    if (opts.corrupt) opts.corrupt(name, analytic);
    TensorGradError e{name, t.numel(), 0.0, 0.0};
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + opts.eps;
      const double up = loss().item();
      w[i] = saved - opts.eps;
      const double down = loss().item();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], numeric, opts.floor));
      e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic[i] - numeric));
    }
    report.tensors.push_back(e);
  }
  return report;
}

}  // namespace crossvit
