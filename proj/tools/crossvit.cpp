// crossvit command-line tool: train, eval, gradcheck, analyze, adapt-res, synth.
//
// Every subcommand reads an optional config file (--config), then applies
// its flags, then any --set section.key=value overrides.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "crossvit/crossvit.hpp"

namespace {

using namespace crossvit;
using json = nlohmann::json;

// Config sources shared by every subcommand.
struct ConfigSources {
  std::string file;
  std::string preset;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;  // key, value

  void add_to(CLI::App* app) {
    app->add_option("--config", file, "Config file (section/key = value text)");
    app->add_option("--preset", preset, "Model preset: tiny, small, base, micro, desk");
    app->add_option("--set", sets, "Override section.key=value (repeatable)");
  }

  // Registers a flag bound to a config key; the config parser validates it.
  CLI::Option* bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    return app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { flags.emplace_back(key, v); }, help + " [" + key + "]");
  }

  KeyValues resolve() const {
    KeyValues kv;
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw ConfigError("cannot open config '" + file + "'");
      std::stringstream ss;
      ss << in.rdbuf();
      kv = parse_key_values(ss.str());
    }
    if (!preset.empty()) kv["model.preset"] = preset;
    for (const auto& [k, v] : flags) kv[k] = v;
    for (const auto& s : sets) apply_override(kv, s);
    return kv;
  }
};

void bind_data_flags(ConfigSources& src, CLI::App* app) {
  src.bind(app, "--data", "data.kind", "Dataset kind: synth or cifar10");
  src.bind(app, "--data-path", "data.path", "CIFAR-10 binary file or directory");
  src.bind(app, "--n", "data.n", "Sample count (synth) or cap (cifar10)");
  src.bind(app, "--data-seed", "data.seed", "Synthetic data seed");
  src.bind(app, "--split", "data.split", "CIFAR-10 directory split: train, test, all");
}

json eval_json(const EvalResult& r) {
  return {{"n", r.n}, {"acc_l", r.acc_large}, {"acc_s", r.acc_small}, {"acc_ensemble", r.acc_ensemble}};
}

void write_logits(const std::vector<SampleLogits>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  const std::size_t k = rows.empty() ? 0 : rows.front().large.size();
  out << "index,label";
  for (const char* head : {"l", "s", "e"})
    for (std::size_t c = 0; c < k; ++c) out << ',' << head << c;
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << i << ',' << rows[i].label;
    for (const auto* v : {&rows[i].large, &rows[i].small, &rows[i].ensemble})
      for (double x : *v) out << ',' << detail::format_double(x);
    out << '\n';
  }
}

int run_train(const ConfigSources& src, bool quiet) {
  const KeyValues kv = src.resolve();
  const ModelConfig model = load_model_config(kv);
  const TrainConfig tc = load_train_config(kv);
  const Dataset data = load_dataset(tc.data, model.num_classes, model.base_input_side);
  TrainHooks hooks;
  if (!quiet) {
    std::cout << kMetricsHeader << '\n';
    hooks.progress = &std::cout;
  }
  const TrainResult r = train(model, tc, data, hooks);
  const EpochMetrics& last = r.history.back();
  std::cerr << "trained " << r.history.size() << " epochs on " << data.size()
            << " samples; final acc_l=" << last.eval.acc_large << " acc_s=" << last.eval.acc_small
            << " acc_ensemble=" << last.eval.acc_ensemble << '\n';
  return 0;
}

int run_eval(const ConfigSources& src, const std::string& checkpoint, const std::string& dump,
             bool as_json) {
  const KeyValues kv = src.resolve();
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TrainConfig tc = load_train_config(kv);
  const Dataset data = load_dataset(tc.data, ck.config.num_classes, ck.config.base_input_side);
  std::vector<SampleLogits> logits;
  const EvalResult r = evaluate(ck.params, ck.config, data, dump.empty() ? nullptr : &logits);
  if (!dump.empty()) write_logits(logits, dump);
  if (as_json) {
    std::cout << eval_json(r).dump(2) << '\n';
  } else {
    std::cout << "n=" << r.n << " acc_l=" << r.acc_large << " acc_s=" << r.acc_small
              << " acc_ensemble=" << r.acc_ensemble << '\n';
  }
  return 0;
}

int run_gradcheck(const ConfigSources& src, std::uint64_t seed, const GradcheckOptions& base,
                  const std::string& corrupt) {
  const ModelConfig model = load_model_config(src.resolve());
  GradcheckOptions opts = base;
  if (!corrupt.empty())
    opts.corrupt = [corrupt](const std::string& name, std::vector<double>& g) {
      if (name == corrupt)
        for (double& v : g) v = v * 1.5 + 1e-3;
    };
  const GradcheckReport r = gradcheck(model, seed, opts);
  std::cout << r.to_text();
  return r.passed() ? 0 : 1;
}

int run_analyze(const ConfigSources& src, std::size_t side, bool as_json) {
  const ModelConfig model = load_model_config(src.resolve());
  if (side == 0) side = model.base_input_side;
  const CostReport report = count_flops(model, side);
  ModelConfig at = model;
  std::tie(at.large.input_side, at.small.input_side) = branch_sides_for(model, side);
  const AttentionCost attn = attn_cost(at);
  const CostRow total = report.total();
  if (as_json) {
    json rows = json::array();
    for (const auto& r : report.rows)
      rows.push_back({{"component", r.component}, {"param_count", r.param_count}, {"flops", r.flops},
                      {"attn_entries", r.attn_entries}, {"elementwise_ops", r.elementwise_ops}});
    std::cout << json{{"input_side", side},
                      {"rows", rows},
                      {"total", {{"param_count", total.param_count}, {"flops", total.flops},
                                 {"attn_entries", total.attn_entries},
                                 {"elementwise_ops", total.elementwise_ops}}},
                      {"fusion_attention",
                       {{"n_large", attn.n_large}, {"n_small", attn.n_small},
                        {"cross_attention", attn.cross_attention},
                        {"all_attention", attn.all_attention}, {"ratio", attn.ratio}}}}
                     .dump(2)
              << '\n';
    return 0;
  }
  std::cout << report.to_csv() << '\n'
            << "# fusion attention entries per pass (N_l=" << attn.n_large << ", N_s=" << attn.n_small
            << "): cross_attention=" << attn.cross_attention << " all_attention=" << attn.all_attention
            << " ratio=" << attn.ratio << '\n'
            << "# elementwise_ops (softmax, layer norm, GELU, adds; not in flops)=" << total.elementwise_ops
            << '\n'
            << "# flops count one multiply-accumulate as one FLOP; image resize is excluded\n";
  return 0;
}

int run_adapt(const std::string& in, const std::string& out, std::size_t side) {
  const Checkpoint ck = load_checkpoint(in);
  const auto [params, config] = adapt_resolution(ck.params, ck.config, side);
  save_checkpoint(params, config, out);
  std::cout << "adapted " << ck.config.base_input_side << " -> " << side << " (large side "
            << config.large.input_side << ", small side " << config.small.input_side << "); wrote "
            << out << '\n';
  return 0;
}

int run_synth(std::size_t n, std::size_t classes, std::size_t side, std::uint64_t seed,
              const std::string& out) {
  const Dataset d = synth_dataset(n, classes, side, seed);
  write_cifar10_binary(d, out);
  std::cout << "wrote " << n << " records of side " << side << " to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CrossViT: dual-branch vision transformer with cross-attention fusion"};
  app.require_subcommand(1);

  ConfigSources train_src, eval_src, grad_src, analyze_src;

  auto* train_cmd = app.add_subcommand("train", "Train from scratch; writes metrics CSV and checkpoints");
  train_src.add_to(train_cmd);
  train_src.bind(train_cmd, "--train-preset", "train.preset", "Training preset: default, desk");
  train_src.bind(train_cmd, "--epochs", "train.epochs", "Epochs");
  train_src.bind(train_cmd, "--warmup-epochs", "train.warmup_epochs", "Warm-up epochs");
  train_src.bind(train_cmd, "--batch-size", "train.batch_size", "Batch size");
  train_src.bind(train_cmd, "--lr", "train.base_lr", "Base learning rate");
  train_src.bind(train_cmd, "--weight-decay", "train.weight_decay", "Decoupled weight decay");
  train_src.bind(train_cmd, "--momentum", "train.momentum", "SGD momentum");
  train_src.bind(train_cmd, "--seed", "train.seed", "Seed");
  train_src.bind(train_cmd, "--optimizer", "train.optimizer", "sgd or adamw");
  train_src.bind(train_cmd, "--drop-path", "train.drop_path", "Drop-path rate");
  train_src.bind(train_cmd, "--metrics-log", "train.metrics_log", "Metrics CSV path");
  train_src.bind(train_cmd, "--checkpoint", "train.checkpoint", "Final checkpoint path");
  train_src.bind(train_cmd, "--best-checkpoint", "train.best_checkpoint", "Best checkpoint path");
  bind_data_flags(train_src, train_cmd);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "Do not echo metrics lines");

  auto* eval_cmd = app.add_subcommand("eval", "Per-branch and ensemble top-1 accuracy of a checkpoint");
  std::string eval_ckpt, dump;
  bool eval_json_out = false;
  eval_cmd->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_src.add_to(eval_cmd);
  bind_data_flags(eval_src, eval_cmd);
  eval_cmd->add_option("--dump-logits", dump, "Write per-sample logits CSV");
  eval_cmd->add_flag("--json", eval_json_out, "JSON output");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and central-difference gradients");
  grad_src.add_to(grad_cmd);
  std::uint64_t grad_seed = 0;
  GradcheckOptions grad_opts;
  std::string corrupt;
  grad_cmd->add_option("--seed", grad_seed, "Parameter and input seed");
  grad_cmd->add_option("--eps", grad_opts.eps, "Central-difference step")->capture_default_str();
  grad_cmd->add_option("--tolerance", grad_opts.tolerance, "Maximum relative error")->capture_default_str();
  grad_cmd->add_flag("--training", grad_opts.training, "Check with drop path active");
  grad_cmd->add_option("--corrupt", corrupt, "Perturb this tensor's analytic gradient (negative control)");

  auto* analyze_cmd = app.add_subcommand("analyze", "Parameter, FLOP and attention-map cost report");
  analyze_src.add_to(analyze_cmd);
  std::size_t analyze_side = 0;
  bool analyze_json = false;
  analyze_cmd->add_option("--side", analyze_side, "Input side (default: model base_input_side)");
  analyze_cmd->add_flag("--json", analyze_json, "JSON output");

  auto* adapt_cmd = app.add_subcommand("adapt-res", "Resize position embeddings for a new input side");
  std::string adapt_in, adapt_out;
  std::size_t adapt_side = 0;
  adapt_cmd->add_option("checkpoint", adapt_in, "Input checkpoint")->required();
  adapt_cmd->add_option("--side", adapt_side, "New base input side")->required();
  adapt_cmd->add_option("-o,--out", adapt_out, "Output checkpoint")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset as CIFAR-10 binary records");
  std::size_t synth_n = 64, synth_classes = 10, synth_side = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth_cmd->add_option("--n", synth_n, "Sample count")->capture_default_str();
  synth_cmd->add_option("--classes", synth_classes, "Classes (at most 10)")->capture_default_str();
  synth_cmd->add_option("--side", synth_side, "Image side")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "Seed")->capture_default_str();
  synth_cmd->add_option("-o,--out", synth_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train_src, quiet);
    if (*eval_cmd) return run_eval(eval_src, eval_ckpt, dump, eval_json_out);
    if (*grad_cmd) return run_gradcheck(grad_src, grad_seed, grad_opts, corrupt);
    if (*analyze_cmd) return run_analyze(analyze_src, analyze_side, analyze_json);
    if (*adapt_cmd) return run_adapt(adapt_in, adapt_out, adapt_side);
    if (*synth_cmd) return run_synth(synth_n, synth_classes, synth_side, synth_seed, synth_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
