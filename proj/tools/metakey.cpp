#include <fstream>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "metakey/harness/evaluate.hpp"
#include "metakey/harness/training.hpp"

namespace {

using namespace metakey;

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

int train(const std::string& config_path, const std::string& mode, const std::int64_t* seed,
          bool resume, std::int64_t stop_after, bool quiet) {
  harness::ExperimentConfig cfg = harness::load_experiment(config_path);
  if (!mode.empty()) cfg.set_mode(harness::parse_train_mode(mode));
  if (seed != nullptr) cfg.seed = static_cast<std::uint64_t>(*seed);
  cfg.validate();
  const auto data = harness::build_data(cfg, warn);
  harness::TrainOptions options;
  options.resume = resume;
  if (stop_after >= 0) options.stop_after = stop_after;
  if (!quiet) options.log = [](const std::string& m) { std::cout << m << std::endl; };
  const auto series = harness::run_training(cfg, data, options);
  const auto seasons = data.train.seasons();
  const auto best = harness::select_checkpoint(series, {seasons.begin(), seasons.end()});
  const auto& chosen = series[best];
  std::ofstream(harness::series_dir(cfg) / "selected.txt") << chosen.path.string() << "\n";
  std::cout << "selected " << chosen.path.string() << " (index " << chosen.index << ", val "
            << chosen.val_loss << ")\n";
  return 0;
}

int evaluate(const std::string& checkpoint_path, const std::string& config_path,
             const std::string& arm, double lr, std::int64_t steps, std::int64_t runs, std::int64_t k,
             std::int64_t seed, const std::string& weighting, const std::string& out) {
  const harness::ExperimentConfig cfg = harness::load_experiment(config_path);
  const harness::Checkpoint ckpt = harness::load_checkpoint(checkpoint_path);
  if (!(ckpt.model == cfg.model)) {
    throw std::invalid_argument("the checkpoint's model does not match the config's [model]");
  }
  const auto data = harness::build_data(cfg, warn);
  harness::EvalOptions o;
  o.arm.kind = harness::parse_arm(arm);
  o.arm.lr = lr;
  o.arm.steps = steps;
  o.k = k > 0 ? k : cfg.effective_k();
  o.runs = runs > 0 ? runs : cfg.eval_runs;
  o.seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : cfg.seed;
  o.weighting = weighting.empty() ? cfg.season_weighting : harness::parse_season_weighting(weighting);
  o.train_split = cfg.train_label;
  o.warn = warn;
  const auto report = harness::evaluate(ckpt, data.test, o);
  const std::string text = harness::report_to_json(report).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + out + "'");
    f << text;
  }
  return 0;
}

int report(const std::vector<std::string>& inputs, const std::string& format, const std::string& out) {
  std::vector<harness::EvalReport> reports;
  for (const auto& path : inputs) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    reports.push_back(harness::report_from_json(nlohmann::ordered_json::parse(ss.str())));
  }
  const std::string text = harness::emit_report(reports, harness::parse_report_format(format));
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + out + "'");
    f << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned keypoint regression for crop-row following"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train one mode and checkpoint it");
  std::string config, mode;
  std::int64_t seed = 0;
  bool resume = false, quiet = false;
  std::int64_t stop_after = -1;
  train_cmd->add_option("--config", config, "experiment config file")->required();
  train_cmd->add_option("--mode", mode, "maml_pp, anil_pp, maml or baseline (overrides the config)");
  auto* seed_opt = train_cmd->add_option("--seed", seed, "experiment seed (overrides the config)");
  train_cmd->add_flag("--resume", resume, "continue from the newest checkpoint");
  train_cmd->add_option("--stop-after", stop_after, "stop after this many episodes/epochs");
  train_cmd->add_flag("--quiet", quiet, "no progress lines");

  auto* eval_cmd = app.add_subcommand("evaluate", "per-season test losses of one arm");
  std::string ckpt, eval_config, arm = "no_finetune", weighting, out;
  double lr = 0.0;
  std::int64_t steps = -1, runs = 0, k = 0, eval_seed = -1;
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "experiment config (test split)")->required();
  eval_cmd->add_option("--arm", arm, "no_finetune, baseline_ft or meta_adapt")->capture_default_str();
  eval_cmd->add_option("--lr", lr, "baseline_ft learning rate");
  eval_cmd->add_option("--steps", steps, "baseline_ft gradient steps (default: finetune_steps)");
  eval_cmd->add_option("--runs", runs, "support draws per day (default: eval_runs)");
  eval_cmd->add_option("--k", k, "support images per day (default: meta k)");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed (default: experiment seed)");
  eval_cmd->add_option("--weighting", weighting, "image or day");
  eval_cmd->add_option("--out", out, "report JSON path (default: stdout)");

  auto* report_cmd = app.add_subcommand("report", "render evaluation reports as a table");
  std::vector<std::string> inputs;
  std::string format = "markdown", report_out;
  report_cmd->add_option("--in", inputs, "report JSON files")->required();
  report_cmd->add_option("--format", format, "csv or markdown")->capture_default_str();
  report_cmd->add_option("--out", report_out, "output file (default: stdout)");

  auto* synth_cmd = app.add_subcommand("synth-gen", "write a synthetic dataset with a manifest");
  auto synth = metakey::tools::add_synth_gen(*synth_cmd);

  CLI11_PARSE(app, argc, argv);
  try {
    metakey::harness::apply_determinism_from_env();
    if (*train_cmd) {
      return train(config, mode, seed_opt->count() > 0 ? &seed : nullptr, resume, stop_after, quiet);
    }
    if (*eval_cmd) return evaluate(ckpt, eval_config, arm, lr, steps, runs, k, eval_seed, weighting, out);
    if (*report_cmd) return report(inputs, format, report_out);
    if (*synth_cmd) return synth();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
