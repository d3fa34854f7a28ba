// rgpl: data preparation, training, evaluation, sweeps and analysis.

#include "rgpl/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::int64_t> k;
  std::optional<std::string> metric;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "experiment config file (key = value lines)");
  cmd->add_option("--seed", c.seed, "master seed, overrides the config");
  cmd->add_option("--out", c.out, "output directory, overrides the config");
  cmd->add_option("--metric", c.metric, "evaluation metric")->check(CLI::IsMember({"ndcg@10", "success@5"}));
  cmd->add_option("--set", c.overrides, "extra config override, key=value (repeatable)");
}

rgpl::ExperimentConfig resolve(const Common& c) {
  rgpl::ExperimentConfig config;
  if (!c.config_path.empty()) config = rgpl::ExperimentConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw rgpl::Error("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  if (c.seed) config.reseed(*c.seed);
  if (c.out) config.out_dir = *c.out;
  if (c.k) config.train.refresh_interval_k = *c.k;
  if (c.metric) config.metrics = {*c.metric};
  config.validate();
  return config;
}

std::vector<std::int64_t> parse_k_list(const std::vector<std::string>& items) {
  std::vector<std::int64_t> ks;
  for (const auto& item : items) {
    if (item == "inf" || item == "gpl") {
      ks.push_back(0);
      continue;
    }
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 0) throw rgpl::Error("invalid k value '" + item + "'");
    ks.push_back(v);
  }
  return ks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense retriever domain adaptation with pseudo labels and remined hard negatives"};
  app.require_subcommand(1);

  Common prepare_opts, train_opts, eval_opts, sweep_opts, analyze_opts;

  auto* prepare = app.add_subcommand("prepare", "generate or load data, train and evaluate the Base model");
  add_common(prepare, prepare_opts);

  auto* train = app.add_subcommand("train", "adapt the Base model on the target corpus");
  add_common(train, train_opts);
  std::string mode = "rgpl";
  train->add_option("--mode", mode, "gpl (static negatives) or rgpl (remined)")
      ->check(CLI::IsMember({"gpl", "rgpl"}));
  train->add_option("--k", train_opts.k, "remining interval in steps");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and optionally test it against another report");
  add_common(eval, eval_opts);
  std::string checkpoint = "base", compare, name;
  eval->add_option("--checkpoint", checkpoint, "checkpoint path or 'base'");
  eval->add_option("--compare", compare, "per-query report (.tsv) of a second run");
  eval->add_option("--name", name, "output subdirectory");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate one model per remining interval");
  add_common(sweep, sweep_opts);
  std::vector<std::string> sweep_k;
  sweep->add_option("--k", sweep_k, "k values, 'inf' for static negatives (default: sweep.k)")->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "export loss, margin, negative relevancy and embedding data");
  add_common(analyze, analyze_opts);
  std::string run_dir;
  analyze->add_option("--run", run_dir, "training run subdirectory of the output directory");
  analyze->add_option("--k", analyze_opts.k, "pick the train_rgpl_k<k> run");

  CLI11_PARSE(app, argc, argv);

  std::string command = app.get_subcommands().front()->get_name();
  try {
    std::string summary;
    if (*prepare) {
      summary = rgpl::cmd_prepare(resolve(prepare_opts));
    } else if (*train) {
      summary = rgpl::cmd_train(resolve(train_opts), mode);
    } else if (*eval) {
      summary = rgpl::cmd_eval(resolve(eval_opts), checkpoint, compare, name);
    } else if (*sweep) {
      const auto config = resolve(sweep_opts);
      summary = rgpl::cmd_sweep(config, sweep_k.empty() ? config.sweep_k : parse_k_list(sweep_k));
    } else if (*analyze) {
      summary = rgpl::cmd_analyze(resolve(analyze_opts), run_dir);
    }
    std::cout << summary << '\n';
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", {{"command", command}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 2;
  }
  return 0;
}
