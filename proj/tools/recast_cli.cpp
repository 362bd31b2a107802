// Command-line front end: dataset generation, single training runs, mode/G
// sweeps, checkpoint evaluation, run reporting, and a line-delimited JSON
// signal filter for piping externally produced rollout groups through the
// advantage construction.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "recast/evalx.hpp"

using namespace recast;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CatalogShape parse_shape(const std::string& text) {
  CatalogShape shape;
  char comma1 = 0, comma2 = 0;
  std::istringstream ss(text);
  if (!(ss >> shape.n_a >> comma1 >> shape.n_b >> comma2 >> shape.n_c) ||
      comma1 != ',' || comma2 != ',' || !(ss >> std::ws).eof()) {
    throw CLI::ValidationError("--shape expects three integers like 8,8,8");
  }
  shape.validate();
  return shape;
}

std::vector<SignalMode> parse_modes(const std::vector<std::string>& names) {
  std::vector<SignalMode> modes;
  for (const std::string& name : names) modes.push_back(parse_signal_mode(name));
  return modes;
}

RunConfig load_run_config(const std::string& path) {
  return path.empty() ? RunConfig{} : run_config_from_json(slurp(path));
}

// A dataset file wins over the config's env section; the run then records
// the dataset's actual shape, size and seed.
Dataset resolve_dataset(RunConfig& config, const std::string& dataset_path) {
  if (dataset_path.empty()) {
    return generate_dataset(config.shape, config.num_prompts,
                            config.dataset_seed);
  }
  Dataset dataset = load_dataset_jsonl(dataset_path);
  config.shape = dataset.shape;
  config.num_prompts = dataset.num_prompts();
  config.dataset_seed = dataset.seed;
  return dataset;
}

int run_report(const std::string& run_dir) {
  const nlohmann::json summary =
      nlohmann::json::parse(slurp(run_dir + "/summary.json"));
  if (summary.contains("cells")) {
    std::cout << "experiment " << summary.value("run_id", "?") << " (reference "
              << summary.value("reference_mode", "?") << ")\n";
    for (const auto& [cell, entry] : summary.at("cells").items()) {
      std::cout << "  " << cell << ": final exact Pass@1 "
                << entry.at("final_pass1_exact").get<double>()
                << ", matched budget ";
      if (entry.at("matched_budget_ratio").is_null()) {
        std::cout << "never reached\n";
      } else {
        std::cout << entry.at("matched_budget_ratio").get<double>() << "\n";
      }
    }
    return 0;
  }
  std::cout << "run: mode " << summary.value("mode", "?") << ", G "
            << summary.value("G", 0) << "\n";
  for (const auto& [metric, value] : summary.at("final").items()) {
    std::cout << "  final " << metric << " " << value.get<double>() << "\n";
  }
  if (summary.contains("cost")) {
    std::cout << "  cost method/base "
              << summary.at("cost").at("method_over_base").get<double>() << "\n";
  }
  if (summary.contains("tokens")) {
    std::cout << "  tokens active/total "
              << summary.at("tokens").at("active_over_total").get<double>()
              << "\n";
  }
  if (summary.contains("composition")) {
    const auto& comp = summary.at("composition");
    std::cout << "  all-zero ratio "
              << comp.at("first_window").at("all_zero_ratio").get<double>()
              << " -> "
              << comp.at("last_window").at("all_zero_ratio").get<double>()
              << "\n";
  }
  return 0;
}

int run_signal_filter(const CatalogShape& shape, SignalMode mode, double w,
                      double epsilon) {
  SignalConfig config{mode, w, epsilon};
  std::string line;
  long line_no = 0;
  while (std::getline(std::cin, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      ScoredGroup group = group_from_json(line, shape);
      const SignalResult result =
          build_signal(std::move(group), config, shape);
      std::cout << signal_to_json(result.group, result.advantages) << "\n";
    } catch (const std::exception& e) {
      std::cerr << "line " << line_no << ": " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-hit group RL laboratory"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "write a dataset JSONL file");
  std::string gen_shape = "8,8,8";
  int gen_prompts = 256;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  generate->add_option("--shape", gen_shape, "catalog shape n_a,n_b,n_c");
  generate->add_option("--num-prompts", gen_prompts, "prompts to generate");
  generate->add_option("--seed", gen_seed, "dataset seed");
  generate->add_option("--out", gen_out, "output path")->required();

  // train
  auto* train = app.add_subcommand("train", "run one training configuration");
  std::string train_config_path, train_dataset, train_out, train_mode;
  int train_g = 0, train_steps = -1;
  std::int64_t train_seed = -1;
  train->add_option("--config", train_config_path, "run config JSON file");
  train->add_option("--dataset", train_dataset, "dataset JSONL (else generated)");
  train->add_option("--mode", train_mode,
                    "override: grpo|repair_only|boundary_only|recast");
  train->add_option("--g", train_g, "override group size");
  train->add_option("--steps", train_steps, "override step count");
  train->add_option("--seed", train_seed, "override training seed");
  train->add_option("--out", train_out, "run output directory")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train a modes x G grid");
  std::string sweep_config_path, sweep_out = "runs", sweep_id = "exp";
  std::string sweep_reference = "grpo";
  std::vector<std::string> sweep_modes = {"grpo", "recast"};
  std::vector<int> sweep_g;
  sweep->add_option("--config", sweep_config_path, "run config JSON file");
  sweep->add_option("--modes", sweep_modes, "signal modes")->delimiter(',');
  sweep->add_option("--g", sweep_g, "group sizes")->delimiter(',');
  sweep->add_option("--reference", sweep_reference, "matched-budget baseline mode");
  sweep->add_option("--run-id", sweep_id, "experiment name");
  sweep->add_option("--out", sweep_out, "output root directory");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  std::string eval_policy, eval_dataset;
  std::vector<int> eval_k = {1, 32};
  int eval_samples = 32;
  std::uint64_t eval_seed = 1234, eval_salt = 0;
  eval->add_option("--policy", eval_policy, "policy.bin path")->required();
  eval->add_option("--dataset", eval_dataset, "dataset JSONL path")->required();
  eval->add_option("--k", eval_k, "k values")->delimiter(',');
  eval->add_option("--eval-samples", eval_samples, "samples per prompt");
  eval->add_option("--eval-seed", eval_seed, "evaluation seed");
  eval->add_option("--salt", eval_salt, "eval stream salt");

  // report
  auto* report = app.add_subcommand("report", "summarize a run directory");
  std::string report_dir;
  report->add_option("--run", report_dir, "run or experiment directory")
      ->required();

  // signal
  auto* signal = app.add_subcommand(
      "signal", "JSONL filter: groups on stdin, signals on stdout");
  std::string sig_shape = "8,8,8", sig_mode = "recast";
  double sig_w = 1.0, sig_epsilon = 1e-6;
  signal->add_option("--shape", sig_shape, "catalog shape n_a,n_b,n_c");
  signal->add_option("--mode", sig_mode, "signal mode");
  signal->add_option("--w", sig_w, "contrastive weight");
  signal->add_option("--epsilon", sig_epsilon, "normalization stabilizer");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      const Dataset dataset =
          generate_dataset(parse_shape(gen_shape), gen_prompts, gen_seed);
      save_dataset_jsonl(dataset, gen_out);
      std::cout << "wrote " << dataset.num_prompts() << " prompts to "
                << gen_out << "\n";
    } else if (train->parsed()) {
      RunConfig config = load_run_config(train_config_path);
      if (!train_mode.empty()) config.train.mode = parse_signal_mode(train_mode);
      if (train_g > 0) config.train.group_size = train_g;
      if (train_steps >= 0) config.train.steps = train_steps;
      if (train_seed >= 0) {
        config.train.seed = static_cast<std::uint64_t>(train_seed);
      }
      const Dataset dataset = resolve_dataset(config, train_dataset);
      config.validate();
      const RunArtifacts artifacts = run_training(
          dataset, TabularPolicy(config.shape, config.num_prompts),
          config.train, config.eval);
      write_run_outputs(train_out, config, artifacts);
      std::cout << "mode " << to_string(config.train.mode) << ", G "
                << config.train.group_size << ", " << config.train.steps
                << " steps; final exact Pass@1 "
                << artifacts.curves.at("pass1_exact").points.back().second
                << "; artifacts in " << train_out << "\n";
    } else if (sweep->parsed()) {
      ExperimentManifest manifest;
      manifest.config = load_run_config(sweep_config_path);
      manifest.modes = parse_modes(sweep_modes);
      manifest.g_values = sweep_g;
      manifest.reference_mode = parse_signal_mode(sweep_reference);
      manifest.run_id = sweep_id;
      manifest.out_dir = sweep_out;
      run_experiment(manifest);
      std::cout << "experiment written to " << sweep_out << "/" << sweep_id
                << "\n";
    } else if (eval->parsed()) {
      const TabularPolicy policy = load_policy(eval_policy);
      const Dataset dataset = load_dataset_jsonl(eval_dataset);
      EvalConfig cfg;
      cfg.k_values = eval_k;
      cfg.eval_samples = eval_samples;
      cfg.eval_seed = eval_seed;
      const EvalResult result = evaluate_policy(policy, dataset, cfg, eval_salt);
      nlohmann::json doc;
      for (const auto& [k, v] : result.pass_at) {
        doc["pass_at"][std::to_string(k)] = v;
      }
      for (const auto& [k, v] : result.recall_at) {
        doc["recall_at"][std::to_string(k)] = v;
      }
      doc["pass1_exact"] = result.pass1_exact;
      std::cout << doc.dump(2) << "\n";
    } else if (report->parsed()) {
      return run_report(report_dir);
    } else if (signal->parsed()) {
      return run_signal_filter(parse_shape(sig_shape),
                               parse_signal_mode(sig_mode), sig_w, sig_epsilon);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
