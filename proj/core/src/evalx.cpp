#include "recast/evalx.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

namespace recast {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// One prompt's eval samples under the per-prompt stream (eval_seed,
// prompt_id, salt); each sample goes through render + parse so the metric
// sees exactly what the response grammar preserves.
std::vector<IdSet> sample_prompt_table(const TabularPolicy& policy,
                                       const Dataset& dataset, int prompt_id,
                                       const EvalConfig& cfg,
                                       std::uint64_t salt) {
  Rng rng(seed_for(cfg.eval_seed, RngPurpose::eval,
                   static_cast<std::uint64_t>(prompt_id), salt));
  std::vector<IdSet> sets;
  sets.reserve(static_cast<std::size_t>(cfg.eval_samples));
  for (int s = 0; s < cfg.eval_samples; ++s) {
    const SemanticId id = policy.sample(prompt_id, rng);
    sets.push_back(parse_response(render_sid(id).text, dataset.shape));
  }
  return sets;
}

void check_eval_pair(const TabularPolicy& policy, const Dataset& dataset) {
  if (!(policy.shape() == dataset.shape) ||
      policy.num_prompts() != dataset.num_prompts()) {
    throw std::invalid_argument("policy does not match the dataset");
  }
}

double mean_ratio(const std::vector<StepReport>& steps, std::size_t begin,
                  std::size_t end, std::int64_t StepReport::*field) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    num += static_cast<double>(steps[i].*field);
    den += static_cast<double>(steps[i].groups_total);
  }
  return den > 0.0 ? num / den : 0.0;
}

std::array<double, 3> thirds_ratio(const std::vector<StepReport>& steps,
                                   std::int64_t StepReport::*field) {
  const std::size_t n = steps.size();
  const std::size_t a = n / 3, b = 2 * n / 3;
  return {mean_ratio(steps, 0, a, field), mean_ratio(steps, a, b, field),
          mean_ratio(steps, b, n, field)};
}

std::string cell_name(SignalMode mode, int g) {
  return std::string(to_string(mode)) + "_G" + std::to_string(g);
}

}  // namespace

void EvalConfig::validate() const {
  if (k_values.empty()) throw std::invalid_argument("k_values must be nonempty");
  if (eval_samples < 1) throw std::invalid_argument("eval_samples must be >= 1");
  for (int k : k_values) {
    if (k < 1 || k > eval_samples) {
      throw std::invalid_argument("every k must be in [1, eval_samples]");
    }
  }
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
}

void LearningCurve::append(int step, double value) {
  if (!points.empty() && step <= points.back().first) {
    throw std::invalid_argument("curve steps must be strictly increasing");
  }
  points.emplace_back(step, value);
}

CompositionStats composition_stats(const std::vector<ScoredGroup>& groups) {
  if (groups.empty()) {
    throw std::invalid_argument("composition_stats needs at least one group");
  }
  CompositionStats stats;
  std::int64_t responses = 0, zero_rewards = 0;
  for (const ScoredGroup& group : groups) {
    if (group.repaired) {
      throw std::invalid_argument("composition_stats expects pre-repair groups");
    }
    const int hits = hit_count(group);
    stats.all_zero_ratio += hits == 0 ? 1.0 : 0.0;
    stats.single_hit_ratio += hits == 1 ? 1.0 : 0.0;
    responses += group.size();
    for (double r : group.rewards) zero_rewards += r == 0.0 ? 1 : 0;
  }
  const double n = static_cast<double>(groups.size());
  stats.all_zero_ratio /= n;
  stats.single_hit_ratio /= n;
  stats.zero_reward_sample_ratio =
      static_cast<double>(zero_rewards) / static_cast<double>(responses);
  return stats;
}

double recall_fraction(const std::vector<IdSet>& responses,
                       const IdSet& target, int k) {
  if (target.empty()) return 0.0;
  IdSet covered;
  const int limit = std::min<int>(k, static_cast<int>(responses.size()));
  for (int i = 0; i < limit; ++i) {
    for (const SemanticId& id : responses[i].ids) {
      if (target.contains(id)) covered.insert(id);
    }
  }
  return static_cast<double>(covered.size()) /
         static_cast<double>(target.size());
}

double pass_at_k(const TabularPolicy& policy, const Dataset& dataset, int k,
                 const EvalConfig& cfg) {
  cfg.validate();
  check_eval_pair(policy, dataset);
  if (k < 1 || k > cfg.eval_samples) {
    throw std::invalid_argument("k must be in [1, eval_samples]");
  }
  double hits = 0.0;
  for (const PromptSpec& prompt : dataset.prompts) {
    const std::vector<IdSet> table =
        sample_prompt_table(policy, dataset, prompt.prompt_id, cfg, 0);
    for (int i = 0; i < k; ++i) {
      if (table[i].contains(prompt.target)) {
        hits += 1.0;
        break;
      }
    }
  }
  return hits / static_cast<double>(dataset.num_prompts());
}

double recall_at_k(const TabularPolicy& policy, const Dataset& dataset, int k,
                   const EvalConfig& cfg) {
  cfg.validate();
  check_eval_pair(policy, dataset);
  if (k < 1 || k > cfg.eval_samples) {
    throw std::invalid_argument("k must be in [1, eval_samples]");
  }
  double total = 0.0;
  for (const PromptSpec& prompt : dataset.prompts) {
    const std::vector<IdSet> table =
        sample_prompt_table(policy, dataset, prompt.prompt_id, cfg, 0);
    total += recall_fraction(table, make_id_set({prompt.target}), k);
  }
  return total / static_cast<double>(dataset.num_prompts());
}

double pass_at_1_exact(const TabularPolicy& policy, const Dataset& dataset) {
  check_eval_pair(policy, dataset);
  double total = 0.0;
  for (const PromptSpec& prompt : dataset.prompts) {
    const std::vector<double> joint = policy.item_distribution(prompt.prompt_id);
    total += joint[static_cast<std::size_t>(dataset.shape.index_of(prompt.target))];
  }
  return total / static_cast<double>(dataset.num_prompts());
}

EvalResult evaluate_policy(const TabularPolicy& policy, const Dataset& dataset,
                           const EvalConfig& cfg, std::uint64_t salt) {
  cfg.validate();
  check_eval_pair(policy, dataset);
  EvalResult result;
  result.pass_at.reserve(cfg.k_values.size());
  result.recall_at.reserve(cfg.k_values.size());
  std::vector<double> pass(cfg.k_values.size(), 0.0);
  std::vector<double> recall(cfg.k_values.size(), 0.0);
  for (const PromptSpec& prompt : dataset.prompts) {
    const std::vector<IdSet> table =
        sample_prompt_table(policy, dataset, prompt.prompt_id, cfg, salt);
    // First sample index containing the target; all K share the table.
    int first_hit = cfg.eval_samples;
    for (int i = 0; i < cfg.eval_samples; ++i) {
      if (table[i].contains(prompt.target)) {
        first_hit = i;
        break;
      }
    }
    for (std::size_t j = 0; j < cfg.k_values.size(); ++j) {
      if (first_hit < cfg.k_values[j]) pass[j] += 1.0;
      recall[j] += recall_fraction(table, make_id_set({prompt.target}),
                                   cfg.k_values[j]);
    }
  }
  const double n = static_cast<double>(dataset.num_prompts());
  for (std::size_t j = 0; j < cfg.k_values.size(); ++j) {
    result.pass_at.emplace_back(cfg.k_values[j], pass[j] / n);
    result.recall_at.emplace_back(cfg.k_values[j], recall[j] / n);
  }
  result.pass1_exact = pass_at_1_exact(policy, dataset);
  return result;
}

std::optional<double> matched_budget_ratio(const LearningCurve& candidate,
                                           double reference_value,
                                           int reference_steps) {
  if (reference_steps < 1) {
    throw std::invalid_argument("reference_steps must be >= 1");
  }
  for (const auto& [step, value] : candidate.points) {
    if (value >= reference_value) {
      return static_cast<double>(step) / static_cast<double>(reference_steps);
    }
  }
  return std::nullopt;
}

void RunConfig::validate() const {
  shape.validate();
  if (shape.item_count() < 2) {
    throw std::invalid_argument("catalog must hold at least 2 items");
  }
  if (num_prompts < 1) throw std::invalid_argument("num_prompts must be >= 1");
  train.validate();
  eval.validate();
  if (train.prompts_per_step > num_prompts) {
    throw std::invalid_argument("prompts_per_step exceeds num_prompts");
  }
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig config;
  config.train = train_config_from_json(text);
  const json doc = json::parse(text);
  if (doc.contains("env")) {
    for (const auto& [key, value] : doc["env"].items()) {
      if (key == "shape") {
        config.shape = CatalogShape{value[0].get<int>(), value[1].get<int>(),
                                    value[2].get<int>()};
      } else if (key == "num_prompts") {
        config.num_prompts = value.get<int>();
      } else if (key == "dataset_seed") {
        config.dataset_seed = value.get<std::uint64_t>();
      } else {
        throw std::invalid_argument("unknown env key: " + key);
      }
    }
  }
  if (doc.contains("eval")) {
    for (const auto& [key, value] : doc["eval"].items()) {
      if (key == "k_values") {
        config.eval.k_values = value.get<std::vector<int>>();
      } else if (key == "eval_samples") {
        config.eval.eval_samples = value.get<int>();
      } else if (key == "eval_seed") {
        config.eval.eval_seed = value.get<std::uint64_t>();
      } else if (key == "eval_every") {
        config.eval.eval_every = value.get<int>();
      } else {
        throw std::invalid_argument("unknown eval key: " + key);
      }
    }
  }
  config.validate();
  return config;
}

std::string run_config_to_json(const RunConfig& config) {
  json doc = json::parse(train_config_to_json(config.train));
  doc["env"] = {{"shape", {config.shape.n_a, config.shape.n_b, config.shape.n_c}},
                {"num_prompts", config.num_prompts},
                {"dataset_seed", config.dataset_seed}};
  doc["eval"] = {{"k_values", config.eval.k_values},
                 {"eval_samples", config.eval.eval_samples},
                 {"eval_seed", config.eval.eval_seed},
                 {"eval_every", config.eval.eval_every}};
  return doc.dump(2);
}

RunArtifacts run_training(const Dataset& dataset, TabularPolicy initial,
                          const TrainConfig& train, const EvalConfig& eval) {
  train.validate();
  eval.validate();
  TrainState state = make_train_state(std::move(initial));

  RunArtifacts artifacts;
  auto curve = [&artifacts](const std::string& name) -> LearningCurve& {
    LearningCurve& c = artifacts.curves[name];
    if (c.metric.empty()) c.metric = name;
    return c;
  };
  auto record_eval = [&](int step) {
    const EvalResult r = evaluate_policy(state.policy, dataset, eval,
                                         static_cast<std::uint64_t>(step));
    curve("pass1_exact").append(step, r.pass1_exact);
    for (const auto& [k, v] : r.pass_at) {
      curve("pass_at_" + std::to_string(k)).append(step, v);
    }
    for (const auto& [k, v] : r.recall_at) {
      curve("recall_at_" + std::to_string(k)).append(step, v);
    }
  };

  artifacts.steps.reserve(static_cast<std::size_t>(train.steps));
  for (int s = 0; s < train.steps; ++s) {
    if (s % eval.eval_every == 0) record_eval(s);
    artifacts.steps.push_back(train_step(state, dataset, train));
  }
  record_eval(train.steps);
  artifacts.final_policy = std::move(state.policy);
  return artifacts;
}

void write_run_outputs(const std::string& dir, const RunConfig& config,
                       const RunArtifacts& artifacts) {
  const fs::path base(dir);
  fs::create_directories(base);

  std::string steps_csv = step_report_csv_header();
  steps_csv += '\n';
  for (const StepReport& r : artifacts.steps) {
    steps_csv += step_report_csv_row(r);
    steps_csv += '\n';
  }
  write_text(base / "steps.csv", steps_csv);

  for (const auto& [name, curve] : artifacts.curves) {
    std::string csv = "step," + name + "\n";
    for (const auto& [step, value] : curve.points) {
      csv += std::to_string(step);
      csv += ',';
      csv += format_double(value);
      csv += '\n';
    }
    write_text(base / "curves" / (name + ".csv"), csv);
  }

  save_policy(artifacts.final_policy, (base / "policy.bin").string());

  // Plot data: batch composition per step, and all learning curves joined
  // on their shared eval steps.
  std::string comp =
      "# step all_zero_ratio single_hit_ratio zero_reward_sample_ratio\n";
  for (const StepReport& r : artifacts.steps) {
    const double groups = static_cast<double>(r.groups_total);
    const double responses =
        static_cast<double>(r.groups_total) *
        static_cast<double>(config.train.group_size);
    comp += std::to_string(r.step);
    comp += ' ';
    comp += format_double(static_cast<double>(r.groups_all_zero) / groups);
    comp += ' ';
    comp += format_double(static_cast<double>(r.groups_single_hit) / groups);
    comp += ' ';
    comp += format_double(static_cast<double>(r.zero_reward_samples) / responses);
    comp += '\n';
  }
  write_text(base / "plots" / "composition.dat", comp);

  std::string curves_dat = "# step";
  for (const auto& [name, curve] : artifacts.curves) {
    curves_dat += ' ';
    curves_dat += name;
  }
  curves_dat += '\n';
  if (!artifacts.curves.empty()) {
    const LearningCurve& first = artifacts.curves.begin()->second;
    for (std::size_t i = 0; i < first.points.size(); ++i) {
      curves_dat += std::to_string(first.points[i].first);
      for (const auto& [name, curve] : artifacts.curves) {
        curves_dat += ' ';
        curves_dat += format_double(curve.points[i].second);
      }
      curves_dat += '\n';
    }
  }
  write_text(base / "plots" / "learning_curves.dat", curves_dat);

  json summary;
  summary["mode"] = to_string(config.train.mode);
  summary["G"] = config.train.group_size;
  summary["config"] = json::parse(run_config_to_json(config));
  json final_metrics;
  for (const auto& [name, curve] : artifacts.curves) {
    final_metrics[name] = curve.points.back().second;
  }
  summary["final"] = std::move(final_metrics);

  const std::size_t n = artifacts.steps.size();
  if (n > 0) {
    const std::size_t window = std::max<std::size_t>(1, n / 10);
    json composition;
    json first_window;
    first_window["all_zero_ratio"] =
        mean_ratio(artifacts.steps, 0, window, &StepReport::groups_all_zero);
    first_window["single_hit_ratio"] =
        mean_ratio(artifacts.steps, 0, window, &StepReport::groups_single_hit);
    json last_window;
    last_window["all_zero_ratio"] = mean_ratio(artifacts.steps, n - window, n,
                                               &StepReport::groups_all_zero);
    last_window["single_hit_ratio"] = mean_ratio(
        artifacts.steps, n - window, n, &StepReport::groups_single_hit);
    composition["first_window"] = std::move(first_window);
    composition["last_window"] = std::move(last_window);
    summary["composition"] = std::move(composition);

    const std::array<double, 3> repair =
        thirds_ratio(artifacts.steps, &StepReport::repair_triggers);
    const std::array<double, 3> natural =
        thirds_ratio(artifacts.steps, &StepReport::naturally_trainable);
    summary["repair_dynamics"] = {
        {"repair_trigger_thirds", repair},
        {"naturally_trainable_thirds", natural}};

    double cost_base = 0.0, cost_method = 0.0;
    std::int64_t active_tokens = 0, total_tokens = 0;
    for (const StepReport& r : artifacts.steps) {
      cost_base += r.cost_base;
      cost_method += r.cost_method;
      active_tokens += r.active_tokens;
      total_tokens += r.total_tokens;
    }
    summary["cost"] = {{"total_base", cost_base},
                       {"total_method", cost_method},
                       {"method_over_base", cost_method / cost_base}};
    summary["tokens"] = {
        {"active", active_tokens},
        {"total", total_tokens},
        {"active_over_total", total_tokens > 0
                                  ? static_cast<double>(active_tokens) /
                                        static_cast<double>(total_tokens)
                                  : 0.0}};
  }
  write_text(base / "summary.json", summary.dump(2) + "\n");
}

void run_experiment(const ExperimentManifest& manifest) {
  manifest.config.validate();
  std::vector<int> g_values = manifest.g_values;
  if (g_values.empty()) g_values.push_back(manifest.config.train.group_size);

  const Dataset dataset = generate_dataset(
      manifest.config.shape, manifest.config.num_prompts,
      manifest.config.dataset_seed);
  const TabularPolicy initial(manifest.config.shape,
                              manifest.config.num_prompts);
  const fs::path base = fs::path(manifest.out_dir) / manifest.run_id;

  struct Cell {
    SignalMode mode;
    int g;
    double final_pass1_exact;
    LearningCurve curve;
  };
  std::vector<Cell> cells;
  for (int g : g_values) {
    for (SignalMode mode : manifest.modes) {
      RunConfig cell_config = manifest.config;
      cell_config.train.mode = mode;
      cell_config.train.group_size = g;
      RunArtifacts artifacts =
          run_training(dataset, initial, cell_config.train,
                       manifest.config.eval);
      const LearningCurve& exact = artifacts.curves.at("pass1_exact");
      cells.push_back(Cell{mode, g, exact.points.back().second, exact});
      write_run_outputs((base / cell_name(mode, g)).string(), cell_config,
                        artifacts);
    }
  }

  json summary;
  summary["run_id"] = manifest.run_id;
  summary["reference_mode"] = to_string(manifest.reference_mode);
  json mode_names = json::array();
  for (SignalMode mode : manifest.modes) mode_names.push_back(to_string(mode));
  summary["modes"] = std::move(mode_names);
  summary["g_values"] = g_values;
  summary["config"] = json::parse(run_config_to_json(manifest.config));

  json cell_table;
  for (const Cell& cell : cells) {
    json entry;
    entry["mode"] = to_string(cell.mode);
    entry["G"] = cell.g;
    entry["final_pass1_exact"] = cell.final_pass1_exact;
    const Cell* reference = nullptr;
    for (const Cell& other : cells) {
      if (other.mode == manifest.reference_mode && other.g == cell.g) {
        reference = &other;
      }
    }
    if (reference) {
      const std::optional<double> ratio = matched_budget_ratio(
          cell.curve, reference->final_pass1_exact, manifest.config.train.steps);
      entry["matched_budget_ratio"] = ratio ? json(*ratio) : json(nullptr);
    } else {
      entry["matched_budget_ratio"] = nullptr;
    }
    cell_table[cell_name(cell.mode, cell.g)] = std::move(entry);
  }
  summary["cells"] = std::move(cell_table);
  write_text(base / "summary.json", summary.dump(2) + "\n");

  // Update-cost scaling (the O(1) pair versus group-wide updates), over the
  // configured G grid or a default span when the sweep has a single G.
  std::vector<int> grid = g_values;
  if (grid.size() == 1) grid = {2, 4, 8, 16, 32, 64};
  std::string cost_dat = "# G cost_base cost_pair_method update_ratio\n";
  for (int g : grid) {
    const CostPair cost = cost_model(g, manifest.config.train.c_roll,
                                     manifest.config.train.c_upd,
                                     SignalMode::recast);
    cost_dat += std::to_string(g);
    cost_dat += ' ';
    cost_dat += format_double(cost.base);
    cost_dat += ' ';
    cost_dat += format_double(cost.method);
    cost_dat += ' ';
    cost_dat += format_double(2.0 / static_cast<double>(g));
    cost_dat += '\n';
  }
  write_text(base / "plots" / "cost_vs_g.dat", cost_dat);
}

}  // namespace recast
