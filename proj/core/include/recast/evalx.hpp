#pragma once

// Evaluation metrics, degeneracy diagnostics, matched-budget analysis, and
// the experiment runner that trains each configured signal mode from an
// identical initial state (same dataset, same initial policy, same rollout
// and eval seeds) so runs differ only in signal construction.
//
// Pass@K draws eval_samples fresh responses per prompt from per-prompt
// streams keyed by (eval_seed, prompt_id, eval step); all K values at one
// eval point share that sample table, so Pass@K is monotone in K. Pass@1
// also has an exact variant, the mean over prompts of the policy's
// probability of the target item, which is free of sampling noise and is
// the metric used for matched-budget comparisons.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "recast/env.hpp"
#include "recast/signals.hpp"
#include "recast/trainer.hpp"

namespace recast {

struct EvalConfig {
  std::vector<int> k_values = {1, 32};
  int eval_samples = 32;  // responses drawn per prompt; >= max(k_values)
  std::uint64_t eval_seed = 1234;
  int eval_every = 25;  // training steps between eval points

  void validate() const;
};

struct LearningCurve {
  std::string metric;
  std::vector<std::pair<int, double>> points;

  // Throws std::invalid_argument unless step exceeds the last step.
  void append(int step, double value);
};

// Pre-repair batch composition (throws if any group is repaired).
struct CompositionStats {
  double all_zero_ratio = 0.0;
  double single_hit_ratio = 0.0;
  double zero_reward_sample_ratio = 0.0;
};
CompositionStats composition_stats(const std::vector<ScoredGroup>& groups);

// Per-prompt recall kernel: |(union of the first k parsed sets)
// intersected with target| / |target|.
double recall_fraction(const std::vector<IdSet>& responses,
                       const IdSet& target, int k);

// Fraction of prompts whose target appears in the parsed sets of the first
// k sampled responses. Standalone calls use the step-0 sample table.
double pass_at_k(const TabularPolicy& policy, const Dataset& dataset, int k,
                 const EvalConfig& cfg);

// Mean over prompts of |union of the first k parsed sets intersected with
// the target set| / |target set|; equals pass_at_k on single-target data.
double recall_at_k(const TabularPolicy& policy, const Dataset& dataset, int k,
                   const EvalConfig& cfg);

// Exact Pass@1: mean over prompts of the policy probability of the target.
double pass_at_1_exact(const TabularPolicy& policy, const Dataset& dataset);

struct EvalResult {
  std::vector<std::pair<int, double>> pass_at;    // (k, value) per k_values
  std::vector<std::pair<int, double>> recall_at;  // (k, value) per k_values
  double pass1_exact = 0.0;
};

// One eval point; `salt` keys the per-prompt sample streams (run_training
// passes the training step so successive evals draw fresh samples).
EvalResult evaluate_policy(const TabularPolicy& policy, const Dataset& dataset,
                           const EvalConfig& cfg, std::uint64_t salt);

// Smallest recorded step at which the candidate curve reaches
// reference_value, divided by reference_steps. No interpolation: ratios are
// quantized to the eval cadence. nullopt when the curve never crosses.
std::optional<double> matched_budget_ratio(const LearningCurve& candidate,
                                           double reference_value,
                                           int reference_steps);

// Full run configuration: trainer fields flat, environment and eval nested.
struct RunConfig {
  TrainConfig train;
  CatalogShape shape{8, 8, 8};
  int num_prompts = 256;
  std::uint64_t dataset_seed = 7;
  EvalConfig eval;

  void validate() const;
};

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);

struct RunArtifacts {
  std::vector<StepReport> steps;
  std::map<std::string, LearningCurve> curves;  // pass1_exact, pass_at_k, recall_at_k
  TabularPolicy final_policy;
};

// Trains for train.steps steps with an eval point every eval_every steps
// (step 0 is evaluated before any update; a final point lands after the
// last update).
RunArtifacts run_training(const Dataset& dataset, TabularPolicy initial,
                          const TrainConfig& train, const EvalConfig& eval);

// Writes the per-run artifact set under dir: steps.csv, curves/<metric>.csv,
// summary.json, plots/*.dat, policy.bin.
void write_run_outputs(const std::string& dir, const RunConfig& config,
                       const RunArtifacts& artifacts);

struct ExperimentManifest {
  std::string run_id = "exp";
  RunConfig config;
  std::vector<SignalMode> modes = {SignalMode::grpo, SignalMode::recast};
  std::vector<int> g_values;  // empty: use config.train.group_size only
  SignalMode reference_mode = SignalMode::grpo;  // matched-budget baseline
  std::string out_dir = "runs";
};

// Runs modes x G cells into <out_dir>/<run_id>/<mode>_G<g>/ and writes the
// experiment-level summary.json (matched-budget table against the
// reference mode's final exact Pass@1 at the same G) and plots.
void run_experiment(const ExperimentManifest& manifest);

}  // namespace recast
