#pragma once

// KL-regularized policy-gradient training over scored, signaled groups.
//
// The per-step objective, maximized by plain gradient ascent, is
//   J = (1/B) sum_q [ (1/G) sum_i A_i log pi_theta(R_i|q)
//                     - beta KL(pi_theta(.|q) || pi_ref(.|q)) ]
// with B the groups in the batch, A_i the advantage from the configured
// signal mode, and KL the exact full-catalog divergence. There is no ratio
// clipping: the objective uses log pi_theta directly, and with
// refresh_old_every = 1 the rollout policy equals pi_theta at sampling
// time, making the on-policy reading exact. Reported losses are the
// negated objective terms (loss_pg = -PG term, loss_kl = mean KL).
//
// The log-prob of a response is the log-prob of its sampled triple; a
// malformed response keeps its triple (the corruption models a formatting
// failure, not a different sample), and an injected anchor uses the
// anchor's own triple with no importance correction.

#include <cstdint>
#include <string>
#include <vector>

#include "recast/env.hpp"
#include "recast/scoring.hpp"
#include "recast/signals.hpp"

namespace recast {

struct TrainConfig {
  SignalMode mode = SignalMode::recast;
  int group_size = 8;  // G; serialized under the key "G"
  double beta = 0.01;
  double learning_rate = 0.1;
  int steps = 2000;
  int prompts_per_step = 32;
  double w = 1.0;
  double epsilon = 1e-6;
  double c_roll = 1.0;
  double c_upd = 1.0;
  int refresh_old_every = 1;
  std::uint64_t seed = 1;
  // Rollout-time corruption rate; lives here rather than in the dataset so
  // train_step is self-contained given (state, dataset, config).
  double malform_rate = 0.02;
  PhiWeights phi;

  // Throws std::invalid_argument on out-of-range fields.
  void validate() const;
  SignalConfig signal_config() const { return SignalConfig{mode, w, epsilon}; }
};

// JSON round-trip; fields mirror TrainConfig, group_size under "G".
// Unknown keys are rejected except the reserved "env" and "eval" sections
// used by the experiment wrapper.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& config);

struct TrainState {
  TabularPolicy policy;      // pi_theta, updated every step
  TabularPolicy old_policy;  // rollout snapshot, refreshed per config
  TabularPolicy ref_policy;  // KL reference, frozen at initialization
  int step = 0;
};

// All three policies start as copies of `initial`.
TrainState make_train_state(TabularPolicy initial);
// Uniform (zero-logit) initialization.
TrainState make_train_state(const CatalogShape& shape, int num_prompts);

struct StepReport {
  int step = 0;
  double loss_pg = 0.0;
  double loss_kl = 0.0;
  double grad_norm = 0.0;
  std::int64_t groups_total = 0;
  std::int64_t groups_all_zero = 0;    // pre-repair hit_count = 0
  std::int64_t groups_single_hit = 0;  // pre-repair hit_count = 1
  std::int64_t zero_reward_samples = 0;
  std::int64_t repair_triggers = 0;
  std::int64_t naturally_trainable = 0;  // pre-repair hit_count >= 1
  std::int64_t skipped_contrasts = 0;
  std::int64_t active_responses = 0;  // update width: G per group for
                                      // grpo/repair_only, |active| otherwise
  std::int64_t active_tokens = 0;
  std::int64_t total_tokens = 0;
  double cost_base = 0.0;
  double cost_method = 0.0;
};

std::string step_report_csv_header();
std::string step_report_csv_row(const StepReport& report);

// Flat vector matching the policy parameter layout.
using GradientRecord = std::vector<double>;

// Exact KL(policy || ref) for one prompt, over the full item distribution.
double kl_divergence(const TabularPolicy& policy, const TabularPolicy& ref,
                     int prompt_id);

// One batch element: a signaled group plus the gradient triple per member
// (the sampled id, or the anchor id at a repaired index).
struct SignaledGroup {
  ScoredGroup group;
  AdvantageVector advantages;
  std::vector<SemanticId> triples;
};

struct ObjectiveParts {
  double pg = 0.0;  // (1/B) sum_q (1/G) sum_i A_i log pi(R_i|q)
  double kl = 0.0;  // (1/B) sum_q KL(q)
  double value(double beta) const { return pg - beta * kl; }
};

ObjectiveParts objective_parts(const TrainState& state,
                               const std::vector<SignaledGroup>& batch,
                               const TrainConfig& config);
double objective_value(const TrainState& state,
                       const std::vector<SignaledGroup>& batch,
                       const TrainConfig& config);

// Exact ascent gradient of the objective with respect to state.policy's
// logits. With filter_active (the production path) only members with
// nonzero advantage enter the PG term; the result is identical to the
// unfiltered sum because zero-advantage terms contribute exactly zero.
GradientRecord objective_gradient(const TrainState& state,
                                  const std::vector<SignaledGroup>& batch,
                                  const TrainConfig& config,
                                  bool filter_active = true);

struct CostPair {
  double base = 0.0;    // G*(c_roll + c_upd), per group
  double method = 0.0;  // grpo/repair_only: base; boundary/recast: G*c_roll + 2*c_upd
};

CostPair cost_model(int group_size, double c_roll, double c_upd,
                    SignalMode mode);

// One full step: refresh pi_old per schedule, sample prompts_per_step
// groups from pi_old (prompts drawn without replacement; rollout streams
// keyed by (seed, prompt_id, step)), score, build signals, take one
// gradient-ascent step, and report. Deterministic given (config.seed,
// state.step).
StepReport train_step(TrainState& state, const Dataset& dataset,
                      const TrainConfig& config);

}  // namespace recast
