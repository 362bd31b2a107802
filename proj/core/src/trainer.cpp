#include "recast/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

namespace recast {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool is_pair_mode(SignalMode mode) {
  return mode == SignalMode::boundary_only || mode == SignalMode::recast;
}

void check_batch_element(const SignaledGroup& sg, const TrainConfig& config) {
  const std::size_t g = sg.group.responses.size();
  if (sg.advantages.values.size() != g || sg.triples.size() != g) {
    throw std::invalid_argument(
        "advantages and triples must match the group size");
  }
  if (sg.advantages.mode != config.mode) {
    throw std::invalid_argument(
        "batch advantage mode does not match the configured mode");
  }
}

// Adds coeff * dKL(policy || ref)/dlogits for one prompt. Everything is
// derived from the two exact joints: with pd(x) = p(x) (log p - log ref)(x)
// and S* its partial sums,
//   d/dz_a[k]      = S_a(k) - pa(k) S
//   d/dz_b[a][k]   = S_ab(a,k) - pb(k|a) S_a(a)
//   d/dz_c[a,b][k] = pd(a,b,k) - pc(k|a,b) S_ab(a,b)
void accumulate_kl_gradient(GradientRecord& grad, const TabularPolicy& policy,
                            const TabularPolicy& ref, int prompt,
                            double coeff) {
  const CatalogShape& shape = policy.shape();
  const std::vector<double> joint = policy.item_distribution(prompt);
  const std::vector<double> jref = ref.item_distribution(prompt);
  const std::size_t items = joint.size();

  std::vector<double> pd(items);
  for (std::size_t x = 0; x < items; ++x) {
    pd[x] = joint[x] * (std::log(joint[x]) - std::log(jref[x]));
  }

  const std::size_t nab =
      static_cast<std::size_t>(shape.n_a) * static_cast<std::size_t>(shape.n_b);
  std::vector<double> p_ab(nab, 0.0), s_ab(nab, 0.0);
  for (std::size_t ab = 0; ab < nab; ++ab) {
    const std::size_t base = ab * static_cast<std::size_t>(shape.n_c);
    for (int c = 0; c < shape.n_c; ++c) {
      p_ab[ab] += joint[base + c];
      s_ab[ab] += pd[base + c];
    }
  }
  std::vector<double> p_a(shape.n_a, 0.0), s_a(shape.n_a, 0.0);
  for (int a = 0; a < shape.n_a; ++a) {
    for (int b = 0; b < shape.n_b; ++b) {
      p_a[a] += p_ab[a * shape.n_b + b];
      s_a[a] += s_ab[a * shape.n_b + b];
    }
  }
  double s = 0.0;
  for (int a = 0; a < shape.n_a; ++a) s += s_a[a];

  for (int k = 0; k < shape.n_a; ++k) {
    grad[policy.offset_a(prompt, k)] += coeff * (s_a[k] - p_a[k] * s);
  }
  for (int a = 0; a < shape.n_a; ++a) {
    const double pa = std::max(p_a[a], 1e-300);
    for (int k = 0; k < shape.n_b; ++k) {
      const std::size_t ab = static_cast<std::size_t>(a * shape.n_b + k);
      grad[policy.offset_b(prompt, a, k)] +=
          coeff * (s_ab[ab] - (p_ab[ab] / pa) * s_a[a]);
    }
  }
  for (int a = 0; a < shape.n_a; ++a) {
    for (int b = 0; b < shape.n_b; ++b) {
      const std::size_t ab = static_cast<std::size_t>(a * shape.n_b + b);
      const double pab = std::max(p_ab[ab], 1e-300);
      const std::size_t base = ab * static_cast<std::size_t>(shape.n_c);
      for (int k = 0; k < shape.n_c; ++k) {
        grad[policy.offset_c(prompt, a, b, k)] +=
            coeff * (pd[base + k] - (joint[base + k] / pab) * s_ab[ab]);
      }
    }
  }
}

// Adds lambda * dlog pi(triple | prompt)/dlogits: +lambda on the chosen
// logit and -lambda * softmax on its slice, at each of the three levels.
void accumulate_logprob_gradient(GradientRecord& grad,
                                 const TabularPolicy& policy, int prompt,
                                 const SemanticId& t, double lambda) {
  const CatalogShape& shape = policy.shape();
  const std::vector<double> pa = policy.level_a_probs(prompt);
  grad[policy.offset_a(prompt, t.a)] += lambda;
  for (int k = 0; k < shape.n_a; ++k) {
    grad[policy.offset_a(prompt, k)] -= lambda * pa[k];
  }
  const std::vector<double> pb = policy.level_b_probs(prompt, t.a);
  grad[policy.offset_b(prompt, t.a, t.b)] += lambda;
  for (int k = 0; k < shape.n_b; ++k) {
    grad[policy.offset_b(prompt, t.a, k)] -= lambda * pb[k];
  }
  const std::vector<double> pc = policy.level_c_probs(prompt, t.a, t.b);
  grad[policy.offset_c(prompt, t.a, t.b, t.c)] += lambda;
  for (int k = 0; k < shape.n_c; ++k) {
    grad[policy.offset_c(prompt, t.a, t.b, k)] -= lambda * pc[k];
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("G must be at least 2");
  if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning_rate must be > 0");
  }
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (prompts_per_step < 1) {
    throw std::invalid_argument("prompts_per_step must be >= 1");
  }
  if (!(w > 0.0)) throw std::invalid_argument("w must be > 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (!(c_roll > 0.0) || !(c_upd > 0.0)) {
    throw std::invalid_argument("cost constants must be > 0");
  }
  if (refresh_old_every < 1) {
    throw std::invalid_argument("refresh_old_every must be >= 1");
  }
  if (!(malform_rate >= 0.0 && malform_rate < 1.0)) {
    throw std::invalid_argument("malform_rate must be in [0, 1)");
  }
  if (!(phi.exact > 0.0) || phi.branch > phi.exact || phi.root > phi.branch ||
      phi.root < 0.0) {
    throw std::invalid_argument("phi weights must satisfy exact >= branch >= root >= 0, exact > 0");
  }
}

TrainConfig train_config_from_json(const std::string& text) {
  const json doc = json::parse(text);
  if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig config;
  for (const auto& [key, value] : doc.items()) {
    if (key == "mode") config.mode = parse_signal_mode(value.get<std::string>());
    else if (key == "G") config.group_size = value.get<int>();
    else if (key == "beta") config.beta = value.get<double>();
    else if (key == "learning_rate") config.learning_rate = value.get<double>();
    else if (key == "steps") config.steps = value.get<int>();
    else if (key == "prompts_per_step") config.prompts_per_step = value.get<int>();
    else if (key == "w") config.w = value.get<double>();
    else if (key == "epsilon") config.epsilon = value.get<double>();
    else if (key == "c_roll") config.c_roll = value.get<double>();
    else if (key == "c_upd") config.c_upd = value.get<double>();
    else if (key == "refresh_old_every") config.refresh_old_every = value.get<int>();
    else if (key == "seed") config.seed = value.get<std::uint64_t>();
    else if (key == "malform_rate") config.malform_rate = value.get<double>();
    else if (key == "phi") {
      config.phi.exact = value.value("exact", config.phi.exact);
      config.phi.branch = value.value("branch", config.phi.branch);
      config.phi.root = value.value("root", config.phi.root);
    } else if (key == "env" || key == "eval") {
      // Experiment-wrapper sections, parsed elsewhere.
    } else {
      throw std::invalid_argument("unknown config key: " + key);
    }
  }
  config.validate();
  return config;
}

std::string train_config_to_json(const TrainConfig& config) {
  json doc;
  doc["mode"] = to_string(config.mode);
  doc["G"] = config.group_size;
  doc["beta"] = config.beta;
  doc["learning_rate"] = config.learning_rate;
  doc["steps"] = config.steps;
  doc["prompts_per_step"] = config.prompts_per_step;
  doc["w"] = config.w;
  doc["epsilon"] = config.epsilon;
  doc["c_roll"] = config.c_roll;
  doc["c_upd"] = config.c_upd;
  doc["refresh_old_every"] = config.refresh_old_every;
  doc["seed"] = config.seed;
  doc["malform_rate"] = config.malform_rate;
  doc["phi"] = {{"exact", config.phi.exact},
                {"branch", config.phi.branch},
                {"root", config.phi.root}};
  return doc.dump(2);
}

TrainState make_train_state(TabularPolicy initial) {
  TrainState state;
  state.policy = initial;
  state.old_policy = initial;
  state.ref_policy = std::move(initial);
  state.step = 0;
  return state;
}

TrainState make_train_state(const CatalogShape& shape, int num_prompts) {
  return make_train_state(TabularPolicy(shape, num_prompts));
}

std::string step_report_csv_header() {
  return "step,loss_pg,loss_kl,grad_norm,groups_total,groups_all_zero,"
         "groups_single_hit,zero_reward_samples,repair_triggers,"
         "naturally_trainable,skipped_contrasts,active_responses,"
         "active_tokens,total_tokens,cost_base,cost_method";
}

std::string step_report_csv_row(const StepReport& r) {
  std::string row = std::to_string(r.step);
  row += ',';
  row += format_double(r.loss_pg);
  row += ',';
  row += format_double(r.loss_kl);
  row += ',';
  row += format_double(r.grad_norm);
  for (std::int64_t count :
       {r.groups_total, r.groups_all_zero, r.groups_single_hit,
        r.zero_reward_samples, r.repair_triggers, r.naturally_trainable,
        r.skipped_contrasts, r.active_responses, r.active_tokens,
        r.total_tokens}) {
    row += ',';
    row += std::to_string(count);
  }
  row += ',';
  row += format_double(r.cost_base);
  row += ',';
  row += format_double(r.cost_method);
  return row;
}

double kl_divergence(const TabularPolicy& policy, const TabularPolicy& ref,
                     int prompt_id) {
  if (!(policy.shape() == ref.shape())) {
    throw std::invalid_argument("KL requires matching catalog shapes");
  }
  const std::vector<double> p = policy.item_distribution(prompt_id);
  const std::vector<double> q = ref.item_distribution(prompt_id);
  double kl = 0.0;
  for (std::size_t x = 0; x < p.size(); ++x) {
    kl += p[x] * (std::log(p[x]) - std::log(q[x]));
  }
  return kl;
}

ObjectiveParts objective_parts(const TrainState& state,
                               const std::vector<SignaledGroup>& batch,
                               const TrainConfig& config) {
  ObjectiveParts parts;
  if (batch.empty()) return parts;
  for (const SignaledGroup& sg : batch) {
    check_batch_element(sg, config);
    const int prompt = sg.group.prompt_id;
    double pg_q = 0.0;
    for (int i : sg.advantages.active) {
      pg_q += sg.advantages.values[i] *
              state.policy.log_prob(prompt, sg.triples[i]);
    }
    parts.pg += pg_q / static_cast<double>(sg.group.size());
    parts.kl += kl_divergence(state.policy, state.ref_policy, prompt);
  }
  const double b = static_cast<double>(batch.size());
  parts.pg /= b;
  parts.kl /= b;
  return parts;
}

double objective_value(const TrainState& state,
                       const std::vector<SignaledGroup>& batch,
                       const TrainConfig& config) {
  return objective_parts(state, batch, config).value(config.beta);
}

GradientRecord objective_gradient(const TrainState& state,
                                  const std::vector<SignaledGroup>& batch,
                                  const TrainConfig& config,
                                  bool filter_active) {
  GradientRecord grad(state.policy.param_count(), 0.0);
  if (batch.empty()) return grad;
  const double b = static_cast<double>(batch.size());
  for (const SignaledGroup& sg : batch) {
    check_batch_element(sg, config);
    const int prompt = sg.group.prompt_id;
    const double scale = 1.0 / (b * static_cast<double>(sg.group.size()));
    if (filter_active) {
      for (int i : sg.advantages.active) {
        accumulate_logprob_gradient(grad, state.policy, prompt, sg.triples[i],
                                    sg.advantages.values[i] * scale);
      }
    } else {
      for (int i = 0; i < sg.group.size(); ++i) {
        accumulate_logprob_gradient(grad, state.policy, prompt, sg.triples[i],
                                    sg.advantages.values[i] * scale);
      }
    }
    if (config.beta != 0.0) {
      accumulate_kl_gradient(grad, state.policy, state.ref_policy, prompt,
                             -config.beta / b);
    }
  }
  return grad;
}

CostPair cost_model(int group_size, double c_roll, double c_upd,
                    SignalMode mode) {
  if (group_size < 2) throw std::invalid_argument("G must be at least 2");
  if (!(c_roll > 0.0) || !(c_upd > 0.0)) {
    throw std::invalid_argument("cost constants must be > 0");
  }
  const double g = static_cast<double>(group_size);
  CostPair cost;
  cost.base = g * c_roll + g * c_upd;
  cost.method = is_pair_mode(mode) ? g * c_roll + 2.0 * c_upd : cost.base;
  return cost;
}

StepReport train_step(TrainState& state, const Dataset& dataset,
                      const TrainConfig& config) {
  config.validate();
  if (!(state.policy.shape() == dataset.shape)) {
    throw std::invalid_argument("policy and dataset shapes differ");
  }
  if (state.policy.num_prompts() != dataset.num_prompts()) {
    throw std::invalid_argument("policy and dataset prompt counts differ");
  }
  if (config.prompts_per_step > dataset.num_prompts()) {
    throw std::invalid_argument("prompts_per_step exceeds dataset size");
  }

  if (state.step % config.refresh_old_every == 0) {
    state.old_policy = state.policy;
  }

  // Distinct prompts per step: a partial shuffle, then ascending order so
  // gradient accumulation has a fixed reduction order.
  const int n = dataset.num_prompts();
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  Rng select_rng(seed_for(config.seed, RngPurpose::prompt_select,
                          static_cast<std::uint64_t>(state.step)));
  for (int i = 0; i < config.prompts_per_step; ++i) {
    const int j =
        i + static_cast<int>(select_rng.next_index(static_cast<std::uint64_t>(n - i)));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(static_cast<std::size_t>(config.prompts_per_step));
  std::sort(ids.begin(), ids.end());

  StepReport report;
  report.step = state.step;
  report.groups_total = config.prompts_per_step;

  std::vector<SignaledGroup> batch;
  batch.reserve(ids.size());
  for (int pid : ids) {
    Rng rollout_rng(seed_for(config.seed, RngPurpose::rollout,
                             static_cast<std::uint64_t>(pid),
                             static_cast<std::uint64_t>(state.step)));
    std::vector<SampledResponse> samples =
        sample_group(state.old_policy, dataset.prompts[pid], config.group_size,
                     rollout_rng, config.malform_rate);
    std::vector<ResponseText> texts;
    std::vector<SemanticId> triples;
    texts.reserve(samples.size());
    triples.reserve(samples.size());
    for (SampledResponse& s : samples) {
      texts.push_back(std::move(s.text));
      triples.push_back(s.id);
    }
    ScoredGroup scored =
        score_group(pid, make_id_set({dataset.prompts[pid].target}),
                    std::move(texts), dataset.shape, config.phi);
    const int hits = hit_count(scored);
    report.groups_all_zero += hits == 0 ? 1 : 0;
    report.groups_single_hit += hits == 1 ? 1 : 0;
    report.naturally_trainable += hits >= 1 ? 1 : 0;
    for (double r : scored.rewards) {
      report.zero_reward_samples += r == 0.0 ? 1 : 0;
    }
    SignalResult sig = build_signal(std::move(scored), config.signal_config(),
                                    dataset.shape, config.phi);
    report.repair_triggers += sig.group.repaired ? 1 : 0;
    report.skipped_contrasts += sig.advantages.skipped ? 1 : 0;
    if (sig.group.repaired) {
      // The anchor was not sampled; its gradient triple is the anchor
      // itself (the first target member; training targets are singletons).
      triples[static_cast<std::size_t>(*sig.group.anchor_index)] =
          sig.group.target.ids.front();
    }
    batch.push_back(SignaledGroup{std::move(sig.group), std::move(sig.advantages),
                                  std::move(triples)});
  }

  const ObjectiveParts parts = objective_parts(state, batch, config);
  report.loss_pg = -parts.pg;
  report.loss_kl = parts.kl;

  const GradientRecord grad = objective_gradient(state, batch, config, true);
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  report.grad_norm = std::sqrt(sq);

  std::vector<double>& params = state.policy.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] += config.learning_rate * grad[i];
  }

  const bool pair_mode = is_pair_mode(config.mode);
  for (const SignaledGroup& sg : batch) {
    for (const ResponseText& r : sg.group.responses) {
      report.total_tokens += static_cast<std::int64_t>(r.token_length);
    }
    if (pair_mode) {
      report.active_responses +=
          static_cast<std::int64_t>(sg.advantages.active.size());
      for (int i : sg.advantages.active) {
        report.active_tokens +=
            static_cast<std::int64_t>(sg.group.responses[i].token_length);
      }
    }
  }
  if (!pair_mode) {
    // Group-wide normalization updates on every member; the update width
    // is the whole group even where an advantage is incidentally zero.
    report.active_responses =
        report.groups_total * static_cast<std::int64_t>(config.group_size);
    report.active_tokens = report.total_tokens;
  }

  const CostPair cost =
      cost_model(config.group_size, config.c_roll, config.c_upd, config.mode);
  report.cost_base = cost.base * static_cast<double>(report.groups_total);
  report.cost_method = cost.method * static_cast<double>(report.groups_total);

  state.step += 1;
  return report;
}

}  // namespace recast
