#include "recast/trainer.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"

using namespace recast;

namespace {

// Rebuilds the batch exactly as train_step does, so objective tests and
// finite-difference oracles see production-shaped inputs.
std::vector<SignaledGroup> assemble_batch(const TrainState& state,
                                          const Dataset& dataset,
                                          const TrainConfig& config,
                                          const std::vector<int>& pids,
                                          int step) {
  std::vector<SignaledGroup> batch;
  for (int pid : pids) {
    Rng rng(seed_for(config.seed, RngPurpose::rollout,
                     static_cast<std::uint64_t>(pid),
                     static_cast<std::uint64_t>(step)));
    std::vector<SampledResponse> samples =
        sample_group(state.old_policy, dataset.prompts[pid], config.group_size,
                     rng, config.malform_rate);
    std::vector<ResponseText> texts;
    std::vector<SemanticId> triples;
    for (SampledResponse& s : samples) {
      texts.push_back(std::move(s.text));
      triples.push_back(s.id);
    }
    ScoredGroup scored =
        score_group(pid, make_id_set({dataset.prompts[pid].target}),
                    std::move(texts), dataset.shape, config.phi);
    SignalResult sig = build_signal(std::move(scored), config.signal_config(),
                                    dataset.shape, config.phi);
    if (sig.group.repaired) {
      triples[static_cast<std::size_t>(*sig.group.anchor_index)] =
          sig.group.target.ids.front();
    }
    batch.push_back(SignaledGroup{std::move(sig.group),
                                  std::move(sig.advantages),
                                  std::move(triples)});
  }
  return batch;
}

std::vector<std::string> split_csv(const std::string& row) {
  std::vector<std::string> fields;
  std::stringstream ss(row);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

}  // namespace

TEST_CASE("kl_divergence matches the frozen two-item value") {
  const CatalogShape shape{2, 1, 1};
  TabularPolicy p(shape, 1);
  TabularPolicy ref(shape, 1);
  CHECK(kl_divergence(p, ref, 0) == 0.0);
  // (0.75, 0.25) against uniform.
  p.params()[p.offset_a(0, 0)] = std::log(3.0);
  CHECK(std::abs(kl_divergence(p, ref, 0) - 0.130812) < 5e-7);
}

TEST_CASE("kl_divergence is non-negative and zero only at equality") {
  const CatalogShape shape{3, 2, 2};
  Rng rng(seed_for(41, RngPurpose::policy_init));
  for (int trial = 0; trial < 100; ++trial) {
    TabularPolicy p(shape, 1);
    TabularPolicy q(shape, 1);
    init_random_logits(p, rng, 1.5);
    init_random_logits(q, rng, 1.5);
    const double kl = kl_divergence(p, q, 0);
    CHECK(kl >= 0.0);
    CHECK(kl_divergence(p, p, 0) == 0.0);
  }
  TabularPolicy small(CatalogShape{2, 2, 2}, 1);
  TabularPolicy big(CatalogShape{2, 2, 3}, 1);
  CHECK_THROWS_AS(kl_divergence(small, big, 0), std::invalid_argument);
}

TEST_CASE("objective_gradient reproduces the two-item closed form") {
  // Shape (2,1,1), uniform policy, one response at item (0,0,0) with
  // advantage +1 and beta = 0: the level-a gradient is (0.5, -0.5).
  const CatalogShape shape{2, 1, 1};
  TrainState state = make_train_state(shape, 1);
  TrainConfig config;
  config.mode = SignalMode::grpo;
  config.beta = 0.0;

  SignaledGroup sg;
  sg.group.prompt_id = 0;
  sg.group.target = make_id_set({{0, 0, 0}});
  sg.group.responses = {render_sid({0, 0, 0})};
  sg.group.id_sets = {make_id_set({{0, 0, 0}})};
  sg.group.rewards = {1.0};
  sg.group.structurals = {1.0};
  sg.advantages = make_advantage_vector({1.0}, SignalMode::grpo, false);
  sg.triples = {{0, 0, 0}};

  const GradientRecord grad =
      objective_gradient(state, {sg}, config);
  REQUIRE(grad.size() == state.policy.param_count());
  CHECK(grad[state.policy.offset_a(0, 0)] == doctest::Approx(0.5));
  CHECK(grad[state.policy.offset_a(0, 1)] == doctest::Approx(-0.5));
  // Single-logit b and c slices have constant softmax, so zero gradient.
  CHECK(grad[state.policy.offset_b(0, 0, 0)] == doctest::Approx(0.0));
  CHECK(grad[state.policy.offset_c(0, 0, 0, 0)] == doctest::Approx(0.0));

  const ObjectiveParts parts = objective_parts(state, {sg}, config);
  CHECK(parts.pg == doctest::Approx(std::log(0.5)));
  CHECK(parts.kl == 0.0);
}

TEST_CASE("zero advantages and matched reference give a zero gradient") {
  const CatalogShape shape{2, 2, 2};
  const Dataset dataset = generate_dataset(shape, 4, 5);
  TrainState state = make_train_state(shape, 4);
  TrainConfig config;
  config.mode = SignalMode::grpo;
  config.group_size = 4;
  config.malform_rate = 0.0;
  std::vector<SignaledGroup> batch =
      assemble_batch(state, dataset, config, {0, 1, 2, 3}, 0);
  for (SignaledGroup& sg : batch) {
    sg.advantages =
        make_advantage_vector(std::vector<double>(4, 0.0), config.mode, false);
  }
  // policy == ref, so the KL gradient vanishes too, even with beta > 0.
  const GradientRecord grad = objective_gradient(state, batch, config);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
  const CatalogShape shape{3, 2, 2};
  const Dataset dataset = generate_dataset(shape, 3, 17);
  const double h = 1e-5;

  for (int trial = 0; trial < 4; ++trial) {
    TrainConfig config;
    config.mode = trial % 2 == 0 ? SignalMode::recast : SignalMode::grpo;
    config.beta = trial < 2 ? 0.0 : 0.05;
    config.group_size = 8;
    config.malform_rate = 0.1;
    config.seed = static_cast<std::uint64_t>(100 + trial);

    TrainState state = make_train_state(shape, 3);
    Rng init(seed_for(static_cast<std::uint64_t>(trial), RngPurpose::policy_init));
    init_random_logits(state.policy, init, 1.0);
    init_random_logits(state.ref_policy, init, 0.5);
    state.old_policy = state.policy;

    const std::vector<SignaledGroup> batch =
        assemble_batch(state, dataset, config, {0, 1, 2}, 0);
    const GradientRecord grad = objective_gradient(state, batch, config);

    std::vector<double>& params = state.policy.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const double jp = objective_value(state, batch, config);
      params[i] = saved - h;
      const double jm = objective_value(state, batch, config);
      params[i] = saved;
      const double fd = (jp - jm) / (2.0 * h);
      if (std::abs(grad[i]) > 1e-8) {
        CHECK(std::abs(grad[i] - fd) / std::abs(grad[i]) < 1e-4);
      } else {
        CHECK(std::abs(fd) < 1e-6);
      }
    }
  }
}

TEST_CASE("filtering inactive members does not change the gradient") {
  const CatalogShape shape{3, 3, 3};
  const Dataset dataset = generate_dataset(shape, 4, 23);
  for (SignalMode mode : {SignalMode::grpo, SignalMode::recast,
                          SignalMode::repair_only, SignalMode::boundary_only}) {
    TrainConfig config;
    config.mode = mode;
    config.group_size = 6;
    config.beta = 0.01;
    TrainState state = make_train_state(shape, 4);
    Rng init(seed_for(55, RngPurpose::policy_init));
    init_random_logits(state.policy, init, 0.7);
    state.old_policy = state.policy;
    const std::vector<SignaledGroup> batch =
        assemble_batch(state, dataset, config, {0, 1, 2, 3}, 0);
    const GradientRecord filtered =
        objective_gradient(state, batch, config, true);
    const GradientRecord full =
        objective_gradient(state, batch, config, false);
    REQUIRE(filtered.size() == full.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
      CHECK(filtered[i] == doctest::Approx(full[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("objective rejects inconsistent batches") {
  const CatalogShape shape{2, 2, 2};
  TrainState state = make_train_state(shape, 1);
  TrainConfig config;
  config.mode = SignalMode::recast;

  SignaledGroup sg;
  sg.group.prompt_id = 0;
  sg.group.responses = {render_sid({0, 0, 0}), render_sid({0, 0, 1})};
  sg.group.id_sets = {make_id_set({{0, 0, 0}}), make_id_set({{0, 0, 1}})};
  sg.group.rewards = {0.0, 0.0};
  sg.group.structurals = {0.0, 0.0};
  sg.advantages = make_advantage_vector({0.0, 0.0}, SignalMode::grpo, false);
  sg.triples = {{0, 0, 0}, {0, 0, 1}};
  // Mode mismatch.
  CHECK_THROWS_AS(objective_parts(state, {sg}, config), std::invalid_argument);
  sg.advantages = make_advantage_vector({0.0}, SignalMode::recast, false);
  CHECK_THROWS_AS(objective_gradient(state, {sg}, config),
                  std::invalid_argument);
  CHECK(objective_value(state, {}, config) == 0.0);
}

TEST_CASE("train_step is deterministic and advances the counter") {
  const CatalogShape shape{4, 4, 4};
  const Dataset dataset = generate_dataset(shape, 16, 9);
  TrainConfig config;
  config.group_size = 4;
  config.prompts_per_step = 8;
  config.steps = 2;
  config.seed = 77;

  TrainState s1 = make_train_state(shape, 16);
  TrainState s2 = make_train_state(shape, 16);
  for (int step = 0; step < 2; ++step) {
    const StepReport r1 = train_step(s1, dataset, config);
    const StepReport r2 = train_step(s2, dataset, config);
    CHECK(r1.step == step);
    CHECK(step_report_csv_row(r1) == step_report_csv_row(r2));
  }
  CHECK(s1.step == 2);
  CHECK(s1.policy.params() == s2.policy.params());
  // The reference never moves.
  CHECK(s1.ref_policy.params() ==
        std::vector<double>(s1.ref_policy.param_count(), 0.0));
}

TEST_CASE("old policy refreshes on schedule") {
  const CatalogShape shape{4, 4, 4};
  const Dataset dataset = generate_dataset(shape, 8, 13);
  TrainConfig config;
  config.group_size = 4;
  config.prompts_per_step = 4;
  config.refresh_old_every = 3;
  TrainState state = make_train_state(shape, 8);
  const std::vector<double> initial = state.policy.params();

  train_step(state, dataset, config);  // step 0: refresh, then update
  CHECK(state.old_policy.params() == initial);
  const std::vector<double> after0 = state.policy.params();
  train_step(state, dataset, config);  // step 1: no refresh
  CHECK(state.old_policy.params() == initial);
  train_step(state, dataset, config);  // step 2: no refresh
  CHECK(state.old_policy.params() == initial);
  const std::vector<double> after2 = state.policy.params();
  train_step(state, dataset, config);  // step 3: refresh picks up the update
  CHECK(state.old_policy.params() == after2);
  CHECK(after0 != initial);

  // With refresh_old_every = 1 the rollout policy tracks every update.
  TrainState fresh = make_train_state(shape, 8);
  config.refresh_old_every = 1;
  train_step(fresh, dataset, config);
  const std::vector<double> p1 = fresh.policy.params();
  train_step(fresh, dataset, config);
  CHECK(fresh.old_policy.params() == p1);
}

TEST_CASE("step reports keep the sparse-hit ledger consistent") {
  const CatalogShape shape{8, 8, 8};
  const Dataset dataset = generate_dataset(shape, 64, 7);
  for (SignalMode mode : {SignalMode::grpo, SignalMode::repair_only,
                          SignalMode::boundary_only, SignalMode::recast}) {
    TrainConfig config;
    config.mode = mode;
    config.prompts_per_step = 16;
    config.seed = 3;
    TrainState state = make_train_state(shape, 64);
    for (int step = 0; step < 3; ++step) {
      const StepReport r = train_step(state, dataset, config);
      CHECK(r.groups_total == 16);
      CHECK(r.naturally_trainable + r.groups_all_zero == r.groups_total);
      CHECK(r.groups_single_hit <= r.naturally_trainable);
      CHECK(r.zero_reward_samples >=
            r.groups_all_zero * config.group_size);
      CHECK(r.zero_reward_samples <=
            r.groups_total * config.group_size);
      CHECK(r.active_tokens <= r.total_tokens);
      CHECK(r.cost_base ==
            doctest::Approx(16.0 * 8.0 * (config.c_roll + config.c_upd)));
      if (mode == SignalMode::grpo || mode == SignalMode::repair_only) {
        CHECK(r.active_responses == r.groups_total * config.group_size);
        CHECK(r.active_tokens == r.total_tokens);
        CHECK(r.cost_method == r.cost_base);
        CHECK(r.skipped_contrasts == 0);
      } else {
        CHECK(r.active_responses ==
              2 * (r.groups_total - r.skipped_contrasts));
        CHECK(r.cost_method ==
              doctest::Approx(16.0 * (8.0 * config.c_roll + 2.0 * config.c_upd)));
      }
      if (mode == SignalMode::grpo || mode == SignalMode::boundary_only) {
        CHECK(r.repair_triggers == 0);
      } else {
        CHECK(r.repair_triggers == r.groups_all_zero);
      }
    }
  }
}

TEST_CASE("an all-zero batch leaves a grpo policy untouched") {
  // 4096-item catalog, 16 rollouts at uniform: a hit is a 1-in-256 event
  // per step, and this seed produces none.
  const CatalogShape shape{16, 16, 16};
  const Dataset dataset = generate_dataset(shape, 4, 19);
  TrainConfig config;
  config.mode = SignalMode::grpo;
  config.group_size = 4;
  config.prompts_per_step = 4;
  config.seed = 19;
  TrainState state = make_train_state(shape, 4);
  const std::vector<double> initial = state.policy.params();
  const StepReport r = train_step(state, dataset, config);
  REQUIRE(r.groups_all_zero == r.groups_total);
  CHECK(r.loss_pg == 0.0);
  CHECK(r.loss_kl == 0.0);
  CHECK(r.grad_norm == 0.0);
  CHECK(state.policy.params() == initial);
}

TEST_CASE("beta anchors the policy to the reference") {
  const CatalogShape shape{2, 2, 2};
  const Dataset dataset = generate_dataset(shape, 8, 31);
  TrainConfig config;
  config.mode = SignalMode::recast;
  config.group_size = 4;
  config.prompts_per_step = 4;
  config.beta = 100.0;
  config.learning_rate = 1e-3;
  config.steps = 200;
  config.seed = 8;
  TrainState state = make_train_state(shape, 8);
  double max_kl = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    train_step(state, dataset, config);
    for (int p = 0; p < 8; ++p) {
      max_kl = std::max(max_kl, kl_divergence(state.policy, state.ref_policy, p));
    }
  }
  // The policy starts at the reference (KL = 0) and must stay within 1e-3.
  CHECK(max_kl <= 1e-3);
}

TEST_CASE("train_step validates its inputs") {
  const CatalogShape shape{4, 4, 4};
  const Dataset dataset = generate_dataset(shape, 8, 3);
  TrainConfig config;
  config.group_size = 4;
  config.prompts_per_step = 16;  // more than the dataset holds
  TrainState state = make_train_state(shape, 8);
  CHECK_THROWS_AS(train_step(state, dataset, config), std::invalid_argument);

  config.prompts_per_step = 4;
  TrainState wrong_shape = make_train_state(CatalogShape{4, 4, 5}, 8);
  CHECK_THROWS_AS(train_step(wrong_shape, dataset, config),
                  std::invalid_argument);
  TrainState wrong_count = make_train_state(shape, 9);
  CHECK_THROWS_AS(train_step(wrong_count, dataset, config),
                  std::invalid_argument);
}

TEST_CASE("cost_model follows the two-column schedule") {
  for (int g : {2, 4, 8, 16, 32, 64}) {
    const CostPair grpo_cost = cost_model(g, 1.0, 1.0, SignalMode::grpo);
    CHECK(grpo_cost.base == 2.0 * g);
    CHECK(grpo_cost.method == grpo_cost.base);
    const CostPair repair_cost =
        cost_model(g, 1.0, 1.0, SignalMode::repair_only);
    CHECK(repair_cost.method == repair_cost.base);
    for (SignalMode mode : {SignalMode::boundary_only, SignalMode::recast}) {
      const CostPair pair_cost = cost_model(g, 1.0, 1.0, mode);
      CHECK(pair_cost.base == 2.0 * g);
      CHECK(pair_cost.method == g + 2.0);
    }
  }
  // At G = 32 the per-group update cost drops from 32 to 2: a 16x saving.
  const CostPair at32 = cost_model(32, 1.0, 1.0, SignalMode::recast);
  CHECK(at32.base == 64.0);
  CHECK(at32.method == 34.0);
  CHECK((at32.base - 32.0) / (at32.method - 32.0) == 16.0);
  CHECK_THROWS_AS(cost_model(1, 1.0, 1.0, SignalMode::grpo),
                  std::invalid_argument);
  // Asymmetric constants keep the split visible.
  const CostPair lopsided = cost_model(8, 0.5, 2.0, SignalMode::recast);
  CHECK(lopsided.base == 8 * 0.5 + 8 * 2.0);
  CHECK(lopsided.method == 8 * 0.5 + 2 * 2.0);
}

TEST_CASE("step report CSV has a fixed 16-column layout") {
  const std::vector<std::string> header = split_csv(step_report_csv_header());
  REQUIRE(header.size() == 16);
  CHECK(header.front() == "step");
  CHECK(header.back() == "cost_method");

  StepReport r;
  r.step = 12;
  r.loss_pg = -0.125;
  r.loss_kl = 0.5;
  r.grad_norm = 1.0 / 3.0;
  r.groups_total = 32;
  r.groups_all_zero = 30;
  r.groups_single_hit = 2;
  r.zero_reward_samples = 250;
  r.repair_triggers = 30;
  r.naturally_trainable = 2;
  r.skipped_contrasts = 0;
  r.active_responses = 64;
  r.active_tokens = 192;
  r.total_tokens = 768;
  r.cost_base = 512.0;
  r.cost_method = 320.0;
  const std::vector<std::string> row = split_csv(step_report_csv_row(r));
  REQUIRE(row.size() == 16);
  CHECK(row[0] == "12");
  CHECK(std::stod(row[1]) == -0.125);
  CHECK(std::stod(row[3]) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(row[4] == "32");
  CHECK(row[13] == "768");
  CHECK(std::stod(row[15]) == 320.0);
}

TEST_CASE("train config JSON round-trips and rejects junk") {
  TrainConfig config;
  config.mode = SignalMode::boundary_only;
  config.group_size = 16;
  config.beta = 0.25;
  config.learning_rate = 0.05;
  config.steps = 123;
  config.prompts_per_step = 7;
  config.w = 2.0;
  config.epsilon = 1e-5;
  config.c_roll = 0.5;
  config.c_upd = 2.0;
  config.refresh_old_every = 4;
  config.seed = 99;
  config.malform_rate = 0.1;
  config.phi = PhiWeights{1.0, 0.2, 0.05};

  const TrainConfig parsed = train_config_from_json(train_config_to_json(config));
  CHECK(parsed.mode == config.mode);
  CHECK(parsed.group_size == config.group_size);
  CHECK(parsed.beta == config.beta);
  CHECK(parsed.learning_rate == config.learning_rate);
  CHECK(parsed.steps == config.steps);
  CHECK(parsed.prompts_per_step == config.prompts_per_step);
  CHECK(parsed.w == config.w);
  CHECK(parsed.epsilon == config.epsilon);
  CHECK(parsed.c_roll == config.c_roll);
  CHECK(parsed.c_upd == config.c_upd);
  CHECK(parsed.refresh_old_every == config.refresh_old_every);
  CHECK(parsed.seed == config.seed);
  CHECK(parsed.malform_rate == config.malform_rate);
  CHECK(parsed.phi.branch == 0.2);

  // Partial configs keep defaults elsewhere.
  const TrainConfig partial = train_config_from_json(R"({"mode": "grpo", "G": 4})");
  CHECK(partial.mode == SignalMode::grpo);
  CHECK(partial.group_size == 4);
  CHECK(partial.beta == 0.01);
  CHECK(partial.learning_rate == 0.1);
  CHECK(partial.steps == 2000);

  // Wrapper sections pass through; anything else is a typo worth failing.
  CHECK_NOTHROW(train_config_from_json(R"({"env": {"num_prompts": 4}, "eval": {}})"));
  CHECK_THROWS_AS(train_config_from_json(R"({"group_size": 8})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(R"({"G": 1})"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json("[1,2]"), std::invalid_argument);
}

TEST_CASE("TrainConfig::validate enforces field ranges") {
  TrainConfig config;
  CHECK_NOTHROW(config.validate());
  auto expect_throw = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  expect_throw([](TrainConfig& c) { c.group_size = 1; });
  expect_throw([](TrainConfig& c) { c.beta = -0.1; });
  expect_throw([](TrainConfig& c) { c.learning_rate = 0.0; });
  expect_throw([](TrainConfig& c) { c.steps = -1; });
  expect_throw([](TrainConfig& c) { c.prompts_per_step = 0; });
  expect_throw([](TrainConfig& c) { c.w = 0.0; });
  expect_throw([](TrainConfig& c) { c.epsilon = 0.0; });
  expect_throw([](TrainConfig& c) { c.c_roll = 0.0; });
  expect_throw([](TrainConfig& c) { c.refresh_old_every = 0; });
  expect_throw([](TrainConfig& c) { c.malform_rate = 1.0; });
  expect_throw([](TrainConfig& c) { c.malform_rate = -0.01; });
  expect_throw([](TrainConfig& c) { c.phi.branch = 2.0; });
  expect_throw([](TrainConfig& c) { c.phi.root = 0.5; });
  expect_throw([](TrainConfig& c) { c.phi.exact = 0.0; });
}
