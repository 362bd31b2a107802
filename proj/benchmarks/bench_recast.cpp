// Microbenchmarks for the hot paths: signal construction at varying group
// sizes, ancestral sampling, the exact KL gradient, and a full training
// step. Run with --benchmark_filter to narrow.

#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "recast/evalx.hpp"

namespace {

using namespace recast;

const CatalogShape kShape{8, 8, 8};

ScoredGroup make_scored_group(int g, std::uint64_t salt) {
  Rng rng(seed_for(salt, RngPurpose::rollout));
  const TabularPolicy policy(kShape, 1);
  PromptSpec prompt;
  prompt.target = kShape.id_at(static_cast<int>(
      rng.next_index(static_cast<std::uint64_t>(kShape.item_count()))));
  prompt.ground_truth_text = render_sid(prompt.target);
  std::vector<SampledResponse> samples =
      sample_group(policy, prompt, g, rng, 0.02);
  std::vector<ResponseText> texts;
  for (SampledResponse& s : samples) texts.push_back(std::move(s.text));
  return score_group(0, make_id_set({prompt.target}), std::move(texts),
                     kShape);
}

void BM_BuildSignal(benchmark::State& state) {
  const SignalMode mode = static_cast<SignalMode>(state.range(0));
  const int g = static_cast<int>(state.range(1));
  SignalConfig config;
  config.mode = mode;
  const ScoredGroup group = make_scored_group(g, 17);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_signal(group, config, kShape));
  }
}

void BM_ScoreGroup(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  const ScoredGroup seed_group = make_scored_group(g, 23);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_group(0, seed_group.target,
                                         seed_group.responses, kShape));
  }
}

void BM_SampleGroup(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  const TabularPolicy policy(kShape, 1);
  PromptSpec prompt;
  prompt.target = SemanticId{3, 5, 7};
  prompt.ground_truth_text = render_sid(prompt.target);
  Rng rng(seed_for(5, RngPurpose::rollout));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_group(policy, prompt, g, rng, 0.02));
  }
}

void BM_ItemDistribution(benchmark::State& state) {
  TabularPolicy policy(kShape, 1);
  Rng rng(seed_for(9, RngPurpose::policy_init));
  init_random_logits(policy, rng, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy.item_distribution(0));
  }
}

void BM_ObjectiveGradient(benchmark::State& state) {
  const Dataset dataset = generate_dataset(kShape, 32, 7);
  TrainConfig config;
  TrainState state_at_init = make_train_state(kShape, 32);
  std::vector<SignaledGroup> batch;
  for (int pid = 0; pid < 8; ++pid) {
    Rng rng(seed_for(config.seed, RngPurpose::rollout,
                     static_cast<std::uint64_t>(pid), 0));
    std::vector<SampledResponse> samples =
        sample_group(state_at_init.old_policy, dataset.prompts[pid],
                     config.group_size, rng, config.malform_rate);
    std::vector<ResponseText> texts;
    std::vector<SemanticId> triples;
    for (SampledResponse& s : samples) {
      texts.push_back(std::move(s.text));
      triples.push_back(s.id);
    }
    ScoredGroup scored =
        score_group(pid, make_id_set({dataset.prompts[pid].target}),
                    std::move(texts), kShape, config.phi);
    SignalResult sig = build_signal(std::move(scored), config.signal_config(),
                                    kShape, config.phi);
    if (sig.group.repaired) {
      triples[static_cast<std::size_t>(*sig.group.anchor_index)] =
          sig.group.target.ids.front();
    }
    batch.push_back(SignaledGroup{std::move(sig.group),
                                  std::move(sig.advantages),
                                  std::move(triples)});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        objective_gradient(state_at_init, batch, config, true));
  }
}

void BM_TrainStep(benchmark::State& state) {
  const SignalMode mode = static_cast<SignalMode>(state.range(0));
  const Dataset dataset = generate_dataset(kShape, 256, 7);
  TrainConfig config;
  config.mode = mode;
  TrainState train_state = make_train_state(kShape, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step(train_state, dataset, config));
  }
}

void signal_args(benchmark::internal::Benchmark* bench) {
  for (int mode = 0; mode < 4; ++mode) {
    for (int g : {4, 8, 32}) bench->Args({mode, g});
  }
}

}  // namespace

BENCHMARK(BM_BuildSignal)->Apply(signal_args);
BENCHMARK(BM_ScoreGroup)->Arg(8)->Arg(32);
BENCHMARK(BM_SampleGroup)->Arg(8)->Arg(32);
BENCHMARK(BM_ItemDistribution);
BENCHMARK(BM_ObjectiveGradient);
BENCHMARK(BM_TrainStep)->DenseRange(0, 3);

BENCHMARK_MAIN();
