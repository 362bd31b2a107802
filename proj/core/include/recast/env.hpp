#pragma once

// Synthetic sparse-hit environment: a prompt dataset with one target item
// per prompt, and a per-prompt tabular policy over the hierarchical ID
// space with exact log-probabilities and exact full-catalog distributions.
//
// The policy factorizes ancestrally, pi(a,b,c) = pa(a) pb(b|a) pc(c|a,b),
// each factor a softmax over its own logit slice. Zero initialization gives
// the uniform distribution over the catalog, which at desk scale puts
// nearly every rollout group in the all-zero-reward regime.

#include <cstdint>
#include <string>
#include <vector>

#include "recast/rng.hpp"
#include "recast/sid.hpp"

namespace recast {

// Corruption literal for malformed rollouts; contains no grammar token.
inline constexpr const char* kMalformedText = "<invalid>";

struct PromptSpec {
  int prompt_id = 0;
  SemanticId target;
  ResponseText ground_truth_text;  // canonical rendering of target
};

struct Dataset {
  CatalogShape shape;
  std::vector<PromptSpec> prompts;
  std::uint64_t seed = 0;  // seed the dataset was generated from

  int num_prompts() const { return static_cast<int>(prompts.size()); }
};

class TabularPolicy {
 public:
  TabularPolicy() = default;
  // Zero logits: uniform over the catalog for every prompt.
  TabularPolicy(const CatalogShape& shape, int num_prompts);

  const CatalogShape& shape() const { return shape_; }
  int num_prompts() const { return num_prompts_; }

  // Flat parameter layout, the contract shared with gradient records and
  // checkpoints. Per prompt, one contiguous block:
  //   [0, n_a)             level-a logits
  //   [n_a, n_a + n_a*n_b) level-b logits, row-major by a
  //   [.., block_size)     level-c logits, row-major by (a, b)
  std::size_t block_size() const { return block_size_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::size_t offset_a(int prompt, int a) const;
  std::size_t offset_b(int prompt, int a, int b) const;
  std::size_t offset_c(int prompt, int a, int b, int c) const;

  // Exact softmax factors.
  std::vector<double> level_a_probs(int prompt) const;
  std::vector<double> level_b_probs(int prompt, int a) const;
  std::vector<double> level_c_probs(int prompt, int a, int b) const;

  // log pa(a) + log pb(b|a) + log pc(c|a,b), exact up to floating point.
  double log_prob(int prompt, const SemanticId& id) const;

  // Full joint over the catalog in row-major (a, b, c) order; sums to 1
  // within 1e-12.
  std::vector<double> item_distribution(int prompt) const;

  // Ancestral inverse-CDF sample, three unit draws per call.
  SemanticId sample(int prompt, Rng& rng) const;

 private:
  void check_prompt(int prompt) const;

  CatalogShape shape_;
  int num_prompts_ = 0;
  std::size_t block_size_ = 0;
  std::vector<double> params_;
};

struct SampledResponse {
  ResponseText text;
  SemanticId id;              // the sampled triple, kept even when malformed
  double logprob_old = 0.0;   // log-prob of the triple under the sampling policy
  bool valid = true;          // false: text was corrupted to kMalformedText
};

// Uniform targets, deterministic in (shape, num_prompts, seed).
Dataset generate_dataset(const CatalogShape& shape, int num_prompts,
                         std::uint64_t seed);

// G ancestral samples; each response draws three level units plus one
// malformation unit (drawn regardless of rate, so streams line up across
// malform_rate settings).
std::vector<SampledResponse> sample_group(const TabularPolicy& policy,
                                          const PromptSpec& prompt, int g,
                                          Rng& rng, double malform_rate);

// Logits uniform in [-scale, scale]; for randomized oracle tests.
void init_random_logits(TabularPolicy& policy, Rng& rng, double scale);

// Line-delimited JSON: one meta line (shape, seed), then one line per
// prompt (prompt_id, target, ground_truth).
void save_dataset_jsonl(const Dataset& dataset, const std::string& path);
Dataset load_dataset_jsonl(const std::string& path);

// Binary checkpoint: magic, shape, prompt count, then raw logits.
void save_policy(const TabularPolicy& policy, const std::string& path);
TabularPolicy load_policy(const std::string& path);

}  // namespace recast
