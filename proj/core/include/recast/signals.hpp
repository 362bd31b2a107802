#pragma once

// Within-group learning signals. Four variants share one entry point
// (build_signal):
//   grpo          mean/std reward normalization over the whole group
//   repair_only   rollout repair for all-zero groups, then normalization
//   boundary_only contrastive boundary pair, no repair
//   recast        repair, then contrastive boundary pair
//
// Repair replaces the least informative response of an all-zero group with
// an anchor rendered from the ground truth, guaranteeing one positive. The
// boundary pair is the strongest positive (max reward) and the hardest
// negative (max structural score among zero-reward responses); only this
// pair receives nonzero advantage, so the active support stays at most 2
// regardless of group size.

#include <optional>
#include <string>
#include <vector>

#include "recast/scoring.hpp"
#include "recast/sid.hpp"

namespace recast {

enum class SignalMode { grpo, repair_only, boundary_only, recast };

const char* to_string(SignalMode mode);
// Throws std::invalid_argument on unknown names.
SignalMode parse_signal_mode(std::string_view name);

// One prompt's scored rollout group. Parallel arrays indexed by member.
struct ScoredGroup {
  int prompt_id = 0;
  std::vector<ResponseText> responses;
  std::vector<IdSet> id_sets;
  std::vector<double> rewards;
  std::vector<double> structurals;
  IdSet target;
  bool repaired = false;
  std::optional<int> replaced_index;
  std::optional<int> anchor_index;

  int size() const { return static_cast<int>(responses.size()); }
  // Throws std::invalid_argument on broken invariants: mismatched array
  // lengths, size < 2, or inconsistent repair bookkeeping (repaired groups
  // must have replaced_index = anchor_index and a positive anchor reward).
  void validate() const;
};

struct AdvantageVector {
  std::vector<double> values;
  SignalMode mode = SignalMode::grpo;
  std::vector<int> active;  // ascending indices with values[i] != 0
  bool skipped = false;     // contrastive update skipped (no zero-reward member)
};

// Fills `active` from the nonzero entries of `values`.
AdvantageVector make_advantage_vector(std::vector<double> values,
                                      SignalMode mode, bool skipped);

struct SignalConfig {
  SignalMode mode = SignalMode::recast;
  double w = 1.0;        // contrastive weight, > 0
  double epsilon = 1e-6; // normalization stabilizer, > 0
};

struct BoundaryPair {
  int i_plus = -1;   // strongest positive: argmax reward over rewards > 0
  int i_minus = -1;  // hardest negative: argmax structural over rewards = 0
};

// Scores raw response texts against the target: parses ID sets and fills
// rewards/structurals. The group starts unrepaired.
ScoredGroup score_group(int prompt_id, const IdSet& target,
                        std::vector<ResponseText> responses,
                        const CatalogShape& shape, const PhiWeights& phi = {});

// Number of members with reward > 0.
int hit_count(const ScoredGroup& group);

// (r_i - mean) / (population std + epsilon). A group whose rewards are all
// equal has zero numerators, so it yields exactly zero advantages (no
// floating-point residue from the mean subtraction).
AdvantageVector grpo_advantages(const std::vector<double>& rewards,
                                double epsilon);

// Canonical positive response: the target IDs rendered in their sorted
// (lexicographic) order. Guarantees task_reward(parse(anchor), target) = 1.
// Throws std::invalid_argument if the target is empty or out of bounds.
ResponseText make_anchor(const IdSet& target, const CatalogShape& shape);

// Identity when the group already has a hit. Otherwise replaces the member
// with the lowest structural score (ties break to the lowest index) by the
// anchor and rescores that slot.
ScoredGroup repair_group(ScoredGroup group, const CatalogShape& shape,
                         const PhiWeights& phi = {});

// Boundary pair selection. Requires hit_count >= 1 (throws std::logic_error
// otherwise; repair first). Returns nullopt when no zero-reward member
// exists, which callers treat as "skip the contrastive update". All argmax
// ties break to the lowest index.
std::optional<BoundaryPair> select_boundary(const ScoredGroup& group);

// +w at i_plus, -w at i_minus, zero elsewhere; all-zero with skipped = true
// when select_boundary returns nullopt. Same precondition as select_boundary.
AdvantageVector recast_advantages(const ScoredGroup& group,
                                  const SignalConfig& config);

struct SignalResult {
  ScoredGroup group;  // post-repair when the mode repairs
  AdvantageVector advantages;
};

// Mode dispatch over the scored group:
//   grpo          no repair, normalized advantages
//   repair_only   repair if all-zero, then normalized advantages
//   boundary_only no repair; all-zero groups emit no signal (skipped = true)
//   recast        repair if all-zero, then boundary advantages
SignalResult build_signal(ScoredGroup group, const SignalConfig& config,
                          const CatalogShape& shape, const PhiWeights& phi = {});

// Line-delimited JSON interchange so the module runs standalone as a
// filter: groups in, signals out. Input objects need prompt_id, target
// (array of [a,b,c] triples), and responses (array of strings); rewards and
// structurals are recomputed unless both are present with matching length.
ScoredGroup group_from_json(const std::string& line, const CatalogShape& shape,
                            const PhiWeights& phi = {});
std::string group_to_json(const ScoredGroup& group);
std::string signal_to_json(const ScoredGroup& group,
                           const AdvantageVector& advantages);

}  // namespace recast
