#pragma once

#include "recast/sid.hpp"

namespace recast {

// Weights for the hierarchical partial-credit kernel. Defaults give full
// credit for an exact item match, a small reward for matching the (a, b)
// branch, and a token reward for matching only the root level.
struct PhiWeights {
  double exact = 1.0;
  double branch = 0.1;
  double root = 0.01;
};

// Partial-credit kernel between a predicted ID and a target ID. Mutually
// exclusive cases, checked deepest first:
//   p == t                          -> exact
//   p.a == t.a, p.b == t.b, p.c !=  -> branch
//   p.a == t.a, p.b != t.b         -> root
//   otherwise                       -> 0
double phi(const SemanticId& p, const SemanticId& t,
           const PhiWeights& w = {});

// Fraction of predicted IDs that are in the target set: |P ∩ T| / |P|.
// Zero when either set is empty, so malformed responses score zero.
double task_reward(const IdSet& predicted, const IdSet& target);

// Mean over predicted IDs of the best phi against any target:
//   u = (1/|P|) * sum_p max_t phi(p, t)
// Zero when either set is empty. Always in [0, 1]; u >= reward because
// an exact hit contributes phi = 1.
double structural_score(const IdSet& predicted, const IdSet& target,
                        const PhiWeights& w = {});

// Number of predicted IDs that are exact members of the target set.
int hit_count(const IdSet& predicted, const IdSet& target);

struct ResponseScore {
  double reward = 0.0;
  double structure = 0.0;
};

ResponseScore score_response(const IdSet& predicted, const IdSet& target,
                             const PhiWeights& w = {});

}  // namespace recast
