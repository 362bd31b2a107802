#include "recast/scoring.hpp"

#include <algorithm>

namespace recast {

double phi(const SemanticId& p, const SemanticId& t, const PhiWeights& w) {
  if (p.a != t.a) return 0.0;
  if (p.b != t.b) return w.root;
  if (p.c != t.c) return w.branch;
  return w.exact;
}

double task_reward(const IdSet& predicted, const IdSet& target) {
  if (predicted.empty() || target.empty()) return 0.0;
  return static_cast<double>(hit_count(predicted, target)) /
         static_cast<double>(predicted.size());
}

double structural_score(const IdSet& predicted, const IdSet& target,
                        const PhiWeights& w) {
  if (predicted.empty() || target.empty()) return 0.0;
  double total = 0.0;
  for (const SemanticId& p : predicted.ids) {
    double best = 0.0;
    for (const SemanticId& t : target.ids) {
      best = std::max(best, phi(p, t, w));
      if (best == w.exact) break;
    }
    total += best;
  }
  return total / static_cast<double>(predicted.size());
}

int hit_count(const IdSet& predicted, const IdSet& target) {
  int hits = 0;
  for (const SemanticId& p : predicted.ids) {
    if (target.contains(p)) ++hits;
  }
  return hits;
}

ResponseScore score_response(const IdSet& predicted, const IdSet& target,
                             const PhiWeights& w) {
  return ResponseScore{task_reward(predicted, target),
                       structural_score(predicted, target, w)};
}

}  // namespace recast
