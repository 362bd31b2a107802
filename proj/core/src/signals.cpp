#include "recast/signals.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

namespace recast {

namespace {

using nlohmann::json;

json triple_to_json(const SemanticId& id) { return json::array({id.a, id.b, id.c}); }

SemanticId triple_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw std::invalid_argument("ID triple must be a 3-element array");
  }
  return SemanticId{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json id_set_to_json(const IdSet& set) {
  json arr = json::array();
  for (const SemanticId& id : set.ids) arr.push_back(triple_to_json(id));
  return arr;
}

IdSet id_set_from_json(const json& j) {
  std::vector<SemanticId> ids;
  for (const json& t : j) ids.push_back(triple_from_json(t));
  return make_id_set(std::move(ids));
}

json optional_index_to_json(const std::optional<int>& idx) {
  return idx ? json(*idx) : json(nullptr);
}

}  // namespace

const char* to_string(SignalMode mode) {
  switch (mode) {
    case SignalMode::grpo: return "grpo";
    case SignalMode::repair_only: return "repair_only";
    case SignalMode::boundary_only: return "boundary_only";
    case SignalMode::recast: return "recast";
  }
  throw std::invalid_argument("unknown SignalMode value");
}

SignalMode parse_signal_mode(std::string_view name) {
  if (name == "grpo") return SignalMode::grpo;
  if (name == "repair_only") return SignalMode::repair_only;
  if (name == "boundary_only") return SignalMode::boundary_only;
  if (name == "recast") return SignalMode::recast;
  throw std::invalid_argument("unknown signal mode: " + std::string(name));
}

void ScoredGroup::validate() const {
  const std::size_t g = responses.size();
  if (g < 2) throw std::invalid_argument("group needs at least 2 responses");
  if (id_sets.size() != g || rewards.size() != g || structurals.size() != g) {
    throw std::invalid_argument("group arrays have mismatched lengths");
  }
  if (repaired) {
    if (!replaced_index || !anchor_index || *replaced_index != *anchor_index) {
      throw std::invalid_argument(
          "repaired group must have replaced_index = anchor_index");
    }
    if (*anchor_index < 0 || *anchor_index >= static_cast<int>(g)) {
      throw std::invalid_argument("anchor_index out of range");
    }
    if (!(rewards[*anchor_index] > 0.0)) {
      throw std::invalid_argument("repaired group must have a positive anchor");
    }
  } else if (replaced_index || anchor_index) {
    throw std::invalid_argument("unrepaired group carries repair indices");
  }
}

AdvantageVector make_advantage_vector(std::vector<double> values,
                                      SignalMode mode, bool skipped) {
  AdvantageVector adv;
  adv.values = std::move(values);
  adv.mode = mode;
  adv.skipped = skipped;
  for (int i = 0; i < static_cast<int>(adv.values.size()); ++i) {
    if (adv.values[i] != 0.0) adv.active.push_back(i);
  }
  return adv;
}

ScoredGroup score_group(int prompt_id, const IdSet& target,
                        std::vector<ResponseText> responses,
                        const CatalogShape& shape, const PhiWeights& phi) {
  ScoredGroup group;
  group.prompt_id = prompt_id;
  group.target = target;
  group.responses = std::move(responses);
  group.id_sets.reserve(group.responses.size());
  group.rewards.reserve(group.responses.size());
  group.structurals.reserve(group.responses.size());
  for (ResponseText& response : group.responses) {
    response = make_response_text(std::move(response.text));
    IdSet predicted = parse_response(response.text, shape);
    group.rewards.push_back(task_reward(predicted, target));
    group.structurals.push_back(structural_score(predicted, target, phi));
    group.id_sets.push_back(std::move(predicted));
  }
  return group;
}

int hit_count(const ScoredGroup& group) {
  return static_cast<int>(
      std::count_if(group.rewards.begin(), group.rewards.end(),
                    [](double r) { return r > 0.0; }));
}

AdvantageVector grpo_advantages(const std::vector<double>& rewards,
                                double epsilon) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("need at least 2 rewards");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");

  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) {
    // Degenerate group: every numerator r_i - mean is identically zero, so
    // the advantages are exactly zero, not mean-subtraction residue.
    return make_advantage_vector(std::vector<double>(g, 0.0),
                                 SignalMode::grpo, false);
  }

  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);  // population variance
  const double denom = std::sqrt(var) + epsilon;

  std::vector<double> values(g);
  for (std::size_t i = 0; i < g; ++i) values[i] = (rewards[i] - mean) / denom;
  return make_advantage_vector(std::move(values), SignalMode::grpo, false);
}

ResponseText make_anchor(const IdSet& target, const CatalogShape& shape) {
  if (target.empty()) {
    throw std::invalid_argument("cannot build an anchor from an empty target");
  }
  std::string text;
  for (const SemanticId& id : target.ids) {
    if (!shape.contains(id)) {
      throw std::invalid_argument("anchor target ID out of catalog bounds");
    }
    text += render_sid(id).text;
  }
  return make_response_text(std::move(text));
}

ScoredGroup repair_group(ScoredGroup group, const CatalogShape& shape,
                         const PhiWeights& phi) {
  if (hit_count(group) > 0) return group;

  int j_rep = 0;
  for (int i = 1; i < group.size(); ++i) {
    if (group.structurals[i] < group.structurals[j_rep]) j_rep = i;
  }

  ResponseText anchor = make_anchor(group.target, shape);
  IdSet predicted = parse_response(anchor.text, shape);
  group.rewards[j_rep] = task_reward(predicted, group.target);
  group.structurals[j_rep] = structural_score(predicted, group.target, phi);
  group.responses[j_rep] = std::move(anchor);
  group.id_sets[j_rep] = std::move(predicted);
  group.repaired = true;
  group.replaced_index = j_rep;
  group.anchor_index = j_rep;
  return group;
}

std::optional<BoundaryPair> select_boundary(const ScoredGroup& group) {
  if (hit_count(group) == 0) {
    throw std::logic_error(
        "select_boundary needs a positive member; repair the group first");
  }
  BoundaryPair pair;
  for (int i = 0; i < group.size(); ++i) {
    if (group.rewards[i] > 0.0) {
      if (pair.i_plus < 0 || group.rewards[i] > group.rewards[pair.i_plus]) {
        pair.i_plus = i;
      }
    } else {
      if (pair.i_minus < 0 ||
          group.structurals[i] > group.structurals[pair.i_minus]) {
        pair.i_minus = i;
      }
    }
  }
  if (pair.i_minus < 0) return std::nullopt;  // no zero-reward member: skip
  return pair;
}

AdvantageVector recast_advantages(const ScoredGroup& group,
                                  const SignalConfig& config) {
  std::vector<double> values(group.size(), 0.0);
  const std::optional<BoundaryPair> pair = select_boundary(group);
  if (!pair) {
    return make_advantage_vector(std::move(values), config.mode, true);
  }
  values[pair->i_plus] = config.w;
  values[pair->i_minus] = -config.w;
  return make_advantage_vector(std::move(values), config.mode, false);
}

SignalResult build_signal(ScoredGroup group, const SignalConfig& config,
                          const CatalogShape& shape, const PhiWeights& phi) {
  switch (config.mode) {
    case SignalMode::grpo: {
      AdvantageVector adv = grpo_advantages(group.rewards, config.epsilon);
      return SignalResult{std::move(group), std::move(adv)};
    }
    case SignalMode::repair_only: {
      group = repair_group(std::move(group), shape, phi);
      AdvantageVector adv = grpo_advantages(group.rewards, config.epsilon);
      adv.mode = SignalMode::repair_only;
      return SignalResult{std::move(group), std::move(adv)};
    }
    case SignalMode::boundary_only: {
      AdvantageVector adv =
          hit_count(group) >= 1
              ? recast_advantages(group, config)
              : make_advantage_vector(
                    std::vector<double>(group.rewards.size(), 0.0),
                    config.mode, true);
      return SignalResult{std::move(group), std::move(adv)};
    }
    case SignalMode::recast: {
      group = repair_group(std::move(group), shape, phi);
      AdvantageVector adv = recast_advantages(group, config);
      return SignalResult{std::move(group), std::move(adv)};
    }
  }
  throw std::invalid_argument("unknown SignalMode value");
}

ScoredGroup group_from_json(const std::string& line, const CatalogShape& shape,
                            const PhiWeights& phi) {
  const json doc = json::parse(line);
  std::vector<ResponseText> responses;
  for (const json& r : doc.at("responses")) {
    responses.push_back(make_response_text(r.get<std::string>()));
  }
  ScoredGroup group = score_group(doc.at("prompt_id").get<int>(),
                                  id_set_from_json(doc.at("target")),
                                  std::move(responses), shape, phi);
  // Precomputed scores, when complete, override the recomputation so the
  // filter can process externally scored groups verbatim.
  if (doc.contains("rewards") && doc.contains("structurals") &&
      doc["rewards"].size() == group.responses.size() &&
      doc["structurals"].size() == group.responses.size()) {
    group.rewards = doc["rewards"].get<std::vector<double>>();
    group.structurals = doc["structurals"].get<std::vector<double>>();
  }
  group.validate();
  return group;
}

std::string group_to_json(const ScoredGroup& group) {
  json doc;
  doc["prompt_id"] = group.prompt_id;
  json responses = json::array();
  json id_sets = json::array();
  for (const ResponseText& r : group.responses) responses.push_back(r.text);
  for (const IdSet& s : group.id_sets) id_sets.push_back(id_set_to_json(s));
  doc["responses"] = std::move(responses);
  doc["id_sets"] = std::move(id_sets);
  doc["rewards"] = group.rewards;
  doc["structurals"] = group.structurals;
  doc["target"] = id_set_to_json(group.target);
  doc["repaired"] = group.repaired;
  doc["replaced_index"] = optional_index_to_json(group.replaced_index);
  doc["anchor_index"] = optional_index_to_json(group.anchor_index);
  return doc.dump();
}

std::string signal_to_json(const ScoredGroup& group,
                           const AdvantageVector& advantages) {
  json doc;
  doc["prompt_id"] = group.prompt_id;
  doc["mode"] = to_string(advantages.mode);
  doc["values"] = advantages.values;
  doc["active"] = advantages.active;
  doc["skipped"] = advantages.skipped;
  doc["repaired"] = group.repaired;
  doc["replaced_index"] = optional_index_to_json(group.replaced_index);
  doc["anchor_index"] = optional_index_to_json(group.anchor_index);
  json responses = json::array();
  for (const ResponseText& r : group.responses) responses.push_back(r.text);
  doc["responses"] = std::move(responses);
  doc["rewards"] = group.rewards;
  doc["structurals"] = group.structurals;
  return doc.dump();
}

}  // namespace recast
