#include "recast/env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

namespace recast {

namespace {

using nlohmann::json;

constexpr char kPolicyMagic[] = "RCPOL1\n";
constexpr std::size_t kPolicyMagicLen = sizeof(kPolicyMagic) - 1;

// Checkpoints store raw doubles; the format is pinned to the only byte
// order this project targets.
static_assert(std::endian::native == std::endian::little,
              "policy checkpoint format assumes little-endian storage");

double log_sum_exp(const double* z, int n) {
  double zmax = z[0];
  for (int i = 1; i < n; ++i) zmax = std::max(zmax, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - zmax);
  return zmax + std::log(sum);
}

std::vector<double> softmax(const double* z, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  double zmax = z[0];
  for (int i = 1; i < n; ++i) zmax = std::max(zmax, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(z[i] - zmax);
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
  return out;
}

int inverse_cdf(const std::vector<double>& probs, double u) {
  double cum = 0.0;
  for (int k = 0; k + 1 < static_cast<int>(probs.size()); ++k) {
    cum += probs[k];
    if (u < cum) return k;
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

TabularPolicy::TabularPolicy(const CatalogShape& shape, int num_prompts)
    : shape_(shape), num_prompts_(num_prompts) {
  shape_.validate();
  if (num_prompts < 1) {
    throw std::invalid_argument("policy needs at least one prompt");
  }
  const std::size_t na = static_cast<std::size_t>(shape_.n_a);
  const std::size_t nb = static_cast<std::size_t>(shape_.n_b);
  const std::size_t nc = static_cast<std::size_t>(shape_.n_c);
  block_size_ = na + na * nb + na * nb * nc;
  params_.assign(block_size_ * static_cast<std::size_t>(num_prompts_), 0.0);
}

void TabularPolicy::check_prompt(int prompt) const {
  if (prompt < 0 || prompt >= num_prompts_) {
    throw std::out_of_range("prompt index out of range");
  }
}

std::size_t TabularPolicy::offset_a(int prompt, int a) const {
  return static_cast<std::size_t>(prompt) * block_size_ +
         static_cast<std::size_t>(a);
}

std::size_t TabularPolicy::offset_b(int prompt, int a, int b) const {
  return static_cast<std::size_t>(prompt) * block_size_ +
         static_cast<std::size_t>(shape_.n_a) +
         static_cast<std::size_t>(a * shape_.n_b + b);
}

std::size_t TabularPolicy::offset_c(int prompt, int a, int b, int c) const {
  return static_cast<std::size_t>(prompt) * block_size_ +
         static_cast<std::size_t>(shape_.n_a) +
         static_cast<std::size_t>(shape_.n_a) *
             static_cast<std::size_t>(shape_.n_b) +
         static_cast<std::size_t>((a * shape_.n_b + b) * shape_.n_c + c);
}

std::vector<double> TabularPolicy::level_a_probs(int prompt) const {
  check_prompt(prompt);
  return softmax(&params_[offset_a(prompt, 0)], shape_.n_a);
}

std::vector<double> TabularPolicy::level_b_probs(int prompt, int a) const {
  check_prompt(prompt);
  return softmax(&params_[offset_b(prompt, a, 0)], shape_.n_b);
}

std::vector<double> TabularPolicy::level_c_probs(int prompt, int a, int b) const {
  check_prompt(prompt);
  return softmax(&params_[offset_c(prompt, a, b, 0)], shape_.n_c);
}

double TabularPolicy::log_prob(int prompt, const SemanticId& id) const {
  check_prompt(prompt);
  if (!shape_.contains(id)) {
    throw std::invalid_argument("log_prob id out of catalog bounds");
  }
  const double* za = &params_[offset_a(prompt, 0)];
  const double* zb = &params_[offset_b(prompt, id.a, 0)];
  const double* zc = &params_[offset_c(prompt, id.a, id.b, 0)];
  return za[id.a] - log_sum_exp(za, shape_.n_a) +
         zb[id.b] - log_sum_exp(zb, shape_.n_b) +
         zc[id.c] - log_sum_exp(zc, shape_.n_c);
}

std::vector<double> TabularPolicy::item_distribution(int prompt) const {
  check_prompt(prompt);
  std::vector<double> joint(static_cast<std::size_t>(shape_.item_count()));
  const std::vector<double> pa = level_a_probs(prompt);
  std::size_t idx = 0;
  for (int a = 0; a < shape_.n_a; ++a) {
    const std::vector<double> pb = level_b_probs(prompt, a);
    for (int b = 0; b < shape_.n_b; ++b) {
      const std::vector<double> pc = level_c_probs(prompt, a, b);
      const double pab = pa[a] * pb[b];
      for (int c = 0; c < shape_.n_c; ++c) joint[idx++] = pab * pc[c];
    }
  }
  return joint;
}

SemanticId TabularPolicy::sample(int prompt, Rng& rng) const {
  check_prompt(prompt);
  const int a = inverse_cdf(level_a_probs(prompt), rng.next_unit());
  const int b = inverse_cdf(level_b_probs(prompt, a), rng.next_unit());
  const int c = inverse_cdf(level_c_probs(prompt, a, b), rng.next_unit());
  return SemanticId{a, b, c};
}

Dataset generate_dataset(const CatalogShape& shape, int num_prompts,
                         std::uint64_t seed) {
  shape.validate();
  if (shape.item_count() < 2) {
    throw std::invalid_argument("dataset catalogs need at least 2 items");
  }
  if (num_prompts < 1) {
    throw std::invalid_argument("dataset needs at least one prompt");
  }
  Dataset dataset;
  dataset.shape = shape;
  dataset.seed = seed;
  dataset.prompts.reserve(static_cast<std::size_t>(num_prompts));
  Rng rng(seed_for(seed, RngPurpose::dataset_target));
  for (int i = 0; i < num_prompts; ++i) {
    const SemanticId target = shape.id_at(
        static_cast<int>(rng.next_index(static_cast<std::uint64_t>(shape.item_count()))));
    dataset.prompts.push_back(PromptSpec{i, target, render_sid(target)});
  }
  return dataset;
}

std::vector<SampledResponse> sample_group(const TabularPolicy& policy,
                                          const PromptSpec& prompt, int g,
                                          Rng& rng, double malform_rate) {
  if (g < 2) throw std::invalid_argument("group size must be at least 2");
  if (!(malform_rate >= 0.0 && malform_rate < 1.0)) {
    throw std::invalid_argument("malform_rate must be in [0, 1)");
  }
  std::vector<SampledResponse> group;
  group.reserve(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    SampledResponse response;
    response.id = policy.sample(prompt.prompt_id, rng);
    response.logprob_old = policy.log_prob(prompt.prompt_id, response.id);
    response.valid = !(rng.next_unit() < malform_rate);
    response.text = response.valid ? render_sid(response.id)
                                   : make_response_text(kMalformedText);
    group.push_back(std::move(response));
  }
  return group;
}

void init_random_logits(TabularPolicy& policy, Rng& rng, double scale) {
  for (double& p : policy.params()) p = (rng.next_unit() * 2.0 - 1.0) * scale;
}

void save_dataset_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  json meta;
  meta["shape"] = {dataset.shape.n_a, dataset.shape.n_b, dataset.shape.n_c};
  meta["seed"] = dataset.seed;
  out << meta.dump() << '\n';
  for (const PromptSpec& p : dataset.prompts) {
    json line;
    line["prompt_id"] = p.prompt_id;
    line["target"] = {p.target.a, p.target.b, p.target.c};
    line["ground_truth"] = p.ground_truth_text.text;
    out << line.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("dataset file is empty: " + path);
  }
  const json meta = json::parse(line);
  Dataset dataset;
  dataset.shape = CatalogShape{meta.at("shape")[0].get<int>(),
                               meta.at("shape")[1].get<int>(),
                               meta.at("shape")[2].get<int>()};
  dataset.shape.validate();
  dataset.seed = meta.at("seed").get<std::uint64_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json doc = json::parse(line);
    PromptSpec prompt;
    prompt.prompt_id = doc.at("prompt_id").get<int>();
    prompt.target = SemanticId{doc.at("target")[0].get<int>(),
                               doc.at("target")[1].get<int>(),
                               doc.at("target")[2].get<int>()};
    prompt.ground_truth_text =
        make_response_text(doc.at("ground_truth").get<std::string>());
    if (prompt.prompt_id != static_cast<int>(dataset.prompts.size())) {
      throw std::runtime_error("dataset prompt_ids must be contiguous from 0");
    }
    if (!dataset.shape.contains(prompt.target)) {
      throw std::runtime_error("dataset target out of catalog bounds");
    }
    IdSet parsed = parse_response(prompt.ground_truth_text.text, dataset.shape);
    if (parsed.size() != 1 || !parsed.contains(prompt.target)) {
      throw std::runtime_error("ground-truth text does not parse to the target");
    }
    dataset.prompts.push_back(std::move(prompt));
  }
  if (dataset.prompts.empty()) {
    throw std::runtime_error("dataset has no prompts: " + path);
  }
  return dataset;
}

void save_policy(const TabularPolicy& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kPolicyMagic, static_cast<std::streamsize>(kPolicyMagicLen));
  const std::int32_t header[4] = {policy.shape().n_a, policy.shape().n_b,
                                  policy.shape().n_c, policy.num_prompts()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(policy.params().data()),
            static_cast<std::streamsize>(policy.params().size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

TabularPolicy load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open policy: " + path);
  char magic[kPolicyMagicLen];
  in.read(magic, static_cast<std::streamsize>(kPolicyMagicLen));
  if (!in || std::memcmp(magic, kPolicyMagic, kPolicyMagicLen) != 0) {
    throw std::runtime_error("not a policy checkpoint: " + path);
  }
  std::int32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error("truncated policy header: " + path);
  TabularPolicy policy(CatalogShape{header[0], header[1], header[2]}, header[3]);
  in.read(reinterpret_cast<char*>(policy.params().data()),
          static_cast<std::streamsize>(policy.params().size() * sizeof(double)));
  if (!in || in.gcount() !=
                 static_cast<std::streamsize>(policy.params().size() * sizeof(double))) {
    throw std::runtime_error("truncated policy parameters: " + path);
  }
  return policy;
}

}  // namespace recast
