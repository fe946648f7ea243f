#include "advlat/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "advlat/ops.hpp"

namespace advlat {

// ---------------------------------------------------------------------------
// vocabulary

void Vocabulary::validate() const {
  if (embeddings.rank() != 2) throw DimensionError("vocabulary embeddings must be [V x e]");
  if (embeddings.extent(0) != tokens.size()) {
    throw std::invalid_argument("vocabulary has " + std::to_string(tokens.size()) + " tokens but " +
                                std::to_string(embeddings.extent(0)) + " embedding rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& t : tokens)
    if (!seen.insert(t).second) throw std::invalid_argument("duplicate vocabulary token '" + t + "'");
  const std::size_t e = embeddings.extent(1);
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    bool nonzero = false;
    for (std::size_t c = 0; c < e && !nonzero; ++c) nonzero = embeddings.at(r, c) != 0.0;
    if (!nonzero) throw DomainError("embedding row for '" + tokens[r] + "' is zero");
  }
}

Vocabulary Vocabulary::from_embeddings(const Tensor& embeddings) {
  Vocabulary v;
  v.embeddings = embeddings;
  for (std::size_t i = 0; i < embeddings.extent(0); ++i) v.tokens.push_back("t" + std::to_string(i));
  v.validate();
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path);
  Vocabulary v;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.tokens.push_back(line);
  }
  v.embeddings = load_tns(path + ".tns");
  v.validate();
  return v;
}

void Vocabulary::save(const std::string& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary " + path);
  for (const auto& t : tokens) out << t << '\n';
  save_tns(path + ".tns", embeddings);
}

// ---------------------------------------------------------------------------
// masks and adapter

InfluencerMask InfluencerMask::direct(std::size_t num_nodes, std::size_t target) {
  if (target >= num_nodes) throw std::out_of_range("target node out of range");
  InfluencerMask m;
  m.b.assign(num_nodes, 0.0);
  m.b[target] = 1.0;
  m.attackers = {target};
  m.targets = {target};
  return m;
}

void InfluencerMask::validate(std::size_t num_nodes, bool influencer) const {
  if (b.size() != num_nodes) throw std::invalid_argument("mask length differs from node count");
  std::set<std::size_t> a(attackers.begin(), attackers.end());
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const bool on = a.count(i) > 0;
    if (b[i] != (on ? 1.0 : 0.0)) throw std::invalid_argument("mask entry " + std::to_string(i) + " disagrees with attacker set");
  }
  for (std::size_t t : targets) {
    if (influencer && a.count(t)) throw std::invalid_argument("influencer mask contains its target " + std::to_string(t));
    if (!influencer && !a.count(t)) throw std::invalid_argument("direct mask misses its target " + std::to_string(t));
  }
}

std::string to_string(Combination c) {
  switch (c) {
    case Combination::additive: return "additive";
    case Combination::masked: return "masked";
    case Combination::soft_nn: return "soft-nn";
  }
  return "?";
}

std::string to_string(Similarity s) { return s == Similarity::l2 ? "l2" : "angular"; }

void DomainAdapter::validate() const {
  if (combination == Combination::soft_nn) {
    if (!vocab) throw std::invalid_argument("soft-nn combination requires a vocabulary");
    if (!(tau > 0.0)) throw std::invalid_argument("soft-nn temperature must be positive");
  }
  if (combination == Combination::masked && !mask) throw std::invalid_argument("masked combination requires a mask");
  if (range && !(range->first < range->second)) throw std::invalid_argument("empty clamp range");
}

DomainAdapter DomainAdapter::for_domain(Domain d) {
  DomainAdapter a;
  a.domain = d;
  switch (d) {
    case Domain::vector: break;
    case Domain::image: a.range = std::make_pair(0.0, 1.0); break;
    case Domain::text: a.combination = Combination::soft_nn; break;
    case Domain::graph: a.combination = Combination::masked; break;
  }
  return a;
}

// ---------------------------------------------------------------------------
// combination functions

Var combine_additive(const Var& delta, const Var& x) {
  if (delta.shape() != x.shape()) {
    throw DimensionError("combine_additive: perturbation " + shape_string(delta.shape()) + " vs input " + shape_string(x.shape()));
  }
  return add(x, delta);
}

Tensor clamp_to_range(Tensor x, double lo, double hi) {
  for (auto& v : x.data()) v = std::clamp(v, lo, hi);
  return x;
}

namespace {

void check_masked_shapes(const Shape& delta, const Shape& x, const InfluencerMask& mask) {
  if (delta != x || x.size() != 2) {
    throw DimensionError("combine_masked: perturbation " + shape_string(delta) + " vs features " + shape_string(x));
  }
  if (mask.b.size() != x[0]) {
    throw DimensionError("combine_masked: mask covers " + std::to_string(mask.b.size()) + " nodes, features have " + std::to_string(x[0]));
  }
}

}  // namespace

Tensor combine_masked(const Tensor& delta, const Tensor& x, const InfluencerMask& mask) {
  check_masked_shapes(delta.shape(), x.shape(), mask);
  Tensor out = x;
  const std::size_t f = x.extent(1);
  for (std::size_t i = 0; i < x.extent(0); ++i) {
    if (mask.b[i] == 0.0) continue;
    for (std::size_t k = 0; k < f; ++k) out[i * f + k] += mask.b[i] * delta[i * f + k];
  }
  return out;
}

Var combine_masked(const Var& delta, const Var& x, const InfluencerMask& mask) {
  check_masked_shapes(delta.shape(), x.shape(), mask);
  return add(x, scale_rows(delta, mask.b));
}

SoftNnOutput soft_nn_combine(const Var& delta, const Var& embedded, const Vocabulary& vocab, double tau) {
  if (!(tau > 0.0)) throw DomainError("soft_nn_combine: temperature must be positive");
  const Var perturbed = combine_additive(delta, embedded);
  const Var angles = angular_distances(perturbed, vocab.embeddings);
  const Var weights = softmax(neg(angles), 1, tau);
  return {matmul(weights, delta.tape().constant(vocab.embeddings)), weights};
}

std::size_t hard_nn_project(std::span<const double> v, const Vocabulary& vocab) {
  if (v.size() != vocab.dim()) throw DimensionError("hard_nn_project: query length differs from embedding width");
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
    throw DomainError("hard_nn_project: zero query has no direction");
  }
  const std::size_t e = vocab.dim();
  const auto table = vocab.embeddings.data();
  std::size_t best = 0;
  double best_angle = INFINITY;
  for (std::size_t w = 0; w < vocab.size(); ++w) {
    const double a = angle_between(v, table.subspan(w * e, e));
    if (a < best_angle) {
      best_angle = a;
      best = w;
    }
  }
  return best;
}

std::vector<std::size_t> hard_nn_project_rows(const Tensor& rows, const Vocabulary& vocab) {
  const std::size_t e = rows.extent(1);
  std::vector<std::size_t> out(rows.extent(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = hard_nn_project(rows.data().subspan(r * e, e), vocab);
  return out;
}

// ---------------------------------------------------------------------------
// graph attacker sets

InfluencerMask select_influencer_set(const GraphDataset& graph, std::size_t target, std::size_t k, SeededRng& rng) {
  const std::size_t n = graph.num_nodes();
  if (n < 2) throw std::invalid_argument("influencer attack needs at least two nodes");
  if (target >= n) throw std::out_of_range("target node out of range");
  if (k > n - 1) throw std::invalid_argument("cannot pick " + std::to_string(k) + " influencers among " + std::to_string(n - 1) + " other nodes");

  std::vector<std::size_t> nbrs = graph.neighbors(target);
  std::vector<std::size_t> chosen;
  if (nbrs.size() >= k) {
    rng.shuffle(nbrs);
    chosen.assign(nbrs.begin(), nbrs.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    chosen = nbrs;
    const std::unordered_set<std::size_t> taken(nbrs.begin(), nbrs.end());
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i)
      if (i != target && !taken.count(i)) pool.push_back(i);
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - nbrs.size()));
  }
  std::sort(chosen.begin(), chosen.end());

  InfluencerMask m;
  m.b.assign(n, 0.0);
  for (std::size_t a : chosen) m.b[a] = 1.0;
  m.attackers = std::move(chosen);
  m.targets = {target};
  return m;
}

// ---------------------------------------------------------------------------
// similarity

double similarity(Similarity mode, const Tensor& x, const Tensor& x_prime) {
  if (x.shape() != x_prime.shape()) throw DimensionError("similarity: shape mismatch");
  if (mode == Similarity::angular) {
    const auto a = x.data(), b = x_prime.data();
    auto zero = [](std::span<const double> s) { return std::all_of(s.begin(), s.end(), [](double v) { return v == 0.0; }); };
    if (zero(a) || zero(b)) throw DomainError("angular similarity of a zero vector");
    return angle_between(a, b);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += (x[i] - x_prime[i]) * (x[i] - x_prime[i]);
  return std::sqrt(s);
}

Var similarity(Similarity mode, const Tensor& x, const Var& x_prime) {
  if (x.shape() != x_prime.shape()) throw DimensionError("similarity: shape mismatch");
  Tape& tape = x_prime.tape();
  if (mode == Similarity::l2) return l2_norm(sub(x_prime, tape.constant(x)));
  const std::size_t n = x.numel();
  const Var a = angular_distances(reshape(x_prime, {1, n}), x.reshaped({1, n}));
  return reshape(a, {});
}

// ---------------------------------------------------------------------------
// token edits

double token_change_rate(std::span<const double> original, std::span<const double> perturbed) {
  if (original.size() != perturbed.size()) throw DimensionError("token_change_rate: length mismatch");
  if (original.empty()) return 0.0;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < original.size(); ++i) changed += original[i] != perturbed[i];
  return static_cast<double>(changed) / static_cast<double>(original.size());
}

std::vector<double> enforce_token_cap(std::span<const double> original, std::span<const double> perturbed,
                                      std::span<const double> delta_norms, double fraction) {
  const std::size_t t = original.size();
  if (perturbed.size() != t || delta_norms.size() != t) throw DimensionError("enforce_token_cap: length mismatch");
  const auto cap = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(t) + 1e-9));
  std::vector<std::size_t> changed;
  for (std::size_t i = 0; i < t; ++i)
    if (original[i] != perturbed[i]) changed.push_back(i);
  std::stable_sort(changed.begin(), changed.end(), [&](std::size_t a, std::size_t b) { return delta_norms[a] > delta_norms[b]; });
  std::vector<double> out(original.begin(), original.end());
  for (std::size_t k = 0; k < std::min(cap, changed.size()); ++k) out[changed[k]] = perturbed[changed[k]];
  return out;
}

}  // namespace advlat
