#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advlat/autodiff.hpp"
#include "advlat/data.hpp"
#include "advlat/rng.hpp"

namespace advlat {

/// Token strings and their embedding rows. Rows must be nonzero so that
/// angular distances are defined.
struct Vocabulary {
  std::vector<std::string> tokens;
  Tensor embeddings;  // [V x e]

  std::size_t size() const { return tokens.size(); }
  std::size_t dim() const { return embeddings.extent(1); }
  void validate() const;

  /// Tokens "t0", "t1", ... for an existing embedding table.
  static Vocabulary from_embeddings(const Tensor& embeddings);
  /// One token per line in `path`; embeddings in `path + ".tns"`.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;
};

/// Binary row mask over the nodes of a graph. Direct attacks have
/// attackers == targets; influencer attacks keep the two disjoint.
struct InfluencerMask {
  std::vector<double> b;  // one entry per node, 1 exactly on attackers
  std::vector<std::size_t> attackers;
  std::vector<std::size_t> targets;

  static InfluencerMask direct(std::size_t num_nodes, std::size_t target);
  /// Throws std::invalid_argument when b disagrees with the attacker list,
  /// or when an influencer mask contains one of its targets.
  void validate(std::size_t num_nodes, bool influencer) const;
};

enum class Combination { additive, masked, soft_nn };
enum class Similarity { l2, angular };

std::string to_string(Combination c);
std::string to_string(Similarity s);

/// Binds combination and similarity functions to a domain.
struct DomainAdapter {
  Domain domain = Domain::vector;
  Combination combination = Combination::additive;
  Similarity similarity = Similarity::l2;
  double tau = 1.0;                               // soft_nn temperature
  std::optional<std::pair<double, double>> range;  // evaluation-time clamp
  std::optional<Vocabulary> vocab;
  std::optional<InfluencerMask> mask;

  /// Throws std::invalid_argument when a mode lacks what it needs.
  void validate() const;
  static DomainAdapter for_domain(Domain d);
};

/// x + delta. Shapes must match.
Var combine_additive(const Var& delta, const Var& x);
Tensor clamp_to_range(Tensor x, double lo, double hi);

/// x + b * delta row-wise over features[N x F]; rows with b = 0 are copied
/// from x unchanged.
Tensor combine_masked(const Tensor& delta, const Tensor& x, const InfluencerMask& mask);
Var combine_masked(const Var& delta, const Var& x, const InfluencerMask& mask);

struct SoftNnOutput {
  Var mixed;    // [M x e] convex combination of vocabulary rows
  Var weights;  // [M x V] attention weights, rows sum to one
};

/// Differentiable nearest-neighbour mixture of each perturbed row
/// (embedded[M x e] + delta[M x e]) over the vocabulary. Weights are
/// softmax(-angle / tau), so nearer words weigh more.
SoftNnOutput soft_nn_combine(const Var& delta, const Var& embedded, const Vocabulary& vocab, double tau);

/// Index of the vocabulary row at the smallest angle from `v`; ties go to
/// the lowest index. Throws DomainError on a zero vector.
std::size_t hard_nn_project(std::span<const double> v, const Vocabulary& vocab);
std::vector<std::size_t> hard_nn_project_rows(const Tensor& rows, const Vocabulary& vocab);

/// Up to k neighbours of `target`, topped up with uniformly drawn
/// non-neighbour nodes when fewer exist. The target itself is never chosen.
InfluencerMask select_influencer_set(const GraphDataset& graph, std::size_t target, std::size_t k, SeededRng& rng);

/// l2: Euclidean distance over all entries. angular: angle in [0, pi]
/// between the flattened inputs.
double similarity(Similarity mode, const Tensor& x, const Tensor& x_prime);
/// Differentiable in x_prime; x is a constant reference point.
Var similarity(Similarity mode, const Tensor& x, const Var& x_prime);

double token_change_rate(std::span<const double> original, std::span<const double> perturbed);

/// Keep at most floor(fraction * T) changed positions, preferring those
/// with the largest perturbation norm (ties toward the earlier position);
/// every other position reverts to the original token.
std::vector<double> enforce_token_cap(std::span<const double> original, std::span<const double> perturbed,
                                      std::span<const double> delta_norms, double fraction = 0.15);

}  // namespace advlat
