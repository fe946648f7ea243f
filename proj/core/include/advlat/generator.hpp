#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlat/adapters.hpp"
#include "advlat/nn.hpp"
#include "advlat/target.hpp"

namespace advlat {

struct GeneratorConfig {
  double lambda = 0.1;
  std::size_t latent_dim = 8;
  double tau = 1.0;  // text only
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::size_t resample = 0;
  std::uint64_t seed = 0;
  bool variational = true;  // false: deterministic autoencoder, no sampling, no KL
  std::size_t hidden = 64;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep the values of `defaults`.
  static GeneratorConfig from_json(const nlohmann::json& j, GeneratorConfig defaults);
  static GeneratorConfig from_json(const nlohmann::json& j);
};

enum class GraphAttack { direct, influencer };
std::string to_string(GraphAttack g);
GraphAttack graph_attack_from_string(const std::string& s);

/// Examples prepared for one generator pass. For graphs every example is a
/// target node with `pairs_per_example` attacker rows, laid out contiguously.
struct AttackBatch {
  std::vector<std::size_t> ids;
  std::vector<std::size_t> labels;
  Tensor inputs;  // dense [B x D] or tokens [B x T]; unused for graphs
  std::vector<std::size_t> pair_nodes;
  std::size_t pairs_per_example = 1;
  Tensor coupling;      // [B x P], A_hat[target, attacker]
  Tensor clean_scores;  // [B x C]

  std::size_t size() const { return ids.size(); }
  /// Rows the encoder produces: one per example, or one per attacker pair.
  std::size_t encoder_rows() const { return pair_nodes.empty() ? ids.size() : pair_nodes.size(); }
};

/// A frozen target together with the data and domain adapter it is attacked
/// through. Holds references: target and data must outlive the problem.
class AttackProblem {
 public:
  /// Vector, image or text data. Text problems take the vocabulary from the
  /// target's embedding table when the adapter carries none.
  AttackProblem(const TargetModel& target, const Dataset& data, DomainAdapter adapter);
  /// Graph problems fix one attacker set per node, drawn from
  /// stream(mask_seed, node) for influencer attacks.
  AttackProblem(const TargetModel& target, const GraphDataset& graph, DomainAdapter adapter, GraphAttack mode,
                std::size_t influencers = 5, std::uint64_t mask_seed = 0);

  Domain domain() const { return adapter_.domain; }
  const DomainAdapter& adapter() const { return adapter_; }
  const TargetModel& target() const { return *target_; }
  const Dataset* dataset() const { return data_; }
  const GraphDataset* graph() const { return graph_; }
  GraphAttack graph_mode() const { return mode_; }

  std::vector<std::size_t> examples(Split s) const;
  Split split_of(std::size_t id) const;
  std::size_t label_of(std::size_t id) const;
  /// Flattened input width (dense), sequence length (text) or feature count (graph).
  std::size_t input_width() const;
  std::size_t sequence_length() const;
  std::size_t embedding_dim() const;
  /// Attacker mask of a graph target.
  InfluencerMask mask_for(std::size_t node) const;
  const std::vector<std::size_t>& attackers_of(std::size_t node) const { return attackers_.at(node); }
  const Tensor& propagated_features() const { return propagated_; }

  AttackBatch make_batch(const std::vector<std::size_t>& ids) const;

 private:
  const TargetModel* target_ = nullptr;
  const Dataset* data_ = nullptr;
  const GraphDataset* graph_ = nullptr;
  DomainAdapter adapter_;
  GraphAttack mode_ = GraphAttack::direct;
  Tensor a_hat_;
  Tensor propagated_;  // A_hat X, the generator's graph-encoder input
  Tensor clean_scores_;
  std::vector<std::vector<std::size_t>> attackers_;
};

struct EncoderOutput {
  Var mu;     // [rows x d]
  Var sigma;  // [rows x d]; invalid for the deterministic variant
  bool has_sigma() const { return sigma.valid(); }
};

/// Encoder q(z|x) with mean and softplus scale heads, and a decoder from z
/// to a perturbation in the adapter's space.
class AttackGenerator {
 public:
  static AttackGenerator create(const AttackProblem& problem, const GeneratorConfig& config, SeededRng& rng);

  const GeneratorConfig& config() const { return config_; }
  Domain domain() const { return domain_; }
  bool variational() const { return config_.variational; }
  std::size_t latent_dim() const { return config_.latent_dim; }

  EncoderOutput encode(Binding& bind, const AttackProblem& problem, const AttackBatch& batch) const;
  /// dense: [rows x D]; text: [rows x (T*e)] with step t in columns
  /// [t*e, (t+1)*e); graph: [pairs x F].
  Var decode(Binding& bind, const Var& z) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::uint64_t checksum() const;

  void save(const std::string& path) const;
  static AttackGenerator load(const std::string& path);

 private:
  GeneratorConfig config_;
  Domain domain_ = Domain::vector;
  Shape input_shape_;        // dense: per-example shape
  std::size_t out_width_ = 0;  // decoder output per step / row
  std::size_t steps_ = 1;      // text sequence length
  std::size_t embed_dim_ = 0;  // text encoder input width

  std::optional<LinearLayer> enc_dense_;
  std::optional<Conv2dLayer> enc_conv_;
  std::optional<LstmCell> enc_lstm_;
  std::optional<Parameter> enc_graph_;  // [F x H]
  std::optional<LinearLayer> enc_mix_;  // conv flatten or graph pair -> H
  LinearLayer mu_head_;
  std::optional<LinearLayer> sigma_head_;
  std::optional<LinearLayer> dec_hidden_;
  std::optional<LstmCell> dec_lstm_;
  LinearLayer dec_out_;

  void build(SeededRng& rng);
  Var backbone(Binding& bind, const AttackProblem& problem, const AttackBatch& batch) const;
};

/// z = mu + sigma * eps; returns mu for the deterministic variant.
/// `eps` must match mu's shape when sigma is present.
Var reparameterize(const EncoderOutput& out, const Tensor& eps);
/// Per-row KL(N(mu, diag sigma^2) || N(0, I)) -> [rows].
Var kl_diag_gaussian(const EncoderOutput& out);
/// Per-row hinge max(s_y - max_{c != y} s_c, 0) -> [B]; zero subgradient at the kink.
Var max_margin_loss(const Var& scores, const std::vector<std::size_t>& labels);

struct ObjectiveTerms {
  Var total;
  Var margin;    // mean hinge
  Var penalty;   // mean(distance + kl)
};
/// mean(hinge) + lambda * mean(distance + kl). `kl` may be invalid (deterministic variant).
ObjectiveTerms hybrid_objective(const Var& scores, const std::vector<std::size_t>& labels, const Var& distance,
                                const Var& kl, double lambda);

/// Differentiable pass used in training: soft mixture for text, no clamp.
struct AttackForward {
  EncoderOutput enc;
  Var z;
  Var delta;
  Var scores;    // [B x C]
  Var distance;  // [B]
  Var kl;        // [B]; invalid for the deterministic variant
};

AttackForward attack_forward(const AttackGenerator& gen, Binding& gen_bind, Binding& target_bind,
                             const AttackProblem& problem, const AttackBatch& batch, const Tensor& eps);

struct AttackerHistory {
  std::vector<double> loss;
  std::vector<double> success_rate;
  std::vector<double> mean_distance;
  std::vector<double> mean_kl;
};

/// Adam on the hybrid objective over the train split only.
AttackerHistory train_attacker(AttackGenerator& gen, const AttackProblem& problem, const GeneratorConfig& config);

struct AdversarialRecord {
  std::size_t example_id = 0;
  Split split = Split::test;
  std::size_t label = 0;
  std::size_t predicted = 0;
  bool success = false;
  double distance = 0.0;
  double token_change_rate = 0.0;      // text only
  std::size_t samples_consumed = 1;
  std::optional<std::size_t> first_success;  // attempt index of the first success
  Tensor original;
  Tensor perturbed;  // dense: x'; text: token ids; graph: attacker-row perturbations
  std::vector<std::size_t> attackers;  // graph only

  bool operator==(const AdversarialRecord&) const = default;
};

/// Single-pass generation: encode, sample, decode, combine, classify.
AdversarialRecord generate(const AttackGenerator& gen, const AttackProblem& problem, std::size_t id, SeededRng& rng);
/// Draws fresh codes for up to budget + 1 attempts and keeps the first
/// success. The deterministic variant makes a single attempt.
AdversarialRecord resample_attack(const AttackGenerator& gen, const AttackProblem& problem, std::size_t id,
                                  std::size_t budget, SeededRng& rng);
/// Batched resample_attack where example `id` draws from stream(seed, id).
/// Results are independent of `workers` and returned in `ids` order.
std::vector<AdversarialRecord> attack_examples(const AttackGenerator& gen, const AttackProblem& problem,
                                               const std::vector<std::size_t>& ids, std::size_t budget,
                                               std::uint64_t seed, std::size_t workers = 1);

/// Outcome of a record under a smaller budget, from its cached first success.
bool succeeds_within(const AdversarialRecord& r, std::size_t budget);
std::size_t samples_within(const AdversarialRecord& r, std::size_t budget, bool variational);

}  // namespace advlat
