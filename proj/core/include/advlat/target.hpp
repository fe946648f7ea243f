#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlat/data.hpp"
#include "advlat/nn.hpp"

namespace advlat {

enum class Arch { mlp, cnn, lstm, gcn };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

struct TargetSpec {
  Arch arch = Arch::mlp;
  std::size_t hidden = 32;
  std::size_t embed_dim = 16;     // lstm
  std::size_t conv_channels = 4;  // cnn
};

/// Dense feed-forward classifier on flattened inputs.
struct MlpClassifier {
  LinearLayer hidden;
  LinearLayer head;
};

/// conv(3x3, pad 1) -> relu -> flatten -> linear -> relu -> linear
struct CnnClassifier {
  Shape input_shape;
  Conv2dLayer conv;
  LinearLayer hidden;
  LinearLayer head;
};

/// Token embedding -> single-layer LSTM -> linear head on the final state.
struct LstmClassifier {
  Parameter embedding;  // [V x e]
  LstmCell cell;
  LinearLayer head;
};

/// Single graph convolution producing class scores: A_hat X W + b.
struct GcnClassifier {
  GraphConvLayer conv;
  Parameter bias;  // [C]
};

/// Whitebox target f exposing raw class scores s(x, .).
class TargetModel {
 public:
  TargetModel() = default;
  static TargetModel create(const TargetSpec& spec, const Shape& input_shape, std::size_t num_classes,
                            std::size_t vocab_size, SeededRng& rng);

  Arch arch() const { return spec_.arch; }
  const TargetSpec& spec() const { return spec_; }
  std::size_t num_classes() const { return num_classes_; }
  const Shape& input_shape() const { return input_shape_; }

  /// mlp/cnn: x[B x D] (flattened inputs) -> scores[B x C].
  Var scores_dense(Binding& bind, const Var& x) const;
  /// lstm: one [B x e] embedding per step -> scores[B x C].
  Var scores_embedded(Binding& bind, const std::vector<Var>& steps) const;
  /// lstm: token ids[B x T] -> scores[B x C].
  Var scores_tokens(Binding& bind, const Tensor& tokens) const;
  /// gcn: normalized adjacency and node features -> scores[N x C].
  Var scores_graph(Binding& bind, const Var& a_hat, const Var& features) const;
  /// gcn: scores of target nodes when each target's attacker rows are
  /// perturbed in isolation. `clean` holds clean scores of the targets
  /// [B x C], `coupling` [B x P] holds A_hat[target, attacker] for each
  /// (target, attacker slot) pair and `deltas` [P x F] the pair perturbations.
  /// Exact because the single-layer model is linear in its features.
  Var scores_graph_isolated(Binding& bind, const Var& clean, const Tensor& coupling, const Var& deltas) const;

  const Tensor& embedding() const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::uint64_t checksum() const;

  void save(const std::string& path) const;
  static TargetModel load(const std::string& path);

 private:
  TargetSpec spec_;
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::size_t vocab_size_ = 0;
  std::variant<MlpClassifier, CnnClassifier, LstmClassifier, GcnClassifier> net_;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> train_accuracy;
  std::vector<double> validation_accuracy;
  std::vector<double> loss;
};

/// Cross-entropy minimized with Adam on the train split; validation accuracy
/// is reported per epoch and never used for training.
TrainHistory train_target(TargetModel& model, const Dataset& data, const TrainConfig& config);
TrainHistory train_target(TargetModel& model, const GraphDataset& graph, const TrainConfig& config);

struct AccuracyResult {
  double accuracy = 0.0;
  bool empty = false;  // set when no examples were given; accuracy is then 0
};

AccuracyResult accuracy(const TargetModel& model, const Dataset& data, const std::vector<std::size_t>& indices);
AccuracyResult accuracy(const TargetModel& model, const GraphDataset& graph, const std::vector<std::size_t>& nodes);

/// Stack examples into a [B x D] tensor (flattened).
Tensor stack_inputs(const Dataset& data, const std::vector<std::size_t>& indices);
/// Predicted labels for a batch of flattened dense or token inputs.
std::vector<std::size_t> predict(const TargetModel& model, const Tensor& batch);

}  // namespace advlat
