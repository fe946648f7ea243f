#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "advlat/autodiff.hpp"
#include "advlat/rng.hpp"

namespace advlat {

/// A named trainable tensor owned by a layer.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Maps parameters onto leaves (trainable) or constants (frozen) of one tape.
/// Each parameter is bound at most once per tape.
class Binding {
 public:
  Binding(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  Var operator()(const Parameter& p);
  /// Use `v` wherever `p` is bound on this tape (gradient checks probe
  /// parameters this way).
  void substitute(const Parameter& p, const Var& v);
  Tape& tape() const { return tape_; }
  bool trainable() const { return trainable_; }
  /// Gradient of each parameter in order; zeros for parameters never bound.
  std::vector<Tensor> gradients(const Gradients& grads, std::span<Parameter* const> params) const;

 private:
  Tape& tape_;
  bool trainable_;
  std::unordered_map<const Parameter*, Var> bound_;
};

/// FNV-1a over each parameter's name, shape and value bytes.
std::uint64_t parameter_checksum(std::span<Parameter* const> params);

/// Uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, SeededRng& rng, Shape shape = {});
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

struct LinearLayer {
  std::size_t in = 0, out = 0;
  Parameter weight;  // [out x in]
  Parameter bias;    // [out]

  static LinearLayer create(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng);
  /// x[B x in] -> [B x out]
  Var forward(Binding& bind, const Var& x) const;
  void collect(std::vector<Parameter*>& out);
};

/// D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency with zero diagonal.
Tensor gcn_normalize(const Tensor& adjacency);

struct GraphConvLayer {
  std::size_t in = 0, out = 0;
  Parameter weight;  // [in x out]

  static GraphConvLayer create(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng);
  /// A_hat * features * W; activation is the caller's business.
  Var forward(Binding& bind, const Var& a_hat, const Var& features) const;
  void collect(std::vector<Parameter*>& out);
};

struct LstmState {
  Var hidden;  // [B x h]
  Var cell;    // [B x h]
};

struct LstmOutput {
  std::vector<Var> hidden_states;
  Var final_hidden;
};

/// Single-layer LSTM cell. Gate blocks are [h x (h + in)] acting on [h_prev ; x].
struct LstmCell {
  std::size_t in = 0, hidden = 0;
  Parameter w_input, w_forget, w_output, w_candidate;
  Parameter b_input, b_forget, b_output, b_candidate;

  static LstmCell create(const std::string& name, std::size_t in, std::size_t hidden, SeededRng& rng);
  LstmState step(Binding& bind, const LstmState& prev, const Var& x) const;
  void collect(std::vector<Parameter*>& out);
};

/// Runs the cell over `sequence` (each step [B x in]) from a zero state.
LstmOutput lstm_forward(const LstmCell& cell, Binding& bind, const std::vector<Var>& sequence);

struct Conv2dLayer {
  std::size_t in_channels = 0, out_channels = 0, kernel_h = 0, kernel_w = 0, stride = 1, padding = 0;
  Parameter kernel;  // [outC x inC x kH x kW]
  Parameter bias;    // [outC]

  static Conv2dLayer create(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride, std::size_t padding, SeededRng& rng);
  std::size_t output_extent(std::size_t in_extent, std::size_t k) const;
  /// input[C x H x W] -> [outC x oH x oW] via im2col and one matmul.
  Var forward(Binding& bind, const Var& input) const;
  void collect(std::vector<Parameter*>& out);
};

/// Mean negative log-softmax of the true class over rows of logits[N x C].
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

/// Row argmax with ties resolved toward the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Parameter* const> params, std::span<const Tensor> grads);
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

void sgd_step(std::span<Parameter* const> params, std::span<const Tensor> grads, double lr);

}  // namespace advlat
