#include "advlat/nn.hpp"

#include <cmath>
#include <cstring>

#include "advlat/ops.hpp"

namespace advlat {

Var Binding::operator()(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_.leaf(p.value) : tape_.constant(p.value);
  bound_.emplace(&p, v);
  return v;
}

void Binding::substitute(const Parameter& p, const Var& v) {
  if (v.shape() != p.value.shape()) {
    throw DimensionError("substitute for " + p.name + ": shape " + shape_string(v.shape()) + " vs " +
                         shape_string(p.value.shape()));
  }
  bound_[&p] = v;
}

std::vector<Tensor> Binding::gradients(const Gradients& grads, std::span<Parameter* const> params) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) {
    auto it = bound_.find(p);
    out.push_back(it == bound_.end() ? Tensor(p->value.shape(), 0.0) : grads.of(it->second));
  }
  return out;
}

std::uint64_t parameter_checksum(std::span<Parameter* const> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    for (auto e : p->value.shape()) mix(&e, sizeof e);
    mix(p->value.data().data(), p->value.numel() * sizeof(double));
  }
  return h;
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  if (fan_in == 0 || fan_out == 0) throw DimensionError("glorot_init requires positive fans");
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, SeededRng& rng, Shape shape) {
  const double b = glorot_bound(fan_in, fan_out);
  if (shape.empty()) shape = {fan_out, fan_in};
  return sample_uniform(shape, -b, b, rng);
}

// ---------------------------------------------------------------------------

LinearLayer LinearLayer::create(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.weight = {name + ".weight", glorot_init(in, out, rng, {out, in})};
  l.bias = {name + ".bias", Tensor(Shape{out}, 0.0)};
  return l;
}

Var LinearLayer::forward(Binding& bind, const Var& x) const {
  if (x.value().rank() != 2 || x.value().extent(1) != in) {
    throw DimensionError(weight.name + ": expected [B x " + std::to_string(in) + "], got " + shape_string(x.shape()));
  }
  return add_row_vector(matmul(x, transpose(bind(weight))), bind(bias));
}

void LinearLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------

Tensor gcn_normalize(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.extent(0) != adjacency.extent(1)) {
    throw DimensionError("gcn_normalize expects a square matrix, got " + shape_string(adjacency.shape()));
  }
  const std::size_t n = adjacency.extent(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (adjacency.at(i, j) != adjacency.at(j, i)) {
        throw DimensionError("gcn_normalize expects a symmetric adjacency; entry (" + std::to_string(i) + "," +
                             std::to_string(j) + ") differs from its transpose");
      }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;  // self-loop
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d += adjacency.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  Tensor out(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = i == j ? 1.0 : adjacency.at(i, j);
      if (a != 0.0) out.at(i, j) = inv_sqrt_deg[i] * a * inv_sqrt_deg[j];
    }
  return out;
}

GraphConvLayer GraphConvLayer::create(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng) {
  GraphConvLayer l;
  l.in = in;
  l.out = out;
  l.weight = {name + ".weight", glorot_init(in, out, rng, {in, out})};
  return l;
}

Var GraphConvLayer::forward(Binding& bind, const Var& a_hat, const Var& features) const {
  const Tensor& a = a_hat.value();
  const Tensor& x = features.value();
  if (a.rank() != 2 || x.rank() != 2 || a.extent(1) != x.extent(0) || x.extent(1) != in) {
    throw DimensionError(weight.name + ": adjacency " + shape_string(a.shape()) + " and features " +
                         shape_string(x.shape()) + " do not match layer input " + std::to_string(in));
  }
  // (A X) W would densify; A (X W) keeps the wide product on sparse rows.
  return matmul(a_hat, matmul(features, bind(weight)));
}

void GraphConvLayer::collect(std::vector<Parameter*>& out) { out.push_back(&weight); }

// ---------------------------------------------------------------------------

LstmCell LstmCell::create(const std::string& name, std::size_t in, std::size_t hidden, SeededRng& rng) {
  LstmCell c;
  c.in = in;
  c.hidden = hidden;
  const Shape ws{hidden, hidden + in};
  c.w_input = {name + ".w_input", glorot_init(hidden + in, hidden, rng, ws)};
  c.w_forget = {name + ".w_forget", glorot_init(hidden + in, hidden, rng, ws)};
  c.w_output = {name + ".w_output", glorot_init(hidden + in, hidden, rng, ws)};
  c.w_candidate = {name + ".w_candidate", glorot_init(hidden + in, hidden, rng, ws)};
  c.b_input = {name + ".b_input", Tensor(Shape{hidden}, 0.0)};
  c.b_forget = {name + ".b_forget", Tensor(Shape{hidden}, 1.0)};
  c.b_output = {name + ".b_output", Tensor(Shape{hidden}, 0.0)};
  c.b_candidate = {name + ".b_candidate", Tensor(Shape{hidden}, 0.0)};
  return c;
}

LstmState LstmCell::step(Binding& bind, const LstmState& prev, const Var& x) const {
  if (x.value().rank() != 2 || x.value().extent(1) != in) {
    throw DimensionError(w_input.name + ": step input must be [B x " + std::to_string(in) + "], got " +
                         shape_string(x.shape()));
  }
  Var hx = concat({prev.hidden, x}, 1);
  auto gate = [&](const Parameter& w, const Parameter& b) { return add_row_vector(matmul(hx, transpose(bind(w))), bind(b)); };
  Var i = sigmoid(gate(w_input, b_input));
  Var f = sigmoid(gate(w_forget, b_forget));
  Var o = sigmoid(gate(w_output, b_output));
  Var g = advlat::tanh(gate(w_candidate, b_candidate));
  Var c = add(mul(f, prev.cell), mul(i, g));
  Var h = mul(o, advlat::tanh(c));
  return {h, c};
}

void LstmCell::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&w_input, &w_forget, &w_output, &w_candidate, &b_input, &b_forget, &b_output, &b_candidate})
    out.push_back(p);
}

LstmOutput lstm_forward(const LstmCell& cell, Binding& bind, const std::vector<Var>& sequence) {
  if (sequence.empty()) throw std::invalid_argument("lstm_forward: empty sequence");
  const std::size_t batch = sequence.front().value().extent(0);
  for (const auto& s : sequence) {
    if (s.shape() != sequence.front().shape()) throw DimensionError("lstm_forward: steps differ in shape");
  }
  Tape& tape = bind.tape();
  LstmState state{tape.constant(Tensor(Shape{batch, cell.hidden}, 0.0)),
                  tape.constant(Tensor(Shape{batch, cell.hidden}, 0.0))};
  LstmOutput out;
  for (const auto& x : sequence) {
    state = cell.step(bind, state, x);
    out.hidden_states.push_back(state.hidden);
  }
  out.final_hidden = state.hidden;
  return out;
}

// ---------------------------------------------------------------------------

Conv2dLayer Conv2dLayer::create(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                                std::size_t kernel, std::size_t stride, std::size_t padding, SeededRng& rng) {
  Conv2dLayer l;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel_h = l.kernel_w = kernel;
  l.stride = stride;
  l.padding = padding;
  const std::size_t fan = kernel * kernel;
  l.kernel = {name + ".kernel",
              glorot_init(in_channels * fan, out_channels * fan, rng, {out_channels, in_channels, kernel, kernel})};
  l.bias = {name + ".bias", Tensor(Shape{out_channels}, 0.0)};
  return l;
}

std::size_t Conv2dLayer::output_extent(std::size_t in_extent, std::size_t k) const {
  return (in_extent + 2 * padding - k) / stride + 1;
}

Var Conv2dLayer::forward(Binding& bind, const Var& input) const {
  const Tensor& x = input.value();
  if (x.rank() != 3 || x.extent(0) != in_channels) {
    throw DimensionError(kernel.name + ": expected [" + std::to_string(in_channels) + " x H x W], got " +
                         shape_string(x.shape()));
  }
  Var cols = im2col(input, kernel_h, kernel_w, stride, padding);
  Var k = reshape(bind(kernel), {out_channels, in_channels * kernel_h * kernel_w});
  Var y = add_col_vector(matmul(k, cols), bind(bias));
  return reshape(y, {out_channels, output_extent(x.extent(1), kernel_h), output_extent(x.extent(2), kernel_w)});
}

void Conv2dLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&kernel);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("cross_entropy expects [N x C] logits, got " + shape_string(z.shape()));
  const std::size_t n = z.extent(0), c = z.extent(1);
  if (labels.size() != n) throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[i * c + j] - mx);
    const double lse = mx + std::log(s);
    loss += lse - z[i * c + labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z[i * c + j] - lse);
  }
  loss /= static_cast<double>(n);
  const std::size_t ia = logits.id();
  return logits.tape().record(Tensor::scalar(loss), {logits}, [=](const Tensor& g, GradSink& sink) {
    Tensor& d = sink.slot(ia);
    const double w = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += w * (probs[i * c + j] - (j == labels[i] ? 1.0 : 0.0));
  });
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.rank() == 2 ? scores.extent(0) : 1;
  const std::size_t c = scores.numel() / n;
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < c; ++j)
      if (scores[i * c + j] > scores[i * c + out[i]]) out[i] = j;
  return out;
}

// ---------------------------------------------------------------------------

void Adam::step(std::span<Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("adam_step: parameter set changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].numel() != params[k]->value.numel() || m_[k].numel() != params[k]->value.numel()) {
      throw DimensionError("adam_step: gradient " + shape_string(grads[k].shape()) + " does not match parameter " +
                           params[k]->name + " " + shape_string(params[k]->value.shape()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->value.data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= config_.lr * mh / (std::sqrt(vh) + config_.eps);
    }
  }
}

void sgd_step(std::span<Parameter* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].numel() != params[k]->value.numel()) throw DimensionError("sgd_step: shape mismatch for " + params[k]->name);
    auto w = params[k]->value.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grads[k][i];
  }
}

}  // namespace advlat
