#include "advlat/autodiff.hpp"

namespace advlat {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

GradSink::GradSink(Tape& tape) : tape_(tape), grads_(tape.size()), present_(tape.size(), false) {}

bool GradSink::wants(std::size_t id) const { return tape_.requires_grad(id); }

Tensor& GradSink::slot(std::size_t id) {
  if (!present_[id]) {
    grads_[id] = Tensor(tape_.value(id).shape(), 0.0);
    present_[id] = true;
  }
  return grads_[id];
}

void GradSink::add(std::size_t id, const Tensor& g) {
  if (!wants(id)) return;
  if (g.numel() != tape_.value(id).numel()) {
    throw DimensionError("gradient shape " + shape_string(g.shape()) + " does not match node shape " +
                         shape_string(tape_.value(id).shape()));
  }
  if (!present_[id]) {
    grads_[id] = g.reshaped(tape_.value(id).shape());
    present_[id] = true;
    return;
  }
  auto dst = grads_[id].data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

bool Gradients::has(const Var& v) const { return v.id() < present_.size() && present_[v.id()]; }

Tensor Gradients::of(const Var& v) const {
  if (has(v)) return grads_[v.id()];
  return Tensor(v.shape(), 0.0);
}

const Tensor& Gradients::operator[](const Var& v) const {
  if (!has(v)) throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id()));
  return grads_[v.id()];
}

void Tape::check_owned(const Var& v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& p : parents) {
    check_owned(p);
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) {
  check_owned(loss);
  if (loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  GradSink sink(*this);
  const std::size_t root = loss.id();
  sink.grads_[root] = Tensor(nodes_[root].value.shape(), 1.0);
  sink.present_[root] = true;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!sink.present_[i] || !nodes_[i].backward) continue;
    // Rules only write to parents (ids < i), so node i's gradient is final here.
    Tensor g = std::move(sink.grads_[i]);
    nodes_[i].backward(g, sink);
    sink.grads_[i] = std::move(g);
  }
  Gradients out;
  out.grads_ = std::move(sink.grads_);
  out.present_ = std::move(sink.present_);
  out.tape_ = this;
  return out;
}

}  // namespace advlat
