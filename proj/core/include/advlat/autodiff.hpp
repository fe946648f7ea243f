#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "advlat/tensor.hpp"

namespace advlat {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient accumulators handed to backward rules.
class GradSink {
 public:
  /// True when node `id` needs a gradient; rules skip work for parents that don't.
  bool wants(std::size_t id) const;
  /// Accumulator for node `id`, zero-initialized on first access.
  Tensor& slot(std::size_t id);
  void add(std::size_t id, const Tensor& g);

 private:
  friend class Tape;
  explicit GradSink(Tape& tape);

  Tape& tape_;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Gradients returned by Tape::backward, indexed by node id.
class Gradients {
 public:
  bool has(const Var& v) const;
  /// Gradient for v; a zero tensor of v's shape when v was unreachable from the loss.
  Tensor of(const Var& v) const;
  const Tensor& operator[](const Var& v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
  const Tape* tape_ = nullptr;
};

/// Define-by-run reverse-mode tape. Nodes are append-only, so parents always
/// precede children. A tape and its Vars belong to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  /// Record an operation result. The backward rule is kept only when some
  /// parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  Gradients backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(const Var& v) const;

  std::deque<Node> nodes_;  // deque: value references survive later records
};

}  // namespace advlat
