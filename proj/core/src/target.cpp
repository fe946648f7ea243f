#include "advlat/target.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

#include "advlat/checkpoint.hpp"
#include "advlat/ops.hpp"

namespace advlat {

using nlohmann::json;

std::string to_string(Arch a) {
  switch (a) {
    case Arch::mlp: return "mlp";
    case Arch::cnn: return "cnn";
    case Arch::lstm: return "lstm";
    case Arch::gcn: return "gcn";
  }
  return "?";
}

Arch arch_from_string(const std::string& s) {
  if (s == "mlp") return Arch::mlp;
  if (s == "cnn") return Arch::cnn;
  if (s == "lstm") return Arch::lstm;
  if (s == "gcn") return Arch::gcn;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

TargetModel TargetModel::create(const TargetSpec& spec, const Shape& input_shape, std::size_t num_classes,
                                std::size_t vocab_size, SeededRng& rng) {
  if (num_classes < 2) throw std::invalid_argument("a classifier needs at least 2 classes");
  TargetModel m;
  m.spec_ = spec;
  m.input_shape_ = input_shape;
  m.num_classes_ = num_classes;
  m.vocab_size_ = vocab_size;
  switch (spec.arch) {
    case Arch::mlp: {
      const std::size_t d = shape_numel(input_shape);
      m.net_ = MlpClassifier{LinearLayer::create("target.hidden", d, spec.hidden, rng),
                             LinearLayer::create("target.head", spec.hidden, num_classes, rng)};
      break;
    }
    case Arch::cnn: {
      if (input_shape.size() != 3) throw DimensionError("cnn target expects [C x H x W] inputs, got " + shape_string(input_shape));
      CnnClassifier c;
      c.input_shape = input_shape;
      c.conv = Conv2dLayer::create("target.conv", input_shape[0], spec.conv_channels, 3, 1, 1, rng);
      const std::size_t flat = spec.conv_channels * input_shape[1] * input_shape[2];
      c.hidden = LinearLayer::create("target.hidden", flat, spec.hidden, rng);
      c.head = LinearLayer::create("target.head", spec.hidden, num_classes, rng);
      m.net_ = std::move(c);
      break;
    }
    case Arch::lstm: {
      if (vocab_size == 0) throw std::invalid_argument("lstm target needs a vocabulary size");
      LstmClassifier c;
      c.embedding = {"target.embedding", sample_standard_normal({vocab_size, spec.embed_dim}, rng)};
      c.cell = LstmCell::create("target.lstm", spec.embed_dim, spec.hidden, rng);
      c.head = LinearLayer::create("target.head", spec.hidden, num_classes, rng);
      m.net_ = std::move(c);
      break;
    }
    case Arch::gcn: {
      if (input_shape.size() != 1) throw DimensionError("gcn target expects per-node feature width");
      m.net_ = GcnClassifier{GraphConvLayer::create("target.gcn", input_shape[0], num_classes, rng),
                             Parameter{"target.gcn.bias", Tensor(Shape{num_classes}, 0.0)}};
      break;
    }
  }
  return m;
}

Var TargetModel::scores_dense(Binding& bind, const Var& x) const {
  const std::size_t d = shape_numel(input_shape_);
  if (x.value().rank() != 2 || x.value().extent(1) != d) {
    throw DimensionError("target expects [B x " + std::to_string(d) + "] inputs, got " + shape_string(x.shape()));
  }
  if (const auto* mlp = std::get_if<MlpClassifier>(&net_)) {
    return mlp->head.forward(bind, relu(mlp->hidden.forward(bind, x)));
  }
  if (const auto* cnn = std::get_if<CnnClassifier>(&net_)) {
    const std::size_t b = x.value().extent(0);
    std::vector<Var> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      Var img = reshape(gather_rows(x, {i}), cnn->input_shape);
      Var fmap = relu(cnn->conv.forward(bind, img));
      rows.push_back(reshape(fmap, {1, fmap.numel()}));
    }
    Var flat = rows.size() == 1 ? rows.front() : concat(rows, 0);
    return cnn->head.forward(bind, relu(cnn->hidden.forward(bind, flat)));
  }
  throw std::logic_error("scores_dense called on a " + to_string(spec_.arch) + " target");
}

Var TargetModel::scores_embedded(Binding& bind, const std::vector<Var>& steps) const {
  const auto* lstm = std::get_if<LstmClassifier>(&net_);
  if (!lstm) throw std::logic_error("scores_embedded called on a " + to_string(spec_.arch) + " target");
  if (steps.size() != input_shape_[0]) {
    throw DimensionError("lstm target expects " + std::to_string(input_shape_[0]) + " steps, got " + std::to_string(steps.size()));
  }
  LstmOutput out = lstm_forward(lstm->cell, bind, steps);
  return lstm->head.forward(bind, out.final_hidden);
}

Var TargetModel::scores_tokens(Binding& bind, const Tensor& tokens) const {
  const auto* lstm = std::get_if<LstmClassifier>(&net_);
  if (!lstm) throw std::logic_error("scores_tokens called on a " + to_string(spec_.arch) + " target");
  if (tokens.rank() != 2) throw DimensionError("token batch must be [B x T]");
  const std::size_t b = tokens.extent(0), t = tokens.extent(1);
  Var emb = bind(lstm->embedding);
  std::vector<Var> steps;
  for (std::size_t s = 0; s < t; ++s) {
    std::vector<std::size_t> ids(b);
    for (std::size_t i = 0; i < b; ++i) ids[i] = static_cast<std::size_t>(tokens[i * t + s]);
    steps.push_back(gather_rows(emb, ids));
  }
  return scores_embedded(bind, steps);
}

Var TargetModel::scores_graph(Binding& bind, const Var& a_hat, const Var& features) const {
  const auto* gcn = std::get_if<GcnClassifier>(&net_);
  if (!gcn) throw std::logic_error("scores_graph called on a " + to_string(spec_.arch) + " target");
  return add_row_vector(gcn->conv.forward(bind, a_hat, features), bind(gcn->bias));
}

Var TargetModel::scores_graph_isolated(Binding& bind, const Var& clean, const Tensor& coupling, const Var& deltas) const {
  const auto* gcn = std::get_if<GcnClassifier>(&net_);
  if (!gcn) throw std::logic_error("scores_graph_isolated called on a " + to_string(spec_.arch) + " target");
  Tape& tape = bind.tape();
  Var shift = matmul(tape.constant(coupling), matmul(deltas, bind(gcn->conv.weight)));
  return add(clean, shift);
}

const Tensor& TargetModel::embedding() const {
  const auto* lstm = std::get_if<LstmClassifier>(&net_);
  if (!lstm) throw std::logic_error("only lstm targets carry an embedding table");
  return lstm->embedding.value;
}

std::vector<Parameter*> TargetModel::parameters() {
  std::vector<Parameter*> out;
  std::visit(
      [&out](auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, MlpClassifier>) {
          net.hidden.collect(out);
          net.head.collect(out);
        } else if constexpr (std::is_same_v<T, CnnClassifier>) {
          net.conv.collect(out);
          net.hidden.collect(out);
          net.head.collect(out);
        } else if constexpr (std::is_same_v<T, LstmClassifier>) {
          out.push_back(&net.embedding);
          net.cell.collect(out);
          net.head.collect(out);
        } else {
          net.conv.collect(out);
          out.push_back(&net.bias);
        }
      },
      net_);
  return out;
}

std::vector<const Parameter*> TargetModel::parameters() const {
  auto ps = const_cast<TargetModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::uint64_t TargetModel::checksum() const {
  auto ps = const_cast<TargetModel*>(this)->parameters();
  return parameter_checksum(ps);
}

void TargetModel::save(const std::string& path) const {
  Bundle b;
  b.kind = "target";
  b.meta = {{"arch", to_string(spec_.arch)},
            {"hidden", spec_.hidden},
            {"embed_dim", spec_.embed_dim},
            {"conv_channels", spec_.conv_channels},
            {"input_shape", input_shape_},
            {"num_classes", num_classes_},
            {"vocab_size", vocab_size_}};
  for (const Parameter* p : parameters()) b.tensors.push_back({p->name, p->value});
  save_bundle(path, b);
}

TargetModel TargetModel::load(const std::string& path) {
  Bundle b = load_bundle(path, "target");
  TargetSpec spec;
  spec.arch = arch_from_string(b.meta.at("arch").get<std::string>());
  spec.hidden = b.meta.at("hidden").get<std::size_t>();
  spec.embed_dim = b.meta.at("embed_dim").get<std::size_t>();
  spec.conv_channels = b.meta.at("conv_channels").get<std::size_t>();
  SeededRng rng(0);
  TargetModel m = create(spec, b.meta.at("input_shape").get<Shape>(), b.meta.at("num_classes").get<std::size_t>(),
                         b.meta.at("vocab_size").get<std::size_t>(), rng);
  for (Parameter* p : m.parameters()) {
    const Tensor& t = b.get(p->name);
    if (t.shape() != p->value.shape()) {
      throw FormatError(path + ": parameter " + p->name + " has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(p->value.shape()));
    }
    p->value = t;
  }
  return m;
}

// ---------------------------------------------------------------------------

Tensor stack_inputs(const Dataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t d = shape_numel(data.input_shape);
  Tensor out(Shape{indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = data.inputs.at(indices[i]).data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<std::size_t> predict(const TargetModel& model, const Tensor& batch) {
  Tape tape;
  Binding bind(tape, false);
  Var s = model.arch() == Arch::lstm ? model.scores_tokens(bind, batch) : model.scores_dense(bind, tape.constant(batch));
  return argmax_rows(s.value());
}

namespace {

Var batch_scores(const TargetModel& model, Binding& bind, const Tensor& batch) {
  if (model.arch() == Arch::lstm) return model.scores_tokens(bind, batch);
  return model.scores_dense(bind, bind.tape().constant(batch));
}

void check_finite(const Var& loss) {
  if (!loss.value().all_finite()) throw NumericError("non-finite training loss");
}

}  // namespace

TrainHistory train_target(TargetModel& model, const Dataset& data, const TrainConfig& config) {
  if (model.arch() == Arch::gcn) throw std::invalid_argument("gcn targets train on graph datasets");
  std::vector<std::size_t> train = data.indices(Split::train);
  if (train.empty()) throw std::invalid_argument("train_target: empty training split");
  SeededRng rng(config.seed);
  Adam adam(AdamConfig{config.lr});
  auto params = model.parameters();
  TrainHistory h;
  const std::vector<std::size_t> val = data.indices(Split::validation);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t end = std::min(train.size(), start + config.batch_size);
      std::vector<std::size_t> idx(train.begin() + static_cast<std::ptrdiff_t>(start),
                                   train.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);
      Tape tape;
      Binding bind(tape, true);
      Var loss = cross_entropy(batch_scores(model, bind, stack_inputs(data, idx)), labels);
      check_finite(loss);
      Gradients g = tape.backward(loss);
      adam.step(params, bind.gradients(g, params));
      loss_sum += loss.value().item();
      ++batches;
    }
    h.loss.push_back(loss_sum / static_cast<double>(batches));
    h.train_accuracy.push_back(accuracy(model, data, data.indices(Split::train)).accuracy);
    h.validation_accuracy.push_back(accuracy(model, data, val).accuracy);
  }
  return h;
}

TrainHistory train_target(TargetModel& model, const GraphDataset& graph, const TrainConfig& config) {
  if (model.arch() != Arch::gcn) throw std::invalid_argument("graph datasets need a gcn target");
  const std::vector<std::size_t> train = graph.indices(Split::train);
  if (train.empty()) throw std::invalid_argument("train_target: empty training split");
  const std::vector<std::size_t> val = graph.indices(Split::validation);
  std::vector<std::size_t> train_labels;
  for (auto i : train) train_labels.push_back(graph.labels[i]);
  const Tensor a_hat = gcn_normalize(graph.adjacency);
  Adam adam(AdamConfig{config.lr});
  auto params = model.parameters();
  TrainHistory h;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tape tape;
    Binding bind(tape, true);
    Var scores = model.scores_graph(bind, tape.constant(a_hat), tape.constant(graph.features));
    Var loss = cross_entropy(gather_rows(scores, train), train_labels);
    check_finite(loss);
    Gradients g = tape.backward(loss);
    adam.step(params, bind.gradients(g, params));
    h.loss.push_back(loss.value().item());
    const auto pred = argmax_rows(scores.value());
    auto acc = [&](const std::vector<std::size_t>& nodes) {
      if (nodes.empty()) return 0.0;
      std::size_t ok = 0;
      for (auto i : nodes) ok += pred[i] == graph.labels[i];
      return static_cast<double>(ok) / static_cast<double>(nodes.size());
    };
    h.train_accuracy.push_back(acc(train));
    h.validation_accuracy.push_back(acc(val));
  }
  return h;
}

AccuracyResult accuracy(const TargetModel& model, const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return {0.0, true};
  std::size_t ok = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t end = std::min(indices.size(), start + kChunk);
    std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                 indices.begin() + static_cast<std::ptrdiff_t>(end));
    const auto pred = predict(model, stack_inputs(data, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) ok += pred[k] == data.labels[idx[k]];
  }
  return {static_cast<double>(ok) / static_cast<double>(indices.size()), false};
}

AccuracyResult accuracy(const TargetModel& model, const GraphDataset& graph, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return {0.0, true};
  Tape tape;
  Binding bind(tape, false);
  Var scores = model.scores_graph(bind, tape.constant(gcn_normalize(graph.adjacency)), tape.constant(graph.features));
  const auto pred = argmax_rows(scores.value());
  std::size_t ok = 0;
  for (auto i : nodes) ok += pred[i] == graph.labels[i];
  return {static_cast<double>(ok) / static_cast<double>(nodes.size()), false};
}

}  // namespace advlat
