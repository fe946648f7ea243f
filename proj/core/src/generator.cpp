#include "advlat/generator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <mutex>
#include <numeric>
#include <thread>

#include "advlat/checkpoint.hpp"
#include "advlat/ops.hpp"

namespace advlat {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config

void GeneratorConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (latent_dim == 0 || hidden == 0) throw std::invalid_argument("latent and hidden widths must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

json GeneratorConfig::to_json() const {
  return {{"lambda", lambda}, {"latent_dim", latent_dim}, {"tau", tau},       {"lr", lr},
          {"epochs", epochs}, {"batch_size", batch_size}, {"resample", resample}, {"seed", seed},
          {"variational", variational}, {"hidden", hidden}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j, GeneratorConfig c) {
  c.lambda = j.value("lambda", c.lambda);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.tau = j.value("tau", c.tau);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.resample = j.value("resample", c.resample);
  c.seed = j.value("seed", c.seed);
  c.variational = j.value("variational", c.variational);
  c.hidden = j.value("hidden", c.hidden);
  c.validate();
  return c;
}

GeneratorConfig GeneratorConfig::from_json(const json& j) { return from_json(j, GeneratorConfig{}); }

std::string to_string(GraphAttack g) { return g == GraphAttack::direct ? "direct" : "influencer"; }

GraphAttack graph_attack_from_string(const std::string& s) {
  if (s == "direct") return GraphAttack::direct;
  if (s == "influencer") return GraphAttack::influencer;
  throw std::invalid_argument("unknown graph attack '" + s + "' (expected direct or influencer)");
}

// ---------------------------------------------------------------------------
// problem

AttackProblem::AttackProblem(const TargetModel& target, const Dataset& data, DomainAdapter adapter)
    : target_(&target), data_(&data), adapter_(std::move(adapter)) {
  data.validate();
  if (adapter_.domain != data.domain) {
    throw std::invalid_argument("adapter domain " + to_string(adapter_.domain) + " does not match data domain " + to_string(data.domain));
  }
  if (data.domain == Domain::graph) throw std::invalid_argument("graph data needs the graph constructor");
  if (data.domain == Domain::text) {
    if (target.arch() != Arch::lstm) throw std::invalid_argument("text attacks need an lstm target");
    if (!adapter_.vocab) adapter_.vocab = Vocabulary::from_embeddings(target.embedding());
    if (adapter_.vocab->embeddings != target.embedding()) {
      throw std::invalid_argument("text adapter vocabulary must match the target's embedding table");
    }
  } else if (target.arch() == Arch::lstm || target.arch() == Arch::gcn) {
    throw std::invalid_argument(to_string(target.arch()) + " target cannot score " + to_string(data.domain) + " inputs");
  }
  adapter_.validate();
}

AttackProblem::AttackProblem(const TargetModel& target, const GraphDataset& graph, DomainAdapter adapter, GraphAttack mode,
                             std::size_t influencers, std::uint64_t mask_seed)
    : target_(&target), graph_(&graph), adapter_(std::move(adapter)), mode_(mode) {
  graph.validate();
  if (target.arch() != Arch::gcn) throw std::invalid_argument("graph attacks need a gcn target");
  if (adapter_.domain != Domain::graph || adapter_.combination != Combination::masked) {
    throw std::invalid_argument("graph attacks need a graph adapter with masked combination");
  }
  a_hat_ = gcn_normalize(graph.adjacency);
  propagated_ = matmul(a_hat_, graph.features);
  {
    Tape tape;
    Binding bind(tape, false);
    clean_scores_ = target.scores_graph(bind, tape.constant(a_hat_), tape.constant(graph.features)).value();
  }
  const std::size_t n = graph.num_nodes();
  attackers_.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    if (mode == GraphAttack::direct) {
      attackers_[v] = {v};
    } else {
      SeededRng rng = SeededRng::stream(mask_seed, v);
      attackers_[v] = select_influencer_set(graph, v, influencers, rng).attackers;
    }
  }
}

std::vector<std::size_t> AttackProblem::examples(Split s) const {
  return data_ ? data_->indices(s) : graph_->indices(s);
}

Split AttackProblem::split_of(std::size_t id) const { return data_ ? data_->splits.at(id) : graph_->splits.at(id); }

std::size_t AttackProblem::label_of(std::size_t id) const { return data_ ? data_->labels.at(id) : graph_->labels.at(id); }

std::size_t AttackProblem::input_width() const {
  return data_ ? shape_numel(data_->input_shape) : graph_->features.extent(1);
}

std::size_t AttackProblem::sequence_length() const { return domain() == Domain::text ? data_->input_shape.at(0) : 1; }

std::size_t AttackProblem::embedding_dim() const { return adapter_.vocab ? adapter_.vocab->dim() : 0; }

InfluencerMask AttackProblem::mask_for(std::size_t node) const {
  if (!graph_) throw std::logic_error("mask_for on a non-graph problem");
  InfluencerMask m;
  m.b.assign(graph_->num_nodes(), 0.0);
  m.attackers = attackers_.at(node);
  for (std::size_t a : m.attackers) m.b[a] = 1.0;
  m.targets = {node};
  return m;
}

AttackBatch AttackProblem::make_batch(const std::vector<std::size_t>& ids) const {
  AttackBatch b;
  b.ids = ids;
  for (std::size_t id : ids) b.labels.push_back(label_of(id));
  if (data_) {
    b.inputs = stack_inputs(*data_, ids);
    return b;
  }
  const std::size_t k = attackers_.at(ids.front()).size();
  const std::size_t c = clean_scores_.extent(1);
  b.pairs_per_example = k;
  b.coupling = Tensor(Shape{ids.size(), ids.size() * k}, 0.0);
  b.clean_scores = Tensor(Shape{ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& att = attackers_.at(ids[i]);
    if (att.size() != k) throw std::logic_error("attacker sets differ in size");
    for (std::size_t j = 0; j < k; ++j) {
      b.pair_nodes.push_back(att[j]);
      b.coupling.at(i, i * k + j) = a_hat_.at(ids[i], att[j]);
    }
    for (std::size_t y = 0; y < c; ++y) b.clean_scores.at(i, y) = clean_scores_.at(ids[i], y);
  }
  return b;
}

// ---------------------------------------------------------------------------
// generator network

namespace {

constexpr std::size_t kEncoderChannels = 4;

Tensor rows_of(const Tensor& m, const std::vector<std::size_t>& rows) {
  const std::size_t w = m.extent(1);
  Tensor out(Shape{rows.size(), w});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w, out.data().begin() + static_cast<std::ptrdiff_t>(i * w));
  return out;
}

}  // namespace

void AttackGenerator::build(SeededRng& rng) {
  const std::size_t h = config_.hidden, d = config_.latent_dim;
  switch (domain_) {
    case Domain::vector:
      enc_dense_ = LinearLayer::create("enc.dense", shape_numel(input_shape_), h, rng);
      break;
    case Domain::image:
      if (input_shape_.size() != 3) throw DimensionError("image generator needs [C x H x W] inputs");
      enc_conv_ = Conv2dLayer::create("enc.conv", input_shape_[0], kEncoderChannels, 3, 1, 1, rng);
      enc_mix_ = LinearLayer::create("enc.mix", kEncoderChannels * input_shape_[1] * input_shape_[2], h, rng);
      break;
    case Domain::text:
      enc_lstm_ = LstmCell::create("enc.lstm", embed_dim_, h, rng);
      break;
    case Domain::graph:
      enc_graph_ = Parameter{"enc.graph", glorot_init(out_width_, h, rng, {out_width_, h})};
      enc_mix_ = LinearLayer::create("enc.mix", 2 * h, h, rng);
      break;
  }
  mu_head_ = LinearLayer::create("enc.mu", h, d, rng);
  if (config_.variational) sigma_head_ = LinearLayer::create("enc.sigma", h, d, rng);
  if (domain_ == Domain::text) dec_lstm_ = LstmCell::create("dec.lstm", d, h, rng);
  else dec_hidden_ = LinearLayer::create("dec.hidden", d, h, rng);
  dec_out_ = LinearLayer::create("dec.out", h, out_width_, rng);
}

AttackGenerator AttackGenerator::create(const AttackProblem& problem, const GeneratorConfig& config, SeededRng& rng) {
  config.validate();
  AttackGenerator g;
  g.config_ = config;
  g.domain_ = problem.domain();
  switch (g.domain_) {
    case Domain::vector:
    case Domain::image:
      g.input_shape_ = problem.dataset()->input_shape;
      g.out_width_ = problem.input_width();
      break;
    case Domain::text:
      g.input_shape_ = problem.dataset()->input_shape;
      g.steps_ = problem.sequence_length();
      g.embed_dim_ = problem.embedding_dim();
      g.out_width_ = g.embed_dim_;
      break;
    case Domain::graph:
      g.input_shape_ = {problem.input_width()};
      g.out_width_ = problem.input_width();
      break;
  }
  g.build(rng);
  return g;
}

Var AttackGenerator::backbone(Binding& bind, const AttackProblem& problem, const AttackBatch& batch) const {
  Tape& tape = bind.tape();
  switch (domain_) {
    case Domain::vector:
      return relu(enc_dense_->forward(bind, tape.constant(batch.inputs)));
    case Domain::image: {
      const Var x = tape.constant(batch.inputs);
      std::vector<Var> rows;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Var fmap = relu(enc_conv_->forward(bind, reshape(gather_rows(x, {i}), input_shape_)));
        rows.push_back(reshape(fmap, {1, fmap.numel()}));
      }
      Var flat = rows.size() == 1 ? rows.front() : concat(rows, 0);
      return relu(enc_mix_->forward(bind, flat));
    }
    case Domain::text: {
      const Tensor& table = problem.adapter().vocab->embeddings;
      const std::size_t t = batch.inputs.extent(1);
      std::vector<Var> steps;
      for (std::size_t s = 0; s < t; ++s) {
        std::vector<std::size_t> ids(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) ids[i] = static_cast<std::size_t>(batch.inputs[i * t + s]);
        steps.push_back(tape.constant(rows_of(table, ids)));
      }
      return lstm_forward(*enc_lstm_, bind, steps).final_hidden;
    }
    case Domain::graph: {
      std::vector<std::size_t> owners;
      for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < batch.pairs_per_example; ++j) owners.push_back(batch.ids[i]);
      const Var w = bind(*enc_graph_);
      const Var h_att = relu(matmul(tape.constant(rows_of(problem.propagated_features(), batch.pair_nodes)), w));
      const Var h_tgt = relu(matmul(tape.constant(rows_of(problem.propagated_features(), owners)), w));
      return relu(enc_mix_->forward(bind, concat({h_att, h_tgt}, 1)));
    }
  }
  throw std::logic_error("unreachable");
}

EncoderOutput AttackGenerator::encode(Binding& bind, const AttackProblem& problem, const AttackBatch& batch) const {
  if (problem.domain() != domain_) throw std::invalid_argument("generator/problem domain mismatch");
  const Var h = backbone(bind, problem, batch);
  EncoderOutput out;
  out.mu = mu_head_.forward(bind, h);
  if (sigma_head_) out.sigma = softplus(sigma_head_->forward(bind, h));
  return out;
}

Var AttackGenerator::decode(Binding& bind, const Var& z) const {
  if (z.value().rank() != 2 || z.value().extent(1) != config_.latent_dim) {
    throw DimensionError("decode expects [rows x " + std::to_string(config_.latent_dim) + "] codes, got " + shape_string(z.shape()));
  }
  if (dec_lstm_) {
    std::vector<Var> inputs(steps_, z);
    LstmOutput o = lstm_forward(*dec_lstm_, bind, inputs);
    std::vector<Var> deltas;
    for (const auto& hs : o.hidden_states) deltas.push_back(dec_out_.forward(bind, hs));
    return deltas.size() == 1 ? deltas.front() : concat(deltas, 1);
  }
  return dec_out_.forward(bind, relu(dec_hidden_->forward(bind, z)));
}

std::vector<Parameter*> AttackGenerator::parameters() {
  std::vector<Parameter*> out;
  if (enc_dense_) enc_dense_->collect(out);
  if (enc_conv_) enc_conv_->collect(out);
  if (enc_lstm_) enc_lstm_->collect(out);
  if (enc_graph_) out.push_back(&*enc_graph_);
  if (enc_mix_) enc_mix_->collect(out);
  mu_head_.collect(out);
  if (sigma_head_) sigma_head_->collect(out);
  if (dec_hidden_) dec_hidden_->collect(out);
  if (dec_lstm_) dec_lstm_->collect(out);
  dec_out_.collect(out);
  return out;
}

std::vector<const Parameter*> AttackGenerator::parameters() const {
  auto ps = const_cast<AttackGenerator*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::uint64_t AttackGenerator::checksum() const {
  auto ps = const_cast<AttackGenerator*>(this)->parameters();
  return parameter_checksum(ps);
}

void AttackGenerator::save(const std::string& path) const {
  Bundle b;
  b.kind = "generator";
  b.meta = {{"domain", to_string(domain_)}, {"input_shape", input_shape_}, {"out_width", out_width_},
            {"steps", steps_},              {"embed_dim", embed_dim_},      {"config", config_.to_json()}};
  for (const Parameter* p : parameters()) b.tensors.push_back({p->name, p->value});
  save_bundle(path, b);
}

AttackGenerator AttackGenerator::load(const std::string& path) {
  Bundle b = load_bundle(path, "generator");
  AttackGenerator g;
  try {
    g.config_ = GeneratorConfig::from_json(b.meta.at("config"));
    g.domain_ = domain_from_string(b.meta.at("domain").get<std::string>());
    g.input_shape_ = b.meta.at("input_shape").get<Shape>();
    g.out_width_ = b.meta.at("out_width").get<std::size_t>();
    g.steps_ = b.meta.at("steps").get<std::size_t>();
    g.embed_dim_ = b.meta.at("embed_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad generator manifest: " + e.what());
  }
  SeededRng rng(0);
  g.build(rng);
  for (Parameter* p : g.parameters()) {
    const Tensor& v = b.get(p->name);
    if (v.shape() != p->value.shape()) throw FormatError(path + ": parameter " + p->name + " has shape " + shape_string(v.shape()));
    p->value = v;
  }
  return g;
}

// ---------------------------------------------------------------------------
// objective pieces

Var reparameterize(const EncoderOutput& out, const Tensor& eps) {
  if (!out.has_sigma()) return out.mu;
  if (eps.shape() != out.mu.shape()) {
    throw DimensionError("noise " + shape_string(eps.shape()) + " does not match codes " + shape_string(out.mu.shape()));
  }
  return add(out.mu, mul(out.sigma, out.mu.tape().constant(eps)));
}

Var kl_diag_gaussian(const EncoderOutput& out) {
  if (!out.has_sigma()) throw std::logic_error("kl_diag_gaussian needs a scale");
  for (double s : out.sigma.value().data())
    if (!(s > 0.0)) throw DomainError("kl_diag_gaussian: scale must be positive");
  const Var& mu = out.mu;
  const Var& sigma = out.sigma;
  // mu^2 + sigma^2 - 2 ln sigma - 1
  Var inner = add_scalar(sub(add(square(mu), square(sigma)), scale(advlat::log(sigma), 2.0)), -1.0);
  const Var per_row = mu.value().rank() == 2 ? reduce(Reduce::sum, inner, 1) : sum(inner);
  return scale(per_row, 0.5);
}

Var max_margin_loss(const Var& scores, const std::vector<std::size_t>& labels) {
  if (scores.value().rank() != 2) throw DimensionError("max_margin_loss expects [B x C] scores");
  const std::size_t b = scores.value().extent(0), c = scores.value().extent(1);
  if (c < 2) throw std::invalid_argument("max_margin_loss needs at least two classes");
  if (labels.size() != b) throw DimensionError("max_margin_loss: label count differs from batch");
  Tensor onehot(Shape{b, c}, 0.0), exclude(Shape{b, c}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    onehot.at(i, labels[i]) = 1.0;
    exclude.at(i, labels[i]) = -1e300;
  }
  Tape& tape = scores.tape();
  const Var true_score = reduce(Reduce::sum, mul(scores, tape.constant(onehot)), 1);
  const Var best_wrong = reduce(Reduce::max, add(scores, tape.constant(exclude)), 1);
  return relu(sub(true_score, best_wrong));
}

ObjectiveTerms hybrid_objective(const Var& scores, const std::vector<std::size_t>& labels, const Var& distance, const Var& kl,
                                double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  ObjectiveTerms t;
  t.margin = mean(max_margin_loss(scores, labels));
  t.penalty = mean(kl.valid() ? add(distance, kl) : distance);
  t.total = add(t.margin, scale(t.penalty, lambda));
  return t;
}

// ---------------------------------------------------------------------------
// forward passes

namespace {

Var row_distance(Similarity mode, const Tensor& x, const Var& x_prime) {
  if (mode == Similarity::l2) return row_norms(sub(x_prime, x_prime.tape().constant(x)));
  const std::size_t b = x.extent(0), w = x.extent(1);
  std::vector<Var> rows;
  for (std::size_t i = 0; i < b; ++i) {
    Tensor xi(Shape{1, w});
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i * w), w, xi.data().begin());
    rows.push_back(reshape(similarity(mode, xi, gather_rows(x_prime, {i})), {1, 1}));
  }
  return reshape(rows.size() == 1 ? rows.front() : concat(rows, 0), {b});
}

std::vector<Tensor> token_embeddings(const Tensor& tokens, const Tensor& table) {
  const std::size_t b = tokens.extent(0), t = tokens.extent(1);
  std::vector<Tensor> steps;
  for (std::size_t s = 0; s < t; ++s) {
    std::vector<std::size_t> ids(b);
    for (std::size_t i = 0; i < b; ++i) ids[i] = static_cast<std::size_t>(tokens[i * t + s]);
    steps.push_back(rows_of(table, ids));
  }
  return steps;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  const std::size_t b = parts.front().extent(0);
  std::size_t w = 0;
  for (const auto& p : parts) w += p.extent(1);
  Tensor out(Shape{b, w});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pw = p.extent(1);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < pw; ++k) out.at(i, off + k) = p.at(i, k);
    off += pw;
  }
  return out;
}

}  // namespace

AttackForward attack_forward(const AttackGenerator& gen, Binding& gen_bind, Binding& target_bind, const AttackProblem& problem,
                             const AttackBatch& batch, const Tensor& eps) {
  Tape& tape = gen_bind.tape();
  const TargetModel& target = problem.target();
  const DomainAdapter& adapter = problem.adapter();
  AttackForward f;
  f.enc = gen.encode(gen_bind, problem, batch);
  f.z = reparameterize(f.enc, eps);
  f.delta = gen.decode(gen_bind, f.z);
  switch (problem.domain()) {
    case Domain::vector:
    case Domain::image: {
      const Var xp = combine_additive(f.delta, tape.constant(batch.inputs));
      f.scores = target.scores_dense(target_bind, xp);
      f.distance = row_distance(adapter.similarity, batch.inputs, xp);
      break;
    }
    case Domain::text: {
      const Vocabulary& vocab = *adapter.vocab;
      const std::size_t e = vocab.dim();
      const std::vector<Tensor> clean = token_embeddings(batch.inputs, vocab.embeddings);
      std::vector<Var> mixed;
      for (std::size_t s = 0; s < clean.size(); ++s) {
        mixed.push_back(soft_nn_combine(slice_cols(f.delta, s * e, (s + 1) * e), tape.constant(clean[s]), vocab, adapter.tau).mixed);
      }
      f.scores = target.scores_embedded(target_bind, mixed);
      f.distance = row_distance(adapter.similarity, concat_cols(clean), mixed.size() == 1 ? mixed.front() : concat(mixed, 1));
      break;
    }
    case Domain::graph: {
      f.scores = target.scores_graph_isolated(target_bind, tape.constant(batch.clean_scores), batch.coupling, f.delta);
      const std::size_t k = batch.pairs_per_example, w = f.delta.value().extent(1);
      f.distance = row_norms(reshape(f.delta, {batch.size(), k * w}));
      break;
    }
  }
  if (f.enc.has_sigma()) {
    Var kl = kl_diag_gaussian(f.enc);
    if (problem.domain() == Domain::graph && batch.pairs_per_example > 1) {
      kl = reduce(Reduce::sum, reshape(kl, {batch.size(), batch.pairs_per_example}), 1);
    }
    f.kl = kl;
  }
  return f;
}

// ---------------------------------------------------------------------------
// training

AttackerHistory train_attacker(AttackGenerator& gen, const AttackProblem& problem, const GeneratorConfig& config) {
  config.validate();
  std::vector<std::size_t> train = problem.examples(Split::train);
  if (train.empty()) throw std::invalid_argument("train_attacker: empty training split");
  for (std::size_t id : train)
    if (problem.split_of(id) != Split::train) throw std::logic_error("attack training touched a non-train example");

  const std::uint64_t target_sum = problem.target().checksum();
  std::vector<Parameter*> params = gen.parameters();
  Adam opt(AdamConfig{config.lr});
  SeededRng rng(config.seed);
  const std::size_t d = gen.latent_dim();
  AttackerHistory h;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train);
    double loss = 0.0, dist = 0.0, kl = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t end = std::min(train.size(), start + config.batch_size);
      const AttackBatch batch = problem.make_batch({train.begin() + static_cast<std::ptrdiff_t>(start), train.begin() + static_cast<std::ptrdiff_t>(end)});
      const std::size_t rows = batch.encoder_rows();
      const Tensor eps = gen.variational() ? sample_standard_normal({rows, d}, rng) : Tensor(Shape{rows, d}, 0.0);

      Tape tape;
      Binding gb(tape, true), tb(tape, false);
      std::optional<AttackForward> fwd;
      std::optional<ObjectiveTerms> obj;
      try {
        fwd = attack_forward(gen, gb, tb, problem, batch, eps);
        obj = hybrid_objective(fwd->scores, batch.labels, fwd->distance, fwd->kl, config.lambda);
      } catch (const DomainError& e) {
        // a collapsed or NaN scale head after divergent updates
        throw NumericError("attacker diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const AttackForward& f = *fwd;
      const ObjectiveTerms& terms = *obj;
      if (!terms.total.value().all_finite()) throw NumericError("non-finite attacker objective at epoch " + std::to_string(epoch));
      opt.step(params, gb.gradients(tape.backward(terms.total), params));

      const double n = static_cast<double>(batch.size());
      loss += terms.total.value().item() * n;
      for (double v : f.distance.value().data()) dist += v;
      if (f.kl.valid())
        for (double v : f.kl.value().data()) kl += v;
      const auto pred = argmax_rows(f.scores.value());
      for (std::size_t i = 0; i < batch.size(); ++i) hits += pred[i] != batch.labels[i];
    }
    const double n = static_cast<double>(train.size());
    h.loss.push_back(loss / n);
    h.success_rate.push_back(static_cast<double>(hits) / n);
    h.mean_distance.push_back(dist / n);
    h.mean_kl.push_back(kl / n);
  }
  if (problem.target().checksum() != target_sum) throw std::logic_error("attack training modified the target");
  return h;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

/// Hard evaluation of one batch: clamp for bounded domains, vocabulary
/// projection plus the edit cap for text.
std::vector<AdversarialRecord> evaluate_batch(const AttackGenerator& gen, const AttackProblem& problem, const AttackBatch& batch,
                                              const Tensor& eps) {
  Tape tape;
  Binding gb(tape, false), tb(tape, false);
  const EncoderOutput enc = gen.encode(gb, problem, batch);
  const Tensor delta = gen.decode(gb, reparameterize(enc, eps)).value();
  const DomainAdapter& adapter = problem.adapter();
  const TargetModel& target = problem.target();
  const std::size_t b = batch.size();

  std::vector<AdversarialRecord> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    out[i].example_id = batch.ids[i];
    out[i].split = problem.split_of(batch.ids[i]);
    out[i].label = batch.labels[i];
  }
  Tensor scores;
  switch (problem.domain()) {
    case Domain::vector:
    case Domain::image: {
      Tensor xp = batch.inputs;
      for (std::size_t k = 0; k < xp.numel(); ++k) xp[k] += delta[k];
      if (adapter.range) xp = clamp_to_range(std::move(xp), adapter.range->first, adapter.range->second);
      scores = target.scores_dense(tb, tape.constant(xp)).value();
      const std::size_t w = xp.extent(1);
      const Shape& shape = problem.dataset()->input_shape;
      for (std::size_t i = 0; i < b; ++i) {
        Tensor xi(shape), pi(shape);
        std::copy_n(batch.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * w), w, xi.data().begin());
        std::copy_n(xp.data().begin() + static_cast<std::ptrdiff_t>(i * w), w, pi.data().begin());
        out[i].distance = similarity(adapter.similarity, xi, pi);
        out[i].original = std::move(xi);
        out[i].perturbed = std::move(pi);
      }
      break;
    }
    case Domain::text: {
      const Vocabulary& vocab = *adapter.vocab;
      const std::size_t t = batch.inputs.extent(1), e = vocab.dim();
      Tensor tokens = batch.inputs;
      for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> orig(t), proj(t), norms(t);
        std::vector<double> v(e);
        for (std::size_t s = 0; s < t; ++s) {
          orig[s] = batch.inputs[i * t + s];
          const std::size_t tok = static_cast<std::size_t>(orig[s]);
          double n2 = 0.0;
          bool nonzero = false;
          for (std::size_t k = 0; k < e; ++k) {
            const double dk = delta.at(i, s * e + k);
            v[k] = vocab.embeddings.at(tok, k) + dk;
            n2 += dk * dk;
            nonzero = nonzero || v[k] != 0.0;
          }
          norms[s] = std::sqrt(n2);
          proj[s] = nonzero ? static_cast<double>(hard_nn_project(v, vocab)) : orig[s];
        }
        const std::vector<double> capped = enforce_token_cap(orig, proj, norms);
        for (std::size_t s = 0; s < t; ++s) tokens[i * t + s] = capped[s];
        out[i].token_change_rate = token_change_rate(orig, capped);
        Tensor before(Shape{t * e}), after(Shape{t * e});
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t k = 0; k < e; ++k) {
            before[s * e + k] = vocab.embeddings.at(static_cast<std::size_t>(orig[s]), k);
            after[s * e + k] = vocab.embeddings.at(static_cast<std::size_t>(capped[s]), k);
          }
        out[i].distance = similarity(adapter.similarity, before, after);
        out[i].original = Tensor(Shape{t}, orig);
        out[i].perturbed = Tensor(Shape{t}, capped);
      }
      scores = target.scores_tokens(tb, tokens).value();
      break;
    }
    case Domain::graph: {
      scores = target.scores_graph_isolated(tb, tape.constant(batch.clean_scores), batch.coupling, tape.constant(delta)).value();
      const std::size_t k = batch.pairs_per_example, w = delta.extent(1);
      for (std::size_t i = 0; i < b; ++i) {
        Tensor rows(Shape{k, w});
        std::copy_n(delta.data().begin() + static_cast<std::ptrdiff_t>(i * k * w), k * w, rows.data().begin());
        double n2 = 0.0;
        for (double x : rows.data()) n2 += x * x;
        out[i].distance = std::sqrt(n2);
        out[i].perturbed = std::move(rows);
        out[i].attackers = problem.attackers_of(batch.ids[i]);
      }
      break;
    }
  }
  const auto pred = argmax_rows(scores);
  for (std::size_t i = 0; i < b; ++i) {
    out[i].predicted = pred[i];
    out[i].success = pred[i] != out[i].label;
  }
  return out;
}

/// Resampling over a group of examples, each with its own rng.
std::vector<AdversarialRecord> attack_group(const AttackGenerator& gen, const AttackProblem& problem,
                                            const std::vector<std::size_t>& ids, std::size_t budget,
                                            std::vector<SeededRng>& rngs) {
  std::vector<AdversarialRecord> result(ids.size());
  std::vector<std::size_t> pending(ids.size());
  std::iota(pending.begin(), pending.end(), 0);
  const std::size_t d = gen.latent_dim();
  const std::size_t attempts = gen.variational() ? budget + 1 : 1;
  for (std::size_t attempt = 0; attempt < attempts && !pending.empty(); ++attempt) {
    std::vector<std::size_t> batch_ids;
    for (std::size_t p : pending) batch_ids.push_back(ids[p]);
    const AttackBatch batch = problem.make_batch(batch_ids);
    const std::size_t per = batch.encoder_rows() / batch.size();
    Tensor eps(Shape{batch.encoder_rows(), d}, 0.0);
    if (gen.variational()) {
      for (std::size_t i = 0; i < pending.size(); ++i)
        for (std::size_t k = 0; k < per * d; ++k) eps[i * per * d + k] = rngs[pending[i]].normal();
    }
    std::vector<AdversarialRecord> recs = evaluate_batch(gen, problem, batch, eps);
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      AdversarialRecord& r = recs[i];
      r.samples_consumed = attempt + 1;
      if (r.success) r.first_success = attempt;
      else still.push_back(pending[i]);
      result[pending[i]] = std::move(r);
    }
    pending = std::move(still);
  }
  return result;
}

}  // namespace

AdversarialRecord resample_attack(const AttackGenerator& gen, const AttackProblem& problem, std::size_t id, std::size_t budget,
                                  SeededRng& rng) {
  std::vector<SeededRng> rngs{rng};
  AdversarialRecord r = std::move(attack_group(gen, problem, {id}, budget, rngs).front());
  rng = rngs.front();
  return r;
}

AdversarialRecord generate(const AttackGenerator& gen, const AttackProblem& problem, std::size_t id, SeededRng& rng) {
  return resample_attack(gen, problem, id, 0, rng);
}

std::vector<AdversarialRecord> attack_examples(const AttackGenerator& gen, const AttackProblem& problem,
                                               const std::vector<std::size_t>& ids, std::size_t budget, std::uint64_t seed,
                                               std::size_t workers) {
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (ids.size() + kChunk - 1) / kChunk;
  std::vector<AdversarialRecord> out(ids.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) {
      try {
        const std::size_t lo = c * kChunk, hi = std::min(ids.size(), lo + kChunk);
        std::vector<std::size_t> group(ids.begin() + static_cast<std::ptrdiff_t>(lo), ids.begin() + static_cast<std::ptrdiff_t>(hi));
        std::vector<SeededRng> rngs;
        for (std::size_t id : group) rngs.push_back(SeededRng::stream(seed, id));
        auto recs = attack_group(gen, problem, group, budget, rngs);
        std::move(recs.begin(), recs.end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, chunks));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

bool succeeds_within(const AdversarialRecord& r, std::size_t budget) { return r.first_success && *r.first_success <= budget; }

std::size_t samples_within(const AdversarialRecord& r, std::size_t budget, bool variational) {
  if (!variational) return 1;
  return succeeds_within(r, budget) ? *r.first_success + 1 : budget + 1;
}

}  // namespace advlat
