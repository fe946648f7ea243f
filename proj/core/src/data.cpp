#include "advlat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "advlat/checkpoint.hpp"

namespace advlat {

using nlohmann::json;

std::string to_string(Domain d) {
  switch (d) {
    case Domain::vector: return "vector";
    case Domain::image: return "image";
    case Domain::text: return "text";
    case Domain::graph: return "graph";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Domain domain_from_string(const std::string& s) {
  if (s == "vector") return Domain::vector;
  if (s == "image") return Domain::image;
  if (s == "text") return Domain::text;
  if (s == "graph") return Domain::graph;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (inputs.size() != labels.size() || inputs.size() != splits.size()) {
    throw std::invalid_argument("dataset: inputs/labels/splits counts differ");
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != input_shape) throw std::invalid_argument("dataset: example " + std::to_string(i) + " has shape " + shape_string(inputs[i].shape()));
    if (labels[i] >= num_classes) throw std::invalid_argument("dataset: label out of range at example " + std::to_string(i));
    if (domain == Domain::text) {
      for (double t : inputs[i].data())
        if (t < 0 || t >= static_cast<double>(vocab_size) || t != std::floor(t)) {
          throw std::invalid_argument("dataset: invalid token id in example " + std::to_string(i));
        }
    }
  }
}

std::vector<std::size_t> GraphDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> GraphDataset::neighbors(std::size_t node) const {
  std::vector<std::size_t> out;
  const std::size_t n = num_nodes();
  for (std::size_t j = 0; j < n; ++j)
    if (j != node && adjacency.at(node, j) != 0.0) out.push_back(j);
  return out;
}

void GraphDataset::validate() const {
  const std::size_t n = labels.size();
  if (adjacency.rank() != 2 || adjacency.extent(0) != n || adjacency.extent(1) != n) {
    throw std::invalid_argument("graph: adjacency " + shape_string(adjacency.shape()) + " does not match " + std::to_string(n) + " nodes");
  }
  if (features.rank() != 2 || features.extent(0) != n) throw std::invalid_argument("graph: feature rows do not match node count");
  if (splits.size() != n) throw std::invalid_argument("graph: split mask length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) throw std::invalid_argument("graph: label out of range at node " + std::to_string(i));
    if (adjacency.at(i, i) != 0.0) throw std::invalid_argument("graph: nonzero diagonal at node " + std::to_string(i));
    for (std::size_t j = i + 1; j < n; ++j)
      if (adjacency.at(i, j) != adjacency.at(j, i)) throw std::invalid_argument("graph: adjacency is not symmetric");
  }
}

// ---------------------------------------------------------------------------
// generators

namespace {

void check_common(std::size_t classes, std::size_t samples) {
  if (classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (samples < classes) throw std::invalid_argument("sample count must be at least the class count");
}

/// Balanced labels (i mod C) in a seeded order plus seeded split assignment.
void balanced_layout(std::size_t samples, std::size_t classes, const SplitFractions& f, SeededRng& rng,
                     std::vector<std::size_t>& labels, std::vector<Split>& splits) {
  if (f.train <= 0 || f.validation < 0 || f.train + f.validation >= 1.0) throw std::invalid_argument("invalid split fractions");
  labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) labels[i] = i % classes;
  rng.shuffle(labels);
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(samples)));
  const auto n_val = static_cast<std::size_t>(std::floor(f.validation * static_cast<double>(samples)));
  splits.assign(samples, Split::test);
  for (std::size_t k = 0; k < samples; ++k) {
    splits[order[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::validation : Split::test);
  }
}

}  // namespace

Dataset gen_blobs(const BlobParams& p, std::uint64_t seed) {
  check_common(p.classes, p.samples);
  if (p.dim < 1 || p.spread <= 0) throw std::invalid_argument("blobs: invalid dim/spread");
  SeededRng rng(seed);
  Dataset d;
  d.domain = Domain::vector;
  d.input_shape = {p.dim};
  d.num_classes = p.classes;
  balanced_layout(p.samples, p.classes, p.split, rng, d.labels, d.splits);
  // Centers at separation/sqrt(2) along orthogonal directions: every pair is
  // `separation` apart. Extra classes beyond dim wrap onto negative axes.
  std::vector<Tensor> centers;
  const double r = p.separation / std::sqrt(2.0);
  for (std::size_t c = 0; c < p.classes; ++c) {
    Tensor ctr(Shape{p.dim}, 0.0);
    ctr[c % p.dim] = (c / p.dim) % 2 == 0 ? r : -r;
    centers.push_back(ctr);
  }
  for (std::size_t i = 0; i < p.samples; ++i) {
    Tensor x = centers[d.labels[i]];
    for (auto& v : x.data()) v += p.spread * rng.normal();
    d.inputs.push_back(std::move(x));
  }
  return d;
}

Dataset gen_rings(const RingParams& p, std::uint64_t seed) {
  check_common(p.classes, p.samples);
  SeededRng rng(seed);
  Dataset d;
  d.domain = Domain::vector;
  d.input_shape = {2};
  d.num_classes = p.classes;
  balanced_layout(p.samples, p.classes, p.split, rng, d.labels, d.splits);
  for (std::size_t i = 0; i < p.samples; ++i) {
    const double radius = p.radius_step * static_cast<double>(d.labels[i] + 1) + p.noise * rng.normal();
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    d.inputs.push_back(Tensor::vector({radius * std::cos(theta), radius * std::sin(theta)}));
  }
  return d;
}

Dataset gen_images(const ImageParams& p, std::uint64_t seed) {
  check_common(p.classes, p.samples);
  SeededRng rng(seed);
  Dataset d;
  d.domain = Domain::image;
  d.input_shape = {p.channels, p.height, p.width};
  d.num_classes = p.classes;
  balanced_layout(p.samples, p.classes, p.split, rng, d.labels, d.splits);
  const std::size_t n = p.channels * p.height * p.width;
  std::vector<Tensor> templates;
  for (std::size_t c = 0; c < p.classes; ++c) {
    Tensor t(d.input_shape);
    for (auto& v : t.data()) v = rng.uniform() < 0.5 ? 0.25 : 0.75;
    templates.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < p.samples; ++i) {
    Tensor x = templates[d.labels[i]];
    for (std::size_t k = 0; k < n; ++k) x[k] = std::clamp(x[k] + p.noise * rng.normal(), 0.0, 1.0);
    d.inputs.push_back(std::move(x));
  }
  return d;
}

Dataset gen_tokens(const TokenParams& p, std::uint64_t seed) {
  check_common(p.classes, p.samples);
  if (p.classes * p.indicators_per_class >= p.vocab) throw std::invalid_argument("tokens: vocabulary too small for indicator words");
  if (p.min_indicators > p.max_indicators || p.max_indicators > p.seq_len) throw std::invalid_argument("tokens: invalid indicator counts");
  SeededRng rng(seed);
  Dataset d;
  d.domain = Domain::text;
  d.input_shape = {p.seq_len};
  d.num_classes = p.classes;
  d.vocab_size = p.vocab;
  balanced_layout(p.samples, p.classes, p.split, rng, d.labels, d.splits);
  // ids [c*k, (c+1)*k) indicate class c; the rest are neutral
  const std::size_t neutral_begin = p.classes * p.indicators_per_class;
  const std::size_t neutral = p.vocab - neutral_begin;
  for (std::size_t i = 0; i < p.samples; ++i) {
    Tensor x(d.input_shape);
    for (auto& v : x.data()) v = static_cast<double>(neutral_begin + rng.uniform_index(neutral));
    const std::size_t k = p.min_indicators + rng.uniform_index(p.max_indicators - p.min_indicators + 1);
    std::vector<std::size_t> pos(p.seq_len);
    std::iota(pos.begin(), pos.end(), 0);
    rng.shuffle(pos);
    for (std::size_t j = 0; j < k; ++j) {
      x[pos[j]] = static_cast<double>(d.labels[i] * p.indicators_per_class + rng.uniform_index(p.indicators_per_class));
    }
    d.inputs.push_back(std::move(x));
  }
  return d;
}

GraphDataset gen_sbm_graph(const SbmParams& p, std::uint64_t seed) {
  check_common(p.classes, p.nodes);
  if (p.nodes < 10) throw std::invalid_argument("sbm-graph: need at least 10 nodes");
  SeededRng rng(seed);
  GraphDataset g;
  g.num_classes = p.classes;
  g.labels.resize(p.nodes);
  for (std::size_t i = 0; i < p.nodes; ++i) g.labels[i] = i % p.classes;
  rng.shuffle(g.labels);
  g.adjacency = Tensor(Shape{p.nodes, p.nodes}, 0.0);
  for (std::size_t i = 0; i < p.nodes; ++i)
    for (std::size_t j = i + 1; j < p.nodes; ++j) {
      const double prob = g.labels[i] == g.labels[j] ? p.p_in : p.p_out;
      if (rng.uniform() < prob) g.adjacency.at(i, j) = g.adjacency.at(j, i) = 1.0;
    }
  g.features = Tensor(Shape{p.nodes, p.features}, 0.0);
  for (std::size_t i = 0; i < p.nodes; ++i) {
    double row = 0.0;
    for (std::size_t f = 0; f < p.features; ++f) {
      const bool own = (f % p.classes) == g.labels[i];
      if (rng.uniform() < (own ? p.feature_p_in : p.feature_p_out)) {
        g.features.at(i, f) = 1.0;
        row += 1.0;
      }
    }
    if (row == 0.0) {
      // keep every row nonzero: one feature from the node's own block
      const std::size_t per = (p.features + p.classes - 1 - g.labels[i]) / p.classes;
      const std::size_t f = g.labels[i] + p.classes * rng.uniform_index(std::max<std::size_t>(per, 1));
      g.features.at(i, std::min(f, p.features - 1)) = 1.0;
      row = 1.0;
    }
    for (std::size_t f = 0; f < p.features; ++f) g.features.at(i, f) /= row;
  }
  for (std::size_t i = 0; i < p.nodes; ++i) g.node_ids.push_back(std::to_string(i));
  g.splits = split_nodes(p.nodes, rng);
  return g;
}

namespace {

SplitFractions fractions_from(const json& j, SplitFractions f) {
  if (j.contains("split")) {
    f.train = j["split"].value("train", f.train);
    f.validation = j["split"].value("validation", f.validation);
  }
  return f;
}

}  // namespace

AnyDataset gen_synthetic(const std::string& kind, const json& j, std::uint64_t seed) {
  if (kind == "blobs") {
    BlobParams p;
    p.classes = j.value("classes", p.classes);
    p.samples = j.value("samples", p.samples);
    p.dim = j.value("dim", p.dim);
    p.separation = j.value("separation", p.separation);
    p.spread = j.value("spread", p.spread);
    p.split = fractions_from(j, p.split);
    return gen_blobs(p, seed);
  }
  if (kind == "rings") {
    RingParams p;
    p.classes = j.value("classes", p.classes);
    p.samples = j.value("samples", p.samples);
    p.radius_step = j.value("radius_step", p.radius_step);
    p.noise = j.value("noise", p.noise);
    p.split = fractions_from(j, p.split);
    return gen_rings(p, seed);
  }
  if (kind == "images") {
    ImageParams p;
    p.classes = j.value("classes", p.classes);
    p.samples = j.value("samples", p.samples);
    p.channels = j.value("channels", p.channels);
    p.height = j.value("height", p.height);
    p.width = j.value("width", p.width);
    p.noise = j.value("noise", p.noise);
    p.split = fractions_from(j, p.split);
    return gen_images(p, seed);
  }
  if (kind == "tokens") {
    TokenParams p;
    p.classes = j.value("classes", p.classes);
    p.samples = j.value("samples", p.samples);
    p.seq_len = j.value("seq_len", p.seq_len);
    p.vocab = j.value("vocab", p.vocab);
    p.indicators_per_class = j.value("indicators_per_class", p.indicators_per_class);
    p.min_indicators = j.value("min_indicators", p.min_indicators);
    p.max_indicators = j.value("max_indicators", p.max_indicators);
    p.split = fractions_from(j, p.split);
    return gen_tokens(p, seed);
  }
  if (kind == "sbm-graph") {
    SbmParams p;
    p.nodes = j.value("nodes", p.nodes);
    p.classes = j.value("classes", p.classes);
    p.p_in = j.value("p_in", p.p_in);
    p.p_out = j.value("p_out", p.p_out);
    p.features = j.value("features", p.features);
    p.feature_p_in = j.value("feature_p_in", p.feature_p_in);
    p.feature_p_out = j.value("feature_p_out", p.feature_p_out);
    return gen_sbm_graph(p, seed);
  }
  throw std::invalid_argument("unknown synthetic dataset kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// citation graphs

GraphDataset load_citation_graph(const std::string& content_path, const std::string& cites_path,
                                 CitationLoadStats* stats) {
  std::ifstream content(content_path);
  if (!content) throw IoError("cannot open " + content_path);
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> label_names;
  std::string line;
  std::size_t line_no = 0, width = 0;
  while (std::getline(content, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.size() < 3) throw FormatError(content_path + ":" + std::to_string(line_no) + ": expected id, features and label");
    const std::size_t f = tok.size() - 2;
    if (width == 0) width = f;
    if (f != width) {
      throw FormatError(content_path + ":" + std::to_string(line_no) + ": " + std::to_string(f) + " features, expected " + std::to_string(width));
    }
    std::vector<double> row(f);
    for (std::size_t k = 0; k < f; ++k) {
      const std::string& s = tok[k + 1];
      if (s == "0") row[k] = 0.0;
      else if (s == "1") row[k] = 1.0;
      else {
        try {
          std::size_t used = 0;
          row[k] = std::stod(s, &used);
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
          throw FormatError(content_path + ":" + std::to_string(line_no) + ": bad feature value '" + s + "'");
        }
      }
    }
    ids.push_back(tok.front());
    rows.push_back(std::move(row));
    label_names.push_back(tok.back());
  }
  const std::size_t n = ids.size();
  if (n == 0) throw FormatError(content_path + ": no nodes");

  std::vector<std::string> classes = label_names;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::map<std::string, std::size_t> class_index;
  for (std::size_t c = 0; c < classes.size(); ++c) class_index[classes[c]] = c;
  std::unordered_map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < n; ++i) {
    if (!node_index.emplace(ids[i], i).second) throw FormatError(content_path + ": duplicate node id " + ids[i]);
  }

  GraphDataset g;
  g.num_classes = classes.size();
  g.node_ids = ids;
  g.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.labels[i] = class_index.at(label_names[i]);
  g.features = Tensor(Shape{n, width}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : rows[i]) s += v;
    for (std::size_t k = 0; k < width; ++k) g.features.at(i, k) = s != 0.0 ? rows[i][k] / s : 0.0;
  }

  std::ifstream cites(cites_path);
  if (!cites) throw IoError("cannot open " + cites_path);
  g.adjacency = Tensor(Shape{n, n}, 0.0);
  std::size_t skipped = 0;
  line_no = 0;
  while (std::getline(cites, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string a, b, extra;
    if (!(ls >> a >> b) || (ls >> extra)) throw FormatError(cites_path + ":" + std::to_string(line_no) + ": expected two node ids");
    auto ia = node_index.find(a), ib = node_index.find(b);
    if (ia == node_index.end() || ib == node_index.end()) {
      ++skipped;
      continue;
    }
    if (ia->second == ib->second) continue;
    g.adjacency.at(ia->second, ib->second) = 1.0;
    g.adjacency.at(ib->second, ia->second) = 1.0;
  }
  if (stats) stats->skipped_edges = skipped;
  g.splits.assign(n, Split::test);
  return g;
}

std::vector<Split> split_nodes(std::size_t num_nodes, SeededRng& rng, SplitReading reading) {
  std::vector<std::size_t> order(num_nodes);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t n_train = 0, n_val = 0;
  const double n = static_cast<double>(num_nodes);
  if (reading == SplitReading::of_all) {
    n_train = static_cast<std::size_t>(std::floor(0.1 * n));
    n_val = static_cast<std::size_t>(std::floor(0.1 * n));
  } else {
    const auto labeled = static_cast<std::size_t>(std::floor(0.2 * n));
    n_train = static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(labeled)));
    n_val = labeled - n_train;
  }
  std::vector<Split> s(num_nodes, Split::test);
  for (std::size_t k = 0; k < num_nodes; ++k) {
    if (k < n_train) s[order[k]] = Split::train;
    else if (k < n_train + n_val) s[order[k]] = Split::validation;
  }
  return s;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json splits_json(const std::vector<Split>& s) {
  json out = json::array();
  for (auto v : s) out.push_back(to_string(v));
  return out;
}

std::vector<Split> splits_from(const json& j) {
  std::vector<Split> out;
  for (const auto& v : j) out.push_back(split_from_string(v.get<std::string>()));
  return out;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& d) {
  d.validate();
  Bundle b;
  b.kind = "dataset";
  b.meta = {{"domain", to_string(d.domain)},
            {"input_shape", d.input_shape},
            {"num_classes", d.num_classes},
            {"vocab_size", d.vocab_size},
            {"labels", d.labels},
            {"splits", splits_json(d.splits)}};
  const std::size_t width = shape_numel(d.input_shape);
  if (!d.inputs.empty()) {
    std::vector<double> all;
    all.reserve(d.inputs.size() * width);
    for (const auto& x : d.inputs) all.insert(all.end(), x.data().begin(), x.data().end());
    b.tensors.push_back({"inputs", Tensor(Shape{d.inputs.size(), width}, std::move(all))});
  }
  save_bundle(path, b);
}

void save_dataset(const std::string& path, const GraphDataset& g) {
  g.validate();
  Bundle b;
  b.kind = "graph";
  b.meta = {{"num_classes", g.num_classes},
            {"labels", g.labels},
            {"splits", splits_json(g.splits)},
            {"node_ids", g.node_ids}};
  b.tensors.push_back({"adjacency", g.adjacency});
  b.tensors.push_back({"features", g.features});
  save_bundle(path, b);
}

AnyDataset load_dataset(const std::string& path) {
  Bundle b = load_bundle(path);
  if (b.kind == "dataset") {
    Dataset d;
    d.domain = domain_from_string(b.meta.at("domain").get<std::string>());
    d.input_shape = b.meta.at("input_shape").get<Shape>();
    d.num_classes = b.meta.at("num_classes").get<std::size_t>();
    d.vocab_size = b.meta.value("vocab_size", std::size_t{0});
    d.labels = b.meta.at("labels").get<std::vector<std::size_t>>();
    d.splits = splits_from(b.meta.at("splits"));
    if (const Tensor* all = b.find("inputs")) {
      const std::size_t width = shape_numel(d.input_shape);
      for (std::size_t i = 0; i < all->extent(0); ++i) {
        std::vector<double> v(all->data().begin() + static_cast<std::ptrdiff_t>(i * width),
                              all->data().begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
        d.inputs.emplace_back(d.input_shape, std::move(v));
      }
    }
    d.validate();
    return d;
  }
  if (b.kind == "graph") {
    GraphDataset g;
    g.num_classes = b.meta.at("num_classes").get<std::size_t>();
    g.labels = b.meta.at("labels").get<std::vector<std::size_t>>();
    g.splits = splits_from(b.meta.at("splits"));
    g.node_ids = b.meta.at("node_ids").get<std::vector<std::string>>();
    g.adjacency = b.get("adjacency");
    g.features = b.get("features");
    g.validate();
    return g;
  }
  throw FormatError(path + ": not a dataset bundle (kind '" + b.kind + "')");
}

}  // namespace advlat
