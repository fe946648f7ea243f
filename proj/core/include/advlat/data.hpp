#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlat/rng.hpp"
#include "advlat/tensor.hpp"

namespace advlat {

enum class Domain { vector, image, text, graph };
enum class Split : std::uint8_t { train, validation, test };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain domain_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// I.i.d. examples. Text inputs hold token ids stored as exact doubles.
struct Dataset {
  Domain domain = Domain::vector;
  Shape input_shape;
  std::size_t num_classes = 0;
  std::size_t vocab_size = 0;  // text only
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::vector<Split> splits;

  std::size_t size() const { return inputs.size(); }
  std::vector<std::size_t> indices(Split s) const;
  /// Throws std::invalid_argument on any internal inconsistency.
  void validate() const;
};

struct GraphDataset {
  Tensor adjacency;  // [N x N], 0/1, symmetric, zero diagonal
  Tensor features;   // [N x F]
  std::vector<std::size_t> labels;
  std::vector<Split> splits;
  std::size_t num_classes = 0;
  std::vector<std::string> node_ids;

  std::size_t num_nodes() const { return labels.size(); }
  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> neighbors(std::size_t node) const;
  void validate() const;
};

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
};

struct BlobParams {
  std::size_t classes = 3;
  std::size_t samples = 600;
  std::size_t dim = 8;
  double separation = 2.0;  // distance between any two cluster centers
  double spread = 0.5;      // per-coordinate standard deviation
  SplitFractions split;
};

struct RingParams {
  std::size_t classes = 2;
  std::size_t samples = 400;
  double radius_step = 1.0;
  double noise = 0.1;
  SplitFractions split;
};

struct ImageParams {
  std::size_t classes = 3;
  std::size_t samples = 600;
  std::size_t channels = 2;
  std::size_t height = 8;
  std::size_t width = 8;
  double noise = 0.15;
  SplitFractions split;
};

struct TokenParams {
  std::size_t classes = 2;
  std::size_t samples = 600;
  std::size_t seq_len = 20;
  std::size_t vocab = 50;
  std::size_t indicators_per_class = 8;
  std::size_t min_indicators = 2;
  std::size_t max_indicators = 4;
  SplitFractions split;
};

struct SbmParams {
  std::size_t nodes = 300;
  std::size_t classes = 3;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t features = 60;
  double feature_p_in = 0.15;
  double feature_p_out = 0.03;
};

Dataset gen_blobs(const BlobParams& p, std::uint64_t seed);
Dataset gen_rings(const RingParams& p, std::uint64_t seed);
Dataset gen_images(const ImageParams& p, std::uint64_t seed);
Dataset gen_tokens(const TokenParams& p, std::uint64_t seed);
/// Labels balanced; splits assigned with split_nodes.
GraphDataset gen_sbm_graph(const SbmParams& p, std::uint64_t seed);

using AnyDataset = std::variant<Dataset, GraphDataset>;

/// kind in {blobs, rings, images, tokens, sbm-graph}; params are the JSON
/// spelling of the structs above (missing keys keep their defaults).
AnyDataset gen_synthetic(const std::string& kind, const nlohmann::json& params, std::uint64_t seed);

struct CitationLoadStats {
  std::size_t skipped_edges = 0;
};

/// Planetoid text layout: content lines "<id> <binary features...> <label>",
/// cites lines "<cited> <citing>". Adjacency is symmetrized without
/// self-loops and features are row-normalized. Every node starts in the
/// test split; call split_nodes afterwards.
GraphDataset load_citation_graph(const std::string& content_path, const std::string& cites_path,
                                 CitationLoadStats* stats = nullptr);

/// `of_all`: train and validation are each a tenth of all nodes.
/// `of_labeled`: a fifth of nodes is labeled and a tenth of that pool trains.
enum class SplitReading { of_all, of_labeled };

std::vector<Split> split_nodes(std::size_t num_nodes, SeededRng& rng, SplitReading reading = SplitReading::of_all);

void save_dataset(const std::string& path, const Dataset& d);
void save_dataset(const std::string& path, const GraphDataset& g);
AnyDataset load_dataset(const std::string& path);

}  // namespace advlat
