#pragma once

// Small trained targets for each domain, shared by generator tests and the
// acceptance run.

#include <memory>

#include "advlat/generator.hpp"

namespace advlat::testing {

/// A small trained target plus its data, for one domain.
struct Fixture {
  std::unique_ptr<Dataset> data;
  std::unique_ptr<GraphDataset> graph;
  std::unique_ptr<TargetModel> target;  // heap-held so the problem's reference survives moves
  std::unique_ptr<AttackProblem> problem;
};

inline Fixture make_fixture(Domain domain, GraphAttack mode = GraphAttack::direct, std::size_t samples = 120) {
  Fixture f;
  SeededRng rng(100 + static_cast<int>(domain));
  switch (domain) {
    case Domain::vector: {
      BlobParams p;
      p.classes = 2;
      p.samples = samples;
      p.dim = 4;
      p.separation = 2.5;
      f.data = std::make_unique<Dataset>(gen_blobs(p, 1));
      f.target = std::make_unique<TargetModel>(TargetModel::create({Arch::mlp, 16}, f.data->input_shape, 2, 0, rng));
      train_target(*f.target, *f.data, {30, 1e-2, 32, 1});
      break;
    }
    case Domain::image: {
      ImageParams p;
      p.samples = samples;
      p.height = p.width = 4;
      f.data = std::make_unique<Dataset>(gen_images(p, 1));
      f.target = std::make_unique<TargetModel>(TargetModel::create({Arch::cnn, 8, 4, 2}, f.data->input_shape, p.classes, 0, rng));
      train_target(*f.target, *f.data, {5, 1e-2, 32, 1});
      break;
    }
    case Domain::text: {
      TokenParams p;
      p.samples = samples;
      p.seq_len = 6;
      p.vocab = 12;
      p.indicators_per_class = 3;
      p.min_indicators = 1;
      p.max_indicators = 2;
      f.data = std::make_unique<Dataset>(gen_tokens(p, 1));
      f.target = std::make_unique<TargetModel>(TargetModel::create({Arch::lstm, 8, 4}, f.data->input_shape, 2, p.vocab, rng));
      train_target(*f.target, *f.data, {5, 1e-2, 32, 1});
      break;
    }
    case Domain::graph: {
      f.graph = std::make_unique<GraphDataset>(gen_sbm_graph(SbmParams{60, 3, 0.15, 0.01, 12, 0.4, 0.05}, 1));
      f.target = std::make_unique<TargetModel>(TargetModel::create({Arch::gcn}, {12}, 3, 0, rng));
      train_target(*f.target, *f.graph, {50, 1e-2, 0, 1});
      break;
    }
  }
  if (domain == Domain::graph) {
    f.problem = std::make_unique<AttackProblem>(*f.target, *f.graph, DomainAdapter::for_domain(Domain::graph), mode, 5, 3);
  } else {
    DomainAdapter a = DomainAdapter::for_domain(domain);
    a.tau = 0.5;
    f.problem = std::make_unique<AttackProblem>(*f.target, *f.data, a);
  }
  return f;
}

}  // namespace advlat::testing
