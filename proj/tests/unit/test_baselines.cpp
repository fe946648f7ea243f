#include <doctest.h>

#include <cmath>

#include "advlat/baselines.hpp"
#include "test_support.hpp"

using namespace advlat;
using advlat::testing::random_tensor;

namespace {

struct BlobTarget {
  Dataset data;
  TargetModel target;
};

BlobTarget blob_target() {
  BlobParams p;
  p.classes = 2;
  p.samples = 400;
  p.dim = 4;
  p.separation = 2.0;
  p.spread = 0.4;
  BlobTarget b{gen_blobs(p, 21), {}};
  SeededRng rng(22);
  b.target = TargetModel::create({Arch::mlp, 16}, b.data.input_shape, 2, 0, rng);
  train_target(b.target, b.data, {60, 1e-2, 32, 1});
  return b;
}

double l2_row(const Tensor& a, const Tensor& b, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.extent(1); ++c) s += (a.at(r, c) - b.at(r, c)) * (a.at(r, c) - b.at(r, c));
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("sign step arithmetic and sign(0) = 0") {
    const Tensor x = Tensor::matrix({{0, 0}});
    CHECK(sign_step(x, Tensor::matrix({{0.3, -2}}), 0.1) == Tensor::matrix({{0.1, -0.1}}));
    CHECK(sign_step(x, Tensor::matrix({{0, 0}}), 0.1) == x);
    CHECK(sign_step(Tensor::matrix({{0.95, 0.02}}), Tensor::matrix({{1, -1}}), 0.1, std::make_pair(0.0, 1.0)) ==
          Tensor::matrix({{1.0, 0.0}}));
  }

  TEST_CASE("fgsm with a zero-gradient target only clamps") {
    SeededRng rng(1);
    TargetModel t = TargetModel::create({Arch::mlp, 4}, {3}, 2, 0, rng);
    for (Parameter* p : t.parameters())
      for (auto& v : p->value.data()) v = 0.0;
    const Tensor x = Tensor::matrix({{-0.5, 0.5, 1.5}});
    CHECK(fgsm(t, x, {0}, 0.3) == x);
    CHECK(fgsm(t, x, {0}, 0.3, std::make_pair(0.0, 1.0)) == Tensor::matrix({{0, 0.5, 1}}));
  }

  TEST_CASE("fgsm stays in the l-infinity ball and leaves the target untouched") {
    BlobTarget b = blob_target();
    const std::uint64_t before = b.target.checksum();
    const auto ids = b.data.indices(Split::test);
    const Tensor x = stack_inputs(b.data, ids);
    std::vector<std::size_t> y;
    for (std::size_t id : ids) y.push_back(b.data.labels[id]);
    const Tensor xp = fgsm(b.target, x, y, 0.25);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(xp[i] - x[i]) <= 0.25 + 1e-12);  // one ulp of rounding in (x + eps) - x
    CHECK(b.target.checksum() == before);
  }

  TEST_CASE("l2 ball projection") {
    CHECK(project_l2_ball(Tensor::matrix({{3, 4}}), 2.5) == Tensor::matrix({{1.5, 2.0}}));
    CHECK(project_l2_ball(Tensor::matrix({{0.3, -0.4}}), 2.5) == Tensor::matrix({{0.3, -0.4}}));
    const Tensor two = project_l2_ball(Tensor::matrix({{3, 4}, {0.1, 0}}), 1.0);
    CHECK(two.at(0, 0) == doctest::Approx(0.6));
    CHECK(two.at(1, 0) == 0.1);
  }

  TEST_CASE("pgd respects the budget for any seed and config") {
    BlobTarget b = blob_target();
    const std::uint64_t before = b.target.checksum();
    const auto ids = b.data.indices(Split::validation);
    const Tensor x = stack_inputs(b.data, ids);
    std::vector<std::size_t> y;
    for (std::size_t id : ids) y.push_back(b.data.labels[id]);
    SeededRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      PgdConfig c;
      c.epsilon = rng.uniform(0.05, 3.0);
      c.step = rng.uniform(0.01, 2.0);
      c.steps = 1 + rng.uniform_index(10);
      c.random_start = trial % 2 == 0;
      c.seed = static_cast<std::uint64_t>(trial);
      const Range range = trial % 3 == 0 ? Range(std::make_pair(-3.0, 3.0)) : std::nullopt;
      const Tensor xin = range ? clamp_to_range(x, -3.0, 3.0) : x;
      const Tensor xp = pgd_l2(b.target, xin, y, c, range);
      for (std::size_t r = 0; r < xp.extent(0); ++r) CHECK(l2_row(xp, xin, r) <= c.epsilon + 1e-9);
    }
    CHECK(b.target.checksum() == before);
  }

  TEST_CASE("single-iteration pgd is one normalized step plus projection") {
    BlobTarget b = blob_target();
    const auto ids = b.data.indices(Split::test);
    const Tensor x = stack_inputs(b.data, ids);
    std::vector<std::size_t> y;
    for (std::size_t id : ids) y.push_back(b.data.labels[id]);
    PgdConfig c;
    c.epsilon = 0.7;
    c.step = 0.7;
    c.steps = 1;
    const Tensor g = cross_entropy_input_gradient(b.target, x, y);
    Tensor expect = x;
    for (std::size_t r = 0; r < x.extent(0); ++r) {
      double n = 0.0;
      for (std::size_t k = 0; k < x.extent(1); ++k) n += g.at(r, k) * g.at(r, k);
      n = std::sqrt(n);
      Tensor d(Shape{1, x.extent(1)});
      for (std::size_t k = 0; k < x.extent(1); ++k) d.at(0, k) = n > 0 ? c.step * g.at(r, k) / n : 0.0;
      d = project_l2_ball(d, c.epsilon);
      for (std::size_t k = 0; k < x.extent(1); ++k) expect.at(r, k) += d.at(0, k);
    }
    const Tensor got = pgd_l2(b.target, x, y, c);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  TEST_CASE("input gradient matches finite differences") {
    BlobTarget b = blob_target();
    SeededRng rng(4);
    const Tensor x = random_tensor({1, 4}, rng, -2, 2);
    const Tensor g = cross_entropy_input_gradient(b.target, x, {1});
    const GradCheckReport r = finite_diff_check(
        [&](Tape& tape, const Var& v) {
          Binding bind(tape, false);
          return cross_entropy(b.target.scores_dense(bind, v), {1});
        },
        x);
    CHECK(r.passed);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(r.analytic[i]).epsilon(1e-12));
  }

  TEST_CASE("pgd eps 2, 40 steps beats the blob target on training points") {
    BlobTarget b = blob_target();
    const auto test = b.data.indices(Split::test);
    REQUIRE(accuracy(b.target, b.data, test).accuracy >= 0.95);
    AttackProblem problem(b.target, b.data, DomainAdapter::for_domain(Domain::vector));
    PgdConfig c;  // eps 2, 40 steps
    const auto recs = run_baseline(BaselineMethod::pgd, problem, b.data.indices(Split::train), c);
    double s = 0.0;
    for (const auto& r : recs) {
      s += r.success;
      CHECK(r.distance <= c.epsilon + 1e-9);
      CHECK(r.split == Split::train);
    }
    CHECK(s / static_cast<double>(recs.size()) >= 0.95);
  }

  TEST_CASE("config validation and names") {
    PgdConfig c;
    c.epsilon = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PgdConfig{};
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(PgdConfig::from_json(PgdConfig{}.to_json()).to_json() == PgdConfig{}.to_json());
    CHECK(baseline_method_from_string(to_string(BaselineMethod::pgd)) == BaselineMethod::pgd);
    CHECK_THROWS_AS(baseline_method_from_string("cw"), std::invalid_argument);
  }
}
