#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "advlat/adapters.hpp"
#include "test_support.hpp"

using namespace advlat;
using advlat::testing::random_away_from_zero;
using advlat::testing::random_tensor;
using advlat::testing::weighted_sum;

namespace {

Vocabulary random_vocab(std::size_t v, std::size_t e, SeededRng& rng) {
  return Vocabulary::from_embeddings(sample_standard_normal({v, e}, rng));
}

std::size_t linear_scan(std::span<const double> q, const Vocabulary& vocab) {
  std::size_t best = 0;
  double best_cos = -2.0;
  double qn = 0.0;
  for (double x : q) qn += x * x;
  for (std::size_t w = 0; w < vocab.size(); ++w) {
    double dot = 0.0, wn = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      dot += q[k] * vocab.embeddings.at(w, k);
      wn += vocab.embeddings.at(w, k) * vocab.embeddings.at(w, k);
    }
    const double c = dot / std::sqrt(qn * wn);
    if (c > best_cos) {
      best_cos = c;
      best = w;
    }
  }
  return best;
}

GraphDataset star_graph(std::size_t leaves, std::size_t extra_isolated) {
  const std::size_t n = 1 + leaves + extra_isolated;
  GraphDataset g;
  g.adjacency = Tensor(Shape{n, n}, 0.0);
  for (std::size_t i = 1; i <= leaves; ++i) g.adjacency.at(0, i) = g.adjacency.at(i, 0) = 1.0;
  g.features = Tensor(Shape{n, 2}, 1.0);
  g.labels.assign(n, 0);
  g.splits.assign(n, Split::test);
  g.num_classes = 2;
  return g;
}

}  // namespace

TEST_SUITE("adapters") {
  TEST_CASE("combine_additive") {
    Tape tape;
    Var x = tape.constant(Tensor::vector({0.9, 0.2}));
    CHECK(combine_additive(tape.constant(Tensor::vector({0, 0})), x).value() == x.value());
    const Tensor train = combine_additive(tape.constant(Tensor::vector({0.3, 0})), x).value();
    CHECK(train[0] == doctest::Approx(1.2));
    CHECK(clamp_to_range(train, 0.0, 1.0)[0] == 1.0);
    SeededRng rng(1);
    const Tensor d = random_tensor({5}, rng);
    const Tensor x5 = random_tensor({5}, rng);
    const Tensor xp = combine_additive(tape.constant(d), tape.constant(x5)).value();
    double n = 0.0;
    for (double v : d.data()) n += v * v;
    CHECK(similarity(Similarity::l2, x5, xp) == doctest::Approx(std::sqrt(n)).epsilon(1e-12));
    CHECK_THROWS_AS(combine_additive(tape.constant(Tensor::vector({1})), x), DimensionError);
  }

  TEST_CASE("combine_masked") {
    SeededRng rng(2);
    const Tensor x = random_tensor({6, 3}, rng);
    const Tensor d = random_tensor({6, 3}, rng);
    InfluencerMask none;
    none.b.assign(6, 0.0);
    CHECK(combine_masked(d, x, none) == x);

    InfluencerMask all;
    all.b.assign(6, 1.0);
    Tape tape;
    CHECK(combine_masked(d, x, all) == combine_additive(tape.constant(d), tape.constant(x)).value());

    const GraphDataset g = star_graph(3, 4);
    for (int trial = 0; trial < 50; ++trial) {
      InfluencerMask m = select_influencer_set(g, 0, 5, rng);
      Tensor feats = random_tensor({8, 3}, rng), delta = random_tensor({8, 3}, rng);
      const Tensor out = combine_masked(delta, feats, m);
      for (std::size_t i = 0; i < 8; ++i) {
        if (m.b[i] != 0.0) continue;
        for (std::size_t k = 0; k < 3; ++k) CHECK(out.at(i, k) == feats.at(i, k));
      }
      Tape t2;
      CHECK(combine_masked(t2.constant(delta), t2.constant(feats), m).value() == out);
    }
    CHECK_THROWS_AS(combine_masked(d, x, InfluencerMask::direct(5, 0)), DimensionError);
  }

  TEST_CASE("soft_nn_combine examples") {
    const Vocabulary v = Vocabulary::from_embeddings(Tensor::matrix({{1, 0}, {0, 1}}));
    Tape tape;
    const auto low = soft_nn_combine(tape.constant(Tensor::matrix({{0.9, 0.1}})), tape.constant(Tensor::matrix({{0, 0}})), v, 0.01);
    CHECK(std::abs(low.mixed.value()[0] - 1.0) <= 1e-6);
    CHECK(std::abs(low.mixed.value()[1]) <= 1e-6);

    const auto mid = soft_nn_combine(tape.constant(Tensor::matrix({{1, 1}})), tape.constant(Tensor::matrix({{0, 0}})), v, 0.3);
    CHECK(mid.mixed.value()[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(mid.mixed.value()[1] == doctest::Approx(0.5).epsilon(1e-14));

    const auto one = soft_nn_combine(tape.constant(Tensor::matrix({{0.9, 0.1}})), tape.constant(Tensor::matrix({{0, 0}})), v, 1.0);
    const double a0 = std::atan2(0.1, 0.9), a1 = std::numbers::pi / 2 - a0;
    const double w0 = std::exp(-a0) / (std::exp(-a0) + std::exp(-a1));
    CHECK(std::abs(one.weights.value()[0] - w0) <= 1e-12);
    CHECK(std::abs(one.weights.value()[1] - (1 - w0)) <= 1e-12);

    CHECK_THROWS_AS(soft_nn_combine(tape.constant(Tensor::matrix({{0, 0}})), tape.constant(Tensor::matrix({{0, 0}})), v, 1.0), DomainError);
  }

  TEST_CASE("soft_nn weights sum to one and the low-temperature limit matches projection") {
    SeededRng rng(3);
    const Vocabulary v = random_vocab(100, 16, rng);
    const Tensor q = sample_standard_normal({1000, 16}, rng);
    Tape tape;
    const auto out = soft_nn_combine(tape.constant(q), tape.constant(Tensor(Shape{1000, 16}, 0.0)), v, 0.01);
    std::size_t agree = 0;
    for (std::size_t r = 0; r < 1000; ++r) {
      double s = 0.0;
      std::size_t arg = 0;
      for (std::size_t w = 0; w < 100; ++w) {
        s += out.weights.value().at(r, w);
        if (out.weights.value().at(r, w) > out.weights.value().at(r, arg)) arg = w;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
      agree += arg == hard_nn_project(q.data().subspan(r * 16, 16), v);
    }
    CHECK(agree >= 990);
  }

  TEST_CASE("hard_nn_project") {
    SeededRng rng(4);
    const Vocabulary v = random_vocab(30, 5, rng);
    for (std::size_t w = 0; w < 30; ++w) {
      const auto row = v.embeddings.data().subspan(w * 5, 5);
      CHECK(hard_nn_project(row, v) == w);
      std::vector<double> twice(row.begin(), row.end());
      for (auto& x : twice) x *= 2.0;
      CHECK(hard_nn_project(twice, v) == w);
    }
    for (int i = 0; i < 1000; ++i) {
      const Tensor q = sample_standard_normal({5}, rng);
      const std::size_t got = hard_nn_project(q.data(), v);
      CHECK(got == linear_scan(q.data(), v));
      std::vector<double> scaled(q.data().begin(), q.data().end());
      for (auto& x : scaled) x *= 7.5;
      CHECK(hard_nn_project(scaled, v) == got);
    }
    const Vocabulary dup = Vocabulary::from_embeddings(Tensor::matrix({{1, 0}, {2, 0}}));
    CHECK(hard_nn_project(std::vector<double>{3, 0}, dup) == 0);
    CHECK_THROWS_AS(hard_nn_project(std::vector<double>(5, 0.0), v), DomainError);
  }

  TEST_CASE("select_influencer_set") {
    SeededRng rng(5);
    const GraphDataset seven = star_graph(7, 2);
    for (int i = 0; i < 20; ++i) {
      const InfluencerMask m = select_influencer_set(seven, 0, 5, rng);
      CHECK(m.attackers.size() == 5);
      for (auto a : m.attackers) CHECK((a >= 1 && a <= 7));
      m.validate(seven.num_nodes(), true);
    }
    const GraphDataset three = star_graph(3, 6);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t target = rng.uniform_index(three.num_nodes());
      const InfluencerMask m = select_influencer_set(three, target, 5, rng);
      CHECK(m.attackers.size() == 5);
      CHECK(std::find(m.attackers.begin(), m.attackers.end(), target) == m.attackers.end());
      if (target == 0)
        for (std::size_t leaf : {1, 2, 3}) CHECK(std::find(m.attackers.begin(), m.attackers.end(), leaf) != m.attackers.end());
    }
    CHECK_THROWS_AS(select_influencer_set(star_graph(0, 0), 0, 5, rng), std::invalid_argument);
  }

  TEST_CASE("similarity") {
    const Tensor a = Tensor::vector({0, 0}), b = Tensor::vector({3, 4});
    CHECK(similarity(Similarity::l2, a, b) == 5.0);
    CHECK(similarity(Similarity::l2, b, b) == 0.0);
    CHECK(similarity(Similarity::angular, b, b) == 0.0);
    CHECK(similarity(Similarity::angular, Tensor::vector({1, 0}), Tensor::vector({0, 1})) == doctest::Approx(std::numbers::pi / 2));
    CHECK_THROWS_AS(similarity(Similarity::angular, a, b), DomainError);

    SeededRng rng(6);
    for (int i = 0; i < 100; ++i) {
      const Tensor x = random_tensor({4}, rng);
      Tensor y = x;
      CHECK(similarity(Similarity::l2, x, y) == 0.0);
      y[rng.uniform_index(4)] += 1e-3;
      CHECK(similarity(Similarity::l2, x, y) > 0.0);
    }
    const Tensor ref = random_away_from_zero({2, 3}, rng);
    for (Similarity mode : {Similarity::l2, Similarity::angular}) {
      GradCheckReport r = finite_diff_check([&](Tape&, const Var& xp) { return similarity(mode, ref, xp); }, random_tensor({2, 3}, rng));
      CHECK(r.passed);
    }
  }

  TEST_CASE("token change rate and the cap") {
    const std::vector<double> a = {1, 2, 3, 4};
    CHECK(token_change_rate(a, a) == 0.0);
    CHECK(token_change_rate(a, std::vector<double>{5, 6, 7, 8}) == 1.0);
    CHECK_THROWS_AS(token_change_rate(a, std::vector<double>{1}), DimensionError);

    SeededRng rng(7);
    std::vector<double> orig(20), pert(20), norms(20);
    for (std::size_t i = 0; i < 20; ++i) {
      orig[i] = static_cast<double>(i);
      pert[i] = static_cast<double>(i + 100);
      norms[i] = rng.uniform();
    }
    const auto capped = enforce_token_cap(orig, pert, norms, 0.15);
    CHECK(token_change_rate(orig, capped) == doctest::Approx(3.0 / 20.0));
    std::vector<std::size_t> order(20);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return norms[x] > norms[y]; });
    for (std::size_t k = 0; k < 3; ++k) CHECK(capped[order[k]] == pert[order[k]]);
  }

  TEST_CASE("soft_nn gradient passes finite differences") {
    SeededRng rng(8);
    const Vocabulary v = random_vocab(12, 4, rng);
    const Tensor emb = sample_standard_normal({3, 4}, rng);
    for (int trial = 0; trial < 20; ++trial) {
      GradCheckReport r = finite_diff_check(
          [&](Tape& t, const Var& d) { return weighted_sum(soft_nn_combine(d, t.constant(emb), v, 0.5).mixed); },
          random_tensor({3, 4}, rng));
      CHECK(r.passed);
    }
  }

  TEST_CASE("vocabulary file round trip and validation") {
    SeededRng rng(9);
    const Vocabulary v = random_vocab(6, 3, rng);
    const auto dir = std::filesystem::temp_directory_path() / "advlat_adapter_tests";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "vocab.txt").string();
    v.save(path);
    const Vocabulary back = Vocabulary::load(path);
    CHECK(back.tokens == v.tokens);
    CHECK(back.embeddings == v.embeddings);

    Vocabulary bad = v;
    bad.tokens[1] = bad.tokens[0];
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(Vocabulary::from_embeddings(Tensor::matrix({{1, 0}, {0, 0}})), DomainError);

    DomainAdapter a = DomainAdapter::for_domain(Domain::text);
    CHECK_THROWS_AS(a.validate(), std::invalid_argument);
    a.vocab = v;
    a.validate();
    DomainAdapter g = DomainAdapter::for_domain(Domain::graph);
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  }
}
