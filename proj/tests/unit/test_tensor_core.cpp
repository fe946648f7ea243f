#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "advlat/tensor.hpp"
#include "../common/grad_cases.hpp"
#include "test_support.hpp"

using namespace advlat;
using advlat::testing::max_abs_diff;
using advlat::testing::random_away_from_zero;
using advlat::testing::random_tensor;
using advlat::testing::weighted_sum;

namespace {

Tensor triple_loop(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor c(Shape{m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor eval1(const std::function<Var(const Var&)>& f, const Tensor& x) {
  Tape tape;
  return f(tape.constant(x)).value();
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape invariants") {
    CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
    Tensor s = Tensor::scalar(3.0);
    CHECK(s.rank() == 0);
    CHECK(s.numel() == 1);
    CHECK(s.item() == 3.0);
  }

  TEST_CASE("TNS golden file") {
    const Tensor t = load_tns(ADVLAT_FIXTURE_DIR "/golden_matrix.tns");
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t == Tensor::matrix({{1.5, -2.0, 0.25}, {1e-3, 4.0, -0.125}}));

    std::stringstream ss;
    write_tns(ss, t);
    CHECK(read_tns(ss) == t);

    std::istringstream short_body("TNS v1 2 2 2\n1 2 3\n");
    CHECK_THROWS_AS(read_tns(short_body), FormatError);
    std::istringstream bad_version("TNS v2 1 1\n0\n");
    CHECK_THROWS_AS(read_tns(bad_version), FormatError);
  }

  TEST_CASE("TNS round trip keeps every bit") {
    SeededRng rng(5);
    Tensor t = sample_standard_normal({3, 4, 2}, rng);
    std::stringstream ss;
    write_tns(ss, t);
    CHECK(read_tns(ss) == t);
  }
}

TEST_SUITE("ops") {
  TEST_CASE("matmul examples") {
    Tape tape;
    Var eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(matmul(eye, m).value() == m.value());
    Var col = tape.constant(Tensor::matrix({{0}, {1}}));
    CHECK(matmul(m, col).value() == Tensor::matrix({{2}, {4}}));
    CHECK_THROWS_AS(matmul(m, tape.constant(Tensor::matrix({{1, 2, 3}}))), DimensionError);
  }

  TEST_CASE("matmul matches a triple-loop product") {
    SeededRng rng(11);
    const Tensor a = random_tensor({5, 7}, rng);
    const Tensor b = random_tensor({7, 3}, rng);
    CHECK(max_abs_diff(matmul(a, b), triple_loop(a, b)) <= 1e-12);
  }

  TEST_CASE("matmul shape error names both shapes") {
    Tape tape;
    try {
      matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{4, 5})));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x5]") != std::string::npos);
    }
  }

  TEST_CASE("elementwise examples") {
    Tape tape;
    Var a = tape.constant(Tensor::vector({1, 2, 3}));
    CHECK(mul(a, tape.constant(Tensor::vector({0, 0, 0}))).value() == Tensor::vector({0, 0, 0}));
    CHECK(relu(tape.constant(Tensor::vector({-1, 0, 2}))).value() == Tensor::vector({0, 0, 2}));
    CHECK(softplus(tape.constant(Tensor::scalar(0.0))).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(add(a, tape.constant(Tensor::scalar(1.0))).value() == Tensor::vector({2, 3, 4}));
    CHECK(scale(a, 2.0).value() == Tensor::vector({2, 4, 6}));
    CHECK_THROWS_AS(add(a, tape.constant(Tensor::vector({1, 2}))), DimensionError);
    CHECK_THROWS_AS(advlat::log(tape.constant(Tensor::vector({1, 0}))), DomainError);
    CHECK_THROWS_AS(elementwise(Elementwise::add, a), std::invalid_argument);
  }

  TEST_CASE("softplus stays finite for large inputs") {
    Tape tape;
    Var y = softplus(tape.constant(Tensor::vector({-800, 800})));
    CHECK(y.value().all_finite());
    CHECK(y.value()[1] == doctest::Approx(800.0));
  }

  TEST_CASE("reduce examples") {
    Tape tape;
    CHECK(sum(tape.constant(Tensor::vector({1, 2, 3}))).value().item() == 6.0);
    CHECK(mean(tape.constant(Tensor(Shape{3, 4}, 2.5))).value().item() == 2.5);
    MaxResult mx = reduce_max(tape.constant(Tensor::vector({2, 5, 1})));
    CHECK(mx.value.value().item() == 5.0);
    CHECK(mx.argmax == std::vector<std::size_t>{1});
    CHECK_THROWS_AS(reduce(Reduce::sum, tape.constant(Tensor(Shape{2, 2})), 2), DimensionError);

    Var m = tape.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    CHECK(reduce(Reduce::sum, m, 0).value() == Tensor::vector({5, 7, 9}));
    CHECK(reduce(Reduce::mean, m, 1).value() == Tensor::vector({2, 5}));
    MaxResult rows = reduce_max(m, 1);
    CHECK(rows.value.value() == Tensor::vector({3, 6}));
    CHECK(rows.argmax == std::vector<std::size_t>{2, 5});
  }

  TEST_CASE("softmax examples") {
    Tape tape;
    for (double tau : {0.01, 1.0, 100.0}) {
      Var s = softmax(tape.constant(Tensor::vector({0, 0})), 0, tau);
      CHECK(s.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
    }
    Var s = softmax(tape.constant(Tensor::vector({std::log(2.0), 0})), 0, 1.0);
    CHECK(s.value()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(s.value()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    Var cold = softmax(tape.constant(Tensor::vector({1, 0})), 0, 0.01);
    CHECK(cold.value()[0] >= 1.0 - 1e-10);
    CHECK_THROWS_AS(softmax(tape.constant(Tensor::vector({1, 0})), 0, 0.0), DomainError);
    CHECK_THROWS_AS(softmax(tape.constant(Tensor::vector({1, 0})), 0, -1.0), DomainError);
  }

  TEST_CASE("softmax property: nonnegative and normalized for tau in [1e-3, 1e3]") {
    SeededRng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const double tau = std::pow(10.0, rng.uniform(-3.0, 3.0));
      const std::size_t rows = 1 + rng.uniform_index(4), cols = 2 + rng.uniform_index(20);
      Tape tape;
      Var s = softmax(tape.constant(random_tensor({rows, cols}, rng, -50, 50)), 1, tau);
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          CHECK(s.value().at(r, c) >= 0.0);
          total += s.value().at(r, c);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }

  TEST_CASE("l2 norm examples") {
    Tape tape;
    CHECK(l2_norm(tape.constant(Tensor::vector({3, 4}))).value().item() == 5.0);
    Var z = tape.leaf(Tensor::vector({0, 0, 0}));
    Var n = l2_norm(z);
    CHECK(n.value().item() == 0.0);
    Gradients g = tape.backward(n);
    CHECK(g.of(z) == Tensor::vector({0, 0, 0}));

    SeededRng rng(17);
    const Tensor x = random_tensor({9}, rng);
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    Tape t2;
    CHECK(std::abs(l2_norm(t2.constant(x)).value().item() - std::sqrt(s)) <= 1e-12);
  }

  TEST_CASE("angular distances") {
    Tape tape;
    Var q = tape.constant(Tensor::matrix({{1, 0}, {2, 0}, {1, 1}}));
    const Tensor keys = Tensor::matrix({{1, 0}, {0, 1}, {-1, 0}});
    const Tensor a = angular_distances(q, keys).value();
    CHECK(a.at(0, 0) == doctest::Approx(0.0));
    CHECK(a.at(0, 1) == doctest::Approx(std::numbers::pi / 2));
    CHECK(a.at(0, 2) == doctest::Approx(std::numbers::pi));
    CHECK(a.at(1, 1) == doctest::Approx(std::numbers::pi / 2));
    CHECK(a.at(2, 0) == doctest::Approx(std::numbers::pi / 4));
    CHECK_THROWS_AS(angular_distances(tape.constant(Tensor::matrix({{0, 0}})), keys), DomainError);
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("backward examples") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    Gradients g = tape.backward(x);
    CHECK(g[x].item() == 1.0);

    Tape t2;
    Var v = t2.leaf(Tensor::vector({1, 2}));
    Gradients g2 = t2.backward(sum(mul(v, v)));
    CHECK(g2[v] == Tensor::vector({2, 4}));
  }

  TEST_CASE("loss node gradient is exactly one") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0.3, -0.7}));
    Var loss = sum(advlat::tanh(x));
    Gradients g = tape.backward(loss);
    CHECK(g[loss].item() == 1.0);
  }

  TEST_CASE("backward errors") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(x), DimensionError);
    Tape other;
    Var y = other.leaf(Tensor::scalar(1.0));
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    CHECK_THROWS_AS(tape.backward(Var{}), std::invalid_argument);
  }

  TEST_CASE("parents precede children") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({1, 2}));
    Var b = mul(a, a);
    Var c = add(b, a);
    sum(c);
    for (std::size_t id = 0; id < tape.size(); ++id)
      for (std::size_t p : tape.parents(id)) CHECK(p < id);
  }

  TEST_CASE("constants receive no gradient") {
    Tape tape;
    Var c = tape.constant(Tensor::vector({1, 2}));
    Var x = tape.leaf(Tensor::vector({3, 4}));
    Gradients g = tape.backward(sum(mul(c, x)));
    CHECK_FALSE(g.has(c));
    CHECK(g[x] == Tensor::vector({1, 2}));
  }

  TEST_CASE("forward evaluation is purely functional") {
    SeededRng rng(8);
    const Tensor x = random_tensor({4, 5}, rng);
    const Tensor w = random_tensor({5, 3}, rng);
    auto run = [&] {
      Tape tape;
      Var h = softplus(matmul(tape.constant(x), tape.constant(w)));
      return softmax(h, 1, 0.7).value();
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("quadratic matches analytic gradient") {
    GradCheckReport r = finite_diff_check([](Tape&, const Var& x) { return sum(mul(x, x)); }, Tensor::vector({1, 2, 3}));
    CHECK(r.passed);
    CHECK(r.max_relative_error < 1e-6);
    CHECK(r.analytic == Tensor::vector({2, 4, 6}));
  }

  TEST_CASE("softplus of matmul passes") {
    SeededRng rng(21);
    const Tensor w = random_tensor({4, 3}, rng);
    GradCheckReport r = finite_diff_check(
        [&w](Tape& t, const Var& x) { return weighted_sum(softplus(matmul(x, t.constant(w)))); },
        random_tensor({2, 4}, rng));
    CHECK(r.passed);
  }

  TEST_CASE("a corrupted gradient rule is reported, not thrown") {
    auto broken_square = [](Tape& t, const Var& x) {
      Tensor y = x.value();
      for (auto& v : y.data()) v = v * v;
      const std::size_t ix = x.id();
      Var out = t.record(std::move(y), {x}, [&t, ix](const Tensor& g, GradSink& sink) {
        Tensor& d = sink.slot(ix);
        for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * 3.0 * t.value(ix)[i];  // should be 2x
      });
      return sum(out);
    };
    GradCheckReport r = finite_diff_check(broken_square, Tensor::vector({1, 2, 3}));
    CHECK_FALSE(r.passed);
    CHECK(r.max_relative_error > 0.1);
  }

  TEST_CASE("every differentiable op agrees with finite differences on 20 random inputs") {
    SeededRng rng(2024);
    for (const auto& c : advlat::testing::op_grad_cases(rng)) {
      const auto r = advlat::testing::run_grad_case(c, rng);
      INFO(c.name << " worst relative error " << r.worst);
      CHECK(r.passed == 20);
    }
  }
}

TEST_SUITE("rng") {
  TEST_CASE("standard normal moments over 1e6 draws") {
    SeededRng rng(42);
    const Tensor t = sample_standard_normal({1000000}, rng);
    double m = 0.0;
    for (double v : t.data()) m += v;
    m /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.data()) var += (v - m) * (v - m);
    var /= static_cast<double>(t.numel() - 1);
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.01);
  }

  TEST_CASE("same seed gives bit-identical draws; different seeds differ") {
    SeededRng a(7), b(7), c(8);
    const Tensor ta = sample_standard_normal({64}, a);
    CHECK(ta == sample_standard_normal({64}, b));
    CHECK_FALSE(ta == sample_standard_normal({64}, c));
  }

  TEST_CASE("per-example streams are reproducible and distinct") {
    SeededRng s1 = SeededRng::stream(3, 10), s2 = SeededRng::stream(3, 10), s3 = SeededRng::stream(3, 11);
    const auto v1 = s1.next_u64();
    CHECK(v1 == s2.next_u64());
    CHECK(v1 != s3.next_u64());
  }

  TEST_CASE("uniform_index stays in range") {
    SeededRng rng(1);
    for (int i = 0; i < 10000; ++i) CHECK(rng.uniform_index(7) < 7);
  }
}
