#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "advlat/checkpoint.hpp"
#include "advlat/nn.hpp"
#include "../common/grad_cases.hpp"
#include "test_support.hpp"

using namespace advlat;
using advlat::testing::max_abs_diff;
using advlat::testing::random_tensor;
using advlat::testing::weighted_sum;

namespace {

// Direct six-loop cross-correlation.
Tensor conv_oracle(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t pad) {
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  const std::size_t oc = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{oc, oh, ow}, 0.0);
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = bias[o];
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += kernel[((o * c + ci) * kh + ky) * kw + kx] * input[(ci * h + iy) * w + ix];
            }
        out[(o * oh + y) * ow + x] = s;
      }
  return out;
}

Tensor normalize_oracle(const Tensor& a) {
  const std::size_t n = a.extent(0);
  std::vector<double> deg(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += a.at(i, j);
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.at(i, j) = (a.at(i, j) + (i == j ? 1.0 : 0.0)) / std::sqrt(deg[i] * deg[j]);
  return out;
}

void zero(Parameter& p) {
  for (auto& v : p.value.data()) v = 0.0;
}

// Checks the gradient of `loss(bind)` wrt one parameter by finite differences.
GradCheckReport check_param(Parameter& p, const std::function<Var(Binding&)>& loss) {
  return finite_diff_check(
      [&](Tape& tape, const Var& x) {
        Binding bind(tape, false);
        bind.substitute(p, x);
        return loss(bind);
      },
      p.value);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("glorot bound and range") {
    CHECK(glorot_bound(4, 2) == 1.0);
    SeededRng rng(1);
    const Tensor w = glorot_init(4, 2, rng, {100000});
    double m = 0.0;
    for (double v : w.data()) {
      CHECK(std::abs(v) <= 1.0);
      m += v;
    }
    CHECK(std::abs(m / 1e5) < 0.01);
  }

  TEST_CASE("gcn_normalize examples") {
    CHECK(max_abs_diff(gcn_normalize(Tensor::matrix({{0, 1}, {1, 0}})), Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}})) < 1e-15);
    const Tensor iso = gcn_normalize(Tensor::matrix({{0, 0}, {0, 0}}));
    CHECK(iso == Tensor::matrix({{1, 0}, {0, 1}}));
    const Tensor path = Tensor::matrix({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}});
    CHECK(max_abs_diff(gcn_normalize(path), normalize_oracle(path)) <= 1e-12);
    CHECK_THROWS_AS(gcn_normalize(Tensor::matrix({{0, 1}, {0, 0}})), std::invalid_argument);
    CHECK_THROWS_AS(gcn_normalize(Tensor(Shape{2, 3})), DimensionError);
  }

  TEST_CASE("gcn_normalize property: symmetric and nonnegative") {
    SeededRng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 3 + rng.uniform_index(10);
      Tensor a(Shape{n, n}, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (rng.uniform() < 0.3) a.at(i, j) = a.at(j, i) = 1.0;
      const Tensor h = gcn_normalize(a);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(h.at(i, j) >= 0.0);
          CHECK(std::abs(h.at(i, j) - h.at(j, i)) < 1e-12);
        }
      CHECK(max_abs_diff(h, normalize_oracle(a)) <= 1e-12);
    }
  }

  TEST_CASE("gcn forward examples") {
    SeededRng rng(9);
    GraphConvLayer layer = GraphConvLayer::create("g", 3, 3, rng);
    layer.weight.value = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const Tensor x = random_tensor({4, 3}, rng);
    Tape tape;
    Binding bind(tape, false);
    Tensor eye(Shape{4, 4}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    CHECK(layer.forward(bind, tape.constant(eye), tape.constant(x)).value() == x);

    GraphConvLayer one = GraphConvLayer::create("s", 1, 1, rng);
    one.weight.value = Tensor::matrix({{2.5}});
    Tape t2;
    Binding b2(t2, false);
    CHECK(one.forward(b2, t2.constant(Tensor::matrix({{1}})), t2.constant(Tensor::matrix({{3}}))).value().item() == 7.5);

    GraphConvLayer g = GraphConvLayer::create("r", 3, 2, rng);
    const Tensor a = random_tensor({4, 4}, rng);
    Tape t3;
    Binding b3(t3, false);
    const Tensor got = g.forward(b3, t3.constant(a), t3.constant(x)).value();
    CHECK(max_abs_diff(got, matmul(matmul(a, x), g.weight.value)) <= 1e-12);
  }

  TEST_CASE("lstm examples") {
    SeededRng rng(2);
    LstmCell cell = LstmCell::create("l", 3, 4, rng);
    std::vector<Parameter*> ps;
    cell.collect(ps);
    for (auto* p : ps) zero(*p);
    Tape tape;
    Binding bind(tape, false);
    std::vector<Var> seq(3, tape.constant(Tensor(Shape{1, 3}, 0.0)));
    LstmOutput out = lstm_forward(cell, bind, seq);
    for (const auto& h : out.hidden_states)
      for (double v : h.value().data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(lstm_forward(cell, bind, {}), std::invalid_argument);

    LstmCell c2 = LstmCell::create("m", 3, 4, rng);
    Tape t2;
    Binding b2(t2, false);
    Var x = t2.constant(random_tensor({2, 3}, rng));
    LstmOutput one = lstm_forward(c2, b2, {x});
    LstmState zero_state{t2.constant(Tensor(Shape{2, 4}, 0.0)), t2.constant(Tensor(Shape{2, 4}, 0.0))};
    CHECK(one.final_hidden.value() == c2.step(b2, zero_state, x).hidden.value());
  }

  TEST_CASE("lstm gradient through five steps") {
    SeededRng rng(12);
    LstmCell cell = LstmCell::create("l", 3, 4, rng);
    std::vector<Tensor> xs;
    for (int s = 0; s < 5; ++s) xs.push_back(random_tensor({2, 3}, rng));
    // wrt the input sequence (stacked)
    GradCheckReport r = finite_diff_check(
        [&](Tape& tape, const Var& stacked) {
          Binding bind(tape, false);
          std::vector<Var> seq;
          for (std::size_t s = 0; s < 5; ++s) seq.push_back(slice_cols(stacked, s * 3, s * 3 + 3));
          return weighted_sum(lstm_forward(cell, bind, seq).final_hidden);
        },
        random_tensor({2, 15}, rng));
    CHECK(r.passed);
    // wrt every gate parameter
    std::vector<Parameter*> ps;
    cell.collect(ps);
    for (Parameter* p : ps) {
      GradCheckReport rp = check_param(*p, [&](Binding& bind) {
        std::vector<Var> seq;
        for (const auto& x : xs) seq.push_back(bind.tape().constant(x));
        return weighted_sum(lstm_forward(cell, bind, seq).final_hidden);
      });
      INFO(p->name);
      CHECK(rp.passed);
    }
  }

  TEST_CASE("conv2d examples") {
    SeededRng rng(3);
    Conv2dLayer id = Conv2dLayer::create("c", 1, 1, 1, 1, 0, rng);
    id.kernel.value = Tensor(Shape{1, 1, 1, 1}, 1.0);
    zero(id.bias);
    const Tensor x = random_tensor({1, 4, 5}, rng);
    Tape tape;
    Binding bind(tape, false);
    CHECK(id.forward(bind, tape.constant(x)).value() == x);

    Conv2dLayer ones = Conv2dLayer::create("o", 1, 1, 3, 1, 0, rng);
    ones.kernel.value = Tensor(Shape{1, 1, 3, 3}, 1.0);
    zero(ones.bias);
    CHECK(ones.forward(bind, tape.constant(Tensor(Shape{1, 3, 3}, 1.0))).value().item() == 9.0);

    Conv2dLayer big = Conv2dLayer::create("b", 1, 1, 5, 1, 0, rng);
    CHECK_THROWS_AS(big.forward(bind, tape.constant(Tensor(Shape{1, 3, 3}, 1.0))), DimensionError);
  }

  TEST_CASE("conv2d matches the direct-loop oracle on 50 random shapes") {
    SeededRng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t ic = 1 + rng.uniform_index(3), oc = 1 + rng.uniform_index(3);
      const std::size_t k = 1 + rng.uniform_index(3), stride = 1 + rng.uniform_index(2), pad = rng.uniform_index(2);
      const std::size_t h = k + rng.uniform_index(5), w = k + rng.uniform_index(5);
      Conv2dLayer layer = Conv2dLayer::create("c", ic, oc, k, stride, pad, rng);
      layer.bias.value = random_tensor({oc}, rng);
      const Tensor x = random_tensor({ic, h, w}, rng);
      Tape tape;
      Binding bind(tape, false);
      const Tensor got = layer.forward(bind, tape.constant(x)).value();
      const Tensor want = conv_oracle(x, layer.kernel.value, layer.bias.value, stride, pad);
      REQUIRE(got.shape() == want.shape());
      CHECK(max_abs_diff(got, want) <= 1e-10);
    }
  }

  TEST_CASE("layer parameter gradients pass finite differences") {
    SeededRng rng(77);
    LinearLayer lin = LinearLayer::create("lin", 4, 3, rng);
    const Tensor x = random_tensor({5, 4}, rng);
    for (Parameter* p : {&lin.weight, &lin.bias}) {
      CHECK(check_param(*p, [&](Binding& b) { return weighted_sum(lin.forward(b, b.tape().constant(x))); }).passed);
    }
    GraphConvLayer g = GraphConvLayer::create("g", 4, 2, rng);
    const Tensor a = gcn_normalize(Tensor::matrix({{0, 1, 0, 0, 1}, {1, 0, 1, 0, 0}, {0, 1, 0, 1, 0}, {0, 0, 1, 0, 1}, {1, 0, 0, 1, 0}}));
    CHECK(check_param(g.weight, [&](Binding& b) {
            return weighted_sum(g.forward(b, b.tape().constant(a), b.tape().constant(x)));
          }).passed);
    Conv2dLayer conv = Conv2dLayer::create("c", 2, 3, 3, 1, 1, rng);
    const Tensor img = random_tensor({2, 4, 4}, rng);
    for (Parameter* p : {&conv.kernel, &conv.bias}) {
      CHECK(check_param(*p, [&](Binding& b) { return weighted_sum(conv.forward(b, b.tape().constant(img))); }).passed);
    }
  }

  TEST_CASE("cross entropy") {
    Tape tape;
    CHECK(cross_entropy(tape.constant(Tensor::matrix({{0.3, 0.3}})), {0}).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(cross_entropy(tape.constant(Tensor::matrix({{800, 0}})), {0}).value().item() < 1e-12);
    CHECK_THROWS_AS(cross_entropy(tape.constant(Tensor::matrix({{1, 2}})), {2}), std::out_of_range);

    SeededRng rng(5);
    const Tensor z = random_tensor({6, 4}, rng, -5, 5);
    std::vector<std::size_t> y = {0, 1, 2, 3, 1, 2};
    double oracle = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      double m = -1e300;
      for (std::size_t c = 0; c < 4; ++c) m = std::max(m, z.at(i, c));
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += std::exp(z.at(i, c) - m);
      oracle += m + std::log(s) - z.at(i, y[i]);
    }
    CHECK(std::abs(cross_entropy(tape.constant(z), y).value().item() - oracle / 6.0) <= 1e-12);
    CHECK(finite_diff_check([&](Tape&, const Var& v) { return cross_entropy(v, y); }, z).passed);
  }

  TEST_CASE("argmax ties go to the lowest index") {
    CHECK(argmax_rows(Tensor::matrix({{1, 3, 3}, {2, 2, 2}})) == std::vector<std::size_t>{1, 0});
  }

  TEST_CASE("adam") {
    Parameter w{"w", Tensor::vector({1.0, -2.0})};
    std::vector<Parameter*> ps = {&w};
    Adam opt(AdamConfig{0.1});
    opt.step(ps, std::vector<Tensor>{Tensor::vector({0, 0})});
    CHECK(w.value == Tensor::vector({1.0, -2.0}));

    Adam first(AdamConfig{0.01});
    first.step(ps, std::vector<Tensor>{Tensor::vector({0.3, -5.0})});
    CHECK(w.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(w.value[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
    CHECK(first.steps() == 1);
    CHECK_THROWS_AS(first.step(ps, std::vector<Tensor>{Tensor::vector({1, 2, 3})}), DimensionError);

    Parameter s{"s", Tensor::scalar(0.0)};
    std::vector<Parameter*> sp = {&s};
    Adam run(AdamConfig{0.1});
    for (int i = 0; i < 200; ++i) run.step(sp, std::vector<Tensor>{Tensor::scalar(2.0 * (s.value.item() - 3.0))});
    CHECK(std::abs(s.value.item() - 3.0) < 0.1);
  }

  TEST_CASE("checkpoint round trip and errors") {
    const auto dir = std::filesystem::temp_directory_path() / "advlat_nn_ckpt";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "b.json").string();
    SeededRng rng(6);
    Bundle b;
    b.kind = "test";
    b.meta = {{"k", 3}};
    b.tensors.push_back({"a", sample_standard_normal({3, 2}, rng)});
    b.tensors.push_back({"b", sample_standard_normal({5}, rng)});
    save_bundle(path, b);
    Bundle back = load_bundle(path, "test");
    CHECK(back.get("a") == b.tensors[0].value);
    CHECK(back.get("b") == b.tensors[1].value);
    CHECK(back.meta["k"] == 3);
    CHECK_THROWS_AS(load_bundle(path, "other"), FormatError);

    // truncated sidecar
    std::filesystem::resize_file(sidecar_path(path), 8 * 4);
    CHECK_THROWS_WITH_AS(load_bundle(path, "test"), doctest::Contains("length mismatch"), FormatError);

    // version mismatch names both versions
    save_bundle(path, b);
    nlohmann::json j;
    {
      std::ifstream in(path);
      in >> j;
    }
    j["v"] = 7;
    {
      std::ofstream out(path);
      out << j.dump();
    }
    try {
      load_bundle(path, "test");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('7') != std::string::npos);
      CHECK(msg.find('1') != std::string::npos);
    }
    CHECK_THROWS_AS(load_bundle((dir / "missing.json").string(), "test"), IoError);
  }
}

TEST_SUITE("nn") {
  TEST_CASE("layers, losses and the soft mixture agree with finite differences on 20 random inputs") {
    SeededRng rng(2025);
    for (const auto& c : advlat::testing::model_grad_cases(rng)) {
      const auto r = advlat::testing::run_grad_case(c, rng);
      INFO(c.name << " worst relative error " << r.worst);
      CHECK(r.passed == 20);
    }
  }
}
