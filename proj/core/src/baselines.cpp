#include "advlat/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "advlat/ops.hpp"

namespace advlat {

using nlohmann::json;

void PgdConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("pgd epsilon must be > 0");
  if (!(step > 0.0)) throw std::invalid_argument("pgd step size must be > 0");
  if (steps == 0) throw std::invalid_argument("pgd needs at least one iteration");
}

json PgdConfig::to_json() const {
  return {{"epsilon", epsilon}, {"step", step}, {"steps", steps}, {"random_start", random_start}, {"seed", seed}};
}

PgdConfig PgdConfig::from_json(const json& j) {
  PgdConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.step = j.value("step", c.step);
  c.steps = j.value("steps", c.steps);
  c.random_start = j.value("random_start", c.random_start);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string to_string(BaselineMethod m) { return m == BaselineMethod::fgsm ? "fgsm" : "pgd"; }

BaselineMethod baseline_method_from_string(const std::string& s) {
  if (s == "fgsm") return BaselineMethod::fgsm;
  if (s == "pgd") return BaselineMethod::pgd;
  throw std::invalid_argument("unknown baseline '" + s + "' (expected fgsm or pgd)");
}

Tensor cross_entropy_input_gradient(const TargetModel& target, const Tensor& x, const std::vector<std::size_t>& labels) {
  Tape tape;
  Binding bind(tape, false);
  const Var in = tape.leaf(x);
  // cross_entropy averages over the batch; rescale so each row sees its own loss
  const Var loss = scale(cross_entropy(target.scores_dense(bind, in), labels), static_cast<double>(x.extent(0)));
  return tape.backward(loss)[in];
}

namespace {

Tensor apply_range(Tensor x, const Range& range) {
  return range ? clamp_to_range(std::move(x), range->first, range->second) : x;
}

Tensor plus(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
  return a;
}

Tensor minus(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] -= b[i];
  return a;
}

double row_norm(const Tensor& t, std::size_t r) {
  const std::size_t d = t.extent(1);
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += t.at(r, c) * t.at(r, c);
  return std::sqrt(s);
}

}  // namespace

Tensor sign_step(const Tensor& x, const Tensor& grad, double epsilon, const Range& range) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("fgsm epsilon must be >= 0");
  if (x.shape() != grad.shape()) throw DimensionError("sign_step: gradient shape differs from input");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += epsilon * static_cast<double>((grad[i] > 0.0) - (grad[i] < 0.0));
  return apply_range(std::move(out), range);
}

Tensor fgsm(const TargetModel& target, const Tensor& x, const std::vector<std::size_t>& labels, double epsilon,
            const Range& range) {
  return sign_step(x, cross_entropy_input_gradient(target, x, labels), epsilon, range);
}

Tensor project_l2_ball(Tensor delta, double epsilon) {
  if (delta.rank() != 2) throw DimensionError("project_l2_ball expects [B x D]");
  const std::size_t d = delta.extent(1);
  for (std::size_t r = 0; r < delta.extent(0); ++r) {
    const double n = row_norm(delta, r);
    if (n <= epsilon) continue;
    for (std::size_t c = 0; c < d; ++c) delta.at(r, c) *= epsilon / n;
  }
  return delta;
}

Tensor pgd_l2(const TargetModel& target, const Tensor& x, const std::vector<std::size_t>& labels,
              const PgdConfig& config, const Range& range) {
  config.validate();
  const std::size_t b = x.extent(0), d = x.extent(1);
  Tensor delta(x.shape(), 0.0);
  if (config.random_start) {
    // uniform in the ball: gaussian direction, radius eps * u^(1/d)
    SeededRng rng(config.seed);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t c = 0; c < d; ++c) delta.at(r, c) = rng.normal();
      const double n = row_norm(delta, r);
      const double radius = config.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
      for (std::size_t c = 0; c < d; ++c) delta.at(r, c) *= n > 0.0 ? radius / n : 0.0;
    }
  }
  auto project = [&](Tensor dlt) {
    dlt = project_l2_ball(std::move(dlt), config.epsilon);
    // clamping toward an in-range x can only shrink each coordinate of delta
    if (range) dlt = minus(apply_range(plus(x, dlt), range), x);
    return dlt;
  };
  delta = project(std::move(delta));

  for (std::size_t k = 0; k < config.steps; ++k) {
    const Tensor g = cross_entropy_input_gradient(target, plus(x, delta), labels);
    for (std::size_t r = 0; r < b; ++r) {
      const double n = row_norm(g, r);
      if (n == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) delta.at(r, c) += config.step * g.at(r, c) / n;
    }
    delta = project(std::move(delta));
  }
  return plus(x, delta);
}

std::vector<AdversarialRecord> run_baseline(BaselineMethod method, const AttackProblem& problem,
                                            const std::vector<std::size_t>& ids, const PgdConfig& config) {
  const Dataset* data = problem.dataset();
  if (!data || (problem.domain() != Domain::vector && problem.domain() != Domain::image)) {
    throw std::invalid_argument("baselines attack vector and image inputs only");
  }
  config.validate();
  if (ids.empty()) return {};
  const Tensor x = stack_inputs(*data, ids);
  std::vector<std::size_t> labels;
  for (std::size_t id : ids) labels.push_back(problem.label_of(id));
  const Range& range = problem.adapter().range;
  const Tensor xp = method == BaselineMethod::fgsm ? fgsm(problem.target(), x, labels, config.epsilon, range)
                                                   : pgd_l2(problem.target(), x, labels, config, range);
  const std::vector<std::size_t> pred = predict(problem.target(), xp);

  const std::size_t d = x.extent(1);
  std::vector<AdversarialRecord> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    AdversarialRecord& r = out[i];
    r.example_id = ids[i];
    r.split = problem.split_of(ids[i]);
    r.label = labels[i];
    r.predicted = pred[i];
    r.success = pred[i] != labels[i];
    r.first_success = r.success ? std::optional<std::size_t>(0) : std::nullopt;
    r.original = Tensor(data->input_shape);
    r.perturbed = Tensor(data->input_shape);
    for (std::size_t c = 0; c < d; ++c) {
      r.original[c] = x.at(i, c);
      r.perturbed[c] = xp.at(i, c);
    }
    r.distance = similarity(problem.adapter().similarity, r.original, r.perturbed);
  }
  return out;
}

}  // namespace advlat
