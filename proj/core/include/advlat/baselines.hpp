#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlat/generator.hpp"

namespace advlat {

/// l2-budgeted projected gradient ascent on cross-entropy.
struct PgdConfig {
  double epsilon = 2.0;  // l2 radius of the perturbation ball
  double step = 0.125;   // per-iteration step length
  std::size_t steps = 40;
  bool random_start = false;
  std::uint64_t seed = 0;  // random start only

  void validate() const;
  nlohmann::json to_json() const;
  static PgdConfig from_json(const nlohmann::json& j);
};

enum class BaselineMethod { fgsm, pgd };
std::string to_string(BaselineMethod m);
BaselineMethod baseline_method_from_string(const std::string& s);

using Range = std::optional<std::pair<double, double>>;

/// Gradient of the per-example cross-entropy wrt dense inputs [B x D].
Tensor cross_entropy_input_gradient(const TargetModel& target, const Tensor& x, const std::vector<std::size_t>& labels);

/// x + eps * sign(grad), clamped; sign(0) = 0.
Tensor sign_step(const Tensor& x, const Tensor& grad, double epsilon, const Range& range = std::nullopt);

/// sign_step along the cross-entropy input gradient.
Tensor fgsm(const TargetModel& target, const Tensor& x, const std::vector<std::size_t>& labels, double epsilon,
            const Range& range = std::nullopt);

/// Scales each row of `delta` back onto the l2 ball of radius eps when outside it.
Tensor project_l2_ball(Tensor delta, double epsilon);

/// Normalized-gradient steps, each followed by projection onto the ball and the range.
Tensor pgd_l2(const TargetModel& target, const Tensor& x, const std::vector<std::size_t>& labels,
              const PgdConfig& config, const Range& range = std::nullopt);

/// Runs a baseline over dense examples of `problem` and scores the results.
std::vector<AdversarialRecord> run_baseline(BaselineMethod method, const AttackProblem& problem,
                                            const std::vector<std::size_t>& ids, const PgdConfig& config);

}  // namespace advlat
