#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "afu/actor.hpp"
#include "afu/critic.hpp"
#include "afu/envs.hpp"
#include "afu/error.hpp"
#include "afu/replay.hpp"

namespace afu::trainer {

enum class Variant { kAlpha, kBeta };
Variant parse_variant(std::string_view name);
std::string_view to_string(Variant v);

/// Every hyperparameter of a run. Defaults follow the published AFU table.
struct AfuConfig {
  Variant variant = Variant::kBeta;
  double rho = 0.3;
  double tau = 0.01;
  double gamma = 0.99;
  std::optional<double> target_entropy;  // unset: -action_dim
  double initial_temperature = 1.0;
  double lr_q = 3e-4;
  double lr_va = 3e-4;
  double lr_pi = 3e-4;
  double lr_temp = 3e-4;
  int batch_size = 256;
  std::size_t buffer_capacity = ReplayBuffer::kDefaultCapacity;
  long total_steps = 1'000'000;
  long warmup_steps = 10'000;
  long eval_interval = 10'000;
  int eval_rollouts = 10;
  std::uint64_t seed = 0;
  std::string env = "sfm";
  std::vector<int> hidden = nn::kDefaultHidden;
  // When false only the critic side trains; used to check critic independence.
  bool update_actor = true;

  void validate() const;
};

nlohmann::json to_json(const AfuConfig& config);
/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
AfuConfig config_from_json(const nlohmann::json& j, AfuConfig base = {});

/// Shorter runs and, where width is not decisive, smaller networks, so the small experiments fit on one core.
AfuConfig desk_config(std::string_view env, Variant variant, std::uint64_t seed);

struct EvalRecord {
  long step = 0;
  double mean_return = 0.0;
  double entropy = 0.0;
  double alpha = 1.0;
  // Means over the gradient steps since the previous record; unset when there were none.
  std::optional<double> loss_q;
  std::optional<double> loss_va;
  std::optional<double> loss_pi;
  std::optional<double> loss_temp;
  std::optional<double> loss_mu;
};

/// Thrown when a loss turns non-finite; carries the records produced so far.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::vector<EvalRecord> records)
      : NumericError(what), records_(std::move(records)) {}
  const std::vector<EvalRecord>& records() const { return records_; }

 private:
  std::vector<EvalRecord> records_;
};

/// All trainable state of one agent.
struct Agent {
  critic::CriticEnsemble critic;
  actor::PolicyNet policy;
  actor::Temperature temperature;
};

struct TrainHooks {
  /// Replaces the behaviour action (after warmup too) when set.
  std::function<Vector(long step, const Vector& state)> forced_action;
  /// Receives one tag per parameter update, in execution order.
  std::function<void(std::string_view)> trace;
  /// Called after every gradient step.
  std::function<void(const Agent&, long step)> after_gradient_step;
};

/**
 * Interleaves one environment step with one gradient step after a warmup of
 * uniformly random actions. Update order per gradient step: Q, then each
 * (V_i, A_i) followed by its target, then mu (beta), then the policy, then
 * the temperature.
 */
class Trainer {
 public:
  explicit Trainer(AfuConfig config, TrainHooks hooks = {});

  std::vector<EvalRecord> run();

  const Agent& agent() const { return agent_; }
  const AfuConfig& config() const { return config_; }
  const ReplayBuffer& replay() const { return replay_; }

  void gradient_step();

 private:
  struct LossSums {
    double q = 0, va = 0, pi = 0, temp = 0, mu = 0;
    long count = 0;
  };

  void env_step(long step);
  EvalRecord make_record(long step);
  void trace(std::string_view tag) const {
    if (hooks_.trace) hooks_.trace(tag);
  }

  AfuConfig config_;
  TrainHooks hooks_;
  std::unique_ptr<envs::Env> env_;
  std::unique_ptr<envs::Env> eval_env_;
  Agent agent_;
  ReplayBuffer replay_;

  nn::AdamState q_opt_;
  nn::AdamState value_opt_[2];
  nn::AdamState advantage_opt_[2];
  nn::AdamState policy_opt_;
  nn::AdamState mu_opt_;
  nn::AdamState temp_opt_;

  Rng env_rng_;
  Rng explore_rng_;
  Rng replay_rng_;
  Rng resample_rng_;
  Rng eval_rng_;

  Vector state_;
  LossSums sums_;
};

std::vector<EvalRecord> train(const AfuConfig& config, const TrainHooks& hooks = {});

/// Mean undiscounted return of noise-free rollouts (tanh of the Gaussian mean).
double evaluate(const actor::PolicyNet& policy, envs::Env& env, int n_rollouts, Rng& rng);

/// Trailing moving average; element i averages the last min(i+1, window) values.
std::vector<double> moving_average(const std::vector<double>& values, int window = 10);

/// Last value of the smoothed return curve.
double final_smoothed_return(const std::vector<EvalRecord>& records, int window = 10);

/// Mean entropy estimate over the trailing `fraction` of the records.
double tail_mean_entropy(const std::vector<EvalRecord>& records, double fraction = 0.25);

/// Columns: step, mean_return, entropy, alpha, loss_q, loss_va, loss_pi, loss_temp, loss_mu.
void write_records_csv(std::ostream& out, const std::vector<EvalRecord>& records);

}  // namespace afu::trainer
