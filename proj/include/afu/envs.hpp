#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "afu/nn.hpp"

namespace afu::envs {

struct EnvSpec {
  int state_dim = 1;
  int action_dim = 1;
  int max_episode_steps = 1;
  std::string name;
};

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool terminal = false;   // environment says the episode is over; no bootstrap
  bool truncated = false;  // time limit reached; bootstrap still applies
};

/// reset(rng) -> state; step(action) -> (next state, reward, flags).
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Vector reset(Rng& rng) = 0;
  virtual StepResult step(const Vector& action) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

// Single state, one-step episodes. Peak reward 5 at a = 0.1; a cliff to 0 left of -0.6.
double sfm_reward(double action);

struct PointReachStep {
  double next_x;
  double reward;
};
double point_reach_next(double x, double action);
PointReachStep point_reach_step(double x, double action);

inline constexpr double kPointReachStepSize = 0.1;
inline constexpr int kPointReachHorizon = 20;

double toy_oracle(double s, double a);
/// max over a in [-1, 1] of toy_oracle(s, a).
double toy_max(double s);

class SfmEnv final : public Env {
 public:
  SfmEnv();
  const EnvSpec& spec() const override { return spec_; }
  Vector reset(Rng& rng) override;
  StepResult step(const Vector& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<SfmEnv>(*this); }

  long clamped_actions() const { return clamped_; }

 private:
  EnvSpec spec_;
  long clamped_ = 0;
};

class PointReachEnv final : public Env {
 public:
  PointReachEnv();
  const EnvSpec& spec() const override { return spec_; }
  Vector reset(Rng& rng) override;
  StepResult step(const Vector& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<PointReachEnv>(*this); }

  /// Starts an episode at a given position instead of a random one.
  Vector reset_to(double x);
  double position() const { return x_; }

 private:
  EnvSpec spec_;
  double x_ = 0.0;
  int t_ = 0;
};

/// One-step episodes with reward toy_oracle(s, a) for s drawn uniformly in [-1, 1].
class ToyOracleEnv final : public Env {
 public:
  ToyOracleEnv();
  const EnvSpec& spec() const override { return spec_; }
  Vector reset(Rng& rng) override;
  StepResult step(const Vector& action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<ToyOracleEnv>(*this); }

 private:
  EnvSpec spec_;
  double s_ = 0.0;
};

/// "sfm", "point_reach" or "toy"; throws ConfigError otherwise.
std::unique_ptr<Env> make_env(std::string_view name);

}  // namespace afu::envs
