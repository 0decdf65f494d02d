#include "afu/envs.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "afu/error.hpp"

namespace afu::envs {

double sfm_reward(double action) {
  if (action >= -0.6) {
    const double d = action - 0.1;
    return 5.0 - 100.0 * d * d;
  }
  return 0.0;
}

double point_reach_next(double x, double action) {
  return std::clamp(x + kPointReachStepSize * action, -1.0, 1.0);
}

PointReachStep point_reach_step(double x, double action) {
  const double next = point_reach_next(x, std::clamp(action, -1.0, 1.0));
  return {next, -next * next};
}

double toy_oracle(double s, double a) { return std::sin(4.0 * s) + 0.7 * std::cos(4.0 * a); }

double toy_max(double s) { return std::sin(4.0 * s) + 0.7; }

SfmEnv::SfmEnv() : spec_{1, 1, 1, "sfm"} {}

Vector SfmEnv::reset(Rng& /*rng*/) { return Vector::Zero(1); }

StepResult SfmEnv::step(const Vector& action) {
  if (action.size() != 1) throw ContractError("SfmEnv::step: action must be 1-D");
  double a = action(0);
  if (a < -1.0 || a > 1.0) {
    if (clamped_++ == 0) std::clog << "warning: sfm action " << a << " clamped to [-1, 1]\n";
    a = std::clamp(a, -1.0, 1.0);
  }
  return {Vector::Zero(1), sfm_reward(a), true, false};
}

PointReachEnv::PointReachEnv() : spec_{1, 1, kPointReachHorizon, "point_reach"} {}

Vector PointReachEnv::reset(Rng& rng) {
  std::uniform_real_distribution<double> start(-1.0, 1.0);
  return reset_to(start(rng));
}

Vector PointReachEnv::reset_to(double x) {
  x_ = std::clamp(x, -1.0, 1.0);
  t_ = 0;
  return Vector::Constant(1, x_);
}

StepResult PointReachEnv::step(const Vector& action) {
  if (action.size() != 1) throw ContractError("PointReachEnv::step: action must be 1-D");
  const auto r = point_reach_step(x_, action(0));
  x_ = r.next_x;
  ++t_;
  return {Vector::Constant(1, x_), r.reward, false, t_ >= spec_.max_episode_steps};
}

ToyOracleEnv::ToyOracleEnv() : spec_{1, 1, 1, "toy"} {}

Vector ToyOracleEnv::reset(Rng& rng) {
  std::uniform_real_distribution<double> start(-1.0, 1.0);
  s_ = start(rng);
  return Vector::Constant(1, s_);
}

StepResult ToyOracleEnv::step(const Vector& action) {
  if (action.size() != 1) throw ContractError("ToyOracleEnv::step: action must be 1-D");
  return {Vector::Constant(1, s_), toy_oracle(s_, std::clamp(action(0), -1.0, 1.0)), true, false};
}

std::unique_ptr<Env> make_env(std::string_view name) {
  if (name == "sfm") return std::make_unique<SfmEnv>();
  if (name == "point_reach") return std::make_unique<PointReachEnv>();
  if (name == "toy") return std::make_unique<ToyOracleEnv>();
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

}  // namespace afu::envs
