#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "afu/nn.hpp"

namespace afu::maxq {

/// 1 iff v + adv < target. Equality counts as 0.
int indicator(double v, double adv, double target);

/// (x + y)^2 when x >= 0, x^2 + y^2 otherwise.
double z_loss(double x, double y);

struct ZGrad {
  double dx;
  double dy;
};
ZGrad z_loss_grad(double x, double y);

/**
 * Forward value and V-gradient multiplier of the conditionally scaled value.
 *
 * The scaled value is (1 - rho*I) V + rho*I stop_grad(V): numerically always
 * V, but only a (1 - rho) share of the gradient reaches V's parameters when
 * V + A undershoots the target.
 */
struct Upsilon {
  double value;
  double v_grad_scale;
};
Upsilon upsilon(double v, double adv, double target, double rho);

/// Value net V(s) and advantage net A(s, a) trained jointly to solve max_a Q(s, a).
struct MaxQPair {
  nn::Mlp value;      // state -> scalar
  nn::Mlp advantage;  // state ++ action -> scalar, unconstrained sign
  double rho = 0.3;

  static MaxQPair make(int state_dim, int action_dim, const std::vector<int>& hidden, double rho,
                       Rng& rng, const std::string& suffix = "");
  void validate() const;
};

Upsilon upsilon_forward_and_grad_scale(const Vector& state, const Vector& action, double target,
                                       const MaxQPair& pair);

/// Rows [states; actions], one sample per column.
Matrix concat_state_action(const Matrix& states, const Matrix& actions);

struct VaLoss {
  double loss = 0.0;
  nn::MlpGrads value_grads;
  nn::MlpGrads advantage_grads;
  Eigen::Index num_scaled = 0;  // samples whose indicator fired
};

/**
 * Batch mean of z_loss(Upsilon - target, A(s, a)) and its gradients.
 *
 * Targets are arbitrary reals: Q(s, a) for the standalone max-Q problem, or
 * the bootstrap targets r + gamma * min V_target(s') inside the agent.
 */
VaLoss lambda_va_loss(const Matrix& states, const Matrix& actions, const Vector& targets,
                      const MaxQPair& pair);

struct ExpectileLoss {
  double loss = 0.0;
  nn::MlpGrads grads;
};

/// Batch mean of |tau - 1(u < 0)| u^2 with u = target - V(s).
ExpectileLoss expectile_loss(const Matrix& states, const Vector& targets, const nn::Mlp& value_net,
                             double tau_e);

enum class ToyMethod { kAfu, kExpectile };
ToyMethod parse_toy_method(std::string_view name);
std::string_view to_string(ToyMethod method);

struct ToyOptions {
  ToyMethod method = ToyMethod::kAfu;
  double hyper = 0.3;  // rho for afu, tau_e for expectile
  int steps = 3000;
  int batch = 256;
  std::uint64_t seed = 0;
  std::vector<int> hidden = nn::kDefaultHidden;
  double learning_rate = 3e-4;
  int grid_points = 201;
};

struct ToyResult {
  std::vector<double> states;
  std::vector<double> estimates;
  std::vector<double> true_max;
  std::vector<double> residuals;  // estimate - true max
  double mean_residual = 0.0;
  double mean_abs_residual = 0.0;
  double max_abs_residual = 0.0;
  nn::Mlp value;
  std::optional<nn::Mlp> advantage;
};

/// Fits V (and A for afu) to max_a sin(4s) + 0.7 cos(4a) from uniform (s, a) batches.
ToyResult run_toy_benchmark(const ToyOptions& options);

}  // namespace afu::maxq
