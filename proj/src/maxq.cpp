#include "afu/maxq.hpp"

#include <cmath>

#include "afu/envs.hpp"
#include "afu/error.hpp"

namespace afu::maxq {

int indicator(double v, double adv, double target) { return (v + adv < target) ? 1 : 0; }

double z_loss(double x, double y) {
  if (x >= 0.0) return (x + y) * (x + y);
  return x * x + y * y;
}

ZGrad z_loss_grad(double x, double y) {
  if (x >= 0.0) return {2.0 * (x + y), 2.0 * (x + y)};
  return {2.0 * x, 2.0 * y};
}

Upsilon upsilon(double v, double adv, double target, double rho) {
  const int i = indicator(v, adv, target);
  // (1 - rho*i) * v + rho*i * v, with the second term gradient-blocked.
  const double value = (1.0 - rho * i) * v + rho * i * v;
  return {value, 1.0 - rho * i};
}

MaxQPair MaxQPair::make(int state_dim, int action_dim, const std::vector<int>& hidden, double rho,
                        Rng& rng, const std::string& suffix) {
  MaxQPair p{nn::Mlp::make("value" + suffix, state_dim, 1, hidden, rng),
             nn::Mlp::make("advantage" + suffix, state_dim + action_dim, 1, hidden, rng), rho};
  p.validate();
  return p;
}

void MaxQPair::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw ConfigError("rho must lie strictly in (0, 1), got " + std::to_string(rho));
  }
  if (value.output_dim() != 1 || advantage.output_dim() != 1) {
    throw ContractError("MaxQPair: value and advantage nets must be scalar-valued");
  }
  if (advantage.input_dim() <= value.input_dim()) {
    throw ContractError("MaxQPair: advantage net must take state ++ action");
  }
}

Upsilon upsilon_forward_and_grad_scale(const Vector& state, const Vector& action, double target,
                                       const MaxQPair& pair) {
  Vector sa(state.size() + action.size());
  sa << state, action;
  const double v = pair.value.forward(state)(0);
  const double adv = pair.advantage.forward(sa)(0);
  return upsilon(v, adv, target, pair.rho);
}

Matrix concat_state_action(const Matrix& states, const Matrix& actions) {
  if (states.cols() != actions.cols()) {
    throw ContractError("concat_state_action: batch sizes differ");
  }
  Matrix sa(states.rows() + actions.rows(), states.cols());
  sa << states, actions;
  return sa;
}

VaLoss lambda_va_loss(const Matrix& states, const Matrix& actions, const Vector& targets,
                      const MaxQPair& pair) {
  const Eigen::Index n = targets.size();
  if (n == 0) throw ContractError("lambda_va_loss: empty batch");
  if (states.cols() != n || actions.cols() != n) {
    throw ContractError("lambda_va_loss: batch size mismatch");
  }
  nn::ForwardCache v_cache;
  nn::ForwardCache a_cache;
  const Matrix v = pair.value.forward(states, &v_cache);
  const Matrix adv = pair.advantage.forward(concat_state_action(states, actions), &a_cache);

  VaLoss out{0.0, nn::MlpGrads(pair.value), nn::MlpGrads(pair.advantage), 0};
  Matrix dv(1, n);
  Matrix da(1, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Upsilon u = upsilon(v(0, i), adv(0, i), targets(i), pair.rho);
    const double x = u.value - targets(i);
    out.loss += z_loss(x, adv(0, i));
    const ZGrad g = z_loss_grad(x, adv(0, i));
    dv(0, i) = g.dx * u.v_grad_scale * inv_n;
    da(0, i) = g.dy * inv_n;
    if (u.v_grad_scale != 1.0) ++out.num_scaled;
  }
  out.loss *= inv_n;
  nn::accumulate_backward(pair.value, v_cache, dv, out.value_grads);
  nn::accumulate_backward(pair.advantage, a_cache, da, out.advantage_grads);
  return out;
}

ExpectileLoss expectile_loss(const Matrix& states, const Vector& targets, const nn::Mlp& value_net,
                             double tau_e) {
  if (!(tau_e > 0.0 && tau_e < 1.0)) {
    throw ConfigError("expectile tau must lie strictly in (0, 1), got " + std::to_string(tau_e));
  }
  const Eigen::Index n = targets.size();
  if (n == 0) throw ContractError("expectile_loss: empty batch");
  if (states.cols() != n) throw ContractError("expectile_loss: batch size mismatch");
  nn::ForwardCache cache;
  const Matrix v = value_net.forward(states, &cache);
  ExpectileLoss out{0.0, nn::MlpGrads(value_net)};
  Matrix dv(1, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = targets(i) - v(0, i);
    const double w = (u < 0.0) ? 1.0 - tau_e : tau_e;
    out.loss += w * u * u;
    dv(0, i) = -2.0 * w * u * inv_n;
  }
  out.loss *= inv_n;
  nn::accumulate_backward(value_net, cache, dv, out.grads);
  return out;
}

ToyMethod parse_toy_method(std::string_view name) {
  if (name == "afu") return ToyMethod::kAfu;
  if (name == "expectile" || name == "iql") return ToyMethod::kExpectile;
  throw ConfigError("unknown toy method '" + std::string(name) + "'");
}

std::string_view to_string(ToyMethod method) {
  return method == ToyMethod::kAfu ? "afu" : "expectile";
}

ToyResult run_toy_benchmark(const ToyOptions& options) {
  if (options.steps < 1 || options.batch < 1) {
    throw ConfigError("toy benchmark needs steps >= 1 and batch >= 1");
  }
  if (options.grid_points < 2) throw ConfigError("toy benchmark grid needs >= 2 points");
  if (options.method == ToyMethod::kExpectile && !(options.hyper > 0.0 && options.hyper < 1.0)) {
    throw ConfigError("expectile tau must lie strictly in (0, 1)");
  }

  Rng rng(options.seed);
  MaxQPair pair = MaxQPair::make(1, 1, options.hidden,
                                 options.method == ToyMethod::kAfu ? options.hyper : 0.5, rng);
  nn::AdamState v_opt(pair.value, options.learning_rate);
  nn::AdamState a_opt(pair.advantage, options.learning_rate);

  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  Matrix states(1, options.batch);
  Matrix actions(1, options.batch);
  Vector targets(options.batch);
  for (int step = 0; step < options.steps; ++step) {
    for (int i = 0; i < options.batch; ++i) {
      states(0, i) = uniform(rng);
      actions(0, i) = uniform(rng);
      targets(i) = envs::toy_oracle(states(0, i), actions(0, i));
    }
    if (options.method == ToyMethod::kAfu) {
      const VaLoss l = lambda_va_loss(states, actions, targets, pair);
      nn::adam_step(v_opt, pair.value, l.value_grads);
      nn::adam_step(a_opt, pair.advantage, l.advantage_grads);
    } else {
      const ExpectileLoss l = expectile_loss(states, targets, pair.value, options.hyper);
      nn::adam_step(v_opt, pair.value, l.grads);
    }
  }

  ToyResult result;
  const int g = options.grid_points;
  Matrix grid(1, g);
  for (int i = 0; i < g; ++i) grid(0, i) = -1.0 + 2.0 * i / (g - 1);
  const Matrix est = pair.value.forward(grid);
  for (int i = 0; i < g; ++i) {
    const double s = grid(0, i);
    const double truth = envs::toy_max(s);
    const double r = est(0, i) - truth;
    result.states.push_back(s);
    result.estimates.push_back(est(0, i));
    result.true_max.push_back(truth);
    result.residuals.push_back(r);
    result.mean_residual += r;
    result.mean_abs_residual += std::abs(r);
    result.max_abs_residual = std::max(result.max_abs_residual, std::abs(r));
  }
  result.mean_residual /= g;
  result.mean_abs_residual /= g;
  result.value = std::move(pair.value);
  if (options.method == ToyMethod::kAfu) result.advantage = std::move(pair.advantage);
  return result;
}

}  // namespace afu::maxq
