#include "afu/actor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "afu/error.hpp"

namespace afu::actor {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
// Largest double below 1; keeps squashed actions strictly inside (-1, 1).
const double kActionBound = std::nextafter(1.0, 0.0);

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2) without cancellation for large |u|.
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

double squash(double u) { return std::clamp(std::tanh(u), -kActionBound, kActionBound); }

struct Resampled {
  Matrix pre_tanh;
  Matrix actions;
  Vector log_probs;
};

Resampled resample(const PolicyOutput& out, const Matrix& noise) {
  const Eigen::Index d = out.mean.rows();
  const Eigen::Index n = out.mean.cols();
  if (noise.rows() != d || noise.cols() != n) {
    throw ContractError("policy noise must be action_dim x batch");
  }
  Resampled r{Matrix(d, n), Matrix(d, n), Vector::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double ls = out.log_std(j, i);
      const double eps = noise(j, i);
      const double u = out.mean(j, i) + std::exp(ls) * eps;
      r.pre_tanh(j, i) = u;
      r.actions(j, i) = squash(u);
      r.log_probs(i) += -0.5 * eps * eps - ls - kHalfLog2Pi - log_one_minus_tanh_sq(u);
    }
  }
  return r;
}

ActorLoss actor_loss_impl(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                          const Temperature& temperature, const critic::CriticEnsemble& critic,
                          bool project) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw ContractError("actor loss: empty batch");
  const Eigen::Index d = policy.action_dim;

  nn::ForwardCache policy_cache;
  const PolicyOutput out = policy.heads(states, &policy_cache);
  Resampled r = resample(out, noise);

  nn::ForwardCache q_cache;
  const Matrix q = critic.q.forward(maxq::concat_state_action(states, r.actions), &q_cache);
  // Action-gradient of Q at each a_s; Q's parameters are not trained here.
  const Matrix q_input_grad = nn::input_gradient(critic.q, q_cache, Matrix::Ones(1, n));
  Matrix dq_da = q_input_grad.bottomRows(d);

  ActorLoss result;
  result.actions = r.actions;
  result.log_probs = r.log_probs;
  result.q_values = q.row(0).transpose();

  if (project) {
    const Vector min_v = critic.min_online_value(states);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector v = dq_da.col(i);
      const Vector g = project_gradient(v, r.actions.col(i), out.mu.col(i), q(0, i), min_v(i));
      if (g != v) ++result.num_projected;
      dq_da.col(i) = g;
    }
  }

  const double alpha = temperature.alpha();
  const double inv_n = 1.0 / static_cast<double>(n);
  result.loss = (alpha * r.log_probs.sum() - q.sum()) * inv_n;

  // d(loss)/d(backbone outputs). Reparameterization: u = m + sigma * eps, a = tanh(u).
  Matrix out_grad = Matrix::Zero(policy.backbone.output_dim(), n);
  const double g_lp = alpha * inv_n;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double a = r.actions(j, i);
      const double g_a = -dq_da(j, i) * inv_n;
      // dlogp/du through the tanh correction is 2 tanh(u).
      const double g_u = g_a * (1.0 - a * a) + g_lp * 2.0 * a;
      const double sigma_eps = std::exp(out.log_std(j, i)) * noise(j, i);
      out_grad(j, i) = g_u;
      const double raw = out.raw_log_std(j, i);
      const bool in_range = raw >= kLogStdMin && raw <= kLogStdMax;
      out_grad(d + j, i) = in_range ? g_u * sigma_eps - g_lp : 0.0;
    }
  }
  result.grads = nn::MlpGrads(policy.backbone);
  nn::accumulate_backward(policy.backbone, policy_cache, out_grad, result.grads);
  return result;
}

}  // namespace

PolicyNet PolicyNet::make(int state_dim, int action_dim, const std::vector<int>& hidden,
                          bool mu_head, Rng& rng) {
  if (action_dim < 1) throw ContractError("PolicyNet: action_dim must be >= 1");
  const int outputs = (mu_head ? 3 : 2) * action_dim;
  return {nn::Mlp::make("policy", state_dim, outputs, hidden, rng), action_dim, mu_head};
}

PolicyOutput PolicyNet::heads(const Matrix& states, nn::ForwardCache* cache) const {
  const Matrix raw = backbone.forward(states, cache);
  const Eigen::Index d = action_dim;
  PolicyOutput out;
  out.mean = raw.topRows(d);
  out.raw_log_std = raw.middleRows(d, d);
  out.log_std = out.raw_log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  if (has_mu_head) out.mu = raw.middleRows(2 * d, d).array().tanh().matrix();
  return out;
}

Matrix PolicyNet::deterministic_actions(const Matrix& states) const {
  return heads(states).mean.unaryExpr([](double u) { return squash(u); });
}

Matrix resample_actions(const PolicyNet& policy, const Matrix& states, const Matrix& noise) {
  return resample(policy.heads(states), noise).actions;
}

double squashed_log_prob(const Vector& mean, const Vector& log_std, const Vector& pre_tanh) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    const double ls = std::clamp(log_std(j), kLogStdMin, kLogStdMax);
    const double eps = (pre_tanh(j) - mean(j)) / std::exp(ls);
    lp += -0.5 * eps * eps - ls - kHalfLog2Pi - log_one_minus_tanh_sq(pre_tanh(j));
  }
  return lp;
}

Sample sample_action(const Vector& mean, const Vector& log_std, const Vector& noise) {
  if (mean.size() != log_std.size() || mean.size() != noise.size()) {
    throw ContractError("sample_action: mean, log_std and noise dimensions differ");
  }
  PolicyOutput out;
  out.mean = mean;
  out.raw_log_std = log_std;
  out.log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  const Resampled r = resample(out, noise);
  return {r.actions.col(0), r.log_probs(0)};
}

Sample sample_action(const PolicyNet& policy, const Vector& state, const Vector& noise) {
  const PolicyOutput out = policy.heads(state);
  return sample_action(out.mean.col(0), out.raw_log_std.col(0), noise);
}

double Temperature::alpha() const { return std::exp(log_alpha); }

ActorLoss actor_loss_alpha(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                           const Temperature& temperature, const critic::CriticEnsemble& critic) {
  return actor_loss_impl(states, noise, policy, temperature, critic, false);
}

ActorLoss actor_loss_beta(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                          const Temperature& temperature, const critic::CriticEnsemble& critic) {
  if (!policy.has_mu_head) throw ContractError("actor_loss_beta needs a policy with a mu head");
  return actor_loss_impl(states, noise, policy, temperature, critic, true);
}

TemperatureLoss temperature_loss(const Vector& log_probs, const Temperature& temperature) {
  if (log_probs.size() == 0) throw ContractError("temperature_loss: empty batch");
  const double alpha = temperature.alpha();
  const double gap = -log_probs.mean() - temperature.target_entropy;
  // d/d(log alpha) of alpha * gap is alpha * gap.
  return {alpha * gap, alpha * gap};
}

TemperatureLoss temperature_loss(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                                 const Temperature& temperature) {
  if (states.cols() == 0) throw ContractError("temperature_loss: empty batch");
  return temperature_loss(resample(policy.heads(states), noise).log_probs, temperature);
}

std::vector<MuTarget> mu_targets(const MiniBatch& batch, const Matrix& resampled_actions,
                                 const critic::CriticEnsemble& critic) {
  if (batch.size() == 0) throw ContractError("mu_targets: empty batch");
  if (resampled_actions.cols() != batch.size()) {
    throw ContractError("mu_targets: one resampled action per state required");
  }
  const Vector min_v = critic.min_online_value(batch.states);
  const Vector q_buffer = critic.q_values(batch.states, batch.actions);
  const Vector q_resampled = critic.q_values(batch.states, resampled_actions);
  std::vector<MuTarget> out;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    if (q_buffer(i) > min_v(i)) out.push_back({i, batch.actions.col(i)});
    if (q_resampled(i) > min_v(i)) out.push_back({i, resampled_actions.col(i)});
  }
  return out;
}

MuLoss mu_loss(const Matrix& states, const std::vector<MuTarget>& targets,
               const PolicyNet& policy) {
  if (!policy.has_mu_head) throw ContractError("mu_loss needs a policy with a mu head");
  MuLoss result{0.0, nn::MlpGrads(policy.backbone), 0};
  if (targets.empty()) return result;
  const auto m = static_cast<Eigen::Index>(targets.size());
  const Eigen::Index d = policy.action_dim;
  Matrix sel(states.rows(), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto idx = targets[static_cast<std::size_t>(k)].state_index;
    if (idx < 0 || idx >= states.cols()) throw ContractError("mu_loss: state index out of range");
    sel.col(k) = states.col(idx);
  }
  nn::ForwardCache cache;
  const PolicyOutput out = policy.heads(sel, &cache);
  Matrix out_grad = Matrix::Zero(policy.backbone.output_dim(), m);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Vector& target = targets[static_cast<std::size_t>(k)].action;
    if (target.size() != d) throw ContractError("mu_loss: target action dimension mismatch");
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mu = out.mu(j, k);
      const double diff = mu - target(j);
      result.loss += diff * diff;
      out_grad(2 * d + j, k) = 2.0 * diff * (1.0 - mu * mu) * inv_m;
    }
  }
  result.loss *= inv_m;
  result.count = m;
  nn::accumulate_backward(policy.backbone, cache, out_grad, result.grads);
  return result;
}

Vector project_gradient(const Vector& v, const Vector& a_s, const Vector& mu, double q_val,
                        double min_v) {
  if (v.size() != a_s.size() || v.size() != mu.size()) {
    throw ContractError("project_gradient: dimension mismatch");
  }
  const Vector dir = mu - a_s;
  const double dir_sq = dir.squaredNorm();
  if (dir_sq < 1e-24) return v;
  const double dot = v.dot(dir);
  if (!(dot < 0.0 && q_val < min_v)) return v;
  // The orthogonal complement of a nonzero direction in 1-D is {0}.
  if (v.size() == 1) return Vector::Zero(1);
  return v - (dot / dir_sq) * dir;
}

}  // namespace afu::actor
