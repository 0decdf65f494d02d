#include "afu/critic.hpp"

#include <vector>

#include "afu/error.hpp"

namespace afu::critic {

CriticEnsemble CriticEnsemble::make(int state_dim, int action_dim, const std::vector<int>& hidden,
                                    double rho, double gamma, Rng& rng) {
  nn::Mlp q = nn::Mlp::make("q", state_dim + action_dim, 1, hidden, rng);
  auto p1 = maxq::MaxQPair::make(state_dim, action_dim, hidden, rho, rng, "_1");
  auto p2 = maxq::MaxQPair::make(state_dim, action_dim, hidden, rho, rng, "_2");
  nn::Mlp t1 = p1.value;
  nn::Mlp t2 = p2.value;
  t1.set_name("value_target_1");
  t2.set_name("value_target_2");
  CriticEnsemble e{std::move(q), {std::move(p1), std::move(p2)}, {std::move(t1), std::move(t2)},
                   gamma};
  e.validate();
  return e;
}

void CriticEnsemble::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ConfigError("gamma must lie in [0, 1), got " + std::to_string(gamma));
  }
  for (int i = 0; i < 2; ++i) {
    pairs[i].validate();
    if (!value_targets[i].same_shape(pairs[i].value)) {
      throw ContractError("target value net shape differs from its online net");
    }
  }
  if (q.output_dim() != 1 || q.input_dim() != pairs[0].advantage.input_dim()) {
    throw ContractError("Q net must map state ++ action to a scalar");
  }
}

Vector CriticEnsemble::q_values(const Matrix& states, const Matrix& actions) const {
  return q.forward(maxq::concat_state_action(states, actions)).row(0).transpose();
}

Vector CriticEnsemble::min_online_value(const Matrix& states) const {
  return pairs[0].value.forward(states).cwiseMin(pairs[1].value.forward(states)).row(0).transpose();
}

Vector CriticEnsemble::min_target_value(const Matrix& states) const {
  return value_targets[0].forward(states).cwiseMin(value_targets[1].forward(states)).row(0).transpose();
}

double bootstrap_target(double reward, const Vector& next_state, bool terminal,
                        const CriticEnsemble& ensemble) {
  if (terminal) return reward;
  const double v1 = ensemble.value_targets[0].forward(next_state)(0);
  const double v2 = ensemble.value_targets[1].forward(next_state)(0);
  return reward + ensemble.gamma * std::min(v1, v2);
}

Vector bootstrap_targets(const MiniBatch& batch, const CriticEnsemble& ensemble) {
  Vector out = batch.rewards;
  // Terminal transitions never look at s', so only the others are evaluated.
  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    if (batch.terminal(i) == 0.0) live.push_back(i);
  }
  if (live.empty()) return out;
  Matrix next(batch.next_states.rows(), static_cast<Eigen::Index>(live.size()));
  for (std::size_t k = 0; k < live.size(); ++k) {
    next.col(static_cast<Eigen::Index>(k)) = batch.next_states.col(live[k]);
  }
  const Vector next_v = ensemble.min_target_value(next);
  for (std::size_t k = 0; k < live.size(); ++k) {
    out(live[k]) += ensemble.gamma * next_v(static_cast<Eigen::Index>(k));
  }
  return out;
}

CriticLoss critic_loss(const MiniBatch& batch, const Vector& targets, const nn::Mlp& q) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw ContractError("critic_loss: empty batch");
  if (targets.size() != n) throw ContractError("critic_loss: target count mismatch");
  nn::ForwardCache cache;
  const Matrix pred = q.forward(maxq::concat_state_action(batch.states, batch.actions), &cache);
  const Matrix err = pred - targets.transpose();
  CriticLoss out{err.squaredNorm() / static_cast<double>(n), nn::MlpGrads(q)};
  nn::accumulate_backward(q, cache, (2.0 / static_cast<double>(n)) * err, out.grads);
  return out;
}

CriticLoss critic_loss(const MiniBatch& batch, const CriticEnsemble& ensemble) {
  return critic_loss(batch, bootstrap_targets(batch, ensemble), ensemble.q);
}

std::array<maxq::VaLoss, 2> value_advantage_update(const MiniBatch& batch, const Vector& targets,
                                                   const CriticEnsemble& ensemble) {
  if (batch.size() == 0) throw ContractError("value_advantage_update: empty batch");
  return {maxq::lambda_va_loss(batch.states, batch.actions, targets, ensemble.pairs[0]),
          maxq::lambda_va_loss(batch.states, batch.actions, targets, ensemble.pairs[1])};
}

}  // namespace afu::critic
