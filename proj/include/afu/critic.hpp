#pragma once

#include <array>
#include <vector>

#include "afu/maxq.hpp"
#include "afu/nn.hpp"
#include "afu/replay.hpp"

namespace afu::critic {

/**
 * Q network plus the two (V, A) max-Q pairs and the slow copies of both V
 * nets used for bootstrapping. Nothing here depends on the policy.
 */
struct CriticEnsemble {
  nn::Mlp q;  // state ++ action -> scalar
  std::array<maxq::MaxQPair, 2> pairs;
  std::array<nn::Mlp, 2> value_targets;
  double gamma = 0.99;

  /// Target value nets start as exact copies of the online ones.
  static CriticEnsemble make(int state_dim, int action_dim, const std::vector<int>& hidden,
                             double rho, double gamma, Rng& rng);
  void validate() const;

  Vector q_values(const Matrix& states, const Matrix& actions) const;
  /// min over the two ONLINE value nets.
  Vector min_online_value(const Matrix& states) const;
  /// min over the two target value nets.
  Vector min_target_value(const Matrix& states) const;
};

/// r + gamma * min_i V_target_i(s'), or r alone for terminal transitions.
double bootstrap_target(double reward, const Vector& next_state, bool terminal,
                        const CriticEnsemble& ensemble);
Vector bootstrap_targets(const MiniBatch& batch, const CriticEnsemble& ensemble);

struct CriticLoss {
  double loss = 0.0;
  nn::MlpGrads grads;  // w.r.t. the Q network only
};

/// Mean squared error between Q(s, a) and fixed targets.
CriticLoss critic_loss(const MiniBatch& batch, const Vector& targets, const nn::Mlp& q);
CriticLoss critic_loss(const MiniBatch& batch, const CriticEnsemble& ensemble);

/// Regression of both (V_i, A_i) pairs onto the shared bootstrap targets.
std::array<maxq::VaLoss, 2> value_advantage_update(const MiniBatch& batch, const Vector& targets,
                                                   const CriticEnsemble& ensemble);

}  // namespace afu::critic
