#pragma once

#include <vector>

#include "afu/critic.hpp"
#include "afu/nn.hpp"

namespace afu::actor {

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

/// Per-state heads of the policy backbone for a batch (one column per state).
struct PolicyOutput {
  Matrix mean;         // pre-squash Gaussian mean
  Matrix raw_log_std;  // before clamping
  Matrix log_std;      // clamped to [kLogStdMin, kLogStdMax]
  Matrix mu;           // tanh-squashed deterministic head; empty without the mu head
};

/**
 * Squashed-Gaussian policy. The backbone emits [mean; log_std] and, when the
 * mu head is enabled, d extra outputs that become mu(s) after tanh. The heads
 * share every hidden layer.
 */
struct PolicyNet {
  nn::Mlp backbone;
  int action_dim = 1;
  bool has_mu_head = false;

  static PolicyNet make(int state_dim, int action_dim, const std::vector<int>& hidden,
                        bool mu_head, Rng& rng);

  int state_dim() const { return backbone.input_dim(); }
  PolicyOutput heads(const Matrix& states, nn::ForwardCache* cache = nullptr) const;
  /// tanh(mean): the noise-free action used for evaluation.
  Matrix deterministic_actions(const Matrix& states) const;
};

struct Sample {
  Vector action;
  double log_prob;
};

/// a = tanh(mean + exp(log_std) * noise) with its exact log-density.
Sample sample_action(const Vector& mean, const Vector& log_std, const Vector& noise);
Sample sample_action(const PolicyNet& policy, const Vector& state, const Vector& noise);

/// One reparameterized action per state column; noise is action_dim x batch.
Matrix resample_actions(const PolicyNet& policy, const Matrix& states, const Matrix& noise);

/// Log-density of the squashed Gaussian at the pre-squash point u.
double squashed_log_prob(const Vector& mean, const Vector& log_std, const Vector& pre_tanh);

/// Entropy temperature, optimized in log space.
struct Temperature {
  double log_alpha = 0.0;  // initial alpha = 1
  double target_entropy = -1.0;

  double alpha() const;
};

struct ActorLoss {
  double loss = 0.0;
  nn::MlpGrads grads;  // policy backbone only
  Matrix actions;      // resampled a_s, one column per state
  Vector log_probs;
  Vector q_values;              // Q(s, a_s)
  Eigen::Index num_projected = 0;  // states where the projection fired (beta only)

  double entropy() const { return -log_probs.mean(); }
};

/// Mean[alpha log pi(a_s|s) - Q(s, a_s)] with reparameterized a_s; noise is d x n.
ActorLoss actor_loss_alpha(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                           const Temperature& temperature, const critic::CriticEnsemble& critic);

/**
 * Same loss value as actor_loss_alpha. In the gradient, the action-gradient
 * of Q at each a_s is passed through project_gradient() first, steering
 * the update away from critic slopes that point away from mu(s).
 */
ActorLoss actor_loss_beta(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                          const Temperature& temperature, const critic::CriticEnsemble& critic);

struct TemperatureLoss {
  double loss = 0.0;
  double grad_log_alpha = 0.0;
};

/// Mean[-alpha log pi - alpha H_target], differentiated w.r.t. log alpha only.
TemperatureLoss temperature_loss(const Vector& log_probs, const Temperature& temperature);
TemperatureLoss temperature_loss(const Matrix& states, const Matrix& noise, const PolicyNet& policy,
                                 const Temperature& temperature);

/// One regression target (s_i, a) for the mu head.
struct MuTarget {
  Eigen::Index state_index;
  Vector action;
};

/**
 * Buffer actions and resampled actions whose Q-value strictly exceeds
 * min_i V_i(s) under the online value nets. Duplicates are kept.
 */
std::vector<MuTarget> mu_targets(const MiniBatch& batch, const Matrix& resampled_actions,
                                 const critic::CriticEnsemble& critic);

struct MuLoss {
  double loss = 0.0;
  nn::MlpGrads grads;
  Eigen::Index count = 0;
};

/// Mean squared distance between mu(s) and its targets; zero loss and grads when empty.
MuLoss mu_loss(const Matrix& states, const std::vector<MuTarget>& targets,
               const PolicyNet& policy);

/**
 * Removes the component of v along (mu - a_s) when v points away from mu and
 * a_s is not already near the argmax (q_val < min_v). Otherwise returns v.
 */
Vector project_gradient(const Vector& v, const Vector& a_s, const Vector& mu, double q_val,
                        double min_v);

}  // namespace afu::actor
