#include "afu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "afu/actor.hpp"
#include "afu/critic.hpp"
#include "afu/error.hpp"
#include "afu/maxq.hpp"

namespace afu::gradcheck {

namespace {

struct Instance {
  int state_dim;
  int action_dim;
  int batch;
  std::vector<int> hidden;
};

Instance draw_instance(Rng& rng) {
  std::uniform_int_distribution<int> dim(1, 3);
  std::uniform_int_distribution<int> batch(3, 8);
  std::uniform_int_distribution<int> width(4, 8);
  return {dim(rng), dim(rng), batch(rng), {width(rng), width(rng)}};
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  }
  return m;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

nn::Mlp random_net(const std::string& name, int in, int out, const std::vector<int>& hidden,
                   Rng& rng) {
  return nn::Mlp::make(name, in, out, hidden, rng, 1.0);
}

nn::Mlp with_params(const nn::Mlp& net, const Vector& p) {
  nn::Mlp copy = net;
  copy.params() = p;
  return copy;
}

// Instances whose evaluation point lies within this distance of a kink (ReLU,
// indicator or branch switch) are redrawn: finite differences are meaningless there.
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxDrawsPerInstance = 100;

// Smallest |pre-activation| over all hidden units and samples.
double relu_margin(const nn::Mlp& net, const Matrix& x) {
  double margin = std::numeric_limits<double>::infinity();
  Matrix h = x;
  for (int l = 0; l + 1 < net.num_layers(); ++l) {
    Matrix z = net.weight(l) * h;
    z.colwise() += net.bias(l);
    margin = std::min(margin, z.cwiseAbs().minCoeff());
    h = z.cwiseMax(0.0);
  }
  return margin;
}

bool smooth(double margin) { return margin > kKinkMargin; }

// `one` returns nullopt when the drawn instance sits on a kink.
CheckResult run(const std::string& name, int instances, double tol,
                const std::function<std::optional<double>(Rng&)>& one, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult r{name, instances, 0.0, true};
  for (int k = 0; k < instances; ++k) {
    std::optional<double> err;
    for (int draw = 0; !err && draw < kMaxDrawsPerInstance; ++draw) err = one(rng);
    if (!err) throw NumericError(name + ": could not draw a smooth instance");
    r.worst_relative_error = std::max(r.worst_relative_error, *err);
  }
  r.passed = r.worst_relative_error <= tol;
  return r;
}

critic::CriticEnsemble random_ensemble(const Instance& in, Rng& rng) {
  critic::CriticEnsemble e =
      critic::CriticEnsemble::make(in.state_dim, in.action_dim, in.hidden, 0.3, 0.99, rng);
  e.q = random_net("q", in.state_dim + in.action_dim, 1, in.hidden, rng);
  for (int i = 0; i < 2; ++i) {
    e.pairs[i].value = random_net("value", in.state_dim, 1, in.hidden, rng);
    e.pairs[i].advantage = random_net("advantage", in.state_dim + in.action_dim, 1, in.hidden, rng);
    e.value_targets[i] = random_net("value_target", in.state_dim, 1, in.hidden, rng);
  }
  return e;
}

MiniBatch random_batch(const Instance& in, Rng& rng) {
  MiniBatch b;
  b.states = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
  b.actions = uniform_matrix(in.action_dim, in.batch, -1.0, 1.0, rng);
  b.next_states = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
  b.rewards = uniform_matrix(in.batch, 1, -1.0, 1.0, rng).col(0);
  b.terminal = Vector::Zero(in.batch);
  std::bernoulli_distribution coin(0.3);
  for (int i = 0; i < in.batch; ++i) b.terminal(i) = coin(rng) ? 1.0 : 0.0;
  return b;
}

// log of the squashed-Gaussian density, written out directly.
double plain_log_prob(double mean, double log_std, double eps) {
  const double u = mean + std::exp(log_std) * eps;
  const double a = std::tanh(u);
  return -0.5 * eps * eps - log_std - 0.5 * std::log(2.0 * std::numbers::pi) -
         std::log(1.0 - a * a);
}

}  // namespace

double relative_error(const Vector& analytic, const Vector& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).norm() / scale;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

CheckResult check_mlp_backward(int instances, std::uint64_t seed, double tol) {
  return run("mlp_backward", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    const nn::Mlp net = random_net("net", in.state_dim, in.action_dim, in.hidden, rng);
    const Matrix x = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
    const Matrix w = normal_matrix(in.action_dim, in.batch, rng);
    if (!smooth(relu_margin(net, x))) return std::nullopt;
    nn::ForwardCache cache;
    net.forward(x, &cache);
    const nn::BackwardResult br = nn::backward(net, cache, w);
    const Vector fd_params = central_difference(
        [&](const Vector& p) { return with_params(net, p).forward(x).cwiseProduct(w).sum(); },
        net.params());
    const Vector fd_input = central_difference(
        [&](const Vector& flat) {
          const Matrix xi = Eigen::Map<const Matrix>(flat.data(), x.rows(), x.cols());
          return net.forward(xi).cwiseProduct(w).sum();
        },
        Eigen::Map<const Vector>(x.data(), x.size()));
    const Vector analytic_input = Eigen::Map<const Vector>(br.input_grad.data(), br.input_grad.size());
    return std::max(relative_error(br.grads.values, fd_params),
                    relative_error(analytic_input, fd_input));
  }, seed);
}

CheckResult check_critic_loss(int instances, std::uint64_t seed, double tol) {
  return run("critic_loss", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    const critic::CriticEnsemble e = random_ensemble(in, rng);
    const MiniBatch b = random_batch(in, rng);
    const Matrix sa = maxq::concat_state_action(b.states, b.actions);
    if (!smooth(relu_margin(e.q, sa))) return std::nullopt;
    const critic::CriticLoss l = critic::critic_loss(b, e);
    const Vector targets = critic::bootstrap_targets(b, e);
    const Vector fd = central_difference(
        [&](const Vector& p) {
          const Matrix q = with_params(e.q, p).forward(sa);
          return (q.row(0).transpose() - targets).squaredNorm() / static_cast<double>(in.batch);
        },
        e.q.params());
    return relative_error(l.grads.values, fd);
  }, seed);
}

CheckResult check_lambda_va_loss(int instances, std::uint64_t seed, double tol) {
  return run("lambda_va_loss", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    std::uniform_real_distribution<double> rho_dist(0.05, 0.95);
    maxq::MaxQPair pair{random_net("value", in.state_dim, 1, in.hidden, rng),
                        random_net("advantage", in.state_dim + in.action_dim, 1, in.hidden, rng),
                        rho_dist(rng)};
    const Matrix s = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
    const Matrix a = uniform_matrix(in.action_dim, in.batch, -1.0, 1.0, rng);
    const Vector t = 1.5 * normal_matrix(in.batch, 1, rng).col(0);
    const Matrix sa = maxq::concat_state_action(s, a);
    // The stop-gradient copy of V stays frozen at the unperturbed parameters.
    const Vector v_frozen = pair.value.forward(s).row(0).transpose();
    const Vector adv0 = pair.advantage.forward(sa).row(0).transpose();
    const double branch_margin =
        std::min((v_frozen - t).cwiseAbs().minCoeff(), (v_frozen + adv0 - t).cwiseAbs().minCoeff());
    if (!smooth(std::min({relu_margin(pair.value, s), relu_margin(pair.advantage, sa),
                          branch_margin}))) {
      return std::nullopt;
    }
    const maxq::VaLoss l = maxq::lambda_va_loss(s, a, t, pair);
    const Eigen::Index nv = pair.value.num_params();
    Vector joint(nv + pair.advantage.num_params());
    joint << pair.value.params(), pair.advantage.params();
    const Vector fd = central_difference(
        [&](const Vector& p) {
          const Matrix v = with_params(pair.value, p.head(nv)).forward(s);
          const Matrix adv = with_params(pair.advantage, p.tail(p.size() - nv)).forward(sa);
          double total = 0.0;
          for (int i = 0; i < in.batch; ++i) {
            const double ind = (v(0, i) + adv(0, i) < t(i)) ? 1.0 : 0.0;
            const double ups = (1.0 - pair.rho * ind) * v(0, i) + pair.rho * ind * v_frozen(i);
            const double x = ups - t(i);
            const double y = adv(0, i);
            total += x >= 0.0 ? (x + y) * (x + y) : x * x + y * y;
          }
          return total / in.batch;
        },
        joint);
    Vector analytic(joint.size());
    analytic << l.value_grads.values, l.advantage_grads.values;
    return relative_error(analytic, fd);
  }, seed);
}

CheckResult check_expectile_loss(int instances, std::uint64_t seed, double tol) {
  return run("expectile_loss", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    std::uniform_real_distribution<double> tau_dist(0.05, 0.95);
    const double tau = tau_dist(rng);
    const nn::Mlp v = random_net("value", in.state_dim, 1, in.hidden, rng);
    const Matrix s = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
    const Vector t = normal_matrix(in.batch, 1, rng).col(0);
    const Vector v0 = v.forward(s).row(0).transpose();
    if (!smooth(std::min(relu_margin(v, s), (t - v0).cwiseAbs().minCoeff()))) return std::nullopt;
    const maxq::ExpectileLoss l = maxq::expectile_loss(s, t, v, tau);
    const Vector fd = central_difference(
        [&](const Vector& p) {
          const Matrix out = with_params(v, p).forward(s);
          double total = 0.0;
          for (int i = 0; i < in.batch; ++i) {
            const double u = t(i) - out(0, i);
            total += std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * u * u;
          }
          return total / in.batch;
        },
        v.params());
    return relative_error(l.grads.values, fd);
  }, seed);
}

CheckResult check_actor_loss(int instances, std::uint64_t seed, double tol) {
  return run("actor_loss", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    const critic::CriticEnsemble e = random_ensemble(in, rng);
    actor::PolicyNet policy{random_net("policy", in.state_dim, 2 * in.action_dim, in.hidden, rng),
                            in.action_dim, false};
    std::uniform_real_distribution<double> log_alpha(-2.0, 1.0);
    const actor::Temperature temp{log_alpha(rng), -static_cast<double>(in.action_dim)};
    const Matrix s = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
    const Matrix noise = normal_matrix(in.action_dim, in.batch, rng);
    const actor::ActorLoss l = actor::actor_loss_alpha(s, noise, policy, temp, e);
    const int d = in.action_dim;
    const Matrix raw0 = policy.backbone.forward(s);
    const Matrix log_std0 = raw0.middleRows(d, d);
    const double clamp_margin = std::min((log_std0.array() - actor::kLogStdMin).abs().minCoeff(),
                                         (log_std0.array() - actor::kLogStdMax).abs().minCoeff());
    if (!smooth(std::min({relu_margin(policy.backbone, s),
                          relu_margin(e.q, maxq::concat_state_action(s, l.actions)),
                          clamp_margin}))) {
      return std::nullopt;
    }
    const Vector fd = central_difference(
        [&](const Vector& p) {
          const Matrix raw = with_params(policy.backbone, p).forward(s);
          Matrix actions(d, in.batch);
          double log_probs = 0.0;
          for (int i = 0; i < in.batch; ++i) {
            for (int j = 0; j < d; ++j) {
              const double ls = std::clamp(raw(d + j, i), actor::kLogStdMin, actor::kLogStdMax);
              actions(j, i) = std::tanh(raw(j, i) + std::exp(ls) * noise(j, i));
              log_probs += plain_log_prob(raw(j, i), ls, noise(j, i));
            }
          }
          const Matrix q = e.q.forward(maxq::concat_state_action(s, actions));
          return (temp.alpha() * log_probs - q.sum()) / in.batch;
        },
        policy.backbone.params());
    return relative_error(l.grads.values, fd);
  }, seed);
}

CheckResult check_temperature_loss(int instances, std::uint64_t seed, double tol) {
  return run("temperature_loss", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    const Vector log_probs = normal_matrix(in.batch, 1, rng).col(0);
    std::uniform_real_distribution<double> u(-2.0, 1.0);
    actor::Temperature temp{u(rng), -static_cast<double>(in.action_dim)};
    const actor::TemperatureLoss l = actor::temperature_loss(log_probs, temp);
    const Vector fd = central_difference(
        [&](const Vector& x) {
          const double alpha = std::exp(x(0));
          return (-alpha * log_probs.array() - alpha * temp.target_entropy).mean();
        },
        Vector::Constant(1, temp.log_alpha));
    return relative_error(Vector::Constant(1, l.grad_log_alpha), fd);
  }, seed);
}

CheckResult check_mu_loss(int instances, std::uint64_t seed, double tol) {
  return run("mu_loss", instances, tol, [](Rng& rng) -> std::optional<double> {
    const Instance in = draw_instance(rng);
    const int d = in.action_dim;
    actor::PolicyNet policy{random_net("policy", in.state_dim, 3 * d, in.hidden, rng), d, true};
    const Matrix s = uniform_matrix(in.state_dim, in.batch, -1.0, 1.0, rng);
    std::vector<actor::MuTarget> targets;
    std::uniform_int_distribution<int> pick(0, in.batch - 1);
    const int m = in.batch + 2;
    for (int k = 0; k < m; ++k) {
      targets.push_back({pick(rng), uniform_matrix(d, 1, -0.99, 0.99, rng).col(0)});
    }
    if (!smooth(relu_margin(policy.backbone, s))) return std::nullopt;
    const actor::MuLoss l = actor::mu_loss(s, targets, policy);
    const Vector fd = central_difference(
        [&](const Vector& p) {
          const Matrix raw = with_params(policy.backbone, p).forward(s);
          double total = 0.0;
          for (const auto& t : targets) {
            for (int j = 0; j < d; ++j) {
              const double diff = std::tanh(raw(2 * d + j, t.state_index)) - t.action(j);
              total += diff * diff;
            }
          }
          return total / m;
        },
        policy.backbone.params());
    return relative_error(l.grads.values, fd);
  }, seed);
}

std::vector<CheckResult> run_all(int instances, std::uint64_t seed, double tol) {
  return {check_mlp_backward(instances, seed, tol),     check_critic_loss(instances, seed + 1, tol),
          check_lambda_va_loss(instances, seed + 2, tol), check_expectile_loss(instances, seed + 3, tol),
          check_actor_loss(instances, seed + 4, tol),    check_temperature_loss(instances, seed + 5, tol),
          check_mu_loss(instances, seed + 6, tol)};
}

}  // namespace afu::gradcheck
