#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afu/nn.hpp"

namespace afu::gradcheck {

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-5;

/// ||a - n|| / max(||a||, ||n||), or 0 when both vanish.
double relative_error(const Vector& analytic, const Vector& numeric);

/// Central differences of f around x with step h.
Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = kStep);

struct CheckResult {
  std::string name;
  int instances = 0;
  double worst_relative_error = 0.0;
  bool passed = false;
};

// Each check draws `instances` random small problems from `seed` and compares
// the analytic gradient with central differences of a forward-only loss.
CheckResult check_mlp_backward(int instances, std::uint64_t seed, double tol = kTolerance);
CheckResult check_critic_loss(int instances, std::uint64_t seed, double tol = kTolerance);
CheckResult check_lambda_va_loss(int instances, std::uint64_t seed, double tol = kTolerance);
CheckResult check_expectile_loss(int instances, std::uint64_t seed, double tol = kTolerance);
CheckResult check_actor_loss(int instances, std::uint64_t seed, double tol = kTolerance);
CheckResult check_temperature_loss(int instances, std::uint64_t seed, double tol = kTolerance);
CheckResult check_mu_loss(int instances, std::uint64_t seed, double tol = kTolerance);

std::vector<CheckResult> run_all(int instances, std::uint64_t seed, double tol = kTolerance);

}  // namespace afu::gradcheck
