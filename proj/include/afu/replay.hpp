#pragma once

#include <cstddef>
#include <vector>

#include "afu/nn.hpp"

namespace afu {

/// One environment step.
struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool terminal = false;  // true environment termination only, never time-limit truncation
};

/// Column-per-sample view of a batch of transitions.
struct MiniBatch {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector terminal;  // 1.0 for terminal transitions, else 0.0

  Eigen::Index size() const { return rewards.size(); }
};

MiniBatch make_batch(const std::vector<Transition>& transitions);

/// Fixed-capacity FIFO ring with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 1'000'000;

  explicit ReplayBuffer(std::size_t capacity = kDefaultCapacity);

  void insert(Transition t);
  MiniBatch sample(std::size_t n, Rng& rng) const;

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t insertions() const { return insertions_; }
  bool empty() const { return storage_.empty(); }

  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::size_t insertions_ = 0;
  std::size_t head_ = 0;  // slot of the oldest transition once full
  std::vector<Transition> storage_;
};

}  // namespace afu
