#include "afu/replay.hpp"

#include "afu/error.hpp"

namespace afu {

MiniBatch make_batch(const std::vector<Transition>& transitions) {
  if (transitions.empty()) throw ContractError("make_batch: no transitions");
  const auto n = static_cast<Eigen::Index>(transitions.size());
  const auto& first = transitions.front();
  MiniBatch b;
  b.states.resize(first.state.size(), n);
  b.actions.resize(first.action.size(), n);
  b.next_states.resize(first.next_state.size(), n);
  b.rewards.resize(n);
  b.terminal.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = transitions[static_cast<std::size_t>(i)];
    b.states.col(i) = t.state;
    b.actions.col(i) = t.action;
    b.next_states.col(i) = t.next_state;
    b.rewards(i) = t.reward;
    b.terminal(i) = t.terminal ? 1.0 : 0.0;
  }
  return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::insert(Transition t) {
  if (t.state.size() == 0 || t.action.size() == 0 || t.next_state.size() != t.state.size()) {
    throw ContractError("ReplayBuffer::insert: malformed transition");
  }
  if (!storage_.empty()) {
    const auto& ref = storage_.front();
    if (t.state.size() != ref.state.size() || t.action.size() != ref.action.size()) {
      throw ContractError("ReplayBuffer::insert: dimensions differ from stored transitions");
    }
  }
  if ((t.action.array().abs() > 1.0).any()) {
    throw ContractError("ReplayBuffer::insert: action outside [-1, 1]");
  }
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
  } else {
    storage_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
  ++insertions_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= storage_.size()) throw ContractError("ReplayBuffer::at: index out of range");
  return storage_[(head_ + i) % storage_.size()];
}

MiniBatch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (storage_.empty()) throw ContractError("ReplayBuffer::sample: buffer is empty");
  if (n == 0) throw ContractError("ReplayBuffer::sample: n must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, storage_.size() - 1);
  const auto& first = storage_.front();
  const auto cols = static_cast<Eigen::Index>(n);
  MiniBatch b;
  b.states.resize(first.state.size(), cols);
  b.actions.resize(first.action.size(), cols);
  b.next_states.resize(first.next_state.size(), cols);
  b.rewards.resize(cols);
  b.terminal.resize(cols);
  for (Eigen::Index i = 0; i < cols; ++i) {
    const auto& t = storage_[pick(rng)];
    b.states.col(i) = t.state;
    b.actions.col(i) = t.action;
    b.next_states.col(i) = t.next_state;
    b.rewards(i) = t.reward;
    b.terminal(i) = t.terminal ? 1.0 : 0.0;
  }
  return b;
}

}  // namespace afu
