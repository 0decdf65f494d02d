#include "afu/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "afu/error.hpp"

namespace afu::nn {

namespace {

constexpr int kSnapshotVersion = 1;

}  // namespace

void Mlp::layout(std::vector<int> layer_sizes) {
  if (layer_sizes.size() < 2) {
    throw ContractError("Mlp needs at least an input and an output size");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw ContractError("Mlp layer sizes must be positive");
  }
  sizes_ = std::move(layer_sizes);
  offsets_.clear();
  Eigen::Index total = 0;
  for (int l = 0; l < num_layers(); ++l) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  params_ = Vector::Zero(total);
}

Mlp::Mlp(std::string name, std::vector<int> layer_sizes, Rng& rng, double output_scale)
    : name_(std::move(name)) {
  layout(std::move(layer_sizes));
  for (int l = 0; l < num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    const double scale = (l == num_layers() - 1) ? output_scale : 1.0;
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * dist(rng);
    }
    auto b = bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = scale * dist(rng);
  }
}

Mlp Mlp::zeros(std::string name, std::vector<int> layer_sizes) {
  Mlp net;
  net.name_ = std::move(name);
  net.layout(std::move(layer_sizes));
  return net;
}

Mlp Mlp::make(std::string name, int input_dim, int output_dim, const std::vector<int>& hidden,
              Rng& rng, double output_scale) {
  std::vector<int> sizes;
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output_dim);
  return Mlp(std::move(name), std::move(sizes), rng, output_scale);
}

Eigen::Map<Matrix> Mlp::weight(int layer) {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Matrix> Mlp::weight(int layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<Vector> Mlp::bias(int layer) {
  const Eigen::Index off = offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer];
  return {params_.data() + off, sizes_[layer + 1]};
}

Eigen::Map<const Vector> Mlp::bias(int layer) const {
  const Eigen::Index off = offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer];
  return {params_.data() + off, sizes_[layer + 1]};
}

Vector Mlp::forward(const Vector& input) const {
  Matrix in = input;
  return forward(in).col(0);
}

Matrix Mlp::forward(const Matrix& inputs, ForwardCache* cache) const {
  if (inputs.rows() != input_dim()) {
    throw ContractError("Mlp '" + name_ + "': input dimension " + std::to_string(inputs.rows()) +
                        " != " + std::to_string(input_dim()));
  }
  // Large temporaries are recycled per thread; fresh 256x256 blocks per call
  // cost as much as the products themselves.
  thread_local std::vector<Matrix> scratch;
  std::vector<Matrix>* hidden = &scratch;
  if (cache) {
    cache->input = inputs;
    hidden = &cache->hidden;
  }
  hidden->resize(std::max(num_layers() - 1, 0));
  Matrix out(output_dim(), inputs.cols());
  for (int l = 0; l < num_layers(); ++l) {
    const bool last = l + 1 == num_layers();
    Matrix& z = last ? out : (*hidden)[l];
    z.resize(sizes_[l + 1], inputs.cols());
    z.noalias() = weight(l) * (l == 0 ? inputs : (*hidden)[l - 1]);
    z.colwise() += bias(l);
    if (!last) z = z.cwiseMax(0.0);
  }
  return out;
}

void accumulate_backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad,
                         MlpGrads& grads, Matrix* input_grad) {
  if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.input.cols()) {
    throw ContractError("Mlp '" + net.name() + "': output gradient shape mismatch");
  }
  if (grads.values.size() != net.num_params()) {
    throw ContractError("Mlp '" + net.name() + "': gradient accumulator shape mismatch");
  }
  thread_local Matrix delta;
  thread_local Matrix next;
  delta = output_grad;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const Matrix& below = (l == 0) ? cache.input : cache.hidden[l - 1];
    const Eigen::Index rows = net.layer_sizes()[l + 1];
    const Eigen::Index cols = net.layer_sizes()[l];
    // Same layout as Mlp::weight()/bias(), but over the gradient vector.
    const auto w = net.weight(l);
    const Eigen::Index w_off = w.data() - net.params().data();
    Eigen::Map<Matrix> gw(grads.values.data() + w_off, rows, cols);
    Eigen::Map<Vector> gb(grads.values.data() + w_off + rows * cols, rows);
    gw.noalias() += delta * below.transpose();
    gb += delta.rowwise().sum();
    if (l > 0 || input_grad) {
      next.resize(cols, delta.cols());
      next.noalias() = w.transpose() * delta;
      if (l > 0) {
        delta = (below.array() > 0.0).select(next, 0.0);
      } else {
        *input_grad = next;
      }
    }
  }
}

Matrix input_gradient(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad) {
  if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.input.cols()) {
    throw ContractError("Mlp '" + net.name() + "': output gradient shape mismatch");
  }
  Matrix delta = output_grad;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    Matrix next = net.weight(l).transpose() * delta;
    if (l == 0) return next;
    delta = (cache.hidden[l - 1].array() > 0.0).select(next, 0.0);
  }
  return delta;
}

BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad) {
  BackwardResult out{MlpGrads(net), Matrix()};
  accumulate_backward(net, cache, output_grad, out.grads, &out.input_grad);
  return out;
}

BackwardResult backward(const Mlp& net, const Vector& input, const Vector& output_grad) {
  ForwardCache cache;
  Matrix in = input;
  net.forward(in, &cache);
  Matrix g = output_grad;
  return backward(net, cache, g);
}

AdamState::AdamState(const Mlp& net, double lr) : AdamState(net.num_params(), lr) {}

AdamState::AdamState(Eigen::Index num_params, double lr)
    : first_moment(Vector::Zero(num_params)),
      second_moment(Vector::Zero(num_params)),
      learning_rate(lr) {}

void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Vector& grads,
               const std::string& name) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: shape mismatch for '" + name + "'");
  }
  if (!grads.allFinite()) {
    throw NumericError("adam_step: non-finite gradient for '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
  if (!params.allFinite()) {
    throw NumericError("adam_step: non-finite parameters after update of '" + name + "'");
  }
}

void adam_step(AdamState& state, Mlp& net, const MlpGrads& grads) {
  adam_step(state, net.params(), grads.values, net.name());
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw ConfigError("soft_update: tau must lie in (0, 1], got " + std::to_string(tau));
  }
  if (!target.same_shape(online)) {
    throw ContractError("soft_update: '" + target.name() + "' and '" + online.name() +
                        "' differ in shape");
  }
  if (tau == 1.0) {
    target.params() = online.params();
    return;
  }
  target.params() = tau * online.params() + (1.0 - tau) * target.params();
}

nlohmann::json to_json(const Mlp& net) {
  const auto& p = net.params();
  return {{"format", "afu-mlp"},
          {"version", kSnapshotVersion},
          {"name", net.name()},
          {"layer_sizes", net.layer_sizes()},
          {"params", std::vector<double>(p.data(), p.data() + p.size())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "afu-mlp" || j.value("version", 0) != kSnapshotVersion) {
    throw ContractError("not an afu-mlp v1 snapshot");
  }
  Mlp net = Mlp::zeros(j.at("name").get<std::string>(), j.at("layer_sizes").get<std::vector<int>>());
  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(params.size()) != net.num_params()) {
    throw ContractError("snapshot parameter count does not match its layer sizes");
  }
  net.params() = Eigen::Map<const Vector>(params.data(), net.num_params());
  return net;
}

void save_snapshot(const Mlp& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write snapshot " + path);
  out << to_json(net).dump() << '\n';
}

Mlp load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read snapshot " + path);
  return mlp_from_json(nlohmann::json::parse(in));
}

}  // namespace afu::nn
