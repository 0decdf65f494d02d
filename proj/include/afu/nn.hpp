#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <random>
#include <string>
#include <vector>

namespace afu {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

namespace nn {

/// Hidden widths used by every approximator unless a caller overrides them.
inline const std::vector<int> kDefaultHidden = {256, 256};

/// Activations recorded by a batched forward pass, consumed by backward().
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> hidden;  // post-ReLU activations, one per hidden layer
};

/**
 * Feed-forward network with ReLU hidden layers and a linear output layer.
 *
 * All weights and biases live in one flat parameter vector so that the
 * optimizer, target tracking and finite-difference checks can treat the
 * network as a single point in parameter space. Layer l owns a
 * (sizes[l+1] x sizes[l]) column-major weight block followed by its bias.
 * Batched calls take one sample per column.
 */
class Mlp {
 public:
  Mlp() = default;

  /// Fan-in scaled uniform init; the output layer is multiplied by output_scale.
  Mlp(std::string name, std::vector<int> layer_sizes, Rng& rng, double output_scale = 1e-2);

  /// All-zero parameters.
  static Mlp zeros(std::string name, std::vector<int> layer_sizes);

  /// Convenience: input -> hidden... -> output.
  static Mlp make(std::string name, int input_dim, int output_dim, const std::vector<int>& hidden,
                  Rng& rng, double output_scale = 1e-2);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  Eigen::Index num_params() const { return params_.size(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

  Vector forward(const Vector& input) const;
  Matrix forward(const Matrix& inputs, ForwardCache* cache = nullptr) const;

  bool same_shape(const Mlp& other) const { return sizes_ == other.sizes_; }
  bool all_finite() const { return params_.allFinite(); }

 private:
  void layout(std::vector<int> layer_sizes);

  std::string name_;
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;  // start of each layer's weight block
  Vector params_;
};

/// Gradient accumulator matching an Mlp's flat parameter layout.
struct MlpGrads {
  MlpGrads() = default;
  explicit MlpGrads(const Mlp& net) : values(Vector::Zero(net.num_params())) {}

  void zero() { values.setZero(); }
  MlpGrads& operator+=(const MlpGrads& other) {
    values += other.values;
    return *this;
  }
  MlpGrads& operator*=(double s) {
    values *= s;
    return *this;
  }

  Vector values;
};

struct BackwardResult {
  MlpGrads grads;
  Matrix input_grad;
};

/**
 * Adds the gradient of sum(output .* output_grad) over the cached batch to
 * `grads`. When `input_grad` is non-null it receives d/d(input), one column
 * per sample.
 */
void accumulate_backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad,
                         MlpGrads& grads, Matrix* input_grad = nullptr);

/// d(sum(output .* output_grad))/d(input) alone; skips the parameter gradient.
Matrix input_gradient(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad);

BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad);

/// Single-sample form: runs its own forward pass.
BackwardResult backward(const Mlp& net, const Vector& input, const Vector& output_grad);

/// Bias-corrected Adam moments for one network.
struct AdamState {
  AdamState() = default;
  AdamState(const Mlp& net, double learning_rate);
  AdamState(Eigen::Index num_params, double learning_rate);

  Vector first_moment;
  Vector second_moment;
  long step = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update. Throws NumericError naming the network on a non-finite gradient.
void adam_step(AdamState& state, Mlp& net, const MlpGrads& grads);
/// Same update over a bare parameter vector (e.g. the log-temperature).
void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Vector& grads,
               const std::string& name);

/// target <- tau * online + (1 - tau) * target, for tau in (0, 1].
void soft_update(Mlp& target, const Mlp& online, double tau);

// Snapshots: {"format": "afu-mlp", "version": 1, "name", "layer_sizes", "params"}.
nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
void save_snapshot(const Mlp& net, const std::string& path);
Mlp load_snapshot(const std::string& path);

}  // namespace nn
}  // namespace afu
