#pragma once

// Minimal numeric kernel: dense layers, Fourier features, a reverse-mode
// tape over Eigen matrices, Adam and learning-rate schedules.
//
// Batches are stored one sample per row. A dense layer maps a (batch x in)
// matrix X to X * W^T + b^T with W of shape (out x in).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neon/random.hpp"

namespace neon::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Activation { kTanh, kRelu, kSigmoid, kLinear };

Activation parse_activation(std::string_view name);

struct Layer {
  std::string name;
  Matrix weight;  // out x in
  Vector bias;    // out
};

class ParamTree {
 public:
  ParamTree() = default;

  void add(std::string name, Matrix weight, Vector bias);
  void append(const ParamTree& other);

  std::span<Layer> layers() { return layers_; }
  std::span<const Layer> layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  Layer& operator[](std::size_t i) { return layers_[i]; }
  const Layer& operator[](std::size_t i) const { return layers_[i]; }
  const Layer& at(std::string_view name) const;

  // Layers [first, first + count) as a new tree.
  ParamTree slice(std::size_t first, std::size_t count) const;

  std::size_t parameter_count() const;
  ParamTree zeros_like() const;
  bool same_shape(const ParamTree& other) const;
  bool all_finite() const;

  // FNV-1a over names, shapes and the raw bytes of every entry.
  std::uint64_t checksum() const;

  Vector flatten() const;
  void unflatten(const Vector& flat);

  friend bool operator==(const ParamTree& a, const ParamTree& b);

 private:
  std::vector<Layer> layers_;
};

// Glorot-uniform weights, zero biases.
Layer glorot_layer(std::string name, Index in, Index out, Rng& rng);

// Builds an MLP with layers named prefix.0 ... prefix.L.
ParamTree make_mlp(const std::string& prefix, Index in, std::span<const int> hidden, Index out,
                   Rng& rng);

// activation(W_L ... activation(W_1 x + b_1) ... ) with a linear final layer.
Vector mlp_forward(std::span<const Layer> layers, const Vector& x, Activation activation);
inline Vector mlp_forward(const ParamTree& params, const Vector& x, Activation activation) {
  return mlp_forward(params.layers(), x, activation);
}

class FourierFeatureMap {
 public:
  FourierFeatureMap() = default;
  // B has n_freq rows, entries ~ N(0, scale^2).
  FourierFeatureMap(Index n_freq, Index query_dim, double scale, Rng& rng);
  FourierFeatureMap(Matrix frequencies, double scale);

  // concat(cos(2 pi B y), sin(2 pi B y)) per row of `queries`.
  Matrix encode(const Matrix& queries) const;
  Vector encode(const Vector& query) const;

  const Matrix& frequencies() const { return frequencies_; }
  double scale() const { return scale_; }
  Index query_dim() const { return frequencies_.cols(); }
  Index width() const { return 2 * frequencies_.rows(); }

 private:
  Matrix frequencies_;
  double scale_ = 1.0;
};

// Reverse-mode differentiation over matrix-valued nodes. Nodes are appended
// in evaluation order, so a single reverse sweep is a valid topological order.
class Tape {
 public:
  struct Var {
    std::uint32_t id = 0;
  };

  Var constant(Matrix value);
  Var variable(Matrix value);

  Var affine(Var x, Var weight, Var bias);
  Var activate(Var x, Activation activation);
  Var add(Var a, Var b);
  Var scale(Var a, double factor);
  Var concat_cols(std::span<const Var> parts);
  Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice_cols(Var x, Index start, Index count);
  // Row r of the result is row rows[r] of x.
  Var gather_rows(Var x, std::vector<Index> rows);
  // Identity on values; blocks gradient flow into x.
  Var stop_gradient(Var x);
  // m is (batch x (n_index * out)), laid out index-major: column j*out + s.
  // Returns (batch x out) with entries sum_j m(b, j*out + s) * z_j.
  Var contract_index(Var m, const Vector& z);
  Var sum_squares(Var x);
  // Mean over groups of ||pred_g - target_g|| / (||target_g|| + eps), where
  // rows belong to group group_of_row[r] in [0, n_groups).
  Var relative_l2(Var pred, const Matrix& target, std::span<const Index> group_of_row,
                  Index n_groups, double eps);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Zero matrix of matching shape when no gradient reached the node.
  Matrix grad(Var v) const;

  void backward(Var scalar);
  void backward(std::span<const std::pair<Var, Matrix>> seeds);

  std::size_t size() const { return nodes_.size(); }

 private:
  using Pullback = std::function<void(Tape&, const Matrix& out_grad)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Pullback pullback;
  };

  Var push(Matrix value, bool requires_grad, Pullback pullback);
  void accumulate(Var v, const Matrix& g);
  void sweep();

  std::vector<Node> nodes_;
};

struct BoundLayer {
  Tape::Var weight;
  Tape::Var bias;
};

// Puts every layer of `params` on the tape, as variables when trainable.
std::vector<BoundLayer> bind(Tape& tape, const ParamTree& params, bool trainable);

// Gradient accumulated on the bound layers, shaped like `params`.
ParamTree collect_gradients(const Tape& tape, std::span<const BoundLayer> bound,
                            const ParamTree& params);

Tape::Var mlp(Tape& tape, std::span<const BoundLayer> layers, Tape::Var x, Activation activation);

using LossBuilder = std::function<Tape::Var(Tape&, std::span<const BoundLayer>)>;

struct ScalarGradient {
  double value = 0.0;
  ParamTree gradient;
};

// Evaluates loss(params) on a fresh tape and returns d loss / d params.
ScalarGradient grad_scalar(const LossBuilder& loss, const ParamTree& params);

struct LrSchedule {
  enum class Kind { kExponentialDecay, kWarmupCosine };

  Kind kind = Kind::kExponentialDecay;
  double base_rate = 1e-3;
  double decay_rate = 0.9;          // exponential: factor per decay_steps
  std::int64_t decay_steps = 1000;  // exponential
  std::int64_t warmup_steps = 0;    // warmup-cosine
  std::int64_t total_steps = 1;

  double rate(std::int64_t step) const;
  void validate() const;

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

double schedule_rate(const LrSchedule& schedule, std::int64_t step);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  ParamTree first_moment;
  ParamTree second_moment;
  std::int64_t steps = 0;

  static AdamState zeros_like(const ParamTree& params);
};

// One bias-corrected Adam update at learning rate schedule.rate(step).
void adam_step(ParamTree& params, AdamState& state, const ParamTree& grads,
               const LrSchedule& schedule, std::int64_t step, const AdamOptions& options = {});

}  // namespace neon::nn
