#include "neon/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "neon/error.hpp"

namespace neon::nn {

namespace {

// x * w^T + b with every entry built as the same fma chain over the inputs, so a
// row's value depends only on that row (not on batch size or position).
Matrix affine_rows(const Matrix& x, const Matrix& w, const double* bias) {
  const Index n = x.rows(), k = x.cols(), m = w.rows();
  Matrix out(n, m);
  Vector acc(m);
  for (Index i = 0; i < n; ++i) {
    double* a = acc.data();
    for (Index j = 0; j < m; ++j) a[j] = bias ? bias[j] : 0.0;
    for (Index c = 0; c < k; ++c) {
      const double xc = x(i, c);
      const double* wc = w.col(c).data();
      for (Index j = 0; j < m; ++j) a[j] = std::fma(xc, wc[j], a[j]);
    }
    out.row(i) = acc.transpose();
  }
  return out;
}

Matrix apply_activation(const Matrix& x, Activation a) {
  switch (a) {
    case Activation::kTanh:
      return x.array().tanh().matrix();
    case Activation::kRelu:
      return x.cwiseMax(0.0);
    case Activation::kSigmoid:
      return (1.0 / (1.0 + (-x.array()).exp())).matrix();
    case Activation::kLinear:
      return x;
  }
  return x;
}

// Derivative of the activation expressed through its output y.
Matrix activation_slope(const Matrix& y, Activation a) {
  switch (a) {
    case Activation::kTanh:
      return (1.0 - y.array().square()).matrix();
    case Activation::kRelu:
      return (y.array() > 0.0).cast<double>().matrix();
    case Activation::kSigmoid:
      return (y.array() * (1.0 - y.array())).matrix();
    case Activation::kLinear:
      return Matrix::Ones(y.rows(), y.cols());
  }
  return Matrix::Ones(y.rows(), y.cols());
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "linear" || name == "identity") return Activation::kLinear;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// ParamTree

void ParamTree::add(std::string name, Matrix weight, Vector bias) {
  if (weight.rows() != bias.size())
    throw DimensionError("layer '" + name + "': weight has " + std::to_string(weight.rows()) +
                         " rows but bias has " + std::to_string(bias.size()) + " entries");
  layers_.push_back({std::move(name), std::move(weight), std::move(bias)});
}

void ParamTree::append(const ParamTree& other) {
  for (const auto& l : other.layers_) layers_.push_back(l);
}

const Layer& ParamTree::at(std::string_view name) const {
  for (const auto& l : layers_)
    if (l.name == name) return l;
  throw LookupError("no layer named '" + std::string(name) + "'");
}

ParamTree ParamTree::slice(std::size_t first, std::size_t count) const {
  if (first + count > layers_.size()) throw DimensionError("ParamTree::slice out of range");
  ParamTree out;
  out.layers_.assign(layers_.begin() + static_cast<std::ptrdiff_t>(first),
                     layers_.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

std::size_t ParamTree::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

ParamTree ParamTree::zeros_like() const {
  ParamTree out;
  for (const auto& l : layers_)
    out.add(l.name, Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size()));
  return out;
}

bool ParamTree::same_shape(const ParamTree& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size())
      return false;
  }
  return true;
}

bool ParamTree::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const Layer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

std::uint64_t ParamTree::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& l : layers_) {
    feed(l.name.data(), l.name.size());
    const Index dims[2] = {l.weight.rows(), l.weight.cols()};
    feed(dims, sizeof(dims));
    feed(l.weight.data(), sizeof(double) * static_cast<std::size_t>(l.weight.size()));
    feed(l.bias.data(), sizeof(double) * static_cast<std::size_t>(l.bias.size()));
  }
  return h;
}

Vector ParamTree::flatten() const {
  Vector out(static_cast<Index>(parameter_count()));
  Index k = 0;
  for (const auto& l : layers_) {
    out.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

void ParamTree::unflatten(const Vector& flat) {
  if (flat.size() != static_cast<Index>(parameter_count()))
    throw DimensionError("ParamTree::unflatten: expected " + std::to_string(parameter_count()) +
                         " entries, got " + std::to_string(flat.size()));
  Index k = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = flat.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = flat.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

bool operator==(const ParamTree& a, const ParamTree& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].name != b.layers_[i].name) return false;
    if (a.layers_[i].weight != b.layers_[i].weight) return false;
    if (a.layers_[i].bias != b.layers_[i].bias) return false;
  }
  return true;
}

Layer glorot_layer(std::string name, Index in, Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(out, in);
  for (Index j = 0; j < in; ++j)
    for (Index i = 0; i < out; ++i) w(i, j) = dist(rng);
  return {std::move(name), std::move(w), Vector::Zero(out)};
}

ParamTree make_mlp(const std::string& prefix, Index in, std::span<const int> hidden, Index out,
                   Rng& rng) {
  ParamTree tree;
  Index width = in;
  std::size_t k = 0;
  for (int h : hidden) {
    auto l = glorot_layer(prefix + "." + std::to_string(k++), width, h, rng);
    tree.add(std::move(l.name), std::move(l.weight), std::move(l.bias));
    width = h;
  }
  auto l = glorot_layer(prefix + "." + std::to_string(k), width, out, rng);
  tree.add(std::move(l.name), std::move(l.weight), std::move(l.bias));
  return tree;
}

Vector mlp_forward(std::span<const Layer> layers, const Vector& x, Activation activation) {
  if (layers.empty()) throw DimensionError("mlp_forward: no layers");
  Vector h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.cols() != h.size())
      throw DimensionError("mlp_forward: layer '" + l.name + "' expects input width " +
                           std::to_string(l.weight.cols()) + ", got " + std::to_string(h.size()));
    Vector pre = affine_rows(Matrix(h.transpose()), l.weight, l.bias.data()).row(0).transpose();
    h = (i + 1 < layers.size()) ? Vector(apply_activation(pre, activation)) : pre;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Fourier features

FourierFeatureMap::FourierFeatureMap(Index n_freq, Index query_dim, double scale, Rng& rng)
    : frequencies_(n_freq, query_dim), scale_(scale) {
  if (!(scale > 0.0)) throw ConfigError("Fourier feature scale must be positive");
  std::normal_distribution<double> dist(0.0, scale);
  for (Index i = 0; i < n_freq; ++i)
    for (Index j = 0; j < query_dim; ++j) frequencies_(i, j) = dist(rng);
}

FourierFeatureMap::FourierFeatureMap(Matrix frequencies, double scale)
    : frequencies_(std::move(frequencies)), scale_(scale) {}

Matrix FourierFeatureMap::encode(const Matrix& queries) const {
  if (queries.cols() != query_dim())
    throw DimensionError("fourier_encode: query width " + std::to_string(queries.cols()) +
                         " != " + std::to_string(query_dim()));
  const Matrix phase = (2.0 * std::numbers::pi) * affine_rows(queries, frequencies_, nullptr);
  Matrix out(queries.rows(), width());
  out.leftCols(frequencies_.rows()) = phase.array().cos().matrix();
  out.rightCols(frequencies_.rows()) = phase.array().sin().matrix();
  return out;
}

Vector FourierFeatureMap::encode(const Vector& query) const {
  return encode(Matrix(query.transpose())).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Tape

Tape::Var Tape::push(Matrix value, bool requires_grad, Pullback pullback) {
  if (!value.allFinite())
    throw NumericError("non-finite value in node " + std::to_string(nodes_.size()) + " (" +
                       shape_str(value) + ")");
  nodes_.push_back({std::move(value), Matrix(), requires_grad, std::move(pullback)});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Tape::Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Tape::Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Tape::Var Tape::affine(Var x, Var weight, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(weight);
  const Matrix& bv = value(bias);
  if (xv.cols() != wv.cols() || bv.rows() != wv.rows() || bv.cols() != 1)
    throw DimensionError("affine: input " + shape_str(xv) + ", weight " + shape_str(wv) +
                         ", bias " + shape_str(bv));
  Matrix out = affine_rows(xv, wv, bv.data());
  const bool rg = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(out), rg, [x, weight, bias](Tape& t, const Matrix& g) {
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(weight));
    if (t.requires_grad(weight)) t.accumulate(weight, g.transpose() * t.value(x));
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum().transpose());
  });
}

Tape::Var Tape::activate(Var x, Activation activation) {
  if (activation == Activation::kLinear) return x;
  Matrix out = apply_activation(value(x), activation);
  const bool rg = requires_grad(x);
  const auto self = static_cast<std::uint32_t>(nodes_.size());
  return push(std::move(out), rg, [x, activation, self](Tape& t, const Matrix& g) {
    const Matrix slope = activation_slope(t.nodes_[self].value, activation);
    t.accumulate(x, g.cwiseProduct(slope));
  });
}

Tape::Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw DimensionError("add: " + shape_str(av) + " vs " + shape_str(bv));
  return push(av + bv, requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Tape::Var Tape::scale(Var a, double factor) {
  return push(value(a) * factor, requires_grad(a),
              [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Tape::Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = value(parts[0]).rows();
  Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    cols += value(p).cols();
    rg = rg || requires_grad(p);
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), rg, [ids = std::move(ids)](Tape& t, const Matrix& g) {
    Index c0 = 0;
    for (Var p : ids) {
      const Index w = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(c0, w));
      c0 += w;
    }
  });
}

Tape::Var Tape::slice_cols(Var x, Index start, Index count) {
  const Matrix& xv = value(x);
  if (start < 0 || count < 0 || start + count > xv.cols())
    throw DimensionError("slice_cols: range out of bounds");
  return push(xv.middleCols(start, count), requires_grad(x),
              [x, start, count](Tape& t, const Matrix& g) {
                Matrix full = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
                full.middleCols(start, count) = g;
                t.accumulate(x, full);
              });
}

Tape::Var Tape::gather_rows(Var x, std::vector<Index> rows) {
  const Matrix& xv = value(x);
  Matrix out(static_cast<Index>(rows.size()), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= xv.rows()) throw DimensionError("gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = xv.row(rows[r]);
  }
  return push(std::move(out), requires_grad(x), [x, rows = std::move(rows)](Tape& t, const Matrix& g) {
    Matrix acc = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
    for (std::size_t r = 0; r < rows.size(); ++r) acc.row(rows[r]) += g.row(static_cast<Index>(r));
    t.accumulate(x, acc);
  });
}

Tape::Var Tape::stop_gradient(Var x) { return push(value(x), false, nullptr); }

Tape::Var Tape::contract_index(Var m, const Vector& z) {
  const Matrix& mv = value(m);
  const Index nz = z.size();
  if (nz == 0 || mv.cols() % nz != 0)
    throw DimensionError("contract_index: " + shape_str(mv) + " with index of size " +
                         std::to_string(nz));
  const Index out_dim = mv.cols() / nz;
  Matrix out = Matrix::Zero(mv.rows(), out_dim);
  for (Index j = 0; j < nz; ++j) out += z(j) * mv.middleCols(j * out_dim, out_dim);
  return push(std::move(out), requires_grad(m), [m, z, out_dim](Tape& t, const Matrix& g) {
    Matrix gm(g.rows(), z.size() * out_dim);
    for (Index j = 0; j < z.size(); ++j) gm.middleCols(j * out_dim, out_dim) = z(j) * g;
    t.accumulate(m, gm);
  });
}

Tape::Var Tape::sum_squares(Var x) {
  Matrix out(1, 1);
  out(0, 0) = value(x).squaredNorm();
  return push(std::move(out), requires_grad(x),
              [x](Tape& t, const Matrix& g) { t.accumulate(x, 2.0 * g(0, 0) * t.value(x)); });
}

Tape::Var Tape::relative_l2(Var pred, const Matrix& target, std::span<const Index> group_of_row,
                            Index n_groups, double eps) {
  const Matrix& pv = value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols())
    throw DimensionError("relative_l2: prediction " + shape_str(pv) + " vs target " +
                         shape_str(target));
  if (static_cast<Index>(group_of_row.size()) != pv.rows() || n_groups < 1)
    throw DimensionError("relative_l2: group assignment does not cover the rows");
  Matrix resid = pv - target;
  Vector rnorm = Vector::Zero(n_groups);
  Vector tnorm = Vector::Zero(n_groups);
  for (Index r = 0; r < pv.rows(); ++r) {
    rnorm(group_of_row[r]) += resid.row(r).squaredNorm();
    tnorm(group_of_row[r]) += target.row(r).squaredNorm();
  }
  rnorm = rnorm.cwiseSqrt();
  tnorm = tnorm.cwiseSqrt();
  Matrix out(1, 1);
  out(0, 0) = (rnorm.array() / (tnorm.array() + eps)).sum() / static_cast<double>(n_groups);
  std::vector<Index> groups(group_of_row.begin(), group_of_row.end());
  return push(std::move(out), requires_grad(pred),
              [pred, resid = std::move(resid), rnorm, tnorm, groups = std::move(groups), n_groups,
               eps](Tape& t, const Matrix& g) {
                Matrix gp(resid.rows(), resid.cols());
                for (Index r = 0; r < resid.rows(); ++r) {
                  const Index k = groups[static_cast<std::size_t>(r)];
                  const double denom = rnorm(k) * (tnorm(k) + eps) * static_cast<double>(n_groups);
                  gp.row(r) = rnorm(k) > 0.0 ? Eigen::RowVectorXd(resid.row(r) * (g(0, 0) / denom))
                                             : Eigen::RowVectorXd::Zero(resid.cols());
                }
                t.accumulate(pred, gp);
              });
}

void Tape::sweep() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.pullback || n.grad.size() == 0) continue;
    // Pullbacks only accumulate into earlier nodes and never push new ones.
    n.pullback(*this, n.grad);
  }
}

void Tape::backward(Var scalar) {
  if (value(scalar).size() != 1) throw DimensionError("backward: output is not a scalar");
  const std::pair<Var, Matrix> seed{scalar, Matrix::Ones(1, 1)};
  backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  for (auto& n : nodes_) n.grad.resize(0, 0);
  for (const auto& [v, g] : seeds) {
    const Matrix& val = value(v);
    if (g.rows() != val.rows() || g.cols() != val.cols())
      throw DimensionError("backward: seed shape " + shape_str(g) + " vs node " + shape_str(val));
    accumulate(v, g);
  }
  sweep();
}

std::vector<BoundLayer> bind(Tape& tape, const ParamTree& params, bool trainable) {
  std::vector<BoundLayer> out;
  out.reserve(params.size());
  for (const auto& l : params.layers()) {
    if (trainable)
      out.push_back({tape.variable(l.weight), tape.variable(Matrix(l.bias))});
    else
      out.push_back({tape.constant(l.weight), tape.constant(Matrix(l.bias))});
  }
  return out;
}

ParamTree collect_gradients(const Tape& tape, std::span<const BoundLayer> bound,
                            const ParamTree& params) {
  if (bound.size() != params.size()) throw DimensionError("collect_gradients: size mismatch");
  ParamTree out;
  for (std::size_t i = 0; i < bound.size(); ++i)
    out.add(params[i].name, tape.grad(bound[i].weight), tape.grad(bound[i].bias).col(0));
  return out;
}

Tape::Var mlp(Tape& tape, std::span<const BoundLayer> layers, Tape::Var x, Activation activation) {
  if (layers.empty()) throw DimensionError("mlp: no layers");
  Tape::Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = tape.affine(h, layers[i].weight, layers[i].bias);
    if (i + 1 < layers.size()) h = tape.activate(h, activation);
  }
  return h;
}

ScalarGradient grad_scalar(const LossBuilder& loss, const ParamTree& params) {
  Tape tape;
  const auto bound = bind(tape, params, true);
  const Tape::Var out = loss(tape, bound);
  tape.backward(out);
  return {tape.value(out)(0, 0), collect_gradients(tape, bound, params)};
}

// ---------------------------------------------------------------------------
// Schedules and Adam

double LrSchedule::rate(std::int64_t step) const {
  const auto s = static_cast<double>(std::max<std::int64_t>(step, 0));
  switch (kind) {
    case Kind::kExponentialDecay:
      return base_rate * std::pow(decay_rate, s / static_cast<double>(decay_steps));
    case Kind::kWarmupCosine: {
      if (step < warmup_steps)
        return base_rate * (s + 1.0) / static_cast<double>(warmup_steps);
      const double span = static_cast<double>(std::max<std::int64_t>(total_steps - warmup_steps, 1));
      const double progress = std::min(1.0, (s - static_cast<double>(warmup_steps)) / span);
      return base_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
  }
  return base_rate;
}

void LrSchedule::validate() const {
  if (!(base_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (total_steps < 1) throw ConfigError("schedule total_steps must be >= 1");
  if (kind == Kind::kExponentialDecay) {
    if (!(decay_rate > 0.0)) throw ConfigError("decay rate must be positive");
    if (decay_steps < 1) throw ConfigError("decay steps must be >= 1");
  } else if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ConfigError("warmup steps must lie in [0, total_steps)");
  }
}

double schedule_rate(const LrSchedule& schedule, std::int64_t step) { return schedule.rate(step); }

AdamState AdamState::zeros_like(const ParamTree& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamTree& params, AdamState& state, const ParamTree& grads,
               const LrSchedule& schedule, std::int64_t step, const AdamOptions& options) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment))
    throw DimensionError("adam_step: parameter, gradient and moment shapes differ");
  state.steps += 1;
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  const double lr = schedule.rate(step);
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = options.beta1 * m + (1.0 - options.beta1) * g;
    v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options.epsilon);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(params[i].weight, state.first_moment[i].weight, state.second_moment[i].weight,
           grads[i].weight);
    update(params[i].bias, state.first_moment[i].bias, state.second_moment[i].bias, grads[i].bias);
  }
}

}  // namespace neon::nn
