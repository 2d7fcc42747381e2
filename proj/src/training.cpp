#include "neon/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "neon/error.hpp"

namespace neon {

using nn::Tape;

// ---------------------------------------------------------------------------
// Dataset

void Dataset::add(const Vector& u, Matrix field) {
  if (size() == 0 && inputs.cols() == 0) inputs.resize(0, u.size());
  if (u.size() != inputs.cols()) throw DimensionError("Dataset::add: input length mismatch");
  if (field.rows() != queries.rows())
    throw DimensionError("Dataset::add: field has " + std::to_string(field.rows()) +
                         " rows, grid has " + std::to_string(queries.rows()));
  if (!targets.empty() && field.cols() != targets.front().cols())
    throw DimensionError("Dataset::add: channel count mismatch");
  inputs.conservativeResize(inputs.rows() + 1, Eigen::NoChange);
  inputs.row(inputs.rows() - 1) = u.transpose();
  targets.push_back(std::move(field));
}

void Dataset::validate() const {
  if (size() < 1) throw ConfigError("dataset is empty");
  if (static_cast<Index>(targets.size()) != size())
    throw DimensionError("dataset: target count does not match input count");
  for (const auto& t : targets)
    if (t.rows() != grid_size() || t.cols() != output_dim())
      throw DimensionError("dataset: targets do not share the query grid");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("cannot format value");
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("dataset CSV: cannot parse number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  data.validate();
  out << "id";
  for (Index i = 0; i < data.input_dim(); ++i) out << ",u_" << i + 1;
  for (Index i = 0; i < data.query_dim(); ++i) out << ",y_" << i + 1;
  for (Index i = 0; i < data.output_dim(); ++i) out << ",s_" << i + 1;
  out << '\n';
  for (Index n = 0; n < data.size(); ++n) {
    for (Index j = 0; j < data.grid_size(); ++j) {
      out << n;
      for (Index i = 0; i < data.input_dim(); ++i) out << ',' << format_double(data.inputs(n, i));
      for (Index i = 0; i < data.query_dim(); ++i) out << ',' << format_double(data.queries(j, i));
      for (Index i = 0; i < data.output_dim(); ++i)
        out << ',' << format_double(data.targets[static_cast<std::size_t>(n)](j, i));
      out << '\n';
    }
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset CSV: missing header");
  const auto header = split_commas(line);
  if (header.empty() || header[0].substr(0, 2) != "id")
    throw ConfigError("dataset CSV: first column must be 'id'");
  Index du = 0, dy = 0, ds = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto h = header[c];
    const bool ordered = (h.rfind("u_", 0) == 0 && dy == 0 && ds == 0) ||
                         (h.rfind("y_", 0) == 0 && ds == 0) || h.rfind("s_", 0) == 0;
    if (!ordered) throw ConfigError("dataset CSV: unexpected column '" + std::string(h) + "'");
    if (h.rfind("u_", 0) == 0) ++du;
    else if (h.rfind("y_", 0) == 0) ++dy;
    else ++ds;
  }
  if (du < 1 || dy < 1 || ds < 1)
    throw ConfigError("dataset CSV: need at least one u_, y_ and s_ column");

  std::vector<std::string> order;
  std::map<std::string, std::size_t> slot;
  std::vector<Vector> inputs;
  std::vector<std::vector<Vector>> points, values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size())
      throw ConfigError("dataset CSV line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " fields");
    std::string id(cells[0]);
    Vector u(du), y(dy), s(ds);
    for (Index i = 0; i < du; ++i) u(i) = parse_double(cells[1 + static_cast<std::size_t>(i)]);
    for (Index i = 0; i < dy; ++i) y(i) = parse_double(cells[1 + static_cast<std::size_t>(du + i)]);
    for (Index i = 0; i < ds; ++i)
      s(i) = parse_double(cells[1 + static_cast<std::size_t>(du + dy + i)]);
    auto it = slot.find(id);
    if (it == slot.end()) {
      it = slot.emplace(id, order.size()).first;
      order.push_back(id);
      inputs.push_back(u);
      points.emplace_back();
      values.emplace_back();
    } else if (inputs[it->second] != u) {
      throw ConfigError("dataset CSV line " + std::to_string(lineno) + ": instance '" + id +
                        "' changes its input");
    }
    points[it->second].push_back(y);
    values[it->second].push_back(s);
  }
  if (order.empty()) throw ConfigError("dataset CSV: no rows");

  Dataset data;
  const auto m = static_cast<Index>(points[0].size());
  data.queries.resize(m, dy);
  for (Index j = 0; j < m; ++j) data.queries.row(j) = points[0][static_cast<std::size_t>(j)].transpose();
  data.inputs.resize(0, du);
  for (std::size_t n = 0; n < order.size(); ++n) {
    if (points[n] != points[0])
      throw ConfigError("dataset CSV: instance '" + order[n] + "' does not share the query grid");
    Matrix field(m, ds);
    for (Index j = 0; j < m; ++j) field.row(j) = values[n][static_cast<std::size_t>(j)].transpose();
    data.add(inputs[n], std::move(field));
  }
  return data;
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  write_dataset_csv(out, data);
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return read_dataset_csv(in);
}

// ---------------------------------------------------------------------------
// Normalizer

Normalizer Normalizer::fit(const Dataset& data, const BoxDomain& input_box,
                           const BoxDomain& query_box) {
  data.validate();
  if (input_box.dim() != data.input_dim() || query_box.dim() != data.query_dim())
    throw DimensionError("Normalizer::fit: box dimensions do not match the dataset");
  const Index ds = data.output_dim();
  Vector mean = Vector::Zero(ds);
  double count = 0.0;
  for (const auto& t : data.targets) {
    mean += t.colwise().sum().transpose();
    count += static_cast<double>(t.rows());
  }
  mean /= count;
  Vector var = Vector::Zero(ds);
  for (const auto& t : data.targets)
    var += (t.rowwise() - mean.transpose()).colwise().squaredNorm().transpose();
  var /= count;
  Vector std = var.cwiseSqrt();
  for (Index c = 0; c < ds; ++c)
    if (!(std(c) > 1e-12 * (1.0 + std::abs(mean(c))))) std(c) = 1.0;
  return {input_box, query_box, mean, std};
}

Vector Normalizer::normalize_input(const Vector& u) const {
  return ((u - input_box.lower).array() / input_box.width().array()).matrix();
}

Vector Normalizer::denormalize_input(const Vector& x) const {
  return input_box.lower + (x.array() * input_box.width().array()).matrix();
}

Matrix Normalizer::normalize_queries(const Matrix& y) const {
  Matrix out = y.rowwise() - query_box.lower.transpose();
  return out.array().rowwise() / query_box.width().transpose().array();
}

Matrix Normalizer::normalize_targets(const Matrix& s) const {
  Matrix out = s.rowwise() - target_mean.transpose();
  return out.array().rowwise() / target_std.transpose().array();
}

Matrix Normalizer::denormalize_targets(const Matrix& s) const {
  Matrix out = s.array().rowwise() * target_std.transpose().array();
  return out.rowwise() + target_mean.transpose();
}

Dataset Normalizer::normalize(const Dataset& data) const {
  Dataset out;
  out.queries = normalize_queries(data.queries);
  out.inputs.resize(data.size(), data.input_dim());
  for (Index n = 0; n < data.size(); ++n)
    out.inputs.row(n) = normalize_input(data.inputs.row(n).transpose()).transpose();
  for (const auto& t : data.targets) out.targets.push_back(normalize_targets(t));
  return out;
}

Dataset Normalizer::denormalize(const Dataset& data) const {
  Dataset out;
  out.queries = query_box.lower.transpose().replicate(data.grid_size(), 1) +
                Matrix(data.queries.array().rowwise() * query_box.width().transpose().array());
  out.inputs.resize(data.size(), data.input_dim());
  for (Index n = 0; n < data.size(); ++n)
    out.inputs.row(n) = denormalize_input(data.inputs.row(n).transpose()).transpose();
  for (const auto& t : data.targets) out.targets.push_back(denormalize_targets(t));
  return out;
}

double relative_l2_loss(const Matrix& pred, const Matrix& target, double eps) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DimensionError("relative_l2_loss: shape mismatch");
  return (pred - target).norm() / (target.norm() + eps);
}

// ---------------------------------------------------------------------------
// Training loop

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("training steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (index_samples < 1) throw ConfigError("index samples per step must be >= 1");
}

namespace {

struct Minibatch {
  Matrix inputs;                       // U x d_u
  std::vector<Index> instance_of_row;  // B entries in [0, U)
  QueryBatch queries;                  // B rows
  Matrix targets;                      // B x d_s
  Index groups = 0;
};

class PairSampler {
 public:
  PairSampler(const Dataset& data, const QueryBatch& grid, Index batch_size)
      : data_(data), grid_(grid), batch_(batch_size) {
    const Index total = data.size() * data.grid_size();
    pairs_.resize(static_cast<std::size_t>(total));
    std::iota(pairs_.begin(), pairs_.end(), Index{0});
    if (batch_ >= total) {
      full_ = assemble(pairs_);
      full_batch_ = true;
    }
  }

  const Minibatch& next(Rng& rng) {
    if (full_batch_) return full_;
    // Partial Fisher-Yates: the first batch_ entries are a uniform sample
    // without replacement.
    const auto n = pairs_.size();
    for (std::size_t i = 0; i < static_cast<std::size_t>(batch_); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pairs_[i], pairs_[pick(rng)]);
    }
    std::vector<Index> chosen(pairs_.begin(), pairs_.begin() + batch_);
    std::sort(chosen.begin(), chosen.end());
    current_ = assemble(chosen);
    return current_;
  }

 private:
  Minibatch assemble(const std::vector<Index>& chosen) const {
    const Index m = data_.grid_size();
    Minibatch b;
    const auto rows = static_cast<Index>(chosen.size());
    b.queries.points.resize(rows, grid_.points.cols());
    b.queries.encoded.resize(rows, grid_.encoded.cols());
    b.targets.resize(rows, data_.output_dim());
    b.instance_of_row.resize(chosen.size());
    std::vector<Index> local(static_cast<std::size_t>(data_.size()), -1);
    std::vector<Index> instances;
    for (Index r = 0; r < rows; ++r) {
      const Index p = chosen[static_cast<std::size_t>(r)];
      const Index inst = p / m;
      const Index pt = p % m;
      if (local[static_cast<std::size_t>(inst)] < 0) {
        local[static_cast<std::size_t>(inst)] = static_cast<Index>(instances.size());
        instances.push_back(inst);
      }
      b.instance_of_row[static_cast<std::size_t>(r)] = local[static_cast<std::size_t>(inst)];
      b.queries.points.row(r) = grid_.points.row(pt);
      b.queries.encoded.row(r) = grid_.encoded.row(pt);
      b.targets.row(r) = data_.targets[static_cast<std::size_t>(inst)].row(pt);
    }
    b.groups = static_cast<Index>(instances.size());
    b.inputs.resize(b.groups, data_.input_dim());
    for (Index k = 0; k < b.groups; ++k)
      b.inputs.row(k) = data_.inputs.row(instances[static_cast<std::size_t>(k)]);
    return b;
  }

  const Dataset& data_;
  const QueryBatch& grid_;
  Index batch_;
  std::vector<Index> pairs_;
  bool full_batch_ = false;
  Minibatch full_;
  Minibatch current_;
};

using StepLoss =
    std::function<Tape::Var(Tape&, std::span<const nn::BoundLayer>, const Minibatch&, Rng&)>;

FitResult adam_loop(nn::ParamTree& params, const Dataset& data, const QueryBatch& grid,
                    const TrainConfig& config, const StepLoss& loss) {
  data.validate();
  config.validate();
  nn::LrSchedule schedule = config.schedule;
  schedule.total_steps = config.steps;
  schedule.validate();

  Rng rng(config.seed);
  PairSampler sampler(data, grid, config.batch_size);
  nn::AdamState state = nn::AdamState::zeros_like(params);
  FitResult result;
  result.loss_history.reserve(static_cast<std::size_t>(config.steps));
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const Minibatch& batch = sampler.next(rng);
    Tape tape;
    const auto bound = nn::bind(tape, params, true);
    Tape::Var total{};
    try {
      total = loss(tape, bound, batch, rng);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    const double value = tape.value(total)(0, 0);
    if (!std::isfinite(value))
      throw NumericError("training aborted at step " + std::to_string(step) + ": loss is " +
                         std::to_string(value));
    result.loss_history.push_back(value);
    tape.backward(total);
    const nn::ParamTree grads = nn::collect_gradients(tape, bound, params);
    nn::adam_step(params, state, grads, schedule, step);
    if (!params.all_finite())
      throw NumericError("training aborted at step " + std::to_string(step) +
                         ": parameters became non-finite");
  }
  return result;
}

}  // namespace

FitResult fit(NeonModel& model, const Dataset& data, const TrainConfig& config) {
  const QueryBatch grid = model.base().make_queries(data.queries);
  const nn::ParamTree& prior = model.head().packed_prior();
  const Index d_z = model.index_dim();
  const Index k = config.index_samples;
  return adam_loop(model.params(), data, grid, config,
                   [&](Tape& tape, std::span<const nn::BoundLayer> bound, const Minibatch& b,
                       Rng& rng) {
                     const auto prior_bound = nn::bind(tape, prior, false);
                     const auto out =
                         model.forward(tape, bound, prior_bound, tape.constant(b.inputs),
                                       b.instance_of_row, b.queries, /*stop_gradient=*/true);
                     Tape::Var sum{};
                     for (Index i = 0; i < k; ++i) {
                       const Vector z = sample_index(d_z, rng);
                       const Tape::Var l =
                           tape.relative_l2(model.predict(tape, out, z), b.targets,
                                            b.instance_of_row, b.groups, kRelativeLossEps);
                       sum = i == 0 ? l : tape.add(sum, l);
                     }
                     return tape.scale(sum, 1.0 / static_cast<double>(k));
                   });
}

FitResult fit(const OperatorNet& arch, nn::ParamTree& params, const Dataset& data,
              const TrainConfig& config) {
  const QueryBatch grid = arch.make_queries(data.queries);
  return adam_loop(params, data, grid, config,
                   [&](Tape& tape, std::span<const nn::BoundLayer> bound, const Minibatch& b,
                       Rng&) {
                     const auto out = arch.forward(tape, bound, tape.constant(b.inputs),
                                                   b.instance_of_row, b.queries);
                     return tape.relative_l2(out.prediction, b.targets, b.instance_of_row,
                                             b.groups, kRelativeLossEps);
                   });
}

FitResult fit(EnsembleEnn& ensemble, const Dataset& data, const TrainConfig& config) {
  FitResult all;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    TrainConfig member = config;
    member.seed = derive_seed(config.seed, {i});
    const FitResult r = fit(ensemble.arch(), ensemble.member(i), data, member);
    if (all.loss_history.empty()) all.loss_history.assign(r.loss_history.size(), 0.0);
    for (std::size_t s = 0; s < r.loss_history.size(); ++s)
      all.loss_history[s] += r.loss_history[s] / static_cast<double>(ensemble.size());
  }
  return all;
}

}  // namespace neon
