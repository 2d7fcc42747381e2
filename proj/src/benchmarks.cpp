#include "neon/benchmarks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "neon/error.hpp"

namespace neon {

namespace {

constexpr double kPi = std::numbers::pi;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sum_exp(const Vector& v, Vector* softmax) {
  const double m = v.maxCoeff();
  const Vector e = (v.array() - m).exp();
  const double s = e.sum();
  if (softmax) *softmax = e / s;
  return m + std::log(s);
}

std::string format_vector(const Vector& u) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (Index i = 0; i < u.size(); ++i) os << (i ? ", " : "") << u(i);
  os << ')';
  return os.str();
}

BoxDomain bounding_box(const Matrix& points) {
  Vector lo = points.colwise().minCoeff().transpose();
  Vector hi = points.colwise().maxCoeff().transpose();
  for (Index i = 0; i < lo.size(); ++i)
    if (!(lo(i) < hi(i))) {
      lo(i) -= 0.5;
      hi(i) += 0.5;
    }
  return {lo, hi};
}

}  // namespace

// ---------------------------------------------------------------------------
// Environment model

Matrix EnvModelSpec::grid() const {
  Matrix g(positions.size() * times.size(), 2);
  Index r = 0;
  for (Index i = 0; i < positions.size(); ++i)
    for (Index j = 0; j < times.size(); ++j) {
      g(r, 0) = positions(i);
      g(r, 1) = times(j);
      ++r;
    }
  return g;
}

BoxDomain EnvModelSpec::grid_box() const {
  return {Vector{{positions.minCoeff(), times.minCoeff()}},
          Vector{{positions.maxCoeff(), times.maxCoeff()}}};
}

double env_model_field(const Vector& u, double s, double t) {
  if (u.size() != 4) throw DimensionError("env_model_field: u must be (M, D, L, tau)");
  if (!(t > 0.0)) throw DomainError("env_model_field: t must be > 0, got " + std::to_string(t));
  const double m = u(0), d = u(1), l = u(2), tau = u(3);
  double c = m / (2.0 * std::sqrt(kPi * d * t)) * std::exp(-s * s / (4.0 * d * t));
  if (t > tau) {
    const double dt = t - tau;
    c += m / (2.0 * std::sqrt(kPi * d * dt)) * std::exp(-(s - l) * (s - l) / (4.0 * d * dt));
  }
  return c;
}

Matrix env_model_fields(const Vector& u, const Matrix& grid) {
  if (grid.cols() != 2) throw DimensionError("env_model_fields: grid rows must be (s, t)");
  Matrix f(grid.rows(), 1);
  for (Index r = 0; r < grid.rows(); ++r) f(r, 0) = env_model_field(u, grid(r, 0), grid(r, 1));
  return f;
}

double env_model_objective(const Matrix& field, const Matrix& truth, Matrix* grad) {
  if (field.rows() != truth.rows() || field.cols() != truth.cols())
    throw DimensionError("env_model_objective: field and truth grids differ");
  const Matrix diff = field - truth;
  if (grad) *grad = -2.0 * diff;
  return 0.0 - diff.squaredNorm();
}

// ---------------------------------------------------------------------------
// Brusselator

void BrusselatorSpec::validate() const {
  if (resolution < 3) throw ConfigError("brusselator resolution must be >= 3");
  if (noise_lattice < 1 || resolution % noise_lattice != 0)
    throw ConfigError("brusselator resolution must be a multiple of the noise lattice");
  if (!(horizon > 0.0)) throw ConfigError("brusselator horizon must be > 0");
  if (!(safety > 0.0) || !(max_dt > 0.0)) throw ConfigError("brusselator step controls must be > 0");
}

Matrix BrusselatorSpec::grid() const {
  const Index n = resolution;
  Matrix g(n * n, 2);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      g(i * n + j, 0) = static_cast<double>(i) / static_cast<double>(n);
      g(i * n + j, 1) = static_cast<double>(j) / static_cast<double>(n);
    }
  return g;
}

BoxDomain BrusselatorSpec::grid_box() const { return {Vector::Zero(2), Vector::Ones(2)}; }

double BrusselatorSpec::time_step(double d0, double d1) const {
  const double h = 1.0 / static_cast<double>(resolution);
  const double cfl = std::min(safety, 1.0) * h * h / (4.0 * std::max(d0, d1));
  const double dt = std::min(max_dt, cfl);
  const auto steps = static_cast<std::int64_t>(std::ceil(horizon / dt));
  return horizon / static_cast<double>(steps);
}

std::uint64_t brusselator_noise_seed(const Vector& params) {
  std::uint64_t h = 0x42525553534c4154ULL;
  for (Index i = 0; i < params.size(); ++i) h = mix64(h ^ std::bit_cast<std::uint64_t>(params(i)));
  return h;
}

Matrix brusselator_initial_state(const Vector& params, const BrusselatorSpec& spec) {
  spec.validate();
  if (params.size() != 4) throw DimensionError("brusselator: parameters must be (a, b, D0, D1)");
  const double a = params(0), b = params(1);
  const Index n = spec.resolution, lat = spec.noise_lattice, block = n / lat;
  Rng rng(brusselator_noise_seed(params));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(lat, lat);
  for (Index i = 0; i < lat; ++i)
    for (Index j = 0; j < lat; ++j) noise(i, j) = normal(rng);
  Matrix state(n * n, 2);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      state(i * n + j, 0) = a;
      state(i * n + j, 1) = b / a + spec.noise_amplitude * noise(i / block, j / block);
    }
  return state;
}

Matrix brusselator_solve(const Vector& params, const BrusselatorSpec& spec) {
  Matrix state = brusselator_initial_state(params, spec);
  const double a = params(0), b = params(1), d0 = params(2), d1 = params(3);
  if (!(d0 > 0.0 && d1 > 0.0)) throw DomainError("brusselator: diffusivities must be > 0");
  const Index n = spec.resolution;
  const double h = 1.0 / static_cast<double>(n);
  const double dt = spec.time_step(d0, d1);
  const auto steps = static_cast<std::int64_t>(std::llround(spec.horizon / dt));
  const double ku = dt * d0 / (h * h), kv = dt * d1 / (h * h);

  std::vector<double> u(state.col(0).data(), state.col(0).data() + n * n);
  std::vector<double> v(state.col(1).data(), state.col(1).data() + n * n);
  std::vector<double> un(u.size()), vn(v.size());
  const auto idx = [n](Index i, Index j) { return static_cast<std::size_t>(i * n + j); };

  for (std::int64_t step = 0; step < steps; ++step) {
    for (Index i = 0; i < n; ++i) {
      const Index im = i == 0 ? n - 1 : i - 1, ip = i == n - 1 ? 0 : i + 1;
      for (Index j = 0; j < n; ++j) {
        const Index jm = j == 0 ? n - 1 : j - 1, jp = j == n - 1 ? 0 : j + 1;
        const std::size_t c = idx(i, j);
        const double uc = u[c], vc = v[c];
        const double lu = (u[idx(im, j)] + u[idx(ip, j)] - 2.0 * uc) +
                          (u[idx(i, jm)] + u[idx(i, jp)] - 2.0 * uc);
        const double lv = (v[idx(im, j)] + v[idx(ip, j)] - 2.0 * vc) +
                          (v[idx(i, jm)] + v[idx(i, jp)] - 2.0 * vc);
        const double uuv = uc * uc * vc;
        un[c] = uc + ku * lu + dt * (a - (1.0 + b) * uc + uuv);
        vn[c] = vc + kv * lv + dt * (b * uc - uuv);
      }
    }
    u.swap(un);
    v.swap(vn);
    if ((step & 1023) == 1023 || step + 1 == steps) {
      for (std::size_t c = 0; c < u.size(); ++c)
        if (!std::isfinite(u[c]) || !std::isfinite(v[c]))
          throw NumericError("brusselator: non-finite state at step " + std::to_string(step + 1) +
                             " (t = " + std::to_string(static_cast<double>(step + 1) * dt) +
                             ", dt = " + std::to_string(dt) + ") for parameters " +
                             format_vector(params));
    }
  }
  Matrix out(n * n, 2);
  for (std::size_t c = 0; c < u.size(); ++c) {
    out(static_cast<Index>(c), 0) = u[c];
    out(static_cast<Index>(c), 1) = v[c];
  }
  return out;
}

double weighted_variance(const Matrix& field, double weight_u, double weight_v, Matrix* grad) {
  if (field.cols() != 2) throw DimensionError("weighted_variance: expected two channels");
  const Index m = field.rows();
  if (m < 1) throw DimensionError("weighted_variance: empty field");
  const double inv_m = 1.0 / static_cast<double>(m);
  // Shift by the first row so constant channels give exactly zero.
  const Matrix shifted = field.rowwise() - field.row(0);
  const Eigen::RowVectorXd mean = shifted.colwise().sum() * inv_m;
  const Matrix dev = shifted.rowwise() - mean;
  const double w[2] = {weight_u, weight_v};
  double total = 0.0;
  for (Index c = 0; c < 2; ++c) total += w[c] * dev.col(c).squaredNorm() * inv_m;
  if (grad) {
    grad->resize(m, 2);
    for (Index c = 0; c < 2; ++c) grad->col(c) = (2.0 * w[c] * inv_m) * dev.col(c);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Quadrature

Vector cell_area_weights(const Matrix& grid) {
  if (grid.rows() < 1) throw DimensionError("cell_area_weights: empty grid");
  double area = 1.0;
  Index cells = 1;
  for (Index c = 0; c < grid.cols(); ++c) {
    const std::set<double> values(grid.col(c).data(), grid.col(c).data() + grid.rows());
    const auto n = static_cast<Index>(values.size());
    if (n > 1) area *= (*values.rbegin() - *values.begin()) / static_cast<double>(n - 1);
    cells *= n;
  }
  if (cells != grid.rows())
    throw DimensionError("cell_area_weights: points do not form a tensor grid");
  return Vector::Constant(grid.rows(), area);
}

// ---------------------------------------------------------------------------
// Interferometer

namespace {

Vector gaussian_window(const Matrix& grid) {
  if (grid.cols() != 2) throw DimensionError("interferometer: grid must be two-dimensional");
  const Vector w = cell_area_weights(grid);
  Vector window(grid.rows());
  for (Index r = 0; r < grid.rows(); ++r) {
    const double dx = grid(r, 0) - 0.5, dy = grid(r, 1) - 0.5;
    window(r) = w(r) * std::exp(-dx * dx - dy * dy);
  }
  return window;
}

double visibility_windowed(const Matrix& field, const Vector& window, Matrix* grad) {
  if (field.rows() != window.size()) throw DimensionError("interferometer: field/grid mismatch");
  const Vector intensity = field.transpose() * window;
  Vector p_max, p_min;
  const double i_max = log_sum_exp(intensity, &p_max);
  const double i_min = -log_sum_exp(-intensity, &p_min);
  const double s = i_max + i_min;
  if (!(s > 0.0))
    throw NumericError("visibility: I_max + I_min = " + std::to_string(s) + " is not positive");
  if (grad) {
    const double d_max = 2.0 * i_min / (s * s), d_min = -2.0 * i_max / (s * s);
    *grad = window * (d_max * p_max + d_min * p_min).transpose();
  }
  return (i_max - i_min) / s;
}

}  // namespace

Vector interferometer_intensities(const Matrix& field, const Matrix& grid) {
  const Vector window = gaussian_window(grid);
  if (field.rows() != window.size()) throw DimensionError("interferometer: field/grid mismatch");
  return field.transpose() * window;
}

double visibility(const Matrix& field, const Matrix& grid, Matrix* grad) {
  return visibility_windowed(field, gaussian_window(grid), grad);
}

// ---------------------------------------------------------------------------
// Cell towers

namespace {

CoverageTerms coverage_weighted(const Matrix& field, const Vector& w, const CoverageSpec& spec,
                                Matrix* grad) {
  if (field.cols() != 2) throw DimensionError("cell coverage: expected channels (R, I)");
  if (field.rows() != w.size()) throw DimensionError("cell coverage: field/grid mismatch");
  auto dsig = [](double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
  };
  CoverageTerms t;
  if (grad) grad->resize(field.rows(), 2);
  for (Index k = 0; k < field.rows(); ++k) {
    const double r = field(k, 0), i = field(k, 1);
    const double x1 = r - spec.weak_threshold, x2 = i + spec.strong_threshold - r;
    const double area = sigmoid(x1) * sigmoid(x2);
    const double inner = i * area + spec.weak_threshold - r * area;
    t.strong += w(k) * sigmoid(spec.weak_threshold - r);
    t.weak += w(k) * sigmoid(inner);
    if (grad) {
      const double da_dr = dsig(x1) * sigmoid(x2) - sigmoid(x1) * dsig(x2);
      const double da_di = sigmoid(x1) * dsig(x2);
      const double outer = dsig(inner);
      const double dstrong_dr = -dsig(spec.weak_threshold - r);
      const double dweak_dr = outer * (-area + (i - r) * da_dr);
      const double dweak_di = outer * (area + (i - r) * da_di);
      (*grad)(k, 0) = w(k) * (spec.mix * dstrong_dr + (1.0 - spec.mix) * dweak_dr);
      (*grad)(k, 1) = w(k) * (1.0 - spec.mix) * dweak_di;
    }
  }
  t.objective = spec.mix * t.strong + (1.0 - spec.mix) * t.weak;
  return t;
}

}  // namespace

CoverageTerms cell_coverage_terms(const Matrix& field, const Matrix& grid, const CoverageSpec& spec) {
  if (field.rows() != grid.rows()) throw DimensionError("cell coverage: field/grid mismatch");
  return coverage_weighted(field, cell_area_weights(grid), spec, nullptr);
}

double cell_coverage_objective(const Matrix& field, const Matrix& grid, const CoverageSpec& spec,
                               Matrix* grad) {
  if (field.rows() != grid.rows()) throw DimensionError("cell coverage: field/grid mismatch");
  return coverage_weighted(field, cell_area_weights(grid), spec, grad).objective;
}

// ---------------------------------------------------------------------------
// File-backed fields

FileFieldProvider::FileFieldProvider(Dataset data) : data_(std::move(data)) {
  data_.validate();
  for (Index n = 0; n < data_.size(); ++n) {
    const Vector u = data_.inputs.row(n).transpose();
    std::vector<double> key(u.data(), u.data() + u.size());
    if (!index_.emplace(std::move(key), n).second)
      throw ConfigError("field file: duplicate input " + format_vector(u));
  }
}

bool FileFieldProvider::contains(const Vector& u) const {
  return index_.count(std::vector<double>(u.data(), u.data() + u.size())) > 0;
}

Matrix FileFieldProvider::operator()(const Vector& u) const {
  const auto it = index_.find(std::vector<double>(u.data(), u.data() + u.size()));
  if (it == index_.end()) throw LookupError("no tabulated field for u = " + format_vector(u));
  return data_.targets[static_cast<std::size_t>(it->second)];
}

FileFieldProvider load_field_provider(const std::filesystem::path& path) {
  return FileFieldProvider(load_dataset_csv(path));
}

// ---------------------------------------------------------------------------
// Registry

const std::vector<std::string>& problem_ids() {
  static const std::vector<std::string> ids{"env_model", "brusselator", "interferometer_g",
                                            "cell_towers_g"};
  return ids;
}

namespace {

Problem file_problem(std::string id, const ProblemOptions& options, const BoxDomain& declared) {
  if (options.field_file.empty())
    throw ConfigError("problem '" + id + "' needs a field file");
  auto provider = std::make_shared<FileFieldProvider>(load_field_provider(options.field_file));
  const Dataset& data = provider->data();
  Problem p;
  p.id = std::move(id);
  p.candidates = data.inputs;
  bool inside = declared.dim() == data.input_dim();
  for (Index n = 0; inside && n < data.size(); ++n)
    inside = declared.contains(data.inputs.row(n).transpose());
  p.domain = inside ? declared : bounding_box(data.inputs);
  p.grid = data.queries;
  p.grid_box = bounding_box(data.queries);
  p.output_dim = data.output_dim();
  p.field = [provider](const Vector& u) { return (*provider)(u); };
  return p;
}

}  // namespace

Problem make_problem(std::string_view id, const ProblemOptions& options) {
  if (id == "env_model") {
    const EnvModelSpec spec;
    Problem p;
    p.id = "env_model";
    p.domain = spec.domain;
    p.grid = spec.grid();
    p.grid_box = spec.grid_box();
    p.output_dim = 1;
    const Matrix grid = p.grid;
    const Matrix truth = env_model_fields(spec.u_true, grid);
    p.field = [grid](const Vector& u) { return env_model_fields(u, grid); };
    p.objective = [truth](const Matrix& f, Matrix* g) { return env_model_objective(f, truth, g); };
    return p;
  }
  if (id == "brusselator") {
    const BrusselatorSpec spec = options.brusselator;
    spec.validate();
    Problem p;
    p.id = "brusselator";
    p.domain = spec.domain;
    p.grid = spec.grid();
    p.grid_box = spec.grid_box();
    p.output_dim = 2;
    p.sense = Sense::kMinimize;
    p.field = [spec](const Vector& u) { return brusselator_solve(u, spec); };
    p.objective = [wu = spec.weight_u, wv = spec.weight_v](const Matrix& f, Matrix* g) {
      return weighted_variance(f, wu, wv, g);
    };
    return p;
  }
  if (id == "interferometer_g") {
    Problem p = file_problem("interferometer_g", options,
                             BoxDomain(Vector::Constant(4, -1.0), Vector::Constant(4, 1.0)));
    if (p.grid.cols() != 2) throw ConfigError("interferometer fields need a 2-D grid");
    const Vector window = gaussian_window(p.grid);
    p.objective = [window](const Matrix& f, Matrix* g) { return visibility_windowed(f, window, g); };
    return p;
  }
  if (id == "cell_towers_g") {
    Vector lo(30), hi(30);
    lo << Vector::Zero(15), Vector::Constant(15, 30.0);
    hi << Vector::Constant(15, 10.0), Vector::Constant(15, 50.0);
    Problem p = file_problem("cell_towers_g", options, BoxDomain(lo, hi));
    if (p.output_dim != 2) throw ConfigError("cell tower fields need channels (R, I)");
    const Vector weights = cell_area_weights(p.grid);
    p.objective = [weights](const Matrix& f, Matrix* g) {
      return coverage_weighted(f, weights, CoverageSpec{}, g).objective;
    };
    return p;
  }
  std::string known;
  for (const auto& s : problem_ids()) known += (known.empty() ? "" : ", ") + s;
  throw ConfigError("unknown problem '" + std::string(id) + "' (" + known + ")");
}

}  // namespace neon
