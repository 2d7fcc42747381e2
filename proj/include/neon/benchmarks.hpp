#pragma once

// Ground-truth field providers h and objective functionals g.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "neon/acquisition.hpp"
#include "neon/domain.hpp"
#include "neon/training.hpp"

namespace neon {

// ---------------------------------------------------------------------------
// Environment model: two pollutant spills in a river.

struct EnvModelSpec {
  BoxDomain domain{Vector{{7.0, 0.02, 0.01, 30.01}}, Vector{{13.0, 0.12, 3.0, 30.295}}};
  Vector positions{{0.0, 1.0, 2.5}};
  Vector times{{15.0, 30.0, 45.0, 60.0}};
  Vector u_true{{10.0, 0.07, 1.505, 30.1525}};

  // Rows (s, t), position-major.
  Matrix grid() const;
  BoxDomain grid_box() const;
};

// Concentration at (s, t) for u = (M, D, L, tau).
double env_model_field(const Vector& u, double s, double t);
// m x 1 field on the rows of `grid`.
Matrix env_model_fields(const Vector& u, const Matrix& grid);
// -sum (field - truth)^2.
double env_model_objective(const Matrix& field, const Matrix& truth, Matrix* grad = nullptr);

// ---------------------------------------------------------------------------
// Brusselator reaction-diffusion on the periodic unit square.

struct BrusselatorSpec {
  // (a, b, D0, D1)
  BoxDomain domain{Vector{{0.1, 0.1, 0.01, 0.01}}, Vector{{5.0, 5.0, 5.0, 5.0}}};
  Index resolution = 64;
  // Initial noise lives on this lattice and is prolonged to finer grids.
  Index noise_lattice = 64;
  double noise_amplitude = 0.1;
  double horizon = 20.0;
  double safety = 0.2;
  double max_dt = 1e-3;
  double weight_u = 1.0;
  double weight_v = 1.0;

  void validate() const;
  // Rows (x, y) with y fastest; x, y in {0, 1/n, ..., (n-1)/n}.
  Matrix grid() const;
  BoxDomain grid_box() const;
  double time_step(double d0, double d1) const;
};

std::uint64_t brusselator_noise_seed(const Vector& params);

// Fields (u, v) at the horizon, one row per grid point.
Matrix brusselator_solve(const Vector& params, const BrusselatorSpec& spec = {});
// Initial condition used by the solver.
Matrix brusselator_initial_state(const Vector& params, const BrusselatorSpec& spec = {});

// w_u Var(u) + w_v Var(v) over the grid (population variance).
double weighted_variance(const Matrix& field, double weight_u = 1.0, double weight_v = 1.0,
                         Matrix* grad = nullptr);

// ---------------------------------------------------------------------------
// Grid quadrature

// Uniform cell areas of a tensor grid, product of per-axis spacings.
Vector cell_area_weights(const Matrix& grid);

// ---------------------------------------------------------------------------
// Optical interferometer

// Gaussian-window integrals of each channel over [0,1]^2.
Vector interferometer_intensities(const Matrix& field, const Matrix& grid);
double visibility(const Matrix& field, const Matrix& grid, Matrix* grad = nullptr);

// ---------------------------------------------------------------------------
// Cell towers

struct CoverageSpec {
  double weak_threshold = -80.0;
  double strong_threshold = 6.0;
  double mix = 0.25;
};

struct CoverageTerms {
  double strong = 0.0;
  double weak = 0.0;
  double objective = 0.0;
};

// Channels (R, I): signal and interference.
CoverageTerms cell_coverage_terms(const Matrix& field, const Matrix& grid,
                                  const CoverageSpec& spec = {});
double cell_coverage_objective(const Matrix& field, const Matrix& grid,
                               const CoverageSpec& spec = {}, Matrix* grad = nullptr);

// ---------------------------------------------------------------------------
// File-backed fields

class FileFieldProvider {
 public:
  explicit FileFieldProvider(Dataset data);

  // Exact match on u; throws LookupError otherwise.
  Matrix operator()(const Vector& u) const;
  bool contains(const Vector& u) const;
  const Dataset& data() const { return data_; }

 private:
  Dataset data_;
  std::map<std::vector<double>, Index> index_;
};

FileFieldProvider load_field_provider(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Problem registry

enum class Sense { kMaximize, kMinimize };

struct Problem {
  std::string id;
  BoxDomain domain;
  Matrix grid;
  BoxDomain grid_box;
  Index output_dim = 1;
  std::function<Matrix(const Vector&)> field;
  Functional objective;
  Sense sense = Sense::kMaximize;
  // Admissible inputs, one per row, for file-backed problems.
  Matrix candidates;

  double sign() const { return sense == Sense::kMaximize ? 1.0 : -1.0; }
  // Raw g(h(u)).
  double evaluate(const Vector& u) const { return objective(field(u), nullptr); }
  bool discrete() const { return candidates.rows() > 0; }
};

struct ProblemOptions {
  std::filesystem::path field_file;
  BrusselatorSpec brusselator;
};

const std::vector<std::string>& problem_ids();
Problem make_problem(std::string_view id, const ProblemOptions& options = {});

}  // namespace neon
