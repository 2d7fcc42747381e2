#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "neon/domain.hpp"
#include "neon/epinet.hpp"

namespace neon {

// Observations {(u_i, s_i)} of output functions on one shared query grid.
struct Dataset {
  Matrix inputs;                // N x d_u
  Matrix queries;               // m x d_y
  std::vector<Matrix> targets;  // N entries of m x d_s

  Index size() const { return inputs.rows(); }
  Index input_dim() const { return inputs.cols(); }
  Index query_dim() const { return queries.cols(); }
  Index grid_size() const { return queries.rows(); }
  Index output_dim() const { return targets.empty() ? 0 : targets.front().cols(); }

  void add(const Vector& u, Matrix field);
  void validate() const;
};

// Dataset CSV: header id,u_1..,y_1..,s_1..; one row per (instance, grid point).
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);
void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_csv(const std::filesystem::path& path);

// Inputs map affinely onto [0,1]^d_u through the design box, queries onto
// [0,1]^d_y through the grid bounds, and targets are standardised per
// channel (a zero-variance channel keeps std 1).
struct Normalizer {
  BoxDomain input_box;
  BoxDomain query_box;
  Vector target_mean;
  Vector target_std;

  static Normalizer fit(const Dataset& data, const BoxDomain& input_box,
                        const BoxDomain& query_box);

  Vector normalize_input(const Vector& u) const;
  Vector denormalize_input(const Vector& x) const;
  Matrix normalize_queries(const Matrix& y) const;
  Matrix normalize_targets(const Matrix& s) const;
  Matrix denormalize_targets(const Matrix& s) const;

  Dataset normalize(const Dataset& data) const;
  Dataset denormalize(const Dataset& data) const;
};

inline constexpr double kRelativeLossEps = 1e-8;

// ||pred - target|| / (||target|| + eps) over all grid points and channels.
double relative_l2_loss(const Matrix& pred, const Matrix& target, double eps = kRelativeLossEps);

struct TrainConfig {
  std::int64_t steps = 12000;
  // Counted in (instance, grid point) pairs; the full set is used when the
  // dataset is smaller.
  Index batch_size = 256;
  Index index_samples = 8;
  nn::LrSchedule schedule;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitResult {
  std::vector<double> loss_history;
};

// Adam on the relative loss averaged over index samples drawn fresh each
// step. `data` must already be normalised.
FitResult fit(NeonModel& model, const Dataset& data, const TrainConfig& config);

// Same loop for a plain operator network (one ensemble member).
FitResult fit(const OperatorNet& arch, nn::ParamTree& params, const Dataset& data,
              const TrainConfig& config);

FitResult fit(EnsembleEnn& ensemble, const Dataset& data, const TrainConfig& config);

}  // namespace neon
