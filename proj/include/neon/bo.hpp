#pragma once

// Composite Bayesian-optimisation loop.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "neon/acq_opt.hpp"
#include "neon/acquisition.hpp"
#include "neon/benchmarks.hpp"
#include "neon/training.hpp"

namespace neon {

enum class SurrogateKind { kNeon, kEnsemble };

SurrogateKind parse_surrogate_kind(std::string_view name);
std::string_view to_string(SurrogateKind kind);

struct BoSettings {
  NeonConfig model;
  TrainConfig train;
  SurrogateKind surrogate = SurrogateKind::kNeon;
  std::size_t ensemble_size = 8;
  AcquisitionSpec acquisition;
  RestartPlan restarts;
  Index iterations = 30;
  // 0 selects max(5, 2 d_u).
  Index n0 = 0;

  void validate() const;
  Index initial_points(Index input_dim) const;
};

struct RunRecord {
  int iteration = 0;    // 0 for the initial design
  int batch_index = 0;  // position within the iteration's batch
  Vector u;
  double objective = 0.0;    // raw g(h(u))
  double best_so_far = 0.0;  // raw, in the problem's sense
  double acquisition = 0.0;  // acquisition value of the acquired batch (0 for the design)
  double train_loss = 0.0;   // final training loss (0 for the design)
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;    // root seed of the run
};

struct RunLog {
  std::string problem;
  Sense sense = Sense::kMaximize;
  std::uint64_t seed = 0;
  std::vector<RunRecord> records;
  std::optional<std::string> error;
  int error_iteration = -1;

  std::size_t points_evaluated() const { return records.size(); }
  int iterations_completed() const { return records.empty() ? -1 : records.back().iteration; }
  double best() const;
};

// Observers for tests and progress reporting.
struct BoHooks {
  std::function<void(int iteration, const Dataset& raw_data, double incumbent)> before_fit;
  std::function<void(const RunRecord&)> on_record;
};

// Scrambled van der Corput points, permuted independently per axis.
Matrix initial_design(const BoxDomain& domain, Index n0, std::uint64_t seed);

RunLog run_bo(const Problem& problem, const BoSettings& settings, std::uint64_t seed,
              const BoHooks& hooks = {});

// q points per iteration through q-LEI.
RunLog run_bo_parallel(const Problem& problem, BoSettings settings, Index q, std::uint64_t seed,
                       const BoHooks& hooks = {});

// Uniform sampling (or a random order of the candidates) with the given
// number of evaluations.
RunLog random_search(const Problem& problem, Index evaluations, std::uint64_t seed);

// One JSON object per record, plus a final error object if the run stopped.
void write_jsonl(std::ostream& out, const RunLog& log);
// iteration,points_evaluated,best_so_far,acquired_f,wall_seconds; one row per
// iteration. Wall time is written as 0 unless requested, keeping the file
// reproducible.
void write_summary_csv(std::ostream& out, const RunLog& log, bool record_wall_time = false);

struct SummaryRow {
  int iteration = 0;
  std::size_t points_evaluated = 0;
  double best_so_far = 0.0;
  double acquired_f = 0.0;
  double wall_seconds = 0.0;
};
std::vector<SummaryRow> summarize(const RunLog& log);
std::vector<SummaryRow> read_summary_csv(std::istream& in);

}  // namespace neon
