#include "neon/bo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "neon/error.hpp"

namespace neon {

namespace {

enum Stream : std::uint64_t {
  kDesignStream = 11,
  kModelStream,
  kTrainStream,
  kIndexStream,
  kRestartStream,
  kRandomSearchStream,
};

std::uint64_t bit_reverse(std::uint64_t x) {
  x = ((x >> 1) & 0x5555555555555555ULL) | ((x & 0x5555555555555555ULL) << 1);
  x = ((x >> 2) & 0x3333333333333333ULL) | ((x & 0x3333333333333333ULL) << 2);
  x = ((x >> 4) & 0x0F0F0F0F0F0F0F0FULL) | ((x & 0x0F0F0F0F0F0F0F0FULL) << 4);
  x = ((x >> 8) & 0x00FF00FF00FF00FFULL) | ((x & 0x00FF00FF00FF00FFULL) << 8);
  x = ((x >> 16) & 0x0000FFFF0000FFFFULL) | ((x & 0x0000FFFF0000FFFFULL) << 16);
  return (x >> 32) | (x << 32);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Tracks the run's data, incumbent and log in the problem's raw sense while
// the optimiser works with sign * g.
class RunState {
 public:
  RunState(const Problem& problem, std::uint64_t seed, const BoHooks& hooks)
      : problem_(problem), hooks_(hooks) {
    log_.problem = problem.id;
    log_.sense = problem.sense;
    log_.seed = seed;
    data_.queries = problem.grid;
    data_.inputs.resize(0, problem.domain.dim());
  }

  void evaluate(const Vector& u, int iteration, int batch_index, double acquisition,
                double train_loss, double wall) {
    Matrix field = problem_.field(u);
    const double f = problem_.objective(field, nullptr);
    if (!std::isfinite(f)) throw NumericError("objective is not finite at the acquired point");
    data_.add(u, std::move(field));
    const double internal = problem_.sign() * f;
    if (log_.records.empty() || internal > best_internal_) best_internal_ = internal;
    RunRecord r;
    r.iteration = iteration;
    r.batch_index = batch_index;
    r.u = u;
    r.objective = f;
    r.best_so_far = problem_.sign() * best_internal_;
    r.acquisition = acquisition;
    r.train_loss = train_loss;
    r.wall_seconds = wall;
    r.seed = log_.seed;
    log_.records.push_back(r);
    if (hooks_.on_record) hooks_.on_record(log_.records.back());
  }

  void set_batch_wall(std::size_t first, double wall) {
    for (std::size_t i = first; i < log_.records.size(); ++i) log_.records[i].wall_seconds = wall;
  }

  void fail(int iteration, const std::string& message) {
    log_.error = message;
    log_.error_iteration = iteration;
  }

  const Dataset& data() const { return data_; }
  double incumbent() const { return best_internal_; }
  RunLog& log() { return log_; }
  std::size_t size() const { return log_.records.size(); }

 private:
  const Problem& problem_;
  const BoHooks& hooks_;
  Dataset data_;
  RunLog log_;
  double best_internal_ = 0.0;
};

struct TrainedSurrogate {
  std::unique_ptr<CompositeSurrogate> surrogate;
  double train_loss = 0.0;
};

TrainedSurrogate train_surrogate(const Problem& problem, const BoSettings& s, const Dataset& raw,
                                 std::uint64_t seed, int iteration) {
  const auto t = static_cast<std::uint64_t>(iteration);
  const Normalizer norm = Normalizer::fit(raw, problem.domain, problem.grid_box);
  const Dataset data = norm.normalize(raw);
  TrainConfig train = s.train;
  train.seed = derive_seed(seed, {t, kTrainStream});
  const std::uint64_t model_seed = derive_seed(seed, {t, kModelStream});
  TrainedSurrogate out;
  if (s.surrogate == SurrogateKind::kNeon) {
    NeonModel model = NeonModel::create(s.model, raw.input_dim(), raw.query_dim(),
                                        raw.output_dim(), model_seed);
    const FitResult r = fit(model, data, train);
    out.train_loss = r.loss_history.back();
    out.surrogate = std::make_unique<NeonSurrogate>(std::move(model), norm, problem.grid,
                                                    problem.objective, problem.sign());
  } else {
    EnsembleEnn ens = EnsembleEnn::create(s.model, raw.input_dim(), raw.query_dim(),
                                          raw.output_dim(), s.ensemble_size, model_seed);
    const FitResult r = fit(ens, data, train);
    out.train_loss = r.loss_history.back();
    out.surrogate = std::make_unique<EnsembleSurrogate>(std::move(ens), norm, problem.grid,
                                                        problem.objective, problem.sign());
  }
  return out;
}

bool row_in(const Matrix& rows, const Vector& u) {
  for (Index r = 0; r < rows.rows(); ++r)
    if (rows.row(r).transpose() == u) return true;
  return false;
}

// Greedy selection of q unevaluated candidates by the joint acquisition.
std::pair<Vector, double> select_candidates(const Problem& problem, const AcquisitionSpec& spec,
                                            const CompositeSurrogate& surrogate,
                                            const Matrix& indices, const Dataset& data) {
  const Index d = problem.domain.dim();
  const Index q = spec.batch_points();
  Vector chosen(0);
  double value = 0.0;
  std::vector<bool> used(static_cast<std::size_t>(problem.candidates.rows()));
  for (Index c = 0; c < problem.candidates.rows(); ++c)
    used[static_cast<std::size_t>(c)] = row_in(data.inputs, problem.candidates.row(c).transpose());
  for (Index pick = 0; pick < q; ++pick) {
    AcquisitionSpec partial = spec;
    partial.q = pick + 1;
    Index best = -1;
    double best_value = 0.0;
    for (Index c = 0; c < problem.candidates.rows(); ++c) {
      if (used[static_cast<std::size_t>(c)]) continue;
      Vector x(chosen.size() + d);
      x << chosen, problem.candidates.row(c).transpose();
      const double v = evaluate_acquisition(partial, surrogate, x, indices, false).value;
      if (best < 0 || v > best_value) {
        best = c;
        best_value = v;
      }
    }
    if (best < 0) throw LookupError("no unevaluated candidates remain");
    used[static_cast<std::size_t>(best)] = true;
    Vector x(chosen.size() + d);
    x << chosen, problem.candidates.row(best).transpose();
    chosen = std::move(x);
    value = best_value;
  }
  return {chosen, value};
}

RunLog run_loop(const Problem& problem, const BoSettings& settings, std::uint64_t seed,
                const BoHooks& hooks) {
  settings.validate();
  const Index d = problem.domain.dim();
  RunState state(problem, seed, hooks);

  const auto start = Clock::now();
  Matrix design;
  if (problem.discrete()) {
    Rng rng(derive_seed(seed, {0, kDesignStream}));
    std::vector<Index> order(static_cast<std::size_t>(problem.candidates.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    const Index n0 = std::min<Index>(settings.initial_points(d), problem.candidates.rows());
    design.resize(n0, d);
    for (Index i = 0; i < n0; ++i) design.row(i) = problem.candidates.row(order[static_cast<std::size_t>(i)]);
  } else {
    design = initial_design(problem.domain, settings.initial_points(d),
                            derive_seed(seed, {0, kDesignStream}));
  }
  try {
    for (Index i = 0; i < design.rows(); ++i)
      state.evaluate(design.row(i).transpose(), 0, static_cast<int>(i), 0.0, 0.0, 0.0);
  } catch (const std::exception& e) {
    state.fail(0, e.what());
    return std::move(state.log());
  }
  state.set_batch_wall(0, seconds_since(start));

  const Index q = settings.acquisition.batch_points();
  for (Index it = 1; it <= settings.iterations; ++it) {
    const int iteration = static_cast<int>(it);
    const auto t = static_cast<std::uint64_t>(it);
    const auto iter_start = Clock::now();
    const std::size_t first = state.size();
    try {
      if (hooks.before_fit) hooks.before_fit(iteration, state.data(), state.incumbent());
      const TrainedSurrogate trained = train_surrogate(problem, settings, state.data(), seed, iteration);
      const CompositeSurrogate& surrogate = *trained.surrogate;

      AcquisitionSpec spec = settings.acquisition;
      spec.incumbent = state.incumbent();
      Rng index_rng(derive_seed(seed, {t, kIndexStream}));
      const Matrix indices = surrogate.sample_indices(spec.samples, index_rng);

      Vector x;
      double acq = 0.0;
      if (problem.discrete()) {
        std::tie(x, acq) = select_candidates(problem, spec, surrogate, indices, state.data());
      } else {
        const Objective objective = [&](const Vector& v, Vector* grad) {
          AcquisitionValue a = evaluate_acquisition(spec, surrogate, v, indices, grad != nullptr);
          if (grad) *grad = std::move(a.gradient);
          return a.value;
        };
        const BoxDomain box = q > 1 ? problem.domain.power(q) : problem.domain;
        const MultiRestartResult best = multi_restart_maximize(
            objective, box, settings.restarts, derive_seed(seed, {t, kRestartStream}));
        x = best.u;
        acq = best.value;
      }
      for (Index i = 0; i < q; ++i) {
        const Vector u = problem.domain.project(x.segment(i * d, d));
        state.evaluate(u, iteration, static_cast<int>(i), acq, trained.train_loss, 0.0);
      }
    } catch (const std::exception& e) {
      state.fail(iteration, e.what());
      break;
    }
    state.set_batch_wall(first, seconds_since(iter_start));
  }
  return std::move(state.log());
}

}  // namespace

SurrogateKind parse_surrogate_kind(std::string_view name) {
  if (name == "neon") return SurrogateKind::kNeon;
  if (name == "ensemble") return SurrogateKind::kEnsemble;
  throw ConfigError("unknown surrogate '" + std::string(name) + "' (neon, ensemble)");
}

std::string_view to_string(SurrogateKind kind) {
  return kind == SurrogateKind::kNeon ? "neon" : "ensemble";
}

void BoSettings::validate() const {
  train.validate();
  acquisition.validate();
  restarts.validate();
  if (iterations < 0) throw ConfigError("iteration budget must be >= 0");
  if (n0 < 0) throw ConfigError("n0 must be >= 0");
  if (surrogate == SurrogateKind::kEnsemble && ensemble_size < 1)
    throw ConfigError("ensemble size must be >= 1");
}

Index BoSettings::initial_points(Index input_dim) const {
  return n0 > 0 ? n0 : std::max<Index>(5, 2 * input_dim);
}

double RunLog::best() const {
  if (records.empty()) throw LookupError("run log is empty");
  return records.back().best_so_far;
}

Matrix initial_design(const BoxDomain& domain, Index n0, std::uint64_t seed) {
  if (n0 < 1) throw ConfigError("initial design needs n0 >= 1");
  Rng rng(seed);
  const Index d = domain.dim();
  Matrix design(n0, d);
  std::vector<double> axis(static_cast<std::size_t>(n0));
  for (Index k = 0; k < d; ++k) {
    const std::uint64_t mask = rng();
    for (Index i = 0; i < n0; ++i) {
      const std::uint64_t r = bit_reverse(static_cast<std::uint64_t>(i)) ^ mask;
      axis[static_cast<std::size_t>(i)] = static_cast<double>(r >> 11) * 0x1.0p-53;
    }
    std::shuffle(axis.begin(), axis.end(), rng);
    for (Index i = 0; i < n0; ++i)
      design(i, k) = domain.lower(k) + axis[static_cast<std::size_t>(i)] * (domain.upper(k) - domain.lower(k));
  }
  return design;
}

RunLog run_bo(const Problem& problem, const BoSettings& settings, std::uint64_t seed,
              const BoHooks& hooks) {
  return run_loop(problem, settings, seed, hooks);
}

RunLog run_bo_parallel(const Problem& problem, BoSettings settings, Index q, std::uint64_t seed,
                       const BoHooks& hooks) {
  if (q < 1) throw ConfigError("q must be >= 1");
  settings.acquisition.kind = AcquisitionKind::kQLEI;
  settings.acquisition.q = q;
  return run_loop(problem, settings, seed, hooks);
}

RunLog random_search(const Problem& problem, Index evaluations, std::uint64_t seed) {
  if (evaluations < 1) throw ConfigError("random search needs at least one evaluation");
  const BoHooks hooks;
  RunState state(problem, seed, hooks);
  Rng rng(derive_seed(seed, {0, kRandomSearchStream}));
  std::vector<Index> order;
  if (problem.discrete()) {
    order.resize(static_cast<std::size_t>(problem.candidates.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    evaluations = std::min<Index>(evaluations, problem.candidates.rows());
  }
  try {
    for (Index i = 0; i < evaluations; ++i) {
      const auto start = Clock::now();
      const Vector u = problem.discrete()
                           ? Vector(problem.candidates.row(order[static_cast<std::size_t>(i)]).transpose())
                           : problem.domain.sample_uniform(rng);
      state.evaluate(u, static_cast<int>(i), 0, 0.0, 0.0, 0.0);
      state.set_batch_wall(state.size() - 1, seconds_since(start));
    }
  } catch (const std::exception& e) {
    state.fail(static_cast<int>(state.size()), e.what());
  }
  return std::move(state.log());
}

// ---------------------------------------------------------------------------
// Output

void write_jsonl(std::ostream& out, const RunLog& log) {
  for (const auto& r : log.records) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["batch_index"] = r.batch_index;
    j["u"] = std::vector<double>(r.u.data(), r.u.data() + r.u.size());
    j["objective"] = r.objective;
    j["best_so_far"] = r.best_so_far;
    j["acquisition"] = r.acquisition;
    j["train_loss"] = r.train_loss;
    j["wall_seconds"] = r.wall_seconds;
    j["seed"] = r.seed;
    out << j.dump() << '\n';
  }
  if (log.error) {
    nlohmann::ordered_json j;
    j["iteration"] = log.error_iteration;
    j["error"] = *log.error;
    j["seed"] = log.seed;
    out << j.dump() << '\n';
  }
}

std::vector<SummaryRow> summarize(const RunLog& log) {
  const double sign = log.sense == Sense::kMaximize ? 1.0 : -1.0;
  std::vector<SummaryRow> rows;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const RunRecord& r = log.records[i];
    if (rows.empty() || rows.back().iteration != r.iteration) {
      rows.push_back({r.iteration, 0, r.best_so_far, r.objective, r.wall_seconds});
    } else {
      // acquired_f is the best value of the iteration's batch.
      SummaryRow& row = rows.back();
      if (sign * r.objective > sign * row.acquired_f) row.acquired_f = r.objective;
      row.best_so_far = r.best_so_far;
    }
    rows.back().points_evaluated = i + 1;
  }
  return rows;
}

void write_summary_csv(std::ostream& out, const RunLog& log, bool record_wall_time) {
  out << "iteration,points_evaluated,best_so_far,acquired_f,wall_seconds\n";
  const auto rows = summarize(log);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.points_evaluated << ',' << nlohmann::json(r.best_so_far).dump()
        << ',' << nlohmann::json(r.acquired_f).dump() << ','
        << nlohmann::json(record_wall_time ? r.wall_seconds : 0.0).dump() << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("iteration,points_evaluated,best_so_far", 0) != 0)
    throw ConfigError("summary CSV: unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell[5];
    for (auto& c : cell)
      if (!std::getline(ss, c, ',')) throw ConfigError("summary CSV: short row '" + line + "'");
    try {
      rows.push_back({std::stoi(cell[0]), static_cast<std::size_t>(std::stoull(cell[1])),
                      std::stod(cell[2]), std::stod(cell[3]), std::stod(cell[4])});
    } catch (const std::logic_error&) {
      throw ConfigError("summary CSV: malformed row '" + line + "'");
    }
  }
  return rows;
}

}  // namespace neon
