#include "neon/acquisition.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <string>

#include "neon/error.hpp"

namespace neon {

using nn::Tape;

AcquisitionKind parse_acquisition_kind(std::string_view name) {
  if (name == "ei") return AcquisitionKind::kEI;
  if (name == "lei") return AcquisitionKind::kLEI;
  if (name == "lcb") return AcquisitionKind::kLCB;
  if (name == "qlei") return AcquisitionKind::kQLEI;
  throw ConfigError("unknown acquisition '" + std::string(name) + "' (ei, lei, lcb, qlei)");
}

std::string_view to_string(AcquisitionKind kind) {
  switch (kind) {
    case AcquisitionKind::kEI: return "ei";
    case AcquisitionKind::kLEI: return "lei";
    case AcquisitionKind::kLCB: return "lcb";
    case AcquisitionKind::kQLEI: return "qlei";
  }
  return "?";
}

Spread parse_spread(std::string_view name) {
  if (name == "std") return Spread::kStd;
  if (name == "mad") return Spread::kMeanAbsDev;
  throw ConfigError("unknown spread '" + std::string(name) + "' (std, mad)");
}

std::string_view to_string(Spread spread) { return spread == Spread::kStd ? "std" : "mad"; }

void AcquisitionSpec::validate() const {
  if (!(delta > 0.0)) throw ConfigError("acquisition delta must be > 0");
  if (!(beta > 0.0)) throw ConfigError("acquisition beta must be > 0");
  if (samples < 1) throw ConfigError("acquisition samples must be >= 1");
  if (q < 1) throw ConfigError("acquisition q must be >= 1");
  if (q > 1 && kind != AcquisitionKind::kQLEI)
    throw ConfigError("q > 1 requires the qlei acquisition");
}

double ei_point(double v, double incumbent) { return std::max(0.0, v - incumbent); }

double lei_point(double v, double incumbent, double delta) {
  if (!(delta > 0.0)) throw ConfigError("lei_point: delta must be > 0");
  const double d = v - incumbent;
  return d >= 0.0 ? d : delta * d;
}

// ---------------------------------------------------------------------------
// Surrogates

namespace {

void check_grid(const Matrix& grid, const Normalizer& norm) {
  if (grid.cols() != norm.query_box.dim())
    throw DimensionError("surrogate grid width does not match the normaliser");
}

// d value / d normalised input -> d value / d raw input.
Vector to_raw_gradient(const Normalizer& norm, const Matrix& dx) {
  return (dx.row(0).transpose().array() / norm.input_box.width().array()).matrix();
}

}  // namespace

NeonSurrogate::NeonSurrogate(NeonModel model, Normalizer normalizer, Matrix grid,
                             Functional objective, double sign)
    : model_(std::move(model)),
      normalizer_(std::move(normalizer)),
      objective_(std::move(objective)),
      sign_(sign) {
  check_grid(grid, normalizer_);
  queries_ = model_.base().make_queries(normalizer_.normalize_queries(grid));
}

Matrix NeonSurrogate::sample_indices(Index count, Rng& rng) const {
  Matrix z(count, model_.index_dim());
  for (Index i = 0; i < count; ++i) z.row(i) = sample_index(model_.index_dim(), rng).transpose();
  return z;
}

Matrix NeonSurrogate::predict_field(const Vector& u, const Vector& z) const {
  Tape tape;
  const auto trainable = nn::bind(tape, model_.params(), false);
  const auto prior = nn::bind(tape, model_.head().packed_prior(), false);
  const std::vector<Index> rows(static_cast<std::size_t>(queries_.points.rows()), 0);
  const auto out =
      model_.forward(tape, trainable, prior, tape.constant(normalizer_.normalize_input(u).transpose()),
                     rows, queries_, false);
  return normalizer_.denormalize_targets(tape.value(model_.predict(tape, out, z)));
}

CompositeSurrogate::Evaluation NeonSurrogate::evaluate(const Vector& u, const Matrix& indices,
                                                       bool with_gradient) const {
  if (u.size() != input_dim())
    throw DimensionError("surrogate: input length " + std::to_string(u.size()) + " != " +
                         std::to_string(input_dim()));
  if (indices.cols() != model_.index_dim())
    throw DimensionError("surrogate: index width does not match d_z");
  auto tape = std::make_shared<Tape>();
  const auto trainable = nn::bind(*tape, model_.params(), false);
  const auto prior = nn::bind(*tape, model_.head().packed_prior(), false);
  const Matrix x = normalizer_.normalize_input(u).transpose();
  const Tape::Var in = with_gradient ? tape->variable(x) : tape->constant(x);
  const std::vector<Index> rows(static_cast<std::size_t>(queries_.points.rows()), 0);
  const auto out = model_.forward(*tape, trainable, prior, in, rows, queries_, false);

  const double alpha = model_.prior_scale();
  const Matrix mu = tape->value(out.base.prediction);
  const Matrix head = tape->value(out.learnable) + alpha * tape->value(out.prior);
  const Index ds = mu.cols();
  const Index k = indices.rows();
  const Vector& std_dev = normalizer_.target_std;

  Evaluation result;
  result.values.resize(k);
  std::vector<Matrix> dpred(with_gradient ? static_cast<std::size_t>(k) : 0);
  for (Index j = 0; j < k; ++j) {
    Matrix pred = mu;
    for (Index c = 0; c < indices.cols(); ++c) pred += indices(j, c) * head.middleCols(c * ds, ds);
    const Matrix field = normalizer_.denormalize_targets(pred);
    Matrix gfield;
    const double g = objective_(field, with_gradient ? &gfield : nullptr);
    if (!std::isfinite(g)) throw NumericError("surrogate objective is not finite");
    result.values(j) = sign_ * g;
    if (with_gradient)
      dpred[static_cast<std::size_t>(j)] =
          sign_ * (gfield.array().rowwise() * std_dev.transpose().array()).matrix();
  }
  if (!with_gradient) return result;

  result.pullback = [tape, out, in, indices, dpred = std::move(dpred), alpha, ds,
                     norm = normalizer_](const Vector& weights) {
    const Index dz = indices.cols();
    Matrix gmu = Matrix::Zero(dpred.front().rows(), ds);
    Matrix ghead = Matrix::Zero(gmu.rows(), dz * ds);
    for (Index j = 0; j < indices.rows(); ++j) {
      const double w = weights(j);
      if (w == 0.0) continue;
      const Matrix& d = dpred[static_cast<std::size_t>(j)];
      gmu += w * d;
      for (Index c = 0; c < dz; ++c) ghead.middleCols(c * ds, ds) += (w * indices(j, c)) * d;
    }
    const std::pair<Tape::Var, Matrix> seeds[] = {
        {out.base.prediction, gmu}, {out.learnable, ghead}, {out.prior, alpha * ghead}};
    tape->backward(seeds);
    return to_raw_gradient(norm, tape->grad(in));
  };
  return result;
}

EnsembleSurrogate::EnsembleSurrogate(EnsembleEnn ensemble, Normalizer normalizer, Matrix grid,
                                     Functional objective, double sign)
    : ensemble_(std::move(ensemble)),
      normalizer_(std::move(normalizer)),
      objective_(std::move(objective)),
      sign_(sign) {
  check_grid(grid, normalizer_);
  queries_ = ensemble_.arch().make_queries(normalizer_.normalize_queries(grid));
}

Matrix EnsembleSurrogate::sample_indices(Index count, Rng& rng) const {
  std::uniform_int_distribution<std::size_t> pick(1, ensemble_.size());
  Matrix z(count, 1);
  for (Index i = 0; i < count; ++i) z(i, 0) = static_cast<double>(pick(rng));
  return z;
}

CompositeSurrogate::Evaluation EnsembleSurrogate::evaluate(const Vector& u, const Matrix& indices,
                                                           bool with_gradient) const {
  if (u.size() != input_dim()) throw DimensionError("surrogate: input length mismatch");
  if (indices.cols() != 1) throw DimensionError("ensemble surrogate: indices must be one column");
  const Matrix x = normalizer_.normalize_input(u).transpose();
  const std::vector<Index> rows(static_cast<std::size_t>(queries_.points.rows()), 0);

  struct MemberPass {
    std::shared_ptr<Tape> tape;
    Tape::Var in;
    Tape::Var pred;
    double value = 0.0;
    Matrix dpred;
  };
  std::map<std::size_t, MemberPass> passes;
  Evaluation result;
  result.values.resize(indices.rows());
  for (Index j = 0; j < indices.rows(); ++j) {
    const auto member = static_cast<std::size_t>(indices(j, 0));
    if (member < 1 || member > ensemble_.size() || static_cast<double>(member) != indices(j, 0))
      throw DimensionError("ensemble index out of range");
    auto it = passes.find(member);
    if (it == passes.end()) {
      MemberPass p;
      p.tape = std::make_shared<Tape>();
      const auto bound = nn::bind(*p.tape, ensemble_.member(member - 1), false);
      p.in = with_gradient ? p.tape->variable(x) : p.tape->constant(x);
      p.pred = ensemble_.arch().forward(*p.tape, bound, p.in, rows, queries_).prediction;
      const Matrix field = normalizer_.denormalize_targets(p.tape->value(p.pred));
      Matrix gfield;
      p.value = sign_ * objective_(field, with_gradient ? &gfield : nullptr);
      if (!std::isfinite(p.value)) throw NumericError("surrogate objective is not finite");
      if (with_gradient)
        p.dpred = sign_ * (gfield.array().rowwise() *
                           normalizer_.target_std.transpose().array()).matrix();
      it = passes.emplace(member, std::move(p)).first;
    }
    result.values(j) = it->second.value;
  }
  if (!with_gradient) return result;

  result.pullback = [passes = std::move(passes), indices, norm = normalizer_](const Vector& weights) {
    Vector grad = Vector::Zero(norm.input_box.dim());
    std::map<std::size_t, double> total;
    for (Index j = 0; j < indices.rows(); ++j)
      total[static_cast<std::size_t>(indices(j, 0))] += weights(j);
    for (const auto& [member, w] : total) {
      if (w == 0.0) continue;
      const MemberPass& p = passes.at(member);
      const std::pair<Tape::Var, Matrix> seed{p.pred, w * p.dpred};
      p.tape->backward(std::span<const std::pair<Tape::Var, Matrix>>(&seed, 1));
      grad += to_raw_gradient(norm, p.tape->grad(p.in));
    }
    return grad;
  };
  return result;
}

double surrogate_objective(const CompositeSurrogate& surrogate, const Vector& u, const Vector& z) {
  return surrogate.evaluate(u, Matrix(z.transpose()), false).values(0);
}

// ---------------------------------------------------------------------------
// Reductions

SampleReduction reduce_samples(const AcquisitionSpec& spec, const Vector& values) {
  const Index k = values.size();
  if (k < 1) throw DimensionError("acquisition needs at least one sample");
  const double inv_k = 1.0 / static_cast<double>(k);
  SampleReduction r;
  r.weights.resize(k);
  switch (spec.kind) {
    case AcquisitionKind::kEI:
    case AcquisitionKind::kLEI: {
      const bool leaky = spec.kind == AcquisitionKind::kLEI;
      double sum = 0.0;
      for (Index j = 0; j < k; ++j) {
        const double v = values(j);
        sum += leaky ? lei_point(v, spec.incumbent, spec.delta) : ei_point(v, spec.incumbent);
        if (leaky)
          r.weights(j) = v - spec.incumbent >= 0.0 ? inv_k : spec.delta * inv_k;
        else
          r.weights(j) = v > spec.incumbent ? inv_k : 0.0;
      }
      r.value = sum * inv_k;
      return r;
    }
    case AcquisitionKind::kLCB: {
      const double mean = values.mean();
      const Vector dev = values.array() - mean;
      r.weights.setConstant(inv_k);
      if (spec.spread == Spread::kStd) {
        const double sd = std::sqrt(dev.squaredNorm() * inv_k);
        r.value = mean + spec.beta * sd;
        if (sd > 0.0) r.weights += spec.beta * dev * (inv_k / sd);
      } else {
        const double mad = dev.cwiseAbs().sum() * inv_k;
        r.value = mean + spec.beta * mad;
        Vector sgn(k);
        for (Index j = 0; j < k; ++j) sgn(j) = dev(j) > 0.0 ? 1.0 : (dev(j) < 0.0 ? -1.0 : 0.0);
        r.weights += spec.beta * inv_k * (sgn.array() - sgn.mean()).matrix();
      }
      return r;
    }
    case AcquisitionKind::kQLEI: {
      const BatchReduction b = reduce_batch(spec, values.transpose());
      r.value = b.value;
      r.weights = b.weights.row(0).transpose();
      return r;
    }
  }
  throw ConfigError("unknown acquisition kind");
}

BatchReduction reduce_batch(const AcquisitionSpec& spec, const Matrix& values) {
  if (!(spec.delta > 0.0)) throw ConfigError("q-LEI: delta must be > 0");
  const Index q = values.rows();
  const Index k = values.cols();
  if (q < 1 || k < 1) throw DimensionError("q-LEI needs at least one point and one sample");
  const double inv_k = 1.0 / static_cast<double>(k);
  BatchReduction r;
  r.weights.resize(q, k);
  double sum = 0.0;
  for (Index j = 0; j < k; ++j) {
    Index best = 0;
    for (Index i = 1; i < q; ++i)
      if (values(i, j) > values(best, j)) best = i;
    for (Index i = 0; i < q; ++i) {
      const double w = (i == best && values(i, j) > spec.incumbent) ? 1.0 : spec.delta;
      sum += w * (values(i, j) - spec.incumbent);
      r.weights(i, j) = w * inv_k;
    }
  }
  r.value = sum * inv_k;
  return r;
}

// ---------------------------------------------------------------------------
// Acquisitions

AcquisitionValue mc_acquisition(const AcquisitionSpec& spec, const CompositeSurrogate& surrogate,
                                const Vector& u, const Matrix& indices, bool with_gradient) {
  const auto eval = surrogate.evaluate(u, indices, with_gradient);
  const SampleReduction r = reduce_samples(spec, eval.values);
  AcquisitionValue out{r.value, {}};
  if (with_gradient) out.gradient = eval.pullback(r.weights);
  return out;
}

AcquisitionValue qlei(const AcquisitionSpec& spec, const CompositeSurrogate& surrogate,
                      const Vector& stacked, const Matrix& indices, bool with_gradient) {
  const Index d = surrogate.input_dim();
  if (stacked.size() % d != 0 || stacked.size() == 0)
    throw DimensionError("q-LEI: stacked input length " + std::to_string(stacked.size()) +
                         " is not a multiple of " + std::to_string(d));
  const Index q = stacked.size() / d;
  std::vector<CompositeSurrogate::Evaluation> evals;
  Matrix values(q, indices.rows());
  for (Index i = 0; i < q; ++i) {
    evals.push_back(surrogate.evaluate(stacked.segment(i * d, d), indices, with_gradient));
    values.row(i) = evals.back().values.transpose();
  }
  const BatchReduction r = reduce_batch(spec, values);
  AcquisitionValue out{r.value, {}};
  if (with_gradient) {
    out.gradient.resize(stacked.size());
    for (Index i = 0; i < q; ++i)
      out.gradient.segment(i * d, d) =
          evals[static_cast<std::size_t>(i)].pullback(r.weights.row(i).transpose());
  }
  return out;
}

AcquisitionValue evaluate_acquisition(const AcquisitionSpec& spec,
                                      const CompositeSurrogate& surrogate, const Vector& x,
                                      const Matrix& indices, bool with_gradient) {
  if (spec.kind == AcquisitionKind::kQLEI)
    return qlei(spec, surrogate, x, indices, with_gradient);
  return mc_acquisition(spec, surrogate, x, indices, with_gradient);
}

}  // namespace neon
