#pragma once

// Monte-Carlo acquisitions over a composite surrogate G(u, z) = g(h(u, ., z)).
// All acquisitions are written for maximisation.

#include <functional>
#include <string_view>

#include "neon/epinet.hpp"
#include "neon/training.hpp"

namespace neon {

// g evaluated on a field (grid points x channels); fills d g / d field when
// `grad` is non-null.
using Functional = std::function<double(const Matrix& field, Matrix* grad)>;

enum class AcquisitionKind { kEI, kLEI, kLCB, kQLEI };
enum class Spread { kStd, kMeanAbsDev };

AcquisitionKind parse_acquisition_kind(std::string_view name);
std::string_view to_string(AcquisitionKind kind);
Spread parse_spread(std::string_view name);
std::string_view to_string(Spread spread);

struct AcquisitionSpec {
  AcquisitionKind kind = AcquisitionKind::kLEI;
  double delta = 0.01;
  double beta = 1.0;
  Spread spread = Spread::kStd;
  Index samples = 64;
  Index q = 1;
  double incumbent = 0.0;

  void validate() const;
  // Number of stacked points optimised jointly.
  Index batch_points() const { return kind == AcquisitionKind::kQLEI ? q : 1; }

  friend bool operator==(const AcquisitionSpec&, const AcquisitionSpec&) = default;
};

double ei_point(double v, double incumbent);
double lei_point(double v, double incumbent, double delta);

class CompositeSurrogate {
 public:
  struct Evaluation {
    Vector values;  // G(u, z_j) for every row of the index batch
    // Gradient in u of sum_j weights(j) * G(u, z_j); empty without gradient.
    std::function<Vector(const Vector& weights)> pullback;
  };

  virtual ~CompositeSurrogate() = default;
  virtual Index input_dim() const = 0;
  // One index per row.
  virtual Matrix sample_indices(Index count, Rng& rng) const = 0;
  virtual Evaluation evaluate(const Vector& u, const Matrix& indices, bool with_gradient) const = 0;
};

// Sign +1 keeps g, -1 turns a minimisation problem into maximisation.
class NeonSurrogate final : public CompositeSurrogate {
 public:
  NeonSurrogate(NeonModel model, Normalizer normalizer, Matrix grid, Functional objective,
                double sign = 1.0);

  Index input_dim() const override { return model_.base().encoder_config().input_dim; }
  Matrix sample_indices(Index count, Rng& rng) const override;
  Evaluation evaluate(const Vector& u, const Matrix& indices, bool with_gradient) const override;

  const NeonModel& model() const { return model_; }
  // Denormalised prediction on the grid for one index.
  Matrix predict_field(const Vector& u, const Vector& z) const;

 private:
  NeonModel model_;
  Normalizer normalizer_;
  QueryBatch queries_;
  Functional objective_;
  double sign_;
};

// Indices are 1-based member numbers stored as doubles.
class EnsembleSurrogate final : public CompositeSurrogate {
 public:
  EnsembleSurrogate(EnsembleEnn ensemble, Normalizer normalizer, Matrix grid, Functional objective,
                    double sign = 1.0);

  Index input_dim() const override { return ensemble_.arch().encoder_config().input_dim; }
  Matrix sample_indices(Index count, Rng& rng) const override;
  Evaluation evaluate(const Vector& u, const Matrix& indices, bool with_gradient) const override;

 private:
  EnsembleEnn ensemble_;
  Normalizer normalizer_;
  QueryBatch queries_;
  Functional objective_;
  double sign_;
};

double surrogate_objective(const CompositeSurrogate& surrogate, const Vector& u, const Vector& z);

struct SampleReduction {
  double value = 0.0;
  Vector weights;  // d value / d G(u, z_j)
};

// EI, L-EI or LCB over one point's samples.
SampleReduction reduce_samples(const AcquisitionSpec& spec, const Vector& values);

struct BatchReduction {
  double value = 0.0;
  Matrix weights;  // q x k, d value / d G(u_i, z_j)
};

// q-LEI over a (q x k) table of samples.
BatchReduction reduce_batch(const AcquisitionSpec& spec, const Matrix& values);

struct AcquisitionValue {
  double value = 0.0;
  Vector gradient;  // empty unless requested
};

// EI, L-EI or LCB at a single point.
AcquisitionValue mc_acquisition(const AcquisitionSpec& spec, const CompositeSurrogate& surrogate,
                                const Vector& u, const Matrix& indices, bool with_gradient);

// q-LEI at q points stacked as (u_1, ..., u_q).
AcquisitionValue qlei(const AcquisitionSpec& spec, const CompositeSurrogate& surrogate,
                      const Vector& stacked, const Matrix& indices, bool with_gradient);

// Dispatches on the kind; x is stacked when the kind is q-LEI.
AcquisitionValue evaluate_acquisition(const AcquisitionSpec& spec,
                                      const CompositeSurrogate& surrogate, const Vector& x,
                                      const Matrix& indices, bool with_gradient);

}  // namespace neon
