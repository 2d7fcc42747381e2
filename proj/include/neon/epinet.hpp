#pragma once

// EpiNet head and NEON assembly:
//
//   f(u, y, z) = mu(u, y) + L(sg[phi(u, y)]) z + alpha * P(sg[phi(u, y)]) z
//
// L is a trainable MLP whose output is read as a (d_s x d_z) matrix, and P
// stacks d_z frozen prior MLPs column by column. Both heads are linear in z.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "neon/operator_net.hpp"

namespace neon {

struct EpinetConfig {
  std::vector<int> hidden{32, 32};
  Index index_dim = 16;
  std::vector<int> prior_hidden{5, 5};
  double prior_scale = 1.0;

  friend bool operator==(const EpinetConfig&, const EpinetConfig&) = default;
};

// Architecture and defaults of a full NEON surrogate; problem dimensions are
// supplied at construction.
struct NeonConfig {
  std::vector<int> encoder_hidden{64, 64};
  Index latent_dim = 64;
  DecoderKind decoder = DecoderKind::kSplit;
  std::vector<int> decoder_hidden{64, 64};
  bool fourier = true;
  Index n_freq = 64;
  double fourier_scale = 1.0;
  EpinetConfig epinet;

  friend bool operator==(const NeonConfig&, const NeonConfig&) = default;
};

// z ~ N(0, I).
Vector sample_index(Index index_dim, Rng& rng);

class EpinetHead {
 public:
  EpinetHead(EpinetConfig config, Index feature_dim, Index output_dim, Rng& prior_rng);
  EpinetHead(EpinetConfig config, Index feature_dim, Index output_dim, nn::ParamTree prior);

  const EpinetConfig& config() const { return config_; }
  Index feature_dim() const { return feature_dim_; }
  Index output_dim() const { return output_dim_; }
  Index index_dim() const { return config_.index_dim; }

  // Layers epinet.k; the output layer starts at zero.
  nn::ParamTree init_learnable(Rng& rng) const;
  std::size_t learnable_layer_count() const { return config_.hidden.size() + 1; }

  // Layers prior.i.k for member i.
  const nn::ParamTree& prior() const { return prior_; }
  // The same members packed into one MLP: stacked first layer, block-diagonal
  // after that. Bind this for prior_matrix.
  const nn::ParamTree& packed_prior() const { return packed_; }

  // sum_i z_i p_i(x), without the prior scale.
  Vector prior_forward(const Vector& features, const Vector& z) const;
  // M(x) z with M the reshaped output of the learnable MLP.
  Vector learnable_forward(std::span<const nn::Layer> learnable, const Vector& features,
                           const Vector& z) const;

  // rows x (d_z * d_s), index-major columns; see Tape::contract_index.
  nn::Tape::Var learnable_matrix(nn::Tape& tape, std::span<const nn::BoundLayer> learnable,
                                 nn::Tape::Var features) const;
  nn::Tape::Var prior_matrix(nn::Tape& tape, std::span<const nn::BoundLayer> prior,
                             nn::Tape::Var features) const;

 private:
  EpinetConfig config_;
  Index feature_dim_;
  Index output_dim_;
  nn::ParamTree prior_;
  nn::ParamTree packed_;

  void pack_prior();
};

class NeonModel {
 public:
  static NeonModel create(const NeonConfig& config, Index input_dim, Index query_dim,
                          Index output_dim, std::uint64_t seed);

  NeonModel(OperatorNet base, EpinetHead head, nn::ParamTree params);

  const OperatorNet& base() const { return base_; }
  const EpinetHead& head() const { return head_; }
  Index index_dim() const { return head_.index_dim(); }
  double prior_scale() const { return head_.config().prior_scale; }

  // Trainable parameters: base layers followed by the learnable head layers.
  nn::ParamTree& params() { return params_; }
  const nn::ParamTree& params() const { return params_; }
  std::span<const nn::Layer> learnable_layers() const {
    return params_.layers().subspan(base_.layer_count());
  }
  std::size_t trainable_parameter_count() const { return params_.parameter_count(); }

  Vector forward(const Vector& u, const Vector& y, const Vector& z) const;

  struct TapeOutput {
    OperatorNet::TapeOutput base;
    nn::Tape::Var learnable;
    nn::Tape::Var prior;
  };

  // With stop_gradient the head sees detached features, so no head gradient
  // reaches the base parameters; acquisition passes false to keep the full
  // chain differentiable in u. `prior` is head().packed_prior() bound as
  // constants.
  TapeOutput forward(nn::Tape& tape, std::span<const nn::BoundLayer> trainable,
                     std::span<const nn::BoundLayer> prior, nn::Tape::Var inputs,
                     std::span<const Index> instance_of_row, const QueryBatch& queries,
                     bool stop_gradient) const;

  // mean + L z + alpha P z for one index.
  nn::Tape::Var predict(nn::Tape& tape, const TapeOutput& out, const Vector& z) const;

 private:
  OperatorNet base_;
  EpinetHead head_;
  nn::ParamTree params_;
};

// Deep-ensemble ENN: the index selects one of n independently initialised
// base networks sharing one architecture.
class EnsembleEnn {
 public:
  static EnsembleEnn create(const NeonConfig& config, Index input_dim, Index query_dim,
                            Index output_dim, std::size_t members, std::uint64_t seed);

  EnsembleEnn(OperatorNet arch, std::vector<nn::ParamTree> members);

  const OperatorNet& arch() const { return arch_; }
  std::size_t size() const { return members_.size(); }
  nn::ParamTree& member(std::size_t i) { return members_.at(i); }
  const nn::ParamTree& member(std::size_t i) const { return members_.at(i); }

  // z is 1-based.
  Vector forward(const Vector& u, const Vector& y, std::size_t z) const;

 private:
  OperatorNet arch_;
  std::vector<nn::ParamTree> members_;
};

// Model checkpoint: the parameter-tree format at version 2 with index
// dimension, decoder kind, prior scale and Fourier scale in the header,
// followed by fourier.B (when enabled), trainable and prior layers.
void save_model(const std::filesystem::path& path, const NeonModel& model);
NeonModel load_model(const std::filesystem::path& path);

}  // namespace neon
