#pragma once

// Encoder/decoder operator network mu(u, y) = d(e(u), y) with Concat and
// Split decoders, and the feature map phi(u, y) = (beta, mu_last, y) that
// feeds the EpiNet head.

#include <span>
#include <utility>
#include <vector>

#include "neon/nn.hpp"

namespace neon {

using nn::Index;
using nn::Matrix;
using nn::Vector;

struct EncoderConfig {
  Index input_dim = 1;
  std::vector<int> hidden{64, 64};
  Index latent_dim = 64;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class DecoderKind { kConcat, kSplit };

struct DecoderConfig {
  DecoderKind kind = DecoderKind::kSplit;
  std::vector<int> hidden{64, 64};
  Index output_dim = 1;
  Index query_dim = 1;
  bool fourier = true;
  Index n_freq = 64;
  double fourier_scale = 1.0;

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct BaseFeatures {
  Vector beta;
  Vector last_hidden;
  Vector query;

  Index size() const { return beta.size() + last_hidden.size() + query.size(); }
  Vector concat() const;
};

// Query points together with their (fixed) decoder encoding.
struct QueryBatch {
  Matrix points;   // rows x query_dim
  Matrix encoded;  // rows x encoding width
};

class OperatorNet {
 public:
  // Draws the Fourier frequency matrix from `rng` when enabled.
  OperatorNet(EncoderConfig encoder, DecoderConfig decoder, Rng& rng);
  OperatorNet(EncoderConfig encoder, DecoderConfig decoder, nn::FourierFeatureMap fourier);

  const EncoderConfig& encoder_config() const { return encoder_; }
  const DecoderConfig& decoder_config() const { return decoder_; }
  const nn::FourierFeatureMap& fourier() const { return fourier_; }

  // Layers named encoder.k then decoder.k.
  nn::ParamTree init_params(Rng& rng) const;
  std::size_t encoder_layer_count() const { return encoder_.hidden.size() + 1; }
  std::size_t layer_count() const { return encoder_layer_count() + decoder_.hidden.size() + 1; }

  Index query_encoding_width() const;
  Index chunk_size() const;
  // d_beta + last decoder hidden width + d_y.
  Index feature_dim() const;

  QueryBatch make_queries(const Matrix& points) const;

  // The value API reads the first layer_count() layers of `params`.
  Vector encode(const nn::ParamTree& params, const Vector& u) const;
  Vector decode(const nn::ParamTree& params, const Vector& beta, const Vector& y) const;

  struct Output {
    Vector prediction;
    BaseFeatures features;
  };
  Output forward(const nn::ParamTree& params, const Vector& u, const Vector& y) const;

  struct TapeOutput {
    nn::Tape::Var prediction;   // rows x d_s
    nn::Tape::Var beta;         // rows x d_beta (gathered per row)
    nn::Tape::Var last_hidden;  // rows x last hidden width
    nn::Tape::Var query;        // rows x d_y (constant)
  };

  // `inputs` holds one instance per row; query row r belongs to instance
  // instance_of_row[r].
  TapeOutput forward(nn::Tape& tape, std::span<const nn::BoundLayer> layers, nn::Tape::Var inputs,
                     std::span<const Index> instance_of_row, const QueryBatch& queries) const;

  nn::Tape::Var features(nn::Tape& tape, const TapeOutput& out) const;

 private:
  void validate() const;
  // Returns (prediction, last hidden activations).
  std::pair<nn::Tape::Var, nn::Tape::Var> decode_rows(nn::Tape& tape,
                                                       std::span<const nn::BoundLayer> dec,
                                                       nn::Tape::Var beta,
                                                       nn::Tape::Var enc_q) const;

  EncoderConfig encoder_;
  DecoderConfig decoder_;
  nn::FourierFeatureMap fourier_;
};

}  // namespace neon
