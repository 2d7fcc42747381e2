#include "neon/operator_net.hpp"

#include "neon/error.hpp"

namespace neon {

using nn::Tape;

Vector BaseFeatures::concat() const {
  Vector out(size());
  out << beta, last_hidden, query;
  return out;
}

OperatorNet::OperatorNet(EncoderConfig encoder, DecoderConfig decoder, Rng& rng)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  validate();
  if (decoder_.fourier)
    fourier_ = nn::FourierFeatureMap(decoder_.n_freq, decoder_.query_dim, decoder_.fourier_scale, rng);
}

OperatorNet::OperatorNet(EncoderConfig encoder, DecoderConfig decoder,
                         nn::FourierFeatureMap fourier)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), fourier_(std::move(fourier)) {
  validate();
  if (decoder_.fourier &&
      (fourier_.query_dim() != decoder_.query_dim || fourier_.width() != 2 * decoder_.n_freq))
    throw DimensionError("OperatorNet: Fourier matrix does not match the decoder config");
}

void OperatorNet::validate() const {
  if (encoder_.input_dim < 1) throw ConfigError("encoder input dimension must be >= 1");
  if (encoder_.latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
  if (decoder_.hidden.empty()) throw ConfigError("decoder needs at least one hidden layer");
  if (decoder_.output_dim < 1) throw ConfigError("decoder output dimension must be >= 1");
  if (decoder_.query_dim < 1) throw ConfigError("query dimension must be >= 1");
  if (decoder_.fourier && decoder_.n_freq < 1) throw ConfigError("n_freq must be >= 1");
  for (int h : encoder_.hidden)
    if (h < 1) throw ConfigError("encoder hidden widths must be >= 1");
  for (int h : decoder_.hidden)
    if (h < 1) throw ConfigError("decoder hidden widths must be >= 1");
  if (decoder_.kind == DecoderKind::kSplit) {
    const auto n = static_cast<Index>(decoder_.hidden.size());
    if (encoder_.latent_dim % n != 0)
      throw ConfigError("split decoder: latent dimension " + std::to_string(encoder_.latent_dim) +
                        " is not divisible by " + std::to_string(n) + " decoder layers");
  }
}

Index OperatorNet::query_encoding_width() const {
  return decoder_.fourier ? 2 * decoder_.n_freq : decoder_.query_dim;
}

Index OperatorNet::chunk_size() const {
  if (decoder_.kind == DecoderKind::kConcat) return encoder_.latent_dim;
  return encoder_.latent_dim / static_cast<Index>(decoder_.hidden.size());
}

Index OperatorNet::feature_dim() const {
  return encoder_.latent_dim + decoder_.hidden.back() + decoder_.query_dim;
}

nn::ParamTree OperatorNet::init_params(Rng& rng) const {
  nn::ParamTree params = nn::make_mlp("encoder", encoder_.input_dim, encoder_.hidden,
                                      encoder_.latent_dim, rng);
  const Index q = query_encoding_width();
  Index width = 0;
  for (std::size_t i = 0; i < decoder_.hidden.size(); ++i) {
    Index in = 0;
    if (decoder_.kind == DecoderKind::kSplit)
      in = (i == 0 ? q : width) + chunk_size();
    else
      in = i == 0 ? encoder_.latent_dim + q : width;
    auto l = nn::glorot_layer("decoder." + std::to_string(i), in, decoder_.hidden[i], rng);
    params.add(std::move(l.name), std::move(l.weight), std::move(l.bias));
    width = decoder_.hidden[i];
  }
  auto l = nn::glorot_layer("decoder." + std::to_string(decoder_.hidden.size()), width,
                            decoder_.output_dim, rng);
  params.add(std::move(l.name), std::move(l.weight), std::move(l.bias));
  return params;
}

QueryBatch OperatorNet::make_queries(const Matrix& points) const {
  if (points.cols() != decoder_.query_dim)
    throw DimensionError("query points have width " + std::to_string(points.cols()) +
                         ", expected " + std::to_string(decoder_.query_dim));
  return {points, decoder_.fourier ? fourier_.encode(points) : points};
}

OperatorNet::TapeOutput OperatorNet::forward(Tape& tape, std::span<const nn::BoundLayer> layers,
                                             Tape::Var inputs,
                                             std::span<const Index> instance_of_row,
                                             const QueryBatch& queries) const {
  if (layers.size() < layer_count())
    throw DimensionError("OperatorNet::forward: expected " + std::to_string(layer_count()) +
                         " layers, got " + std::to_string(layers.size()));
  if (tape.value(inputs).cols() != encoder_.input_dim)
    throw DimensionError("encode: input width " + std::to_string(tape.value(inputs).cols()) +
                         " != " + std::to_string(encoder_.input_dim));
  if (static_cast<Index>(instance_of_row.size()) != queries.points.rows())
    throw DimensionError("OperatorNet::forward: row assignment does not match queries");

  const std::size_t ne = encoder_layer_count();
  const Tape::Var beta_inst = nn::mlp(tape, layers.first(ne), inputs, nn::Activation::kTanh);
  const Tape::Var beta =
      tape.gather_rows(beta_inst, std::vector<Index>(instance_of_row.begin(), instance_of_row.end()));
  const auto [pred, h] = decode_rows(tape, layers.subspan(ne, decoder_.hidden.size() + 1), beta,
                                     tape.constant(queries.encoded));
  return {pred, beta, h, tape.constant(queries.points)};
}

std::pair<Tape::Var, Tape::Var> OperatorNet::decode_rows(Tape& tape,
                                                         std::span<const nn::BoundLayer> dec,
                                                         Tape::Var beta, Tape::Var enc_q) const {
  Tape::Var h{};
  if (decoder_.kind == DecoderKind::kConcat) {
    h = tape.concat_cols({beta, enc_q});
    for (std::size_t i = 0; i < decoder_.hidden.size(); ++i)
      h = tape.activate(tape.affine(h, dec[i].weight, dec[i].bias), nn::Activation::kTanh);
  } else {
    // Chunk i of beta joins the input of hidden layer i.
    const Index c = chunk_size();
    for (std::size_t i = 0; i < decoder_.hidden.size(); ++i) {
      const Tape::Var chunk = tape.slice_cols(beta, static_cast<Index>(i) * c, c);
      const Tape::Var in = tape.concat_cols({i == 0 ? enc_q : h, chunk});
      h = tape.activate(tape.affine(in, dec[i].weight, dec[i].bias), nn::Activation::kTanh);
    }
  }
  return {tape.affine(h, dec.back().weight, dec.back().bias), h};
}

Tape::Var OperatorNet::features(Tape& tape, const TapeOutput& out) const {
  return tape.concat_cols({out.beta, out.last_hidden, out.query});
}

Vector OperatorNet::encode(const nn::ParamTree& params, const Vector& u) const {
  if (u.size() != encoder_.input_dim)
    throw DimensionError("encode: input length " + std::to_string(u.size()) + " != " +
                         std::to_string(encoder_.input_dim));
  return nn::mlp_forward(params.layers().first(encoder_layer_count()), u, nn::Activation::kTanh);
}

Vector OperatorNet::decode(const nn::ParamTree& params, const Vector& beta, const Vector& y) const {
  if (beta.size() != encoder_.latent_dim)
    throw DimensionError("decode: latent length " + std::to_string(beta.size()) + " != " +
                         std::to_string(encoder_.latent_dim));
  Tape tape;
  const auto bound = nn::bind(tape, params.slice(0, layer_count()), false);
  const QueryBatch q = make_queries(Matrix(y.transpose()));
  const auto [pred, h] =
      decode_rows(tape, std::span<const nn::BoundLayer>(bound).subspan(encoder_layer_count()),
                  tape.constant(Matrix(beta.transpose())), tape.constant(q.encoded));
  return tape.value(pred).row(0).transpose();
}

OperatorNet::Output OperatorNet::forward(const nn::ParamTree& params, const Vector& u,
                                         const Vector& y) const {
  if (u.size() != encoder_.input_dim)
    throw DimensionError("forward: input length " + std::to_string(u.size()) + " != " +
                         std::to_string(encoder_.input_dim));
  Tape tape;
  const auto bound = nn::bind(tape, params.slice(0, layer_count()), false);
  const Index row0 = 0;
  const auto out = forward(tape, bound, tape.constant(Matrix(u.transpose())),
                           std::span<const Index>(&row0, 1), make_queries(Matrix(y.transpose())));
  return {tape.value(out.prediction).row(0).transpose(),
          {tape.value(out.beta).row(0).transpose(), tape.value(out.last_hidden).row(0).transpose(),
           y}};
}

}  // namespace neon
