#include "neon/epinet.hpp"

#include <fstream>
#include <string>

#include "neon/checkpoint.hpp"
#include "neon/error.hpp"

namespace neon {

using nn::Tape;

namespace {

enum SeedStream : std::uint64_t { kFourierStream = 1, kBaseStream, kHeadStream, kPriorStream };

}  // namespace

Vector sample_index(Index index_dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(index_dim);
  for (Index i = 0; i < index_dim; ++i) z(i) = normal(rng);
  return z;
}

// ---------------------------------------------------------------------------
// EpinetHead

EpinetHead::EpinetHead(EpinetConfig config, Index feature_dim, Index output_dim, Rng& prior_rng)
    : config_(std::move(config)), feature_dim_(feature_dim), output_dim_(output_dim) {
  if (config_.index_dim < 1) throw ConfigError("epinet index dimension must be >= 1");
  if (config_.prior_scale < 0.0) throw ConfigError("prior scale must be >= 0");
  for (Index i = 0; i < config_.index_dim; ++i) {
    const nn::ParamTree member = nn::make_mlp("prior." + std::to_string(i), feature_dim_,
                                              config_.prior_hidden, output_dim_, prior_rng);
    prior_.append(member);
  }
  pack_prior();
}

EpinetHead::EpinetHead(EpinetConfig config, Index feature_dim, Index output_dim,
                       nn::ParamTree prior)
    : config_(std::move(config)),
      feature_dim_(feature_dim),
      output_dim_(output_dim),
      prior_(std::move(prior)) {
  const std::size_t per_member = config_.prior_hidden.size() + 1;
  if (prior_.size() != per_member * static_cast<std::size_t>(config_.index_dim))
    throw DimensionError("epinet prior: expected " +
                         std::to_string(per_member * static_cast<std::size_t>(config_.index_dim)) +
                         " layers, got " + std::to_string(prior_.size()));
  pack_prior();
}

void EpinetHead::pack_prior() {
  const std::size_t per_member = config_.prior_hidden.size() + 1;
  const auto members = static_cast<std::size_t>(config_.index_dim);
  packed_ = nn::ParamTree{};
  for (std::size_t k = 0; k < per_member; ++k) {
    const nn::Layer& first = prior_[k];
    const Index out = first.weight.rows();
    const Index in = first.weight.cols();
    Matrix weight = Matrix::Zero(out * config_.index_dim, k == 0 ? in : in * config_.index_dim);
    Vector bias(out * config_.index_dim);
    for (std::size_t i = 0; i < members; ++i) {
      const nn::Layer& l = prior_[i * per_member + k];
      if (l.weight.rows() != out || l.weight.cols() != in)
        throw DimensionError("epinet prior: members differ in shape");
      const Index r = static_cast<Index>(i) * out;
      const Index c = k == 0 ? 0 : static_cast<Index>(i) * in;
      weight.block(r, c, out, in) = l.weight;
      bias.segment(r, out) = l.bias;
    }
    packed_.add("prior.packed." + std::to_string(k), std::move(weight), std::move(bias));
  }
}

nn::ParamTree EpinetHead::init_learnable(Rng& rng) const {
  nn::ParamTree tree =
      nn::make_mlp("epinet", feature_dim_, config_.hidden, config_.index_dim * output_dim_, rng);
  auto& out = tree[tree.size() - 1];
  out.weight.setZero();
  out.bias.setZero();
  return tree;
}

Vector EpinetHead::prior_forward(const Vector& features, const Vector& z) const {
  if (features.size() != feature_dim_ || z.size() != config_.index_dim)
    throw DimensionError("prior_forward: feature or index length mismatch");
  const std::size_t per_member = config_.prior_hidden.size() + 1;
  Vector out = Vector::Zero(output_dim_);
  for (Index i = 0; i < config_.index_dim; ++i) {
    const auto member =
        prior_.layers().subspan(static_cast<std::size_t>(i) * per_member, per_member);
    out += z(i) * nn::mlp_forward(member, features, nn::Activation::kTanh);
  }
  return out;
}

Vector EpinetHead::learnable_forward(std::span<const nn::Layer> learnable, const Vector& features,
                                     const Vector& z) const {
  if (features.size() != feature_dim_ || z.size() != config_.index_dim)
    throw DimensionError("learnable_forward: feature or index length mismatch");
  const Vector flat = nn::mlp_forward(learnable.first(learnable_layer_count()), features,
                                      nn::Activation::kTanh);
  // Column j * d_s + s holds M(s, j).
  const Eigen::Map<const Matrix> m(flat.data(), output_dim_, config_.index_dim);
  return m * z;
}

Tape::Var EpinetHead::learnable_matrix(Tape& tape, std::span<const nn::BoundLayer> learnable,
                                       Tape::Var features) const {
  return nn::mlp(tape, learnable.first(learnable_layer_count()), features, nn::Activation::kTanh);
}

Tape::Var EpinetHead::prior_matrix(Tape& tape, std::span<const nn::BoundLayer> packed,
                                   Tape::Var features) const {
  return nn::mlp(tape, packed, features, nn::Activation::kTanh);
}

// ---------------------------------------------------------------------------
// NeonModel

NeonModel NeonModel::create(const NeonConfig& config, Index input_dim, Index query_dim,
                            Index output_dim, std::uint64_t seed) {
  EncoderConfig enc{input_dim, config.encoder_hidden, config.latent_dim};
  DecoderConfig dec{config.decoder,   config.decoder_hidden, output_dim,
                    query_dim,        config.fourier,        config.n_freq,
                    config.fourier_scale};
  Rng fourier_rng(derive_seed(seed, {kFourierStream}));
  Rng base_rng(derive_seed(seed, {kBaseStream}));
  Rng head_rng(derive_seed(seed, {kHeadStream}));
  Rng prior_rng(derive_seed(seed, {kPriorStream}));

  OperatorNet base(std::move(enc), std::move(dec), fourier_rng);
  EpinetHead head(config.epinet, base.feature_dim(), output_dim, prior_rng);
  nn::ParamTree params = base.init_params(base_rng);
  params.append(head.init_learnable(head_rng));
  return NeonModel(std::move(base), std::move(head), std::move(params));
}

NeonModel::NeonModel(OperatorNet base, EpinetHead head, nn::ParamTree params)
    : base_(std::move(base)), head_(std::move(head)), params_(std::move(params)) {
  if (params_.size() != base_.layer_count() + head_.learnable_layer_count())
    throw DimensionError("NeonModel: expected " +
                         std::to_string(base_.layer_count() + head_.learnable_layer_count()) +
                         " trainable layers, got " + std::to_string(params_.size()));
  if (head_.feature_dim() != base_.feature_dim())
    throw DimensionError("NeonModel: head feature width does not match the base network");
}

Vector NeonModel::forward(const Vector& u, const Vector& y, const Vector& z) const {
  const auto base_out = base_.forward(params_, u, y);
  const Vector x = base_out.features.concat();
  return base_out.prediction + head_.learnable_forward(learnable_layers(), x, z) +
         prior_scale() * head_.prior_forward(x, z);
}

NeonModel::TapeOutput NeonModel::forward(Tape& tape, std::span<const nn::BoundLayer> trainable,
                                         std::span<const nn::BoundLayer> prior, Tape::Var inputs,
                                         std::span<const Index> instance_of_row,
                                         const QueryBatch& queries, bool stop_gradient) const {
  const auto base_out = base_.forward(tape, trainable, inputs, instance_of_row, queries);
  Tape::Var x = base_.features(tape, base_out);
  if (stop_gradient) x = tape.stop_gradient(x);
  const Tape::Var learn =
      head_.learnable_matrix(tape, trainable.subspan(base_.layer_count()), x);
  const Tape::Var pri = head_.prior_matrix(tape, prior, x);
  return {base_out, learn, pri};
}

Tape::Var NeonModel::predict(Tape& tape, const TapeOutput& out, const Vector& z) const {
  Tape::Var y = tape.add(out.base.prediction, tape.contract_index(out.learnable, z));
  if (prior_scale() != 0.0)
    y = tape.add(y, tape.scale(tape.contract_index(out.prior, z), prior_scale()));
  return y;
}

// ---------------------------------------------------------------------------
// EnsembleEnn

EnsembleEnn EnsembleEnn::create(const NeonConfig& config, Index input_dim, Index query_dim,
                                Index output_dim, std::size_t members, std::uint64_t seed) {
  if (members < 1) throw ConfigError("ensemble needs at least one member");
  EncoderConfig enc{input_dim, config.encoder_hidden, config.latent_dim};
  DecoderConfig dec{config.decoder,   config.decoder_hidden, output_dim,
                    query_dim,        config.fourier,        config.n_freq,
                    config.fourier_scale};
  Rng fourier_rng(derive_seed(seed, {kFourierStream}));
  OperatorNet arch(std::move(enc), std::move(dec), fourier_rng);
  std::vector<nn::ParamTree> trees;
  for (std::size_t i = 0; i < members; ++i) {
    Rng rng(derive_seed(seed, {kBaseStream, i}));
    trees.push_back(arch.init_params(rng));
  }
  return EnsembleEnn(std::move(arch), std::move(trees));
}

EnsembleEnn::EnsembleEnn(OperatorNet arch, std::vector<nn::ParamTree> members)
    : arch_(std::move(arch)), members_(std::move(members)) {
  if (members_.empty()) throw ConfigError("ensemble needs at least one member");
}

Vector EnsembleEnn::forward(const Vector& u, const Vector& y, std::size_t z) const {
  if (z < 1 || z > members_.size())
    throw DimensionError("ensemble index " + std::to_string(z) + " outside [1, " +
                         std::to_string(members_.size()) + "]");
  return arch_.forward(members_[z - 1], u, y).prediction;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_model(const std::filesystem::path& path, const NeonModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  detail::write_magic(out, kModelVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(model.index_dim()));
  detail::write_u32(out, model.base().decoder_config().kind == DecoderKind::kSplit ? 1u : 0u);
  detail::write_f64(out, model.prior_scale());
  detail::write_f64(out, model.base().decoder_config().fourier
                             ? model.base().decoder_config().fourier_scale
                             : 0.0);
  nn::ParamTree all;
  if (model.base().decoder_config().fourier) {
    const Matrix& b = model.base().fourier().frequencies();
    all.add("fourier.B", b, Vector::Zero(b.rows()));
  }
  all.append(model.params());
  all.append(model.head().prior());
  detail::write_layers(out, all);
}

NeonModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  const std::uint32_t version = detail::read_magic(in);
  if (version != kModelVersion)
    throw ConfigError("model checkpoint: expected version 2, found " + std::to_string(version));
  const auto index_dim = static_cast<Index>(detail::read_u32(in));
  const DecoderKind kind = detail::read_u32(in) == 1u ? DecoderKind::kSplit : DecoderKind::kConcat;
  const double prior_scale = detail::read_f64(in);
  const double fourier_scale = detail::read_f64(in);
  const nn::ParamTree all = detail::read_layers(in);

  auto starts_with = [](const std::string& s, std::string_view p) { return s.rfind(p, 0) == 0; };
  nn::ParamTree encoder, decoder, learnable, prior;
  const nn::Layer* fourier = nullptr;
  for (const auto& l : all.layers()) {
    if (l.name == "fourier.B")
      fourier = &l;
    else if (starts_with(l.name, "encoder."))
      encoder.add(l.name, l.weight, l.bias);
    else if (starts_with(l.name, "decoder."))
      decoder.add(l.name, l.weight, l.bias);
    else if (starts_with(l.name, "epinet."))
      learnable.add(l.name, l.weight, l.bias);
    else if (starts_with(l.name, "prior."))
      prior.add(l.name, l.weight, l.bias);
    else
      throw ConfigError("model checkpoint: unexpected layer '" + l.name + "'");
  }
  if (encoder.size() < 1 || decoder.size() < 2 || learnable.size() < 1 || index_dim < 1)
    throw ConfigError("model checkpoint: incomplete layer set");

  EncoderConfig enc;
  enc.input_dim = encoder[0].weight.cols();
  enc.hidden.clear();
  for (std::size_t i = 0; i + 1 < encoder.size(); ++i)
    enc.hidden.push_back(static_cast<int>(encoder[i].weight.rows()));
  enc.latent_dim = encoder[encoder.size() - 1].weight.rows();

  DecoderConfig dec;
  dec.kind = kind;
  dec.hidden.clear();
  for (std::size_t i = 0; i + 1 < decoder.size(); ++i)
    dec.hidden.push_back(static_cast<int>(decoder[i].weight.rows()));
  dec.output_dim = decoder[decoder.size() - 1].weight.rows();
  dec.fourier = fourier != nullptr;
  nn::FourierFeatureMap ffm;
  if (fourier) {
    dec.n_freq = fourier->weight.rows();
    dec.query_dim = fourier->weight.cols();
    dec.fourier_scale = fourier_scale;
    ffm = nn::FourierFeatureMap(fourier->weight, fourier_scale);
  } else {
    const Index chunk = kind == DecoderKind::kSplit
                            ? enc.latent_dim / static_cast<Index>(dec.hidden.size())
                            : enc.latent_dim;
    dec.query_dim = decoder[0].weight.cols() - chunk;
  }

  EpinetConfig epi;
  epi.index_dim = index_dim;
  epi.prior_scale = prior_scale;
  epi.hidden.clear();
  for (std::size_t i = 0; i + 1 < learnable.size(); ++i)
    epi.hidden.push_back(static_cast<int>(learnable[i].weight.rows()));
  const std::size_t per_member = prior.size() / static_cast<std::size_t>(index_dim);
  epi.prior_hidden.clear();
  for (std::size_t i = 0; i + 1 < per_member; ++i)
    epi.prior_hidden.push_back(static_cast<int>(prior[i].weight.rows()));

  OperatorNet base(std::move(enc), std::move(dec), std::move(ffm));
  EpinetHead head(std::move(epi), base.feature_dim(), base.decoder_config().output_dim,
                  std::move(prior));
  nn::ParamTree params = encoder;
  params.append(decoder);
  params.append(learnable);
  return NeonModel(std::move(base), std::move(head), std::move(params));
}

}  // namespace neon
