#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fd.hpp"
#include "neon/error.hpp"
#include "neon/operator_net.hpp"

using namespace neon;

namespace {

OperatorNet make_net(DecoderKind kind, Index d_u, Index latent, std::vector<int> dec_hidden,
                     Index d_s, Index d_y, bool fourier, std::uint64_t seed) {
  EncoderConfig e;
  e.input_dim = d_u;
  e.hidden = {8, 8};
  e.latent_dim = latent;
  DecoderConfig d;
  d.kind = kind;
  d.hidden = std::move(dec_hidden);
  d.output_dim = d_s;
  d.query_dim = d_y;
  d.fourier = fourier;
  d.n_freq = 6;
  d.fourier_scale = 2.0;
  Rng rng(seed);
  return OperatorNet(e, d, rng);
}

Vector randomize_biases(nn::ParamTree& p, Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& l : p.layers()) l.bias = l.bias.unaryExpr([&](double) { return n(rng); });
  return p.flatten();
}

// Hand-evaluated decoder: dense layers as explicit loops over the documented
// input layout.
Vector reference_decode(const OperatorNet& net, const nn::ParamTree& p, const Vector& beta,
                        const Vector& y) {
  const auto& dc = net.decoder_config();
  const std::size_t base = net.encoder_layer_count();
  Vector enc = dc.fourier ? net.fourier().encode(y) : y;
  const auto dense = [](const nn::Layer& l, const std::vector<double>& in, bool act) {
    std::vector<double> out(static_cast<std::size_t>(l.weight.rows()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      double acc = l.bias(i);
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
        acc += l.weight(i, j) * in[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = act ? std::tanh(acc) : acc;
    }
    return out;
  };
  std::vector<double> h;
  const std::size_t n = dc.hidden.size();
  const Index chunk = dc.kind == DecoderKind::kSplit ? beta.size() / static_cast<Index>(n) : 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> in;
    if (dc.kind == DecoderKind::kConcat) {
      if (i == 0) {
        for (Eigen::Index j = 0; j < beta.size(); ++j) in.push_back(beta(j));
        for (Eigen::Index j = 0; j < enc.size(); ++j) in.push_back(enc(j));
      } else {
        in = h;
      }
    } else {
      if (i == 0)
        for (Eigen::Index j = 0; j < enc.size(); ++j) in.push_back(enc(j));
      else
        in = h;
      for (Index j = 0; j < chunk; ++j) in.push_back(beta(static_cast<Index>(i) * chunk + j));
    }
    h = dense(p[base + i], in, true);
  }
  const auto out = dense(p[base + n], h, false);
  return Eigen::Map<const Vector>(out.data(), static_cast<Index>(out.size()));
}

}  // namespace

TEST_CASE("zero-weight encoder returns its final bias") {
  const OperatorNet net = make_net(DecoderKind::kConcat, 3, 4, {5}, 1, 1, true, 1);
  Rng rng(2);
  nn::ParamTree p = net.init_params(rng);
  for (std::size_t i = 0; i < net.encoder_layer_count(); ++i) p[i].weight.setZero();
  p[net.encoder_layer_count() - 1].bias = Vector{{0.1, -0.2, 0.3, 0.4}};
  CHECK(net.encode(p, Vector{{5.0, -3.0, 2.0}}) == Vector{{0.1, -0.2, 0.3, 0.4}});
}

TEST_CASE("encoding is bit-reproducible") {
  const OperatorNet a = make_net(DecoderKind::kSplit, 4, 6, {7, 7}, 2, 2, true, 11);
  const OperatorNet b = make_net(DecoderKind::kSplit, 4, 6, {7, 7}, 2, 2, true, 11);
  Rng r1(3), r2(3);
  const auto pa = a.init_params(r1);
  const auto pb = b.init_params(r2);
  const Vector u{{0.1, 0.2, 0.3, 0.4}};
  const Vector ba = a.encode(pa, u);
  const Vector bb = b.encode(pb, u);
  CHECK(std::memcmp(ba.data(), bb.data(), sizeof(double) * 6) == 0);
  CHECK(a.fourier().frequencies() == b.fourier().frequencies());
}

TEST_CASE("decoders match hand evaluation") {
  for (const DecoderKind kind : {DecoderKind::kConcat, DecoderKind::kSplit}) {
    for (const bool fourier : {true, false}) {
      const OperatorNet net = make_net(kind, 3, 6, {5, 4, 3}, 2, 2, fourier, 21);
      Rng rng(4);
      nn::ParamTree p = net.init_params(rng);
      randomize_biases(p, rng);
      const Vector beta{{0.3, -0.5, 1.1, 0.2, -0.9, 0.05}};
      const Vector y{{0.25, 0.75}};
      const Vector got = net.decode(p, beta, y);
      const Vector want = reference_decode(net, p, beta, y);
      REQUIRE(got.size() == 2);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-13);
    }
  }
}

TEST_CASE("concat decoder with zero weights and zero latent returns the bias chain") {
  const OperatorNet net = make_net(DecoderKind::kConcat, 2, 3, {4}, 2, 1, true, 5);
  Rng rng(6);
  nn::ParamTree p = net.init_params(rng);
  const std::size_t e = net.encoder_layer_count();
  p[e].weight.setZero();
  p[e].bias = Vector{{0.2, -0.1, 0.0, 0.4}};
  p[e + 1].weight.setZero();
  p[e + 1].bias = Vector{{1.5, -2.5}};
  CHECK(net.decode(p, Vector::Zero(3), Vector{{0.3}}) == Vector{{1.5, -2.5}});
}

TEST_CASE("split decoder with one hidden layer equals concat with permuted columns") {
  const OperatorNet split = make_net(DecoderKind::kSplit, 3, 4, {6}, 2, 2, true, 8);
  const OperatorNet concat(split.encoder_config(),
                           [&] {
                             auto d = split.decoder_config();
                             d.kind = DecoderKind::kConcat;
                             return d;
                           }(),
                           split.fourier());
  Rng rng(9);
  nn::ParamTree ps = split.init_params(rng);
  randomize_biases(ps, rng);
  nn::ParamTree pc = ps;
  const std::size_t e = split.encoder_layer_count();
  const Index q = split.query_encoding_width();
  const Matrix& w = ps[e].weight;  // [fourier | beta]
  Matrix wc(w.rows(), w.cols());
  wc << w.rightCols(4), w.leftCols(q);  // [beta | fourier]
  pc[e].weight = wc;
  const Vector u{{0.2, -0.4, 0.9}};
  const Vector y{{0.1, 0.6}};
  const Vector a = split.forward(ps, u, y).prediction;
  const Vector b = concat.forward(pc, u, y).prediction;
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("split chunk sizes") {
  const OperatorNet net = make_net(DecoderKind::kSplit, 2, 96, {8, 8, 8}, 1, 1, true, 1);
  CHECK(net.chunk_size() == 32);
  CHECK_THROWS_AS(make_net(DecoderKind::kSplit, 2, 96, {8, 8, 8, 8, 8}, 1, 1, true, 1),
                  ConfigError);
}

TEST_CASE("feature length is latent plus last hidden plus query dim") {
  const OperatorNet net = make_net(DecoderKind::kSplit, 4, 64, {64, 64}, 1, 2, true, 1);
  CHECK(net.feature_dim() == 64 + 64 + 2);
  Rng rng(2);
  const auto p = net.init_params(rng);
  const auto out = net.forward(p, Vector{{0.1, 0.2, 0.3, 0.4}}, Vector{{0.5, 0.5}});
  CHECK(out.features.size() == 130);
  CHECK(out.features.concat().size() == 130);
}

TEST_CASE("forward equals encode then decode") {
  const OperatorNet net = make_net(DecoderKind::kConcat, 3, 5, {6, 6}, 3, 2, true, 31);
  Rng rng(7);
  nn::ParamTree p = net.init_params(rng);
  randomize_biases(p, rng);
  const Vector u{{0.4, 0.5, -0.6}};
  const Vector y{{0.9, 0.1}};
  const auto out = net.forward(p, u, y);
  const Vector composed = net.decode(p, net.encode(p, u), y);
  CHECK(out.prediction == composed);
  CHECK(out.features.beta == net.encode(p, u));
  CHECK(out.features.query == y);
}

TEST_CASE("permuting query rows permutes outputs") {
  const OperatorNet net = make_net(DecoderKind::kSplit, 2, 4, {5, 5}, 2, 2, true, 13);
  Rng rng(1);
  const auto p = net.init_params(rng);
  Matrix y(5, 2);
  y << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.0;
  const std::vector<Index> perm{3, 1, 4, 0, 2};
  Matrix yp(5, 2);
  for (Index r = 0; r < 5; ++r) yp.row(r) = y.row(perm[static_cast<std::size_t>(r)]);
  const auto run = [&](const Matrix& pts) {
    nn::Tape tape;
    const auto bound = nn::bind(tape, p, false);
    const std::vector<Index> rows(5, 0);
    const auto out = net.forward(tape, bound, tape.constant(Matrix{{0.3, -0.7}}), rows,
                                 net.make_queries(pts));
    return Matrix(tape.value(out.prediction));
  };
  const Matrix a = run(y);
  const Matrix b = run(yp);
  for (Index r = 0; r < 5; ++r) CHECK(b.row(r) == a.row(perm[static_cast<std::size_t>(r)]));
}

TEST_CASE("gradient with respect to u matches central differences") {
  for (const DecoderKind kind : {DecoderKind::kConcat, DecoderKind::kSplit}) {
    const OperatorNet net = make_net(kind, 3, 4, {6, 6}, 2, 1, true, 17);
    Rng rng(23);
    nn::ParamTree p = net.init_params(rng);
    randomize_biases(p, rng);
    Matrix y(4, 1);
    y << 0.0, 0.3, 0.6, 0.9;
    const QueryBatch q = net.make_queries(y);
    const std::vector<Index> rows(4, 0);
    const Vector weights{{0.5, -1.0, 2.0, 0.25, 1.0, -0.5, 0.75, 1.5}};
    const auto value = [&](const Vector& u, Vector* grad) {
      nn::Tape tape;
      const auto bound = nn::bind(tape, p, false);
      const auto in = tape.variable(Matrix(u.transpose()));
      const auto out = net.forward(tape, bound, in, rows, q);
      const Matrix pred = tape.value(out.prediction);
      const Matrix w = Eigen::Map<const Matrix>(weights.data(), 4, 2);
      if (grad) {
        const std::pair<nn::Tape::Var, Matrix> seed{out.prediction, w};
        tape.backward(std::span(&seed, 1));
        *grad = tape.grad(in).transpose();
      }
      return (pred.array() * w.array()).sum();
    };
    const Vector u{{0.2, -0.1, 0.7}};
    Vector g;
    value(u, &g);
    const Vector numeric =
        testutil::central_difference([&](const Vector& x) { return value(x, nullptr); }, u);
    CHECK(testutil::compare_gradients(g, numeric).worst < 1e-4);
  }
}
