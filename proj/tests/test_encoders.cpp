#include "fixtures.hpp"

#include <doctest.h>

using namespace avur;
using namespace avur::testing;

TEST_CASE("resample weights interpolate with aligned endpoints") {
  for (Eigen::Index src : {1, 2, 5, 9})
    for (Eigen::Index dst : {1, 3, 5, 17}) {
      const Matrix w = resample_weights(src, dst);
      CHECK(w.rows() == dst);
      CHECK(w.cols() == src);
      for (Eigen::Index i = 0; i < dst; ++i) CHECK(w.row(i).sum() == doctest::Approx(1.0).epsilon(1e-15));
      CHECK(w(0, 0) == 1.0);
      if (src > 1 && dst > 1) CHECK(w(dst - 1, src - 1) == 1.0);
    }
  CHECK(resample_weights(6, 6) == Matrix::Identity(6, 6));
  // position i * (T_in - 1) / (T_out - 1) for 3 -> 5
  const Matrix w = resample_weights(3, 5);
  CHECK(w(1, 0) == 0.5);
  CHECK(w(1, 1) == 0.5);
  CHECK(w(2, 1) == 1.0);
  CHECK_THROWS(resample_weights(0, 3));
}

TEST_CASE("tape resampling matches the value path") {
  Rng rng(4);
  FeatureSequence x{random_matrix(4, 3, rng), 12.5, Modality::visual};
  const FeatureSequence y = resample_to(x, 10);
  Tape t(false);
  const Matrix z = resample_to(t, t.constant(x.frames), 10).value();
  CHECK((y.frames - z).cwiseAbs().maxCoeff() == 0.0);
  CHECK(y.frames.row(0) == x.frames.row(0));
  CHECK(y.frames.row(9) == x.frames.row(3));
}

TEST_CASE("time encoding alternates sine and cosine") {
  const std::vector<double> times{0.0, 1.5};
  const Matrix pe = time_encoding(times, 6);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.5)));
  CHECK(pe(1, 3) == doctest::Approx(std::cos(1.5 * std::pow(1000.0, -2.0 / 6.0))));
}

TEST_CASE("encoder layers: count, shapes and agreement of both paths") {
  ToyEncoderConfig c;
  c.vocab = 6;
  c.dim = 8;
  c.depth = 3;
  c.heads = 2;
  c.ff_dim = 12;
  c.frames_per_token = 3;
  ToyEncoder enc(c);
  const std::vector<int> tokens{0, 5, 2};
  const FeatureSequence raw = enc.embed(tokens);
  CHECK(raw.length() == 9);
  CHECK(raw.frame_rate_hz == doctest::Approx(c.token_rate_hz * 3));
  const auto layers = enc.forward_layers(raw);
  REQUIRE(layers.size() == 4);
  for (const auto& l : layers) CHECK(l.frames.rows() == 9);
  Tape t(false);
  const auto tape_layers = enc.encode_layers(t, tokens, Matrix());
  for (size_t i = 0; i < layers.size(); ++i)
    CHECK((tape_layers[i].value() - layers[i].frames).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((enc.encode(tokens, Matrix(), 2).frames - layers[2].frames).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(enc.embed(std::vector<int>{7}), std::out_of_range);
  CHECK_THROWS(enc.embed(std::vector<int>{}));
}

TEST_CASE("frozen encoders take no gradient") {
  ToyEncoderConfig c;
  c.vocab = 4;
  c.dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.ff_dim = 8;
  ToyEncoder enc(c);
  CHECK(enc.frozen());
  Tape t;
  auto layers = enc.encode_layers(t, std::vector<int>{1, 2}, Matrix());
  t.backward(sum(layers.back()));
  for (Param* p : enc.params()) CHECK(p->grad.isZero(0.0));
}

TEST_CASE("projection applies X W + b per frame") {
  Rng rng(5);
  FeatureSequence x{random_matrix(3, 4, rng), 1.0, Modality::visual};
  const Matrix w = random_matrix(4, 2, rng);
  const RowVector b = random_matrix(1, 2, rng);
  const FeatureSequence y = project(x, w, b);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK((y.frames.row(i) - (x.frames.row(i) * w + b)).norm() <= 1e-14);
  CHECK_THROWS(project(x, random_matrix(3, 2, rng), b));
}
