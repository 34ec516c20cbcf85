// SPDX-License-Identifier: Apache-2.0
#include "latentkf/encoder.hpp"
#include "latentkf/error.hpp"
#include "support/gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace latentkf;
using namespace latentkf::encoders;
using latentkf::testing::random_tensor;

namespace {

EncoderArch tiny_arch(bool with_prior) {
  EncoderArch a;
  a.height = 9;
  a.width = 10;
  a.m = 2;
  a.p = 1;
  a.channels = {2, 3};
  a.hidden = 4;
  a.prior_width = 3;
  a.with_prior = with_prior;
  a.input_scale = 0.5;
  a.periods = {2.0 * std::numbers::pi, 0.0};
  return a;
}

/// Non-trivial normalization constants and BN statistics so every code path does work.
template <class T>
void perturb_constants(ad::ParamSet<T>& ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps.at(i);
    if (p.trainable && p.name.find("bn") == std::string::npos) continue;
    for (auto& v : p.value.data) v = static_cast<T>(p.name.find("mean") != std::string::npos || p.name.find("beta") != std::string::npos ? u(rng) - 1.0 : u(rng));
  }
}

data::Dataset pendulum_data(std::size_t count, std::size_t length, std::uint64_t seed) {
  const auto spec = models::make_pendulum_spec(models::ObservationNoise::gaussian_from_level(23.0));
  return data::generate_dataset(spec, count, length, data::InitialStateRule::pendulum_from_rest(), seed);
}

}  // namespace

TEST_CASE("default architecture shapes") {
  EncoderArch a;
  const auto s = a.layer_shapes();
  REQUIRE(s.size() == 7);
  CHECK(s[1] == ad::Shape{8, 14, 14});
  CHECK(s[2] == ad::Shape{16, 7, 7});
  CHECK(s[3] == ad::Shape{32, 4, 4});
  CHECK(a.flatten_size() == 512);
  CHECK(s.back() == ad::Shape{1});
  a.p = 3;
  CHECK_THROWS_AS(a.validate(), InvalidArgument);
  a = EncoderArch{};
  a.periods = {1.0};
  CHECK_THROWS_AS(a.validate(), ShapeError);
}

TEST_CASE("for_model copies dimensions and periodicity") {
  const auto pend = EncoderArch::for_model(models::make_pendulum_spec(std::nullopt), true);
  CHECK(pend.m == 2);
  CHECK(pend.p == 1);
  CHECK(pend.period(0) == doctest::Approx(2.0 * std::numbers::pi));
  const auto lor = EncoderArch::for_model(models::make_lorenz_spec(std::nullopt), false);
  CHECK(lor.p == 3);
  CHECK(lor.periods.empty());
  CHECK(lor.input_scale == doctest::Approx(0.1));
}

TEST_CASE("encoder forward gradients in both BN modes") {
  for (bool with_prior : {false, true})
    for (bool bn_training : {true, false}) {
      const auto arch = tiny_arch(with_prior);
      auto ps = make_encoder_params<double>(arch, 3);
      perturb_constants(ps, 4);
      std::mt19937_64 rng(5);
      const auto frames = random_tensor({3, arch.height * arch.width}, rng);
      const auto prior = random_tensor({3, arch.m}, rng, -2.0, 2.0);
      const auto labels = random_tensor({3, arch.p}, rng);
      auto r = testing::gradcheck_params(
          [&](ad::Tape<double>& t, ad::ParamSet<double>& p) {
            std::optional<ad::Var<double>> pv;
            if (with_prior) pv = t.constant(prior);
            return ad::sse(encoder_forward(t, arch, p, t.constant(frames), pv, bn_training), t.constant(labels));
          },
          ps);
      CAPTURE(with_prior);
      CAPTURE(bn_training);
      CAPTURE(r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("tape forward, Encoder::encode and the inference path agree") {
  for (bool with_prior : {false, true}) {
    const auto arch = tiny_arch(with_prior);
    auto ps = make_encoder_params<float>(arch, 8);
    perturb_constants(ps, 9);
    Encoder enc(arch, ps);
    EncoderInference fast(enc);
    std::mt19937_64 rng(10);
    for (int k = 0; k < 5; ++k) {
      const auto frame = random_tensor({1, arch.height * arch.width}, rng).cast<float>();
      Eigen::VectorXd prior(2);
      prior << 7.0 * (k - 2), 0.3 * k;
      ad::Tape<float> tape(false);
      std::optional<ad::Var<float>> pv;
      if (with_prior) pv = tape.constant(ad::Tensor<float>({1, 2}, std::vector<float>{float(prior(0)), float(prior(1))}));
      const auto y = encoder_forward(tape, arch, enc.params(), tape.constant(frame), pv, false);
      const std::span<const float> fs(frame.data.data(), frame.data.size());
      const auto a = with_prior ? enc.encode_with_prior(fs, prior) : enc.encode(fs);
      const auto b = fast.run(fs, with_prior ? &prior : nullptr);
      CHECK(a(0) == doctest::Approx(y.value()[0]).epsilon(1e-5));
      CHECK(b(0) == doctest::Approx(a(0)).epsilon(1e-5));
    }
  }
}

TEST_CASE("periodic prior entries are read modulo their period") {
  const auto arch = tiny_arch(true);
  auto ps = make_encoder_params<float>(arch, 11);
  perturb_constants(ps, 12);
  Encoder enc(arch, ps);
  std::vector<float> frame(arch.height * arch.width, 0.25f);
  Eigen::VectorXd a(2), b(2);
  a << 0.4, 1.0;
  b << 0.4 - 4.0 * std::numbers::pi, 1.0;
  CHECK(enc.encode_with_prior(frame, a)(0) == doctest::Approx(enc.encode_with_prior(frame, b)(0)).epsilon(1e-5));
}

TEST_CASE("a warm encoder initialized from a plain one computes the same function") {
  const auto plain_arch = tiny_arch(false);
  auto ps = make_encoder_params<float>(plain_arch, 13);
  perturb_constants(ps, 14);
  Encoder plain(plain_arch, ps);
  Encoder warm(tiny_arch(true), 99);
  transfer_weights(warm, plain);
  std::mt19937_64 rng(15);
  for (int k = 0; k < 4; ++k) {
    const auto frame = random_tensor({plain_arch.height * plain_arch.width}, rng).cast<float>();
    Eigen::VectorXd prior = Eigen::VectorXd::Random(2) * 3.0;
    CHECK(warm.encode_with_prior(frame.data, prior)(0) == doctest::Approx(plain.encode(frame.data)(0)).epsilon(1e-6));
  }
  // Prior columns of the first head layer are zero; image columns are copied.
  const auto& w = warm.params().get("fc1.w").value;
  const auto& src = plain.params().get("fc1.w").value;
  const std::size_t flat = plain_arch.flatten_size(), cols = w.dim(1);
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    for (std::size_t c = 0; c < flat; ++c) CHECK(w.data[r * cols + c] == src.data[r * flat + c]);
    for (std::size_t c = flat; c < cols; ++c) CHECK(w.data[r * cols + c] == 0.0f);
  }
}

TEST_CASE("label statistics wrap periodic entries") {
  const auto ds = pendulum_data(6, 12, 21);
  const auto sp = ds.splits();
  const models::SelectionMatrix sel({0}, 2);
  const std::vector<double> periods{2.0 * std::numbers::pi, 0.0};
  const auto st = label_stats(ds, sp.train, sel, periods);
  double mu = 0.0;
  std::size_t n = 0;
  for (std::size_t d : sp.train)
    for (std::size_t t = 0; t < ds.length(); ++t, ++n) mu += models::wrap_near(ds.state(d, t)(0), 0.0, periods[0]);
  CHECK(st.state_mean[0] == doctest::Approx(mu / static_cast<double>(n)));
  CHECK(st.output_mean[0] == doctest::Approx(st.state_mean[0]));
  CHECK(st.output_std[0] > 0.0);
  CHECK_THROWS_AS(label_stats(ds, std::vector<std::size_t>{}, sel), InvalidArgument);
}

TEST_CASE("training lowers the loss, is reproducible and reports residual statistics") {
  const auto ds = pendulum_data(12, 10, 31);
  const auto sp = ds.splits();
  const auto spec = models::make_pendulum_spec(std::nullopt);
  EncoderTrainConfig cfg;
  cfg.optimizer.epochs = 4;
  cfg.optimizer.batch_size = 16;
  cfg.seed = 2;
  const auto arch = EncoderArch::for_model(spec, false);
  const auto a = train_encoder(ds, sp.train, sp.validation, spec.selection, arch, cfg);
  const auto b = train_encoder(ds, sp.train, sp.validation, spec.selection, arch, cfg);
  REQUIRE(a.epoch_losses.size() == 4);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
  CHECK(a.epoch_losses == b.epoch_losses);
  for (std::size_t i = 0; i < a.encoder.params().size(); ++i)
    CHECK(a.encoder.params().at(i).value.data == b.encoder.params().at(i).value.data);
  CHECK(a.residual_covariance.rows() == 1);
  CHECK(a.residual_covariance(0, 0) > 0.0);
  CHECK(std::isfinite(a.validation_mse));
}

TEST_CASE("a divergent learning rate is reported with the epoch") {
  const auto ds = pendulum_data(6, 6, 41);
  const auto sp = ds.splits();
  const auto spec = models::make_pendulum_spec(std::nullopt);
  EncoderTrainConfig cfg;
  cfg.optimizer.learning_rate = 1e12;
  cfg.optimizer.epochs = 3;
  try {
    train_encoder(ds, sp.train, sp.validation, spec.selection, EncoderArch::for_model(spec, false), cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
