// SPDX-License-Identifier: Apache-2.0
#include "latentkf/error.hpp"
#include "latentkf/filters.hpp"
#include "latentkf/pipeline.hpp"
#include "support/rollout_fixture.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace latentkf;
using namespace latentkf::pipeline;
using latentkf::testing::random_tensor;
using latentkf::testing::TensorD;
using latentkf::testing::VarD;
using latentkf::testing::loss_of;
using latentkf::testing::tiny_system;
namespace fs = std::filesystem;

TEST_CASE("five-step closed-loop rollout gradients") {
  for (bool pendulum : {true, false})
    for (bool bn_training : {false, true}) {
      CAPTURE(pendulum);
      CAPTURE(bn_training);
      const auto r = testing::rollout_gradcheck(pendulum, bn_training);
      CAPTURE(r.worst);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("a frozen set receives no gradient and is left bitwise unchanged") {
  auto s = tiny_system(true, 5, 14);
  const auto enc_before = s.enc;
  s.enc.set_frozen(true);
  s.enc.zero_grad();
  s.gain.zero_grad();
  ad::Tape<double> t;
  t.backward(loss_of(t, s, true));
  for (std::size_t i = 0; i < s.enc.size(); ++i) {
    CHECK(s.enc.at(i).value.data == enc_before.at(i).value.data);
    for (double g : s.enc.at(i).grad.data) CHECK(g == 0.0);
  }
  CHECK(s.gain.grad_norm() > 0.0);
}

TEST_CASE("rollout loss does not depend on the order of trajectories in a batch") {
  auto s = tiny_system(false, 5, 15);
  ad::Tape<double> t1;
  const auto l1 = loss_of(t1, s, false);
  t1.backward(l1);
  std::vector<std::vector<double>> g1;
  for (std::size_t i = 0; i < s.gain.size(); ++i) g1.emplace_back(s.gain.at(i).grad.data.begin(), s.gain.at(i).grad.data.end());
  s.gain.zero_grad();
  s.enc.zero_grad();
  // Swap the two trajectories.
  auto swap_rows = [](TensorD& x) {
    const std::size_t half = x.size() / 2;
    std::swap_ranges(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(half), x.data.begin() + static_cast<std::ptrdiff_t>(half));
  };
  swap_rows(s.data.frames);
  swap_rows(s.data.states);
  swap_rows(s.data.x0);
  ad::Tape<double> t2;
  const auto l2 = loss_of(t2, s, false);
  t2.backward(l2);
  CHECK(l2.value()[0] == doctest::Approx(l1.value()[0]).epsilon(1e-12));
  for (std::size_t i = 0; i < s.gain.size(); ++i) {
    std::vector<double> g2(s.gain.at(i).grad.data.begin(), s.gain.at(i).grad.data.end());
    CHECK(testing::relative_error(g1[i], g2) < 1e-10);
  }
}

TEST_CASE("periodic errors are measured modulo the period") {
  auto s = tiny_system(true, 5, 16);
  ad::Tape<double> t1(false);
  const double a = loss_of(t1, s, false).value()[0];
  for (std::size_t i = 0; i < s.data.states.size(); i += 2) s.data.states.data[i] += 2.0 * std::numbers::pi;
  ad::Tape<double> t2(false);
  CHECK(loss_of(t2, s, false).value()[0] == doctest::Approx(a).epsilon(1e-9));
}

TEST_CASE("truncated backpropagation keeps the forward value") {
  auto s = tiny_system(false, 7, 17);
  ad::Tape<double> t1(false), t2(false);
  const double full = loss_of(t1, s, false).value()[0];
  const double windowed = rollout_loss(t2, *s.f, s.sel, s.enc_arch, s.enc, s.gain_arch, s.gain, s.data.frames,
                                       s.data.states, s.data.x0, false, 2)
                              .value()[0];
  CHECK(windowed == doctest::Approx(full).epsilon(1e-12));
}

TEST_CASE("rollout rejects mismatched shapes") {
  auto s = tiny_system(false, 5, 18);
  ad::Tape<double> t;
  CHECK_THROWS_AS(rollout_loss(t, *s.f, s.sel, s.enc_arch, s.enc, s.gain_arch, s.gain, s.data.frames, s.data.states,
                               TensorD({3, 3}), false),
                  ShapeError);
}

// -- full-size pipeline on real frames --------------------------------------------------------------------------

namespace {

struct PendulumFixture {
  models::SSModelSpec spec = models::make_pendulum_spec(models::ObservationNoise::gaussian_from_level(23.0));
  data::Dataset ds = data::generate_dataset(spec, 10, 8, data::InitialStateRule::pendulum_from_rest(), 5);
  TrainSchedule schedule;

  PendulumFixture() {
    schedule.epochs = 2;
    schedule.batch_size = 4;
    schedule.gain_learning_rate = 1e-2;
    schedule.encoder_learning_rate = 1e-4;
    schedule.metric_components = {0};
  }

  LatentKalmanNet fresh_net() const {
    encoders::Encoder enc(encoders::EncoderArch::for_model(spec, true), 3);
    return assemble(spec.dynamics, spec.selection, enc, schedule);
  }
};

}  // namespace

TEST_CASE("inference session reproduces the tape rollout") {
  PendulumFixture fx;
  auto net = fx.fresh_net();
  const std::size_t len = fx.ds.length(), n = fx.ds.frame_size();
  ad::Tensor<float> frames({1, len, n}), states({1, len, 2}), x0({1, 2});
  std::copy_n(fx.ds.frame_span(3, 0).data(), len * n, frames.ptr());
  std::copy_n(fx.ds.state_span(3, 0).data(), len * 2, states.ptr());
  models::StateVector x0d(2);
  x0d << fx.ds.state(3, 0)(0) + 0.05, -0.1;
  x0.data = {static_cast<float>(x0d(0)), static_cast<float>(x0d(1))};
  ad::Tape<float> tape(false);
  std::vector<ad::Var<float>> est;
  rollout_loss(tape, net.dynamics(), net.selection(), net.encoder().arch(), net.encoder().params(), net.gain_arch(),
               net.gain_params(), frames, states, x0, false, 0, &est);
  InferenceSession session(net);
  const auto out = session.run(fx.ds, 3, models::StateVector(x0.data[0] * Eigen::VectorXd::Unit(2, 0) +
                                                              x0.data[1] * Eigen::VectorXd::Unit(2, 1)));
  REQUIRE(out.size() == len);
  REQUIRE(est.size() == len - 1);
  for (std::size_t t = 1; t < len; ++t)
    for (std::size_t i = 0; i < 2; ++i) CHECK(out[t](static_cast<Eigen::Index>(i)) == doctest::Approx(est[t - 1].value()[i]).epsilon(1e-4));
  CHECK(std::isfinite(session.hidden_norm()));
  CHECK(session.last_gain().rows() == 2);
}

TEST_CASE("alternating training is reproducible and gain-only training leaves the encoder untouched") {
  PendulumFixture fx;
  const auto sp = fx.ds.splits();
  auto a = fx.fresh_net(), b = fx.fresh_net();
  const auto la = train_alternating(a, fx.ds, sp, fx.schedule);
  const auto lb = train_alternating(b, fx.ds, sp, fx.schedule);
  CHECK(la.to_json().dump() == lb.to_json().dump());
  for (std::size_t i = 0; i < a.gain_params().size(); ++i) CHECK(a.gain_params().at(i).value.data == b.gain_params().at(i).value.data);
  for (std::size_t i = 0; i < a.encoder().params().size(); ++i)
    CHECK(a.encoder().params().at(i).value.data == b.encoder().params().at(i).value.data);
  CHECK(la.epochs.size() == 2);
  CHECK_FALSE(la.diverged);

  auto c = fx.fresh_net();
  const auto before = c.encoder().params();
  auto gain_only = fx.schedule;
  gain_only.update_encoder = false;
  train_alternating(c, fx.ds, sp, gain_only);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(c.encoder().params().at(i).value.data == before.at(i).value.data);
}

TEST_CASE("the kept epoch is the one with the best validation error") {
  PendulumFixture fx;
  const auto sp = fx.ds.splits();
  auto net = fx.fresh_net();
  const auto log = train_alternating(net, fx.ds, sp, fx.schedule);
  double best = log.warm_start_validation_mse;
  std::size_t arg = 0;
  for (const auto& e : log.epochs)
    if (e.validation_mse < best) best = e.validation_mse, arg = e.epoch;
  CHECK(log.selected_epoch == arg);
  const std::uint64_t val_seed = fx.schedule.seed ^ 0xA11DA7EULL;
  CHECK(evaluate_mse(net, fx.ds, sp.validation, val_seed, fx.schedule.metric_components) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("pipeline checkpoints round trip") {
  PendulumFixture fx;
  auto net = fx.fresh_net();
  const fs::path dir = fs::temp_directory_path() / "latentkf-test-pipeline";
  fs::remove_all(dir);
  save_pipeline(net, fx.schedule, {{"tag", 1}}, dir);
  nlohmann::json record;
  const auto back = load_pipeline(dir, fx.spec.dynamics, &record);
  const std::vector<std::size_t> traj{0, 1, 2};
  CHECK(evaluate_mse(back, fx.ds, traj, 9) == evaluate_mse(net, fx.ds, traj, 9));
  CHECK(back.encoder().arch().periods == net.encoder().arch().periods);
  fs::remove_all(dir);
}

TEST_CASE("schedule JSON round trip and validation") {
  TrainSchedule s;
  s.epochs = 7;
  s.gain_learning_rate = 3e-3;
  s.metric_components = {0};
  s.optimizer = ad::OptimizerKind::kAdam;
  const auto back = TrainSchedule::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
  s.batch_size = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  const auto arch = encoders::EncoderArch::for_model(models::make_pendulum_spec(std::nullopt), true);
  CHECK(encoder_arch_to_json(encoder_arch_from_json(encoder_arch_to_json(arch))) == encoder_arch_to_json(arch));
  const auto g = gain::GainNetArch::for_dims(3, 3);
  CHECK(gain_arch_to_json(gain_arch_from_json(gain_arch_to_json(g))) == gain_arch_to_json(g));
}

TEST_CASE("warm start trains a prior-fed encoder") {
  PendulumFixture fx;
  auto sched = fx.schedule;
  sched.warm_start.epochs = 1;
  const auto sp = fx.ds.splits();
  const auto res = warm_start(fx.spec, fx.ds, sp, sched);
  CHECK(res.encoder.arch().with_prior);
  CHECK(res.epoch_losses.size() == 1);
  CHECK(res.residual_covariance.rows() == 1);
}
