#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvp/backbone.hpp"
#include "mvp/rng.hpp"
#include "oracles.hpp"

using namespace mvp;

namespace {

BackboneConfig small_cfg() {
  BackboneConfig c;
  c.conv_layers = {{4, 3}, {6, 3}};
  c.feature_dim = 6;
  c.token_count = 5;
  c.input_time_max = 24;
  c.input_channels = 2;
  return c;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("backbone config validation") {
  BackboneConfig c = small_cfg();
  c.feature_dim = 8;  // final conv channels stay 6
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_cfg();
  c.conv_layers[0].second = 4;  // even kernel
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_cfg();
  c.token_count = 24;  // not < input_time_max
  CHECK_THROWS_AS(c.validate(), ConfigError);

  CHECK_NOTHROW(small_cfg().validate());
  CHECK_NOTHROW(BackboneConfig::video_default().validate());
  CHECK_NOTHROW(BackboneConfig::physio_default().validate());
}

TEST_CASE("video backbone maps the AMIGOS shape [2800,42] to [100,512]") {
  ParamStore store;
  Rng init(1);
  const Backbone bb(store, BackboneConfig::video_default(), "video", init);
  Tape tape(true);
  auto pv = store.push_all(tape);
  Rng rng(2);
  Var x = tape.leaf(random_tensor({2800, 42}, rng, 0.1), false);
  std::vector<std::vector<std::size_t>> stages;
  Var out = bb.forward(tape, x, pv, &stages);
  CHECK(out.value().shape == std::vector<std::size_t>{100, 512});
  REQUIRE(stages.size() == 3);
  CHECK(stages[0] == std::vector<std::size_t>{2800, 128});
  CHECK(stages[1] == std::vector<std::size_t>{2800, 512});
  CHECK(stages[2] == std::vector<std::size_t>{100, 512});
}

TEST_CASE("every conv stage preserves the time length") {
  ParamStore store;
  Rng init(3);
  const Backbone bb(store, small_cfg(), "bb", init);
  Tape tape;
  auto pv = store.push_all(tape);
  Rng rng(4);
  Var x = tape.leaf(random_tensor({24, 2}, rng), false);
  std::vector<std::vector<std::size_t>> stages;
  Var out = bb.forward(tape, x, pv, &stages);
  CHECK(out.value().shape == std::vector<std::size_t>{5, 6});
  for (std::size_t i = 0; i + 1 < stages.size(); ++i) CHECK(stages[i][0] == 24);
}

TEST_CASE("all-zero input yields the bias-driven constant token, repeated") {
  ParamStore store;
  Rng init(5);
  BackboneConfig cfg;
  cfg.conv_layers = {{2, 3}};
  cfg.feature_dim = 2;
  cfg.token_count = 4;
  cfg.input_time_max = 12;
  cfg.input_channels = 2;
  const Backbone bb(store, cfg, "bb", init);

  // Hand-set parameters: zero kernels with fixed conv biases, a uniform
  // averaging time map and zero token bias.
  store.entry(store.find("bb.conv0.kernels")).value = Tensor({2, 2, 3});
  store.entry(store.find("bb.conv0.bias")).value = Tensor({2}, {0.7, -0.3});
  store.entry(store.find("bb.time.w")).value = Tensor::full({12, 4}, 1.0 / 12.0);
  store.entry(store.find("bb.time.b")).value = Tensor({4});

  Tape tape;
  auto pv = store.push_all(tape);
  Var x = tape.leaf(Tensor({12, 2}), false);
  Var out = bb.forward(tape, x, pv);
  REQUIRE(out.value().shape == std::vector<std::size_t>{4, 2});
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(out.value().at(s, 0) == doctest::Approx(0.7).epsilon(1e-12));  // relu(0.7)
    CHECK(out.value().at(s, 1) == 0.0);                                  // relu(-0.3)
  }
}

TEST_CASE("doubling an un-padded input frame changes the output") {
  ParamStore store;
  Rng init(7);
  const Backbone bb(store, small_cfg(), "bb", init);
  Rng rng(8);
  Tensor x = random_tensor({24, 2}, rng);
  Tensor x2 = x;
  for (std::size_t j = 0; j < 2; ++j) x2.at(3, j) *= 2.0;

  auto run = [&](const Tensor& input) {
    Tape tape(true);
    auto pv = store.push_all(tape);
    return bb.forward(tape, tape.leaf(input, false), pv).value();
  };
  const Tensor a = run(x);
  const Tensor b = run(x2);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
  CHECK(diff > 1e-8);
}

TEST_CASE("wrong input width raises a dimension error") {
  ParamStore store;
  Rng init(9);
  const Backbone bb(store, small_cfg(), "bb", init);
  Tape tape;
  auto pv = store.push_all(tape);
  Var x = tape.leaf(Tensor({24, 3}), false);
  CHECK_THROWS_AS(bb.forward(tape, x, pv), DimensionError);
}

TEST_CASE("backbone gradient wrt input matches finite differences on 10 coordinates") {
  ParamStore store;
  Rng init(11);
  BackboneConfig cfg;
  cfg.conv_layers = {{3, 3}};
  cfg.feature_dim = 3;
  cfg.token_count = 3;
  cfg.input_time_max = 10;
  cfg.input_channels = 2;
  const Backbone bb(store, cfg, "bb", init);
  // Shift biases off zero so no ReLU sits exactly at its kink.
  for (std::size_t i = 0; i < store.count(); ++i)
    for (auto& v : store.entry(i).value.data) v += 0.05;

  Rng rng(12);
  Tensor x = random_tensor({10, 2}, rng);

  auto loss_value = [&]() {
    Tape tape;
    auto pv = store.push_all(tape);
    Var vx = tape.leaf(x, true);
    Var out = bb.forward(tape, vx, pv);
    return sum(mul(out, out)).value().data[0];
  };
  Tape tape2;
  auto pv2 = store.push_all(tape2);
  Var vx2 = tape2.leaf(x, true);
  Var out2 = bb.forward(tape2, vx2, pv2);
  Var loss2 = sum(mul(out2, out2));
  tape2.backward(loss2);
  const Tensor& analytic = tape2.grad(vx2);

  Rng pick(13);
  for (int k = 0; k < 10; ++k) {
    const std::size_t i = static_cast<std::size_t>(pick.below(x.size()));
    const double fd = oracle::central_diff(x.data, i, loss_value, 1e-5);
    CHECK(oracle::rel_err(analytic.data[i], fd) <= 1e-3);
  }
}

TEST_CASE("time reduction is feature-channel-shared: permuting channels permutes outputs") {
  Rng rng(15);
  const std::size_t T = 9, F = 4, tok = 3;
  Tensor x = random_tensor({T, F}, rng);
  Tensor w = random_tensor({T, tok}, rng);
  Tensor b = random_tensor({tok}, rng);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor xp({T, F});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < F; ++j) xp.at(i, j) = x.at(i, perm[j]);

  Tape tape;
  Var base = time_reduce(tape.leaf(x, false), tape.leaf(w, false), tape.leaf(b, false));
  Var permed = time_reduce(tape.leaf(xp, false), tape.leaf(w, false), tape.leaf(b, false));
  for (std::size_t s = 0; s < tok; ++s)
    for (std::size_t j = 0; j < F; ++j)
      CHECK(permed.value().at(s, j) == base.value().at(s, perm[j]));
}
