#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <vector>

#include "mvp/autodiff.hpp"
#include "mvp/checkpoint.hpp"
#include "mvp/optimizer.hpp"
#include "mvp/rng.hpp"
#include "mvp/tensor.hpp"
#include "oracles.hpp"

using namespace mvp;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

// Checks autodiff gradients of a scalar-valued builder against central
// finite differences, coordinate by coordinate. The builder receives one
// requires_grad leaf per input tensor.
void check_gradients(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                     std::vector<Tensor> inputs, double eps = 1e-5, double tol = 1e-4) {
  auto eval = [&](bool want_grads, std::vector<Tensor>* grads_out) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var loss = build(tape, leaves);
    const double value = loss.value().data[0];
    if (want_grads) {
      tape.backward(loss);
      for (const Var& leaf : leaves) grads_out->push_back(tape.grad(leaf));
    }
    return value;
  };
  std::vector<Tensor> analytic;
  eval(true, &analytic);
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    REQUIRE(analytic[which].shape == inputs[which].shape);
    for (std::size_t i = 0; i < inputs[which].size(); ++i) {
      auto f = [&]() { return eval(false, nullptr); };
      const double fd = oracle::central_diff(inputs[which].data, i, f, eps);
      const double re = oracle::rel_err(analytic[which].data[i], fd);
      INFO("input ", which, " coord ", i, " analytic=", analytic[which].data[i], " fd=", fd);
      CHECK(re <= tol);
    }
  }
}

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.size() == 4);
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("matmul identity maps any 2xn operand to itself") {
  Rng rng(11);
  Tape tape;
  Var i2 = tape.leaf(Tensor::identity(2), false);
  Var b = tape.leaf(random_tensor({2, 5}, rng), false);
  Var out = matmul(i2, b);
  for (std::size_t i = 0; i < out.value().size(); ++i)
    CHECK(out.value().data[i] == b.value().data[i]);
}

TEST_CASE("matmul hand arithmetic") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), false);
  Var b = tape.leaf(Tensor({2, 1}, {1, 1}), false);
  Var c = matmul(a, b);
  CHECK(c.value().at(0, 0) == 3.0);
  CHECK(c.value().at(1, 0) == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}), false);
  Var b = tape.leaf(Tensor({4, 5}), false);
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(a*b) wrt a equals ones*b^T and matches finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);

  Tape tape;
  Var va = tape.leaf(a, true);
  Var vb = tape.leaf(b, false);
  Var loss = sum(matmul(va, vb));
  tape.backward(loss);
  const Tensor& ga = tape.grad(va);
  // d/dA sum(A B) = ones * B^T: row i of grad is the row sums of B^T, i.e.
  // entry (i,k) = sum_j B[k,j].
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double want = 0.0;
      for (std::size_t j = 0; j < 2; ++j) want += b.at(k, j);
      CHECK(ga.at(i, k) == doctest::Approx(want).epsilon(1e-12));
    }

  check_gradients(
      [&b](Tape& t, const std::vector<Var>& in) {
        return sum(matmul(in[0], t.leaf(b, false)));
      },
      {a}, 1e-6, 1e-4);
}

TEST_CASE("softmax trivial rows") {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 3}, {0, 0, 0}), false);
  Var s = softmax_lastdim(x);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(s.value().data[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Var single = tape.leaf(Tensor({1, 1}, {4.2}), false);
  CHECK(softmax_lastdim(single).value().data[0] == 1.0);
}

TEST_CASE("softmax matches scalar oracle") {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 2}, {1, 2}), false);
  Var s = softmax_lastdim(x);
  const auto want = oracle::softmax_scalar({1, 2});
  CHECK(std::abs(s.value().data[0] - want[0]) <= 1e-12);
  CHECK(std::abs(s.value().data[1] - want[1]) <= 1e-12);
}

TEST_CASE("softmax rows sum to one for magnitudes up to 1e3") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    Tensor x({4, n});
    for (auto& v : x.data) v = rng.uniform(-1e3, 1e3);
    Tape tape;
    Var s = softmax_lastdim(tape.leaf(x, false));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p = s.value().at(r, j);
        total += p;
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
  // At moderate spreads every entry stays strictly inside (0, 1].
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x({2, 6});
    for (auto& v : x.data) v = rng.uniform(-30, 30);
    Tape tape;
    Var s = softmax_lastdim(tape.leaf(x, false));
    for (double p : s.value().data) {
      CHECK(p > 0.0);
      CHECK(p <= 1.0);
    }
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 2}, {1.0, std::nan("")}), false);
  CHECK_THROWS_AS(softmax_lastdim(x), NumericError);
}

TEST_CASE("conv1d identity with k=1") {
  Rng rng(5);
  Tensor x = random_tensor({9, 3}, rng);
  Tensor k({3, 3, 1});
  for (std::size_t i = 0; i < 3; ++i) k.at(i, i, 0) = 1.0;
  Tape tape;
  Var out = conv1d(tape.leaf(x, false), tape.leaf(k, false), tape.leaf(Tensor({3}), false));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(out.value().data[i] == x.data[i]);
}

TEST_CASE("conv1d preserves the full-scale physio time length at width 512") {
  Tensor x({19900, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.001 * static_cast<double>(i % 97);
  Rng rng(2);
  Tensor k = random_tensor({512, 2, 3}, rng, 0.05);
  Tape tape(true);
  Var out = conv1d(tape.leaf(x, false), tape.leaf(k, false), tape.leaf(Tensor({512}), false));
  CHECK(out.value().shape == std::vector<std::size_t>{19900, 512});
}

TEST_CASE("conv1d rejects even kernel length") {
  Tape tape;
  Var x = tape.leaf(Tensor({8, 2}), false);
  Var k = tape.leaf(Tensor({3, 2, 4}), false);
  Var b = tape.leaf(Tensor({3}), false);
  CHECK_THROWS_AS(conv1d(x, k, b), ConfigError);
}

TEST_CASE("conv1d matches naive triple loop") {
  Rng rng(13);
  Tensor x = random_tensor({7, 2}, rng);
  Tensor k = random_tensor({3, 2, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tape tape;
  Var out = conv1d(tape.leaf(x, false), tape.leaf(k, false), tape.leaf(b, false));
  const Tensor want = oracle::conv1d_naive(x, k, b);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(std::abs(out.value().data[i] - want.data[i]) <= 1e-10);
}

TEST_CASE("conv1d gradients match finite differences") {
  Rng rng(17);
  Tensor x = random_tensor({6, 2}, rng);
  Tensor k = random_tensor({3, 2, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  check_gradients(
      [](Tape&, const std::vector<Var>& in) {
        Var o = conv1d(in[0], in[1], in[2]);
        return sum(mul(o, o));
      },
      {x, k, b});
}

TEST_CASE("dense identity and hand arithmetic") {
  Rng rng(19);
  Tensor x = random_tensor({4, 3}, rng);
  Tape tape;
  Var out = dense(tape.leaf(x, false), tape.leaf(Tensor::identity(3), false),
                  tape.leaf(Tensor({3}), false));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(out.value().data[i] == x.data[i]);

  Var y = dense(tape.leaf(Tensor({2}, {1, 1}), false),
                tape.leaf(Tensor({2, 1}, {2, 3}), false), tape.leaf(Tensor({1}, {1}), false));
  CHECK(y.value().size() == 1);
  CHECK(y.value().data[0] == 6.0);
}

TEST_CASE("dense gradients match finite differences") {
  Rng rng(23);
  check_gradients(
      [](Tape&, const std::vector<Var>& in) {
        Var o = dense(in[0], in[1], in[2]);
        return sum(mul(o, o));
      },
      {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)});
}

TEST_CASE("conv1d and dense are linear in the input when bias is zero") {
  Rng rng(29);
  const double alpha = 0.7, beta = -1.3;
  Tensor x = random_tensor({8, 2}, rng);
  Tensor y = random_tensor({8, 2}, rng);
  Tensor k = random_tensor({3, 2, 3}, rng);
  Tensor w = random_tensor({2, 5}, rng);
  Tensor zero_b3({3}), zero_b5({5});

  Tensor mix({8, 2});
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = alpha * x.data[i] + beta * y.data[i];

  Tape tape;
  Var ck = tape.leaf(k, false);
  Var cb = tape.leaf(zero_b3, false);
  Var fx = conv1d(tape.leaf(x, false), ck, cb);
  Var fy = conv1d(tape.leaf(y, false), ck, cb);
  Var fmix = conv1d(tape.leaf(mix, false), ck, cb);
  for (std::size_t i = 0; i < fmix.value().size(); ++i)
    CHECK(std::abs(fmix.value().data[i] -
                   (alpha * fx.value().data[i] + beta * fy.value().data[i])) <= 1e-9);

  Var dw = tape.leaf(w, false);
  Var db = tape.leaf(zero_b5, false);
  Var gx = dense(tape.leaf(x, false), dw, db);
  Var gy = dense(tape.leaf(y, false), dw, db);
  Var gmix = dense(tape.leaf(mix, false), dw, db);
  for (std::size_t i = 0; i < gmix.value().size(); ++i)
    CHECK(std::abs(gmix.value().data[i] -
                   (alpha * gx.value().data[i] + beta * gy.value().data[i])) <= 1e-9);
}

TEST_CASE("bce analytic values") {
  Tape tape;
  Var z0 = tape.leaf(Tensor({1, 1}, {0.0}), false);
  Var l0 = bce_with_logits(z0, Tensor({1, 1}, {1.0}));
  CHECK(l0.value().data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Var z30 = tape.leaf(Tensor({1, 1}, {30.0}), false);
  Var l30 = bce_with_logits(z30, Tensor({1, 1}, {1.0}));
  CHECK(std::isfinite(l30.value().data[0]));
  CHECK(l30.value().data[0] >= 0.0);
  CHECK(l30.value().data[0] <= 1e-12);
}

TEST_CASE("bce matches per-element scalar oracle on a random batch") {
  Rng rng(31);
  Tensor z({6, 2});
  Tensor y({6, 2});
  std::vector<double> zs, ys;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.data[i] = rng.uniform(-4, 4);
    y.data[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    zs.push_back(z.data[i]);
    ys.push_back(y.data[i]);
  }
  Tape tape;
  Var loss = bce_with_logits(tape.leaf(z, false), y);
  CHECK(std::abs(loss.value().data[0] - oracle::bce_scalar(zs, ys)) <= 1e-10);
  CHECK(loss.value().data[0] >= 0.0);
}

TEST_CASE("bce rejects non-binary targets") {
  Tape tape;
  Var z = tape.leaf(Tensor({1, 2}), false);
  CHECK_THROWS_AS(bce_with_logits(z, Tensor({1, 2}, {0.0, 0.5})), ValidationError);
}

TEST_CASE("bce gradient matches finite differences") {
  Rng rng(37);
  Tensor z = random_tensor({4, 2}, rng, 2.0);
  Tensor y({4, 2});
  for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  check_gradients(
      [&y](Tape&, const std::vector<Var>& in) { return bce_with_logits(in[0], y); }, {z});
}

TEST_CASE("backward on sum gives ones; on sum of squares gives 2x") {
  Rng rng(41);
  Tensor x = random_tensor({3, 3}, rng);
  {
    Tape tape;
    Var vx = tape.leaf(x, true);
    Var loss = sum(vx);
    tape.backward(loss);
    for (double g : tape.grad(vx).data) CHECK(g == 1.0);
  }
  {
    Tape tape;
    Var vx = tape.leaf(x, true);
    Var loss = sum(mul(vx, vx));
    tape.backward(loss);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(tape.grad(vx).data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward contract errors") {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
  Var nonscalar = mul(x, x);
  CHECK_THROWS_AS(tape.backward(nonscalar), ContractError);

  Var loss = sum(nonscalar);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
  tape.reset_gradients();
  tape.backward(loss);  // allowed again after reset
  CHECK(tape.grad(x).size() == 4);
}

TEST_CASE("inference-only tape refuses backward") {
  Tape tape(true);
  Var x = tape.leaf(Tensor({1}, {2.0}), true);
  Var loss = sum(x);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(43);
  check_gradients(
      [](Tape&, const std::vector<Var>& in) {
        Var o = layer_norm(in[0], in[1], in[2]);
        return sum(mul(o, o));
      },
      {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)},
      1e-5, 2e-4);
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(47);
  Tensor w = random_tensor({2, 5}, rng);
  check_gradients(
      [&w](Tape& t, const std::vector<Var>& in) {
        Var s = softmax_lastdim(in[0]);
        return sum(mul(s, t.leaf(w, false)));
      },
      {random_tensor({2, 5}, rng)});
}

TEST_CASE("time_reduce gradients match finite differences") {
  Rng rng(53);
  check_gradients(
      [](Tape&, const std::vector<Var>& in) {
        Var o = time_reduce(in[0], in[1], in[2]);
        return sum(mul(o, o));
      },
      {random_tensor({6, 3}, rng), random_tensor({6, 2}, rng), random_tensor({2}, rng)});
}

TEST_CASE("mha_core gradients match finite differences") {
  Rng rng(59);
  check_gradients(
      [](Tape&, const std::vector<Var>& in) {
        Var o = mha_core(in[0], in[1], in[2], 2);
        return sum(mul(o, o));
      },
      {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)},
      1e-5, 5e-4);
}

TEST_CASE("forward results are deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(1234);
    Tensor x = random_tensor({5, 3}, rng);
    Tensor w = random_tensor({3, 3}, rng);
    Tape tape;
    Var o = softmax_lastdim(dense(tape.leaf(x, false), tape.leaf(w, false),
                                  tape.leaf(Tensor({3}), false)));
    return o.value();
  };
  const Tensor a = run();
  const Tensor b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged from fresh state") {
  ParamStore params;
  params.add("w", Tensor({2, 2}, {1, 2, 3, 4}));
  Tape tape;
  auto vars = params.push_all(tape);
  Var loss = sum(scale(vars[0], 0.0));
  tape.backward(loss);
  adam_step(params, tape, vars, AdamConfig{}, 1);
  const Tensor& w = params.entry(0).value;
  CHECK(w.data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("adam: one step on f(x)=x^2 from x=1 decreases f") {
  ParamStore params;
  params.add("x", Tensor({1}, {1.0}));
  Tape tape;
  auto vars = params.push_all(tape);
  Var loss = sum(mul(vars[0], vars[0]));
  const double before = loss.value().data[0];
  tape.backward(loss);
  AdamConfig cfg;
  cfg.lr = 0.05;
  adam_step(params, tape, vars, cfg, 1);
  const double x = params.entry(0).value.data[0];
  CHECK(x * x < before);
}

TEST_CASE("adam: identical seeds give bit-identical parameters after 10 steps") {
  auto run = [] {
    Rng rng(99);
    ParamStore params;
    params.add("w", random_tensor({3, 2}, rng));
    params.add("b", random_tensor({2}, rng));
    Tensor x = random_tensor({4, 3}, rng);
    Tensor y({4, 2});
    for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    AdamConfig cfg;
    cfg.lr = 1e-2;
    for (std::size_t step = 1; step <= 10; ++step) {
      Tape tape;
      auto vars = params.push_all(tape);
      Var logits = dense(tape.leaf(x, false), vars[0], vars[1]);
      Var loss = bce_with_logits(logits, y);
      tape.backward(loss);
      adam_step(params, tape, vars, cfg, step);
    }
    std::vector<double> out = params.entry(0).value.data;
    out.insert(out.end(), params.entry(1).value.data.begin(), params.entry(1).value.data.end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("adam aborts on NaN gradient naming the parameter") {
  ParamStore params;
  params.add("theta", Tensor({1}, {0.5}));
  Tape tape;
  auto vars = params.push_all(tape);
  // log(x) at x -> d/dx = 1/x; force a NaN by 0/0 via 0 * inf upstream.
  Tensor bad({1}, {std::nan("")});
  Var loss = sum(mul(vars[0], tape.leaf(bad, false)));
  tape.backward(loss);
  try {
    adam_step(params, tape, vars, AdamConfig{}, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("theta") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trips parameters and metadata") {
  Rng rng(61);
  ParamStore params;
  params.add("enc.w", random_tensor({3, 4}, rng));
  params.add("enc.b", random_tensor({4}, rng));
  params.add("head", random_tensor({2, 2, 2}, rng));
  const std::string path = (std::filesystem::temp_directory_path() / "mvp_ckpt_test.bin").string();
  save_checkpoint(path, params, {{"model.dim", "4"}, {"seed", "61"}});
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.meta.at("model.dim") == "4");
  CHECK(ck.meta.at("seed") == "61");
  REQUIRE(ck.params.size() == 3);
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& e = params.entry(i);
    CHECK(ck.params[i].first == e.name);
    CHECK(ck.params[i].second.shape == e.value.shape);
    CHECK(ck.params[i].second.data == e.value.data);
  }

  // restore_params refills a freshly initialized store with the same names.
  ParamStore fresh;
  fresh.add("enc.w", Tensor({3, 4}));
  fresh.add("enc.b", Tensor({4}));
  fresh.add("head", Tensor({2, 2, 2}));
  restore_params(fresh, ck);
  for (std::size_t i = 0; i < params.count(); ++i)
    CHECK(fresh.entry(i).value.data == params.entry(i).value.data);

  ParamStore wrong;
  wrong.add("enc.w", Tensor({3, 4}));
  CHECK_THROWS_AS(restore_params(wrong, ck), ValidationError);
  std::filesystem::remove(path);
}
