#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "gmatt/training.hpp"

using namespace gmatt;

namespace {

ModelConfig toy_cfg() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.tcb_depth = 1;
  cfg.dropout = 0.1;
  cfg.tpe_d = 2;  // L = 16
  return cfg;
}

std::vector<ReactionRecord> toy_records() {
  return {
      {1, "CC=C", {"CC", "C=C"}},  {2, "CCO", {"CC", "O"}},    {3, "CCC", {"CC", "C"}},
      {4, "C=CC=C", {"C=C", "C=C"}}, {5, "COC", {"CO", "C"}},  {6, "OCCO", {"OC", "CO"}},
      {7, "CCN", {"CC", "N"}},     {8, "NCCO", {"NC", "CO"}},
  };
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/gmatt_test_") + name;
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("lr_at: pinned values from the schedule") {
  LrSchedule s;
  CHECK(lr_at(0, s) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(5, s) == doctest::Approx(5e-4).epsilon(1e-12));
  // Mid-cycle 1 peak decayed by gamma: 1e-4 + 0.98 * 4e-4.
  CHECK(lr_at(15, s) == doctest::Approx(4.92e-4).epsilon(1e-12));
  // Bounds hold everywhere.
  for (int i = 0; i <= 600; ++i) {
    double lr = lr_at(i * 0.1, s);
    CHECK(lr >= s.eta_min - 1e-15);
    CHECK(lr <= s.eta_max + 1e-15);
  }
}

TEST_CASE("lr_at: continuous piecewise-linear triangle") {
  LrSchedule s;
  // Max over the first cycle equals eta_max exactly.
  double best = 0;
  for (int i = 0; i < 1000; ++i) best = std::max(best, lr_at(i * 0.01, s));
  CHECK(best == doctest::Approx(s.eta_max).epsilon(1e-12));
  // Within each half cycle, linear interpolation between endpoints matches.
  for (int cycle = 0; cycle < 3; ++cycle) {
    for (int half = 0; half < 2; ++half) {
      double a = cycle * 10 + half * 5.0, b = a + 5.0 - 1e-9;
      double fa = lr_at(a, s), fb = lr_at(b, s);
      for (int k = 1; k < 50; ++k) {
        double t = a + (b - a) * k / 50.0;
        double expect = fa + (fb - fa) * (t - a) / (b - a);
        CHECK(lr_at(t, s) == doctest::Approx(expect).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("adam_step: zero gradient leaves parameters, increments step") {
  ModelParams<double> p;
  Tensor<double> t;
  t.value = Mat<double>::Constant(2, 3, 1.5);
  t.zero_grad();
  p.tensors.emplace("w", std::move(t));
  AdamState<double> st;
  adam_step(p, st, 1e-3);
  CHECK(st.step == 1);
  CHECK((p.at("w").value.array() == 1.5).all());
}

TEST_CASE("adam_step: first step is approximately -lr * sign(g)") {
  ModelParams<double> p;
  Tensor<double> t;
  t.value = Mat<double>::Zero(1, 4);
  t.grad.resize(1, 4);
  t.grad << 0.3, -0.02, 5.0, -7.1;
  p.tensors.emplace("w", std::move(t));
  AdamState<double> st;
  adam_step(p, st, 1e-2);
  for (int i = 0; i < 4; ++i) {
    double sign = p.at("w").grad(0, i) > 0 ? 1.0 : -1.0;
    CHECK(p.at("w").value(0, i) == doctest::Approx(-1e-2 * sign).epsilon(1e-6));
  }
}

TEST_CASE("adam_step: two steps match a scalar reference implementation") {
  const double b1 = 0.9, b2 = 0.98, eps = 1e-9, lr = 3e-3;
  const double g1 = 0.7, g2 = -1.3, x0 = 0.25;
  // Independent scalar Adam.
  double m = 0, v = 0, x = x0;
  for (int step = 1; step <= 2; ++step) {
    double g = step == 1 ? g1 : g2;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, step));
    double vhat = v / (1 - std::pow(b2, step));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  ModelParams<double> p;
  Tensor<double> t;
  t.value = Mat<double>::Constant(1, 1, x0);
  t.zero_grad();
  p.tensors.emplace("w", std::move(t));
  AdamState<double> st;
  p.at("w").grad(0, 0) = g1;
  adam_step(p, st, lr);
  p.at("w").grad(0, 0) = g2;
  adam_step(p, st, lr);
  CHECK(p.at("w").value(0, 0) == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam_step: update independent of tensor traversal order") {
  auto build = [](const std::vector<std::string>& names) {
    ModelParams<double> p;
    for (std::size_t i = 0; i < names.size(); ++i) {
      Tensor<double> t;
      t.value = Mat<double>::Constant(1, 2, 0.5 + i);
      t.grad = Mat<double>::Constant(1, 2, 0.1 * (i + 1));
      p.tensors.emplace(names[i], std::move(t));
    }
    return p;
  };
  // Same tensors registered under name sets that sort differently.
  ModelParams<double> a = build({"alpha", "beta", "gamma"});
  ModelParams<double> b = build({"gamma", "beta", "alpha"});
  AdamState<double> sa, sb;
  adam_step(a, sa, 1e-2);
  adam_step(b, sb, 1e-2);
  CHECK(a.at("alpha").value(0, 0) == b.at("gamma").value(0, 0));
  CHECK(a.at("gamma").value(0, 0) == b.at("alpha").value(0, 0));
}

TEST_CASE("adam_step: non-finite gradients raise") {
  ModelParams<double> p;
  Tensor<double> t;
  t.value = Mat<double>::Zero(1, 2);
  t.grad = Mat<double>::Zero(1, 2);
  t.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  p.tensors.emplace("w", std::move(t));
  AdamState<double> st;
  CHECK_THROWS_AS(adam_step(p, st, 1e-3), NonFiniteError);
}

TEST_CASE("checkpoint: save -> load -> save is byte identical") {
  auto ckpt = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 11, true);
  ckpt.meta.epochs_completed = 3;
  ckpt.adam.step = 7;
  ckpt.meta.adam_step = 7;
  ckpt.adam.m["enc.embed"] = Mat<float>::Constant(ckpt.params.at("enc.embed").value.rows(),
                                                  ckpt.params.at("enc.embed").value.cols(), 0.5f);
  ckpt.adam.v["enc.embed"] = Mat<float>::Constant(ckpt.params.at("enc.embed").value.rows(),
                                                  ckpt.params.at("enc.embed").value.cols(), 2.f);
  std::string p1 = temp_path("ck1.gmat"), p2 = temp_path("ck2.gmat");
  save_checkpoint(ckpt, p1);
  auto loaded = load_checkpoint<float>(p1);
  save_checkpoint(loaded, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
  // Loaded tensors are bit-exact.
  for (const auto& [name, t] : ckpt.params.tensors)
    CHECK((t.value - loaded.params.at(name).value).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(loaded.meta.epochs_completed == 3);
  CHECK(loaded.adam.step == 7);
  CHECK(loaded.meta.encoder_symbols == ckpt.meta.encoder_symbols);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint: config mismatch and corruption are detected") {
  auto ckpt = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 11, false);
  std::string p1 = temp_path("ck3.gmat");
  save_checkpoint(ckpt, p1);
  auto loaded = load_checkpoint<float>(p1);
  ModelConfig other = toy_cfg();
  other.d_model = 64;
  other.encoder_vocab = loaded.meta.config.encoder_vocab;
  other.decoder_vocab = loaded.meta.config.decoder_vocab;
  CHECK_THROWS_AS(check_config_compatible(loaded.meta, other), ConfigMismatchError);

  // Corrupt the magic.
  std::string bytes = file_bytes(p1);
  bytes[0] = 'X';
  std::ofstream(p1, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_checkpoint<float>(p1), CorruptCheckpointError);
  std::remove(p1.c_str());

  // Non-finite parameters are rejected at save.
  ckpt.params.at("out.b").value(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(save_checkpoint(ckpt, temp_path("ck4.gmat")), NonFiniteError);
}

TEST_CASE("train: smoke on two records") {
  auto ckpt = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 5, true);
  TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = 2;
  auto recs = toy_records();
  recs.resize(2);
  TrainResult r = train(ckpt, recs, recs, opt);
  REQUIRE(r.log.size() == 1);
  CHECK(std::isfinite(r.log[0].train_loss));
  CHECK(std::isfinite(r.log[0].valid_loss));
  CHECK_FALSE(r.aborted_non_finite);
  CHECK(ckpt.meta.epochs_completed == 1);
}

TEST_CASE("train: fixed seed gives a bit-identical loss trajectory") {
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 4;
  auto recs = toy_records();
  auto c1 = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 21, true);
  auto c2 = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 21, true);
  TrainResult r1 = train(c1, recs, {}, opt);
  TrainResult r2 = train(c2, recs, {}, opt);
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].train_acc == r2.log[i].train_acc);
  }
  for (const auto& [name, t] : c1.params.tensors)
    CHECK((t.value - c2.params.at(name).value).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("train: resume from checkpoint continues the trajectory exactly") {
  TrainOptions opt;
  opt.epochs = 5;
  opt.batch_size = 4;
  auto recs = toy_records();

  auto straight = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 33, true);
  TrainResult full = train(straight, recs, {}, opt);

  auto part = make_checkpoint<float>(toy_cfg(), LrSchedule{}, 33, true);
  TrainOptions first = opt;
  first.epochs = 2;
  TrainResult head = train(part, recs, {}, first);
  std::string path = temp_path("resume.gmat");
  save_checkpoint(part, path);
  auto resumed = load_checkpoint<float>(path);
  TrainResult tail = train(resumed, recs, {}, opt);
  std::remove(path.c_str());

  REQUIRE(head.log.size() + tail.log.size() == full.log.size());
  for (std::size_t i = 0; i < head.log.size(); ++i)
    CHECK(head.log[i].train_loss == full.log[i].train_loss);
  for (std::size_t i = 0; i < tail.log.size(); ++i)
    CHECK(tail.log[i].train_loss == full.log[head.log.size() + i].train_loss);
  for (const auto& [name, t] : straight.params.tensors)
    CHECK((t.value - resumed.params.at(name).value).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("train: loss falls and accuracy rises on the toy set") {
  ModelConfig cfg = toy_cfg();
  cfg.dropout = 0.0;
  LrSchedule sched;
  sched.eta_min = 5e-4;
  sched.eta_max = 2e-3;
  auto ckpt = make_checkpoint<float>(cfg, sched, 2, true);
  TrainOptions opt;
  opt.epochs = 150;
  opt.batch_size = 8;
  opt.sched = sched;
  TrainResult r = train(ckpt, toy_records(), {}, opt);
  CHECK(r.log.back().train_loss < 0.25 * r.log.front().train_loss);
  CHECK(r.log.back().train_acc > 0.95);
}
