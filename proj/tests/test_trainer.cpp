// SPDX-License-Identifier: Apache-2.0
//
// Trainer tests: the cosine schedule and Adam against hand-stepped oracles,
// sampler epoch structure, the lambda_max=0 equivalence between the
// semi-supervised and supervised paths, checkpoint round-trips, and
// resume-vs-continuous bit-identity. Runs use a deliberately tiny model so
// each step costs milliseconds.

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "config/config.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "data/dataset.hpp"
#include "train/optimizer.hpp"
#include "train/trainer.hpp"

using namespace maxico;
namespace fs = std::filesystem;

namespace {

// Small blobs on small canvases keep every step in the millisecond range.
GenConfig tiny_gen() {
  GenConfig g;
  g.height = 16;
  g.width = 16;
  g.min_blobs = 1;
  g.max_blobs = 2;
  g.min_axis = 1.5;
  g.max_axis = 3.0;
  return g;
}

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.model.n_levels = 2;
  cfg.model.channels = {4, 6};
  cfg.model.d_vit = 8;
  cfg.model.d_align = 8;
  cfg.model.d_text = 8;
  cfg.model.vit_heads = 2;
  cfg.batch_size = 2;
  cfg.total_steps = 8;
  cfg.eval_every = 0;
  cfg.seed = 21;
  return cfg;
}

Dataset strip_masks(Dataset ds) {
  for (auto& s : ds) {
    s.mask = Tensor<int>();
    s.has_mask = false;
  }
  return ds;
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("maxico_trainer_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cosine_lr: closed form, endpoints, and warm restarts") {
  const double base = 0.02;
  // Single cycle: starts at base, anneals monotonically.
  CHECK(cosine_lr(base, 0, 100) == doctest::Approx(base).epsilon(1e-12));
  for (int64_t s = 0; s < 100; ++s) {
    const double want = 0.5 * base * (1.0 + std::cos(M_PI * s / 100.0));
    CHECK(cosine_lr(base, s, 100) == doctest::Approx(want).epsilon(1e-12));
    if (s > 0) CHECK(cosine_lr(base, s, 100) < cosine_lr(base, s - 1, 100));
  }
  // Two cycles of length 50: the schedule restarts at the boundary.
  CHECK(cosine_lr(base, 50, 100, 2) == doctest::Approx(base).epsilon(1e-12));
  CHECK(cosine_lr(base, 75, 100, 2) ==
        doctest::Approx(cosine_lr(base, 25, 100, 2)).epsilon(1e-12));
  CHECK_THROWS_AS((void)cosine_lr(base, 0, 0), const Error&);
  CHECK_THROWS_AS((void)cosine_lr(base, 0, 10, 0), const Error&);
  CHECK_THROWS_AS((void)cosine_lr(base, 0, 10, 11), const Error&);
}

TEST_CASE("Adam: two updates match a hand-stepped oracle") {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
  ParamStore<double> store(1);
  store.fetch("p", {3}, Init::constant(0.5));
  Adam<double> adam(b1, b2, eps);

  Tensor<double> g1({3});
  g1[0] = 1.0;
  g1[1] = -2.0;
  g1[2] = 0.5;
  Tensor<double> g2({3});
  g2[0] = -0.3;
  g2[1] = 0.7;
  g2[2] = 2.0;

  // Oracle state mirrors the update rule exactly.
  double p[3] = {0.5, 0.5, 0.5}, m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  auto oracle_step = [&](const Tensor<double>& g, int t) {
    const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
    for (int i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  };

  std::map<std::string, Tensor<double>> grads;
  grads.emplace("p", g1);
  const double norm1 = adam.step(store, grads, lr, /*clip_norm=*/0.0);
  CHECK(norm1 == doctest::Approx(std::sqrt(1.0 + 4.0 + 0.25)).epsilon(1e-12));
  oracle_step(g1, 1);
  for (int i = 0; i < 3; ++i)
    CHECK(store.at("p").value[i] == doctest::Approx(p[i]).epsilon(1e-12));

  grads.at("p") = g2;
  adam.step(store, grads, lr, 0.0);
  oracle_step(g2, 2);
  for (int i = 0; i < 3; ++i)
    CHECK(store.at("p").value[i] == doctest::Approx(p[i]).epsilon(1e-12));
  CHECK(adam.updates() == 2);
}

TEST_CASE("Adam: global-norm clipping rescales, reports the pre-clip norm") {
  ParamStore<double> store(1);
  store.fetch("p", {2}, Init::zeros());
  Adam<double> adam;
  Tensor<double> g({2});
  g[0] = 6.0;
  g[1] = 8.0;  // norm 10
  std::map<std::string, Tensor<double>> grads;
  grads.emplace("p", g);
  const double norm = adam.step(store, grads, 0.1, /*clip_norm=*/5.0);
  CHECK(norm == doctest::Approx(10.0).epsilon(1e-12));

  // Same step with pre-scaled gradients and no clip must land identically.
  ParamStore<double> store2(1);
  store2.fetch("p", {2}, Init::zeros());
  Adam<double> adam2;
  Tensor<double> gh({2});
  gh[0] = 3.0;
  gh[1] = 4.0;
  std::map<std::string, Tensor<double>> grads2;
  grads2.emplace("p", gh);
  adam2.step(store2, grads2, 0.1, 0.0);
  CHECK(bit_equal(store.at("p").value, store2.at("p").value));
}

TEST_CASE("Adam: refuses gradients for frozen parameters") {
  ParamStore<double> store(1);
  store.declare_frozen_prefix("text.");
  store.fetch("text.embed", {2}, Init::zeros());
  Adam<double> adam;
  std::map<std::string, Tensor<double>> grads;
  grads.emplace("text.embed", Tensor<double>::full({2}, 1.0));
  try {
    adam.step(store, grads, 0.1, 0.0);
    FAIL("expected an error for frozen-parameter gradients");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::state);
  }
}

TEST_CASE("BatchSampler: epoch permutations without replacement") {
  BatchSampler sampler(5, Rng(321));
  std::vector<int> epoch1, epoch2;
  for (int i = 0; i < 3; ++i)
    for (int v : sampler.next(2)) {
      if (epoch1.size() < 5)
        epoch1.push_back(v);
      else
        epoch2.push_back(v);
    }
  // 6 draws: first 5 form a permutation of 0..4, the 6th starts epoch 2.
  std::vector<int> sorted1 = epoch1;
  std::sort(sorted1.begin(), sorted1.end());
  CHECK(sorted1 == std::vector<int>{0, 1, 2, 3, 4});
  REQUIRE(epoch2.size() == 1);
  CHECK(epoch2[0] >= 0);
  CHECK(epoch2[0] < 5);

  // Serialization mid-epoch resumes the identical visit order.
  std::ostringstream os;
  sampler.serialize(os);
  BatchSampler resumed;
  std::istringstream is(os.str());
  resumed.deserialize(is);
  for (int i = 0; i < 7; ++i) CHECK(resumed.next(1) == sampler.next(1));
}

TEST_CASE("trainer: lambda_max=0 makes the semi path bit-identical") {
  const Dataset labeled = generate_synthetic(4, 77, tiny_gen());
  const Dataset unlabeled =
      strip_masks(generate_synthetic(2, 78, tiny_gen()));

  TrainConfig cfg = tiny_cfg();
  cfg.loss.lambda_max = 0.0;

  Trainer<float> semi(cfg, 4, 2);
  Trainer<float> sup(cfg, 4, 0);
  for (int s = 0; s < 3; ++s) {
    const StepStats a = semi.step_semi(labeled, unlabeled);
    const StepStats b = sup.step_supervised(labeled);
    CHECK(a.l_sup == b.l_sup);
    CHECK(a.beta == b.beta);
    CHECK(a.l_unsup == 0.0);
  }
  CHECK(semi.state_equal(sup));
  CHECK(sup.state_equal(semi));
}

TEST_CASE("trainer: checkpoint round-trip restores every piece of state") {
  const auto dir = scratch_dir("roundtrip");
  const Dataset labeled = generate_synthetic(4, 79, tiny_gen());
  const Dataset unlabeled =
      strip_masks(generate_synthetic(3, 80, tiny_gen()));

  TrainConfig cfg = tiny_cfg();
  cfg.loss.lambda_max = 1.0;
  cfg.loss.warmup_steps = 2;

  Trainer<float> t(cfg, 4, 3);
  for (int s = 0; s < 2; ++s) (void)t.step_semi(labeled, unlabeled);
  const std::string path = (dir / "ck.mxc").string();
  t.save(path);

  Trainer<float> r = Trainer<float>::load(path);
  CHECK(r.step_index() == 2);
  CHECK(config_fingerprint(r.config()) == config_fingerprint(t.config()));
  CHECK(r.state_equal(t));

  // Stepping both from the restored point stays in lockstep.
  const StepStats a = t.step_semi(labeled, unlabeled);
  const StepStats b = r.step_semi(labeled, unlabeled);
  CHECK(a.l_sup == b.l_sup);
  CHECK(a.l_unsup == b.l_unsup);
  CHECK(a.beta == b.beta);
  CHECK(r.state_equal(t));
  fs::remove_all(dir);
}

TEST_CASE("trainer: resume equals an uninterrupted run bit-for-bit") {
  const auto dir = scratch_dir("resume");
  const Dataset labeled = generate_synthetic(4, 81, tiny_gen());
  const Dataset unlabeled =
      strip_masks(generate_synthetic(2, 82, tiny_gen()));

  TrainConfig cfg = tiny_cfg();
  cfg.loss.lambda_max = 0.8;
  cfg.loss.warmup_steps = 2;
  cfg.total_steps = 6;

  Trainer<float> continuous(cfg, 4, 2);
  std::vector<StepStats> trace;
  for (int s = 0; s < 4; ++s)
    trace.push_back(continuous.step_semi(labeled, unlabeled));

  Trainer<float> first(cfg, 4, 2);
  for (int s = 0; s < 2; ++s) (void)first.step_semi(labeled, unlabeled);
  const std::string path = (dir / "mid.mxc").string();
  first.save(path);
  Trainer<float> resumed = Trainer<float>::load(path);
  for (int s = 2; s < 4; ++s) {
    const StepStats st = resumed.step_semi(labeled, unlabeled);
    CHECK(st.l_sup == trace[static_cast<size_t>(s)].l_sup);
    CHECK(st.l_unsup == trace[static_cast<size_t>(s)].l_unsup);
    CHECK(st.beta == trace[static_cast<size_t>(s)].beta);
  }
  CHECK(resumed.state_equal(continuous));
  fs::remove_all(dir);
}

TEST_CASE("trainer: enforces the step budget and sampler arities") {
  const Dataset labeled = generate_synthetic(2, 83, tiny_gen());
  TrainConfig cfg = tiny_cfg();
  cfg.total_steps = 1;
  cfg.loss.warmup_steps = 1;
  Trainer<float> t(cfg, 2, 0);
  (void)t.step_supervised(labeled);
  try {
    (void)t.step_supervised(labeled);
    FAIL("expected a state error after total_steps");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::state);
  }

  // Dataset size must match the sampler the trainer was built with.
  Trainer<float> t2(tiny_cfg(), 3, 0);
  CHECK_THROWS_AS((void)t2.step_supervised(labeled), const Error&);

  // Semi stepping requires an unlabeled sampler and a non-empty dataset.
  Trainer<float> t3(tiny_cfg(), 2, 0);
  const Dataset unl = strip_masks(generate_synthetic(2, 84, tiny_gen()));
  CHECK_THROWS_AS((void)t3.step_semi(labeled, unl), const Error&);
  Trainer<float> t4(tiny_cfg(), 2, 2);
  CHECK_THROWS_AS((void)t4.step_semi(labeled, Dataset{}), const Error&);
}

TEST_CASE("trainer: unlabeled samples never require masks") {
  // The unsupervised half must consume mask-free samples without touching
  // ground truth; labeled samples without masks are rejected instead.
  const Dataset labeled = generate_synthetic(2, 85, tiny_gen());
  const Dataset unlabeled =
      strip_masks(generate_synthetic(2, 86, tiny_gen()));
  TrainConfig cfg = tiny_cfg();
  cfg.loss.lambda_max = 1.0;
  cfg.loss.warmup_steps = 1;
  Trainer<float> t(cfg, 2, 2);
  const StepStats st = t.step_semi(labeled, unlabeled);
  CHECK(st.l_unsup > 0.0);

  Trainer<float> bad(cfg, 2, 2);
  CHECK_THROWS_AS((void)bad.step_semi(unlabeled, unlabeled), const Error&);
}

TEST_CASE("trainer: a sample drawn twice in one batch cannot self-vote") {
  // With one unlabeled sample and batch_size 2, every unlabeled batch
  // contains the same sample twice. The temporal axis must serve both
  // occurrences the same strictly-older history instead of letting the
  // second occurrence read the first one's fresh prediction.
  const Dataset labeled = generate_synthetic(2, 91, tiny_gen());
  const Dataset unlabeled = strip_masks(generate_synthetic(1, 92, tiny_gen()));
  TrainConfig cfg = tiny_cfg();
  cfg.loss.lambda_max = 1.0;
  cfg.loss.warmup_steps = 1;
  Trainer<float> t(cfg, 2, 1);
  for (int s = 0; s < 3; ++s) {
    const StepStats st = t.step_semi(labeled, unlabeled);
    CHECK(st.l_unsup > 0.0);
  }
  CHECK(t.buffer().num_samples() == 1);
}

TEST_CASE("trainer: checkpoint rejects corruption, truncation, bad version") {
  const auto dir = scratch_dir("corrupt");
  const Dataset labeled = generate_synthetic(2, 87, tiny_gen());
  TrainConfig cfg = tiny_cfg();
  Trainer<float> t(cfg, 2, 0);
  (void)t.step_supervised(labeled);
  const std::string path = (dir / "ck.mxc").string();
  t.save(path);

  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    bytes = ss.str();
  }
  REQUIRE(bytes.size() > 64);

  const auto write_variant = [&](const std::string& name,
                                 const std::string& content) {
    const std::string p = (dir / name).string();
    std::ofstream os(p, std::ios::binary);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    return p;
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS((void)Trainer<float>::load(write_variant("m.mxc", bad_magic)),
                  const Error&);

  std::string bad_version = bytes;
  bad_version[4] = static_cast<char>(bad_version[4] + 1);
  CHECK_THROWS_AS(
      (void)Trainer<float>::load(write_variant("v.mxc", bad_version)),
      const Error&);

  const std::string truncated = bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(
      (void)Trainer<float>::load(write_variant("t.mxc", truncated)),
      const Error&);

  CHECK_THROWS_AS((void)Trainer<float>::load((dir / "missing.mxc").string()),
                  const Error&);
  fs::remove_all(dir);
}

TEST_CASE("trainer: supervised loss decreases on a small fixed set") {
  const Dataset labeled = generate_synthetic(4, 88, tiny_gen());
  TrainConfig cfg = tiny_cfg();
  cfg.total_steps = 30;
  cfg.learning_rate = 3e-3;
  Trainer<float> t(cfg, 4, 0);
  std::vector<double> losses;
  for (int s = 0; s < 30; ++s)
    losses.push_back(t.step_supervised(labeled).l_sup);
  const auto mean5 = [&](size_t from) {
    double m = 0;
    for (size_t i = from; i < from + 5; ++i) m += losses[i];
    return m / 5.0;
  };
  CHECK(mean5(25) < mean5(0));
}

TEST_CASE("run_training: metric log rows, final checkpoint, eval cadence") {
  const auto dir = scratch_dir("runloop");
  const Dataset labeled = generate_synthetic(3, 89, tiny_gen());
  const Dataset eval_set = generate_synthetic(2, 90, tiny_gen());

  TrainConfig cfg = tiny_cfg();
  cfg.total_steps = 4;
  cfg.eval_every = 2;
  const std::string log = (dir / "metrics.csv").string();
  const std::string ck = (dir / "final.mxc").string();

  Trainer<float> t(cfg, 3, 0);
  const TrainResult res =
      run_training(t, labeled, Dataset{}, eval_set, log, ck);
  CHECK(res.final_eval.dice_percent >= 0.0);
  CHECK(res.final_eval.dice_percent <= 100.0);
  CHECK(res.first_loss > 0.0);
  CHECK(res.last_loss > 0.0);
  CHECK(fs::exists(ck));

  std::ifstream is(log);
  REQUIRE(is.good());
  std::string line;
  std::getline(is, line);
  CHECK(line == "step,l_sup,l_unsup,lambda,beta,dice_eval,miou_eval");
  int rows = 0, eval_rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++rows;
    // Eval columns are filled exactly on steps 2 and 4 (1-based cadence).
    std::string tail = line.substr(line.find_last_of(',') + 1);
    if (!tail.empty()) ++eval_rows;
  }
  CHECK(rows == 4);
  CHECK(eval_rows == 2);

  // The checkpoint written by the loop restores to the final step.
  Trainer<float> r = Trainer<float>::load(ck);
  CHECK(r.step_index() == 4);
  CHECK(r.state_equal(t));
  fs::remove_all(dir);
}
