// SPDX-License-Identifier: Apache-2.0
//
// Configuration system tests: canonical text round-trips, the key table,
// value validation, fingerprint behaviour, and the seed environment
// override.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "config/config.hpp"
#include "core/error.hpp"

using namespace maxico;
namespace fs = std::filesystem;

TEST_CASE("config: canonical text round-trips the default config") {
  TrainConfig cfg;
  const std::string text = config_to_text(cfg);
  TrainConfig back;
  // Perturb a few fields so the round-trip provably overwrites them.
  back.seed = 999;
  back.model.n_levels = 2;
  back.model.channels = {1, 2};
  apply_config_text(back, text);
  CHECK(config_fingerprint(back) == config_fingerprint(cfg));
  CHECK(config_to_text(back) == text);
  CHECK(back.model.channels == cfg.model.channels);
}

TEST_CASE("config: every key serialises and re-applies losslessly") {
  TrainConfig cfg;
  cfg.model.n_levels = 3;
  cfg.model.channels = {8, 12, 24};
  cfg.model.d_vit = 16;
  cfg.model.fusion.mode = FusionMode::pf;
  cfg.loss.lambda_max = 0.25;
  cfg.axes.temporal = false;
  cfg.seed = 345;
  const std::string text = config_to_text(cfg);

  TrainConfig back;
  apply_config_text(back, text);
  CHECK(config_fingerprint(back) == config_fingerprint(cfg));
  CHECK(back.model.channels == std::vector<int>{8, 12, 24});
  CHECK(back.model.d_vit == 16);
  CHECK(back.model.fusion.mode == FusionMode::pf);
  CHECK(back.loss.lambda_max == 0.25);
  CHECK_FALSE(back.axes.temporal);

  // The canonical text mentions each key exactly once.
  for (const auto& key : config_keys()) {
    const auto pos = text.find(key + " = ");
    REQUIRE(pos != std::string::npos);
    CHECK(text.find(key + " = ", pos + 1) == std::string::npos);
  }
}

TEST_CASE("config: unknown keys are rejected and valid keys listed") {
  TrainConfig cfg;
  try {
    set_config_key(cfg, "trian.seed", "7");
    FAIL("expected unknown-key rejection");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("trian.seed") != std::string::npos);
    CHECK(msg.find("valid keys") != std::string::npos);
    CHECK(msg.find("train.seed") != std::string::npos);
  }
}

TEST_CASE("config: malformed values raise invalid_argument") {
  TrainConfig cfg;
  const auto expect_invalid = [&](const std::string& k, const std::string& v) {
    try {
      set_config_key(cfg, k, v);
      FAIL("expected rejection for " << k << " = " << v);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_argument);
    }
  };
  expect_invalid("train.total_steps", "abc");
  expect_invalid("train.total_steps", "12x");
  expect_invalid("train.learning_rate", "1.2.3");
  expect_invalid("axes.temporal", "maybe");
  expect_invalid("fusion.mode", "blend");
  expect_invalid("model.channels", "");
  expect_invalid("model.channels", "8,,12");
  expect_invalid("train.seed", "-1");
}

TEST_CASE("config: channel ladder parses and prints as a comma list") {
  TrainConfig cfg;
  set_config_key(cfg, "model.channels", "4,6,8,10");
  CHECK(cfg.model.channels == std::vector<int>{4, 6, 8, 10});
  const std::string text = config_to_text(cfg);
  CHECK(text.find("model.channels = 4,6,8,10\n") != std::string::npos);
}

TEST_CASE("config: text parsing handles comments, blanks, bad lines") {
  TrainConfig cfg;
  apply_config_text(cfg,
                    "# a comment line\n"
                    "\n"
                    "train.seed = 9   # trailing comment\n"
                    "  train.batch_size   =   3  \n");
  CHECK(cfg.seed == 9);
  CHECK(cfg.batch_size == 3);

  try {
    apply_config_text(cfg, "train.seed 9\n", "myfile.cfg");
    FAIL("expected a parse error for a line without '='");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("myfile.cfg:1") != std::string::npos);
  }
}

TEST_CASE("config: fingerprint is stable and value-sensitive") {
  TrainConfig a, b;
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  b.seed = a.seed + 1;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
  b.seed = a.seed;
  b.model.fusion.beta_infer = 0.75;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
}

TEST_CASE("config: MAXICO_SEED environment override") {
  TrainConfig cfg;
  cfg.seed = 5;

  unsetenv("MAXICO_SEED");
  apply_seed_env(cfg);
  CHECK(cfg.seed == 5);

  setenv("MAXICO_SEED", "123456", 1);
  apply_seed_env(cfg);
  CHECK(cfg.seed == 123456);

  setenv("MAXICO_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(apply_seed_env(cfg), const Error&);
  unsetenv("MAXICO_SEED");
}

TEST_CASE("config: file loading and missing-file errors") {
  const fs::path dir = fs::temp_directory_path() / "maxico_config_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "run.cfg").string();
  {
    std::ofstream os(path);
    os << "train.total_steps = 77\nfusion.mode = pf\n";
  }
  TrainConfig cfg;
  apply_config_file(cfg, path);
  CHECK(cfg.total_steps == 77);
  CHECK(cfg.model.fusion.mode == FusionMode::pf);

  try {
    apply_config_file(cfg, (dir / "nope.cfg").string());
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
  }
  fs::remove_all(dir);
}

TEST_CASE("config: validation catches inconsistent field combinations") {
  TrainConfig cfg;
  cfg.total_steps = 5;
  cfg.loss.warmup_steps = 10;  // warmup longer than the run
  CHECK_THROWS_AS(cfg.validate(), const Error&);

  TrainConfig cfg2;
  cfg2.model.n_levels = 5;
  CHECK_THROWS_AS(cfg2.validate(), const Error&);

  TrainConfig cfg3;
  cfg3.model.n_levels = 3;
  cfg3.model.channels = {4, 6};  // ladder shorter than n_levels
  CHECK_THROWS_AS(cfg3.validate(), const Error&);

  TrainConfig cfg4;
  cfg4.model.d_vit = 30;  // not divisible by the head count (4)
  CHECK_THROWS_AS(cfg4.validate(), const Error&);

  TrainConfig cfg5;
  cfg5.model.fusion.r1 = 0.8;
  cfg5.model.fusion.r2 = 0.2;
  CHECK_THROWS_AS(cfg5.validate(), const Error&);
}
