// SPDX-License-Identifier: Apache-2.0
//
// Segmentation losses: the Dice+CE objective against an independent
// scalar-loop oracle, the multi-scale supervision algebra, the consistency
// (pseudo-label) loss, and the warm-up schedule.
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "model/losses.hpp"
#include "support/gradcheck.hpp"

using namespace maxico;
using testing::gradcheck_max_rel_err;
using testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Independent scalar-loop re-derivation of the combined loss:
//   0.5 * (1/K) sum_k [1 - (2*sum pt + eps)/(sum p + sum t + eps)]
// + 0.5 * (1/R) sum_i sum_k -t*log(max(p, tiny))
double oracle_dice_ce(const Tensor<double>& p, const Tensor<double>& t) {
  const int kc = p.dim(p.rank() - 1);
  const int64_t rows = p.size() / kc;
  double dice = 0;
  for (int k = 0; k < kc; ++k) {
    double spt = 0, sp = 0, st = 0;
    for (int64_t i = 0; i < rows; ++i) {
      spt += p[i * kc + k] * t[i * kc + k];
      sp += p[i * kc + k];
      st += t[i * kc + k];
    }
    dice += 1.0 - (2.0 * spt + 1e-5) / (sp + st + 1e-5);
  }
  dice /= kc;
  double ce = 0;
  for (int64_t i = 0; i < rows * kc; ++i)
    ce -= t[i] * std::log(std::max(p[i], std::numeric_limits<double>::min()));
  ce /= static_cast<double>(rows);
  return 0.5 * dice + 0.5 * ce;
}

// Random per-row-normalized probability map with entries bounded away
// from zero (keeps the log term and finite differences well-conditioned).
Tensor<double> random_soft(const std::vector<int>& shape, uint64_t seed) {
  Tensor<double> t = random_tensor(shape, seed, 0.2, 1.0);
  const int kc = t.dim(t.rank() - 1);
  for (int64_t i = 0; i < t.size() / kc; ++i) {
    double s = 0;
    for (int k = 0; k < kc; ++k) s += t[i * kc + k];
    for (int k = 0; k < kc; ++k) t[i * kc + k] /= s;
  }
  return t;
}

Tensor<int> random_mask(int h, int w, int num_classes, uint64_t seed) {
  Tensor<int> m({h, w});
  Rng rng(seed);
  for (int64_t i = 0; i < m.size(); ++i)
    m[i] = static_cast<int>(rng.uniform_int(num_classes));
  return m;
}

double eval_dice_ce(const Tensor<double>& p, const Tensor<double>& t) {
  ad::Graph<double> g;
  return dice_ce(ad::leaf(g, p, false), t).val()[0];
}

}  // namespace

TEST_CASE("one_hot places a single one per pixel") {
  Tensor<int> mask({2, 2});
  mask.at(0, 0) = 0;
  mask.at(0, 1) = 1;
  mask.at(1, 0) = 2;
  mask.at(1, 1) = 1;
  const Tensor<double> oh = one_hot<double>(mask, 3);
  REQUIRE(oh.rank() == 3);
  CHECK(oh.dim(2) == 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int k = 0; k < 3; ++k)
        CHECK(oh.at(y, x, k) == (mask.at(y, x) == k ? 1.0 : 0.0));

  Tensor<int> bad({1, 1});
  bad[0] = 3;
  CHECK_THROWS_AS((void)one_hot<double>(bad, 3), const Error&);
}

TEST_CASE("downsample_ids_nearest samples source centres") {
  Tensor<int> ids({4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) ids.at(y, x) = y * 4 + x;
  const Tensor<int> half = downsample_ids_nearest(ids, 2);
  REQUIRE(half.dim(0) == 2);
  // Destination (y,x) reads source (2y+1, 2x+1).
  CHECK(half.at(0, 0) == ids.at(1, 1));
  CHECK(half.at(0, 1) == ids.at(1, 3));
  CHECK(half.at(1, 0) == ids.at(3, 1));
  CHECK(half.at(1, 1) == ids.at(3, 3));

  // Factor 1 is the identity.
  CHECK(bit_equal(downsample_ids_nearest(ids, 1), ids));
  CHECK_THROWS_AS((void)downsample_ids_nearest(ids, 3), const Error&);
}

TEST_CASE("dice_ce matches the scalar-loop oracle") {
  for (uint64_t seed = 1; seed <= 8; ++seed) {
    const Tensor<double> p = random_soft({4, 4, 2}, seed);
    const Tensor<double> t =
        one_hot<double>(random_mask(4, 4, 2, seed + 100), 2);
    CHECK(eval_dice_ce(p, t) ==
          doctest::Approx(oracle_dice_ce(p, t)).epsilon(1e-10));
  }
  // Soft (non-one-hot) targets, three classes, non-square grid.
  for (uint64_t seed = 30; seed <= 33; ++seed) {
    const Tensor<double> p = random_soft({3, 5, 3}, seed);
    const Tensor<double> t = random_tensor({3, 5, 3}, seed + 7, 0.0, 1.0);
    CHECK(eval_dice_ce(p, t) ==
          doctest::Approx(oracle_dice_ce(p, t)).epsilon(1e-10));
  }
}

TEST_CASE("dice_ce on hand-built cases") {
  // Perfect one-hot prediction: both terms vanish identically.
  const Tensor<int> mask = random_mask(4, 4, 2, 5);
  const Tensor<double> oh = one_hot<double>(mask, 2);
  CHECK(eval_dice_ce(oh, oh) == 0.0);

  // Uniform prediction over K=2: the CE half is exactly ln 2.
  Tensor<double> uniform({4, 4, 2});
  for (int64_t i = 0; i < uniform.size(); ++i) uniform[i] = 0.5;
  double dice = 0;  // per-class from the definition
  for (int k = 0; k < 2; ++k) {
    double spt = 0, sp = 0, st = 0;
    for (int64_t i = 0; i < 16; ++i) {
      spt += 0.5 * oh[i * 2 + k];
      sp += 0.5;
      st += oh[i * 2 + k];
    }
    dice += 1.0 - (2 * spt + 1e-5) / (sp + st + 1e-5);
  }
  dice /= 2;
  CHECK(eval_dice_ce(uniform, oh) ==
        doctest::Approx(0.5 * dice + 0.5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("dice_ce validates prediction rows but not targets") {
  Tensor<double> bad({2, 2, 2});
  for (int64_t i = 0; i < bad.size(); ++i) bad[i] = 0.6;  // rows sum to 1.2
  const Tensor<double> t = one_hot<double>(random_mask(2, 2, 2, 1), 2);
  ad::Graph<double> g;
  CHECK_THROWS_AS((void)dice_ce(ad::leaf(g, bad, false), t), const Error&);

  // Multi-hot targets (hardened ties) are legal and finite.
  const Tensor<double> p = random_soft({2, 2, 2}, 3);
  Tensor<double> multi({2, 2, 2});
  for (int64_t i = 0; i < multi.size(); ++i) multi[i] = 1.0;
  const double v = eval_dice_ce(p, multi);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(oracle_dice_ce(p, multi)).epsilon(1e-10));

  // Shape mismatch is rejected.
  ad::Graph<double> g2;
  CHECK_THROWS_AS(
      (void)dice_ce(ad::leaf(g2, random_soft({2, 2, 2}, 4), false),
                    Tensor<double>({2, 3, 2})),
      const Error&);
}

TEST_CASE("dice_ce gradient matches finite differences") {
  const Tensor<double> t = one_hot<double>(random_mask(4, 4, 2, 9), 2);
  const double err = gradcheck_max_rel_err(
      {random_soft({4, 4, 2}, 10)},
      [&](ad::Graph<double>&, const std::vector<ad::Var<double>>& v) {
        return dice_ce(v[0], t);
      });
  CHECK(err < kGradTol);

  // Soft targets exercise the same backward path.
  const Tensor<double> soft = random_tensor({4, 4, 2}, 11, 0.0, 1.0);
  const double err2 = gradcheck_max_rel_err(
      {random_soft({4, 4, 2}, 12)},
      [&](ad::Graph<double>&, const std::vector<ad::Var<double>>& v) {
        return dice_ce(v[0], soft);
      });
  CHECK(err2 < kGradTol);
}

TEST_CASE("multi-scale loss collapses to the weight sum on identical heads") {
  const Tensor<int> mask = random_mask(4, 4, 2, 20);
  const Tensor<double> p = random_soft({4, 4, 2}, 21);
  LossWeights w;
  w.alpha1 = 1.0;
  w.alpha2 = 1.0;
  w.alpha3 = 0.6;

  ad::Graph<double> g;
  PredictionBundle<double> b;
  b.p = ad::leaf(g, p, false);
  b.r = ad::leaf(g, p, false);
  b.qs = {ad::leaf(g, p, false), ad::leaf(g, p, false)};  // full-res heads

  const double single = eval_dice_ce(p, one_hot<double>(mask, 2));
  const double total =
      multiscale_supervised_loss(b, mask, w, true).val()[0];
  CHECK(total ==
        doctest::Approx((w.alpha1 + w.alpha2 + w.alpha3) * single)
            .epsilon(1e-10));
}

TEST_CASE("multi-scale loss flag and branch semantics") {
  const Tensor<int> mask = random_mask(4, 4, 2, 30);
  const Tensor<double> oh = one_hot<double>(mask, 2);
  const Tensor<double> p = random_soft({4, 4, 2}, 31);
  const Tensor<double> r = random_soft({4, 4, 2}, 32);
  const Tensor<double> q = random_soft({2, 2, 2}, 33);
  LossWeights w;
  w.alpha1 = 0.7;
  w.alpha2 = 1.3;
  w.alpha3 = 0.6;

  const double lp = eval_dice_ce(p, oh);
  const double lr = eval_dice_ce(r, oh);
  const double lq = eval_dice_ce(
      q, one_hot<double>(downsample_ids_nearest(mask, 2), 2));

  // The graph must outlive the bundle's vars, so each case builds in place.
  const auto build = [&](ad::Graph<double>& g, bool with_r, bool with_q) {
    PredictionBundle<double> b;
    b.p = ad::leaf(g, p, false);
    if (with_r) b.r = ad::leaf(g, r, false);
    if (with_q) b.qs = {ad::leaf(g, q, false)};
    return b;
  };

  // Full bundle: a1*L(P) + a2*L(R) + a3 * mean_s L(Q_s, T_s).
  {
    ad::Graph<double> g;
    auto b = build(g, true, true);
    CHECK(multiscale_supervised_loss(b, mask, w, true).val()[0] ==
          doctest::Approx(w.alpha1 * lp + w.alpha2 * lr + w.alpha3 * lq)
              .epsilon(1e-12));
  }
  // ms_loss off: only the a1 term, regardless of the bundle contents.
  {
    ad::Graph<double> g;
    auto b = build(g, true, true);
    CHECK(multiscale_supervised_loss(b, mask, w, false).val()[0] ==
          doctest::Approx(w.alpha1 * lp).epsilon(1e-12));
  }
  // CNN branch off (r undefined): the a2 term is skipped.
  {
    ad::Graph<double> g;
    auto b = build(g, false, true);
    CHECK(multiscale_supervised_loss(b, mask, w, true).val()[0] ==
          doctest::Approx(w.alpha1 * lp + w.alpha3 * lq).epsilon(1e-12));
  }
  // No deep heads: the a3 term contributes zero.
  {
    ad::Graph<double> g;
    auto b = build(g, true, false);
    CHECK(multiscale_supervised_loss(b, mask, w, true).val()[0] ==
          doctest::Approx(w.alpha1 * lp + w.alpha2 * lr).epsilon(1e-12));
  }
  // Two deep heads average (not sum).
  {
    ad::Graph<double> g;
    PredictionBundle<double> b;
    b.p = ad::leaf(g, p, false);
    const Tensor<double> q2 = random_soft({2, 2, 2}, 34);
    b.qs = {ad::leaf(g, q, false), ad::leaf(g, q2, false)};
    const double lq2 = eval_dice_ce(
        q2, one_hot<double>(downsample_ids_nearest(mask, 2), 2));
    CHECK(multiscale_supervised_loss(b, mask, w, true).val()[0] ==
          doctest::Approx(w.alpha1 * lp + w.alpha3 * 0.5 * (lq + lq2))
              .epsilon(1e-12));
  }
}

TEST_CASE("multi-scale loss gradient matches finite differences") {
  const Tensor<int> mask = random_mask(4, 4, 2, 40);
  LossWeights w;
  const double err = gradcheck_max_rel_err(
      {random_soft({4, 4, 2}, 41), random_soft({4, 4, 2}, 42),
       random_soft({2, 2, 2}, 43)},
      [&](ad::Graph<double>&, const std::vector<ad::Var<double>>& v) {
        PredictionBundle<double> b;
        b.p = v[0];
        b.r = v[1];
        b.qs = {v[2]};
        return multiscale_supervised_loss(b, mask, w, true);
      });
  CHECK(err < kGradTol);
}

TEST_CASE("unsupervised loss is the mean over contributors") {
  const Tensor<double> pseudo = random_tensor({4, 4, 2}, 50, 0.0, 1.0);
  const Tensor<double> a = random_soft({4, 4, 2}, 51);
  const Tensor<double> b = random_soft({4, 4, 2}, 52);
  const Tensor<double> c = random_soft({4, 4, 2}, 53);

  ad::Graph<double> g;
  const double got = unsupervised_loss<double>(
                         {ad::leaf(g, a, false), ad::leaf(g, b, false),
                          ad::leaf(g, c, false)},
                         pseudo)
                         .val()[0];
  const double want = (oracle_dice_ce(a, pseudo) + oracle_dice_ce(b, pseudo) +
                       oracle_dice_ce(c, pseudo)) /
                      3.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-10));

  CHECK_THROWS_AS((void)unsupervised_loss<double>({}, pseudo), const Error&);
}

TEST_CASE("unsupervised loss gradient matches finite differences") {
  const Tensor<double> pseudo = random_tensor({4, 4, 2}, 60, 0.0, 1.0);
  const double err = gradcheck_max_rel_err(
      {random_soft({4, 4, 2}, 61), random_soft({4, 4, 2}, 62)},
      [&](ad::Graph<double>&, const std::vector<ad::Var<double>>& v) {
        return unsupervised_loss<double>({v[0], v[1]}, pseudo);
      });
  CHECK(err < kGradTol);
}

TEST_CASE("warm-up schedule endpoints are exact") {
  LossWeights w;
  w.lambda_max = 0.75;
  w.warmup_steps = 40;
  CHECK(lambda_schedule(0, w) == w.lambda_max * std::exp(-5.0));
  CHECK(lambda_schedule(40, w) == w.lambda_max);
  CHECK(lambda_schedule(1000, w) == w.lambda_max);
  CHECK_THROWS_AS((void)lambda_schedule(-1, w), const Error&);
}

TEST_CASE("warm-up schedule ramps monotonically") {
  LossWeights w;
  w.lambda_max = 1.0;
  w.warmup_steps = 100;
  double prev = -1.0;
  for (int t = 0; t <= 100; ++t) {
    const double v = lambda_schedule(t, w);
    CHECK(v >= prev);
    CHECK(v <= w.lambda_max);
    prev = v;
  }
}

TEST_CASE("final loss combines terms and rejects NaN") {
  LossWeights w;
  w.lambda_max = 0.5;
  w.warmup_steps = 10;
  ad::Graph<double> g;
  auto sup = ad::leaf(g, Tensor<double>::full({1}, 1.25), false);
  auto uns = ad::leaf(g, Tensor<double>::full({1}, 0.5), false);
  const int64_t t = 3;
  const double lam = lambda_schedule(t, w);
  CHECK(final_loss(sup, uns, t, w).val()[0] ==
        doctest::Approx(1.25 + lam * 0.5).epsilon(1e-15));

  auto nan_var = ad::leaf(
      g, Tensor<double>::full({1}, std::numeric_limits<double>::quiet_NaN()),
      false);
  try {
    (void)final_loss(nan_var, uns, t, w);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
  }
  try {
    (void)final_loss(sup, nan_var, t, w);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
  }
}
