#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "ressenet/ops.hpp"
#include "ressenet/rng.hpp"
#include "support/oracles.hpp"

using namespace ressenet;

namespace {

TensorPtr<double> random_tensor(Shape shape, Rng& rng, double stddev = 1.0,
                                bool rg = false) {
  return randn<double>(std::move(shape), rng, stddev, rg);
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 counts the receptive field") {
  auto x = ones<double>({1, 1, 3, 3});
  auto w = ones<double>({1, 1, 3, 3});
  auto y = ops::conv2d<double>(nullptr, x, w, 1, 1);
  REQUIRE(y->shape == Shape{1, 1, 3, 3});
  CHECK(y->data[4] == 9.0);  // center
  CHECK(y->data[0] == 4.0);  // corners
  CHECK(y->data[2] == 4.0);
  CHECK(y->data[6] == 4.0);
  CHECK(y->data[8] == 4.0);
}

TEST_CASE("conv2d: 1x1 stride-2 projection doubles channels, halves extent") {
  Rng rng(7);
  auto x = random_tensor({1, 64, 32, 32}, rng);
  auto w = random_tensor({128, 64, 1, 1}, rng);
  auto y = ops::conv2d<double>(nullptr, x, w, 2, 0);
  REQUIRE(y->shape == Shape{1, 128, 16, 16});
}

TEST_CASE("conv2d: forward matches the 6-loop direct oracle") {
  Rng rng(11);
  auto x = random_tensor({1, 2, 5, 5}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto y = ops::conv2d<double>(nullptr, x, w, 2, 1);
  int ho = 0, wo = 0;
  auto ref = oracles::naive_conv2d(x->data, 1, 2, 5, 5, w->data, 3, 3, 2, 1, ho, wo);
  REQUIRE(y->shape == Shape{1, 3, ho, wo});
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK_THAT(y->data[i], Catch::Matchers::WithinAbs(ref[i], 1e-12));
}

TEST_CASE("conv2d: output extents follow the shape law") {
  Rng rng(3);
  for (int h : {7, 8, 12}) {
    for (int k : {1, 3}) {
      for (int s : {1, 2}) {
        for (int p : {0, 1}) {
          auto x = random_tensor({1, 2, h, h}, rng);
          auto w = random_tensor({3, 2, k, k}, rng);
          if (h + 2 * p - k < 0) continue;
          auto y = ops::conv2d<double>(nullptr, x, w, s, p);
          std::int64_t expect = (h + 2 * p - k) / s + 1;
          CAPTURE(h, k, s, p);
          CHECK(y->dim(2) == expect);
          CHECK(y->dim(3) == expect);
        }
      }
    }
  }
}

TEST_CASE("conv2d: rejects mismatched channels and unsupported geometry") {
  Rng rng(5);
  auto x = random_tensor({1, 4, 8, 8}, rng);
  auto w_bad = random_tensor({8, 3, 3, 3}, rng);
  CHECK_THROWS_AS(ops::conv2d<double>(nullptr, x, w_bad, 1, 1), ShapeError);
  auto w5 = random_tensor({8, 4, 5, 5}, rng);
  CHECK_THROWS_AS(ops::conv2d<double>(nullptr, x, w5, 1, 2), ShapeError);
  auto w = random_tensor({8, 4, 3, 3}, rng);
  CHECK_THROWS_AS(ops::conv2d<double>(nullptr, x, w, 3, 1), ShapeError);
}

TEST_CASE("conv2d: non-finite input raises a numeric fault") {
  Rng rng(9);
  auto x = random_tensor({1, 2, 4, 4}, rng);
  auto w = random_tensor({2, 2, 3, 3}, rng);
  x->data[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ops::conv2d<double>(nullptr, x, w, 1, 1), NumericError);
  x->data[5] = 0.0;
  w->data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ops::conv2d<double>(nullptr, x, w, 1, 1), NumericError);
}

TEST_CASE("relu: definition and dead region") {
  auto x = make_tensor<double>({3}, {-1.0, 0.0, 2.0});
  auto y = ops::relu<double>(nullptr, x);
  CHECK(y->data == std::vector<double>{0.0, 0.0, 2.0});

  auto neg = full<double>({4}, -3.0, true);
  Tape<double> tape;
  auto out = ops::relu(&tape, neg);
  for (double v : out->data) CHECK(v == 0.0);
  auto loss = ops::sum_all(&tape, out);
  tape.backward(loss);
  for (double g : neg->grad) CHECK(g == 0.0);
}

TEST_CASE("relu output is nonnegative, sigmoid output strictly inside (0,1)") {
  Rng rng(13);
  auto x = random_tensor({256}, rng, 3.0);
  auto r = ops::relu<double>(nullptr, x);
  for (double v : r->data) CHECK(v >= 0.0);
  auto s = ops::sigmoid<double>(nullptr, x);
  for (double v : s->data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("sigmoid: symmetry point and saturation without overflow") {
  auto x = make_tensor<double>({3}, {0.0, 100.0, -500.0});
  auto y = ops::sigmoid<double>(nullptr, x);
  CHECK(y->data[0] == 0.5);
  CHECK(y->data[1] < 1.0);
  CHECK(y->data[1] > 1.0 - 1e-6);
  CHECK(y->data[2] > 0.0);
  CHECK(std::isfinite(y->data[2]));
}

TEST_CASE("global_avg_pool: shape, constant plane, pairwise-sum oracle") {
  Rng rng(17);
  auto big = random_tensor({1, 64, 32, 32}, rng);
  auto pooled = ops::global_avg_pool<double>(nullptr, big);
  REQUIRE(pooled->shape == Shape{1, 64, 1, 1});

  auto c = full<double>({2, 3, 4, 4}, 7.0);
  auto cp = ops::global_avg_pool<double>(nullptr, c);
  for (double v : cp->data) CHECK(v == 7.0);

  auto x = random_tensor({1, 1, 16, 16}, rng);
  auto y = ops::global_avg_pool<double>(nullptr, x);
  double ref = oracles::pairwise_sum(x->data.data(), x->data.size()) / 256.0;
  CHECK_THAT(y->data[0], Catch::Matchers::WithinAbs(ref, 1e-12));
}

TEST_CASE("avg_pool: final 8x8 pooling, identity at k=1, hand window") {
  Rng rng(19);
  auto x = random_tensor({1, 64, 8, 8}, rng);
  auto y = ops::avg_pool<double>(nullptr, x, 8);
  REQUIRE(y->shape == Shape{1, 64, 1, 1});

  auto idp = ops::avg_pool<double>(nullptr, x, 1);
  CHECK(idp->data == x->data);

  auto small = make_tensor<double>({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto m = ops::avg_pool<double>(nullptr, small, 2);
  CHECK(m->data[0] == 2.5);

  auto bad = random_tensor({1, 1, 6, 6}, rng);
  CHECK_THROWS_AS(ops::avg_pool<double>(nullptr, bad, 4), ShapeError);
}

TEST_CASE("fully_connected: identity map, classifier shape, matmul oracle") {
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto x = make_tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6});
  auto w = make_tensor<double>({3, 3}, eye);
  auto b = zeros<double>({3});
  auto y = ops::fully_connected<double>(nullptr, x, w, b);
  CHECK(y->data == x->data);

  Rng rng(23);
  auto feats = random_tensor({4, 64}, rng);
  auto cw = random_tensor({10, 64}, rng);
  auto cb = random_tensor({10}, rng);
  auto logits = ops::fully_connected<double>(nullptr, feats, cw, cb);
  REQUIRE(logits->shape == Shape{4, 10});

  auto rx = random_tensor({4, 7}, rng);
  auto rw = random_tensor({3, 7}, rng);
  auto rb = random_tensor({3}, rng);
  auto ry = ops::fully_connected<double>(nullptr, rx, rw, rb);
  auto ref = oracles::naive_affine(rx->data, 4, 7, rw->data, 3, rb->data);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK_THAT(ry->data[i], Catch::Matchers::WithinAbs(ref[i], 1e-12));

  auto wbad = random_tensor({3, 8}, rng);
  CHECK_THROWS_AS(ops::fully_connected<double>(nullptr, rx, wbad, rb), ShapeError);
}

TEST_CASE("batch_norm: train mode normalizes per channel") {
  Rng rng(29);
  auto x = random_tensor({4, 3, 5, 5}, rng, 2.5);
  auto gamma = ones<double>({3});
  auto beta = zeros<double>({3});
  auto rm = zeros<double>({3});
  auto rv = ones<double>({3});
  auto y = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, Mode::Train);
  const std::int64_t plane = 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < plane; ++i) {
        double v = y->data[static_cast<std::size_t>(((n * 3 + c) * plane) + i)];
        sum += v;
        sq += v * v;
      }
    double m = sum / (4 * plane);
    double var = sq / (4 * plane) - m * m;
    CHECK_THAT(m, Catch::Matchers::WithinAbs(0.0, 1e-5));
    CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-4));
  }
}

TEST_CASE("batch_norm: eval mode applies the affine running-stat transform") {
  auto x = make_tensor<double>({1, 2, 1, 2}, {1.0, -2.0, 0.5, 3.0});
  auto gamma = make_tensor<double>({2}, {2.0, -1.0});
  auto beta = make_tensor<double>({2}, {0.25, 1.0});
  auto rm = zeros<double>({2});
  auto rv = ones<double>({2});
  auto y = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, Mode::Eval);
  // With m=0, v=1 the transform collapses to gamma*x + beta up to eps.
  CHECK_THAT(y->data[0], Catch::Matchers::WithinAbs(2.0 * 1.0 + 0.25, 1e-4));
  CHECK_THAT(y->data[1], Catch::Matchers::WithinAbs(2.0 * -2.0 + 0.25, 1e-4));
  CHECK_THAT(y->data[2], Catch::Matchers::WithinAbs(-1.0 * 0.5 + 1.0, 1e-4));
  CHECK_THAT(y->data[3], Catch::Matchers::WithinAbs(-1.0 * 3.0 + 1.0, 1e-4));
}

TEST_CASE("batch_norm: running stats follow the EMA with unbiased variance") {
  auto x = make_tensor<double>({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  auto gamma = ones<double>({1});
  auto beta = zeros<double>({1});
  auto rm = zeros<double>({1});
  auto rv = ones<double>({1});
  ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, Mode::Train);
  // batch mean 2.5, biased var 1.25, unbiased var 1.25*4/3
  CHECK_THAT(rm->data[0], Catch::Matchers::WithinAbs(0.9 * 0.0 + 0.1 * 2.5, 1e-12));
  CHECK_THAT(rv->data[0],
             Catch::Matchers::WithinAbs(0.9 * 1.0 + 0.1 * (1.25 * 4.0 / 3.0), 1e-12));
}

TEST_CASE("batch_norm: single-element channels are rejected in train mode") {
  auto x = ones<double>({1, 3, 1, 1});
  auto gamma = ones<double>({3});
  auto beta = zeros<double>({3});
  auto rm = zeros<double>({3});
  auto rv = ones<double>({3});
  CHECK_THROWS_AS(
      ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, Mode::Train),
      ShapeError);
  // Eval mode has no such restriction.
  CHECK_NOTHROW(
      ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, Mode::Eval));
}

TEST_CASE("add: identity element and the bridge incompatibility case") {
  Rng rng(31);
  auto a = random_tensor({2, 4}, rng);
  auto z = zeros<double>({2, 4});
  auto y = ops::add<double>(nullptr, a, z);
  CHECK(y->data == a->data);

  auto x64 = random_tensor({1, 64, 32, 32}, rng);
  auto f64 = random_tensor({1, 64, 32, 32}, rng);
  CHECK_NOTHROW(ops::add<double>(nullptr, f64, x64));
  auto f128 = random_tensor({1, 128, 16, 16}, rng);
  CHECK_THROWS_AS(ops::add<double>(nullptr, f128, x64), ShapeError);
}

TEST_CASE("scale_channels: unit and constant gains") {
  Rng rng(37);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  auto s1 = ones<double>({2, 3, 1, 1});
  auto y1 = ops::scale_channels<double>(nullptr, x, s1);
  CHECK(y1->data == x->data);

  auto sh = full<double>({2, 3, 1, 1}, 0.5);
  auto yh = ops::scale_channels<double>(nullptr, x, sh);
  for (std::size_t i = 0; i < x->data.size(); ++i)
    CHECK(yh->data[i] == 0.5 * x->data[i]);

  auto sbad = ones<double>({2, 4, 1, 1});
  CHECK_THROWS_AS(ops::scale_channels<double>(nullptr, x, sbad), ShapeError);
}

TEST_CASE("softmax_cross_entropy: uniform logits give ln K") {
  auto logits = zeros<double>({3, 10});
  std::vector<int> labels{0, 4, 9};
  auto loss = ops::softmax_cross_entropy<double>(nullptr, logits, labels);
  REQUIRE(loss->size() == 1);
  CHECK_THAT(loss->data[0], Catch::Matchers::WithinAbs(std::log(10.0), 1e-9));
}

TEST_CASE("softmax_cross_entropy: huge margins stay finite") {
  auto logits = zeros<double>({1, 10});
  logits->data[3] = 1000.0;
  std::vector<int> labels{3};
  auto loss = ops::softmax_cross_entropy<double>(nullptr, logits, labels);
  CHECK(std::isfinite(loss->data[0]));
  CHECK(loss->data[0] < 1e-6);
  CHECK(loss->data[0] >= 0.0);
}

TEST_CASE("softmax_cross_entropy: out-of-range labels are rejected") {
  auto logits = zeros<double>({2, 10});
  CHECK_THROWS_AS(
      ops::softmax_cross_entropy<double>(nullptr, logits, std::vector<int>{0, 10}),
      ShapeError);
  CHECK_THROWS_AS(
      ops::softmax_cross_entropy<double>(nullptr, logits, std::vector<int>{-1, 0}),
      ShapeError);
  CHECK_THROWS_AS(
      ops::softmax_cross_entropy<double>(nullptr, logits, std::vector<int>{0}),
      ShapeError);  // label count != batch
}

TEST_CASE("primitives are bitwise deterministic across repeated runs") {
  Rng rng(41);
  auto x = random_tensor({2, 8, 6, 6}, rng);
  auto w = random_tensor({16, 8, 3, 3}, rng);
  auto a = ops::conv2d<double>(nullptr, x, w, 2, 1);
  auto b = ops::conv2d<double>(nullptr, x, w, 2, 1);
  CHECK(a->data == b->data);

  auto g = ops::global_avg_pool<double>(nullptr, x);
  auto g2 = ops::global_avg_pool<double>(nullptr, x);
  CHECK(g->data == g2->data);
}
