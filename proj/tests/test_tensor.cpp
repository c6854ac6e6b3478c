#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cantus/tensor.hpp"
#include "gradcheck.hpp"

using namespace cantus;
using gradcheck::check;

namespace {
constexpr double kTol = 1e-6;
}

TEST_CASE("softmax values", "[tensor]") {
  auto t = softmax(Tensor<double>::from_data({2}, {0.0, 0.0}));
  CHECK(t.at({0}) == Catch::Approx(0.5));
  CHECK(t.at({1}) == Catch::Approx(0.5));

  auto big = softmax(Tensor<double>::from_data({2}, {1000.0, 0.0}));
  CHECK(big.at({0}) == Catch::Approx(1.0));
  CHECK(big.at({1}) == Catch::Approx(0.0).margin(1e-12));
  CHECK(std::isfinite(big.at({0})));
}

TEST_CASE("softmax rows are normalized and nonnegative", "[tensor]") {
  std::mt19937_64 rng(11);
  auto x = Tensor<double>::randn({4, 7}, rng, 3.0);
  auto y = softmax(x);
  for (int r = 0; r < 4; ++r) {
    double sum = 0;
    for (int c = 0; c < 7; ++c) {
      CHECK(y.at({r, c}) >= 0.0);
      sum += y.at({r, c});
    }
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax handles -inf masking", "[tensor]") {
  double inf = std::numeric_limits<double>::infinity();
  auto y = softmax(Tensor<double>::from_data({1, 3}, {0.0, -inf, 0.0}));
  CHECK(y.at({0, 0}) == Catch::Approx(0.5));
  CHECK(y.at({0, 1}) == 0.0);
  CHECK(y.at({0, 2}) == Catch::Approx(0.5));
}

TEST_CASE("gradients: elementwise ops", "[tensor][grad]") {
  auto fixed_r = [](Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor<double>::randn(s, rng);
  };
  auto r234 = fixed_r({2, 3, 4}, 1);

  CHECK(check([&](const auto& in) { return weighted_sum(add(in[0], in[1]), r234); },
              {{2, 3, 4}, {2, 3, 4}}, 2)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return weighted_sum(sub(in[0], in[1]), r234); },
              {{2, 3, 4}, {2, 3, 4}}, 3)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return weighted_sum(mul(in[0], in[1]), r234); },
              {{2, 3, 4}, {2, 3, 4}}, 4)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return weighted_sum(scale(in[0], 2.5), r234); }, {{2, 3, 4}}, 5)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return weighted_sum(relu(in[0]), r234); }, {{2, 3, 4}}, 6)
            .max_rel_err < kTol);
}

TEST_CASE("gradients: broadcasting add/mul", "[tensor][grad]") {
  std::mt19937_64 rng(7);
  auto r = Tensor<double>::randn({2, 2, 3, 4}, rng);
  // bias-style suffix broadcast
  CHECK(check([&](const auto& in) { return weighted_sum(add(in[0], in[1]), r); },
              {{2, 2, 3, 4}, {4}}, 8)
            .max_rel_err < kTol);
  // mask-style (B,1,1,S) broadcast
  CHECK(check([&](const auto& in) { return weighted_sum(add(in[0], in[1]), r); },
              {{2, 2, 3, 4}, {2, 1, 1, 4}}, 9)
            .max_rel_err < kTol);
  // causal-style (L,S) broadcast
  CHECK(check([&](const auto& in) { return weighted_sum(mul(in[0], in[1]), r); },
              {{2, 2, 3, 4}, {3, 4}}, 10)
            .max_rel_err < kTol);
}

TEST_CASE("gradients: matmul variants", "[tensor][grad]") {
  std::mt19937_64 rng(20);
  auto r23 = Tensor<double>::randn({2, 3}, rng);
  auto r423 = Tensor<double>::randn({4, 2, 3}, rng);

  CHECK(check([&](const auto& in) { return weighted_sum(matmul(in[0], in[1]), r23); },
              {{2, 5}, {5, 3}}, 21)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return weighted_sum(matmul_nt(in[0], in[1]), r23); },
              {{2, 5}, {3, 5}}, 22)
            .max_rel_err < kTol);
  // batched x batched
  CHECK(check([&](const auto& in) { return weighted_sum(matmul(in[0], in[1]), r423); },
              {{4, 2, 5}, {4, 5, 3}}, 23)
            .max_rel_err < kTol);
  // batched x shared 2D
  CHECK(check([&](const auto& in) { return weighted_sum(matmul(in[0], in[1]), r423); },
              {{4, 2, 5}, {5, 3}}, 24)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return weighted_sum(matmul_nt(in[0], in[1]), r423); },
              {{4, 2, 5}, {4, 3, 5}}, 25)
            .max_rel_err < kTol);
}

TEST_CASE("matmul shape errors", "[tensor]") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
  auto c = Tensor<double>::zeros({2, 3, 4});
  auto d = Tensor<double>::zeros({3, 4, 5});
  CHECK_THROWS_AS(matmul(c, d), ShapeMismatch);
}

TEST_CASE("gradients: reshape/transpose/concat", "[tensor][grad]") {
  std::mt19937_64 rng(30);
  auto r = Tensor<double>::randn({2, 4, 3}, rng);
  CHECK(check([&](const auto& in) { return weighted_sum(transpose(in[0], 1, 2), r); },
              {{2, 3, 4}}, 31)
            .max_rel_err < kTol);
  auto r2 = Tensor<double>::randn({6, 4}, rng);
  CHECK(check([&](const auto& in) { return weighted_sum(reshape(in[0], {6, 4}), r2); },
              {{2, 3, 4}}, 32)
            .max_rel_err < kTol);
  auto r3 = Tensor<double>::randn({2, 5, 3}, rng);
  CHECK(check([&](const auto& in) { return weighted_sum(concat(in[0], in[1], 1), r3); },
              {{2, 2, 3}, {2, 3, 3}}, 33)
            .max_rel_err < kTol);
}

TEST_CASE("transpose moves data correctly", "[tensor]") {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = transpose(a, 0, 1);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.at({0, 0}) == 1);
  CHECK(t.at({0, 1}) == 4);
  CHECK(t.at({2, 1}) == 6);
}

TEST_CASE("gradients: softmax and layer_norm", "[tensor][grad]") {
  std::mt19937_64 rng(40);
  auto r = Tensor<double>::randn({3, 5}, rng);
  CHECK(check([&](const auto& in) { return weighted_sum(softmax(in[0]), r); }, {{3, 5}}, 41)
            .max_rel_err < 1e-4);  // per-op spec tolerance
  CHECK(check([&](const auto& in) { return weighted_sum(softmax(in[0]), r); }, {{3, 5}}, 42)
            .max_rel_err < kTol);  // and the tighter engine-wide bar
  CHECK(check([&](const auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2]), r); },
              {{3, 5}, {5}, {5}}, 43)
            .max_rel_err < kTol);
}

TEST_CASE("gradients: embedding and losses", "[tensor][grad]") {
  std::vector<int> ids{1, 4, 2, 4};
  std::mt19937_64 rng(50);
  auto r = Tensor<double>::randn({2, 2, 3}, rng);
  CHECK(check([&](const auto& in) { return weighted_sum(embedding(in[0], ids, {2, 2}), r); },
              {{6, 3}}, 51)
            .max_rel_err < kTol);

  std::vector<int> targets{2, 0, 1};
  std::vector<std::uint8_t> mask{1, 0, 1};
  CHECK(check([&](const auto& in) { return cross_entropy(in[0], targets, mask); }, {{3, 4}}, 52)
            .max_rel_err < kTol);
  CHECK(check([&](const auto& in) { return mean_all(in[0]); }, {{3, 4}}, 53).max_rel_err < kTol);
}

TEST_CASE("cross_entropy analytic values", "[tensor]") {
  // uniform logits: loss = ln V
  int v = 31;
  auto logits = Tensor<double>::zeros({4, v});
  std::vector<int> targets{0, 5, 7, 30};
  std::vector<std::uint8_t> mask{1, 1, 1, 1};
  CHECK(cross_entropy(logits, targets, mask).item() == Catch::Approx(std::log(double(v))));

  // perfect prediction drives loss to zero as margin grows
  auto sharp = Tensor<double>::zeros({1, 3});
  sharp.data()[1] = 200.0;
  CHECK(cross_entropy(sharp, {1}, {1}).item() == Catch::Approx(0.0).margin(1e-12));

  CHECK_THROWS_AS(cross_entropy(logits, targets, std::vector<std::uint8_t>{0, 0, 0, 0}), EmptyMask);
}

TEST_CASE("gradient accumulates when a tensor is used twice", "[tensor][grad]") {
  std::mt19937_64 rng(60);
  auto r = Tensor<double>::randn({2, 2}, rng);
  CHECK(check([&](const auto& in) { return weighted_sum(add(in[0], mul(in[0], in[0])), r); },
              {{2, 2}}, 61)
            .max_rel_err < kTol);
}

TEST_CASE("no-grad mode builds no graph", "[tensor]") {
  auto a = Tensor<double>::zeros({2, 2}, true);
  NoGradGuard ng;
  auto b = add(a, a);
  CHECK(!b.requires_grad());
}

TEST_CASE("dropout scales and masks", "[tensor]") {
  std::mt19937_64 rng(70);
  auto a = Tensor<double>::filled({1000}, 1.0);
  auto d = dropout(a, 0.25, rng);
  int zeros = 0;
  for (double v : d.data()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == Catch::Approx(1.0 / 0.75));
  }
  CHECK(zeros > 180);
  CHECK(zeros < 320);
  // rate 0 is the identity
  std::mt19937_64 rng2(71);
  auto same = dropout(a, 0.0, rng2);
  CHECK(same.node() == a.node());
}
