#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "naive_oracles.hpp"
#include "relprox/auxiliary_losses.hpp"
#include "test_support.hpp"

using namespace relprox;

TEST_CASE("prototype-centroid distance on the 3-4-5 fixture") {
  LabeledEmbeddingBatch b;
  b.acoustic = Matrix(2, 2);
  b.text = Matrix(2, 2);  // both text rows at the origin
  b.labels = {0, 0};
  b.acoustic(0, 0) = 3.0;
  b.acoustic(1, 0) = 3.0;
  b.acoustic(1, 1) = 8.0;
  // Acoustic centroid (3, 4); distance to the prototype (0, 0) is 5.
  CHECK(pc_loss(b).value == Catch::Approx(5.0).margin(1e-14));
}

TEST_CASE("matched prototypes give zero and zero gradient") {
  auto b = testsupport::random_batch(1, 6, 4, 3);
  // Place every acoustic row on its class text embedding: centroids match.
  b.acoustic = b.text;
  const LossOutput out = pc_loss(b);
  CHECK(out.value == 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t c = 0; c < b.dim(); ++c) {
      CHECK(out.grad_acoustic(i, c) == 0.0);
    }
  }
}

TEST_CASE("prototype-centroid value matches the per-class oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testsupport::random_batch(seed, 7, 4, 3);
    CHECK(pc_loss(b).value == Catch::Approx(naive::pc_value(b)).epsilon(1e-12));
  }
}

TEST_CASE("pc gradient moves centroids toward prototypes") {
  auto b = testsupport::random_batch(2, 6, 4, 3);
  const LossOutput out = pc_loss(b);
  const double before = out.value;
  const double eta = 0.1;
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t c = 0; c < b.dim(); ++c) {
      b.acoustic(i, c) -= eta * out.grad_acoustic(i, c);
    }
  }
  CHECK(pc_loss(b).value < before);
}

TEST_CASE("perfectly clustered orthogonal classes have zero triplet loss") {
  Matrix a(4, 2);
  a(0, 0) = a(1, 0) = 1.0;  // class 0 along x
  a(2, 1) = a(3, 1) = 1.0;  // class 1 along y
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(triplet_loss(a, labels).value == 0.0);
}

TEST_CASE("equal hardest similarities leave exactly the margin") {
  // All rows identical: every similarity is 1, the hinge equals the margin.
  Matrix a(4, 3, 1.0);
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(triplet_loss(a, labels).value == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("mining ties resolve to the lowest index") {
  Matrix a(5, 2, 0.0);
  for (std::size_t i = 0; i < 5; ++i) a(i, 0) = 1.0;  // all identical
  const std::vector<int> labels{0, 0, 0, 1, 1};
  const TripletMining m = mine_triplets(a, labels);
  CHECK(m.picks[0] == std::array<std::size_t, 2>{1, 3});
  CHECK(m.picks[1] == std::array<std::size_t, 2>{0, 3});
  CHECK(m.picks[3] == std::array<std::size_t, 2>{4, 0});
}

TEST_CASE("triplet value matches the exhaustive scan oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testsupport::random_batch(seed, 8, 4, 4);
    const double fast = triplet_loss(b.acoustic, b.labels).value;
    const double slow = naive::triplet_value(b.acoustic, b.labels, 0.2);
    CHECK(fast == Catch::Approx(slow).epsilon(1e-12));
  }
}

TEST_CASE("singleton classes cannot be mined") {
  Matrix a(3, 2, 1.0);
  CHECK_THROWS_AS(triplet_loss(a, std::vector<int>{0, 0, 1}), invalid_batch_error);
  CHECK_THROWS_AS(triplet_loss(a, std::vector<int>{0, 0, 0}), invalid_batch_error);
}

TEST_CASE("frozen mining pins the evaluation to the given picks") {
  const auto b = testsupport::random_batch(6, 6, 4, 3);
  const TripletMining m = mine_triplets(b.acoustic, b.labels);
  LossOptions opt;
  opt.frozen_triplet_mining = &m.picks;
  CHECK(triplet_loss(b.acoustic, b.labels, 0.2, opt).value ==
        Catch::Approx(triplet_loss(b.acoustic, b.labels).value).epsilon(1e-15));
}

TEST_CASE("uniform logits cost the log of the class count") {
  std::vector<Matrix> logits{Matrix(3, 4, 0.7)};  // any constant row is uniform
  std::vector<std::vector<int>> labels{{1, 2, 4}};
  const FrameLossOutput out = monophone_ce_loss(logits, labels);
  CHECK(out.value == Catch::Approx(std::log(4.0)).margin(1e-14));
  // Gradient per frame: softmax minus one-hot, averaged over frames.
  CHECK(out.grad_logits[0](0, 0) == Catch::Approx((0.25 - 1.0) / 3.0).margin(1e-14));
  CHECK(out.grad_logits[0](0, 1) == Catch::Approx(0.25 / 3.0).margin(1e-14));
}

TEST_CASE("a saturated correct class costs nothing") {
  Matrix l(1, 5, 0.0);
  l(0, 2) = 50.0;
  std::vector<Matrix> logits{l};
  std::vector<std::vector<int>> labels{{3}};
  CHECK(monophone_ce_loss(logits, labels).value < 1e-20);
}

TEST_CASE("frame losses accumulate across utterances of different lengths") {
  std::mt19937_64 eng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Matrix> logits;
  std::vector<std::vector<int>> labels;
  for (std::size_t t_len : {3UL, 5UL, 2UL}) {
    Matrix l(t_len, 5);
    for (double& v : l.storage()) v = g(eng);
    logits.push_back(std::move(l));
    std::vector<int> lab(t_len);
    for (int& x : lab) x = 1 + static_cast<int>(eng() % 5);
    labels.push_back(std::move(lab));
  }
  const double fast = monophone_ce_loss(logits, labels).value;
  CHECK(fast == Catch::Approx(naive::mono_value(logits, labels)).epsilon(1e-12));
}

TEST_CASE("out-of-range frame labels are rejected") {
  std::vector<Matrix> logits{Matrix(2, 4, 0.0)};
  CHECK_THROWS_AS(monophone_ce_loss(logits, {{1, 5}}), invalid_input_error);
  CHECK_THROWS_AS(monophone_ce_loss(logits, {{0, 2}}), invalid_input_error);
  CHECK_THROWS_AS(monophone_ce_loss(logits, {{1}}), invalid_input_error);  // length mismatch
}
