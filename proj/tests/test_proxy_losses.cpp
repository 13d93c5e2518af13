#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "naive_oracles.hpp"
#include "relprox/proxy_losses.hpp"
#include "test_support.hpp"

using namespace relprox;

namespace {

// Every relevant cosine similarity equals the margin: two classes with
// orthogonal unit text embeddings and all acoustic rows at cosine 0.1 to
// both. Each anchor then sits exactly at the margin for its positive and
// both negatives.
LabeledEmbeddingBatch batch_at_margin() {
  LabeledEmbeddingBatch b;
  b.acoustic = Matrix(4, 3);
  b.text = Matrix(4, 3);
  b.labels = {0, 0, 1, 1};
  const double z = std::sqrt(0.98);
  for (std::size_t i = 0; i < 4; ++i) {
    b.acoustic(i, 0) = 0.1;
    b.acoustic(i, 1) = 0.1;
    b.acoustic(i, 2) = z;
  }
  b.text(0, 0) = b.text(1, 0) = 1.0;  // class 0
  b.text(2, 1) = b.text(3, 1) = 1.0;  // class 1
  return b;
}

}  // namespace

TEST_CASE("margin-saturated batch gives the closed-form value") {
  // Positive term per anchor: ln(1 + e^0) / alpha = ln2 / 2 at alpha = 2.
  // Negative term per anchor: softplus(0) = ln2, independent of beta.
  const auto b = batch_at_margin();
  const LossOutput out = asyp_loss(b, AsyPParams{});
  CHECK(out.value == Catch::Approx(1.5 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("anchors without positives contribute only the negative term") {
  // Two singleton classes: both positive sets are empty; each anchor has one
  // negative at similarity exactly lambda, so the loss is softplus(0) = ln2.
  LabeledEmbeddingBatch b;
  b.acoustic = Matrix(2, 3);
  b.text = Matrix(2, 3);
  b.labels = {0, 1};
  const double z = std::sqrt(0.99);
  b.acoustic(0, 1) = 0.1;
  b.acoustic(0, 2) = z;
  b.acoustic(1, 0) = 0.1;
  b.acoustic(1, 2) = z;
  b.text(0, 0) = 1.0;
  b.text(1, 1) = 1.0;
  const LossOutput out = asyp_loss(b, AsyPParams{});
  CHECK(out.value == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("a single-class batch has no negatives and is rejected") {
  auto b = testsupport::random_batch(3, 4, 3, 1);
  CHECK_THROWS_AS(asyp_loss(b, AsyPParams{}), invalid_batch_error);
}

TEST_CASE("invalid scale parameters are rejected") {
  const auto b = testsupport::random_batch(4, 4, 3, 2);
  CHECK_THROWS_AS(asyp_loss(b, AsyPParams{-1.0, 50.0, 0.1}), invalid_input_error);
  CHECK_THROWS_AS(asyp_loss(b, AsyPParams{2.0, 0.0, 0.1}), invalid_input_error);
}

TEST_CASE("value matches the scalar per-anchor oracle") {
  const AsyPParams p{};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testsupport::random_batch(seed, 6, 4, 3);
    const double fast = asyp_loss(b, p).value;
    const double slow = naive::asyp_value(b, [&](int) {
      return naive::AnchorScales{p.alpha, p.beta, p.lambda};
    });
    CHECK(fast == Catch::Approx(slow).epsilon(1e-12));
  }
}

TEST_CASE("per-class table at the shared initialization reduces to fixed scales") {
  const auto b = testsupport::random_batch(9, 6, 4, 3);
  const auto table = AdaMSTable::initialized({100, 101, 102});
  const LossOutput fixed = asyp_loss(b, AsyPParams{});
  const LossOutput learned = adams_loss(b, table);
  CHECK(learned.value == Catch::Approx(fixed.value).epsilon(1e-15));
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t c = 0; c < b.dim(); ++c) {
      CHECK(learned.grad_acoustic(i, c) == Catch::Approx(fixed.grad_acoustic(i, c)).margin(1e-15));
      CHECK(learned.grad_text(i, c) == Catch::Approx(fixed.grad_text(i, c)).margin(1e-15));
    }
  }
  REQUIRE(learned.grad_params.count(kGradLogAlpha) == 1);
  REQUIRE(learned.grad_params.at(kGradLambda).size() == 3);
}

TEST_CASE("per-class scales actually differentiate classes") {
  const auto b = testsupport::random_batch(10, 6, 4, 3);
  auto table = AdaMSTable::initialized({100, 101, 102});
  const double base = adams_loss(b, table).value;
  table.lambda[table.row(101)] += 0.25;
  const double shifted = adams_loss(b, table).value;
  CHECK(shifted != Catch::Approx(base).margin(1e-9));
  // The oracle with the same per-class lookup agrees.
  const double slow = naive::asyp_value(b, [&](int cls) {
    const auto r = table.row(cls);
    return naive::AnchorScales{table.alpha(r), table.beta(r), table.lambda[r]};
  });
  CHECK(shifted == Catch::Approx(slow).epsilon(1e-12));
}

TEST_CASE("rows for classes absent from the batch are inert") {
  const auto b = testsupport::random_batch(11, 6, 4, 3);
  auto table = AdaMSTable::initialized({100, 101, 102, 999});
  const double base = adams_loss(b, table).value;
  table.lambda[table.row(999)] *= 2.0;
  table.log_alpha[table.row(999)] += 1.0;
  CHECK(adams_loss(b, table).value == base);
  // And the unused row receives zero parameter gradient.
  const LossOutput out = adams_loss(b, table);
  CHECK(out.grad_params.at(kGradLambda)[table.row(999)] == 0.0);
  CHECK(out.grad_params.at(kGradLogAlpha)[table.row(999)] == 0.0);
}

TEST_CASE("a batch class missing from the table is a configuration error") {
  const auto b = testsupport::random_batch(12, 6, 4, 3);
  const auto table = AdaMSTable::initialized({100, 101});  // class 102 missing
  CHECK_THROWS_AS(adams_loss(b, table), config_error);
}

TEST_CASE("value-only evaluation skips gradient buffers") {
  const auto b = testsupport::random_batch(13, 6, 4, 3);
  LossOptions opt;
  opt.grads = false;
  const LossOutput out = asyp_loss(b, AsyPParams{}, opt);
  CHECK(out.grad_acoustic.empty());
  CHECK(out.grad_text.empty());
  CHECK(out.value == Catch::Approx(asyp_loss(b, AsyPParams{}).value).epsilon(1e-15));
}
