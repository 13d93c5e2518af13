#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "naive_oracles.hpp"
#include "relprox/auxiliary_losses.hpp"
#include "relprox/combined_loss.hpp"
#include "relprox/proxy_losses.hpp"
#include "relprox/relational_losses.hpp"
#include "test_support.hpp"

using namespace relprox;

namespace {

struct SizedBatch {
  LabeledEmbeddingBatch batch;
  std::size_t n, d, k;
};

SizedBatch sized_random_batch(std::uint64_t seed) {
  std::mt19937_64 eng(seed * 0x2545f4914f6cdd1dULL + 1);
  const std::size_t n = 4 + eng() % 5;  // 4..8
  const std::size_t d = 2 + eng() % 5;  // 2..6
  const std::size_t k = 2 + eng() % 2;  // 2..3
  return {testsupport::random_batch(seed, n, d, k), n, d, k};
}

}  // namespace

TEST_CASE("every loss value matches its scalar oracle on 100 seeded batches") {
  const AsyPParams fixed{};
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto [b, n, d, k] = sized_random_batch(seed);
    CAPTURE(seed, n, d, k);

    CHECK(asyp_loss(b, fixed).value ==
          Catch::Approx(naive::asyp_value(
                            b, [&](int) { return naive::AnchorScales{2.0, 50.0, 0.1}; }))
              .epsilon(1e-12));

    // Jittered per-class scales.
    std::vector<int> ids;
    for (int c : b.labels) {
      if (std::find(ids.begin(), ids.end(), c) == ids.end()) ids.push_back(c);
    }
    auto table = AdaMSTable::initialized(ids);
    std::mt19937_64 jitter(seed ^ 0xabcdefULL);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (std::size_t r = 0; r < table.size(); ++r) {
      table.log_alpha[r] += u(jitter);
      table.log_beta[r] += u(jitter);
      table.lambda[r] += u(jitter);
    }
    CHECK(adams_loss(b, table).value ==
          Catch::Approx(naive::asyp_value(b,
                                          [&](int cls) {
                                            const auto r = table.row(cls);
                                            return naive::AnchorScales{table.alpha(r),
                                                                       table.beta(r),
                                                                       table.lambda[r]};
                                          }))
              .epsilon(1e-12));

    const auto pairs = enumerate_tuples(2, n);
    const auto trips = enumerate_tuples(3, n);
    CHECK(rpl_d_loss(b, pairs).value == Catch::Approx(naive::rpl_d_value(b)).epsilon(1e-12));
    CHECK(rpl_a_loss(b, trips).value == Catch::Approx(naive::rpl_a_value(b)).epsilon(1e-12));
    CHECK(rpl_p_loss(b).value == Catch::Approx(naive::rpl_p_value(b)).epsilon(1e-12));
    CHECK(pc_loss(b).value == Catch::Approx(naive::pc_value(b)).epsilon(1e-12));

    // Triplet mining needs >= 2 members per class; round-robin labels give
    // that whenever n >= 2k.
    if (n >= 2 * k) {
      CHECK(triplet_loss(b.acoustic, b.labels).value ==
            Catch::Approx(naive::triplet_value(b.acoustic, b.labels, 0.2)).epsilon(1e-12));
    }

    // Frame-level cross entropy on seeded logits.
    std::mt19937_64 eng(seed + 999);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Matrix> logits;
    std::vector<std::vector<int>> labels;
    const std::size_t p_count = 5;
    for (std::size_t uidx = 0; uidx < 2; ++uidx) {
      const std::size_t t_len = 3 + eng() % 3;
      Matrix l(t_len, p_count);
      for (double& v : l.storage()) v = g(eng);
      logits.push_back(std::move(l));
      std::vector<int> lab(t_len);
      for (int& x : lab) x = 1 + static_cast<int>(eng() % p_count);
      labels.push_back(std::move(lab));
    }
    CHECK(monophone_ce_loss(logits, labels).value ==
          Catch::Approx(naive::mono_value(logits, labels)).epsilon(1e-12));
  }
}

TEST_CASE("the combined objective is the weighted sum of its parts") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto b = testsupport::random_batch(seed, 6, 4, 3);

    // Frame data for the mono term.
    std::mt19937_64 eng(seed + 4242);
    std::normal_distribution<double> g(0.0, 1.0);
    FrameBatch frames;
    for (std::size_t uidx = 0; uidx < b.size(); ++uidx) {
      const std::size_t t_len = 2 + eng() % 3;
      Matrix l(t_len, 5);
      for (double& v : l.storage()) v = g(eng);
      frames.logits.push_back(std::move(l));
      std::vector<int> lab(t_len);
      for (int& x : lab) x = 1 + static_cast<int>(eng() % 5);
      frames.labels.push_back(std::move(lab));
    }

    CombinedLossConfig cfg;
    cfg.weights = LossWeights{1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    cfg.p2p_variant = P2PVariant::AsypFixed;
    const CombinedLossOutput out = combined_loss(b, &frames, cfg, nullptr);

    const auto pairs = enumerate_tuples(2, b.size());
    const auto trips = enumerate_tuples(3, b.size());
    const double sum = asyp_loss(b, cfg.asyp).value + rpl_d_loss(b, pairs).value +
                       rpl_a_loss(b, trips).value + rpl_p_loss(b).value + pc_loss(b).value +
                       monophone_ce_loss(frames.logits, frames.labels).value +
                       triplet_loss(b.acoustic, b.labels).value;
    CHECK(out.value == Catch::Approx(sum).epsilon(1e-12));

    // Per-term values are reported raw.
    CHECK(out.term_values.at("p2p") == Catch::Approx(asyp_loss(b, cfg.asyp).value));
    CHECK(out.term_values.at("rpl_d") == Catch::Approx(rpl_d_loss(b, pairs).value));
  }
}

TEST_CASE("a single active term reduces to that loss alone") {
  const auto b = testsupport::random_batch(3, 6, 4, 3);
  CombinedLossConfig cfg;
  cfg.weights.p2p = 1.0;
  cfg.p2p_variant = P2PVariant::AsypFixed;
  const CombinedLossOutput out = combined_loss(b, nullptr, cfg, nullptr);
  const LossOutput solo = asyp_loss(b, cfg.asyp);
  CHECK(out.value == Catch::Approx(solo.value).epsilon(1e-15));
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t c = 0; c < b.dim(); ++c) {
      CHECK(out.grad_acoustic(i, c) == Catch::Approx(solo.grad_acoustic(i, c)).margin(1e-15));
    }
  }
  // Inactive terms still report a (zero) value for logging.
  CHECK(out.term_values.at("rpl_d") == 0.0);
  CHECK(out.term_values.at("mono") == 0.0);
}

TEST_CASE("weights scale their terms linearly") {
  const auto b = testsupport::random_batch(5, 6, 4, 3);
  CombinedLossConfig cfg;
  cfg.weights.rpl_d = 1.0;
  cfg.weights.rpl_p = 1.0;
  const double base = combined_loss(b, nullptr, cfg, nullptr).value;
  cfg.weights.rpl_d = 2.5;
  const double scaled = combined_loss(b, nullptr, cfg, nullptr).value;
  const auto pairs = enumerate_tuples(2, b.size());
  CHECK(scaled - base == Catch::Approx(1.5 * rpl_d_loss(b, pairs).value).epsilon(1e-10));
}

TEST_CASE("configuration errors are caught before evaluation") {
  const auto b = testsupport::random_batch(6, 6, 4, 3);
  CombinedLossConfig cfg;  // all weights zero
  CHECK_THROWS_AS(combined_loss(b, nullptr, cfg, nullptr), config_error);
  cfg.weights.mono = 1.0;
  CHECK_THROWS_AS(combined_loss(b, nullptr, cfg, nullptr), config_error);  // no frames
  cfg.weights = LossWeights{};
  cfg.weights.p2p = 1.0;
  cfg.p2p_variant = P2PVariant::AdamsLearnable;
  CHECK_THROWS_AS(combined_loss(b, nullptr, cfg, nullptr), config_error);  // no table
}
