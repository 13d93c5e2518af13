#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "relprox/metrics.hpp"
#include "relprox/proxy_losses.hpp"
#include "relprox/relational_losses.hpp"
#include "test_support.hpp"

using namespace relprox;

namespace {

// Random rotation via Gram-Schmidt on a Gaussian matrix.
Matrix random_orthogonal(std::size_t d, std::mt19937_64& eng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix q(d, d);
  for (double& v : q.storage()) v = g(eng);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t p = 0; p < r; ++p) {
      const double proj = dot(q.row(r), q.row(p));
      axpy(-proj, q.row(p), q.row(r));
    }
    const double n = norm(q.row(r));
    REQUIRE(n > 1e-8);
    scale(q.row(r), 1.0 / n);
  }
  return q;
}

void apply_rigid(Matrix& rows, const Matrix& r, const std::vector<double>& offset, double c) {
  const std::size_t d = rows.cols();
  std::vector<double> tmp(d);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    for (std::size_t a = 0; a < d; ++a) tmp[a] = c * dot(r.row(a), rows.row(i)) + offset[a];
    std::copy(tmp.begin(), tmp.end(), rows.row(i).begin());
  }
}

ScoredPairSet random_pairs(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 eng(seed * 77 + 13);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ScoredPairSet ps;
  ps.scores.resize(n);
  ps.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ps.scores[i] = u(eng);
    ps.labels[i] = static_cast<std::uint8_t>(eng() % 3 == 0 ? 1 : 0);
  }
  ps.labels[0] = 1;  // guarantee both kinds
  ps.labels[1] = 0;
  return ps;
}

}  // namespace

TEST_CASE("distance loss is invariant to positive scaling of either modality") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto b = testsupport::random_batch(seed, 6, 4, 3);
    const auto pairs = enumerate_tuples(2, b.size());
    const double base = rpl_d_loss(b, pairs).value;
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    const double ca = u(eng), ct = u(eng);
    for (double& v : b.acoustic.storage()) v *= ca;
    CHECK(std::fabs(rpl_d_loss(b, pairs).value - base) < 1e-10);
    for (double& v : b.text.storage()) v *= ct;
    CHECK(std::fabs(rpl_d_loss(b, pairs).value - base) < 1e-10);
  }
}

TEST_CASE("angle loss is invariant to scaled rigid motion of either modality") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto b = testsupport::random_batch(seed, 6, 4, 3);
    const std::size_t d = b.dim();
    const auto trips = enumerate_tuples(3, b.size());
    const double base = rpl_a_loss(b, trips).value;

    std::mt19937_64 eng(seed ^ 0x5a5a5aULL);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    const Matrix ra = random_orthogonal(d, eng);
    std::vector<double> offset_a(d);
    for (double& v : offset_a) v = g(eng);
    apply_rigid(b.acoustic, ra, offset_a, u(eng));
    CHECK(std::fabs(rpl_a_loss(b, trips).value - base) < 1e-9);

    const Matrix rt = random_orthogonal(d, eng);
    std::vector<double> offset_t(d);
    for (double& v : offset_t) v = g(eng);
    apply_rigid(b.text, rt, offset_t, u(eng));
    CHECK(std::fabs(rpl_a_loss(b, trips).value - base) < 1e-9);
  }
}

TEST_CASE("relational losses are exactly zero on coinciding structures") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto b = testsupport::random_batch(seed, 5 + seed % 3, 3 + seed % 3, 2 + seed % 2);
    b.acoustic = b.text;
    CHECK(rpl_d_loss(b, enumerate_tuples(2, b.size())).value == 0.0);
    CHECK(rpl_a_loss(b, enumerate_tuples(3, b.size())).value == 0.0);
    CHECK(rpl_p_loss(b).value == 0.0);
  }
}

TEST_CASE("ranking metrics see only the score order") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ScoredPairSet ps = random_pairs(seed, 40 + seed);
    const double eer = compute_eer(ps).eer;
    const double ap = compute_ap(ps);

    ScoredPairSet warped = ps;
    for (double& s : warped.scores) s = std::exp(0.5 * s) + 3.0 * s;  // strictly increasing
    CHECK(std::fabs(compute_eer(warped).eer - eer) < 1e-12);
    CHECK(std::fabs(compute_ap(warped) - ap) < 1e-12);
  }
}

TEST_CASE("equal error rate is symmetric under label swap with negated scores") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ScoredPairSet ps = random_pairs(seed + 500, 37);
    ScoredPairSet flipped = ps;
    for (double& s : flipped.scores) s = -s;
    for (auto& l : flipped.labels) l = l ? 0 : 1;
    CHECK(std::fabs(compute_eer(flipped).eer - compute_eer(ps).eer) < 1e-12);
  }
}

TEST_CASE("pessimistic tie handling lower-bounds any tie order") {
  std::mt19937_64 eng(2024);
  std::uniform_real_distribution<double> noise(0.0, 1e-9);
  for (int fixture = 0; fixture < 5; ++fixture) {
    ScoredPairSet ps;
    std::mt19937_64 mk(fixture + 10);
    for (int i = 0; i < 60; ++i) {
      ps.scores.push_back(0.1 * static_cast<double>(mk() % 4));  // heavy ties
      ps.labels.push_back(static_cast<std::uint8_t>(mk() % 2));
    }
    ps.labels[0] = 1;
    ps.labels[1] = 0;
    const double pessimistic = compute_ap(ps);
    for (int trial = 0; trial < 100; ++trial) {
      ScoredPairSet jittered = ps;
      // Infinitesimal positive noise randomizes the order within each tied
      // group without crossing distinct score levels.
      for (double& s : jittered.scores) s += noise(eng);
      CHECK(compute_ap(jittered) >= pessimistic - 1e-12);
    }
  }
}

TEST_CASE("raising a positive-pair similarity never raises the proxy loss") {
  // Three rows: one class with two members, one singleton. Acoustic row 1 is
  // rotated in the plane that leaves its similarity to the foreign text
  // embedding unchanged while its similarity to its own class text embedding
  // strictly rises; nothing else in the batch moves.
  LabeledEmbeddingBatch b;
  b.acoustic = Matrix(3, 3);
  b.text = Matrix(3, 3);
  b.labels = {0, 0, 1};
  b.text(0, 0) = b.text(1, 0) = 1.0;  // class-0 prototype along x
  b.text(2, 2) = 1.0;                 // class-1 prototype along z
  b.acoustic(0, 0) = 0.4;
  b.acoustic(0, 1) = 0.8;
  b.acoustic(0, 2) = 0.2;
  b.acoustic(2, 0) = 0.9;
  b.acoustic(2, 1) = -0.3;
  b.acoustic(2, 2) = 0.1;

  const double r = 0.8, z0 = 0.5;
  double prev = std::numeric_limits<double>::infinity();
  double prev_sim = -2.0;
  for (double phi = 1.4; phi >= 0.05; phi -= 0.15) {
    b.acoustic(1, 0) = r * std::cos(phi);
    b.acoustic(1, 1) = r * std::sin(phi);
    b.acoustic(1, 2) = z0;
    const double sim = cosine_similarity(b.text.row(0), b.acoustic.row(1));
    CHECK(sim > prev_sim);  // the controlled similarity strictly rises
    prev_sim = sim;
    const double value = asyp_loss(b, AsyPParams{}).value;
    CHECK(value <= prev + 1e-15);
    prev = value;
  }
}

TEST_CASE("raising a negative-pair similarity never lowers the proxy loss") {
  // Two singleton classes: each anchor's only term is its negative. Sweeping
  // one acoustic row toward the foreign text embedding strictly raises that
  // single similarity.
  LabeledEmbeddingBatch b;
  b.acoustic = Matrix(2, 3);
  b.text = Matrix(2, 3);
  b.labels = {0, 1};
  b.text(0, 0) = 1.0;
  b.text(1, 1) = 1.0;
  b.acoustic(1, 0) = 0.3;
  b.acoustic(1, 2) = 0.9;

  double prev = -std::numeric_limits<double>::infinity();
  double prev_sim = -2.0;
  for (double y = -0.5; y <= 0.5; y += 0.1) {
    b.acoustic(0, 0) = 0.7;
    b.acoustic(0, 1) = y;
    b.acoustic(0, 2) = 0.4;
    const double sim = cosine_similarity(b.acoustic.row(0), b.text.row(1));
    CHECK(sim > prev_sim);
    prev_sim = sim;
    const double value = asyp_loss(b, AsyPParams{}).value;
    CHECK(value >= prev - 1e-15);
    prev = value;
  }
}
