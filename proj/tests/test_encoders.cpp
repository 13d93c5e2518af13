#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "relprox/encoders.hpp"
#include "relprox/synth.hpp"
#include "test_support.hpp"

using namespace relprox;

namespace {

AcousticEncoderConfig tiny_acoustic() {
  AcousticEncoderConfig c;
  c.frame_dim = 3;
  c.hidden_dim = 4;
  c.hidden_layers = 2;
  c.embedding_dim = 3;
  c.phone_count = 2;
  return c;
}

TextEncoderConfig tiny_text() {
  TextEncoderConfig c;
  c.input_dim = 3;
  c.hidden_dim = 4;
  c.hidden_layers = 1;
  c.embedding_dim = 3;
  return c;
}

Matrix random_frames(std::uint64_t seed, std::size_t t_len, std::size_t d) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(t_len, d);
  for (double& v : m.storage()) v = n(eng);
  return m;
}

}  // namespace

TEST_CASE("encoders are pure and seed-deterministic") {
  const auto frames = random_frames(5, 6, 3);
  ToyAcousticEncoder a1(tiny_acoustic(), 42);
  ToyAcousticEncoder a2(tiny_acoustic(), 42);
  ToyAcousticEncoder a3(tiny_acoustic(), 43);
  CHECK(a1.params().flatten_values() == a2.params().flatten_values());
  CHECK(a1.params().flatten_values() != a3.params().flatten_values());

  std::vector<double> e1, e2;
  Matrix l1, l2;
  a1.encode(frames, e1, l1);
  a1.encode(frames, e2, l2);
  CHECK(e1 == e2);
  CHECK(l1.storage() == l2.storage());

  std::unordered_map<int, std::vector<double>> feats{{7, {0.2, 0.3, 0.5}}};
  ToyTextEncoder t1(tiny_text(), 42, feats);
  ToyTextEncoder t2(tiny_text(), 42, feats);
  CHECK(t1.params().flatten_values() == t2.params().flatten_values());
  CHECK(t1.encode(7) == t2.encode(7));
  CHECK(t1.encode(7) == t1.encode(7));
  // Acoustic and text streams are separated even at equal seeds.
  CHECK(a1.params().flatten_values()[0] != t1.params().flatten_values()[0]);
}

TEST_CASE("encoders reject malformed inputs") {
  ToyAcousticEncoder enc(tiny_acoustic(), 1);
  std::vector<double> emb;
  Matrix logits;
  CHECK_THROWS_AS(enc.encode(Matrix(4, 5), emb, logits), invalid_input_error);
  CHECK_THROWS_AS(enc.encode(Matrix(0, 3), emb, logits), invalid_input_error);

  std::unordered_map<int, std::vector<double>> feats{{7, {0.2, 0.3, 0.5}}};
  ToyTextEncoder text(tiny_text(), 1, feats);
  CHECK_THROWS_AS(text.encode(8), invalid_input_error);
  CHECK(text.knows(7));
  CHECK_FALSE(text.knows(8));

  std::unordered_map<int, std::vector<double>> bad{{7, {0.2, 0.8}}};
  CHECK_THROWS_AS(ToyTextEncoder(tiny_text(), 1, bad), invalid_input_error);

  AcousticEncoderConfig zero_layers = tiny_acoustic();
  zero_layers.hidden_layers = 0;
  CHECK_THROWS_AS(ToyAcousticEncoder(zero_layers, 1), config_error);
}

TEST_CASE("pooled embedding is frame-order invariant, logits follow frames") {
  const auto frames = random_frames(9, 7, 3);
  const std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
  Matrix shuffled(frames.rows(), frames.cols());
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    std::copy(frames.row(perm[t]).begin(), frames.row(perm[t]).end(), shuffled.row(t).begin());
  }
  ToyAcousticEncoder enc(tiny_acoustic(), 11);
  std::vector<double> e_orig, e_perm;
  Matrix l_orig, l_perm;
  enc.encode(frames, e_orig, l_orig);
  enc.encode(shuffled, e_perm, l_perm);
  for (std::size_t i = 0; i < e_orig.size(); ++i) {
    CHECK(e_perm[i] == Catch::Approx(e_orig[i]).margin(1e-12));
  }
  // Per-frame logits permute exactly with their frames.
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    for (std::size_t p = 0; p < l_orig.cols(); ++p) {
      CHECK(l_perm(t, p) == l_orig(perm[t], p));
    }
  }
}

TEST_CASE("zeroed parameters produce zero outputs") {
  ToyAcousticEncoder enc(tiny_acoustic(), 3);
  std::vector<double> zeros(enc.params().total_size(), 0.0);
  enc.params().set_values(zeros);
  std::vector<double> emb;
  Matrix logits;
  enc.encode(random_frames(1, 4, 3), emb, logits);
  for (double v : emb) CHECK(v == 0.0);
  for (double v : logits.storage()) CHECK(v == 0.0);
}

TEST_CASE("corpus feature table maps each class to its phone histogram") {
  SyntheticCorpusSpec spec;
  spec.num_classes = 6;
  spec.held_out_classes = 2;
  spec.phone_inventory = 5;
  spec.phones_min = 2;
  spec.phones_max = 4;
  spec.frames_min = 3;
  spec.frames_max = 5;
  spec.latent_dim = 2;
  spec.frame_dim = 4;
  spec.utterances_per_class = 2;
  spec.seed = 5;
  const auto corpus = generate_corpus(spec);
  const auto feats = corpus_class_features(corpus);
  REQUIRE(feats.size() == 6);
  for (const auto& c : corpus.classes) {
    const auto expected = phone_histogram(c.phones, spec.phone_inventory);
    REQUIRE(feats.count(c.id) == 1);
    CHECK(feats.at(c.id) == expected);
    // Histogram sums to one.
    const double s = std::accumulate(expected.begin(), expected.end(), 0.0);
    CHECK(s == Catch::Approx(1.0).margin(1e-12));
  }
  // Held-out classes still have feature rows (their textual form is known).
  for (int id : corpus.class_ids_of_split(Split::Test)) CHECK(feats.count(id) == 1);
}

TEST_CASE("acoustic backward matches finite differences") {
  ToyAcousticEncoder enc(tiny_acoustic(), 21);
  const auto frames = random_frames(13, 5, 3);
  std::mt19937_64 eng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> d_emb(3);
  for (double& v : d_emb) v = u(eng);
  Matrix d_logits(5, 2);
  for (double& v : d_logits.storage()) v = u(eng);

  // Scalar objective: <d_emb, embedding> + <d_logits, logits>.
  auto objective = [&](const std::vector<double>& flat) {
    enc.params().set_values(flat);
    std::vector<double> emb;
    Matrix logits;
    enc.encode(frames, emb, logits);
    double s = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) s += d_emb[i] * emb[i];
    for (std::size_t i = 0; i < logits.size(); ++i) s += d_logits.storage()[i] * logits.storage()[i];
    return s;
  };

  const auto base = enc.params().flatten_values();
  enc.params().set_values(base);
  std::vector<double> emb;
  Matrix logits;
  const auto cache = enc.encode(frames, emb, logits);
  enc.params().zero_grads();
  enc.backward(cache, d_emb, &d_logits);
  const auto analytic = enc.params().flatten_grads();

  const double h = 1e-6;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
    CHECK(analytic[i] == Catch::Approx(fd).margin(1e-6));
  }

  // Omitting the logit head drops its gradient contribution entirely.
  enc.params().set_values(base);
  enc.params().zero_grads();
  enc.backward(cache, d_emb, nullptr);
  const auto no_mono = enc.params().flatten_grads();
  bool mono_grads_zero = true;
  std::size_t off = 0;
  for (const auto& b : enc.params().blocks()) {
    if (b.name == "mono.W" || b.name == "mono.b") {
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (no_mono[off + i] != 0.0) mono_grads_zero = false;
      }
    }
    off += b.size();
  }
  CHECK(mono_grads_zero);
}

TEST_CASE("text backward matches finite differences") {
  std::unordered_map<int, std::vector<double>> feats{{0, {0.5, 0.25, 0.25}},
                                                     {1, {0.1, 0.6, 0.3}}};
  ToyTextEncoder enc(tiny_text(), 33, feats);
  std::vector<double> d_emb = {0.7, -0.4, 0.2};

  auto objective = [&](const std::vector<double>& flat, int id) {
    enc.params().set_values(flat);
    const auto emb = enc.encode(id);
    double s = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) s += d_emb[i] * emb[i];
    return s;
  };

  const auto base = enc.params().flatten_values();
  ToyTextEncoder::Cache cache;
  enc.params().set_values(base);
  enc.encode(1, &cache);
  enc.params().zero_grads();
  enc.backward(cache, d_emb);
  const auto analytic = enc.params().flatten_grads();

  const double h = 1e-6;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (objective(plus, 1) - objective(minus, 1)) / (2.0 * h);
    CHECK(analytic[i] == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("parameter sets flatten and restore losslessly") {
  ToyAcousticEncoder enc(tiny_acoustic(), 8);
  auto flat = enc.params().flatten_values();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += 0.001 * static_cast<double>(i);
  enc.params().set_values(flat);
  CHECK(enc.params().flatten_values() == flat);
  CHECK_THROWS_AS(enc.params().set_values(std::vector<double>(flat.size() + 1, 0.0)),
                  invalid_input_error);
  CHECK_THROWS_AS(enc.params().block("nope"), invalid_input_error);
}
