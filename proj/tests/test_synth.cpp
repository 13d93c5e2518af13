#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "relprox/synth.hpp"
#include "test_support.hpp"

using namespace relprox;

namespace {

SyntheticCorpusSpec small_spec() {
  SyntheticCorpusSpec s;
  s.num_classes = 8;
  s.held_out_classes = 3;
  s.latent_dim = 3;
  s.frame_dim = 6;
  s.frames_min = 4;
  s.frames_max = 7;
  s.noise_sigma = 0.3;
  s.phones_min = 2;
  s.phones_max = 3;
  s.phone_inventory = 6;
  s.utterances_per_class = 4;
  s.seed = 77;
  return s;
}

bool same_matrix(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a.storage() == b.storage();
}

}  // namespace

TEST_CASE("generation is bit-identical for a repeated spec") {
  const auto a = generate_corpus(small_spec());
  const auto b = generate_corpus(small_spec());
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(same_matrix(a.utterances[i].frames, b.utterances[i].frames));
    CHECK(a.utterances[i].frame_phone_labels == b.utterances[i].frame_phone_labels);
    CHECK(a.utterances[i].class_id == b.utterances[i].class_id);
    CHECK(a.utterances[i].split == b.utterances[i].split);
  }
  // A different seed moves the data.
  auto spec2 = small_spec();
  spec2.seed = 78;
  const auto c = generate_corpus(spec2);
  CHECK_FALSE(same_matrix(a.utterances[0].frames, c.utterances[0].frames));
}

TEST_CASE("utterance counts and split layout follow the corpus parameters") {
  const auto corpus = generate_corpus(small_spec());
  CHECK(corpus.utterances.size() == 8 * 4);
  std::set<int> ids;
  for (const auto& u : corpus.utterances) ids.insert(u.class_id);
  CHECK(ids.size() == 8);

  // Non-held-out classes train; held-out classes alternate dev/test.
  CHECK(corpus.split_indices(Split::Train).size() == 5 * 4);
  CHECK(corpus.split_indices(Split::Dev).size() == 3 * 2);
  CHECK(corpus.split_indices(Split::Test).size() == 3 * 2);

  // Train classes never appear in dev or test and vice versa.
  const auto train_ids = corpus.class_ids_of_split(Split::Train);
  const auto test_ids = corpus.class_ids_of_split(Split::Test);
  for (int t : test_ids) {
    CHECK(std::find(train_ids.begin(), train_ids.end(), t) == train_ids.end());
    CHECK(corpus.class_info(t).held_out);
  }

  // Frame labels stay inside the inventory; lengths stay in range.
  for (const auto& u : corpus.utterances) {
    CHECK(u.frames.rows() >= 4);
    CHECK(u.frames.rows() <= 7);
    for (int p : u.frame_phone_labels) {
      CHECK(p >= 1);
      CHECK(p <= 6);
    }
    // The stretched sequence starts at the first phone and ends at the last.
    const auto& phones = corpus.class_info(u.class_id).phones;
    CHECK(u.frame_phone_labels.front() == phones.front());
    CHECK(u.frame_phone_labels.back() == phones.back());
  }
}

TEST_CASE("phone histograms are distinct across classes") {
  const auto corpus = generate_corpus(small_spec());
  std::set<std::vector<double>> seen;
  for (const auto& c : corpus.classes) {
    seen.insert(phone_histogram(c.phones, corpus.spec.phone_inventory));
  }
  CHECK(seen.size() == corpus.classes.size());
}

TEST_CASE("zero noise with fixed length collapses a class to one point") {
  auto spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.frames_min = spec.frames_max = 5;
  const auto corpus = generate_corpus(spec);
  // Same class, same length, no noise: identical utterances.
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const auto base = 4 * k;
    for (std::size_t u = 1; u < 4; ++u) {
      CHECK(same_matrix(corpus.utterances[base].frames, corpus.utterances[base + u].frames));
    }
  }

  // Nearest-centroid on mean frames classifies every utterance correctly.
  const std::size_t fd = spec.frame_dim;
  std::vector<std::vector<double>> mean_frame(corpus.utterances.size(),
                                              std::vector<double>(fd, 0.0));
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& f = corpus.utterances[i].frames;
    for (std::size_t t = 0; t < f.rows(); ++t) axpy(1.0, f.row(t), mean_frame[i]);
    scale(mean_frame[i], 1.0 / static_cast<double>(f.rows()));
  }
  std::vector<std::vector<double>> centroid(spec.num_classes, std::vector<double>(fd, 0.0));
  std::vector<std::size_t> count(spec.num_classes, 0);
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto k = static_cast<std::size_t>(corpus.utterances[i].class_id);
    axpy(1.0, mean_frame[i], centroid[k]);
    ++count[k];
  }
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    scale(centroid[k], 1.0 / static_cast<double>(count[k]));
  }
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
      const double d = distance(mean_frame[i], centroid[k]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    CHECK(best == static_cast<std::size_t>(corpus.utterances[i].class_id));
  }
}

TEST_CASE("noise scale controls within-class spread") {
  auto quiet_spec = small_spec();
  quiet_spec.noise_sigma = 0.05;
  quiet_spec.frames_min = quiet_spec.frames_max = 5;
  auto loud_spec = quiet_spec;
  loud_spec.noise_sigma = 1.0;
  const auto quiet = generate_corpus(quiet_spec);
  const auto loud = generate_corpus(loud_spec);
  auto within_class_spread = [](const SyntheticCorpus& c) {
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < c.utterances.size(); ++i) {
      for (std::size_t j = i + 1; j < c.utterances.size(); ++j) {
        if (c.utterances[i].class_id != c.utterances[j].class_id) continue;
        s += distance(std::span<const double>(c.utterances[i].frames.storage()),
                      std::span<const double>(c.utterances[j].frames.storage()));
        ++pairs;
      }
    }
    return s / static_cast<double>(pairs);
  };
  CHECK(within_class_spread(loud) > 2.0 * within_class_spread(quiet));
}

TEST_CASE("corpus round-trips through its on-disk form") {
  testsupport::TempDir tmp;
  const auto corpus = generate_corpus(small_spec());
  const auto dir = tmp.path / "corpus";
  save_corpus(corpus, dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));

  const auto loaded = load_corpus(dir);
  REQUIRE(loaded.utterances.size() == corpus.utterances.size());
  CHECK(loaded.spec.num_classes == corpus.spec.num_classes);
  CHECK(loaded.spec.seed == corpus.spec.seed);
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    CHECK(same_matrix(loaded.utterances[i].frames, corpus.utterances[i].frames));
    CHECK(loaded.utterances[i].frame_phone_labels == corpus.utterances[i].frame_phone_labels);
    CHECK(loaded.utterances[i].class_id == corpus.utterances[i].class_id);
    CHECK(loaded.utterances[i].split == corpus.utterances[i].split);
  }
  for (std::size_t k = 0; k < corpus.classes.size(); ++k) {
    CHECK(loaded.classes[k].phones == corpus.classes[k].phones);
    CHECK(loaded.classes[k].held_out == corpus.classes[k].held_out);
  }
  CHECK_THROWS_AS(load_corpus(tmp.path / "missing"), io_error);
}

TEST_CASE("invalid corpus specs are rejected with the reason") {
  auto s = small_spec();
  s.held_out_classes = 8;
  CHECK_THROWS_AS(generate_corpus(s), config_error);
  s = small_spec();
  s.frames_min = 9;
  CHECK_THROWS_AS(generate_corpus(s), config_error);
  s = small_spec();
  s.noise_sigma = -0.1;
  CHECK_THROWS_AS(generate_corpus(s), config_error);
  s = small_spec();
  s.phones_min = 0;
  CHECK_THROWS_AS(generate_corpus(s), config_error);
}

TEST_CASE("phone histogram normalizes counts") {
  const std::vector<double> h = phone_histogram({1, 1, 3}, 4);
  REQUIRE(h.size() == 4);
  CHECK(h[0] == Catch::Approx(2.0 / 3.0).margin(1e-15));
  CHECK(h[1] == 0.0);
  CHECK(h[2] == Catch::Approx(1.0 / 3.0).margin(1e-15));
  CHECK_THROWS_AS(phone_histogram({0, 1}, 4), invalid_input_error);
  CHECK_THROWS_AS(phone_histogram({5}, 4), invalid_input_error);
}

TEST_CASE("default spec produces the documented benchmark shape") {
  SyntheticCorpusSpec def;
  CHECK(def.num_classes == 96);
  CHECK(def.held_out_classes == 32);
  CHECK(def.utterances_per_class == 6);
  // Counting only; generating the default corpus here keeps the suite fast
  // enough (one pass, ~0.5s).
  const auto corpus = generate_corpus(def);
  CHECK(corpus.utterances.size() == 576);
  CHECK(corpus.split_indices(Split::Train).size() == 384);
  CHECK(corpus.split_indices(Split::Dev).size() == 96);
  CHECK(corpus.split_indices(Split::Test).size() == 96);
}
