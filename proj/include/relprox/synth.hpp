#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "relprox/errors.hpp"
#include "relprox/matrix.hpp"
#include "relprox/rng.hpp"

namespace relprox {

static_assert(std::endian::native == std::endian::little,
              "corpus and checkpoint formats are little-endian; big-endian hosts unsupported");

// Internal generator constants: relative strength of the class-latent channel
// versus the phone-identity channel in each frame. The phone channel is what
// links audio to text for held-out classes; the latent channel provides
// class-coherent nuisance structure.
inline constexpr double kClassChannelScale = 0.5;
inline constexpr double kPhoneChannelScale = 1.5;

struct SyntheticCorpusSpec {
  std::size_t num_classes = 96;
  std::size_t held_out_classes = 32;  // evaluation-only classes, never trained on
  std::size_t latent_dim = 8;
  std::size_t frame_dim = 20;
  std::size_t frames_min = 10;
  std::size_t frames_max = 30;
  // Frame noise comparable to the signal scale. The default is deliberately
  // heavy: with nearly clean frames the point-to-point baseline saturates on
  // easy corpus draws and structural transfer has no headroom, so benchmark
  // comparisons turn on seed luck instead of the losses under test.
  double noise_sigma = 1.0;
  std::size_t phones_min = 3;
  std::size_t phones_max = 6;
  std::size_t phone_inventory = 12;
  std::size_t utterances_per_class = 6;
  std::uint64_t seed = 1234;

  void validate() const {
    if (num_classes < 2) throw config_error("corpus: num_classes must be >= 2");
    if (held_out_classes < 1 || held_out_classes >= num_classes) {
      throw config_error("corpus: held_out_classes must be in [1, num_classes)");
    }
    if (latent_dim < 1 || frame_dim < 1 || phone_inventory < 1) {
      throw config_error("corpus: dimensions must be >= 1");
    }
    if (frames_min < 1 || frames_min > frames_max) {
      throw config_error("corpus: frames range invalid");
    }
    if (phones_min < 1 || phones_min > phones_max) {
      throw config_error("corpus: phones range invalid");
    }
    if (utterances_per_class < 1) throw config_error("corpus: utterances_per_class must be >= 1");
    if (!(noise_sigma >= 0.0)) throw config_error("corpus: noise_sigma must be >= 0");
  }
};

enum class Split { Train, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    default: return "test";
  }
}

struct SyntheticUtterance {
  Matrix frames;                      // T x frame_dim
  std::vector<int> frame_phone_labels;  // length T, values in {1..P}
  int class_id = 0;
  Split split = Split::Train;
};

struct ClassInfo {
  int id = 0;
  std::vector<int> phones;  // the class's phone sequence, values in {1..P}
  bool held_out = false;
};

// Normalized phone-count histogram over the inventory; this is the text-side
// input feature vector for a class (the textual form of a keyword determines
// its phone content, nothing else).
inline std::vector<double> phone_histogram(const std::vector<int>& phones,
                                           std::size_t inventory) {
  std::vector<double> h(inventory, 0.0);
  for (int p : phones) {
    if (p < 1 || static_cast<std::size_t>(p) > inventory) {
      throw invalid_input_error("phone id out of inventory range");
    }
    h[static_cast<std::size_t>(p - 1)] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(phones.size());
  for (double& v : h) v *= inv;
  return h;
}

struct SyntheticCorpus {
  SyntheticCorpusSpec spec;
  std::vector<ClassInfo> classes;           // indexed by class id
  std::vector<SyntheticUtterance> utterances;

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < utterances.size(); ++i) {
      if (utterances[i].split == s) out.push_back(i);
    }
    return out;
  }

  std::vector<int> class_ids_of_split(Split s) const {
    std::set<int> ids;
    for (const auto& u : utterances) {
      if (u.split == s) ids.insert(u.class_id);
    }
    return {ids.begin(), ids.end()};
  }

  const ClassInfo& class_info(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= classes.size()) {
      throw invalid_input_error("unknown class id " + std::to_string(id));
    }
    return classes[static_cast<std::size_t>(id)];
  }
};

// Per class: a latent code z_k and a phone sequence; per phone: an affine map
// from latent space to frame space. Frame t of an utterance realizes the
// phone active at position t (the sequence stretched uniformly over T):
//
//   frame_t = s_c * W_{p_t} z_k + s_p * b_{p_t} + sigma * eps_t
//
// Same-class utterances share z_k and the phone sequence; the phone bias
// channel b_p makes the class's phone content linearly recoverable from
// frames, which is what ties audio to text for classes never seen in
// training. Phone sequences are redrawn until every class has a distinct
// phone histogram.
inline SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.spec = spec;

  const std::size_t p_count = spec.phone_inventory;
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  // Phone-conditioned affine maps, shared across classes.
  std::vector<Matrix> w_phone(p_count);
  std::vector<std::vector<double>> b_phone(p_count);
  const double w_sigma = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  for (std::size_t p = 0; p < p_count; ++p) {
    auto eng = make_engine(spec.seed, {stream::phone_maps, p});
    w_phone[p] = Matrix(spec.frame_dim, spec.latent_dim);
    for (std::size_t r = 0; r < spec.frame_dim; ++r) {
      for (std::size_t c = 0; c < spec.latent_dim; ++c) {
        w_phone[p](r, c) = unit_normal(eng) * w_sigma;
      }
    }
    b_phone[p].resize(spec.frame_dim);
    for (double& v : b_phone[p]) v = unit_normal(eng);
  }

  // Classes: latent codes and mutually distinct phone histograms.
  std::set<std::vector<int>> seen_histograms;
  std::vector<std::vector<double>> latents(spec.num_classes);
  corpus.classes.resize(spec.num_classes);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    auto z_eng = make_engine(spec.seed, {stream::class_protos, k, 0});
    latents[k].resize(spec.latent_dim);
    for (double& v : latents[k]) v = unit_normal(z_eng);

    auto ph_eng = make_engine(spec.seed, {stream::class_protos, k, 1});
    std::uniform_int_distribution<int> len_dist(static_cast<int>(spec.phones_min),
                                                static_cast<int>(spec.phones_max));
    std::uniform_int_distribution<int> phone_dist(1, static_cast<int>(p_count));
    ClassInfo info;
    info.id = static_cast<int>(k);
    info.held_out = k >= spec.num_classes - spec.held_out_classes;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      const int len = len_dist(ph_eng);
      info.phones.assign(static_cast<std::size_t>(len), 0);
      for (int& p : info.phones) p = phone_dist(ph_eng);
      // Distinctness key: integer phone counts scaled to a common denominator
      // would still collide across lengths; compare normalized histograms via
      // the (count, length) signature instead.
      std::vector<int> key(p_count + 1, 0);
      for (int p : info.phones) ++key[static_cast<std::size_t>(p - 1)];
      // Reduce to the normalized histogram signature: divide counts and the
      // length by their gcd so (1,1)/2 and (2,2)/4 collide as they should.
      int g = len;
      for (int c : key) {
        if (c > 0) g = std::gcd(g, c);
      }
      for (int& c : key) c /= g;
      key[p_count] = len / g;
      ok = seen_histograms.insert(key).second;
    }
    if (!ok) {
      throw config_error("corpus: could not draw a distinct phone histogram for class " +
                         std::to_string(k) + "; enlarge the inventory or phone range");
    }
    corpus.classes[k] = std::move(info);
  }

  // Utterances.
  corpus.utterances.reserve(spec.num_classes * spec.utterances_per_class);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const ClassInfo& info = corpus.classes[k];
    const std::size_t seq_len = info.phones.size();
    for (std::size_t u = 0; u < spec.utterances_per_class; ++u) {
      auto eng = make_engine(spec.seed, {stream::utterances, k, u});
      std::uniform_int_distribution<int> t_dist(static_cast<int>(spec.frames_min),
                                                static_cast<int>(spec.frames_max));
      const std::size_t t_len = static_cast<std::size_t>(t_dist(eng));
      SyntheticUtterance utt;
      utt.class_id = static_cast<int>(k);
      utt.split = !info.held_out ? Split::Train : (u % 2 == 0 ? Split::Dev : Split::Test);
      utt.frames = Matrix(t_len, spec.frame_dim);
      utt.frame_phone_labels.resize(t_len);
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t pos = t * seq_len / t_len;  // uniform stretch
        const int phone = info.phones[pos];
        utt.frame_phone_labels[t] = phone;
        const Matrix& w = w_phone[static_cast<std::size_t>(phone - 1)];
        const auto& b = b_phone[static_cast<std::size_t>(phone - 1)];
        auto row = utt.frames.row(t);
        for (std::size_t r = 0; r < spec.frame_dim; ++r) {
          double v = 0.0;
          for (std::size_t c = 0; c < spec.latent_dim; ++c) v += w(r, c) * latents[k][c];
          row[r] = kClassChannelScale * v + kPhoneChannelScale * b[r] +
                   spec.noise_sigma * unit_normal(eng);
        }
      }
      corpus.utterances.push_back(std::move(utt));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// On-disk corpus: manifest.json plus one binary record per utterance.
// Record layout (all little-endian):
//   int32 class_id, int32 T, int32 frame_dim,
//   T*frame_dim float64 frames (row-major),
//   T int32 frame phone labels.

namespace detail {

inline void write_exact(std::ofstream& os, const void* p, std::size_t bytes) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
  if (!os) throw io_error("write failed");
}

inline void read_exact(std::ifstream& is, void* p, std::size_t bytes) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  if (is.gcount() != static_cast<std::streamsize>(bytes)) throw io_error("short read");
}

inline std::string utterance_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt_%05zu.bin", index);
  return buf;
}

}  // namespace detail

inline nlohmann::json corpus_spec_to_json(const SyntheticCorpusSpec& s) {
  return nlohmann::json{{"num_classes", s.num_classes},
                        {"held_out_classes", s.held_out_classes},
                        {"latent_dim", s.latent_dim},
                        {"frame_dim", s.frame_dim},
                        {"frames_min", s.frames_min},
                        {"frames_max", s.frames_max},
                        {"noise_sigma", s.noise_sigma},
                        {"phones_min", s.phones_min},
                        {"phones_max", s.phones_max},
                        {"phone_inventory", s.phone_inventory},
                        {"utterances_per_class", s.utterances_per_class},
                        {"seed", s.seed}};
}

inline void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create corpus directory " + dir.string());

  nlohmann::json manifest;
  manifest["format"] = "relprox-corpus-v1";
  manifest["spec"] = corpus_spec_to_json(corpus.spec);
  manifest["classes"] = nlohmann::json::array();
  for (const auto& c : corpus.classes) {
    manifest["classes"].push_back(
        {{"id", c.id}, {"phones", c.phones}, {"held_out", c.held_out}});
  }
  manifest["utterances"] = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    const std::string fname = detail::utterance_filename(i);
    manifest["utterances"].push_back({{"file", fname},
                                      {"class_id", u.class_id},
                                      {"split", split_name(u.split)},
                                      {"frames", u.frames.rows()}});
    std::ofstream os(dir / fname, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open " + (dir / fname).string());
    const std::int32_t head[3] = {u.class_id, static_cast<std::int32_t>(u.frames.rows()),
                                  static_cast<std::int32_t>(u.frames.cols())};
    detail::write_exact(os, head, sizeof(head));
    detail::write_exact(os, u.frames.data(), u.frames.size() * sizeof(double));
    std::vector<std::int32_t> labels(u.frame_phone_labels.begin(), u.frame_phone_labels.end());
    detail::write_exact(os, labels.data(), labels.size() * sizeof(std::int32_t));
  }

  std::ofstream ms(dir / "manifest.json", std::ios::trunc);
  if (!ms) throw io_error("cannot open manifest in " + dir.string());
  ms << manifest.dump(2) << "\n";
  if (!ms) throw io_error("manifest write failed");
}

// Strict parse: every key optional (defaults apply), unknown keys rejected.
inline SyntheticCorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw config_error("corpus spec must be an object");
  static const std::set<std::string> known = {
      "num_classes", "held_out_classes", "latent_dim",      "frame_dim",
      "frames_min",  "frames_max",       "noise_sigma",     "phones_min",
      "phones_max",  "phone_inventory",  "utterances_per_class", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw config_error("unknown corpus key: " + key);
  }
  SyntheticCorpusSpec s;
  try {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.held_out_classes = j.value("held_out_classes", s.held_out_classes);
    s.latent_dim = j.value("latent_dim", s.latent_dim);
    s.frame_dim = j.value("frame_dim", s.frame_dim);
    s.frames_min = j.value("frames_min", s.frames_min);
    s.frames_max = j.value("frames_max", s.frames_max);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.phones_min = j.value("phones_min", s.phones_min);
    s.phones_max = j.value("phones_max", s.phones_max);
    s.phone_inventory = j.value("phone_inventory", s.phone_inventory);
    s.utterances_per_class = j.value("utterances_per_class", s.utterances_per_class);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw config_error("corpus spec: " + std::string(e.what()));
  }
  s.validate();
  return s;
}

inline SyntheticCorpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw io_error("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "relprox-corpus-v1") {
    throw io_error("unrecognized corpus format in " + dir.string());
  }

  SyntheticCorpus corpus;
  corpus.spec = corpus_spec_from_json(manifest.at("spec"));
  for (const auto& c : manifest.at("classes")) {
    ClassInfo info;
    info.id = c.at("id").get<int>();
    info.phones = c.at("phones").get<std::vector<int>>();
    info.held_out = c.at("held_out").get<bool>();
    corpus.classes.push_back(std::move(info));
  }

  for (const auto& u : manifest.at("utterances")) {
    const std::string fname = u.at("file").get<std::string>();
    std::ifstream is(dir / fname, std::ios::binary);
    if (!is) throw io_error("missing utterance file " + (dir / fname).string());
    std::int32_t head[3];
    detail::read_exact(is, head, sizeof(head));
    if (head[1] < 1 || head[2] < 1) throw io_error("corrupt record " + fname);
    SyntheticUtterance utt;
    utt.class_id = head[0];
    utt.frames = Matrix(static_cast<std::size_t>(head[1]), static_cast<std::size_t>(head[2]));
    detail::read_exact(is, utt.frames.data(), utt.frames.size() * sizeof(double));
    std::vector<std::int32_t> labels(static_cast<std::size_t>(head[1]));
    detail::read_exact(is, labels.data(), labels.size() * sizeof(std::int32_t));
    utt.frame_phone_labels.assign(labels.begin(), labels.end());
    const std::string split = u.at("split").get<std::string>();
    utt.split = split == "train" ? Split::Train : (split == "dev" ? Split::Dev : Split::Test);
    if (utt.class_id != u.at("class_id").get<int>()) {
      throw io_error("manifest/record class mismatch in " + fname);
    }
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

}  // namespace relprox
