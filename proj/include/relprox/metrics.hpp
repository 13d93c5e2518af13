#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "relprox/batch.hpp"
#include "relprox/encoders.hpp"
#include "relprox/errors.hpp"
#include "relprox/matrix.hpp"
#include "relprox/rng.hpp"
#include "relprox/synth.hpp"

namespace relprox {

struct ScoredPairSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 1 = same keyword (positive pair)
  bool pos_with_replacement = false;
  bool neg_with_replacement = false;

  void validate() const {
    if (scores.size() != labels.size() || scores.empty()) {
      throw invalid_input_error("scored pair set: size mismatch or empty");
    }
    bool any_pos = false, any_neg = false;
    for (std::uint8_t l : labels) (l ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg) {
      throw invalid_input_error("scored pair set: needs at least one positive and one negative");
    }
  }
};

struct EvalReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double ap = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  bool pos_with_replacement = false;
  bool neg_with_replacement = false;
};

// ---------------------------------------------------------------------------
// EER: sweep thresholds over the sorted unique scores plus one virtual
// threshold above the maximum (operating point FAR=0, FRR=1, so a crossing
// always exists). FAR(t) = fraction of negatives >= t; FRR(t) = fraction of
// positives < t. FAR - FRR is non-increasing in t; the EER is the common
// value at the first exact zero, or the linear interpolation between the two
// adjacent operating points where the sign flips.

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

inline EerResult compute_eer(const ScoredPairSet& pairs) {
  pairs.validate();
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < pairs.scores.size(); ++i) {
    (pairs.labels[i] ? pos : neg).push_back(pairs.scores[i]);
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> thresholds = pairs.scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double inv_pos = 1.0 / static_cast<double>(pos.size());
  const double inv_neg = 1.0 / static_cast<double>(neg.size());
  auto far_at = [&](double t) {
    const auto it = std::lower_bound(neg.begin(), neg.end(), t);  // first >= t
    return static_cast<double>(neg.end() - it) * inv_neg;
  };
  auto frr_at = [&](double t) {
    const auto it = std::lower_bound(pos.begin(), pos.end(), t);
    return static_cast<double>(it - pos.begin()) * inv_pos;
  };

  double prev_far = 0.0, prev_frr = 0.0, prev_t = 0.0;
  bool have_prev = false;
  const std::size_t sweep = thresholds.size() + 1;  // + virtual endpoint
  for (std::size_t s = 0; s < sweep; ++s) {
    double far, frr, t;
    if (s < thresholds.size()) {
      t = thresholds[s];
      far = far_at(t);
      frr = frr_at(t);
    } else {
      t = thresholds.back();
      far = 0.0;
      frr = 1.0;
    }
    const double d = far - frr;
    if (d == 0.0) return {far, t};
    if (d < 0.0) {
      // Sign flipped between the previous point and this one.
      const double d1 = prev_far - prev_frr;
      const double gamma = d1 / (d1 - d);
      return {prev_far + gamma * (far - prev_far), prev_t + gamma * (t - prev_t)};
    }
    prev_far = far;
    prev_frr = frr;
    prev_t = t;
    have_prev = true;
  }
  (void)have_prev;
  throw invalid_input_error("compute_eer: no crossing found");  // unreachable by construction
}

// ---------------------------------------------------------------------------
// AP at positive ranks, descending scores. Tie-break is pessimistic and
// documented: within equal scores, negatives sort before positives; equal
// (score, label) ties keep original index order.

inline double compute_ap(const ScoredPairSet& pairs) {
  if (pairs.scores.size() != pairs.labels.size() || pairs.scores.empty()) {
    throw invalid_input_error("compute_ap: size mismatch or empty");
  }
  std::size_t n_pos = 0;
  for (std::uint8_t l : pairs.labels) n_pos += l ? 1 : 0;
  if (n_pos == 0) throw invalid_input_error("compute_ap: needs at least one positive");

  std::vector<std::size_t> order(pairs.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pairs.scores[a] != pairs.scores[b]) return pairs.scores[a] > pairs.scores[b];
    if (pairs.labels[a] != pairs.labels[b]) return pairs.labels[a] < pairs.labels[b];
    return a < b;
  });

  double sum_precision = 0.0;
  std::size_t seen_pos = 0;
  for (std::size_t rank = 1; rank <= order.size(); ++rank) {
    if (pairs.labels[order[rank - 1]]) {
      ++seen_pos;
      sum_precision += static_cast<double>(seen_pos) / static_cast<double>(rank);
    }
  }
  return sum_precision / static_cast<double>(n_pos);
}

// ---------------------------------------------------------------------------
// Pair sampling. Positives pair each acoustic embedding with its own class
// text embedding (population = #AEs); negatives pair an AE with a different
// class's TE (population = #AEs * (#classes - 1)). Sampling is without
// replacement until the population is exhausted (a request covering the
// whole population enumerates it in canonical ascending order) and only the
// surplus is drawn with replacement (flagged). One engine serves positives
// first, then negatives.

namespace detail {

inline std::vector<std::uint64_t> sample_pair_indices(std::uint64_t population,
                                                      std::size_t requested,
                                                      std::mt19937_64& rng,
                                                      bool* with_replacement) {
  std::vector<std::uint64_t> out;
  out.reserve(requested);
  if (requested >= population) {
    for (std::uint64_t m = 0; m < population; ++m) out.push_back(m);
  } else {
    std::uniform_int_distribution<std::uint64_t> dist(0, population - 1);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(requested * 2);
    while (seen.size() < requested) seen.insert(dist(rng));
    out.assign(seen.begin(), seen.end());
    std::sort(out.begin(), out.end());
  }
  *with_replacement = requested > population;
  if (requested > population) {
    std::uniform_int_distribution<std::uint64_t> dist(0, population - 1);
    for (std::size_t extra = out.size(); extra < requested; ++extra) out.push_back(dist(rng));
  }
  return out;
}

}  // namespace detail

inline ScoredPairSet sample_pairs(const Matrix& aes, const std::vector<int>& ae_labels,
                                  const Matrix& tes, const std::vector<int>& te_classes,
                                  std::size_t n_pos, std::size_t n_neg, std::uint64_t seed) {
  const std::size_t n_ae = ae_labels.size();
  const std::size_t k = te_classes.size();
  if (aes.rows() != n_ae || n_ae == 0 || tes.rows() != k || k == 0) {
    throw invalid_input_error("sample_pairs: shape mismatch or empty inputs");
  }
  if (k < 2) throw invalid_input_error("sample_pairs: a single class has no negatives");
  if (n_pos == 0 || n_neg == 0) throw invalid_input_error("sample_pairs: zero pairs requested");

  std::unordered_map<int, std::size_t> te_row;
  for (std::size_t r = 0; r < k; ++r) te_row[te_classes[r]] = r;
  std::vector<std::size_t> own_row(n_ae);
  for (std::size_t i = 0; i < n_ae; ++i) {
    const auto it = te_row.find(ae_labels[i]);
    if (it == te_row.end()) {
      throw invalid_input_error("sample_pairs: no text embedding for class " +
                                std::to_string(ae_labels[i]));
    }
    own_row[i] = it->second;
  }

  ScoredPairSet out;
  out.scores.reserve(n_pos + n_neg);
  out.labels.reserve(n_pos + n_neg);
  auto rng = make_engine(seed, {stream::test_eval});

  const auto pos_idx =
      detail::sample_pair_indices(n_ae, n_pos, rng, &out.pos_with_replacement);
  for (std::uint64_t m : pos_idx) {
    const std::size_t i = static_cast<std::size_t>(m);
    out.scores.push_back(detail::cosine_value(aes.row(i), tes.row(own_row[i])));
    out.labels.push_back(1);
  }

  const std::uint64_t neg_pop = static_cast<std::uint64_t>(n_ae) * (k - 1);
  const auto neg_idx =
      detail::sample_pair_indices(neg_pop, n_neg, rng, &out.neg_with_replacement);
  for (std::uint64_t m : neg_idx) {
    const std::size_t i = static_cast<std::size_t>(m / (k - 1));
    std::size_t r = static_cast<std::size_t>(m % (k - 1));
    if (r >= own_row[i]) ++r;  // skip the AE's own class row
    out.scores.push_back(detail::cosine_value(aes.row(i), tes.row(r)));
    out.labels.push_back(0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split evaluation: encode every utterance of the split and one TE per class
// present in the split, sample pairs, compute both metrics.

struct EvalInputs {
  Matrix aes;
  std::vector<int> ae_labels;
  Matrix tes;
  std::vector<int> te_classes;
};

inline EvalInputs encode_split(const SyntheticCorpus& corpus, const ToyAcousticEncoder& aenc,
                               const ToyTextEncoder& tenc, Split split) {
  const auto indices = corpus.split_indices(split);
  if (indices.empty()) throw invalid_input_error("encode_split: empty split");
  EvalInputs out;
  const std::size_t d = aenc.config().embedding_dim;
  out.aes = Matrix(indices.size(), d);
  Matrix logits;
  std::vector<double> emb;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& utt = corpus.utterances[indices[r]];
    aenc.encode(utt.frames, emb, logits);
    std::copy(emb.begin(), emb.end(), out.aes.row(r).begin());
    out.ae_labels.push_back(utt.class_id);
  }
  out.te_classes = corpus.class_ids_of_split(split);
  out.tes = Matrix(out.te_classes.size(), d);
  for (std::size_t r = 0; r < out.te_classes.size(); ++r) {
    const auto te = tenc.encode(out.te_classes[r]);
    std::copy(te.begin(), te.end(), out.tes.row(r).begin());
  }
  return out;
}

inline EvalReport evaluate_pairs(const ScoredPairSet& pairs) {
  EvalReport report;
  const EerResult eer = compute_eer(pairs);
  report.eer = eer.eer;
  report.eer_threshold = eer.threshold;
  report.ap = compute_ap(pairs);
  for (std::uint8_t l : pairs.labels) (l ? report.n_pos : report.n_neg) += 1;
  report.pos_with_replacement = pairs.pos_with_replacement;
  report.neg_with_replacement = pairs.neg_with_replacement;
  return report;
}

inline EvalReport evaluate_split(const SyntheticCorpus& corpus, const ToyAcousticEncoder& aenc,
                                 const ToyTextEncoder& tenc, Split split, std::size_t n_pos,
                                 std::size_t n_neg, std::uint64_t seed) {
  const EvalInputs in = encode_split(corpus, aenc, tenc, split);
  const ScoredPairSet pairs =
      sample_pairs(in.aes, in.ae_labels, in.tes, in.te_classes, n_pos, n_neg, seed);
  return evaluate_pairs(pairs);
}

// (FAR, FRR, threshold) triples over the swept thresholds, for external
// DET-curve plotting.
inline void write_det_csv(const std::filesystem::path& path, const ScoredPairSet& pairs) {
  pairs.validate();
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < pairs.scores.size(); ++i) {
    (pairs.labels[i] ? pos : neg).push_back(pairs.scores[i]);
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds = pairs.scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot open DET csv " + path.string());
  os << "threshold,far,frr\n";
  char buf[96];
  for (double t : thresholds) {
    const double far =
        static_cast<double>(neg.end() - std::lower_bound(neg.begin(), neg.end(), t)) /
        static_cast<double>(neg.size());
    const double frr =
        static_cast<double>(std::lower_bound(pos.begin(), pos.end(), t) - pos.begin()) /
        static_cast<double>(pos.size());
    const int len = std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", t, far, frr);
    os.write(buf, len);
  }
  if (!os) throw io_error("DET csv write failed");
}

}  // namespace relprox
