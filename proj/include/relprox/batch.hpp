#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "relprox/errors.hpp"
#include "relprox/matrix.hpp"

namespace relprox {

// A batch of paired embeddings: row i holds the acoustic embedding of
// utterance i and the text embedding of its class. Rows with equal labels
// carry bit-identical text rows (the class text embedding is computed once
// and replicated).
struct LabeledEmbeddingBatch {
  Matrix acoustic;          // N x D
  Matrix text;              // N x D
  std::vector<int> labels;  // N class ids

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return acoustic.cols(); }

  void validate() const {
    const std::size_t n = labels.size();
    if (n < 2) throw invalid_batch_error("batch needs at least 2 rows, got " + std::to_string(n));
    if (acoustic.rows() != n || text.rows() != n) {
      throw invalid_batch_error("row count mismatch between embeddings and labels");
    }
    if (acoustic.cols() == 0 || acoustic.cols() != text.cols()) {
      throw invalid_batch_error("acoustic/text embedding dimensions differ or are zero");
    }
    if (!acoustic.all_finite() || !text.all_finite()) {
      throw invalid_batch_error("batch contains non-finite values");
    }
    std::unordered_map<int, std::size_t> first_row;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = first_row.emplace(labels[i], i);
      if (inserted) continue;
      const auto a = text.row(it->second);
      const auto b = text.row(i);
      for (std::size_t c = 0; c < b.size(); ++c) {
        if (a[c] != b[c]) {
          throw invalid_batch_error("rows " + std::to_string(it->second) + " and " +
                                    std::to_string(i) +
                                    " share a label but have different text embeddings");
        }
      }
    }
  }
};

// Per-anchor index sets. positives[i] excludes i itself; both lists ascend.
struct PairSets {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
};

inline PairSets build_pair_sets(const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  PairSets out;
  out.positives.resize(n);
  out.negatives.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? out.positives[i] : out.negatives[i]).push_back(j);
    }
  }
  return out;
}

inline std::size_t count_distinct_labels(const std::vector<int>& labels) {
  std::unordered_set<int> seen(labels.begin(), labels.end());
  return seen.size();
}

// ---------------------------------------------------------------------------
// Cosine similarity with the degenerate-norm guard: if either input norm is
// <= kNormEpsilon the similarity is defined as 0 with zero gradient.

namespace detail {

inline double cosine_value(std::span<const double> u, std::span<const double> v,
                           bool* guarded = nullptr) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu <= kNormEpsilon || nv <= kNormEpsilon) {
    if (guarded) *guarded = true;
    return 0.0;
  }
  if (guarded) *guarded = false;
  return dot(u, v) / (nu * nv);
}

// Writes ds/du and ds/dv into gu/gv (overwrites). Returns the similarity.
inline double cosine_grad(std::span<const double> u, std::span<const double> v,
                          std::span<double> gu, std::span<double> gv,
                          bool* guarded = nullptr) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu <= kNormEpsilon || nv <= kNormEpsilon) {
    std::fill(gu.begin(), gu.end(), 0.0);
    std::fill(gv.begin(), gv.end(), 0.0);
    if (guarded) *guarded = true;
    return 0.0;
  }
  if (guarded) *guarded = false;
  const double inv = 1.0 / (nu * nv);
  const double s = dot(u, v) * inv;
  for (std::size_t i = 0; i < u.size(); ++i) {
    gu[i] = v[i] * inv - s * u[i] / (nu * nu);
    gv[i] = u[i] * inv - s * v[i] / (nv * nv);
  }
  return s;
}

}  // namespace detail

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) {
    throw invalid_input_error("cosine_similarity: size mismatch or empty input");
  }
  if (!all_finite(u) || !all_finite(v)) {
    throw invalid_input_error("cosine_similarity: non-finite input");
  }
  return detail::cosine_value(u, v);
}

inline double cosine_similarity_grad(std::span<const double> u, std::span<const double> v,
                                     std::span<double> grad_u, std::span<double> grad_v) {
  if (u.size() != v.size() || u.empty() || grad_u.size() != u.size() ||
      grad_v.size() != v.size()) {
    throw invalid_input_error("cosine_similarity_grad: size mismatch or empty input");
  }
  if (!all_finite(u) || !all_finite(v)) {
    throw invalid_input_error("cosine_similarity_grad: non-finite input");
  }
  return detail::cosine_grad(u, v, grad_u, grad_v);
}

// ---------------------------------------------------------------------------
// Mean pairwise distance over distinct ordered pairs. The distance is
// symmetric, so this equals twice the i<j sum divided by N(N-1).

inline double mean_pairwise_distance(const Matrix& emb) {
  const std::size_t n = emb.rows();
  if (n < 2) throw invalid_input_error("mean_pairwise_distance needs at least 2 rows");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      sum += distance(emb.row(i), emb.row(j));
    }
  }
  return 2.0 * sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// ---------------------------------------------------------------------------
// Class centroids in first-appearance order of the labels.

struct Centroids {
  Matrix values;                 // K x D
  std::vector<int> class_ids;    // K, first-appearance order
  std::unordered_map<int, std::size_t> row_of;
  std::vector<std::size_t> counts;  // members per class

  std::size_t count() const { return class_ids.size(); }
};

inline Centroids compute_centroids(const Matrix& emb, const std::vector<int>& labels) {
  if (emb.rows() != labels.size() || labels.empty()) {
    throw invalid_input_error("compute_centroids: rows and labels must match and be nonempty");
  }
  Centroids out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (out.row_of.emplace(labels[i], out.class_ids.size()).second) {
      out.class_ids.push_back(labels[i]);
    }
  }
  const std::size_t k = out.class_ids.size();
  const std::size_t d = emb.cols();
  out.values = Matrix(k, d);
  out.counts.assign(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t r = out.row_of.at(labels[i]);
    axpy(1.0, emb.row(i), out.values.row(r));
    ++out.counts[r];
  }
  for (std::size_t r = 0; r < k; ++r) {
    scale(out.values.row(r), 1.0 / static_cast<double>(out.counts[r]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tuple enumeration. Ordered tuples of distinct indices, in the canonical
// nested order (outer index major, remaining indices ascending with used
// indices skipped). Subsampling draws distinct linear indices into that
// canonical sequence and emits them in ascending order, so a subsample is
// always a subsequence of the exhaustive enumeration.

enum class TupleSamplingMode { Exhaustive, Subsample };

struct TupleSampling {
  TupleSamplingMode mode = TupleSamplingMode::Exhaustive;
  std::size_t count = 0;      // max tuples when subsampling
  std::uint64_t seed = 0;
};

struct TupleEnumeration {
  int order = 2;  // 2 = pairs, 3 = triplets
  std::size_t batch_size = 0;
  std::uint64_t total = 0;  // size of the exhaustive enumeration
  bool subsampled = false;
  std::vector<std::array<std::size_t, 2>> pairs;
  std::vector<std::array<std::size_t, 3>> triplets;

  std::size_t tuple_count() const { return order == 2 ? pairs.size() : triplets.size(); }
};

namespace detail {

inline std::array<std::size_t, 2> decode_pair(std::uint64_t m, std::size_t n) {
  const std::size_t i = static_cast<std::size_t>(m / (n - 1));
  const std::size_t r = static_cast<std::size_t>(m % (n - 1));
  return {i, r < i ? r : r + 1};
}

inline std::array<std::size_t, 3> decode_triplet(std::uint64_t m, std::size_t n) {
  const std::uint64_t per_i = static_cast<std::uint64_t>(n - 1) * (n - 2);
  const std::size_t i = static_cast<std::size_t>(m / per_i);
  const std::uint64_t rem = m % per_i;
  const std::size_t jr = static_cast<std::size_t>(rem / (n - 2));
  std::size_t kr = static_cast<std::size_t>(rem % (n - 2));
  const std::size_t j = jr < i ? jr : jr + 1;
  const std::size_t lo = std::min(i, j);
  const std::size_t hi = std::max(i, j);
  if (kr >= lo) ++kr;
  if (kr >= hi) ++kr;
  return {i, j, kr};
}

inline std::vector<std::uint64_t> sample_distinct_indices(std::uint64_t total,
                                                          std::size_t count,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> dist(0, total - 1);
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(count * 2);
  while (seen.size() < count) seen.insert(dist(rng));
  std::vector<std::uint64_t> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

inline TupleEnumeration enumerate_tuples(int order, std::size_t batch_size,
                                         const TupleSampling& sampling = {}) {
  if (order != 2 && order != 3) {
    throw invalid_input_error("enumerate_tuples: order must be 2 or 3");
  }
  if (batch_size < static_cast<std::size_t>(order)) {
    throw invalid_input_error("enumerate_tuples: batch too small for requested tuple order");
  }
  TupleEnumeration out;
  out.order = order;
  out.batch_size = batch_size;
  const std::uint64_t n = batch_size;
  out.total = order == 2 ? n * (n - 1) : n * (n - 1) * (n - 2);

  const bool subsample = sampling.mode == TupleSamplingMode::Subsample &&
                         sampling.count > 0 &&
                         static_cast<std::uint64_t>(sampling.count) < out.total;
  if (subsample) {
    out.subsampled = true;
    const auto idx =
        detail::sample_distinct_indices(out.total, sampling.count, sampling.seed);
    if (order == 2) {
      out.pairs.reserve(idx.size());
      for (std::uint64_t m : idx) out.pairs.push_back(detail::decode_pair(m, batch_size));
    } else {
      out.triplets.reserve(idx.size());
      for (std::uint64_t m : idx) out.triplets.push_back(detail::decode_triplet(m, batch_size));
    }
    return out;
  }

  if (order == 2) {
    out.pairs.reserve(static_cast<std::size_t>(out.total));
    for (std::size_t i = 0; i < batch_size; ++i) {
      for (std::size_t j = 0; j < batch_size; ++j) {
        if (j != i) out.pairs.push_back({i, j});
      }
    }
  } else {
    out.triplets.reserve(static_cast<std::size_t>(out.total));
    for (std::size_t i = 0; i < batch_size; ++i) {
      for (std::size_t j = 0; j < batch_size; ++j) {
        if (j == i) continue;
        for (std::size_t k = 0; k < batch_size; ++k) {
          if (k != i && k != j) out.triplets.push_back({i, j, k});
        }
      }
    }
  }
  return out;
}

}  // namespace relprox
