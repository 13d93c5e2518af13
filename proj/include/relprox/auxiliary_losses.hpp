#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "relprox/loss_types.hpp"

namespace relprox {

// ---------------------------------------------------------------------------
// Prototype-centroid matching: mean over classes of the Euclidean distance
// between the class text embedding and the class's acoustic centroid.
//
//   L = (1/K) * sum_k || t^(k) - c^a_k ||
//
// t^(k) is realized as the text centroid of class k, which equals the class
// TE exactly (same-class text rows are identical) while staying smooth in
// every individual batch row.
inline LossOutput pc_loss(const LabeledEmbeddingBatch& batch, const LossOptions& opt = {}) {
  const std::size_t n = batch.size();
  const std::size_t d = batch.dim();
  if (n < 1) throw invalid_batch_error("pc_loss: empty batch");
  const Centroids ct = compute_centroids(batch.text, batch.labels);
  const Centroids ca = compute_centroids(batch.acoustic, batch.labels);
  const std::size_t k_count = ct.count();

  std::vector<std::vector<std::size_t>> members(k_count);
  for (std::size_t i = 0; i < n; ++i) members[ct.row_of.at(batch.labels[i])].push_back(i);

  LossOutput out;
  if (opt.grads) {
    out.grad_acoustic = Matrix(n, d);
    out.grad_text = Matrix(n, d);
  }

  const double inv_k = 1.0 / static_cast<double>(k_count);
  double total = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double dist_k = distance(ct.values.row(k), ca.values.row(k));
    if (opt.trace) opt.trace->push(dist_k > kNormEpsilon ? 0 : 1);
    if (dist_k <= kNormEpsilon) continue;
    total += dist_k;
    if (!opt.grads) continue;
    const double a = inv_k / (dist_k * static_cast<double>(members[k].size()));
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = ct.values(k, c) - ca.values(k, c);
      for (std::size_t m : members[k]) {
        out.grad_text(m, c) += a * diff;
        out.grad_acoustic(m, c) -= a * diff;
      }
    }
  }
  out.value = total * inv_k;
  return out;
}

// ---------------------------------------------------------------------------
// Batch-hard triplet loss on acoustic embeddings with cosine similarity.
// Per anchor: hardest positive = lowest in-class similarity, hardest
// negative = highest out-of-class similarity (ties -> lowest index).
//
//   L = (1/N) * sum_i max(0, margin - S(a_i, a_pos(i)) + S(a_i, a_neg(i)))
//
// Mining is a discrete choice; finite-difference checks freeze it via
// opt.frozen_triplet_mining (the gradient checked is the conditional one).
struct TripletMining {
  std::vector<std::array<std::size_t, 2>> picks;  // per anchor: {pos, neg}
};

inline TripletMining mine_triplets(const Matrix& acoustic, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  const PairSets sets = build_pair_sets(labels);
  TripletMining m;
  m.picks.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (sets.positives[i].empty() || sets.negatives[i].empty()) {
      throw invalid_batch_error(
          "triplet_loss: every class needs >= 2 members and >= 1 non-member");
    }
    std::size_t best_p = sets.positives[i][0];
    double worst_sim = 2.0;
    for (std::size_t j : sets.positives[i]) {
      const double s = detail::cosine_value(acoustic.row(i), acoustic.row(j));
      if (s < worst_sim) {
        worst_sim = s;
        best_p = j;
      }
    }
    std::size_t best_n = sets.negatives[i][0];
    double best_sim = -2.0;
    for (std::size_t k : sets.negatives[i]) {
      const double s = detail::cosine_value(acoustic.row(i), acoustic.row(k));
      if (s > best_sim) {
        best_sim = s;
        best_n = k;
      }
    }
    m.picks[i] = {best_p, best_n};
  }
  return m;
}

inline LossOutput triplet_loss(const Matrix& acoustic, const std::vector<int>& labels,
                               double margin = 0.2, const LossOptions& opt = {}) {
  const std::size_t n = labels.size();
  const std::size_t d = acoustic.cols();
  if (acoustic.rows() != n || n < 2) {
    throw invalid_batch_error("triplet_loss: labels must match rows, N >= 2");
  }
  TripletMining mining;
  const std::vector<std::array<std::size_t, 2>>* picks = opt.frozen_triplet_mining;
  if (!picks) {
    mining = mine_triplets(acoustic, labels);
    picks = &mining.picks;
  }
  if (picks->size() != n) throw invalid_input_error("triplet_loss: mining size mismatch");

  LossOutput out;
  if (opt.grads) {
    out.grad_acoustic = Matrix(n, d);
    out.grad_text = Matrix(n, d);  // kept for shape uniformity; always zero
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> gu(d), gv(d);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [p, ng] = (*picks)[i];
    bool guard_p = false, guard_n = false;
    const double sp = detail::cosine_value(acoustic.row(i), acoustic.row(p), &guard_p);
    const double sn = detail::cosine_value(acoustic.row(i), acoustic.row(ng), &guard_n);
    const double hinge = margin - sp + sn;
    const bool active = hinge > 0.0;
    if (opt.trace) {
      opt.trace->push(static_cast<std::int32_t>(p));
      opt.trace->push(static_cast<std::int32_t>(ng));
      opt.trace->push(guard_p ? 1 : 0);
      opt.trace->push(guard_n ? 1 : 0);
      opt.trace->push(active ? 1 : 0);
    }
    if (!active) continue;
    total += hinge;
    if (!opt.grads) continue;
    detail::cosine_grad(acoustic.row(i), acoustic.row(p), gu, gv);
    axpy(-inv_n, gu, out.grad_acoustic.row(i));
    axpy(-inv_n, gv, out.grad_acoustic.row(p));
    detail::cosine_grad(acoustic.row(i), acoustic.row(ng), gu, gv);
    axpy(inv_n, gu, out.grad_acoustic.row(i));
    axpy(inv_n, gv, out.grad_acoustic.row(ng));
  }
  out.value = total * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Frame-level monophone cross-entropy. Labels are 1-based phone ids in
// {1..P}; the value is the mean negative log softmax probability over all
// frames of all utterances.
struct FrameLossOutput {
  double value = 0.0;
  std::vector<Matrix> grad_logits;  // same shapes as the inputs
};

inline FrameLossOutput monophone_ce_loss(const std::vector<Matrix>& frame_logits,
                                         const std::vector<std::vector<int>>& frame_labels,
                                         const LossOptions& opt = {}) {
  if (frame_logits.size() != frame_labels.size() || frame_logits.empty()) {
    throw invalid_input_error("monophone_ce_loss: logits/labels count mismatch or empty");
  }
  std::size_t total_frames = 0;
  for (std::size_t u = 0; u < frame_logits.size(); ++u) {
    if (frame_logits[u].rows() != frame_labels[u].size() || frame_logits[u].rows() == 0) {
      throw invalid_input_error("monophone_ce_loss: frame count mismatch in utterance " +
                                std::to_string(u));
    }
    total_frames += frame_logits[u].rows();
  }

  FrameLossOutput out;
  if (opt.grads) {
    out.grad_logits.reserve(frame_logits.size());
    for (const auto& l : frame_logits) out.grad_logits.emplace_back(l.rows(), l.cols());
  }

  const double inv_frames = 1.0 / static_cast<double>(total_frames);
  double total = 0.0;
  std::vector<double> probs;
  for (std::size_t u = 0; u < frame_logits.size(); ++u) {
    const Matrix& logits = frame_logits[u];
    const std::size_t p_count = logits.cols();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      const int label = frame_labels[u][t];
      if (label < 1 || static_cast<std::size_t>(label) > p_count) {
        throw invalid_input_error("monophone_ce_loss: label out of range in utterance " +
                                  std::to_string(u));
      }
      const auto row = logits.row(t);
      double m = row[0];
      for (double v : row) m = std::max(m, v);
      double z = 0.0;
      probs.assign(p_count, 0.0);
      for (std::size_t c = 0; c < p_count; ++c) {
        probs[c] = std::exp(row[c] - m);
        z += probs[c];
      }
      const double log_z = m + std::log(z);
      total += log_z - row[static_cast<std::size_t>(label - 1)];
      if (!opt.grads) continue;
      auto grow = out.grad_logits[u].row(t);
      for (std::size_t c = 0; c < p_count; ++c) grow[c] = inv_frames * probs[c] / z;
      grow[static_cast<std::size_t>(label - 1)] -= inv_frames;
    }
  }
  out.value = total * inv_frames;
  return out;
}

}  // namespace relprox
