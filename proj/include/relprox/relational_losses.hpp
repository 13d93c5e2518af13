#pragma once

#include <cmath>
#include <vector>

#include "relprox/loss_types.hpp"

namespace relprox {

namespace detail {

// d(mu)/d(rows) for the ordered-pair mean pairwise distance. Coincident pairs
// contribute zero (their distance term is nondifferentiable but constant-0 in
// every direction that keeps them coincident; the guard freezes them).
inline Matrix mu_pairwise_gradient(const Matrix& emb) {
  const std::size_t n = emb.rows();
  const std::size_t d = emb.cols();
  Matrix g(n, d);
  const double w = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dist_ij = distance(emb.row(i), emb.row(j));
      if (dist_ij <= kNormEpsilon) continue;
      const double a = w / dist_ij;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = emb(i, c) - emb(j, c);
        g(i, c) += a * diff;
        g(j, c) -= a * diff;
      }
    }
  }
  return g;
}

struct MuInfo {
  double value = 0.0;
  bool degenerate = false;  // value <= eps: the modality's potentials are all 0
};

inline MuInfo resolve_mu(const Matrix& emb, const std::optional<double>& fixed,
                         BranchTrace* trace) {
  MuInfo info;
  info.value = fixed ? *fixed : mean_pairwise_distance(emb);
  info.degenerate = info.value <= kNormEpsilon;
  if (trace) trace->push(info.degenerate ? 1 : 0);
  return info;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Distance-wise relational loss. For every enumerated ordered pair (i, j):
//
//   L = mean_pairs h_delta( phi_D(t_i, t_j; mu_t), phi_D(a_i, a_j; mu_a) )
//
// mu_* is the batch mean pairwise distance of that modality, computed over
// the full batch even when the pair enumeration is subsampled, and treated
// as a constant during backprop unless opt.mu_mode says otherwise. A
// degenerate modality (mu <= eps, e.g. every text embedding coincides)
// contributes phi = 0 for all pairs, so the loss pulls the other modality's
// normalized distances toward zero instead of dividing by a vanishing mu.
inline LossOutput rpl_d_loss(const LabeledEmbeddingBatch& batch, const TupleEnumeration& tuples,
                             const LossOptions& opt = {}, const HuberParams& hp = {}) {
  if (tuples.order != 2) throw invalid_input_error("rpl_d_loss: pair enumeration required");
  const std::size_t n = batch.size();
  const std::size_t d = batch.dim();
  if (n < 2) throw invalid_batch_error("rpl_d_loss: batch needs at least 2 rows");
  if (tuples.pairs.empty()) throw invalid_input_error("rpl_d_loss: empty enumeration");

  const detail::MuInfo mu_t = detail::resolve_mu(batch.text, opt.fixed_mu_text, opt.trace);
  const detail::MuInfo mu_a = detail::resolve_mu(batch.acoustic, opt.fixed_mu_acoustic, opt.trace);

  LossOutput out;
  if (opt.grads) {
    out.grad_acoustic = Matrix(n, d);
    out.grad_text = Matrix(n, d);
  }

  const double inv_pairs = 1.0 / static_cast<double>(tuples.pairs.size());
  double total = 0.0;
  double mu_coeff_t = 0.0;  // sum of d(term)/d(mu_t), for the differentiate-through mode
  double mu_coeff_a = 0.0;

  for (const auto& [i, j] : tuples.pairs) {
    double p = 0.0, q = 0.0;
    double dist_t = 0.0, dist_a = 0.0;
    if (!mu_t.degenerate) {
      dist_t = distance(batch.text.row(i), batch.text.row(j));
      if (dist_t > kNormEpsilon) p = dist_t / mu_t.value;
      if (opt.trace) opt.trace->push(dist_t > kNormEpsilon ? 0 : 1);
    }
    if (!mu_a.degenerate) {
      dist_a = distance(batch.acoustic.row(i), batch.acoustic.row(j));
      if (dist_a > kNormEpsilon) q = dist_a / mu_a.value;
      if (opt.trace) opt.trace->push(dist_a > kNormEpsilon ? 0 : 1);
    }
    const HuberResult h = huber(p, q, hp.delta, opt.trace);
    total += h.value;
    if (!opt.grads) continue;

    if (!mu_t.degenerate && dist_t > kNormEpsilon) {
      const double a = inv_pairs * h.dp / (dist_t * mu_t.value);
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = batch.text(i, c) - batch.text(j, c);
        out.grad_text(i, c) += a * diff;
        out.grad_text(j, c) -= a * diff;
      }
      mu_coeff_t += inv_pairs * h.dp * (-dist_t / (mu_t.value * mu_t.value));
    }
    if (!mu_a.degenerate && dist_a > kNormEpsilon) {
      const double a = inv_pairs * h.dq / (dist_a * mu_a.value);
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = batch.acoustic(i, c) - batch.acoustic(j, c);
        out.grad_acoustic(i, c) += a * diff;
        out.grad_acoustic(j, c) -= a * diff;
      }
      mu_coeff_a += inv_pairs * h.dq * (-dist_a / (mu_a.value * mu_a.value));
    }
  }

  if (opt.grads && opt.mu_mode == MuGradMode::Differentiate) {
    if (!mu_t.degenerate && !opt.fixed_mu_text && mu_coeff_t != 0.0) {
      const Matrix gmu = detail::mu_pairwise_gradient(batch.text);
      for (std::size_t r = 0; r < n; ++r) axpy(mu_coeff_t, gmu.row(r), out.grad_text.row(r));
    }
    if (!mu_a.degenerate && !opt.fixed_mu_acoustic && mu_coeff_a != 0.0) {
      const Matrix gmu = detail::mu_pairwise_gradient(batch.acoustic);
      for (std::size_t r = 0; r < n; ++r) axpy(mu_coeff_a, gmu.row(r), out.grad_acoustic.row(r));
    }
  }

  out.value = total * inv_pairs;
  return out;
}

// ---------------------------------------------------------------------------
// Angle-wise relational loss. For every enumerated ordered triplet (i, j, k),
// with the angle taken at the middle vertex j:
//
//   L = mean_triplets h_delta( phi_A(t_i, t_j, t_k), phi_A(a_i, a_j, a_k) )
//
// phi_A is scale-invariant per modality, so no normalizer is involved.
inline LossOutput rpl_a_loss(const LabeledEmbeddingBatch& batch, const TupleEnumeration& tuples,
                             const LossOptions& opt = {}, const HuberParams& hp = {}) {
  if (tuples.order != 3) throw invalid_input_error("rpl_a_loss: triplet enumeration required");
  const std::size_t n = batch.size();
  const std::size_t d = batch.dim();
  if (n < 3) throw invalid_batch_error("rpl_a_loss: batch needs at least 3 rows");
  if (tuples.triplets.empty()) throw invalid_input_error("rpl_a_loss: empty enumeration");

  LossOutput out;
  if (opt.grads) {
    out.grad_acoustic = Matrix(n, d);
    out.grad_text = Matrix(n, d);
  }

  const double inv_tri = 1.0 / static_cast<double>(tuples.triplets.size());
  double total = 0.0;
  PhiAScratch scratch;
  std::vector<double> u(d), v(d);

  for (const auto& [i, j, k] : tuples.triplets) {
    const double p = phi_a(batch.text.row(i), batch.text.row(j), batch.text.row(k), opt.trace);
    const double q =
        phi_a(batch.acoustic.row(i), batch.acoustic.row(j), batch.acoustic.row(k), opt.trace);
    const HuberResult h = huber(p, q, hp.delta, opt.trace);
    total += h.value;
    if (!opt.grads) continue;
    // Re-evaluate with gradient accumulation; traces were already recorded.
    phi_a_grad(batch.text.row(i), batch.text.row(j), batch.text.row(k), inv_tri * h.dp,
               out.grad_text.row(i), out.grad_text.row(j), out.grad_text.row(k), scratch);
    phi_a_grad(batch.acoustic.row(i), batch.acoustic.row(j), batch.acoustic.row(k),
               inv_tri * h.dq, out.grad_acoustic.row(i), out.grad_acoustic.row(j),
               out.grad_acoustic.row(k), scratch);
  }

  out.value = total * inv_tri;
  return out;
}

// ---------------------------------------------------------------------------
// Prototypical relational loss. Class centroids c_k are computed per modality
// (first-appearance class order); for every embedding row i and every class k:
//
//   L = (1/(N*K)) * sum_{i,k} h_delta( ||t_i - c^t_k|| / mu_t,
//                                      ||a_i - c^a_k|| / mu_a )
//
// With coincident same-class text embeddings the text side of the (i, y_i)
// term is exactly 0, so the audio side is pulled toward its class centroid,
// which is the prototypical behavior.
//
// The default normalizer is the batch mean pairwise distance (same statistic
// as the distance-wise loss). The alternative normalizes by the mean
// embedding-to-centroid distance; it supports constant-mu backprop only.
inline LossOutput rpl_p_loss(const LabeledEmbeddingBatch& batch, const LossOptions& opt = {},
                             const HuberParams& hp = {}) {
  const std::size_t n = batch.size();
  const std::size_t d = batch.dim();
  if (n < 2) throw invalid_batch_error("rpl_p_loss: batch needs at least 2 rows");
  const Centroids ct = compute_centroids(batch.text, batch.labels);
  const Centroids ca = compute_centroids(batch.acoustic, batch.labels);
  const std::size_t k_count = ct.count();
  if (k_count < 2) throw invalid_batch_error("rpl_p_loss: batch needs at least 2 classes");
  if (opt.rpl_p_normalizer == RplPNormalizer::CentroidMean &&
      opt.mu_mode == MuGradMode::Differentiate) {
    throw invalid_input_error(
        "rpl_p_loss: centroid-mean normalizer supports constant-mu backprop only");
  }

  const double inv_terms = 1.0 / static_cast<double>(n * k_count);
  auto centroid_mean_mu = [&](const Matrix& emb, const Centroids& cent) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < k_count; ++k) s += distance(emb.row(i), cent.values.row(k));
    }
    return s * inv_terms;
  };

  detail::MuInfo mu_t, mu_a;
  if (opt.rpl_p_normalizer == RplPNormalizer::PairwiseMean) {
    mu_t = detail::resolve_mu(batch.text, opt.fixed_mu_text, opt.trace);
    mu_a = detail::resolve_mu(batch.acoustic, opt.fixed_mu_acoustic, opt.trace);
  } else {
    mu_t.value = opt.fixed_mu_text ? *opt.fixed_mu_text : centroid_mean_mu(batch.text, ct);
    mu_t.degenerate = mu_t.value <= kNormEpsilon;
    if (opt.trace) opt.trace->push(mu_t.degenerate ? 1 : 0);
    mu_a.value =
        opt.fixed_mu_acoustic ? *opt.fixed_mu_acoustic : centroid_mean_mu(batch.acoustic, ca);
    mu_a.degenerate = mu_a.value <= kNormEpsilon;
    if (opt.trace) opt.trace->push(mu_a.degenerate ? 1 : 0);
  }

  // Rows of each class, for the centroid chain rule.
  std::vector<std::vector<std::size_t>> members(k_count);
  for (std::size_t i = 0; i < n; ++i) members[ct.row_of.at(batch.labels[i])].push_back(i);

  LossOutput out;
  if (opt.grads) {
    out.grad_acoustic = Matrix(n, d);
    out.grad_text = Matrix(n, d);
  }

  double total = 0.0;
  double mu_coeff_t = 0.0, mu_coeff_a = 0.0;

  // Accumulates the gradient of one phi term: direct part on row i, centroid
  // part spread over the class members.
  auto accumulate = [&](const Matrix& emb, const Centroids& cent, std::size_t i, std::size_t k,
                        double dist_ik, double mu, double coeff, Matrix& grad) {
    const double a = coeff / (dist_ik * mu);
    const double share = a / static_cast<double>(members[k].size());
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = emb(i, c) - cent.values(k, c);
      grad(i, c) += a * diff;
      for (std::size_t m : members[k]) grad(m, c) -= share * diff;
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < k_count; ++k) {
      double p = 0.0, q = 0.0;
      double dist_t = 0.0, dist_a = 0.0;
      if (!mu_t.degenerate) {
        dist_t = distance(batch.text.row(i), ct.values.row(k));
        if (dist_t > kNormEpsilon) p = dist_t / mu_t.value;
        if (opt.trace) opt.trace->push(dist_t > kNormEpsilon ? 0 : 1);
      }
      if (!mu_a.degenerate) {
        dist_a = distance(batch.acoustic.row(i), ca.values.row(k));
        if (dist_a > kNormEpsilon) q = dist_a / mu_a.value;
        if (opt.trace) opt.trace->push(dist_a > kNormEpsilon ? 0 : 1);
      }
      const HuberResult h = huber(p, q, hp.delta, opt.trace);
      total += h.value;
      if (!opt.grads) continue;
      if (!mu_t.degenerate && dist_t > kNormEpsilon) {
        accumulate(batch.text, ct, i, k, dist_t, mu_t.value, inv_terms * h.dp, out.grad_text);
        mu_coeff_t += inv_terms * h.dp * (-dist_t / (mu_t.value * mu_t.value));
      }
      if (!mu_a.degenerate && dist_a > kNormEpsilon) {
        accumulate(batch.acoustic, ca, i, k, dist_a, mu_a.value, inv_terms * h.dq,
                   out.grad_acoustic);
        mu_coeff_a += inv_terms * h.dq * (-dist_a / (mu_a.value * mu_a.value));
      }
    }
  }

  if (opt.grads && opt.mu_mode == MuGradMode::Differentiate) {
    if (!mu_t.degenerate && !opt.fixed_mu_text && mu_coeff_t != 0.0) {
      const Matrix gmu = detail::mu_pairwise_gradient(batch.text);
      for (std::size_t r = 0; r < n; ++r) axpy(mu_coeff_t, gmu.row(r), out.grad_text.row(r));
    }
    if (!mu_a.degenerate && !opt.fixed_mu_acoustic && mu_coeff_a != 0.0) {
      const Matrix gmu = detail::mu_pairwise_gradient(batch.acoustic);
      for (std::size_t r = 0; r < n; ++r) axpy(mu_coeff_a, gmu.row(r), out.grad_acoustic.row(r));
    }
  }

  out.value = total * inv_terms;
  return out;
}

}  // namespace relprox
