#pragma once

#include <cmath>
#include <vector>

#include "relprox/loss_types.hpp"

namespace relprox {

namespace detail {

// Asymmetric point-to-proxy loss over one batch. Per anchor i with scales
// (alpha, beta, lambda):
//
//   pos_i = (1/alpha) * ln(1 + sum_{j in P_i} exp(alpha * (lambda - S(t_i, a_j))))
//   neg_i = (1/|N_i|) * sum_{k in N_i} softplus(beta * (S(a_i, t_k) - lambda))
//   L = (1/N) * sum_i (pos_i + neg_i)
//
// S is cosine similarity. P_i are same-class rows (j != i), N_i the rest.
// Positives pull the class text embedding toward member audio; negatives
// push audio away from foreign text embeddings, averaged so their count
// does not inflate the term. An anchor with empty P_i contributes ln(1)=0.
//
// When `adams` is non-null the scales come from the anchor's class row and
// gradients for (log alpha, log beta, lambda) are accumulated per row.
inline LossOutput asyp_core(const LabeledEmbeddingBatch& batch, const AsyPParams& fixed,
                            const AdaMSTable* adams, const LossOptions& opt) {
  const std::size_t n = batch.size();
  const std::size_t d = batch.dim();
  if (n < 2) throw invalid_batch_error("proxy loss: batch needs at least 2 rows");
  if (count_distinct_labels(batch.labels) < 2) {
    throw invalid_batch_error("proxy loss: batch has a single class, no negatives exist");
  }

  const PairSets sets = build_pair_sets(batch.labels);
  LossOutput out;
  if (opt.grads) {
    out.grad_acoustic = Matrix(n, d);
    out.grad_text = Matrix(n, d);
    if (adams) {
      out.grad_params[kGradLogAlpha].assign(adams->size(), 0.0);
      out.grad_params[kGradLogBeta].assign(adams->size(), 0.0);
      out.grad_params[kGradLambda].assign(adams->size(), 0.0);
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> gu(d), gv(d);
  std::vector<double> sims, fs;
  double total = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t prow = 0;
    double alpha = fixed.alpha, beta = fixed.beta, lambda = fixed.lambda;
    if (adams) {
      prow = adams->row(batch.labels[i]);
      alpha = adams->alpha(prow);
      beta = adams->beta(prow);
      lambda = adams->lambda[prow];
    }

    // Positive branch: anchor text t_i against same-class audio a_j.
    const auto& pos = sets.positives[i];
    sims.assign(pos.size(), 0.0);
    fs.assign(pos.size(), 0.0);
    double fmax = 0.0;  // the implicit exp(0) from the "1 +" term
    for (std::size_t p = 0; p < pos.size(); ++p) {
      bool guarded = false;
      sims[p] = detail::cosine_value(batch.text.row(i), batch.acoustic.row(pos[p]), &guarded);
      if (opt.trace) opt.trace->push(guarded ? 1 : 0);
      fs[p] = alpha * (lambda - sims[p]);
      fmax = std::max(fmax, fs[p]);
    }
    double expsum = std::exp(-fmax);  // the "1" term
    for (double f : fs) expsum += std::exp(f - fmax);
    const double lse = fmax + std::log(expsum);  // ln(1 + sum exp(fs))
    total += lse / alpha;

    double sum_w = 0.0;         // sum of softmax-style weights w_j
    double sum_w_resid = 0.0;   // sum of w_j * (lambda - s_j)
    if (opt.grads) {
      for (std::size_t p = 0; p < pos.size(); ++p) {
        const double w = std::exp(fs[p] - fmax) / expsum;
        sum_w += w;
        sum_w_resid += w * (lambda - sims[p]);
        // d pos_i / d s_j = -w
        const double coeff = -w * inv_n;
        detail::cosine_grad(batch.text.row(i), batch.acoustic.row(pos[p]), gu, gv);
        axpy(coeff, gu, out.grad_text.row(i));
        axpy(coeff, gv, out.grad_acoustic.row(pos[p]));
      }
    }

    // Negative branch: anchor audio a_i against foreign text t_k.
    const auto& neg = sets.negatives[i];
    const double inv_neg = 1.0 / static_cast<double>(neg.size());
    double neg_term = 0.0;
    double sum_sig = 0.0;         // sum of sigmoid(g_k)
    double sum_sig_resid = 0.0;   // sum of sigmoid(g_k) * (s'_k - lambda)
    for (std::size_t q = 0; q < neg.size(); ++q) {
      bool guarded = false;
      double sim;
      if (opt.grads) {
        sim = detail::cosine_grad(batch.acoustic.row(i), batch.text.row(neg[q]), gu, gv,
                                  &guarded);
      } else {
        sim = detail::cosine_value(batch.acoustic.row(i), batch.text.row(neg[q]), &guarded);
      }
      if (opt.trace) opt.trace->push(guarded ? 1 : 0);
      const double g = beta * (sim - lambda);
      neg_term += softplus(g);
      if (opt.grads) {
        const double sig = sigmoid(g);
        sum_sig += sig;
        sum_sig_resid += sig * (sim - lambda);
        const double coeff = inv_n * inv_neg * beta * sig;
        axpy(coeff, gu, out.grad_acoustic.row(i));
        axpy(coeff, gv, out.grad_text.row(neg[q]));
      }
    }
    total += neg_term * inv_neg;

    if (opt.grads && adams) {
      const double g_alpha = inv_n * (sum_w_resid / alpha - lse / (alpha * alpha));
      const double g_beta = inv_n * inv_neg * sum_sig_resid;
      const double g_lambda = inv_n * (sum_w - inv_neg * beta * sum_sig);
      out.grad_params[kGradLogAlpha][prow] += alpha * g_alpha;
      out.grad_params[kGradLogBeta][prow] += beta * g_beta;
      out.grad_params[kGradLambda][prow] += g_lambda;
    }
  }

  out.value = total * inv_n;
  return out;
}

}  // namespace detail

inline LossOutput asyp_loss(const LabeledEmbeddingBatch& batch, const AsyPParams& params,
                            const LossOptions& opt = {}) {
  params.validate();
  return detail::asyp_core(batch, params, nullptr, opt);
}

inline LossOutput adams_loss(const LabeledEmbeddingBatch& batch, const AdaMSTable& table,
                             const LossOptions& opt = {}) {
  return detail::asyp_core(batch, AsyPParams{}, &table, opt);
}

}  // namespace relprox
