#pragma once

#include <map>
#include <string>
#include <vector>

#include "relprox/auxiliary_losses.hpp"
#include "relprox/loss_types.hpp"
#include "relprox/proxy_losses.hpp"
#include "relprox/relational_losses.hpp"

namespace relprox {

// Canonical term order; also the CSV column order (prefixed with "loss_").
inline const std::vector<std::string>& loss_term_names() {
  static const std::vector<std::string> names = {"p2p",  "rpl_d", "rpl_a", "rpl_p",
                                                 "pc",   "mono",  "triplet"};
  return names;
}

struct FrameBatch {
  std::vector<Matrix> logits;             // per utterance, T_i x P
  std::vector<std::vector<int>> labels;   // per utterance, length T_i, 1-based
};

struct CombinedLossOutput {
  double value = 0.0;
  Matrix grad_acoustic;
  Matrix grad_text;
  std::vector<Matrix> grad_logits;  // empty unless the mono term is active
  std::map<std::string, double> term_values;  // raw (unweighted) values
  std::map<std::string, std::vector<double>> grad_params;
};

namespace detail {

// L2-normalizes rows; rows with norm <= eps become zero rows (guard).
inline Matrix normalize_rows(const Matrix& m, BranchTrace* trace) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = norm(m.row(r));
    const bool guarded = n <= kNormEpsilon;
    if (trace) trace->push(guarded ? 1 : 0);
    if (guarded) continue;
    const double inv = 1.0 / n;
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) * inv;
  }
  return out;
}

// Chain rule through row normalization: with y = x/||x||,
// dL/dx = (g - (g.y) y) / ||x||, where g = dL/dy. Guarded rows get zero.
inline void backprop_normalize(const Matrix& raw, const Matrix& normalized, const Matrix& g_norm,
                               Matrix& g_raw) {
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const double n = norm(raw.row(r));
    if (n <= kNormEpsilon) continue;
    const double gy = dot(g_norm.row(r), normalized.row(r));
    const double inv = 1.0 / n;
    for (std::size_t c = 0; c < raw.cols(); ++c) {
      g_raw(r, c) = (g_norm(r, c) - gy * normalized(r, c)) * inv;
    }
  }
}

}  // namespace detail

// Weighted combination of all active loss terms. `frames` is required when
// the mono weight is positive; `adams` is required exactly when the P2P
// variant is adams-learnable and the p2p weight is positive.
inline CombinedLossOutput combined_loss(const LabeledEmbeddingBatch& batch,
                                        const FrameBatch* frames,
                                        const CombinedLossConfig& config,
                                        const AdaMSTable* adams, const LossOptions& opt = {}) {
  config.validate();
  const auto& w = config.weights;
  if (w.mono > 0.0 && (!frames || frames->logits.empty())) {
    throw config_error("combined loss: mono term active but no frame data supplied");
  }
  if (w.p2p > 0.0 && config.p2p_variant == P2PVariant::AdamsLearnable && !adams) {
    throw config_error("combined loss: adams-learnable variant needs an AdaMSTable");
  }

  // Work on a normalized view when configured; gradients are mapped back.
  const bool normalize = config.normalize_embeddings;
  LabeledEmbeddingBatch normed;
  const LabeledEmbeddingBatch* work = &batch;
  if (normalize) {
    normed.acoustic = detail::normalize_rows(batch.acoustic, opt.trace);
    normed.text = detail::normalize_rows(batch.text, opt.trace);
    normed.labels = batch.labels;
    work = &normed;
  }

  LossOptions term_opt = opt;
  term_opt.mu_mode = opt.mu_mode;
  // The combined config owns these policies; explicit opt overrides stand.
  if (opt.mu_mode == MuGradMode::Constant && config.mu_mode == MuGradMode::Differentiate) {
    term_opt.mu_mode = MuGradMode::Differentiate;
  }
  term_opt.rpl_p_normalizer = config.rpl_p_normalizer;

  const std::size_t n = work->size();
  const std::size_t d = work->dim();
  CombinedLossOutput out;
  for (const std::string& name : loss_term_names()) out.term_values[name] = 0.0;
  Matrix ga(n, d), gt(n, d);  // gradients w.r.t. the working (possibly normalized) batch

  auto add_term = [&](const std::string& name, double weight, const LossOutput& term) {
    out.term_values[name] = term.value;
    out.value += weight * term.value;
    if (!opt.grads) return;
    for (std::size_t r = 0; r < n; ++r) {
      axpy(weight, term.grad_acoustic.row(r), ga.row(r));
      axpy(weight, term.grad_text.row(r), gt.row(r));
    }
    for (const auto& [key, grad] : term.grad_params) {
      auto& acc = out.grad_params[key];
      if (acc.empty()) acc.assign(grad.size(), 0.0);
      for (std::size_t i = 0; i < grad.size(); ++i) acc[i] += weight * grad[i];
    }
  };

  if (w.p2p > 0.0) {
    const LossOutput term = config.p2p_variant == P2PVariant::AdamsLearnable
                                ? adams_loss(*work, *adams, term_opt)
                                : asyp_loss(*work, config.asyp, term_opt);
    add_term("p2p", w.p2p, term);
  }
  if (w.rpl_d > 0.0) {
    TupleSampling sampling = config.tuple_sampling;
    const TupleEnumeration pairs = enumerate_tuples(2, n, sampling);
    add_term("rpl_d", w.rpl_d, rpl_d_loss(*work, pairs, term_opt, config.huber));
  }
  if (w.rpl_a > 0.0) {
    TupleSampling sampling = config.tuple_sampling;
    const TupleEnumeration triplets = enumerate_tuples(3, n, sampling);
    add_term("rpl_a", w.rpl_a, rpl_a_loss(*work, triplets, term_opt, config.huber));
  }
  if (w.rpl_p > 0.0) {
    add_term("rpl_p", w.rpl_p, rpl_p_loss(*work, term_opt, config.huber));
  }
  if (w.pc > 0.0) {
    add_term("pc", w.pc, pc_loss(*work, term_opt));
  }
  if (w.triplet > 0.0) {
    add_term("triplet", w.triplet,
             triplet_loss(work->acoustic, work->labels, config.triplet_margin, term_opt));
  }
  if (w.mono > 0.0) {
    const FrameLossOutput term = monophone_ce_loss(frames->logits, frames->labels, term_opt);
    out.term_values["mono"] = term.value;
    out.value += w.mono * term.value;
    if (opt.grads) {
      out.grad_logits.reserve(term.grad_logits.size());
      for (const Matrix& g : term.grad_logits) {
        Matrix scaled = g;
        scale({scaled.data(), scaled.size()}, w.mono);
        out.grad_logits.push_back(std::move(scaled));
      }
    }
  }

  if (opt.grads) {
    if (normalize) {
      out.grad_acoustic = Matrix(n, d);
      out.grad_text = Matrix(n, d);
      detail::backprop_normalize(batch.acoustic, normed.acoustic, ga, out.grad_acoustic);
      detail::backprop_normalize(batch.text, normed.text, gt, out.grad_text);
    } else {
      out.grad_acoustic = std::move(ga);
      out.grad_text = std::move(gt);
    }
  }
  return out;
}

}  // namespace relprox
