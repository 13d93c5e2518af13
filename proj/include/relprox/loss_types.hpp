#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "relprox/batch.hpp"
#include "relprox/errors.hpp"
#include "relprox/matrix.hpp"
#include "relprox/potentials.hpp"

namespace relprox {

// Value plus gradients w.r.t. batch embeddings; grad_params carries gradients
// for any learnable loss parameters (per-class margin tables).
struct LossOutput {
  double value = 0.0;
  Matrix grad_acoustic;
  Matrix grad_text;
  std::map<std::string, std::vector<double>> grad_params;
};

// Fixed asymmetric-proxy scales: positive-term sharpness alpha, negative-term
// sharpness beta, similarity offset lambda.
struct AsyPParams {
  double alpha = 2.0;
  double beta = 50.0;
  double lambda = 0.1;

  void validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0)) {
      throw invalid_input_error("AsyPParams: alpha and beta must be positive");
    }
    if (!std::isfinite(lambda)) throw invalid_input_error("AsyPParams: lambda must be finite");
  }
};

// Per-class learnable (alpha_k, beta_k, lambda_k). alpha and beta live in log
// space so gradient steps keep them positive; lambda is unconstrained.
struct AdaMSTable {
  std::vector<int> class_ids;
  std::unordered_map<int, std::size_t> row_of;
  std::vector<double> log_alpha;
  std::vector<double> log_beta;
  std::vector<double> lambda;

  static AdaMSTable initialized(const std::vector<int>& ids, const AsyPParams& init = {}) {
    init.validate();
    AdaMSTable t;
    t.class_ids = ids;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!t.row_of.emplace(ids[r], r).second) {
        throw invalid_input_error("AdaMSTable: duplicate class id " + std::to_string(ids[r]));
      }
    }
    t.log_alpha.assign(ids.size(), std::log(init.alpha));
    t.log_beta.assign(ids.size(), std::log(init.beta));
    t.lambda.assign(ids.size(), init.lambda);
    return t;
  }

  std::size_t size() const { return class_ids.size(); }

  std::size_t row(int class_id) const {
    const auto it = row_of.find(class_id);
    if (it == row_of.end()) {
      throw config_error("AdaMSTable: no row for class " + std::to_string(class_id));
    }
    return it->second;
  }

  double alpha(std::size_t r) const { return std::exp(log_alpha[r]); }
  double beta(std::size_t r) const { return std::exp(log_beta[r]); }

  // Flat parameter order: [log_alpha | log_beta | lambda].
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(3 * size());
    out.insert(out.end(), log_alpha.begin(), log_alpha.end());
    out.insert(out.end(), log_beta.begin(), log_beta.end());
    out.insert(out.end(), lambda.begin(), lambda.end());
    return out;
  }

  void set_flat(std::span<const double> flat) {
    const std::size_t k = size();
    if (flat.size() != 3 * k) throw invalid_input_error("AdaMSTable: flat size mismatch");
    std::copy(flat.begin(), flat.begin() + k, log_alpha.begin());
    std::copy(flat.begin() + k, flat.begin() + 2 * k, log_beta.begin());
    std::copy(flat.begin() + 2 * k, flat.end(), lambda.begin());
  }
};

// Parameter-gradient keys used by adams_loss / combined_loss.
inline constexpr const char* kGradLogAlpha = "adams.log_alpha";
inline constexpr const char* kGradLogBeta = "adams.log_beta";
inline constexpr const char* kGradLambda = "adams.lambda";

struct HuberParams {
  double delta = 1.0;
};

// Whether relational normalizers (batch mean pairwise distance) are treated
// as constants during backprop or differentiated through.
enum class MuGradMode { Constant, Differentiate };

// Normalizer choice for the prototypical relational loss: the batch mean
// pairwise embedding distance (same statistic the other relational losses
// use) or the mean embedding-to-centroid distance over all (i, k).
enum class RplPNormalizer { PairwiseMean, CentroidMean };

// Evaluation controls shared by the loss functions. Defaults reproduce
// training behavior; the finite-difference machinery flips them to freeze
// discrete choices or pin normalizers.
struct LossOptions {
  bool grads = true;
  BranchTrace* trace = nullptr;
  MuGradMode mu_mode = MuGradMode::Constant;
  RplPNormalizer rpl_p_normalizer = RplPNormalizer::PairwiseMean;
  // Override the batch normalizer statistics (used by value-only oracles that
  // must hold mu fixed while embeddings move).
  std::optional<double> fixed_mu_acoustic;
  std::optional<double> fixed_mu_text;
  // Frozen triplet mining: per-anchor (hardest positive, hardest negative)
  // captured at a base point.
  const std::vector<std::array<std::size_t, 2>>* frozen_triplet_mining = nullptr;
};

// Active loss terms and their weights in the combined objective.
struct LossWeights {
  double p2p = 0.0;
  double rpl_d = 0.0;
  double rpl_a = 0.0;
  double rpl_p = 0.0;
  double pc = 0.0;
  double mono = 0.0;
  double triplet = 0.0;

  bool any_rpl() const { return rpl_d > 0.0 || rpl_a > 0.0 || rpl_p > 0.0; }
  bool any() const {
    return p2p > 0.0 || any_rpl() || pc > 0.0 || mono > 0.0 || triplet > 0.0;
  }
};

enum class P2PVariant { AsypFixed, AdamsLearnable };

struct CombinedLossConfig {
  LossWeights weights;
  P2PVariant p2p_variant = P2PVariant::AdamsLearnable;
  AsyPParams asyp;  // fixed-variant scales; also the AdaMS initialization
  HuberParams huber;
  bool normalize_embeddings = false;
  double triplet_margin = 0.2;
  MuGradMode mu_mode = MuGradMode::Constant;
  RplPNormalizer rpl_p_normalizer = RplPNormalizer::PairwiseMean;
  TupleSampling tuple_sampling;

  void validate() const {
    if (!weights.any()) throw config_error("combined loss: no active loss term");
    const double ws[] = {weights.p2p, weights.rpl_d,   weights.rpl_a, weights.rpl_p,
                         weights.pc,  weights.mono, weights.triplet};
    for (double w : ws) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw config_error("combined loss: weights must be finite and >= 0");
      }
    }
    if (!(triplet_margin >= 0.0)) throw config_error("combined loss: margin must be >= 0");
    if (!(huber.delta > 0.0)) throw config_error("combined loss: huber delta must be > 0");
    asyp.validate();
  }
};

}  // namespace relprox
