#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "relprox/combined_loss.hpp"
#include "relprox/encoders.hpp"
#include "relprox/metrics.hpp"
#include "relprox/synth.hpp"

namespace relprox {

// ---------------------------------------------------------------------------
// Central finite differences. Never touches analytic-gradient code: callers
// hand in a value-only function. A non-finite evaluation yields NaN at that
// coordinate, which downstream checking reports as a failed coordinate.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x,
    double h) {
  if (!(h > 0.0)) throw invalid_input_error("finite_difference_gradient: h must be > 0");
  std::vector<double> g(x.size());
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double orig = xp[c];
    xp[c] = orig + h;
    const double fp = f(xp);
    xp[c] = orig - h;
    const double fm = f(xp);
    xp[c] = orig;
    g[c] = (std::isfinite(fp) && std::isfinite(fm))
               ? (fp - fm) / (2.0 * h)
               : std::numeric_limits<double>::quiet_NaN();
  }
  return g;
}

struct GradCheckSettings {
  double h = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
  double max_excluded_fraction = 0.05;
  std::vector<std::uint64_t> seeds = {1,  2,  3,  4,  5,  6,  7,  8,  9,  10,
                                      11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
};

struct LossCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t coords_total = 0;
  std::size_t coords_excluded = 0;
  std::size_t coords_failed = 0;
  bool pass = true;
  std::string detail;

  double excluded_fraction() const {
    return coords_total == 0
               ? 0.0
               : static_cast<double>(coords_excluded) / static_cast<double>(coords_total);
  }

  void merge(const LossCheckResult& other) {
    coords_total += other.coords_total;
    coords_excluded += other.coords_excluded;
    coords_failed += other.coords_failed;
    if (other.max_rel_err > max_rel_err) {
      max_rel_err = other.max_rel_err;
      worst_coordinate = other.worst_coordinate;
    }
    max_abs_err = std::max(max_abs_err, other.max_abs_err);
    if (!other.pass) pass = false;
    if (!other.detail.empty()) detail = other.detail;
  }
};

struct GradCheckReport {
  GradCheckSettings settings;
  std::vector<LossCheckResult> entries;

  bool all_pass() const {
    for (const auto& e : entries) {
      if (!e.pass) return false;
    }
    return !entries.empty();
  }

  double excluded_fraction() const {
    std::size_t total = 0, excluded = 0;
    for (const auto& e : entries) {
      total += e.coords_total;
      excluded += e.coords_excluded;
    }
    return total == 0 ? 0.0 : static_cast<double>(excluded) / static_cast<double>(total);
  }

  std::string to_text() const {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << "gradient check: h=" << settings.h << " rel_tol=" << settings.rel_tol
       << " abs_tol=" << settings.abs_tol << " seeds=" << settings.seeds.size() << "\n";
    for (const auto& e : entries) {
      char line[256];
      std::snprintf(line, sizeof(line), "%-24s max_rel_err=%.3e max_abs_err=%.3e excluded=%.2f%% %s\n",
                    e.name.c_str(), e.max_rel_err, e.max_abs_err, 100.0 * e.excluded_fraction(),
                    e.pass ? "PASS" : "FAIL");
      os << line;
      if (!e.pass && !e.detail.empty()) os << "    " << e.detail << "\n";
    }
    os << "overall: " << (all_pass() ? "PASS" : "FAIL") << " (excluded "
       << 100.0 * excluded_fraction() << "% of coordinates)\n";
    return os.str();
  }
};

// One checkable instance: a value function (with branch tracing), a base
// point, and the analytic gradient claimed at that point.
struct CheckCase {
  std::string name;
  std::vector<double> x0;
  std::function<double(std::span<const double>, BranchTrace*)> value;
  std::vector<double> analytic;
};

// Runs one case: compares central differences against the analytic gradient
// coordinate-wise. A coordinate is excluded when its perturbation changes any
// recorded branch decision (Huber branch or its near-kink window, norm
// guards, mining picks, hinge activity) between x, x+h e_c, x-h e_c.
inline LossCheckResult check_case(const CheckCase& c, const GradCheckSettings& s) {
  LossCheckResult res;
  res.name = c.name;
  res.coords_total = c.x0.size();
  if (c.analytic.size() != c.x0.size()) {
    res.pass = false;
    res.detail = "analytic gradient size mismatch";
    return res;
  }

  const double kink_window = 10.0 * s.h;
  BranchTrace base_trace;
  base_trace.huber_kink_window = kink_window;
  c.value(c.x0, &base_trace);

  std::vector<double> x(c.x0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    BranchTrace tp, tm;
    tp.huber_kink_window = kink_window;
    tm.huber_kink_window = kink_window;
    x[i] = orig + s.h;
    const double fp = c.value(x, &tp);
    x[i] = orig - s.h;
    const double fm = c.value(x, &tm);
    x[i] = orig;

    if (!same_trace(tp, base_trace) || !same_trace(tm, base_trace)) {
      ++res.coords_excluded;
      continue;
    }
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      ++res.coords_failed;
      res.pass = false;
      res.max_rel_err = std::numeric_limits<double>::infinity();
      res.worst_coordinate = i;
      res.detail = "non-finite evaluation at coordinate " + std::to_string(i);
      continue;
    }
    const double fd = (fp - fm) / (2.0 * s.h);
    const double g = c.analytic[i];
    const double abs_err = std::fabs(fd - g);
    const double denom = std::max(std::fabs(fd), std::fabs(g));
    const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
    res.max_abs_err = std::max(res.max_abs_err, abs_err);
    // Coordinates inside the absolute gate are noise-to-noise comparisons;
    // their ratio says nothing, so they don't drive the reported worst case.
    if (abs_err > s.abs_tol && rel_err > res.max_rel_err) {
      res.max_rel_err = rel_err;
      res.worst_coordinate = i;
    }
    const bool ok = rel_err <= s.rel_tol || abs_err <= s.abs_tol;
    if (!ok) {
      ++res.coords_failed;
      res.pass = false;
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "coordinate %zu: analytic=%.12g fd=%.12g rel=%.3e abs=%.3e", i, g, fd,
                    rel_err, abs_err);
      res.detail = buf;
    }
  }
  // The exclusion budget is applied to the merged (all-seed) totals by the
  // caller, not to a single tiny instance where one kink can dominate.
  return res;
}

// ---------------------------------------------------------------------------
// Case construction.

namespace gradcheck_detail {

struct RandomBatch {
  LabeledEmbeddingBatch batch;
  std::vector<int> distinct_classes;  // first-appearance order
};

// N in 4..8, D in 2..6, 2..3 classes, every class with >= 2 members, and
// same-class text rows identical (the batch invariant the losses rely on).
inline RandomBatch make_batch(std::uint64_t seed) {
  auto eng = make_engine(seed, {stream::gradcheck, 1});
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = 4 + static_cast<std::size_t>(eng() % 5);
  const std::size_t d = 2 + static_cast<std::size_t>(eng() % 5);
  const std::size_t k = n >= 6 ? 2 + static_cast<std::size_t>(eng() % 2) : 2;

  RandomBatch out;
  out.batch.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // First 2K rows pin every class to two members; the rest round-robin.
    out.batch.labels[i] = static_cast<int>(i < 2 * k ? i / 2 : i % k);
  }
  for (std::size_t c = 0; c < k; ++c) out.distinct_classes.push_back(static_cast<int>(c));

  out.batch.acoustic = Matrix(n, d);
  for (double& v : out.batch.acoustic.storage()) v = normal(eng);
  Matrix tes(k, d);
  for (double& v : tes.storage()) v = normal(eng);
  out.batch.text = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto te = tes.row(static_cast<std::size_t>(out.batch.labels[i]));
    std::copy(te.begin(), te.end(), out.batch.text.row(i).begin());
  }
  out.batch.validate();
  return out;
}

// Flat layout: [acoustic rows | one text vector per DISTINCT class]. Text is
// parameterized per class, not per row: perturbing a coordinate moves every
// row of that class together, preserving the identical-text-rows batch
// invariant (and the zero same-class distances the guards depend on). The
// checked text gradient is the per-class row sum, which is exactly what the
// text encoder's backward pass consumes.
inline std::size_t class_index(const std::vector<int>& classes, int label) {
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c] == label) return c;
  }
  throw invalid_input_error("gradcheck: label not in class list");
}

inline std::vector<double> flat_from_batch(const LabeledEmbeddingBatch& b,
                                           const std::vector<int>& classes) {
  const std::size_t d = b.dim();
  std::vector<double> x;
  x.reserve(b.acoustic.size() + classes.size() * d);
  x.insert(x.end(), b.acoustic.storage().begin(), b.acoustic.storage().end());
  for (int cid : classes) {
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      if (b.labels[i] == cid) {
        const auto row = b.text.row(i);
        x.insert(x.end(), row.begin(), row.end());
        break;
      }
    }
  }
  return x;
}

inline LabeledEmbeddingBatch batch_from_flat(std::span<const double> x,
                                             const std::vector<int>& labels,
                                             const std::vector<int>& classes, std::size_t d) {
  const std::size_t n = labels.size();
  LabeledEmbeddingBatch b;
  b.labels = labels;
  b.acoustic = Matrix(n, d);
  b.text = Matrix(n, d);
  std::copy(x.begin(), x.begin() + n * d, b.acoustic.storage().begin());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = class_index(classes, labels[i]);
    const auto src = x.subspan(n * d + c * d, d);
    std::copy(src.begin(), src.end(), b.text.row(i).begin());
  }
  return b;
}

inline std::vector<double> flat_from_output(const LossOutput& out,
                                            const std::vector<int>& labels,
                                            const std::vector<int>& classes) {
  const std::size_t d = out.grad_acoustic.cols();
  std::vector<double> g;
  g.reserve(out.grad_acoustic.size() + classes.size() * d);
  g.insert(g.end(), out.grad_acoustic.storage().begin(), out.grad_acoustic.storage().end());
  for (int cid : classes) {
    std::vector<double> sum(d, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cid) axpy(1.0, out.grad_text.row(i), sum);
    }
    g.insert(g.end(), sum.begin(), sum.end());
  }
  return g;
}

}  // namespace gradcheck_detail

// Builds the full per-seed case list covering every loss (both normalizer
// modes where applicable), the learnable-parameter gradients, and the
// end-to-end path through both toy encoders.
inline std::vector<CheckCase> build_loss_cases(std::uint64_t seed) {
  using namespace gradcheck_detail;
  std::vector<CheckCase> cases;
  const RandomBatch rb = make_batch(seed);
  const std::vector<int> labels = rb.batch.labels;
  const std::vector<int> classes = rb.distinct_classes;
  const std::size_t n = rb.batch.size();
  const std::size_t d = rb.batch.dim();
  const AsyPParams asyp_defaults;

  // --- asyp ---------------------------------------------------------------
  {
    CheckCase c;
    c.name = "asyp";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return asyp_loss(batch_from_flat(x, labels, classes, d), AsyPParams{}, opt).value;
    };
    c.analytic = flat_from_output(asyp_loss(rb.batch, asyp_defaults), labels, classes);
    cases.push_back(std::move(c));
  }

  // --- adams (embedding + parameter gradients) -----------------------------
  {
    AdaMSTable table = AdaMSTable::initialized(rb.distinct_classes, asyp_defaults);
    // Decorrelate rows so parameter gradients are not all at the same point.
    auto eng = make_engine(seed, {stream::gradcheck, 2});
    std::normal_distribution<double> jitter(0.0, 0.2);
    for (std::size_t r = 0; r < table.size(); ++r) {
      table.log_alpha[r] += jitter(eng);
      table.log_beta[r] += jitter(eng);
      table.lambda[r] += 0.5 * jitter(eng);
    }
    const std::size_t k = table.size();
    CheckCase c;
    c.name = "adams";
    c.x0 = flat_from_batch(rb.batch, classes);
    const auto flat_params = table.flatten();
    c.x0.insert(c.x0.end(), flat_params.begin(), flat_params.end());
    const std::vector<int> ids = rb.distinct_classes;
    c.value = [labels, d, ids, k](std::span<const double> x, BranchTrace* tr) {
      const std::size_t emb = x.size() - 3 * k;
      AdaMSTable t = AdaMSTable::initialized(ids);
      t.set_flat(x.subspan(emb));
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return adams_loss(batch_from_flat(x.first(emb), labels, ids, d), t, opt).value;
    };
    const LossOutput out = adams_loss(rb.batch, table);
    c.analytic = flat_from_output(out, labels, classes);
    for (const char* key : {kGradLogAlpha, kGradLogBeta, kGradLambda}) {
      const auto& g = out.grad_params.at(key);
      c.analytic.insert(c.analytic.end(), g.begin(), g.end());
    }
    cases.push_back(std::move(c));
  }

  // --- rpl_d, constant mu (finite differences hold mu at its base value) ---
  {
    const TupleEnumeration pairs = enumerate_tuples(2, n);
    const double mu_t0 = mean_pairwise_distance(rb.batch.text);
    const double mu_a0 = mean_pairwise_distance(rb.batch.acoustic);
    CheckCase c;
    c.name = "rpl_d(mu-const)";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d, n, mu_t0, mu_a0](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      opt.fixed_mu_text = mu_t0;
      opt.fixed_mu_acoustic = mu_a0;
      return rpl_d_loss(batch_from_flat(x, labels, classes, d), enumerate_tuples(2, n), opt).value;
    };
    c.analytic = flat_from_output(rpl_d_loss(rb.batch, pairs), labels, classes);
    cases.push_back(std::move(c));
  }

  // --- rpl_d, differentiated mu --------------------------------------------
  {
    const TupleEnumeration pairs = enumerate_tuples(2, n);
    CheckCase c;
    c.name = "rpl_d(mu-diff)";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d, n](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return rpl_d_loss(batch_from_flat(x, labels, classes, d), enumerate_tuples(2, n), opt).value;
    };
    LossOptions opt;
    opt.mu_mode = MuGradMode::Differentiate;
    c.analytic = flat_from_output(rpl_d_loss(rb.batch, pairs, opt), labels, classes);
    cases.push_back(std::move(c));
  }

  // --- rpl_a ----------------------------------------------------------------
  {
    const TupleEnumeration triplets = enumerate_tuples(3, n);
    CheckCase c;
    c.name = "rpl_a";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d, n](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return rpl_a_loss(batch_from_flat(x, labels, classes, d), enumerate_tuples(3, n), opt).value;
    };
    c.analytic = flat_from_output(rpl_a_loss(rb.batch, triplets), labels, classes);
    cases.push_back(std::move(c));
  }

  // --- rpl_p in all three normalizer/mu configurations ----------------------
  {
    const double mu_t0 = mean_pairwise_distance(rb.batch.text);
    const double mu_a0 = mean_pairwise_distance(rb.batch.acoustic);
    CheckCase c;
    c.name = "rpl_p(mu-const)";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d, mu_t0, mu_a0](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      opt.fixed_mu_text = mu_t0;
      opt.fixed_mu_acoustic = mu_a0;
      return rpl_p_loss(batch_from_flat(x, labels, classes, d), opt).value;
    };
    c.analytic = flat_from_output(rpl_p_loss(rb.batch), labels, classes);
    cases.push_back(std::move(c));
  }
  {
    CheckCase c;
    c.name = "rpl_p(mu-diff)";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return rpl_p_loss(batch_from_flat(x, labels, classes, d), opt).value;
    };
    LossOptions opt;
    opt.mu_mode = MuGradMode::Differentiate;
    c.analytic = flat_from_output(rpl_p_loss(rb.batch, opt), labels, classes);
    cases.push_back(std::move(c));
  }
  {
    // Centroid-mean normalizer, constant-mu only.
    LossOptions base;
    base.rpl_p_normalizer = RplPNormalizer::CentroidMean;
    const Centroids ct = compute_centroids(rb.batch.text, labels);
    const Centroids ca = compute_centroids(rb.batch.acoustic, labels);
    double mu_t0 = 0.0, mu_a0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < ct.count(); ++k) {
        mu_t0 += distance(rb.batch.text.row(i), ct.values.row(k));
        mu_a0 += distance(rb.batch.acoustic.row(i), ca.values.row(k));
      }
    }
    mu_t0 /= static_cast<double>(n * ct.count());
    mu_a0 /= static_cast<double>(n * ct.count());
    CheckCase c;
    c.name = "rpl_p(centroid-mu)";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d, mu_t0, mu_a0](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      opt.rpl_p_normalizer = RplPNormalizer::CentroidMean;
      opt.fixed_mu_text = mu_t0;
      opt.fixed_mu_acoustic = mu_a0;
      return rpl_p_loss(batch_from_flat(x, labels, classes, d), opt).value;
    };
    c.analytic = flat_from_output(rpl_p_loss(rb.batch, base), labels, classes);
    cases.push_back(std::move(c));
  }

  // --- pc -------------------------------------------------------------------
  {
    CheckCase c;
    c.name = "pc";
    c.x0 = flat_from_batch(rb.batch, classes);
    c.value = [labels, classes, d](std::span<const double> x, BranchTrace* tr) {
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return pc_loss(batch_from_flat(x, labels, classes, d), opt).value;
    };
    c.analytic = flat_from_output(pc_loss(rb.batch), labels, classes);
    cases.push_back(std::move(c));
  }

  // --- triplet (acoustic only, mining frozen at the base point) -------------
  {
    const TripletMining mining = mine_triplets(rb.batch.acoustic, labels);
    const auto picks = mining.picks;
    CheckCase c;
    c.name = "triplet";
    c.x0.assign(rb.batch.acoustic.storage().begin(), rb.batch.acoustic.storage().end());
    c.value = [labels, d, n, picks](std::span<const double> x, BranchTrace* tr) {
      Matrix acoustic(n, d);
      std::copy(x.begin(), x.end(), acoustic.storage().begin());
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      opt.frozen_triplet_mining = &picks;
      return triplet_loss(acoustic, labels, 0.2, opt).value;
    };
    LossOptions opt;
    opt.frozen_triplet_mining = &picks;
    const LossOutput out = triplet_loss(rb.batch.acoustic, labels, 0.2, opt);
    c.analytic.assign(out.grad_acoustic.storage().begin(), out.grad_acoustic.storage().end());
    cases.push_back(std::move(c));
  }

  // --- mono (gradient w.r.t. frame logits) ----------------------------------
  {
    auto eng = make_engine(seed, {stream::gradcheck, 3});
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t p = 3 + static_cast<std::size_t>(eng() % 3);
    std::vector<Matrix> logits;
    std::vector<std::vector<int>> frame_labels;
    std::vector<std::size_t> t_lens;
    for (std::size_t u = 0; u < 3; ++u) {
      const std::size_t t_len = 2 + static_cast<std::size_t>(eng() % 3);
      t_lens.push_back(t_len);
      Matrix l(t_len, p);
      for (double& v : l.storage()) v = normal(eng);
      logits.push_back(std::move(l));
      std::vector<int> fl(t_len);
      for (int& v : fl) v = 1 + static_cast<int>(eng() % p);
      frame_labels.push_back(std::move(fl));
    }
    CheckCase c;
    c.name = "mono";
    for (const auto& l : logits) {
      c.x0.insert(c.x0.end(), l.storage().begin(), l.storage().end());
    }
    c.value = [frame_labels, t_lens, p](std::span<const double> x, BranchTrace* tr) {
      std::vector<Matrix> ls;
      std::size_t off = 0;
      for (std::size_t t_len : t_lens) {
        Matrix l(t_len, p);
        std::copy(x.begin() + off, x.begin() + off + t_len * p, l.storage().begin());
        off += t_len * p;
        ls.push_back(std::move(l));
      }
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      return monophone_ce_loss(ls, frame_labels, opt).value;
    };
    const FrameLossOutput out = monophone_ce_loss(logits, frame_labels);
    for (const auto& g : out.grad_logits) {
      c.analytic.insert(c.analytic.end(), g.storage().begin(), g.storage().end());
    }
    cases.push_back(std::move(c));
  }

  // --- combined (all terms, adams variant), raw and normalized --------------
  for (const bool normalized : {false, true}) {
    CombinedLossConfig cfg;
    cfg.weights = {1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0};  // everything except mono
    cfg.p2p_variant = P2PVariant::AdamsLearnable;
    cfg.normalize_embeddings = normalized;
    AdaMSTable table = AdaMSTable::initialized(rb.distinct_classes, asyp_defaults);
    const std::size_t k = table.size();

    const Matrix mined_on = normalized
                                ? detail::normalize_rows(rb.batch.acoustic, nullptr)
                                : rb.batch.acoustic;
    const TripletMining mining = mine_triplets(mined_on, labels);
    const auto picks = mining.picks;
    const Matrix mu_on_t =
        normalized ? detail::normalize_rows(rb.batch.text, nullptr) : rb.batch.text;
    const Matrix mu_on_a = mined_on;
    const double mu_t0 = mean_pairwise_distance(mu_on_t);
    const double mu_a0 = mean_pairwise_distance(mu_on_a);

    CheckCase c;
    c.name = normalized ? "combined(normalized)" : "combined";
    c.x0 = flat_from_batch(rb.batch, classes);
    const auto flat_params = table.flatten();
    c.x0.insert(c.x0.end(), flat_params.begin(), flat_params.end());
    const std::vector<int> ids = rb.distinct_classes;
    c.value = [labels, d, ids, k, cfg, picks, mu_t0, mu_a0](std::span<const double> x,
                                                            BranchTrace* tr) {
      const std::size_t emb = x.size() - 3 * k;
      AdaMSTable t = AdaMSTable::initialized(ids);
      t.set_flat(x.subspan(emb));
      LossOptions opt;
      opt.grads = false;
      opt.trace = tr;
      opt.frozen_triplet_mining = &picks;
      opt.fixed_mu_text = mu_t0;
      opt.fixed_mu_acoustic = mu_a0;
      return combined_loss(batch_from_flat(x.first(emb), labels, ids, d), nullptr, cfg, &t, opt)
          .value;
    };
    LossOptions opt;
    opt.frozen_triplet_mining = &picks;
    const CombinedLossOutput out = combined_loss(rb.batch, nullptr, cfg, &table, opt);
    LossOutput shaped;
    shaped.grad_acoustic = out.grad_acoustic;
    shaped.grad_text = out.grad_text;
    c.analytic = flat_from_output(shaped, labels, classes);
    c.analytic.reserve(c.x0.size());
    for (const char* key : {kGradLogAlpha, kGradLogBeta, kGradLambda}) {
      const auto& g = out.grad_params.at(key);
      c.analytic.insert(c.analytic.end(), g.begin(), g.end());
    }
    cases.push_back(std::move(c));
  }

  return cases;
}

// End-to-end case: flat vector = [acoustic encoder params | text encoder
// params | adams table]; the function regenerates embeddings from a small
// fixed corpus and evaluates the full combined loss (all terms including
// mono). Normalizers are frozen at the base point, mining likewise.
inline CheckCase build_encoder_case(std::uint64_t seed) {
  SyntheticCorpusSpec cspec;
  cspec.num_classes = 4;
  cspec.held_out_classes = 1;
  cspec.latent_dim = 3;
  cspec.frame_dim = 5;
  cspec.frames_min = 3;
  cspec.frames_max = 5;
  cspec.noise_sigma = 0.2;
  cspec.phones_min = 2;
  cspec.phones_max = 3;
  cspec.phone_inventory = 5;
  cspec.utterances_per_class = 2;
  cspec.seed = mix_seed(seed, {stream::gradcheck, 4});
  const auto corpus = std::make_shared<SyntheticCorpus>(generate_corpus(cspec));

  AcousticEncoderConfig acfg;
  acfg.frame_dim = cspec.frame_dim;
  acfg.hidden_dim = 6;
  acfg.hidden_layers = 1;
  acfg.embedding_dim = 4;
  acfg.phone_count = cspec.phone_inventory;
  TextEncoderConfig tcfg;
  tcfg.input_dim = cspec.phone_inventory;
  tcfg.hidden_dim = 6;
  tcfg.hidden_layers = 1;
  tcfg.embedding_dim = 4;

  const auto train_ids = corpus->class_ids_of_split(Split::Train);
  const auto train_utts = std::make_shared<std::vector<std::size_t>>(
      corpus->split_indices(Split::Train));

  CombinedLossConfig lcfg;
  lcfg.weights = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  lcfg.p2p_variant = P2PVariant::AdamsLearnable;

  struct Model {
    ToyAcousticEncoder aenc;
    ToyTextEncoder tenc;
    AdaMSTable adams;
  };
  auto make_model = [=]() {
    return Model{ToyAcousticEncoder(acfg, mix_seed(seed, {stream::gradcheck, 5})),
                 ToyTextEncoder(tcfg, mix_seed(seed, {stream::gradcheck, 6}),
                                corpus_class_features(*corpus)),
                 AdaMSTable::initialized(train_ids)};
  };

  auto set_flat = [](Model& m, std::span<const double> x) {
    const std::size_t na = m.aenc.params().total_size();
    const std::size_t nt = m.tenc.params().total_size();
    m.aenc.params().set_values(x.first(na));
    m.tenc.params().set_values(x.subspan(na, nt));
    m.adams.set_flat(x.subspan(na + nt));
  };

  // Forward pass shared by the value function and the analytic path.
  struct Forward {
    LabeledEmbeddingBatch batch;
    FrameBatch frames;
    std::vector<ToyAcousticEncoder::Cache> acaches;
    std::vector<ToyTextEncoder::Cache> tcaches;
    std::vector<int> batch_classes;  // distinct, first appearance
  };
  auto run_forward = [corpus, train_utts](Model& m, bool want_caches) {
    Forward f;
    const std::size_t n = train_utts->size();
    const std::size_t d = m.aenc.config().embedding_dim;
    f.batch.acoustic = Matrix(n, d);
    f.batch.text = Matrix(n, d);
    if (want_caches) f.acaches.resize(n);
    std::vector<double> emb;
    for (std::size_t r = 0; r < n; ++r) {
      const auto& utt = corpus->utterances[(*train_utts)[r]];
      Matrix logits;
      ToyAcousticEncoder::Cache cache = m.aenc.encode(utt.frames, emb, logits);
      if (want_caches) f.acaches[r] = std::move(cache);
      std::copy(emb.begin(), emb.end(), f.batch.acoustic.row(r).begin());
      f.batch.labels.push_back(utt.class_id);
      f.frames.logits.push_back(std::move(logits));
      f.frames.labels.push_back(utt.frame_phone_labels);
    }
    std::unordered_map<int, std::vector<double>> te_of;
    for (std::size_t r = 0; r < n; ++r) {
      const int cid = f.batch.labels[r];
      if (!te_of.count(cid)) {
        f.batch_classes.push_back(cid);
        if (want_caches) {
          f.tcaches.emplace_back();
          te_of[cid] = m.tenc.encode(cid, &f.tcaches.back());
        } else {
          te_of[cid] = m.tenc.encode(cid);
        }
      }
      const auto& te = te_of[cid];
      std::copy(te.begin(), te.end(), f.batch.text.row(r).begin());
    }
    return f;
  };

  // Base model and frozen discrete state.
  Model base = make_model();
  std::vector<double> x0 = base.aenc.params().flatten_values();
  {
    const auto t = base.tenc.params().flatten_values();
    x0.insert(x0.end(), t.begin(), t.end());
    const auto a = base.adams.flatten();
    x0.insert(x0.end(), a.begin(), a.end());
  }
  Forward base_fwd = run_forward(base, true);
  const auto picks =
      std::make_shared<std::vector<std::array<std::size_t, 2>>>(
          mine_triplets(base_fwd.batch.acoustic, base_fwd.batch.labels).picks);
  const double mu_t0 = mean_pairwise_distance(base_fwd.batch.text);
  const double mu_a0 = mean_pairwise_distance(base_fwd.batch.acoustic);

  CheckCase c;
  c.name = "encoders-e2e";
  c.x0 = x0;
  c.value = [=](std::span<const double> x, BranchTrace* tr) mutable {
    Model m = make_model();
    set_flat(m, x);
    Forward f = run_forward(m, false);
    LossOptions opt;
    opt.grads = false;
    opt.trace = tr;
    opt.frozen_triplet_mining = picks.get();
    opt.fixed_mu_text = mu_t0;
    opt.fixed_mu_acoustic = mu_a0;
    return combined_loss(f.batch, &f.frames, lcfg, &m.adams, opt).value;
  };

  // Analytic: combined-loss gradients chained through both encoders.
  {
    LossOptions opt;
    opt.frozen_triplet_mining = picks.get();
    const CombinedLossOutput out =
        combined_loss(base_fwd.batch, &base_fwd.frames, lcfg, &base.adams, opt);
    base.aenc.params().zero_grads();
    base.tenc.params().zero_grads();
    for (std::size_t r = 0; r < base_fwd.acaches.size(); ++r) {
      base.aenc.backward(base_fwd.acaches[r], out.grad_acoustic.row(r), &out.grad_logits[r]);
    }
    // Sum text gradients per class before the per-class backward pass.
    for (std::size_t ci = 0; ci < base_fwd.batch_classes.size(); ++ci) {
      const int cid = base_fwd.batch_classes[ci];
      std::vector<double> g(base.tenc.config().embedding_dim, 0.0);
      for (std::size_t r = 0; r < base_fwd.batch.labels.size(); ++r) {
        if (base_fwd.batch.labels[r] == cid) axpy(1.0, out.grad_text.row(r), g);
      }
      base.tenc.backward(base_fwd.tcaches[ci], g);
    }
    c.analytic = base.aenc.params().flatten_grads();
    const auto tg = base.tenc.params().flatten_grads();
    c.analytic.insert(c.analytic.end(), tg.begin(), tg.end());
    for (const char* key : {kGradLogAlpha, kGradLogBeta, kGradLambda}) {
      const auto& g = out.grad_params.at(key);
      c.analytic.insert(c.analytic.end(), g.begin(), g.end());
    }
  }
  return c;
}

inline GradCheckReport check_all_losses(const GradCheckSettings& settings = {}) {
  GradCheckReport report;
  report.settings = settings;
  std::vector<LossCheckResult> merged;
  auto upsert = [&](const LossCheckResult& r) {
    for (auto& e : merged) {
      if (e.name == r.name) {
        e.merge(r);
        return;
      }
    }
    merged.push_back(r);
  };
  for (std::uint64_t seed : settings.seeds) {
    for (const CheckCase& c : build_loss_cases(seed)) upsert(check_case(c, settings));
    upsert(check_case(build_encoder_case(seed), settings));
  }
  for (auto& e : merged) {
    if (e.excluded_fraction() > settings.max_excluded_fraction) {
      e.pass = false;
      if (e.detail.empty()) e.detail = "excluded coordinate budget exceeded";
    }
  }
  report.entries = std::move(merged);
  return report;
}

// Negative control: a deliberately corrupted analytic gradient must be
// caught and located. Returns the report (expected: single failing entry).
inline GradCheckReport negative_control_report(const GradCheckSettings& settings = {}) {
  GradCheckReport report;
  report.settings = settings;
  const std::uint64_t seed = settings.seeds.empty() ? 1 : settings.seeds.front();
  for (CheckCase& c : build_loss_cases(seed)) {
    if (c.name != "rpl_a") continue;
    const std::size_t coord = c.analytic.size() / 2;
    c.analytic[coord] += 0.37;  // corruption the check must locate
    CheckCase corrupted = std::move(c);
    corrupted.name = "rpl_a(corrupted)";
    report.entries.push_back(check_case(corrupted, settings));
    break;
  }
  return report;
}

}  // namespace relprox
