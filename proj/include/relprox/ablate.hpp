#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "relprox/config.hpp"
#include "relprox/trainer.hpp"

namespace relprox {

// One ablation row: a named loss-weight combination. Tables:
//   A: point-to-point vs structure-to-structure term combinations (8 rows)
//   B: auxiliary losses added to the full relational combination (4 rows)
struct AblationRow {
  std::string table;
  std::string name;
  LossWeights weights;
};

inline std::vector<AblationRow> ablation_rows() {
  auto w = [](double p2p, double d, double a, double p, double pc = 0.0, double mono = 0.0,
              double tri = 0.0) {
    LossWeights lw;
    lw.p2p = p2p;
    lw.rpl_d = d;
    lw.rpl_a = a;
    lw.rpl_p = p;
    lw.pc = pc;
    lw.mono = mono;
    lw.triplet = tri;
    return lw;
  };
  return {
      {"A", "p2p", w(1, 0, 0, 0)},
      {"A", "p2p+rpl_d", w(1, 1, 0, 0)},
      {"A", "p2p+rpl_a", w(1, 0, 1, 0)},
      {"A", "p2p+rpl_d+rpl_a", w(1, 1, 1, 0)},
      {"A", "p2p+rpl_d+rpl_p", w(1, 1, 0, 1)},
      {"A", "p2p+rpl_a+rpl_p", w(1, 0, 1, 1)},
      {"A", "s2s_only", w(0, 1, 1, 1)},
      {"A", "full", w(1, 1, 1, 1)},
      {"B", "full", w(1, 1, 1, 1)},
      {"B", "full+pc", w(1, 1, 1, 1, 1)},
      {"B", "full+mono+triplet", w(1, 1, 1, 1, 0, 1, 1)},
      {"B", "full+aux", w(1, 1, 1, 1, 1, 1, 1)},
  };
}

struct AblationCell {
  double test_ap = 0.0;
  double test_eer = 1.0;
  double dev_ap = 0.0;
  double dev_eer = 1.0;
  std::filesystem::path run_dir;
};

// Trains one weight combination at one seed index and evaluates both held-out
// splits. Seed pairing: seed index s shifts both the corpus seed and the
// training seed by s, so every row at index s sees the identical corpus and
// identical encoder initialization.
inline AblationCell run_ablation_cell(const ExperimentConfig& base, const LossWeights& weights,
                                      std::size_t seed_index,
                                      const std::filesystem::path& out_root) {
  ExperimentConfig cfg = base;
  cfg.corpus.seed = base.corpus.seed + seed_index;
  cfg.train.seed = base.train.seed + seed_index;
  cfg.train.loss.weights = weights;
  cfg.validate();

  const SyntheticCorpus corpus = generate_corpus(cfg.corpus);

  TrainSession session;
  session.corpus = &corpus;
  session.config = cfg.train;
  session.acoustic_config = cfg.acoustic;
  session.text_config = cfg.text;
  session.out_dir = out_root;
  nlohmann::json echo = experiment_config_to_json(cfg);
  echo.erase("out_dir");
  session.config_echo = echo.dump();

  const TrainResult tr = train(session);
  const LoadedModel model = load_model(tr.final_checkpoint, corpus, cfg.acoustic, cfg.text);

  AblationCell cell;
  cell.run_dir = out_root;
  cell.dev_ap = tr.final_dev_ap;
  cell.dev_eer = tr.final_dev_eer;
  const EvalReport test = evaluate_split(corpus, model.acoustic, model.text, Split::Test,
                                         cfg.eval_n_pos, cfg.eval_n_neg, cfg.train.seed);
  cell.test_ap = test.ap;
  cell.test_eer = test.eer;
  return cell;
}

struct AblationRunResult {
  AblationRow row;
  bool failed = false;
  std::string error;
  std::vector<double> test_ap, test_eer, dev_ap, dev_eer;  // one entry per seed

  double mean(const std::vector<double>& v) const {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
  double mean_test_ap() const { return mean(test_ap); }
  double mean_test_eer() const { return mean(test_eer); }
  double mean_dev_ap() const { return mean(dev_ap); }
};

struct DirectionalCheck {
  std::string description;
  double lhs = 0.0;
  double rhs = 0.0;
  bool strict = true;  // strict: lhs > rhs; otherwise lhs >= rhs
  bool applicable = false;
  bool pass() const { return applicable && (strict ? lhs > rhs : lhs >= rhs); }
};

struct AblationReport {
  std::vector<AblationRunResult> rows;
  std::vector<DirectionalCheck> checks;

  bool all_rows_ok() const {
    for (const auto& r : rows) {
      if (r.failed) return false;
    }
    return true;
  }
  bool all_checks_pass() const {
    for (const auto& c : checks) {
      if (!c.pass()) return false;
    }
    return !checks.empty();
  }

  std::string to_text() const {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    const char* table = "";
    for (const auto& r : rows) {
      if (r.row.table != table) {
        table = r.row.table.c_str();
        os << "\n== table " << r.row.table
           << (r.row.table == "A" ? ": loss-term combinations" : ": auxiliary losses")
           << " (test AP% / test EER%, averaged over " << r.test_ap.size() << " seeds) ==\n";
      }
      char line[160];
      if (r.failed) {
        std::snprintf(line, sizeof(line), "%-22s FAILED  %s\n", r.row.name.c_str(),
                      r.error.c_str());
      } else {
        std::snprintf(line, sizeof(line), "%-22s AP %5.1f  EER %5.1f  (dev AP %5.1f)\n",
                      r.row.name.c_str(), 100.0 * r.mean_test_ap(), 100.0 * r.mean_test_eer(),
                      100.0 * r.mean_dev_ap());
      }
      os << line;
    }
    os << "\n== directional checks (seed-averaged test AP) ==\n";
    for (const auto& c : checks) {
      char line[160];
      if (!c.applicable) {
        std::snprintf(line, sizeof(line), "%-34s SKIPPED (row failed)\n", c.description.c_str());
      } else {
        std::snprintf(line, sizeof(line), "%-34s %5.1f vs %5.1f  %s\n", c.description.c_str(),
                      100.0 * c.lhs, 100.0 * c.rhs, c.pass() ? "PASS" : "FAIL");
      }
      os << line;
    }
    return os.str();
  }
};

inline AblationReport run_ablation(const ExperimentConfig& base, std::size_t num_seeds,
                                   const std::filesystem::path& out_root,
                                   std::ostream* progress = nullptr) {
  if (num_seeds < 1) throw config_error("ablation needs at least one seed");
  AblationReport report;

  // Weight combinations are cached so a row shared between tables runs once.
  auto weight_key = [](const LossWeights& w) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%g|%g|%g|%g|%g|%g|%g", w.p2p, w.rpl_d, w.rpl_a, w.rpl_p,
                  w.pc, w.mono, w.triplet);
    return std::string(buf);
  };
  std::map<std::string, AblationRunResult> cache;

  for (const AblationRow& row : ablation_rows()) {
    const std::string key = weight_key(row.weights);
    auto it = cache.find(key);
    if (it == cache.end()) {
      AblationRunResult r;
      r.row = row;
      for (std::size_t s = 0; s < num_seeds; ++s) {
        if (progress != nullptr) {
          *progress << "[ablate] " << row.name << " seed " << s << "..." << std::endl;
        }
        try {
          const AblationCell cell = run_ablation_cell(
              base, row.weights, s, out_root / row.name / ("seed" + std::to_string(s)));
          r.test_ap.push_back(cell.test_ap);
          r.test_eer.push_back(cell.test_eer);
          r.dev_ap.push_back(cell.dev_ap);
          r.dev_eer.push_back(cell.dev_eer);
        } catch (const std::exception& e) {
          r.failed = true;
          r.error = e.what();
          break;
        }
      }
      it = cache.emplace(key, std::move(r)).first;
    }
    AblationRunResult copy = it->second;
    copy.row = row;  // keep per-table naming
    report.rows.push_back(std::move(copy));
  }

  auto row_mean = [&](const std::string& name, bool& ok) -> double {
    for (const auto& r : report.rows) {
      if (r.row.name == name) {
        ok = !r.failed;
        return r.mean_test_ap();
      }
    }
    ok = false;
    return 0.0;
  };
  auto add_check = [&](const std::string& desc, const std::string& lhs, const std::string& rhs,
                       bool strict) {
    DirectionalCheck c;
    c.description = desc;
    bool ok_l = false, ok_r = false;
    c.lhs = row_mean(lhs, ok_l);
    c.rhs = row_mean(rhs, ok_r);
    c.strict = strict;
    c.applicable = ok_l && ok_r;
    report.checks.push_back(c);
  };
  add_check("p2p+rpl_d > p2p", "p2p+rpl_d", "p2p", true);
  add_check("p2p+rpl_a > p2p", "p2p+rpl_a", "p2p", true);
  add_check("full > p2p", "full", "p2p", true);
  add_check("full > s2s_only", "full", "s2s_only", true);
  add_check("full+aux >= full", "full+aux", "full", false);
  return report;
}

}  // namespace relprox
