// Command-line entry point: gen-data, gradcheck, train, eval, ablate.
// Exit codes: 0 success, 1 check/assertion failure, 2 configuration error,
// 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "relprox/ablate.hpp"
#include "relprox/config.hpp"
#include "relprox/gradcheck.hpp"
#include "relprox/metrics.hpp"
#include "relprox/synth.hpp"
#include "relprox/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace relprox;

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  std::optional<std::int64_t> seed_override;
  bool deterministic = true;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (JSON)")
      ->required();
  cmd->add_option("--out", args.out_override, "output directory (overrides config out_dir)");
  cmd->add_option("--seed", args.seed_override, "seed override (applies to training/eval)");
  cmd->add_flag("--deterministic,!--no-deterministic", args.deterministic,
                "deterministic mode (default on)");
}

ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  if (args.seed_override) {
    cfg.train.seed = static_cast<std::uint64_t>(*args.seed_override);
  }
  cfg.deterministic = args.deterministic;
  return cfg;
}

fs::path resolve_corpus_dir(const ExperimentConfig& cfg, const std::string& corpus_override) {
  if (!corpus_override.empty()) return corpus_override;
  return fs::path(cfg.out_dir) / "corpus";
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw io_error("cannot write " + path.string());
  os << text;
}

int cmd_gen_data(const CommonArgs& args, bool force) {
  const ExperimentConfig cfg = load_with_overrides(args);
  const fs::path dir = fs::path(cfg.out_dir) / "corpus";
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw io_error("corpus directory " + dir.string() +
                     " already exists; pass --force to regenerate");
    }
    if (!fs::exists(dir / "manifest.json")) {
      throw io_error("refusing --force: " + dir.string() +
                     " does not look like a generated corpus (no manifest.json)");
    }
    fs::remove_all(dir);
  }
  const SyntheticCorpus corpus = generate_corpus(cfg.corpus);
  save_corpus(corpus, dir);
  std::cout << "wrote corpus: " << dir.string() << "\n"
            << "  classes: " << corpus.classes.size() << " ("
            << (corpus.classes.size() - cfg.corpus.held_out_classes) << " train, "
            << cfg.corpus.held_out_classes << " held out)\n"
            << "  utterances: " << corpus.utterances.size() << "\n";
  return 0;
}

int cmd_gradcheck(const CommonArgs& args, std::size_t num_seeds, bool negative_control) {
  const ExperimentConfig cfg = load_with_overrides(args);
  GradCheckSettings settings;
  settings.seeds.clear();
  for (std::size_t s = 1; s <= num_seeds; ++s) settings.seeds.push_back(s);

  if (negative_control) {
    const GradCheckReport report = negative_control_report(settings);
    std::cout << report.to_text();
    if (!report.all_pass()) {
      std::cout << "negative control: corruption detected and located (expected)\n";
    } else {
      std::cout << "negative control: corruption NOT detected; the checker is broken\n";
    }
    return 1;  // the corrupted fixture must never report success
  }

  const GradCheckReport report = check_all_losses(settings);
  std::cout << report.to_text();
  write_text(fs::path(cfg.out_dir) / "gradcheck_report.txt", report.to_text());
  return report.all_pass() ? 0 : 1;
}

int cmd_train(const CommonArgs& args, const std::string& corpus_override,
              const std::string& resume, bool gate) {
  const ExperimentConfig cfg = load_with_overrides(args);
  const fs::path corpus_dir = resolve_corpus_dir(cfg, corpus_override);
  const SyntheticCorpus corpus = load_corpus(corpus_dir);

  if (gate) {
    GradCheckSettings settings;
    settings.seeds = {1, 2, 3};
    const GradCheckReport report = check_all_losses(settings);
    if (!report.all_pass()) {
      std::cout << report.to_text();
      std::cerr << "gradient check gate failed; fix gradients or pass --no-gradcheck-gate\n";
      return 1;
    }
    std::cout << "gradient check gate passed (" << settings.seeds.size() << " seeds)\n";
  }

  TrainSession session;
  session.corpus = &corpus;
  session.config = cfg.train;
  session.acoustic_config = cfg.acoustic;
  session.text_config = cfg.text;
  session.out_dir = cfg.out_dir;
  if (!resume.empty()) session.resume_from = fs::path(resume);
  // The echo captures the experiment, not its location: out_dir is excluded
  // so identical experiments in different directories produce bit-identical
  // checkpoints.
  nlohmann::json echo = experiment_config_to_json(cfg);
  echo.erase("out_dir");
  session.config_echo = echo.dump();

  const TrainResult result = train(session);
  std::cout << "training complete: " << result.epochs_run << " epochs\n"
            << "  metrics: " << result.metrics_csv.string() << "\n"
            << "  checkpoint: " << result.final_checkpoint.string() << "\n";
  char line[96];
  std::snprintf(line, sizeof(line), "  final dev AP %.1f%%  dev EER %.1f%%\n",
                100.0 * result.final_dev_ap, 100.0 * result.final_dev_eer);
  std::cout << line;
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& corpus_override,
             const std::string& checkpoint, const std::string& split_name) {
  const ExperimentConfig cfg = load_with_overrides(args);
  const fs::path corpus_dir = resolve_corpus_dir(cfg, corpus_override);
  const SyntheticCorpus corpus = load_corpus(corpus_dir);
  Split split;
  if (split_name == "dev") {
    split = Split::Dev;
  } else if (split_name == "test") {
    split = Split::Test;
  } else {
    throw config_error("--split must be dev or test");
  }

  const LoadedModel model = load_model(checkpoint, corpus, cfg.acoustic, cfg.text);
  const EvalInputs inputs = encode_split(corpus, model.acoustic, model.text, split);
  const ScoredPairSet pairs = sample_pairs(inputs.aes, inputs.ae_labels, inputs.tes,
                                           inputs.te_classes, cfg.eval_n_pos, cfg.eval_n_neg,
                                           cfg.train.seed);
  const EvalReport report = evaluate_pairs(pairs);

  char text[512];
  std::snprintf(text, sizeof(text),
                "split=%s n_pos=%zu n_neg=%zu pos_with_replacement=%d neg_with_replacement=%d\n"
                "EER %.1f%% (threshold %.6f)\nAP %.1f%%\n",
                split_name.c_str(), report.n_pos, report.n_neg,
                pairs.pos_with_replacement ? 1 : 0, pairs.neg_with_replacement ? 1 : 0,
                100.0 * report.eer, report.eer_threshold, 100.0 * report.ap);
  std::cout << text;
  write_text(fs::path(cfg.out_dir) / ("eval_report_" + split_name + ".txt"), text);
  write_det_csv(fs::path(cfg.out_dir) / ("det_" + split_name + ".csv"), pairs);

  // Appended metric log across eval invocations.
  const fs::path log = fs::path(cfg.out_dir) / "eval_metrics.csv";
  const bool fresh = !fs::exists(log);
  fs::create_directories(log.parent_path());
  std::ofstream os(log, std::ios::app);
  if (!os) throw io_error("cannot write " + log.string());
  if (fresh) os << "split,n_pos,n_neg,eer,eer_threshold,ap\n";
  char row[256];
  std::snprintf(row, sizeof(row), "%s,%zu,%zu,%.17g,%.17g,%.17g\n", split_name.c_str(),
                report.n_pos, report.n_neg, report.eer, report.eer_threshold, report.ap);
  os << row;
  return 0;
}

int cmd_ablate(const CommonArgs& args, std::size_t num_seeds) {
  const ExperimentConfig cfg = load_with_overrides(args);
  const AblationReport report =
      run_ablation(cfg, num_seeds, fs::path(cfg.out_dir) / "ablation", &std::cout);
  const std::string text = report.to_text();
  std::cout << text;
  write_text(fs::path(cfg.out_dir) / "ablation.txt", text);
  return (report.all_rows_ok() && report.all_checks_pass()) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relational-proxy metric learning workbench"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  bool gen_force = false;
  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen, gen_args);
  gen->add_flag("--force", gen_force, "replace an existing corpus directory");

  CommonArgs gc_args;
  std::size_t gc_seeds = 20;
  bool gc_negative = false;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient certification");
  add_common(gc, gc_args);
  gc->add_option("--seeds", gc_seeds, "number of seeded batches (default 20)");
  gc->add_flag("--negative-control", gc_negative,
               "run the corrupted-gradient fixture (must exit 1)");

  CommonArgs train_args;
  std::string train_corpus, train_resume;
  bool train_gate = true;
  CLI::App* tr = app.add_subcommand("train", "train encoders on the corpus");
  add_common(tr, train_args);
  tr->add_option("--corpus", train_corpus, "corpus directory (default <out>/corpus)");
  tr->add_option("--resume", train_resume, "checkpoint to resume from");
  tr->add_flag("--gradcheck-gate,!--no-gradcheck-gate", train_gate,
               "run a reduced gradient check before training (default on)");

  CommonArgs eval_args;
  std::string eval_corpus, eval_checkpoint, eval_split = "test";
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a held-out split");
  add_common(ev, eval_args);
  ev->add_option("--corpus", eval_corpus, "corpus directory (default <out>/corpus)");
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  ev->add_option("--split", eval_split, "dev or test (default test)");

  CommonArgs ab_args;
  std::size_t ab_seeds = 3;
  CLI::App* ab = app.add_subcommand("ablate", "train and evaluate all ablation rows");
  add_common(ab, ab_args);
  ab->add_option("--seeds", ab_seeds, "paired seeds per row (default 3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, gen_force);
    if (gc->parsed()) return cmd_gradcheck(gc_args, gc_seeds, gc_negative);
    if (tr->parsed()) return cmd_train(train_args, train_corpus, train_resume, train_gate);
    if (ev->parsed()) return cmd_eval(eval_args, eval_corpus, eval_checkpoint, eval_split);
    if (ab->parsed()) return cmd_ablate(ab_args, ab_seeds);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
