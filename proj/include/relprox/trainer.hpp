#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "relprox/checkpoint.hpp"
#include "relprox/combined_loss.hpp"
#include "relprox/encoders.hpp"
#include "relprox/metrics.hpp"
#include "relprox/optimizer.hpp"
#include "relprox/synth.hpp"

namespace relprox {

struct TrainConfig {
  std::size_t classes_per_batch = 16;  // P
  std::size_t utts_per_class = 2;      // K
  double lr_initial = 1e-3;
  std::size_t lr_halving_period_epochs = 10;
  double weight_decay = 1e-5;
  std::size_t epochs = 40;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  CombinedLossConfig loss;
  std::uint64_t seed = 1234;
  std::size_t checkpoint_every = 10;  // epochs; final checkpoint always written
  std::size_t dev_pairs_pos = 2000;   // per-epoch dev evaluation pair counts
  std::size_t dev_pairs_neg = 20000;

  void validate() const {
    if (classes_per_batch < 2) throw config_error("classes_per_batch must be >= 2");
    if (utts_per_class < 2) throw config_error("utterances_per_class must be >= 2");
    if (!(lr_initial > 0.0)) throw config_error("lr_initial must be > 0");
    if (lr_halving_period_epochs < 1) throw config_error("lr_halving_period_epochs must be >= 1");
    if (!(weight_decay >= 0.0)) throw config_error("weight_decay must be >= 0");
    if (dev_pairs_pos < 1 || dev_pairs_neg < 1) throw config_error("dev pair counts must be >= 1");
    loss.validate();
  }

  AdamWConfig adamw(double lr) const {
    AdamWConfig c;
    c.lr = lr;
    c.beta1 = adam_beta1;
    c.beta2 = adam_beta2;
    c.epsilon = adam_epsilon;
    c.weight_decay = weight_decay;
    return c;
  }
};

// P distinct classes without replacement, K utterances per class without
// replacement, all driven by `rng` alone (deterministic given its state).
struct SampledBatch {
  std::vector<std::size_t> utterance_indices;
  std::vector<int> class_ids;  // parallel to utterance_indices
};

inline SampledBatch sample_batch(const SyntheticCorpus& corpus, std::size_t p, std::size_t k,
                                 std::mt19937_64& rng) {
  const std::vector<int> train_classes = corpus.class_ids_of_split(Split::Train);
  if (train_classes.size() < p) {
    throw config_error("sample_batch: corpus has " + std::to_string(train_classes.size()) +
                       " train classes, batch needs " + std::to_string(p));
  }
  // Utterance indices per class, in corpus order.
  std::unordered_map<int, std::vector<std::size_t>> utts_of;
  for (std::size_t i : corpus.split_indices(Split::Train)) {
    utts_of[corpus.utterances[i].class_id].push_back(i);
  }

  // Partial Fisher-Yates over a copy: first p entries are the chosen classes.
  std::vector<int> pool = train_classes;
  SampledBatch out;
  for (std::size_t i = 0; i < p; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    const int cid = pool[i];
    auto& utts = utts_of[cid];
    if (utts.size() < k) {
      throw config_error("sample_batch: class " + std::to_string(cid) + " has " +
                         std::to_string(utts.size()) + " utterances, batch needs " +
                         std::to_string(k));
    }
    std::vector<std::size_t> upool = utts;
    for (std::size_t j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> upick(j, upool.size() - 1);
      std::swap(upool[j], upool[upick(rng)]);
      out.utterance_indices.push_back(upool[j]);
      out.class_ids.push_back(cid);
    }
  }
  return out;
}

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_csv;
  std::size_t epochs_run = 0;
  double final_dev_ap = 0.0;
  double final_dev_eer = 1.0;
};

struct TrainSession {
  const SyntheticCorpus* corpus = nullptr;
  TrainConfig config;
  AcousticEncoderConfig acoustic_config;
  TextEncoderConfig text_config;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  std::string config_echo;  // embedded verbatim in checkpoints
};

namespace trainer_detail {

struct Model {
  ToyAcousticEncoder acoustic;
  ToyTextEncoder text;
  AdaMSTable adams;
};

struct OptimizerState {
  AdamWMoments acoustic, text, adams;
};

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void append_params(CheckpointData& ckpt, const std::string& prefix, const ParamSet& ps) {
  for (const auto& b : ps.blocks()) {
    CheckpointArray arr;
    arr.name = prefix + "." + b.name;
    arr.shape = b.shape;
    arr.data = b.value;
    ckpt.arrays.push_back(std::move(arr));
  }
}

inline void append_flat(CheckpointData& ckpt, const std::string& name,
                        const std::vector<double>& data) {
  CheckpointArray arr;
  arr.name = name;
  arr.shape = {data.size()};
  arr.data = data;
  ckpt.arrays.push_back(std::move(arr));
}

inline CheckpointData make_checkpoint(const Model& m, const OptimizerState& opt,
                                      std::size_t epoch, std::size_t global_step,
                                      const std::string& rng_state,
                                      const std::string& config_echo, bool include_adams) {
  CheckpointData ckpt;
  ckpt.epoch = epoch;
  ckpt.global_step = global_step;
  ckpt.rng_state = rng_state;
  ckpt.config_echo = config_echo;
  append_params(ckpt, "acoustic", m.acoustic.params());
  append_params(ckpt, "text", m.text.params());
  if (include_adams) {
    append_flat(ckpt, "adams.log_alpha", m.adams.log_alpha);
    append_flat(ckpt, "adams.log_beta", m.adams.log_beta);
    append_flat(ckpt, "adams.lambda", m.adams.lambda);
    std::vector<double> ids(m.adams.class_ids.begin(), m.adams.class_ids.end());
    append_flat(ckpt, "adams.class_ids", ids);
  }
  append_flat(ckpt, "opt.acoustic.m", opt.acoustic.m);
  append_flat(ckpt, "opt.acoustic.v", opt.acoustic.v);
  append_flat(ckpt, "opt.text.m", opt.text.m);
  append_flat(ckpt, "opt.text.v", opt.text.v);
  append_flat(ckpt, "opt.adams.m", opt.adams.m);
  append_flat(ckpt, "opt.adams.v", opt.adams.v);
  return ckpt;
}

inline void restore_params(const CheckpointData& ckpt, const std::string& prefix, ParamSet& ps) {
  std::vector<double> flat;
  flat.reserve(ps.total_size());
  for (const auto& b : ps.blocks()) {
    const CheckpointArray& arr = ckpt.find(prefix + "." + b.name);
    if (arr.data.size() != b.value.size()) {
      throw io_error("checkpoint array " + prefix + "." + b.name + " has wrong size");
    }
    flat.insert(flat.end(), arr.data.begin(), arr.data.end());
  }
  ps.set_values(flat);
}

inline std::vector<double> required_flat(const CheckpointData& ckpt, const std::string& name) {
  return ckpt.find(name).data;
}

}  // namespace trainer_detail

inline std::size_t steps_per_epoch(const SyntheticCorpus& corpus, const TrainConfig& cfg) {
  const std::size_t train_utts = corpus.split_indices(Split::Train).size();
  const std::size_t batch = cfg.classes_per_batch * cfg.utts_per_class;
  return (train_utts + batch - 1) / batch;
}

// Full training loop. Writes metrics.csv (one row per optimizer step; dev
// metrics filled on each epoch's last row), periodic + final checkpoints.
// Resuming appends to the existing metrics.csv so the finished file is
// byte-identical to an uninterrupted run.
inline TrainResult train(const TrainSession& session) {
  using namespace trainer_detail;
  if (session.corpus == nullptr) throw invalid_input_error("train: corpus is null");
  const SyntheticCorpus& corpus = *session.corpus;
  const TrainConfig& cfg = session.config;
  cfg.validate();
  if (session.acoustic_config.frame_dim != corpus.spec.frame_dim) {
    throw config_error("acoustic encoder frame_dim does not match corpus frame_dim");
  }
  if (session.text_config.input_dim != corpus.spec.phone_inventory) {
    throw config_error("text encoder input_dim does not match corpus phone inventory");
  }

  std::filesystem::create_directories(session.out_dir);
  const std::filesystem::path csv_path = session.out_dir / "metrics.csv";

  const bool use_adams = cfg.loss.p2p_variant == P2PVariant::AdamsLearnable;
  const std::vector<int> train_classes = corpus.class_ids_of_split(Split::Train);

  Model model{ToyAcousticEncoder(session.acoustic_config, cfg.seed),
              ToyTextEncoder(session.text_config, cfg.seed, corpus_class_features(corpus)),
              AdaMSTable::initialized(train_classes, cfg.loss.asyp)};
  OptimizerState opt;
  opt.acoustic.ensure_size(model.acoustic.params().total_size());
  opt.text.ensure_size(model.text.params().total_size());
  opt.adams.ensure_size(3 * model.adams.size());

  auto rng = make_engine(cfg.seed, {stream::batches});
  std::size_t start_epoch = 1;  // first epoch still to run
  std::size_t global_step = 0;

  if (session.resume_from) {
    const CheckpointData ckpt = load_checkpoint(*session.resume_from);
    restore_params(ckpt, "acoustic", model.acoustic.params());
    restore_params(ckpt, "text", model.text.params());
    if (use_adams) {
      model.adams.log_alpha = required_flat(ckpt, "adams.log_alpha");
      model.adams.log_beta = required_flat(ckpt, "adams.log_beta");
      model.adams.lambda = required_flat(ckpt, "adams.lambda");
      if (model.adams.log_alpha.size() != model.adams.size()) {
        throw io_error("checkpoint adams table size does not match corpus train classes");
      }
    }
    opt.acoustic.m = required_flat(ckpt, "opt.acoustic.m");
    opt.acoustic.v = required_flat(ckpt, "opt.acoustic.v");
    opt.text.m = required_flat(ckpt, "opt.text.m");
    opt.text.v = required_flat(ckpt, "opt.text.v");
    opt.adams.m = required_flat(ckpt, "opt.adams.m");
    opt.adams.v = required_flat(ckpt, "opt.adams.v");
    rng = deserialize_engine(ckpt.rng_state);
    start_epoch = ckpt.epoch + 1;
    global_step = ckpt.global_step;
  }

  // CSV: fresh runs write the header; resumed runs append.
  const bool append = session.resume_from.has_value() && std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw io_error("cannot open " + csv_path.string());
  csv.imbue(std::locale::classic());
  if (!append) {
    csv << "epoch,step,lr,loss_total,loss_p2p,loss_rpl_d,loss_rpl_a,loss_rpl_p,loss_pc,"
           "loss_mono,loss_triplet,dev_ap,dev_eer\n";
  }

  const std::size_t steps = steps_per_epoch(corpus, cfg);
  TrainResult result;
  result.metrics_csv = csv_path;

  auto write_checkpoint = [&](std::size_t epoch, const std::filesystem::path& path) {
    const CheckpointData ckpt = make_checkpoint(model, opt, epoch, global_step,
                                                serialize_engine(rng), session.config_echo,
                                                use_adams);
    save_checkpoint(path, ckpt);
  };

  // Zero-epoch contract: initial checkpoint only, empty metrics.
  if (cfg.epochs == 0 || start_epoch > cfg.epochs) {
    result.final_checkpoint = session.out_dir / "checkpoint_final.bin";
    write_checkpoint(start_epoch - 1, result.final_checkpoint);
    csv.flush();
    result.epochs_run = 0;
    return result;
  }

  const auto term_names = loss_term_names();
  for (std::size_t epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.lr_initial, epoch, cfg.lr_halving_period_epochs);
    const AdamWConfig step_cfg = cfg.adamw(lr);
    for (std::size_t step = 1; step <= steps; ++step) {
      const SampledBatch sb = sample_batch(corpus, cfg.classes_per_batch, cfg.utts_per_class, rng);
      const std::size_t n = sb.utterance_indices.size();
      const std::size_t d = session.acoustic_config.embedding_dim;

      LabeledEmbeddingBatch batch;
      batch.labels = sb.class_ids;
      batch.acoustic = Matrix(n, d);
      batch.text = Matrix(n, d);
      FrameBatch frames;
      std::vector<ToyAcousticEncoder::Cache> acaches(n);
      std::vector<double> emb;
      for (std::size_t r = 0; r < n; ++r) {
        const auto& utt = corpus.utterances[sb.utterance_indices[r]];
        Matrix logits;
        acaches[r] = model.acoustic.encode(utt.frames, emb, logits);
        std::copy(emb.begin(), emb.end(), batch.acoustic.row(r).begin());
        frames.logits.push_back(std::move(logits));
        frames.labels.push_back(utt.frame_phone_labels);
      }
      // One text encode per distinct class; identical rows per the batch invariant.
      std::vector<int> batch_classes;
      std::vector<ToyTextEncoder::Cache> tcaches;
      std::unordered_map<int, std::size_t> class_row;
      for (std::size_t r = 0; r < n; ++r) {
        const int cid = batch.labels[r];
        auto it = class_row.find(cid);
        if (it == class_row.end()) {
          tcaches.emplace_back();
          const std::vector<double> te = model.text.encode(cid, &tcaches.back());
          class_row.emplace(cid, batch_classes.size());
          batch_classes.push_back(cid);
          std::copy(te.begin(), te.end(), batch.text.row(r).begin());
        } else {
          // Copy the earlier row bit-for-bit.
          const std::size_t first = [&] {
            for (std::size_t q = 0; q < r; ++q) {
              if (batch.labels[q] == cid) return q;
            }
            return r;
          }();
          const auto src = batch.text.row(first);
          std::copy(src.begin(), src.end(), batch.text.row(r).begin());
        }
      }

      const CombinedLossOutput out =
          combined_loss(batch, &frames, cfg.loss, use_adams ? &model.adams : nullptr);
      if (!std::isfinite(out.value)) {
        csv.flush();
        throw training_abort("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + "; last good checkpoint retained");
      }

      model.acoustic.params().zero_grads();
      model.text.params().zero_grads();
      for (std::size_t r = 0; r < n; ++r) {
        // grad_logits is empty when the mono term is inactive.
        const Matrix* d_logits = out.grad_logits.empty() ? nullptr : &out.grad_logits[r];
        model.acoustic.backward(acaches[r], out.grad_acoustic.row(r), d_logits);
      }
      for (std::size_t ci = 0; ci < batch_classes.size(); ++ci) {
        const int cid = batch_classes[ci];
        std::vector<double> g(d, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
          if (batch.labels[r] == cid) axpy(1.0, out.grad_text.row(r), g);
        }
        model.text.backward(tcaches[ci], g);
      }

      ++global_step;
      {
        std::vector<double> values = model.acoustic.params().flatten_values();
        const std::vector<double> grads = model.acoustic.params().flatten_grads();
        optimizer_step(values, grads, opt.acoustic, global_step, step_cfg, "acoustic");
        model.acoustic.params().set_values(values);
      }
      {
        std::vector<double> values = model.text.params().flatten_values();
        const std::vector<double> grads = model.text.params().flatten_grads();
        optimizer_step(values, grads, opt.text, global_step, step_cfg, "text");
        model.text.params().set_values(values);
      }
      if (use_adams) {
        std::vector<double> values = model.adams.flatten();
        std::vector<double> grads(values.size(), 0.0);
        const std::size_t k = model.adams.size();
        auto accumulate = [&](const char* key, std::size_t offset) {
          auto it = out.grad_params.find(key);
          if (it == out.grad_params.end()) return;
          for (std::size_t r = 0; r < k; ++r) grads[offset + r] = it->second[r];
        };
        accumulate(kGradLogAlpha, 0);
        accumulate(kGradLogBeta, k);
        accumulate(kGradLambda, 2 * k);
        optimizer_step(values, grads, opt.adams, global_step, step_cfg, "adams");
        model.adams.set_flat(values);
      }

      csv << epoch << ',' << global_step << ',' << format_value(lr) << ','
          << format_value(out.value);
      for (const std::string& name : term_names) {
        csv << ',' << format_value(out.term_values.at(name));
      }
      if (step == steps) {
        const EvalReport dev =
            evaluate_split(corpus, model.acoustic, model.text, Split::Dev, cfg.dev_pairs_pos,
                           cfg.dev_pairs_neg, mix_seed(cfg.seed, {stream::dev_eval, epoch}));
        result.final_dev_ap = dev.ap;
        result.final_dev_eer = dev.eer;
        csv << ',' << format_value(dev.ap) << ',' << format_value(dev.eer) << '\n';
      } else {
        csv << ",,\n";
      }
    }

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04zu.bin", epoch);
      write_checkpoint(epoch, session.out_dir / name);
    }
    result.epochs_run = epoch - start_epoch + 1;
  }

  csv.flush();
  if (!csv) throw io_error("failed writing " + csv_path.string());
  result.final_checkpoint = session.out_dir / "checkpoint_final.bin";
  write_checkpoint(cfg.epochs, result.final_checkpoint);
  return result;
}

// Rebuilds encoders from a checkpoint for evaluation.
struct LoadedModel {
  ToyAcousticEncoder acoustic;
  ToyTextEncoder text;
  CheckpointData checkpoint;
};

inline LoadedModel load_model(const std::filesystem::path& checkpoint_path,
                              const SyntheticCorpus& corpus,
                              const AcousticEncoderConfig& acfg, const TextEncoderConfig& tcfg) {
  CheckpointData ckpt = load_checkpoint(checkpoint_path);
  LoadedModel m{ToyAcousticEncoder(acfg, 0),
                ToyTextEncoder(tcfg, 0, corpus_class_features(corpus)), std::move(ckpt)};
  trainer_detail::restore_params(m.checkpoint, "acoustic", m.acoustic.params());
  trainer_detail::restore_params(m.checkpoint, "text", m.text.params());
  return m;
}

}  // namespace relprox
