#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "relprox/encoders.hpp"
#include "relprox/synth.hpp"
#include "relprox/trainer.hpp"

namespace relprox {

// Whole-experiment configuration: corpus, encoders, training, loss, and
// evaluation. Parsing is strict (unknown keys rejected by name) and every
// field has a default, so {} is a complete valid config.
struct ExperimentConfig {
  SyntheticCorpusSpec corpus;
  AcousticEncoderConfig acoustic;  // frame_dim / phone_count follow the corpus
  TextEncoderConfig text;          // input_dim follows the corpus
  TrainConfig train;
  std::size_t eval_n_pos = 10000;
  std::size_t eval_n_neg = 100000;
  std::string out_dir = "runs/default";
  bool deterministic = true;

  void validate() const {
    corpus.validate();
    acoustic.validate();
    text.validate();
    train.validate();
    if (acoustic.embedding_dim != text.embedding_dim) {
      throw config_error("acoustic and text embedding_dim must match");
    }
    if (eval_n_pos < 1 || eval_n_neg < 1) throw config_error("eval pair counts must be >= 1");
  }
};

namespace config_detail {

using nlohmann::json;

inline void require_object(const json& j, const std::string& context) {
  if (!j.is_object()) throw config_error(context + " must be an object");
}

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& context) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw config_error("unknown " + context + " key: " + key);
  }
}

template <typename T>
T read_field(const json& j, const char* key, T fallback, const std::string& context) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(context + "." + key + " has the wrong type");
  }
}

inline LossWeights weights_from_json(const json& j) {
  require_object(j, "loss.weights");
  reject_unknown(j, {"p2p", "rpl_d", "rpl_a", "rpl_p", "pc", "mono", "triplet"}, "loss.weights");
  LossWeights w;
  w.p2p = read_field(j, "p2p", w.p2p, "loss.weights");
  w.rpl_d = read_field(j, "rpl_d", w.rpl_d, "loss.weights");
  w.rpl_a = read_field(j, "rpl_a", w.rpl_a, "loss.weights");
  w.rpl_p = read_field(j, "rpl_p", w.rpl_p, "loss.weights");
  w.pc = read_field(j, "pc", w.pc, "loss.weights");
  w.mono = read_field(j, "mono", w.mono, "loss.weights");
  w.triplet = read_field(j, "triplet", w.triplet, "loss.weights");
  return w;
}

inline CombinedLossConfig loss_from_json(const json& j) {
  require_object(j, "loss");
  reject_unknown(j,
                 {"weights", "p2p_variant", "asyp", "huber_delta", "normalize_embeddings",
                  "triplet_margin", "mu_gradient", "rpl_p_normalizer", "tuple_sampling"},
                 "loss");
  CombinedLossConfig c;
  c.weights.p2p = 1.0;  // default: point-to-point training enabled
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
  const std::string variant = read_field<std::string>(j, "p2p_variant", "adams", "loss");
  if (variant == "adams") {
    c.p2p_variant = P2PVariant::AdamsLearnable;
  } else if (variant == "asyp") {
    c.p2p_variant = P2PVariant::AsypFixed;
  } else {
    throw config_error("loss.p2p_variant must be \"adams\" or \"asyp\"");
  }
  if (j.contains("asyp")) {
    const json& a = j.at("asyp");
    require_object(a, "loss.asyp");
    reject_unknown(a, {"alpha", "beta", "lambda"}, "loss.asyp");
    c.asyp.alpha = read_field(a, "alpha", c.asyp.alpha, "loss.asyp");
    c.asyp.beta = read_field(a, "beta", c.asyp.beta, "loss.asyp");
    c.asyp.lambda = read_field(a, "lambda", c.asyp.lambda, "loss.asyp");
  }
  c.huber.delta = read_field(j, "huber_delta", c.huber.delta, "loss");
  c.normalize_embeddings =
      read_field(j, "normalize_embeddings", c.normalize_embeddings, "loss");
  c.triplet_margin = read_field(j, "triplet_margin", c.triplet_margin, "loss");
  const std::string mu = read_field<std::string>(j, "mu_gradient", "constant", "loss");
  if (mu == "constant") {
    c.mu_mode = MuGradMode::Constant;
  } else if (mu == "differentiate") {
    c.mu_mode = MuGradMode::Differentiate;
  } else {
    throw config_error("loss.mu_gradient must be \"constant\" or \"differentiate\"");
  }
  const std::string norm =
      read_field<std::string>(j, "rpl_p_normalizer", "pairwise_mean", "loss");
  if (norm == "pairwise_mean") {
    c.rpl_p_normalizer = RplPNormalizer::PairwiseMean;
  } else if (norm == "centroid_mean") {
    c.rpl_p_normalizer = RplPNormalizer::CentroidMean;
  } else {
    throw config_error("loss.rpl_p_normalizer must be \"pairwise_mean\" or \"centroid_mean\"");
  }
  if (j.contains("tuple_sampling")) {
    const json& t = j.at("tuple_sampling");
    require_object(t, "loss.tuple_sampling");
    reject_unknown(t, {"count", "seed"}, "loss.tuple_sampling");
    c.tuple_sampling.count = read_field<std::size_t>(t, "count", 0, "loss.tuple_sampling");
    c.tuple_sampling.seed = read_field<std::uint64_t>(t, "seed", 0, "loss.tuple_sampling");
    // count == 0 keeps exhaustive enumeration; a positive count caps it.
    c.tuple_sampling.mode = c.tuple_sampling.count > 0 ? TupleSamplingMode::Subsample
                                                       : TupleSamplingMode::Exhaustive;
  }
  return c;
}

inline TrainConfig train_from_json(const json& j) {
  require_object(j, "train");
  reject_unknown(j,
                 {"classes_per_batch", "utterances_per_class", "lr_initial",
                  "lr_halving_period_epochs", "weight_decay", "epochs", "adam_beta1",
                  "adam_beta2", "adam_epsilon", "seed", "checkpoint_every", "dev_pairs_pos",
                  "dev_pairs_neg"},
                 "train");
  TrainConfig t;
  t.classes_per_batch = read_field(j, "classes_per_batch", t.classes_per_batch, "train");
  t.utts_per_class = read_field(j, "utterances_per_class", t.utts_per_class, "train");
  t.lr_initial = read_field(j, "lr_initial", t.lr_initial, "train");
  t.lr_halving_period_epochs =
      read_field(j, "lr_halving_period_epochs", t.lr_halving_period_epochs, "train");
  t.weight_decay = read_field(j, "weight_decay", t.weight_decay, "train");
  t.epochs = read_field(j, "epochs", t.epochs, "train");
  t.adam_beta1 = read_field(j, "adam_beta1", t.adam_beta1, "train");
  t.adam_beta2 = read_field(j, "adam_beta2", t.adam_beta2, "train");
  t.adam_epsilon = read_field(j, "adam_epsilon", t.adam_epsilon, "train");
  t.seed = read_field(j, "seed", t.seed, "train");
  t.checkpoint_every = read_field(j, "checkpoint_every", t.checkpoint_every, "train");
  t.dev_pairs_pos = read_field(j, "dev_pairs_pos", t.dev_pairs_pos, "train");
  t.dev_pairs_neg = read_field(j, "dev_pairs_neg", t.dev_pairs_neg, "train");
  return t;
}

}  // namespace config_detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  require_object(j, "config");
  reject_unknown(j, {"corpus", "model", "train", "loss", "eval", "out_dir", "deterministic"},
                 "config");
  ExperimentConfig c;
  if (j.contains("corpus")) c.corpus = corpus_spec_from_json(j.at("corpus"));
  if (j.contains("model")) {
    const json& m = j.at("model");
    require_object(m, "model");
    reject_unknown(m, {"hidden_dim", "hidden_layers", "embedding_dim"}, "model");
    c.acoustic.hidden_dim = read_field(m, "hidden_dim", c.acoustic.hidden_dim, "model");
    c.acoustic.hidden_layers = read_field(m, "hidden_layers", c.acoustic.hidden_layers, "model");
    c.acoustic.embedding_dim = read_field(m, "embedding_dim", c.acoustic.embedding_dim, "model");
    c.text.hidden_dim = c.acoustic.hidden_dim;
    c.text.hidden_layers = c.acoustic.hidden_layers;
    c.text.embedding_dim = c.acoustic.embedding_dim;
  }
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  c.train.loss.weights.p2p = 1.0;  // same default as loss_from_json
  if (j.contains("loss")) c.train.loss = loss_from_json(j.at("loss"));
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    require_object(e, "eval");
    reject_unknown(e, {"n_pos", "n_neg"}, "eval");
    c.eval_n_pos = read_field(e, "n_pos", c.eval_n_pos, "eval");
    c.eval_n_neg = read_field(e, "n_neg", c.eval_n_neg, "eval");
  }
  c.out_dir = read_field<std::string>(j, "out_dir", c.out_dir, "config");
  c.deterministic = read_field(j, "deterministic", c.deterministic, "config");

  // Dimensions tied to the corpus, not separately configurable.
  c.acoustic.frame_dim = c.corpus.frame_dim;
  c.acoustic.phone_count = c.corpus.phone_inventory;
  c.text.input_dim = c.corpus.phone_inventory;
  c.validate();
  return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["corpus"] = {{"num_classes", c.corpus.num_classes},
                 {"held_out_classes", c.corpus.held_out_classes},
                 {"latent_dim", c.corpus.latent_dim},
                 {"frame_dim", c.corpus.frame_dim},
                 {"frames_min", c.corpus.frames_min},
                 {"frames_max", c.corpus.frames_max},
                 {"noise_sigma", c.corpus.noise_sigma},
                 {"phones_min", c.corpus.phones_min},
                 {"phones_max", c.corpus.phones_max},
                 {"phone_inventory", c.corpus.phone_inventory},
                 {"utterances_per_class", c.corpus.utterances_per_class},
                 {"seed", c.corpus.seed}};
  j["model"] = {{"hidden_dim", c.acoustic.hidden_dim},
                {"hidden_layers", c.acoustic.hidden_layers},
                {"embedding_dim", c.acoustic.embedding_dim}};
  j["train"] = {{"classes_per_batch", c.train.classes_per_batch},
                {"utterances_per_class", c.train.utts_per_class},
                {"lr_initial", c.train.lr_initial},
                {"lr_halving_period_epochs", c.train.lr_halving_period_epochs},
                {"weight_decay", c.train.weight_decay},
                {"epochs", c.train.epochs},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_epsilon", c.train.adam_epsilon},
                {"seed", c.train.seed},
                {"checkpoint_every", c.train.checkpoint_every},
                {"dev_pairs_pos", c.train.dev_pairs_pos},
                {"dev_pairs_neg", c.train.dev_pairs_neg}};
  const CombinedLossConfig& l = c.train.loss;
  j["loss"] = {
      {"weights",
       {{"p2p", l.weights.p2p},
        {"rpl_d", l.weights.rpl_d},
        {"rpl_a", l.weights.rpl_a},
        {"rpl_p", l.weights.rpl_p},
        {"pc", l.weights.pc},
        {"mono", l.weights.mono},
        {"triplet", l.weights.triplet}}},
      {"p2p_variant", l.p2p_variant == P2PVariant::AdamsLearnable ? "adams" : "asyp"},
      {"asyp", {{"alpha", l.asyp.alpha}, {"beta", l.asyp.beta}, {"lambda", l.asyp.lambda}}},
      {"huber_delta", l.huber.delta},
      {"normalize_embeddings", l.normalize_embeddings},
      {"triplet_margin", l.triplet_margin},
      {"mu_gradient", l.mu_mode == MuGradMode::Constant ? "constant" : "differentiate"},
      {"rpl_p_normalizer",
       l.rpl_p_normalizer == RplPNormalizer::PairwiseMean ? "pairwise_mean" : "centroid_mean"},
      {"tuple_sampling",
       {{"count", l.tuple_sampling.count}, {"seed", l.tuple_sampling.seed}}}};
  j["eval"] = {{"n_pos", c.eval_n_pos}, {"n_neg", c.eval_n_neg}};
  j["out_dir"] = c.out_dir;
  j["deterministic"] = c.deterministic;
  return j;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config parse error in " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace relprox
