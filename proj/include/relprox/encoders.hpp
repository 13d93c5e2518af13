#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relprox/errors.hpp"
#include "relprox/matrix.hpp"
#include "relprox/rng.hpp"
#include "relprox/synth.hpp"

namespace relprox {

// Named parameter array with a parallel gradient buffer. Shapes use
// row-major (rows, cols) for weight matrices and (n) for biases.
struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : shape[0]; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : 1; }

  double& w(std::size_t r, std::size_t c) { return value[r * cols() + c]; }
  double w(std::size_t r, std::size_t c) const { return value[r * cols() + c]; }
  double& gw(std::size_t r, std::size_t c) { return grad[r * cols() + c]; }
};

class ParamSet {
 public:
  ParamBlock& add(std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    blocks_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0),
                       std::vector<double>(n, 0.0)});
    index_[blocks_.back().name] = blocks_.size() - 1;
    return blocks_.back();
  }

  ParamBlock& block(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw invalid_input_error("no parameter block " + name);
    return blocks_[it->second];
  }
  const ParamBlock& block(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw invalid_input_error("no parameter block " + name);
    return blocks_[it->second];
  }

  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.size();
    return n;
  }

  void zero_grads() {
    for (auto& b : blocks_) std::fill(b.grad.begin(), b.grad.end(), 0.0);
  }

  std::vector<double> flatten_values() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& b : blocks_) out.insert(out.end(), b.value.begin(), b.value.end());
    return out;
  }

  std::vector<double> flatten_grads() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& b : blocks_) out.insert(out.end(), b.grad.begin(), b.grad.end());
    return out;
  }

  void set_values(std::span<const double> flat) {
    if (flat.size() != total_size()) throw invalid_input_error("flat parameter size mismatch");
    std::size_t off = 0;
    for (auto& b : blocks_) {
      std::copy(flat.begin() + off, flat.begin() + off + b.size(), b.value.begin());
      off += b.size();
    }
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void glorot_init(ParamBlock& b, std::mt19937_64& eng) {
  if (b.shape.size() != 2) return;  // biases stay zero
  const double limit = std::sqrt(6.0 / static_cast<double>(b.shape[0] + b.shape[1]));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : b.value) v = dist(eng);
}

// y = W x + b for a (rows x cols) block.
inline void affine(const ParamBlock& w, const ParamBlock& b, std::span<const double> x,
                   std::span<double> y) {
  const std::size_t rows = w.shape[0];
  const std::size_t cols = w.shape[1];
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b.value[r];
    const double* wr = w.value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
}

// Backward of y = W x + b: accumulates dW += dy x^T, db += dy; writes dx.
inline void affine_backward(ParamBlock& w, ParamBlock& b, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dx) {
  const std::size_t rows = w.shape[0];
  const std::size_t cols = w.shape[1];
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    b.grad[r] += g;
    double* wg = w.grad.data() + r * cols;
    const double* wv = w.value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      wg[c] += g * x[c];
      if (!dx.empty()) dx[c] += wv[c] * g;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Toy acoustic encoder: per-frame tanh stack, mean pooling, affine projection
// to the embedding; an affine monophone head reads the pre-pooling frame
// features. Layer blocks: layer<i>.W/b, mono.W/b, out.W/b.

struct AcousticEncoderConfig {
  std::size_t frame_dim = 20;
  std::size_t hidden_dim = 32;
  std::size_t hidden_layers = 1;
  std::size_t embedding_dim = 16;
  std::size_t phone_count = 12;

  void validate() const {
    if (hidden_layers < 1) throw config_error("acoustic encoder: needs >= 1 hidden layer");
    if (frame_dim < 1 || hidden_dim < 1 || embedding_dim < 1 || phone_count < 1) {
      throw config_error("acoustic encoder: dimensions must be >= 1");
    }
  }
};

class ToyAcousticEncoder {
 public:
  ToyAcousticEncoder(const AcousticEncoderConfig& config, std::uint64_t seed)
      : config_(config) {
    config.validate();
    std::size_t in = config.frame_dim;
    for (std::size_t l = 0; l < config.hidden_layers; ++l) {
      params_.add("layer" + std::to_string(l) + ".W", {config.hidden_dim, in});
      params_.add("layer" + std::to_string(l) + ".b", {config.hidden_dim});
      in = config.hidden_dim;
    }
    params_.add("mono.W", {config.phone_count, config.hidden_dim});
    params_.add("mono.b", {config.phone_count});
    params_.add("out.W", {config.embedding_dim, config.hidden_dim});
    params_.add("out.b", {config.embedding_dim});
    auto eng = make_engine(seed, {stream::init_acoustic});
    for (auto& b : params_.blocks()) detail::glorot_init(b, eng);
  }

  struct Cache {
    const Matrix* frames = nullptr;
    std::vector<Matrix> hidden;        // per layer, T x hidden_dim (tanh outputs)
    std::vector<double> pooled;        // hidden_dim
  };

  // Forward pass: fills the D-dim embedding and the T x P monophone logits.
  Cache encode(const Matrix& frames, std::vector<double>& embedding, Matrix& logits) const {
    if (frames.cols() != config_.frame_dim) {
      throw invalid_input_error("acoustic encoder: frame_dim mismatch");
    }
    if (frames.rows() == 0) throw invalid_input_error("acoustic encoder: empty utterance");
    const std::size_t t_len = frames.rows();
    Cache cache;
    cache.frames = &frames;
    cache.hidden.resize(config_.hidden_layers);

    const Matrix* input = &frames;
    for (std::size_t l = 0; l < config_.hidden_layers; ++l) {
      const auto& w = params_.block("layer" + std::to_string(l) + ".W");
      const auto& b = params_.block("layer" + std::to_string(l) + ".b");
      cache.hidden[l] = Matrix(t_len, config_.hidden_dim);
      for (std::size_t t = 0; t < t_len; ++t) {
        detail::affine(w, b, input->row(t), cache.hidden[l].row(t));
        for (double& v : cache.hidden[l].row(t)) v = std::tanh(v);
      }
      input = &cache.hidden[l];
    }

    const Matrix& top = cache.hidden.back();
    const auto& wm = params_.block("mono.W");
    const auto& bm = params_.block("mono.b");
    logits = Matrix(t_len, config_.phone_count);
    for (std::size_t t = 0; t < t_len; ++t) detail::affine(wm, bm, top.row(t), logits.row(t));

    cache.pooled.assign(config_.hidden_dim, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) axpy(1.0, top.row(t), cache.pooled);
    scale(cache.pooled, 1.0 / static_cast<double>(t_len));

    embedding.resize(config_.embedding_dim);
    detail::affine(params_.block("out.W"), params_.block("out.b"), cache.pooled, embedding);
    return cache;
  }

  // Accumulates parameter gradients for one utterance. d_embedding is the
  // upstream gradient on the embedding; d_logits (optional) on the monophone
  // logits.
  void backward(const Cache& cache, std::span<const double> d_embedding,
                const Matrix* d_logits) {
    const std::size_t t_len = cache.frames->rows();
    const double inv_t = 1.0 / static_cast<double>(t_len);

    std::vector<double> d_pooled(config_.hidden_dim);
    detail::affine_backward(params_.block("out.W"), params_.block("out.b"), cache.pooled,
                            d_embedding, d_pooled);

    // Gradient flowing into the top hidden layer, per frame.
    Matrix d_top(t_len, config_.hidden_dim);
    for (std::size_t t = 0; t < t_len; ++t) {
      axpy(inv_t, d_pooled, d_top.row(t));
    }
    if (d_logits) {
      auto& wm = params_.block("mono.W");
      auto& bm = params_.block("mono.b");
      std::vector<double> dx(config_.hidden_dim);
      const Matrix& top = cache.hidden.back();
      for (std::size_t t = 0; t < t_len; ++t) {
        detail::affine_backward(wm, bm, top.row(t), d_logits->row(t), dx);
        axpy(1.0, dx, d_top.row(t));
      }
    }

    // Walk the tanh stack backwards.
    Matrix d_h = std::move(d_top);
    for (std::size_t l = config_.hidden_layers; l-- > 0;) {
      const Matrix& h = cache.hidden[l];
      const Matrix* below = l == 0 ? cache.frames : &cache.hidden[l - 1];
      auto& w = params_.block("layer" + std::to_string(l) + ".W");
      auto& b = params_.block("layer" + std::to_string(l) + ".b");
      Matrix d_below(below->rows(), below->cols());
      std::vector<double> d_pre(config_.hidden_dim);
      const bool need_below = l > 0;
      for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t c = 0; c < config_.hidden_dim; ++c) {
          const double hv = h(t, c);
          d_pre[c] = d_h(t, c) * (1.0 - hv * hv);
        }
        detail::affine_backward(w, b, below->row(t), d_pre,
                                need_below ? d_below.row(t) : std::span<double>{});
      }
      d_h = std::move(d_below);
    }
  }

  const AcousticEncoderConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  AcousticEncoderConfig config_;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// Toy text encoder: per-class input features -> tanh stack -> affine -> TE.
// The input feature of a class is its normalized phone histogram, a fixed
// function of the keyword's textual (phonetic) form. Every class id maps to
// exactly one feature vector, so equal ids always produce equal TEs; ids
// without a feature row are rejected. Evaluation-only classes have feature
// rows too (their textual form is known), while their acoustics never appear
// in training.

struct TextEncoderConfig {
  std::size_t input_dim = 12;  // phone inventory size
  std::size_t hidden_dim = 32;
  std::size_t hidden_layers = 1;
  std::size_t embedding_dim = 16;

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || embedding_dim < 1) {
      throw config_error("text encoder: dimensions must be >= 1");
    }
  }
};

class ToyTextEncoder {
 public:
  ToyTextEncoder(const TextEncoderConfig& config, std::uint64_t seed,
                 std::unordered_map<int, std::vector<double>> class_features)
      : config_(config), features_(std::move(class_features)) {
    config.validate();
    for (const auto& [id, f] : features_) {
      if (f.size() != config.input_dim) {
        throw invalid_input_error("text encoder: feature size mismatch for class " +
                                  std::to_string(id));
      }
    }
    std::size_t in = config.input_dim;
    for (std::size_t l = 0; l < config.hidden_layers; ++l) {
      params_.add("layer" + std::to_string(l) + ".W", {config.hidden_dim, in});
      params_.add("layer" + std::to_string(l) + ".b", {config.hidden_dim});
      in = config.hidden_dim;
    }
    params_.add("out.W", {config.embedding_dim, in});
    params_.add("out.b", {config.embedding_dim});
    auto eng = make_engine(seed, {stream::init_text});
    for (auto& b : params_.blocks()) detail::glorot_init(b, eng);
  }

  struct Cache {
    const std::vector<double>* input = nullptr;
    std::vector<std::vector<double>> hidden;  // tanh outputs per layer
  };

  std::vector<double> encode(int class_id, Cache* cache = nullptr) const {
    const auto it = features_.find(class_id);
    if (it == features_.end()) {
      throw invalid_input_error("text encoder: unknown class id " + std::to_string(class_id));
    }
    const std::vector<double>* input = &it->second;
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = input;
    c.hidden.resize(config_.hidden_layers);
    std::span<const double> x(*input);
    for (std::size_t l = 0; l < config_.hidden_layers; ++l) {
      c.hidden[l].assign(config_.hidden_dim, 0.0);
      detail::affine(params_.block("layer" + std::to_string(l) + ".W"),
                     params_.block("layer" + std::to_string(l) + ".b"), x, c.hidden[l]);
      for (double& v : c.hidden[l]) v = std::tanh(v);
      x = c.hidden[l];
    }
    std::vector<double> out(config_.embedding_dim);
    detail::affine(params_.block("out.W"), params_.block("out.b"), x, out);
    return out;
  }

  void backward(const Cache& cache, std::span<const double> d_embedding) {
    std::span<const double> top =
        config_.hidden_layers == 0 ? std::span<const double>(*cache.input)
                                   : std::span<const double>(cache.hidden.back());
    std::vector<double> d_x(top.size());
    detail::affine_backward(params_.block("out.W"), params_.block("out.b"), top, d_embedding,
                            d_x);
    for (std::size_t l = config_.hidden_layers; l-- > 0;) {
      const auto& h = cache.hidden[l];
      std::vector<double> d_pre(h.size());
      for (std::size_t c = 0; c < h.size(); ++c) d_pre[c] = d_x[c] * (1.0 - h[c] * h[c]);
      std::span<const double> below =
          l == 0 ? std::span<const double>(*cache.input) : std::span<const double>(cache.hidden[l - 1]);
      d_x.assign(below.size(), 0.0);
      detail::affine_backward(params_.block("layer" + std::to_string(l) + ".W"),
                              params_.block("layer" + std::to_string(l) + ".b"), below, d_pre,
                              d_x);
    }
  }

  bool knows(int class_id) const { return features_.count(class_id) > 0; }
  const TextEncoderConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  TextEncoderConfig config_;
  ParamSet params_;
  std::unordered_map<int, std::vector<double>> features_;
};

// Feature table for a corpus: class id -> normalized phone histogram.
inline std::unordered_map<int, std::vector<double>> corpus_class_features(
    const SyntheticCorpus& corpus) {
  std::unordered_map<int, std::vector<double>> out;
  for (const auto& c : corpus.classes) {
    out[c.id] = phone_histogram(c.phones, corpus.spec.phone_inventory);
  }
  return out;
}

// Free-function views matching the rest of the engine's style.
inline std::vector<double> encode_acoustic(const ToyAcousticEncoder& enc, const Matrix& frames,
                                           Matrix& logits_out) {
  std::vector<double> emb;
  enc.encode(frames, emb, logits_out);
  return emb;
}

inline std::vector<double> encode_text(const ToyTextEncoder& enc, int class_id) {
  return enc.encode(class_id);
}

}  // namespace relprox
