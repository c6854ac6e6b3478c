#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cantus/error.hpp"
#include "cantus/tensor.hpp"

namespace cantus {

/// Ordered name -> tensor registry; the checkpoint directory of a model.
template <typename T>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  void add(const std::string& name, const Tensor<T>& t) { items.emplace_back(name, t); }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
};

/// Optional stochastic-regularization context threaded through forward passes.
template <typename T>
struct DropoutCtx {
  T rate = T(0);
  std::mt19937_64* rng = nullptr;

  Tensor<T> apply(const Tensor<T>& x) const {
    if (rate <= T(0) || rng == nullptr) return x;
    return dropout(x, rate, *rng);
  }
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  /// init_std < 0 selects Xavier initialization from the fan dims.
  Linear(int in, int out, std::mt19937_64& rng, T init_std = T(-1)) {
    T std = init_std >= T(0) ? init_std : std::sqrt(T(2) / static_cast<T>(in + out));
    weight_ = Tensor<T>::randn({in, out}, rng, std, true);
    bias_ = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight_), bias_); }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    map.add(prefix + ".weight", weight_);
    map.add(prefix + ".bias", bias_);
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  LayerNormParams() = default;
  explicit LayerNormParams(int d)
      : gamma(Tensor<T>::filled({d}, T(1), true)), beta(Tensor<T>::zeros({d}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    map.add(prefix + ".gamma", gamma);
    map.add(prefix + ".beta", beta);
  }
};

/// softmax(Q K^T / sqrt(d) + mask) V over the trailing two axes.
/// Masked positions carry -inf and never receive attention weight.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const Tensor<T>& mask = {}) {
  int d = q.dim(q.ndim() - 1);
  if (k.dim(k.ndim() - 1) != d) throw ShapeMismatch("attention Q/K depth mismatch");
  if (k.dim(k.ndim() - 2) != v.dim(v.ndim() - 2)) throw ShapeMismatch("attention K/V length mismatch");
  Tensor<T> scores = matmul_nt(q, k);
  Tensor<T> probs = scaled_masked_softmax(scores, mask, T(1) / std::sqrt(static_cast<T>(d)));
  return matmul(probs, v);
}

/// Standard multi-head attention: head split, per-head scaled dot attention,
/// concat, output projection. Self-attention when kv_in == query_in,
/// cross-attention otherwise.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int heads, std::mt19937_64& rng) : d_model_(d_model), heads_(heads) {
    if (heads <= 0 || d_model % heads != 0)
      throw ShapeMismatch("d_model " + std::to_string(d_model) + " not divisible by heads " +
                          std::to_string(heads));
    wq_ = Linear<T>(d_model, d_model, rng);
    wk_ = Linear<T>(d_model, d_model, rng);
    wv_ = Linear<T>(d_model, d_model, rng);
    wo_ = Linear<T>(d_model, d_model, rng);
  }

  /// query_in: (B, L, D); kv_in: (B, S, D); mask broadcastable to (B, H, L, S).
  Tensor<T> operator()(const Tensor<T>& query_in, const Tensor<T>& kv_in,
                       const Tensor<T>& mask = {}) const {
    int batch = query_in.dim(0);
    int len_q = query_in.dim(1);
    int len_kv = kv_in.dim(1);
    int dh = d_model_ / heads_;

    auto split = [&](const Tensor<T>& t, int len) {
      return transpose(reshape(t, {batch, len, heads_, dh}), 1, 2);  // (B, H, len, dh)
    };
    Tensor<T> q = split(wq_(query_in), len_q);
    Tensor<T> k = split(wk_(kv_in), len_kv);
    Tensor<T> v = split(wv_(kv_in), len_kv);

    Tensor<T> ctx = scaled_dot_attention(q, k, v, mask);          // (B, H, L, dh)
    ctx = reshape(transpose(ctx, 1, 2), {batch, len_q, d_model_});  // (B, L, D)
    return wo_(ctx);
  }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    wq_.register_params(map, prefix + ".wq");
    wk_.register_params(map, prefix + ".wk");
    wv_.register_params(map, prefix + ".wv");
    wo_.register_params(map, prefix + ".wo");
  }

  int heads() const { return heads_; }

 private:
  int d_model_ = 0;
  int heads_ = 0;
  Linear<T> wq_, wk_, wv_, wo_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int d_model, int hidden, std::mt19937_64& rng)
      : w1_(d_model, hidden, rng), w2_(hidden, d_model, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return w2_(relu(w1_(x))); }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    w1_.register_params(map, prefix + ".w1");
    w2_.register_params(map, prefix + ".w2");
  }

 private:
  Linear<T> w1_, w2_;
};

/// Pre-norm encoder layer: x + SelfAttn(LN(x)), then x + FF(LN(x)).
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(int d_model, int heads, int ff_hidden, std::mt19937_64& rng)
      : ln1_(d_model), ln2_(d_model), attn_(d_model, heads, rng), ff_(d_model, ff_hidden, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& mask,
                       const DropoutCtx<T>& drop = {}) const {
    Tensor<T> h = ln1_(x);
    Tensor<T> y = add(x, drop.apply(attn_(h, h, mask)));
    return add(y, drop.apply(ff_(ln2_(y))));
  }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    ln1_.register_params(map, prefix + ".ln1");
    ln2_.register_params(map, prefix + ".ln2");
    attn_.register_params(map, prefix + ".self_attn");
    ff_.register_params(map, prefix + ".ff");
  }

 private:
  LayerNormParams<T> ln1_, ln2_;
  MultiHeadAttention<T> attn_;
  FeedForward<T> ff_;
};

/// Pre-norm decoder layer: causal self-attention, optional cross-attention
/// over memory, position-wise feed-forward; residual adds throughout.
template <typename T>
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(int d_model, int heads, int ff_hidden, bool with_memory, std::mt19937_64& rng)
      : with_memory_(with_memory),
        ln1_(d_model),
        ln3_(d_model),
        self_attn_(d_model, heads, rng),
        ff_(d_model, ff_hidden, rng) {
    if (with_memory_) {
      ln2_ = LayerNormParams<T>(d_model);
      cross_attn_ = MultiHeadAttention<T>(d_model, heads, rng);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& causal_mask, const Tensor<T>& memory,
                       const Tensor<T>& memory_mask, const DropoutCtx<T>& drop = {}) const {
    Tensor<T> h = ln1_(x);
    Tensor<T> y = add(x, drop.apply(self_attn_(h, h, causal_mask)));
    if (with_memory_ && memory.defined())
      y = add(y, drop.apply(cross_attn_(ln2_(y), memory, memory_mask)));
    return add(y, drop.apply(ff_(ln3_(y))));
  }

  bool with_memory() const { return with_memory_; }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    ln1_.register_params(map, prefix + ".ln1");
    self_attn_.register_params(map, prefix + ".self_attn");
    if (with_memory_) {
      ln2_.register_params(map, prefix + ".ln2");
      cross_attn_.register_params(map, prefix + ".cross_attn");
    }
    ln3_.register_params(map, prefix + ".ln3");
    ff_.register_params(map, prefix + ".ff");
  }

 private:
  bool with_memory_ = false;
  LayerNormParams<T> ln1_, ln2_, ln3_;
  MultiHeadAttention<T> self_attn_, cross_attn_;
  FeedForward<T> ff_;
};

/// Sinusoidal positional encodings, (max_len, d), constant.
template <typename T>
Tensor<T> sinusoidal_positions(int max_len, int d) {
  Tensor<T> pe = Tensor<T>::zeros({max_len, d});
  auto data = pe.data();
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      data[static_cast<std::size_t>(pos) * d + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < d)
        data[static_cast<std::size_t>(pos) * d + i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

/// Causal mask (L, L): 0 at or below the diagonal, -inf above.
template <typename T>
Tensor<T> causal_mask(int len) {
  Tensor<T> m = Tensor<T>::zeros({len, len});
  auto data = m.data();
  T ninf = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) data[static_cast<std::size_t>(i) * len + j] = ninf;
  return m;
}

/// Key-padding mask (B, 1, 1, S): 0 where the key position is real,
/// -inf where it is padding.
template <typename T>
Tensor<T> padding_mask(const std::vector<int>& lengths, int padded_len) {
  int batch = static_cast<int>(lengths.size());
  Tensor<T> m = Tensor<T>::zeros({batch, 1, 1, padded_len});
  auto data = m.data();
  T ninf = -std::numeric_limits<T>::infinity();
  for (int b = 0; b < batch; ++b)
    for (int j = lengths[static_cast<std::size_t>(b)]; j < padded_len; ++j)
      data[static_cast<std::size_t>(b) * padded_len + j] = ninf;
  return m;
}

/// Token embedding scaled by sqrt(d) plus sinusoidal positions.
template <typename T>
class TokenEmbedding {
 public:
  TokenEmbedding() = default;
  TokenEmbedding(int vocab, int d_model, int max_len, std::mt19937_64& rng)
      : d_model_(d_model),
        weight_(Tensor<T>::randn({vocab, d_model}, rng, T(0.02), true)),
        positions_(sinusoidal_positions<T>(max_len, d_model)) {}

  /// ids laid out row-major as (batch, len).
  Tensor<T> operator()(const std::vector<int>& ids, int batch, int len) const {
    Tensor<T> emb = embedding(weight_, ids, {batch, len});
    emb = scale(emb, std::sqrt(static_cast<T>(d_model_)));
    Tensor<T> pos_slice = Tensor<T>::from_data(
        {len, d_model_}, {positions_.data().begin(),
                          positions_.data().begin() + static_cast<std::size_t>(len) * d_model_});
    return add(emb, pos_slice);
  }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    map.add(prefix + ".weight", weight_);
  }

  int vocab() const { return weight_.dim(0); }

 private:
  int d_model_ = 0;
  Tensor<T> weight_;
  Tensor<T> positions_;
};

/// Chord-progression encoder: embeddings, self-attention encoder layers,
/// final norm. Produces the conditioning memory.
template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(int vocab, int d_model, int heads, int num_layers, int ff_hidden, int max_len,
                     std::mt19937_64& rng)
      : embed_(vocab, d_model, max_len, rng), final_ln_(d_model) {
    for (int i = 0; i < num_layers; ++i) layers_.emplace_back(d_model, heads, ff_hidden, rng);
  }

  /// ids: (batch, len) row-major; pad_mask: (B,1,1,len) or undefined.
  Tensor<T> operator()(const std::vector<int>& ids, int batch, int len, const Tensor<T>& pad_mask,
                       const DropoutCtx<T>& drop = {}) const {
    Tensor<T> x = drop.apply(embed_(ids, batch, len));
    for (const auto& layer : layers_) x = layer(x, pad_mask, drop);
    return final_ln_(x);
  }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    embed_.register_params(map, prefix + ".tok_emb");
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].register_params(map, prefix + ".layer" + std::to_string(i));
    final_ln_.register_params(map, prefix + ".final_ln");
  }

  int num_layers() const { return static_cast<int>(layers_.size()); }

 private:
  TokenEmbedding<T> embed_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNormParams<T> final_ln_;
};

/// REMI decoder stack with a logits head. Memoryless decoders (no chord
/// conditioning) carry no cross-attention parameters at all.
template <typename T>
class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(int vocab, int d_model, int heads, int num_layers, int ff_hidden, int max_len,
                     bool with_memory, std::mt19937_64& rng)
      : with_memory_(with_memory),
        embed_(vocab, d_model, max_len, rng),
        final_ln_(d_model),
        logits_(d_model, vocab, rng, T(0.02)) {
    for (int i = 0; i < num_layers; ++i)
      layers_.emplace_back(d_model, heads, ff_hidden, with_memory, rng);
  }

  /// Teacher-forced forward: ids (batch, len) -> logits (batch, len, vocab).
  Tensor<T> operator()(const std::vector<int>& ids, int batch, int len, const Tensor<T>& memory = {},
                       const Tensor<T>& memory_mask = {}, const DropoutCtx<T>& drop = {}) const {
    Tensor<T> x = drop.apply(embed_(ids, batch, len));
    Tensor<T> causal = causal_mask<T>(len);
    for (const auto& layer : layers_) x = layer(x, causal, memory, memory_mask, drop);
    return logits_(final_ln_(x));
  }

  /// Embedding view of a token sequence, used when a generated line becomes
  /// another decoder's conditioning memory.
  Tensor<T> embed_sequence(const std::vector<int>& ids, int batch, int len) const {
    return embed_(ids, batch, len);
  }

  void register_params(ParamMap<T>& map, const std::string& prefix) const {
    embed_.register_params(map, prefix + ".tok_emb");
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].register_params(map, prefix + ".layer" + std::to_string(i));
    final_ln_.register_params(map, prefix + ".final_ln");
    logits_.register_params(map, prefix + ".logits");
  }

  bool with_memory() const { return with_memory_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  int vocab() const { return embed_.vocab(); }

 private:
  bool with_memory_ = false;
  TokenEmbedding<T> embed_;
  std::vector<DecoderLayer<T>> layers_;
  LayerNormParams<T> final_ln_;
  Linear<T> logits_;
};

// ---------------------------------------------------------------------------
// optimization

/// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Tensor<T>> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  void step(T lr) {
    ++step_count_;
    T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_count_));
    T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto value = params_[i].data();
      auto grad = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        T g = grad[j];
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
        T mhat = m[j] / bc1;
        T vhat = v[j] / bc2;
        value[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long step_count() const { return step_count_; }
  void set_step_count(long n) { step_count_ = n; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  long step_count_ = 0;
  T beta1_ = T(0.9);
  T beta2_ = T(0.999);
  T eps_ = T(1e-8);
};

/// Linear warmup to base_lr, then constant.
struct LrSchedule {
  double base_lr = 1e-4;
  int warmup_steps = 1000;

  double at(long step) const {
    if (warmup_steps <= 0) return base_lr;
    double frac = static_cast<double>(step) / warmup_steps;
    return base_lr * std::min(1.0, frac);
  }
};

}  // namespace cantus
