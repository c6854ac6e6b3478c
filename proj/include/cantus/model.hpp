#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cantus/dataset.hpp"
#include "cantus/error.hpp"
#include "cantus/nn.hpp"
#include "cantus/sampling.hpp"
#include "cantus/tensor.hpp"
#include "cantus/tokenizer.hpp"

namespace cantus {

struct InvalidConfig : UsageError {
  using UsageError::UsageError;
};
struct EmptyDataset : DataError {
  using DataError::DataError;
};

/// The five generation strategies.
enum class StrategyKind { NoChord, ChordIndependent, ChordBassFirst, ChordMelodyFirst, ChordCoGen };

constexpr StrategyKind kAllStrategies[] = {StrategyKind::NoChord, StrategyKind::ChordIndependent,
                                           StrategyKind::ChordBassFirst, StrategyKind::ChordMelodyFirst,
                                           StrategyKind::ChordCoGen};

inline const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::NoChord: return "no_chord";
    case StrategyKind::ChordIndependent: return "chord_independent";
    case StrategyKind::ChordBassFirst: return "chord_bass_first";
    case StrategyKind::ChordMelodyFirst: return "chord_melody_first";
    case StrategyKind::ChordCoGen: return "chord_co_gen";
  }
  return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
  for (StrategyKind k : kAllStrategies)
    if (s == to_string(k)) return k;
  throw InvalidConfig(
      "unknown strategy '" + s +
      "'; valid: no_chord, chord_independent, chord_bass_first, chord_melody_first, chord_co_gen");
}

/// Human-readable column labels used in reports.
inline const char* display_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::NoChord: return "No Chord";
    case StrategyKind::ChordIndependent: return "Chord Ind.";
    case StrategyKind::ChordBassFirst: return "Chord Bass-1st";
    case StrategyKind::ChordMelodyFirst: return "Chord Mel-1st";
    case StrategyKind::ChordCoGen: return "Chord Co-Gen";
  }
  return "?";
}

/// Architecture dimensions. Chord encoders are 1 layer x 2 heads and REMI
/// decoders 6 layers x 8 heads; width is configurable (desk-scale tests use
/// d_model = 64).
struct ModelConfig {
  int d_model = 256;
  int ff_hidden = 1024;
  int encoder_layers = 1;
  int encoder_heads = 2;
  int decoder_layers = 6;
  int decoder_heads = 8;
  int max_len = kMaxSeqLen;
  double dropout = 0.0;
  int remi_vocab = RemiVocab::kSize;
  int chord_vocab = kChordVocabSize;

  void validate() const {
    if (d_model <= 0 || ff_hidden <= 0 || encoder_layers <= 0 || decoder_layers <= 0 ||
        max_len <= 1 || encoder_heads <= 0 || decoder_heads <= 0)
      throw InvalidConfig("model dimensions must be positive");
    if (d_model % encoder_heads != 0 || d_model % decoder_heads != 0)
      throw InvalidConfig("d_model must be divisible by both head counts");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("dropout must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},
            {"ff_hidden", ff_hidden},
            {"encoder_layers", encoder_layers},
            {"encoder_heads", encoder_heads},
            {"decoder_layers", decoder_layers},
            {"decoder_heads", decoder_heads},
            {"max_len", max_len},
            {"dropout", dropout},
            {"remi_vocab", remi_vocab},
            {"chord_vocab", chord_vocab}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.ff_hidden = j.at("ff_hidden").get<int>();
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.encoder_heads = j.at("encoder_heads").get<int>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.decoder_heads = j.at("decoder_heads").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.remi_vocab = j.at("remi_vocab").get<int>();
    c.chord_vocab = j.at("chord_vocab").get<int>();
    return c;
  }
};

/// One assembled strategy: chord encoder (when conditioned) plus one or two
/// REMI decoders.
template <typename T>
struct ModelBundle {
  StrategyKind kind = StrategyKind::NoChord;
  ModelConfig config;
  std::optional<TransformerEncoder<T>> encoder;
  std::optional<TransformerDecoder<T>> bass_decoder;
  std::optional<TransformerDecoder<T>> melody_decoder;
  std::optional<TransformerDecoder<T>> cogen_decoder;

  bool conditioned() const { return kind != StrategyKind::NoChord; }

  ParamMap<T> params() const {
    ParamMap<T> map;
    if (encoder) encoder->register_params(map, "chord_encoder");
    if (bass_decoder) bass_decoder->register_params(map, "bass_decoder");
    if (melody_decoder) melody_decoder->register_params(map, "melody_decoder");
    if (cogen_decoder) cogen_decoder->register_params(map, "cogen_decoder");
    return map;
  }

  std::vector<Tensor<T>> param_tensors() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : params().items) out.push_back(t);
    return out;
  }
};

/// Wire a strategy: NoChord = two memoryless decoders; ChordIndependent =
/// shared chord encoder + two cross-attending decoders; Bass-1st / Mel-1st =
/// same modules, staged conditioning at train/generate time; Co-Gen = one
/// decoder over the interleaved stream.
template <typename T>
ModelBundle<T> build_model(StrategyKind kind, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle<T> b;
  b.kind = kind;
  b.config = config;
  std::mt19937_64 rng(seed);

  auto make_decoder = [&](bool with_memory) {
    return TransformerDecoder<T>(config.remi_vocab, config.d_model, config.decoder_heads,
                                 config.decoder_layers, config.ff_hidden, config.max_len,
                                 with_memory, rng);
  };

  if (kind != StrategyKind::NoChord)
    b.encoder = TransformerEncoder<T>(config.chord_vocab, config.d_model, config.encoder_heads,
                                      config.encoder_layers, config.ff_hidden, config.max_len, rng);
  if (kind == StrategyKind::ChordCoGen) {
    b.cogen_decoder = make_decoder(true);
  } else {
    bool with_memory = kind != StrategyKind::NoChord;
    b.bass_decoder = make_decoder(with_memory);
    b.melody_decoder = make_decoder(with_memory);
  }
  return b;
}

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
  int epochs = 400;
  int batch_size = 8;
  double base_lr = 1e-4;
  int warmup_steps = 1000;
  std::uint64_t seed = 0;
  long max_steps = -1;  // optional hard cap across epochs

  void validate() const {
    if (epochs <= 0 || batch_size <= 0 || base_lr <= 0 || warmup_steps < 0)
      throw InvalidConfig("train config values must be positive");
  }
};

struct StepRecord {
  long step;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<StepRecord> history;
  double final_loss = 0.0;  // per-token cross-entropy over the dataset, post-training
  long steps = 0;
};

namespace model_detail {

enum class Seq { Bass, Melody, Interleaved };

inline const TokenSequence& pick(const DatasetRecord& r, Seq s) {
  switch (s) {
    case Seq::Bass: return r.bass_tokens;
    case Seq::Melody: return r.melody_tokens;
    default: return r.interleaved_tokens;
  }
}

/// Teacher-forcing batch: inputs are tokens [0, L-1), targets [1, L), PAD
/// targets masked out; sequences trimmed to the longest content in the batch.
struct VoiceBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  int batch = 0;
  int len = 0;  // input length
  long active = 0;
};

inline VoiceBatch make_voice_batch(const std::vector<DatasetRecord>& data,
                                   const std::vector<int>& indices, Seq which) {
  VoiceBatch vb;
  vb.batch = static_cast<int>(indices.size());
  int max_content = 2;
  for (int i : indices)
    max_content = std::max(max_content, pick(data[static_cast<std::size_t>(i)], which).content_length());
  vb.len = max_content - 1;
  vb.inputs.assign(static_cast<std::size_t>(vb.batch) * vb.len, RemiVocab::kPad);
  vb.targets.assign(static_cast<std::size_t>(vb.batch) * vb.len, RemiVocab::kPad);
  vb.mask.assign(static_cast<std::size_t>(vb.batch) * vb.len, 0);
  for (int b = 0; b < vb.batch; ++b) {
    const auto& ids = pick(data[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])], which).ids;
    int content = pick(data[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])], which).content_length();
    for (int t = 0; t + 1 < content; ++t) {
      vb.inputs[static_cast<std::size_t>(b) * vb.len + t] = ids[static_cast<std::size_t>(t)];
      vb.targets[static_cast<std::size_t>(b) * vb.len + t] = ids[static_cast<std::size_t>(t) + 1];
      vb.mask[static_cast<std::size_t>(b) * vb.len + t] = 1;
      ++vb.active;
    }
  }
  return vb;
}

/// Full ground-truth sequences (BOS..EOS) used as staged conditioning memory.
struct CondBatch {
  std::vector<int> ids;
  std::vector<int> lengths;
  int batch = 0;
  int len = 0;
};

inline CondBatch make_cond_batch(const std::vector<DatasetRecord>& data,
                                 const std::vector<int>& indices, Seq which) {
  CondBatch cb;
  cb.batch = static_cast<int>(indices.size());
  for (int i : indices)
    cb.len = std::max(cb.len, pick(data[static_cast<std::size_t>(i)], which).content_length());
  cb.ids.assign(static_cast<std::size_t>(cb.batch) * cb.len, RemiVocab::kPad);
  for (int b = 0; b < cb.batch; ++b) {
    const auto& seq = pick(data[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])], which);
    int content = seq.content_length();
    cb.lengths.push_back(content);
    std::copy(seq.ids.begin(), seq.ids.begin() + content,
              cb.ids.begin() + static_cast<std::size_t>(b) * cb.len);
  }
  return cb;
}

inline CondBatch make_chord_batch(const std::vector<DatasetRecord>& data,
                                  const std::vector<int>& indices) {
  CondBatch cb;
  cb.batch = static_cast<int>(indices.size());
  for (int i : indices) {
    int n = 0;
    const auto& ids = data[static_cast<std::size_t>(i)].chord_ids.ids;
    while (n < static_cast<int>(ids.size()) && ids[static_cast<std::size_t>(n)] != 0) ++n;
    cb.len = std::max(cb.len, std::max(n, 1));
  }
  cb.ids.assign(static_cast<std::size_t>(cb.batch) * cb.len, 0);
  for (int b = 0; b < cb.batch; ++b) {
    const auto& ids = data[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])].chord_ids.ids;
    int n = 0;
    while (n < static_cast<int>(ids.size()) && ids[static_cast<std::size_t>(n)] != 0) ++n;
    cb.lengths.push_back(n);
    std::copy(ids.begin(), ids.begin() + n, cb.ids.begin() + static_cast<std::size_t>(b) * cb.len);
  }
  return cb;
}

/// Per-batch loss with every decoder's token count weighted in, so the
/// scalar is the mean cross-entropy per predicted token.
template <typename T>
struct BatchLoss {
  Tensor<T> loss;
  long active = 0;
};

template <typename T>
BatchLoss<T> strategy_loss(const ModelBundle<T>& bundle, const std::vector<DatasetRecord>& data,
                           const std::vector<int>& indices, const DropoutCtx<T>& drop) {
  BatchLoss<T> out;
  Tensor<T> memory;
  Tensor<T> memory_mask;
  if (bundle.conditioned()) {
    CondBatch chords = make_chord_batch(data, indices);
    memory_mask = padding_mask<T>(chords.lengths, chords.len);
    memory = (*bundle.encoder)(chords.ids, chords.batch, chords.len, memory_mask, drop);
  }

  struct Piece {
    Tensor<T> ce;
    long active;
  };
  std::vector<Piece> pieces;

  auto decoder_ce = [&](const TransformerDecoder<T>& dec, const VoiceBatch& vb,
                        const Tensor<T>& mem, const Tensor<T>& mem_mask) {
    Tensor<T> logits = dec(vb.inputs, vb.batch, vb.len, mem, mem_mask, drop);
    pieces.push_back({cross_entropy(logits, vb.targets, vb.mask), vb.active});
  };

  switch (bundle.kind) {
    case StrategyKind::NoChord: {
      decoder_ce(*bundle.bass_decoder, make_voice_batch(data, indices, Seq::Bass), {}, {});
      decoder_ce(*bundle.melody_decoder, make_voice_batch(data, indices, Seq::Melody), {}, {});
      break;
    }
    case StrategyKind::ChordIndependent: {
      decoder_ce(*bundle.bass_decoder, make_voice_batch(data, indices, Seq::Bass), memory,
                 memory_mask);
      decoder_ce(*bundle.melody_decoder, make_voice_batch(data, indices, Seq::Melody), memory,
                 memory_mask);
      break;
    }
    case StrategyKind::ChordBassFirst:
    case StrategyKind::ChordMelodyFirst: {
      bool bass_first = bundle.kind == StrategyKind::ChordBassFirst;
      const TransformerDecoder<T>& first_dec =
          bass_first ? *bundle.bass_decoder : *bundle.melody_decoder;
      const TransformerDecoder<T>& second_dec =
          bass_first ? *bundle.melody_decoder : *bundle.bass_decoder;
      Seq first_seq = bass_first ? Seq::Bass : Seq::Melody;
      Seq second_seq = bass_first ? Seq::Melody : Seq::Bass;

      decoder_ce(first_dec, make_voice_batch(data, indices, first_seq), memory, memory_mask);

      // teacher forcing across stages: the conditioning voice is ground truth
      CondBatch cond = make_cond_batch(data, indices, first_seq);
      Tensor<T> cond_emb = second_dec.embed_sequence(cond.ids, cond.batch, cond.len);
      Tensor<T> staged_memory = concat(memory, cond_emb, 1);
      CondBatch chords = make_chord_batch(data, indices);
      std::vector<int> joint_lengths;
      for (std::size_t i = 0; i < cond.lengths.size(); ++i)
        joint_lengths.push_back(chords.lengths[i] + cond.lengths[i]);
      // rebuild the combined key-pad mask over [chords | conditioning voice]
      Tensor<T> staged_mask = Tensor<T>::zeros({cond.batch, 1, 1, chords.len + cond.len});
      {
        auto m = staged_mask.data();
        T ninf = -std::numeric_limits<T>::infinity();
        int total = chords.len + cond.len;
        for (int b = 0; b < cond.batch; ++b) {
          for (int j = chords.lengths[static_cast<std::size_t>(b)]; j < chords.len; ++j)
            m[static_cast<std::size_t>(b) * total + j] = ninf;
          for (int j = cond.lengths[static_cast<std::size_t>(b)]; j < cond.len; ++j)
            m[static_cast<std::size_t>(b) * total + chords.len + j] = ninf;
        }
      }
      decoder_ce(second_dec, make_voice_batch(data, indices, second_seq), staged_memory,
                 staged_mask);
      break;
    }
    case StrategyKind::ChordCoGen: {
      decoder_ce(*bundle.cogen_decoder, make_voice_batch(data, indices, Seq::Interleaved), memory,
                 memory_mask);
      break;
    }
  }

  long total = 0;
  for (const Piece& p : pieces) total += p.active;
  out.active = total;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    Tensor<T> weighted =
        scale(pieces[i].ce, static_cast<T>(static_cast<double>(pieces[i].active) / total));
    out.loss = i == 0 ? weighted : add(out.loss, weighted);
  }
  return out;
}

}  // namespace model_detail

/// Per-token cross-entropy of a dataset under the current parameters,
/// without dropout or gradients.
template <typename T>
double evaluate_loss(const ModelBundle<T>& bundle, const std::vector<DatasetRecord>& data,
                     int batch_size = 8) {
  NoGradGuard ng;
  double nll_total = 0;
  long active_total = 0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<int> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      idx.push_back(static_cast<int>(i));
    auto bl = model_detail::strategy_loss(bundle, data, idx, {});
    nll_total += static_cast<double>(bl.loss.item()) * static_cast<double>(bl.active);
    active_total += bl.active;
  }
  return nll_total / static_cast<double>(active_total);
}

/// Teacher-forced training over the dataset. Staged variants train jointly
/// with losses summed over both decoders.
template <typename T>
TrainResult train(ModelBundle<T>& bundle, const std::vector<DatasetRecord>& data,
                  const TrainConfig& cfg, Adam<T>* optimizer = nullptr,
                  long start_step = 0) {
  cfg.validate();
  if (data.empty()) throw EmptyDataset("training dataset is empty");

  std::optional<Adam<T>> local_opt;
  if (!optimizer) {
    local_opt.emplace(bundle.param_tensors());
    optimizer = &*local_opt;
  }
  LrSchedule sched{cfg.base_lr, cfg.warmup_steps};
  std::mt19937_64 rng(cfg.seed);
  DropoutCtx<T> drop{static_cast<T>(bundle.config.dropout), &rng};

  TrainResult result;
  long step = start_step;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(
                                               std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      ++step;
      double lr = sched.at(step);
      optimizer->zero_grad();
      auto bl = model_detail::strategy_loss(bundle, data, idx, drop);
      bl.loss.backward();
      optimizer->step(static_cast<T>(lr));
      result.history.push_back({step, lr, static_cast<double>(bl.loss.item())});
      if (cfg.max_steps > 0 && step - start_step >= cfg.max_steps) goto done;
    }
  }
done:
  result.steps = step - start_step;
  result.final_loss = evaluate_loss(bundle, data, cfg.batch_size);
  return result;
}

// ---------------------------------------------------------------------------
// generation

struct GenerationConfig {
  double top_p = 0.9;
  int max_tokens = kMaxSeqLen;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0) || top_p > 1.0) throw InvalidConfig("top_p must be in (0, 1]");
    if (max_tokens < 2) throw InvalidConfig("max_tokens must be at least 2");
  }
};

/// Both generated voices, as events and as padded per-voice token sequences
/// (Co-Gen raw output is split by voice markers and re-encoded per voice).
struct GeneratedPair {
  std::vector<NoteEvent> bass_events;
  std::vector<NoteEvent> melody_events;
  TokenSequence bass_tokens;
  TokenSequence melody_tokens;
  int repairs = 0;
};

namespace model_detail {

template <typename T>
std::vector<int> sample_sequence(const TransformerDecoder<T>& dec, const Tensor<T>& memory,
                                 const Tensor<T>& memory_mask, const GenerationConfig& cfg,
                                 std::mt19937_64& rng) {
  std::vector<int> ids{RemiVocab::kBos};
  while (static_cast<int>(ids.size()) < cfg.max_tokens) {
    Tensor<T> logits = dec(ids, 1, static_cast<int>(ids.size()), memory, memory_mask);
    int vocab = logits.dim(2);
    std::vector<double> probs(static_cast<std::size_t>(vocab));
    {
      auto lv = logits.data();
      std::size_t off = (ids.size() - 1) * static_cast<std::size_t>(vocab);
      double mx = -std::numeric_limits<double>::infinity();
      for (int v = 0; v < vocab; ++v) mx = std::max(mx, static_cast<double>(lv[off + static_cast<std::size_t>(v)]));
      double sum = 0;
      for (int v = 0; v < vocab; ++v) {
        probs[static_cast<std::size_t>(v)] = std::exp(static_cast<double>(lv[off + static_cast<std::size_t>(v)]) - mx);
        sum += probs[static_cast<std::size_t>(v)];
      }
      for (double& q : probs) q /= sum;
    }
    int next = top_p_sample(probs, cfg.top_p, rng);
    ids.push_back(next);
    if (next == RemiVocab::kEos) break;
  }
  return ids;
}

template <typename T>
Tensor<T> encode_chord_memory(const ModelBundle<T>& bundle, const std::vector<int>& chord_ids) {
  std::vector<int> ids = chord_ids;
  if (ids.empty()) ids.push_back(0);
  return (*bundle.encoder)(ids, 1, static_cast<int>(ids.size()), {});
}

inline TokenSequence events_to_sequence(const std::vector<NoteEvent>& events, const RemiVocab& vocab,
                                        int max_len) {
  std::vector<int> ids{RemiVocab::kBos};
  for (const NoteEvent& e : events) detail::append_event(ids, e, vocab);
  ids.push_back(RemiVocab::kEos);
  return detail::pad_or_truncate(std::move(ids), max_len, nullptr);
}

}  // namespace model_detail

/// Autoregressive top-p generation from BOS (chords ignored by NoChord).
/// Fixed seeds give identical outputs.
template <typename T>
GeneratedPair generate(const ModelBundle<T>& bundle, const std::vector<int>& chord_ids,
                       const GenerationConfig& cfg) {
  cfg.validate();
  NoGradGuard ng;
  RemiVocab vocab;
  std::mt19937_64 rng(cfg.seed);

  Tensor<T> memory;
  if (bundle.conditioned()) memory = model_detail::encode_chord_memory(bundle, chord_ids);

  GeneratedPair out;
  auto finish_voice = [&](const std::vector<int>& ids, std::vector<NoteEvent>& events,
                          TokenSequence& tokens) {
    DecodeResult dec = decode_tokens(ids, vocab);
    events = std::move(dec.events);
    out.repairs += dec.repairs;
    tokens = detail::pad_or_truncate(std::vector<int>(ids), bundle.config.max_len, nullptr);
  };

  switch (bundle.kind) {
    case StrategyKind::NoChord:
    case StrategyKind::ChordIndependent: {
      auto bass_ids = model_detail::sample_sequence(*bundle.bass_decoder, memory, {}, cfg, rng);
      auto mel_ids = model_detail::sample_sequence(*bundle.melody_decoder, memory, {}, cfg, rng);
      finish_voice(bass_ids, out.bass_events, out.bass_tokens);
      finish_voice(mel_ids, out.melody_events, out.melody_tokens);
      break;
    }
    case StrategyKind::ChordBassFirst:
    case StrategyKind::ChordMelodyFirst: {
      bool bass_first = bundle.kind == StrategyKind::ChordBassFirst;
      const TransformerDecoder<T>& first_dec =
          bass_first ? *bundle.bass_decoder : *bundle.melody_decoder;
      const TransformerDecoder<T>& second_dec =
          bass_first ? *bundle.melody_decoder : *bundle.bass_decoder;

      auto first_ids = model_detail::sample_sequence(first_dec, memory, {}, cfg, rng);
      // the first voice's prediction rides alongside the chord encoding
      Tensor<T> cond =
          second_dec.embed_sequence(first_ids, 1, static_cast<int>(first_ids.size()));
      Tensor<T> staged = concat(memory, cond, 1);
      auto second_ids = model_detail::sample_sequence(second_dec, staged, {}, cfg, rng);

      const auto& bass_ids = bass_first ? first_ids : second_ids;
      const auto& mel_ids = bass_first ? second_ids : first_ids;
      finish_voice(bass_ids, out.bass_events, out.bass_tokens);
      finish_voice(mel_ids, out.melody_events, out.melody_tokens);
      break;
    }
    case StrategyKind::ChordCoGen: {
      auto ids = model_detail::sample_sequence(*bundle.cogen_decoder, memory, {}, cfg, rng);
      InterleavedDecodeResult split = decode_interleaved(ids, vocab);
      out.repairs += split.repairs;
      out.bass_events = std::move(split.bass);
      out.melody_events = std::move(split.melody);
      out.bass_tokens = model_detail::events_to_sequence(out.bass_events, vocab, bundle.config.max_len);
      out.melody_tokens =
          model_detail::events_to_sequence(out.melody_events, vocab, bundle.config.max_len);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint glue

template <typename T>
nlohmann::json bundle_header(const ModelBundle<T>& bundle, long global_step) {
  nlohmann::json h;
  h["strategy"] = to_string(bundle.kind);
  h["config"] = bundle.config.to_json();
  h["global_step"] = global_step;
  return h;
}

}  // namespace cantus
