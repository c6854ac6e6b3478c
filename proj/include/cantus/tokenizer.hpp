#pragma once

#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cantus/error.hpp"
#include "cantus/reduce.hpp"
#include "cantus/score.hpp"

namespace cantus {

struct UnparseableChord : DataError {
  using DataError::DataError;
};

constexpr int kMaxSeqLen = 128;
constexpr int kChordVocabSize = 25;  // PAD + 24 chord classes

/// Parse a Harte chord string "ROOT:QUALITY", e.g. "G:maj", "C:min".
/// Enharmonic roots (C# / Db) map to the same chord.
inline ChordSymbol parse_harte(std::string_view s) {
  std::size_t colon = s.find(':');
  if (colon == std::string_view::npos || colon == 0)
    throw UnparseableChord("expected ROOT:QUALITY, got: " + std::string(s));
  std::string_view root = s.substr(0, colon);
  std::string_view quality = s.substr(colon + 1);

  int base = detail::letter_semitone(root[0]);
  if (base < 0 || !std::isupper(static_cast<unsigned char>(root[0])))
    throw UnparseableChord("bad chord root: " + std::string(s));
  int acc = 0;
  for (std::size_t i = 1; i < root.size(); ++i) {
    if (root[i] == '#') ++acc;
    else if (root[i] == 'b') --acc;
    else throw UnparseableChord("bad chord root: " + std::string(s));
  }

  ChordQuality q;
  if (quality == "maj") q = ChordQuality::Maj;
  else if (quality == "min") q = ChordQuality::Min;
  else throw UnparseableChord("bad chord quality: " + std::string(s));
  return {PitchClass::wrap(base + acc), q};
}

inline std::string to_harte(ChordSymbol c) {
  static constexpr const char* names[12] = {"C",  "C#", "D",  "Eb", "E",  "F",
                                            "F#", "G",  "Ab", "A",  "Bb", "B"};
  return std::string(names[c.root.value()]) + ":" + to_string(c.quality);
}

/// Bijective chord-class id in 1..24: id = 2*root + (min ? 1 : 0) + 1.
inline int chord_to_id(ChordSymbol c) {
  return 2 * c.root.value() + (c.quality == ChordQuality::Min ? 1 : 0) + 1;
}

inline ChordSymbol id_to_chord(int id) {
  if (id < 1 || id > 24) throw Error("chord id out of range: " + std::to_string(id));
  int z = id - 1;
  return {PitchClass(z / 2), z % 2 == 0 ? ChordQuality::Maj : ChordQuality::Min};
}

/// Parse a whitespace-separated Harte progression, e.g. "C:min G:maj G:maj C:min".
inline std::vector<ChordSymbol> parse_harte_progression(std::string_view text) {
  std::vector<ChordSymbol> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(parse_harte(tok));
  return out;
}

inline std::string to_harte_progression(const std::vector<ChordSymbol>& chords) {
  std::string out;
  for (std::size_t i = 0; i < chords.size(); ++i) {
    if (i) out += ' ';
    out += to_harte(chords[i]);
  }
  return out;
}

/// Chord-id sequence padded with PAD=0 to a fixed length.
struct ChordTokenSequence {
  std::vector<int> ids;

  bool operator==(const ChordTokenSequence&) const = default;
};

inline ChordTokenSequence encode_chords(const std::vector<ChordSymbol>& chords,
                                        int max_len = kMaxSeqLen) {
  ChordTokenSequence seq;
  seq.ids.reserve(max_len);
  for (const ChordSymbol& c : chords) {
    if (static_cast<int>(seq.ids.size()) >= max_len) break;
    seq.ids.push_back(chord_to_id(c));
  }
  seq.ids.resize(max_len, 0);
  return seq;
}

/// REMI-style vocabulary over the reduced score: special tokens, one token
/// per MIDI pitch, 8 velocity bins, duration tokens for 1-4 quarters.
///
/// The layout is fixed; instances exist so the id assignment can be
/// serialized with checkpoints and verified on load.
class RemiVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kRest = 3;
  static constexpr int kVoiceBass = 4;
  static constexpr int kVoiceMel = 5;
  static constexpr int kPitchBase = 6;                    // Pitch_0 .. Pitch_127
  static constexpr int kVelocityBase = kPitchBase + 128;  // 8 bins
  static constexpr int kVelocityBins = 8;
  static constexpr int kDurationBase = kVelocityBase + kVelocityBins;  // quarters 1..4
  static constexpr int kMaxDurationQuarters = 4;
  static constexpr int kSize = kDurationBase + kMaxDurationQuarters;

  int size() const { return kSize; }

  int pitch_token(int midi) const { return kPitchBase + midi; }
  int velocity_token(int velocity) const { return kVelocityBase + velocity_bin(velocity); }
  int duration_token(int quarters) const {
    int q = std::min(std::max(quarters, 1), kMaxDurationQuarters);
    return kDurationBase + q - 1;
  }

  static int velocity_bin(int velocity) {
    int v = std::min(std::max(velocity, 1), 127);
    return std::min(v / 16, kVelocityBins - 1);
  }
  /// Representative velocity of a bin; bin 4 decodes back to the default 64.
  static int velocity_of_bin(int bin) { return bin == 0 ? 8 : bin * 16; }

  bool is_pitch(int id) const { return id >= kPitchBase && id < kVelocityBase; }
  bool is_velocity(int id) const { return id >= kVelocityBase && id < kDurationBase; }
  bool is_duration(int id) const { return id >= kDurationBase && id < kSize; }
  int pitch_of(int id) const { return id - kPitchBase; }
  int velocity_of(int id) const { return velocity_of_bin(id - kVelocityBase); }
  int duration_of(int id) const { return id - kDurationBase + 1; }

  std::string name(int id) const {
    switch (id) {
      case kPad: return "PAD";
      case kBos: return "BOS";
      case kEos: return "EOS";
      case kRest: return "REST";
      case kVoiceBass: return "VOICE_BASS";
      case kVoiceMel: return "VOICE_MEL";
      default: break;
    }
    if (is_pitch(id)) return "Pitch_" + std::to_string(pitch_of(id));
    if (is_velocity(id)) return "Velocity_" + std::to_string(id - kVelocityBase);
    if (is_duration(id)) return "Duration_" + std::to_string(duration_of(id));
    throw Error("token id out of vocabulary: " + std::to_string(id));
  }
};

/// REMI token-id sequence padded/truncated to a fixed length. Begins with
/// BOS; EOS precedes padding whenever the content fits.
struct TokenSequence {
  std::vector<int> ids;

  bool operator==(const TokenSequence&) const = default;

  /// Length up to and including EOS, or up to the last non-PAD token.
  int content_length() const {
    int n = static_cast<int>(ids.size());
    while (n > 0 && ids[n - 1] == RemiVocab::kPad) --n;
    return n;
  }
};

namespace detail {

inline void append_event(std::vector<int>& ids, const NoteEvent& e, const RemiVocab& vocab) {
  if (e.is_rest()) {
    ids.push_back(RemiVocab::kRest);
  } else {
    ids.push_back(vocab.pitch_token(e.pitch().midi()));
    ids.push_back(vocab.velocity_token(e.velocity()));
    ids.push_back(vocab.duration_token(e.duration_quarters()));
  }
}

inline TokenSequence pad_or_truncate(std::vector<int> ids, int max_len, bool* truncated) {
  bool trunc = static_cast<int>(ids.size()) > max_len;
  if (trunc) ids.resize(max_len);
  ids.resize(max_len, RemiVocab::kPad);
  if (truncated) *truncated = trunc;
  return TokenSequence{std::move(ids)};
}

}  // namespace detail

/// Encode one voice: BOS, then per sonority (Pitch, Velocity, Duration) or
/// REST, then EOS; padded or tail-truncated to `max_len`.
inline TokenSequence encode_voice(const Phrase& p, Voice voice, const RemiVocab& vocab,
                                  int max_len = kMaxSeqLen, bool* truncated = nullptr) {
  std::vector<int> ids{RemiVocab::kBos};
  for (const Sonority& s : p.sonorities) detail::append_event(ids, voice_event(s, voice), vocab);
  ids.push_back(RemiVocab::kEos);
  return detail::pad_or_truncate(std::move(ids), max_len, truncated);
}

/// Encode both voices interleaved: per sonority VOICE_BASS, bass tokens,
/// VOICE_MEL, melody tokens.
inline TokenSequence encode_interleaved(const Phrase& p, const RemiVocab& vocab,
                                        int max_len = kMaxSeqLen, bool* truncated = nullptr) {
  std::vector<int> ids{RemiVocab::kBos};
  for (const Sonority& s : p.sonorities) {
    ids.push_back(RemiVocab::kVoiceBass);
    detail::append_event(ids, s.bass, vocab);
    ids.push_back(RemiVocab::kVoiceMel);
    detail::append_event(ids, s.melody, vocab);
  }
  ids.push_back(RemiVocab::kEos);
  return detail::pad_or_truncate(std::move(ids), max_len, truncated);
}

/// Result of decoding a single-voice sequence. `repairs` counts malformed
/// fragments fixed up by the default-filling policy.
struct DecodeResult {
  std::vector<NoteEvent> events;
  int repairs = 0;
};

/// Decoding never fails: a Pitch without Velocity/Duration takes defaults,
/// stray Velocity/Duration/voice-marker tokens are dropped; every repair is
/// counted.
inline DecodeResult decode_tokens(std::span<const int> ids, const RemiVocab& vocab) {
  DecodeResult out;
  std::size_t i = 0;
  while (i < ids.size()) {
    int id = ids[i];
    if (id == RemiVocab::kEos) break;
    if (id == RemiVocab::kPad || id == RemiVocab::kBos || id == RemiVocab::kVoiceBass ||
        id == RemiVocab::kVoiceMel) {
      if (id != RemiVocab::kPad && id != RemiVocab::kBos) ++out.repairs;
      ++i;
      continue;
    }
    if (id == RemiVocab::kRest) {
      out.events.push_back(NoteEvent::rest());
      ++i;
      continue;
    }
    if (vocab.is_pitch(id)) {
      int midi = vocab.pitch_of(id);
      int velocity = kDefaultVelocity;
      int duration = 1;
      bool repaired = false;
      ++i;
      if (i < ids.size() && vocab.is_velocity(ids[i])) {
        velocity = vocab.velocity_of(ids[i]);
        ++i;
      } else {
        repaired = true;
      }
      if (i < ids.size() && vocab.is_duration(ids[i])) {
        duration = vocab.duration_of(ids[i]);
        ++i;
      } else {
        repaired = true;
      }
      if (repaired) ++out.repairs;
      out.events.push_back(NoteEvent::note(Pitch(midi), duration, velocity));
      continue;
    }
    // stray velocity/duration token
    ++out.repairs;
    ++i;
  }
  return out;
}

/// Result of decoding an interleaved sequence back into two voices.
struct InterleavedDecodeResult {
  std::vector<NoteEvent> bass;
  std::vector<NoteEvent> melody;
  int repairs = 0;
};

inline InterleavedDecodeResult decode_interleaved(std::span<const int> ids, const RemiVocab& vocab) {
  InterleavedDecodeResult out;
  std::vector<NoteEvent>* current = nullptr;
  std::size_t i = 0;
  while (i < ids.size()) {
    int id = ids[i];
    if (id == RemiVocab::kEos) break;
    if (id == RemiVocab::kPad || id == RemiVocab::kBos) {
      ++i;
      continue;
    }
    if (id == RemiVocab::kVoiceBass) {
      current = &out.bass;
      ++i;
      continue;
    }
    if (id == RemiVocab::kVoiceMel) {
      current = &out.melody;
      ++i;
      continue;
    }
    if (current == nullptr) {
      // event token before any voice marker
      ++out.repairs;
      ++i;
      continue;
    }
    if (id == RemiVocab::kRest) {
      current->push_back(NoteEvent::rest());
      ++i;
      continue;
    }
    if (vocab.is_pitch(id)) {
      int midi = vocab.pitch_of(id);
      int velocity = kDefaultVelocity;
      int duration = 1;
      bool repaired = false;
      ++i;
      if (i < ids.size() && vocab.is_velocity(ids[i])) {
        velocity = vocab.velocity_of(ids[i]);
        ++i;
      } else {
        repaired = true;
      }
      if (i < ids.size() && vocab.is_duration(ids[i])) {
        duration = vocab.duration_of(ids[i]);
        ++i;
      } else {
        repaired = true;
      }
      if (repaired) ++out.repairs;
      current->push_back(NoteEvent::note(Pitch(midi), duration, velocity));
      continue;
    }
    ++out.repairs;
    ++i;
  }
  return out;
}

}  // namespace cantus
