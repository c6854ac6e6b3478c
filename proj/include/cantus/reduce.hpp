#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cantus/error.hpp"
#include "cantus/kern.hpp"
#include "cantus/score.hpp"

namespace cantus {

struct EmptyPhrase : DataError {
  using DataError::DataError;
};

namespace detail {

struct SpanCandidates {
  ChordSymbol chord;
  std::vector<Pitch> bass;    // onset order
  std::vector<Pitch> melody;  // onset order
};

inline void collect(const std::vector<std::string>& tokens, std::vector<Pitch>& out) {
  for (const std::string& t : tokens) {
    if (t.empty() || t == ".") continue;
    if (auto p = kern_pitch_to_midi(t)) out.push_back(*p);
  }
}

}  // namespace detail

/// Collapse each voice to one quarter note per annotated chord: the lowest
/// sounded pitch in the bass spine over the chord's span, the highest in the
/// melody spine; a quarter rest when a span has no sounded note in a voice.
/// Ties resolve to the earliest onset. Records before the first chord
/// annotation belong to no span and are skipped.
inline Phrase reduce_phrase(const RawPhrase& raw) {
  std::vector<detail::SpanCandidates> spans;
  for (const RawRecord& rec : raw.records) {
    if (rec.harmonic != "." && !rec.harmonic.empty()) {
      detail::SpanCandidates span;
      span.chord = roman_numeral_to_chord(rec.harmonic, raw.key_root, raw.mode);
      spans.push_back(std::move(span));
    }
    if (spans.empty()) continue;
    detail::collect(rec.bass_tokens, spans.back().bass);
    detail::collect(rec.melody_tokens, spans.back().melody);
  }
  if (spans.empty()) throw EmptyPhrase("phrase has no chord annotations: " + raw.id);

  Phrase out;
  out.id = raw.id;
  out.key_root = raw.key_root;
  out.mode = raw.mode;
  out.sonorities.reserve(spans.size());
  for (const auto& span : spans) {
    Sonority s;
    s.chord = span.chord;
    NoteEvent bass = NoteEvent::rest();
    for (Pitch p : span.bass)
      if (bass.is_rest() || p.midi() < bass.pitch().midi()) bass = NoteEvent::note(p);
    NoteEvent melody = NoteEvent::rest();
    for (Pitch p : span.melody)
      if (melody.is_rest() || p.midi() > melody.pitch().midi()) melody = NoteEvent::note(p);
    s.bass = bass;
    s.melody = melody;
    out.sonorities.push_back(s);
  }
  return out;
}

/// The semitone shift that takes `key_root` to C: minimal magnitude,
/// ties broken toward the negative shift, hence always in [-6, +5].
inline int transposition_shift(PitchClass key_root) {
  int k = key_root.value();
  return k <= 6 ? -k : 12 - k;
}

/// Transpose a phrase to C major or C minor, shifting every pitch and chord
/// root by the minimal-magnitude shift. Mode is preserved.
inline Phrase transpose_to_c(const Phrase& p) {
  int shift = transposition_shift(p.key_root);
  Phrase out;
  out.id = p.id;
  out.key_root = PitchClass(0);
  out.mode = p.mode;
  out.sonorities.reserve(p.sonorities.size());
  for (const Sonority& s : p.sonorities) {
    Sonority t;
    t.chord = {s.chord.root.transposed(shift), s.chord.quality};
    t.bass = s.bass.is_rest() ? NoteEvent::rest()
                              : NoteEvent::note(s.bass.pitch().transposed(shift),
                                                s.bass.duration_quarters(), s.bass.velocity());
    t.melody = s.melody.is_rest() ? NoteEvent::rest()
                                  : NoteEvent::note(s.melody.pitch().transposed(shift),
                                                    s.melody.duration_quarters(), s.melody.velocity());
    out.sonorities.push_back(t);
  }
  return out;
}

enum class Voice { Bass, Melody };

inline const char* to_string(Voice v) { return v == Voice::Bass ? "bass" : "melody"; }

inline const NoteEvent& voice_event(const Sonority& s, Voice v) {
  return v == Voice::Bass ? s.bass : s.melody;
}

/// One voice of a phrase as a flat event list.
inline std::vector<NoteEvent> voice_line(const Phrase& p, Voice v) {
  std::vector<NoteEvent> out;
  out.reserve(p.sonorities.size());
  for (const Sonority& s : p.sonorities) out.push_back(voice_event(s, v));
  return out;
}

}  // namespace cantus
