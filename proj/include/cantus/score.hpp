#pragma once

#include <array>
#include <cstdlib>
#include <string>
#include <vector>

#include "cantus/error.hpp"

namespace cantus {

/// A pitch modulo octave. 0 = C, 1 = C#/Db, ... 11 = B.
class PitchClass {
 public:
  PitchClass() = default;
  explicit PitchClass(int value) : value_(value) {
    if (value < 0 || value > 11) throw Error("pitch class out of range: " + std::to_string(value));
  }

  /// Floor-mod construction, accepts any integer.
  static PitchClass wrap(int semitones) {
    int m = semitones % 12;
    if (m < 0) m += 12;
    return PitchClass(m);
  }

  int value() const { return value_; }
  PitchClass transposed(int semitones) const { return wrap(value_ + semitones); }

  auto operator<=>(const PitchClass&) const = default;

 private:
  int value_ = 0;
};

/// A concrete pitch as a MIDI note number, 0-127.
class Pitch {
 public:
  Pitch() = default;
  explicit Pitch(int midi) : midi_(midi) {
    if (midi < 0 || midi > 127) throw Error("MIDI pitch out of range: " + std::to_string(midi));
  }

  int midi() const { return midi_; }
  Pitch transposed(int semitones) const { return Pitch(midi_ + semitones); }

  auto operator<=>(const Pitch&) const = default;

 private:
  int midi_ = 60;
};

constexpr int kDefaultVelocity = 64;

/// One reduced event in a voice: a sounded quarter note or a quarter rest.
class NoteEvent {
 public:
  static NoteEvent rest() { return NoteEvent(); }
  static NoteEvent note(Pitch p, int duration_quarters = 1, int velocity = kDefaultVelocity) {
    NoteEvent e;
    e.sounded_ = true;
    e.pitch_ = p;
    e.duration_quarters_ = duration_quarters;
    e.velocity_ = velocity;
    return e;
  }

  bool is_rest() const { return !sounded_; }
  bool is_sounded() const { return sounded_; }
  Pitch pitch() const {
    if (!sounded_) throw Error("rest has no pitch");
    return pitch_;
  }
  int duration_quarters() const { return duration_quarters_; }
  int velocity() const { return velocity_; }

  bool operator==(const NoteEvent& o) const {
    if (sounded_ != o.sounded_) return false;
    if (!sounded_) return duration_quarters_ == o.duration_quarters_;
    return pitch_ == o.pitch_ && duration_quarters_ == o.duration_quarters_ && velocity_ == o.velocity_;
  }

 private:
  bool sounded_ = false;
  Pitch pitch_{};
  int duration_quarters_ = 1;
  int velocity_ = kDefaultVelocity;
};

enum class ChordQuality { Maj, Min };

/// One of the 24 chord classes: a root pitch class plus maj/min quality.
struct ChordSymbol {
  PitchClass root;
  ChordQuality quality = ChordQuality::Maj;

  auto operator<=>(const ChordSymbol&) const = default;
};

enum class Mode { Major, Minor };

/// One vertical slice: an annotated chord with its aligned bass and melody event.
struct Sonority {
  ChordSymbol chord;
  NoteEvent bass;
  NoteEvent melody;

  bool operator==(const Sonority&) const = default;
};

/// A musical phrase: key metadata plus an ordered list of sonorities.
struct Phrase {
  std::string id;
  PitchClass key_root;
  Mode mode = Mode::Major;
  std::vector<Sonority> sonorities;

  bool operator==(const Phrase&) const = default;
};

inline PitchClass pitch_class(Pitch p) { return PitchClass::wrap(p.midi()); }

/// The three triad tones of a chord: root, third (major or minor), fifth.
inline std::array<PitchClass, 3> chord_tones(ChordSymbol c) {
  int third = c.quality == ChordQuality::Maj ? 4 : 3;
  return {c.root, c.root.transposed(third), c.root.transposed(7)};
}

inline bool is_chord_tone(ChordSymbol c, PitchClass pc) {
  for (PitchClass t : chord_tones(c))
    if (t == pc) return true;
  return false;
}

inline int interval_semitones(Pitch a, Pitch b) { return std::abs(a.midi() - b.midi()); }

inline const char* to_string(ChordQuality q) { return q == ChordQuality::Maj ? "maj" : "min"; }
inline const char* to_string(Mode m) { return m == Mode::Major ? "major" : "minor"; }

}  // namespace cantus
