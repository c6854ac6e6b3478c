#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cantus/score.hpp"

using namespace cantus;

TEST_CASE("pitch_class maps MIDI to semitone class", "[score]") {
  CHECK(pitch_class(Pitch(60)).value() == 0);
  CHECK(pitch_class(Pitch(0)).value() == 0);
  CHECK(pitch_class(Pitch(69)).value() == 9);
}

TEST_CASE("pitch_class is octave invariant", "[score]") {
  for (int midi = 0; midi <= 127; ++midi) {
    for (int k = -10; k <= 10; ++k) {
      int shifted = midi + 12 * k;
      if (shifted < 0 || shifted > 127) continue;
      CHECK(pitch_class(Pitch(shifted)) == pitch_class(Pitch(midi)));
    }
  }
}

TEST_CASE("chord_tones gives the triad", "[score]") {
  auto cmaj = chord_tones({PitchClass(0), ChordQuality::Maj});
  CHECK(cmaj[0].value() == 0);
  CHECK(cmaj[1].value() == 4);
  CHECK(cmaj[2].value() == 7);

  auto cmin = chord_tones({PitchClass(0), ChordQuality::Min});
  CHECK(cmin[1].value() == 3);

  auto amin = chord_tones({PitchClass(9), ChordQuality::Min});
  CHECK(amin[0].value() == 9);
  CHECK(amin[1].value() == 0);
  CHECK(amin[2].value() == 4);
}

TEST_CASE("chord_tones always has three distinct classes including the root", "[score]") {
  for (int root = 0; root < 12; ++root) {
    for (ChordQuality q : {ChordQuality::Maj, ChordQuality::Min}) {
      auto tones = chord_tones({PitchClass(root), q});
      CHECK(tones[0].value() == root);
      CHECK(tones[0] != tones[1]);
      CHECK(tones[1] != tones[2]);
      CHECK(tones[0] != tones[2]);
    }
  }
}

TEST_CASE("interval_semitones", "[score]") {
  CHECK(interval_semitones(Pitch(60), Pitch(60)) == 0);
  CHECK(interval_semitones(Pitch(60), Pitch(62)) == 2);
  CHECK(interval_semitones(Pitch(48), Pitch(60)) == 12);
}

TEST_CASE("interval_semitones is symmetric and triangular", "[score]") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> d(0, 127);
  for (int t = 0; t < 200; ++t) {
    Pitch a(d(rng)), b(d(rng)), c(d(rng));
    CHECK(interval_semitones(a, b) == interval_semitones(b, a));
    CHECK(interval_semitones(a, c) <= interval_semitones(a, b) + interval_semitones(b, c));
  }
}

TEST_CASE("domain type invariants are enforced", "[score]") {
  CHECK_THROWS_AS(PitchClass(12), Error);
  CHECK_THROWS_AS(PitchClass(-1), Error);
  CHECK_THROWS_AS(Pitch(128), Error);
  CHECK_THROWS_AS(NoteEvent::rest().pitch(), Error);
  CHECK(PitchClass::wrap(-3).value() == 9);
  CHECK(PitchClass::wrap(12).value() == 0);
}
