#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "cantus/error.hpp"
#include "cantus/reduce.hpp"
#include "cantus/score.hpp"

namespace cantus {

struct EmptyLine : DataError {
  using DataError::DataError;
};
struct TooShort : DataError {
  using DataError::DataError;
};
struct NoPairedSonorities : DataError {
  using DataError::DataError;
};
struct MisalignedChords : DataError {
  using DataError::DataError;
};

// The eight evaluation metrics. Rests never count as notes: they are
// excluded from histograms and skipped (not broken) by interval computation.

/// Distinct pitch classes divided by the number of sounded notes.
inline double pcs_used(const std::vector<NoteEvent>& line) {
  bool seen[12] = {false};
  int distinct = 0;
  int sounded = 0;
  for (const NoteEvent& e : line) {
    if (e.is_rest()) continue;
    ++sounded;
    int pc = pitch_class(e.pitch()).value();
    if (!seen[pc]) {
      seen[pc] = true;
      ++distinct;
    }
  }
  if (sounded == 0) throw EmptyLine("pcs_used needs at least one sounded note");
  return static_cast<double>(distinct) / static_cast<double>(sounded);
}

/// Entropy of the normalized 12-bin pitch-class histogram. Natural log by
/// default; `log_base` rescales (2 for bits, 12 for a [0,1] range).
inline double pc_entropy(const std::vector<NoteEvent>& line, double log_base = 0.0) {
  int histogram[12] = {0};
  int sounded = 0;
  for (const NoteEvent& e : line) {
    if (e.is_rest()) continue;
    ++sounded;
    ++histogram[pitch_class(e.pitch()).value()];
  }
  if (sounded == 0) throw EmptyLine("pc_entropy needs at least one sounded note");
  double h = 0.0;
  for (int bin = 0; bin < 12; ++bin) {
    if (histogram[bin] == 0) continue;  // 0 log 0 = 0
    double p = static_cast<double>(histogram[bin]) / static_cast<double>(sounded);
    h -= p * std::log(p);
  }
  if (log_base > 0.0) h /= std::log(log_base);
  return h;
}

/// Count of distinct MIDI pitches (octave-sensitive). Zero for empty lines.
inline int unique_pitches(const std::vector<NoteEvent>& line) {
  std::set<int> midis;
  for (const NoteEvent& e : line)
    if (e.is_sounded()) midis.insert(e.pitch().midi());
  return static_cast<int>(midis.size());
}

/// Highest minus lowest sounded MIDI pitch.
inline int pitch_range(const std::vector<NoteEvent>& line) {
  int lo = 128, hi = -1;
  for (const NoteEvent& e : line) {
    if (e.is_rest()) continue;
    lo = std::min(lo, e.pitch().midi());
    hi = std::max(hi, e.pitch().midi());
  }
  if (hi < 0) throw EmptyLine("pitch_range needs at least one sounded note");
  return hi - lo;
}

/// Mean absolute interval between consecutive sounded notes; rests are
/// skipped so an interval can span them.
inline double avg_pitch_interval(const std::vector<NoteEvent>& line) {
  double sum = 0.0;
  int intervals = 0;
  int prev = -1;
  for (const NoteEvent& e : line) {
    if (e.is_rest()) continue;
    int midi = e.pitch().midi();
    if (prev >= 0) {
      sum += std::abs(midi - prev);
      ++intervals;
    }
    prev = midi;
  }
  if (intervals == 0) throw TooShort("avg_pitch_interval needs at least two sounded notes");
  return sum / static_cast<double>(intervals);
}

namespace detail {

/// Sonority indices where both voices sound, up to the shorter line.
inline std::size_t paired_length(const std::vector<NoteEvent>& bass,
                                 const std::vector<NoteEvent>& melody) {
  return std::min(bass.size(), melody.size());
}

}  // namespace detail

/// Mean over both-sounded sonorities of |{pc(melody), pc(bass)}| / 2:
/// 1.0 when the classes differ, 0.5 when they coincide.
inline double unique_pc_ratio(const std::vector<NoteEvent>& bass,
                              const std::vector<NoteEvent>& melody) {
  double sum = 0.0;
  int paired = 0;
  for (std::size_t i = 0; i < detail::paired_length(bass, melody); ++i) {
    if (bass[i].is_rest() || melody[i].is_rest()) continue;
    ++paired;
    int pcb = pitch_class(bass[i].pitch()).value();
    int pcm = pitch_class(melody[i].pitch()).value();
    sum += pcb == pcm ? 0.5 : 1.0;
  }
  if (paired == 0) throw NoPairedSonorities("unique_pc_ratio needs a sonority with both voices");
  return sum / static_cast<double>(paired);
}

inline double unique_pc_ratio(const Phrase& p) {
  return unique_pc_ratio(voice_line(p, Voice::Bass), voice_line(p, Voice::Melody));
}

/// Consonance of the melody-over-bass interval class: +1 for unison/third/
/// fifth/sixth {0,3,4,7,8,9}, 0 for the perfect fourth {5}, -1 otherwise.
inline int consonance_of_interval_class(int interval_class) {
  switch (interval_class) {
    case 0:
    case 3:
    case 4:
    case 7:
    case 8:
    case 9:
      return 1;
    case 5:
      return 0;
    default:
      return -1;
  }
}

inline double pitch_consonance_score(const std::vector<NoteEvent>& bass,
                                     const std::vector<NoteEvent>& melody) {
  double sum = 0.0;
  int paired = 0;
  for (std::size_t i = 0; i < detail::paired_length(bass, melody); ++i) {
    if (bass[i].is_rest() || melody[i].is_rest()) continue;
    ++paired;
    int diff = melody[i].pitch().midi() - bass[i].pitch().midi();
    int ic = ((diff % 12) + 12) % 12;
    sum += consonance_of_interval_class(ic);
  }
  if (paired == 0) throw NoPairedSonorities("pitch_consonance_score needs a sonority with both voices");
  return sum / static_cast<double>(paired);
}

inline double pitch_consonance_score(const Phrase& p) {
  return pitch_consonance_score(voice_line(p, Voice::Bass), voice_line(p, Voice::Melody));
}

/// Fraction of sounded notes whose pitch class belongs to the aligned
/// chord's triad. Requires strict 1:1 alignment with the chord list.
inline double ct_ratio(const std::vector<NoteEvent>& line, const std::vector<ChordSymbol>& chords) {
  if (line.size() != chords.size())
    throw MisalignedChords("line has " + std::to_string(line.size()) + " events but " +
                           std::to_string(chords.size()) + " chords");
  int sounded = 0, chord_tones = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i].is_rest()) continue;
    ++sounded;
    if (is_chord_tone(chords[i], pitch_class(line[i].pitch()))) ++chord_tones;
  }
  if (sounded == 0) throw EmptyLine("ct_ratio needs at least one sounded note");
  return static_cast<double>(chord_tones) / static_cast<double>(sounded);
}

/// All metrics of one line; ct_ratio is absent when no chords are supplied.
struct LineMetrics {
  double pcs_used = 0.0;
  double pc_entropy = 0.0;
  int unique_pitches = 0;
  int pitch_range = 0;
  double avg_pitch_interval = 0.0;
  std::optional<double> ct_ratio;
};

inline LineMetrics line_metrics(const std::vector<NoteEvent>& line,
                                const std::vector<ChordSymbol>* chords, double entropy_base = 0.0) {
  LineMetrics m;
  m.pcs_used = pcs_used(line);
  m.pc_entropy = pc_entropy(line, entropy_base);
  m.unique_pitches = unique_pitches(line);
  m.pitch_range = pitch_range(line);
  m.avg_pitch_interval = avg_pitch_interval(line);
  if (chords) m.ct_ratio = ct_ratio(line, *chords);
  return m;
}

/// Metrics computed between the two voices.
struct PairMetrics {
  double unique_pc_ratio = 0.0;
  double pcs = 0.0;
};

inline PairMetrics pair_metrics(const std::vector<NoteEvent>& bass,
                                const std::vector<NoteEvent>& melody) {
  return {unique_pc_ratio(bass, melody), pitch_consonance_score(bass, melody)};
}

}  // namespace cantus
