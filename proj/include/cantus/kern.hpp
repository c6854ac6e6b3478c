#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cantus/error.hpp"
#include "cantus/score.hpp"

namespace cantus {

struct MalformedKern : DataError {
  using DataError::DataError;
};
struct UnsupportedFeature : DataError {
  using DataError::DataError;
};
struct UnparseableRomanNumeral : DataError {
  using DataError::DataError;
};

/// One kern data row across the four spines. Continuation markers (".")
/// are kept verbatim so later stages can tell onsets from sustains.
struct RawRecord {
  std::string function;
  std::string harmonic;
  std::vector<std::string> bass_tokens;
  std::vector<std::string> melody_tokens;

  bool operator==(const RawRecord&) const = default;
};

/// A parsed phrase file before reduction.
struct RawPhrase {
  std::string id;
  PitchClass key_root;
  Mode mode = Mode::Major;
  std::vector<RawRecord> records;
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline int letter_semitone(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case 'c': return 0;
    case 'd': return 2;
    case 'e': return 4;
    case 'f': return 5;
    case 'g': return 7;
    case 'a': return 9;
    case 'b': return 11;
    default: return -1;
  }
}

}  // namespace detail

/// Convert one kern note token to a pitch, or nullopt for a rest.
///
/// Kern pitch grammar: a run of one repeated letter ("c" = C4, "cc" = C5,
/// "C" = C3, "CC" = C2), then "#"/"-" accidentals, one semitone each.
/// Duration digits, dots, ties, beams and ornament marks are ignored.
inline std::optional<Pitch> kern_pitch_to_midi(std::string_view token) {
  if (token.find('r') != std::string_view::npos) return std::nullopt;

  std::size_t i = 0;
  while (i < token.size() && detail::letter_semitone(token[i]) < 0) ++i;
  if (i >= token.size())
    throw MalformedKern("no pitch letter in kern token: " + std::string(token));

  char letter = token[i];
  int reps = 0;
  while (i < token.size() && token[i] == letter) {
    ++reps;
    ++i;
  }
  int accidental = 0;
  while (i < token.size() && (token[i] == '#' || token[i] == '-' || token[i] == 'n')) {
    if (token[i] == '#') ++accidental;
    if (token[i] == '-') --accidental;
    ++i;
  }
  // Anything after the pitch may only be articulation/ornament characters,
  // never a second pitch letter.
  for (; i < token.size(); ++i) {
    if (detail::letter_semitone(token[i]) >= 0)
      throw MalformedKern("mixed pitch letters in kern token: " + std::string(token));
  }

  int base = detail::letter_semitone(letter);
  int midi = std::islower(static_cast<unsigned char>(letter)) ? 60 + 12 * (reps - 1) + base
                                                              : 48 - 12 * (reps - 1) + base;
  midi += accidental;
  if (midi < 0 || midi > 127)
    throw MalformedKern("kern pitch out of MIDI range: " + std::string(token));
  return Pitch(midi);
}

namespace detail {

struct NumeralParse {
  int degree = 0;       // 1..7
  bool lowercase = false;
  int accidental = 0;   // applied to the scale-degree root
  char quality_mark = 0;  // 'o' or '+', 0 if none
};

inline std::optional<int> roman_degree(std::string_view s, bool& lowercase) {
  static constexpr std::string_view upper[] = {"VII", "VI", "IV", "V", "III", "II", "I"};
  static constexpr int degree_of[] = {7, 6, 4, 5, 3, 2, 1};
  std::string u(s);
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  for (int k = 0; k < 7; ++k) {
    if (std::string_view(u).substr(0, upper[k].size()) == upper[k]) {
      lowercase = std::islower(static_cast<unsigned char>(s[0])) != 0;
      return degree_of[k];
    }
  }
  return std::nullopt;
}

inline std::size_t roman_length(std::string_view s) {
  std::size_t n = 0;
  while (n < s.size() && (std::toupper(static_cast<unsigned char>(s[n])) == 'I' ||
                          std::toupper(static_cast<unsigned char>(s[n])) == 'V'))
    ++n;
  return n;
}

}  // namespace detail

/// Resolve a TAVERN harmonic-spine token to one of the 24 chord classes.
///
/// Inversion figures and sevenths are dropped; diminished triads collapse to
/// min and augmented to maj. Applied chords ("V/V") resolve to the absolute
/// root of the applied chord. Minor-key degree 7 uses the leading tone for
/// viio and the subtonic for VII.
inline ChordSymbol roman_numeral_to_chord(std::string_view rn, PitchClass key_root, Mode mode) {
  std::string_view s = rn;
  if (s.empty()) throw UnparseableRomanNumeral("empty roman numeral");
  // strip parenthesized uncertainty markers
  while (!s.empty() && (s.front() == '(' || s.front() == '[')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ')' || s.back() == ']' || s.back() == ';')) s.remove_suffix(1);
  if (s.empty()) throw UnparseableRomanNumeral("empty roman numeral: " + std::string(rn));

  // applied chords: resolve the part after '/' first, then the head against it
  if (std::size_t slash = s.find('/'); slash != std::string_view::npos) {
    ChordSymbol target = roman_numeral_to_chord(s.substr(slash + 1), key_root, mode);
    // the applied numeral is heard against the target as a local tonic
    return roman_numeral_to_chord(s.substr(0, slash), target.root, Mode::Major);
  }

  // Neapolitan and augmented-sixth labels
  if (s[0] == 'N') return {key_root.transposed(1), ChordQuality::Maj};
  if (s.substr(0, 2) == "It" || s.substr(0, 2) == "Fr" || s.substr(0, 3) == "Ger")
    return {key_root.transposed(8), ChordQuality::Maj};

  int accidental = 0;
  while (!s.empty() && (s[0] == '#' || s[0] == '-' || s[0] == 'b')) {
    accidental += s[0] == '#' ? 1 : -1;
    s.remove_prefix(1);
  }

  bool lowercase = false;
  auto degree = detail::roman_degree(s, lowercase);
  if (!degree) throw UnparseableRomanNumeral("cannot parse roman numeral: " + std::string(rn));
  s.remove_prefix(detail::roman_length(s));

  char quality_mark = 0;
  if (!s.empty() && (s[0] == 'o' || s[0] == '+')) {
    quality_mark = s[0];
    s.remove_prefix(1);
  }
  // remaining characters may only be figures (inversions/sevenths), which we discard
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c)) && c != '/' && c != 'b' && c != '#')
      throw UnparseableRomanNumeral("unexpected character in roman numeral: " + std::string(rn));
  }

  static constexpr int major_scale[] = {0, 2, 4, 5, 7, 9, 11};
  static constexpr int natural_minor[] = {0, 2, 3, 5, 7, 8, 10};
  int deg = *degree;
  int offset;
  if (mode == Mode::Major) {
    offset = major_scale[deg - 1];
  } else {
    offset = natural_minor[deg - 1];
    // harmonic-minor leading tone for the dominant-function degree 7 chord
    if (deg == 7 && (lowercase || quality_mark == 'o')) offset = 11;
  }
  PitchClass root = key_root.transposed(offset + accidental);

  ChordQuality quality;
  if (quality_mark == 'o') quality = ChordQuality::Min;
  else if (quality_mark == '+') quality = ChordQuality::Maj;
  else quality = lowercase ? ChordQuality::Min : ChordQuality::Maj;
  return {root, quality};
}

/// Parse a TAVERN-style phrase file: four flat spines (function, harmonic,
/// bass **kern, melody **kern), key from the tandem key designation.
inline RawPhrase parse_kern(std::string_view text, std::string id = "") {
  RawPhrase phrase;
  phrase.id = std::move(id);

  int function_col = -1, harm_col = -1, bass_col = -1, melody_col = -1;
  int spine_count = -1;
  bool key_found = false;
  bool saw_exclusive = false;

  std::size_t line_no = 0;
  for (std::string& line : detail::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("!!", 0) == 0) continue;  // global comment

    std::vector<std::string> cells = detail::split(line, '\t');
    auto fail = [&](const std::string& why) {
      throw MalformedKern("line " + std::to_string(line_no) + ": " + why);
    };

    if (line.rfind("**", 0) == 0) {
      if (saw_exclusive) fail("duplicate exclusive interpretation row");
      saw_exclusive = true;
      spine_count = static_cast<int>(cells.size());
      if (spine_count != 4) fail("expected 4 spines, found " + std::to_string(spine_count));
      std::vector<int> kern_cols;
      for (int i = 0; i < spine_count; ++i) {
        if (cells[i] == "**kern") kern_cols.push_back(i);
        else if (cells[i].rfind("**harm", 0) == 0) harm_col = i;
        else if (function_col < 0) function_col = i;
        else fail("unexpected extra spine " + cells[i]);
      }
      if (kern_cols.size() != 2) fail("expected exactly two **kern spines");
      if (harm_col < 0) fail("missing **harm spine");
      bass_col = kern_cols[0];  // lower voice is leftmost by kern convention
      melody_col = kern_cols[1];
      continue;
    }
    if (!saw_exclusive) fail("data before exclusive interpretations");
    if (static_cast<int>(cells.size()) != spine_count)
      fail("row has " + std::to_string(cells.size()) + " spines, expected " + std::to_string(spine_count));

    if (line[0] == '*') {
      for (const std::string& cell : cells) {
        if (cell == "*^" || cell == "*v")
          throw UnsupportedFeature("line " + std::to_string(line_no) + ": spine split/merge");
        // key designation: *C: major, *c: minor, with optional accidental
        if (!key_found && cell.size() >= 3 && cell.front() == '*' && cell.back() == ':') {
          std::string_view body(cell);
          body.remove_prefix(1);
          body.remove_suffix(1);
          int base = detail::letter_semitone(body[0]);
          if (base < 0) continue;
          bool ok = true;
          int acc = 0;
          for (std::size_t k = 1; k < body.size(); ++k) {
            if (body[k] == '#') ++acc;
            else if (body[k] == '-') --acc;
            else { ok = false; break; }
          }
          if (!ok) continue;
          phrase.key_root = PitchClass::wrap(base + acc);
          phrase.mode = std::isupper(static_cast<unsigned char>(body[0])) ? Mode::Major : Mode::Minor;
          key_found = true;
        }
      }
      continue;
    }
    if (line[0] == '=') continue;  // barline
    if (line[0] == '!') continue;  // local comment row

    RawRecord rec;
    rec.function = cells[function_col];
    rec.harmonic = cells[harm_col];
    rec.bass_tokens = detail::split(cells[bass_col], ' ');
    rec.melody_tokens = detail::split(cells[melody_col], ' ');
    phrase.records.push_back(std::move(rec));
  }

  if (!saw_exclusive) throw MalformedKern("no exclusive interpretation row");
  if (!key_found) throw MalformedKern("no key designation found");
  if (phrase.records.empty()) throw MalformedKern("no data records");
  return phrase;
}

inline RawPhrase load_kern_file(const std::filesystem::path& path, std::string id = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open kern file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (id.empty()) id = path.stem().string();
  return parse_kern(buf.str(), std::move(id));
}

/// Maps one file to one RawPhrase for every .krn file directly in `dir`,
/// sorted by filename for stable ids.
inline std::vector<RawPhrase> load_kern_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".krn") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<RawPhrase> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_kern_file(f));
  return out;
}

}  // namespace cantus
