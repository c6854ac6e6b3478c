#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cantus/error.hpp"
#include "cantus/reduce.hpp"
#include "cantus/score.hpp"
#include "cantus/tokenizer.hpp"

namespace cantus {

/// One phrase of a prepared dataset: the reduced score content plus every
/// token view of it. Generated phrases reuse the same record shape (token
/// fields may be empty there).
struct DatasetRecord {
  std::string id;
  int key_root = 0;
  Mode mode = Mode::Major;
  std::vector<ChordSymbol> chords;
  std::vector<std::optional<int>> bass;    // MIDI per sonority, nullopt = rest
  std::vector<std::optional<int>> melody;
  ChordTokenSequence chord_ids;
  TokenSequence bass_tokens;
  TokenSequence melody_tokens;
  TokenSequence interleaved_tokens;
};

inline DatasetRecord make_record(const Phrase& p, const RemiVocab& vocab,
                                 int max_len = kMaxSeqLen) {
  DatasetRecord r;
  r.id = p.id;
  r.key_root = p.key_root.value();
  r.mode = p.mode;
  for (const Sonority& s : p.sonorities) {
    r.chords.push_back(s.chord);
    r.bass.push_back(s.bass.is_rest() ? std::nullopt : std::optional<int>(s.bass.pitch().midi()));
    r.melody.push_back(s.melody.is_rest() ? std::nullopt
                                          : std::optional<int>(s.melody.pitch().midi()));
  }
  r.chord_ids = encode_chords(r.chords, max_len);
  r.bass_tokens = encode_voice(p, Voice::Bass, vocab, max_len);
  r.melody_tokens = encode_voice(p, Voice::Melody, vocab, max_len);
  r.interleaved_tokens = encode_interleaved(p, vocab, max_len);
  return r;
}

/// Rebuild a Phrase view of a record (quarter-note events, default velocity).
inline Phrase to_phrase(const DatasetRecord& r) {
  Phrase p;
  p.id = r.id;
  p.key_root = PitchClass(r.key_root);
  p.mode = r.mode;
  for (std::size_t i = 0; i < r.chords.size(); ++i) {
    Sonority s;
    s.chord = r.chords[i];
    s.bass = i < r.bass.size() && r.bass[i] ? NoteEvent::note(Pitch(*r.bass[i])) : NoteEvent::rest();
    s.melody =
        i < r.melody.size() && r.melody[i] ? NoteEvent::note(Pitch(*r.melody[i])) : NoteEvent::rest();
    p.sonorities.push_back(s);
  }
  return p;
}

namespace detail {

inline nlohmann::json events_to_json(const std::vector<std::optional<int>>& events) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : events) {
    if (e) out.push_back(*e);
    else out.push_back(nullptr);
  }
  return out;
}

inline std::vector<std::optional<int>> events_from_json(const nlohmann::json& j) {
  std::vector<std::optional<int>> out;
  for (const auto& e : j) {
    if (e.is_null()) out.push_back(std::nullopt);
    else out.push_back(e.get<int>());
  }
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const DatasetRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["key_root"] = r.key_root;
  j["mode"] = to_string(r.mode);
  j["harte"] = to_harte_progression(r.chords);
  j["bass"] = detail::events_to_json(r.bass);
  j["melody"] = detail::events_to_json(r.melody);
  j["chord_ids"] = r.chord_ids.ids;
  j["bass_tokens"] = r.bass_tokens.ids;
  j["melody_tokens"] = r.melody_tokens.ids;
  j["interleaved_tokens"] = r.interleaved_tokens.ids;
  return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
  DatasetRecord r;
  r.id = j.at("id").get<std::string>();
  r.key_root = j.at("key_root").get<int>();
  r.mode = j.at("mode").get<std::string>() == "minor" ? Mode::Minor : Mode::Major;
  r.chords = parse_harte_progression(j.at("harte").get<std::string>());
  r.bass = detail::events_from_json(j.at("bass"));
  r.melody = detail::events_from_json(j.at("melody"));
  if (j.contains("chord_ids")) r.chord_ids.ids = j.at("chord_ids").get<std::vector<int>>();
  if (j.contains("bass_tokens")) r.bass_tokens.ids = j.at("bass_tokens").get<std::vector<int>>();
  if (j.contains("melody_tokens")) r.melody_tokens.ids = j.at("melody_tokens").get<std::vector<int>>();
  if (j.contains("interleaved_tokens"))
    r.interleaved_tokens.ids = j.at("interleaved_tokens").get<std::vector<int>>();
  return r;
}

/// Line-delimited JSON, one record per phrase.
inline void write_dataset(const std::filesystem::path& path,
                          const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path.string());
  for (const DatasetRecord& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset file: " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Stable description of the fixed REMI vocabulary, stored with datasets and
/// checkpoints so an id remapping cannot slip through unnoticed.
inline nlohmann::json vocab_manifest(const RemiVocab& vocab) {
  nlohmann::json names = nlohmann::json::array();
  for (int id = 0; id < vocab.size(); ++id) names.push_back(vocab.name(id));
  nlohmann::json j;
  j["kind"] = "remi";
  j["size"] = vocab.size();
  j["tokens"] = names;
  j["chord_vocab_size"] = kChordVocabSize;
  return j;
}

/// Check a stored manifest against the compiled-in vocabulary layout.
inline void verify_vocab_manifest(const nlohmann::json& j, const RemiVocab& vocab) {
  if (j.at("size").get<int>() != vocab.size())
    throw DataError("vocabulary size mismatch with manifest");
  const auto& names = j.at("tokens");
  for (int id = 0; id < vocab.size(); ++id)
    if (names.at(id).get<std::string>() != vocab.name(id))
      throw DataError("vocabulary token mismatch at id " + std::to_string(id));
}

}  // namespace cantus
