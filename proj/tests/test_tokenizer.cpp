#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cantus/dataset.hpp"
#include "cantus/kern.hpp"
#include "cantus/reduce.hpp"
#include "cantus/tokenizer.hpp"

using namespace cantus;

namespace {

Phrase make_phrase(std::vector<std::pair<std::optional<int>, std::optional<int>>> spec) {
  Phrase p;
  p.id = "t";
  p.key_root = PitchClass(0);
  for (auto& [bass, mel] : spec) {
    Sonority s;
    s.chord = {PitchClass(0), ChordQuality::Maj};
    s.bass = bass ? NoteEvent::note(Pitch(*bass)) : NoteEvent::rest();
    s.melody = mel ? NoteEvent::note(Pitch(*mel)) : NoteEvent::rest();
    p.sonorities.push_back(s);
  }
  return p;
}

std::vector<Phrase> fixture_phrases() {
  namespace fs = std::filesystem;
  std::vector<Phrase> out;
  for (const auto& set_dir : fs::directory_iterator(CANTUS_FIXTURE_DIR "/corpus"))
    for (const RawPhrase& raw : load_kern_dir(set_dir.path()))
      out.push_back(transpose_to_c(reduce_phrase(raw)));
  return out;
}

}  // namespace

TEST_CASE("parse_harte", "[tokenizer]") {
  CHECK(parse_harte("C:min") == ChordSymbol{PitchClass(0), ChordQuality::Min});
  CHECK(parse_harte("G:maj") == ChordSymbol{PitchClass(7), ChordQuality::Maj});
  CHECK(parse_harte("Db:maj") == parse_harte("C#:maj"));
  CHECK(parse_harte("Db:maj").root.value() == 1);
  CHECK_THROWS_AS(parse_harte("H:maj"), UnparseableChord);
  CHECK_THROWS_AS(parse_harte("C:dim"), UnparseableChord);
  CHECK_THROWS_AS(parse_harte("Cmaj"), UnparseableChord);
}

TEST_CASE("harte progression text round-trips", "[tokenizer]") {
  auto chords = parse_harte_progression("C:min G:maj G:maj C:min");
  REQUIRE(chords.size() == 4);
  CHECK(chords[0] == ChordSymbol{PitchClass(0), ChordQuality::Min});
  CHECK(chords[1] == ChordSymbol{PitchClass(7), ChordQuality::Maj});
  CHECK(to_harte_progression(chords) == "C:min G:maj G:maj C:min");
}

TEST_CASE("chord ids are the documented bijection", "[tokenizer]") {
  CHECK(chord_to_id({PitchClass(0), ChordQuality::Maj}) == 1);
  CHECK(chord_to_id({PitchClass(0), ChordQuality::Min}) == 2);
  CHECK(chord_to_id({PitchClass(11), ChordQuality::Min}) == 24);
  for (int id = 1; id <= 24; ++id) CHECK(chord_to_id(id_to_chord(id)) == id);
  for (int root = 0; root < 12; ++root)
    for (ChordQuality q : {ChordQuality::Maj, ChordQuality::Min}) {
      ChordSymbol c{PitchClass(root), q};
      CHECK(id_to_chord(chord_to_id(c)) == c);
    }
  CHECK_THROWS_AS(id_to_chord(0), Error);
  CHECK_THROWS_AS(id_to_chord(25), Error);
}

TEST_CASE("chord sequences pad with zero suffix", "[tokenizer]") {
  auto seq = encode_chords(parse_harte_progression("C:min G:maj"));
  REQUIRE(seq.ids.size() == 128);
  CHECK(seq.ids[0] == 2);
  CHECK(seq.ids[1] == 15);
  for (std::size_t i = 2; i < seq.ids.size(); ++i) CHECK(seq.ids[i] == 0);
}

TEST_CASE("encode_voice layout", "[tokenizer]") {
  RemiVocab vocab;
  Phrase p = make_phrase({{{48}, {72}}, {{43}, std::nullopt}});
  TokenSequence mel = encode_voice(p, Voice::Melody, vocab);
  REQUIRE(mel.ids.size() == 128);
  CHECK(mel.ids[0] == RemiVocab::kBos);
  CHECK(mel.ids[1] == vocab.pitch_token(72));
  CHECK(vocab.name(mel.ids[2]) == "Velocity_4");
  CHECK(vocab.name(mel.ids[3]) == "Duration_1");
  CHECK(mel.ids[4] == RemiVocab::kRest);
  CHECK(mel.ids[5] == RemiVocab::kEos);
  for (std::size_t i = 6; i < 128; ++i) CHECK(mel.ids[i] == RemiVocab::kPad);
}

TEST_CASE("encode_voice of an empty phrase", "[tokenizer]") {
  RemiVocab vocab;
  Phrase p;
  p.id = "empty";
  p.key_root = PitchClass(0);
  TokenSequence seq = encode_voice(p, Voice::Melody, vocab);
  CHECK(seq.ids[0] == RemiVocab::kBos);
  CHECK(seq.ids[1] == RemiVocab::kEos);
  CHECK(seq.content_length() == 2);
}

TEST_CASE("long phrases truncate without EOS", "[tokenizer]") {
  RemiVocab vocab;
  std::vector<std::pair<std::optional<int>, std::optional<int>>> spec(50, {{48}, {72}});
  Phrase p = make_phrase(spec);
  bool truncated = false;
  TokenSequence seq = encode_voice(p, Voice::Melody, vocab, kMaxSeqLen, &truncated);
  CHECK(truncated);
  CHECK(seq.ids.size() == 128);
  for (int id : seq.ids) CHECK(id != RemiVocab::kEos);
  CHECK(seq.ids.back() != RemiVocab::kPad);
}

TEST_CASE("encode_interleaved layout", "[tokenizer]") {
  RemiVocab vocab;
  Phrase p = make_phrase({{{48}, {72}}});
  TokenSequence seq = encode_interleaved(p, vocab);
  std::vector<int> head(seq.ids.begin(), seq.ids.begin() + 10);
  std::vector<int> expected{RemiVocab::kBos,      RemiVocab::kVoiceBass, vocab.pitch_token(48),
                            vocab.velocity_token(64), vocab.duration_token(1),
                            RemiVocab::kVoiceMel, vocab.pitch_token(72),
                            vocab.velocity_token(64), vocab.duration_token(1),
                            RemiVocab::kEos};
  CHECK(head == expected);

  Phrase rests = make_phrase({{std::nullopt, std::nullopt}});
  TokenSequence rseq = encode_interleaved(rests, vocab);
  std::vector<int> rhead(rseq.ids.begin(), rseq.ids.begin() + 6);
  CHECK(rhead == std::vector<int>{RemiVocab::kBos, RemiVocab::kVoiceBass, RemiVocab::kRest,
                                  RemiVocab::kVoiceMel, RemiVocab::kRest, RemiVocab::kEos});
}

TEST_CASE("padding never precedes EOS in untruncated encodings", "[tokenizer]") {
  RemiVocab vocab;
  for (const Phrase& p : fixture_phrases()) {
    for (TokenSequence seq : {encode_voice(p, Voice::Bass, vocab), encode_voice(p, Voice::Melody, vocab),
                              encode_interleaved(p, vocab)}) {
      auto eos = std::find(seq.ids.begin(), seq.ids.end(), RemiVocab::kEos);
      REQUIRE(eos != seq.ids.end());
      for (auto it = seq.ids.begin(); it != eos; ++it) CHECK(*it != RemiVocab::kPad);
      for (auto it = eos + 1; it != seq.ids.end(); ++it) CHECK(*it == RemiVocab::kPad);
    }
  }
}

TEST_CASE("decode inverts encode on all fixture phrases", "[tokenizer]") {
  RemiVocab vocab;
  for (const Phrase& p : fixture_phrases()) {
    REQUIRE(p.sonorities.size() <= 41);
    auto bass_line = voice_line(p, Voice::Bass);
    auto mel_line = voice_line(p, Voice::Melody);

    DecodeResult mel = decode_tokens(encode_voice(p, Voice::Melody, vocab).ids, vocab);
    CHECK(mel.repairs == 0);
    CHECK(mel.events == mel_line);
    DecodeResult bass = decode_tokens(encode_voice(p, Voice::Bass, vocab).ids, vocab);
    CHECK(bass.events == bass_line);

    InterleavedDecodeResult both = decode_interleaved(encode_interleaved(p, vocab).ids, vocab);
    CHECK(both.repairs == 0);
    CHECK(both.bass == bass_line);
    CHECK(both.melody == mel_line);
  }
}

TEST_CASE("decode repairs malformed fragments", "[tokenizer]") {
  RemiVocab vocab;
  DecodeResult r = decode_tokens(std::vector<int>{RemiVocab::kBos, vocab.pitch_token(60),
                                                  RemiVocab::kEos},
                                 vocab);
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0] == NoteEvent::note(Pitch(60), 1, kDefaultVelocity));
  CHECK(r.repairs == 1);

  DecodeResult empty = decode_tokens(std::vector<int>{RemiVocab::kBos, RemiVocab::kEos}, vocab);
  CHECK(empty.events.empty());
  CHECK(empty.repairs == 0);

  // stray velocity token and an event before any voice marker
  DecodeResult stray =
      decode_tokens(std::vector<int>{RemiVocab::kBos, vocab.velocity_token(64), RemiVocab::kEos}, vocab);
  CHECK(stray.events.empty());
  CHECK(stray.repairs == 1);
  InterleavedDecodeResult pre = decode_interleaved(
      std::vector<int>{RemiVocab::kBos, RemiVocab::kRest, RemiVocab::kEos}, vocab);
  CHECK(pre.repairs == 1);
  CHECK(pre.bass.empty());
  CHECK(pre.melody.empty());
}

TEST_CASE("vocabulary manifest round-trips and verifies", "[tokenizer]") {
  RemiVocab vocab;
  nlohmann::json manifest = vocab_manifest(vocab);
  std::string bytes = manifest.dump();
  nlohmann::json reparsed = nlohmann::json::parse(bytes);
  CHECK(reparsed.dump() == bytes);
  CHECK_NOTHROW(verify_vocab_manifest(reparsed, vocab));
  reparsed["tokens"][3] = "SOMETHING";
  CHECK_THROWS_AS(verify_vocab_manifest(reparsed, vocab), DataError);
  CHECK(vocab.size() == 146);
}

TEST_CASE("dataset records serialize and re-read", "[tokenizer]") {
  RemiVocab vocab;
  auto phrases = fixture_phrases();
  std::vector<DatasetRecord> records;
  for (const Phrase& p : phrases) records.push_back(make_record(p, vocab));

  auto tmp = std::filesystem::temp_directory_path() / "cantus_dataset_test.jsonl";
  write_dataset(tmp, records);
  auto reread = read_dataset(tmp);
  REQUIRE(reread.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(reread[i].id == records[i].id);
    CHECK(reread[i].chords == records[i].chords);
    CHECK(reread[i].bass == records[i].bass);
    CHECK(reread[i].melody == records[i].melody);
    CHECK(reread[i].bass_tokens == records[i].bass_tokens);
    CHECK(reread[i].interleaved_tokens == records[i].interleaved_tokens);
    CHECK(to_phrase(reread[i]) == to_phrase(records[i]));
  }
  std::filesystem::remove(tmp);
}
