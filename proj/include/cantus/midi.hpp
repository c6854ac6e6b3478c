#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cantus/error.hpp"
#include "cantus/reduce.hpp"
#include "cantus/score.hpp"

namespace cantus {

constexpr int kTicksPerQuarter = 480;
constexpr std::uint32_t kTempoMicrosPerQuarter = 500000;  // 120 BPM

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t stack[5];
  int n = 0;
  stack[n++] = v & 0x7f;
  v >>= 7;
  while (v) {
    stack[n++] = static_cast<std::uint8_t>((v & 0x7f) | 0x80);
    v >>= 7;
  }
  while (n--) out.push_back(stack[n]);
}

}  // namespace detail

/// Render one voice of a reduced phrase as a single-track format-0 standard
/// MIDI file: one quarter note per sonority at 120 BPM, 480 ticks per
/// quarter; rests leave gaps.
inline std::vector<std::uint8_t> to_midi(const Phrase& p, Voice voice) {
  std::vector<std::uint8_t> track;
  // tempo meta event at tick 0
  detail::put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x51, 0x03});
  track.push_back(static_cast<std::uint8_t>(kTempoMicrosPerQuarter >> 16));
  track.push_back(static_cast<std::uint8_t>((kTempoMicrosPerQuarter >> 8) & 0xff));
  track.push_back(static_cast<std::uint8_t>(kTempoMicrosPerQuarter & 0xff));

  std::uint32_t cursor = 0;
  for (std::size_t i = 0; i < p.sonorities.size(); ++i) {
    const NoteEvent& e = voice_event(p.sonorities[i], voice);
    if (e.is_rest()) continue;
    std::uint32_t on = static_cast<std::uint32_t>(i) * kTicksPerQuarter;
    std::uint32_t off = on + e.duration_quarters() * kTicksPerQuarter;
    detail::put_vlq(track, on - cursor);
    track.insert(track.end(), {0x90, static_cast<std::uint8_t>(e.pitch().midi()),
                               static_cast<std::uint8_t>(e.velocity())});
    detail::put_vlq(track, off - on);
    track.insert(track.end(), {0x80, static_cast<std::uint8_t>(e.pitch().midi()), 0x40});
    cursor = off;
  }
  // end of track
  detail::put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x2f, 0x00});

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  detail::put_u32(out, 6);
  detail::put_u16(out, 0);  // format 0
  detail::put_u16(out, 1);  // one track
  detail::put_u16(out, kTicksPerQuarter);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  detail::put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

inline void write_midi_file(const std::filesystem::path& path, const Phrase& p, Voice voice) {
  std::vector<std::uint8_t> bytes = to_midi(p, voice);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write MIDI file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace cantus
