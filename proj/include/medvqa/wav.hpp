#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace medvqa {

struct WavInfo {
  std::uint16_t audio_format = 0;  // 1 = PCM
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits_per_sample = 0;
  std::uint32_t data_bytes = 0;

  std::int64_t duration_ms() const;
  bool is_pcm16_mono() const { return audio_format == 1 && channels == 1 && bits_per_sample == 16; }
};

/// Walks the RIFF chunk list. Returns nullopt unless the bytes start with a
/// RIFF/WAVE header holding a fmt chunk before a data chunk.
std::optional<WavInfo> parse_wav(std::string_view bytes);

/// Serializes PCM16 mono samples as a canonical 44-byte-header WAV file.
std::string encode_wav_pcm16_mono(std::uint32_t sample_rate, std::span<const std::int16_t> samples);

/// Short sine tone, used by mock providers and fixtures.
std::string synth_tone_wav(std::uint32_t sample_rate, std::uint32_t duration_ms, double freq_hz = 440.0);

}  // namespace medvqa
