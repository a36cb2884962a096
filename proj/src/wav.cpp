#include "medvqa/wav.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace medvqa {

namespace {

std::uint32_t le32(std::string_view b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t le16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

std::int64_t WavInfo::duration_ms() const {
  const std::uint64_t bytes_per_sec =
      static_cast<std::uint64_t>(sample_rate) * channels * (bits_per_sample / 8U);
  if (bytes_per_sec == 0) return 0;
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(data_bytes) * 1000U / bytes_per_sec);
}

std::optional<WavInfo> parse_wav(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE") return std::nullopt;
  WavInfo info;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string_view id = bytes.substr(pos, 4);
    const std::uint32_t size = le32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > bytes.size()) return std::nullopt;
      info.audio_format = le16(bytes, body);
      info.channels = le16(bytes, body + 2);
      info.sample_rate = le32(bytes, body + 4);
      info.bits_per_sample = le16(bytes, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) return std::nullopt;
      // Streaming encoders sometimes leave the size as 0xFFFFFFFF.
      const std::size_t available = bytes.size() - body;
      info.data_bytes = static_cast<std::uint32_t>(std::min<std::size_t>(size, available));
      return info;
    }
    pos = body + size + (size & 1U);
  }
  return std::nullopt;
}

std::string encode_wav_pcm16_mono(std::uint32_t sample_rate, std::span<const std::int16_t> samples) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, sample_rate);
  put32(out, sample_rate * 2);
  put16(out, 2);
  put16(out, 16);
  out += "data";
  put32(out, data_bytes);
  for (std::int16_t s : samples) put16(out, static_cast<std::uint16_t>(s));
  return out;
}

std::string synth_tone_wav(std::uint32_t sample_rate, std::uint32_t duration_ms, double freq_hz) {
  const std::size_t n = static_cast<std::size_t>(sample_rate) * duration_ms / 1000U;
  std::vector<std::int16_t> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    samples[i] = static_cast<std::int16_t>(8000.0 * std::sin(2.0 * std::numbers::pi * freq_hz * t));
  }
  return encode_wav_pcm16_mono(sample_rate, samples);
}

}  // namespace medvqa
