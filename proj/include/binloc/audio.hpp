#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "binloc/core.hpp"

namespace binloc {

/// Sampled waveform, one or two channels (left then right), full scale +-1.0.
class AudioBuffer {
 public:
  AudioBuffer() : sample_rate_(kDefaultSampleRate), channels_(1) {}

  AudioBuffer(int sample_rate, std::vector<std::vector<double>> channels)
      : sample_rate_(sample_rate), channels_(std::move(channels)) {
    if (sample_rate_ <= 0) throw Error("audio: sample rate must be positive");
    if (channels_.empty() || channels_.size() > 2)
      throw Error("audio: unsupported channel count " + std::to_string(channels_.size()));
    if (channels_.size() == 2 && channels_[0].size() != channels_[1].size())
      throw Error("audio: channels must have equal length");
  }

  static AudioBuffer mono(int sample_rate, std::vector<double> samples) {
    std::vector<std::vector<double>> ch;
    ch.push_back(std::move(samples));
    return {sample_rate, std::move(ch)};
  }

  static AudioBuffer stereo(int sample_rate, std::vector<double> left, std::vector<double> right) {
    std::vector<std::vector<double>> ch;
    ch.push_back(std::move(left));
    ch.push_back(std::move(right));
    return {sample_rate, std::move(ch)};
  }

  int sample_rate() const { return sample_rate_; }
  std::size_t channel_count() const { return channels_.size(); }
  bool is_stereo() const { return channels_.size() == 2; }
  std::size_t length() const { return channels_.front().size(); }
  double duration_s() const { return static_cast<double>(length()) / sample_rate_; }

  std::span<const double> channel(std::size_t c) const { return channels_.at(c); }
  std::span<double> channel(std::size_t c) { return channels_.at(c); }
  const std::vector<double>& samples(std::size_t c) const { return channels_.at(c); }

  // Scales every channel in place.
  void scale(double gain) {
    for (auto& ch : channels_)
      for (auto& x : ch) x *= gain;
  }

  // Truncates (or zero-pads) every channel to `n` samples.
  void resize(std::size_t n) {
    for (auto& ch : channels_) ch.resize(n, 0.0);
  }

  friend bool operator==(const AudioBuffer&, const AudioBuffer&) = default;

 private:
  int sample_rate_;
  std::vector<std::vector<double>> channels_;
};

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double energy(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

// ---------------------------------------------------------------------------
// WAV (RIFF) I/O

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serialize to an in-memory RIFF/WAVE image.
inline std::string encode_wav(const AudioBuffer& buffer, WavEncoding encoding = WavEncoding::pcm16) {
  const std::uint16_t channels = static_cast<std::uint16_t>(buffer.channel_count());
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(buffer.length() * block_align);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, encoding == WavEncoding::pcm16 ? 1 : 3);
  detail::put_u16(out, channels);
  detail::put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate()));
  detail::put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate()) * block_align);
  detail::put_u16(out, block_align);
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, data_bytes);

  for (std::size_t n = 0; n < buffer.length(); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double x = buffer.samples(c)[n];
      if (!std::isfinite(x)) throw Error("write_wav: non-finite sample");
      if (encoding == WavEncoding::pcm16) {
        const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
        detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
      }
    }
  }
  return out;
}

/// Parse a RIFF/WAVE image: PCM 16-bit or IEEE float 32-bit, 1 or 2 channels.
inline AudioBuffer decode_wav(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw Error("read_wav: not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char* chunk = p + pos;
    const std::uint32_t chunk_size = detail::get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16 || body + 16 > size) throw Error("read_wav: truncated fmt chunk");
      format = detail::get_u16(p + body);
      channels = detail::get_u16(p + body + 2);
      rate = detail::get_u32(p + body + 4);
      bits = detail::get_u16(p + body + 14);
      // WAVE_FORMAT_EXTENSIBLE: the real format tag is the first two bytes of the subformat GUID.
      if (format == 0xFFFE && chunk_size >= 26 && body + 26 <= size) format = detail::get_u16(p + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = p + body;
      data_size = std::min<std::size_t>(chunk_size, size - body);
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  if (!have_fmt) throw Error("read_wav: missing fmt chunk");
  if (data == nullptr) throw Error("read_wav: missing data chunk");
  if (channels < 1 || channels > 2) throw Error("read_wav: unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw Error("read_wav: zero sample rate");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw Error("read_wav: unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                " bits)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_size / (bytes_per_sample * channels);
  std::vector<std::vector<double>> out(channels, std::vector<double>(frames));
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* s = data + (n * channels + c) * bytes_per_sample;
      if (pcm16) {
        out[c][n] = static_cast<std::int16_t>(detail::get_u16(s)) / 32768.0;
      } else {
        out[c][n] = static_cast<double>(std::bit_cast<float>(detail::get_u32(s)));
      }
    }
  }
  return AudioBuffer(static_cast<int>(rate), std::move(out));
}

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_wav: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_wav(ss.str());
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " (" + path.string() + ")");
  }
}

inline void write_wav(const AudioBuffer& buffer, const std::filesystem::path& path,
                      WavEncoding encoding = WavEncoding::pcm16) {
  const std::string bytes = encode_wav(buffer, encoding);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("write_wav: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write_wav: write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Framing

enum class Window { hann, rectangular };

/// Periodic analysis window.
inline std::vector<double> analysis_window(Window kind, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (kind == Window::hann) {
    for (std::size_t n = 0; n < length; ++n)
      w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(length));
  }
  return w;
}

inline std::size_t frame_count(std::size_t samples, std::size_t frame_length, std::size_t hop) {
  if (frame_length == 0 || hop == 0 || hop > frame_length) throw Error("frame_signal: need 0 < hop <= frame_length");
  if (samples < frame_length)
    throw Error("frame_signal: signal of " + std::to_string(samples) + " samples is shorter than one frame (" +
                std::to_string(frame_length) + ")");
  return (samples - frame_length) / hop + 1;
}

/// Windowed frames; the trailing partial frame is dropped.
inline std::vector<std::vector<double>> frame_signal(std::span<const double> signal, std::size_t frame_length,
                                                     std::size_t hop, Window window = Window::hann) {
  const std::size_t count = frame_count(signal.size(), frame_length, hop);
  const auto w = analysis_window(window, frame_length);
  std::vector<std::vector<double>> frames(count, std::vector<double>(frame_length));
  for (std::size_t f = 0; f < count; ++f)
    for (std::size_t n = 0; n < frame_length; ++n) frames[f][n] = signal[f * hop + n] * w[n];
  return frames;
}

inline std::vector<std::vector<double>> frame_signal(const AudioBuffer& buffer, std::size_t frame_length,
                                                     std::size_t hop, Window window = Window::hann) {
  if (buffer.channel_count() != 1) throw Error("frame_signal: expects a mono buffer");
  return frame_signal(buffer.channel(0), frame_length, hop, window);
}

}  // namespace binloc
