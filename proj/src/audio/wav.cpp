#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "jtss/audio.hpp"

namespace jtss::audio {
namespace {

uint32_t read_u32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}
uint16_t read_u16(const unsigned char* p) { return uint16_t(p[0] | (p[1] << 8)); }

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

void validate(const Waveform& w) {
  if (w.sample_rate != kSampleRate)
    throw Error("unsupported sample rate " + std::to_string(w.sample_rate) + " (expected 16000)");
  if (w.samples.empty()) throw Error("empty waveform");
  for (double s : w.samples)
    if (!std::isfinite(s)) throw Error("waveform contains non-finite samples");
}

Waveform load_waveform(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open audio file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0)
    throw Error("not a RIFF/WAVE file: " + path.string());

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = read_u32(b + pos + 4);
    const unsigned char* body = b + pos + 8;
    const std::size_t avail = bytes.size() - pos - 8;
    if (std::memcmp(b + pos, "fmt ", 4) == 0 && len >= 16 && avail >= 16) {
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      if (format == 0xFFFE && len >= 26 && avail >= 26) format = read_u16(body + 24);
    } else if (std::memcmp(b + pos, "data", 4) == 0) {
      data = body;
      data_len = std::min<std::size_t>(len, avail);
      break;
    }
    pos += 8 + len + (len & 1);
  }
  if (data == nullptr || channels == 0) throw Error("malformed WAV (no fmt/data chunk): " + path.string());
  if (channels != 1) throw Error("only mono audio is supported: " + path.string());
  if (rate != kSampleRate)
    throw Error("unsupported sample rate " + std::to_string(rate) + " in " + path.string() +
                " (resample to 16000 Hz)");

  Waveform w;
  if (format == 1 && bits == 16) {
    w.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = static_cast<int16_t>(read_u16(data + 2 * i)) / 32768.0;
  } else if (format == 1 && bits == 32) {
    w.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = static_cast<int32_t>(read_u32(data + 4 * i)) / 2147483648.0;
  } else if (format == 3 && bits == 32) {
    w.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      const uint32_t u = read_u32(data + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      w.samples[i] = f;
    }
  } else {
    throw Error("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                std::to_string(bits) + " bits): " + path.string());
  }
  if (w.samples.empty()) throw Error("WAV file has no samples: " + path.string());
  return w;
}

void save_waveform(const std::filesystem::path& path, const Waveform& w) {
  const uint32_t data_len = static_cast<uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(w.sample_rate));
  put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_len);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const long q = std::lround(c * 32767.0);
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write audio file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace jtss::audio
