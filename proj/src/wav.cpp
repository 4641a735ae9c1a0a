#include "cbf/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace cbf::io {

namespace {

std::uint32_t u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

Audio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw ParseError(where + "not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = u32(b.data() + pos + 4);
    const std::uint8_t* body = b.data() + pos + 8;
    const std::size_t available = b.size() - pos - 8;
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (size < 16 || available < 16) throw ParseError(where + "truncated fmt chunk");
      format = u16(body);
      channels = u16(body + 2);
      rate = u32(body + 4);
      bits = u16(body + 14);
      if (format == 0xFFFE) {
        if (size < 40 || available < 40) throw ParseError(where + "truncated extensible fmt chunk");
        format = u16(body + 24);
      }
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      data = body;
      data_size = std::min<std::size_t>(size, available);
    }
    pos += 8 + size + (size & 1);
  }
  if (channels == 0 || rate == 0) throw ParseError(where + "missing or invalid fmt chunk");
  if (data == nullptr) throw ParseError(where + "missing data chunk");

  Audio audio;
  audio.sample_rate = rate;
  std::size_t bytes_per_sample = 0;
  if (format == 3 && bits == 32) {
    audio.source_format = SampleFormat::kFloat32;
    bytes_per_sample = 4;
  } else if (format == 1 && bits == 16) {
    audio.source_format = SampleFormat::kPcm16;
    bytes_per_sample = 2;
  } else {
    throw ParseError(where + "unsupported sample format " + std::to_string(format) + " with " +
                     std::to_string(bits) + " bits");
  }
  const std::size_t frames = data_size / (bytes_per_sample * channels);
  audio.samples.resize(channels, static_cast<Eigen::Index>(frames));
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + (n * channels + c) * bytes_per_sample;
      double v;
      if (bytes_per_sample == 4) {
        const std::uint32_t raw = u32(p);
        float f;
        std::memcpy(&f, &raw, 4);
        v = f;
      } else {
        v = static_cast<std::int16_t>(u16(p)) / 32768.0;
      }
      audio.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n)) = v;
    }
  }
  return audio;
}

void write_wav(const std::filesystem::path& path, const Signals& samples, double sample_rate) {
  const auto channels = static_cast<std::uint32_t>(samples.rows());
  const auto frames = static_cast<std::uint32_t>(samples.cols());
  if (channels == 0) throw InvalidArgument("write_wav: no channels");
  const std::uint32_t data_size = channels * frames * 4;
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, 3);
  put16(out, static_cast<std::uint16_t>(channels));
  const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
  put32(out, rate);
  put32(out, rate * channels * 4);
  put16(out, static_cast<std::uint16_t>(channels * 4));
  put16(out, 32);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_size);
  for (std::uint32_t n = 0; n < frames; ++n) {
    for (std::uint32_t c = 0; c < channels; ++c) {
      const float f = static_cast<float>(samples(c, n));
      std::uint32_t raw;
      std::memcpy(&raw, &f, 4);
      put32(out, raw);
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed: " + path.string());
}

}  // namespace cbf::io
