#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "cbf/tensor_file.hpp"
#include "cbf/wav.hpp"
#include "support.hpp"

using namespace cbf;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cbf_io_" + name);
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_tag(std::vector<std::uint8_t>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

// Interleaved 16-bit PCM WAV, optionally with an extensible fmt chunk.
std::vector<std::uint8_t> pcm16_wav(const std::vector<std::int16_t>& interleaved, std::uint16_t channels,
                                    std::uint32_t rate, bool extensible) {
  std::vector<std::uint8_t> fmt;
  put16(fmt, extensible ? 0xFFFE : 1);
  put16(fmt, channels);
  put32(fmt, rate);
  put32(fmt, rate * channels * 2);
  put16(fmt, static_cast<std::uint16_t>(channels * 2));
  put16(fmt, 16);
  if (extensible) {
    put16(fmt, 22);
    put16(fmt, 16);
    put32(fmt, 0);
    put16(fmt, 1);  // sub-format GUID starts with the PCM tag
    const std::uint8_t guid_tail[14] = {0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80,
                                        0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71};
    fmt.insert(fmt.end(), guid_tail, guid_tail + 14);
  }
  std::vector<std::uint8_t> out;
  put_tag(out, "RIFF");
  put32(out, static_cast<std::uint32_t>(4 + 8 + fmt.size() + 8 + interleaved.size() * 2));
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, static_cast<std::uint32_t>(fmt.size()));
  out.insert(out.end(), fmt.begin(), fmt.end());
  put_tag(out, "data");
  put32(out, static_cast<std::uint32_t>(interleaved.size() * 2));
  for (auto s : interleaved) put16(out, static_cast<std::uint16_t>(s));
  return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("tensor header layout") {
  const auto bytes = io::encode_tensor(io::make_real({2, 3}, {1, 2, 3, 4, 5, 6}));
  REQUIRE(bytes.size() == 7 + 2 * 8 + 6 * 8);
  CHECK(std::memcmp(bytes.data(), "CBTF", 4) == 0);
  CHECK(bytes[4] == io::kTensorVersion);
  CHECK(bytes[5] == 1);
  CHECK(bytes[6] == 2);
  CHECK(bytes[7] == 2);   // first dim, little-endian
  CHECK(bytes[15] == 3);
  double first = 0;
  std::memcpy(&first, bytes.data() + 23, 8);
  CHECK(first == 1.0);
}

TEST_CASE("tensor round trips") {
  std::mt19937_64 rng(1);
  const auto values = test::random_signal(24, rng);
  SUBCASE("f64 is exact") {
    const auto t = io::decode_tensor(io::encode_tensor(io::make_real({2, 3, 4}, values)));
    CHECK(t.dtype == io::DType::kF64);
    CHECK(t.dims == std::vector<std::uint64_t>{2, 3, 4});
    CHECK(t.real == values);
  }
  SUBCASE("f32 rounds to float") {
    const auto t = io::decode_tensor(io::encode_tensor(io::make_real({24}, values, io::DType::kF32)));
    for (std::size_t i = 0; i < 24; ++i) CHECK(t.real[i] == static_cast<double>(static_cast<float>(values[i])));
  }
  SUBCASE("complex types") {
    std::vector<Complex> c;
    for (std::size_t i = 0; i < 12; ++i) c.emplace_back(values[2 * i], values[2 * i + 1]);
    const auto t = io::decode_tensor(io::encode_tensor(io::make_complex({3, 4}, c)));
    CHECK(t.dtype == io::DType::kC128);
    CHECK(t.complex == c);
    const auto s = io::decode_tensor(io::encode_tensor(io::make_complex({12}, c, io::DType::kC64)));
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(s.complex[i].real() == static_cast<double>(static_cast<float>(c[i].real())));
      CHECK(s.complex[i].imag() == static_cast<double>(static_cast<float>(c[i].imag())));
    }
  }
  SUBCASE("scalar and empty shapes") {
    const auto scalar = io::decode_tensor(io::encode_tensor(io::make_real({}, {4.5})));
    CHECK(scalar.dims.empty());
    CHECK(scalar.real == std::vector<double>{4.5});
    const auto empty = io::decode_tensor(io::encode_tensor(io::make_real({0, 5}, {})));
    CHECK(empty.elements() == 0);
  }
  SUBCASE("files") {
    const auto p = temp_path("t.cbtf");
    io::write_tensor(p, io::make_real({4, 6}, values));
    CHECK(io::read_tensor(p).real == values);
    std::filesystem::remove(p);
    CHECK_THROWS_AS(io::read_tensor(p), IoError);
  }
}

TEST_CASE("malformed tensors") {
  auto bytes = io::encode_tensor(io::make_real({2, 2}, {1, 2, 3, 4}));
  SUBCASE("magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(io::decode_tensor(bytes), ParseError);
  }
  SUBCASE("version") {
    bytes[4] = 9;
    CHECK_THROWS_AS(io::decode_tensor(bytes), ParseError);
  }
  SUBCASE("dtype") {
    bytes[5] = 7;
    CHECK_THROWS_AS(io::decode_tensor(bytes), ParseError);
  }
  SUBCASE("truncated payload names the missing bytes") {
    bytes.resize(bytes.size() - 12);
    try {
      io::decode_tensor(bytes);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("12") != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    bytes.resize(10);
    CHECK_THROWS_AS(io::decode_tensor(bytes), ParseError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(io::decode_tensor(bytes), ParseError);
  }
  CHECK_THROWS_AS(io::make_real({3}, {1, 2}), InvalidArgument);
  CHECK_THROWS_AS(io::make_real({1}, {1}, io::DType::kC64), InvalidArgument);
}

TEST_CASE("float WAV round trip") {
  std::mt19937_64 rng(2);
  Signals x(2, 1000);
  const auto v = test::random_signal(2000, rng, 0.3);
  for (Eigen::Index c = 0; c < 2; ++c)
    for (Eigen::Index n = 0; n < 1000; ++n) x(c, n) = v[static_cast<std::size_t>(c * 1000 + n)];
  const auto p = temp_path("f.wav");
  io::write_wav(p, x, 16000.0);
  const auto a = io::read_wav(p);
  CHECK(a.sample_rate == 16000.0);
  CHECK(a.source_format == io::SampleFormat::kFloat32);
  REQUIRE(a.samples.rows() == 2);
  REQUIRE(a.samples.cols() == 1000);
  for (Eigen::Index c = 0; c < 2; ++c)
    for (Eigen::Index n = 0; n < 1000; ++n) CHECK(a.samples(c, n) == static_cast<double>(static_cast<float>(x(c, n))));
  std::filesystem::remove(p);
  CHECK_THROWS_AS(io::write_wav(p, Signals(0, 10), 16000.0), InvalidArgument);
}

TEST_CASE("16-bit PCM input") {
  const std::vector<std::int16_t> pcm = {0, 16384, -32768, 32767, 100, -100};
  const auto p = temp_path("p.wav");
  for (bool extensible : {false, true}) {
    write_bytes(p, pcm16_wav(pcm, 2, 8000, extensible));
    const auto a = io::read_wav(p);
    CHECK(a.source_format == io::SampleFormat::kPcm16);
    CHECK(a.sample_rate == 8000.0);
    REQUIRE(a.samples.rows() == 2);
    REQUIRE(a.samples.cols() == 3);
    CHECK(a.samples(0, 0) == 0.0);
    CHECK(a.samples(1, 0) == 0.5);
    CHECK(a.samples(0, 1) == -1.0);
    CHECK(a.samples(1, 1) == 32767.0 / 32768.0);
    CHECK(a.samples(1, 2) == -100.0 / 32768.0);
  }
  std::filesystem::remove(p);
}

TEST_CASE("malformed WAV files") {
  const auto p = temp_path("bad.wav");
  write_bytes(p, {'R', 'I', 'F', 'F', 0, 0, 0, 0, 'A', 'V', 'I', ' '});
  CHECK_THROWS_AS(io::read_wav(p), ParseError);
  auto bytes = pcm16_wav({1, 2, 3, 4}, 1, 16000, false);
  bytes[20] = 2;  // ADPCM
  write_bytes(p, bytes);
  CHECK_THROWS_AS(io::read_wav(p), ParseError);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(io::read_wav(p), IoError);
}
