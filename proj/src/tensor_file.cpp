#include "cbf/tensor_file.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cbf::io {

std::size_t element_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kC64: return 8;
    case DType::kC128: return 16;
  }
  throw ParseError("unknown dtype");
}

bool is_complex(DType t) { return t == DType::kC64 || t == DType::kC128; }

std::string to_string(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kC64: return "c64";
    case DType::kC128: return "c128";
  }
  return "?";
}

std::size_t Tensor::elements() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  const std::size_t n = t.elements();
  if (is_complex(t.dtype) ? t.complex.size() != n : t.real.size() != n) {
    throw InvalidArgument("encode_tensor: payload size does not match dims");
  }
  if (t.dims.size() > 255) throw InvalidArgument("encode_tensor: rank above 255");
  std::vector<std::uint8_t> out{'C', 'B', 'T', 'F', kTensorVersion, static_cast<std::uint8_t>(t.dtype),
                                static_cast<std::uint8_t>(t.dims.size())};
  for (auto d : t.dims) put<std::uint64_t>(out, d);
  out.reserve(out.size() + n * element_size(t.dtype));
  switch (t.dtype) {
    case DType::kF32:
      for (double v : t.real) put<float>(out, static_cast<float>(v));
      break;
    case DType::kF64:
      for (double v : t.real) put<double>(out, v);
      break;
    case DType::kC64:
      for (const auto& v : t.complex) {
        put<float>(out, static_cast<float>(v.real()));
        put<float>(out, static_cast<float>(v.imag()));
      }
      break;
    case DType::kC128:
      for (const auto& v : t.complex) {
        put<double>(out, v.real());
        put<double>(out, v.imag());
      }
      break;
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kFixed = 7;
  if (bytes.size() < kFixed) {
    std::ostringstream os;
    os << "tensor header truncated: need " << kFixed << " bytes, have " << bytes.size()
       << " (missing " << kFixed - bytes.size() << " bytes)";
    throw ParseError(os.str());
  }
  if (std::memcmp(bytes.data(), "CBTF", 4) != 0) throw ParseError("tensor file: bad magic (expected CBTF)");
  if (bytes[4] != kTensorVersion) {
    throw ParseError("tensor file: unsupported version " + std::to_string(bytes[4]));
  }
  if (bytes[5] > 3) throw ParseError("tensor file: unknown dtype code " + std::to_string(bytes[5]));
  Tensor t;
  t.dtype = static_cast<DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  const std::size_t header = kFixed + 8 * rank;
  if (bytes.size() < header) {
    std::ostringstream os;
    os << "tensor header truncated: need " << header << " bytes for rank " << rank << ", have "
       << bytes.size() << " (missing " << header - bytes.size() << " bytes)";
    throw ParseError(os.str());
  }
  for (std::size_t r = 0; r < rank; ++r) t.dims.push_back(get<std::uint64_t>(bytes.data() + kFixed + 8 * r));
  const std::size_t n = t.elements();
  const std::size_t esize = element_size(t.dtype);
  const std::size_t payload = n * esize;
  const std::size_t have = bytes.size() - header;
  if (have < payload) {
    std::ostringstream os;
    os << "tensor payload truncated: expected " << payload << " bytes, found " << have
       << " (missing " << payload - have << " bytes)";
    throw ParseError(os.str());
  }
  if (have > payload) {
    std::ostringstream os;
    os << "tensor payload has " << have - payload << " trailing bytes beyond the declared shape";
    throw ParseError(os.str());
  }
  const std::uint8_t* p = bytes.data() + header;
  switch (t.dtype) {
    case DType::kF32:
      t.real.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.real[i] = get<float>(p + 4 * i);
      break;
    case DType::kF64:
      t.real.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.real[i] = get<double>(p + 8 * i);
      break;
    case DType::kC64:
      t.complex.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.complex[i] = {get<float>(p + 8 * i), get<float>(p + 8 * i + 4)};
      break;
    case DType::kC128:
      t.complex.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.complex[i] = {get<double>(p + 16 * i), get<double>(p + 16 * i + 8)};
      break;
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Tensor make_real(std::vector<std::uint64_t> dims, std::vector<double> values, DType dtype) {
  if (is_complex(dtype)) throw InvalidArgument("make_real: complex dtype");
  Tensor t;
  t.dtype = dtype;
  t.dims = std::move(dims);
  t.real = std::move(values);
  if (t.real.size() != t.elements()) throw InvalidArgument("make_real: value count does not match dims");
  return t;
}

Tensor make_complex(std::vector<std::uint64_t> dims, std::vector<Complex> values, DType dtype) {
  if (!is_complex(dtype)) throw InvalidArgument("make_complex: real dtype");
  Tensor t;
  t.dtype = dtype;
  t.dims = std::move(dims);
  t.complex = std::move(values);
  if (t.complex.size() != t.elements()) throw InvalidArgument("make_complex: value count does not match dims");
  return t;
}

}  // namespace cbf::io
