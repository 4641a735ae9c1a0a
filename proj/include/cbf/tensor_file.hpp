#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cbf/common.hpp"

// CBTF tensor files. Layout, all little-endian:
//   bytes 0-3   magic "CBTF"
//   byte  4     version (1)
//   byte  5     dtype: 0 f32, 1 f64, 2 c64 (2 x f32), 3 c128 (2 x f64)
//   byte  6     rank R
//   then R x u64 dims, then the row-major payload of
//   element_size(dtype) * prod(dims) bytes.
namespace cbf::io {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kC64 = 2, kC128 = 3 };

inline constexpr std::uint8_t kTensorVersion = 1;

std::size_t element_size(DType t);
bool is_complex(DType t);
std::string to_string(DType t);

struct Tensor {
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> dims;
  std::vector<double> real;      // filled for f32 / f64
  std::vector<Complex> complex;  // filled for c64 / c128

  std::size_t elements() const;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
// Throws ParseError on a bad magic, unsupported version/dtype, or a payload
// shorter than the declared shape (the message names the missing byte count).
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

Tensor make_real(std::vector<std::uint64_t> dims, std::vector<double> values, DType dtype = DType::kF64);
Tensor make_complex(std::vector<std::uint64_t> dims, std::vector<Complex> values, DType dtype = DType::kC128);

}  // namespace cbf::io
