#pragma once

#include <filesystem>

#include "cbf/common.hpp"

namespace cbf::io {

enum class SampleFormat { kFloat32, kPcm16 };

struct Audio {
  Signals samples;  // channels x frames
  double sample_rate = 16000.0;
  SampleFormat source_format = SampleFormat::kFloat32;
};

// RIFF/WAVE, IEEE float32 (format 3) or 16-bit PCM (format 1), including
// WAVE_FORMAT_EXTENSIBLE headers. PCM16 is scaled to [-1, 1).
Audio read_wav(const std::filesystem::path& path);

// Writes IEEE float32.
void write_wav(const std::filesystem::path& path, const Signals& samples, double sample_rate);

}  // namespace cbf::io
