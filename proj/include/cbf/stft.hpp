#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cbf/common.hpp"

namespace cbf::stft {

enum class Window { kSqrtHann, kHann };

Window parse_window(const std::string& name);
std::string to_string(Window w);

struct StftConfig {
  std::size_t frame_length = 512;
  std::size_t hop = 128;
  Window window = Window::kSqrtHann;
  double sample_rate = 16000.0;

  std::size_t num_bins() const { return frame_length / 2 + 1; }
  double bin_frequency(std::size_t f) const {
    return static_cast<double>(f) * sample_rate / static_cast<double>(frame_length);
  }
  // Throws ConfigError unless hop divides frame_length and the
  // analysis/synthesis window product overlap-adds to a constant.
  void validate() const;
};

// Periodic window of the configured kind; used for both analysis and synthesis.
std::vector<double> window_coefficients(const StftConfig& cfg);

// Constant value of sum_k w_a[n - k hop] w_s[n - k hop].
double overlap_add_gain(const StftConfig& cfg);

// Complex STFT tensor Y(m, k, f). Storage keeps each bin's M x K block
// contiguous, column k being the microphone vector y_k.
class MultichannelSpectrogram {
 public:
  MultichannelSpectrogram() = default;
  MultichannelSpectrogram(std::size_t channels, std::size_t frames, std::size_t bins);

  std::size_t channels() const { return channels_; }
  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }

  Complex& operator()(std::size_t m, std::size_t k, std::size_t f) {
    return data_[(f * frames_ + k) * channels_ + m];
  }
  const Complex& operator()(std::size_t m, std::size_t k, std::size_t f) const {
    return data_[(f * frames_ + k) * channels_ + m];
  }

  // M x K view of one frequency bin.
  Eigen::Map<CMatrix> bin(std::size_t f) {
    return {data_.data() + f * frames_ * channels_, static_cast<Eigen::Index>(channels_),
            static_cast<Eigen::Index>(frames_)};
  }
  Eigen::Map<const CMatrix> bin(std::size_t f) const {
    return {data_.data() + f * frames_ * channels_, static_cast<Eigen::Index>(channels_),
            static_cast<Eigen::Index>(frames_)};
  }

  // Single-channel spectrogram holding channel m.
  MultichannelSpectrogram channel(std::size_t m) const;

  bool all_finite() const;
  const std::vector<Complex>& data() const { return data_; }

 private:
  std::size_t channels_ = 0;
  std::size_t frames_ = 0;
  std::size_t bins_ = 0;
  std::vector<Complex> data_;
};

// K = floor((len - frame_length) / hop) + 1 one-sided frames per channel.
MultichannelSpectrogram analyze(const Signals& signal, const StftConfig& cfg);

// Weighted overlap-add; output length (K - 1) * hop + frame_length.
Signals synthesize(const MultichannelSpectrogram& spec, const StftConfig& cfg);

// Zero-pads frame_length - hop samples on both edges (plus hop alignment) so
// every input sample is covered by a full set of overlapping frames.
MultichannelSpectrogram analyze_padded(const Signals& signal, const StftConfig& cfg);

// Inverse of analyze_padded, trimmed back to `length` samples.
Signals synthesize_padded(const MultichannelSpectrogram& spec, const StftConfig& cfg,
                          std::size_t length);

}  // namespace cbf::stft
