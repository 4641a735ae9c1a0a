#include "cbf/stft.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <unsupported/Eigen/FFT>

namespace cbf::stft {

Window parse_window(const std::string& name) {
  if (name == "sqrt-hann") return Window::kSqrtHann;
  if (name == "hann") return Window::kHann;
  throw ConfigError("unknown window '" + name + "' (expected sqrt-hann or hann)");
}

std::string to_string(Window w) {
  return w == Window::kSqrtHann ? "sqrt-hann" : "hann";
}

std::vector<double> window_coefficients(const StftConfig& cfg) {
  const std::size_t n = cfg.frame_length;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                             static_cast<double>(n));
    w[i] = cfg.window == Window::kSqrtHann ? std::sqrt(hann) : hann;
  }
  return w;
}

namespace {

std::vector<double> overlap_add_profile(const StftConfig& cfg) {
  const auto w = window_coefficients(cfg);
  std::vector<double> profile(cfg.hop, 0.0);
  for (std::size_t i = 0; i < cfg.frame_length; ++i) profile[i % cfg.hop] += w[i] * w[i];
  return profile;
}

}  // namespace

double overlap_add_gain(const StftConfig& cfg) { return overlap_add_profile(cfg)[0]; }

void StftConfig::validate() const {
  if (frame_length < 2 || frame_length % 2 != 0) {
    throw ConfigError("stft: frame_length must be even and at least 2");
  }
  if (hop == 0 || frame_length % hop != 0) {
    std::ostringstream os;
    os << "stft: hop " << hop << " does not divide frame_length " << frame_length;
    throw ConfigError(os.str());
  }
  if (!(sample_rate > 0)) throw ConfigError("stft: sample_rate must be positive");
  const auto profile = overlap_add_profile(*this);
  for (double p : profile) {
    if (std::abs(p - profile[0]) > 1e-10 * profile[0] || profile[0] <= 0) {
      throw ConfigError("stft: window/hop pair violates the constant-overlap-add condition");
    }
  }
}

MultichannelSpectrogram::MultichannelSpectrogram(std::size_t channels, std::size_t frames,
                                                 std::size_t bins)
    : channels_(channels), frames_(frames), bins_(bins), data_(channels * frames * bins) {}

MultichannelSpectrogram MultichannelSpectrogram::channel(std::size_t m) const {
  MultichannelSpectrogram out(1, frames_, bins_);
  for (std::size_t f = 0; f < bins_; ++f)
    for (std::size_t k = 0; k < frames_; ++k) out(0, k, f) = (*this)(m, k, f);
  return out;
}

bool MultichannelSpectrogram::all_finite() const {
  for (const auto& c : data_) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) return false;
  }
  return true;
}

MultichannelSpectrogram analyze(const Signals& signal, const StftConfig& cfg) {
  cfg.validate();
  const auto len = static_cast<std::size_t>(signal.cols());
  if (signal.rows() == 0 || len < cfg.frame_length) {
    std::ostringstream os;
    os << "stft::analyze: signal of " << len << " samples is shorter than one frame ("
       << cfg.frame_length << ")";
    throw InvalidArgument(os.str());
  }
  const std::size_t frames = (len - cfg.frame_length) / cfg.hop + 1;
  const std::size_t bins = cfg.num_bins();
  const auto channels = static_cast<std::size_t>(signal.rows());
  MultichannelSpectrogram spec(channels, frames, bins);

  const auto w = window_coefficients(cfg);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(cfg.frame_length);
  std::vector<Complex> out;
  for (std::size_t m = 0; m < channels; ++m) {
    for (std::size_t k = 0; k < frames; ++k) {
      const std::size_t start = k * cfg.hop;
      for (std::size_t n = 0; n < cfg.frame_length; ++n) {
        frame[n] = signal(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(start + n)) * w[n];
      }
      fft.fwd(out, frame);
      for (std::size_t f = 0; f < bins; ++f) spec(m, k, f) = out[f];
    }
  }
  return spec;
}

Signals synthesize(const MultichannelSpectrogram& spec, const StftConfig& cfg) {
  cfg.validate();
  if (spec.bins() != cfg.num_bins()) {
    std::ostringstream os;
    os << "stft::synthesize: spectrogram has " << spec.bins() << " bins, config expects "
       << cfg.num_bins();
    throw InvalidArgument(os.str());
  }
  const std::size_t frames = spec.frames();
  const std::size_t len = frames == 0 ? 0 : (frames - 1) * cfg.hop + cfg.frame_length;
  Signals out = Signals::Zero(static_cast<Eigen::Index>(spec.channels()),
                              static_cast<Eigen::Index>(len));
  const auto w = window_coefficients(cfg);
  const double gain = overlap_add_gain(cfg);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> half(cfg.num_bins());
  std::vector<double> frame;
  for (std::size_t m = 0; m < spec.channels(); ++m) {
    for (std::size_t k = 0; k < frames; ++k) {
      for (std::size_t f = 0; f < half.size(); ++f) half[f] = spec(m, k, f);
      fft.inv(frame, half, static_cast<Eigen::Index>(cfg.frame_length));
      const std::size_t start = k * cfg.hop;
      for (std::size_t n = 0; n < cfg.frame_length; ++n) {
        out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(start + n)) += frame[n] * w[n] / gain;
      }
    }
  }
  return out;
}

namespace {

struct Padding {
  std::size_t front;
  std::size_t total;
};

Padding padding_for(std::size_t length, const StftConfig& cfg) {
  const std::size_t front = cfg.frame_length - cfg.hop;
  std::size_t total = length + 2 * front;
  if (total < cfg.frame_length) total = cfg.frame_length;
  const std::size_t rem = (total - cfg.frame_length) % cfg.hop;
  if (rem != 0) total += cfg.hop - rem;
  return {front, total};
}

}  // namespace

MultichannelSpectrogram analyze_padded(const Signals& signal, const StftConfig& cfg) {
  const auto len = static_cast<std::size_t>(signal.cols());
  if (len == 0) throw InvalidArgument("stft::analyze_padded: empty signal");
  const auto pad = padding_for(len, cfg);
  Signals padded = Signals::Zero(signal.rows(), static_cast<Eigen::Index>(pad.total));
  padded.middleCols(static_cast<Eigen::Index>(pad.front), signal.cols()) = signal;
  return analyze(padded, cfg);
}

Signals synthesize_padded(const MultichannelSpectrogram& spec, const StftConfig& cfg,
                          std::size_t length) {
  const auto pad = padding_for(length, cfg);
  Signals full = synthesize(spec, cfg);
  if (static_cast<std::size_t>(full.cols()) < pad.front + length) {
    throw InvalidArgument("stft::synthesize_padded: spectrogram too short for requested length");
  }
  return full.middleCols(static_cast<Eigen::Index>(pad.front), static_cast<Eigen::Index>(length));
}

}  // namespace cbf::stft
