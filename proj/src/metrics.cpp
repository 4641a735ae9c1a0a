#include "cbf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <unsupported/Eigen/FFT>

namespace cbf::metrics {

void FwssnrConfig::validate() const {
  if (!(clamp_lo_db < clamp_hi_db)) throw ConfigError("fwssnr: clamp range must satisfy lo < hi");
  if (bands < 1) throw ConfigError("fwssnr: at least one band required");
  if (!(frame_ms > 0)) throw ConfigError("fwssnr: frame_ms must be positive");
  if (!(overlap >= 0 && overlap < 1)) throw ConfigError("fwssnr: overlap must be in [0, 1)");
  if (!(low_hz > 0)) throw ConfigError("fwssnr: low_hz must be positive");
}

namespace {

double bark(double hz) {
  return 13.0 * std::atan(0.00076 * hz) + 3.5 * std::atan((hz / 7500.0) * (hz / 7500.0));
}

double inverse_bark(double z, double max_hz) {
  double lo = 0, hi = max_hz;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (bark(mid) < z ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double critical_bandwidth(double hz) {
  return 25.0 + 75.0 * std::pow(1.0 + 1.4 * (hz / 1000.0) * (hz / 1000.0), 0.69);
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

RMatrix critical_band_filters(std::size_t fft_bins, double sample_rate, const FwssnrConfig& cfg) {
  const double nyquist = sample_rate / 2.0;
  const auto nb = static_cast<Eigen::Index>(cfg.bands);
  RMatrix filters = RMatrix::Zero(nb, static_cast<Eigen::Index>(fft_bins));
  const double z_lo = bark(cfg.low_hz);
  const double z_hi = bark(nyquist);
  const double bin_hz = nyquist / static_cast<double>(fft_bins - 1);
  const double floor = 1e-3;  // -30 dB
  for (Eigen::Index b = 0; b < nb; ++b) {
    const double z = cfg.bands == 1 ? z_lo
                                    : z_lo + (z_hi - z_lo) * static_cast<double>(b) /
                                                 static_cast<double>(cfg.bands - 1);
    const double centre = inverse_bark(z, nyquist);
    const double width = critical_bandwidth(centre);
    for (Eigen::Index j = 0; j < filters.cols(); ++j) {
      const double x = (static_cast<double>(j) * bin_hz - centre) / width;
      const double w = std::exp(-11.0 * x * x);
      if (w >= floor) filters(b, j) = w;
    }
  }
  return filters;
}

FwssnrEvaluator::FwssnrEvaluator(std::span<const double> reference, double sample_rate,
                                 const FwssnrConfig& cfg)
    : cfg_(cfg), reference_(reference.begin(), reference.end()) {
  cfg_.validate();
  if (!(sample_rate > 0)) throw InvalidArgument("fwssnr: sample rate must be positive");
  frame_ = static_cast<std::size_t>(std::lround(cfg_.frame_ms * 1e-3 * sample_rate));
  hop_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frame_ * (1.0 - cfg_.overlap))));
  nfft_ = next_pow2(2 * frame_);
  window_.resize(frame_);
  for (std::size_t n = 0; n < frame_; ++n) {
    window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(n) + 1.0) /
                                      (static_cast<double>(frame_) + 1.0));
  }
  const std::size_t bins = nfft_ / 2 + 1;
  filters_ = critical_band_filters(bins, sample_rate, cfg_);

  if (reference_.size() < frame_) {
    throw InvalidArgument("fwssnr: signal shorter than one analysis frame");
  }
  const std::size_t frames = (reference_.size() - frame_) / hop_ + 1;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(nfft_, 0.0);
  std::vector<Complex> spec;
  RMatrix energy(filters_.rows(), static_cast<Eigen::Index>(frames));
  RMatrix magnitude(filters_.rows(), static_cast<Eigen::Index>(frames));
  std::vector<double> total(frames, 0.0);
  RVector power(static_cast<Eigen::Index>(bins));
  RVector mag(static_cast<Eigen::Index>(bins));
  for (std::size_t k = 0; k < frames; ++k) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t n = 0; n < frame_; ++n) buf[n] = reference_[k * hop_ + n] * window_[n];
    fft.fwd(spec, buf);
    for (std::size_t j = 0; j < bins; ++j) {
      power(static_cast<Eigen::Index>(j)) = std::norm(spec[j]);
      mag(static_cast<Eigen::Index>(j)) = std::abs(spec[j]);
    }
    energy.col(static_cast<Eigen::Index>(k)) = filters_ * power;
    magnitude.col(static_cast<Eigen::Index>(k)) = filters_ * mag;
    total[k] = power.sum();
  }
  const double peak = *std::max_element(total.begin(), total.end());
  if (!(peak > 0)) throw InvalidArgument("fwssnr: reference signal is silent");
  const double threshold = peak * std::pow(10.0, -cfg_.activity_range_db / 10.0);
  for (std::size_t k = 0; k < frames; ++k) {
    if (total[k] > 0 && total[k] >= threshold) active_.push_back(k);
  }
  reference_energy_.resize(filters_.rows(), static_cast<Eigen::Index>(active_.size()));
  weights_.resize(filters_.rows(), static_cast<Eigen::Index>(active_.size()));
  for (std::size_t a = 0; a < active_.size(); ++a) {
    const auto k = static_cast<Eigen::Index>(active_[a]);
    reference_energy_.col(static_cast<Eigen::Index>(a)) = energy.col(k);
    weights_.col(static_cast<Eigen::Index>(a)) = magnitude.col(k).array().pow(cfg_.weight_exponent);
  }
}

double FwssnrEvaluator::operator()(std::span<const double> test) const {
  if (test.size() != reference_.size()) {
    std::ostringstream os;
    os << "fwssnr: test has " << test.size() << " samples, reference has " << reference_.size();
    throw InvalidArgument(os.str());
  }
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(nfft_, 0.0);
  std::vector<Complex> spec;
  const std::size_t bins = nfft_ / 2 + 1;
  RVector power(static_cast<Eigen::Index>(bins));

  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t a = 0; a < active_.size(); ++a) {
    const std::size_t start = active_[a] * hop_;
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t n = 0; n < frame_; ++n) {
      buf[n] = (reference_[start + n] - test[start + n]) * window_[n];
    }
    fft.fwd(spec, buf);
    for (std::size_t j = 0; j < bins; ++j) power(static_cast<Eigen::Index>(j)) = std::norm(spec[j]);
    const RVector error = filters_ * power;
    double num = 0, den = 0;
    for (Eigen::Index b = 0; b < filters_.rows(); ++b) {
      const double w = weights_(b, static_cast<Eigen::Index>(a));
      if (!(w > 0)) continue;
      const double clean = reference_energy_(b, static_cast<Eigen::Index>(a));
      double snr = error(b) > 0 ? 10.0 * std::log10(clean / error(b))
                                : std::numeric_limits<double>::infinity();
      snr = std::clamp(snr, cfg_.clamp_lo_db, cfg_.clamp_hi_db);
      num += w * snr;
      den += w;
    }
    if (den > 0) {
      sum += num / den;
      ++counted;
    }
  }
  if (counted == 0) throw InvalidArgument("fwssnr: no speech-active frames in reference");
  return sum / static_cast<double>(counted);
}

double fwssnr(std::span<const double> test, std::span<const double> reference, double sample_rate,
              const FwssnrConfig& cfg) {
  if (test.size() != reference.size()) {
    std::ostringstream os;
    os << "fwssnr: test has " << test.size() << " samples, reference has " << reference.size();
    throw InvalidArgument(os.str());
  }
  return FwssnrEvaluator(reference, sample_rate, cfg)(test);
}

namespace {

std::span<const double> row_span(const Signals& s, Eigen::Index r) {
  return {s.row(r).data(), static_cast<std::size_t>(s.cols())};
}

}  // namespace

InputFwssnr input_fwssnr(const scene::RenderedScene& scene, std::size_t speaker,
                         std::size_t reference_mic, const FwssnrConfig& cfg) {
  if (speaker >= scene.num_sources()) throw InvalidArgument("input_fwssnr: speaker index out of range");
  if (reference_mic >= scene.num_mics()) throw InvalidArgument("input_fwssnr: reference mic out of range");
  const FwssnrEvaluator eval(row_span(scene.anechoic[speaker], static_cast<Eigen::Index>(reference_mic)),
                             scene.sample_rate, cfg);
  InputFwssnr out;
  out.value_db = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < scene.num_mics(); ++m) {
    const double v = eval(row_span(scene.mics, static_cast<Eigen::Index>(m)));
    out.per_mic.push_back(v);
    if (v > out.value_db) {
      out.value_db = v;
      out.best_mic = m;
    }
  }
  return out;
}

DecodeOutcome decode_correct(std::span<const double> selected, std::span<const double> discarded,
                             std::span<const double> reference, double sample_rate,
                             const FwssnrConfig& cfg) {
  const FwssnrEvaluator eval(reference, sample_rate, cfg);
  DecodeOutcome out;
  out.selected_db = eval(selected);
  out.discarded_db = eval(discarded);
  out.tie = out.selected_db == out.discarded_db;
  out.correct = out.selected_db > out.discarded_db;
  return out;
}

double aad_accuracy(std::span<const DecodeOutcome> outcomes) {
  if (outcomes.empty()) throw InvalidArgument("aad_accuracy: no trials");
  const auto correct = std::count_if(outcomes.begin(), outcomes.end(),
                                     [](const DecodeOutcome& o) { return o.correct; });
  return 100.0 * static_cast<double>(correct) / static_cast<double>(outcomes.size());
}

double aad_accuracy(std::span<const bool> outcomes) {
  if (outcomes.empty()) throw InvalidArgument("aad_accuracy: no trials");
  const auto correct = std::count(outcomes.begin(), outcomes.end(), true);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(outcomes.size());
}

double binomial_upper_tail(std::size_t n, std::size_t k) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum of C(n, j) 2^-n in log space.
  double tail = 0;
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  for (std::size_t j = k; j <= n; ++j) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(j) + 1) -
                         std::lgamma(static_cast<double>(n - j) + 1);
    tail += std::exp(log_c + log_half_n);
  }
  return std::min(tail, 1.0);
}

double chance_upper_bound(std::size_t n_trials, double alpha) {
  if (n_trials < 1) throw InvalidArgument("chance_upper_bound: need at least one trial");
  if (!(alpha > 0 && alpha < 1)) throw InvalidArgument("chance_upper_bound: alpha must be in (0, 1)");
  for (std::size_t k = 0; k <= n_trials; ++k) {
    if (binomial_upper_tail(n_trials, k) <= alpha) {
      return 100.0 * static_cast<double>(k) / static_cast<double>(n_trials);
    }
  }
  return 100.0;
}

}  // namespace cbf::metrics
