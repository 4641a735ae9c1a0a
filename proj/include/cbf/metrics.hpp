#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cbf/common.hpp"
#include "cbf/scene.hpp"

namespace cbf::metrics {

struct FwssnrConfig {
  double frame_ms = 32.0;
  double overlap = 0.75;
  std::size_t bands = 25;
  double low_hz = 50.0;         // centre of the lowest band; highest is Nyquist
  double clamp_lo_db = -10.0;
  double clamp_hi_db = 35.0;
  double weight_exponent = 0.2;
  double activity_range_db = 35.0;  // frames this far below the peak are skipped

  void validate() const;
};

// Critical-band filterbank on an FFT grid: one row per band, Gaussian
// shaped on the Bark scale, truncated below -30 dB.
RMatrix critical_band_filters(std::size_t fft_bins, double sample_rate, const FwssnrConfig& cfg);

// Frequency-weighted segmental SNR against a fixed reference. Per frame and
// band, SNR = 10 log10(|X|^2 / |X - Y|^2) over the band filter, clamped,
// weighted by the reference band magnitude ^ exponent, averaged over bands
// and then over speech-active frames.
class FwssnrEvaluator {
 public:
  FwssnrEvaluator(std::span<const double> reference, double sample_rate, const FwssnrConfig& cfg = {});

  double operator()(std::span<const double> test) const;
  std::size_t active_frames() const { return active_.size(); }

 private:
  FwssnrConfig cfg_;
  std::vector<double> reference_;
  std::size_t frame_ = 0;
  std::size_t hop_ = 0;
  std::size_t nfft_ = 0;
  std::vector<double> window_;
  RMatrix filters_;            // bands x bins
  std::vector<std::size_t> active_;
  RMatrix reference_energy_;   // bands x active frames
  RMatrix weights_;            // bands x active frames
};

// Throws InvalidArgument on length mismatch or a silent reference.
double fwssnr(std::span<const double> test, std::span<const double> reference, double sample_rate,
              const FwssnrConfig& cfg = {});

struct InputFwssnr {
  double value_db = 0;
  std::size_t best_mic = 0;
  std::vector<double> per_mic;
};

// max over m of fwssnr(y_m, anechoic[speaker] at reference_mic).
InputFwssnr input_fwssnr(const scene::RenderedScene& scene, std::size_t speaker,
                         std::size_t reference_mic = 0, const FwssnrConfig& cfg = {});

struct DecodeOutcome {
  bool correct = false;
  bool tie = false;
  double selected_db = 0;
  double discarded_db = 0;
};

// Correct iff fwssnr(selected) > fwssnr(discarded) strictly.
DecodeOutcome decode_correct(std::span<const double> selected, std::span<const double> discarded,
                             std::span<const double> reference, double sample_rate,
                             const FwssnrConfig& cfg = {});

// Percentage of correct outcomes.
double aad_accuracy(std::span<const DecodeOutcome> outcomes);
double aad_accuracy(std::span<const bool> outcomes);

// P(X >= k) for X ~ Binomial(n, 1/2), exact.
double binomial_upper_tail(std::size_t n, std::size_t k);

// Smallest k/n (percent) with P(X >= k | n, 1/2) <= alpha; 100 when no
// k <= n qualifies.
double chance_upper_bound(std::size_t n_trials, double alpha);

// Externally reported chance levels for 40- and 20-trial conditions,
// printed next to chance_upper_bound for comparison.
inline constexpr double kReportedChanceBound40 = 61.39;
inline constexpr double kReportedChanceBound20 = 66.19;

}  // namespace cbf::metrics
