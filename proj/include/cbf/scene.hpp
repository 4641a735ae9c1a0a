#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cbf/common.hpp"

namespace cbf::metrics {
struct FwssnrConfig;
}

namespace cbf::scene {

using Waveform = std::vector<double>;

// Per-source, per-microphone impulse responses: ir[i][m].
struct ImpulseResponseSet {
  double sample_rate = 16000.0;
  std::vector<std::vector<Waveform>> reverberant;
  std::vector<std::vector<Waveform>> anechoic;

  std::size_t sources() const { return reverberant.size(); }
  std::size_t mics() const { return reverberant.empty() ? 0 : reverberant.front().size(); }
};

struct AcousticScene {
  double sample_rate = 16000.0;
  std::vector<Waveform> sources;
  ImpulseResponseSet irs;
  Signals noise;  // M x N, may be empty (no noise)
  double noise_sample_rate = 16000.0;

  std::size_t num_sources() const { return sources.size(); }
  std::size_t num_mics() const { return irs.mics(); }
};

// y = sum_i reverberant[i] + noise, with every summand retained.
struct RenderedScene {
  double sample_rate = 16000.0;
  Signals mics;
  std::vector<Signals> reverberant;  // per source, M x N
  std::vector<Signals> anechoic;     // per source, M x N
  Signals noise;                     // M x N

  std::size_t num_sources() const { return reverberant.size(); }
  std::size_t num_mics() const { return static_cast<std::size_t>(mics.rows()); }
  std::size_t length() const { return static_cast<std::size_t>(mics.cols()); }
};

// Full linear convolution (length a + b - 1), FFT based.
Waveform convolve(std::span<const double> a, std::span<const double> b);

// Pause detection: 20 ms RMS windows, silent when 40 dB below the 95th
// percentile window RMS. Silent runs longer than max_pause_s are cut in
// their middle down to exactly max_pause_s, joined by a 10 ms cosine
// cross-fade.
Waveform shorten_pauses(std::span<const double> signal, double sample_rate, double max_pause_s);

// Convolves every source with its reverberant and anechoic IRs (trimmed to
// the longest source) and adds noise_gain * noise.
RenderedScene render(const AcousticScene& scene, double noise_gain);

struct Calibration {
  double gain = 0;
  double achieved_db = 0;
  bool at_boundary = false;  // gain clamped to the lower bound 1e-6
  int evaluations = 0;
};

inline constexpr double kMinNoiseGain = 1e-6;
inline constexpr double kMaxNoiseGain = 1e6;
inline constexpr double kCalibrationToleranceDb = 0.1;

// Bisection on log(gain) until the input fwSSNR of `reference_source` is
// within 0.1 dB of the target. Throws InvalidArgument if the noise is all
// zero and Error if the target cannot be reached within [1e-6, 1e6].
Calibration calibrate_noise_gain(const AcousticScene& scene, double target_fwssnr_db,
                                 std::size_t reference_source, std::size_t reference_mic,
                                 const metrics::FwssnrConfig& cfg);

// Same search, on the input fwSSNR averaged over all sources, each measured
// against its own reference microphone.
Calibration calibrate_noise_gain_average(const AcousticScene& scene, double target_fwssnr_db,
                                         std::span<const std::size_t> reference_mics,
                                         const metrics::FwssnrConfig& cfg);

enum class NoiseShape { kWhite, kSpeechShaped };
NoiseShape parse_noise_shape(const std::string& name);

// |H(f)|^2 of the speech-shaped noise: 100 Hz first-order high-pass times a
// 500 Hz first-order low-pass.
double speech_shape_power(double freq_hz);

// Mutually independent, zero-mean, unit-variance stationary channels.
Signals generate_decorrelated_noise(std::size_t channels, std::size_t length, NoiseShape shape,
                                    double sample_rate, std::uint64_t seed);

// Microphone positions in metres; x to the right, y to the front.
struct ArrayGeometry {
  std::vector<Eigen::Vector3d> positions;
  std::size_t size() const { return positions.size(); }
};

// Two behind-the-ear devices with three microphones each (front, middle,
// rear), 16 cm apart. Mics 0-2 left, 3-5 right.
ArrayGeometry hearing_aid_array();

struct SyntheticIrConfig {
  double sample_rate = 16000.0;
  double t60_s = 0.5;            // <= 0 gives anechoic IRs only
  double drr_db = 0.0;           // direct-to-reverberant energy ratio
  double predelay_ms = 2.5;      // gap between direct path and tail onset
  double head_shadow_db = 6.0;   // far-ear attenuation at 90 degrees
  double base_delay_ms = 2.0;
  double speed_of_sound = 343.0;
  std::size_t sinc_half_width = 16;
};

// Direct path as a windowed-sinc fractional delay with a broadband head
// shadow, plus an exponentially decaying Gaussian tail per microphone.
// Azimuth 0 is the front, positive angles to the right.
ImpulseResponseSet synthesize_irs(const ArrayGeometry& geometry, std::span<const double> azimuths_deg,
                                  const SyntheticIrConfig& cfg, std::uint64_t seed);

struct SpeechLikeConfig {
  double f0_hz = 0.0;  // 0 draws a speaker pitch in [95, 150] Hz
  double pause_probability = 0.12;
  double max_pause_s = 1.2;
  double rms = 0.05;
};

// Formant-filtered pulse trains with syllabic envelopes and pauses. Serves
// as a reproducible stand-in for recorded speech.
Waveform synthesize_speech_like(double duration_s, double sample_rate, std::uint64_t seed,
                                const SpeechLikeConfig& cfg = {});

}  // namespace cbf::scene
