#include "cbf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "cbf/metrics.hpp"

namespace cbf::scene {

namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::span<const double> row_span(const Signals& s, Eigen::Index r) {
  return {s.row(r).data(), static_cast<std::size_t>(s.cols())};
}

}  // namespace

Waveform convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t nfft = next_pow2(out_len);
  Eigen::FFT<double> fft;
  std::vector<double> pa(nfft, 0.0), pb(nfft, 0.0);
  std::copy(a.begin(), a.end(), pa.begin());
  std::copy(b.begin(), b.end(), pb.begin());
  std::vector<Complex> fa, fb;
  fft.fwd(fa, pa);
  fft.fwd(fb, pb);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> full;
  fft.inv(full, fa);
  full.resize(out_len);
  return full;
}

Waveform shorten_pauses(std::span<const double> signal, double sample_rate, double max_pause_s) {
  if (!(max_pause_s > 0)) throw InvalidArgument("shorten_pauses: max_pause must be positive");
  if (signal.empty()) return {};
  const std::size_t n = signal.size();
  const auto win = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.020 * sample_rate)));
  const std::size_t windows = (n + win - 1) / win;

  std::vector<double> rms(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    const std::size_t lo = w * win, hi = std::min(n, lo + win);
    double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) acc += signal[i] * signal[i];
    rms[w] = std::sqrt(acc / static_cast<double>(hi - lo));
  }
  std::vector<double> sorted = rms;
  const auto idx = static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(windows - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
  const double threshold = sorted[idx] * std::pow(10.0, -40.0 / 20.0);

  const auto keep = static_cast<std::size_t>(std::lround(max_pause_s * sample_rate));
  const auto fade_len = static_cast<std::size_t>(std::lround(0.010 * sample_rate));

  Waveform out;
  out.reserve(n);
  std::size_t cursor = 0;  // next input sample not yet emitted
  std::size_t w = 0;
  while (w < windows) {
    if (rms[w] > threshold) {
      ++w;
      continue;
    }
    std::size_t end = w;
    while (end < windows && rms[end] <= threshold) ++end;
    const std::size_t run_lo = w * win;
    const std::size_t run_hi = std::min(n, end * win);
    w = end;
    if (run_hi - run_lo <= keep) continue;

    const std::size_t cut_lo = run_lo + keep / 2;
    const std::size_t cut_hi = cut_lo + (run_hi - run_lo - keep);
    const std::size_t fade = std::min(fade_len, keep - keep / 2);
    out.insert(out.end(), signal.begin() + static_cast<std::ptrdiff_t>(cursor),
               signal.begin() + static_cast<std::ptrdiff_t>(cut_lo));
    for (std::size_t i = 0; i < fade; ++i) {
      const double phase = std::numbers::pi * (static_cast<double>(i) + 0.5) / (2.0 * static_cast<double>(fade));
      const double fade_out = std::cos(phase) * std::cos(phase);
      out.push_back(signal[cut_lo + i] * fade_out + signal[cut_hi + i] * (1.0 - fade_out));
    }
    cursor = cut_hi + fade;
  }
  out.insert(out.end(), signal.begin() + static_cast<std::ptrdiff_t>(cursor), signal.end());
  return out;
}

namespace {

void check_scene(const AcousticScene& scene) {
  if (scene.sources.empty()) throw InvalidArgument("render: scene has no sources");
  if (scene.irs.sources() != scene.sources.size() || scene.irs.anechoic.size() != scene.sources.size()) {
    throw InvalidArgument("render: impulse responses do not match the number of sources");
  }
  const std::size_t mics = scene.irs.mics();
  if (mics == 0) throw InvalidArgument("render: scene has no microphones");
  for (std::size_t i = 0; i < scene.sources.size(); ++i) {
    if (scene.irs.reverberant[i].size() != mics || scene.irs.anechoic[i].size() != mics) {
      throw InvalidArgument("render: ragged impulse response set");
    }
  }
  if (scene.irs.sample_rate != scene.sample_rate) {
    std::ostringstream os;
    os << "render: sample-rate mismatch, sources at " << scene.sample_rate << " Hz, IRs at "
       << scene.irs.sample_rate << " Hz";
    throw InvalidArgument(os.str());
  }
  if (scene.noise.size() > 0) {
    if (scene.noise_sample_rate != scene.sample_rate) {
      std::ostringstream os;
      os << "render: sample-rate mismatch, sources at " << scene.sample_rate << " Hz, noise at "
         << scene.noise_sample_rate << " Hz";
      throw InvalidArgument(os.str());
    }
    if (static_cast<std::size_t>(scene.noise.rows()) != mics) {
      throw InvalidArgument("render: noise channel count differs from microphone count");
    }
  }
}

std::size_t rendered_length(const AcousticScene& scene) {
  std::size_t n = 0;
  for (const auto& s : scene.sources) n = std::max(n, s.size());
  return n;
}

// Speech components only; noise left zero.
RenderedScene render_speech(const AcousticScene& scene) {
  check_scene(scene);
  const std::size_t n = rendered_length(scene);
  const std::size_t mics = scene.num_mics();
  if (scene.noise.size() > 0 && static_cast<std::size_t>(scene.noise.cols()) < n) {
    throw InvalidArgument("render: noise is shorter than the sources");
  }
  RenderedScene out;
  out.sample_rate = scene.sample_rate;
  const auto rows = static_cast<Eigen::Index>(mics);
  const auto cols = static_cast<Eigen::Index>(n);
  for (std::size_t i = 0; i < scene.sources.size(); ++i) {
    Waveform src = scene.sources[i];
    src.resize(n, 0.0);
    Signals rev = Signals::Zero(rows, cols), an = Signals::Zero(rows, cols);
    for (std::size_t m = 0; m < mics; ++m) {
      const auto& h = scene.irs.reverberant[i][m];
      const auto& ha = scene.irs.anechoic[i][m];
      if (h.size() >= n || ha.size() >= n) {
        throw InvalidArgument("render: impulse response is not shorter than the sources");
      }
      const auto x = convolve(src, h);
      const auto xa = convolve(src, ha);
      for (std::size_t t = 0; t < n; ++t) {
        rev(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) = x[t];
        an(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) = xa[t];
      }
    }
    out.reverberant.push_back(std::move(rev));
    out.anechoic.push_back(std::move(an));
  }
  out.noise = Signals::Zero(rows, cols);
  out.mics = Signals::Zero(rows, cols);
  return out;
}

void mix(RenderedScene& r, const Signals& noise, double gain) {
  const auto cols = r.mics.cols();
  if (noise.size() > 0) {
    r.noise = gain * noise.leftCols(cols);
  } else {
    r.noise.setZero();
  }
  r.mics.setZero();
  for (const auto& x : r.reverberant) r.mics += x;
  r.mics += r.noise;
}

template <typename Measure>
Calibration bisect_gain(const Measure& measure, double target) {
  Calibration cal;
  double lo = std::log10(kMinNoiseGain), hi = std::log10(kMaxNoiseGain);
  const double f_lo = measure(kMinNoiseGain);
  const double f_hi = measure(kMaxNoiseGain);
  cal.evaluations = 2;
  if (target >= f_lo - kCalibrationToleranceDb) {
    if (std::abs(f_lo - target) <= kCalibrationToleranceDb) {
      cal.gain = kMinNoiseGain;
      cal.achieved_db = f_lo;
      cal.at_boundary = true;
      return cal;
    }
    std::ostringstream os;
    os << "calibrate_noise_gain: target " << target << " dB exceeds the noise-free level " << f_lo << " dB";
    throw Error(os.str());
  }
  if (target < f_hi - kCalibrationToleranceDb) {
    std::ostringstream os;
    os << "calibrate_noise_gain: target " << target << " dB is below the level at maximum gain " << f_hi << " dB";
    throw Error(os.str());
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gain = std::pow(10.0, mid);
    const double v = measure(gain);
    ++cal.evaluations;
    if (std::abs(v - target) <= kCalibrationToleranceDb) {
      cal.gain = gain;
      cal.achieved_db = v;
      return cal;
    }
    // fwSSNR decreases with gain.
    (v > target ? lo : hi) = mid;
  }
  throw Error("calibrate_noise_gain: bisection did not converge");
}

}  // namespace

RenderedScene render(const AcousticScene& scene, double noise_gain) {
  RenderedScene out = render_speech(scene);
  mix(out, scene.noise, noise_gain);
  return out;
}

Calibration calibrate_noise_gain(const AcousticScene& scene, double target_fwssnr_db,
                                 std::size_t reference_source, std::size_t reference_mic,
                                 const metrics::FwssnrConfig& cfg) {
  if (scene.noise.size() == 0 || scene.noise.isZero(0.0)) {
    throw InvalidArgument("calibrate_noise_gain: noise is identically zero");
  }
  RenderedScene r = render_speech(scene);
  if (reference_source >= r.num_sources() || reference_mic >= r.num_mics()) {
    throw InvalidArgument("calibrate_noise_gain: reference index out of range");
  }
  const metrics::FwssnrEvaluator eval(
      row_span(r.anechoic[reference_source], static_cast<Eigen::Index>(reference_mic)), r.sample_rate, cfg);
  auto measure = [&](double gain) {
    mix(r, scene.noise, gain);
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; m < r.mics.rows(); ++m) best = std::max(best, eval(row_span(r.mics, m)));
    return best;
  };
  return bisect_gain(measure, target_fwssnr_db);
}

Calibration calibrate_noise_gain_average(const AcousticScene& scene, double target_fwssnr_db,
                                         std::span<const std::size_t> reference_mics,
                                         const metrics::FwssnrConfig& cfg) {
  if (scene.noise.size() == 0 || scene.noise.isZero(0.0)) {
    throw InvalidArgument("calibrate_noise_gain: noise is identically zero");
  }
  RenderedScene r = render_speech(scene);
  if (reference_mics.size() != r.num_sources()) {
    throw InvalidArgument("calibrate_noise_gain: one reference mic per source required");
  }
  std::vector<metrics::FwssnrEvaluator> evals;
  for (std::size_t i = 0; i < r.num_sources(); ++i) {
    if (reference_mics[i] >= r.num_mics()) throw InvalidArgument("calibrate_noise_gain: reference mic out of range");
    evals.emplace_back(row_span(r.anechoic[i], static_cast<Eigen::Index>(reference_mics[i])), r.sample_rate, cfg);
  }
  auto measure = [&](double gain) {
    mix(r, scene.noise, gain);
    double acc = 0;
    for (const auto& eval : evals) {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index m = 0; m < r.mics.rows(); ++m) best = std::max(best, eval(row_span(r.mics, m)));
      acc += best;
    }
    return acc / static_cast<double>(evals.size());
  };
  return bisect_gain(measure, target_fwssnr_db);
}

NoiseShape parse_noise_shape(const std::string& name) {
  if (name == "white") return NoiseShape::kWhite;
  if (name == "speech-shaped") return NoiseShape::kSpeechShaped;
  throw ConfigError("unknown noise shape '" + name + "' (expected white or speech-shaped)");
}

double speech_shape_power(double freq_hz) {
  const double f2 = freq_hz * freq_hz;
  return (f2 / (f2 + 100.0 * 100.0)) / (1.0 + f2 / (500.0 * 500.0));
}

Signals generate_decorrelated_noise(std::size_t channels, std::size_t length, NoiseShape shape,
                                    double sample_rate, std::uint64_t seed) {
  if (channels < 1) throw InvalidArgument("generate_decorrelated_noise: need at least one channel");
  Signals out(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(length));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < channels; ++c) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + c + 1);
    for (std::size_t t = 0; t < length; ++t) out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = normal(rng);
  }
  if (shape == NoiseShape::kSpeechShaped && length > 0) {
    Eigen::FFT<double> fft;
    const std::size_t nfft = next_pow2(length);
    std::vector<double> buf(nfft);
    std::vector<Complex> spec;
    for (std::size_t c = 0; c < channels; ++c) {
      std::fill(buf.begin(), buf.end(), 0.0);
      for (std::size_t t = 0; t < length; ++t) buf[t] = out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t));
      fft.fwd(spec, buf);
      for (std::size_t j = 0; j < spec.size(); ++j) {
        const std::size_t jj = j <= nfft / 2 ? j : nfft - j;
        const double f = static_cast<double>(jj) * sample_rate / static_cast<double>(nfft);
        spec[j] *= std::sqrt(speech_shape_power(f));
      }
      fft.inv(buf, spec);
      double energy = 0;
      for (std::size_t t = 0; t < length; ++t) energy += buf[t] * buf[t];
      const double scale = energy > 0 ? std::sqrt(static_cast<double>(length) / energy) : 0.0;
      for (std::size_t t = 0; t < length; ++t) {
        out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = buf[t] * scale;
      }
    }
  }
  return out;
}

ArrayGeometry hearing_aid_array() {
  ArrayGeometry g;
  for (double x : {-0.08, 0.08}) {
    for (double y : {0.0076, 0.0, -0.0076}) g.positions.emplace_back(x, y, 0.0);
  }
  return g;
}

ImpulseResponseSet synthesize_irs(const ArrayGeometry& geometry, std::span<const double> azimuths_deg,
                                  const SyntheticIrConfig& cfg, std::uint64_t seed) {
  if (geometry.size() == 0) throw InvalidArgument("synthesize_irs: empty array");
  const double fs = cfg.sample_rate;
  const auto half = static_cast<long>(cfg.sinc_half_width);
  ImpulseResponseSet set;
  set.sample_rate = fs;
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t i = 0; i < azimuths_deg.size(); ++i) {
    const double theta = azimuths_deg[i] * std::numbers::pi / 180.0;
    const Eigen::Vector3d dir(std::sin(theta), std::cos(theta), 0.0);
    std::vector<Waveform> rev, an;
    for (std::size_t m = 0; m < geometry.size(); ++m) {
      const Eigen::Vector3d& p = geometry.positions[m];
      const double delay = (cfg.base_delay_ms * 1e-3 - p.dot(dir) / cfg.speed_of_sound) * fs;
      const bool far_side = p.x() * dir.x() < 0;
      const double gain = far_side ? std::pow(10.0, -cfg.head_shadow_db * std::abs(dir.x()) / 20.0) : 1.0;

      const auto centre = static_cast<long>(std::floor(delay));
      const std::size_t direct_len = static_cast<std::size_t>(centre + half + 2);
      Waveform h(direct_len, 0.0);
      for (long t = std::max(0L, centre - half + 1); t <= centre + half; ++t) {
        const double x = static_cast<double>(t) - delay;
        const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / static_cast<double>(half + 1));
        h[static_cast<std::size_t>(t)] = gain * sinc * win;
      }
      Waveform hr = h;
      if (cfg.t60_s > 0) {
        std::mt19937_64 rng(seed * 0x2545F4914F6CDD1DULL + i * 1009 + m + 7);
        const auto onset = static_cast<std::size_t>(std::lround(delay + cfg.predelay_ms * 1e-3 * fs));
        const auto tail_len = static_cast<std::size_t>(std::lround(cfg.t60_s * fs));
        hr.resize(std::max(hr.size(), onset + tail_len), 0.0);
        const double decay = 3.0 * std::log(10.0) / (cfg.t60_s * fs);  // amplitude -60 dB at T60
        Waveform tail(tail_len);
        double tail_energy = 0;
        for (std::size_t t = 0; t < tail_len; ++t) {
          tail[t] = normal(rng) * std::exp(-decay * static_cast<double>(t));
          tail_energy += tail[t] * tail[t];
        }
        double direct_energy = 0;
        for (double v : h) direct_energy += v * v;
        const double scale = std::sqrt(direct_energy * std::pow(10.0, -cfg.drr_db / 10.0) / tail_energy);
        for (std::size_t t = 0; t < tail_len; ++t) hr[onset + t] += scale * tail[t];
      }
      an.push_back(std::move(h));
      rev.push_back(std::move(hr));
    }
    set.reverberant.push_back(std::move(rev));
    set.anechoic.push_back(std::move(an));
  }
  return set;
}

namespace {

// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
  double a1 = 0, a2 = 0, g = 1, y1 = 0, y2 = 0;
  void tune(double freq, double bandwidth, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    const double w = 2.0 * std::numbers::pi * freq / fs;
    a1 = 2.0 * r * std::cos(w);
    a2 = -r * r;
    g = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * w) + r * r);
  }
  double step(double x) {
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

Waveform synthesize_speech_like(double duration_s, double sample_rate, std::uint64_t seed,
                                const SpeechLikeConfig& cfg) {
  const auto n = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
  Waveform out(n, 0.0);
  if (n == 0) return out;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x51ED);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  const double f0_base = cfg.f0_hz > 0 ? cfg.f0_hz : between(95.0, 150.0);
  Resonator formants[3];
  double phase = 0, glottal = 0;
  std::size_t t = 0;
  while (t < n) {
    if (uni(rng) < cfg.pause_probability) {
      t += static_cast<std::size_t>(between(0.15, cfg.max_pause_s) * sample_rate);
      continue;
    }
    const auto len = static_cast<std::size_t>(between(0.12, 0.30) * sample_rate);
    const bool voiced = uni(rng) < 0.8;
    const double amp = between(0.4, 1.0);
    const double f0 = f0_base * between(0.85, 1.2);
    const double glide = between(-0.15, 0.15);
    const double fr[3] = {between(300, 800), between(900, 2300), between(2400, 3300)};
    const double bw[3] = {80, 120, 160};
    for (int j = 0; j < 3; ++j) formants[j].tune(fr[j], bw[j], sample_rate);
    for (std::size_t i = 0; i < len && t < n; ++i, ++t) {
      const double u = static_cast<double>(i) / static_cast<double>(len);
      const double env = std::sin(std::numbers::pi * u) * std::sin(std::numbers::pi * u);
      double excitation;
      if (voiced) {
        phase += f0 * (1.0 + glide * u) / sample_rate;
        excitation = 0;
        if (phase >= 1.0) {
          phase -= 1.0;
          excitation = 1.0;
        }
        glottal = excitation + 0.9 * glottal;
        excitation = glottal;
      } else {
        excitation = 0.3 * normal(rng);
      }
      double y = 0;
      for (auto& r : formants) y += r.step(excitation);
      out[t] = amp * env * y;
    }
    t += static_cast<std::size_t>(between(0.0, 0.06) * sample_rate);
  }
  double energy = 0;
  for (double v : out) energy += v * v;
  if (energy > 0) {
    const double scale = cfg.rms / std::sqrt(energy / static_cast<double>(n));
    for (double& v : out) v *= scale;
  }
  return out;
}

}  // namespace cbf::scene
