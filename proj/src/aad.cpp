#include "cbf/aad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace cbf::aad {

namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;
};

Biquad butterworth_lowpass(double cutoff_hz, double rate) {
  const double k = std::tan(std::numbers::pi * cutoff_hz / rate);
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
  Biquad q{};
  q.b0 = k * k * norm;
  q.b1 = 2.0 * q.b0;
  q.b2 = q.b0;
  q.a1 = 2.0 * (k * k - 1.0) * norm;
  q.a2 = (1.0 - std::numbers::sqrt2 * k + k * k) * norm;
  return q;
}

// Transposed direct form II, state initialised to the steady state of the
// first input sample.
void filter_inplace(std::vector<double>& x, const Biquad& q, bool reverse) {
  if (x.empty()) return;
  const double x0 = reverse ? x.back() : x.front();
  double z2 = (q.b2 - q.a2) * x0;
  double z1 = (q.b1 - q.a1) * x0 + z2;
  auto step = [&](double& v) {
    const double in = v;
    const double out = q.b0 * in + z1;
    z1 = q.b1 * in - q.a1 * out + z2;
    z2 = q.b2 * in - q.a2 * out;
    v = out;
  };
  if (reverse) {
    for (auto it = x.rbegin(); it != x.rend(); ++it) step(*it);
  } else {
    for (auto& v : x) step(v);
  }
}

}  // namespace

Envelope extract_envelope(std::span<const double> signal, double rate_in, const EnvelopeConfig& cfg) {
  if (signal.empty()) throw InvalidArgument("extract_envelope: empty signal");
  if (!(rate_in > 0) || !(cfg.rate_out > 0) || cfg.rate_out > rate_in) {
    throw InvalidArgument("extract_envelope: need 0 < rate_out <= rate_in");
  }
  if (!(cfg.cutoff_hz > 0) || cfg.cutoff_hz >= rate_in / 2) {
    throw InvalidArgument("extract_envelope: cutoff must lie below the input Nyquist frequency");
  }
  std::vector<double> x(signal.size());
  std::transform(signal.begin(), signal.end(), x.begin(), [](double v) { return std::abs(v); });
  const Biquad q = butterworth_lowpass(cfg.cutoff_hz, rate_in);
  filter_inplace(x, q, false);
  filter_inplace(x, q, true);

  Envelope env;
  env.rate = cfg.rate_out;
  const double ratio = rate_in / cfg.rate_out;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) < 1e-9) {
    const auto step = static_cast<std::size_t>(rounded);
    for (std::size_t n = 0; n < x.size(); n += step) env.samples.push_back(std::max(x[n], 0.0));
  } else {
    const auto count = static_cast<std::size_t>(std::floor(static_cast<double>(x.size() - 1) / ratio)) + 1;
    env.samples.resize(count);
    for (std::size_t l = 0; l < count; ++l) {
      const double t = static_cast<double>(l) * ratio;
      const auto i = std::min(static_cast<std::size_t>(t), x.size() - 1);
      const double frac = t - static_cast<double>(i);
      const double v = i + 1 < x.size() ? (1 - frac) * x[i] + frac * x[i + 1] : x[i];
      env.samples[l] = std::max(v, 0.0);
    }
  }
  return env;
}

void DecoderConfig::validate() const {
  if (!(rate > 0)) throw ConfigError("decoder: rate must be positive");
  if (!(lag_min_ms >= 0) || !(lag_max_ms >= lag_min_ms)) {
    throw ConfigError("decoder: need 0 <= lag_min_ms <= lag_max_ms");
  }
  if (!(ridge >= 0)) throw ConfigError("decoder: ridge must be nonnegative");
}

std::size_t DecoderConfig::lag_offset() const {
  return static_cast<std::size_t>(std::ceil(lag_min_ms * rate / 1000.0 - 1e-9));
}

std::size_t DecoderConfig::lag_count() const {
  const auto last = static_cast<std::size_t>(std::floor(lag_max_ms * rate / 1000.0 + 1e-9));
  return last + 1 - lag_offset();
}

RMatrix zscore_channels(const RMatrix& eeg) {
  RMatrix out(eeg.rows(), eeg.cols());
  for (Eigen::Index c = 0; c < eeg.rows(); ++c) {
    const double mean = eeg.row(c).mean();
    const Eigen::RowVectorXd centred = eeg.row(c).array() - mean;
    const double sd = std::sqrt(centred.squaredNorm() / static_cast<double>(eeg.cols()));
    if (sd > 0 && sd > 1e-12 * std::abs(mean)) {
      out.row(c) = centred / sd;
    } else {
      out.row(c).setZero();
    }
  }
  return out;
}

RMatrix design_matrix(const RMatrix& eeg, std::size_t offset, std::size_t lags) {
  const auto span = static_cast<Eigen::Index>(offset + lags - 1);
  if (eeg.cols() <= span) {
    std::ostringstream os;
    os << "design_matrix: EEG has " << eeg.cols() << " samples, lag window needs more than " << span;
    throw InvalidArgument(os.str());
  }
  const Eigen::Index n = eeg.cols() - span;
  const auto t = static_cast<Eigen::Index>(lags);
  RMatrix x(n, eeg.rows() * t);
  for (Eigen::Index c = 0; c < eeg.rows(); ++c) {
    for (Eigen::Index j = 0; j < t; ++j) {
      x.col(c * t + j) = eeg.row(c).segment(static_cast<Eigen::Index>(offset) + j, n).transpose();
    }
  }
  return x;
}

Decoder train_decoder(std::span<const RMatrix> eeg_trials, std::span<const Envelope> attended,
                      const DecoderConfig& cfg) {
  cfg.validate();
  if (eeg_trials.empty()) throw InvalidArgument("train_decoder: no trials");
  if (eeg_trials.size() != attended.size()) {
    throw InvalidArgument("train_decoder: one attended envelope per EEG trial required");
  }
  const Eigen::Index channels = eeg_trials.front().rows();
  const std::size_t offset = cfg.lag_offset();
  const std::size_t lags = cfg.lag_count();
  const Eigen::Index dim = channels * static_cast<Eigen::Index>(lags);
  RMatrix gram = RMatrix::Zero(dim, dim);
  RVector rhs = RVector::Zero(dim);
  std::size_t samples = 0;
  for (std::size_t i = 0; i < eeg_trials.size(); ++i) {
    const RMatrix& raw = eeg_trials[i];
    if (raw.rows() != channels) throw InvalidArgument("train_decoder: trials differ in channel count");
    if (static_cast<std::size_t>(raw.cols()) != attended[i].size()) {
      std::ostringstream os;
      os << "train_decoder: trial " << i << " has " << raw.cols() << " EEG samples but "
         << attended[i].size() << " envelope samples";
      throw InvalidArgument(os.str());
    }
    const RMatrix x = design_matrix(cfg.zscore ? zscore_channels(raw) : raw, offset, lags);
    Eigen::Map<const RVector> e(attended[i].samples.data(), x.rows());
    const RVector target = e.array() - e.mean();
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    rhs.noalias() += x.transpose() * target;
    samples += static_cast<std::size_t>(x.rows());
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  const double mean_power = gram.trace() / (static_cast<double>(dim) * static_cast<double>(samples));

  Decoder d;
  d.offset = offset;
  d.lag_min_ms = cfg.lag_min_ms;
  d.lag_max_ms = cfg.lag_max_ms;
  d.rate = cfg.rate;
  d.zscore = cfg.zscore;
  d.ridge_abs = cfg.ridge * mean_power;
  gram.diagonal().array() += d.ridge_abs;

  Eigen::LDLT<RMatrix> ldlt(gram);
  const RVector diag = ldlt.vectorD();
  const double scale = std::max(diag.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      diag.minCoeff() <= std::numeric_limits<double>::epsilon() * static_cast<double>(dim) * scale) {
    throw SingularMatrixError("train_decoder: normal equations are singular (zero ridge on rank-deficient EEG)");
  }
  const RVector w = ldlt.solve(rhs);
  d.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      w.data(), channels, static_cast<Eigen::Index>(lags));
  if (!d.weights.allFinite()) throw SingularMatrixError("train_decoder: non-finite decoder weights");
  return d;
}

Envelope reconstruct_envelope(const RMatrix& eeg, const Decoder& decoder) {
  if (static_cast<std::size_t>(eeg.rows()) != decoder.channels()) {
    std::ostringstream os;
    os << "reconstruct_envelope: EEG has " << eeg.rows() << " channels, decoder expects " << decoder.channels();
    throw InvalidArgument(os.str());
  }
  const RMatrix x = design_matrix(decoder.zscore ? zscore_channels(eeg) : eeg, decoder.offset, decoder.lags());
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = decoder.weights;
  const RVector e = x * Eigen::Map<const RVector>(w.data(), w.size());
  Envelope out;
  out.rate = decoder.rate;
  out.tag = "reconstructed";
  out.samples.assign(e.data(), e.data() + e.size());
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson: length mismatch");
  if (a.size() < 2) throw InvalidArgument("pearson: need at least two samples");
  Eigen::Map<const RVector> x(a.data(), static_cast<Eigen::Index>(a.size()));
  Eigen::Map<const RVector> y(b.data(), static_cast<Eigen::Index>(b.size()));
  const RVector xc = x.array() - x.mean();
  const RVector yc = y.array() - y.mean();
  const double nx = xc.norm(), ny = yc.norm();
  if (!(nx > 0) || !(ny > 0)) throw UndefinedCorrelationError("pearson: zero-variance input");
  return std::clamp(xc.dot(yc) / (nx * ny), -1.0, 1.0);
}

Selection select_speaker(std::span<const Envelope> candidates, const Envelope& reconstructed) {
  if (candidates.size() < 2) throw InvalidArgument("select_speaker: need at least two candidates");
  const std::size_t n = reconstructed.size();
  Selection sel;
  sel.correlations.assign(candidates.size(), std::numeric_limits<double>::quiet_NaN());
  sel.excluded.assign(candidates.size(), false);
  bool found = false;
  std::string last_error;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].size() < n) {
      throw InvalidArgument("select_speaker: candidate shorter than the reconstructed envelope");
    }
    try {
      sel.correlations[i] = pearson(std::span(candidates[i].samples).first(n), reconstructed.samples);
    } catch (const UndefinedCorrelationError& e) {
      sel.excluded[i] = true;
      last_error = e.what();
      continue;
    }
    if (!found || sel.correlations[i] > sel.correlations[sel.index]) {
      sel.index = i;
      found = true;
    }
  }
  if (!found) throw UndefinedCorrelationError("select_speaker: no candidate has a defined correlation (" + last_error + ")");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i != sel.index && !sel.excluded[i] && sel.correlations[i] == sel.correlations[sel.index]) sel.tie = true;
  }
  return sel;
}

RMatrix synthesize_eeg(const Envelope& attended, const Envelope& unattended, std::size_t channels,
                       double snr_db, std::uint64_t mixing_seed, std::uint64_t noise_seed,
                       const EegSynthConfig& cfg) {
  if (attended.size() != unattended.size()) throw InvalidArgument("synthesize_eeg: envelope lengths differ");
  if (channels == 0) throw InvalidArgument("synthesize_eeg: zero channels");
  const auto len = static_cast<Eigen::Index>(attended.size());
  const double rate = attended.rate;

  // Gaussian response kernel over 0-250 ms.
  const auto taps = static_cast<Eigen::Index>(std::floor(0.25 * rate)) + 1;
  RVector kernel(taps);
  for (Eigen::Index j = 0; j < taps; ++j) {
    const double t_ms = 1000.0 * static_cast<double>(j) / rate;
    const double u = (t_ms - cfg.latency_ms) / cfg.kernel_width_ms;
    kernel(j) = std::exp(-0.5 * u * u);
  }
  auto filter = [&](const RVector& x) {
    RVector out = RVector::Zero(len);
    for (Eigen::Index l = 0; l < len; ++l) {
      double acc = 0;
      for (Eigen::Index j = 0; j < taps && j <= l; ++j) acc += kernel(j) * x(l - j);
      out(l) = acc;
    }
    return out;
  };
  auto respond = [&](const Envelope& e) {
    Eigen::Map<const RVector> x(e.samples.data(), len);
    return filter(RVector(x.array() - (len > 0 ? x.mean() : 0.0)));
  };
  const RVector ra = respond(attended);
  const RVector ru = respond(unattended);
  auto rms = [&](const RVector& x) { return len > 0 ? std::sqrt(x.squaredNorm() / static_cast<double>(len)) : 0.0; };

  // Background activity shares the response band, so snr_db holds in band.
  std::mt19937_64 mixing(mixing_seed), noise(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RMatrix eeg(static_cast<Eigen::Index>(channels), len);
  const double noise_scale = std::pow(10.0, -snr_db / 20.0);
  for (Eigen::Index c = 0; c < eeg.rows(); ++c) {
    const double wa = normal(mixing);
    const double wu = cfg.leakage * normal(mixing);
    const RVector s = wa * ra + wu * ru;
    RVector white(len);
    for (Eigen::Index l = 0; l < len; ++l) white(l) = normal(noise);
    RVector v = filter(white);
    const double v_rms = rms(v);
    if (v_rms > 0) v /= v_rms;
    const double s_rms = rms(s);
    const double sigma = s_rms > 0 ? s_rms * noise_scale : noise_scale;
    eeg.row(c) = (s + sigma * v).transpose();
  }
  return eeg;
}

std::vector<std::pair<std::size_t, std::size_t>> trial_ranges(std::size_t length, double rate, double trial_s) {
  if (!(rate > 0) || !(trial_s > 0)) throw InvalidArgument("trial_ranges: rate and trial length must be positive");
  const auto per = static_cast<std::size_t>(std::llround(rate * trial_s));
  if (per == 0) throw InvalidArgument("trial_ranges: trial shorter than one sample");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b + per <= length; b += per) out.emplace_back(b, b + per);
  return out;
}

}  // namespace cbf::aad
