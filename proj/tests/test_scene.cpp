#include <doctest.h>

#include <numbers>

#include <unsupported/Eigen/FFT>

#include "cbf/metrics.hpp"
#include "cbf/scene.hpp"
#include "support.hpp"

using namespace cbf;
using scene::Waveform;

namespace {

Waveform direct_convolution(const Waveform& a, const Waveform& b) {
  Waveform out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

Waveform impulse(std::size_t len, std::size_t at) {
  Waveform h(len, 0.0);
  h[at] = 1.0;
  return h;
}

scene::AcousticScene identity_scene(std::size_t sources, std::size_t mics, std::size_t n, std::mt19937_64& rng) {
  scene::AcousticScene sc;
  for (std::size_t i = 0; i < sources; ++i) {
    sc.sources.push_back(test::random_signal(n, rng));
    sc.irs.reverberant.emplace_back(mics, impulse(4, 0));
    sc.irs.anechoic.emplace_back(mics, impulse(4, 0));
  }
  return sc;
}

}  // namespace

TEST_CASE("convolve matches direct convolution") {
  std::mt19937_64 rng(1);
  const auto a = test::random_signal(700, rng);
  Waveform h = test::random_signal(300, rng);
  for (std::size_t t = 0; t < h.size(); ++t) h[t] *= std::exp(-0.02 * static_cast<double>(t));
  const auto fast = scene::convolve(a, h);
  const auto slow = direct_convolution(a, h);
  REQUIRE(fast.size() == slow.size());
  double err = 0, ref = 0;
  for (std::size_t i = 0; i < fast.size(); ++i) {
    err = std::max(err, std::abs(fast[i] - slow[i]));
    ref = std::max(ref, std::abs(slow[i]));
  }
  CHECK(err / ref < 1e-10);
}

TEST_CASE("render with identity IRs sums the sources") {
  std::mt19937_64 rng(2);
  auto sc = identity_scene(2, 3, 1000, rng);
  const auto r = scene::render(sc, 0.0);
  CHECK(r.num_mics() == 3);
  CHECK(r.length() == 1000);
  for (Eigen::Index m = 0; m < 3; ++m)
    for (Eigen::Index n = 0; n < 1000; ++n)
      CHECK(r.mics(m, n) == doctest::Approx(sc.sources[0][static_cast<std::size_t>(n)] + sc.sources[1][static_cast<std::size_t>(n)]).epsilon(1e-12));
  CHECK(r.noise.isZero(0.0));
}

TEST_CASE("render with a delayed impulse shifts the source") {
  std::mt19937_64 rng(3);
  scene::AcousticScene sc;
  sc.sources.push_back(test::random_signal(500, rng));
  sc.irs.reverberant = {{impulse(20, 7)}};
  sc.irs.anechoic = {{impulse(20, 0)}};
  const auto r = scene::render(sc, 0.0);
  for (Eigen::Index n = 0; n < 7; ++n) CHECK(std::abs(r.reverberant[0](0, n)) < 1e-12);
  for (Eigen::Index n = 7; n < 500; ++n)
    CHECK(r.reverberant[0](0, n) == doctest::Approx(sc.sources[0][static_cast<std::size_t>(n - 7)]).epsilon(1e-12));
}

TEST_CASE("rendered mixture is the sum of its stored components") {
  std::mt19937_64 rng(4);
  const auto geometry = scene::hearing_aid_array();
  const std::vector<double> az = {-45.0, 45.0};
  scene::AcousticScene sc;
  sc.irs = scene::synthesize_irs(geometry, az, {}, 5);
  sc.sources = {test::random_signal(16000, rng, 0.1), test::random_signal(15000, rng, 0.1)};
  sc.noise = scene::generate_decorrelated_noise(6, 16000, scene::NoiseShape::kWhite, 16000, 9);
  const auto r = scene::render(sc, 0.37);
  Signals sum = Signals::Zero(r.mics.rows(), r.mics.cols());
  for (const auto& x : r.reverberant) sum += x;
  sum += r.noise;
  CHECK((sum - r.mics).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.noise - 0.37 * sc.noise.leftCols(r.mics.cols())).cwiseAbs().maxCoeff() == 0.0);

  // Linear in each source; a factor of two is exact in binary.
  auto doubled = sc;
  for (auto& v : doubled.sources[0]) v *= 2.0;
  const auto r2 = scene::render(doubled, 0.37);
  CHECK((r2.reverberant[0] - 2.0 * r.reverberant[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r2.reverberant[1] - r.reverberant[1]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("render reports sample-rate and shape problems") {
  std::mt19937_64 rng(5);
  auto sc = identity_scene(1, 2, 100, rng);
  sc.irs.sample_rate = 8000;
  CHECK_THROWS_AS(scene::render(sc, 0.0), InvalidArgument);
  sc.irs.sample_rate = 16000;
  sc.noise = Signals::Zero(2, 100);
  sc.noise_sample_rate = 44100;
  CHECK_THROWS_AS(scene::render(sc, 1.0), InvalidArgument);
  sc.noise_sample_rate = 16000;
  sc.irs.reverberant[0][0] = Waveform(200, 0.0);
  CHECK_THROWS_AS(scene::render(sc, 1.0), InvalidArgument);
}

TEST_CASE("shorten_pauses") {
  const double fs = 16000;
  std::mt19937_64 rng(6);
  const auto speech = test::random_signal(16000, rng);

  SUBCASE("no long pause is a no-op") {
    const auto out = scene::shorten_pauses(speech, fs, 0.5);
    CHECK(out == speech);
  }
  SUBCASE("a 2 s pause loses 1.5 s") {
    Waveform x = speech;
    x.insert(x.end(), 32000, 0.0);
    x.insert(x.end(), speech.begin(), speech.end());
    const auto out = scene::shorten_pauses(x, fs, 0.5);
    CHECK(out.size() == x.size() - 24000);
    CHECK(std::equal(speech.begin(), speech.end(), out.begin()));
    CHECK(std::equal(speech.begin(), speech.end(), out.end() - 16000));
    // idempotent
    CHECK(scene::shorten_pauses(out, fs, 0.5) == out);
  }
  SUBCASE("all silence collapses to the maximum pause") {
    const Waveform silent(48000, 0.0);
    CHECK(scene::shorten_pauses(silent, fs, 0.5).size() == 8000);
  }
  SUBCASE("empty input and bad arguments") {
    CHECK(scene::shorten_pauses(Waveform{}, fs, 0.5).empty());
    CHECK_THROWS_AS(scene::shorten_pauses(speech, fs, 0.0), InvalidArgument);
  }
}

TEST_CASE("shorten_pauses is idempotent on speech-like signals") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto s = scene::synthesize_speech_like(8.0, 16000, seed);
    const auto once = scene::shorten_pauses(s, 16000, 0.5);
    CHECK(once.size() <= s.size());
    CHECK(scene::shorten_pauses(once, 16000, 0.5) == once);
  }
}

TEST_CASE("decorrelated noise statistics") {
  const std::size_t n = 160000;
  const auto v = scene::generate_decorrelated_noise(2, n, scene::NoiseShape::kWhite, 16000, 3);
  const double mean0 = v.row(0).mean(), mean1 = v.row(1).mean();
  const double sd0 = std::sqrt((v.row(0).array() - mean0).square().mean());
  CHECK(std::abs(mean0) < 3.0 * sd0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(mean1) < 3.0 / std::sqrt(static_cast<double>(n)) * 1.05);
  const double rho = ((v.row(0).array() - mean0) * (v.row(1).array() - mean1)).mean() /
                     (sd0 * std::sqrt((v.row(1).array() - mean1).square().mean()));
  CHECK(std::abs(rho) <= 0.05);
  CHECK(sd0 == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("speech-shaped noise follows the target spectrum per octave") {
  const double fs = 16000;
  const std::size_t n = 160000, seg = 1024;
  const auto v = scene::generate_decorrelated_noise(1, n, scene::NoiseShape::kSpeechShaped, fs, 4);
  // Welch estimate with a Hann window, half overlap.
  Eigen::FFT<double> fft;
  std::vector<double> psd(seg / 2 + 1, 0.0), frame(seg);
  std::vector<Complex> spec;
  int count = 0;
  for (std::size_t start = 0; start + seg <= n; start += seg / 2, ++count) {
    for (std::size_t i = 0; i < seg; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / seg);
      frame[i] = v(0, static_cast<Eigen::Index>(start + i)) * w;
    }
    fft.fwd(spec, frame);
    for (std::size_t f = 0; f < psd.size(); ++f) psd[f] += std::norm(spec[f]);
  }
  auto band_db = [&](double lo, double hi, bool target) {
    double acc = 0;
    int bins = 0;
    for (std::size_t f = 0; f < psd.size(); ++f) {
      const double hz = static_cast<double>(f) * fs / seg;
      if (hz >= lo && hz < hi) {
        acc += target ? scene::speech_shape_power(hz) : psd[f];
        ++bins;
      }
    }
    return 10 * std::log10(acc / bins);
  };
  const double ref_est = band_db(500, 1000, false), ref_target = band_db(500, 1000, true);
  for (double lo : {125.0, 250.0, 1000.0, 2000.0, 4000.0}) {
    const double est = band_db(lo, 2 * lo, false) - ref_est;
    const double target = band_db(lo, 2 * lo, true) - ref_target;
    CHECK(std::abs(est - target) <= 1.0);
  }
}

TEST_CASE("synthetic IRs") {
  const auto geometry = scene::hearing_aid_array();
  CHECK(geometry.size() == 6);
  const std::vector<double> az = {-45.0, 45.0};
  scene::SyntheticIrConfig cfg;
  const auto set = scene::synthesize_irs(geometry, az, cfg, 1);
  REQUIRE(set.sources() == 2);
  REQUIRE(set.mics() == 6);
  auto energy = [](const Waveform& h) {
    double e = 0;
    for (double v : h) e += v * v;
    return e;
  };
  // Near-side microphones are louder: source at -45 deg is on the left (mics 0-2).
  CHECK(energy(set.anechoic[0][0]) > energy(set.anechoic[0][3]));
  CHECK(energy(set.anechoic[1][3]) > energy(set.anechoic[1][0]));
  // The reverberant IR adds a tail at the configured DRR.
  const double tail = energy(set.reverberant[0][0]) - energy(set.anechoic[0][0]);
  CHECK(10 * std::log10(energy(set.anechoic[0][0]) / tail) == doctest::Approx(cfg.drr_db).epsilon(0.05));
  CHECK(set.reverberant[0][0].size() >= static_cast<std::size_t>(cfg.t60_s * cfg.sample_rate));

  cfg.t60_s = 0.0;
  const auto dry = scene::synthesize_irs(geometry, az, cfg, 1);
  CHECK(dry.reverberant[1][2] == dry.anechoic[1][2]);
  // Deterministic under seed.
  CHECK(scene::synthesize_irs(geometry, az, {}, 8).reverberant[1][4] ==
        scene::synthesize_irs(geometry, az, {}, 8).reverberant[1][4]);
}

TEST_CASE("noise calibration") {
  const auto geometry = scene::hearing_aid_array();
  const std::vector<double> az = {-45.0, 45.0};
  scene::AcousticScene sc;
  scene::SyntheticIrConfig ir;
  ir.drr_db = 12.0;
  sc.irs = scene::synthesize_irs(geometry, az, ir, 2);
  sc.sources = {scene::synthesize_speech_like(5.0, 16000, 11), scene::synthesize_speech_like(5.0, 16000, 12)};
  sc.noise = scene::generate_decorrelated_noise(6, 80000, scene::NoiseShape::kSpeechShaped, 16000, 13);
  metrics::FwssnrConfig fw;

  const auto cal = scene::calibrate_noise_gain(sc, 0.5, 0, 0, fw);
  CHECK_FALSE(cal.at_boundary);
  const auto r = scene::render(sc, cal.gain);
  CHECK(std::abs(metrics::input_fwssnr(r, 0, 0, fw).value_db - 0.5) <= 0.1);

  const std::vector<std::size_t> refs = {0, 3};
  const auto avg = scene::calibrate_noise_gain_average(sc, 2.9, refs, fw);
  const auto ra = scene::render(sc, avg.gain);
  const double measured =
      0.5 * (metrics::input_fwssnr(ra, 0, 0, fw).value_db + metrics::input_fwssnr(ra, 1, 3, fw).value_db);
  CHECK(std::abs(measured - 2.9) <= 0.1);

  // Doubling the noise gain lowers the input fwSSNR.
  const auto r2 = scene::render(sc, 2 * cal.gain);
  CHECK(metrics::input_fwssnr(r2, 0, 0, fw).value_db < metrics::input_fwssnr(r, 0, 0, fw).value_db);

  sc.noise.setZero();
  CHECK_THROWS_AS(scene::calibrate_noise_gain(sc, 0.5, 0, 0, fw), InvalidArgument);
}

TEST_CASE("calibration to the noise-free level reports the boundary") {
  const auto geometry = scene::hearing_aid_array();
  const std::vector<double> az = {-45.0};
  scene::SyntheticIrConfig ir;
  ir.t60_s = 0.0;
  scene::AcousticScene sc;
  sc.irs = scene::synthesize_irs(geometry, az, ir, 3);
  sc.sources = {scene::synthesize_speech_like(3.0, 16000, 21)};
  sc.noise = scene::generate_decorrelated_noise(6, 48000, scene::NoiseShape::kWhite, 16000, 22);
  metrics::FwssnrConfig fw;
  const auto cal = scene::calibrate_noise_gain(sc, fw.clamp_hi_db, 0, 0, fw);
  CHECK(cal.at_boundary);
  CHECK(cal.gain == scene::kMinNoiseGain);
  CHECK_THROWS_AS(scene::calibrate_noise_gain(sc, 80.0, 0, 0, fw), Error);
}
