#include "cbf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cbf::pipeline {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> row_vector(const Signals& s, Eigen::Index row) {
  return {s.row(row).data(), s.row(row).data() + s.cols()};
}

Signals single_row(const Signals& s, Eigen::Index row) { return s.row(row); }

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return derive_seed(seed, stream); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix(splitmix(seed) ^ splitmix(stream + 1));
}

Method parse_method(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "wmpdr") return Method::kWmpdr;
  if (lower == "wlcmp") return Method::kWlcmp;
  if (lower == "mpdr") return Method::kMpdr;
  if (lower == "lcmp") return Method::kLcmp;
  if (lower == "mvdr") return Method::kMvdr;
  if (lower == "lcmv") return Method::kLcmv;
  throw ConfigError("unknown beamformer '" + name + "' (expected wMPDR, wLCMP, MPDR, LCMP, MVDR or LCMV)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kWmpdr: return "wMPDR";
    case Method::kWlcmp: return "wLCMP";
    case Method::kMpdr: return "MPDR";
    case Method::kLcmp: return "LCMP";
    case Method::kMvdr: return "MVDR";
    case Method::kLcmv: return "LCMV";
  }
  return "?";
}

std::vector<ConditionSpec> default_conditions() {
  return {
      {"anechoic-noisy", false, true, 2.9, true},
      {"reverberant", true, false, 3.5, false},
      {"reverberant-noisy", true, true, 0.5, true},
  };
}

ConditionSpec find_condition(const std::string& name) {
  for (const auto& c : default_conditions()) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown condition '" + name + "' (expected anechoic-noisy, reverberant or reverberant-noisy)");
}

std::vector<std::size_t> default_reference_mics(std::span<const double> azimuths_deg, std::size_t mics_per_device) {
  std::vector<std::size_t> refs;
  for (double az : azimuths_deg) refs.push_back(az < 0 ? 0 : mics_per_device);
  return refs;
}

SimulatedScene simulate_condition(const SceneConfig& cfg, const ConditionSpec& condition,
                                  const metrics::FwssnrConfig& fw, std::uint64_t seed) {
  if (cfg.mics_per_device < 1 || cfg.mics_per_device > 3) throw ConfigError("scene: mics_per_device must be 1, 2 or 3");
  if (cfg.azimuths_deg.empty()) throw ConfigError("scene: at least one source azimuth required");
  if (!(cfg.duration_s > 0)) throw ConfigError("scene: duration must be positive");
  const auto full = scene::hearing_aid_array();
  scene::ArrayGeometry geometry;
  for (std::size_t dev = 0; dev < 2; ++dev) {
    for (std::size_t j = 0; j < cfg.mics_per_device; ++j) geometry.positions.push_back(full.positions[dev * 3 + j]);
  }
  SimulatedScene out;
  out.condition = condition;
  out.azimuths_deg = cfg.azimuths_deg;
  out.reference_mics = cfg.reference_mics.empty() ? default_reference_mics(cfg.azimuths_deg, cfg.mics_per_device)
                                                  : cfg.reference_mics;
  if (out.reference_mics.size() != cfg.azimuths_deg.size()) {
    throw ConfigError("scene: one reference microphone per source required");
  }
  for (auto m : out.reference_mics) {
    if (m >= geometry.size()) throw ConfigError("scene: reference microphone out of range");
  }

  scene::SyntheticIrConfig ir = cfg.ir;
  ir.sample_rate = cfg.sample_rate;
  if (!condition.reverberant) ir.t60_s = 0.0;

  scene::AcousticScene sc;
  sc.sample_rate = cfg.sample_rate;
  sc.noise_sample_rate = cfg.sample_rate;
  sc.irs = scene::synthesize_irs(geometry, cfg.azimuths_deg, ir, derive(seed, 1));
  std::size_t longest = 0;
  for (std::size_t i = 0; i < cfg.azimuths_deg.size(); ++i) {
    const auto speech = scene::synthesize_speech_like(cfg.duration_s, cfg.sample_rate, derive(seed, 100 + i));
    sc.sources.push_back(scene::shorten_pauses(speech, cfg.sample_rate, cfg.max_pause_s));
    longest = std::max(longest, sc.sources.back().size());
  }
  double gain = 0.0;
  if (condition.noisy) {
    sc.noise = scene::generate_decorrelated_noise(geometry.size(), longest, cfg.noise, cfg.sample_rate, derive(seed, 2));
    if (condition.calibrate) {
      out.calibration = scene::calibrate_noise_gain_average(sc, condition.nominal_fwssnr_db, out.reference_mics, fw);
      gain = out.calibration->gain;
    } else {
      gain = 1.0;
    }
  }
  out.rendered = scene::render(sc, gain);
  double acc = 0;
  for (std::size_t i = 0; i < out.rendered.num_sources(); ++i) {
    acc += metrics::input_fwssnr(out.rendered, i, out.reference_mics[i], fw).value_db;
  }
  out.input_fwssnr_db = acc / static_cast<double>(out.rendered.num_sources());
  return out;
}

masks::MaskSet oracle_masks(const scene::RenderedScene& scene, const stft::StftConfig& cfg) {
  std::vector<masks::MaskSet> per_mic;
  for (std::size_t m = 0; m < scene.num_mics(); ++m) {
    const auto row = static_cast<Eigen::Index>(m);
    std::vector<stft::MultichannelSpectrogram> comps;
    for (const auto& x : scene.reverberant) comps.push_back(stft::analyze_padded(single_row(x, row), cfg));
    const auto noise = stft::analyze_padded(single_row(scene.noise, row), cfg);
    per_mic.push_back(masks::oracle_irm(comps, noise, 0));
  }
  const auto aligned = masks::align_masks(per_mic, 0);
  return masks::average_masks(aligned.masks);
}

namespace {

// Per-bin anechoic RTF of one source, referenced to `ref`.
std::vector<CVector> anechoic_rtf(const Signals& anechoic, std::size_t ref, const stft::StftConfig& cfg) {
  const auto spec = stft::analyze_padded(anechoic, cfg);
  std::vector<CVector> out(spec.bins());
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    const auto x = spec.bin(f);
    const auto r = x.row(static_cast<Eigen::Index>(ref));
    const double power = r.squaredNorm();
    if (power > 0) {
      out[f] = x * r.adjoint() / power;
    } else {
      out[f] = CVector::Unit(x.rows(), static_cast<Eigen::Index>(ref));
    }
  }
  return out;
}

}  // namespace

std::vector<SpeakerOutput> enhance(const scene::RenderedScene& scene, const masks::MaskSet& mask_set,
                                   std::span<const std::size_t> reference_mics, const EnhanceConfig& cfg) {
  cfg.stft.validate();
  cfg.beamformer.validate();
  const std::size_t speakers = scene.num_sources();
  if (reference_mics.size() != speakers) throw InvalidArgument("enhance: one reference microphone per speaker required");
  if (mask_set.speakers() != speakers) {
    std::ostringstream os;
    os << "enhance: mask set has " << mask_set.speakers() << " speaker planes, scene has " << speakers << " sources";
    throw InvalidArgument(os.str());
  }
  const auto spec = stft::analyze_padded(scene.mics, cfg.stft);
  if (mask_set.frames() != spec.frames() || mask_set.bins() != spec.bins()) {
    std::ostringstream os;
    os << "enhance: masks are " << mask_set.frames() << " x " << mask_set.bins() << ", STFT gives " << spec.frames()
       << " x " << spec.bins();
    throw InvalidArgument(os.str());
  }

  std::vector<linalg::HermitianMatrix> noise_cov;
  if (cfg.method == Method::kMvdr || cfg.method == Method::kLcmv) {
    const auto m = static_cast<Eigen::Index>(scene.num_mics());
    if (scene.noise.isZero(0.0)) {
      noise_cov.assign(spec.bins(), linalg::HermitianMatrix::identity(m));
    } else {
      const auto nspec = stft::analyze_padded(scene.noise, cfg.stft);
      for (std::size_t f = 0; f < nspec.bins(); ++f) {
        const auto v = nspec.bin(f);
        noise_cov.emplace_back(CMatrix(v * v.adjoint() / static_cast<double>(v.cols())));
      }
    }
  }

  std::vector<SpeakerOutput> outputs;
  for (std::size_t i = 0; i < speakers; ++i) {
    beamform::ConvBeamformerConfig bf = cfg.beamformer;
    bf.reference_mic = reference_mics[i];
    std::vector<masks::MaskPlane> interferers;
    for (std::size_t j = 0; j < speakers; ++j) {
      if (j != i) interferers.push_back(mask_set[j]);
    }
    beamform::BeamformerOutput result;
    switch (cfg.method) {
      case Method::kWmpdr:
        result = beamform::run_conv_beamformer(spec, cfg.stft, mask_set[i], {}, bf, beamform::Mode::kWmpdr);
        break;
      case Method::kWlcmp:
        result = beamform::run_conv_beamformer(spec, cfg.stft, mask_set[i], interferers, bf, beamform::Mode::kWlcmp);
        break;
      case Method::kMpdr:
        result = beamform::mpdr(spec, mask_set[i], bf);
        break;
      case Method::kLcmp:
        result = beamform::lcmp(spec, mask_set[i], interferers, bf.delta, bf);
        break;
      case Method::kMvdr:
      case Method::kLcmv: {
        std::vector<std::vector<CVector>> rtfs;
        rtfs.push_back(anechoic_rtf(scene.anechoic[i], bf.reference_mic, cfg.stft));
        if (cfg.method == Method::kLcmv) {
          for (std::size_t j = 0; j < speakers; ++j) {
            if (j != i) rtfs.push_back(anechoic_rtf(scene.anechoic[j], bf.reference_mic, cfg.stft));
          }
        }
        std::vector<CMatrix> steering(spec.bins());
        for (std::size_t f = 0; f < spec.bins(); ++f) {
          steering[f].resize(static_cast<Eigen::Index>(scene.num_mics()), static_cast<Eigen::Index>(rtfs.size()));
          for (std::size_t c = 0; c < rtfs.size(); ++c) steering[f].col(static_cast<Eigen::Index>(c)) = rtfs[c][f];
        }
        std::optional<double> delta;
        if (cfg.method == Method::kLcmv) delta = bf.delta;
        result = beamform::mvdr_lcmv_supplied(spec, steering, noise_cov, delta, bf);
        break;
      }
    }
    SpeakerOutput out;
    out.signal = row_vector(stft::synthesize_padded(result.z, cfg.stft, scene.length()), 0);
    out.filters = std::move(result.filters);
    out.diagnostics = std::move(result.diagnostics);
    outputs.push_back(std::move(out));
  }
  return outputs;
}

std::vector<double> filter_component(std::span<const beamform::BinFilter> filters, const Signals& component,
                                     const stft::StftConfig& cfg) {
  const auto spec = stft::analyze_padded(component, cfg);
  const auto z = beamform::apply_filters(filters, spec);
  return row_vector(stft::synthesize_padded(z, cfg, static_cast<std::size_t>(component.cols())), 0);
}

}  // namespace cbf::pipeline
