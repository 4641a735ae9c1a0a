#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbf/aad.hpp"
#include "cbf/beamform.hpp"
#include "cbf/masks.hpp"
#include "cbf/metrics.hpp"
#include "cbf/scene.hpp"
#include "cbf/stft.hpp"

namespace cbf::pipeline {

using Json = nlohmann::json;

// Independent child seed for a numbered random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

enum class Method { kWmpdr, kWlcmp, kMpdr, kLcmp, kMvdr, kLcmv };
Method parse_method(const std::string& name);
std::string to_string(Method m);

struct ConditionSpec {
  std::string name;
  bool reverberant = true;
  bool noisy = true;
  double nominal_fwssnr_db = 0;  // published average input fwSSNR
  bool calibrate = true;         // false when there is no noise to scale
};

// anechoic-noisy (2.9 dB), reverberant (3.5 dB, noise free), reverberant-noisy (0.5 dB).
std::vector<ConditionSpec> default_conditions();
ConditionSpec find_condition(const std::string& name);

struct SceneConfig {
  double sample_rate = 16000.0;
  double duration_s = 60.0;
  std::vector<double> azimuths_deg = {-45.0, 45.0};
  scene::SyntheticIrConfig ir = {.drr_db = 12.0};
  scene::NoiseShape noise = scene::NoiseShape::kSpeechShaped;
  double max_pause_s = 0.5;
  std::vector<std::size_t> reference_mics;  // empty: first mic on the source's side
  std::size_t mics_per_device = 3;  // front, middle, rear; 1-3
};

struct SimulatedScene {
  ConditionSpec condition;
  scene::RenderedScene rendered;
  std::vector<double> azimuths_deg;
  std::vector<std::size_t> reference_mics;
  std::optional<scene::Calibration> calibration;
  double input_fwssnr_db = 0;  // averaged over speakers
};

// Left-device mics come first, then the right device.
std::vector<std::size_t> default_reference_mics(std::span<const double> azimuths_deg, std::size_t mics_per_device);

SimulatedScene simulate_condition(const SceneConfig& cfg, const ConditionSpec& condition,
                                  const metrics::FwssnrConfig& fw, std::uint64_t seed);

// Magnitude IRMs per microphone (reverberant speaker images, noise slot last),
// aligned to mic 0 and averaged.
masks::MaskSet oracle_masks(const scene::RenderedScene& scene, const stft::StftConfig& cfg);

struct EnhanceConfig {
  stft::StftConfig stft;
  beamform::ConvBeamformerConfig beamformer;
  Method method = Method::kWlcmp;
};

struct SpeakerOutput {
  std::vector<double> signal;
  std::vector<beamform::BinFilter> filters;
  beamform::Diagnostics diagnostics;
};

// One beamformer per speaker, target i and interferers j != i, referenced
// to reference_mics[i].
std::vector<SpeakerOutput> enhance(const scene::RenderedScene& scene, const masks::MaskSet& masks,
                                   std::span<const std::size_t> reference_mics, const EnhanceConfig& cfg);

// Time-domain output of stored filters applied to one M x N component.
std::vector<double> filter_component(std::span<const beamform::BinFilter> filters, const Signals& component,
                                     const stft::StftConfig& cfg);

struct AadConfig {
  std::size_t channels = 16;
  double snr_db = 20.0;
  double trial_s = 30.0;
  aad::EnvelopeConfig envelope;
  aad::DecoderConfig decoder;
  aad::EegSynthConfig synth;
  std::string eeg_path;                 // optional CBTF [trials, C, L]; "{condition}" is substituted
  std::vector<std::size_t> attended;    // labels for eeg_path trials
};

struct MaskSource {
  bool oracle = true;
  std::string path;  // CBTF [I + 1, K, F]; "{condition}" is substituted
};

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> conditions = {"anechoic-noisy", "reverberant", "reverberant-noisy"};
  SceneConfig scene;
  EnhanceConfig enhance;
  MaskSource masks;
  AadConfig aad;
  metrics::FwssnrConfig metrics;

  // Unknown keys, bad enumerations and invalid values raise ConfigError.
  static PipelineConfig from_json(const Json& j);
  Json to_json() const;
  std::uint64_t require_seed() const;
};

PipelineConfig load_config(const std::filesystem::path& path);

// Scene directory layout per condition:
//   mix.wav, reverberant.cbtf [I, M, N], anechoic.cbtf [I, M, N],
//   noise.cbtf [M, N], scene.json
void write_scene(const SimulatedScene& s, const std::filesystem::path& dir, std::uint64_t seed);
SimulatedScene read_scene(const std::filesystem::path& dir);

// Each command handles every configured condition and returns a summary.
// simulate: <out>/<condition>/ scene files.
Json cmd_simulate(const PipelineConfig& cfg, const std::filesystem::path& out);
// enhance: <out>/<condition>/ speaker<i>.wav, masks.cbtf, diagnostics.json
Json cmd_enhance(const PipelineConfig& cfg, const std::filesystem::path& scene_root,
                 const std::filesystem::path& out);
// decode: <out>/<condition>/decode.json, one record per trial
Json cmd_decode(const PipelineConfig& cfg, const std::filesystem::path& scene_root,
                const std::filesystem::path& enhanced_root, const std::filesystem::path& out);
// evaluate: <out>/report.json plus delta_fwssnr.tsv and accuracy.tsv
Json cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& scene_root,
                  const std::filesystem::path& enhanced_root, const std::filesystem::path& decoded_root,
                  const std::filesystem::path& out);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace cbf::pipeline
