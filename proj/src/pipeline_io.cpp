#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <type_traits>

#include "cbf/pipeline.hpp"
#include "cbf/tensor_file.hpp"
#include "cbf/wav.hpp"

namespace cbf::pipeline {

namespace fs = std::filesystem;

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string path = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(path + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError(path + ": expected a nonnegative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError(path + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(path + ": expected a number");
    }
    try {
      dst = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), where_ + "." + key);
  }

  void mark(const char* key) { seen_.insert(key); }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
    }
  }

  const std::string& where() const { return where_; }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string substitute(const std::string& pattern, const std::string& condition) {
  std::string out = pattern;
  const std::string token = "{condition}";
  for (auto pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos + condition.size())) {
    out.replace(pos, token.size(), condition);
  }
  return out;
}

void read_scene_section(Section s, SceneConfig& c) {
  s.get("sample_rate", c.sample_rate);
  s.get("duration_s", c.duration_s);
  s.get("azimuths_deg", c.azimuths_deg);
  s.get("mics_per_device", c.mics_per_device);
  s.get("reference_mics", c.reference_mics);
  s.get("max_pause_s", c.max_pause_s);
  if (s.has("noise")) {
    std::string name;
    s.get("noise", name);
    c.noise = scene::parse_noise_shape(name);
  }
  if (s.has("ir")) {
    Section ir = s.child("ir");
    ir.get("t60_s", c.ir.t60_s);
    ir.get("drr_db", c.ir.drr_db);
    ir.get("predelay_ms", c.ir.predelay_ms);
    ir.get("head_shadow_db", c.ir.head_shadow_db);
    ir.get("base_delay_ms", c.ir.base_delay_ms);
    ir.get("speed_of_sound", c.ir.speed_of_sound);
    ir.get("sinc_half_width", c.ir.sinc_half_width);
    ir.finish();
  }
  s.finish();
  if (!(c.sample_rate > 0)) throw ConfigError(s.where() + ".sample_rate: must be positive");
  if (!(c.duration_s > 0)) throw ConfigError(s.where() + ".duration_s: must be positive");
  if (!(c.max_pause_s > 0)) throw ConfigError(s.where() + ".max_pause_s: must be positive");
  if (c.azimuths_deg.empty()) throw ConfigError(s.where() + ".azimuths_deg: at least one source required");
  if (c.mics_per_device < 1 || c.mics_per_device > 3) {
    throw ConfigError(s.where() + ".mics_per_device: must be 1, 2 or 3");
  }
  if (!c.reference_mics.empty() && c.reference_mics.size() != c.azimuths_deg.size()) {
    throw ConfigError(s.where() + ".reference_mics: one entry per source required");
  }
  for (auto m : c.reference_mics) {
    if (m >= 2 * c.mics_per_device) throw ConfigError(s.where() + ".reference_mics: index out of range");
  }
}

void read_stft_section(Section s, stft::StftConfig& c) {
  s.get("frame_length", c.frame_length);
  s.get("hop", c.hop);
  if (s.has("window")) {
    std::string name;
    s.get("window", name);
    c.window = stft::parse_window(name);
  }
  s.finish();
}

void read_beamformer_section(Section s, EnhanceConfig& e) {
  auto& c = e.beamformer;
  if (s.has("method")) {
    std::string name;
    s.get("method", name);
    e.method = parse_method(name);
  }
  s.get("delay", c.delay);
  s.get("iterations", c.iterations);
  s.get("delta", c.delta);
  s.get("lambda_floor", c.lambda_floor);
  s.get("ridge", c.ridge);
  s.get("strict", c.strict);
  s.get("refresh_retf", c.refresh_retf);
  if (s.has("bands")) {
    const Json& bands = s.raw("bands");
    if (!bands.is_array()) throw ConfigError(s.where() + ".bands: expected an array");
    c.bands.clear();
    for (std::size_t i = 0; i < bands.size(); ++i) {
      Section b(bands[i], s.where() + ".bands[" + std::to_string(i) + "]");
      beamform::FilterBand band;
      b.get("lo_hz", band.lo_hz);
      if (b.has("hi_hz") && !bands[i].at("hi_hz").is_null()) {
        b.get("hi_hz", band.hi_hz);
      } else {
        b.mark("hi_hz");
      }
      b.get("taps", band.taps);
      b.finish();
      c.bands.push_back(band);
    }
  }
  s.finish();
}

void read_aad_section(Section s, AadConfig& c) {
  s.get("channels", c.channels);
  s.get("snr_db", c.snr_db);
  s.get("trial_s", c.trial_s);
  s.get("eeg_path", c.eeg_path);
  s.get("attended", c.attended);
  if (s.has("envelope")) {
    Section e = s.child("envelope");
    e.get("cutoff_hz", c.envelope.cutoff_hz);
    e.get("rate_out", c.envelope.rate_out);
    e.finish();
  }
  if (s.has("decoder")) {
    Section d = s.child("decoder");
    d.get("lag_min_ms", c.decoder.lag_min_ms);
    d.get("lag_max_ms", c.decoder.lag_max_ms);
    d.get("ridge", c.decoder.ridge);
    d.get("zscore", c.decoder.zscore);
    d.finish();
  }
  if (s.has("synth")) {
    Section y = s.child("synth");
    y.get("leakage", c.synth.leakage);
    y.get("latency_ms", c.synth.latency_ms);
    y.get("kernel_width_ms", c.synth.kernel_width_ms);
    y.finish();
  }
  s.finish();
  c.decoder.rate = c.envelope.rate_out;
  if (c.channels < 1) throw ConfigError(s.where() + ".channels: at least one channel required");
  if (!std::isfinite(c.snr_db)) throw ConfigError(s.where() + ".snr_db: must be finite");
  if (!(c.trial_s > 0)) throw ConfigError(s.where() + ".trial_s: must be positive");
  if (!(c.envelope.cutoff_hz > 0) || !(c.envelope.rate_out > 2 * c.envelope.cutoff_hz)) {
    throw ConfigError(s.where() + ".envelope: need 0 < cutoff_hz < rate_out / 2");
  }
  if (!c.eeg_path.empty() && c.attended.empty()) {
    throw ConfigError(s.where() + ".attended: labels are required with eeg_path");
  }
  c.decoder.validate();
}

void read_metrics_section(Section s, metrics::FwssnrConfig& c) {
  s.get("frame_ms", c.frame_ms);
  s.get("overlap", c.overlap);
  s.get("bands", c.bands);
  s.get("low_hz", c.low_hz);
  s.get("clamp_lo_db", c.clamp_lo_db);
  s.get("clamp_hi_db", c.clamp_hi_db);
  s.get("weight_exponent", c.weight_exponent);
  s.get("activity_range_db", c.activity_range_db);
  s.finish();
  c.validate();
}

Json band_json(const beamform::FilterBand& b) {
  Json j{{"lo_hz", b.lo_hz}, {"taps", b.taps}};
  j["hi_hz"] = std::isfinite(b.hi_hz) ? Json(b.hi_hz) : Json(nullptr);
  return j;
}

template <typename Fn>
Json wrap(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

std::vector<double> row_of(const Signals& s, Eigen::Index r, std::size_t begin, std::size_t end) {
  const double* p = s.row(r).data();
  return {p + begin, p + end};
}

io::Tensor stack_components(const std::vector<Signals>& comps, Eigen::Index rows, Eigen::Index cols) {
  std::vector<double> values;
  values.reserve(comps.size() * static_cast<std::size_t>(rows * cols));
  for (const auto& c : comps) values.insert(values.end(), c.data(), c.data() + c.size());
  return io::make_real({comps.size(), static_cast<std::uint64_t>(rows), static_cast<std::uint64_t>(cols)},
                       std::move(values));
}

std::vector<Signals> unstack_components(const io::Tensor& t, const fs::path& path, Eigen::Index rows,
                                        Eigen::Index cols) {
  if (io::is_complex(t.dtype) || t.dims.size() != 3 || t.dims[1] != static_cast<std::uint64_t>(rows) ||
      t.dims[2] != static_cast<std::uint64_t>(cols)) {
    std::ostringstream os;
    os << path.string() << ": expected a real [sources, " << rows << ", " << cols << "] tensor";
    throw ParseError(os.str());
  }
  std::vector<Signals> out;
  const std::size_t plane = static_cast<std::size_t>(rows * cols);
  for (std::uint64_t i = 0; i < t.dims[0]; ++i) {
    Signals s(rows, cols);
    std::copy_n(t.real.begin() + static_cast<std::ptrdiff_t>(i * plane), plane, s.data());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> read_mono(const fs::path& path, double expected_rate) {
  const auto audio = io::read_wav(path);
  if (audio.samples.rows() != 1) throw ParseError(path.string() + ": expected a single-channel WAV");
  if (std::abs(audio.sample_rate - expected_rate) > 0.5) {
    throw ParseError(path.string() + ": sample rate does not match the scene");
  }
  return {audio.samples.data(), audio.samples.data() + audio.samples.cols()};
}

fs::path speaker_wav(const fs::path& dir, std::size_t i) { return dir / ("speaker" + std::to_string(i) + ".wav"); }

std::uint64_t condition_stream(const std::string& name) {
  const auto all = default_conditions();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].name == name) return 10 + i;
  }
  return 99;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const Json& j) {
  PipelineConfig c;
  Section root(j, "config");
  if (root.has("seed")) {
    std::uint64_t seed = 0;
    root.get("seed", seed);
    c.seed = seed;
  }
  root.get("conditions", c.conditions);
  if (c.conditions.empty()) throw ConfigError("config.conditions: at least one condition required");
  for (const auto& name : c.conditions) find_condition(name);
  if (root.has("scene")) read_scene_section(root.child("scene"), c.scene);
  if (root.has("stft")) read_stft_section(root.child("stft"), c.enhance.stft);
  if (root.has("beamformer")) read_beamformer_section(root.child("beamformer"), c.enhance);
  if (root.has("masks")) {
    Section m = root.child("masks");
    std::string source = "oracle";
    m.get("source", source);
    m.get("path", c.masks.path);
    m.finish();
    if (source == "oracle") {
      c.masks.oracle = true;
    } else if (source == "file") {
      c.masks.oracle = false;
      if (c.masks.path.empty()) throw ConfigError("config.masks.path: required when source is 'file'");
    } else {
      throw ConfigError("config.masks.source: unknown mask source '" + source + "' (expected oracle or file)");
    }
  }
  if (root.has("aad")) read_aad_section(root.child("aad"), c.aad);
  if (root.has("metrics")) read_metrics_section(root.child("metrics"), c.metrics);
  root.finish();

  c.enhance.stft.sample_rate = c.scene.sample_rate;
  c.enhance.stft.validate();
  c.enhance.beamformer.validate();
  c.aad.decoder.rate = c.aad.envelope.rate_out;
  return c;
}

Json PipelineConfig::to_json() const {
  Json j;
  if (seed) j["seed"] = *seed;
  j["conditions"] = conditions;
  const auto& s = scene;
  j["scene"] = {{"sample_rate", s.sample_rate},
                {"duration_s", s.duration_s},
                {"azimuths_deg", s.azimuths_deg},
                {"mics_per_device", s.mics_per_device},
                {"reference_mics", s.reference_mics},
                {"max_pause_s", s.max_pause_s},
                {"noise", s.noise == scene::NoiseShape::kWhite ? "white" : "speech-shaped"},
                {"ir",
                 {{"t60_s", s.ir.t60_s},
                  {"drr_db", s.ir.drr_db},
                  {"predelay_ms", s.ir.predelay_ms},
                  {"head_shadow_db", s.ir.head_shadow_db},
                  {"base_delay_ms", s.ir.base_delay_ms},
                  {"speed_of_sound", s.ir.speed_of_sound},
                  {"sinc_half_width", s.ir.sinc_half_width}}}};
  j["stft"] = {{"frame_length", enhance.stft.frame_length},
               {"hop", enhance.stft.hop},
               {"window", stft::to_string(enhance.stft.window)}};
  const auto& b = enhance.beamformer;
  Json bands = Json::array();
  for (const auto& band : b.bands) bands.push_back(band_json(band));
  j["beamformer"] = {{"method", to_string(enhance.method)},
                     {"delay", b.delay},
                     {"bands", bands},
                     {"iterations", b.iterations},
                     {"delta", b.delta},
                     {"lambda_floor", b.lambda_floor},
                     {"ridge", b.ridge},
                     {"strict", b.strict},
                     {"refresh_retf", b.refresh_retf}};
  j["masks"] = {{"source", masks.oracle ? "oracle" : "file"}, {"path", masks.path}};
  j["aad"] = {{"channels", aad.channels},
              {"snr_db", aad.snr_db},
              {"trial_s", aad.trial_s},
              {"eeg_path", aad.eeg_path},
              {"attended", aad.attended},
              {"envelope", {{"cutoff_hz", aad.envelope.cutoff_hz}, {"rate_out", aad.envelope.rate_out}}},
              {"decoder",
               {{"lag_min_ms", aad.decoder.lag_min_ms},
                {"lag_max_ms", aad.decoder.lag_max_ms},
                {"ridge", aad.decoder.ridge},
                {"zscore", aad.decoder.zscore}}},
              {"synth",
               {{"leakage", aad.synth.leakage},
                {"latency_ms", aad.synth.latency_ms},
                {"kernel_width_ms", aad.synth.kernel_width_ms}}}};
  j["metrics"] = {{"frame_ms", metrics.frame_ms},
                  {"overlap", metrics.overlap},
                  {"bands", metrics.bands},
                  {"low_hz", metrics.low_hz},
                  {"clamp_lo_db", metrics.clamp_lo_db},
                  {"clamp_hi_db", metrics.clamp_hi_db},
                  {"weight_exponent", metrics.weight_exponent},
                  {"activity_range_db", metrics.activity_range_db}};
  return j;
}

std::uint64_t PipelineConfig::require_seed() const {
  if (!seed) throw ConfigError("config.seed: a seed is required (set it in the config or pass --seed)");
  return *seed;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

PipelineConfig load_config(const fs::path& path) {
  const Json j = read_json(path);
  PipelineConfig cfg;
  try {
    cfg = PipelineConfig::from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
  };
  resolve(cfg.masks.path);
  resolve(cfg.aad.eeg_path);
  for (const auto& cond : cfg.conditions) {
    if (!cfg.masks.oracle) {
      const auto p = substitute(cfg.masks.path, cond);
      if (!fs::exists(p)) throw ConfigError(path.string() + ": mask file " + p + " does not exist");
    }
    if (!cfg.aad.eeg_path.empty()) {
      const auto p = substitute(cfg.aad.eeg_path, cond);
      if (!fs::exists(p)) throw ConfigError(path.string() + ": EEG file " + p + " does not exist");
    }
  }
  return cfg;
}

void write_scene(const SimulatedScene& s, const fs::path& dir, std::uint64_t seed) {
  ensure_dir(dir);
  const auto& r = s.rendered;
  const auto m = r.mics.rows();
  const auto n = r.mics.cols();
  io::write_wav(dir / "mix.wav", r.mics, r.sample_rate);
  io::write_tensor(dir / "reverberant.cbtf", stack_components(r.reverberant, m, n));
  io::write_tensor(dir / "anechoic.cbtf", stack_components(r.anechoic, m, n));
  io::write_tensor(dir / "noise.cbtf",
                   io::make_real({static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(n)},
                                 {r.noise.data(), r.noise.data() + r.noise.size()}));
  Json meta{{"condition", s.condition.name},
            {"reverberant", s.condition.reverberant},
            {"noisy", s.condition.noisy},
            {"nominal_fwssnr_db", s.condition.nominal_fwssnr_db},
            {"calibrate", s.condition.calibrate},
            {"sample_rate", r.sample_rate},
            {"mics", m},
            {"samples", n},
            {"sources", r.num_sources()},
            {"azimuths_deg", s.azimuths_deg},
            {"reference_mics", s.reference_mics},
            {"input_fwssnr_db", s.input_fwssnr_db},
            {"seed", seed}};
  if (s.calibration) {
    meta["calibration"] = {{"gain", s.calibration->gain},
                           {"achieved_db", s.calibration->achieved_db},
                           {"at_boundary", s.calibration->at_boundary},
                           {"evaluations", s.calibration->evaluations}};
  }
  write_json(dir / "scene.json", meta);
}

SimulatedScene read_scene(const fs::path& dir) {
  const Json meta = read_json(dir / "scene.json");
  SimulatedScene s;
  wrap((dir / "scene.json").string(), [&] {
    s.condition.name = meta.at("condition").get<std::string>();
    s.condition.reverberant = meta.at("reverberant").get<bool>();
    s.condition.noisy = meta.at("noisy").get<bool>();
    s.condition.nominal_fwssnr_db = meta.at("nominal_fwssnr_db").get<double>();
    s.condition.calibrate = meta.at("calibrate").get<bool>();
    s.azimuths_deg = meta.at("azimuths_deg").get<std::vector<double>>();
    s.reference_mics = meta.at("reference_mics").get<std::vector<std::size_t>>();
    s.input_fwssnr_db = meta.at("input_fwssnr_db").get<double>();
    if (meta.contains("calibration")) {
      const auto& c = meta.at("calibration");
      s.calibration = scene::Calibration{c.at("gain").get<double>(), c.at("achieved_db").get<double>(),
                                         c.at("at_boundary").get<bool>(), c.at("evaluations").get<int>()};
    }
    return Json();
  });
  const auto audio = io::read_wav(dir / "mix.wav");
  auto& r = s.rendered;
  r.sample_rate = audio.sample_rate;
  r.mics = audio.samples;
  const auto m = r.mics.rows();
  const auto n = r.mics.cols();
  r.reverberant = unstack_components(io::read_tensor(dir / "reverberant.cbtf"), dir / "reverberant.cbtf", m, n);
  r.anechoic = unstack_components(io::read_tensor(dir / "anechoic.cbtf"), dir / "anechoic.cbtf", m, n);
  const auto noise = io::read_tensor(dir / "noise.cbtf");
  if (io::is_complex(noise.dtype) || noise.dims != std::vector<std::uint64_t>{static_cast<std::uint64_t>(m),
                                                                               static_cast<std::uint64_t>(n)}) {
    throw ParseError((dir / "noise.cbtf").string() + ": expected a real [mics, samples] tensor");
  }
  r.noise.resize(m, n);
  std::copy(noise.real.begin(), noise.real.end(), r.noise.data());
  if (r.reverberant.size() != r.anechoic.size() || r.reverberant.size() != s.reference_mics.size()) {
    throw ParseError(dir.string() + ": source counts disagree between tensors and scene.json");
  }
  for (auto ref : s.reference_mics) {
    if (ref >= static_cast<std::size_t>(m)) throw ParseError(dir.string() + ": reference microphone out of range");
  }
  return s;
}

Json cmd_simulate(const PipelineConfig& cfg, const fs::path& out) {
  const auto seed = cfg.require_seed();
  Json summary = Json::array();
  for (const auto& name : cfg.conditions) {
    const auto cond = find_condition(name);
    const auto s = simulate_condition(cfg.scene, cond, cfg.metrics, derive_seed(seed, condition_stream(name)));
    write_scene(s, out / name, seed);
    Json rec{{"condition", name},
             {"input_fwssnr_db", s.input_fwssnr_db},
             {"nominal_fwssnr_db", cond.nominal_fwssnr_db},
             {"calibrated", s.calibration.has_value()},
             {"samples", s.rendered.length()},
             {"path", (out / name).string()}};
    summary.push_back(rec);
  }
  return summary;
}

Json cmd_enhance(const PipelineConfig& cfg, const fs::path& scene_root, const fs::path& out) {
  Json summary = Json::array();
  for (const auto& name : cfg.conditions) {
    const auto s = read_scene(scene_root / name);
    auto stft_cfg = cfg.enhance.stft;
    stft_cfg.sample_rate = s.rendered.sample_rate;
    EnhanceConfig ecfg = cfg.enhance;
    ecfg.stft = stft_cfg;

    masks::MaskSet mask_set;
    std::size_t clamped = 0;
    if (cfg.masks.oracle) {
      mask_set = oracle_masks(s.rendered, stft_cfg);
    } else {
      auto loaded = masks::load_masks(substitute(cfg.masks.path, name));
      mask_set = std::move(loaded.masks);
      clamped = loaded.clamped;
    }

    const fs::path dir = out / name;
    ensure_dir(dir);
    std::vector<SpeakerOutput> outputs;
    try {
      outputs = enhance(s.rendered, mask_set, s.reference_mics, ecfg);
    } catch (const Error& e) {
      // Keep the error category, add the condition.
      std::string msg = "condition " + name + ": " + e.what();
      if (dynamic_cast<const RankDeficientError*>(&e)) {
        throw RankDeficientError(msg, static_cast<const RankDeficientError&>(e).condition());
      }
      if (dynamic_cast<const SingularMatrixError*>(&e)) throw SingularMatrixError(msg);
      if (dynamic_cast<const DegenerateMaskError*>(&e)) throw DegenerateMaskError(msg);
      if (dynamic_cast<const InvalidArgument*>(&e)) throw InvalidArgument(msg);
      throw;
    }

    masks::store_masks(mask_set, dir / "masks.cbtf");
    Json speakers = Json::array();
    double worst_residual = 0;
    bool finite = true;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const auto& o = outputs[i];
      Signals row(1, static_cast<Eigen::Index>(o.signal.size()));
      std::copy(o.signal.begin(), o.signal.end(), row.data());
      finite = finite && row.allFinite();
      io::write_wav(speaker_wav(dir, i), row, s.rendered.sample_rate);

      const auto& d = o.diagnostics;
      worst_residual = std::max(worst_residual, d.max_constraint_residual());
      std::size_t iterations = 0;
      for (const auto& b : d.bins) iterations = std::max(iterations, b.objective.size());
      std::vector<double> objective(iterations, 0.0);
      std::size_t counted = 0;
      Json failures = Json::array();
      for (std::size_t f = 0; f < d.bins.size(); ++f) {
        const auto& b = d.bins[f];
        if (b.fallback) {
          failures.push_back({{"bin", f}, {"iteration", b.failed_iteration}, {"error", b.failure}});
        } else if (b.objective.size() == iterations) {
          for (std::size_t t = 0; t < iterations; ++t) objective[t] += b.objective[t];
          ++counted;
        }
      }
      if (counted > 0) {
        for (auto& v : objective) v /= static_cast<double>(counted);
      }
      speakers.push_back({{"speaker", i},
                          {"reference_mic", s.reference_mics[i]},
                          {"fallback_bins", d.fallback_bins()},
                          {"max_constraint_residual", d.max_constraint_residual()},
                          {"mean_objective", objective},
                          {"failures", failures}});
    }
    Json diag{{"condition", name},
              {"method", to_string(cfg.enhance.method)},
              {"mask_source", cfg.masks.oracle ? "oracle" : "file"},
              {"masks_clamped", clamped},
              {"all_finite", finite},
              {"max_constraint_residual", worst_residual},
              {"speakers", speakers}};
    write_json(dir / "diagnostics.json", diag);
    summary.push_back({{"condition", name},
                       {"method", to_string(cfg.enhance.method)},
                       {"max_constraint_residual", worst_residual},
                       {"all_finite", finite},
                       {"path", dir.string()}});
  }
  return summary;
}

Json cmd_decode(const PipelineConfig& cfg, const fs::path& scene_root, const fs::path& enhanced_root,
                const fs::path& out) {
  const auto& a = cfg.aad;
  Json summary = Json::array();
  for (const auto& name : cfg.conditions) {
    const auto s = read_scene(scene_root / name);
    const auto& r = s.rendered;
    const std::size_t speakers = r.num_sources();
    if (speakers < 2) throw ConfigError("decode: at least two speakers are needed for attention decoding");
    const double fs_audio = r.sample_rate;

    std::vector<aad::Envelope> clean, enhanced;
    for (std::size_t i = 0; i < speakers; ++i) {
      const auto ref = static_cast<Eigen::Index>(s.reference_mics[i]);
      clean.push_back(aad::extract_envelope(row_of(r.anechoic[i], ref, 0, r.length()), fs_audio, a.envelope));
      enhanced.push_back(
          aad::extract_envelope(read_mono(speaker_wav(enhanced_root / name, i), fs_audio), fs_audio, a.envelope));
    }
    const std::size_t env_len = std::min(clean.front().size(), enhanced.front().size());
    const auto ranges = aad::trial_ranges(env_len, a.envelope.rate_out, a.trial_s);

    auto segment = [](const aad::Envelope& e, std::pair<std::size_t, std::size_t> range) {
      aad::Envelope out;
      out.rate = e.rate;
      out.tag = e.tag;
      out.samples.assign(e.samples.begin() + static_cast<std::ptrdiff_t>(range.first),
                         e.samples.begin() + static_cast<std::ptrdiff_t>(range.second));
      return out;
    };

    std::vector<RMatrix> eeg;
    std::vector<std::size_t> attended;
    std::size_t trial_count = ranges.size();
    if (!a.eeg_path.empty()) {
      const auto path = substitute(a.eeg_path, name);
      const auto t = io::read_tensor(path);
      if (io::is_complex(t.dtype) || t.dims.size() != 3) {
        throw ParseError(path + ": EEG tensor must be real [trials, channels, samples]");
      }
      trial_count = std::min<std::size_t>(t.dims[0], ranges.size());
      if (a.attended.size() < trial_count) throw ConfigError("decode: fewer attended labels than EEG trials");
      const auto c = static_cast<Eigen::Index>(t.dims[1]);
      const auto l = static_cast<Eigen::Index>(t.dims[2]);
      for (std::size_t k = 0; k < trial_count; ++k) {
        if (static_cast<std::size_t>(l) > ranges[k].second - ranges[k].first) {
          throw ParseError(path + ": EEG trials are longer than the audio trials");
        }
        RMatrix m(c, l);
        for (Eigen::Index ch = 0; ch < c; ++ch)
          for (Eigen::Index n = 0; n < l; ++n)
            m(ch, n) = t.real[(k * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)) *
                                  static_cast<std::size_t>(l) +
                              static_cast<std::size_t>(n)];
        if (a.attended[k] >= speakers) throw ConfigError("decode: attended label out of range");
        eeg.push_back(std::move(m));
        attended.push_back(a.attended[k]);
      }
    } else {
      const auto seed = derive_seed(cfg.require_seed(), 1000 + condition_stream(name));
      const auto listener = derive_seed(cfg.require_seed(), 999);
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, speakers - 1);
      for (std::size_t k = 0; k < trial_count; ++k) {
        const std::size_t att = pick(rng);
        const std::size_t other = (att + 1) % speakers;
        eeg.push_back(aad::synthesize_eeg(segment(clean[att], ranges[k]), segment(clean[other], ranges[k]),
                                          a.channels, a.snr_db, listener, derive_seed(seed, k), a.synth));
        attended.push_back(att);
      }
    }
    if (trial_count < 2) {
      throw ConfigError("decode: leave-one-trial-out decoding needs at least two trials (scene too short for trial_s)");
    }

    Json records = Json::array();
    std::size_t correct = 0;
    for (std::size_t k = 0; k < trial_count; ++k) {
      std::vector<RMatrix> train_eeg;
      std::vector<aad::Envelope> train_env;
      for (std::size_t t = 0; t < trial_count; ++t) {
        if (t == k) continue;
        train_eeg.push_back(eeg[t]);
        auto env = segment(clean[attended[t]], ranges[t]);
        env.samples.resize(static_cast<std::size_t>(eeg[t].cols()));
        train_env.push_back(std::move(env));
      }
      const auto decoder = aad::train_decoder(train_eeg, train_env, a.decoder);
      const auto recon = aad::reconstruct_envelope(eeg[k], decoder);
      std::vector<aad::Envelope> candidates;
      for (std::size_t i = 0; i < speakers; ++i) candidates.push_back(segment(enhanced[i], ranges[k]));
      const auto sel = aad::select_speaker(candidates, recon);
      Json rho = Json::array();
      for (double v : sel.correlations) rho.push_back(std::isfinite(v) ? Json(v) : Json(nullptr));
      const bool ok = sel.index == attended[k];
      correct += ok ? 1 : 0;
      records.push_back({{"trial", k},
                         {"begin_s", static_cast<double>(ranges[k].first) / a.envelope.rate_out},
                         {"end_s", static_cast<double>(ranges[k].second) / a.envelope.rate_out},
                         {"attended", attended[k]},
                         {"selected", sel.index},
                         {"correlations", rho},
                         {"tie", sel.tie},
                         {"excluded", sel.excluded}});
    }
    const fs::path dir = out / name;
    ensure_dir(dir);
    write_json(dir / "decode.json", {{"condition", name},
                                     {"trial_s", a.trial_s},
                                     {"envelope_rate", a.envelope.rate_out},
                                     {"eeg", a.eeg_path.empty() ? "synthetic" : "file"},
                                     {"trials", records}});
    summary.push_back({{"condition", name},
                       {"trials", trial_count},
                       {"envelope_accuracy", 100.0 * static_cast<double>(correct) / static_cast<double>(trial_count)},
                       {"path", (dir / "decode.json").string()}});
  }
  return summary;
}

Json cmd_evaluate(const PipelineConfig& cfg, const fs::path& scene_root, const fs::path& enhanced_root,
                  const fs::path& decoded_root, const fs::path& out) {
  Json conditions = Json::array();
  std::ostringstream delta_tsv, acc_tsv;
  delta_tsv << "condition\ttrials\tinput_fwssnr_db\tdelta_oracle_db\tdelta_estimated_db\n";
  acc_tsv << "condition\ttrials\toracle_pct\testimated_pct\tchance_bound_pct\treported_chance_bound_pct\n";
  double input_sum = 0;
  for (const auto& name : cfg.conditions) {
    const auto s = read_scene(scene_root / name);
    const auto& r = s.rendered;
    const std::size_t speakers = r.num_sources();
    std::vector<std::vector<double>> outputs;
    for (std::size_t i = 0; i < speakers; ++i) {
      auto sig = read_mono(speaker_wav(enhanced_root / name, i), r.sample_rate);
      if (sig.size() != r.length()) {
        throw ParseError(speaker_wav(enhanced_root / name, i).string() + ": length does not match the scene");
      }
      outputs.push_back(std::move(sig));
    }
    const fs::path decode_path = decoded_root / name / "decode.json";
    const Json decoded = read_json(decode_path);
    const Json* trials = nullptr;
    wrap(decode_path.string(), [&] {
      trials = &decoded.at("trials");
      return Json();
    });

    Json records = Json::array();
    std::vector<metrics::DecodeOutcome> oracle_outcomes, estimated_outcomes;
    double in_acc = 0, delta_oracle = 0, delta_est = 0;
    for (const auto& t : *trials) {
      std::size_t att = 0, sel = 0;
      double begin_s = 0, end_s = 0;
      wrap(decode_path.string(), [&] {
        att = t.at("attended").get<std::size_t>();
        sel = t.at("selected").get<std::size_t>();
        begin_s = t.at("begin_s").get<double>();
        end_s = t.at("end_s").get<double>();
        return Json();
      });
      if (att >= speakers || sel >= speakers) throw ParseError(decode_path.string() + ": speaker index out of range");
      const auto b = static_cast<std::size_t>(std::llround(begin_s * r.sample_rate));
      const auto e = std::min(r.length(), static_cast<std::size_t>(std::llround(end_s * r.sample_rate)));
      if (e <= b) throw ParseError(decode_path.string() + ": empty trial range");
      const auto ref_mic = static_cast<Eigen::Index>(s.reference_mics[att]);
      const auto reference = row_of(r.anechoic[att], ref_mic, b, e);

      double input_db = -std::numeric_limits<double>::infinity();
      for (Eigen::Index m = 0; m < r.mics.rows(); ++m) {
        input_db = std::max(input_db, metrics::fwssnr(row_of(r.mics, m, b, e), reference, r.sample_rate, cfg.metrics));
      }
      std::vector<std::vector<double>> segs;
      std::vector<double> out_db;
      for (const auto& o : outputs) {
        segs.emplace_back(o.begin() + static_cast<std::ptrdiff_t>(b), o.begin() + static_cast<std::ptrdiff_t>(e));
        out_db.push_back(metrics::fwssnr(segs.back(), reference, r.sample_rate, cfg.metrics));
      }
      const auto best = static_cast<std::size_t>(std::max_element(out_db.begin(), out_db.end()) - out_db.begin());
      auto runner_up = [&](std::size_t chosen) {
        std::size_t other = chosen == 0 ? 1 : 0;
        for (std::size_t i = 0; i < speakers; ++i) {
          if (i != chosen && out_db[i] > out_db[other]) other = i;
        }
        return other;
      };
      const auto oracle = metrics::decode_correct(segs[best], segs[runner_up(best)], reference, r.sample_rate,
                                                  cfg.metrics);
      const auto estimated = metrics::decode_correct(segs[sel], segs[runner_up(sel)], reference, r.sample_rate,
                                                     cfg.metrics);
      oracle_outcomes.push_back(oracle);
      estimated_outcomes.push_back(estimated);
      in_acc += input_db;
      delta_oracle += out_db[best] - input_db;
      delta_est += out_db[sel] - input_db;
      records.push_back({{"trial", t.value("trial", records.size())},
                         {"attended", att},
                         {"selected", sel},
                         {"oracle_selected", best},
                         {"input_fwssnr_db", input_db},
                         {"output_fwssnr_db", out_db},
                         {"delta_oracle_db", out_db[best] - input_db},
                         {"delta_estimated_db", out_db[sel] - input_db},
                         {"oracle_correct", oracle.correct},
                         {"estimated_correct", estimated.correct},
                         {"tie", estimated.tie}});
    }
    const std::size_t n = oracle_outcomes.size();
    if (n == 0) throw ParseError(decode_path.string() + ": no trials");
    const double dn = static_cast<double>(n);
    const double bound = metrics::chance_upper_bound(n, 0.05);
    Json reported = nullptr;
    if (n == 40) reported = metrics::kReportedChanceBound40;
    if (n == 20) reported = metrics::kReportedChanceBound20;
    const double oracle_pct = metrics::aad_accuracy(oracle_outcomes);
    const double est_pct = metrics::aad_accuracy(estimated_outcomes);
    input_sum += in_acc / dn;
    conditions.push_back({{"condition", name},
                          {"trials", n},
                          {"input_fwssnr_db", in_acc / dn},
                          {"delta_fwssnr_oracle_db", delta_oracle / dn},
                          {"delta_fwssnr_estimated_db", delta_est / dn},
                          {"accuracy_oracle_pct", oracle_pct},
                          {"accuracy_estimated_pct", est_pct},
                          {"chance_bound_pct", bound},
                          {"reported_chance_bound_pct", reported},
                          {"records", records}});
    delta_tsv << name << '\t' << n << '\t' << in_acc / dn << '\t' << delta_oracle / dn << '\t' << delta_est / dn
              << '\n';
    acc_tsv << name << '\t' << n << '\t' << oracle_pct << '\t' << est_pct << '\t' << bound << '\t'
            << (reported.is_null() ? std::string("-") : reported.dump()) << '\n';
  }
  ensure_dir(out);
  Json report{{"method", to_string(cfg.enhance.method)},
              {"mean_input_fwssnr_db", input_sum / static_cast<double>(cfg.conditions.size())},
              {"conditions", conditions}};
  write_json(out / "report.json", report);
  write_text(out / "delta_fwssnr.tsv", delta_tsv.str());
  write_text(out / "accuracy.tsv", acc_tsv.str());
  return report;
}

}  // namespace cbf::pipeline
