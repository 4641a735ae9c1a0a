#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const auto p = fs::temp_directory_path() / "cbf_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Run cbf(const std::string& args) {
  const auto err_file = work_dir() / "stderr.txt";
  const std::string cmd = std::string("\"") + CBF_CLI_PATH + "\" " + args + " 2>\"" + err_file.string() + "\"";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_text(err_file);
  return r;
}

fs::path write_config(const std::string& name, const Json& j) {
  const auto p = work_dir() / name;
  std::ofstream(p) << j.dump();
  return p;
}

Json tiny_config() {
  return Json::parse(R"({
    "seed": 11,
    "conditions": ["reverberant-noisy"],
    "scene": {"duration_s": 8, "mics_per_device": 1},
    "beamformer": {"iterations": 2},
    "aad": {"trial_s": 2, "channels": 8}
  })");
}

}  // namespace

TEST_CASE("full command chain") {
  const auto cfg = write_config("tiny.json", tiny_config()).string();
  const auto d = work_dir();
  const std::string scene = (d / "scene").string(), enh = (d / "enh").string(), dec = (d / "dec").string(),
                    ev = (d / "ev").string();

  const auto sim = cbf("simulate --config " + cfg + " --out " + scene);
  REQUIRE_MESSAGE(sim.code == 0, sim.err);
  CHECK(Json::parse(sim.out).at("status") == "ok");
  CHECK(fs::exists(d / "scene" / "reverberant-noisy" / "mix.wav"));
  CHECK(fs::exists(d / "scene" / "reverberant-noisy" / "scene.json"));

  const auto en = cbf("enhance --config " + cfg + " --scene " + scene + " --out " + enh);
  REQUIRE_MESSAGE(en.code == 0, en.err);
  CHECK(Json::parse(en.out).at("command") == "enhance");
  for (const char* f : {"speaker0.wav", "speaker1.wav", "masks.cbtf", "diagnostics.json"}) {
    CHECK(fs::exists(d / "enh" / "reverberant-noisy" / f));
  }

  const auto de = cbf("decode --config " + cfg + " --scene " + scene + " --enhanced " + enh + " --out " + dec);
  REQUIRE_MESSAGE(de.code == 0, de.err);
  CHECK(fs::exists(d / "dec" / "reverberant-noisy" / "decode.json"));

  const auto evr = cbf("evaluate --config " + cfg + " --scene " + scene + " --enhanced " + enh + " --decoded " +
                       dec + " --out " + ev);
  REQUIRE_MESSAGE(evr.code == 0, evr.err);
  const auto report = Json::parse(read_text(d / "ev" / "report.json"));
  REQUIRE(report.at("conditions").size() == 1);
  const auto& c = report.at("conditions")[0];
  CHECK(c.at("condition") == "reverberant-noisy");
  // Pause shortening makes the scene shorter than the configured duration.
  const auto samples = Json::parse(read_text(d / "scene" / "reverberant-noisy" / "scene.json")).at("samples").get<int>();
  CHECK(c.at("trials") == ((samples - 1) / 250 + 1) / 128);
  CHECK(std::isfinite(c.at("delta_fwssnr_oracle_db").get<double>()));
  CHECK(fs::exists(d / "ev" / "delta_fwssnr.tsv"));
  CHECK(fs::exists(d / "ev" / "accuracy.tsv"));

  // Same seed, same bytes.
  const std::string again = (d / "scene2").string();
  REQUIRE(cbf("simulate --config " + cfg + " --out " + again).code == 0);
  CHECK(read_text(d / "scene" / "reverberant-noisy" / "mix.wav") ==
        read_text(d / "scene2" / "reverberant-noisy" / "mix.wav"));
}

TEST_CASE("configuration errors produce a structured record") {
  auto j = tiny_config();
  j["beamformer"]["mehtod"] = "wLCMP";
  const auto cfg = write_config("bad.json", j).string();
  const auto r = cbf("simulate --config " + cfg + " --out " + (work_dir() / "bad").string());
  CHECK(r.code == 1);
  const auto e = Json::parse(r.err);
  CHECK(e.at("status") == "error");
  CHECK(e.at("command") == "simulate");
  CHECK(e.at("kind") == "config");
  CHECK(e.at("message").get<std::string>().find("mehtod") != std::string::npos);
  CHECK(r.out.empty());

  j = tiny_config();
  j.erase("seed");
  const auto unseeded = write_config("unseeded.json", j).string();
  const auto u = cbf("simulate --config " + unseeded + " --out " + (work_dir() / "u").string());
  CHECK(u.code == 1);
  CHECK(Json::parse(u.err).at("kind") == "config");
}

TEST_CASE("a missing scene directory is an I/O error") {
  const auto cfg = write_config("tiny2.json", tiny_config()).string();
  const auto r = cbf("enhance --config " + cfg + " --scene " + (work_dir() / "nowhere").string() + " --out " +
                     (work_dir() / "x").string());
  CHECK(r.code == 1);
  CHECK(Json::parse(r.err).at("kind") == "io");
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cbf("frobnicate").code == 2);
  const auto r = cbf("enhance --out " + (work_dir() / "y").string());
  CHECK(r.code == 2);
  CHECK(Json::parse(r.err).at("kind") == "usage");
}
