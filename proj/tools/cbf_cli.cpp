#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cbf/pipeline.hpp"

namespace fs = std::filesystem;
using cbf::pipeline::Json;

namespace {

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
  Json record{{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
  std::cerr << record.dump() << std::endl;
  return code;
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string scene;
  std::string enhanced;
  std::string decoded;
};

fs::path require(const std::string& value, const char* flag) {
  if (value.empty()) throw cbf::ConfigError(std::string("missing required option ") + flag);
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-based convolutional beamforming and attention decoding pipeline"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON configuration file")->required();
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_option("--seed", opt.seed, "overrides the configured seed");
  };
  auto* simulate = app.add_subcommand("simulate", "render the configured acoustic conditions");
  add_common(simulate);
  auto* enhance = app.add_subcommand("enhance", "run one beamformer per speaker");
  add_common(enhance);
  enhance->add_option("--scene", opt.scene, "directory written by simulate")->required();
  auto* decode = app.add_subcommand("decode", "decode attention per trial");
  add_common(decode);
  decode->add_option("--scene", opt.scene, "directory written by simulate")->required();
  decode->add_option("--enhanced", opt.enhanced, "directory written by enhance")->required();
  auto* evaluate = app.add_subcommand("evaluate", "compute fwSSNR improvements and decoding accuracy");
  add_common(evaluate);
  evaluate->add_option("--scene", opt.scene, "directory written by simulate")->required();
  evaluate->add_option("--enhanced", opt.enhanced, "directory written by enhance")->required();
  evaluate->add_option("--decoded", opt.decoded, "directory written by decode")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("", "usage", e.what(), 2);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto cfg = cbf::pipeline::load_config(opt.config);
    if (opt.seed) cfg.seed = opt.seed;
    const fs::path out = require(opt.out, "--out");
    fs::create_directories(out);
    Json summary;
    if (command == "simulate") {
      summary = cbf::pipeline::cmd_simulate(cfg, out);
    } else if (command == "enhance") {
      summary = cbf::pipeline::cmd_enhance(cfg, require(opt.scene, "--scene"), out);
    } else if (command == "decode") {
      summary = cbf::pipeline::cmd_decode(cfg, require(opt.scene, "--scene"), require(opt.enhanced, "--enhanced"),
                                          out);
    } else {
      summary = cbf::pipeline::cmd_evaluate(cfg, require(opt.scene, "--scene"),
                                            require(opt.enhanced, "--enhanced"),
                                            require(opt.decoded, "--decoded"), out);
      summary.erase("conditions");
      summary["report"] = (out / "report.json").string();
    }
    std::cout << Json{{"status", "ok"}, {"command", command}, {"result", summary}}.dump(2) << std::endl;
    return 0;
  } catch (const cbf::Error& e) {
    return fail(command, e.kind(), e.what(), 1);
  } catch (const fs::filesystem_error& e) {
    return fail(command, "io", e.what(), 1);
  } catch (const std::exception& e) {
    return fail(command, "internal", e.what(), 1);
  }
}
