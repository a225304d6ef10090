// tso-lab <command> --config <path> [--key value ...]

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tso/tso.hpp"

namespace {

// Turns the leftover "--key value" / "--key=value" arguments into overrides.
std::map<std::string, std::string> collect_overrides(const std::vector<std::string>& rest) {
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& a = rest[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw tso::ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2);
    if (auto eq = key.find('='); eq != std::string::npos) {
      out[key.substr(0, eq)] = key.substr(eq + 1);
      continue;
    }
    if (i + 1 >= rest.size()) throw tso::ConfigError("override '--" + key + "' has no value");
    out[key] = rest[++i];
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular preference-optimization lab"};
  std::string command;
  std::string config_path;
  app.add_option("command", command, "synth | train | ablate_negsrc | ablate_minibatch | ablate_loss | stats | gradcheck")
      ->required();
  app.add_option("--config", config_path, "JSON configuration file")->required();
  app.allow_extras();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tso::exit_code_for(tso::ErrorCategory::Config);
  }

  try {
    const auto cmd = tso::parse_command(command);
    const auto cfg = tso::load_config(config_path, collect_overrides(app.remaining()));
    const auto report = tso::run_command(cfg, cmd);
    std::cout << "run directory: " << report.run_dir.string() << "\n";
    for (const auto& [name, ok] : report.flags) std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    return 0;
  } catch (const tso::Error& e) {
    std::cerr << "tso-lab: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "tso-lab: " << e.what() << "\n";
    return 1;
  }
}
