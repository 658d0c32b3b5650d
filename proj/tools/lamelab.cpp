// lamelab: runs one experiment from a JSON config, or reformats a report for plotting.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "lamelab/experiment.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw lamelab::ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run(const std::string& command, const Flags& flags, const CLI::App& sub) {
  lamelab::ExperimentConfig cfg;
  try {
    cfg = lamelab::config_from_text(read_file(flags.config), command);
  } catch (const lamelab::ConfigError& e) {
    std::cerr << "lamelab " << command << ": " << e.what() << '\n';
    return 2;
  }
  if (sub.count("--seed")) cfg.seed = flags.seed;
  if (sub.count("--out")) cfg.out = flags.out;
  const lamelab::RunResult res = lamelab::run_experiment(cfg, {flags.threads});
  if (res.status != 0) {
    std::cerr << "lamelab " << command << ": " << res.error_name << ": " << res.message << '\n';
  } else {
    std::cout << "wrote " << res.artifacts.size() << " artifacts and manifest.json to " << cfg.out << '\n';
  }
  return res.status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral lab for the parabolic Lame system with rough density"};
  app.set_version_flag("--version", std::string(LAMELAB_VERSION));
  app.require_subcommand(1);

  Flags flags;
  std::string command;
  for (const std::string& name : lamelab::experiment_commands()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", flags.config, "JSON config")->required();
    sub->add_option("--out", flags.out, "output directory (overrides the config)");
    sub->add_option("--seed", flags.seed, "random seed (overrides the config)");
    sub->add_option("--threads", flags.threads, "worker threads, 0 = all")->capture_default_str();
    sub->callback([&command, name] { command = name; });
  }

  std::string input, output;
  CLI::App* plot = app.add_subcommand("plotdata", "reformat a CSV report as gnuplot columns");
  plot->add_option("--input", input, "CSV report")->required();
  plot->add_option("--out", output, "output file (default stdout)");
  plot->callback([&command] { command = "plotdata"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (command == "plotdata") {
    std::string text;
    try {
      text = read_file(input);
    } catch (const lamelab::ConfigError& e) {
      std::cerr << "lamelab plotdata: " << e.what() << '\n';
      return 2;
    }
    const std::string body = lamelab::plotdata(text);
    if (output.empty()) {
      std::cout << body;
      return 0;
    }
    std::ofstream f(output, std::ios::binary);
    if (!f) {
      std::cerr << "lamelab plotdata: cannot write " << output << '\n';
      return 2;
    }
    f << body;
    return 0;
  }
  return run(command, flags, *app.get_subcommand(command));
}
