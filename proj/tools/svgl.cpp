#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "svgl/io.hpp"
#include "svgl/pipeline.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw svgl::ConfigError("unexpected argument '" + arg + "'");
    const std::string body = arg.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw svgl::ConfigError("override '" + arg + "' has no value");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-latent flow matching toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::string seed;
  std::string out;
  bool print_config = false;
  for (const auto& name : svgl::command_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->allow_extras();
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "global seed");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
    sub->footer("Any config key can be overridden as --section.key=value.");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    svgl::Json file_config;
    if (!config_path.empty()) {
      try {
        file_config = svgl::Json::parse(svgl::read_text_file(config_path));
      } catch (const svgl::Json::parse_error& e) {
        throw svgl::ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
      }
    }
    auto overrides = parse_overrides(sub->remaining());
    if (!seed.empty()) overrides.emplace_back("seed", seed);
    if (!out.empty()) overrides.emplace_back("out", out);
    const svgl::Json cfg = svgl::resolve_config(command, file_config, overrides);
    if (print_config) {
      std::cout << cfg.dump(2) << '\n';
      return 0;
    }
    const svgl::Json metrics = svgl::run_command(command, cfg);
    std::cout << metrics.dump(2) << '\n';
    return 0;
  } catch (const svgl::Error& e) {
    std::cerr << "svgl " << command << ": " << svgl::to_string(e.category()) << " error: " << e.what() << '\n';
    return svgl::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "svgl " << command << ": error: " << e.what() << '\n';
    return 1;
  }
}
