#include <CLI11.hpp>
#include <iostream>
#include <map>

#include "metaprompter/errors.hpp"
#include "metaprompter/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kNumericFailure = 2;

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& arg : extras) {
    const auto eq = arg.find('=');
    if (arg.rfind("--", 0) != 0 || eq == std::string::npos || eq == 2) {
      throw mpr::ConfigError("unknown flag '" + arg + "' (overrides are --section.key=value)");
    }
    out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
  return out;
}

const std::map<std::string, std::string> kDescriptions = {
    {"gen-corpus", "Write the synthetic topic corpus as JSONL"},
    {"pretrain", "Pretrain the masked-LM encoder"},
    {"meta-train", "Meta-train the prompt pool and label embeddings"},
    {"meta-test", "Evaluate a meta-trained checkpoint on test episodes"},
    {"sweep", "Meta-train and test over pool size or prompt length"},
    {"analyze", "Export attention, nearest-token, similarity and embedding tables"}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned prompt pools on a toy masked LM"};
  app.require_subcommand(1);
  std::string config_path;
  std::string run_dir;
  for (const std::string& name : mpr::command_names()) {
    CLI::App* sub = app.add_subcommand(name, kDescriptions.count(name) ? kDescriptions.at(name) : "");
    sub->add_option("--config", config_path, "Config file (key = value with [section] headers)");
    sub->add_option("--run-dir", run_dir, "Run directory (default: $METAPROMPTER_RUN_ROOT/<run.name>)");
    sub->allow_extras();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    std::optional<std::filesystem::path> path;
    if (!config_path.empty()) path = config_path;
    const mpr::RunConfig cfg = mpr::load_run_config(path, parse_overrides(sub->remaining()));
    const std::filesystem::path dir = run_dir.empty() ? mpr::run_directory(cfg) : std::filesystem::path(run_dir);
    std::filesystem::create_directories(dir);
    const mpr::CommandResult result = mpr::run_command(sub->get_name(), cfg, dir, std::cerr);
    std::cout << result.summary.dump() << "\n";
    return kOk;
  } catch (const mpr::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const mpr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  }
}
