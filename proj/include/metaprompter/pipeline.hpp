#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaprompter/config.hpp"

namespace mpr {

/// Environment variable naming the directory that holds run directories.
inline constexpr const char* kRunRootEnv = "METAPROMPTER_RUN_ROOT";

/// $METAPROMPTER_RUN_ROOT (default "runs") / config name.
std::filesystem::path run_directory(const RunConfig& cfg);

/// Template words to token ids; ConfigError on out-of-vocabulary words.
TokenSeq anchor_ids(const Vocabulary& vocab, const std::string& words);

/// Trainable parameter count of the configured method.
std::size_t configured_param_count(const RunConfig& cfg, std::size_t encoder_params);

nlohmann::json make_manifest(const RunConfig& cfg, const std::string& command,
                             const std::string& corpus_hash, std::size_t encoder_params);

/// Corpus from corpus.path, else <dir>/corpus.jsonl, else a freshly generated
/// synthetic corpus (saved to <dir>/corpus.jsonl).
Corpus obtain_corpus(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);

/// Encoder from encoder.checkpoint, else <dir>/encoder.ckpt, else pretrained
/// on `corpus` and saved there.
EncoderParams obtain_encoder(const RunConfig& cfg, const Corpus& corpus,
                             const std::filesystem::path& dir, std::ostream& log);

struct CommandResult {
  std::vector<std::filesystem::path> artifacts;
  nlohmann::json summary;
};

CommandResult cmd_gen_corpus(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);
CommandResult cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);
CommandResult cmd_meta_train(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);
/// Throws ValidationError naming the checkpoint when it does not exist.
CommandResult cmd_meta_test(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);
CommandResult cmd_sweep(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);
CommandResult cmd_analyze(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);

/// Dispatches by subcommand name; ConfigError on an unknown name.
CommandResult run_command(const std::string& command, const RunConfig& cfg,
                          const std::filesystem::path& dir, std::ostream& log);

const std::vector<std::string>& command_names();

}  // namespace mpr
