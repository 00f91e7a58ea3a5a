#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaprompter/corpus.hpp"
#include "metaprompter/encoder.hpp"
#include "metaprompter/meta_learner.hpp"
#include "metaprompter/prompt_pool.hpp"

namespace mpr {

enum class SweepAxis { PoolSize, PromptLen };

/// Every setting of an experiment. Sections map one-to-one onto the config
/// file's [section] headers.
struct RunConfig {
  std::string name = "default";
  std::uint64_t seed = 0;
  PoolMode mode = PoolMode::MetaPrompter;

  std::string corpus_path;  // empty: synthetic corpus from `synthetic`
  SyntheticCorpusConfig synthetic;

  EncoderConfig encoder;
  std::string encoder_path;  // empty: pretrain into the run directory
  PretrainConfig pretrain;   // encoder and anchors are filled from the above

  std::string anchors = "topic is";
  std::string probe_anchors = "topic is";

  PoolConfig pool;
  AdaptConfig adapt;
  bool tune_encoder = false;
  MetaConfig meta;

  std::size_t test_episodes = 1000;
  std::string test_checkpoint;  // empty: meta.ckpt in the run directory

  SweepAxis sweep_axis = SweepAxis::PoolSize;
  std::vector<std::size_t> sweep_values = {1, 2, 4, 8, 16, 32, 64};
  std::vector<std::uint64_t> sweep_seeds = {0, 1, 2};

  std::size_t attention_episodes = 200;
  std::size_t nearest_m = 10;
  std::size_t export_episode = 0;

  /// Cross-field checks; throws ConfigError.
  void validate() const;

  nlohmann::json to_json() const;
  /// Strict: unknown keys and mistyped values raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
};

/// Parses `key = value` lines grouped under `[section]` headers. Values are
/// integers, floats, booleans, quoted strings or bracketed lists of those.
/// `#` starts a comment. Throws ParseError with the line number.
nlohmann::json parse_config_text(const std::string& text);

/// Parses one override value with the same rules as the config file; bare
/// words are taken as strings.
nlohmann::json parse_config_value(const std::string& text);

/// Sets `path` ("pool.k") in `tree` to `value`. Unknown paths raise
/// ConfigError naming the key.
void apply_override(nlohmann::json& tree, const std::string& path, const nlohmann::json& value);

/// Defaults, overlaid with the file at `path` (if given) and the overrides.
/// A file starting with '{' is read as JSON: a run manifest (its "config"
/// member) or a bare config tree.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

}  // namespace mpr
