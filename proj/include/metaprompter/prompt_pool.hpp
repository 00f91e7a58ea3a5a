#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaprompter/checkpoint.hpp"
#include "metaprompter/encoder.hpp"
#include "metaprompter/tape.hpp"

namespace mpr {

enum class PoolMode {
  /// K (key, value) prompts composed per instance by attention; frozen encoder.
  MetaPrompter,
  /// One meta-initialized prompt shared by every input (K = 1, no attention).
  MetaPrompting,
};

std::string to_string(PoolMode mode);
PoolMode parse_pool_mode(const std::string& name);

struct PoolConfig {
  PoolMode mode = PoolMode::MetaPrompter;
  std::size_t pool_size = 8;   // K
  std::size_t prompt_len = 8;  // L_p
  double key_init_std = 0.02;
  /// Divide attention logits by sqrt(d_o); off gives the unscaled softmax(K q).
  bool scaled_attention = true;
};

/// Keys [K x d_o] and values [K x (L_p * d_i)]; row i of `values` is the
/// row-major flattening of prompt theta_i [L_p x d_i].
struct PromptPool {
  PoolMode mode = PoolMode::MetaPrompter;
  std::size_t pool_size = 0;
  std::size_t prompt_len = 0;
  std::size_t dim = 0;
  bool scaled_attention = true;
  Tensor keys;
  Tensor values;

  /// theta_i as an [L_p x d_i] matrix.
  Tensor value(std::size_t i) const;
  /// Trainable tensors for this mode (MetaPrompting has no keys).
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;

  Checkpoint to_checkpoint() const;
  static PromptPool from_checkpoint(const Checkpoint& ckpt);

  friend bool operator==(const PromptPool& a, const PromptPool& b);
};

/// Values copy the input embedding of label tokens drawn uniformly with
/// replacement from `label_tokens`, one per prompt row; keys are N(0, std^2).
/// MetaPrompting forces K = 1. Throws ConfigError on an empty token pool or a
/// zero K / L_p.
PromptPool init_pool(const PoolConfig& config, const EncoderParams& encoder,
                     const TokenSeq& label_tokens, std::uint64_t seed);

void save_pool(const PromptPool& pool, const std::filesystem::path& path);
PromptPool load_pool(const std::filesystem::path& path);

struct PoolVars {
  const PromptPool* pool = nullptr;
  Var keys;
  Var values;
  /// Variables matching PromptPool::params().
  std::vector<Var> trainable;
};

/// Places a pool on the tape, as leaves when `trainable`.
PoolVars bind(Tape& tape, const PromptPool& pool, bool trainable);

/// softmax(K q / sqrt(d_o)) (or unscaled) -> [K].
Var attention_weights(const PoolVars& pool, Var query);
/// sum_i a_i theta_i -> [L_p x d_i].
Var compose_prompt(const PoolVars& pool, Var weights);
/// Prompt for an input with query embedding `query`. MetaPrompting returns
/// theta_1 and ignores the query.
Var instance_prompt(const PoolVars& pool, const Tensor& query);
/// Same, computing the query with the frozen encoder and probe anchors.
Var instance_prompt(const PoolVars& pool, const TokenSeq& x, const EncoderParams& encoder,
                    const TokenSeq& probe_anchors);

Tensor attention_weights(const PromptPool& pool, const Tensor& query);
Tensor compose_prompt(const PromptPool& pool, const Tensor& weights);

struct ParamCountInput {
  std::size_t pool_size = 8;
  std::size_t prompt_len = 8;
  std::size_t input_dim = 768;
  std::size_t output_dim = 768;
  /// Size of the tuned MLM (MetaPrompting only).
  std::size_t encoder_params = 0;
};

/// MetaPrompter: K (d_o + L_p d_i). MetaPrompting: d_phi + L_p d_i.
std::size_t param_count(PoolMode mode, const ParamCountInput& input);

}  // namespace mpr
