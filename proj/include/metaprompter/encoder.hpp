#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metaprompter/checkpoint.hpp"
#include "metaprompter/corpus.hpp"
#include "metaprompter/tape.hpp"
#include "metaprompter/vocabulary.hpp"

namespace mpr {

/// Shape of the toy masked-LM. Input and output widths are the same `dim`.
struct EncoderConfig {
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff_dim = 64;
  std::size_t max_len = 64;
  double embedding_init_std = 0.1;

  void validate() const;
};

struct EncoderBlock {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor ff_in, ff_in_bias, ff_out, ff_out_bias;
  Tensor ln2_gain, ln2_bias;
};

/// Parameters of the post-LN transformer encoder with a tied output head.
struct EncoderParams {
  EncoderConfig config;
  std::size_t vocab_size = 0;
  TokenId cls_id = 0, sep_id = 0, mask_id = 0;
  Tensor token_embedding;     // [V x dim]
  Tensor position_embedding;  // [max_len x dim]
  Tensor embed_ln_gain, embed_ln_bias;
  std::vector<EncoderBlock> blocks;
  /// When set, no parameter may become a gradient leaf.
  bool frozen = false;

  /// Random initialization; special-token ids come from `vocab`.
  static EncoderParams init(const EncoderConfig& config, const Vocabulary& vocab,
                            std::uint64_t seed);

  /// Every tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::size_t parameter_count() const;

  Checkpoint to_checkpoint() const;
  static EncoderParams from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");
  void append_to(Checkpoint& ckpt, const std::string& prefix) const;

  friend bool operator==(const EncoderParams& a, const EncoderParams& b);
};

void save_encoder(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_encoder(const std::filesystem::path& path);

struct BlockVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias;
  Var ff_in, ff_in_bias, ff_out, ff_out_bias, ln2_gain, ln2_bias;
};

/// Encoder parameters placed on a tape.
struct EncoderVars {
  const EncoderParams* params = nullptr;
  Var token_embedding, position_embedding, embed_ln_gain, embed_ln_bias;
  std::vector<BlockVars> blocks;
  /// All variables in EncoderParams::named() order.
  std::vector<Var> all;
};

/// Places `params` on `tape`: by reference as constants, or as fresh leaves
/// when `trainable`. Requesting leaves of frozen parameters is a ContractError.
EncoderVars bind(Tape& tape, const EncoderParams& params, bool trainable = false);

/// Template T(x; theta) = ([CLS], E(x), theta, E(anchors), E([MASK]), [SEP]).
struct WrappedInput {
  Var rows;
  std::size_t length = 0;
  std::size_t prompt_offset = 0;
  std::size_t prompt_rows = 0;
  std::size_t mask_position = 0;
  std::size_t input_tokens = 0;  // after truncation
};

/// Builds the wrapped sequence. Prompt rows are inserted verbatim. `x` is cut
/// from its tail so the sequence fits in max_len.
WrappedInput wrap(const EncoderVars& enc, const TokenSeq& x, std::optional<Var> prompt,
                  const TokenSeq& anchors);

struct EncodeOutput {
  Var hidden;      // [length x dim]
  Var h_mask;      // [dim]
  Var vocab_dist;  // [V], only when requested
};

/// Transformer forward pass. A non-finite activation raises NumericError
/// naming the block.
EncodeOutput encode(const EncoderVars& enc, const WrappedInput& input, bool with_vocab = true);

/// softmax(h E^T) over the vocabulary with the tied embedding table.
Var vocab_distribution(const EncoderVars& enc, Var h);

/// h_[MASK] of wrap(x, no prompt, probe_anchors) under frozen parameters.
Tensor query_embedding(const EncoderParams& params, const TokenSeq& x,
                       const TokenSeq& probe_anchors);

struct PretrainConfig {
  EncoderConfig encoder;
  std::size_t steps = 1500;
  std::size_t batch = 16;
  double lr = 2e-3;
  double mask_prob = 0.15;
  /// Up to this many document tokens are repeated in the prompt slot so the
  /// encoder sees sequences of every wrapped length.
  std::size_t max_fill = 8;
  std::uint64_t seed = 0;
  TokenSeq anchors;
};

struct PretrainResult {
  EncoderParams params;
  std::vector<double> losses;  // mean masked-token NLL per step
};

/// Masked-token pretraining on all corpus documents (labels unused). Each
/// sequence is a wrapped document with 15% of its positions masked; the
/// trailing [MASK] predicts a random token of the document. Returns frozen
/// parameters. Throws ConfigError when the vocabulary has fewer than two
/// non-reserved tokens.
PretrainResult pretrain_encoder(const Corpus& corpus, const PretrainConfig& config);

}  // namespace mpr
