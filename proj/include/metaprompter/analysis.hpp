#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaprompter/meta_learner.hpp"

namespace mpr {

/// Mean attention over pool prompts per class, averaged per task over the
/// class's support samples and then over the tasks containing the class.
struct ClassAttention {
  std::vector<std::size_t> class_ids;
  std::vector<std::string> class_names;
  Tensor weights;                    // [classes x K]; NaN rows when absent
  std::vector<bool> present;         // false when the class was never sampled
  std::vector<std::size_t> tasks;    // number of tasks containing the class

  /// CSV: class,prompt_1..prompt_K; absent rows carry "absent" cells.
  std::string csv() const;
};

/// Attention of the task-adapted pool (train_steps inner steps) over
/// `episodes` episodes of `split`.
ClassAttention class_attention(const MetaParams& params, const TaskEnv& env,
                               const AdaptConfig& cfg, const EpisodeShape& shape,
                               std::size_t episodes, std::uint64_t seed,
                               Split split = Split::Train);

struct NearestToken {
  TokenId id = 0;
  std::string token;
  double score = 0.0;
};

/// Top-m vocabulary tokens per prompt, scored by the maximum cosine between
/// any prompt row and the token's input embedding. Reserved tokens are
/// skipped; ties keep the smaller token id first. ConfigError when m exceeds
/// the number of candidate tokens.
std::vector<std::vector<NearestToken>> nearest_tokens(const PromptPool& pool,
                                                      const EncoderParams& encoder,
                                                      const Vocabulary& vocab, std::size_t m);

std::string nearest_tokens_csv(const std::vector<std::vector<NearestToken>>& table);

/// Cosine between every prompt row theta_i^(j) and every topic embedding
/// (mean input embedding of a label-token set).
struct PromptTopicSimilarity {
  std::vector<std::string> row_labels;  // "(i,j)", 1-based
  std::vector<std::string> class_names;
  Tensor cosine;                        // [(K * L_p) x classes]

  std::string csv() const;
};

PromptTopicSimilarity prompt_topic_similarity(const PromptPool& pool, const EncoderParams& encoder,
                                              const std::vector<TokenSeq>& label_tokens,
                                              const std::vector<std::string>& class_names);

struct EmbeddingPoint {
  std::string kind;  // "sample" or "label"
  std::string class_name;
  double x = 0.0;
  double y = 0.0;
};

struct EmbeddingExport {
  /// Support samples, then query samples, then one label row per class.
  std::vector<EmbeddingPoint> points;
  /// Unprojected rows in the same order.
  Tensor raw;

  /// CSV: kind,class,x,y.
  std::string csv() const;
};

/// Adapts on the support set with eval_steps, then projects every [MASK]
/// embedding and every label embedding to 2-D with PCA.
EmbeddingExport export_embeddings(const MetaParams& params, const TaskEnv& env,
                                  const Episode& episode, const AdaptConfig& cfg);

/// Rows of `data` projected onto its top two principal components. Each
/// component's sign is fixed so its largest-magnitude entry is positive.
Tensor pca_2d(const Tensor& data);

}  // namespace mpr
