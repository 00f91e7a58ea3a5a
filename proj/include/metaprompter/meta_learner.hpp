#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metaprompter/adam.hpp"
#include "metaprompter/corpus.hpp"
#include "metaprompter/encoder.hpp"
#include "metaprompter/episode.hpp"
#include "metaprompter/prompt_pool.hpp"
#include "metaprompter/verbalizer.hpp"

namespace mpr {

/// RNG streams (see derive_seed) of the train, validation and test episodes.
inline constexpr std::uint64_t kTrainEpisodeStream = 100;
inline constexpr std::uint64_t kValidEpisodeStream = 200;
inline constexpr std::uint64_t kTestEpisodeStream = 300;

/// Base-learner settings.
struct AdaptConfig {
  double alpha = 0.1;
  std::size_t train_steps = 5;
  std::size_t eval_steps = 15;
  double lambda = 0.5;
  double rho = 10.0;
  Similarity similarity = Similarity::Cosine;
  /// Loss is -log of the combined score renormalized over the episode labels;
  /// off uses the raw combined score.
  bool renormalize_loss = true;
  /// Query predictions reuse the label embeddings of the last inner iteration
  /// (computed before the final update) instead of recomputing them with the
  /// adapted pool.
  bool literal_label_timing = false;

  void validate() const;
};

/// Meta-learner settings.
struct MetaConfig {
  double lr = 1e-3;
  std::size_t iterations = 3000;
  std::size_t val_period = 50;
  std::size_t val_episodes = 200;
  std::uint64_t seed = 0;
  EpisodeShape shape;
  /// Plain SGD with step `lr` when false.
  bool use_adam = true;

  void validate() const;
};

/// Template anchors for the task input and for the query function.
struct TemplateConfig {
  TokenSeq anchors;
  TokenSeq probe_anchors;
};

/// The meta-parameters: the prompt pool and, for MetaPrompting with a tuned
/// MLM, a trainable encoder copy.
struct MetaParams {
  PromptPool pool;
  std::optional<EncoderParams> tuned_encoder;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  Checkpoint to_checkpoint() const;
  static MetaParams from_checkpoint(const Checkpoint& ckpt);

  friend bool operator==(const MetaParams& a, const MetaParams& b);
};

void save_meta_params(const MetaParams& params, const std::filesystem::path& path);
MetaParams load_meta_params(const std::filesystem::path& path);

/// Pool initialized from the label tokens of the meta-train classes. With
/// `tune_encoder` (MetaPrompting only) the encoder is copied and unfrozen.
MetaParams init_meta_params(const PoolConfig& config, const EncoderParams& encoder,
                            const Corpus& corpus, std::uint64_t seed, bool tune_encoder = false);

/// Read-only context shared by all episodes of a run: corpus, frozen encoder
/// and template. Caches query embeddings per document; not thread-safe.
class TaskEnv {
 public:
  TaskEnv(const Corpus& corpus, const EncoderParams& encoder, TemplateConfig tmpl);

  const Corpus& corpus() const noexcept { return *corpus_; }
  const EncoderParams& encoder() const noexcept { return *encoder_; }
  const TemplateConfig& templ() const noexcept { return template_; }
  /// q_x for a corpus document.
  const Tensor& query(std::size_t doc) const;

 private:
  const Corpus* corpus_;
  const EncoderParams* encoder_;
  TemplateConfig template_;
  mutable std::vector<std::optional<Tensor>> query_cache_;
};

/// Differentiable evaluation of one episode on a tape.
struct EpisodeForward {
  Var loss;                          // summed NLL over the targets
  Var label_embeddings;              // [N x d]; invalid when lambda == 0
  std::vector<Var> scores;           // combined per-label scores per target
  std::vector<Var> mask_embeddings;  // h_[MASK] per target
};

/// Which samples the loss is taken over.
enum class Targets { Support, Query };

/// Builds the episode loss with `params` bound as leaves (`trainable`) or
/// constants. Label embeddings come from the support set under the same
/// parameters unless `fixed_label_embeddings` is given.
EpisodeForward episode_forward(Tape& tape, const MetaParams& params, const TaskEnv& env,
                               const Episode& episode, Targets targets, const AdaptConfig& cfg,
                               bool trainable, std::vector<Var>* leaves = nullptr,
                               const Tensor* fixed_label_embeddings = nullptr);

/// Same, on a pool and encoder already placed on one tape.
EpisodeForward episode_forward(const PoolVars& pool, const EncoderVars& encoder, const TaskEnv& env,
                               const Episode& episode, Targets targets, const AdaptConfig& cfg,
                               const Tensor* fixed_label_embeddings = nullptr);

/// Loss value only.
double episode_loss(const MetaParams& params, const TaskEnv& env, const Episode& episode,
                    Targets targets, const AdaptConfig& cfg);

/// Gradient of the episode loss w.r.t. params.tensors(), plus the loss.
std::pair<std::vector<Tensor>, double> episode_gradient(
    const MetaParams& params, const TaskEnv& env, const Episode& episode, Targets targets,
    const AdaptConfig& cfg, const Tensor* fixed_label_embeddings = nullptr);

struct AdaptResult {
  MetaParams adapted;
  /// Support loss at the start of each inner step.
  std::vector<double> support_losses;
  /// Label embeddings computed in the last inner step.
  Tensor last_label_embeddings;
};

/// `steps` plain gradient-descent steps of size alpha on the support loss,
/// starting from a copy of `meta`. Throws MissingClassError when a label has
/// no support sample and NumericError (with the step index) on a non-finite
/// loss.
AdaptResult inner_adapt(const MetaParams& meta, const TaskEnv& env, const Episode& episode,
                        const AdaptConfig& cfg, std::size_t steps);

struct OuterResult {
  double query_loss = 0.0;
  /// First-order meta-gradient: d(query loss)/d(adapted params).
  std::vector<Tensor> gradient;
};

/// Query-loss gradient at the adapted parameters (no path back through the
/// inner loop).
OuterResult outer_gradient(const AdaptResult& adapted, const TaskEnv& env, const Episode& episode,
                           const AdaptConfig& cfg);

/// Applies the first-order meta-gradient to `meta` with Adam, or with plain
/// SGD when `adam` is null.
OuterResult outer_step(MetaParams& meta, const AdaptResult& adapted, const TaskEnv& env,
                       const Episode& episode, const AdaptConfig& cfg, AdamState* adam, double lr);

/// Predicted local label per query sample after adapting on the support set.
std::vector<std::size_t> predict_episode(const MetaParams& meta, const TaskEnv& env,
                                         const Episode& episode, const AdaptConfig& cfg,
                                         std::size_t steps);

double episode_accuracy(const MetaParams& meta, const TaskEnv& env, const Episode& episode,
                        const AdaptConfig& cfg, std::size_t steps);

struct MetricsRow {
  std::size_t iteration = 0;
  double support_loss = 0.0;
  double query_loss = 0.0;
  std::optional<double> val_accuracy;
};

struct MetaTrainResult {
  MetaParams best;
  MetaParams last;
  std::size_t best_iteration = 0;
  double best_val_accuracy = 0.0;
  std::vector<MetricsRow> log;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// First-order MAML over train-split episodes (one per iteration) with a
/// validation pass every `val_period` iterations and after the last one.
/// Keeps the best-validation parameters; ties go to the earlier iteration.
MetaTrainResult meta_train(const MetaParams& init, const TaskEnv& env, const AdaptConfig& adapt,
                           const MetaConfig& meta, const ProgressFn& progress = {});

/// Mean accuracy over a fixed, seed-determined set of episodes.
double evaluate_split(const MetaParams& params, const TaskEnv& env, Split split,
                      const EpisodeShape& shape, std::size_t episodes, std::uint64_t seed,
                      const AdaptConfig& cfg, std::size_t steps);

struct MetaTestResult {
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;
};

/// Adapts on each test episode's support set with eval_steps and scores the
/// query set. Throws ValidationError if a test class also appears in the
/// train or valid split.
MetaTestResult meta_test(const MetaParams& params, const TaskEnv& env, const EpisodeShape& shape,
                         std::size_t episodes, std::uint64_t seed, const AdaptConfig& cfg);

/// Episode `index` of the fixed meta-test stream for `seed`.
Episode test_episode(const Corpus& corpus, const EpisodeShape& shape, std::uint64_t seed,
                     std::size_t index);

double mean_of(std::span<const double> values);
/// Sample standard deviation (0 for fewer than two values).
double std_of(std::span<const double> values);

/// Metrics log as CSV: iteration,support_loss,query_loss,val_accuracy.
std::string metrics_csv(std::span<const MetricsRow> rows);

struct VerbalizerComparison {
  double repverb_accuracy = 0.0;
  double warp_accuracy = 0.0;
  std::vector<double> repverb_per_episode;
  std::vector<double> warp_per_episode;
};

/// RepVerb prototypes against a WARP head on identical frozen [MASK]
/// features (template anchors, no continuous prompt).
VerbalizerComparison compare_verbalizers(const TaskEnv& env, const EpisodeShape& shape,
                                         std::size_t episodes, std::uint64_t seed, double rho,
                                         const WarpConfig& warp);

}  // namespace mpr
