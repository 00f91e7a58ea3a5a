#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "metaprompter/corpus.hpp"
#include "metaprompter/episode.hpp"
#include "metaprompter/tape.hpp"

namespace mpr {

/// Label-token sets V_y, indexed by episode-local label.
class HandVerbalizer {
 public:
  HandVerbalizer() = default;
  /// Throws ConfigError on an empty set or a token id >= vocab_size.
  HandVerbalizer(std::vector<TokenSeq> label_tokens, std::size_t vocab_size);

  /// Token sets of the episode's classes, from corpus metadata.
  static HandVerbalizer for_episode(const Corpus& corpus, const Episode& episode);

  std::size_t labels() const noexcept { return label_tokens_.size(); }
  const TokenSeq& tokens(std::size_t label) const { return label_tokens_.at(label); }

 private:
  std::vector<TokenSeq> label_tokens_;
};

/// Verbalizer definition file: a JSON object mapping label name to a list of
/// token strings, lowercased like tokenize(). Every token must exist in
/// `vocab` (ValidationError).
std::map<std::string, TokenSeq> load_verbalizer_file(const std::filesystem::path& path,
                                                     const Vocabulary& vocab);

/// Per-label mean of member-token probabilities (not renormalized) -> [N].
Var hard_prob(Var vocab_dist, const HandVerbalizer& verb);
Tensor hard_prob(const Tensor& vocab_dist, const HandVerbalizer& verb);

/// Mean [MASK] embedding per label -> [N x d]. Samples are summed in
/// ascending document order so the result is independent of support order.
/// Throws MissingClassError when a label has no samples.
Var compute_label_embeddings(std::span<const Var> embeddings, std::span<const Sample> samples,
                             std::size_t labels);

enum class Similarity {
  Cosine,
  /// Negative squared Euclidean distance.
  Euclidean,
};

std::string to_string(Similarity s);
Similarity parse_similarity(const std::string& name);

/// softmax_y(rho * sim(v_y, h)) over the episode labels.
Var repverb_prob(Var h, Var label_embeddings, double rho, Similarity sim = Similarity::Cosine);
Tensor repverb_prob(const Tensor& h, const Tensor& label_embeddings, double rho,
                    Similarity sim = Similarity::Cosine);

/// (1 - lambda) hard + lambda soft; ConfigError unless lambda in [0, 1].
Var combined_prob(Var hard, Var soft, double lambda);
Tensor combined_prob(const Tensor& hard, const Tensor& soft, double lambda);

/// -log of the label's score, after renormalizing over the labels when
/// `renormalize` (otherwise the raw combined score is used).
Var prediction_nll(Var scores, std::size_t label, bool renormalize = true);

/// Learnable label embeddings scored by dot product.
struct WarpHead {
  Tensor label_embeddings;  // [N x d]
  std::vector<double> support_losses;  // before each step, then final
};

struct WarpConfig {
  std::size_t steps = 5;
  double lr = 0.05;
  double init_std = 0.02;
  std::uint64_t seed = 0;
};

/// Random-init embeddings trained for `steps` gradient-descent steps on the
/// summed support NLL of softmax(V h). Throws MissingClassError when a label
/// has no support sample.
WarpHead warp_fit(std::span<const Tensor> support_features, std::span<const Sample> support,
                  std::size_t labels, const WarpConfig& config);

/// softmax_y(v_y . h).
Tensor warp_predict(const Tensor& h, const WarpHead& head);

}  // namespace mpr
