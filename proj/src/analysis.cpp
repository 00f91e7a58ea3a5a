#include "metaprompter/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"

namespace mpr {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na <= ops::kCosineEps || nb <= ops::kCosineEps) {
    throw DegenerateVectorError("cosine of a zero-norm vector");
  }
  return dot / (na * nb);
}

std::ostringstream csv_stream() {
  std::ostringstream out;
  out << std::setprecision(17);
  return out;
}

}  // namespace

std::string ClassAttention::csv() const {
  auto out = csv_stream();
  const std::size_t k = weights.cols();
  out << "class";
  for (std::size_t i = 0; i < k; ++i) out << ",prompt_" << i + 1;
  out << '\n';
  for (std::size_t r = 0; r < class_ids.size(); ++r) {
    out << class_names[r];
    for (std::size_t i = 0; i < k; ++i) {
      out << ',';
      if (present[r]) {
        out << weights.at(r, i);
      } else {
        out << "absent";
      }
    }
    out << '\n';
  }
  return out.str();
}

ClassAttention class_attention(const MetaParams& params, const TaskEnv& env,
                               const AdaptConfig& cfg, const EpisodeShape& shape,
                               std::size_t episodes, std::uint64_t seed, Split split) {
  if (episodes == 0) throw ConfigError("class attention needs at least one episode");
  const Corpus& corpus = env.corpus();
  ClassAttention out;
  out.class_ids = corpus.classes_in(split);
  const std::size_t k = params.pool.pool_size;
  const std::size_t rows = out.class_ids.size();
  auto row_index = [&](std::size_t class_id) {
    return static_cast<std::size_t>(
        std::lower_bound(out.class_ids.begin(), out.class_ids.end(), class_id) -
        out.class_ids.begin());
  };
  std::vector<double> sums(rows * k, 0.0);
  out.tasks.assign(rows, 0);

  for (std::size_t e = 0; e < episodes; ++e) {
    const Episode ep = sample_episode(corpus, split, shape, seed, e);
    const AdaptResult a = inner_adapt(params, env, ep, cfg, cfg.train_steps);
    for (std::size_t y = 0; y < ep.ways(); ++y) {
      std::vector<double> mean(k, 0.0);
      std::size_t members = 0;
      for (const Sample& s : ep.support) {
        if (s.label != y) continue;
        const Tensor w = attention_weights(a.adapted.pool, env.query(s.doc));
        for (std::size_t i = 0; i < k; ++i) mean[i] += w[i];
        ++members;
      }
      if (members == 0) continue;
      const std::size_t r = row_index(ep.classes[y]);
      for (std::size_t i = 0; i < k; ++i) sums[r * k + i] += mean[i] / static_cast<double>(members);
      ++out.tasks[r];
    }
  }

  out.weights = Tensor({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    out.class_names.push_back(corpus.class_info(out.class_ids[r]).name);
    out.present.push_back(out.tasks[r] > 0);
    for (std::size_t i = 0; i < k; ++i) {
      out.weights[r * k + i] = out.tasks[r] > 0
                                   ? sums[r * k + i] / static_cast<double>(out.tasks[r])
                                   : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

std::vector<std::vector<NearestToken>> nearest_tokens(const PromptPool& pool,
                                                      const EncoderParams& encoder,
                                                      const Vocabulary& vocab, std::size_t m) {
  if (vocab.size() != encoder.vocab_size) {
    throw ValidationError("vocabulary does not match the encoder");
  }
  if (pool.dim != encoder.config.dim) throw DimensionError("pool width differs from encoder width");
  std::vector<TokenId> candidates;
  for (TokenId t = 0; t < vocab.size(); ++t) {
    if (!vocab.is_reserved(t)) candidates.push_back(t);
  }
  if (m > candidates.size()) {
    throw ConfigError("m = " + std::to_string(m) + " exceeds the " +
                      std::to_string(candidates.size()) + " candidate tokens");
  }
  const std::size_t d = pool.dim;
  std::vector<std::vector<NearestToken>> table;
  for (std::size_t i = 0; i < pool.pool_size; ++i) {
    const Tensor theta = pool.value(i);
    std::vector<NearestToken> scored;
    for (TokenId t : candidates) {
      const Tensor e = encoder.token_embedding.row(t);
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < pool.prompt_len; ++j) {
        best = std::max(best, cosine(theta.data().subspan(j * d, d), e.data()));
      }
      scored.push_back({t, vocab.token(t), best});
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(m), scored.end(),
                      [](const NearestToken& a, const NearestToken& b) {
                        return a.score != b.score ? a.score > b.score : a.id < b.id;
                      });
    scored.resize(m);
    table.push_back(std::move(scored));
  }
  return table;
}

std::string nearest_tokens_csv(const std::vector<std::vector<NearestToken>>& table) {
  auto out = csv_stream();
  out << "prompt,rank,token,score\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t r = 0; r < table[i].size(); ++r) {
      out << i + 1 << ',' << r + 1 << ',' << table[i][r].token << ',' << table[i][r].score << '\n';
    }
  }
  return out.str();
}

std::string PromptTopicSimilarity::csv() const {
  auto out = csv_stream();
  out << "prompt_row";
  for (const std::string& c : class_names) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    out << '"' << row_labels[r] << '"';
    for (std::size_t c = 0; c < class_names.size(); ++c) out << ',' << cosine.at(r, c);
    out << '\n';
  }
  return out.str();
}

PromptTopicSimilarity prompt_topic_similarity(const PromptPool& pool, const EncoderParams& encoder,
                                              const std::vector<TokenSeq>& label_tokens,
                                              const std::vector<std::string>& class_names) {
  if (label_tokens.size() != class_names.size()) {
    throw DimensionError("one class name per label-token set required");
  }
  if (pool.dim != encoder.config.dim) throw DimensionError("pool width differs from encoder width");
  const std::size_t d = pool.dim;
  std::vector<std::vector<double>> topics;
  for (const TokenSeq& set : label_tokens) {
    if (set.empty()) throw ConfigError("label-token sets must be nonempty");
    std::vector<double> mean(d, 0.0);
    for (TokenId t : set) {
      if (t >= encoder.vocab_size) throw ValidationError("label token outside vocabulary");
      const Tensor e = encoder.token_embedding.row(t);
      for (std::size_t j = 0; j < d; ++j) mean[j] += e[j];
    }
    for (double& v : mean) v /= static_cast<double>(set.size());
    topics.push_back(std::move(mean));
  }
  PromptTopicSimilarity out;
  out.class_names = class_names;
  out.cosine = Tensor({pool.pool_size * pool.prompt_len, topics.size()});
  for (std::size_t i = 0; i < pool.pool_size; ++i) {
    const Tensor theta = pool.value(i);
    for (std::size_t j = 0; j < pool.prompt_len; ++j) {
      const std::size_t r = i * pool.prompt_len + j;
      out.row_labels.push_back("(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
      for (std::size_t c = 0; c < topics.size(); ++c) {
        out.cosine[r * topics.size() + c] = cosine(theta.data().subspan(j * d, d), topics[c]);
      }
    }
  }
  return out;
}

std::string EmbeddingExport::csv() const {
  auto out = csv_stream();
  out << "kind,class,x,y\n";
  for (const EmbeddingPoint& p : points) {
    out << p.kind << ',' << p.class_name << ',' << p.x << ',' << p.y << '\n';
  }
  return out.str();
}

Tensor pca_2d(const Tensor& data) {
  if (data.rank() != 2 || data.rows() < 2) throw DimensionError("PCA needs at least two rows");
  const std::size_t n = data.rows(), d = data.cols();
  if (d < 2) throw DimensionError("PCA to 2-D needs at least two columns");
  Eigen::MatrixXd x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(r, c) = data.at(r, c);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
  Eigen::MatrixXd components(d, 2);
  components.col(0) = solver.eigenvectors().col(d - 1);
  components.col(1) = solver.eigenvectors().col(d - 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    components.col(c).cwiseAbs().maxCoeff(&arg);
    if (components(arg, c) < 0) components.col(c) *= -1.0;
  }
  const Eigen::MatrixXd projected = x * components;
  Tensor out({n, 2});
  for (std::size_t r = 0; r < n; ++r) {
    out[r * 2] = projected(static_cast<Eigen::Index>(r), 0);
    out[r * 2 + 1] = projected(static_cast<Eigen::Index>(r), 1);
  }
  return out;
}

EmbeddingExport export_embeddings(const MetaParams& params, const TaskEnv& env,
                                  const Episode& episode, const AdaptConfig& cfg) {
  const AdaptResult a = inner_adapt(params, env, episode, cfg, cfg.eval_steps);
  Tape tape;
  const EpisodeForward support =
      episode_forward(tape, a.adapted, env, episode, Targets::Support, cfg, false);
  const EpisodeForward query =
      episode_forward(tape, a.adapted, env, episode, Targets::Query, cfg, false);
  const Var labels =
      compute_label_embeddings(support.mask_embeddings, episode.support, episode.ways());

  std::vector<Var> rows = support.mask_embeddings;
  rows.insert(rows.end(), query.mask_embeddings.begin(), query.mask_embeddings.end());
  rows.push_back(labels);
  EmbeddingExport out;
  out.raw = ops::concat_rows(rows).value();
  const Tensor xy = pca_2d(out.raw);

  const Corpus& corpus = env.corpus();
  auto name = [&](std::size_t label) { return corpus.class_info(episode.classes[label]).name; };
  std::size_t r = 0;
  for (const auto* set : {&episode.support, &episode.query}) {
    for (const Sample& s : *set) {
      out.points.push_back({"sample", name(s.label), xy.at(r, 0), xy.at(r, 1)});
      ++r;
    }
  }
  for (std::size_t y = 0; y < episode.ways(); ++y, ++r) {
    out.points.push_back({"label", name(y), xy.at(r, 0), xy.at(r, 1)});
  }
  return out;
}

}  // namespace mpr
