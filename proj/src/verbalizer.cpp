#include "metaprompter/verbalizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"
#include "metaprompter/rng.hpp"

namespace mpr {

HandVerbalizer::HandVerbalizer(std::vector<TokenSeq> label_tokens, std::size_t vocab_size)
    : label_tokens_(std::move(label_tokens)) {
  for (std::size_t y = 0; y < label_tokens_.size(); ++y) {
    if (label_tokens_[y].empty()) {
      throw ConfigError("label " + std::to_string(y) + " has an empty token set");
    }
    for (TokenId t : label_tokens_[y]) {
      if (t >= vocab_size) throw ConfigError("label token id outside vocabulary");
    }
  }
}

HandVerbalizer HandVerbalizer::for_episode(const Corpus& corpus, const Episode& episode) {
  std::vector<TokenSeq> sets;
  for (std::size_t c : episode.classes) sets.push_back(corpus.class_info(c).label_tokens);
  return HandVerbalizer(std::move(sets), corpus.vocab().size());
}

std::map<std::string, TokenSeq> load_verbalizer_file(const std::filesystem::path& path,
                                                     const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ValidationError("verbalizer file not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("verbalizer file: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ParseError("verbalizer file must hold a JSON object");
  std::map<std::string, TokenSeq> out;
  for (const auto& [label, tokens] : j.items()) {
    if (!tokens.is_array() || tokens.empty()) {
      throw ValidationError("verbalizer label '" + label + "' needs a nonempty token list");
    }
    TokenSeq ids;
    for (const auto& tok : tokens) {
      if (!tok.is_string()) throw ParseError("verbalizer tokens must be strings");
      std::string s = tok.get<std::string>();
      std::transform(s.begin(), s.end(), s.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (!vocab.contains(s)) {
        throw ValidationError("verbalizer token '" + s + "' for label '" + label +
                              "' is not in the vocabulary");
      }
      ids.push_back(vocab.id(s));
    }
    out.emplace(label, std::move(ids));
  }
  return out;
}

Var hard_prob(Var vocab_dist, const HandVerbalizer& verb) {
  std::vector<Var> per_label;
  per_label.reserve(verb.labels());
  for (std::size_t y = 0; y < verb.labels(); ++y) {
    per_label.push_back(ops::mean(ops::select(vocab_dist, verb.tokens(y))));
  }
  return ops::stack(per_label);
}

Tensor hard_prob(const Tensor& vocab_dist, const HandVerbalizer& verb) {
  Tape tape;
  return hard_prob(tape.constant_ref(vocab_dist), verb).value();
}

Var compute_label_embeddings(std::span<const Var> embeddings, std::span<const Sample> samples,
                             std::size_t labels) {
  if (embeddings.size() != samples.size()) {
    throw DimensionError("label embeddings: one embedding per sample required");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&samples](std::size_t a, std::size_t b) {
    return samples[a].doc < samples[b].doc;
  });
  std::vector<std::vector<Var>> members(labels);
  for (std::size_t i : order) {
    if (samples[i].label >= labels) throw DimensionError("sample label outside label set");
    members[samples[i].label].push_back(embeddings[i]);
  }
  std::vector<Var> means;
  means.reserve(labels);
  for (std::size_t y = 0; y < labels; ++y) {
    if (members[y].empty()) {
      throw MissingClassError("label " + std::to_string(y) + " has no support samples");
    }
    means.push_back(members[y].size() == 1 ? members[y].front()
                                           : ops::mean_rows(ops::concat_rows(members[y])));
  }
  return ops::concat_rows(means);
}

std::string to_string(Similarity s) { return s == Similarity::Cosine ? "cosine" : "euclidean"; }

Similarity parse_similarity(const std::string& name) {
  if (name == "cosine") return Similarity::Cosine;
  if (name == "euclidean") return Similarity::Euclidean;
  throw ConfigError("unknown similarity '" + name + "' (expected cosine|euclidean)");
}

Var repverb_prob(Var h, Var label_embeddings, double rho, Similarity sim) {
  if (!(rho > 0.0)) throw ConfigError("temperature rho must be positive");
  Var scores;
  if (sim == Similarity::Cosine) {
    scores = ops::cosine_rows(label_embeddings, h);
  } else {
    const std::size_t n = label_embeddings.value().rows();
    std::vector<Var> d;
    for (std::size_t y = 0; y < n; ++y) {
      Var diff = ops::sub(ops::row(label_embeddings, y), h);
      d.push_back(ops::scale(ops::dot(diff, diff), -1.0));
    }
    scores = ops::stack(d);
  }
  return ops::softmax(scores, 1.0 / rho);
}

Tensor repverb_prob(const Tensor& h, const Tensor& label_embeddings, double rho, Similarity sim) {
  Tape tape;
  return repverb_prob(tape.constant_ref(h), tape.constant_ref(label_embeddings), rho, sim).value();
}

Var combined_prob(Var hard, Var soft, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (lambda == 0.0) return hard;
  if (lambda == 1.0) return soft;
  return ops::add(ops::scale(hard, 1.0 - lambda), ops::scale(soft, lambda));
}

Tensor combined_prob(const Tensor& hard, const Tensor& soft, double lambda) {
  Tape tape;
  return combined_prob(tape.constant_ref(hard), tape.constant_ref(soft), lambda).value();
}

Var prediction_nll(Var scores, std::size_t label, bool renormalize) {
  Var p = renormalize ? ops::normalize_sum(scores) : scores;
  return ops::scale(ops::log(ops::select(p, std::vector<std::size_t>{label})), -1.0);
}

WarpHead warp_fit(std::span<const Tensor> support_features, std::span<const Sample> support,
                  std::size_t labels, const WarpConfig& config) {
  if (support_features.size() != support.size()) {
    throw DimensionError("warp_fit: one feature per support sample required");
  }
  if (support.empty()) throw MissingClassError("warp_fit: empty support set");
  std::vector<bool> seen(labels, false);
  for (const Sample& s : support) {
    if (s.label >= labels) throw DimensionError("warp_fit: label outside label set");
    seen[s.label] = true;
  }
  for (std::size_t y = 0; y < labels; ++y) {
    if (!seen[y]) throw MissingClassError("label " + std::to_string(y) + " has no support samples");
  }
  const std::size_t d = support_features.front().size();
  WarpHead head;
  head.label_embeddings = Tensor({labels, d});
  Rng rng = make_rng(config.seed, 4);
  std::normal_distribution<double> dist(0.0, config.init_std);
  for (double& v : head.label_embeddings.data()) v = dist(rng);

  auto support_loss = [&](Tape& tape, Var emb) {
    std::vector<Var> terms;
    for (std::size_t i = 0; i < support.size(); ++i) {
      Var logits = ops::matvec(emb, tape.constant_ref(support_features[i]));
      terms.push_back(ops::nll(ops::log_softmax(logits), support[i].label));
    }
    return ops::sum(ops::stack(terms));
  };
  for (std::size_t step = 0; step <= config.steps; ++step) {
    Tape tape;
    Var emb = tape.leaf(head.label_embeddings);
    Var loss = support_loss(tape, emb);
    head.support_losses.push_back(loss.value().item());
    if (step == config.steps) break;
    const Tensor g = tape.backward(loss, {emb})[0];
    for (std::size_t i = 0; i < g.size(); ++i) head.label_embeddings[i] -= config.lr * g[i];
  }
  return head;
}

Tensor warp_predict(const Tensor& h, const WarpHead& head) {
  Tape tape;
  Var logits = ops::matvec(tape.constant_ref(head.label_embeddings), tape.constant_ref(h));
  return ops::softmax(logits).value();
}

}  // namespace mpr
