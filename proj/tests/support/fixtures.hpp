#pragma once

#include <random>
#include <string>
#include <vector>

#include "metaprompter/meta_learner.hpp"
#include "metaprompter/rng.hpp"
#include "oracle/reference_model.hpp"

namespace fixtures {

inline mpr::Tensor random_tensor(const mpr::Shape& shape, mpr::Rng& rng, double sd = 1.0) {
  mpr::Tensor t(shape);
  std::normal_distribution<double> dist(0.0, sd);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Every encoder tensor redrawn so biases and gains are non-trivial.
inline void randomize_encoder(mpr::EncoderParams& p, std::uint64_t seed, double sd = 0.5) {
  mpr::Rng rng = mpr::make_rng(seed, 77);
  std::normal_distribution<double> dist(0.0, sd);
  for (auto& [name, t] : p.named()) {
    const bool gain = name.find("gain") != std::string::npos;
    for (double& v : t->data()) v = gain ? 1.0 + 0.2 * dist(rng) : dist(rng);
  }
}

/// Two-class toy task: 4 documents, one support and one query sample per
/// class, and a small frozen encoder with random weights.
struct Toy {
  mpr::Corpus corpus;
  mpr::EncoderParams encoder;
  mpr::TemplateConfig tmpl;
  mpr::Episode episode;
  mpr::PromptPool pool;
};

inline Toy make_toy(std::uint64_t seed, std::size_t dim = 4, std::size_t pool_size = 2,
                    std::size_t prompt_len = 1, std::size_t layers = 1,
                    mpr::PoolMode mode = mpr::PoolMode::MetaPrompter) {
  std::vector<std::string> words = {"topic", "is"};
  for (int i = 0; i < 8; ++i) words.push_back("w" + std::to_string(i));
  mpr::Vocabulary vocab = mpr::Vocabulary::with_reserved(words);
  const mpr::TokenId w0 = vocab.id("w0");
  std::vector<mpr::ClassInfo> classes = {
      {0, "class_00", {w0, w0 + 1}, mpr::Split::Train},
      {1, "class_01", {w0 + 2, w0 + 3}, mpr::Split::Train},
  };
  mpr::Rng rng = mpr::make_rng(seed, 11);
  std::uniform_int_distribution<mpr::TokenId> any(w0, w0 + 7);
  std::uniform_int_distribution<std::size_t> len(2, 4);
  std::vector<mpr::Document> docs;
  for (std::size_t label : {0, 0, 1, 1}) {
    mpr::TokenSeq toks = {w0 + 2 * label};
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) toks.push_back(any(rng));
    docs.push_back({toks, label});
  }
  Toy toy;
  toy.corpus = mpr::Corpus(vocab, classes, docs);

  mpr::EncoderConfig cfg;
  cfg.dim = dim;
  cfg.layers = layers;
  cfg.heads = dim % 2 == 0 ? 2 : 1;
  cfg.ff_dim = 2 * dim;
  cfg.max_len = 16;
  toy.encoder = mpr::EncoderParams::init(cfg, vocab, seed);
  randomize_encoder(toy.encoder, seed);
  toy.encoder.frozen = true;

  const mpr::TokenSeq anchors = {vocab.id("topic"), vocab.id("is")};
  toy.tmpl = {anchors, anchors};
  toy.episode.classes = {0, 1};
  toy.episode.support = {{0, 0}, {2, 1}};
  toy.episode.query = {{1, 0}, {3, 1}};

  mpr::PoolConfig pc;
  pc.mode = mode;
  pc.pool_size = pool_size;
  pc.prompt_len = prompt_len;
  pc.key_init_std = 0.7;
  toy.pool = mpr::init_pool(pc, toy.encoder, {w0, w0 + 1, w0 + 2, w0 + 3}, seed);
  // Values perturbed away from exact token embeddings.
  mpr::Rng vrng = mpr::make_rng(seed, 12);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (double& v : toy.pool.values.data()) v += noise(vrng);
  return toy;
}

/// Oracle view of a toy task; query embeddings come from the oracle encoder.
inline oracle::RefTask ref_task(const Toy& toy) {
  oracle::RefTask t;
  t.encoder = &toy.encoder;
  for (const mpr::Document& d : toy.corpus.documents()) {
    t.docs.push_back(d.tokens);
    t.queries.push_back(
        oracle::encode_mask<double>(toy.encoder, d.tokens, nullptr, toy.tmpl.probe_anchors, false).h);
  }
  for (std::size_t c : toy.episode.classes) t.label_tokens.push_back(toy.corpus.class_info(c).label_tokens);
  t.anchors = toy.tmpl.anchors;
  t.episode = toy.episode;
  return t;
}

inline oracle::RefSettings ref_settings(const mpr::AdaptConfig& cfg) {
  return {cfg.lambda, cfg.rho, cfg.renormalize_loss};
}

/// Flattened (keys, values) of a pool.
inline std::vector<double> flat(const mpr::PromptPool& p) {
  std::vector<double> out(p.keys.data().begin(), p.keys.data().end());
  out.insert(out.end(), p.values.data().begin(), p.values.data().end());
  return out;
}

/// Small default-shaped synthetic setup (reduced sizes for speed).
struct SmallRun {
  mpr::Corpus corpus;
  mpr::EncoderParams encoder;
  mpr::TemplateConfig tmpl;
};

inline SmallRun make_small_run(double sharpness = 0.7, std::uint64_t seed = 0,
                               std::size_t pretrain_steps = 150, std::size_t dim = 16) {
  mpr::SyntheticCorpusConfig cc;
  cc.n_classes = 12;
  cc.train_classes = 6;
  cc.valid_classes = 3;
  cc.test_classes = 3;
  cc.docs_per_class = 24;
  cc.vocab_size = 80;
  cc.doc_len = 8;
  cc.topic_sharpness = sharpness;
  cc.seed = seed;
  SmallRun r;
  r.corpus = mpr::gen_synthetic_corpus(cc);
  const mpr::TokenSeq anchors = {r.corpus.vocab().id("topic"), r.corpus.vocab().id("is")};
  mpr::PretrainConfig pc;
  pc.encoder.dim = dim;
  pc.encoder.ff_dim = 2 * dim;
  pc.encoder.max_len = 32;
  pc.steps = pretrain_steps;
  pc.batch = 8;
  pc.anchors = anchors;
  pc.seed = seed;
  r.encoder = mpr::pretrain_encoder(r.corpus, pc).params;
  r.tmpl = {anchors, anchors};
  return r;
}

}  // namespace fixtures
