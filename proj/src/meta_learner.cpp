#include "metaprompter/meta_learner.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"
#include "metaprompter/rng.hpp"

namespace mpr {

namespace {

std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return best;
}

}  // namespace

void AdaptConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be positive");
  if (train_steps == 0 || eval_steps == 0) throw ConfigError("inner step counts must be at least 1");
}

void MetaConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("meta learning rate must be positive");
  if (iterations == 0) throw ConfigError("meta-training needs at least one iteration");
  if (val_period == 0) throw ConfigError("validation period must be at least 1");
  if (val_episodes == 0) throw ConfigError("validation needs at least one episode");
  if (shape.ways == 0 || shape.shots == 0 || shape.queries == 0) {
    throw ConfigError("episode shape needs N, k and q of at least 1");
  }
}

std::vector<Tensor*> MetaParams::tensors() {
  std::vector<Tensor*> out = pool.params();
  if (tuned_encoder) {
    for (auto& [name, t] : tuned_encoder->named()) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> MetaParams::tensors() const {
  std::vector<const Tensor*> out = pool.params();
  if (tuned_encoder) {
    for (const auto& [name, t] : tuned_encoder->named()) out.push_back(t);
  }
  return out;
}

Checkpoint MetaParams::to_checkpoint() const {
  Checkpoint pool_ckpt = pool.to_checkpoint();
  Checkpoint ckpt;
  ckpt.kind = "meta_params";
  ckpt.meta = {{"pool", pool_ckpt.meta}, {"tuned_encoder", tuned_encoder.has_value()}};
  for (auto& [name, t] : pool_ckpt.tensors) ckpt.tensors.emplace_back("pool." + name, t);
  if (tuned_encoder) {
    ckpt.meta["encoder"] = tuned_encoder->to_checkpoint().meta;
    tuned_encoder->append_to(ckpt, "encoder.");
  }
  return ckpt;
}

MetaParams MetaParams::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "meta_params") {
    throw ValidationError("expected a meta_params checkpoint, got " + ckpt.kind);
  }
  MetaParams p;
  Checkpoint pool_ckpt;
  pool_ckpt.kind = "prompt_pool";
  bool tuned = false;
  try {
    pool_ckpt.meta = ckpt.meta.at("pool");
    tuned = ckpt.meta.at("tuned_encoder").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("meta checkpoint metadata: " + std::string(e.what()));
  }
  pool_ckpt.tensors.emplace_back("keys", ckpt.tensor("pool.keys"));
  pool_ckpt.tensors.emplace_back("values", ckpt.tensor("pool.values"));
  p.pool = PromptPool::from_checkpoint(pool_ckpt);
  if (tuned) p.tuned_encoder = EncoderParams::from_checkpoint(ckpt, "encoder.");
  return p;
}

bool operator==(const MetaParams& a, const MetaParams& b) {
  return a.pool == b.pool && a.tuned_encoder == b.tuned_encoder;
}

void save_meta_params(const MetaParams& params, const std::filesystem::path& path) {
  write_checkpoint(path, params.to_checkpoint());
}

MetaParams load_meta_params(const std::filesystem::path& path) {
  return MetaParams::from_checkpoint(read_checkpoint(path));
}

MetaParams init_meta_params(const PoolConfig& config, const EncoderParams& encoder,
                            const Corpus& corpus, std::uint64_t seed, bool tune_encoder) {
  if (tune_encoder && config.mode != PoolMode::MetaPrompting) {
    throw ConfigError("encoder tuning is only available in metaprompting mode");
  }
  TokenSeq label_tokens;
  for (std::size_t c : corpus.classes_in(Split::Train)) {
    const TokenSeq& toks = corpus.class_info(c).label_tokens;
    label_tokens.insert(label_tokens.end(), toks.begin(), toks.end());
  }
  MetaParams p;
  p.pool = init_pool(config, encoder, label_tokens, seed);
  if (tune_encoder) {
    p.tuned_encoder = encoder;
    p.tuned_encoder->frozen = false;
  }
  return p;
}

TaskEnv::TaskEnv(const Corpus& corpus, const EncoderParams& encoder, TemplateConfig tmpl)
    : corpus_(&corpus), encoder_(&encoder), template_(std::move(tmpl)) {
  if (!encoder.frozen) throw ContractError("task environment needs a frozen encoder");
  if (encoder.vocab_size != corpus.vocab().size()) {
    throw ValidationError("encoder vocabulary size " + std::to_string(encoder.vocab_size) +
                          " does not match corpus vocabulary size " +
                          std::to_string(corpus.vocab().size()));
  }
  for (const TokenSeq* seq : {&template_.anchors, &template_.probe_anchors}) {
    for (TokenId t : *seq) {
      if (t >= encoder.vocab_size) throw ConfigError("template anchor outside vocabulary");
    }
  }
  query_cache_.resize(corpus.documents().size());
}

const Tensor& TaskEnv::query(std::size_t doc) const {
  if (doc >= query_cache_.size()) throw DimensionError("document index out of range");
  auto& slot = query_cache_[doc];
  if (!slot) {
    slot = query_embedding(*encoder_, corpus_->documents()[doc].tokens, template_.probe_anchors);
  }
  return *slot;
}

EpisodeForward episode_forward(Tape& tape, const MetaParams& params, const TaskEnv& env,
                               const Episode& episode, Targets targets, const AdaptConfig& cfg,
                               bool trainable, std::vector<Var>* leaves,
                               const Tensor* fixed_label_embeddings) {
  const PoolVars pool = bind(tape, params.pool, trainable);
  const bool tuned = params.tuned_encoder.has_value();
  const EncoderVars enc = bind(tape, tuned ? *params.tuned_encoder : env.encoder(), trainable && tuned);
  if (leaves) {
    leaves->assign(pool.trainable.begin(), pool.trainable.end());
    if (trainable && tuned) leaves->insert(leaves->end(), enc.all.begin(), enc.all.end());
  }
  return episode_forward(pool, enc, env, episode, targets, cfg, fixed_label_embeddings);
}

EpisodeForward episode_forward(const PoolVars& pool, const EncoderVars& enc, const TaskEnv& env,
                               const Episode& episode, Targets targets, const AdaptConfig& cfg,
                               const Tensor* fixed_label_embeddings) {
  cfg.validate();
  Tape& tape = pool.values.tape();
  const HandVerbalizer verb = HandVerbalizer::for_episode(env.corpus(), episode);
  const bool need_hard = cfg.lambda < 1.0;
  const bool need_soft = cfg.lambda > 0.0;
  const bool attends = pool.pool->mode == PoolMode::MetaPrompter;

  struct SampleOut {
    Var h;
    Var hard;
  };
  auto run = [&](const Sample& s) {
    const Tensor empty;
    Var prompt = instance_prompt(pool, attends ? env.query(s.doc) : empty);
    const WrappedInput w =
        wrap(enc, env.corpus().documents()[s.doc].tokens, prompt, env.templ().anchors);
    const EncodeOutput o = encode(enc, w, need_hard);
    SampleOut r{o.h_mask, {}};
    if (need_hard) r.hard = hard_prob(o.vocab_dist, verb);
    return r;
  };

  std::vector<SampleOut> support_out;
  if (targets == Targets::Support || (need_soft && !fixed_label_embeddings)) {
    for (const Sample& s : episode.support) support_out.push_back(run(s));
  }
  EpisodeForward f;
  if (need_soft) {
    if (fixed_label_embeddings) {
      f.label_embeddings = tape.constant(*fixed_label_embeddings);
    } else {
      std::vector<Var> hs;
      for (const SampleOut& o : support_out) hs.push_back(o.h);
      f.label_embeddings = compute_label_embeddings(hs, episode.support, episode.ways());
    }
  }
  const std::vector<Sample>& samples =
      targets == Targets::Support ? episode.support : episode.query;
  if (samples.empty()) throw SamplingError("episode has no target samples");
  std::vector<Var> nlls;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleOut o = targets == Targets::Support ? support_out[i] : run(samples[i]);
    Var scores;
    if (!need_soft) {
      scores = o.hard;
    } else {
      Var soft = repverb_prob(o.h, f.label_embeddings, cfg.rho, cfg.similarity);
      scores = need_hard ? combined_prob(o.hard, soft, cfg.lambda) : soft;
    }
    f.scores.push_back(scores);
    f.mask_embeddings.push_back(o.h);
    nlls.push_back(prediction_nll(scores, samples[i].label, cfg.renormalize_loss));
  }
  f.loss = ops::sum(ops::stack(nlls));
  return f;
}

double episode_loss(const MetaParams& params, const TaskEnv& env, const Episode& episode,
                    Targets targets, const AdaptConfig& cfg) {
  Tape tape;
  return episode_forward(tape, params, env, episode, targets, cfg, false).loss.value().item();
}

std::pair<std::vector<Tensor>, double> episode_gradient(const MetaParams& params,
                                                        const TaskEnv& env, const Episode& episode,
                                                        Targets targets, const AdaptConfig& cfg,
                                                        const Tensor* fixed_label_embeddings) {
  Tape tape;
  std::vector<Var> leaves;
  const EpisodeForward f =
      episode_forward(tape, params, env, episode, targets, cfg, true, &leaves, fixed_label_embeddings);
  const double loss = f.loss.value().item();
  return {tape.backward(f.loss, leaves), loss};
}

AdaptResult inner_adapt(const MetaParams& meta, const TaskEnv& env, const Episode& episode,
                        const AdaptConfig& cfg, std::size_t steps) {
  AdaptResult r{meta, {}, {}};
  for (std::size_t j = 0; j < steps; ++j) {
    const std::string where = "inner step " + std::to_string(j + 1);
    try {
      Tape tape;
      std::vector<Var> leaves;
      const EpisodeForward f =
          episode_forward(tape, r.adapted, env, episode, Targets::Support, cfg, true, &leaves);
      r.support_losses.push_back(f.loss.value().item());
      if (f.label_embeddings.valid()) r.last_label_embeddings = f.label_embeddings.value();
      const std::vector<Tensor> grads = tape.backward(f.loss, leaves);
      const std::vector<Tensor*> params = r.adapted.tensors();
      sgd_update(params, grads, cfg.alpha);
    } catch (const DegenerateVectorError& e) {
      throw DegenerateVectorError(where + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError(where + ": " + e.what());
    }
  }
  return r;
}

OuterResult outer_gradient(const AdaptResult& adapted, const TaskEnv& env, const Episode& episode,
                           const AdaptConfig& cfg) {
  const Tensor* fixed = cfg.literal_label_timing && adapted.last_label_embeddings.size() > 0
                            ? &adapted.last_label_embeddings
                            : nullptr;
  auto [grads, loss] = episode_gradient(adapted.adapted, env, episode, Targets::Query, cfg, fixed);
  return OuterResult{loss, std::move(grads)};
}

OuterResult outer_step(MetaParams& meta, const AdaptResult& adapted, const TaskEnv& env,
                       const Episode& episode, const AdaptConfig& cfg, AdamState* adam, double lr) {
  OuterResult r = outer_gradient(adapted, env, episode, cfg);
  const std::vector<Tensor*> params = meta.tensors();
  if (adam) {
    adam_update(*adam, params, r.gradient, lr);
  } else {
    sgd_update(params, r.gradient, lr);
  }
  return r;
}

std::vector<std::size_t> predict_episode(const MetaParams& meta, const TaskEnv& env,
                                         const Episode& episode, const AdaptConfig& cfg,
                                         std::size_t steps) {
  const AdaptResult a = inner_adapt(meta, env, episode, cfg, steps);
  const Tensor* fixed = cfg.literal_label_timing && a.last_label_embeddings.size() > 0
                            ? &a.last_label_embeddings
                            : nullptr;
  Tape tape;
  const EpisodeForward f =
      episode_forward(tape, a.adapted, env, episode, Targets::Query, cfg, false, nullptr, fixed);
  std::vector<std::size_t> out;
  for (const Var& s : f.scores) out.push_back(argmax(s.value()));
  return out;
}

double episode_accuracy(const MetaParams& meta, const TaskEnv& env, const Episode& episode,
                        const AdaptConfig& cfg, std::size_t steps) {
  const std::vector<std::size_t> pred = predict_episode(meta, env, episode, cfg, steps);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == episode.query[i].label;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double evaluate_split(const MetaParams& params, const TaskEnv& env, Split split,
                      const EpisodeShape& shape, std::size_t episodes, std::uint64_t seed,
                      const AdaptConfig& cfg, std::size_t steps) {
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  double total = 0.0;
  for (std::size_t i = 0; i < episodes; ++i) {
    total += episode_accuracy(params, env, sample_episode(env.corpus(), split, shape, seed, i), cfg,
                              steps);
  }
  return total / static_cast<double>(episodes);
}

MetaTrainResult meta_train(const MetaParams& init, const TaskEnv& env, const AdaptConfig& adapt,
                           const MetaConfig& meta, const ProgressFn& progress) {
  adapt.validate();
  meta.validate();
  const std::uint64_t train_seed = derive_seed(meta.seed, kTrainEpisodeStream);
  const std::uint64_t valid_seed = derive_seed(meta.seed, kValidEpisodeStream);
  auto validate = [&](const MetaParams& p) {
    return evaluate_split(p, env, Split::Valid, meta.shape, meta.val_episodes, valid_seed, adapt,
                          adapt.eval_steps);
  };

  for (Split s : {Split::Train, Split::Valid}) {
    if (env.corpus().classes_in(s).empty()) {
      throw ConfigError("the " + to_string(s) + " split has no classes");
    }
  }
  MetaTrainResult res{init, init, 0, 0.0, {}};
  MetaParams current = init;
  AdamState adam;
  bool have_best = false;
  for (std::size_t t = 1; t <= meta.iterations; ++t) {
    const Episode ep = sample_episode(env.corpus(), Split::Train, meta.shape, train_seed, t - 1);
    const AdaptResult a = inner_adapt(current, env, ep, adapt, adapt.train_steps);
    MetricsRow row;
    row.iteration = t;
    row.support_loss = a.support_losses.empty()
                           ? episode_loss(current, env, ep, Targets::Support, adapt)
                           : a.support_losses.front();
    row.query_loss =
        outer_step(current, a, env, ep, adapt, meta.use_adam ? &adam : nullptr, meta.lr).query_loss;
    if (t % meta.val_period == 0 || t == meta.iterations) {
      const double acc = validate(current);
      row.val_accuracy = acc;
      if (!have_best || acc > res.best_val_accuracy) {
        have_best = true;
        res.best_val_accuracy = acc;
        res.best_iteration = t;
        res.best = current;
      }
    }
    res.log.push_back(row);
    if (progress) progress(row);
  }
  res.last = std::move(current);
  return res;
}

MetaTestResult meta_test(const MetaParams& params, const TaskEnv& env, const EpisodeShape& shape,
                         std::size_t episodes, std::uint64_t seed, const AdaptConfig& cfg) {
  cfg.validate();
  if (episodes == 0) throw ConfigError("meta-test needs at least one episode");
  const Corpus& corpus = env.corpus();
  std::set<std::string> seen_names;
  for (Split s : {Split::Train, Split::Valid}) {
    for (std::size_t c : corpus.classes_in(s)) seen_names.insert(corpus.class_info(c).name);
  }
  for (std::size_t c : corpus.classes_in(Split::Test)) {
    if (seen_names.count(corpus.class_info(c).name)) {
      throw ValidationError("test class '" + corpus.class_info(c).name +
                            "' also appears in a meta-train or validation split");
    }
  }
  MetaTestResult r;
  for (std::size_t i = 0; i < episodes; ++i) {
    const Episode ep = test_episode(corpus, shape, seed, i);
    r.accuracies.push_back(episode_accuracy(params, env, ep, cfg, cfg.eval_steps));
  }
  r.mean = mean_of(r.accuracies);
  r.std = std_of(r.accuracies);
  return r;
}

Episode test_episode(const Corpus& corpus, const EpisodeShape& shape, std::uint64_t seed,
                     std::size_t index) {
  return sample_episode(corpus, Split::Test, shape, derive_seed(seed, kTestEpisodeStream), index);
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double std_of(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "iteration,support_loss,query_loss,val_accuracy\n";
  for (const MetricsRow& r : rows) {
    out << r.iteration << ',' << r.support_loss << ',' << r.query_loss << ',';
    if (r.val_accuracy) out << *r.val_accuracy;
    out << '\n';
  }
  return out.str();
}

VerbalizerComparison compare_verbalizers(const TaskEnv& env, const EpisodeShape& shape,
                                         std::size_t episodes, std::uint64_t seed, double rho,
                                         const WarpConfig& warp) {
  if (episodes == 0) throw ConfigError("comparison needs at least one episode");
  const bool same_template = env.templ().anchors == env.templ().probe_anchors;
  auto feature = [&](std::size_t doc) {
    if (same_template) return env.query(doc);
    return query_embedding(env.encoder(), env.corpus().documents()[doc].tokens,
                           env.templ().anchors);
  };
  VerbalizerComparison out;
  const std::uint64_t test_seed = derive_seed(seed, kTestEpisodeStream);
  for (std::size_t i = 0; i < episodes; ++i) {
    const Episode ep = sample_episode(env.corpus(), Split::Test, shape, test_seed, i);
    std::vector<Tensor> support_features;
    for (const Sample& s : ep.support) support_features.push_back(feature(s.doc));

    Tape tape;
    std::vector<Var> hs;
    for (const Tensor& f : support_features) hs.push_back(tape.constant_ref(f));
    const Tensor prototypes = compute_label_embeddings(hs, ep.support, ep.ways()).value();

    WarpConfig wc = warp;
    wc.seed = derive_seed(warp.seed, i);
    const WarpHead head = warp_fit(support_features, ep.support, ep.ways(), wc);

    std::size_t rep_correct = 0, warp_correct = 0;
    for (const Sample& s : ep.query) {
      const Tensor h = feature(s.doc);
      rep_correct += argmax(repverb_prob(h, prototypes, rho)) == s.label;
      warp_correct += argmax(warp_predict(h, head)) == s.label;
    }
    const double n = static_cast<double>(ep.query.size());
    out.repverb_per_episode.push_back(static_cast<double>(rep_correct) / n);
    out.warp_per_episode.push_back(static_cast<double>(warp_correct) / n);
  }
  out.repverb_accuracy = mean_of(out.repverb_per_episode);
  out.warp_accuracy = mean_of(out.warp_per_episode);
  return out;
}

}  // namespace mpr
