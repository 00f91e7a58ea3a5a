#include "metaprompter/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metaprompter/analysis.hpp"
#include "metaprompter/errors.hpp"

namespace mpr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Records the artifact hashes and writes manifest.json plus a per-command
/// copy, appending both to `r.artifacts`.
void write_manifest(CommandResult& r, const fs::path& dir, json manifest) {
  json hashes = json::object();
  for (const fs::path& a : r.artifacts) hashes[a.filename().string()] = git_blob_hash(read_bytes(a));
  manifest["artifacts"] = hashes;
  const std::string text = manifest.dump(2) + "\n";
  const fs::path latest = dir / "manifest.json";
  const fs::path own = dir / ("manifest." + manifest["command"].get<std::string>() + ".json");
  write_text(latest, text);
  write_text(own, text);
  r.artifacts.push_back(latest);
  r.artifacts.push_back(own);
}

fs::path require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw ValidationError(what + " not found: " + path.string());
  return path;
}

fs::path meta_checkpoint_path(const RunConfig& cfg, const fs::path& dir) {
  return cfg.test_checkpoint.empty() ? dir / "meta.ckpt" : fs::path(cfg.test_checkpoint);
}

fs::path encoder_checkpoint_path(const RunConfig& cfg, const fs::path& dir) {
  return cfg.encoder_path.empty() ? dir / "encoder.ckpt" : fs::path(cfg.encoder_path);
}

TemplateConfig template_of(const RunConfig& cfg, const Corpus& corpus) {
  return {anchor_ids(corpus.vocab(), cfg.anchors), anchor_ids(corpus.vocab(), cfg.probe_anchors)};
}

PretrainConfig pretrain_config(const RunConfig& cfg, const Corpus& corpus) {
  PretrainConfig pc = cfg.pretrain;
  pc.encoder = cfg.encoder;
  pc.anchors = anchor_ids(corpus.vocab(), cfg.anchors);
  return pc;
}

std::string accuracies_csv(const std::vector<double>& acc) {
  std::ostringstream out;
  out << std::setprecision(17) << "episode,accuracy\n";
  for (std::size_t i = 0; i < acc.size(); ++i) out << i << ',' << acc[i] << '\n';
  return out.str();
}

}  // namespace

fs::path run_directory(const RunConfig& cfg) {
  const char* root = std::getenv(kRunRootEnv);
  return fs::path(root && *root ? root : "runs") / cfg.name;
}

TokenSeq anchor_ids(const Vocabulary& vocab, const std::string& words) {
  std::istringstream in(words);
  std::string w;
  TokenSeq ids;
  while (in >> w) {
    if (!vocab.contains(w)) throw ConfigError("template word '" + w + "' is not in the vocabulary");
    ids.push_back(vocab.id(w));
  }
  return ids;
}

std::size_t configured_param_count(const RunConfig& cfg, std::size_t encoder_params) {
  ParamCountInput in;
  in.pool_size = cfg.mode == PoolMode::MetaPrompting ? 1 : cfg.pool.pool_size;
  in.prompt_len = cfg.pool.prompt_len;
  in.input_dim = cfg.encoder.dim;
  in.output_dim = cfg.encoder.dim;
  in.encoder_params = cfg.tune_encoder ? encoder_params : 0;
  return param_count(cfg.mode, in);
}

json make_manifest(const RunConfig& cfg, const std::string& command, const std::string& corpus_hash,
                   std::size_t encoder_params) {
  json pc = {{"value", configured_param_count(cfg, encoder_params)},
             {"prompt_len", cfg.pool.prompt_len},
             {"input_dim", cfg.encoder.dim},
             {"output_dim", cfg.encoder.dim}};
  if (cfg.mode == PoolMode::MetaPrompter) {
    pc["formula"] = "K*(d_o+L_p*d_i)";
    pc["pool_size"] = cfg.pool.pool_size;
  } else {
    pc["formula"] = "d_phi+L_p*d_i";
    pc["tuned_encoder_params"] = cfg.tune_encoder ? encoder_params : 0;
  }
  return {{"command", command},
          {"seed", cfg.seed},
          {"corpus_hash", corpus_hash},
          {"param_count", pc},
          {"config", cfg.to_json()}};
}

Corpus obtain_corpus(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  if (!cfg.corpus_path.empty()) return load_corpus(require_file(cfg.corpus_path, "corpus file"));
  const fs::path local = dir / "corpus.jsonl";
  if (fs::exists(local)) return load_corpus(local);
  log << "generating synthetic corpus -> " << local.string() << "\n";
  Corpus corpus = gen_synthetic_corpus(cfg.synthetic);
  fs::create_directories(dir);
  save_corpus(corpus, local);
  return corpus;
}

EncoderParams obtain_encoder(const RunConfig& cfg, const Corpus& corpus, const fs::path& dir,
                             std::ostream& log) {
  const fs::path path = encoder_checkpoint_path(cfg, dir);
  if (fs::exists(path)) return load_encoder(path);
  if (!cfg.encoder_path.empty()) require_file(path, "encoder checkpoint");
  log << "pretraining encoder (" << cfg.pretrain.steps << " steps) -> " << path.string() << "\n";
  PretrainResult r = pretrain_encoder(corpus, pretrain_config(cfg, corpus));
  fs::create_directories(dir);
  save_encoder(r.params, path);
  return std::move(r.params);
}

CommandResult cmd_gen_corpus(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Corpus corpus = gen_synthetic_corpus(cfg.synthetic);
  const std::string text = serialize_corpus(corpus);
  const fs::path path = dir / "corpus.jsonl";
  write_text(path, text);
  const std::string hash = git_blob_hash(text);
  log << "wrote " << path.string() << " (" << corpus.documents().size() << " documents, "
      << hash << ")\n";
  CommandResult r;
  r.artifacts = {path};
  write_manifest(r, dir, make_manifest(cfg, "gen-corpus", hash, 0));
  r.summary = {{"documents", corpus.documents().size()}, {"corpus_hash", hash}};
  return r;
}

CommandResult cmd_pretrain(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Corpus corpus = obtain_corpus(cfg, dir, log);
  log << "pretraining encoder (" << cfg.pretrain.steps << " steps)\n";
  const PretrainResult pr = pretrain_encoder(corpus, pretrain_config(cfg, corpus));
  const fs::path ckpt = dir / "encoder.ckpt";
  save_encoder(pr.params, ckpt);
  std::ostringstream losses;
  losses << std::setprecision(17) << "step,loss\n";
  for (std::size_t i = 0; i < pr.losses.size(); ++i) losses << i + 1 << ',' << pr.losses[i] << '\n';
  const fs::path loss_path = dir / "pretrain_losses.csv";
  write_text(loss_path, losses.str());
  CommandResult r;
  const std::string hash = git_blob_hash(serialize_corpus(corpus));
  r.artifacts = {ckpt, loss_path};
  write_manifest(r, dir, make_manifest(cfg, "pretrain", hash, pr.params.parameter_count()));
  r.summary = {{"first_loss", pr.losses.front()}, {"final_loss", pr.losses.back()}};
  return r;
}

CommandResult cmd_meta_train(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Corpus corpus = obtain_corpus(cfg, dir, log);
  const EncoderParams encoder = obtain_encoder(cfg, corpus, dir, log);
  const TaskEnv env(corpus, encoder, template_of(cfg, corpus));
  const MetaParams init = init_meta_params(cfg.pool, encoder, corpus, cfg.seed, cfg.tune_encoder);
  log << "meta-training " << to_string(cfg.mode) << " for " << cfg.meta.iterations
      << " iterations\n";
  const MetaTrainResult res = meta_train(init, env, cfg.adapt, cfg.meta, [&log](const MetricsRow& row) {
    if (row.val_accuracy) {
      log << "  iter " << row.iteration << "  support " << row.support_loss << "  query "
          << row.query_loss << "  val_acc " << *row.val_accuracy << "\n";
    }
  });
  const fs::path best = dir / "meta.ckpt", last = dir / "meta_last.ckpt", metrics = dir / "metrics.csv";
  save_meta_params(res.best, best);
  save_meta_params(res.last, last);
  write_text(metrics, metrics_csv(res.log));
  log << "best val accuracy " << res.best_val_accuracy << " at iteration " << res.best_iteration << "\n";
  CommandResult r;
  const std::string hash = git_blob_hash(serialize_corpus(corpus));
  r.artifacts = {best, last, metrics};
  write_manifest(r, dir, make_manifest(cfg, "meta-train", hash, encoder.parameter_count()));
  r.summary = {{"best_iteration", res.best_iteration}, {"best_val_accuracy", res.best_val_accuracy}};
  return r;
}

CommandResult cmd_meta_test(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const fs::path ckpt = require_file(meta_checkpoint_path(cfg, dir), "meta checkpoint");
  const fs::path enc_path = require_file(encoder_checkpoint_path(cfg, dir), "encoder checkpoint");
  const Corpus corpus = obtain_corpus(cfg, dir, log);
  const EncoderParams encoder = load_encoder(enc_path);
  const MetaParams params = load_meta_params(ckpt);
  const TaskEnv env(corpus, encoder, template_of(cfg, corpus));
  log << "meta-testing " << ckpt.string() << " on " << cfg.test_episodes << " episodes\n";
  const MetaTestResult res = meta_test(params, env, cfg.meta.shape, cfg.test_episodes, cfg.seed, cfg.adapt);
  const fs::path acc_path = dir / "test_accuracies.csv", summary_path = dir / "test_summary.json";
  write_text(acc_path, accuracies_csv(res.accuracies));
  const json summary = {{"episodes", res.accuracies.size()}, {"mean", res.mean}, {"std", res.std}};
  write_text(summary_path, summary.dump(2) + "\n");
  log << "accuracy " << res.mean << " +- " << res.std << "\n";
  CommandResult r;
  const std::string hash = git_blob_hash(serialize_corpus(corpus));
  r.artifacts = {acc_path, summary_path};
  write_manifest(r, dir, make_manifest(cfg, "meta-test", hash, encoder.parameter_count()));
  r.summary = summary;
  return r;
}

CommandResult cmd_sweep(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Corpus corpus = obtain_corpus(cfg, dir, log);
  const EncoderParams encoder = obtain_encoder(cfg, corpus, dir, log);
  const TaskEnv env(corpus, encoder, template_of(cfg, corpus));
  std::ostringstream table, detail;
  table << std::setprecision(17) << "value,mean_accuracy,std\n";
  detail << std::setprecision(17) << "value,seed,best_iteration,accuracy\n";
  json rows = json::array();
  for (std::size_t value : cfg.sweep_values) {
    RunConfig point = cfg;
    if (cfg.sweep_axis == SweepAxis::PoolSize) {
      point.pool.pool_size = value;
    } else {
      point.pool.prompt_len = value;
    }
    point.validate();
    std::vector<double> per_seed;
    for (std::uint64_t seed : cfg.sweep_seeds) {
      point.seed = seed;
      point.meta.seed = seed;
      const MetaParams init = init_meta_params(point.pool, encoder, corpus, seed, point.tune_encoder);
      const MetaTrainResult trained = meta_train(init, env, point.adapt, point.meta);
      const MetaTestResult tested =
          meta_test(trained.best, env, point.meta.shape, point.test_episodes, seed, point.adapt);
      per_seed.push_back(tested.mean);
      detail << value << ',' << seed << ',' << trained.best_iteration << ',' << tested.mean << '\n';
      log << "  " << to_string(cfg.sweep_axis) << "=" << value << " seed " << seed << ": "
          << tested.mean << "\n";
    }
    const double mean = mean_of(per_seed), sd = std_of(per_seed);
    table << value << ',' << mean << ',' << sd << '\n';
    rows.push_back({{"value", value}, {"mean_accuracy", mean}, {"std", sd}});
  }
  const fs::path table_path = dir / "sweep.csv", detail_path = dir / "sweep_runs.csv";
  write_text(table_path, table.str());
  write_text(detail_path, detail.str());
  CommandResult r;
  const std::string hash = git_blob_hash(serialize_corpus(corpus));
  r.artifacts = {table_path, detail_path};
  write_manifest(r, dir, make_manifest(cfg, "sweep", hash, encoder.parameter_count()));
  r.summary = {{"rows", rows}};
  return r;
}

CommandResult cmd_analyze(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const fs::path ckpt = require_file(meta_checkpoint_path(cfg, dir), "meta checkpoint");
  const fs::path enc_path = require_file(encoder_checkpoint_path(cfg, dir), "encoder checkpoint");
  const Corpus corpus = obtain_corpus(cfg, dir, log);
  const EncoderParams encoder = load_encoder(enc_path);
  const MetaParams params = load_meta_params(ckpt);
  const TaskEnv env(corpus, encoder, template_of(cfg, corpus));
  const EncoderParams& embed = params.tuned_encoder ? *params.tuned_encoder : encoder;

  const ClassAttention attention = class_attention(
      params, env, cfg.adapt, cfg.meta.shape, cfg.attention_episodes, derive_seed(cfg.seed, 400));
  const auto nearest = nearest_tokens(params.pool, embed, corpus.vocab(), cfg.nearest_m);
  std::vector<TokenSeq> label_sets;
  std::vector<std::string> names;
  for (const ClassInfo& c : corpus.classes()) {
    label_sets.push_back(c.label_tokens);
    names.push_back(c.name);
  }
  const PromptTopicSimilarity topics = prompt_topic_similarity(params.pool, embed, label_sets, names);
  const Episode ep = test_episode(corpus, cfg.meta.shape, cfg.seed, cfg.export_episode);
  const EmbeddingExport embeddings = export_embeddings(params, env, ep, cfg.adapt);

  CommandResult r;
  const std::vector<std::pair<std::string, std::string>> files = {
      {"class_attention.csv", attention.csv()},
      {"nearest_tokens.csv", nearest_tokens_csv(nearest)},
      {"prompt_topic_similarity.csv", topics.csv()},
      {"embeddings.csv", embeddings.csv()}};
  for (const auto& [name, text] : files) {
    write_text(dir / name, text);
    r.artifacts.push_back(dir / name);
    log << "wrote " << (dir / name).string() << "\n";
  }
  const std::string hash = git_blob_hash(serialize_corpus(corpus));
  write_manifest(r, dir, make_manifest(cfg, "analyze", hash, encoder.parameter_count()));
  r.summary = {{"classes", attention.class_ids.size()}, {"points", embeddings.points.size()}};
  return r;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"gen-corpus", "pretrain", "meta-train",
                                                 "meta-test",  "sweep",    "analyze"};
  return names;
}

CommandResult run_command(const std::string& command, const RunConfig& cfg, const fs::path& dir,
                          std::ostream& log) {
  if (command == "gen-corpus") return cmd_gen_corpus(cfg, dir, log);
  if (command == "pretrain") return cmd_pretrain(cfg, dir, log);
  if (command == "meta-train") return cmd_meta_train(cfg, dir, log);
  if (command == "meta-test") return cmd_meta_test(cfg, dir, log);
  if (command == "sweep") return cmd_sweep(cfg, dir, log);
  if (command == "analyze") return cmd_analyze(cfg, dir, log);
  throw ConfigError("unknown subcommand '" + command + "'");
}

}  // namespace mpr
