#include "metaprompter/encoder.hpp"

#include <cmath>
#include <random>

#include "metaprompter/adam.hpp"
#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"
#include "metaprompter/rng.hpp"

namespace mpr {

void EncoderConfig::validate() const {
  if (dim == 0 || layers == 0 || heads == 0 || ff_dim == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (max_len < 4) throw ConfigError("encoder max_len must be at least 4");
  if (!(embedding_init_std > 0.0)) throw ConfigError("embedding_init_std must be positive");
}

namespace {

Tensor gaussian(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor filled(std::size_t n, double value) {
  return Tensor::vector(std::vector<double>(n, value));
}

template <typename Self, typename Out>
void collect_named(Self& self, Out& out) {
  out.emplace_back("token_embedding", &self.token_embedding);
  out.emplace_back("position_embedding", &self.position_embedding);
  out.emplace_back("embed_ln.gain", &self.embed_ln_gain);
  out.emplace_back("embed_ln.bias", &self.embed_ln_bias);
  for (std::size_t l = 0; l < self.blocks.size(); ++l) {
    auto& b = self.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.emplace_back(p + "wq", &b.wq);
    out.emplace_back(p + "bq", &b.bq);
    out.emplace_back(p + "wk", &b.wk);
    out.emplace_back(p + "bk", &b.bk);
    out.emplace_back(p + "wv", &b.wv);
    out.emplace_back(p + "bv", &b.bv);
    out.emplace_back(p + "wo", &b.wo);
    out.emplace_back(p + "bo", &b.bo);
    out.emplace_back(p + "ln1.gain", &b.ln1_gain);
    out.emplace_back(p + "ln1.bias", &b.ln1_bias);
    out.emplace_back(p + "ff_in", &b.ff_in);
    out.emplace_back(p + "ff_in_bias", &b.ff_in_bias);
    out.emplace_back(p + "ff_out", &b.ff_out);
    out.emplace_back(p + "ff_out_bias", &b.ff_out_bias);
    out.emplace_back(p + "ln2.gain", &b.ln2_gain);
    out.emplace_back(p + "ln2.bias", &b.ln2_bias);
  }
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, const Vocabulary& vocab,
                                  std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  p.vocab_size = vocab.size();
  p.cls_id = vocab.cls();
  p.sep_id = vocab.sep();
  p.mask_id = vocab.mask();
  Rng rng = make_rng(seed, 1);
  const std::size_t d = config.dim, f = config.ff_dim;
  p.token_embedding = gaussian({vocab.size(), d}, config.embedding_init_std, rng);
  p.position_embedding = gaussian({config.max_len, d}, config.embedding_init_std, rng);
  p.embed_ln_gain = filled(d, 1.0);
  p.embed_ln_bias = filled(d, 0.0);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderBlock b;
    b.wq = gaussian({d, d}, sd, rng);
    b.bq = filled(d, 0.0);
    b.wk = gaussian({d, d}, sd, rng);
    b.bk = filled(d, 0.0);
    b.wv = gaussian({d, d}, sd, rng);
    b.bv = filled(d, 0.0);
    b.wo = gaussian({d, d}, sd, rng);
    b.bo = filled(d, 0.0);
    b.ln1_gain = filled(d, 1.0);
    b.ln1_bias = filled(d, 0.0);
    b.ff_in = gaussian({d, f}, sd, rng);
    b.ff_in_bias = filled(f, 0.0);
    b.ff_out = gaussian({f, d}, sf, rng);
    b.ff_out_bias = filled(d, 0.0);
    b.ln2_gain = filled(d, 1.0);
    b.ln2_bias = filled(d, 0.0);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor*>> EncoderParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_named(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> EncoderParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_named(*this, out);
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

void EncoderParams::append_to(Checkpoint& ckpt, const std::string& prefix) const {
  for (const auto& [name, t] : named()) ckpt.tensors.emplace_back(prefix + name, *t);
}

Checkpoint EncoderParams::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "encoder";
  ckpt.meta = {{"dim", config.dim},
               {"layers", config.layers},
               {"heads", config.heads},
               {"ff_dim", config.ff_dim},
               {"max_len", config.max_len},
               {"embedding_init_std", config.embedding_init_std},
               {"vocab_size", vocab_size},
               {"cls_id", cls_id},
               {"sep_id", sep_id},
               {"mask_id", mask_id},
               {"frozen", frozen}};
  append_to(ckpt, "");
  return ckpt;
}

EncoderParams EncoderParams::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& m = ckpt.meta.contains("encoder") ? ckpt.meta.at("encoder") : ckpt.meta;
  EncoderParams p;
  try {
    p.config.dim = m.at("dim").get<std::size_t>();
    p.config.layers = m.at("layers").get<std::size_t>();
    p.config.heads = m.at("heads").get<std::size_t>();
    p.config.ff_dim = m.at("ff_dim").get<std::size_t>();
    p.config.max_len = m.at("max_len").get<std::size_t>();
    p.config.embedding_init_std = m.at("embedding_init_std").get<double>();
    p.vocab_size = m.at("vocab_size").get<std::size_t>();
    p.cls_id = m.at("cls_id").get<TokenId>();
    p.sep_id = m.at("sep_id").get<TokenId>();
    p.mask_id = m.at("mask_id").get<TokenId>();
    p.frozen = m.at("frozen").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("encoder checkpoint metadata: " + std::string(e.what()));
  }
  p.blocks.resize(p.config.layers);
  for (auto& [name, t] : p.named()) *t = ckpt.tensor(prefix + name);
  if (p.token_embedding.shape() != Shape{p.vocab_size, p.config.dim}) {
    throw ValidationError("encoder checkpoint: token embedding shape disagrees with metadata");
  }
  return p;
}

bool operator==(const EncoderParams& a, const EncoderParams& b) {
  if (a.vocab_size != b.vocab_size || a.frozen != b.frozen || a.blocks.size() != b.blocks.size()) {
    return false;
  }
  const auto na = a.named();
  const auto nb = b.named();
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (!(*na[i].second == *nb[i].second)) return false;
  }
  return true;
}

void save_encoder(const EncoderParams& params, const std::filesystem::path& path) {
  write_checkpoint(path, params.to_checkpoint());
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != "encoder") {
    throw ValidationError("'" + path.string() + "' holds a " + ckpt.kind + " checkpoint");
  }
  return EncoderParams::from_checkpoint(ckpt);
}

EncoderVars bind(Tape& tape, const EncoderParams& params, bool trainable) {
  if (trainable && params.frozen) {
    throw ContractError("frozen encoder parameters cannot be gradient leaves");
  }
  EncoderVars v;
  v.params = &params;
  for (const auto& [name, t] : params.named()) {
    v.all.push_back(trainable ? tape.leaf(*t) : tape.constant_ref(*t));
  }
  std::size_t i = 0;
  v.token_embedding = v.all[i++];
  v.position_embedding = v.all[i++];
  v.embed_ln_gain = v.all[i++];
  v.embed_ln_bias = v.all[i++];
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    BlockVars b;
    for (Var* slot : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_gain,
                      &b.ln1_bias, &b.ff_in, &b.ff_in_bias, &b.ff_out, &b.ff_out_bias,
                      &b.ln2_gain, &b.ln2_bias}) {
      *slot = v.all[i++];
    }
    v.blocks.push_back(b);
  }
  return v;
}

WrappedInput wrap(const EncoderVars& enc, const TokenSeq& x, std::optional<Var> prompt,
                  const TokenSeq& anchors) {
  const EncoderParams& p = *enc.params;
  std::size_t prompt_rows = 0;
  if (prompt) {
    const Tensor& pv = prompt->value();
    if (pv.rank() != 2 || pv.cols() != p.config.dim) {
      throw DimensionError("prompt must be [L_p x " + std::to_string(p.config.dim) + "], got " +
                           shape_string(pv.shape()));
    }
    prompt_rows = pv.rows();
  }
  const std::size_t fixed = 1 + prompt_rows + anchors.size() + 2;
  if (fixed > p.config.max_len) {
    throw DimensionError("template of " + std::to_string(fixed) + " rows exceeds max_len " +
                         std::to_string(p.config.max_len));
  }
  const std::size_t kept = std::min(x.size(), p.config.max_len - fixed);

  TokenSeq head;
  head.reserve(1 + kept);
  head.push_back(p.cls_id);
  head.insert(head.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(kept));
  TokenSeq tail(anchors);
  tail.push_back(p.mask_id);
  tail.push_back(p.sep_id);

  std::vector<Var> parts;
  parts.push_back(ops::gather_rows(enc.token_embedding, head));
  if (prompt && prompt_rows > 0) parts.push_back(*prompt);
  parts.push_back(ops::gather_rows(enc.token_embedding, tail));

  WrappedInput w;
  w.rows = ops::concat_rows(parts);
  w.input_tokens = kept;
  w.prompt_offset = head.size();
  w.prompt_rows = prompt_rows;
  w.length = head.size() + prompt_rows + tail.size();
  w.mask_position = w.length - 2;
  return w;
}

namespace {

Var linear(Var x, Var w, Var b) { return ops::add_row(ops::matmul(x, w), b); }

Var self_attention(const BlockVars& b, Var x, std::size_t heads, std::size_t dim) {
  const std::size_t dh = dim / heads;
  Var q = linear(x, b.wq, b.bq);
  Var k = linear(x, b.wk, b.bk);
  Var v = linear(x, b.wv, b.bv);
  const double scale = std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : ops::slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : ops::slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : ops::slice_cols(v, h * dh, dh);
    Var attn = ops::softmax_rows(ops::matmul_nt(qh, kh), scale);
    outs.push_back(ops::matmul(attn, vh));
  }
  Var merged = heads == 1 ? outs.front() : ops::concat_cols(outs);
  return linear(merged, b.wo, b.bo);
}

}  // namespace

EncodeOutput encode(const EncoderVars& enc, const WrappedInput& input, bool with_vocab) {
  const EncoderParams& p = *enc.params;
  if (input.length > p.config.max_len) throw DimensionError("wrapped input exceeds max_len");
  Var x = ops::add(input.rows, ops::slice_rows(enc.position_embedding, 0, input.length));
  x = ops::layer_norm(x, enc.embed_ln_gain, enc.embed_ln_bias);
  for (std::size_t l = 0; l < enc.blocks.size(); ++l) {
    const BlockVars& b = enc.blocks[l];
    try {
      Var a = self_attention(b, x, p.config.heads, p.config.dim);
      x = ops::layer_norm(ops::add(x, a), b.ln1_gain, b.ln1_bias);
      Var f = linear(ops::gelu(linear(x, b.ff_in, b.ff_in_bias)), b.ff_out, b.ff_out_bias);
      x = ops::layer_norm(ops::add(x, f), b.ln2_gain, b.ln2_bias);
    } catch (const NumericError& e) {
      throw NumericError("encoder block " + std::to_string(l) + ": " + e.what());
    }
  }
  EncodeOutput out;
  out.hidden = x;
  out.h_mask = ops::row(x, input.mask_position);
  if (with_vocab) out.vocab_dist = vocab_distribution(enc, out.h_mask);
  return out;
}

Var vocab_distribution(const EncoderVars& enc, Var h) {
  return ops::softmax(ops::matvec(enc.token_embedding, h));
}

Tensor query_embedding(const EncoderParams& params, const TokenSeq& x,
                       const TokenSeq& probe_anchors) {
  if (!params.frozen) throw ContractError("query function requires a frozen encoder");
  Tape tape;
  const EncoderVars enc = bind(tape, params);
  const WrappedInput w = wrap(enc, x, std::nullopt, probe_anchors);
  return encode(enc, w, false).h_mask.value();
}

PretrainResult pretrain_encoder(const Corpus& corpus, const PretrainConfig& config) {
  const Vocabulary& vocab = corpus.vocab();
  std::size_t plain = 0;
  for (TokenId t = 0; t < vocab.size(); ++t) plain += vocab.is_reserved(t) ? 0 : 1;
  if (plain < 2) throw ConfigError("pretraining needs at least 2 non-reserved tokens");
  if (corpus.documents().empty()) throw ConfigError("pretraining needs a nonempty corpus");
  if (config.steps == 0 || config.batch == 0) throw ConfigError("pretrain steps/batch must be positive");

  PretrainResult result;
  result.params = EncoderParams::init(config.encoder, vocab, config.seed);
  EncoderParams& params = result.params;
  std::vector<Tensor*> slots;
  for (auto& [name, t] : params.named()) slots.push_back(t);

  Rng rng = make_rng(config.seed, 2);
  std::uniform_int_distribution<std::size_t> pick_doc(0, corpus.documents().size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_fill(0, config.max_fill);
  AdamState adam;

  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    const EncoderVars enc = bind(tape, params, true);
    std::vector<Var> losses;
    for (std::size_t s = 0; s < config.batch; ++s) {
      const TokenSeq& doc = corpus.documents()[pick_doc(rng)].tokens;
      TokenSeq input = doc;
      std::vector<std::pair<std::size_t, TokenId>> targets;  // (input position, token)
      for (std::size_t i = 0; i < input.size(); ++i) {
        if (coin(rng) < config.mask_prob) {
          targets.emplace_back(i, input[i]);
          input[i] = params.mask_id;
        }
      }
      std::optional<Var> fill;
      if (!doc.empty()) {
        const std::size_t n_fill = pick_fill(rng);
        std::uniform_int_distribution<std::size_t> pick_tok(0, doc.size() - 1);
        TokenSeq filler;
        for (std::size_t i = 0; i < n_fill; ++i) filler.push_back(doc[pick_tok(rng)]);
        if (!filler.empty()) fill = ops::gather_rows(enc.token_embedding, filler);
      }
      const WrappedInput w = wrap(enc, input, fill, config.anchors);
      const EncodeOutput out = encode(enc, w, false);
      for (const auto& [pos, tok] : targets) {
        if (pos >= w.input_tokens) continue;
        Var logits = ops::matvec(enc.token_embedding, ops::row(out.hidden, 1 + pos));
        losses.push_back(ops::nll(ops::log_softmax(logits), tok));
      }
      if (!doc.empty()) {
        std::uniform_int_distribution<std::size_t> pick_tok(0, doc.size() - 1);
        Var logits = ops::matvec(enc.token_embedding, out.h_mask);
        losses.push_back(ops::nll(ops::log_softmax(logits), doc[pick_tok(rng)]));
      }
    }
    if (losses.empty()) {
      result.losses.push_back(0.0);
      continue;
    }
    Var loss = ops::mean(ops::stack(losses));
    result.losses.push_back(loss.value().item());
    const std::vector<Tensor> grads = tape.backward(loss, enc.all);
    adam_update(adam, slots, grads, config.lr);
  }
  params.frozen = true;
  return result;
}

}  // namespace mpr
