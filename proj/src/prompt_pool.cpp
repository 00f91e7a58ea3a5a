#include "metaprompter/prompt_pool.hpp"

#include <cmath>
#include <random>

#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"
#include "metaprompter/rng.hpp"

namespace mpr {

std::string to_string(PoolMode mode) {
  return mode == PoolMode::MetaPrompter ? "metaprompter" : "metaprompting";
}

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "metaprompter") return PoolMode::MetaPrompter;
  if (name == "metaprompting") return PoolMode::MetaPrompting;
  throw ConfigError("unknown pool mode '" + name + "' (expected metaprompter|metaprompting)");
}

Tensor PromptPool::value(std::size_t i) const {
  if (i >= pool_size) throw DimensionError("prompt index out of range");
  const std::size_t n = prompt_len * dim;
  return Tensor({prompt_len, dim},
                std::vector<double>(values.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                                    values.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

std::vector<Tensor*> PromptPool::params() {
  if (mode == PoolMode::MetaPrompting) return {&values};
  return {&keys, &values};
}

std::vector<const Tensor*> PromptPool::params() const {
  if (mode == PoolMode::MetaPrompting) return {&values};
  return {&keys, &values};
}

Checkpoint PromptPool::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "prompt_pool";
  ckpt.meta = {{"mode", to_string(mode)},
               {"pool_size", pool_size},
               {"prompt_len", prompt_len},
               {"dim", dim},
               {"scaled_attention", scaled_attention}};
  ckpt.tensors.emplace_back("keys", keys);
  ckpt.tensors.emplace_back("values", values);
  return ckpt;
}

PromptPool PromptPool::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "prompt_pool") {
    throw ValidationError("expected a prompt_pool checkpoint, got " + ckpt.kind);
  }
  PromptPool p;
  try {
    p.mode = parse_pool_mode(ckpt.meta.at("mode").get<std::string>());
    p.pool_size = ckpt.meta.at("pool_size").get<std::size_t>();
    p.prompt_len = ckpt.meta.at("prompt_len").get<std::size_t>();
    p.dim = ckpt.meta.at("dim").get<std::size_t>();
    p.scaled_attention = ckpt.meta.at("scaled_attention").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("pool checkpoint metadata: " + std::string(e.what()));
  }
  p.keys = ckpt.tensor("keys");
  p.values = ckpt.tensor("values");
  if (p.keys.shape() != Shape{p.pool_size, p.dim} ||
      p.values.shape() != Shape{p.pool_size, p.prompt_len * p.dim}) {
    throw ValidationError("pool checkpoint tensor shapes disagree with metadata");
  }
  return p;
}

bool operator==(const PromptPool& a, const PromptPool& b) {
  return a.mode == b.mode && a.pool_size == b.pool_size && a.prompt_len == b.prompt_len &&
         a.dim == b.dim && a.scaled_attention == b.scaled_attention && a.keys == b.keys &&
         a.values == b.values;
}

PromptPool init_pool(const PoolConfig& config, const EncoderParams& encoder,
                     const TokenSeq& label_tokens, std::uint64_t seed) {
  if (label_tokens.empty()) throw ConfigError("prompt initialization needs label tokens");
  if (config.pool_size == 0 || config.prompt_len == 0) {
    throw ConfigError("pool size and prompt length must be at least 1");
  }
  PromptPool p;
  p.mode = config.mode;
  p.pool_size = config.mode == PoolMode::MetaPrompting ? 1 : config.pool_size;
  p.prompt_len = config.prompt_len;
  p.dim = encoder.config.dim;
  p.scaled_attention = config.scaled_attention;

  Rng rng = make_rng(seed, 3);
  std::normal_distribution<double> key_dist(0.0, config.key_init_std);
  p.keys = Tensor({p.pool_size, p.dim});
  if (p.mode == PoolMode::MetaPrompter) {
    for (double& v : p.keys.data()) v = key_dist(rng);
  }
  std::uniform_int_distribution<std::size_t> pick(0, label_tokens.size() - 1);
  p.values = Tensor({p.pool_size, p.prompt_len * p.dim});
  for (std::size_t r = 0; r < p.pool_size * p.prompt_len; ++r) {
    const TokenId tok = label_tokens[pick(rng)];
    if (tok >= encoder.vocab_size) throw ConfigError("label token outside encoder vocabulary");
    for (std::size_t j = 0; j < p.dim; ++j) {
      p.values[r * p.dim + j] = encoder.token_embedding.at(tok, j);
    }
  }
  return p;
}

void save_pool(const PromptPool& pool, const std::filesystem::path& path) {
  write_checkpoint(path, pool.to_checkpoint());
}

PromptPool load_pool(const std::filesystem::path& path) {
  return PromptPool::from_checkpoint(read_checkpoint(path));
}

PoolVars bind(Tape& tape, const PromptPool& pool, bool trainable) {
  PoolVars v;
  v.pool = &pool;
  const bool keys_trainable = trainable && pool.mode == PoolMode::MetaPrompter;
  v.keys = keys_trainable ? tape.leaf(pool.keys) : tape.constant_ref(pool.keys);
  v.values = trainable ? tape.leaf(pool.values) : tape.constant_ref(pool.values);
  if (trainable) {
    if (keys_trainable) v.trainable.push_back(v.keys);
    v.trainable.push_back(v.values);
  }
  return v;
}

Var attention_weights(const PoolVars& pool, Var query) {
  const PromptPool& p = *pool.pool;
  if (query.value().rank() != 1 || query.value().size() != p.dim) {
    throw DimensionError("query of shape " + shape_string(query.value().shape()) +
                         " for pool keys of width " + std::to_string(p.dim));
  }
  const double scale = p.scaled_attention ? std::sqrt(static_cast<double>(p.dim)) : 1.0;
  return ops::softmax(ops::matvec(pool.keys, query), scale);
}

Var compose_prompt(const PoolVars& pool, Var weights) {
  const PromptPool& p = *pool.pool;
  if (weights.value().rank() != 1 || weights.value().size() != p.pool_size) {
    throw DimensionError("attention weights must have length K");
  }
  Var row = ops::matmul(ops::reshape(weights, {1, p.pool_size}), pool.values);
  return ops::reshape(row, {p.prompt_len, p.dim});
}

Var instance_prompt(const PoolVars& pool, const Tensor& query) {
  const PromptPool& p = *pool.pool;
  if (p.mode == PoolMode::MetaPrompting) {
    return ops::reshape(pool.values, {p.prompt_len, p.dim});
  }
  Var q = pool.values.tape().constant(query);
  return compose_prompt(pool, attention_weights(pool, q));
}

Var instance_prompt(const PoolVars& pool, const TokenSeq& x, const EncoderParams& encoder,
                    const TokenSeq& probe_anchors) {
  if (pool.pool->mode == PoolMode::MetaPrompting) return instance_prompt(pool, Tensor{});
  return instance_prompt(pool, query_embedding(encoder, x, probe_anchors));
}

Tensor attention_weights(const PromptPool& pool, const Tensor& query) {
  Tape tape;
  const PoolVars v = bind(tape, pool, false);
  return attention_weights(v, tape.constant_ref(query)).value();
}

Tensor compose_prompt(const PromptPool& pool, const Tensor& weights) {
  Tape tape;
  const PoolVars v = bind(tape, pool, false);
  return compose_prompt(v, tape.constant_ref(weights)).value();
}

std::size_t param_count(PoolMode mode, const ParamCountInput& in) {
  if (mode == PoolMode::MetaPrompter) {
    return in.pool_size * (in.output_dim + in.prompt_len * in.input_dim);
  }
  return in.encoder_params + in.prompt_len * in.input_dim;
}

}  // namespace mpr
