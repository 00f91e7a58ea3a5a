#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"
#include "metaprompter/prompt_pool.hpp"
#include "support/fixtures.hpp"

using namespace mpr;
using fixtures::random_tensor;

namespace {

Tensor random_simplex(std::size_t k, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  Tensor a({k});
  double total = 0;
  for (double& v : a.data()) total += (v = e(rng));
  for (double& v : a.data()) v /= total;
  return a;
}

PromptPool manual_pool(std::size_t k, std::size_t lp, std::size_t d, Rng& rng) {
  PromptPool p;
  p.pool_size = k;
  p.prompt_len = lp;
  p.dim = d;
  p.keys = random_tensor({k, d}, rng);
  p.values = random_tensor({k, lp * d}, rng);
  return p;
}

}  // namespace

TEST_CASE("init copies label-token embeddings") {
  fixtures::Toy toy = fixtures::make_toy(0, 4);
  const Vocabulary& v = toy.corpus.vocab();
  const TokenSeq labels = {v.id("w0"), v.id("w1"), v.id("w2"), v.id("w3")};
  PoolConfig cfg;
  cfg.pool_size = 5;
  cfg.prompt_len = 3;
  const PromptPool p = init_pool(cfg, toy.encoder, labels, 42);
  CHECK(p.keys.rows() == 5);
  CHECK(p.keys.cols() == 4);
  CHECK(p.values.rows() == 5);
  CHECK(p.values.cols() == 12);
  for (std::size_t i = 0; i < 5; ++i) {
    const Tensor theta = p.value(i);
    for (std::size_t r = 0; r < 3; ++r) {
      bool found = false;
      for (TokenId t : labels) {
        bool same = true;
        for (std::size_t j = 0; j < 4; ++j) same &= theta.at(r, j) == toy.encoder.token_embedding.at(t, j);
        found |= same;
      }
      CHECK(found);
    }
  }
  CHECK(init_pool(cfg, toy.encoder, labels, 42) == p);
  CHECK_FALSE(init_pool(cfg, toy.encoder, labels, 43) == p);
  CHECK_THROWS_AS(init_pool(cfg, toy.encoder, {}, 1), ConfigError);
  cfg.pool_size = 0;
  CHECK_THROWS_AS(init_pool(cfg, toy.encoder, labels, 1), ConfigError);
}

TEST_CASE("key init is zero-mean with the configured spread") {
  fixtures::Toy toy = fixtures::make_toy(0, 8);
  PoolConfig cfg;
  cfg.pool_size = 500;
  cfg.prompt_len = 1;
  const PromptPool p = init_pool(cfg, toy.encoder, {toy.corpus.vocab().id("w0")}, 3);
  double s = 0, ss = 0;
  for (double v : p.keys.data()) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(p.keys.size());
  const double mean = s / n;
  const double sd = std::sqrt(ss / n - mean * mean);
  // 4000 draws: 4 standard errors on each statistic.
  CHECK(std::abs(mean) < 4 * 0.02 / std::sqrt(n));
  CHECK(std::abs(sd - 0.02) < 4 * 0.02 / std::sqrt(2 * n));
}

TEST_CASE("MetaPrompting mode forces a single prompt") {
  fixtures::Toy toy = fixtures::make_toy(0, 4, 6, 2, 1, PoolMode::MetaPrompting);
  CHECK(toy.pool.pool_size == 1);
  CHECK(toy.pool.params().size() == 1);
  CHECK(toy.pool.params()[0] == &toy.pool.values);

  Tape t;
  const PoolVars pv = bind(t, toy.pool, true);
  CHECK_FALSE(pv.keys.requires_grad());
  Rng rng = make_rng(1, 0);
  for (int i = 0; i < 5; ++i) {
    const Var prompt = instance_prompt(pv, random_tensor({4}, rng));
    CHECK(prompt.value() == toy.pool.value(0));
  }
}

TEST_CASE("attention weights") {
  Rng rng = make_rng(2, 0);
  PromptPool one = manual_pool(1, 2, 3, rng);
  for (int i = 0; i < 5; ++i) {
    CHECK(attention_weights(one, random_tensor({3}, rng)) == Tensor::vector({1.0}));
  }

  PromptPool same = manual_pool(4, 1, 3, rng);
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) same.keys.at(i, j) = same.keys.at(0, j);
  }
  const Tensor uniform = attention_weights(same, random_tensor({3}, rng));
  for (double v : uniform.data()) {
    CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }

  PromptPool two = manual_pool(2, 1, 2, rng);
  two.keys = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor a = attention_weights(two, Tensor::vector({1, 0}));
  const double e = std::exp(1.0 / std::sqrt(2.0));
  CHECK(std::abs(a[0] - e / (e + 1.0)) <= 1e-15);
  CHECK(std::abs(a[1] - 1.0 / (e + 1.0)) <= 1e-15);
  CHECK(a[0] == doctest::Approx(0.6698).epsilon(1e-4));

  two.scaled_attention = false;
  const Tensor u = attention_weights(two, Tensor::vector({1, 0}));
  CHECK(std::abs(u[0] - std::exp(1.0) / (std::exp(1.0) + 1.0)) <= 1e-15);

  CHECK_THROWS_AS(attention_weights(two, Tensor::vector({1, 0, 0})), DimensionError);
}

TEST_CASE("attention properties over random pools") {
  Rng rng = make_rng(3, 0);
  for (int i = 0; i < 100; ++i) {
    PromptPool p = manual_pool(6, 1, 5, rng);
    const Tensor q = random_tensor({5}, rng, 3.0);
    const Tensor a = attention_weights(p, q);
    double total = 0;
    for (double v : a.data()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);

    // Adding c*1 to K q: shift every key by c q / |q|^2.
    double qq = 0;
    for (double v : q.data()) qq += v * v;
    PromptPool shifted = p;
    const double c = 5.0;
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t j = 0; j < 5; ++j) shifted.keys.at(r, j) += c * q[j] / qq;
    }
    const Tensor b = attention_weights(shifted, q);
    auto argmax = [](const Tensor& t) {
      return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
    };
    CHECK(argmax(a) == argmax(b));

    PromptPool scaled = p;
    for (double& v : scaled.keys.data()) v *= 3.7;
    const Tensor as = attention_weights(scaled, q);
    double st = 0;
    for (double v : as.data()) st += v;
    CHECK(std::abs(st - 1.0) <= 1e-12);
  }
}

TEST_CASE("compose prompt") {
  Rng rng = make_rng(4, 0);
  const PromptPool p = manual_pool(3, 2, 4, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor onehot({3});
    onehot[i] = 1.0;
    CHECK(compose_prompt(p, onehot) == p.value(i));
  }
  const PromptPool p2 = manual_pool(2, 2, 4, rng);
  const Tensor mean = compose_prompt(p2, Tensor::vector({0.5, 0.5}));
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(std::abs(mean[k] - 0.5 * (p2.values.at(0, k) + p2.values.at(1, k))) <= 1e-15);
  }

  for (int n = 0; n < 200; ++n) {
    const PromptPool q = manual_pool(5, 2, 3, rng);
    const Tensor a = random_simplex(5, rng);
    const Tensor out = compose_prompt(q, a);
    for (std::size_t k = 0; k < 6; ++k) {
      double lo = q.values.at(0, k), hi = lo;
      for (std::size_t i = 1; i < 5; ++i) {
        lo = std::min(lo, q.values.at(i, k));
        hi = std::max(hi, q.values.at(i, k));
      }
      CHECK(out[k] >= lo - 1e-12);
      CHECK(out[k] <= hi + 1e-12);
    }
  }
}

TEST_CASE("compose prompt is linear in values and weights") {
  Rng rng = make_rng(5, 0);
  for (int n = 0; n < 20; ++n) {
    const PromptPool p = manual_pool(4, 2, 3, rng);
    PromptPool p2 = manual_pool(4, 2, 3, rng);
    const Tensor a = random_simplex(4, rng), b = random_simplex(4, rng);
    const double s = 0.3;
    Tensor mix({4});
    for (std::size_t i = 0; i < 4; ++i) mix[i] = s * a[i] + (1 - s) * b[i];
    const Tensor lhs = compose_prompt(p, mix);
    const Tensor ca = compose_prompt(p, a), cb = compose_prompt(p, b);
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(lhs[k] - (s * ca[k] + (1 - s) * cb[k])) <= 1e-12);

    PromptPool sum = p;
    for (std::size_t k = 0; k < sum.values.size(); ++k) sum.values[k] += 2.0 * p2.values[k];
    const Tensor l2 = compose_prompt(sum, a);
    const Tensor c2 = compose_prompt(p2, a);
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(l2[k] - (ca[k] + 2.0 * c2[k])) <= 1e-12);
  }
}

TEST_CASE("instance prompt") {
  fixtures::Toy toy = fixtures::make_toy(6, 4, 3, 2);
  Tape t;
  const PoolVars pv = bind(t, toy.pool, false);
  const TokenSeq x = toy.corpus.documents()[0].tokens;
  const Var a = instance_prompt(pv, x, toy.encoder, toy.tmpl.probe_anchors);
  const Var b = instance_prompt(pv, TokenSeq(x), toy.encoder, toy.tmpl.probe_anchors);
  CHECK(a.value() == b.value());
  const Tensor q = query_embedding(toy.encoder, x, toy.tmpl.probe_anchors);
  CHECK(a.value() == compose_prompt(toy.pool, attention_weights(toy.pool, q)));

  // A downstream loss reaches both keys and values.
  Tape g;
  const PoolVars leaves = bind(g, toy.pool, true);
  const EncoderVars enc = bind(g, toy.encoder);
  const Var prompt = instance_prompt(leaves, q);
  const Var h = encode(enc, wrap(enc, x, prompt, toy.tmpl.anchors), false).h_mask;
  const auto grads = g.backward(ops::sum(ops::tanh(h)), {leaves.keys, leaves.values});
  auto nonzero = [](const Tensor& t) {
    return std::any_of(t.data().begin(), t.data().end(), [](double v) { return v != 0.0; });
  };
  CHECK(nonzero(grads[0]));
  CHECK(nonzero(grads[1]));
}

TEST_CASE("param_count") {
  CHECK(param_count(PoolMode::MetaPrompter, {8, 8, 768, 768, 0}) == 55296);
  CHECK(param_count(PoolMode::MetaPrompter, {1, 1, 1, 1, 0}) == 2);
  fixtures::Toy toy = fixtures::make_toy(0, 4);
  const std::size_t dphi = toy.encoder.parameter_count();
  std::size_t manual = 0;
  for (const auto& [name, t] : toy.encoder.named()) manual += t->size();
  CHECK(dphi == manual);
  CHECK(param_count(PoolMode::MetaPrompting, {1, 3, 4, 4, dphi}) == dphi + 12);
}

TEST_CASE("pool checkpoint round trip") {
  fixtures::Toy toy = fixtures::make_toy(7, 4, 3, 2);
  toy.pool.scaled_attention = false;
  const auto path = std::filesystem::temp_directory_path() / "mpr_test_pool.ckpt";
  save_pool(toy.pool, path);
  const PromptPool back = load_pool(path);
  CHECK(back == toy.pool);
  CHECK(back.keys == toy.pool.keys);
  CHECK(back.values == toy.pool.values);
  CHECK_FALSE(back.scaled_attention);
  CHECK(back.mode == PoolMode::MetaPrompter);
  std::filesystem::remove(path);
}

TEST_CASE("pool mode names") {
  CHECK(parse_pool_mode(to_string(PoolMode::MetaPrompter)) == PoolMode::MetaPrompter);
  CHECK(parse_pool_mode(to_string(PoolMode::MetaPrompting)) == PoolMode::MetaPrompting);
  CHECK_THROWS_AS(parse_pool_mode("bogus"), ConfigError);
}
