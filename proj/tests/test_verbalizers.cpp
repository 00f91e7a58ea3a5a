#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "metaprompter/errors.hpp"
#include "metaprompter/ops.hpp"
#include "metaprompter/verbalizer.hpp"
#include "support/fixtures.hpp"

using namespace mpr;
using fixtures::random_tensor;

namespace {

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.data().begin(), t.data().end()) -
                                  t.data().begin());
}

Tensor unit(Tensor t) {
  double n = 0;
  for (double v : t.data()) n += v * v;
  n = std::sqrt(n);
  for (double& v : t.data()) v /= n;
  return t;
}

}  // namespace

TEST_CASE("hard_prob examples") {
  const std::size_t V = 10;
  const HandVerbalizer verb({{2}, {3, 4}, {5, 6, 7}}, V);
  const Tensor uniform = hard_prob(Tensor(std::vector<std::size_t>{V}, std::vector<double>(V, 0.1)), verb);
  for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / V).epsilon(1e-15));

  Tensor onehot({V});
  onehot[2] = 1.0;
  CHECK(hard_prob(onehot, verb)[0] == 1.0);

  Tensor mix({V});
  mix[3] = 0.2;
  mix[4] = 0.4;
  mix[0] = 0.4;
  CHECK(hard_prob(mix, verb)[1] == doctest::Approx(0.3).epsilon(1e-15));

  CHECK_THROWS_AS(HandVerbalizer({{1}, {}}, V), ConfigError);
  CHECK_THROWS_AS(HandVerbalizer({{1}, {V}}, V), ConfigError);
}

TEST_CASE("hard_prob bounds with disjoint token sets") {
  Rng rng = make_rng(1, 0);
  const HandVerbalizer verb({{5, 6}, {7}, {8, 9, 10}}, 12);
  Tape t;
  for (int i = 0; i < 100; ++i) {
    const Tensor p = ops::softmax(t.constant(random_tensor({12}, rng, 3.0))).value();
    const Tensor h = hard_prob(p, verb);
    double weighted = 0;
    for (std::size_t y = 0; y < 3; ++y) {
      CHECK(h[y] >= 0.0);
      CHECK(h[y] <= 1.0);
      weighted += static_cast<double>(verb.tokens(y).size()) * h[y];
    }
    CHECK(weighted <= 1.0 + 1e-15);
  }
}

TEST_CASE("label embeddings") {
  Rng rng = make_rng(2, 0);
  Tape t;
  const Tensor h0 = random_tensor({4}, rng);
  {
    const std::vector<Var> emb = {t.constant(h0)};
    const std::vector<Sample> s = {{0, 0}};
    const Tensor v = compute_label_embeddings(emb, s, 1).value();
    for (std::size_t j = 0; j < 4; ++j) CHECK(v.at(0, j) == h0[j]);
  }
  {
    const std::vector<Var> emb = {t.constant(h0), t.constant(h0)};
    const std::vector<Sample> s = {{0, 0}, {1, 0}};
    const Tensor v = compute_label_embeddings(emb, s, 1).value();
    for (std::size_t j = 0; j < 4; ++j) CHECK(v.at(0, j) == h0[j]);
  }

  // 5-shot, 3 labels, shuffled order.
  std::vector<Tensor> raw;
  std::vector<Sample> samples;
  for (std::size_t doc = 0; doc < 15; ++doc) {
    raw.push_back(random_tensor({4}, rng));
    samples.push_back({doc, doc % 3});
  }
  std::vector<Var> emb;
  for (const Tensor& r : raw) emb.push_back(t.constant(r));
  const Tensor v = compute_label_embeddings(emb, samples, 3).value();
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t j = 0; j < 4; ++j) {
      double total = 0;
      for (std::size_t doc = y; doc < 15; doc += 3) total += raw[doc][j];
      CHECK(v.at(y, j) == doctest::Approx(total / 5.0).epsilon(1e-15));
    }
  }

  std::vector<std::size_t> order(15);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int rep = 0; rep < 10; ++rep) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Var> e2;
    std::vector<Sample> s2;
    for (std::size_t i : order) {
      e2.push_back(emb[i]);
      s2.push_back(samples[i]);
    }
    CHECK(compute_label_embeddings(e2, s2, 3).value() == v);
  }

  const std::vector<Sample> missing = {{0, 0}, {1, 0}};
  const std::vector<Var> two = {emb[0], emb[1]};
  CHECK_THROWS_AS(compute_label_embeddings(two, missing, 2), MissingClassError);
}

TEST_CASE("repverb_prob") {
  const std::size_t N = 5;
  Tensor labels({N, N});
  for (std::size_t i = 0; i < N; ++i) labels.at(i, i) = 1.0;
  const Tensor p = repverb_prob(Tensor::vector({0, 0, 1, 0, 0}), labels, 10.0);
  const double e10 = std::exp(10.0);
  CHECK(std::abs(p[2] - e10 / (e10 + 4.0)) <= 1e-15);
  CHECK(p[2] == doctest::Approx(0.99981).epsilon(1e-5));

  Rng rng = make_rng(3, 0);
  for (int i = 0; i < 20; ++i) {
    const Tensor v = random_tensor({4, 6}, rng);
    const Tensor h = random_tensor({6}, rng);
    const Tensor flat = repverb_prob(h, v, 1e-9);
    for (double x : flat.data()) CHECK(std::abs(x - 0.25) <= 1e-8);
    const Tensor sharp = repverb_prob(h, v, 1e6);
    const std::size_t top = argmax(sharp);
    CHECK(sharp[top] == doctest::Approx(1.0).epsilon(1e-12));

    Tensor scaled = h;
    for (double& x : scaled.data()) x *= 17.0;
    CHECK(argmax(repverb_prob(scaled, v, 10.0)) == argmax(repverb_prob(h, v, 10.0)));

    const Tensor soft = repverb_prob(h, v, 10.0);
    double total = 0;
    for (double x : soft.data()) total += x;
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }

  CHECK_THROWS_AS(repverb_prob(Tensor::vector({0, 0, 0, 0, 0}), labels, 10.0), DegenerateVectorError);
  CHECK_THROWS_AS(repverb_prob(Tensor::vector({0, 0, 1, 0, 0}), labels, 0.0), ConfigError);
}

TEST_CASE("euclidean similarity variant") {
  const Tensor v = Tensor::matrix(2, 2, {0, 0, 3, 4});
  const Tensor h = Tensor::vector({1, 0});
  const Tensor p = repverb_prob(h, v, 0.5, Similarity::Euclidean);
  const double a = std::exp(-0.5 * 1.0), b = std::exp(-0.5 * 20.0);
  CHECK(std::abs(p[0] - a / (a + b)) <= 1e-15);
  CHECK(parse_similarity(to_string(Similarity::Euclidean)) == Similarity::Euclidean);
  CHECK_THROWS_AS(parse_similarity("manhattan"), ConfigError);
}

TEST_CASE("combined_prob") {
  const Tensor hard = Tensor::vector({0.2, 0.4});
  const Tensor soft = Tensor::vector({0.6, 0.4});
  CHECK(combined_prob(hard, soft, 0.0) == hard);
  CHECK(combined_prob(hard, soft, 1.0) == soft);
  const Tensor half = combined_prob(hard, soft, 0.5);
  CHECK(half[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(half[1] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(combined_prob(hard, soft, -0.1), ConfigError);
  CHECK_THROWS_AS(combined_prob(hard, soft, 1.1), ConfigError);

  Rng rng = make_rng(4, 0);
  Tape t;
  for (int i = 0; i < 50; ++i) {
    const Tensor h = ops::softmax(t.constant(random_tensor({5}, rng))).value();
    const Tensor s = ops::softmax(t.constant(random_tensor({5}, rng))).value();
    CHECK(argmax(combined_prob(h, s, 0.0)) == argmax(h));
    CHECK(argmax(combined_prob(h, s, 1.0)) == argmax(s));
  }
}

TEST_CASE("prediction_nll") {
  Tape t;
  const Var s = t.constant(Tensor::vector({0.1, 0.3}));
  CHECK(prediction_nll(s, 1, true).value().item() == doctest::Approx(-std::log(0.75)).epsilon(1e-15));
  CHECK(prediction_nll(s, 1, false).value().item() == doctest::Approx(-std::log(0.3)).epsilon(1e-15));
  CHECK_THROWS(prediction_nll(s, 2, true));
}

TEST_CASE("warp head") {
  Rng rng = make_rng(5, 0);
  // Separable toy: class y features cluster around 3 e_y.
  std::vector<Tensor> feats;
  std::vector<Sample> support;
  for (std::size_t doc = 0; doc < 9; ++doc) {
    Tensor f = random_tensor({4}, rng, 0.3);
    f[doc % 3] += 3.0;
    feats.push_back(f);
    support.push_back({doc, doc % 3});
  }
  WarpConfig cfg;
  cfg.seed = 9;
  const WarpHead head = warp_fit(feats, support, 3, cfg);
  CHECK(head.label_embeddings.rows() == 3);
  CHECK(head.label_embeddings.cols() == 4);
  REQUIRE(head.support_losses.size() == 6);
  CHECK(head.support_losses.back() < head.support_losses.front());
  CHECK(warp_fit(feats, support, 3, cfg).label_embeddings == head.label_embeddings);

  const std::vector<Sample> two_labels = {{0, 0}, {1, 1}};
  const std::vector<Tensor> two_feats = {feats[0], feats[1]};
  CHECK_THROWS_AS(warp_fit(two_feats, two_labels, 3, cfg), MissingClassError);

  WarpHead same;
  same.label_embeddings = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
  const Tensor flat = warp_predict(Tensor::vector({0.3, -1}), same);
  for (double v : flat.data()) {
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  for (int i = 0; i < 20; ++i) {
    WarpHead r;
    r.label_embeddings = random_tensor({4, 5}, rng);
    const Tensor p = warp_predict(random_tensor({5}, rng), r);
    double total = 0;
    for (double v : p.data()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);

    WarpHead u;
    u.label_embeddings = Tensor({4, 5});
    for (std::size_t y = 0; y < 4; ++y) {
      const Tensor row = unit(random_tensor({5}, rng));
      for (std::size_t j = 0; j < 5; ++j) u.label_embeddings.at(y, j) = row[j];
    }
    const Tensor h = unit(random_tensor({5}, rng));
    const Tensor pw = warp_predict(h, u);
    const Tensor pr = repverb_prob(h, u.label_embeddings, 1.0);
    for (std::size_t y = 0; y < 4; ++y) CHECK(std::abs(pw[y] - pr[y]) <= 1e-12);
  }
}

TEST_CASE("hand verbalizer from episode metadata") {
  fixtures::Toy toy = fixtures::make_toy(0);
  Episode ep = toy.episode;
  std::swap(ep.classes[0], ep.classes[1]);
  const HandVerbalizer v = HandVerbalizer::for_episode(toy.corpus, ep);
  CHECK(v.labels() == 2);
  CHECK(v.tokens(0) == toy.corpus.class_info(1).label_tokens);
  CHECK(v.tokens(1) == toy.corpus.class_info(0).label_tokens);
}

TEST_CASE("verbalizer definition file") {
  const Vocabulary vocab = Vocabulary::with_reserved({"coffee", "tea", "price"});
  const auto path = std::filesystem::temp_directory_path() / "mpr_test_verbalizer.json";
  {
    std::ofstream out(path);
    out << R"({"drinks": ["coffee", "Tea"], "money": ["price"]})";
  }
  const auto map = load_verbalizer_file(path, vocab);
  CHECK(map.size() == 2);
  CHECK(map.at("drinks") == TokenSeq{vocab.id("coffee"), vocab.id("tea")});
  CHECK(map.at("money") == TokenSeq{vocab.id("price")});
  {
    std::ofstream out(path);
    out << R"({"drinks": ["coffee", "milk"]})";
  }
  CHECK_THROWS_AS(load_verbalizer_file(path, vocab), ValidationError);
  {
    std::ofstream out(path);
    out << R"({"drinks": []})";
  }
  CHECK_THROWS(load_verbalizer_file(path, vocab));
  std::filesystem::remove(path);
}
