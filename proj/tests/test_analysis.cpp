#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "metaprompter/analysis.hpp"
#include "metaprompter/errors.hpp"
#include "support/fixtures.hpp"

using namespace mpr;

namespace {

const fixtures::SmallRun& small_run() {
  static const fixtures::SmallRun run = fixtures::make_small_run(0.7, 0, 150);
  return run;
}

PoolConfig pool_config(std::size_t k, std::size_t lp, PoolMode mode = PoolMode::MetaPrompter) {
  PoolConfig pc;
  pc.mode = mode;
  pc.pool_size = k;
  pc.prompt_len = lp;
  pc.key_init_std = 0.5;
  return pc;
}

double cos_of(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

TokenSeq all_label_tokens(const Corpus& c) {
  TokenSeq out;
  for (const ClassInfo& info : c.classes()) out.insert(out.end(), info.label_tokens.begin(), info.label_tokens.end());
  return out;
}

}  // namespace

TEST_CASE("class attention rows lie on the simplex") {
  const auto& run = small_run();
  const TaskEnv env(run.corpus, run.encoder, run.tmpl);
  const MetaParams meta = init_meta_params(pool_config(4, 2), run.encoder, run.corpus, 5);
  AdaptConfig cfg;
  cfg.train_steps = 2;
  const ClassAttention att = class_attention(meta, env, cfg, {3, 2, 2}, 12, 9);
  REQUIRE(att.weights.rows() == 6);
  REQUIRE(att.weights.cols() == 4);
  std::size_t tasks = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(att.present[r]);
    tasks += att.tasks[r];
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(att.weights.at(r, i) > 0.0);
      sum += att.weights.at(r, i);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
  CHECK(tasks == 12 * 3);
  CHECK(att.class_names[0] == run.corpus.class_info(att.class_ids[0]).name);
}

TEST_CASE("class attention matches a direct recomputation") {
  const auto& run = small_run();
  const TaskEnv env(run.corpus, run.encoder, run.tmpl);
  const MetaParams meta = init_meta_params(pool_config(3, 1), run.encoder, run.corpus, 2);
  AdaptConfig cfg;
  cfg.train_steps = 1;
  const EpisodeShape shape{2, 3, 1};
  const std::size_t episodes = 3;
  const ClassAttention att = class_attention(meta, env, cfg, shape, episodes, 4);

  std::vector<std::vector<double>> sums(6, std::vector<double>(3, 0.0));
  std::vector<std::size_t> count(6, 0);
  const std::vector<std::size_t> ids = run.corpus.classes_in(Split::Train);
  for (std::size_t e = 0; e < episodes; ++e) {
    const Episode ep = sample_episode(run.corpus, Split::Train, shape, 4, e);
    const AdaptResult a = inner_adapt(meta, env, ep, cfg, 1);
    const PromptPool& p = a.adapted.pool;
    for (std::size_t y = 0; y < 2; ++y) {
      std::vector<double> mean(3, 0.0);
      for (const Sample& s : ep.support) {
        if (s.label != y) continue;
        const Tensor& q = env.query(s.doc);
        std::vector<double> logits(3, 0.0);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < p.dim; ++j) logits[i] += p.keys.at(i, j) * q[j];
        const std::vector<double> w = oracle::softmax(logits, std::sqrt(static_cast<double>(p.dim)));
        for (std::size_t i = 0; i < 3; ++i) mean[i] += w[i] / 3.0;
      }
      const auto r = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), ep.classes[y]) - ids.begin());
      for (std::size_t i = 0; i < 3; ++i) sums[r][i] += mean[i];
      ++count[r];
    }
  }
  for (std::size_t r = 0; r < 6; ++r) {
    CAPTURE(r);
    CHECK(att.tasks[r] == count[r]);
    CHECK(att.present[r] == (count[r] > 0));
    for (std::size_t i = 0; i < 3; ++i) {
      if (count[r] == 0) {
        CHECK(std::isnan(att.weights.at(r, i)));
      } else {
        CHECK(att.weights.at(r, i) == doctest::Approx(sums[r][i] / count[r]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("class attention with a single prompt and absent classes") {
  const auto& run = small_run();
  const TaskEnv env(run.corpus, run.encoder, run.tmpl);
  const MetaParams meta =
      init_meta_params(pool_config(1, 2, PoolMode::MetaPrompting), run.encoder, run.corpus, 1);
  AdaptConfig cfg;
  cfg.train_steps = 1;
  const ClassAttention att = class_attention(meta, env, cfg, {2, 1, 1}, 1, 0);
  std::size_t absent = 0;
  for (std::size_t r = 0; r < att.class_ids.size(); ++r) {
    if (att.present[r]) {
      CHECK(att.weights.at(r, 0) == 1.0);
    } else {
      ++absent;
      CHECK(std::isnan(att.weights.at(r, 0)));
    }
  }
  CHECK(absent == 4);
  const std::string csv = att.csv();
  CHECK(csv.rfind("class,prompt_1\n", 0) == 0);
  CHECK(csv.find(",absent\n") != std::string::npos);
  CHECK(csv.find(",1\n") != std::string::npos);
  CHECK_THROWS_AS(class_attention(meta, env, cfg, {2, 1, 1}, 0, 0), ConfigError);
}

TEST_CASE("nearest tokens agree with a brute-force scan") {
  const auto& run = small_run();
  const Vocabulary& vocab = run.corpus.vocab();
  const MetaParams meta = init_meta_params(pool_config(3, 2), run.encoder, run.corpus, 8);
  PromptPool pool = meta.pool;
  Rng rng = make_rng(21, 0);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (double& v : pool.values.data()) v += noise(rng);

  const std::size_t m = 7;
  const auto table = nearest_tokens(pool, run.encoder, vocab, m);
  REQUIRE(table.size() == 3);
  const std::size_t d = pool.dim;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<std::pair<double, TokenId>> all;
    const Tensor theta = pool.value(i);
    for (TokenId t = 0; t < vocab.size(); ++t) {
      if (vocab.is_reserved(t)) continue;
      const Tensor e = run.encoder.token_embedding.row(t);
      double best = -2.0;
      for (std::size_t j = 0; j < pool.prompt_len; ++j) best = std::max(best, cos_of(theta.data().subspan(j * d, d), e.data()));
      all.push_back({-best, t});
    }
    std::sort(all.begin(), all.end());
    REQUIRE(table[i].size() == m);
    for (std::size_t r = 0; r < m; ++r) {
      CHECK(table[i][r].id == all[r].second);
      CHECK(table[i][r].token == vocab.token(all[r].second));
      CHECK(table[i][r].score == doctest::Approx(-all[r].first).epsilon(1e-12));
      CHECK_FALSE(vocab.is_reserved(table[i][r].id));
    }
  }
  const std::string csv = nearest_tokens_csv(table);
  CHECK(csv.rfind("prompt,rank,token,score\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 7);
}

TEST_CASE("freshly initialized prompts are nearest to their copied label tokens") {
  const auto& run = small_run();
  const Vocabulary& vocab = run.corpus.vocab();
  const TokenSeq labels = all_label_tokens(run.corpus);
  const PromptPool pool = init_pool(pool_config(6, 1), run.encoder, labels, 13);
  const auto table = nearest_tokens(pool, run.encoder, vocab, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    const Tensor theta = pool.value(i);
    TokenId copied = 0;
    for (TokenId t : labels) {
      const Tensor e = run.encoder.token_embedding.row(t);
      if (std::equal(e.data().begin(), e.data().end(), theta.data().begin())) copied = t;
    }
    CHECK(table[i][0].id == copied);
    CHECK(table[i][0].score == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("nearest token ties and limits") {
  const auto& run = small_run();
  const Vocabulary& vocab = run.corpus.vocab();
  EncoderParams enc = run.encoder;
  const TokenId a = vocab.id("topic");
  const TokenId b = vocab.size() - 1;
  REQUIRE(a < b);
  for (std::size_t j = 0; j < enc.config.dim; ++j) enc.token_embedding[b * enc.config.dim + j] = enc.token_embedding.at(a, j);
  PromptPool pool = init_pool(pool_config(1, 1), enc, {a}, 0);
  const auto table = nearest_tokens(pool, enc, vocab, 2);
  CHECK(table[0][0].id == a);
  CHECK(table[0][1].id == b);
  CHECK(table[0][0].score == table[0][1].score);

  std::size_t candidates = 0;
  for (TokenId t = 0; t < vocab.size(); ++t) candidates += vocab.is_reserved(t) ? 0 : 1;
  CHECK(nearest_tokens(pool, enc, vocab, candidates)[0].size() == candidates);
  CHECK_THROWS_AS(nearest_tokens(pool, enc, vocab, candidates + 1), ConfigError);
}

TEST_CASE("prompt topic similarity") {
  const auto& run = small_run();
  const Corpus& c = run.corpus;
  const TokenId w = c.class_info(0).label_tokens[0];
  const PromptPool single = init_pool(pool_config(1, 1), run.encoder, {w}, 0);
  const auto one = prompt_topic_similarity(single, run.encoder, {{w}}, {"x"});
  CHECK(one.cosine.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  PromptPool pool = init_pool(pool_config(2, 3), run.encoder, all_label_tokens(c), 6);
  Rng rng = make_rng(3, 0);
  std::normal_distribution<double> noise(0.0, 0.4);
  for (double& v : pool.values.data()) v += noise(rng);
  std::vector<TokenSeq> sets;
  std::vector<std::string> names;
  for (const ClassInfo& info : c.classes()) {
    sets.push_back(info.label_tokens);
    names.push_back(info.name);
  }
  const auto sim = prompt_topic_similarity(pool, run.encoder, sets, names);
  REQUIRE(sim.cosine.rows() == 6);
  REQUIRE(sim.cosine.cols() == c.classes().size());
  CHECK(sim.row_labels == std::vector<std::string>{"(1,1)", "(1,2)", "(1,3)", "(2,1)", "(2,2)", "(2,3)"});
  const std::size_t d = pool.dim;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t y = 0; y < sets.size(); ++y) {
        std::vector<double> topic(d, 0.0);
        for (TokenId t : sets[y])
          for (std::size_t k = 0; k < d; ++k) topic[k] += run.encoder.token_embedding.at(t, k) / sets[y].size();
        std::vector<double> row(d);
        for (std::size_t k = 0; k < d; ++k) row[k] = pool.values.at(i, j * d + k);
        const double v = sim.cosine.at(i * 3 + j, y);
        CHECK(v == doctest::Approx(cos_of(row, topic)).epsilon(1e-12));
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
    }
  }
  const std::string csv = sim.csv();
  CHECK(csv.rfind("prompt_row,class_00,", 0) == 0);
  CHECK(csv.find("\n\"(2,3)\",") != std::string::npos);
  CHECK_THROWS_AS(prompt_topic_similarity(pool, run.encoder, {{}}, {"x"}), ConfigError);
  CHECK_THROWS_AS(prompt_topic_similarity(pool, run.encoder, sets, {"x"}), DimensionError);
}

TEST_CASE("pca projection properties") {
  Rng rng = make_rng(17, 0);
  Tensor data = fixtures::random_tensor({30, 5}, rng);
  // Anisotropic so the two leading components are well separated.
  for (std::size_t r = 0; r < 30; ++r) {
    data[r * 5] *= 4.0;
    data[r * 5 + 1] *= 2.0;
  }
  const Tensor xy = pca_2d(data);
  REQUIRE(xy.rows() == 30);
  REQUIRE(xy.cols() == 2);
  double m0 = 0, m1 = 0, v0 = 0, v1 = 0, cov = 0;
  for (std::size_t r = 0; r < 30; ++r) {
    m0 += xy.at(r, 0);
    m1 += xy.at(r, 1);
    v0 += xy.at(r, 0) * xy.at(r, 0);
    v1 += xy.at(r, 1) * xy.at(r, 1);
    cov += xy.at(r, 0) * xy.at(r, 1);
  }
  CHECK(std::abs(m0) <= 1e-10);
  CHECK(std::abs(m1) <= 1e-10);
  CHECK(std::abs(cov) <= 1e-9);
  CHECK(v0 >= v1);

  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor shuffled({30, 5});
  for (std::size_t r = 0; r < 30; ++r)
    for (std::size_t c = 0; c < 5; ++c) shuffled[r * 5 + c] = data.at(perm[r], c);
  const Tensor xy2 = pca_2d(shuffled);
  for (std::size_t r = 0; r < 30; ++r) {
    CHECK(xy2.at(r, 0) == doctest::Approx(xy.at(perm[r], 0)).epsilon(1e-9));
    CHECK(xy2.at(r, 1) == doctest::Approx(xy.at(perm[r], 1)).epsilon(1e-9));
  }

  // Points on a plane keep their pairwise distances.
  Tensor plane({10, 3});
  for (std::size_t r = 0; r < 10; ++r) {
    const double u = static_cast<double>(r), v = static_cast<double>((r * 7) % 5);
    plane[r * 3] = u;
    plane[r * 3 + 1] = v;
    plane[r * 3 + 2] = u + v;
  }
  const Tensor flat = pca_2d(plane);
  for (std::size_t a = 0; a < 10; ++a) {
    for (std::size_t b = a + 1; b < 10; ++b) {
      double d3 = 0, d2 = 0;
      for (std::size_t c = 0; c < 3; ++c) d3 += std::pow(plane.at(a, c) - plane.at(b, c), 2);
      for (std::size_t c = 0; c < 2; ++c) d2 += std::pow(flat.at(a, c) - flat.at(b, c), 2);
      CHECK(d2 == doctest::Approx(d3).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(pca_2d(Tensor({1, 3})), DimensionError);
  CHECK_THROWS_AS(pca_2d(Tensor({4, 1})), DimensionError);
}

TEST_CASE("embedding export") {
  const auto& run = small_run();
  const TaskEnv env(run.corpus, run.encoder, run.tmpl);
  const MetaParams meta = init_meta_params(pool_config(4, 2), run.encoder, run.corpus, 3);
  AdaptConfig cfg;
  cfg.eval_steps = 2;
  const Episode ep = sample_episode(run.corpus, Split::Train, {5, 5, 15}, 1, 0);
  const EmbeddingExport ex = export_embeddings(meta, env, ep, cfg);
  REQUIRE(ex.points.size() == 105);
  REQUIRE(ex.raw.rows() == 105);
  for (std::size_t r = 0; r < 100; ++r) CHECK(ex.points[r].kind == "sample");
  for (std::size_t r = 100; r < 105; ++r) {
    CHECK(ex.points[r].kind == "label");
    CHECK(ex.points[r].class_name == run.corpus.class_info(ep.classes[r - 100]).name);
  }
  CHECK(ex.points[0].class_name == run.corpus.class_info(ep.classes[ep.support[0].label]).name);

  // Independent recomputation of the label embeddings with the adapted pool.
  const AdaptResult a = inner_adapt(meta, env, ep, cfg, cfg.eval_steps);
  oracle::RefTask task;
  task.encoder = &run.encoder;
  for (const Document& doc : run.corpus.documents()) task.docs.push_back(doc.tokens);
  task.queries.resize(task.docs.size());
  for (const Sample& s : ep.support) {
    task.queries[s.doc] = oracle::encode_mask<double>(run.encoder, task.docs[s.doc], nullptr,
                                                      run.tmpl.probe_anchors, false).h;
  }
  for (std::size_t cls : ep.classes) task.label_tokens.push_back(run.corpus.class_info(cls).label_tokens);
  task.anchors = run.tmpl.anchors;
  task.episode = ep;
  task.episode.query.clear();
  const auto ref = oracle::episode_loss<double>(task, oracle::pool_from<double>(a.adapted.pool, false),
                                                false, fixtures::ref_settings(cfg));
  const std::size_t d = run.encoder.config.dim;
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(std::abs(ex.raw.at(100 + y, j) - ref.label_embeddings[y][j]) <= 1e-9);
    }
  }

  // Projected labels sit at the mean of their projected support points.
  const Tensor xy = pca_2d(ex.raw);
  for (std::size_t y = 0; y < 5; ++y) {
    double mx = 0, my = 0;
    for (std::size_t r = 0; r < ep.support.size(); ++r) {
      if (ep.support[r].label != y) continue;
      mx += ex.points[r].x / 5.0;
      my += ex.points[r].y / 5.0;
    }
    CHECK(std::abs(ex.points[100 + y].x - mx) <= 1e-9);
    CHECK(std::abs(ex.points[100 + y].y - my) <= 1e-9);
    CHECK(ex.points[100 + y].x == xy.at(100 + y, 0));
  }
  const std::string csv = ex.csv();
  CHECK(csv.rfind("kind,class,x,y\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 106);
}
