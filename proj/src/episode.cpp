#include "metaprompter/episode.hpp"

#include <random>
#include <string>

#include "metaprompter/errors.hpp"

namespace mpr {
namespace {

// First `count` entries of a partial Fisher-Yates shuffle.
std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

Episode sample_episode(const Corpus& corpus, Split split, const EpisodeShape& shape, Rng& rng) {
  if (shape.ways == 0 || shape.shots == 0) {
    throw SamplingError("episodes need at least one way and one shot");
  }
  const std::vector<std::size_t> eligible = corpus.classes_in(split);
  if (eligible.size() < shape.ways) {
    throw SamplingError("split '" + to_string(split) + "' has " + std::to_string(eligible.size()) +
                        " classes, need " + std::to_string(shape.ways));
  }
  Episode ep;
  ep.classes = choose(eligible, shape.ways, rng);
  const std::size_t per_class = shape.shots + shape.queries;
  for (std::size_t local = 0; local < ep.classes.size(); ++local) {
    const auto& docs = corpus.documents_of(ep.classes[local]);
    if (docs.size() < per_class) {
      throw SamplingError("class '" + corpus.class_info(ep.classes[local]).name + "' has " +
                          std::to_string(docs.size()) + " documents, need " +
                          std::to_string(per_class));
    }
    const std::vector<std::size_t> picked = choose(docs, per_class, rng);
    for (std::size_t i = 0; i < per_class; ++i) {
      (i < shape.shots ? ep.support : ep.query).push_back(Sample{picked[i], local});
    }
  }
  return ep;
}

Episode sample_episode(const Corpus& corpus, Split split, const EpisodeShape& shape,
                       std::uint64_t seed, std::uint64_t index) {
  Rng rng = make_rng(seed, index);
  return sample_episode(corpus, split, shape, rng);
}

}  // namespace mpr
