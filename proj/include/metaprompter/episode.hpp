#pragma once

#include <cstddef>
#include <vector>

#include "metaprompter/corpus.hpp"
#include "metaprompter/rng.hpp"

namespace mpr {

/// A document drawn into an episode, with its episode-local label.
struct Sample {
  std::size_t doc = 0;
  std::size_t label = 0;
};

/// One N-way k-shot task. `classes[l]` is the corpus class id of local label l.
struct Episode {
  std::vector<std::size_t> classes;
  std::vector<Sample> support;
  std::vector<Sample> query;

  std::size_t ways() const noexcept { return classes.size(); }
};

struct EpisodeShape {
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 15;
};

/// Draws N classes of `split` without replacement, then k+q documents per
/// class without replacement; the first k go to the support set. Local labels
/// follow the sampled class order. Throws SamplingError when the split has
/// fewer than N classes or a class has fewer than k+q documents.
Episode sample_episode(const Corpus& corpus, Split split, const EpisodeShape& shape, Rng& rng);

/// Episode `index` of a fixed, seed-determined stream.
Episode sample_episode(const Corpus& corpus, Split split, const EpisodeShape& shape,
                       std::uint64_t seed, std::uint64_t index);

}  // namespace mpr
