#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metaprompter/vocabulary.hpp"

namespace mpr {

enum class Split { Train, Valid, Test };

std::string to_string(Split s);
Split parse_split(const std::string& name);

struct ClassInfo {
  std::size_t id = 0;
  std::string name;
  TokenSeq label_tokens;
  Split split = Split::Train;
};

struct Document {
  TokenSeq tokens;
  std::size_t label = 0;
};

/// Vocabulary, class metadata and labelled documents. Immutable once built;
/// the constructor validates every invariant.
class Corpus {
 public:
  Corpus() = default;
  /// Throws ValidationError when a document cites an unlisted label, a token
  /// id is outside the vocabulary, or class ids repeat.
  Corpus(Vocabulary vocab, std::vector<ClassInfo> classes, std::vector<Document> documents);

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::vector<ClassInfo>& classes() const noexcept { return classes_; }
  const std::vector<Document>& documents() const noexcept { return documents_; }

  const ClassInfo& class_info(std::size_t class_id) const;
  /// Class ids assigned to `split`, ascending.
  std::vector<std::size_t> classes_in(Split split) const;
  /// Document indices with the given class id, ascending.
  const std::vector<std::size_t>& documents_of(std::size_t class_id) const;

 private:
  Vocabulary vocab_;
  std::vector<ClassInfo> classes_;
  std::vector<Document> documents_;
  std::map<std::size_t, std::size_t> class_index_;
  std::map<std::size_t, std::vector<std::size_t>> docs_by_class_;
};

struct SyntheticCorpusConfig {
  std::size_t n_classes = 20;
  std::size_t docs_per_class = 60;
  std::size_t doc_len = 12;
  std::size_t vocab_size = 200;
  double topic_sharpness = 0.7;
  std::size_t topic_tokens_per_class = 5;
  std::size_t train_classes = 10;
  std::size_t valid_classes = 5;
  std::size_t test_classes = 5;
  std::uint64_t seed = 0;
};

/// Words the synthetic vocabulary always contains so the default template
/// anchors ("topic is") are in-vocabulary.
inline const std::vector<std::string> kTemplateWords = {"topic", "is"};

/// Topic-mixture corpus: every class owns a set of exclusive topic tokens
/// (its label tokens); each document position draws from the own topic set
/// with probability `topic_sharpness`, otherwise from a shared background
/// pool. Throws ConfigError when the sizes are infeasible.
Corpus gen_synthetic_corpus(const SyntheticCorpusConfig& cfg);

/// JSONL: header line {"vocab", "classes": [{"id","name","label_tokens","split"}]},
/// then one {"tokens": [...], "label": id} line per document.
std::string serialize_corpus(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
/// Throws ParseError (with line number) on schema violations and
/// ValidationError on invariant violations.
Corpus parse_corpus(const std::string& text);
Corpus load_corpus(const std::filesystem::path& path);

/// Git blob hash of `content`: sha1("blob <len>\0" + content), lowercase hex.
std::string git_blob_hash(const std::string& content);

}  // namespace mpr
