#include "metaprompter/corpus.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"
#include "metaprompter/errors.hpp"
#include "metaprompter/rng.hpp"

namespace mpr {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Valid:
      return "valid";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "valid") return Split::Valid;
  if (name == "test") return Split::Test;
  throw ValidationError("unknown split '" + name + "'");
}

Corpus::Corpus(Vocabulary vocab, std::vector<ClassInfo> classes, std::vector<Document> documents)
    : vocab_(std::move(vocab)), classes_(std::move(classes)), documents_(std::move(documents)) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const ClassInfo& c = classes_[i];
    if (!class_index_.emplace(c.id, i).second) {
      throw ValidationError("duplicate class id " + std::to_string(c.id));
    }
    for (TokenId t : c.label_tokens) {
      if (t >= vocab_.size()) {
        throw ValidationError("class '" + c.name + "' label token " + std::to_string(t) +
                              " outside vocabulary");
      }
    }
    docs_by_class_[c.id];
  }
  for (std::size_t d = 0; d < documents_.size(); ++d) {
    const Document& doc = documents_[d];
    auto it = docs_by_class_.find(doc.label);
    if (it == docs_by_class_.end()) {
      throw ValidationError("document " + std::to_string(d) + " cites unlisted label " +
                            std::to_string(doc.label));
    }
    for (TokenId t : doc.tokens) {
      if (t >= vocab_.size()) {
        throw ValidationError("document " + std::to_string(d) + " token " + std::to_string(t) +
                              " outside vocabulary");
      }
    }
    it->second.push_back(d);
  }
}

const ClassInfo& Corpus::class_info(std::size_t class_id) const {
  auto it = class_index_.find(class_id);
  if (it == class_index_.end()) {
    throw ValidationError("unknown class id " + std::to_string(class_id));
  }
  return classes_[it->second];
}

std::vector<std::size_t> Corpus::classes_in(Split split) const {
  std::vector<std::size_t> out;
  for (const auto& [id, index] : class_index_) {
    if (classes_[index].split == split) out.push_back(id);
  }
  return out;
}

const std::vector<std::size_t>& Corpus::documents_of(std::size_t class_id) const {
  auto it = docs_by_class_.find(class_id);
  if (it == docs_by_class_.end()) {
    throw ValidationError("unknown class id " + std::to_string(class_id));
  }
  return it->second;
}

Corpus gen_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  constexpr std::size_t kReserved = 5;
  if (cfg.n_classes == 0) throw ConfigError("synthetic corpus needs at least one class");
  if (cfg.vocab_size <= cfg.n_classes * 4) {
    throw ConfigError("vocab_size must exceed 4 * n_classes");
  }
  if (cfg.topic_sharpness < 0.0 || cfg.topic_sharpness > 1.0) {
    throw ConfigError("topic_sharpness must lie in [0, 1]");
  }
  if (cfg.train_classes + cfg.valid_classes + cfg.test_classes != cfg.n_classes) {
    throw ConfigError("class split sizes must sum to n_classes");
  }
  const std::size_t fixed = kReserved + kTemplateWords.size();
  if (cfg.vocab_size < fixed + cfg.n_classes * 4) {
    throw ConfigError("vocab_size too small for reserved and template words");
  }
  // Keep at least one background token per class.
  const std::size_t per_class =
      std::min(cfg.topic_tokens_per_class, (cfg.vocab_size - fixed - cfg.n_classes) / cfg.n_classes);
  if (per_class < 3) throw ConfigError("each class needs at least 3 exclusive topic tokens");
  const std::size_t n_background = cfg.vocab_size - fixed - per_class * cfg.n_classes;

  std::vector<std::string> words = kTemplateWords;
  char buf[32];
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t w = 0; w < per_class; ++w) {
      std::snprintf(buf, sizeof(buf), "c%02zu_t%zu", c, w);
      words.emplace_back(buf);
    }
  }
  for (std::size_t b = 0; b < n_background; ++b) {
    std::snprintf(buf, sizeof(buf), "bg%03zu", b);
    words.emplace_back(buf);
  }
  Vocabulary vocab = Vocabulary::with_reserved(words);
  const TokenId topic_base = kReserved + kTemplateWords.size();
  const TokenId background_base = topic_base + per_class * cfg.n_classes;

  std::vector<ClassInfo> classes;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    ClassInfo info;
    info.id = c;
    std::snprintf(buf, sizeof(buf), "class_%02zu", c);
    info.name = buf;
    for (std::size_t w = 0; w < per_class; ++w) info.label_tokens.push_back(topic_base + c * per_class + w);
    info.split = c < cfg.train_classes                       ? Split::Train
                 : c < cfg.train_classes + cfg.valid_classes ? Split::Valid
                                                             : Split::Test;
    classes.push_back(std::move(info));
  }

  Rng rng = make_rng(cfg.seed, 0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_topic(0, per_class - 1);
  std::uniform_int_distribution<std::size_t> pick_background(0, n_background - 1);
  std::vector<Document> docs;
  docs.reserve(cfg.n_classes * cfg.docs_per_class);
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t d = 0; d < cfg.docs_per_class; ++d) {
      Document doc;
      doc.label = c;
      for (std::size_t p = 0; p < cfg.doc_len; ++p) {
        const bool on_topic = coin(rng) < cfg.topic_sharpness;
        doc.tokens.push_back(on_topic ? topic_base + c * per_class + pick_topic(rng)
                                      : background_base + pick_background(rng));
      }
      docs.push_back(std::move(doc));
    }
  }
  return Corpus(std::move(vocab), std::move(classes), std::move(docs));
}

std::string serialize_corpus(const Corpus& corpus) {
  json header;
  header["vocab"] = corpus.vocab().tokens();
  header["classes"] = json::array();
  for (const ClassInfo& c : corpus.classes()) {
    header["classes"].push_back({{"id", c.id},
                                 {"name", c.name},
                                 {"label_tokens", c.label_tokens},
                                 {"split", to_string(c.split)}});
  }
  std::string out = header.dump();
  out += '\n';
  for (const Document& d : corpus.documents()) {
    out += json{{"tokens", d.tokens}, {"label", d.label}}.dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out << serialize_corpus(corpus);
}

Corpus parse_corpus(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&line_no](const std::string& what) -> ParseError {
    return ParseError("corpus line " + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line)) throw ParseError("corpus line 1: missing header");
  line_no = 1;
  Vocabulary vocab;
  std::vector<ClassInfo> classes;
  try {
    const json header = json::parse(line);
    vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    for (const json& c : header.at("classes")) {
      ClassInfo info;
      info.id = c.at("id").get<std::size_t>();
      info.name = c.at("name").get<std::string>();
      info.label_tokens = c.at("label_tokens").get<TokenSeq>();
      info.split = parse_split(c.at("split").get<std::string>());
      classes.push_back(std::move(info));
    }
  } catch (const json::exception& e) {
    throw fail(e.what());
  }

  std::vector<Document> docs;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Document d;
      d.tokens = j.at("tokens").get<TokenSeq>();
      d.label = j.at("label").get<std::size_t>();
      docs.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  return Corpus(std::move(vocab), std::move(classes), std::move(docs));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("corpus file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("sha1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

}  // namespace mpr
