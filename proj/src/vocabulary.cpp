#include "metaprompter/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "metaprompter/errors.hpp"

namespace mpr {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (TokenId i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw ValidationError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
  auto find_reserved = [this](std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw ValidationError("vocabulary is missing reserved token " + std::string(name));
    }
    return it->second;
  };
  pad_ = find_reserved(kPadToken);
  unk_ = find_reserved(kUnkToken);
  cls_ = find_reserved(kClsToken);
  sep_ = find_reserved(kSepToken);
  mask_ = find_reserved(kMaskToken);
}

Vocabulary Vocabulary::with_reserved(const std::vector<std::string>& words) {
  std::vector<std::string> all{std::string(kPadToken), std::string(kUnkToken),
                               std::string(kClsToken), std::string(kSepToken),
                               std::string(kMaskToken)};
  all.insert(all.end(), words.begin(), words.end());
  return Vocabulary(std::move(all));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw ValidationError("token id out of range");
  return tokens_[id];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

bool Vocabulary::is_reserved(TokenId id) const {
  return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
}

TokenSeq Vocabulary::tokenize(std::string_view text) const {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  TokenSeq out;
  std::string word;
  while (in >> word) out.push_back(id(word));
  return out;
}

}  // namespace mpr
