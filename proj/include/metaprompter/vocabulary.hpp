#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mpr {

using TokenId = std::size_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

/// Dense token <-> id mapping with the five reserved special tokens.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Ids are positions in `tokens`. Throws ValidationError unless every
  /// reserved token appears exactly once and all tokens are distinct.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Reserved tokens first (ids 0..4), then `words` in order.
  static Vocabulary with_reserved(const std::vector<std::string>& words);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  /// Id of `token`, or the [UNK] id when absent.
  TokenId id(std::string_view token) const;
  bool is_reserved(TokenId id) const;

  TokenId pad() const noexcept { return pad_; }
  TokenId unk() const noexcept { return unk_; }
  TokenId cls() const noexcept { return cls_; }
  TokenId sep() const noexcept { return sep_; }
  TokenId mask() const noexcept { return mask_; }

  /// Whitespace split + ASCII lowercase; unknown words map to [UNK].
  TokenSeq tokenize(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0, mask_ = 0;
};

}  // namespace mpr
