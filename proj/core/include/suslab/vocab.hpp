#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace suslab {

using TokenId = std::int32_t;

/// Closed word-level vocabulary. Ids 0..size()-1 map one-to-one onto entries;
/// the first three ids are reserved for PAD, BOS and UNK.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr const char* kPadText = "<pad>";
  static constexpr const char* kBosText = "<bos>";
  static constexpr const char* kUnkText = "<unk>";

  Vocabulary();

  /// Builds from an explicit entry list; the first three must be the specials.
  explicit Vocabulary(std::vector<std::string> entries);

  /// Adds `word` if absent and returns its id.
  TokenId add(std::string_view word);

  bool contains(std::string_view word) const;
  TokenId id(std::string_view word) const;  // kUnk when absent
  const std::string& word(TokenId id) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& entries() const { return entries_; }

  static bool is_special(TokenId id) { return id >= 0 && id <= kUnk; }

  struct Encoded {
    std::vector<TokenId> ids;
    std::size_t unk_count = 0;
  };

  /// Whitespace tokenization; unknown words become UNK and are counted.
  Encoded encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Splits on ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);

}  // namespace suslab
