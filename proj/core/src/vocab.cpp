#include "suslab/vocab.hpp"

#include <cctype>

#include "suslab/error.hpp"

namespace suslab {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() {
  add(kPadText);
  add(kBosText);
  add(kUnkText);
}

Vocabulary::Vocabulary(std::vector<std::string> entries) {
  require(entries.size() >= 3 && entries[0] == kPadText && entries[1] == kBosText &&
              entries[2] == kUnkText,
          ErrorKind::MalformedHeader, "vocabulary must start with <pad> <bos> <unk>");
  for (const auto& e : entries) {
    require(!index_.contains(e), ErrorKind::MalformedHeader,
            "duplicate vocabulary entry '" + e + "'");
    add(e);
  }
}

TokenId Vocabulary::add(std::string_view word) {
  std::string key(word);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  auto id = static_cast<TokenId>(entries_.size());
  entries_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.contains(std::string(word));
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < entries_.size(), ErrorKind::Precondition,
          "token id " + std::to_string(id) + " outside vocabulary");
  return entries_[static_cast<std::size_t>(id)];
}

Vocabulary::Encoded Vocabulary::encode(std::string_view text) const {
  Encoded enc;
  for (const auto& w : split_words(text)) {
    auto it = index_.find(w);
    if (it == index_.end()) {
      enc.ids.push_back(kUnk);
      ++enc.unk_count;
    } else {
      enc.ids.push_back(it->second);
    }
  }
  return enc;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

}  // namespace suslab
