#include "embedpipe/vocab.hpp"

#include <stdexcept>

#include "embedpipe/util.hpp"

namespace embedpipe {

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<s>", "</s>", "<unk>"}) add(t);
}

Vocabulary::Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
  for (const std::string& t : tokens) add(t);
}

int Vocabulary::add(std::string token) {
  if (token.empty()) throw std::invalid_argument("vocabulary: empty token");
  if (index_.count(token)) throw std::invalid_argument("vocabulary: duplicate token '" + token + "'");
  if (tokens_.size() >= kMaxSize) throw std::length_error("vocabulary: more than 4096 tokens");
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::hash() const {
  Fnv1a h;
  for (const std::string& t : tokens_) {
    h.update(t);
    h.update(std::string_view("\n"));
  }
  return h.value();
}

std::vector<int> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) words.push_back(token(i));
  return words;
}

std::vector<int> with_markers(std::span<const int> tokens) {
  std::vector<int> out;
  out.reserve(tokens.size() + 2);
  out.push_back(Vocabulary::kBos);
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.push_back(Vocabulary::kEos);
  return out;
}

}  // namespace embedpipe
