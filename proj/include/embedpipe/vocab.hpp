#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace embedpipe {

/// Token string <-> contiguous id map with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;
  static constexpr std::size_t kMaxSize = 4096;

  /// Vocabulary holding only the reserved tokens.
  Vocabulary();
  /// Reserved tokens followed by `tokens` in order. Duplicates and reserved
  /// spellings are rejected.
  explicit Vocabulary(std::span<const std::string> tokens);

  int add(std::string token);
  /// Id of `token`, or kUnk when absent.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;

  std::size_t size() const { return tokens_.size(); }
  /// Non-reserved tokens in id order.
  std::span<const std::string> content() const {
    return std::span<const std::string>(tokens_).subspan(kReserved);
  }
  std::uint64_t hash() const;

  std::vector<int> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Wraps a content sequence as BOS tokens EOS.
std::vector<int> with_markers(std::span<const int> tokens);

}  // namespace embedpipe
