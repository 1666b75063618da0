#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace dpm {

using TokenIds = std::vector<std::size_t>;

namespace special {
inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kUnk = 1;
inline constexpr std::size_t kCls = 2;
inline constexpr std::size_t kSep = 3;
inline constexpr std::size_t kCount = 4;
}  // namespace special

// Bijective token <-> id map. Ids 0-3 are always [PAD], [UNK], [CLS], [SEP].
class Vocab {
 public:
  Vocab();
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  // Returns the id of `token`, assigning the next free id if it is new.
  std::size_t add(const std::string& token);
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  // Unknown tokens map to [UNK].
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(const std::vector<std::string>& tokens) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dpm
