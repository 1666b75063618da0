#include "dpm/vocab.hpp"

#include "dpm/errors.hpp"

namespace dpm {

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(t);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i < special::kCount) {
      if (tokens[i] != v.tokens_[i]) {
        throw DataError("vocabulary id " + std::to_string(i) + " must be " + v.tokens_[i] + ", got " + tokens[i]);
      }
      continue;
    }
    if (v.contains(tokens[i])) throw DataError("duplicate vocabulary token: " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

std::size_t Vocab::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const std::size_t id = tokens_.size();
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? special::kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

TokenIds Vocab::encode(const std::vector<std::string>& tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

}  // namespace dpm
