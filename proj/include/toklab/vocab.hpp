#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "toklab/corpus.hpp"
#include "toklab/errors.hpp"

namespace toklab {

// Dense token<->id bijection. Specials occupy the lowest ids.
class Vocab {
 public:
  Vocab() = default;

  // Returns the existing id when the token is already present.
  TokenId add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    TokenId id = static_cast<TokenId>(id_to_token_.size());
    token_to_id_.emplace(token, id);
    id_to_token_.push_back(token);
    return id;
  }

  std::optional<TokenId> id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
      throw UnknownId("token id " + std::to_string(id) + " out of range [0, " +
                      std::to_string(id_to_token_.size()) + ")");
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace toklab
