#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sdft {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

struct Vocab {
  int size = 16;
  TokenId bos = 1;
  TokenId eos = 2;
  TokenId pad = 0;
  TokenId sep = 3;

  // Throws ConfigError unless specials are distinct, in range, and size >= 4.
  void validate() const;
  bool contains(TokenId t) const { return t >= 0 && t < size; }
  bool operator==(const Vocab&) const = default;
};

// Throws InputError on the first out-of-range id.
void check_tokens(const Vocab& vocab, std::span<const TokenId> tokens);

TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b);

}  // namespace sdft
