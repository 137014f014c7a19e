#include "sdft/enumerate.hpp"

#include <string>

#include "sdft/errors.hpp"

namespace sdft {

void check_enumeration_budget(int alphabet_size, int max_len, std::size_t budget) {
  if (max_len < 1) throw InputError("max_len must be >= 1");
  if (alphabet_size < 1) throw InputError("alphabet must be non-empty");
  double total = 1.0;
  for (int i = 0; i < max_len; ++i) total *= alphabet_size;
  if (total > static_cast<double>(budget))
    throw BudgetError("enumeration of " + std::to_string(alphabet_size) + "^" + std::to_string(max_len) +
                      " sequences exceeds budget " + std::to_string(budget));
}

std::vector<TokenSeq> enumerate_responses(int alphabet_size, TokenId eos, int max_len, std::size_t budget) {
  check_enumeration_budget(alphabet_size, max_len, budget);
  std::vector<TokenSeq> out;
  TokenSeq cur;
  auto rec = [&](auto&& self) -> void {
    for (TokenId v = 0; v < alphabet_size; ++v) {
      cur.push_back(v);
      if (v == eos || static_cast<int>(cur.size()) == max_len)
        out.push_back(cur);
      else
        self(self);
      cur.pop_back();
    }
  };
  rec(rec);
  return out;
}

std::vector<TokenSeq> enumerate_responses(const Vocab& vocab, int max_len, std::size_t budget) {
  return enumerate_responses(vocab.size, vocab.eos, max_len, budget);
}

}  // namespace sdft
