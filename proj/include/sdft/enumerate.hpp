#pragma once

#include <cstddef>
#include <vector>

#include "sdft/vocab.hpp"

namespace sdft {

inline constexpr std::size_t kDefaultEnumerationBudget = 1'000'000;

// Every terminated response of length <= max_len over the full vocabulary:
// sequences ending in eos, plus eos-free sequences of exactly max_len (those
// count as terminated by truncation, so the set carries probability 1 under
// any policy). Throws BudgetError when size^max_len exceeds the budget.
std::vector<TokenSeq> enumerate_responses(const Vocab& vocab, int max_len,
                                          std::size_t budget = kDefaultEnumerationBudget);

// Same, for a bare alphabet {0..alphabet_size-1} with the given terminator.
std::vector<TokenSeq> enumerate_responses(int alphabet_size, TokenId eos, int max_len,
                                          std::size_t budget = kDefaultEnumerationBudget);

void check_enumeration_budget(int alphabet_size, int max_len, std::size_t budget);

}  // namespace sdft
