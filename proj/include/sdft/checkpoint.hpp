#pragma once

#include <filesystem>
#include <string>

#include "sdft/policy.hpp"

namespace sdft {

// Line-oriented text checkpoint: header (family, vocab, shape) followed by
// theta at 17 significant digits, which round-trips doubles bit-exactly.
std::string policy_to_text(const PolicyParams& params);
PolicyParams policy_from_text(const std::string& text);

void save_policy(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace sdft
