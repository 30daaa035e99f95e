#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sar {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lowercased whitespace tokens with ASCII punctuation stripped; tokens that
// are pure punctuation are dropped.
std::vector<std::string> rouge_tokens(std::string_view text);

std::size_t lcs_length(std::span<const std::string> a,
                       std::span<const std::string> b);

// Rouge-L with beta = 1 over rouge_tokens. All three fields are 0 when either
// side is empty or the LCS is empty.
RougeScore rouge_l(std::string_view candidate, std::string_view reference);

}  // namespace sar
