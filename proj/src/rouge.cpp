#include "sar/rouge.hpp"

#include <algorithm>
#include <cctype>

namespace sar {

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::size_t lcs_length(std::span<const std::string> a,
                       std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  // Single rolling row over b.
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = x == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row.back();
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto cand = rouge_tokens(candidate);
  const auto ref = rouge_tokens(reference);
  const std::size_t lcs = lcs_length(cand, ref);
  if (lcs == 0) return {};
  RougeScore s;
  s.precision = static_cast<double>(lcs) / static_cast<double>(cand.size());
  s.recall = static_cast<double>(lcs) / static_cast<double>(ref.size());
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace sar
