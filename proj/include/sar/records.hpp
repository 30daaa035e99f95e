#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sar {

// One generated token and its natural-log probability given the prefix.
struct TokenEvent {
  std::string text;
  double logprob = 0.0;
};

enum class GenerationKind { most_likely, sampled };

struct GenerationRecord {
  std::vector<TokenEvent> tokens;
  std::string text;
  GenerationKind kind = GenerationKind::sampled;

  // Concatenated token texts. Downstream computations use this rather than
  // `text`, since detokenization conventions differ between vendors.
  std::string surface() const;
  std::size_t size() const { return tokens.size(); }
};

struct QuestionRecord {
  std::string id;
  std::string prompt;
  std::vector<std::string> references;
  GenerationRecord most_likely;
  std::vector<GenerationRecord> sampled;
  // Symmetric pair key (see pair_key) -> similarity in [0,1].
  std::map<std::string, double> precomputed_sims;
};

// Malformed input: bad JSON, missing fields, or a violated record invariant.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what
                                : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct LoadOptions {
  // Token probabilities are floored at this value, i.e. logprob >= log(floor).
  double probability_floor = 1e-12;
  // Receives non-fatal diagnostics such as text/token mismatches. When empty,
  // diagnostics go to stderr.
  std::function<void(const std::string&)> on_warning;
};

std::vector<QuestionRecord> load_dataset(const std::filesystem::path& path,
                                         const LoadOptions& options = {});
void save_dataset(const std::filesystem::path& path,
                  const std::vector<QuestionRecord>& records);

QuestionRecord question_from_json(const nlohmann::json& j,
                                   const LoadOptions& options = {},
                                   std::size_t line = 0);
nlohmann::json question_to_json(const QuestionRecord& q);

// Checks every record invariant; throws DatasetError naming the record id and
// the offending field.
void validate(const QuestionRecord& q, std::size_t line = 0);

// Sum of token log-probabilities, i.e. log p(s|x).
double sentence_logprob(const GenerationRecord& g);

std::string sha256_hex(std::string_view text);

// Key shared by precomputed similarity maps and provider caches: the two
// SHA-256 hex digests ordered lexicographically and concatenated, so
// pair_key(a, b) == pair_key(b, a).
std::string pair_key(std::string_view a, std::string_view b);

}  // namespace sar
