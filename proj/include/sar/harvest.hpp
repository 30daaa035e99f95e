#pragma once

#include <chrono>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sar/records.hpp"

namespace sar {

struct HarvestConfig {
  std::string endpoint;  // full URL of the completions route
  int num_samples = 5;
  double sample_temperature = 0.5;
  int max_tokens = 128;
  int concurrency = 4;
  int max_retries = 3;
  std::chrono::milliseconds backoff{250};
  std::chrono::milliseconds timeout{120000};

  void validate() const;
};

struct PromptSpec {
  std::string id;
  std::string prompt;
  std::vector<std::string> references;
};

struct HarvestFailure {
  std::string id;
  std::string message;
};

struct HarvestResult {
  std::vector<QuestionRecord> records;   // successes, in input order
  std::vector<HarvestFailure> failures;  // in input order
};

// The endpoint answered but does not expose token log-probabilities at all.
// Aborts the whole harvest.
class EndpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requests one greedy completion (temperature 0) and K sampled completions
// per prompt. Transport failures are retried with exponential backoff and then
// recorded per prompt; malformed per-token data is recorded per prompt.
HarvestResult harvest(const HarvestConfig& config, std::span<const PromptSpec> prompts);

// JSONL with {"id", "prompt", "references"} per line.
std::vector<PromptSpec> load_prompts(const std::filesystem::path& path);

}  // namespace sar
