#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sar/estimators.hpp"
#include "sar/evaluation.hpp"
#include "sar/records.hpp"
#include "sar/similarity.hpp"

namespace sar {

struct ProviderSettings {
  SimilarityBackend backend = SimilarityBackend::lexical;
  RemoteOptions remote;
};

struct RunConfig {
  std::filesystem::path dataset;
  ProviderSettings provider;
  std::vector<Method> estimators{kAllMethods.begin(), kAllMethods.end()};
  EstimatorConfig estimator;
  RelevanceOptions relevance;
  CorrectnessMetric metric = CorrectnessMetric::rouge_l;
  double threshold = 0.5;
  std::filesystem::path out = "out";
  unsigned jobs = 0;  // 0: hardware concurrency
  std::uint64_t seed = 0;
  bool timing = false;

  void validate() const;
  // Settings that determine results. Output directory and parallelism are
  // left out so reports stay identical across them.
  nlohmann::json to_json() const;
};

unsigned resolve_jobs(unsigned jobs);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. If any call throws, the
// exception of the smallest failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

// A per-question failure tagged with the question id.
class QuestionError : public std::runtime_error {
 public:
  QuestionError(std::string id, const std::string& what)
      : std::runtime_error("question '" + id + "': " + what), id_(std::move(id)) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

// Builds the configured provider; the precomputed backend merges every
// record's sims table.
SimilarityProvider make_provider(const ProviderSettings& settings,
                                 std::span<const QuestionRecord> dataset);

struct ScoredDataset {
  std::vector<UncertaintyReport> reports;  // dataset order
  std::vector<double> seconds;             // per question, when timed
};

ScoredDataset score_dataset(std::span<const QuestionRecord> dataset,
                            const SimilarityProvider& provider, const ScoreOptions& options,
                            unsigned jobs, bool timing = false);

struct MethodAuroc {
  Method method;
  std::optional<double> auroc;  // empty when undefined
};

struct EvalResult {
  std::vector<CorrectnessLabel> labels;  // dataset order
  std::vector<MethodAuroc> aurocs;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;

  bool any_undefined() const;
};

// Reports must cover exactly the dataset's ids; otherwise throws listing the
// orphaned ids. Methods are those present in every report.
EvalResult evaluate(std::span<const QuestionRecord> dataset,
                    std::span<const UncertaintyReport> reports, CorrectnessMetric metric,
                    double threshold, const SimilarityProvider* provider);

// ---- report files ----------------------------------------------------------

nlohmann::json reports_to_json(const nlohmann::json& config,
                               std::span<const UncertaintyReport> reports,
                               std::span<const double> seconds = {});
std::vector<UncertaintyReport> reports_from_json(const nlohmann::json& j);

std::string reports_to_csv(std::span<const UncertaintyReport> reports,
                           std::span<const Method> methods,
                           std::span<const double> seconds = {});

nlohmann::json eval_to_json(const nlohmann::json& config, const EvalResult& result);
std::string auroc_to_csv(const EvalResult& result);
std::string labels_to_csv(const EvalResult& result);

nlohmann::json inequality_to_json(const nlohmann::json& config, const InequalityResult& r);
std::string bin_table_to_csv(const BinTable& table);
std::string relevance_histogram_to_csv(const InequalityResult& r);

nlohmann::json rank_change_to_json(const nlohmann::json& config, const RankChangeReport& r,
                                   std::span<const std::string> ids);
std::string rank_change_to_csv(const RankChangeReport& r);

// Mean sampled-generation token count per question.
std::vector<double> mean_sample_lengths(std::span<const QuestionRecord> dataset);

// Writes via a temporary sibling and rename, so readers never see a partial
// file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace sar
