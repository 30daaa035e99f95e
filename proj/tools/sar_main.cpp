// sar: uncertainty scoring for sampled LLM generations.
//
//   sar harvest     --prompts p.jsonl --endpoint URL --out data.jsonl
//   sar score       --dataset data.jsonl --out run/
//   sar eval        --dataset data.jsonl --reports run/scores.json --out run/
//   sar inequality  --dataset data.jsonl --out run/
//   sar rank-change --dataset data.jsonl --reports run/scores.json --out run/
//
// Exit codes: 0 success, 1 hard failure, 2 partial or degenerate result.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sar/harvest.hpp"
#include "sar/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitPartial = 2;

struct CliState {
  sar::RunConfig run;
  std::string provider = "lexical";
  std::vector<std::string> estimators;
  std::string metric = "rouge-l";
  double remote_timeout_s = 30.0;

  std::filesystem::path reports;
  std::string baseline = "ln_pe";
  std::string compare = "sar";
  std::size_t bucket_width = 5;

  std::filesystem::path prompts;
  sar::HarvestConfig harvest;
  std::filesystem::path harvest_out;
};

void add_dataset(CLI::App* sub, CliState& s) {
  sub->add_option("--dataset", s.run.dataset, "JSONL dataset of question records")
      ->required()
      ->check(CLI::ExistingFile);
}

void add_provider(CLI::App* sub, CliState& s) {
  sub->add_option("--provider", s.provider, "Similarity backend")
      ->check(CLI::IsMember({"lexical", "precomputed", "remote"}))
      ->capture_default_str();
  sub->add_option("--remote-url", s.run.provider.remote.url,
                  "Base URL of the similarity service")
      ->envname("SAR_REMOTE_URL");
  sub->add_option("--remote-batch-size", s.run.provider.remote.batch_size,
                  "Pairs per /similarity request")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--remote-timeout", s.remote_timeout_s, "Seconds per remote request")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--remote-retries", s.run.provider.remote.max_retries,
                  "Retries after a transport failure")
      ->capture_default_str();
  sub->add_option("--joiner", s.run.relevance.joiner,
                  "Separator between prompt and generation for token relevance")
      ->capture_default_str();
}

void add_estimator_flags(CLI::App* sub, CliState& s) {
  sub->add_option("--t", s.run.estimator.t, "sentSAR/SAR temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--cluster-threshold", s.run.estimator.cluster_threshold,
                  "Similarity threshold for SE clustering")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_flag("--length-normalized", s.run.estimator.length_normalized_probs,
                "Use exp(-LN-PE) as the sentence probability");
}

void add_common(CLI::App* sub, CliState& s) {
  sub->add_option("--out", s.run.out, "Output directory")->capture_default_str();
  sub->add_option("--jobs", s.run.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  sub->add_option("--seed", s.run.seed, "Recorded for provenance")->capture_default_str();
}

void resolve(CliState& s) {
  s.run.provider.backend = sar::parse_backend(s.provider);
  s.run.provider.remote.timeout =
      std::chrono::milliseconds(static_cast<long long>(s.remote_timeout_s * 1000.0));
  if (!s.estimators.empty()) {
    s.run.estimators.clear();
    for (const auto& e : s.estimators) s.run.estimators.push_back(sar::parse_method(e));
  }
  s.run.metric = sar::parse_metric(s.metric);
  s.run.validate();
}

std::vector<sar::QuestionRecord> load(const CliState& s) {
  return sar::load_dataset(s.run.dataset);
}

int cmd_score(CliState& s) {
  resolve(s);
  const auto dataset = load(s);
  const auto provider = sar::make_provider(s.run.provider, dataset);
  sar::ScoreOptions options;
  options.estimator = s.run.estimator;
  options.relevance = s.run.relevance;
  options.methods = s.run.estimators;
  const auto scored = sar::score_dataset(dataset, provider, options, s.run.jobs, s.run.timing);
  const auto config = s.run.to_json();
  sar::write_file_atomic(s.run.out / "scores.json",
                         sar::reports_to_json(config, scored.reports, scored.seconds).dump(2) +
                             "\n");
  sar::write_file_atomic(s.run.out / "scores.csv",
                         sar::reports_to_csv(scored.reports, s.run.estimators, scored.seconds));
  std::cout << "scored " << scored.reports.size() << " questions -> "
            << (s.run.out / "scores.json").string() << '\n';
  return kExitOk;
}

int cmd_eval(CliState& s) {
  resolve(s);
  const auto dataset = load(s);
  const auto reports_path = s.reports.empty() ? s.run.out / "scores.json" : s.reports;
  const auto reports = sar::reports_from_json(sar::read_json_file(reports_path));
  std::optional<sar::SimilarityProvider> provider;
  if (s.run.metric == sar::CorrectnessMetric::sentence_similarity) {
    provider.emplace(sar::make_provider(s.run.provider, dataset));
  }
  const auto result = sar::evaluate(dataset, reports, s.run.metric, s.run.threshold,
                                    provider ? &*provider : nullptr);
  const auto config = s.run.to_json();
  sar::write_file_atomic(s.run.out / "eval.json", sar::eval_to_json(config, result).dump(2) + "\n");
  sar::write_file_atomic(s.run.out / "auroc.csv", sar::auroc_to_csv(result));
  sar::write_file_atomic(s.run.out / "labels.csv", sar::labels_to_csv(result));

  std::cout << "correct " << result.n_correct << ", incorrect " << result.n_incorrect << '\n';
  for (const auto& a : result.aurocs) {
    std::cout << "  " << sar::method_name(a.method) << ": "
              << (a.auroc ? sar::format_double(*a.auroc) : "undefined") << '\n';
  }
  if (result.any_undefined()) {
    std::cerr << "warning: AUROC undefined (labels contain a single class)\n";
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_inequality(CliState& s) {
  resolve(s);
  const auto dataset = load(s);
  const auto provider = sar::make_provider(s.run.provider, dataset);
  sar::InequalityOptions options;
  options.relevance = s.run.relevance;
  options.length_normalized_probs = s.run.estimator.length_normalized_probs;
  const auto result = sar::inequality_analysis(dataset, provider, options);
  sar::write_file_atomic(s.run.out / "inequality.json",
                         sar::inequality_to_json(s.run.to_json(), result).dump(2) + "\n");
  sar::write_file_atomic(s.run.out / "token_bins.csv", sar::bin_table_to_csv(result.token_level));
  sar::write_file_atomic(s.run.out / "sentence_bins.csv",
                         sar::bin_table_to_csv(result.sentence_level));
  sar::write_file_atomic(s.run.out / "relevance_hist.csv",
                         sar::relevance_histogram_to_csv(result));
  if (result.uniform_fallback_sentences > 0) {
    std::cout << "note: " << result.uniform_fallback_sentences
              << " sentence(s) had all-zero token relevance; uniform weights used\n";
  }
  std::cout << "binned " << result.token_level.total << " tokens and "
            << result.sentence_level.total << " sentences\n";
  return kExitOk;
}

int cmd_rank_change(CliState& s) {
  resolve(s);
  const auto dataset = load(s);
  const auto reports_path = s.reports.empty() ? s.run.out / "scores.json" : s.reports;
  const auto reports = sar::reports_from_json(sar::read_json_file(reports_path));
  const auto a = sar::parse_method(s.baseline);
  const auto b = sar::parse_method(s.compare);
  std::map<std::string, const sar::UncertaintyReport*> by_id;
  for (const auto& r : reports) by_id[r.id] = &r;
  std::vector<double> ua, ub;
  std::vector<std::string> ids;
  for (const auto& q : dataset) {
    auto it = by_id.find(q.id);
    if (it == by_id.end()) throw std::invalid_argument("no report for question " + q.id);
    const auto& va = (*it->second)[a];
    const auto& vb = (*it->second)[b];
    if (!va || !vb) {
      throw std::invalid_argument("report for " + q.id + " lacks " +
                                  std::string(sar::method_name(va ? b : a)));
    }
    ua.push_back(*va);
    ub.push_back(*vb);
    ids.push_back(q.id);
  }
  const auto lengths = sar::mean_sample_lengths(dataset);
  const auto report = sar::rank_change_report(ua, ub, lengths, s.bucket_width);
  auto config = s.run.to_json();
  config["baseline"] = s.baseline;
  config["compare"] = s.compare;
  config["bucket_width"] = s.bucket_width;
  sar::write_file_atomic(s.run.out / "rank_change.json",
                         sar::rank_change_to_json(config, report, ids).dump(2) + "\n");
  sar::write_file_atomic(s.run.out / "rank_change.csv", sar::rank_change_to_csv(report));
  std::cout << "length correlation: "
            << (report.length_correlation ? sar::format_double(*report.length_correlation)
                                          : "undefined")
            << '\n';
  return kExitOk;
}

int cmd_harvest(CliState& s) {
  s.harvest.concurrency = static_cast<int>(sar::resolve_jobs(s.run.jobs));
  const auto prompts = sar::load_prompts(s.prompts);
  const auto result = sar::harvest(s.harvest, prompts);
  for (const auto& f : result.failures) {
    std::cerr << "failed: " << f.id << ": " << f.message << '\n';
  }
  std::cout << "harvested " << result.records.size() << "/" << prompts.size() << " prompts\n";
  if (result.records.empty() && !prompts.empty()) {
    std::cerr << "error: no prompt succeeded; nothing written\n";
    return kExitFailure;
  }
  std::string contents;
  for (const auto& q : result.records) contents += sar::question_to_json(q).dump() + "\n";
  sar::write_file_atomic(s.harvest_out, contents);
  if (!result.failures.empty()) {
    std::cerr << "warning: partial harvest, " << result.failures.size()
              << " prompt(s) failed\n";
    return kExitPartial;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relevance-shifted uncertainty scoring for sampled LLM generations"};
  app.set_config("--config", "", "INI/TOML file with option defaults");
  app.require_subcommand(1);
  CliState s;

  auto* harvest = app.add_subcommand("harvest", "Sample generations with logprobs from an endpoint");
  harvest->add_option("--prompts", s.prompts, "JSONL with id, prompt, references")
      ->required()
      ->check(CLI::ExistingFile);
  harvest->add_option("--endpoint", s.harvest.endpoint, "Completions URL")->required();
  harvest->add_option("--num-samples", s.harvest.num_samples, "Sampled generations per prompt")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  harvest->add_option("--sample-temperature", s.harvest.sample_temperature,
                      "Sampling temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  harvest->add_option("--max-tokens", s.harvest.max_tokens, "Generation length cap")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  harvest->add_option("--retries", s.harvest.max_retries, "Retries per request")
      ->capture_default_str();
  harvest->add_option("--out", s.harvest_out, "Output dataset (JSONL)")->required();
  harvest->add_option("--jobs", s.run.jobs, "Concurrent prompts (0 = all cores)");

  auto* score = app.add_subcommand("score", "Compute uncertainty estimators per question");
  add_dataset(score, s);
  add_provider(score, s);
  add_estimator_flags(score, s);
  score->add_option("--estimators", s.estimators,
                    "Comma list of pe,ln_pe,lexsim,se,token_sar,sent_sar,sar")
      ->delimiter(',');
  score->add_flag("--timing", s.run.timing, "Add a per-question seconds column");
  add_common(score, s);

  auto* eval = app.add_subcommand("eval", "Label correctness and compute AUROC per estimator");
  add_dataset(eval, s);
  add_provider(eval, s);
  eval->add_option("--reports", s.reports, "scores.json from `score` (default: <out>/scores.json)");
  eval->add_option("--metric", s.metric, "Correctness metric")
      ->check(CLI::IsMember({"rouge-l", "similarity"}))
      ->capture_default_str();
  eval->add_option("--threshold", s.run.threshold, "Correctness threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  add_common(eval, s);

  auto* inequality = app.add_subcommand("inequality", "Relevance vs uncertainty-proportion tables");
  add_dataset(inequality, s);
  add_provider(inequality, s);
  inequality->add_flag("--length-normalized", s.run.estimator.length_normalized_probs,
                       "Use exp(-LN-PE) as the sentence probability");
  add_common(inequality, s);

  auto* rank = app.add_subcommand("rank-change", "Rank changes between two estimators by length");
  add_dataset(rank, s);
  rank->add_option("--reports", s.reports, "scores.json from `score` (default: <out>/scores.json)");
  rank->add_option("--baseline", s.baseline, "Reference estimator")->capture_default_str();
  rank->add_option("--compare", s.compare, "Estimator compared against the baseline")
      ->capture_default_str();
  rank->add_option("--bucket-width", s.bucket_width, "Sentence-length bucket width in tokens")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_common(rank, s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; usage errors are hard failures.
    return app.exit(e) == 0 ? kExitOk : kExitFailure;
  }

  try {
    if (*harvest) return cmd_harvest(s);
    if (*score) return cmd_score(s);
    if (*eval) return cmd_eval(s);
    if (*inequality) return cmd_inequality(s);
    if (*rank) return cmd_rank_change(s);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
