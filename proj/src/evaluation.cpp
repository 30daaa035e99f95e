#include "sar/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "sar/estimators.hpp"
#include "sar/logmath.hpp"

namespace sar {

std::string_view to_string(CorrectnessMetric m) {
  return m == CorrectnessMetric::rouge_l ? "rouge-l" : "similarity";
}

CorrectnessMetric parse_metric(std::string_view name) {
  if (name == "rouge-l" || name == "rouge_l") return CorrectnessMetric::rouge_l;
  if (name == "similarity" || name == "sentence_similarity") {
    return CorrectnessMetric::sentence_similarity;
  }
  throw std::invalid_argument("unknown correctness metric: " + std::string(name));
}

CorrectnessLabel correctness(const QuestionRecord& q, CorrectnessMetric metric,
                             double threshold, const SimilarityProvider* provider) {
  if (q.references.empty()) {
    throw std::invalid_argument("question '" + q.id + "' has no references");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("correctness threshold must lie in [0,1]");
  }
  const std::string answer = q.most_likely.surface();
  double best = 0.0;
  if (metric == CorrectnessMetric::rouge_l) {
    for (const auto& ref : q.references) best = std::max(best, rouge_l(answer, ref).f1);
  } else {
    if (provider == nullptr) {
      throw std::invalid_argument("similarity correctness needs a provider");
    }
    std::vector<TextPair> pairs;
    for (const auto& ref : q.references) pairs.emplace_back(answer, ref);
    for (double s : provider->batch_similarity(pairs)) best = std::max(best, s);
  }
  return {q.id, best >= threshold, metric, best, threshold};
}

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share rank mean((i+1)..(j+1)).
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = rank;
    i = j + 1;
  }
  return ranks;
}

double auroc(std::span<const double> uncertainties, const std::vector<bool>& correct) {
  if (uncertainties.size() != correct.size()) {
    throw std::invalid_argument("auroc: scores and labels differ in length");
  }
  for (double u : uncertainties) {
    if (std::isnan(u)) throw std::invalid_argument("auroc: NaN uncertainty");
  }
  const std::size_t n_correct =
      static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  const std::size_t n_incorrect = correct.size() - n_correct;
  if (n_correct == 0 || n_incorrect == 0) {
    throw UndefinedAuroc("AUROC undefined: " + std::to_string(n_correct) +
                         " correct and " + std::to_string(n_incorrect) +
                         " incorrect labels");
  }
  // Mann-Whitney U of the incorrect class; midranks give ties half credit.
  const auto ranks = midranks(uncertainties);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (!correct[i]) rank_sum += ranks[i];
  }
  const double ni = static_cast<double>(n_incorrect);
  const double nc = static_cast<double>(n_correct);
  return (rank_sum - ni * (ni + 1.0) / 2.0) / (ni * nc);
}

std::vector<double> token_uncertainty_proportions(const GenerationRecord& g) {
  const double total = pe(g);
  if (!(total > 0.0)) {
    throw std::domain_error("token uncertainty proportions undefined: PE is 0");
  }
  std::vector<double> out;
  out.reserve(g.tokens.size());
  for (const auto& t : g.tokens) out.push_back(-t.logprob / total);
  return out;
}

std::vector<double> sentence_uncertainty_proportions(
    std::span<const GenerationRecord> generations) {
  std::vector<double> entropies;
  double total = 0.0;
  for (const auto& g : generations) {
    entropies.push_back(pe(g));
    total += entropies.back();
  }
  if (!(total > 0.0)) {
    throw std::domain_error("sentence uncertainty proportions undefined: total PE is 0");
  }
  for (double& e : entropies) e /= total;
  return entropies;
}

std::size_t relevance_bin(double relevance) {
  const double scaled = std::floor(std::clamp(relevance, 0.0, 1.0) * kRelevanceBins);
  return std::min(static_cast<std::size_t>(scaled), kRelevanceBins - 1);
}

BinTable bin_uncertainty_proportions(std::span<const double> relevances,
                                     std::span<const double> proportions) {
  if (relevances.size() != proportions.size()) {
    throw std::invalid_argument("binning: relevance and proportion counts differ");
  }
  BinTable table;
  for (std::size_t b = 0; b < kRelevanceBins; ++b) {
    table.bins[b].lower = static_cast<double>(b) / kRelevanceBins;
    table.bins[b].upper = static_cast<double>(b + 1) / kRelevanceBins;
  }
  for (std::size_t i = 0; i < relevances.size(); ++i) {
    auto& bin = table.bins[relevance_bin(relevances[i])];
    ++bin.count;
    bin.up_sum += proportions[i];
  }
  for (auto& bin : table.bins) {
    bin.up_mean = bin.count ? bin.up_sum / static_cast<double>(bin.count) : 0.0;
  }
  table.total = relevances.size();
  return table;
}

namespace {

void merge_into(BinTable& into, const BinTable& from) {
  for (std::size_t b = 0; b < kRelevanceBins; ++b) {
    into.bins[b].count += from.bins[b].count;
    into.bins[b].up_sum += from.bins[b].up_sum;
  }
  into.total += from.total;
}

void finish(BinTable& table) {
  for (std::size_t b = 0; b < kRelevanceBins; ++b) {
    auto& bin = table.bins[b];
    bin.lower = static_cast<double>(b) / kRelevanceBins;
    bin.upper = static_cast<double>(b + 1) / kRelevanceBins;
    bin.up_mean = bin.count ? bin.up_sum / static_cast<double>(bin.count) : 0.0;
  }
}

}  // namespace

std::vector<double> sentence_relevance_weighted_mean(const SimilarityMatrix& matrix,
                                                     std::span<const double> logprobs) {
  const std::size_t k = matrix.size();
  if (k < 2) throw std::invalid_argument("weighted-mean relevance needs K >= 2");
  std::vector<double> out(k);
  std::vector<double> others;
  for (std::size_t j = 0; j < k; ++j) {
    others.clear();
    for (std::size_t o = 0; o < k; ++o) {
      if (o != j) others.push_back(logprobs[o]);
    }
    const double log_rs = sentence_relevance(j, matrix, logprobs);
    out[j] = log_rs == kNegInf
                 ? 0.0
                 : std::clamp(std::exp(log_rs - log_sum_exp(others)), 0.0, 1.0);
  }
  return out;
}

InequalityResult inequality_analysis(std::span<const QuestionRecord> dataset,
                                     const SimilarityProvider& provider,
                                     const InequalityOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("inequality analysis: empty dataset");
  InequalityResult result;
  for (const auto& q : dataset) {
    for (const auto& g : q.sampled) {
      const auto rel = normalized_token_relevance(g, q.prompt, provider, options.relevance);
      if (rel.uniform_fallback) ++result.uniform_fallback_sentences;
      if (!(pe(g) > 0.0)) {
        ++result.sentences_skipped;
        continue;
      }
      merge_into(result.token_level,
                 bin_uncertainty_proportions(rel.raw, token_uncertainty_proportions(g)));
    }

    double total_pe = 0.0;
    for (const auto& g : q.sampled) total_pe += pe(g);
    if (q.sampled.size() < 2 || !(total_pe > 0.0)) {
      ++result.questions_skipped;
      continue;
    }
    const auto matrix = pairwise_matrix(q.sampled, provider);
    const auto logprobs = sequence_logprobs(q.sampled, options.length_normalized_probs);
    merge_into(result.sentence_level,
               bin_uncertainty_proportions(sentence_relevance_weighted_mean(matrix, logprobs),
                                           sentence_uncertainty_proportions(q.sampled)));
  }
  finish(result.token_level);
  finish(result.sentence_level);
  return result;
}

std::vector<double> rank_change(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("rank_change: length mismatch");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(ra[i] - rb[i]);
  return out;
}

RankChangeReport rank_change_report(std::span<const double> a, std::span<const double> b,
                                    std::span<const double> lengths,
                                    std::size_t bucket_width) {
  if (lengths.size() != a.size()) {
    throw std::invalid_argument("rank_change_report: one length per item required");
  }
  if (bucket_width == 0) throw std::invalid_argument("bucket width must be >= 1");
  RankChangeReport report;
  report.changes = rank_change(a, b);

  std::map<std::size_t, std::pair<std::size_t, double>> buckets;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const auto key = static_cast<std::size_t>(std::floor(lengths[i] / bucket_width));
    auto& [count, sum] = buckets[key];
    ++count;
    sum += report.changes[i];
  }
  for (const auto& [key, cs] : buckets) {
    const double w = static_cast<double>(bucket_width);
    report.buckets.push_back({static_cast<double>(key) * w, static_cast<double>(key + 1) * w,
                              cs.first, cs.second / static_cast<double>(cs.first)});
  }

  const std::size_t n = lengths.size();
  if (n >= 2) {
    const double mx = std::accumulate(lengths.begin(), lengths.end(), 0.0) / n;
    const double my =
        std::accumulate(report.changes.begin(), report.changes.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = lengths[i] - mx;
      const double dy = report.changes[i] - my;
      sxy += dx * dy;
      sxx += dx * dx;
      syy += dy * dy;
    }
    if (sxx > 0.0 && syy > 0.0) report.length_correlation = sxy / std::sqrt(sxx * syy);
  }
  return report;
}

}  // namespace sar
