#include "sar/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sar/logmath.hpp"

namespace sar {

void EstimatorConfig::validate() const {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw std::invalid_argument("temperature t must be finite and > 0");
  }
  if (!(cluster_threshold >= 0.0 && cluster_threshold <= 1.0)) {
    throw std::invalid_argument("cluster threshold must lie in [0,1]");
  }
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::pe: return "pe";
    case Method::ln_pe: return "ln_pe";
    case Method::lexsim: return "lexsim";
    case Method::se: return "se";
    case Method::token_sar: return "token_sar";
    case Method::sent_sar: return "sent_sar";
    case Method::sar: return "sar";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown estimator: " + std::string(name));
}

double pe(const GenerationRecord& g) { return -sentence_logprob(g); }

double ln_pe(const GenerationRecord& g) {
  if (g.tokens.empty()) throw std::invalid_argument("ln_pe needs N >= 1");
  return pe(g) / static_cast<double>(g.tokens.size());
}

double lexical_similarity_score(std::span<const std::string> texts) {
  const std::size_t k = texts.size();
  if (k == 0) throw std::invalid_argument("lexical similarity needs K >= 1");
  if (k == 1) return 0.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      sum += lexical_similarity(texts[i], texts[j]);
      ++pairs;
    }
  }
  return -(sum / static_cast<double>(pairs));
}

namespace {

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::size_t> parent;
};

// Shared log-domain core of sentSAR and SAR.
double shifted_entropy(const SimilarityMatrix& matrix, std::span<const double> logprobs,
                       double t) {
  const std::size_t k = matrix.size();
  if (k == 0) throw std::invalid_argument("shifted entropy needs K >= 1");
  if (logprobs.size() != k) throw std::invalid_argument("logprobs size != K");
  if (!(t > 0.0)) throw std::invalid_argument("temperature t must be > 0");
  const double log_t = std::log(t);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double log_rs = sentence_relevance(j, matrix, logprobs);
    total += -log_add_exp(logprobs[j], log_rs - log_t);
  }
  return total / static_cast<double>(k);
}

}  // namespace

std::vector<std::vector<std::size_t>> cluster_generations(const SimilarityMatrix& matrix,
                                                          double threshold) {
  const std::size_t k = matrix.size();
  DisjointSets sets(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (matrix(i, j) >= threshold) sets.unite(i, j);
    }
  }
  // Roots are the smallest member of each set, so visiting members in order
  // yields clusters ordered by smallest member.
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> slot(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t root = sets.find(i);
    if (slot[root] == k) {
      slot[root] = clusters.size();
      clusters.emplace_back();
    }
    clusters[slot[root]].push_back(i);
  }
  return clusters;
}

double semantic_entropy(std::span<const std::vector<std::size_t>> clusters,
                        std::span<const double> logprobs) {
  if (clusters.empty()) throw std::invalid_argument("semantic entropy needs a cluster");
  double total = 0.0;
  std::vector<double> members;
  for (const auto& c : clusters) {
    members.clear();
    for (std::size_t idx : c) {
      if (idx >= logprobs.size()) throw std::out_of_range("cluster member out of range");
      members.push_back(logprobs[idx]);
    }
    total += log_sum_exp(members);
  }
  return -total / static_cast<double>(clusters.size());
}

double token_sar(const GenerationRecord& g, const TokenRelevanceVector& relevance) {
  if (relevance.normalized.size() != g.tokens.size()) {
    throw std::invalid_argument("token_sar: relevance length " +
                                std::to_string(relevance.normalized.size()) +
                                " != token count " + std::to_string(g.tokens.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < g.tokens.size(); ++i) {
    sum += -g.tokens[i].logprob * relevance.normalized[i];
  }
  return sum;
}

std::vector<double> sequence_logprobs(std::span<const GenerationRecord> generations,
                                      bool length_normalized) {
  std::vector<double> out;
  out.reserve(generations.size());
  for (const auto& g : generations) {
    out.push_back(length_normalized ? -ln_pe(g) : sentence_logprob(g));
  }
  return out;
}

double sent_sar(const SimilarityMatrix& matrix, std::span<const double> logprobs,
                double t) {
  return shifted_entropy(matrix, logprobs, t);
}

double sar(const SimilarityMatrix& matrix, std::span<const double> token_sar_values,
           double t) {
  std::vector<double> shifted(token_sar_values.size());
  std::transform(token_sar_values.begin(), token_sar_values.end(), shifted.begin(),
                 [](double v) { return -v; });
  return shifted_entropy(matrix, shifted, t);
}

double sar(std::span<const GenerationRecord> generations, const SimilarityMatrix& matrix,
           std::span<const TokenRelevanceVector> relevances, double t) {
  if (relevances.size() != generations.size()) {
    throw std::invalid_argument("sar: one relevance vector per generation required");
  }
  std::vector<double> values;
  values.reserve(generations.size());
  for (std::size_t k = 0; k < generations.size(); ++k) {
    values.push_back(token_sar(generations[k], relevances[k]));
  }
  return sar(matrix, values, t);
}

UncertaintyReport score_question(const QuestionRecord& q,
                                 const SimilarityProvider& provider,
                                 const ScoreOptions& options) {
  options.estimator.validate();
  const auto wants = [&](Method m) {
    return std::find(options.methods.begin(), options.methods.end(), m) !=
           options.methods.end();
  };
  const std::span<const GenerationRecord> samples = q.sampled;
  const double k = static_cast<double>(samples.size());
  const double t = options.estimator.t;

  UncertaintyReport report;
  report.id = q.id;

  if (wants(Method::pe) || wants(Method::ln_pe)) {
    double pe_sum = 0.0;
    double ln_sum = 0.0;
    for (const auto& g : samples) {
      pe_sum += pe(g);
      ln_sum += ln_pe(g);
    }
    if (wants(Method::pe)) report[Method::pe] = pe_sum / k;
    if (wants(Method::ln_pe)) report[Method::ln_pe] = ln_sum / k;
  }

  if (wants(Method::lexsim)) {
    std::vector<std::string> texts;
    for (const auto& g : samples) texts.push_back(g.surface());
    report[Method::lexsim] = lexical_similarity_score(texts);
  }

  const bool need_matrix =
      wants(Method::se) || wants(Method::sent_sar) || wants(Method::sar);
  SimilarityMatrix matrix;
  if (need_matrix) matrix = pairwise_matrix(samples, provider);
  const auto logprobs =
      sequence_logprobs(samples, options.estimator.length_normalized_probs);

  if (wants(Method::se)) {
    const auto clusters = cluster_generations(matrix, options.estimator.cluster_threshold);
    report[Method::se] = semantic_entropy(clusters, logprobs);
  }
  if (wants(Method::sent_sar)) report[Method::sent_sar] = sent_sar(matrix, logprobs, t);

  if (wants(Method::token_sar) || wants(Method::sar)) {
    std::vector<double> token_values;
    token_values.reserve(samples.size());
    for (const auto& g : samples) {
      const auto rel = normalized_token_relevance(g, q.prompt, provider, options.relevance);
      token_values.push_back(token_sar(g, rel));
    }
    if (wants(Method::token_sar)) {
      double sum = 0.0;
      for (double v : token_values) sum += v;
      report[Method::token_sar] = sum / k;
    }
    if (wants(Method::sar)) report[Method::sar] = sar(matrix, token_values, t);
  }
  return report;
}

}  // namespace sar
