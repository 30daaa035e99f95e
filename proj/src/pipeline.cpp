#include "sar/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace sar {

void RunConfig::validate() const {
  if (estimators.empty()) throw std::invalid_argument("estimator list must be non-empty");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("threshold must lie in [0,1]");
  }
  estimator.validate();
  if (provider.backend == SimilarityBackend::remote && provider.remote.url.empty()) {
    throw std::invalid_argument("remote provider requires --remote-url");
  }
}

json RunConfig::to_json() const {
  json methods = json::array();
  for (Method m : estimators) methods.push_back(method_name(m));
  json j = {{"dataset", dataset.string()},
            {"provider", to_string(provider.backend)},
            {"estimators", methods},
            {"t", estimator.t},
            {"cluster_threshold", estimator.cluster_threshold},
            {"length_normalized_probs", estimator.length_normalized_probs},
            {"joiner", relevance.joiner},
            {"metric", to_string(metric)},
            {"threshold", threshold},
            {"seed", seed}};
  if (provider.backend == SimilarityBackend::remote) j["remote_url"] = provider.remote.url;
  return j;
}

unsigned resolve_jobs(unsigned jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  // Indices past the earliest failure so far are skipped; earlier ones still
  // run so the reported failure is the first in input order.
  std::atomic<std::size_t> first_failure{n};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      if (i > first_failure.load()) continue;
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        std::size_t seen = first_failure.load();
        while (i < seen && !first_failure.compare_exchange_weak(seen, i)) {
        }
      }
    }
  };
  const std::size_t n_threads =
      std::min<std::size_t>(resolve_jobs(jobs), std::max<std::size_t>(n, 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SimilarityProvider make_provider(const ProviderSettings& settings,
                                 std::span<const QuestionRecord> dataset) {
  switch (settings.backend) {
    case SimilarityBackend::lexical:
      return SimilarityProvider::lexical();
    case SimilarityBackend::precomputed: {
      std::map<std::string, double> sims;
      for (const auto& q : dataset) sims.insert(q.precomputed_sims.begin(), q.precomputed_sims.end());
      return SimilarityProvider::precomputed(std::move(sims));
    }
    case SimilarityBackend::remote:
      return SimilarityProvider::remote(settings.remote);
  }
  throw std::invalid_argument("unknown provider backend");
}

ScoredDataset score_dataset(std::span<const QuestionRecord> dataset,
                            const SimilarityProvider& provider, const ScoreOptions& options,
                            unsigned jobs, bool timing) {
  options.estimator.validate();
  ScoredDataset out;
  out.reports.resize(dataset.size());
  if (timing) out.seconds.resize(dataset.size());
  parallel_for(dataset.size(), jobs, [&](std::size_t i) {
    const auto start = std::chrono::steady_clock::now();
    try {
      out.reports[i] = score_question(dataset[i], provider, options);
    } catch (const std::exception& e) {
      throw QuestionError(dataset[i].id, e.what());
    }
    if (timing) {
      out.seconds[i] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  });
  return out;
}

bool EvalResult::any_undefined() const {
  return std::any_of(aurocs.begin(), aurocs.end(),
                     [](const MethodAuroc& m) { return !m.auroc.has_value(); });
}

EvalResult evaluate(std::span<const QuestionRecord> dataset,
                    std::span<const UncertaintyReport> reports, CorrectnessMetric metric,
                    double threshold, const SimilarityProvider* provider) {
  std::map<std::string, const UncertaintyReport*> by_id;
  for (const auto& r : reports) by_id[r.id] = &r;
  std::set<std::string> dataset_ids;
  std::vector<std::string> orphans;
  for (const auto& q : dataset) {
    dataset_ids.insert(q.id);
    if (!by_id.count(q.id)) orphans.push_back(q.id + " (no report)");
  }
  for (const auto& r : reports) {
    if (!dataset_ids.count(r.id)) orphans.push_back(r.id + " (not in dataset)");
  }
  if (!orphans.empty()) {
    std::string msg = "reports and dataset disagree on question ids:";
    for (const auto& o : orphans) msg += " " + o;
    throw std::invalid_argument(msg);
  }

  EvalResult result;
  for (const auto& q : dataset) {
    result.labels.push_back(correctness(q, metric, threshold, provider));
    if (result.labels.back().is_correct) {
      ++result.n_correct;
    } else {
      ++result.n_incorrect;
    }
  }
  std::vector<bool> correct;
  for (const auto& l : result.labels) correct.push_back(l.is_correct);

  for (Method m : kAllMethods) {
    const bool present = !dataset.empty() && std::all_of(dataset.begin(), dataset.end(),
                                                         [&](const QuestionRecord& q) {
                                                           return (*by_id[q.id])[m].has_value();
                                                         });
    if (!present) continue;
    std::vector<double> u;
    for (const auto& q : dataset) u.push_back(*(*by_id[q.id])[m]);
    MethodAuroc entry{m, std::nullopt};
    try {
      entry.auroc = auroc(u, correct);
    } catch (const UndefinedAuroc&) {
    }
    result.aurocs.push_back(entry);
  }
  return result;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

json reports_to_json(const json& config, std::span<const UncertaintyReport> reports,
                     std::span<const double> seconds) {
  json rows = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    json row = {{"id", reports[i].id}};
    for (Method m : kAllMethods) {
      if (const auto& v = reports[i][m]) row[std::string(method_name(m))] = *v;
    }
    if (!seconds.empty()) row["seconds"] = seconds[i];
    rows.push_back(std::move(row));
  }
  return {{"config", config}, {"reports", std::move(rows)}};
}

std::vector<UncertaintyReport> reports_from_json(const json& j) {
  std::vector<UncertaintyReport> out;
  for (const auto& row : j.at("reports")) {
    UncertaintyReport r;
    r.id = row.at("id").get<std::string>();
    for (Method m : kAllMethods) {
      auto it = row.find(std::string(method_name(m)));
      if (it != row.end() && !it->is_null()) r[m] = it->get<double>();
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

// Quotes a CSV field only when needed.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json bin_table_json(const BinTable& t) {
  json bins = json::array();
  for (std::size_t b = 0; b < kRelevanceBins; ++b) {
    const auto& bin = t.bins[b];
    bins.push_back({{"bin", b},
                    {"lower", bin.lower},
                    {"upper", bin.upper},
                    {"count", bin.count},
                    {"up_sum", bin.up_sum},
                    {"up_mean", bin.up_mean}});
  }
  return {{"total", t.total}, {"bins", std::move(bins)}};
}

}  // namespace

std::string reports_to_csv(std::span<const UncertaintyReport> reports,
                           std::span<const Method> methods, std::span<const double> seconds) {
  std::ostringstream os;
  os << "id";
  for (Method m : methods) os << ',' << method_name(m);
  if (!seconds.empty()) os << ",seconds";
  os << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    os << csv_field(reports[i].id);
    for (Method m : methods) {
      os << ',';
      if (const auto& v = reports[i][m]) os << format_double(*v);
    }
    if (!seconds.empty()) os << ',' << format_double(seconds[i]);
    os << '\n';
  }
  return os.str();
}

json eval_to_json(const json& config, const EvalResult& result) {
  json aurocs = json::object();
  json undefined = json::array();
  for (const auto& a : result.aurocs) {
    const std::string name(method_name(a.method));
    if (a.auroc) {
      aurocs[name] = *a.auroc;
    } else {
      aurocs[name] = nullptr;
      undefined.push_back(name);
    }
  }
  json labels = json::array();
  for (const auto& l : result.labels) {
    labels.push_back({{"id", l.id},
                      {"is_correct", l.is_correct},
                      {"metric", to_string(l.metric)},
                      {"score", l.score},
                      {"threshold", l.threshold}});
  }
  return {{"config", config},
          {"n_correct", result.n_correct},
          {"n_incorrect", result.n_incorrect},
          {"auroc", std::move(aurocs)},
          {"undefined", std::move(undefined)},
          {"labels", std::move(labels)}};
}

std::string auroc_to_csv(const EvalResult& result) {
  std::ostringstream os;
  os << "method,auroc\n";
  for (const auto& a : result.aurocs) {
    os << method_name(a.method) << ',' << (a.auroc ? format_double(*a.auroc) : "undefined")
       << '\n';
  }
  return os.str();
}

std::string labels_to_csv(const EvalResult& result) {
  std::ostringstream os;
  os << "id,metric,score,threshold,is_correct\n";
  for (const auto& l : result.labels) {
    os << csv_field(l.id) << ',' << to_string(l.metric) << ',' << format_double(l.score) << ','
       << format_double(l.threshold) << ',' << (l.is_correct ? 1 : 0) << '\n';
  }
  return os.str();
}

json inequality_to_json(const json& config, const InequalityResult& r) {
  json notes = json::array();
  if (r.uniform_fallback_sentences > 0) {
    notes.push_back(std::to_string(r.uniform_fallback_sentences) +
                    " sentence(s) had all-zero token relevance; uniform weights were used");
  }
  return {{"config", config},
          {"token_level", bin_table_json(r.token_level)},
          {"sentence_level", bin_table_json(r.sentence_level)},
          {"sentences_skipped", r.sentences_skipped},
          {"questions_skipped", r.questions_skipped},
          {"uniform_fallback_sentences", r.uniform_fallback_sentences},
          {"notes", std::move(notes)}};
}

std::string bin_table_to_csv(const BinTable& table) {
  std::ostringstream os;
  os << "bin,lower,upper,count,up_sum,up_mean\n";
  for (std::size_t b = 0; b < kRelevanceBins; ++b) {
    const auto& bin = table.bins[b];
    os << b << ',' << format_double(bin.lower) << ',' << format_double(bin.upper) << ','
       << bin.count << ',' << format_double(bin.up_sum) << ',' << format_double(bin.up_mean)
       << '\n';
  }
  return os.str();
}

std::string relevance_histogram_to_csv(const InequalityResult& r) {
  std::ostringstream os;
  os << "level,bin,lower,upper,count,fraction\n";
  auto emit = [&](const char* level, const BinTable& t) {
    for (std::size_t b = 0; b < kRelevanceBins; ++b) {
      const auto& bin = t.bins[b];
      const double frac = t.total ? static_cast<double>(bin.count) / t.total : 0.0;
      os << level << ',' << b << ',' << format_double(bin.lower) << ','
         << format_double(bin.upper) << ',' << bin.count << ',' << format_double(frac) << '\n';
    }
  };
  emit("token", r.token_level);
  emit("sentence", r.sentence_level);
  return os.str();
}

json rank_change_to_json(const json& config, const RankChangeReport& r,
                         std::span<const std::string> ids) {
  json items = json::array();
  for (std::size_t i = 0; i < r.changes.size(); ++i) {
    items.push_back({{"id", ids[i]}, {"change", r.changes[i]}});
  }
  json buckets = json::array();
  for (const auto& b : r.buckets) {
    buckets.push_back({{"lower", b.lower},
                       {"upper", b.upper},
                       {"count", b.count},
                       {"mean_change", b.mean_change}});
  }
  json corr = r.length_correlation ? json(*r.length_correlation) : json(nullptr);
  return {{"config", config},
          {"items", std::move(items)},
          {"buckets", std::move(buckets)},
          {"length_correlation", std::move(corr)}};
}

std::string rank_change_to_csv(const RankChangeReport& r) {
  std::ostringstream os;
  os << "length_lower,length_upper,count,mean_rank_change\n";
  for (const auto& b : r.buckets) {
    os << format_double(b.lower) << ',' << format_double(b.upper) << ',' << b.count << ','
       << format_double(b.mean_change) << '\n';
  }
  return os.str();
}

std::vector<double> mean_sample_lengths(std::span<const QuestionRecord> dataset) {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& q : dataset) {
    double total = 0.0;
    for (const auto& g : q.sampled) total += static_cast<double>(g.size());
    out.push_back(total / static_cast<double>(q.sampled.size()));
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace sar
