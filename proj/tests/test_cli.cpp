#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <string>
#include <vector>

#include "sar/pipeline.hpp"
#include "stub_servers.hpp"
#include "test_support.hpp"

using namespace sar;
using sar::testing::data_dir;
using sar::testing::read_text;
using sar::testing::TempDir;
using sar::testing::write_text;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run_cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = env + " '" SAR_CLI_PATH "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

std::string mini_path() { return "'" + (data_dir() / "mini_dataset.jsonl").string() + "'"; }

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, ScoreThenEvalMatchesLibrary) {
  TempDir dir;
  const auto out = dir / "run";
  auto r = run_cli(dir, "score --dataset " + mini_path() + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli(dir, "eval --dataset " + mini_path() + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.err;

  const auto scores = read_json_file(out / "scores.json");
  EXPECT_EQ(scores.at("reports").size(), 20u);
  EXPECT_EQ(scores.at("config").at("t"), 1e-3);
  EXPECT_EQ(scores.at("config").at("provider"), "lexical");

  const auto dataset = load_dataset(data_dir() / "mini_dataset.jsonl");
  auto lexical = SimilarityProvider::lexical();
  const auto in_process = score_dataset(dataset, lexical, {}, 1);
  const auto from_cli = reports_from_json(scores);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    EXPECT_EQ(from_cli[i].values, in_process.reports[i].values);
  }
  const auto lib_eval = evaluate(dataset, in_process.reports, CorrectnessMetric::rouge_l, 0.5, nullptr);
  const auto eval = read_json_file(out / "eval.json");
  EXPECT_EQ(eval.at("auroc").size(), 7u);
  for (const auto& a : lib_eval.aurocs) {
    EXPECT_EQ(eval.at("auroc").at(std::string(method_name(a.method))).get<double>(), *a.auroc);
  }
  EXPECT_EQ(eval.at("n_correct"), 12);
  EXPECT_EQ(read_text(out / "auroc.csv").substr(0, 12), "method,auroc");
  EXPECT_EQ(read_text(out / "labels.csv"), labels_to_csv(lib_eval));
  EXPECT_FALSE(std::filesystem::exists(out / "scores.json.partial"));
}

TEST(Cli, OutputsIdenticalAcrossRunsAndJobs) {
  TempDir dir;
  std::vector<std::string> scores, evals;
  for (const char* jobs : {"1", "4", "1"}) {
    const auto out = dir / (std::string("j") + jobs + std::to_string(scores.size()));
    ASSERT_EQ(run_cli(dir, std::string("score --jobs ") + jobs + " --dataset " + mini_path() +
                               " --out " + q(out)).code, 0);
    ASSERT_EQ(run_cli(dir, "eval --dataset " + mini_path() + " --out " + q(out)).code, 0);
    scores.push_back(read_text(out / "scores.json") + read_text(out / "scores.csv"));
    evals.push_back(read_text(out / "eval.json") + read_text(out / "auroc.csv"));
  }
  EXPECT_EQ(scores[0], scores[1]);
  EXPECT_EQ(scores[0], scores[2]);
  EXPECT_EQ(evals[0], evals[1]);
  EXPECT_EQ(evals[0], evals[2]);
}

TEST(Cli, EstimatorSubset) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "score --estimators pe --dataset " + mini_path() + " --out " + q(dir.path())).code, 0);
  const auto j = read_json_file(dir / "scores.json");
  for (const auto& row : j.at("reports")) {
    EXPECT_EQ(row.size(), 2u);
    EXPECT_TRUE(row.contains("pe"));
  }
  EXPECT_EQ(read_text(dir / "scores.csv").substr(0, 6), "id,pe\n");
  ASSERT_EQ(run_cli(dir, "eval --dataset " + mini_path() + " --out " + q(dir.path())).code, 0);
  EXPECT_EQ(read_json_file(dir / "eval.json").at("auroc").size(), 1u);

  EXPECT_EQ(run_cli(dir, "score --estimators pe,bogus --dataset " + mini_path() + " --out " + q(dir.path())).code, 1);
}

TEST(Cli, TemperatureSweepIsMonotone) {
  TempDir dir;
  std::vector<std::vector<UncertaintyReport>> runs;
  for (const char* t : {"0.001", "1", "10"}) {
    const auto out = dir / (std::string("t") + t);
    ASSERT_EQ(run_cli(dir, std::string("score --t ") + t + " --dataset " + mini_path() + " --out " + q(out)).code, 0);
    runs.push_back(reports_from_json(read_json_file(out / "scores.json")));
    ASSERT_EQ(runs.back().size(), 20u);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    for (Method m : {Method::sent_sar, Method::sar}) {
      EXPECT_LE(*runs[0][i][m], *runs[1][i][m]);
      EXPECT_LE(*runs[1][i][m], *runs[2][i][m]);
    }
    EXPECT_EQ(*runs[0][i][Method::pe], *runs[2][i][Method::pe]);
  }
}

TEST(Cli, SingleClassExitsPartial) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "score --dataset " + mini_path() + " --out " + q(dir.path())).code, 0);
  const auto r = run_cli(dir, "eval --threshold 0 --dataset " + mini_path() + " --out " + q(dir.path()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("undefined"), std::string::npos);
  EXPECT_NE(read_text(dir / "auroc.csv").find("sar,undefined"), std::string::npos);
  EXPECT_EQ(read_json_file(dir / "eval.json").at("undefined").size(), 7u);
}

TEST(Cli, SimilarityMetricWritesOtherLabels) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "score --dataset " + mini_path() + " --out " + q(dir.path())).code, 0);
  const auto r = run_cli(dir, "eval --metric similarity --threshold 0.7 --dataset " + mini_path() +
                                  " --out " + q(dir.path()));
  EXPECT_EQ(r.code, 0) << r.err;
  const auto labels = read_json_file(dir / "eval.json").at("labels");
  EXPECT_EQ(labels[0].at("metric"), "similarity");
  EXPECT_EQ(labels[0].at("threshold"), 0.7);
}

TEST(Cli, OrphanIdsFail) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "score --dataset " + mini_path() + " --out " + q(dir.path())).code, 0);
  auto j = read_json_file(dir / "scores.json");
  j.at("reports").erase(4);
  write_text(dir / "short.json", j.dump());
  const auto r = run_cli(dir, "eval --reports " + q(dir / "short.json") + " --dataset " + mini_path() +
                                  " --out " + q(dir.path()));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("q04"), std::string::npos) << r.err;
}

TEST(Cli, PrecomputedProviderMatchesLexical) {
  TempDir dir;
  const auto sims = "'" + (data_dir() / "mini_dataset_sims.jsonl").string() + "'";
  ASSERT_EQ(run_cli(dir, "score --provider precomputed --dataset " + sims + " --out " + q(dir / "p")).code, 0);
  ASSERT_EQ(run_cli(dir, "score --dataset " + mini_path() + " --out " + q(dir / "l")).code, 0);
  EXPECT_EQ(read_text(dir / "p" / "scores.csv"), read_text(dir / "l" / "scores.csv"));

  const auto r = run_cli(dir, "score --provider precomputed --dataset " + mini_path() + " --out " + q(dir / "x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("question 'q00'"), std::string::npos) << r.err;
}

TEST(Cli, RemoteUrlFromEnvironment) {
  sar::testing::StubSimilarityServer server(
      [](const std::string& a, const std::string& b) { return lexical_similarity(a, b); });
  TempDir dir;
  const auto r = run_cli(dir, "score --provider remote --dataset " + mini_path() + " --out " + q(dir / "r"),
                         "SAR_REMOTE_URL=" + server.url());
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run_cli(dir, "score --dataset " + mini_path() + " --out " + q(dir / "l")).code, 0);
  EXPECT_EQ(read_text(dir / "r" / "scores.csv"), read_text(dir / "l" / "scores.csv"));
  EXPECT_EQ(read_json_file(dir / "r" / "scores.json").at("config").at("remote_url"), server.url());

  EXPECT_EQ(run_cli(dir, "score --provider remote --dataset " + mini_path() + " --out " + q(dir / "n")).code, 1);
}

TEST(Cli, InequalityEqualsLibrary) {
  TempDir dir;
  const auto r = run_cli(dir, "inequality --dataset " + mini_path() + " --out " + q(dir.path()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dataset = load_dataset(data_dir() / "mini_dataset.jsonl");
  auto lexical = SimilarityProvider::lexical();
  const auto lib = inequality_analysis(dataset, lexical);
  EXPECT_EQ(read_text(dir / "token_bins.csv"), bin_table_to_csv(lib.token_level));
  EXPECT_EQ(read_text(dir / "sentence_bins.csv"), bin_table_to_csv(lib.sentence_level));
  EXPECT_EQ(read_text(dir / "relevance_hist.csv"), relevance_histogram_to_csv(lib));
  auto j = read_json_file(dir / "inequality.json");
  auto want = inequality_to_json({}, lib);
  j.erase("config");
  want.erase("config");
  EXPECT_EQ(j, want);
  EXPECT_EQ(j.at("token_level").at("bins").size(), 10u);
}

TEST(Cli, InequalityNotesUniformFallback) {
  TempDir dir;
  QuestionRecord rec;
  rec.id = "punct";
  rec.prompt = "Q: ? A:";
  rec.references = {"x"};
  rec.most_likely = sar::testing::make_generation({"x"}, {-0.1}, GenerationKind::most_likely);
  rec.sampled = {sar::testing::make_generation({"!", "?"}, {-1.0, -0.5}),
                 sar::testing::make_generation({"."}, {-0.3})};
  save_dataset(dir / "p.jsonl", {rec});
  const auto r = run_cli(dir, "inequality --dataset " + q(dir / "p.jsonl") + " --out " + q(dir / "o"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("uniform"), std::string::npos) << r.out;
  const auto j = read_json_file(dir / "o" / "inequality.json");
  EXPECT_EQ(j.at("uniform_fallback_sentences"), 2);
  EXPECT_EQ(j.at("notes").size(), 1u);
}

TEST(Cli, RankChange) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "score --dataset " + mini_path() + " --out " + q(dir.path())).code, 0);
  const auto r = run_cli(dir, "rank-change --dataset " + mini_path() + " --out " + q(dir.path()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = read_json_file(dir / "rank_change.json");
  EXPECT_EQ(j.at("items").size(), 20u);
  EXPECT_EQ(read_text(dir / "rank_change.csv").substr(0, 13), "length_lower,");
  EXPECT_EQ(run_cli(dir, "rank-change --compare nope --dataset " + mini_path() + " --out " + q(dir.path())).code, 1);
}

TEST(Cli, ConfigFileSuppliesDefaults) {
  TempDir dir;
  write_text(dir / "run.ini", "[score]\nt = 10\nestimators = pe,sar\n");
  const auto r = run_cli(dir, "--config " + q(dir / "run.ini") + " score --dataset " + mini_path() +
                                  " --out " + q(dir.path()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = read_json_file(dir / "scores.json");
  EXPECT_EQ(j.at("config").at("t"), 10.0);
  EXPECT_EQ(j.at("config").at("estimators").size(), 2u);
}

TEST(Cli, UsageErrorsAreHardFailures) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, "").code, 1);
  EXPECT_EQ(run_cli(dir, "score --no-such-flag").code, 1);
  EXPECT_EQ(run_cli(dir, "score --dataset /nonexistent.jsonl --out " + q(dir.path())).code, 1);
  EXPECT_EQ(run_cli(dir, "score --t 0 --dataset " + mini_path() + " --out " + q(dir.path())).code, 1);
  EXPECT_EQ(run_cli(dir, "--help").code, 0);
}

TEST(Cli, HarvestAgainstStub) {
  sar::testing::StubCompletionServer server({{" Canberra", -0.3}, {".", -1.2}});
  TempDir dir;
  write_text(dir / "prompts.jsonl",
             "{\"id\":\"a\",\"prompt\":\"Q: capital of Australia? A:\",\"references\":[\"Canberra\"]}\n"
             "{\"id\":\"b\",\"prompt\":\"Q: seat of government? A:\",\"references\":[\"Canberra\"]}\n"
             "{\"id\":\"c\",\"prompt\":\"Q: ACT capital? A:\",\"references\":[\"Canberra\"]}\n");
  auto r = run_cli(dir, "harvest --prompts " + q(dir / "prompts.jsonl") + " --endpoint " +
                            server.endpoint() + " --num-samples 3 --out " + q(dir / "h.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = read_text(dir / "h.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  r = run_cli(dir, "score --dataset " + q(dir / "h.jsonl") + " --out " + q(dir / "s"));
  EXPECT_EQ(r.code, 0) << r.err;

  write_text(dir / "mixed.jsonl",
             "{\"id\":\"a\",\"prompt\":\"Q: x? A:\",\"references\":[\"y\"]}\n"
             "{\"id\":\"b\",\"prompt\":\"MALFORMED\",\"references\":[\"y\"]}\n");
  r = run_cli(dir, "harvest --prompts " + q(dir / "mixed.jsonl") + " --endpoint " +
                       server.endpoint() + " --out " + q(dir / "m.jsonl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("failed: b"), std::string::npos) << r.err;
  const auto partial = read_text(dir / "m.jsonl");
  EXPECT_EQ(std::count(partial.begin(), partial.end(), '\n'), 1);
}

TEST(Cli, HarvestUnreachableLeavesNoFile) {
  std::string endpoint;
  {
    sar::testing::StubCompletionServer server({{"x", -0.1}});
    endpoint = server.endpoint();
  }
  TempDir dir;
  write_text(dir / "prompts.jsonl", "{\"id\":\"a\",\"prompt\":\"Q\",\"references\":[\"y\"]}\n");
  const auto r = run_cli(dir, "harvest --retries 0 --prompts " + q(dir / "prompts.jsonl") +
                                  " --endpoint " + endpoint + " --out " + q(dir / "h.jsonl"));
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(std::filesystem::exists(dir / "h.jsonl"));
  EXPECT_FALSE(std::filesystem::exists(dir / "h.jsonl.partial"));
}
