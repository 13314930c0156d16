#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "attnspec/analysis.hpp"
#include "attnspec/fixtures.hpp"
#include "attnspec/render.hpp"
#include "attnspec/selftest.hpp"
#include "test_util.hpp"

using namespace attnspec;
using testutil::TempDir;

namespace {

FixtureSpec planted_spec(std::uint64_t seed, Index rank) {
  FixtureSpec s;
  s.seed = seed;
  s.length = 64;
  s.head_dim = 16;
  s.model_dim = 48;
  s.planted_rank = rank;
  return s;
}

FixtureLayout small_layout(const std::string& name, Index texts = 2) {
  FixtureLayout l;
  l.model_name = name;
  l.layers = 2;
  l.query_heads = 2;
  l.texts = texts;
  return l;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ATTNSPEC_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const json& find_pool(const json& model, const char* source) { return model.at(source); }

}  // namespace

TEST(AnalyzeHead, PlantedFieldPassesEveryCheck) {
  const auto qk = synth_qk(planted_spec(1, 3));
  const auto h = analyze_head(qk.queries, qk.keys, 16, {0, 1, 2, 10, 40});
  EXPECT_TRUE(h.row_sum_ok());
  EXPECT_TRUE(h.rank_bound_ok);
  EXPECT_TRUE(h.orthogonality_ok);
  EXPECT_TRUE(h.bounds_ok());
  EXPECT_FALSE(h.spectrum.has_vectors());
  ASSERT_EQ(h.truncations.size(), 5u);
  EXPECT_EQ(h.truncations[3].used, h.spectrum.numerical_rank);  // 10 clamps to R
  EXPECT_EQ(h.truncations[3].bound, 0.0);
  EXPECT_LE(h.truncations[3].max_l1, 1e-9);
  EXPECT_EQ(h.betas.size(), 2u * static_cast<std::size_t>(h.spectrum.numerical_rank));
}

TEST(AnalyzeHead, MeanErrorShrinksWithRank) {
  FixtureSpec s;
  s.seed = 2;
  s.length = 128;
  s.head_dim = 64;
  const auto qk = synth_qk(s);
  const auto h = analyze_head(qk.queries, qk.keys, 64, {10, 20, 40});
  EXPECT_GE(h.truncations[0].mean_l1, h.truncations[1].mean_l1);
  EXPECT_GE(h.truncations[1].mean_l1, h.truncations[2].mean_l1);
  EXPECT_TRUE(h.bounds_ok());
}

TEST(ParallelFor, EachIndexOnceAndErrorsPropagate) {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) fail(ErrorKind::numerical, "boom"); }), Error);
}

TEST(RunAnalysis, PlantedFixturePipeline) {
  TempDir dir("pipeline");
  write_fixture_manifest(planted_spec(10, 3), small_layout("planted"), dir.path());
  RunConfig cfg;
  cfg.inputs = {dir.path()};
  cfg.jobs = 1;
  const auto res = run_analysis(cfg);
  EXPECT_EQ(res.violation_count, 0u);
  const auto& model = res.report.at("models").at(0);
  const auto& gen = find_pool(model, "generated");
  EXPECT_EQ(gen.at("count").get<int>(), 2 * 2 * 2);  // layers x heads x texts: both texts pooled
  double at90 = -1;
  for (const auto& e : gen.at("effective_rank_median"))
    if (e.at("threshold").get<double>() == 0.9) at90 = e.at("median").get<double>();
  EXPECT_NEAR(at90, 3.0, 1.0);
  EXPECT_EQ(model.at("learned").at("count").get<int>(), 4);
  EXPECT_EQ(model.at("truncation").size(), 3u);
  EXPECT_EQ(model.at("heads").at("generated").size(), 8u);
  EXPECT_EQ(model.at("text_variability").at(0).at("heads").get<int>(), 4);
  EXPECT_EQ(res.report.at("report_version"), "1");
}

TEST(RunAnalysis, DeterministicAcrossWorkerCounts) {
  TempDir dir("determinism");
  FixtureSpec s;
  s.seed = 4;
  s.length = 48;
  s.head_dim = 8;
  s.model_dim = 24;
  s.noise_level = 0.1;
  s.planted_rank = 2;
  write_fixture_manifest(s, small_layout("det", 3), dir.path());
  RunConfig cfg;
  cfg.inputs = {dir.path()};
  cfg.jobs = 1;
  const auto one = run_analysis(cfg).report.dump(2);
  cfg.jobs = 4;
  EXPECT_EQ(run_analysis(cfg).report.dump(2), one);
}

TEST(RunAnalysis, ConfigValidation) {
  RunConfig cfg;
  EXPECT_THROW(run_analysis(cfg), Error);  // no inputs
  cfg.inputs = {"/nonexistent"};
  cfg.ranks = {5, 2};
  EXPECT_THROW(run_analysis(cfg), Error);
  cfg.ranks = {1};
  cfg.thresholds = {0.5, 1.5};
  EXPECT_THROW(run_analysis(cfg), Error);
  cfg.thresholds = {0.5};
  try {
    run_analysis(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_file);
  }
}

TEST(RunAnalysis, IncompletePairIsRejected) {
  TempDir dir("incomplete");
  auto m = write_fixture_manifest(planted_spec(1, 2), small_layout("x", 1), dir.path());
  m.entries.erase(std::remove_if(m.entries.begin(), m.entries.end(),
                                 [](const ManifestEntry& e) { return e.kind == EntryKind::key && e.layer == 1; }),
                  m.entries.end());
  write_manifest(m, dir.path());
  RunConfig cfg;
  cfg.inputs = {dir.path()};
  EXPECT_THROW(run_analysis(cfg), Error);
}

TEST(Render, SingleEmptyAndMultiModel) {
  TempDir a("render_a"), b("render_b");
  write_fixture_manifest(planted_spec(1, 2), small_layout("zeta", 1), a.path());
  write_fixture_manifest(planted_spec(2, 4), small_layout("alpha", 1), b.path());
  RunConfig cfg;
  cfg.inputs = {a.path()};
  const auto single = render_report(run_analysis(cfg).report, TableFormat::text);
  EXPECT_NE(single.find("zeta"), std::string::npos);
  EXPECT_NE(single.find("Ẽ"), std::string::npos);
  EXPECT_NE(single.find("90%"), std::string::npos);

  cfg.inputs = {a.path(), b.path()};
  const auto report = run_analysis(cfg).report;
  EXPECT_EQ(report.at("models").at(0).at("model_name"), "alpha");
  const auto multi = render_report(report, TableFormat::text);
  EXPECT_LT(multi.find("alpha"), multi.find("zeta"));
  const auto csv = render_report(report, TableFormat::csv);
  EXPECT_EQ(csv.rfind("table,model,source,key,median", 0), 0u);
  EXPECT_NE(csv.find("effective_rank,alpha,generated,0.90000000000000002,"), std::string::npos);

  json empty{{"report_version", "1"},
             {"config", {{"ranks", {1, 2}}, {"thresholds", {0.8}}, {"truncation_ranks", {10}}}},
             {"models", json::array()}};
  const auto headers = render_report(empty, TableFormat::text);
  EXPECT_NE(headers.find("Cumulative variance"), std::string::npos);
  EXPECT_EQ(headers.find("beta"), std::string::npos);

  EXPECT_THROW(render_report(json{{"report_version", "1"}}, TableFormat::text), Error);
  json broken = empty;
  broken["models"] = json::array({json{{"model_name", "m"}}});
  EXPECT_THROW(render_report(broken, TableFormat::text), Error);
}

TEST(Selftest, PassesAndDetectsInjectedFault) {
  SelftestOptions o;
  o.lipschitz_pairs = 300;
  o.bound_fields = 4;
  o.qr_pairs = 5;
  std::ostringstream a, b;
  EXPECT_TRUE(run_selftest(o, a));
  EXPECT_TRUE(run_selftest(o, b));
  EXPECT_EQ(a.str(), b.str());

  o.fault = Fault::sigma_tail;
  std::ostringstream c;
  EXPECT_FALSE(run_selftest(o, c));
  EXPECT_NE(c.str().find("FAIL truncation_bound"), std::string::npos) << c.str();
}

TEST(Cli, EndToEnd) {
  TempDir dir("cli");
  const auto data = dir / "data";
  ASSERT_EQ(run_cli("fixture --out " + data.string() +
                        " --seed 7 --length 64 --head-dim 16 --model-dim 48 --planted-rank 3 --heads 2 --texts 2",
                    dir / "fixture.log"),
            0)
      << slurp(dir / "fixture.log");

  const auto r1 = dir / "r1.json", r2 = dir / "r2.json";
  EXPECT_EQ(run_cli("analyze --input " + data.string() + " --out " + r1.string() + " --jobs 1", dir / "a1.log"), 0)
      << slurp(dir / "a1.log");
  EXPECT_EQ(run_cli("analyze --input " + data.string() + " --out " + r2.string() + " --jobs 3 --format csv",
                    dir / "a2.log"),
            0);
  EXPECT_EQ(slurp(r1), slurp(r2));
  EXPECT_NE(slurp(dir / "a1.log").find("Effective rank"), std::string::npos);

  EXPECT_EQ(run_cli("render " + r1.string() + " --format text", dir / "render.log"), 0);
  EXPECT_NE(slurp(dir / "render.log").find("fixture"), std::string::npos);

  EXPECT_EQ(run_cli("analyze --input " + (dir / "missing").string(), dir / "bad.log"), 2);
  EXPECT_EQ(run_cli("analyze --input " + data.string() + " --ranks 5,1", dir / "bad2.log"), 2);
  EXPECT_EQ(run_cli("analyze --input " + data.string() + " --format yaml", dir / "bad3.log"), 2);
  EXPECT_EQ(run_cli("render " + (dir / "nope.json").string(), dir / "bad4.log"), 2);
}

TEST(Cli, SelftestExitCodes) {
  TempDir dir("cli_selftest");
  const std::string quick = "selftest --seed 11 --fields 3 --pairs 200";
  EXPECT_EQ(run_cli(quick, dir / "s1.log"), 0) << slurp(dir / "s1.log");
  EXPECT_EQ(run_cli(quick, dir / "s2.log"), 0);
  EXPECT_EQ(slurp(dir / "s1.log"), slurp(dir / "s2.log"));
  EXPECT_EQ(run_cli(quick + " --inject-fault sigma-tail", dir / "s3.log"), 1);
  EXPECT_NE(slurp(dir / "s3.log").find("FAIL truncation_bound"), std::string::npos);
}
