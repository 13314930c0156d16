// attnspec: spectra of attention logit fields and weight interactions.
//
// Exit codes: 0 success, 1 invariant violation or internal failure,
// 2 input or configuration error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnspec/attnspec.hpp"

namespace {

using namespace attnspec;

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitInput = 2;

const std::map<std::string, TableFormat> kFormats{
    {"text", TableFormat::text}, {"csv", TableFormat::csv}, {"json", TableFormat::json}};

int run_analyze(const RunConfig& config) {
  const auto result = run_analysis(config);
  if (config.output) write_report(result.report, *config.output);
  if (config.format != TableFormat::json || !config.output) std::cout << render_report(result.report, config.format);
  if (result.violation_count > 0) {
    std::cerr << "attnspec: " << result.violation_count << " invariant violation(s); see report invariants\n";
    return kExitViolation;
  }
  return kExitOk;
}

int run_render(const std::string& path, TableFormat format) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::missing_file, "cannot open report " + path);
  json report;
  try {
    report = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::malformed_json, path + ": " + e.what());
  }
  std::cout << render_report(report, format);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral analysis of attention logit fields and query-key weight interactions"};
  app.require_subcommand(1);

  RunConfig config;
  std::vector<std::string> inputs;
  std::string jobs = "auto";
  std::string out_path;
  auto* analyze = app.add_subcommand("analyze", "Analyze one or more interchange directories");
  analyze->add_option("--input", inputs, "Interchange directory (repeatable)")->required();
  analyze->add_option("--ranks", config.ranks, "Cumulative-variance rank grid")->delimiter(',');
  analyze->add_option("--thresholds", config.thresholds, "Effective-rank threshold grid")->delimiter(',');
  analyze->add_option("--trunc-ranks", config.truncation_ranks, "Truncation ranks for the l1 report")->delimiter(',');
  analyze->add_option("--format", config.format, "Rendering: text, csv or json")
      ->transform(CLI::CheckedTransformer(kFormats, CLI::ignore_case).description("{text,csv,json}"));
  analyze->add_option("--out", out_path, "Write the JSON report here");
  analyze->add_option("--jobs", jobs, "Worker count or 'auto'");

  SelftestOptions selftest_opts;
  std::string fault = "none";
  auto* selftest = app.add_subcommand("selftest", "Run the seeded numerical checks");
  selftest->add_option("--seed", selftest_opts.seed, "Base seed");
  selftest->add_option("--fields", selftest_opts.bound_fields, "Number of fixture fields for the bound checks");
  selftest->add_option("--pairs", selftest_opts.lipschitz_pairs, "Number of random Lipschitz pairs");
  selftest->add_option("--inject-fault", fault, "Deliberately break a check: none or sigma-tail")
      ->check(CLI::IsMember({"none", "sigma-tail"}));

  std::string report_path;
  TableFormat render_format = TableFormat::text;
  auto* render = app.add_subcommand("render", "Render a JSON report as tables");
  render->add_option("report", report_path, "Report JSON")->required();
  render->add_option("--format", render_format, "text, csv or json")
      ->transform(CLI::CheckedTransformer(kFormats, CLI::ignore_case).description("{text,csv,json}"));

  FixtureSpec fspec;
  FixtureLayout layout;
  std::optional<Index> planted;
  std::string fixture_dir;
  std::string dtype = "f64";
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic interchange directory");
  fixture->add_option("--out", fixture_dir, "Output directory")->required();
  fixture->add_option("--seed", fspec.seed, "Seed");
  fixture->add_option("--length", fspec.length, "Context length L");
  fixture->add_option("--head-dim", fspec.head_dim, "Head dimension");
  fixture->add_option("--model-dim", fspec.model_dim, "Model dimension");
  fixture->add_option("--planted-rank", planted, "Planted rank of the Q/K factors");
  fixture->add_option("--noise", fspec.noise_level, "Gaussian noise level");
  fixture->add_option("--model-name", layout.model_name, "Model name written to the manifest");
  fixture->add_option("--layers", layout.layers, "Layers");
  fixture->add_option("--heads", layout.query_heads, "Query heads per layer");
  fixture->add_option("--group-size", layout.group_size, "Query heads per KV head");
  fixture->add_option("--texts", layout.texts, "Texts");
  fixture->add_option("--dtype", dtype, "Blob dtype")->check(CLI::IsMember({"f32", "f64"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*analyze) {
      for (const auto& i : inputs) config.inputs.emplace_back(i);
      if (!out_path.empty()) config.output = out_path;
      if (jobs != "auto") {
        try {
          config.jobs = static_cast<unsigned>(std::stoul(jobs));
        } catch (const std::exception&) {
          fail(ErrorKind::precondition, "--jobs must be a positive integer or 'auto'");
        }
        require(config.jobs > 0, ErrorKind::precondition, "--jobs must be positive");
      }
      return run_analyze(config);
    }
    if (*selftest) {
      selftest_opts.fault = fault == "sigma-tail" ? Fault::sigma_tail : Fault::none;
      return run_selftest(selftest_opts, std::cout) ? kExitOk : kExitViolation;
    }
    if (*render) return run_render(report_path, render_format);
    if (*fixture) {
      fspec.planted_rank = planted;
      layout.dtype = dtype == "f32" ? DType::f32 : DType::f64;
      const auto m = write_fixture_manifest(fspec, layout, fixture_dir);
      std::cout << "wrote " << m.entries.size() << " entries to " << fixture_dir << '\n';
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "attnspec: " << e.what() << '\n';
    return e.is_input_error() || e.kind() == ErrorKind::precondition ? kExitInput : kExitViolation;
  } catch (const std::exception& e) {
    std::cerr << "attnspec: internal error: " << e.what() << '\n';
    return kExitViolation;
  }
  return kExitOk;
}
