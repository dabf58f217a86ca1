// lowfpr command line tool: evaluate, report, plot-data, trajectory,
// synth-study, prompts dump, validate-dataset.
//
// Exit codes: 0 success, 1 hard failure, 2 the run finished but at least one
// cell is still incomplete (rerun evaluate to fill the gaps).

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lowfpr/runner.hpp"

namespace {

using namespace lowfpr;

int manifest_exit_code(const RunManifest& manifest) { return manifest.all_complete() ? 0 : 2; }

void print_manifest_summary(const RunManifest& manifest, std::ostream& out) {
  for (const auto& cell : manifest.cells) {
    out << cell_slug(cell.key) << ": " << cell.status << " (" << cell.records << "/"
        << cell.expected << " records";
    if (cell.failures > 0) out << ", " << cell.failures << " failures";
    out << ")\n";
    if (!cell.first_error.empty()) out << "  first error: " << cell.first_error << "\n";
  }
}

Example placeholder_example(TaskKind task) {
  Example ex;
  ex.task = task;
  ex.id = "example";
  switch (task) {
    case TaskKind::SafetyPrompt:
      ex.prompt = "<prompt>";
      break;
    case TaskKind::SafetyResponse:
      ex.prompt = "<prompt>";
      ex.response = "<response>";
      break;
    case TaskKind::Hallucination:
      ex.question = "<question>";
      ex.context = "<context>";
      ex.answer = "<answer>";
      break;
  }
  return ex;
}

struct EvaluateArgs {
  std::string config_path;
  std::string output_dir;
  std::string endpoint;
  std::string model;
  std::uint64_t seed = 0;
  std::size_t max_inflight = 0;
  bool trace_wire = false;
};

struct ReportArgs {
  std::string run_dir;
  std::vector<double> alphas;
};

struct PlotArgs {
  std::string run_dir;
  std::string kind;
};

struct TrajectoryArgs {
  std::string run_dir;
  std::size_t stride = 0;
  std::size_t grid_size = 0;
};

struct SynthArgs {
  std::uint64_t seed = 42;
  std::size_t n = 2000;
  std::vector<double> grid{0.0, 1.0, 2.0, 4.0};
  double separation = 1.0;
  double noise = 4.0;
  std::vector<double> alphas{0.01, 0.03, 0.05};
  std::string out_path;
};

struct PromptArgs {
  std::string task;
  std::string mode = "think_off";
  std::string scheme = "token";
  std::string certainty = "base";
  std::string family = "standard";
  std::string open_tag = "<think>";
  std::string close_tag = "</think>";
};

struct ValidateArgs {
  std::string path;
  std::string task;
  bool skip_bad_lines = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Strict low-FPR evaluation toolkit for binary LLM classifiers"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  EvaluateArgs ev;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "Score every configured cell, resuming cached records");
  evaluate_cmd->add_option("--config", ev.config_path, "Run configuration JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  auto* ev_out = evaluate_cmd->add_option("--output-dir", ev.output_dir, "Override output_dir");
  auto* ev_endpoint = evaluate_cmd->add_option("--endpoint", ev.endpoint, "Override backend endpoint");
  auto* ev_model = evaluate_cmd->add_option("--model", ev.model, "Override model name");
  auto* ev_seed = evaluate_cmd->add_option("--seed", ev.seed, "Override run seed");
  auto* ev_inflight =
      evaluate_cmd->add_option("--max-inflight", ev.max_inflight, "Override request concurrency");
  evaluate_cmd->add_flag("--trace-wire", ev.trace_wire, "Log redacted request/response traffic");

  ReportArgs rp;
  auto* report_cmd = app.add_subcommand("report", "Render report tables from stored records");
  report_cmd->add_option("--run-dir", rp.run_dir, "Directory written by evaluate")->required();
  report_cmd->add_option("--alphas", rp.alphas, "FPR budgets for the table columns")
      ->delimiter(',');

  PlotArgs pl;
  auto* plot_cmd = app.add_subcommand("plot-data", "Write plot-ready CSV files");
  plot_cmd->add_option("--run-dir", pl.run_dir, "Directory written by evaluate")->required();
  plot_cmd->add_option("--kind", pl.kind,
                       "One of: roc, logit-hist, trajectory-band, transition, bar-summary")
      ->required();

  TrajectoryArgs tj;
  auto* traj_cmd = app.add_subcommand(
      "trajectory", "Extract reasoning trajectories for think-on false positives");
  traj_cmd->add_option("--run-dir", tj.run_dir, "Directory written by evaluate")->required();
  auto* tj_stride = traj_cmd->add_option("--stride", tj.stride, "Prefix stride in tokens");
  auto* tj_grid = traj_cmd->add_option("--grid-size", tj.grid_size, "Aggregation grid size");

  SynthArgs sy;
  auto* synth_cmd =
      app.add_subcommand("synth-study", "Run the synthetic reasoning polarization study");
  synth_cmd->add_option("--seed", sy.seed, "Generator seed");
  synth_cmd->add_option("--n", sy.n, "Dataset size");
  synth_cmd->add_option("--grid", sy.grid, "Polarization grid")->delimiter(',');
  synth_cmd->add_option("--separation", sy.separation, "Class separation");
  synth_cmd->add_option("--noise", sy.noise, "Noise scale");
  synth_cmd->add_option("--alphas", sy.alphas, "FPR budgets")->delimiter(',');
  synth_cmd->add_option("--out", sy.out_path, "Write CSV here instead of stdout");

  PromptArgs pr;
  auto* prompts_cmd = app.add_subcommand("prompts", "Prompt template utilities");
  prompts_cmd->require_subcommand(1);
  auto* dump_cmd = prompts_cmd->add_subcommand("dump", "Print one rendered prompt bundle");
  dump_cmd->add_option("--task", pr.task, "safety_prompt, safety_response, or hallucination")
      ->required();
  dump_cmd->add_option("--mode", pr.mode, "think_on or think_off");
  dump_cmd->add_option("--scheme", pr.scheme, "token or verbalized");
  dump_cmd->add_option("--certainty", pr.certainty, "base or a percent in [60, 99]");
  dump_cmd->add_option("--family", pr.family, "standard or reasoning_native");
  dump_cmd->add_option("--open-tag", pr.open_tag, "Thinking open tag (reasoning_native)");
  dump_cmd->add_option("--close-tag", pr.close_tag, "Thinking close tag (reasoning_native)");

  ValidateArgs va;
  auto* validate_cmd = app.add_subcommand("validate-dataset", "Check a JSONL dataset file");
  validate_cmd->add_option("--path", va.path, "Dataset file")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--task", va.task, "safety_prompt, safety_response, or hallucination")
      ->required();
  validate_cmd->add_flag("--skip-bad-lines", va.skip_bad_lines,
                         "Collect malformed lines instead of failing");

  CLI11_PARSE(app, argc, argv);

  try {
    if (evaluate_cmd->parsed()) {
      std::ifstream in(ev.config_path);
      if (!in) throw IoError("cannot read " + ev.config_path);
      RunConfig cfg = config_from_json(nlohmann::json::parse(in));
      if (ev_out->count() > 0) cfg.output_dir = ev.output_dir;
      if (ev_endpoint->count() > 0) cfg.backend.endpoint = ev.endpoint;
      if (ev_model->count() > 0) cfg.backend.model_name = ev.model;
      if (ev_seed->count() > 0) cfg.seed = ev.seed;
      if (ev_inflight->count() > 0) cfg.backend.max_inflight = ev.max_inflight;
      if (ev.trace_wire) cfg.trace_wire = true;

      const RunManifest manifest = evaluate(cfg);
      print_manifest_summary(manifest, std::cout);
      std::cout << (manifest.all_complete() ? "run complete\n" : "run incomplete; rerun to resume\n");
      return manifest_exit_code(manifest);
    }

    if (report_cmd->parsed()) {
      const RunConfig cfg = load_config(rp.run_dir);
      const RunManifest manifest = load_manifest(rp.run_dir);
      const std::vector<double>& alphas = rp.alphas.empty() ? cfg.alphas : rp.alphas;
      const ReportBundle bundle = write_report(cfg, manifest, alphas);
      std::cout << bundle.text;
      std::cout << "wrote " << (std::filesystem::path(cfg.output_dir) / "reports").string()
                << "/report.{txt,csv,json}\n";
      return manifest_exit_code(manifest);
    }

    if (plot_cmd->parsed()) {
      const RunConfig cfg = load_config(pl.run_dir);
      const RunManifest manifest = load_manifest(pl.run_dir);
      for (const auto& path : emit_plot_data(cfg, manifest, plot_kind_from_string(pl.kind)))
        std::cout << path.string() << "\n";
      return 0;
    }

    if (traj_cmd->parsed()) {
      RunConfig cfg = load_config(tj.run_dir);
      cfg.trajectory.enabled = true;
      if (tj_stride->count() > 0) cfg.trajectory.stride = tj.stride;
      if (tj_grid->count() > 0) cfg.trajectory.grid_size = tj.grid_size;
      const RunManifest manifest = evaluate(cfg);
      print_manifest_summary(manifest, std::cout);
      for (const auto& cell : manifest.cells) {
        const auto path = trajectories_path(cfg.output_dir, cell.key);
        if (std::filesystem::exists(path)) std::cout << path.string() << "\n";
      }
      return manifest_exit_code(manifest);
    }

    if (synth_cmd->parsed()) {
      const auto rows = run_synth_study(sy.seed, sy.n, sy.grid, sy.separation, sy.noise, sy.alphas);
      const std::string csv = synth_study_csv(rows);
      if (sy.out_path.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(sy.out_path, std::ios::binary);
        if (!out) throw IoError("cannot write " + sy.out_path);
        out << csv;
        std::cout << sy.out_path << "\n";
      }
      return 0;
    }

    if (dump_cmd->parsed()) {
      const TaskKind task = task_from_string(pr.task);
      const InferenceMode mode = mode_from_string(pr.mode);
      const ScoringScheme scheme = scheme_from_string(pr.scheme);
      const CertaintyLevel certainty = certainty_from_string(pr.certainty);
      ModelFamily family = ModelFamily::standard();
      if (pr.family == "reasoning_native")
        family = ModelFamily::reasoning_native(pr.open_tag, pr.close_tag);
      else if (pr.family != "standard")
        throw ConfigError("unknown model family \"" + pr.family + "\"");

      const Example ex = placeholder_example(task);
      const PromptBundle bundle = scheme == ScoringScheme::Verbalized
                                      ? build_verbalized_prompt(ex, mode, family)
                                      : build_prompt(ex, mode, scheme, family, certainty);
      std::cout << dump_bundle(bundle);
      return 0;
    }

    if (validate_cmd->parsed()) {
      const TaskKind task = task_from_string(va.task);
      const LoadResult result = load_dataset(va.path, task, va.skip_bad_lines);
      for (const auto& issue : result.skipped) std::cout << "skipped: " << issue.message << "\n";
      const ClassCounts counts = class_counts(result.dataset);
      std::cout << "ok: " << result.dataset.size() << " examples (" << counts.positives
                << " positive, " << counts.negatives << " negative) from " << result.input_lines
                << " lines";
      if (!result.skipped.empty()) std::cout << ", " << result.skipped.size() << " skipped";
      std::cout << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
