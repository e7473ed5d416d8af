#include "escape/config.hpp"
#include "escape/evalx.hpp"
#include "escape/io.hpp"
#include "escape/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

using namespace escape;

RunConfig load_cfg(const std::string& path) { return load_config_file(path); }

int run_stages(const std::string& config_path, const std::vector<std::string>& stages) {
  const RunManifest m = run_pipeline(load_cfg(config_path), stages);
  std::cout << "run directory: " << load_cfg(config_path).output_dir << "\n";
  for (const auto& s : m.stages)
    std::cout << "  " << s.name << ": " << s.status
              << (s.completed_at.empty() ? "" : " (" + s.completed_at + ")") << "\n";
  return 0;
}

/// Shared by `eval grid` and `eval ppl`: loads a finished eval stage's
/// artifact and prints the rendered table.
int show_eval_artifact(const std::string& config_path, const std::string& which) {
  const RunConfig cfg = load_cfg(config_path);
  const std::filesystem::path path = std::filesystem::path(cfg.output_dir) / "eval" / which;
  if (!std::filesystem::exists(path)) {
    std::cerr << "missing " << path.string() << "; run the eval stage first\n";
    return 1;
  }
  const auto arr = nlohmann::json::parse(read_text_file(path));
  if (which == "grid.json") {
    std::vector<GridCell> grid;
    for (const auto& j : arr) grid.push_back(grid_cell_from_json(j.dump()));
    std::cout << render_transfer_table(grid);
  } else {
    std::vector<PerplexityReport> ppl;
    for (const auto& j : arr) ppl.push_back(ppl_report_from_json(j.dump()));
    std::cout << render_ppl_table(ppl);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evasive soft prompt training, transfer, and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  const auto add_config = [&config_path](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config file")->required();
  };

  auto* corpus = app.add_subcommand("corpus", "corpus management");
  corpus->require_subcommand(1);
  auto* corpus_build = corpus->add_subcommand("build", "build the labeled human corpus");
  add_config(corpus_build);

  auto* generate = app.add_subcommand("generate", "generate AI text for the corpus");
  add_config(generate);

  auto* detector = app.add_subcommand("detector", "detector management");
  detector->require_subcommand(1);
  auto* detector_train = detector->add_subcommand("train", "train or calibrate the detector");
  add_config(detector_train);

  auto* prompt = app.add_subcommand("prompt", "soft prompt training");
  prompt->require_subcommand(1);
  auto* prompt_train = prompt->add_subcommand("train", "learn the evasive soft prompt");
  add_config(prompt_train);
  auto* prompt_transfer =
      prompt->add_subcommand("transfer", "carry the prompt to the target model via a projector");
  add_config(prompt_transfer);

  auto* eval = app.add_subcommand("eval", "evaluation");
  eval->require_subcommand(1);
  auto* eval_run = eval->add_subcommand("run", "detection, perplexity, and grid evaluation");
  add_config(eval_run);
  auto* eval_grid = eval->add_subcommand("grid", "print the transfer grid table");
  add_config(eval_grid);
  auto* eval_ppl = eval->add_subcommand("ppl", "print the perplexity-change table");
  add_config(eval_ppl);

  auto* report = app.add_subcommand("report", "write the run report");
  add_config(report);

  auto* pipeline = app.add_subcommand("pipeline", "pipeline orchestration");
  pipeline->require_subcommand(1);
  auto* pipeline_run = pipeline->add_subcommand("run", "run the pipeline end to end");
  add_config(pipeline_run);
  std::vector<std::string> stages;
  pipeline_run->add_option("--stages", stages, "subset of stages to run (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (corpus_build->parsed()) return run_stages(config_path, {"corpus"});
    if (generate->parsed()) return run_stages(config_path, {"generate"});
    if (detector_train->parsed()) return run_stages(config_path, {"detector"});
    if (prompt_train->parsed()) return run_stages(config_path, {"prompt-train"});
    if (prompt_transfer->parsed()) return run_stages(config_path, {"transfer"});
    if (eval_run->parsed()) return run_stages(config_path, {"eval"});
    if (eval_grid->parsed()) return show_eval_artifact(config_path, "grid.json");
    if (eval_ppl->parsed()) return show_eval_artifact(config_path, "perplexity.json");
    if (report->parsed()) return run_stages(config_path, {"report"});
    if (pipeline_run->parsed()) return run_stages(config_path, stages);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
