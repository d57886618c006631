#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "afm/commands.hpp"
#include "afm/errors.hpp"

namespace {

// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
constexpr int kUsageError = 1;
constexpr int kDataExit = 2;
constexpr int kNumericExit = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "afm: contrastive pretraining + active-learning fault diagnosis "
      "pipeline for 1D vibration windows"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t threads = 0;
  app.add_option("--config", config_path, "Run configuration file");
  app.add_option("--seed", seed, "Override [run] seed");
  app.add_option("--out", out_dir, "Override [run] out_dir");
  app.add_option("--threads", threads, "Override [run] threads");

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  std::size_t classes = 0;
  synth->add_option("--classes", classes, "Override [signal] synth_classes");

  auto* pretrain =
      app.add_subcommand("pretrain", "Contrastive pretraining of the backbone");

  auto* al_train = app.add_subcommand(
      "al-train", "Label-query training loop against the frozen backbone");
  std::string strategy = "al";
  al_train->add_option("--strategy", strategy, "al | random")
      ->check(CLI::IsMember({"al", "random"}));

  auto* finetune =
      app.add_subcommand("finetune", "Head-only fine-tuning on a target task");
  std::string task_name;
  double fraction = 0.0;
  finetune->add_option("--task", task_name, "Target task name")->required();
  finetune->add_option("--fraction", fraction, "Labeled fraction in (0, 1]")
      ->required();

  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate the checkpoint head on a task");
  std::string eval_task;
  eval_cmd->add_option("--task", eval_task, "Override [eval] task");

  auto* report = app.add_subcommand("report", "Emit the accumulated results");
  std::string format;
  report->add_option("--format", format, "csv | markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));

  auto* print_config =
      app.add_subcommand("print-config", "Print the effective configuration");

  for (auto* sub : {synth, pretrain, al_train, finetune, eval_cmd, report,
                    print_config}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    afm::config::RunConfig cfg;
    if (app.count("--config") > 0) {
      cfg = afm::config::parse_config_file(config_path);
    }
    if (app.count("--seed") > 0) cfg.run.seed = seed;
    if (app.count("--out") > 0) cfg.run.out_dir = out_dir;
    if (const char* env = std::getenv("AFM_OUT_DIR"); env != nullptr && *env) {
      cfg.run.out_dir = env;
    }
    if (app.count("--threads") > 0) cfg.run.threads = threads;
    if (synth->count("--classes") > 0) cfg.signal.synth_classes = classes;
    if (eval_cmd->count("--task") > 0) cfg.eval.task = eval_task;
    if (report->count("--format") > 0) cfg.eval.format = format;
    cfg.validate();

    if (print_config->parsed()) {
      std::cout << cfg.to_ini();
      return 0;
    }
    if (synth->parsed()) return afm::cli::cmd_synth(cfg);
    if (pretrain->parsed()) return afm::cli::cmd_pretrain(cfg);
    if (al_train->parsed()) return afm::cli::cmd_al_train(cfg, strategy);
    if (finetune->parsed()) {
      return afm::cli::cmd_finetune(cfg, task_name, fraction);
    }
    if (eval_cmd->parsed()) return afm::cli::cmd_eval(cfg);
    if (report->parsed()) return afm::cli::cmd_report(cfg);
    std::cerr << "no subcommand selected\n";
    return kUsageError;
  } catch (const afm::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericExit;
  } catch (const afm::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataExit;
  }
}
