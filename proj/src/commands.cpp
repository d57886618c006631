#include "afm/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "afm/errors.hpp"
#include "afm/eval.hpp"
#include "afm/training.hpp"

namespace afm::cli {

namespace {

constexpr std::uint64_t kDataTag = 0x44415441;
constexpr std::uint64_t kSplitTag = 0x53504c54;
constexpr std::uint64_t kInitTag = 0x494e4954;

void ensure_out_dir(const config::RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.run.out_dir, ec);
  if (ec) {
    throw DataError("cannot create output directory '" + cfg.run.out_dir +
                    "': " + ec.message());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << text;
  os.flush();
  if (!os) throw DataError("write failure on " + path);
}

train::LoadedCheckpoint load_backbone(const config::RunConfig& cfg) {
  const std::string path = resolve_in_out_dir(cfg, cfg.training.checkpoint);
  if (!std::filesystem::exists(path)) {
    throw DataError("checkpoint not found: " + path + " (run pretrain first)");
  }
  auto loaded = train::load_checkpoint(path);
  const auto& have = loaded.model.config();
  const auto want = cfg.encoder_config();
  if (have.window_len != want.window_len || have.d_model != want.d_model ||
      have.patch_len != want.patch_len || have.num_blocks != want.num_blocks ||
      have.num_heads != want.num_heads || have.proj_dim != want.proj_dim) {
    throw DataError("checkpoint architecture does not match the config");
  }
  return loaded;
}

std::string strategy_suffix(const std::string& strategy) {
  if (strategy == "al" || strategy == "random") return strategy;
  throw DataError("strategy must be al or random, got '" + strategy + "'");
}

// Report store: one result per line, written by finetune/eval, read by report.
void append_result(const config::RunConfig& cfg, const eval::EvalResult& r) {
  const std::string path = resolve_in_out_dir(cfg, "results.tsv");
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw DataError("cannot append to " + path);
  if (fresh) os << "# task\tlabel_fraction\taccuracy\tseed\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%s\t%.6f\t%.6f\t%llu\n", r.task.c_str(),
                r.label_fraction, r.accuracy,
                static_cast<unsigned long long>(r.seed));
  os << line;
}

std::vector<eval::EvalResult> read_results(const config::RunConfig& cfg) {
  const std::string path = resolve_in_out_dir(cfg, "results.tsv");
  std::ifstream is(path);
  if (!is) throw DataError("report store is empty: " + path + " not found");
  std::vector<eval::EvalResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    eval::EvalResult r;
    unsigned long long seed = 0;
    if (!std::getline(ls, r.task, '\t') || !(ls >> r.label_fraction) ||
        !(ls.ignore(1), ls >> r.accuracy) || !(ls.ignore(1), ls >> seed)) {
      throw DataError("results.tsv line " + std::to_string(line_no) +
                      ": malformed record");
    }
    r.seed = seed;
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError("report store holds no results");
  return out;
}

}  // namespace

std::string resolve_in_out_dir(const config::RunConfig& cfg,
                               const std::string& name) {
  if (!name.empty() && name.front() == '/') return name;
  return cfg.run.out_dir + "/" + name;
}

signal::LabeledDataset load_dataset(const config::RunConfig& cfg) {
  if (!cfg.signal.manifest.empty()) {
    const auto recs = signal::load_manifest(cfg.signal.manifest);
    return signal::dataset_from_recordings(recs, cfg.signal.window_len,
                                           cfg.signal.stride);
  }
  return signal::normalize_dataset(
      signal::synth_generate(cfg.synth_spec(), derive_seed(cfg.run.seed, kDataTag)));
}

signal::DatasetSplits make_splits(const config::RunConfig& cfg,
                                  const signal::LabeledDataset& ds) {
  return signal::split_dataset(ds, cfg.split, derive_seed(cfg.run.seed, kSplitTag));
}

std::string format_curve(const std::vector<train::CurvePoint>& curve) {
  std::string out = "# label_fraction\taccuracy\toracle_count\n";
  char line[128];
  for (const auto& p : curve) {
    std::snprintf(line, sizeof(line), "%.6f\t%.6f\t%llu\n", p.label_fraction,
                  p.accuracy, static_cast<unsigned long long>(p.oracle_count));
    out += line;
  }
  return out;
}

int cmd_synth(const config::RunConfig& cfg) {
  ensure_out_dir(cfg);
  const auto ds =
      signal::synth_generate(cfg.synth_spec(), derive_seed(cfg.run.seed, kDataTag));
  const std::string dir = resolve_in_out_dir(cfg, "corpus");
  const std::string manifest = signal::write_corpus(ds, dir, cfg.signal.sample_rate);
  std::cout << "wrote " << ds.size() << " windows across " << ds.num_classes
            << " classes\n";
  std::cout << "manifest: " << manifest << "\n";
  return 0;
}

int cmd_pretrain(const config::RunConfig& cfg) {
  ensure_out_dir(cfg);
  const auto ds = load_dataset(cfg);
  const auto splits = make_splits(cfg, ds);
  model::Model m(cfg.encoder_config(), static_cast<int>(ds.num_classes),
                 derive_seed(cfg.run.seed, kInitTag));
  const auto tc = cfg.train_config();
  train::OptimizerState opt;
  opt.lr = tc.lr;
  const auto log = train::pretrain_backbone(m, splits.train.windows, tc, opt);

  const std::string ckpt = resolve_in_out_dir(cfg, cfg.training.checkpoint);
  train::save_checkpoint(ckpt, m, opt, "pretrained", log.epoch_mean_loss);

  std::string loss_text = "# epoch\tmean_loss\n";
  char line[64];
  for (std::size_t e = 0; e < log.epoch_mean_loss.size(); ++e) {
    std::snprintf(line, sizeof(line), "%zu\t%.6f\n", e, log.epoch_mean_loss[e]);
    loss_text += line;
  }
  const std::string loss_path = resolve_in_out_dir(cfg, "pretrain_loss.tsv");
  write_text_file(loss_path, loss_text);

  std::cout << "checkpoint: " << ckpt << "\n";
  std::cout << "loss record: " << loss_path << "\n";
  if (!log.epoch_mean_loss.empty()) {
    std::cout << "first epoch mean loss " << log.epoch_mean_loss.front()
              << ", last " << log.epoch_mean_loss.back() << "\n";
  }
  return 0;
}

int cmd_al_train(const config::RunConfig& cfg, const std::string& strategy) {
  ensure_out_dir(cfg);
  const std::string suffix = strategy_suffix(strategy);
  const auto ds = load_dataset(cfg);
  const auto splits = make_splits(cfg, ds);
  auto loaded = load_backbone(cfg);
  model::Model& m = loaded.model;
  if (m.num_classes() != static_cast<int>(ds.num_classes)) {
    throw DataError("checkpoint class count does not match the dataset");
  }
  const auto tc = cfg.train_config();
  const auto alcfg = cfg.al_config();
  const auto arm = (suffix == "al") ? train::Strategy::ActiveLearning
                                    : train::Strategy::RandomBaseline;
  const auto result =
      train::al_training_loop(m, splits, alcfg, tc, arm, cfg.head_kind());

  const std::string curve_path =
      resolve_in_out_dir(cfg, "curve_" + suffix + ".tsv");
  write_text_file(curve_path, format_curve(result.curve));

  std::string rounds_text;
  for (const auto& r : result.rounds) {
    rounds_text += al::format_round_log(r);
    rounds_text += "\n";
  }
  write_text_file(resolve_in_out_dir(cfg, "rounds_" + suffix + ".log"),
                  rounds_text);

  std::string timing_text = "# label_fraction\twall_seconds\n";
  char line[64];
  for (const auto& p : result.curve) {
    std::snprintf(line, sizeof(line), "%.6f\t%.3f\n", p.label_fraction,
                  p.wall_seconds);
    timing_text += line;
  }
  write_text_file(resolve_in_out_dir(cfg, "timing_" + suffix + ".tsv"),
                  timing_text);

  train::OptimizerState opt;
  std::vector<double> curve_acc;
  for (const auto& p : result.curve) curve_acc.push_back(p.accuracy);
  train::save_checkpoint(resolve_in_out_dir(cfg, "al_" + suffix + ".ckpt"), m,
                         opt, "al-" + suffix, curve_acc);

  std::cout << "curve: " << curve_path << "\n";
  for (const auto& p : result.curve) {
    std::snprintf(line, sizeof(line), "%.0f%% labels -> accuracy %.4f\n",
                  100.0 * p.label_fraction, p.accuracy);
    std::cout << line;
  }
  return 0;
}

int cmd_finetune(const config::RunConfig& cfg, const std::string& task_name,
                 double fraction) {
  ensure_out_dir(cfg);
  const auto ds = load_dataset(cfg);
  const auto splits = make_splits(cfg, ds);
  auto loaded = load_backbone(cfg);
  model::Model& m = loaded.model;
  const auto tasks = eval::synthetic_tasks();
  const auto& task = eval::find_task(tasks, task_name);
  const auto tc = cfg.train_config();
  const auto result = train::finetune_for_task(m, task, splits, fraction, tc,
                                               cfg.head_kind(), cfg.run.seed);
  append_result(cfg, result);

  train::OptimizerState opt;
  char phase[128];
  std::snprintf(phase, sizeof(phase), "finetune:%s@%.4f", task.name.c_str(),
                fraction);
  train::save_checkpoint(
      resolve_in_out_dir(cfg, "finetune_" + task.name + ".ckpt"), m, opt,
      phase, {result.accuracy});

  std::cout << "task " << task.name << " fraction " << fraction
            << " accuracy " << result.accuracy << "\n";
  return 0;
}

int cmd_eval(const config::RunConfig& cfg) {
  ensure_out_dir(cfg);
  const auto ds = load_dataset(cfg);
  const auto splits = make_splits(cfg, ds);
  auto loaded = load_backbone(cfg);
  model::Model& m = loaded.model;
  const auto tasks = eval::synthetic_tasks();
  const auto& task = eval::find_task(tasks, cfg.eval.task);
  const auto test_set = eval::build_task(splits.test, task);
  if (m.num_classes() != static_cast<int>(test_set.num_classes)) {
    throw DataError("checkpoint head has " + std::to_string(m.num_classes()) +
                    " classes but task '" + task.name + "' has " +
                    std::to_string(test_set.num_classes));
  }
  const auto result = eval::evaluate(m, test_set, cfg.head_kind(), task.name,
                                     1.0, cfg.run.seed, cfg.run.threads);
  append_result(cfg, result);
  std::cout << "task " << task.name << " accuracy " << result.accuracy << "\n";
  return 0;
}

int cmd_report(const config::RunConfig& cfg) {
  const auto results = read_results(cfg);
  const auto format = (cfg.eval.format == "markdown")
                          ? eval::ReportFormat::Markdown
                          : eval::ReportFormat::Csv;
  const std::string doc = eval::emit_report(results, format);
  const std::string path = resolve_in_out_dir(
      cfg, cfg.eval.format == "markdown" ? "report.md" : "report.csv");
  ensure_out_dir(cfg);
  write_text_file(path, doc);
  std::cout << doc;
  std::cout << "report: " << path << "\n";
  return 0;
}

}  // namespace afm::cli
