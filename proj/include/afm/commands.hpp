#pragma once

#include <string>

#include "afm/config.hpp"

namespace afm::cli {

// Subcommand bodies. Each returns a process exit code; data and numeric
// failures propagate as exceptions and are mapped in main.
int cmd_synth(const config::RunConfig& cfg);
int cmd_pretrain(const config::RunConfig& cfg);
int cmd_al_train(const config::RunConfig& cfg, const std::string& strategy);
int cmd_finetune(const config::RunConfig& cfg, const std::string& task_name,
                 double fraction);
int cmd_eval(const config::RunConfig& cfg);
int cmd_report(const config::RunConfig& cfg);

// Dataset with per-window normalization: manifest-backed when configured,
// synthetic otherwise. Exposed for tests and the acceptance harness.
signal::LabeledDataset load_dataset(const config::RunConfig& cfg);
signal::DatasetSplits make_splits(const config::RunConfig& cfg,
                                  const signal::LabeledDataset& ds);

// out_dir-relative unless absolute.
std::string resolve_in_out_dir(const config::RunConfig& cfg,
                               const std::string& name);

// Learning-curve serialization used by cmd_al_train; stable byte-for-byte
// under identical inputs (wall-clock timings go to a separate sidecar).
std::string format_curve(const std::vector<train::CurvePoint>& curve);

}  // namespace afm::cli
