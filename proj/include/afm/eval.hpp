#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "afm/model.hpp"
#include "afm/signal.hpp"

namespace afm::eval {

// A downstream classification problem built by relabeling original classes;
// labels in `drop` are removed, everything else must be mapped.
struct TaskSpec {
  std::string name;
  std::string description;
  std::map<int, int> mapping;  // original label -> task class
  std::set<int> drop;
  std::vector<std::string> class_names;  // task class names

  std::size_t num_task_classes() const { return class_names.size(); }
  void validate() const;
};

struct EvalResult {
  std::string task;
  double label_fraction = 1.0;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
  std::uint64_t seed = 0;
};

// Fraction of exact matches.
double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels);

signal::LabeledDataset build_task(const signal::LabeledDataset& ds,
                                  const TaskSpec& spec);

// Deterministic eval-mode pass over the test set.
EvalResult evaluate(model::Model& m, const signal::LabeledDataset& test_set,
                    model::HeadKind kind, const std::string& task_name,
                    double label_fraction, std::uint64_t seed,
                    std::size_t threads = 1);

enum class ReportFormat { Csv, Markdown };

// Rows = tasks, columns = label fractions; multiple results for one cell are
// averaged; absent cells render as "n/a".
std::string emit_report(const std::vector<EvalResult>& results,
                        ReportFormat format);

// Synthetic analogues of the paper-style hierarchical target tasks over the
// 4-class generator (0 healthy, 1/2 the bearing-like pair, 3 the remaining
// fault mode).
std::vector<TaskSpec> synthetic_tasks();

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks,
                          const std::string& name);

}  // namespace afm::eval
