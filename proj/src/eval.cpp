#include "afm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "afm/errors.hpp"

namespace afm::eval {

void TaskSpec::validate() const {
  if (class_names.size() < 2) {
    throw DataError("task '" + name + "' needs at least 2 task classes");
  }
  std::set<int> seen;
  for (const auto& [orig, task_class] : mapping) {
    if (drop.count(orig) != 0) {
      throw DataError("task '" + name + "': label both mapped and dropped");
    }
    if (task_class < 0 ||
        static_cast<std::size_t>(task_class) >= class_names.size()) {
      throw DataError("task '" + name + "': mapped class out of range");
    }
    seen.insert(task_class);
  }
  if (seen.size() != class_names.size()) {
    throw DataError("task '" + name + "': some task class is never produced");
  }
}

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw DataError("accuracy: prediction/label length mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

signal::LabeledDataset build_task(const signal::LabeledDataset& ds,
                                  const TaskSpec& spec) {
  spec.validate();
  ds.validate();
  signal::LabeledDataset out;
  out.num_classes = spec.num_task_classes();
  out.class_names = spec.class_names;
  for (const auto& w : ds.windows) {
    const int orig = *w.label;
    const auto it = spec.mapping.find(orig);
    if (it != spec.mapping.end()) {
      signal::SignalWindow copy = w;
      copy.label = it->second;
      out.windows.push_back(std::move(copy));
    } else if (spec.drop.count(orig) == 0) {
      throw DataError("task '" + spec.name + "': unmapped label " +
                      std::to_string(orig) + " without a drop rule");
    }
  }
  out.validate();
  return out;
}

EvalResult evaluate(model::Model& m, const signal::LabeledDataset& test_set,
                    model::HeadKind kind, const std::string& task_name,
                    double label_fraction, std::uint64_t seed,
                    std::size_t threads) {
  test_set.validate();
  if (static_cast<std::size_t>(m.num_classes()) != test_set.num_classes) {
    throw DataError("evaluate: model has " + std::to_string(m.num_classes()) +
                    " classes but the task has " +
                    std::to_string(test_set.num_classes));
  }
  const auto pred = m.predict(test_set, kind, threads);
  EvalResult r;
  r.task = task_name;
  r.label_fraction = label_fraction;
  r.seed = seed;
  r.confusion.assign(test_set.num_classes,
                     std::vector<std::size_t>(test_set.num_classes, 0));
  std::vector<int> truth(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    truth[i] = test_set.label_of(i);
    r.confusion[static_cast<std::size_t>(truth[i])]
               [static_cast<std::size_t>(pred[i])] += 1;
  }
  r.accuracy = accuracy(pred, truth);
  return r;
}

namespace {

std::string format_fraction(double f) {
  std::ostringstream os;
  os.precision(6);
  os << f;
  return os.str();
}

std::string format_accuracy(double a) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << a;
  return os.str();
}

}  // namespace

std::string emit_report(const std::vector<EvalResult>& results,
                        ReportFormat format) {
  if (results.empty()) throw DataError("emit_report: no results");
  std::vector<std::string> tasks;
  std::vector<double> fractions;
  for (const auto& r : results) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) {
      tasks.push_back(r.task);
    }
    if (std::find(fractions.begin(), fractions.end(), r.label_fraction) ==
        fractions.end()) {
      fractions.push_back(r.label_fraction);
    }
  }
  std::sort(fractions.begin(), fractions.end());

  auto cell = [&](const std::string& task, double frac) -> std::string {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : results) {
      if (r.task == task && r.label_fraction == frac) {
        sum += r.accuracy;
        ++count;
      }
    }
    if (count == 0) return "n/a";
    return format_accuracy(sum / static_cast<double>(count));
  };

  std::ostringstream os;
  if (format == ReportFormat::Csv) {
    os << "task";
    for (double f : fractions) os << "," << format_fraction(f);
    os << "\n";
    for (const auto& t : tasks) {
      os << t;
      for (double f : fractions) os << "," << cell(t, f);
      os << "\n";
    }
  } else {
    os << "| task |";
    for (double f : fractions) os << " " << format_fraction(f) << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < fractions.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& t : tasks) {
      os << "| " << t << " |";
      for (double f : fractions) os << " " << cell(t, f) << " |";
      os << "\n";
    }
  }
  return os.str();
}

std::vector<TaskSpec> synthetic_tasks() {
  std::vector<TaskSpec> tasks;
  {
    TaskSpec t;
    t.name = "fault_detection";
    t.description = "healthy vs any fault";
    t.mapping = {{0, 0}, {1, 1}, {2, 1}, {3, 1}};
    t.class_names = {"healthy", "faulty"};
    tasks.push_back(std::move(t));
  }
  {
    TaskSpec t;
    t.name = "fault_diagnosis";
    t.description = "full four-way classification";
    t.mapping = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    t.class_names = {"healthy", "fault_a", "fault_b", "fault_c"};
    tasks.push_back(std::move(t));
  }
  {
    TaskSpec t;
    t.name = "fault_family";
    t.description = "bearing-like pair vs the remaining fault, faults only";
    t.mapping = {{1, 0}, {2, 0}, {3, 1}};
    t.drop = {0};
    t.class_names = {"bearing", "other_fault"};
    tasks.push_back(std::move(t));
  }
  {
    TaskSpec t;
    t.name = "fault_location";
    t.description = "separating the two bearing-like classes";
    t.mapping = {{1, 0}, {2, 1}};
    t.drop = {0, 3};
    t.class_names = {"location_a", "location_b"};
    tasks.push_back(std::move(t));
  }
  {
    TaskSpec t;
    t.name = "healthy_vs_bearing";
    t.description = "healthy vs the bearing-like pair";
    t.mapping = {{0, 0}, {1, 1}, {2, 1}};
    t.drop = {3};
    t.class_names = {"healthy", "bearing"};
    tasks.push_back(std::move(t));
  }
  for (const auto& t : tasks) t.validate();
  return tasks;
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks,
                          const std::string& name) {
  for (const auto& t : tasks) {
    if (t.name == name) return t;
  }
  std::string names;
  for (const auto& t : tasks) {
    if (!names.empty()) names += ", ";
    names += t.name;
  }
  throw DataError("unknown task '" + name + "'; available: " + names);
}

}  // namespace afm::eval
