#include "afm/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "afm/errors.hpp"
#include "afm/rng.hpp"

namespace afm::signal {

namespace {

constexpr std::uint64_t kSynthTag = 0x53594e54;  // stream tags per purpose
constexpr std::uint64_t kSplitTag = 0x53504c54;

void fisher_yates(std::vector<std::size_t>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_below(i);
    std::swap(v[i - 1], v[j]);
  }
}

// Largest-remainder allocation of n items over fractions; parts with a
// positive fraction are kept nonempty by stealing from the largest part.
std::vector<std::size_t> allocate_counts(std::size_t n,
                                         const std::vector<double>& fractions) {
  const std::size_t parts = fractions.size();
  std::vector<std::size_t> counts(parts, 0);
  std::vector<double> remainders(parts, 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const double raw = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(raw));
    remainders[i] = raw - std::floor(raw);
    assigned += counts[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < parts; ++i) {
      if (remainders[i] > remainders[best]) best = i;
    }
    counts[best] += 1;
    remainders[best] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < parts; ++i) {
    if (fractions[i] > 0.0 && counts[i] == 0) {
      std::size_t donor = 0;
      for (std::size_t j = 1; j < parts; ++j) {
        if (counts[j] > counts[donor]) donor = j;
      }
      if (counts[donor] <= 1) {
        throw DataError("too few items to keep every split part nonempty");
      }
      counts[donor] -= 1;
      counts[i] += 1;
    }
  }
  return counts;
}

std::vector<double> read_f32_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open signal file: " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff bytes = in.tellg();
  in.seekg(0, std::ios::beg);
  if (bytes < 0 || bytes % 4 != 0) {
    throw DataError("signal file size is not a multiple of 4: " + path);
  }
  std::vector<char> buf(static_cast<std::size_t>(bytes));
  in.read(buf.data(), bytes);
  if (!in) throw DataError("short read on signal file: " + path);
  std::vector<double> out(buf.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, buf.data() + i * 4, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

std::vector<double> read_txt_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open signal file: " + path);
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t\r");
    const std::string tok = line.substr(a, b - a + 1);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
      throw DataError(path + " line " + std::to_string(line_no) +
                      ": not a number: '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

int LabeledDataset::label_of(std::size_t i) const {
  if (!windows[i].label.has_value()) {
    throw DataError("window " + std::to_string(i) + " has no label");
  }
  return *windows[i].label;
}

void LabeledDataset::validate() const {
  if (num_classes < 2) throw DataError("dataset needs at least 2 classes");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const int l = label_of(i);
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("label " + std::to_string(l) + " out of range at window " +
                      std::to_string(i));
    }
  }
}

void SyntheticSpec::validate() const {
  if (num_classes == 0 || windows_per_class == 0 || window_len == 0) {
    throw DataError("synthetic spec counts must be positive");
  }
  if (sample_rate <= 0.0) throw DataError("sample_rate must be positive");
  if (noise_sigma < 0.0 || !std::isfinite(noise_sigma)) {
    throw DataError("noise_sigma must be finite and >= 0");
  }
  if (base_freq_hz.size() < num_classes ||
      impulse_period.size() < num_classes ||
      impulse_amplitude.size() < num_classes) {
    throw DataError("per-class synthetic parameters shorter than num_classes");
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (impulse_period[c] == 0) throw DataError("impulse_period must be positive");
  }
}

std::vector<SignalWindow> window_signal(const RawRecording& rec,
                                        std::size_t window_len,
                                        std::size_t stride) {
  if (window_len == 0 || stride == 0) {
    throw DataError("window_len and stride must be positive");
  }
  if (rec.samples.size() < window_len) {
    throw DataError("recording '" + rec.source_id + "' shorter than window_len");
  }
  const std::size_t count = (rec.samples.size() - window_len) / stride + 1;
  std::vector<SignalWindow> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    SignalWindow w;
    const std::size_t off = k * stride;
    w.values.assign(rec.samples.begin() + off,
                    rec.samples.begin() + off + window_len);
    w.label = rec.class_label;
    w.origin = {rec.source_id, off};
    out.push_back(std::move(w));
  }
  return out;
}

SignalWindow normalize_window(const SignalWindow& w) {
  SignalWindow out = w;
  const std::size_t n = w.values.size();
  double mean = 0.0;
  for (double v : w.values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : w.values) {
    const double t = v - mean;
    var += t * t;
  }
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  // Relative threshold: a window of identical values can leave rounding
  // residue of order eps*|mean| in var, which must not be amplified.
  if (sd <= 1e-12 * (1.0 + std::abs(mean))) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (double& v : out.values) v = (v - mean) / sd;
  return out;
}

LabeledDataset synth_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  LabeledDataset ds;
  ds.num_classes = spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    ds.class_names.push_back("class_" + std::to_string(c));
  }
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    RngStream rng(derive_seed(seed, kSynthTag, c));
    RawRecording rec;
    rec.source_id = "synth/class_" + std::to_string(c);
    rec.sample_rate = spec.sample_rate;
    rec.class_label = static_cast<int>(c);
    const std::size_t len = spec.windows_per_class * spec.window_len;
    rec.samples.resize(len);
    const double w = two_pi * spec.base_freq_hz[c] / spec.sample_rate;
    const std::size_t period = spec.impulse_period[c];
    const double amp = spec.impulse_amplitude[c];
    for (std::size_t t = 0; t < len; ++t) {
      double v = std::sin(w * static_cast<double>(t));
      if (t % period == 0) v += amp;
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
      rec.samples[t] = v;
    }
    auto windows = window_signal(rec, spec.window_len, spec.window_len);
    for (auto& win : windows) ds.windows.push_back(std::move(win));
  }
  return ds;
}

LabeledDataset normalize_dataset(const LabeledDataset& ds) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  out.windows.reserve(ds.windows.size());
  for (const auto& w : ds.windows) out.windows.push_back(normalize_window(w));
  return out;
}

DatasetSplits split_dataset(const LabeledDataset& ds, const SplitFractions& f,
                            std::uint64_t seed) {
  const double sum = f.train + f.val + f.test;
  if (f.train <= 0.0 || f.val <= 0.0 || f.test <= 0.0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw DataError("split fractions must be positive and sum to 1");
  }
  ds.validate();
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.label_of(i))].push_back(i);
  }
  DatasetSplits out;
  for (LabeledDataset* part : {&out.train, &out.val, &out.test}) {
    part->num_classes = ds.num_classes;
    part->class_names = ds.class_names;
  }
  const std::vector<double> fractions = {f.train, f.val, f.test};
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < 3) {
      throw DataError("class " + std::to_string(c) +
                      " has fewer windows than split parts");
    }
    RngStream rng(derive_seed(seed, kSplitTag, c));
    fisher_yates(members, rng);
    const auto counts = allocate_counts(members.size(), fractions);
    std::size_t pos = 0;
    LabeledDataset* parts[3] = {&out.train, &out.val, &out.test};
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t k = 0; k < counts[p]; ++k, ++pos) {
        parts[p]->windows.push_back(ds.windows[members[pos]]);
      }
    }
  }
  return out;
}

std::vector<RawRecording> load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path);
  const std::filesystem::path base =
      std::filesystem::path(manifest_path).parent_path();
  std::vector<RawRecording> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    const std::string where = "manifest row " + std::to_string(row);
    if (fields.size() != 3) {
      throw DataError(where + ": expected 3 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    RawRecording rec;
    std::filesystem::path p(fields[0]);
    if (p.is_relative()) p = base / p;
    rec.source_id = fields[0];
    if (!fields[1].empty() && fields[1] != "-") {
      char* end = nullptr;
      const long label = std::strtol(fields[1].c_str(), &end, 10);
      if (end == fields[1].c_str() || *end != '\0' || label < 0) {
        throw DataError(where + ": bad label '" + fields[1] + "'");
      }
      rec.class_label = static_cast<int>(label);
    }
    {
      char* end = nullptr;
      rec.sample_rate = std::strtod(fields[2].c_str(), &end);
      if (end == fields[2].c_str() || *end != '\0' || rec.sample_rate <= 0.0) {
        throw DataError(where + ": bad sample_rate '" + fields[2] + "'");
      }
    }
    const std::string ext = p.extension().string();
    try {
      if (ext == ".f32") {
        rec.samples = read_f32_file(p.string());
      } else if (ext == ".txt") {
        rec.samples = read_txt_file(p.string());
      } else {
        throw DataError("unsupported signal extension '" + ext + "'");
      }
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (rec.samples.empty()) {
      throw DataError(where + ": signal file is empty");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

LabeledDataset dataset_from_recordings(const std::vector<RawRecording>& recs,
                                       std::size_t window_len,
                                       std::size_t stride) {
  LabeledDataset ds;
  int max_label = -1;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    if (!recs[r].class_label.has_value()) {
      throw DataError("recording '" + recs[r].source_id +
                      "' has no label; labeled dataset requires one");
    }
    max_label = std::max(max_label, *recs[r].class_label);
    for (auto& w : window_signal(recs[r], window_len, stride)) {
      ds.windows.push_back(normalize_window(w));
    }
  }
  if (max_label < 1) throw DataError("manifest spans fewer than 2 classes");
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    ds.class_names.push_back("class_" + std::to_string(c));
  }
  ds.validate();
  return ds;
}

std::string write_corpus(const LabeledDataset& ds, const std::string& dir,
                         double sample_rate) {
  ds.validate();
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  std::vector<std::vector<float>> per_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& dst = per_class[static_cast<std::size_t>(ds.label_of(i))];
    for (double v : ds.windows[i].values) dst.push_back(static_cast<float>(v));
  }
  const std::string manifest_path = (base / "manifest.tsv").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw DataError("cannot write manifest: " + manifest_path);
  manifest << "# signal_path\tlabel\tsample_rate\n";
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    const std::string name = "class_" + std::to_string(c) + ".f32";
    std::ofstream f((base / name).string(), std::ios::binary);
    if (!f) throw DataError("cannot write signal file: " + name);
    f.write(reinterpret_cast<const char*>(per_class[c].data()),
            static_cast<std::streamsize>(per_class[c].size() * 4));
    manifest << name << '\t' << c << '\t' << sample_rate << '\n';
  }
  return manifest_path;
}

}  // namespace afm::signal
