#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace afm::signal {

struct SignalOrigin {
  std::string source_id;
  std::size_t start_offset = 0;
};

// Fixed-length 1D segment, the atomic model input.
struct SignalWindow {
  std::vector<double> values;
  std::optional<int> label;
  SignalOrigin origin;
};

struct RawRecording {
  std::vector<double> samples;
  double sample_rate = 0.0;
  std::string source_id;
  std::optional<int> class_label;
};

struct LabeledDataset {
  std::vector<SignalWindow> windows;  // every window carries a label
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return windows.size(); }
  int label_of(std::size_t i) const;
  void validate() const;  // labels present and in range, num_classes >= 2
};

// Sinusoidal carrier + periodic impulse train + Gaussian noise, one long
// recording per class segmented into non-overlapping windows. Stands in for
// bearing-fault signatures at desk scale.
struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t windows_per_class = 500;
  std::size_t window_len = 192;
  double sample_rate = 12000.0;
  double noise_sigma = 0.6;
  // Class 0 is "healthy": carrier only, no impulses. Classes 1 and 2 share an
  // impulse period and differ only in carrier frequency, which makes them the
  // hard pair for downstream tasks.
  std::vector<double> base_freq_hz = {433.0, 811.0, 852.0, 1741.0};
  std::vector<std::size_t> impulse_period = {97, 53, 53, 29};
  std::vector<double> impulse_amplitude = {0.0, 1.6, 1.6, 1.6};

  void validate() const;
};

// Segments a recording into windows of window_len every stride samples;
// window k covers [k*stride, k*stride + window_len). Each window inherits
// the recording's label.
std::vector<SignalWindow> window_signal(const RawRecording& rec,
                                        std::size_t window_len,
                                        std::size_t stride);

// Z-score per window with population standard deviation. A (numerically)
// constant window maps to all zeros instead of dividing by ~0.
SignalWindow normalize_window(const SignalWindow& w);

LabeledDataset synth_generate(const SyntheticSpec& spec, std::uint64_t seed);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

// Stratified per class, deterministic given seed, disjoint and exhaustive.
DatasetSplits split_dataset(const LabeledDataset& ds, const SplitFractions& f,
                            std::uint64_t seed);

// Copy of ds with every window z-scored. Generators emit raw amplitudes;
// training and scoring expect normalized input.
LabeledDataset normalize_dataset(const LabeledDataset& ds);

// Manifest: one record per line, `signal_path<TAB>label<TAB>sample_rate`.
// Lines starting with '#' are comments. Signal files are .f32 (headerless
// little-endian float32) or .txt (one amplitude per line). An empty label
// field or "-" yields an unlabeled recording. Relative signal paths resolve
// against the manifest's directory.
std::vector<RawRecording> load_manifest(const std::string& manifest_path);

// Windows + per-window normalization over labeled recordings.
LabeledDataset dataset_from_recordings(const std::vector<RawRecording>& recs,
                                       std::size_t window_len,
                                       std::size_t stride);

// Writes class_<k>.f32 files plus manifest.tsv so the dataset round-trips
// through load_manifest. Returns the manifest path.
std::string write_corpus(const LabeledDataset& ds, const std::string& dir,
                         double sample_rate);

}  // namespace afm::signal
