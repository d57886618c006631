#include "afm/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "afm/errors.hpp"

namespace afm::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s.empty()) throw DataError(where + ": empty numeric value");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s.empty()) throw DataError(where + ": empty integer value");
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || s[0] == '-') {
    throw DataError(where + ": not a non-negative integer: '" + s + "'");
  }
  return static_cast<std::uint64_t>(v);
}

bool parse_bool(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw DataError(where + ": expected true/false: '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : raw) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<double> parse_double_list(const std::string& raw,
                                      const std::string& where) {
  std::vector<double> out;
  for (const auto& item : split_csv(raw)) out.push_back(parse_double(item, where));
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& raw,
                                         const std::string& where) {
  std::vector<std::size_t> out;
  for (const auto& item : split_csv(raw)) {
    out.push_back(static_cast<std::size_t>(parse_u64(item, where)));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << v;  // shortest round-trippable-enough form for defaults
  return os.str();
}

template <typename T>
std::string format_list(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) os << ",";
    if constexpr (std::is_floating_point_v<T>) {
      os << format_double(xs[i]);
    } else {
      os << xs[i];
    }
  }
  return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string& value,
                                  const std::string& where)>;

// One row per accepted key; doubles as the schema for error messages.
const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"run",
       {
           {"seed", [](RunConfig& c, const std::string& v,
                       const std::string& w) { c.run.seed = parse_u64(v, w); }},
           {"out_dir", [](RunConfig& c, const std::string& v,
                          const std::string&) { c.run.out_dir = trim(v); }},
           {"threads",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.run.threads = static_cast<std::size_t>(parse_u64(v, w));
            }},
       }},
      {"signal",
       {
           {"window_len",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.window_len = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"stride",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.stride = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"manifest", [](RunConfig& c, const std::string& v,
                           const std::string&) { c.signal.manifest = trim(v); }},
           {"sample_rate",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.sample_rate = parse_double(v, w);
            }},
           {"synth_classes",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.synth_classes = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"windows_per_class",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.windows_per_class =
                  static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"noise_sigma",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.noise_sigma = parse_double(v, w);
            }},
           {"base_freq_hz",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.base_freq_hz = parse_double_list(v, w);
            }},
           {"impulse_period",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.impulse_period = parse_size_list(v, w);
            }},
           {"impulse_amplitude",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.signal.impulse_amplitude = parse_double_list(v, w);
            }},
       }},
      {"split",
       {
           {"train", [](RunConfig& c, const std::string& v,
                        const std::string& w) { c.split.train = parse_double(v, w); }},
           {"val", [](RunConfig& c, const std::string& v,
                      const std::string& w) { c.split.val = parse_double(v, w); }},
           {"test", [](RunConfig& c, const std::string& v,
                       const std::string& w) { c.split.test = parse_double(v, w); }},
       }},
      {"augment_strong",
       {
           {"jitter_sigma",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.strong.jitter_sigma = parse_double(v, w);
            }},
           {"zero_prob",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.strong.zero_prob = parse_double(v, w);
            }},
           {"zero_seg_len",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.strong.zero_seg_len = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"zero_num_segs",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.strong.zero_num_segs = static_cast<std::size_t>(parse_u64(v, w));
            }},
       }},
      {"augment_mild",
       {
           {"jitter_sigma",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.mild.jitter_sigma = parse_double(v, w);
            }},
           {"zero_prob",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.mild.zero_prob = parse_double(v, w);
            }},
           {"zero_seg_len",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.mild.zero_seg_len = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"zero_num_segs",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.mild.zero_num_segs = static_cast<std::size_t>(parse_u64(v, w));
            }},
       }},
      {"encoder",
       {
           {"patch_len",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.patch_len = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"d_model",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.d_model = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"num_blocks",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.num_blocks = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"num_heads",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.num_heads = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"ffn_expansion",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.ffn_expansion = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"proj_dim",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.proj_dim = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"dropout_prob",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.dropout_prob = parse_double(v, w);
            }},
           {"layernorm_eps",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.encoder.layernorm_eps = parse_double(v, w);
            }},
       }},
      {"contrastive",
       {
           {"temperature",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.contrastive.temperature = parse_double(v, w);
            }},
           {"support_capacity",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.contrastive.support_capacity =
                  static_cast<std::size_t>(parse_u64(v, w));
            }},
       }},
      {"al",
       {
           {"seed_fraction",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.al.seed_fraction = parse_double(v, w);
            }},
           {"round_fraction",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.al.round_fraction = parse_double(v, w);
            }},
           {"screen_multiplier",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.al.screen_multiplier = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"rounds",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.al.rounds = static_cast<std::size_t>(parse_u64(v, w));
            }},
       }},
      {"training",
       {
           {"batch_size",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.training.batch_size = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"pretrain_epochs",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.training.pretrain_epochs =
                  static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"head_epochs",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.training.head_epochs = static_cast<std::size_t>(parse_u64(v, w));
            }},
           {"lr", [](RunConfig& c, const std::string& v,
                     const std::string& w) { c.training.lr = parse_double(v, w); }},
           {"head", [](RunConfig& c, const std::string& v,
                       const std::string&) { c.training.head = trim(v); }},
           {"retrain_backbone",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.training.retrain_backbone = parse_bool(v, w);
            }},
           {"checkpoint",
            [](RunConfig& c, const std::string& v, const std::string&) {
              c.training.checkpoint = trim(v);
            }},
       }},
      {"eval",
       {
           {"task", [](RunConfig& c, const std::string& v,
                       const std::string&) { c.eval.task = trim(v); }},
           {"fractions",
            [](RunConfig& c, const std::string& v, const std::string& w) {
              c.eval.fractions = parse_double_list(v, w);
            }},
           {"format", [](RunConfig& c, const std::string& v,
                         const std::string&) { c.eval.format = trim(v); }},
       }},
  };
  return s;
}

}  // namespace

void RunConfig::validate() const {
  synth_spec();       // checks per-class list sizes
  encoder_config().validate();
  train_config().validate();
  al_config().validate();
  strong.validate(signal.window_len);
  mild.validate(signal.window_len);
  if (signal.stride == 0) throw DataError("signal.stride must be >= 1");
  head_kind();  // rejects anything but mlp/probe
  if (eval.format != "csv" && eval.format != "markdown") {
    throw DataError("eval.format must be csv or markdown");
  }
  if (eval.fractions.empty()) throw DataError("eval.fractions must be nonempty");
  for (const double f : eval.fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw DataError("eval.fractions entries must lie in (0, 1]");
    }
  }
  if (run.threads == 0) throw DataError("run.threads must be >= 1");
}

afm::signal::SyntheticSpec RunConfig::synth_spec() const {
  afm::signal::SyntheticSpec spec;
  spec.num_classes = signal.synth_classes;
  spec.windows_per_class = signal.windows_per_class;
  spec.window_len = signal.window_len;
  spec.sample_rate = signal.sample_rate;
  spec.noise_sigma = signal.noise_sigma;
  if (signal.base_freq_hz.size() < signal.synth_classes ||
      signal.impulse_period.size() < signal.synth_classes ||
      signal.impulse_amplitude.size() < signal.synth_classes) {
    throw DataError(
        "signal: per-class lists must cover synth_classes entries");
  }
  // Extra list entries beyond synth_classes are ignored so a class-count
  // override composes with the default lists.
  spec.base_freq_hz.assign(signal.base_freq_hz.begin(),
                           signal.base_freq_hz.begin() +
                               static_cast<std::ptrdiff_t>(signal.synth_classes));
  spec.impulse_period.assign(
      signal.impulse_period.begin(),
      signal.impulse_period.begin() +
          static_cast<std::ptrdiff_t>(signal.synth_classes));
  spec.impulse_amplitude.assign(
      signal.impulse_amplitude.begin(),
      signal.impulse_amplitude.begin() +
          static_cast<std::ptrdiff_t>(signal.synth_classes));
  return spec;
}

model::EncoderConfig RunConfig::encoder_config() const {
  model::EncoderConfig cfg;
  cfg.window_len = signal.window_len;
  cfg.patch_len = encoder.patch_len;
  cfg.d_model = encoder.d_model;
  cfg.num_blocks = encoder.num_blocks;
  cfg.num_heads = encoder.num_heads;
  cfg.ffn_expansion = encoder.ffn_expansion;
  cfg.proj_dim = encoder.proj_dim;
  cfg.dropout_prob = encoder.dropout_prob;
  cfg.layernorm_eps = encoder.layernorm_eps;
  return cfg;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig cfg;
  cfg.batch_size = training.batch_size;
  cfg.pretrain_epochs = training.pretrain_epochs;
  cfg.head_epochs = training.head_epochs;
  cfg.lr = training.lr;
  cfg.seed = run.seed;
  cfg.retrain_backbone_each_round = training.retrain_backbone;
  cfg.temperature = contrastive.temperature;
  cfg.support_capacity = contrastive.support_capacity;
  cfg.strong = strong;
  cfg.mild = mild;
  cfg.threads = run.threads;
  return cfg;
}

afm::al::ALConfig RunConfig::al_config() const {
  afm::al::ALConfig cfg;
  cfg.seed_fraction = al.seed_fraction;
  cfg.round_fraction = al.round_fraction;
  cfg.screen_multiplier = al.screen_multiplier;
  cfg.rounds = al.rounds;
  cfg.seed = run.seed;
  return cfg;
}

model::HeadKind RunConfig::head_kind() const {
  if (training.head == "mlp") return model::HeadKind::Mlp;
  if (training.head == "probe") return model::HeadKind::Probe;
  throw DataError("training.head must be mlp or probe, got '" + training.head +
                  "'");
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << run.seed << "\n";
  os << "out_dir = " << run.out_dir << "\n";
  os << "threads = " << run.threads << "\n";
  os << "\n[signal]\n";
  os << "window_len = " << signal.window_len << "\n";
  os << "stride = " << signal.stride << "\n";
  os << "manifest = " << signal.manifest << "\n";
  os << "sample_rate = " << format_double(signal.sample_rate) << "\n";
  os << "synth_classes = " << signal.synth_classes << "\n";
  os << "windows_per_class = " << signal.windows_per_class << "\n";
  os << "noise_sigma = " << format_double(signal.noise_sigma) << "\n";
  os << "base_freq_hz = " << format_list(signal.base_freq_hz) << "\n";
  os << "impulse_period = " << format_list(signal.impulse_period) << "\n";
  os << "impulse_amplitude = " << format_list(signal.impulse_amplitude) << "\n";
  os << "\n[split]\n";
  os << "train = " << format_double(split.train) << "\n";
  os << "val = " << format_double(split.val) << "\n";
  os << "test = " << format_double(split.test) << "\n";
  os << "\n[augment_strong]\n";
  os << "jitter_sigma = " << format_double(strong.jitter_sigma) << "\n";
  os << "zero_prob = " << format_double(strong.zero_prob) << "\n";
  os << "zero_seg_len = " << strong.zero_seg_len << "\n";
  os << "zero_num_segs = " << strong.zero_num_segs << "\n";
  os << "\n[augment_mild]\n";
  os << "jitter_sigma = " << format_double(mild.jitter_sigma) << "\n";
  os << "zero_prob = " << format_double(mild.zero_prob) << "\n";
  os << "zero_seg_len = " << mild.zero_seg_len << "\n";
  os << "zero_num_segs = " << mild.zero_num_segs << "\n";
  os << "\n[encoder]\n";
  os << "patch_len = " << encoder.patch_len << "\n";
  os << "d_model = " << encoder.d_model << "\n";
  os << "num_blocks = " << encoder.num_blocks << "\n";
  os << "num_heads = " << encoder.num_heads << "\n";
  os << "ffn_expansion = " << encoder.ffn_expansion << "\n";
  os << "proj_dim = " << encoder.proj_dim << "\n";
  os << "dropout_prob = " << format_double(encoder.dropout_prob) << "\n";
  os << "layernorm_eps = " << format_double(encoder.layernorm_eps) << "\n";
  os << "\n[contrastive]\n";
  os << "temperature = " << format_double(contrastive.temperature) << "\n";
  os << "support_capacity = " << contrastive.support_capacity << "\n";
  os << "\n[al]\n";
  os << "seed_fraction = " << format_double(al.seed_fraction) << "\n";
  os << "round_fraction = " << format_double(al.round_fraction) << "\n";
  os << "screen_multiplier = " << al.screen_multiplier << "\n";
  os << "rounds = " << al.rounds << "\n";
  os << "\n[training]\n";
  os << "batch_size = " << training.batch_size << "\n";
  os << "pretrain_epochs = " << training.pretrain_epochs << "\n";
  os << "head_epochs = " << training.head_epochs << "\n";
  os << "lr = " << format_double(training.lr) << "\n";
  os << "head = " << training.head << "\n";
  os << "retrain_backbone = " << (training.retrain_backbone ? "true" : "false")
     << "\n";
  os << "checkpoint = " << training.checkpoint << "\n";
  os << "\n[eval]\n";
  os << "task = " << eval.task << "\n";
  os << "fractions = " << format_list(eval.fractions) << "\n";
  os << "format = " << eval.format << "\n";
  return os.str();
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string where = "config line " + std::to_string(line_no);
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw DataError(where + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      if (schema().count(section) == 0) {
        throw DataError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw DataError(where + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) {
      throw DataError(where + ": key '" + key + "' outside any section");
    }
    const auto& keys = schema().at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw DataError(where + ": unknown key '" + key + "' in section [" +
                      section + "]");
    }
    it->second(cfg, value, where + " (" + section + "." + key + ")");
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace afm::config
