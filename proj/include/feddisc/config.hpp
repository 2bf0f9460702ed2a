#pragma once

// Flat key=value experiment configuration. Every key has a default; unknown
// keys are rejected; the resolved set is echoed into each output directory.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "feddisc/data.hpp"
#include "feddisc/detector.hpp"
#include "feddisc/error.hpp"
#include "feddisc/federation.hpp"
#include "feddisc/nn.hpp"

namespace feddisc {

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;
  std::string_view doc;
};

// clang-format off
inline constexpr ConfigKey kConfigKeys[] = {
  {"seed",                    "1",               "global seed: split, partition, init, client rounds"},
  {"clients",                 "4",               "number of SCADA sub-system clients K"},
  {"rounds",                  "300",             "communication rounds T"},
  {"local_batches_per_round", "1",               "mini-batches averaged into one local gradient"},
  {"batch_size",              "100",             "mini-batch size"},
  {"eta_schedule",            "constant",        "constant | inverse_sqrt"},
  {"eta",                     "0.001",           "learning rate (eta0 for inverse_sqrt), in (0,1)"},
  {"quantization",            "true",            "one-bit uplink (true) or full-precision uplink (false)"},
  {"zero_mean_normalization", "true",            "subtract the scalar gradient mean before quantizing"},
  {"dp_enabled",              "false",           "clip + Gaussian noise before the sign"},
  {"dp_epsilon",              "1",               "privacy parameter epsilon"},
  {"dp_delta",                "1e-05",           "privacy parameter delta"},
  {"dp_clip",                 "1",               "per-coordinate clip bound C"},
  {"k_impute",                "5",               "neighbours for KNN imputation"},
  {"pca_p",                   "100",             "PCA components kept (clamped to the feature count)"},
  {"test_fraction",           "0.3",             "held-out test fraction"},
  {"stratified",              "true",            "stratify the split by label"},
  {"partition",               "dirichlet",       "iid | dirichlet | by_file"},
  {"dirichlet_alpha",         "0.5",             "Dirichlet concentration for the dirichlet partition"},
  {"encoder_widths",          "64,48,32,24,16",  "encoder widths after the input layer; decoder mirrors"},
  {"hidden_activation",       "relu",            "relu | identity"},
  {"output_activation",       "relu",            "relu | identity"},
  {"init",                    "uniform_he",      "uniform_he | cd1"},
  {"cd1_epochs",              "10",              "CD-1 epochs per layer when init=cd1"},
  {"cd1_lr",                  "0.1",             "CD-1 learning rate when init=cd1"},
  {"threshold",               "knee",            "knee | percentile"},
  {"threshold_percentile",    "95",              "percentile used when threshold=percentile"},
  {"head_rounds",             "0",               "federated rounds for the softmax head (0 = no head)"},
  {"head_hidden",             "",                "hidden widths of the softmax head, comma separated"},
  {"head_eta",                "0.01",            "learning rate for the softmax head"},
  {"target_loss",             "0",               "compare: loss target for rounds-to-target (<=0: derived)"},
  {"threads",                 "0",               "client worker threads (0 = hardware; FEDDISC_THREADS caps)"},
  {"marker_column",           "marker",          "CSV marker column name or zero-based index"},
  {"natural_markers",         "Natural,NoEvents,0", "marker values meaning a natural event"},
  {"attack_markers",          "Attack,1",        "marker values meaning an attack"},
  {"missing_tokens",          "NaN,nan,NAN,inf,-inf,Inf,-Inf,INF,-INF,Infinity,-Infinity",
                                                 "cell tokens treated as missing (empty cells always are)"},
};
// clang-format on

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(',', start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

class ConfigMap {
 public:
  ConfigMap() {
    for (const auto& k : kConfigKeys) values_[std::string(k.name)] = std::string(k.default_value);
  }

  static ConfigMap parse(std::string_view text) {
    ConfigMap c;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      auto line = detail::trim(text.substr(start, end - start));
      ++line_no;
      start = end + 1;
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
      c.set(std::string(detail::trim(line.substr(0, eq))), std::string(detail::trim(line.substr(eq + 1))));
    }
    return c;
  }

  static ConfigMap load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, std::string value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    it->second = std::move(value);
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("config key '" + key + "': not a number: '" + s + "'");
  }

  std::uint64_t integer(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t pos = 0;
      if (!s.empty() && s.front() != '-') {
        const auto v = std::stoull(s, &pos);
        if (pos == s.size()) return v;
      }
    } catch (const std::exception&) {
    }
    throw UsageError("config key '" + key + "': not a non-negative integer: '" + s + "'");
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw UsageError("config key '" + key + "': expected true/false, got '" + s + "'");
  }

  std::vector<std::string> list(const std::string& key) const { return detail::split_list(str(key)); }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : list(key)) {
      try {
        std::size_t pos = 0;
        const auto v = std::stoul(s, &pos);
        if (pos == s.size() && v > 0) {
          out.push_back(v);
          continue;
        }
      } catch (const std::exception&) {
      }
      throw UsageError("config key '" + key + "': bad width '" + s + "'");
    }
    return out;
  }

  /// Every key in declaration order, one key=value per line.
  std::string to_text() const {
    std::string out;
    for (const auto& k : kConfigKeys) {
      out += k.name;
      out += '=';
      out += values_.at(std::string(k.name));
      out += '\n';
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

namespace detail {

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw UsageError("unknown activation '" + s + "'");
}

}  // namespace detail

/// Typed view of a ConfigMap.
struct ExperimentConfig {
  ConfigMap raw;
  FederationConfig federation;
  PrepOptions prep;
  CsvOptions csv;
  PartitionScheme partition;
  std::vector<std::size_t> encoder_widths;
  Activation hidden_activation = Activation::ReLU;
  Activation output_activation = Activation::ReLU;
  InitScheme init = InitScheme::UniformHe;
  Cd1Options cd1;
  ThresholdMethod threshold;
  std::uint32_t head_rounds = 0;
  std::vector<std::size_t> head_hidden;
  double head_eta = 0.01;
  double target_loss = 0.0;

  static ExperimentConfig from(const ConfigMap& m) {
    ExperimentConfig c;
    c.raw = m;
    auto& f = c.federation;
    f.global_seed = m.integer("seed");
    f.clients = m.integer("clients");
    f.rounds = static_cast<std::uint32_t>(m.integer("rounds"));
    f.local_batches_per_round = m.integer("local_batches_per_round");
    f.batch_size = m.integer("batch_size");
    const auto& sched = m.str("eta_schedule");
    if (sched == "constant") f.eta.kind = EtaSchedule::Kind::Constant;
    else if (sched == "inverse_sqrt") f.eta.kind = EtaSchedule::Kind::InverseSqrt;
    else throw UsageError("unknown eta_schedule '" + sched + "'");
    f.eta.eta0 = m.real("eta");
    f.quantization_enabled = m.boolean("quantization");
    f.zero_mean_normalization = m.boolean("zero_mean_normalization");
    f.dp.enabled = m.boolean("dp_enabled");
    f.dp.epsilon = m.real("dp_epsilon");
    f.dp.delta = m.real("dp_delta");
    f.dp.clip = m.real("dp_clip");
    f.threads = static_cast<unsigned>(m.integer("threads"));
    f.validate();

    c.prep.k_impute = m.integer("k_impute");
    c.prep.pca_p = m.integer("pca_p");
    c.prep.test_fraction = m.real("test_fraction");
    c.prep.stratified = m.boolean("stratified");
    c.prep.seed = f.global_seed;
    if (c.prep.k_impute == 0) throw UsageError("k_impute must be >= 1");
    if (c.prep.pca_p == 0) throw UsageError("pca_p must be >= 1");

    c.csv.marker_column = m.str("marker_column");
    c.csv.natural_markers = m.list("natural_markers");
    c.csv.attack_markers = m.list("attack_markers");
    c.csv.missing_tokens = m.list("missing_tokens");
    c.csv.missing_tokens.emplace_back("");

    const auto& part = m.str("partition");
    if (part == "iid") c.partition.kind = PartitionScheme::Kind::Iid;
    else if (part == "dirichlet") c.partition.kind = PartitionScheme::Kind::Dirichlet;
    else if (part == "by_file") c.partition.kind = PartitionScheme::Kind::ByScenarioFile;
    else throw UsageError("unknown partition '" + part + "'");
    c.partition.alpha = m.real("dirichlet_alpha");

    c.encoder_widths = m.sizes("encoder_widths");
    if (c.encoder_widths.empty()) throw UsageError("encoder_widths must list at least one width");
    c.hidden_activation = detail::parse_activation(m.str("hidden_activation"));
    c.output_activation = detail::parse_activation(m.str("output_activation"));
    const auto& init = m.str("init");
    if (init == "uniform_he") c.init = InitScheme::UniformHe;
    else if (init == "cd1") c.init = InitScheme::Cd1Pretrained;
    else throw UsageError("unknown init '" + init + "'");
    c.cd1.epochs = static_cast<int>(m.integer("cd1_epochs"));
    c.cd1.lr = m.real("cd1_lr");

    const auto& th = m.str("threshold");
    if (th == "knee") c.threshold = ThresholdMethod::knee();
    else if (th == "percentile") c.threshold = ThresholdMethod::percentile(m.real("threshold_percentile"));
    else throw UsageError("unknown threshold '" + th + "'");

    c.head_rounds = static_cast<std::uint32_t>(m.integer("head_rounds"));
    c.head_hidden = m.sizes("head_hidden");
    c.head_eta = m.real("head_eta");
    if (c.head_rounds > 0 && !(c.head_eta > 0.0 && c.head_eta < 1.0))
      throw UsageError("head_eta must lie in (0,1)");
    c.target_loss = m.real("target_loss");
    return c;
  }

  static ExperimentConfig defaults() { return from(ConfigMap{}); }

  /// Autoencoder layout for inputs of width `input_dim`.
  std::vector<LayerSpec> model_spec(std::size_t input_dim) const {
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), encoder_widths.begin(), encoder_widths.end());
    return autoencoder_spec(widths, hidden_activation, output_activation);
  }

  std::vector<LayerSpec> head_spec(std::size_t latent_dim) const {
    std::vector<LayerSpec> spec;
    std::size_t in = latent_dim;
    for (auto w : head_hidden) {
      spec.push_back({in, w, Activation::ReLU});
      in = w;
    }
    spec.push_back({in, 2, Activation::Softmax});
    return spec;
  }
};

}  // namespace feddisc
