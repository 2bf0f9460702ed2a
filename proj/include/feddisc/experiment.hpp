#pragma once

// The prep / train / evaluate / compare / report commands. Every file is
// written atomically; timing.json is the only output that varies between
// identical runs.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "feddisc/bytes.hpp"
#include "feddisc/config.hpp"
#include "feddisc/data.hpp"
#include "feddisc/detector.hpp"
#include "feddisc/error.hpp"
#include "feddisc/federation.hpp"
#include "feddisc/nn.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

namespace fs = std::filesystem;

// --- Model file -------------------------------------------------------------
// "FDSM", version u16, layer count u32, parameter count u64, then per layer
// in_dim u32, out_dim u32, activation u8, then the flat f64 parameters.

inline constexpr std::uint16_t kModelVersion = 1;

inline std::vector<std::uint8_t> encode(const ModelParams& m) {
  std::vector<std::uint8_t> out;
  bytes::put_raw(out, "FDSM");
  bytes::put<std::uint16_t>(out, kModelVersion);
  bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.spec.size()));
  bytes::put<std::uint64_t>(out, m.flat.size());
  for (const auto& l : m.spec) {
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.in_dim));
    bytes::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.out_dim));
    bytes::put<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
  }
  for (double v : m.flat) bytes::put<double>(out, v);
  return out;
}

inline ModelParams decode_model(std::span<const std::uint8_t> buf) {
  bytes::Reader r(buf, "model");
  const auto magic = r.take(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != "FDSM")
    throw DataError("model: bad magic");
  if (r.get<std::uint16_t>() != kModelVersion) throw DataError("model: unsupported version");
  const auto layers = r.get<std::uint32_t>();
  const auto m = r.get<std::uint64_t>();
  std::vector<LayerSpec> spec(layers);
  for (auto& l : spec) {
    l.in_dim = r.get<std::uint32_t>();
    l.out_dim = r.get<std::uint32_t>();
    const auto act = r.get<std::uint8_t>();
    if (act > 2) throw DataError("model: unknown activation code " + std::to_string(act));
    l.activation = static_cast<Activation>(act);
  }
  if (r.remaining() != 8 * m) throw DataError("model: size does not match header");
  std::vector<double> flat(m);
  for (auto& v : flat) v = r.get<double>();
  return ModelParams(std::move(spec), std::move(flat));
}

inline void save_model(const fs::path& path, const ModelParams& m) { bytes::write_file_atomic(path, encode(m)); }
inline ModelParams load_model(const fs::path& path) { return decode_model(bytes::read_file(path)); }

// --- Round log --------------------------------------------------------------

inline std::string to_jsonl(const std::vector<RoundRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["t"] = r.t;
    j["F"] = r.global_loss;
    j["eta"] = r.eta;
    j["uplink_bytes"] = r.uplink_bytes;
    j["downlink_bytes"] = r.downlink_bytes;
    j["f_k"] = r.local_loss;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<RoundRecord> parse_round_log(std::string_view text) {
  std::vector<RoundRecord> log;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RoundRecord r;
      r.t = j.at("t").get<std::uint32_t>();
      r.global_loss = j.at("F").get<double>();
      r.eta = j.at("eta").get<double>();
      r.uplink_bytes = j.at("uplink_bytes").get<std::uint64_t>();
      r.downlink_bytes = j.at("downlink_bytes").get<std::uint64_t>();
      r.local_loss = j.at("f_k").get<std::vector<double>>();
      log.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("round log: ") + e.what());
    }
  }
  return log;
}

inline std::vector<RoundRecord> load_round_log(const fs::path& path) {
  const auto buf = bytes::read_file(path);
  return parse_round_log({reinterpret_cast<const char*>(buf.data()), buf.size()});
}

namespace detail {

inline std::string read_text(const fs::path& path) {
  const auto buf = bytes::read_file(path);
  return {buf.begin(), buf.end()};
}

/// key=value lines into a map; blank and # lines skipped.
inline std::map<std::string, std::string> parse_record(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

inline void write_timing(const fs::path& dir, const std::string& what, double seconds) {
  nlohmann::ordered_json j;
  j["command"] = what;
  j["wall_seconds"] = seconds;
  bytes::write_file_atomic(dir / "timing.json", j.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace detail

// --- prep -------------------------------------------------------------------

struct Manifest {
  std::size_t n = 0, n_train = 0, n_test = 0, dim = 0, raw_features = 0, missing_cells = 0;
  std::uint64_t basis_hash = 0;
  std::vector<std::pair<std::string, std::size_t>> sources;  ///< file name, rows

  std::string to_text() const {
    std::ostringstream os;
    os << "n=" << n << "\nn_train=" << n_train << "\nn_test=" << n_test << "\nd=" << dim
       << "\nraw_features=" << raw_features << "\nmissing_cells=" << missing_cells
       << "\nbasis_hash=" << detail::hex64(basis_hash) << "\nsources=" << sources.size() << '\n';
    for (std::size_t i = 0; i < sources.size(); ++i)
      os << "source." << i << '=' << sources[i].first << ',' << sources[i].second << '\n';
    return os.str();
  }

  static Manifest parse(std::string_view text) {
    const auto kv = detail::parse_record(text);
    auto num = [&](const std::string& k) -> std::size_t {
      auto it = kv.find(k);
      if (it == kv.end()) throw DataError("manifest: missing " + k);
      return std::stoull(it->second);
    };
    Manifest m;
    m.n = num("n");
    m.n_train = num("n_train");
    m.n_test = num("n_test");
    m.dim = num("d");
    m.raw_features = num("raw_features");
    m.missing_cells = num("missing_cells");
    m.basis_hash = std::stoull(kv.at("basis_hash"), nullptr, 16);
    const auto count = num("sources");
    for (std::size_t i = 0; i < count; ++i) {
      const auto& v = kv.at("source." + std::to_string(i));
      const auto comma = v.rfind(',');
      m.sources.emplace_back(v.substr(0, comma), std::stoull(v.substr(comma + 1)));
    }
    return m;
  }
};

inline fs::path manifest_path(const fs::path& dataset) {
  auto p = dataset;
  p += ".manifest";
  return p;
}

inline fs::path config_echo_path(const fs::path& dataset) {
  auto p = dataset;
  p += ".config";
  return p;
}

/// Loads the scenario CSVs (source index = argument order), runs the
/// preprocessing pipeline and writes the dataset, its manifest and the
/// resolved config next to it.
inline Manifest cmd_prep(const std::vector<fs::path>& inputs, const fs::path& out,
                         const ExperimentConfig& cfg) {
  if (inputs.empty()) throw UsageError("prep: no input files");
  if (inputs.size() > 64) throw UsageError("prep: at most 64 input files");
  std::vector<RawTable> tables;
  Manifest m;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    tables.push_back(load_csv(inputs[i], cfg.csv, static_cast<std::uint16_t>(i)));
    m.sources.emplace_back(inputs[i].filename().string(), tables.back().rows());
    m.missing_cells += tables.back().missing_count();
  }
  const auto prepared = prepare(tables, cfg.prep);
  const auto& ds = prepared.dataset;
  m.n = ds.samples.size();
  m.n_test = static_cast<std::size_t>(std::count(ds.is_test.begin(), ds.is_test.end(), 1));
  m.n_train = m.n - m.n_test;
  m.dim = ds.dim;
  m.raw_features = tables.front().cols();
  m.basis_hash = basis_hash(prepared.basis, prepared.scaler);

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(out, ds);
  bytes::write_file_atomic(manifest_path(out), m.to_text());
  bytes::write_file_atomic(config_echo_path(out), cfg.raw.to_text());
  return m;
}

// --- train ------------------------------------------------------------------

struct TrainResult {
  ModelParams model;
  std::vector<RoundRecord> log;
  double final_loss = 0.0;  ///< F(Z^T)
  std::optional<ModelParams> head;
  std::vector<RoundRecord> head_log;
};

/// Seeds for the stages that are not per-client-round.
inline std::uint64_t partition_seed(std::uint64_t s) { return hash64({s, 0x70617274ULL}); }
inline std::uint64_t init_seed(std::uint64_t s) { return hash64({s, 0x696e6974ULL}); }
inline std::uint64_t head_seed(std::uint64_t s) { return hash64({s, 0x68656164ULL}); }

inline ModelParams initial_model(const ExperimentConfig& cfg, std::size_t dim, std::span<const Sample> train) {
  Rows rows;
  if (cfg.init == InitScheme::Cd1Pretrained)
    for (const auto& s : train) rows.push_back(s.features);
  return init_params(cfg.model_spec(dim), init_seed(cfg.federation.global_seed), cfg.init, rows, cfg.cd1);
}

/// In-memory training on the training split of `ds`.
inline TrainResult train(const Dataset& ds, const ExperimentConfig& cfg) {
  const auto train_rows = ds.train();
  if (train_rows.empty()) throw DataError("train: dataset has no training rows");
  const auto& fc = cfg.federation;
  const auto zones = partition_zones(train_rows, fc.clients, cfg.partition, partition_seed(fc.global_seed));
  const auto z0 = initial_model(cfg, ds.dim, train_rows);
  auto run = run_federation(fc, zones, z0);

  TrainResult out{std::move(run.final_model), std::move(run.log), 0.0, std::nullopt, {}};
  const auto clients = make_clients(zones, out.model.spec, fc);
  out.final_loss = global_loss<NetworkClient>(clients, out.model.flat);

  if (cfg.head_rounds > 0) {
    // Head trained on frozen latent codes, federated over the same zones.
    std::vector<ZoneDataset> latent_zones = zones;
    for (auto& z : latent_zones)
      for (auto& s : z.samples) {
        const auto tr = forward(out.model, s.features);
        s.features.assign(tr.latent().begin(), tr.latent().end());
      }
    const auto latent_dim = out.model.spec[out.model.latent_layer()].out_dim;
    FederationConfig hc = fc;
    hc.rounds = cfg.head_rounds;
    hc.loss = Loss::CrossEntropy;
    hc.eta = EtaSchedule{EtaSchedule::Kind::Constant, cfg.head_eta};
    const auto h0 = init_params(cfg.head_spec(latent_dim), head_seed(fc.global_seed));
    auto hr = run_federation(hc, latent_zones, h0);
    out.head = std::move(hr.final_model);
    out.head_log = std::move(hr.log);
  }
  return out;
}

inline void write_train_outputs(const fs::path& dir, const TrainResult& r, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  save_model(dir / "model.bin", r.model);
  bytes::write_file_atomic(dir / "rounds.jsonl", to_jsonl(r.log));
  if (r.head) {
    save_model(dir / "head.bin", *r.head);
    bytes::write_file_atomic(dir / "head_rounds.jsonl", to_jsonl(r.head_log));
  }
  std::ostringstream os;
  os << "params=" << r.model.size() << "\nrounds=" << r.log.size()
     << "\nfinal_loss=" << format_double(r.final_loss) << '\n';
  std::uint64_t up = 0, down = 0;
  for (const auto& rec : r.log) {
    up += rec.uplink_bytes;
    down += rec.downlink_bytes;
  }
  os << "uplink_bytes=" << up << "\ndownlink_bytes=" << down << '\n';
  bytes::write_file_atomic(dir / "train_summary.txt", os.str());
  bytes::write_file_atomic(dir / "config.txt", cfg.raw.to_text());
}

inline TrainResult cmd_train(const fs::path& data, const ExperimentConfig& cfg, const fs::path& out) {
  detail::Stopwatch sw;
  const auto ds = load_dataset(data);
  auto r = train(ds, cfg);
  write_train_outputs(out, r, cfg);
  detail::write_timing(out, "train", sw.seconds());
  return r;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluationResult {
  Threshold threshold;
  DetectionReport report;
  std::optional<DetectionReport> softmax_report;
  std::vector<std::uint16_t> sources;  ///< per test row
};

inline EvaluationResult evaluate_model(const ModelParams& model, const std::optional<ModelParams>& head,
                                       const Dataset& ds, const ExperimentConfig& cfg) {
  const auto train_rows = ds.train();
  const auto test_rows = ds.test();
  if (train_rows.empty()) throw DataError("evaluate: dataset has no training rows");
  if (test_rows.empty()) throw DataError("evaluate: dataset has no test rows");
  std::vector<double> errors;
  errors.reserve(train_rows.size());
  for (const auto& s : train_rows) errors.push_back(reconstruction_error(model, s.features));
  EvaluationResult out;
  out.threshold = select_threshold(ErrorCurve::from(errors), cfg.threshold);
  out.report = evaluate(model, test_rows, out.threshold.tau);
  if (head) out.softmax_report = evaluate_head(model, *head, test_rows);
  for (const auto& s : test_rows) out.sources.push_back(s.source);
  return out;
}

/// Confusion counts per source file.
inline std::string by_source_csv(const DetectionReport& r, const std::vector<std::uint16_t>& sources) {
  std::map<std::uint16_t, std::vector<SampleOutcome>> groups;
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) groups[sources[i]].push_back(r.per_sample[i]);
  std::ostringstream os;
  os << "source,n,tp,fp,tn,fn,accuracy,precision,recall,f_score\n";
  for (auto& [src, outcomes] : groups) {
    const auto g = summarize(outcomes, r.tau);
    os << src << ',' << g.count() << ',' << g.tp << ',' << g.fp << ',' << g.tn << ',' << g.fn << ','
       << format_double(g.accuracy) << ',' << format_double(g.precision) << ','
       << format_double(g.recall) << ',' << format_double(g.f_score) << '\n';
  }
  return os.str();
}

inline void write_evaluation(const fs::path& dir, const EvaluationResult& e, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::string text = to_text(e.report);
  text += "threshold_method=";
  text += e.threshold.method.kind == ThresholdMethod::Kind::Knee ? "knee" : "percentile";
  text += "\nthreshold_index=" + std::to_string(e.threshold.index);
  text += "\nthreshold_degenerate=" + std::to_string(e.threshold.degenerate ? 1 : 0) + "\n";
  bytes::write_file_atomic(dir / "report.txt", text);
  bytes::write_file_atomic(dir / "per_sample.csv", to_csv(e.report));
  bytes::write_file_atomic(dir / "by_source.csv", by_source_csv(e.report, e.sources));
  if (e.softmax_report) {
    bytes::write_file_atomic(dir / "report_softmax.txt", to_text(*e.softmax_report));
    bytes::write_file_atomic(dir / "per_sample_softmax.csv", to_csv(*e.softmax_report));
    bytes::write_file_atomic(dir / "by_source_softmax.csv", by_source_csv(*e.softmax_report, e.sources));
  }
  bytes::write_file_atomic(dir / "config.txt", cfg.raw.to_text());
}

/// Config used by evaluate when none is given: the echo next to the model,
/// else the defaults.
inline ExperimentConfig config_for_model(const fs::path& model) {
  const auto echo = model.parent_path() / "config.txt";
  if (fs::exists(echo)) return ExperimentConfig::from(ConfigMap::load(echo));
  return ExperimentConfig::defaults();
}

inline EvaluationResult cmd_evaluate(const fs::path& model_path, const fs::path& data, const fs::path& out,
                                     const ExperimentConfig& cfg) {
  const auto model = load_model(model_path);
  std::optional<ModelParams> head;
  const auto head_path = model_path.parent_path() / "head.bin";
  if (fs::exists(head_path)) head = load_model(head_path);
  const auto ds = load_dataset(data);
  if (ds.dim != model.input_dim())
    throw DataError("evaluate: dataset width " + std::to_string(ds.dim) + " does not match model input " +
                    std::to_string(model.input_dim()));
  auto e = evaluate_model(model, head, ds, cfg);
  write_evaluation(out, e, cfg);
  return e;
}

// --- compare ----------------------------------------------------------------

struct VariantSummary {
  std::string name;
  std::uint64_t uplink_bytes = 0, downlink_bytes = 0;
  std::optional<std::uint32_t> rounds_to_target;
  double final_loss = 0.0;
  DetectionReport report;

  std::uint64_t total_bytes() const { return uplink_bytes + downlink_bytes; }
};

struct ComparisonReport {
  double target_loss = 0.0;
  VariantSummary with_gq, without_gq;
  double uplink_ratio = 0.0;  ///< with / without
  double total_ratio = 0.0;

  std::string to_text() const {
    std::ostringstream os;
    os << "target_loss=" << format_double(target_loss) << '\n';
    for (const auto* v : {&with_gq, &without_gq}) {
      const auto& p = v->name;
      os << p << ".uplink_bytes=" << v->uplink_bytes << '\n'
         << p << ".downlink_bytes=" << v->downlink_bytes << '\n'
         << p << ".total_bytes=" << v->total_bytes() << '\n'
         << p << ".rounds_to_target="
         << (v->rounds_to_target ? std::to_string(*v->rounds_to_target) : std::string("none")) << '\n'
         << p << ".final_loss=" << format_double(v->final_loss) << '\n'
         << p << ".accuracy=" << format_double(v->report.accuracy) << '\n'
         << p << ".precision=" << format_double(v->report.precision) << '\n'
         << p << ".recall=" << format_double(v->report.recall) << '\n'
         << p << ".f_score=" << format_double(v->report.f_score) << '\n';
    }
    os << "uplink_ratio=" << format_double(uplink_ratio) << '\n'
       << "uplink_reduction=" << format_double(1.0 - uplink_ratio) << '\n'
       << "total_ratio=" << format_double(total_ratio) << '\n'
       << "total_reduction=" << format_double(1.0 - total_ratio) << '\n';
    return os.str();
  }
};

inline std::optional<std::uint32_t> rounds_to_target(const std::vector<RoundRecord>& log, double target) {
  for (const auto& r : log)
    if (r.global_loss <= target) return r.t;
  return std::nullopt;
}

/// Builds the comparison purely from the two round logs and reports.
inline ComparisonReport compare_runs(const std::vector<RoundRecord>& on_log, double on_final,
                                     const DetectionReport& on_report, const std::vector<RoundRecord>& off_log,
                                     double off_final, const DetectionReport& off_report, double target) {
  ComparisonReport c;
  auto fill = [](VariantSummary& v, const std::string& name, const std::vector<RoundRecord>& log,
                 double final_loss, const DetectionReport& rep) {
    v.name = name;
    for (const auto& r : log) {
      v.uplink_bytes += r.uplink_bytes;
      v.downlink_bytes += r.downlink_bytes;
    }
    v.final_loss = final_loss;
    v.report = rep;
    v.report.per_sample.clear();
  };
  fill(c.with_gq, "gq_on", on_log, on_final, on_report);
  fill(c.without_gq, "gq_off", off_log, off_final, off_report);
  if (target <= 0.0) {
    // Loosest of the two best losses, so both variants reach it.
    auto best = [](const std::vector<RoundRecord>& log, double fin) {
      double b = fin;
      for (const auto& r : log) b = std::min(b, r.global_loss);
      return b;
    };
    target = std::max(best(on_log, on_final), best(off_log, off_final));
  }
  c.target_loss = target;
  auto reach = [&](VariantSummary& v, const std::vector<RoundRecord>& log, double fin) {
    v.rounds_to_target = rounds_to_target(log, target);
    if (!v.rounds_to_target && fin <= target) v.rounds_to_target = static_cast<std::uint32_t>(log.size());
  };
  reach(c.with_gq, on_log, on_final);
  reach(c.without_gq, off_log, off_final);
  const auto ratio = [](std::uint64_t a, std::uint64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  c.uplink_ratio = ratio(c.with_gq.uplink_bytes, c.without_gq.uplink_bytes);
  c.total_ratio = ratio(c.with_gq.total_bytes(), c.without_gq.total_bytes());
  return c;
}

/// Two federations that differ only in quantization, same seeds and Z^0.
inline ComparisonReport cmd_compare(const fs::path& data, const ExperimentConfig& cfg, const fs::path& out) {
  detail::Stopwatch sw;
  const auto ds = load_dataset(data);
  fs::create_directories(out);
  struct Run {
    TrainResult train;
    EvaluationResult eval;
  };
  std::vector<Run> runs;
  for (bool quantized : {true, false}) {
    auto raw = cfg.raw;
    raw.set("quantization", quantized ? "true" : "false");
    const auto vc = ExperimentConfig::from(raw);
    const auto dir = out / (quantized ? "gq_on" : "gq_off");
    auto tr = train(ds, vc);
    write_train_outputs(dir, tr, vc);
    auto ev = evaluate_model(tr.model, tr.head, ds, vc);
    write_evaluation(dir, ev, vc);
    runs.push_back({std::move(tr), std::move(ev)});
  }
  const auto c = compare_runs(runs[0].train.log, runs[0].train.final_loss, runs[0].eval.report,
                              runs[1].train.log, runs[1].train.final_loss, runs[1].eval.report, cfg.target_loss);
  bytes::write_file_atomic(out / "comparison.txt", c.to_text());
  bytes::write_file_atomic(out / "config.txt", cfg.raw.to_text());
  detail::write_timing(out, "compare", sw.seconds());
  return c;
}

// --- report -----------------------------------------------------------------

enum class TableFormat { Csv, JsonLines };

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render(TableFormat f) const {
    std::string out;
    if (f == TableFormat::Csv) {
      auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (i) out += ',';
          out += cells[i];
        }
        out += '\n';
      };
      line(header);
      for (const auto& r : rows) line(r);
      return out;
    }
    for (const auto& r : rows) {
      nlohmann::ordered_json j;
      for (std::size_t i = 0; i < header.size(); ++i) {
        const auto& cell = r[i];
        double v = 0.0;
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (!cell.empty() && res.ec == std::errc() && res.ptr == cell.data() + cell.size())
          j[header[i]] = v;
        else
          j[header[i]] = cell;
      }
      out += j.dump();
      out += '\n';
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto sv : split_fields(line, ',')) cells.emplace_back(sv);
    out.push_back(std::move(cells));
  }
  return out;
}

}  // namespace detail

/// Writes loss_curve, metrics and (for compare directories) comparison_bars
/// tables into <in>/report.
inline std::vector<fs::path> cmd_report(const fs::path& in, TableFormat format) {
  if (!fs::is_directory(in)) throw DataError("report: " + in.string() + " is not a directory");
  std::vector<std::pair<std::string, fs::path>> runs;
  if (fs::exists(in / "rounds.jsonl")) runs.emplace_back("run", in);
  for (const char* v : {"gq_on", "gq_off"})
    if (fs::exists(in / v / "rounds.jsonl")) runs.emplace_back(v, in / v);
  if (runs.empty()) throw DataError("report: no rounds.jsonl under " + in.string());

  Table curve{{"variant", "t", "F", "eta", "uplink_bytes", "downlink_bytes", "cum_uplink_bytes",
               "cum_downlink_bytes"},
              {}};
  Table metrics{{"variant", "path", "source", "n", "tp", "fp", "tn", "fn", "accuracy", "precision",
                 "recall", "f_score"},
                {}};
  for (const auto& [name, dir] : runs) {
    std::uint64_t up = 0, down = 0;
    for (const auto& r : load_round_log(dir / "rounds.jsonl")) {
      up += r.uplink_bytes;
      down += r.downlink_bytes;
      curve.rows.push_back({name, std::to_string(r.t), format_double(r.global_loss), format_double(r.eta),
                            std::to_string(r.uplink_bytes), std::to_string(r.downlink_bytes),
                            std::to_string(up), std::to_string(down)});
    }
    for (const auto& [path, suffix] : {std::pair{"threshold", ""}, std::pair{"softmax", "_softmax"}}) {
      const auto report = dir / (std::string("report") + suffix + ".txt");
      if (!fs::exists(report)) continue;
      const auto kv = detail::parse_record(detail::read_text(report));
      metrics.rows.push_back({name, path, "all", kv.at("samples"), kv.at("tp"), kv.at("fp"), kv.at("tn"),
                              kv.at("fn"), kv.at("accuracy"), kv.at("precision"), kv.at("recall"),
                              kv.at("f_score")});
      const auto by_source = dir / (std::string("by_source") + suffix + ".csv");
      if (!fs::exists(by_source)) continue;
      for (auto& cells : detail::read_csv_rows(by_source)) {
        std::vector<std::string> row{name, path};
        row.insert(row.end(), cells.begin(), cells.end());
        metrics.rows.push_back(std::move(row));
      }
    }
  }

  const std::string ext = format == TableFormat::Csv ? ".csv" : ".jsonl";
  const auto out_dir = in / "report";
  fs::create_directories(out_dir);
  std::vector<fs::path> written{out_dir / ("loss_curve" + ext), out_dir / ("metrics" + ext)};
  bytes::write_file_atomic(written[0], curve.render(format));
  bytes::write_file_atomic(written[1], metrics.render(format));

  if (fs::exists(in / "comparison.txt")) {
    const auto kv = detail::parse_record(detail::read_text(in / "comparison.txt"));
    Table bars{{"metric", "gq_on", "gq_off"}, {}};
    for (const char* m : {"uplink_bytes", "downlink_bytes", "total_bytes", "rounds_to_target", "final_loss",
                          "accuracy", "precision", "recall", "f_score"})
      bars.rows.push_back({m, kv.at(std::string("gq_on.") + m), kv.at(std::string("gq_off.") + m)});
    written.push_back(out_dir / ("comparison_bars" + ext));
    bytes::write_file_atomic(written.back(), bars.render(format));
  }
  return written;
}

}  // namespace feddisc
