#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "feddisc/experiment.hpp"
#include "feddisc/synthetic.hpp"

using namespace feddisc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("feddisc_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return bytes::read_file(p); }

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + FEDDISC_CLI + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig small_config(const std::string& extra = "") {
  return ExperimentConfig::from(ConfigMap::parse(
      "rounds=20\nbatch_size=20\nencoder_widths=4,2\noutput_activation=identity\neta=0.003\n"
      "partition=iid\nclients=3\n" +
      extra));
}

Dataset random_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Dataset ds;
  ds.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.features.resize(dim);
    for (double& v : s.features) v = u(rng);
    s.label = i % 5 == 0 ? Label::Attack : Label::Natural;
    s.source = static_cast<std::uint16_t>(i % 3);
    ds.samples.push_back(s);
    ds.is_test.push_back(i % 10 < 3 ? 1 : 0);
  }
  return ds;
}

}  // namespace

TEST(ModelFile, Roundtrip) {
  const auto m = init_params(autoencoder_spec(std::vector<std::size_t>{5, 3, 2}), 7);
  const auto buf = encode(m);
  EXPECT_EQ(std::string(buf.begin(), buf.begin() + 4), "FDSM");
  EXPECT_EQ(decode_model(buf), m);
  auto bad = buf;
  bad.resize(bad.size() - 3);
  EXPECT_THROW(decode_model(bad), DataError);
  bad = buf;
  bad[1] = '?';
  EXPECT_THROW(decode_model(bad), DataError);
}

TEST(RoundLog, JsonlRoundtrip) {
  std::vector<RoundRecord> log{{1, 0.5, {0.4, 0.6}, 100, 200, 0.001}, {2, 0.25, {0.2, 0.3}, 100, 200, 0.001}};
  const auto text = to_jsonl(log);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.substr(0, 5), "{\"t\":");
  EXPECT_EQ(parse_round_log(text), log);
}

TEST(Prep, ThreeRowFixture) {
  const auto dir = scratch("prep3");
  bytes::write_file_atomic(dir / "tiny.csv", std::string("a,b,c,marker\n0.1,0.2,0.3,Natural\n0.4,,0.1,Natural\n"
                                                          "0.9,0.8,0.7,Natural\n"));
  const auto m = cmd_prep({dir / "tiny.csv"}, dir / "tiny.fdsc", ExperimentConfig::defaults());
  EXPECT_EQ(m.n, 3u);
  const auto parsed = Manifest::parse(detail::read_text(manifest_path(dir / "tiny.fdsc")));
  EXPECT_EQ(parsed.n, 3u);
  EXPECT_EQ(parsed.n_train + parsed.n_test, 3u);
  EXPECT_EQ(parsed.missing_cells, 1u);
  ASSERT_EQ(parsed.sources.size(), 1u);
  EXPECT_EQ(parsed.sources[0].first, "tiny.csv");
  EXPECT_EQ(parsed.sources[0].second, 3u);
  EXPECT_EQ(load_dataset(dir / "tiny.fdsc").samples.size(), 3u);
  EXPECT_EQ(detail::read_text(config_echo_path(dir / "tiny.fdsc")), ExperimentConfig::defaults().raw.to_text());
}

TEST(Prep, FifteenFileCorpusIsDeterministic) {
  const auto dir = scratch("prep15");
  SyntheticSpec spec;
  spec.dim = 12;
  spec.missing_rate = 0.02;
  const auto files = write_synthetic_corpus(dir / "csv", 15, 40, spec, 3);
  const auto cfg = ExperimentConfig::from(ConfigMap::parse("pca_p=8\n"));
  const auto m = cmd_prep(files, dir / "a.fdsc", cfg);
  cmd_prep(files, dir / "b.fdsc", cfg);
  EXPECT_EQ(m.sources.size(), 15u);
  EXPECT_EQ(m.n, 600u);
  EXPECT_EQ(m.dim, 8u);
  EXPECT_EQ(Manifest::parse(detail::read_text(manifest_path(dir / "a.fdsc"))).sources.size(), 15u);
  EXPECT_EQ(bytes_of(dir / "a.fdsc"), bytes_of(dir / "b.fdsc"));
  EXPECT_EQ(bytes_of(manifest_path(dir / "a.fdsc")), bytes_of(manifest_path(dir / "b.fdsc")));
  const auto ds = load_dataset(dir / "a.fdsc");
  std::set<int> sources;
  for (const auto& s : ds.samples) sources.insert(s.source);
  EXPECT_EQ(sources.size(), 15u);
}

TEST(Train, WritesOutputsAndEchoReruns) {
  const auto dir = scratch("train");
  save_dataset(dir / "d.fdsc", random_dataset(200, 6, 1));
  const auto cfg = small_config();
  const auto r = cmd_train(dir / "d.fdsc", cfg, dir / "run");
  for (const char* f : {"model.bin", "rounds.jsonl", "train_summary.txt", "config.txt", "timing.json"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  EXPECT_EQ(load_model(dir / "run" / "model.bin"), r.model);
  EXPECT_EQ(load_round_log(dir / "run" / "rounds.jsonl"), r.log);
  EXPECT_EQ(r.log.size(), 20u);
  EXPECT_EQ(detail::read_text(dir / "run" / "config.txt"), cfg.raw.to_text());
  // config echo is sufficient to rerun: same outputs byte for byte
  cmd_train(dir / "d.fdsc", ExperimentConfig::from(ConfigMap::load(dir / "run" / "config.txt")),
            dir / "run2");
  EXPECT_EQ(bytes_of(dir / "run" / "model.bin"), bytes_of(dir / "run2" / "model.bin"));
  EXPECT_EQ(bytes_of(dir / "run" / "rounds.jsonl"), bytes_of(dir / "run2" / "rounds.jsonl"));
}

TEST(Evaluate, WritesReportFiles) {
  const auto dir = scratch("eval");
  save_dataset(dir / "d.fdsc", random_dataset(200, 6, 2));
  const auto cfg = small_config("head_rounds=5\n");
  cmd_train(dir / "d.fdsc", cfg, dir / "run");
  ASSERT_TRUE(fs::exists(dir / "run" / "head.bin"));
  const auto e = cmd_evaluate(dir / "run" / "model.bin", dir / "d.fdsc", dir / "ev", cfg);
  EXPECT_EQ(e.report.count(), 60u);
  ASSERT_TRUE(e.softmax_report.has_value());
  for (const char* f : {"report.txt", "per_sample.csv", "by_source.csv", "report_softmax.txt", "per_sample_softmax.csv",
                        "by_source_softmax.csv", "config.txt"})
    EXPECT_TRUE(fs::exists(dir / "ev" / f)) << f;
  const auto kv = detail::parse_record(detail::read_text(dir / "ev" / "report.txt"));
  EXPECT_EQ(kv.at("samples"), "60");
  EXPECT_EQ(kv.at("threshold_method"), "knee");
  const auto csv = detail::read_text(dir / "ev" / "per_sample.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 61);
  // tau was chosen on training errors
  const auto model = load_model(dir / "run" / "model.bin");
  std::vector<double> errs;
  for (const auto& s : load_dataset(dir / "d.fdsc").train()) errs.push_back(reconstruction_error(model, s.features));
  EXPECT_EQ(e.threshold.tau, select_threshold(ErrorCurve::from(errs)).tau);
}

TEST(Compare, ByteArithmeticForThousandParameterModel) {
  const auto dir = scratch("compare");
  save_dataset(dir / "d.fdsc", random_dataset(80, 10, 3));
  // 10->5->80->5->10 has 55 + 480 + 405 + 60 = 1000 parameters
  const auto cfg = ExperimentConfig::from(ConfigMap::parse(
      "rounds=10\nclients=4\nbatch_size=10\nencoder_widths=5,80\npartition=iid\noutput_activation=identity\n"));
  ASSERT_EQ(param_count(cfg.model_spec(10)), 1000u);
  const auto c = cmd_compare(dir / "d.fdsc", cfg, dir / "cmp");
  EXPECT_EQ(c.with_gq.uplink_bytes, 4u * 10u * (16u + 125u));
  EXPECT_EQ(c.without_gq.uplink_bytes, 4u * 10u * (16u + 8000u));
  EXPECT_NEAR(c.uplink_ratio, 141.0 / 8016.0, 1e-15);
  EXPECT_NEAR(c.uplink_ratio, 0.0176, 5e-5);
  EXPECT_EQ(c.with_gq.downlink_bytes, c.without_gq.downlink_bytes);

  // recount from the logs written to disk
  std::uint64_t up_on = 0, up_off = 0, all_on = 0, all_off = 0;
  for (const auto& r : load_round_log(dir / "cmp" / "gq_on" / "rounds.jsonl")) {
    up_on += r.uplink_bytes;
    all_on += r.uplink_bytes + r.downlink_bytes;
  }
  for (const auto& r : load_round_log(dir / "cmp" / "gq_off" / "rounds.jsonl")) {
    up_off += r.uplink_bytes;
    all_off += r.uplink_bytes + r.downlink_bytes;
  }
  EXPECT_EQ(c.uplink_ratio, static_cast<double>(up_on) / static_cast<double>(up_off));
  EXPECT_EQ(c.total_ratio, static_cast<double>(all_on) / static_cast<double>(all_off));
  const auto kv = detail::parse_record(detail::read_text(dir / "cmp" / "comparison.txt"));
  EXPECT_EQ(kv.at("gq_on.uplink_bytes"), std::to_string(up_on));
  EXPECT_EQ(kv.at("gq_off.uplink_bytes"), std::to_string(up_off));

  // both variants start from the same Z0
  auto on = cfg.raw, off = cfg.raw;
  on.set("quantization", "true");
  off.set("quantization", "false");
  const auto ds = load_dataset(dir / "d.fdsc");
  EXPECT_EQ(initial_model(ExperimentConfig::from(on), 10, ds.train()),
            initial_model(ExperimentConfig::from(off), 10, ds.train()));
}

TEST(Compare, TargetRule) {
  std::vector<RoundRecord> a{{1, 0.5, {}, 1, 1, 0}, {2, 0.3, {}, 1, 1, 0}};
  std::vector<RoundRecord> b{{1, 0.6, {}, 2, 1, 0}, {2, 0.4, {}, 2, 1, 0}};
  const DetectionReport rep;
  const auto c = compare_runs(a, 0.2, rep, b, 0.35, rep, 0.0);
  EXPECT_EQ(c.target_loss, 0.35);
  EXPECT_EQ(c.with_gq.rounds_to_target, 2u);
  EXPECT_EQ(c.without_gq.rounds_to_target, 2u);
  const auto fixed = compare_runs(a, 0.2, rep, b, 0.35, rep, 0.55);
  EXPECT_EQ(fixed.with_gq.rounds_to_target, 1u);
  EXPECT_EQ(fixed.without_gq.rounds_to_target, 2u);
  EXPECT_FALSE(compare_runs(a, 0.2, rep, b, 0.35, rep, 0.1).without_gq.rounds_to_target.has_value());
  EXPECT_EQ(c.uplink_ratio, 0.5);
}

TEST(Report, CsvAndJsonLines) {
  const auto dir = scratch("report");
  save_dataset(dir / "d.fdsc", random_dataset(90, 5, 4));
  cmd_compare(dir / "d.fdsc", small_config("rounds=5\n"), dir / "cmp");
  const auto csv = cmd_report(dir / "cmp", TableFormat::Csv);
  ASSERT_EQ(csv.size(), 3u);
  const auto curve = detail::read_text(dir / "cmp" / "report" / "loss_curve.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')),
            "variant,t,F,eta,uplink_bytes,downlink_bytes,cum_uplink_bytes,cum_downlink_bytes");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 1 + 2 * 5);
  const auto jl = cmd_report(dir / "cmp", TableFormat::JsonLines);
  const auto bars = detail::read_text(dir / "cmp" / "report" / "comparison_bars.jsonl");
  EXPECT_EQ(bars.front(), '{');
  EXPECT_NE(bars.find("\"metric\":\"uplink_bytes\""), std::string::npos);
  const auto metrics = detail::read_text(dir / "cmp" / "report" / "metrics.csv");
  EXPECT_NE(metrics.find("gq_on,threshold,all,"), std::string::npos);
  EXPECT_THROW(cmd_report(dir / "nothing", TableFormat::Csv), DataError);
}

// --- CLI ----------------------------------------------------------------------

TEST(Cli, PipelineDeterministicAcrossThreadCounts) {
  const auto dir = scratch("cli");
  SyntheticSpec spec;
  spec.dim = 10;
  write_synthetic_corpus(dir / "csv", 3, 60, spec, 5);
  bytes::write_file_atomic(dir / "exp.cfg", std::string("pca_p=6\nencoder_widths=4,2\nrounds=15\nbatch_size=20\n"
                                                        "output_activation=identity\nclients=4\n"));
  const std::string inputs = (dir / "csv" / "scenario01.csv").string() + " " +
                             (dir / "csv" / "scenario02.csv").string() + " " +
                             (dir / "csv" / "scenario03.csv").string();
  const std::string cfg = " --config " + (dir / "exp.cfg").string();
  ASSERT_EQ(run_cli("prep --input " + inputs + " --out " + (dir / "d.fdsc").string() + cfg), 0);
  for (const char* t : {"1", "4"}) {
    const auto out = dir / (std::string("run") + t);
    ASSERT_EQ(run_cli("train --data " + (dir / "d.fdsc").string() + " --out " + out.string() + cfg,
                      std::string("FEDDISC_THREADS=") + t),
              0);
    ASSERT_EQ(run_cli("evaluate --model " + (out / "model.bin").string() + " --data " + (dir / "d.fdsc").string() +
                          " --out " + (out / "eval").string(),
                      std::string("FEDDISC_THREADS=") + t),
              0);
  }
  EXPECT_EQ(bytes_of(dir / "run1" / "model.bin"), bytes_of(dir / "run4" / "model.bin"));
  EXPECT_EQ(bytes_of(dir / "run1" / "rounds.jsonl"), bytes_of(dir / "run4" / "rounds.jsonl"));
  EXPECT_EQ(bytes_of(dir / "run1" / "eval" / "report.txt"), bytes_of(dir / "run4" / "eval" / "report.txt"));
  EXPECT_EQ(bytes_of(dir / "run1" / "eval" / "per_sample.csv"), bytes_of(dir / "run4" / "eval" / "per_sample.csv"));
  // evaluate picked up the echoed config next to the model
  EXPECT_EQ(detail::read_text(dir / "run1" / "eval" / "config.txt"), detail::read_text(dir / "run1" / "config.txt"));
  EXPECT_EQ(run_cli("report --in " + (dir / "run1").string() + " --format jsonlines"), 0);
  EXPECT_TRUE(fs::exists(dir / "run1" / "report" / "loss_curve.jsonl"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("exit");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("train --out x"), 1);
  bytes::write_file_atomic(dir / "bad.cfg", std::string("rounds=3\nwarp_speed=9\n"));
  save_dataset(dir / "d.fdsc", random_dataset(40, 4, 6));
  EXPECT_EQ(run_cli("train --data " + (dir / "d.fdsc").string() + " --out " + (dir / "r").string() + " --config " +
                    (dir / "bad.cfg").string()),
            1);
  EXPECT_EQ(run_cli("train --data " + (dir / "d.fdsc").string() + " --out " + (dir / "r").string() +
                    " --set rounds=abc"),
            1);

  bytes::write_file_atomic(dir / "junk.fdsc", std::string("not a dataset"));
  EXPECT_EQ(run_cli("train --data " + (dir / "junk.fdsc").string() + " --out " + (dir / "r").string()), 2);
  bytes::write_file_atomic(dir / "bad.csv", std::string("a,marker\n1,Natural\n2,Unknown\n"));
  EXPECT_EQ(run_cli("prep --input " + (dir / "bad.csv").string() + " --out " + (dir / "x.fdsc").string()), 2);

  // values large enough that the squared-error gradient overflows
  Dataset huge = random_dataset(20, 4, 7);
  for (auto& s : huge.samples)
    for (double& v : s.features) v = 1e200;
  save_dataset(dir / "huge.fdsc", huge);
  EXPECT_EQ(run_cli("train --data " + (dir / "huge.fdsc").string() + " --out " + (dir / "h").string() +
                    " --set encoder_widths=2 --set rounds=2 --set batch_size=5 --set partition=iid"),
            3);

  ASSERT_EQ(run_cli("train --data " + (dir / "d.fdsc").string() + " --out " + (dir / "ok").string() +
                    " --set rounds=2 --set encoder_widths=2 --set partition=iid"),
            0);
  EXPECT_EQ(run_cli("evaluate --model " + (dir / "ok" / "model.bin").string() + " --data " +
                    (dir / "huge.fdsc").string() + " --out " + (dir / "e").string()),
            3);
}
