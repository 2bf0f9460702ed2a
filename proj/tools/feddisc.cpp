// feddisc: command-line front end.
//
//   feddisc prep     --input a.csv b.csv ... --out data.fdsc [--config c.txt]
//   feddisc train    --data data.fdsc --out run/ [--config c.txt]
//   feddisc evaluate --model run/model.bin --data data.fdsc --out run/ [--config c.txt]
//   feddisc compare  --data data.fdsc --out cmp/ [--config c.txt]
//   feddisc report   --in cmp/ [--format csv|jsonlines]
//   feddisc synth    --out corpus/ [--files 15 --rows 400 --dim 32 --seed 1]
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "feddisc/config.hpp"
#include "feddisc/error.hpp"
#include "feddisc/experiment.hpp"
#include "feddisc/synthetic.hpp"

namespace {

feddisc::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto raw = path.empty() ? feddisc::ConfigMap{} : feddisc::ConfigMap::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw feddisc::UsageError("--set expects key=value, got '" + kv + "'");
    raw.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return feddisc::ExperimentConfig::from(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated attack/disturbance discrimination for grid SCADA data"};
  app.require_subcommand(1);

  std::string config_path, data, out, model, in, format = "csv";
  std::vector<std::string> inputs, overrides;
  std::size_t files = 15, rows = 400, dim = 32;
  std::uint64_t seed = 1;
  double missing = 0.0;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "flat key=value config file")->check(CLI::ExistingFile);
    c->add_option("--set", overrides, "override one config key (key=value), repeatable");
  };

  auto* prep = app.add_subcommand("prep", "CSV scenario files -> preprocessed dataset");
  prep->add_option("--input", inputs, "scenario CSV files")->required();
  prep->add_option("--out", out, "dataset file to write")->required();
  add_config(prep);

  auto* train = app.add_subcommand("train", "federated training");
  train->add_option("--data", data, "dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory")->required();
  add_config(train);

  auto* eval = app.add_subcommand("evaluate", "threshold on train split, report on test split");
  eval->add_option("--model", model, "model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "output directory")->required();
  add_config(eval);

  auto* cmp = app.add_subcommand("compare", "train with and without one-bit quantization");
  cmp->add_option("--data", data, "dataset file")->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", out, "output directory")->required();
  add_config(cmp);

  auto* rep = app.add_subcommand("report", "plot-ready tables from a run or compare directory");
  rep->add_option("--in", in, "run or compare directory")->required();
  rep->add_option("--format", format, "csv or jsonlines")->check(CLI::IsMember({"csv", "jsonlines"}));

  auto* synth = app.add_subcommand("synth", "write a synthetic scenario-file corpus");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--files", files, "number of files");
  synth->add_option("--rows", rows, "rows per file");
  synth->add_option("--dim", dim, "feature count");
  synth->add_option("--seed", seed, "seed");
  synth->add_option("--missing", missing, "fraction of cells written as NaN");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*prep) {
      const auto cfg = load_config(config_path, overrides);
      std::vector<feddisc::fs::path> paths(inputs.begin(), inputs.end());
      const auto m = feddisc::cmd_prep(paths, out, cfg);
      std::cout << "wrote " << out << ": n=" << m.n << " train=" << m.n_train << " test=" << m.n_test
                << " d=" << m.dim << " sources=" << m.sources.size() << '\n';
    } else if (*train) {
      const auto cfg = load_config(config_path, overrides);
      const auto r = feddisc::cmd_train(data, cfg, out);
      std::cout << "trained " << r.model.size() << " parameters over " << r.log.size()
                << " rounds, final loss " << r.final_loss << '\n';
    } else if (*eval) {
      const auto cfg = config_path.empty() && overrides.empty() ? feddisc::config_for_model(model)
                                                                : load_config(config_path, overrides);
      const auto e = feddisc::cmd_evaluate(model, data, out, cfg);
      std::cout << "tau=" << e.threshold.tau << " accuracy=" << e.report.accuracy
                << " precision=" << e.report.precision << " recall=" << e.report.recall
                << " f_score=" << e.report.f_score << '\n';
      if (e.threshold.degenerate) std::cerr << "warning: degenerate error curve\n";
    } else if (*cmp) {
      const auto cfg = load_config(config_path, overrides);
      const auto c = feddisc::cmd_compare(data, cfg, out);
      std::cout << c.to_text();
    } else if (*rep) {
      const auto fmt = format == "csv" ? feddisc::TableFormat::Csv : feddisc::TableFormat::JsonLines;
      for (const auto& p : feddisc::cmd_report(in, fmt)) std::cout << p.string() << '\n';
    } else if (*synth) {
      feddisc::SyntheticSpec spec;
      spec.dim = dim;
      spec.missing_rate = missing;
      spec.shifted_dims = std::min<std::size_t>(spec.shifted_dims, dim);
      for (const auto& p : feddisc::write_synthetic_corpus(out, files, rows, spec, seed))
        std::cout << p.string() << '\n';
    }
  } catch (const feddisc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
