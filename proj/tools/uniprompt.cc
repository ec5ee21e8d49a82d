// Command-line front end: gen-data, train, eval, ablate, sweep.
//
// Every subcommand prints one JSON document to stdout. Failures print
// {"error": {...}} and exit nonzero.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uniprompt/runner.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uniprompt;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> values;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad sweep value \"" + item + "\"");
    values.push_back(v);
  }
  if (values.empty()) throw std::invalid_argument("--values is empty");
  return values;
}

json table_json(const std::vector<TableRow>& rows, const std::string& key) {
  json out = json::array();
  for (const TableRow& row : rows) {
    json runs = json::array();
    for (const auto& r : row.summary.runs) runs.push_back(to_json(r));
    out.push_back({{key, row.label}, {"mean", to_json(row.summary.mean)}, {"runs", runs}});
  }
  return out;
}

int gen_data(const std::string& spec_path, const std::string& out_dir) {
  const BenchmarkSpec spec = read_json(spec_path).get<BenchmarkSpec>();
  const Benchmark benchmark = generate(spec);
  write_benchmark(benchmark, spec, out_dir);
  std::size_t sources = 0;
  for (const auto& s : benchmark.sources) sources += s.samples.size();
  std::cout << json{{"out", out_dir},
                    {"source_samples", sources},
                    {"target_samples", benchmark.target.samples.size()},
                    {"known_classes", benchmark.num_known},
                    {"commonness_beta", commonness_beta(spec)}}
                   .dump(2)
            << '\n';
  return 0;
}

int train_cmd(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig config = read_json(config_path).get<ExperimentConfig>();
  const Experiment experiment(config);
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_json(config, out / "config.json");

  std::vector<MetricsReport> reports;
  json runs = json::array();
  for (std::size_t run = 0; run < config.runs; ++run) {
    const fs::path dir = out / ("run" + std::to_string(run));
    fs::create_directories(dir);
    const TrainResult result = train(experiment, run);
    const Evaluation evaluation = evaluate_detailed(result.params, experiment, run);
    write_json(params_to_json(result.params), dir / "params.json");
    write_run_log_csv(result.log, dir);
    write_memory_bank_csv(result.bank, experiment.benchmark().domain_tags(), dir);
    write_pseudo_labels_csv(result.pseudo_labels, dir / "pseudo_labels.csv");
    write_energy_csv(evaluation, experiment, dir / "energy_scores.csv");
    std::vector<double> target_scores;
    for (const auto& t : evaluation.targets) target_scores.push_back(t.score);
    write_histogram_csv(score_histogram(evaluation.source_scores, 20),
                        dir / "source_energy_histogram.csv");
    write_histogram_csv(score_histogram(target_scores, 20), dir / "target_energy_histogram.csv");
    write_json(to_json(evaluation.report), dir / "metrics.json");
    reports.push_back(evaluation.report);
    runs.push_back(to_json(evaluation.report));
    if (run == 0) write_json(params_to_json(result.params), out / "params.json");
  }
  const json summary{{"runs", runs}, {"mean", to_json(mean_report(reports))}};
  write_json(summary, out / "metrics.json");
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int eval_cmd(const std::string& params_path, const std::string& config_path,
             const std::string& out_dir) {
  const ExperimentConfig config = read_json(config_path).get<ExperimentConfig>();
  const Experiment experiment(config);
  const ParamSet params = params_from_json(read_json(params_path));
  const Evaluation evaluation = evaluate_detailed(params, experiment);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json(to_json(evaluation.report), fs::path(out_dir) / "metrics.json");
    write_energy_csv(evaluation, experiment, fs::path(out_dir) / "energy_scores.csv");
  }
  std::cout << to_json(evaluation.report).dump(2) << '\n';
  return 0;
}

int ablate_cmd(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig config = read_json(config_path).get<ExperimentConfig>();
  const auto rows = ablate(config);
  const json table = table_json(rows, "variant");
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_table_csv(rows, "variant", fs::path(out_dir) / "ablation.csv");
    write_json(table, fs::path(out_dir) / "ablation.json");
  }
  std::cout << table.dump(2) << '\n';
  return 0;
}

int sweep_cmd(const std::string& config_path, const std::string& name, const std::string& list,
              const std::string& out_dir) {
  const auto names = sweepable_parameters();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown sweep parameter \"" + name + "\"; sweepable: " + known);
  }
  const ExperimentConfig config = read_json(config_path).get<ExperimentConfig>();
  const auto rows = sweep(config, name, parse_values(list));
  const json table = table_json(rows, name);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_table_csv(rows, name, fs::path(out_dir) / ("sweep_" + name + ".csv"));
    write_json(table, fs::path(out_dir) / ("sweep_" + name + ".json"));
  }
  std::cout << table.dump(2) << '\n';
  return 0;
}

int fail(const std::string& type, const std::string& message, int code) {
  std::cout << json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-based universal multi-source domain adaptation on synthetic data"};
  app.require_subcommand(1);

  std::string spec_path, config_path, params_path, out_dir, param_name, values;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic benchmark");
  gen->add_option("--spec", spec_path, "BenchmarkSpec JSON (may name a preset)")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train prompts for every configured run");
  tr->add_option("--config", config_path, "ExperimentConfig JSON")->required();
  tr->add_option("--out", out_dir, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate saved prompt parameters");
  ev->add_option("--params", params_path, "params.json from train")->required();
  ev->add_option("--config", config_path, "ExperimentConfig JSON")->required();
  ev->add_option("--out", out_dir, "Optional output directory");

  auto* ab = app.add_subcommand("ablate", "Run the ablation variants");
  ab->add_option("--config", config_path, "ExperimentConfig JSON")->required();
  ab->add_option("--out", out_dir, "Optional output directory");

  auto* sw = app.add_subcommand("sweep", "Sweep one hyperparameter");
  sw->add_option("--config", config_path, "ExperimentConfig JSON")->required();
  sw->add_option("--param", param_name, "lambda, M_s, tau, alpha or M1M2")->required();
  sw->add_option("--values", values, "Comma-separated values")->required();
  sw->add_option("--out", out_dir, "Optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*gen) return gen_data(spec_path, out_dir);
    if (*tr) return train_cmd(config_path, out_dir);
    if (*ev) return eval_cmd(params_path, config_path, out_dir);
    if (*ab) return ablate_cmd(config_path, out_dir);
    if (*sw) return sweep_cmd(config_path, param_name, values, out_dir);
  } catch (const TrainingError& e) {
    std::cout << json{{"error",
                       {{"type", "training"},
                        {"message", e.what()},
                        {"epoch", e.epoch()},
                        {"step", e.step()}}}}
                     .dump()
              << '\n';
    return 1;
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 1);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}
