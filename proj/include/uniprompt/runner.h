#pragma once

// Experiment orchestration: configuration, the SGD training loop over
// L_total = L_inst + alpha * L_m, evaluation, ablations and sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "uniprompt/alignment.h"
#include "uniprompt/encoders.h"
#include "uniprompt/metrics.h"
#include "uniprompt/prompts.h"
#include "uniprompt/synthbench.h"
#include "uniprompt/uncertainty.h"

namespace uniprompt {

struct ExperimentConfig {
  BenchmarkSpec benchmark = preset("default");
  // When set, datasets are read from this gen-data directory instead.
  std::string data_dir;
  TextEncoderSpec text_encoder;  // vocabulary is derived from the benchmark
  ImageEncoderSpec image_encoder;
  std::size_t m1 = 16;
  std::size_t m2 = 16;
  bool negate_foreign_source_privates = false;
  bool use_class_context = true;
  bool use_domain_context = true;
  double tau = 0.4;
  double lambda = 0.03;
  double temperature = 0.01;
  double margin = 8.0;
  double alpha = 0.1;
  MarginMode mode = MarginMode::kSeparating;
  double phi_scale = 1.0;
  double learning_rate = 5e-4;
  bool cosine_decay = false;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::size_t bank_refresh_epochs = 1;
  std::uint64_t seed = 0;
  std::size_t runs = 3;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& config);
void from_json(const nlohmann::json& j, ExperimentConfig& config);

// Hex FNV-1a of the canonical config JSON.
std::string config_fingerprint(const ExperimentConfig& config);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t epoch, std::size_t step, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           ": " + what),
        epoch_(epoch),
        step_(step) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

// Benchmark, frozen encoders and cached image embeddings for one config.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  const Benchmark& benchmark() const { return benchmark_; }
  const TextEncoder& text_encoder() const { return *text_encoder_; }
  const ImageEncoder& image_encoder() const { return *image_encoder_; }
  // Prompt configuration for run `run` (seed = config seed + run).
  PromptConfig prompt_config(std::size_t run = 0) const;

  std::size_t num_classes() const { return benchmark_.num_known; }
  std::size_t target_domain() const { return 0; }

  // All source samples stacked in source order.
  const Tensor& source_embeddings() const { return source_embeddings_; }
  const std::vector<std::size_t>& source_labels() const { return source_labels_; }
  const std::vector<std::size_t>& source_domains() const { return source_domains_; }
  const std::vector<std::size_t>& source_ids() const { return source_ids_; }
  const Tensor& target_embeddings() const { return target_embeddings_; }
  const std::vector<std::size_t>& target_ids() const { return target_ids_; }
  const Prototypes& prototypes() const { return prototypes_; }

  std::uint64_t encoder_digest() const;

 private:
  ExperimentConfig config_;
  Benchmark benchmark_;
  std::unique_ptr<TextEncoder> text_encoder_;
  std::unique_ptr<ImageEncoder> image_encoder_;
  Tensor source_embeddings_;
  std::vector<std::size_t> source_labels_, source_domains_, source_ids_;
  Tensor target_embeddings_;
  std::vector<std::size_t> target_ids_;
  Prototypes prototypes_;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_inst = 0.0;
  double l_m = 0.0;
  double l_total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l_inst = 0.0;  // means over the epoch's steps
  double l_m = 0.0;
  double l_total = 0.0;
  std::size_t pseudo_labels = 0;
  std::size_t low_confidence = 0;
  int bank_refresh_epoch = -1;
  EnergyStats source_energy;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainHooks {
  std::function<void(std::size_t epoch, const MemoryBank&)> on_bank_refresh;
  std::function<void(std::size_t epoch, const ParamSet&)> on_epoch_start;
};

struct TrainResult {
  ParamSet params;
  RunLog log;
  MemoryBank bank;
  PseudoLabelSet pseudo_labels;
};

TrainResult train(const Experiment& experiment, std::size_t run = 0, const TrainHooks& hooks = {});
TrainResult train(const ExperimentConfig& config, std::size_t run = 0);

struct ScoredTarget {
  std::size_t id = 0;
  double score = 0.0;
  int decision = kUnknownLabel;
  int truth = kUnknownLabel;
};

struct Evaluation {
  MetricsReport report;
  std::vector<ScoredTarget> targets;
  std::vector<double> source_scores;
};

Evaluation evaluate_detailed(const ParamSet& params, const Experiment& experiment,
                             std::size_t run = 0);
MetricsReport evaluate(const ParamSet& params, const Experiment& experiment, std::size_t run = 0);

// Metrics straight from a predictor's decisions, bypassing the model.
MetricsReport evaluate_predictions(const LabelMap& predictions,
                                   const std::vector<GroundTruth>& truth);

// Averages scalar metrics over runs.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

struct RunSummary {
  std::vector<MetricsReport> runs;
  MetricsReport mean;
};

// config.runs runs of train + evaluate with seeds seed, seed+1, ...
RunSummary train_and_evaluate(const ExperimentConfig& config);

struct TableRow {
  std::string label;
  ExperimentConfig config;
  RunSummary summary;
};

// Rows in order: Baseline, + new L_inst, + L_m (Full), w/o v_i^c, w/o (v_i^c & t_j^d).
std::vector<std::string> ablation_variants();
ExperimentConfig ablation_config(const ExperimentConfig& base, const std::string& variant);
std::vector<TableRow> ablate(const ExperimentConfig& base,
                             const std::vector<std::string>& variants = ablation_variants());

std::vector<std::string> sweepable_parameters();
ExperimentConfig with_parameter(const ExperimentConfig& base, const std::string& name,
                                double value);
std::vector<TableRow> sweep(const ExperimentConfig& base, const std::string& name,
                            const std::vector<double>& values);

// Variant workers; honours UNIPROMPT_THREADS, default 1.
std::size_t worker_threads();

void write_run_log_csv(const RunLog& log, const std::filesystem::path& dir);
void write_table_csv(const std::vector<TableRow>& rows, const std::string& key,
                     const std::filesystem::path& path);
void write_energy_csv(const Evaluation& evaluation, const Experiment& experiment,
                      const std::filesystem::path& path);

}  // namespace uniprompt
