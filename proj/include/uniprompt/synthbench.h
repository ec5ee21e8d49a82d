#pragma once

// Seeded synthetic multi-source benchmarks with universal label-set geometry.
//
// Global class indices are laid out as
//   [0, |C|)                         common classes
//   then each source's private block  source1, source2, ...
//   then the target-private block     (unknown at evaluation)
// so every known class index doubles as its index in C^S.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "uniprompt/tensor.h"

namespace uniprompt {

enum class Setting { kUniMDA, kOMDA };

struct DomainShift {
  double rotation = 0.0;     // radians, applied in consecutive coordinate planes
  double scale = 1.0;
  double translation = 0.0;  // magnitude along a seeded unit direction
};

struct BenchmarkSpec {
  std::size_t num_sources = 3;
  std::size_t common_classes = 10;
  std::vector<std::size_t> private_per_source = {2, 2, 2};
  std::size_t target_private = 5;
  std::size_t samples_per_class = 20;
  std::size_t feature_dim = 16;
  double class_separation = 10.0;
  // One per source in order, then the target. Empty means no shift anywhere.
  std::vector<DomainShift> shifts;
  double noise_std = 1.0;
  Setting setting = Setting::kUniMDA;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t source_private_total() const;
  std::size_t num_known() const { return common_classes + source_private_total(); }
  std::size_t num_classes() const { return num_known() + target_private; }
};

void to_json(nlohmann::json& j, const BenchmarkSpec& spec);
void from_json(const nlohmann::json& j, BenchmarkSpec& spec);

struct Sample {
  std::size_t id = 0;
  std::string domain_tag;
  std::vector<double> features;
  // Training-visible label; always empty for target samples.
  std::optional<std::size_t> label;
};

struct Dataset {
  std::string domain_tag;
  std::vector<Sample> samples;

  // [n x feature_dim].
  Tensor features() const;
};

struct GroundTruth {
  std::size_t id = 0;
  std::string domain_tag;
  std::size_t true_label = 0;
  int eval_label = -1;  // known class index, or -1 for unknown
};

struct Benchmark {
  std::vector<Dataset> sources;
  Dataset target;
  std::vector<GroundTruth> target_truth;
  std::vector<std::string> class_names;  // every global class
  std::size_t num_known = 0;
  std::map<std::size_t, std::string> source_private_owner;

  std::string target_tag() const { return target.domain_tag; }
  // {target, source1, ..., sourceN}.
  std::vector<std::string> domain_tags() const;
  std::vector<std::string> known_class_names() const;
  std::size_t feature_dim() const;
};

std::string source_tag(std::size_t n);  // "source<n+1>"
inline constexpr const char* kTargetTag = "target";

Benchmark generate(const BenchmarkSpec& spec);

// |C^S ∩ C^T| / |C^S ∪ C^T| for the label sets the spec induces.
double commonness_beta(const BenchmarkSpec& spec);

BenchmarkSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// CSV: header `id,domain_tag,label,feature_0..feature_{D-1}`; the label cell
// is empty for target samples.
void write_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);
// CSV: `id,domain_tag,true_label,eval_label` with eval_label -1 for unknown.
void write_ground_truth_csv(const std::vector<GroundTruth>& truth,
                            const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truth_csv(const std::filesystem::path& path);

// Layout used by `gen-data`: benchmark.json, source<n>.csv, target.csv,
// ground_truth.csv.
void write_benchmark(const Benchmark& benchmark, const BenchmarkSpec& spec,
                     const std::filesystem::path& dir);
Benchmark read_benchmark(const std::filesystem::path& dir);

}  // namespace uniprompt
