#include "uniprompt/synthbench.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "uniprompt/random.h"

namespace uniprompt {
namespace {

constexpr int kMaxPlacementAttempts = 10000;

std::string class_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class%02zu", index);
  return buf;
}

std::vector<double> unit_direction(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

std::vector<std::vector<double>> place_class_means(const BenchmarkSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> means;
  const double min_gap = 0.5 * spec.class_separation;
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxPlacementAttempts) {
        throw std::runtime_error("cannot place " + std::to_string(spec.num_classes()) +
                                 " class means with the requested separation");
      }
      std::vector<double> mu = unit_direction(spec.feature_dim, rng);
      for (double& x : mu) x *= spec.class_separation;
      bool ok = true;
      for (const auto& other : means) ok = ok && distance(mu, other) >= min_gap;
      if (ok) {
        means.push_back(std::move(mu));
        break;
      }
    }
  }
  return means;
}

struct Transform {
  DomainShift shift;
  std::vector<double> direction;

  std::vector<double> apply(const std::vector<double>& x) const {
    std::vector<double> y = x;
    const double c = std::cos(shift.rotation), s = std::sin(shift.rotation);
    for (std::size_t i = 0; i + 1 < y.size(); i += 2) {
      const double a = y[i], b = y[i + 1];
      y[i] = c * a - s * b;
      y[i + 1] = s * a + c * b;
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = shift.scale * y[i] + shift.translation * direction[i];
    }
    return y;
  }
};

// Labels, names and ownership implied by the spec, independent of sampling.
Benchmark skeleton(const BenchmarkSpec& spec) {
  Benchmark b;
  b.num_known = spec.num_known();
  for (std::size_t c = 0; c < spec.num_classes(); ++c) b.class_names.push_back(class_name(c));
  std::size_t next = spec.common_classes;
  for (std::size_t n = 0; n < spec.num_sources; ++n) {
    for (std::size_t k = 0; k < spec.private_per_source[n]; ++k) {
      b.source_private_owner[next++] = source_tag(n);
    }
  }
  b.target.domain_tag = kTargetTag;
  for (std::size_t n = 0; n < spec.num_sources; ++n) b.sources.push_back({source_tag(n), {}});
  return b;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(std::numeric_limits<double>::max_digits10);
  return out;
}

}  // namespace

std::string source_tag(std::size_t n) { return "source" + std::to_string(n + 1); }

void BenchmarkSpec::validate() const {
  if (num_sources == 0) throw std::invalid_argument("benchmark: need at least one source");
  if (common_classes < 2) throw std::invalid_argument("benchmark: need |C| >= 2");
  if (private_per_source.size() != num_sources) {
    throw std::invalid_argument("benchmark: private_per_source needs one count per source");
  }
  if (samples_per_class == 0 || feature_dim == 0) {
    throw std::invalid_argument("benchmark: samples_per_class and feature_dim must be positive");
  }
  if (!(class_separation > 0.0) || !(noise_std >= 0.0)) {
    throw std::invalid_argument("benchmark: bad separation or noise");
  }
  if (!shifts.empty() && shifts.size() != num_sources + 1) {
    throw std::invalid_argument("benchmark: shifts needs one entry per source plus the target");
  }
  const bool any_private = source_private_total() > 0;
  if (setting == Setting::kUniMDA && !any_private) {
    throw std::invalid_argument("benchmark: UniMDA needs at least one source-private class");
  }
  if (setting == Setting::kOMDA && any_private) {
    throw std::invalid_argument("benchmark: OMDA forbids source-private classes");
  }
}

std::size_t BenchmarkSpec::source_private_total() const {
  return std::accumulate(private_per_source.begin(), private_per_source.end(), std::size_t{0});
}

void to_json(nlohmann::json& j, const BenchmarkSpec& spec) {
  nlohmann::json shifts = nlohmann::json::array();
  for (const DomainShift& s : spec.shifts) {
    shifts.push_back({{"rotation", s.rotation}, {"scale", s.scale}, {"translation", s.translation}});
  }
  j = nlohmann::json{{"num_sources", spec.num_sources},
                     {"common_classes", spec.common_classes},
                     {"private_per_source", spec.private_per_source},
                     {"target_private", spec.target_private},
                     {"samples_per_class", spec.samples_per_class},
                     {"feature_dim", spec.feature_dim},
                     {"class_separation", spec.class_separation},
                     {"shifts", shifts},
                     {"noise_std", spec.noise_std},
                     {"setting", spec.setting == Setting::kUniMDA ? "UniMDA" : "OMDA"},
                     {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, BenchmarkSpec& spec) {
  spec = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : BenchmarkSpec{};
  spec.num_sources = j.value("num_sources", spec.num_sources);
  spec.common_classes = j.value("common_classes", spec.common_classes);
  spec.private_per_source = j.value("private_per_source", spec.private_per_source);
  spec.target_private = j.value("target_private", spec.target_private);
  spec.samples_per_class = j.value("samples_per_class", spec.samples_per_class);
  spec.feature_dim = j.value("feature_dim", spec.feature_dim);
  spec.class_separation = j.value("class_separation", spec.class_separation);
  spec.noise_std = j.value("noise_std", spec.noise_std);
  spec.seed = j.value("seed", spec.seed);
  if (j.contains("shifts")) {
    spec.shifts.clear();
    for (const auto& s : j.at("shifts")) {
      spec.shifts.push_back({s.value("rotation", 0.0), s.value("scale", 1.0),
                             s.value("translation", 0.0)});
    }
  }
  if (j.contains("setting")) {
    const std::string setting = j.at("setting").get<std::string>();
    if (setting == "UniMDA") {
      spec.setting = Setting::kUniMDA;
    } else if (setting == "OMDA") {
      spec.setting = Setting::kOMDA;
    } else {
      throw std::invalid_argument("benchmark: unknown setting \"" + setting + "\"");
    }
  }
}

Tensor Dataset::features() const {
  if (samples.empty()) throw std::invalid_argument("dataset " + domain_tag + " is empty");
  const std::size_t dim = samples.front().features.size();
  Tensor out = Tensor::matrix(samples.size(), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != dim) throw ShapeError("dataset", "ragged feature rows");
    std::copy(samples[i].features.begin(), samples[i].features.end(), out.row_span(i).begin());
  }
  return out;
}

std::vector<std::string> Benchmark::domain_tags() const {
  std::vector<std::string> tags = {target.domain_tag};
  for (const Dataset& s : sources) tags.push_back(s.domain_tag);
  return tags;
}

std::vector<std::string> Benchmark::known_class_names() const {
  return {class_names.begin(), class_names.begin() + static_cast<std::ptrdiff_t>(num_known)};
}

std::size_t Benchmark::feature_dim() const {
  for (const Dataset& s : sources) {
    if (!s.samples.empty()) return s.samples.front().features.size();
  }
  return target.samples.empty() ? 0 : target.samples.front().features.size();
}

Benchmark generate(const BenchmarkSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "benchmark"));
  const auto means = place_class_means(spec, rng);

  std::vector<Transform> transforms;
  for (std::size_t n = 0; n <= spec.num_sources; ++n) {
    Transform t;
    if (!spec.shifts.empty()) t.shift = spec.shifts[n];
    t.direction = unit_direction(spec.feature_dim, rng);
    transforms.push_back(std::move(t));
  }

  Benchmark b = skeleton(spec);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t next_id = 0;
  auto draw = [&](const Transform& t, std::size_t label) {
    std::vector<double> x = t.apply(means[label]);
    for (double& v : x) v += spec.noise_std * noise(rng);
    return x;
  };

  std::size_t private_start = spec.common_classes;
  for (std::size_t n = 0; n < spec.num_sources; ++n) {
    std::vector<std::size_t> labels(spec.common_classes);
    std::iota(labels.begin(), labels.end(), std::size_t{0});
    for (std::size_t k = 0; k < spec.private_per_source[n]; ++k) {
      labels.push_back(private_start + k);
    }
    private_start += spec.private_per_source[n];
    for (std::size_t label : labels) {
      for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
        b.sources[n].samples.push_back({next_id++, source_tag(n), draw(transforms[n], label), label});
      }
    }
  }

  std::vector<std::size_t> target_labels(spec.common_classes);
  std::iota(target_labels.begin(), target_labels.end(), std::size_t{0});
  for (std::size_t k = 0; k < spec.target_private; ++k) target_labels.push_back(spec.num_known() + k);
  for (std::size_t label : target_labels) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t id = next_id++;
      b.target.samples.push_back({id, kTargetTag, draw(transforms.back(), label), std::nullopt});
      const int eval = label < spec.num_known() ? static_cast<int>(label) : -1;
      b.target_truth.push_back({id, kTargetTag, label, eval});
    }
  }
  return b;
}

double commonness_beta(const BenchmarkSpec& spec) {
  spec.validate();
  // C^S = C + source privates, C^T = C + target privates; they share exactly C.
  const double common = static_cast<double>(spec.common_classes);
  const double uni = common + static_cast<double>(spec.source_private_total()) +
                     static_cast<double>(spec.target_private);
  return common / uni;
}

BenchmarkSpec preset(const std::string& name) {
  BenchmarkSpec spec;
  spec.seed = 0;
  // Moderate shift: mild per-source rotation/translation, stronger on the target.
  auto moderate_shift = [](std::size_t sources) {
    std::vector<DomainShift> shifts;
    for (std::size_t n = 0; n < sources; ++n) {
      shifts.push_back({0.1 * static_cast<double>(n + 1), 1.0, 0.5});
    }
    shifts.push_back({0.25, 0.9, 1.0});
    return shifts;
  };
  if (name == "default") {
    spec.num_sources = 3;
    spec.common_classes = 10;
    spec.private_per_source = {2, 2, 2};
    spec.target_private = 5;
  } else if (name == "office31-uni") {
    // 10 common, 10 unknown, 5 + rest private: kept at full size.
    spec.num_sources = 2;
    spec.common_classes = 10;
    spec.private_per_source = {5, 5};
    spec.target_private = 10;
  } else if (name == "office31-omda") {
    // 20 known / 11 unknown, halved.
    spec.num_sources = 2;
    spec.common_classes = 10;
    spec.private_per_source = {0, 0};
    spec.target_private = 5;
    spec.setting = Setting::kOMDA;
  } else if (name == "officehome-uni") {
    // 10 common, 2 private per source, 50 unknown scaled by 1/5.
    spec.num_sources = 3;
    spec.common_classes = 10;
    spec.private_per_source = {2, 2, 2};
    spec.target_private = 10;
  } else if (name == "officehome-omda") {
    // 45 known / 20 unknown scaled by 1/5.
    spec.num_sources = 3;
    spec.common_classes = 9;
    spec.private_per_source = {0, 0, 0};
    spec.target_private = 4;
    spec.setting = Setting::kOMDA;
  } else if (name == "domainnet-uni") {
    // 100 common, 50 + 50 private, 145 unknown scaled by 1/10.
    spec.num_sources = 2;
    spec.common_classes = 10;
    spec.private_per_source = {5, 5};
    spec.target_private = 15;
  } else if (name == "domainnet-omda") {
    // 100 known / 245 unknown scaled by 1/10.
    spec.num_sources = 3;
    spec.common_classes = 10;
    spec.private_per_source = {0, 0, 0};
    spec.target_private = 25;
    spec.setting = Setting::kOMDA;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset \"" + name + "\"; available: " + known);
  }
  spec.shifts = moderate_shift(spec.num_sources);
  return spec;
}

std::vector<std::string> preset_names() {
  return {"default",         "office31-uni",  "office31-omda", "officehome-uni",
          "officehome-omda", "domainnet-uni", "domainnet-omda"};
}

void write_dataset_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  const std::size_t dim = dataset.samples.empty() ? 0 : dataset.samples.front().features.size();
  out << "id,domain_tag,label";
  for (std::size_t k = 0; k < dim; ++k) out << ",feature_" << k;
  out << '\n';
  for (const Sample& s : dataset.samples) {
    out << s.id << ',' << s.domain_tag << ',';
    if (s.label) out << *s.label;
    for (double v : s.features) out << ',' << v;
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  const std::size_t columns = split_csv(line).size();
  if (columns < 4) throw std::runtime_error(path.string() + ": no feature columns");
  Dataset ds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != columns) {
      throw std::runtime_error(path.string() + ": row has " + std::to_string(cells.size()) +
                               " cells, header has " + std::to_string(columns));
    }
    Sample s;
    s.id = std::stoull(cells[0]);
    s.domain_tag = cells[1];
    if (!cells[2].empty()) s.label = std::stoull(cells[2]);
    for (std::size_t k = 3; k < cells.size(); ++k) s.features.push_back(std::stod(cells[k]));
    if (ds.domain_tag.empty()) ds.domain_tag = s.domain_tag;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_ground_truth_csv(const std::vector<GroundTruth>& truth,
                            const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "id,domain_tag,true_label,eval_label\n";
  for (const GroundTruth& g : truth) {
    out << g.id << ',' << g.domain_tag << ',' << g.true_label << ',' << g.eval_label << '\n';
  }
}

std::vector<GroundTruth> read_ground_truth_csv(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  std::getline(in, line);
  std::vector<GroundTruth> truth;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw std::runtime_error(path.string() + ": malformed row");
    truth.push_back({std::stoull(cells[0]), cells[1], std::stoull(cells[2]), std::stoi(cells[3])});
  }
  return truth;
}

void write_benchmark(const Benchmark& benchmark, const BenchmarkSpec& spec,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out = open_output(dir / "benchmark.json");
    out << nlohmann::json(spec).dump(2) << '\n';
  }
  for (const Dataset& s : benchmark.sources) write_dataset_csv(s, dir / (s.domain_tag + ".csv"));
  write_dataset_csv(benchmark.target, dir / "target.csv");
  write_ground_truth_csv(benchmark.target_truth, dir / "ground_truth.csv");
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
  std::ifstream in = open_input(dir / "benchmark.json");
  const BenchmarkSpec spec = nlohmann::json::parse(in).get<BenchmarkSpec>();
  spec.validate();
  Benchmark b = skeleton(spec);
  for (Dataset& s : b.sources) s = read_dataset_csv(dir / (s.domain_tag + ".csv"));
  b.target = read_dataset_csv(dir / "target.csv");
  b.target.domain_tag = kTargetTag;
  b.target_truth = read_ground_truth_csv(dir / "ground_truth.csv");
  for (const Dataset& s : b.sources) {
    for (const Sample& x : s.samples) {
      if (!x.label || *x.label >= b.num_known) {
        throw std::runtime_error("source sample " + std::to_string(x.id) +
                                 " lacks a known-class label");
      }
    }
  }
  return b;
}

}  // namespace uniprompt
