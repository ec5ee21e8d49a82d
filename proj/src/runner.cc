#include "uniprompt/runner.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>

#include "uniprompt/random.h"

namespace uniprompt {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(std::numeric_limits<double>::max_digits10);
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  benchmark.validate();
  if (m1 == 0 && use_class_context) throw std::invalid_argument("config: m1 must be positive");
  if (m2 == 0 && use_domain_context) throw std::invalid_argument("config: m2 must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("config: tau must lie in (0, 1)");
  if (!(lambda >= 0.0)) throw std::invalid_argument("config: lambda must be non-negative");
  if (!(temperature > 0.0)) throw std::invalid_argument("config: temperature must be positive");
  if (!(margin > 0.0)) throw std::invalid_argument("config: margin must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("config: alpha must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
  if (bank_refresh_epochs == 0) {
    throw std::invalid_argument("config: bank_refresh_epochs must be positive");
  }
  if (runs == 0) throw std::invalid_argument("config: runs must be positive");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"benchmark", c.benchmark},
                     {"data_dir", c.data_dir},
                     {"text_encoder", c.text_encoder},
                     {"image_encoder", c.image_encoder},
                     {"m1", c.m1},
                     {"m2", c.m2},
                     {"negate_foreign_source_privates", c.negate_foreign_source_privates},
                     {"use_class_context", c.use_class_context},
                     {"use_domain_context", c.use_domain_context},
                     {"tau", c.tau},
                     {"lambda", c.lambda},
                     {"temperature", c.temperature},
                     {"margin", c.margin},
                     {"alpha", c.alpha},
                     {"margin_mode", to_string(c.mode)},
                     {"phi_scale", c.phi_scale},
                     {"learning_rate", c.learning_rate},
                     {"cosine_decay", c.cosine_decay},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"bank_refresh_epochs", c.bank_refresh_epochs},
                     {"seed", c.seed},
                     {"runs", c.runs}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("benchmark")) c.benchmark = j.at("benchmark").get<BenchmarkSpec>();
  c.data_dir = j.value("data_dir", c.data_dir);
  if (j.contains("text_encoder")) c.text_encoder = j.at("text_encoder").get<TextEncoderSpec>();
  if (j.contains("image_encoder")) c.image_encoder = j.at("image_encoder").get<ImageEncoderSpec>();
  c.m1 = j.value("m1", c.m1);
  c.m2 = j.value("m2", c.m2);
  c.negate_foreign_source_privates =
      j.value("negate_foreign_source_privates", c.negate_foreign_source_privates);
  c.use_class_context = j.value("use_class_context", c.use_class_context);
  c.use_domain_context = j.value("use_domain_context", c.use_domain_context);
  c.tau = j.value("tau", c.tau);
  c.lambda = j.value("lambda", c.lambda);
  c.temperature = j.value("temperature", c.temperature);
  c.margin = j.value("margin", c.margin);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("margin_mode")) {
    c.mode = margin_mode_from_string(j.at("margin_mode").get<std::string>());
  }
  c.phi_scale = j.value("phi_scale", c.phi_scale);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.bank_refresh_epochs = j.value("bank_refresh_epochs", c.bank_refresh_epochs);
  c.seed = j.value("seed", c.seed);
  c.runs = j.value("runs", c.runs);
}

std::string config_fingerprint(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(nlohmann::json(config).dump())));
  return buf;
}

// --- experiment --------------------------------------------------------------

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  config_.validate();
  benchmark_ = config_.data_dir.empty() ? generate(config_.benchmark)
                                        : read_benchmark(config_.data_dir);

  PromptConfig prompts = prompt_config(0);
  TextEncoderSpec text_spec = config_.text_encoder;
  text_spec.vocabulary = prompt_vocabulary(prompts);
  text_encoder_ = std::make_unique<TextEncoder>(text_spec);
  ImageEncoderSpec image_spec = config_.image_encoder;
  image_spec.in_dim = benchmark_.feature_dim();
  image_spec.out_dim = text_spec.out_dim;
  image_encoder_ = std::make_unique<ImageEncoder>(image_spec);

  std::vector<double> stacked;
  std::size_t rows = 0;
  for (std::size_t n = 0; n < benchmark_.sources.size(); ++n) {
    const Dataset& source = benchmark_.sources[n];
    const std::size_t domain = prompts.domain_index(source.domain_tag);
    for (const Sample& s : source.samples) {
      if (!s.label) throw std::invalid_argument("source sample " + std::to_string(s.id) +
                                                " has no label");
      stacked.insert(stacked.end(), s.features.begin(), s.features.end());
      source_labels_.push_back(*s.label);
      source_domains_.push_back(domain);
      source_ids_.push_back(s.id);
      ++rows;
    }
  }
  source_embeddings_ =
      image_encoder_->encode(Tensor({rows, benchmark_.feature_dim()}, std::move(stacked)));
  target_embeddings_ = image_encoder_->encode(benchmark_.target.features());
  for (const Sample& s : benchmark_.target.samples) target_ids_.push_back(s.id);
  prototypes_ = compute_prototypes(source_embeddings_, source_labels_, num_classes());
}

PromptConfig Experiment::prompt_config(std::size_t run) const {
  PromptConfig p;
  p.m1 = config_.m1;
  p.m2 = config_.m2;
  p.class_names = benchmark_.known_class_names();
  p.domain_tags = benchmark_.domain_tags();
  p.target_tag = benchmark_.target_tag();
  p.source_private_owner = benchmark_.source_private_owner;
  p.negate_foreign_source_privates = config_.negate_foreign_source_privates;
  p.use_class_context = config_.use_class_context;
  p.use_domain_context = config_.use_domain_context;
  p.seed = config_.seed + run;
  return p;
}

std::uint64_t Experiment::encoder_digest() const {
  auto buffers = text_encoder_->weight_buffers();
  auto image = image_encoder_->weight_buffers();
  buffers.insert(buffers.end(), image.begin(), image.end());
  return weights_digest(buffers);
}

// --- training ----------------------------------------------------------------

namespace {

enum class EntryKind { kSource, kPseudo, kLowConfidence };

struct Entry {
  EntryKind kind;
  std::size_t index;  // row in the source or target embedding matrix
  std::size_t label;  // pseudo label for kPseudo
};

Tensor gather(const Tensor& matrix, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), matrix.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = matrix.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

double learning_rate_at(const ExperimentConfig& c, std::size_t step, std::size_t total) {
  if (!c.cosine_decay || total == 0) return c.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return c.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace

TrainResult train(const Experiment& experiment, std::size_t run, const TrainHooks& hooks) {
  const ExperimentConfig& cfg = experiment.config();
  const PromptConfig prompts = experiment.prompt_config(run);
  const TextEncoder& encoder = experiment.text_encoder();
  const std::size_t C = experiment.num_classes();
  const std::size_t target_domain = prompts.target_index();
  const AlignmentOptions inst_opts{cfg.lambda, cfg.temperature};
  const AlignmentOptions plain_opts{0.0, cfg.temperature};
  const std::uint64_t digest_before = experiment.encoder_digest();

  const Tensor& src = experiment.source_embeddings();
  const Tensor& tgt = experiment.target_embeddings();
  const Tensor src_phi = feature_similarity(src, experiment.prototypes());
  const Tensor tgt_phi = feature_similarity(tgt, experiment.prototypes());

  TrainResult result;
  result.params = init_params(prompts, encoder.spec().token_dim);
  Rng shuffle_rng(derive_seed(cfg.seed + run, "shuffle"));

  // Every epoch sees the same number of batches only when pseudo labels are
  // stable; estimate the schedule length from the full pool.
  const std::size_t pool_max = src.rows() + tgt.rows();
  const std::size_t total_steps =
      cfg.epochs * ((pool_max + cfg.batch_size - 1) / cfg.batch_size);
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (hooks.on_epoch_start) hooks.on_epoch_start(epoch, result.params);
    const Tensor text = text_class_embeddings(result.params, prompts, encoder);
    if (!result.bank.refreshed() || epoch % cfg.bank_refresh_epochs == 0) {
      result.bank = memory_bank_from_embeddings(text, C, static_cast<int>(epoch));
      result.bank.check_invariants(1e-9);
      if (hooks.on_bank_refresh) hooks.on_bank_refresh(epoch, result.bank);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.bank_refresh_epoch = result.bank.refresh_epoch;
    ScoringContext ctx{&text, C, cfg.temperature, cfg.phi_scale};
    const auto src_scores =
        energy_scores(src, experiment.source_domains(), ctx, experiment.prototypes());
    record.source_energy = unknown_threshold(src_scores, cfg.mode);

    // Pseudo labels and the low-confidence pool from lambda = 0 probabilities.
    const std::vector<std::size_t> tgt_domains(tgt.rows(), target_domain);
    const Tensor tgt_probs =
        class_probabilities(text, tgt, tgt_domains, C, plain_opts, result.bank);
    std::vector<std::size_t> rows(tgt.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const PseudoLabelSet by_row = assign_pseudo_labels(tgt_probs, rows, cfg.tau);
    result.pseudo_labels.threshold = cfg.tau;
    result.pseudo_labels.entries.clear();

    std::vector<Entry> pool;
    for (std::size_t i = 0; i < src.rows(); ++i) {
      pool.push_back({EntryKind::kSource, i, experiment.source_labels()[i]});
    }
    for (const PseudoLabel& p : by_row.entries) {
      pool.push_back({EntryKind::kPseudo, p.sample_id, p.class_index});
      result.pseudo_labels.entries.push_back(
          {experiment.target_ids()[p.sample_id], p.class_index, p.confidence});
    }
    for (std::size_t i = 0; i < tgt.rows(); ++i) {
      auto row = tgt_probs.row_span(i);
      if (*std::max_element(row.begin(), row.end()) < cfg.tau) {
        pool.push_back({EntryKind::kLowConfidence, i, 0});
      }
    }
    record.pseudo_labels = by_row.entries.size();
    record.low_confidence = pool.size() - src.rows() - by_row.entries.size();
    std::shuffle(pool.begin(), pool.end(), shuffle_rng);

    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < pool.size(); begin += cfg.batch_size, ++steps) {
      const std::size_t end = std::min(pool.size(), begin + cfg.batch_size);
      std::vector<std::size_t> src_rows, src_labels, src_domains, tgt_rows, tgt_labels,
          low_rows, m_src_rows, m_src_domains;
      for (std::size_t k = begin; k < end; ++k) {
        const Entry& e = pool[k];
        switch (e.kind) {
          case EntryKind::kSource:
            src_rows.push_back(e.index);
            src_labels.push_back(e.label);
            src_domains.push_back(experiment.source_domains()[e.index]);
            break;
          case EntryKind::kPseudo:
            tgt_rows.push_back(e.index);
            tgt_labels.push_back(e.label);
            break;
          case EntryKind::kLowConfidence:
            low_rows.push_back(e.index);
            break;
        }
      }
      // Labeled rows: sources then pseudo-labeled targets.
      Tensor labeled = gather(src, src_rows);
      std::vector<std::size_t> labels = src_labels, domains = src_domains;
      if (!tgt_rows.empty()) {
        const Tensor t = gather(tgt, tgt_rows);
        std::vector<double> joined(labeled.values().begin(), labeled.values().end());
        joined.insert(joined.end(), t.values().begin(), t.values().end());
        labeled = Tensor({src_rows.size() + tgt_rows.size(), src.cols()}, std::move(joined));
        labels.insert(labels.end(), tgt_labels.begin(), tgt_labels.end());
        domains.insert(domains.end(), tgt_rows.size(), target_domain);
      }

      Graph graph;
      const ParamBindings bound = bind(graph, result.params);
      double l_inst_value = 0.0, l_m_value = 0.0, l_total_value = 0.0;
      try {
        const Var text_var = text_class_embeddings(graph, bound, prompts, encoder);
        Var total = graph.constant(Tensor::scalar(0.0));
        if (!labels.empty()) {
          const Var l_inst = instance_loss(graph, text_var, labeled, labels, domains, C,
                                           inst_opts, result.bank);
          l_inst_value = l_inst.value().item();
          total = add(total, l_inst);
        }
        std::optional<Var> s_src, s_tgt;
        if (!src_rows.empty()) {
          const Var logp = log_class_probabilities(graph, text_var, gather(src, src_rows),
                                                   src_domains, C, plain_opts, result.bank);
          s_src = energy_scores(graph, gather(src_phi, src_rows), exp(logp), cfg.phi_scale);
        }
        if (!low_rows.empty()) {
          const std::vector<std::size_t> low_domains(low_rows.size(), target_domain);
          const Var logp = log_class_probabilities(graph, text_var, gather(tgt, low_rows),
                                                   low_domains, C, plain_opts, result.bank);
          s_tgt = energy_scores(graph, gather(tgt_phi, low_rows), exp(logp), cfg.phi_scale);
        }
        if (s_src || s_tgt) {
          const Var l_m = margin_loss(graph, s_src ? &*s_src : nullptr,
                                      s_tgt ? &*s_tgt : nullptr, cfg.margin, cfg.mode);
          l_m_value = l_m.value().item();
          if (cfg.alpha > 0.0) total = add(total, scale(l_m, cfg.alpha));
        }
        l_total_value = total.value().item();
        if (!std::isfinite(l_total_value)) throw NonFiniteError("total loss");
        if (graph.requires_grad(total.id)) graph.backward(total);
      } catch (const NonFiniteError& e) {
        throw TrainingError(epoch, steps, std::string("non-finite value in ") + e.what());
      }

      const double lr = learning_rate_at(cfg, global_step++, total_steps);
      for (auto& [name, tensor] : result.params) {
        const Tensor* g = graph.grad(bound.at(name));
        if (!g) continue;
        if (!g->all_finite()) {
          throw TrainingError(epoch, steps, "non-finite gradient for " + name);
        }
        for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] -= lr * (*g)[i];
      }
      result.log.steps.push_back({epoch, steps, l_inst_value, l_m_value, l_total_value});
      record.l_inst += l_inst_value;
      record.l_m += l_m_value;
      record.l_total += l_total_value;
    }
    if (steps > 0) {
      record.l_inst /= static_cast<double>(steps);
      record.l_m /= static_cast<double>(steps);
      record.l_total /= static_cast<double>(steps);
    }
    result.log.epochs.push_back(record);
  }

  if (experiment.encoder_digest() != digest_before) {
    throw std::logic_error("frozen encoder weights changed during training");
  }
  return result;
}

TrainResult train(const ExperimentConfig& config, std::size_t run) {
  const Experiment experiment(config);
  return train(experiment, run);
}

// --- evaluation --------------------------------------------------------------

Evaluation evaluate_detailed(const ParamSet& params, const Experiment& experiment,
                             std::size_t run) {
  const ExperimentConfig& cfg = experiment.config();
  const PromptConfig prompts = experiment.prompt_config(run);
  const std::size_t C = experiment.num_classes();
  const Tensor text = text_class_embeddings(params, prompts, experiment.text_encoder());
  const ScoringContext ctx{&text, C, cfg.temperature, cfg.phi_scale};

  Evaluation out;
  out.source_scores = energy_scores(experiment.source_embeddings(), experiment.source_domains(),
                                    ctx, experiment.prototypes());
  const EnergyStats stats = unknown_threshold(out.source_scores, cfg.mode);
  const auto decisions = classify_targets(experiment.target_embeddings(), prompts.target_index(),
                                          ctx, experiment.prototypes(), stats);

  std::map<std::size_t, int> truth_by_id;
  for (const GroundTruth& g : experiment.benchmark().target_truth) {
    truth_by_id[g.id] = g.eval_label;
  }
  LabelMap predictions, truth;
  std::map<std::size_t, double> negated;
  std::map<std::size_t, bool> is_unknown;
  std::vector<double> all_scores, known_scores, unknown_scores;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const std::size_t id = experiment.target_ids()[i];
    auto it = truth_by_id.find(id);
    if (it == truth_by_id.end()) {
      throw std::invalid_argument("no ground truth for target sample " + std::to_string(id));
    }
    predictions[id] = decisions[i].label;
    truth[id] = it->second;
    negated[id] = -decisions[i].score;
    is_unknown[id] = it->second == kUnknownLabel;
    all_scores.push_back(decisions[i].score);
    (it->second == kUnknownLabel ? unknown_scores : known_scores).push_back(decisions[i].score);
    out.targets.push_back({id, decisions[i].score, decisions[i].label, it->second});
  }

  const AccuracyBreakdown acc = accuracy_decomposition(predictions, truth);
  MetricsReport& r = out.report;
  r.acc_known = acc.acc_known;
  r.acc_unknown = acc.acc_unknown;
  r.h_score = h_score(acc.acc_known, acc.acc_unknown);
  r.pooled_known_accuracy = acc.pooled_known;
  r.per_class_accuracy = acc.per_class;
  r.auc = roc_auc(negated, is_unknown);
  r.auc_orientation = "negated_energy";
  const double probs[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.energy.source = stats;
  r.energy.target_quantiles = quantiles(all_scores, probs);
  r.energy.source_mean = stats.mean;
  r.energy.target_known_mean = mean_of(known_scores);
  r.energy.target_unknown_mean = mean_of(unknown_scores);
  r.config_fingerprint = config_fingerprint(cfg);
  return out;
}

MetricsReport evaluate(const ParamSet& params, const Experiment& experiment, std::size_t run) {
  return evaluate_detailed(params, experiment, run).report;
}

MetricsReport evaluate_predictions(const LabelMap& predictions,
                                   const std::vector<GroundTruth>& truth) {
  LabelMap labels;
  for (const GroundTruth& g : truth) labels[g.id] = g.eval_label;
  const AccuracyBreakdown acc = accuracy_decomposition(predictions, labels);
  MetricsReport r;
  r.acc_known = acc.acc_known;
  r.acc_unknown = acc.acc_unknown;
  r.h_score = h_score(acc.acc_known, acc.acc_unknown);
  r.pooled_known_accuracy = acc.pooled_known;
  r.per_class_accuracy = acc.per_class;
  r.auc_orientation = "none";
  return r;
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
  MetricsReport m = reports.front();
  const double n = static_cast<double>(reports.size());
  auto avg = [&](auto field) {
    double s = 0.0;
    for (const auto& r : reports) s += field(r);
    return s / n;
  };
  m.acc_known = avg([](const MetricsReport& r) { return r.acc_known; });
  m.acc_unknown = avg([](const MetricsReport& r) { return r.acc_unknown; });
  m.h_score = avg([](const MetricsReport& r) { return r.h_score; });
  m.auc = avg([](const MetricsReport& r) { return r.auc; });
  m.pooled_known_accuracy = avg([](const MetricsReport& r) { return r.pooled_known_accuracy; });
  for (auto& [label, acc] : m.per_class_accuracy) {
    acc = avg([&](const MetricsReport& r) {
      auto it = r.per_class_accuracy.find(label);
      return it == r.per_class_accuracy.end() ? 0.0 : it->second;
    });
  }
  m.energy.source.mean = avg([](const MetricsReport& r) { return r.energy.source.mean; });
  m.energy.source.stddev = avg([](const MetricsReport& r) { return r.energy.source.stddev; });
  m.energy.source.delta = avg([](const MetricsReport& r) { return r.energy.source.delta; });
  m.energy.source_mean = avg([](const MetricsReport& r) { return r.energy.source_mean; });
  m.energy.target_known_mean =
      avg([](const MetricsReport& r) { return r.energy.target_known_mean; });
  m.energy.target_unknown_mean =
      avg([](const MetricsReport& r) { return r.energy.target_unknown_mean; });
  for (std::size_t q = 0; q < m.energy.target_quantiles.size(); ++q) {
    m.energy.target_quantiles[q] = avg([&](const MetricsReport& r) {
      return q < r.energy.target_quantiles.size() ? r.energy.target_quantiles[q] : 0.0;
    });
  }
  return m;
}

RunSummary train_and_evaluate(const ExperimentConfig& config) {
  const Experiment experiment(config);
  RunSummary summary;
  for (std::size_t run = 0; run < config.runs; ++run) {
    const TrainResult trained = train(experiment, run);
    summary.runs.push_back(evaluate(trained.params, experiment, run));
  }
  summary.mean = mean_report(summary.runs);
  return summary;
}

// --- ablations and sweeps ----------------------------------------------------

std::size_t worker_threads() {
  if (const char* env = std::getenv("UNIPROMPT_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

namespace {

void run_rows(std::vector<TableRow>& rows) {
  const std::size_t workers = std::min(worker_threads(), rows.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(rows.size());
  auto work = [&] {
    for (std::size_t i; (i = next++) < rows.size();) {
      try {
        rows[i].summary = train_and_evaluate(rows[i].config);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<std::string> ablation_variants() {
  return {"Baseline", "+ new L_inst", "+ L_m (Full)", "w/o v_i^c", "w/o (v_i^c & t_j^d)"};
}

ExperimentConfig ablation_config(const ExperimentConfig& base, const std::string& variant) {
  ExperimentConfig c = base;
  if (variant == "Baseline") {
    c.lambda = 0.0;
    c.alpha = 0.0;
  } else if (variant == "+ new L_inst") {
    c.alpha = 0.0;
  } else if (variant == "+ L_m (Full)") {
  } else if (variant == "w/o v_i^c") {
    c.use_class_context = false;
  } else if (variant == "w/o (v_i^c & t_j^d)") {
    c.use_class_context = false;
    c.use_domain_context = false;
  } else {
    throw std::invalid_argument("unknown ablation variant \"" + variant + "\"");
  }
  return c;
}

std::vector<TableRow> ablate(const ExperimentConfig& base,
                             const std::vector<std::string>& variants) {
  std::vector<TableRow> rows;
  for (const auto& v : variants) rows.push_back({v, ablation_config(base, v), {}});
  run_rows(rows);
  return rows;
}

std::vector<std::string> sweepable_parameters() {
  return {"lambda", "M_s", "tau", "alpha", "M1M2"};
}

ExperimentConfig with_parameter(const ExperimentConfig& base, const std::string& name,
                                double value) {
  ExperimentConfig c = base;
  if (name == "lambda") {
    c.lambda = value;
  } else if (name == "M_s") {
    c.margin = value;
  } else if (name == "tau") {
    c.tau = value;
  } else if (name == "alpha") {
    c.alpha = value;
  } else if (name == "M1M2") {
    if (value < 1.0 || value != std::floor(value)) {
      throw std::invalid_argument("M1M2 must be a positive integer");
    }
    c.m1 = c.m2 = static_cast<std::size_t>(value);
  } else {
    throw std::invalid_argument("unknown sweep parameter \"" + name + "\"");
  }
  c.validate();
  return c;
}

std::vector<TableRow> sweep(const ExperimentConfig& base, const std::string& name,
                            const std::vector<double>& values) {
  std::vector<TableRow> rows;
  for (double v : values) {
    nlohmann::json label = v;
    rows.push_back({label.dump(), with_parameter(base, name, v), {}});
  }
  run_rows(rows);
  return rows;
}

// --- outputs -----------------------------------------------------------------

void write_run_log_csv(const RunLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream steps = open_csv(dir / "steps.csv");
  steps << "epoch,step,l_inst,l_m,l_total\n";
  for (const StepRecord& s : log.steps) {
    steps << s.epoch << ',' << s.step << ',' << s.l_inst << ',' << s.l_m << ',' << s.l_total
          << '\n';
  }
  std::ofstream epochs = open_csv(dir / "epochs.csv");
  epochs << "epoch,l_inst,l_m,l_total,pseudo_labels,low_confidence,bank_refresh_epoch,"
            "source_energy_mean,source_energy_std,delta\n";
  for (const EpochRecord& e : log.epochs) {
    epochs << e.epoch << ',' << e.l_inst << ',' << e.l_m << ',' << e.l_total << ','
           << e.pseudo_labels << ',' << e.low_confidence << ',' << e.bank_refresh_epoch << ','
           << e.source_energy.mean << ',' << e.source_energy.stddev << ','
           << e.source_energy.delta << '\n';
  }
}

void write_table_csv(const std::vector<TableRow>& rows, const std::string& key,
                     const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << key << ",acc_known,acc_unknown,h_score,auc,runs\n";
  for (const TableRow& row : rows) {
    const std::string label =
        row.label.find(',') == std::string::npos ? row.label : '"' + row.label + '"';
    const MetricsReport& m = row.summary.mean;
    out << label << ',' << m.acc_known << ',' << m.acc_unknown << ',' << m.h_score << ','
        << m.auc << ',' << row.summary.runs.size() << '\n';
  }
}

void write_energy_csv(const Evaluation& evaluation, const Experiment& experiment,
                      const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "id,domain_tag,score,decision,truth\n";
  const auto& tags = experiment.benchmark().domain_tags();
  for (std::size_t i = 0; i < evaluation.source_scores.size(); ++i) {
    out << experiment.source_ids()[i] << ',' << tags[experiment.source_domains()[i]] << ','
        << evaluation.source_scores[i] << ",," << experiment.source_labels()[i] << '\n';
  }
  for (const ScoredTarget& t : evaluation.targets) {
    out << t.id << ',' << experiment.benchmark().target_tag() << ',' << t.score << ','
        << t.decision << ',' << t.truth << '\n';
  }
}

}  // namespace uniprompt
