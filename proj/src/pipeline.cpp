#include "mmd/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mmd/survival.hpp"

namespace mmd::pipeline {

using fusion::FusionStrategy;

std::string_view name(Regime r) { return r == Regime::Complete ? "C" : "C+M"; }

Regime parse_regime(std::string_view s) {
  if (s == "C" || s == "c" || s == "complete") return Regime::Complete;
  if (s == "C+M" || s == "c+m" || s == "all" || s == "CM") return Regime::All;
  throw UsageError("unknown data regime '" + std::string(s) + "' (expected C or C+M)");
}

std::string_view name(TrainingMode m) {
  switch (m) {
    case TrainingMode::TwoStage: return "two-stage";
    case TrainingMode::EndToEndScratch: return "e2e-scratch";
    case TrainingMode::EndToEndFinetune: return "e2e-finetune";
  }
  return "?";
}

TrainingMode parse_mode(std::string_view s) {
  for (const auto m : {TrainingMode::TwoStage, TrainingMode::EndToEndScratch,
                       TrainingMode::EndToEndFinetune}) {
    if (s == name(m)) return m;
  }
  throw UsageError("unknown training mode '" + std::string(s) + "'");
}

std::string ExperimentCell::label() const {
  std::string s(fusion::name(strategy));
  s += " S1=" + std::string(name(stage1)) + " S2=" + std::string(name(stage2));
  if (dropout) s += " +dropout";
  if (recon) s += " +recon";
  if (mode != TrainingMode::TwoStage) s += " [" + std::string(name(mode)) + "]";
  return s;
}

TrainConfig PipelineConfig::stage1_config() const {
  TrainConfig c = unimodal;
  c.seed = Rng::derive(seed, 1).bits();
  return c;
}

TrainConfig PipelineConfig::fusion_config() const {
  TrainConfig c = fusion;
  c.seed = Rng::derive(seed, 2).bits();
  return c;
}

fusion::FusionConfig PipelineConfig::fusion_architecture(const ExperimentCell& cell) const {
  fusion::FusionConfig a = architecture;
  a.strategy = cell.strategy;
  a.reconstruction = cell.recon;
  a.lambda = lambda;
  return a;
}

Cohort regime_data(const Cohort& cohort, Regime regime) {
  return regime == Regime::Complete ? complete_only(cohort) : cohort;
}

// ---- stage 1 --------------------------------------------------------------

unimodal::EncoderSet train_stage1(const Cohort& train, Regime regime, const PipelineConfig& config,
                                  PerModality<TrainTrace>* traces) {
  const Cohort data = regime_data(train, regime);
  const TrainConfig tc = config.stage1_config();
  PerModality<std::optional<unimodal::UnimodalEncoder>> encoders;
  for (const auto m : kAllModalities) {
    const bool any = std::any_of(data.records().begin(), data.records().end(),
                                 [&](const auto& r) { return r.has(m); });
    if (!any) continue;
    TrainTrace trace;
    encoders[index(m)] = unimodal::train_unimodal(data, m, tc, &trace, config.encoder);
    if (traces) (*traces)[index(m)] = std::move(trace);
  }
  return unimodal::EncoderSet(std::move(encoders));
}

// ---- stage 2 --------------------------------------------------------------

namespace {

std::optional<double> validation_cindex(const fusion::FusionModel& model,
                                        const unimodal::EmbeddingTable& table,
                                        std::span<const std::size_t> positions) {
  if (positions.empty()) return std::nullopt;
  std::vector<double> risk, times;
  std::vector<int> events;
  for (const auto p : positions) {
    const auto& r = table.rows[p];
    const auto fr = fusion::fuse(model, r.features, r.availability());
    risk.push_back(fusion::predict_hazard(model, fr.h));
    times.push_back(r.time);
    events.push_back(r.event ? 1 : 0);
  }
  if (survival::comparable_pairs(times, events) == 0) return std::nullopt;
  return survival::concordance_index(risk, times, events);
}

void require_events(std::span<const PatientRecord> rows, std::string_view what) {
  if (rows.empty()) throw DataError(std::string(what) + ": no training records");
  if (std::none_of(rows.begin(), rows.end(), [](const auto& r) { return r.event; })) {
    throw DataError(std::string(what) + ": zero events in training data");
  }
}

}  // namespace

fusion::FusionModel train_fusion(const unimodal::EmbeddingTable& table,
                                 const fusion::FusionConfig& architecture, const TrainConfig& config,
                                 const fusion::DropoutPolicy& dropout, TrainTrace* trace) {
  config.validate();
  dropout.validate();
  require_events(table.rows, "fusion stage");
  if (table.dim != architecture.embedding_dim) {
    throw UsageError("fusion stage: embedding table dim does not match architecture");
  }
  const std::uint64_t seed = config.seed;
  auto model = fusion::FusionModel::create(architecture, Rng::derive(seed, 3).bits());
  auto [train_pos, val_pos] = holdout(table.size(), config.validation_fraction, seed);

  auto nets = model.nets();
  OptimizerGroup opt(nets, config.optimizer, config.learning_rate);
  auto grads = fusion::FusionGrads::zeros_like(model);
  fusion::FusionModel best = model;

  TrainingHooks hooks;
  hooks.step = [&](std::span<const std::size_t> batch, Rng& rng) -> std::optional<double> {
    std::vector<fusion::FusionSample> samples;
    samples.reserve(batch.size());
    bool any_event = false;
    for (const auto p : batch) {
      const auto& r = table.rows[p];
      fusion::FusionSample s;
      s.embeddings = &r.features;
      s.available = r.availability();
      s.train_mask = fusion::modality_dropout(s.available, dropout, rng);
      s.time = r.time;
      s.event = r.event ? 1 : 0;
      any_event = any_event || r.event;
      samples.push_back(s);
    }
    if (!any_event) return std::nullopt;
    grads.set_zero();
    const auto loss = fusion::batch_loss(model, samples, &grads);
    const auto gs = std::as_const(grads).sets();
    opt.step(nets, gs);
    return loss.total;
  };
  hooks.validate = [&] { return validation_cindex(model, table, val_pos); };
  hooks.snapshot = [&] { best = model; };
  hooks.restore = [&] {
    model = best;
    nets = model.nets();
  };

  auto t = run_training(train_pos, config, hooks);
  if (trace) *trace = std::move(t);
  return model;
}

TrainedModel train_two_stage(const Cohort& train, const PipelineConfig& config,
                             const ExperimentCell& cell, const unimodal::EncoderSet* stage1) {
  TrainedModel out;
  if (stage1) {
    out.encoders = *stage1;
  } else {
    out.encoders = train_stage1(train, cell.stage1, config, &out.stage1_traces);
  }
  const Cohort data = regime_data(train, cell.stage2);
  const auto table = unimodal::export_embeddings(out.encoders, data);
  const fusion::DropoutPolicy dropout{config.dropout_rate, cell.dropout};
  out.fusion = train_fusion(table, config.fusion_architecture(cell), config.fusion_config(), dropout,
                            &out.fusion_trace);
  return out;
}

TrainedModel train_end_to_end(const Cohort& train, const PipelineConfig& config,
                              const ExperimentCell& cell, const unimodal::EncoderSet* pretrained) {
  const TrainConfig tc = config.fusion_config();
  tc.validate();
  if (cell.mode == TrainingMode::EndToEndFinetune && !pretrained) {
    throw UsageError("end-to-end finetune needs a completed stage-1 checkpoint");
  }
  if (pretrained && pretrained->is_passthrough()) {
    throw UsageError("end-to-end training needs raw features, not precomputed embeddings");
  }
  const Cohort data = regime_data(train, cell.stage2);
  require_events(data.records(), "end-to-end");

  TrainedModel out;
  const std::uint64_t seed = tc.seed;
  PerModality<std::optional<unimodal::UnimodalEncoder>> encs;
  for (const auto m : kAllModalities) {
    const bool any = std::any_of(data.records().begin(), data.records().end(),
                                 [&](const auto& r) { return r.has(m); });
    if (!any) continue;
    if (cell.mode == TrainingMode::EndToEndFinetune) {
      if (!(*pretrained)[m]) {
        throw UsageError("stage-1 checkpoint lacks an encoder for " + std::string(name(m)));
      }
      encs[index(m)] = *(*pretrained)[m];
    } else {
      encs[index(m)] = unimodal::init_encoder(m, data.schema(), config.encoder,
                                              Rng::derive(seed, 40 + index(m)).bits());
    }
  }
  out.encoders = unimodal::EncoderSet(std::move(encs));
  out.fusion = fusion::FusionModel::create(config.fusion_architecture(cell), Rng::derive(seed, 3).bits());

  auto collect_nets = [&] {
    std::vector<nn::DenseNet*> nets;
    for (const auto m : kAllModalities) {
      if (out.encoders[m]) nets.push_back(&out.encoders[m]->encoder);
    }
    for (auto* n : out.fusion.nets()) nets.push_back(n);
    return nets;
  };
  auto nets = collect_nets();
  OptimizerGroup opt(nets, tc.optimizer, tc.learning_rate);
  PerModality<std::optional<nn::GradientSet>> enc_grads;
  for (const auto m : kAllModalities) {
    if (out.encoders[m]) enc_grads[index(m)] = nn::GradientSet(out.encoders[m]->encoder);
  }
  auto fgrads = fusion::FusionGrads::zeros_like(out.fusion);
  const fusion::DropoutPolicy dropout{config.dropout_rate, cell.dropout};
  auto [train_pos, val_pos] = holdout(data.size(), tc.validation_fraction, seed);
  TrainedModel best_snapshot;

  TrainingHooks hooks;
  hooks.step = [&](std::span<const std::size_t> batch, Rng& rng) -> std::optional<double> {
    const std::size_t n = batch.size();
    if (std::none_of(batch.begin(), batch.end(), [&](auto p) { return data[p].event; })) {
      return std::nullopt;
    }
    std::vector<fusion::Embeddings> emb(n);
    std::vector<PerModality<std::optional<nn::Tape>>> tapes(n);
    std::vector<fusion::FusionSample> samples(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& r = data[batch[k]];
      for (const auto m : kAllModalities) {
        if (!r.has(m)) continue;
        auto fr = nn::forward(out.encoders[m]->encoder, r.feature(m));
        emb[k][index(m)] = std::move(fr.output);
        tapes[k][index(m)] = std::move(fr.tape);
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      const auto& r = data[batch[k]];
      samples[k].embeddings = &emb[k];
      samples[k].available = r.availability();
      samples[k].train_mask = fusion::modality_dropout(samples[k].available, dropout, rng);
      samples[k].time = r.time;
      samples[k].event = r.event ? 1 : 0;
    }
    fgrads.set_zero();
    for (auto& g : enc_grads) {
      if (g) g->set_zero();
    }
    const auto loss = fusion::batch_loss(out.fusion, samples, &fgrads, true);
    for (std::size_t k = 0; k < n; ++k) {
      for (const auto m : kAllModalities) {
        const auto& dx = loss.embedding_grads[k][index(m)];
        if (!dx) continue;
        nn::backward_accumulate(out.encoders[m]->encoder, *tapes[k][index(m)], *dx,
                                *enc_grads[index(m)]);
      }
    }
    std::vector<const nn::GradientSet*> gs;
    for (const auto& g : enc_grads) {
      if (g) gs.push_back(&*g);
    }
    for (const auto* g : std::as_const(fgrads).sets()) gs.push_back(g);
    opt.step(nets, gs);
    return loss.total;
  };
  hooks.validate = [&]() -> std::optional<double> {
    if (val_pos.empty()) return std::nullopt;
    std::vector<double> risk, times;
    std::vector<int> events;
    for (const auto p : val_pos) {
      const auto& r = data[p];
      const auto e = out.encoders.embed(r);
      risk.push_back(fusion::predict_hazard(out.fusion, fusion::fuse(out.fusion, e, r.availability()).h));
      times.push_back(r.time);
      events.push_back(r.event ? 1 : 0);
    }
    if (survival::comparable_pairs(times, events) == 0) return std::nullopt;
    return survival::concordance_index(risk, times, events);
  };
  hooks.snapshot = [&] {
    best_snapshot.encoders = out.encoders;
    best_snapshot.fusion = out.fusion;
  };
  hooks.restore = [&] {
    out.encoders = best_snapshot.encoders;
    out.fusion = best_snapshot.fusion;
    nets = collect_nets();
  };
  out.fusion_trace = run_training(train_pos, tc, hooks);
  return out;
}

TrainedModel train_cell(const Cohort& train, const PipelineConfig& config, const ExperimentCell& cell,
                        const unimodal::EncoderSet* stage1) {
  switch (cell.mode) {
    case TrainingMode::TwoStage: return train_two_stage(train, config, cell, stage1);
    case TrainingMode::EndToEndScratch: return train_end_to_end(train, config, cell, nullptr);
    case TrainingMode::EndToEndFinetune: {
      if (stage1) return train_end_to_end(train, config, cell, stage1);
      const auto enc = train_stage1(train, cell.stage1, config);
      return train_end_to_end(train, config, cell, &enc);
    }
  }
  throw UsageError("unknown training mode");
}

// ---- evaluation -----------------------------------------------------------

std::vector<double> predict_risks(const TrainedModel& model, const Cohort& cohort) {
  std::vector<double> risks;
  risks.reserve(cohort.size());
  for (const auto& r : cohort.records()) {
    const auto e = model.encoders.embed(r);
    const auto fr = fusion::fuse(model.fusion, e, r.availability());
    risks.push_back(fusion::predict_hazard(model.fusion, fr.h));
  }
  return risks;
}

Evaluation evaluate_risks(std::span<const double> risks, std::span<const double> times,
                          std::span<const int> events, std::size_t bootstrap, std::uint64_t seed) {
  if (survival::comparable_pairs(times, events) == 0) {
    throw NumericalError("evaluation: zero comparable pairs");
  }
  Evaluation ev;
  ev.n_test = risks.size();
  ev.cindex = survival::concordance_index(risks, times, events);
  if (bootstrap == 0) return ev;

  Rng rng = Rng::derive(seed, 0xB007);
  const std::size_t n = risks.size();
  std::vector<double> r(n), t(n), samples;
  std::vector<int> e(n);
  samples.reserve(bootstrap);
  constexpr std::size_t kMaxAttempts = 100;
  for (std::size_t b = 0; b < bootstrap; ++b) {
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = rng.below(n);
        r[k] = risks[j];
        t[k] = times[j];
        e[k] = events[j];
      }
      if (survival::comparable_pairs(t, e) > 0) {
        samples.push_back(survival::concordance_index(r, t, e));
        break;
      }
    }
  }
  if (samples.size() < 2) throw NumericalError("bootstrap: too few resamples with comparable pairs");
  double mean = 0.0;
  for (const double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const double s : samples) var += (s - mean) * (s - mean);
  ev.std = std::sqrt(var / static_cast<double>(samples.size() - 1));
  return ev;
}

Evaluation evaluate(const TrainedModel& model, const Cohort& test, const MissingnessScenario& scenario,
                    std::size_t bootstrap, std::uint64_t seed) {
  const auto sr = apply_scenario(test, scenario);
  const auto risks = predict_risks(model, sr.cohort);
  const auto times = sr.cohort.times();
  const auto events = sr.cohort.events();
  auto ev = evaluate_risks(risks, times, events, bootstrap, seed);
  ev.removed = sr.removed;
  return ev;
}

// ---- grid -----------------------------------------------------------------

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

const ReportRow* AblationReport::find(const ExperimentCell& cell, std::string_view scenario) const {
  for (const auto& r : rows) {
    if (r.cell == cell && r.scenario == scenario) return &r;
  }
  return nullptr;
}

AblationReport run_ablation_grid(const Cohort& train, const Cohort& test,
                                 std::span<const ExperimentCell> cells,
                                 std::span<const MissingnessScenario> scenarios,
                                 const PipelineConfig& config) {
  AblationReport report;
  report.config = config;
  for (const auto& s : scenarios) report.scenarios.push_back(s.name);
  for (const auto& c : cells) {
    if (std::find(report.cells.begin(), report.cells.end(), c) != report.cells.end()) {
      report.warnings.push_back("duplicate cell removed: " + c.label());
      continue;
    }
    report.cells.push_back(c);
  }

  // Stage-1 encoders, one set per stage-1 regime that any cell needs.
  std::vector<Regime> regimes;
  for (const auto& c : report.cells) {
    const bool needs = c.mode == TrainingMode::TwoStage || c.mode == TrainingMode::EndToEndFinetune;
    if (needs && std::find(regimes.begin(), regimes.end(), c.stage1) == regimes.end()) {
      regimes.push_back(c.stage1);
    }
  }
  std::vector<std::optional<unimodal::EncoderSet>> stage1(regimes.size());
  std::vector<std::string> stage1_error(regimes.size());
  parallel_for(regimes.size(), config.workers, [&](std::size_t k) {
    try {
      stage1[k] = train_stage1(train, regimes[k], config);
    } catch (const Error& e) {
      stage1_error[k] = e.what();
    }
  });

  const std::size_t n_cells = report.cells.size();
  std::vector<std::vector<ReportRow>> results(n_cells);
  parallel_for(n_cells, config.workers, [&](std::size_t ci) {
    const auto& cell = report.cells[ci];
    auto fail = [&](const std::string& msg) {
      for (const auto& s : scenarios) {
        ReportRow row;
        row.cell = cell;
        row.scenario = s.name;
        row.error = msg;
        results[ci].push_back(std::move(row));
      }
    };
    const unimodal::EncoderSet* enc = nullptr;
    if (cell.mode != TrainingMode::EndToEndScratch) {
      const auto k = static_cast<std::size_t>(
          std::find(regimes.begin(), regimes.end(), cell.stage1) - regimes.begin());
      if (!stage1[k]) return fail("stage 1: " + stage1_error[k]);
      enc = &*stage1[k];
    }
    try {
      const auto model = train_cell(train, config, cell, enc);
      std::size_t params = fusion::model_footprint(model.fusion).total;
      if (cell.mode != TrainingMode::TwoStage) {
        for (const auto m : kAllModalities) {
          if (model.encoders[m]) params += model.encoders[m]->encoder.num_parameters();
        }
      }
      for (std::size_t si = 0; si < scenarios.size(); ++si) {
        ReportRow row;
        row.cell = cell;
        row.scenario = scenarios[si].name;
        row.params = params;
        try {
          const auto ev = evaluate(model, test, scenarios[si], config.bootstrap,
                                   Rng::derive(config.seed, 500 + si).bits());
          row.cindex_mean = ev.cindex;
          row.cindex_std = ev.std;
          row.n_test = ev.n_test;
        } catch (const Error& e) {
          row.error = e.what();
        }
        results[ci].push_back(std::move(row));
      }
    } catch (const Error& e) {
      fail(e.what());
    }
  });
  for (auto& r : results) {
    for (auto& row : r) report.rows.push_back(std::move(row));
  }
  return report;
}

// ---- presets --------------------------------------------------------------

std::vector<ExperimentCell> table3_cells() {
  using R = Regime;
  std::vector<ExperimentCell> cells;
  for (const auto s : {FusionStrategy::Concatenation, FusionStrategy::TensorFusion}) {
    cells.push_back({s, R::All, R::Complete, false, false});
    cells.push_back({s, R::All, R::All, false, false});
    cells.push_back({s, R::All, R::Complete, true, false});
    cells.push_back({s, R::All, R::All, true, false});
  }
  const auto mv = FusionStrategy::MeanVector;
  cells.push_back({mv, R::Complete, R::Complete, false, false});
  cells.push_back({mv, R::All, R::Complete, false, false});
  cells.push_back({mv, R::All, R::All, false, false});
  cells.push_back({mv, R::Complete, R::Complete, true, false});
  cells.push_back({mv, R::All, R::Complete, true, false});
  cells.push_back({mv, R::All, R::All, true, false});
  cells.push_back({mv, R::All, R::Complete, false, true});
  cells.push_back({mv, R::All, R::All, false, true});
  cells.push_back({mv, R::All, R::Complete, true, true});
  cells.push_back({mv, R::All, R::All, true, true});
  return cells;
}

std::vector<ExperimentCell> training_strategy_cells() {
  using R = Regime;
  const auto mv = FusionStrategy::MeanVector;
  std::vector<ExperimentCell> cells;
  for (const auto mode : {TrainingMode::EndToEndScratch, TrainingMode::EndToEndFinetune,
                          TrainingMode::TwoStage}) {
    for (const auto regime : {R::Complete, R::All}) {
      cells.push_back({mv, R::All, regime, false, false, mode});
    }
  }
  return cells;
}

std::vector<ExperimentCell> preset_cells(std::string_view preset) {
  if (preset == "table3") return table3_cells();
  if (preset == "strategies") return training_strategy_cells();
  if (preset == "mean-vector") {
    std::vector<ExperimentCell> out;
    for (const auto& c : table3_cells()) {
      if (c.strategy == FusionStrategy::MeanVector) out.push_back(c);
    }
    return out;
  }
  if (preset == "mmd") {
    return {{FusionStrategy::MeanVector, Regime::All, Regime::All, true, true}};
  }
  if (preset == "fusion") {
    return {{FusionStrategy::Concatenation, Regime::All, Regime::All, true, false},
            {FusionStrategy::TensorFusion, Regime::All, Regime::All, true, false},
            {FusionStrategy::MeanVector, Regime::All, Regime::All, true, true}};
  }
  throw UsageError("unknown preset '" + std::string(preset) +
                   "' (expected table3, mean-vector, strategies, fusion or mmd)");
}

std::vector<MissingnessScenario> table3_scenarios() {
  return {MissingnessScenario::complete(), MissingnessScenario::pathology_missing(),
          MissingnessScenario::gene_pathology_missing()};
}

// ---- report writers -------------------------------------------------------

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, const AblationReport& report) {
  out << "strategy,stage1_regime,stage2_regime,dropout,recon,scenario,cindex_mean,cindex_std,n_test,"
         "params,training,error\n";
  for (const auto& r : report.rows) {
    out << fusion::name(r.cell.strategy) << ',' << name(r.cell.stage1) << ',' << name(r.cell.stage2)
        << ',' << (r.cell.dropout ? 1 : 0) << ',' << (r.cell.recon ? 1 : 0) << ',' << r.scenario << ','
        << (r.cindex_mean ? fmt17(*r.cindex_mean) : "") << ','
        << (r.cindex_std ? fmt17(*r.cindex_std) : "") << ',' << r.n_test << ',' << r.params << ','
        << name(r.cell.mode) << ',';
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << err << '\n';
  }
}

void write_report_json(std::ostream& out, const AblationReport& report) {
  using nlohmann::ordered_json;
  const auto& c = report.config;
  auto train_json = [](const TrainConfig& t) {
    return ordered_json{{"batch_size", t.batch_size},       {"learning_rate", t.learning_rate},
                        {"epochs", t.epochs},               {"patience", t.patience},
                        {"validation_fraction", t.validation_fraction}, {"seed", t.seed},
                        {"optimizer", t.optimizer == nn::Optimizer::Adam ? "adam" : "sgd"}};
  };
  ordered_json j;
  j["config"] = {{"seed", c.seed},
                 {"stage1", train_json(c.stage1_config())},
                 {"fusion", train_json(c.fusion_config())},
                 {"dropout_rate", c.dropout_rate},
                 {"lambda", c.lambda},
                 {"bootstrap", c.bootstrap},
                 {"uncertainty", "bootstrap std over test resamples"},
                 {"embedding_dim", c.architecture.embedding_dim},
                 {"extended_dim", c.architecture.extended_dim},
                 {"tensor_dim", c.architecture.tensor_dim},
                 {"head_hidden", c.architecture.head_hidden},
                 {"encoder_hidden", c.encoder.hidden}};
  j["scenarios"] = report.scenarios;
  j["warnings"] = report.warnings;
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.rows) {
    ordered_json row{{"strategy", fusion::name(r.cell.strategy)},
                     {"stage1_regime", name(r.cell.stage1)},
                     {"stage2_regime", name(r.cell.stage2)},
                     {"dropout", r.cell.dropout},
                     {"recon", r.cell.recon},
                     {"training", name(r.cell.mode)},
                     {"scenario", r.scenario},
                     {"cindex_mean", r.cindex_mean ? ordered_json(*r.cindex_mean) : ordered_json()},
                     {"cindex_std", r.cindex_std ? ordered_json(*r.cindex_std) : ordered_json()},
                     {"n_test", r.n_test},
                     {"params", r.params}};
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  out << j.dump(2) << '\n';
}

void write_report_markdown(std::ostream& out, const AblationReport& report) {
  const bool any_e2e = std::any_of(report.cells.begin(), report.cells.end(), [](const auto& c) {
    return c.mode != TrainingMode::TwoStage;
  });
  out << "# Survival prediction ablation (c-index mean ± bootstrap std)\n\n";
  out << "seed " << report.config.seed << ", bootstrap " << report.config.bootstrap
      << " resamples, dropout rate " << fmt4(report.config.dropout_rate) << ", lambda "
      << fmt4(report.config.lambda) << "\n\n";
  for (const auto s : {FusionStrategy::Concatenation, FusionStrategy::TensorFusion,
                       FusionStrategy::MeanVector}) {
    std::vector<const ExperimentCell*> cells;
    for (const auto& c : report.cells) {
      if (c.strategy == s) cells.push_back(&c);
    }
    if (cells.empty()) continue;
    out << "## " << fusion::name(s) << "\n\n";
    out << "| Data for uni-modal embedding | Data for multi-modal fusion | Dropout | Recon |";
    if (any_e2e) out << " Training |";
    for (const auto& sc : report.scenarios) out << ' ' << sc << " |";
    out << " Params |\n|---|---|---|---|";
    if (any_e2e) out << "---|";
    for (std::size_t k = 0; k < report.scenarios.size(); ++k) out << "---|";
    out << "---|\n";
    for (const auto* c : cells) {
      out << "| " << name(c->stage1) << " | " << name(c->stage2) << " | " << (c->dropout ? "✓" : "")
          << " | " << (c->recon ? "✓" : "") << " |";
      if (any_e2e) out << ' ' << name(c->mode) << " |";
      std::size_t params = 0;
      for (const auto& sc : report.scenarios) {
        const auto* row = report.find(*c, sc);
        out << ' ';
        if (row && row->cindex_mean) {
          out << fmt4(*row->cindex_mean);
          if (row->cindex_std) out << " ± " << fmt4(*row->cindex_std);
        } else {
          out << "failed";
        }
        out << " |";
        if (row) params = std::max(params, row->params);
      }
      out << ' ' << params << " |\n";
    }
    out << '\n';
  }
  for (const auto& w : report.warnings) out << "> warning: " << w << '\n';
  for (const auto& r : report.rows) {
    if (!r.error.empty()) out << "> " << r.cell.label() << " / " << r.scenario << ": " << r.error << '\n';
  }
}

}  // namespace mmd::pipeline
