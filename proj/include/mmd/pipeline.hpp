#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmd/cohort.hpp"
#include "mmd/fusion.hpp"
#include "mmd/training.hpp"
#include "mmd/unimodal.hpp"

namespace mmd::pipeline {

/// Training-data regime: "C" uses complete records only, "C+M" uses everything.
enum class Regime : std::uint8_t { Complete, All };

std::string_view name(Regime r);
Regime parse_regime(std::string_view s);

enum class TrainingMode : std::uint8_t { TwoStage, EndToEndScratch, EndToEndFinetune };

std::string_view name(TrainingMode m);
TrainingMode parse_mode(std::string_view s);

/// One row of the ablation grid.
struct ExperimentCell {
  fusion::FusionStrategy strategy = fusion::FusionStrategy::MeanVector;
  Regime stage1 = Regime::All;
  Regime stage2 = Regime::All;
  bool dropout = false;
  bool recon = false;
  TrainingMode mode = TrainingMode::TwoStage;

  std::string label() const;
  bool operator==(const ExperimentCell&) const = default;
};

struct PipelineConfig {
  TrainConfig unimodal = TrainConfig::unimodal_defaults();
  TrainConfig fusion = TrainConfig::fusion_defaults();
  fusion::FusionConfig architecture{};  // strategy and recon are taken from the cell
  unimodal::EncoderArchitecture encoder{};
  double dropout_rate = 0.5;
  double lambda = 1.0;
  std::size_t bootstrap = 1000;
  /// Master seed; stage-1 and fusion seeds are derived from it.
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  TrainConfig stage1_config() const;
  TrainConfig fusion_config() const;
  fusion::FusionConfig fusion_architecture(const ExperimentCell& cell) const;
};

struct TrainedModel {
  unimodal::EncoderSet encoders;
  fusion::FusionModel fusion;
  PerModality<TrainTrace> stage1_traces;
  TrainTrace fusion_trace;
};

/// Restricts a cohort to the regime's records.
Cohort regime_data(const Cohort& cohort, Regime regime);

/// Stage 1: one encoder per modality, each on the regime's records that carry it.
unimodal::EncoderSet train_stage1(const Cohort& train, Regime regime, const PipelineConfig& config,
                                  PerModality<TrainTrace>* traces = nullptr);

/// Stage 2 on frozen embeddings.
fusion::FusionModel train_fusion(const unimodal::EmbeddingTable& table,
                                 const fusion::FusionConfig& architecture, const TrainConfig& config,
                                 const fusion::DropoutPolicy& dropout, TrainTrace* trace = nullptr);

/// Stage 1 (or the supplied frozen encoders) followed by fusion training on the
/// stage-2 regime. Encoders are never modified in stage 2.
TrainedModel train_two_stage(const Cohort& train, const PipelineConfig& config,
                             const ExperimentCell& cell,
                             const unimodal::EncoderSet* stage1 = nullptr);

/// Encoders and fusion trained jointly on the stage-2 regime. Finetune mode
/// starts from `pretrained` and fails without it.
TrainedModel train_end_to_end(const Cohort& train, const PipelineConfig& config,
                              const ExperimentCell& cell,
                              const unimodal::EncoderSet* pretrained = nullptr);

TrainedModel train_cell(const Cohort& train, const PipelineConfig& config,
                        const ExperimentCell& cell, const unimodal::EncoderSet* stage1 = nullptr);

/// Hazard for every record using its own availability (no dropout).
std::vector<double> predict_risks(const TrainedModel& model, const Cohort& cohort);

struct Evaluation {
  double cindex = 0.0;
  std::optional<double> std;  // bootstrap std; absent when bootstrap = 0
  std::size_t n_test = 0;
  std::size_t removed = 0;    // records dropped by the scenario
};

/// C-index on the full set plus the std over `bootstrap` resamples.
Evaluation evaluate_risks(std::span<const double> risks, std::span<const double> times,
                          std::span<const int> events, std::size_t bootstrap, std::uint64_t seed);

Evaluation evaluate(const TrainedModel& model, const Cohort& test,
                    const MissingnessScenario& scenario, std::size_t bootstrap, std::uint64_t seed);

struct ReportRow {
  ExperimentCell cell;
  std::string scenario;
  std::optional<double> cindex_mean;
  std::optional<double> cindex_std;
  std::size_t n_test = 0;
  std::size_t params = 0;
  std::string error;  // non-empty when the cell failed
};

struct AblationReport {
  PipelineConfig config;
  std::vector<std::string> scenarios;
  std::vector<ExperimentCell> cells;
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;

  const ReportRow* find(const ExperimentCell& cell, std::string_view scenario) const;
};

/// Trains and evaluates every cell on every scenario. Stage-1 encoders are shared
/// across cells with the same stage-1 regime. A failing cell is recorded and the
/// others still run.
AblationReport run_ablation_grid(const Cohort& train, const Cohort& test,
                                 std::span<const ExperimentCell> cells,
                                 std::span<const MissingnessScenario> scenarios,
                                 const PipelineConfig& config);

/// The 18 rows of the fusion comparison table: 4 concatenation, 4 tensor, 10 mean vector.
std::vector<ExperimentCell> table3_cells();
/// Mean-vector two-stage vs end-to-end (scratch and finetune), each on C and C+M.
std::vector<ExperimentCell> training_strategy_cells();
std::vector<ExperimentCell> preset_cells(std::string_view preset);
std::vector<MissingnessScenario> table3_scenarios();

void write_report_csv(std::ostream& out, const AblationReport& report);
void write_report_json(std::ostream& out, const AblationReport& report);
void write_report_markdown(std::ostream& out, const AblationReport& report);

/// Runs fn(0..n-1) on up to `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace mmd::pipeline
