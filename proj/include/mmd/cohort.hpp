#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmd/common.hpp"

namespace mmd {

struct ModalitySchema {
  /// Raw feature width per modality. Defaults: radiology/pathology are tabular
  /// stand-ins for image features, genomics has 80 DNA features, demographics 9
  /// one-hot expanded columns.
  PerModality<std::size_t> raw_dims{32, 32, 80, 9};
  std::size_t embedding_dim = 32;

  std::size_t raw_dim(Modality m) const { return raw_dims[index(m)]; }
  void validate() const;
  /// Every raw dim equals the embedding dim, i.e. the cohort already holds embeddings.
  bool is_embedding_schema() const;
  static ModalitySchema embeddings(std::size_t dim = 32);

  bool operator==(const ModalitySchema&) const = default;
};

/// Sidecar format: `key=value` lines with keys radiology, pathology, genomics,
/// demographics and embedding. Blank lines and `#` comments are ignored.
ModalitySchema parse_schema(std::istream& in);
ModalitySchema load_schema(const std::string& path);
void write_schema(std::ostream& out, const ModalitySchema& schema);
void save_schema(const std::string& path, const ModalitySchema& schema);

struct PatientRecord {
  std::string id;
  double time = 0.0;
  bool event = false;
  PerModality<std::optional<Vector>> features;

  /// Availability is derived from presence, so the mask can never disagree with the data.
  ModalityMask availability() const;
  bool has(Modality m) const { return features[index(m)].has_value(); }
  const Vector& feature(Modality m) const;

  bool operator==(const PatientRecord&) const;
};

/// Validated, immutable collection of records conforming to one schema.
class Cohort {
 public:
  /// Throws DataError on any invariant violation (empty, zero events, bad
  /// dims, duplicate ids, non-positive times, records with no modality).
  static Cohort create(ModalitySchema schema, std::vector<PatientRecord> records,
                       std::optional<std::vector<double>> ground_truth_risk = std::nullopt);

  const ModalitySchema& schema() const { return schema_; }
  std::span<const PatientRecord> records() const { return records_; }
  const PatientRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  std::size_t num_events() const;

  bool has_ground_truth() const { return ground_truth_.has_value(); }
  std::span<const double> ground_truth() const;

  /// Records at the given positions, in that order. Validates the result.
  Cohort subset(std::span<const std::size_t> indices) const;

  std::vector<double> times() const;
  std::vector<int> events() const;

  bool operator==(const Cohort&) const;

 private:
  Cohort(ModalitySchema schema, std::vector<PatientRecord> records,
         std::optional<std::vector<double>> truth)
      : schema_(std::move(schema)), records_(std::move(records)), ground_truth_(std::move(truth)) {}

  ModalitySchema schema_;
  std::vector<PatientRecord> records_;
  std::optional<std::vector<double>> ground_truth_;
};

/// Checks a single record against a schema; throws DataError naming the record.
void validate_record(const PatientRecord& record, const ModalitySchema& schema);

// Tabular file format, comma separated with a header row:
//   id,time,event,radiology_present,radiology_0..,pathology_present,...,demographics_present,...
// An absent block is "0" followed by empty cells. An optional trailing
// `true_risk` column carries synthetic ground truth.
Cohort read_cohort(std::istream& in, const ModalitySchema& schema);
Cohort load_cohort(const std::string& path, const ModalitySchema& schema);
void write_cohort(std::ostream& out, const Cohort& cohort);
void save_cohort(const std::string& path, const Cohort& cohort);
/// Low-level writer shared with embedding tables (no cohort invariants required).
void write_records(std::ostream& out, const ModalitySchema& schema,
                   std::span<const PatientRecord> records,
                   std::optional<std::span<const double>> truth = std::nullopt);

enum class Missingness : std::uint8_t { Mcar, Mnar };

struct SyntheticConfig {
  std::size_t n = 700;
  ModalitySchema schema{};
  PerModality<double> missing_rate{0.3, 0.3, 0.3, 0.3};
  double censor_rate = 0.3;
  std::uint64_t seed = 0;
  Missingness mechanism = Missingness::Mcar;
  /// Seeds the generative model itself (latent loadings, risk weights); cohorts
  /// drawn with different `seed` but the same world share one ground truth.
  std::uint64_t world_seed = 20220917;
};

inline constexpr std::size_t kLatentDim = 8;

/// Latent z ~ N(0, I_8); modality v observes A_v z + noise; true risk
/// w.z + 0.5 tanh(z0 z1) (scaled); exponential survival times with rate exp(risk);
/// with probability censor_rate the time is replaced by U(0, t) and event = 0.
Cohort generate_synthetic(const SyntheticConfig& config);

struct MissingnessScenario {
  std::string name;
  ModalityMask drop;

  static MissingnessScenario complete();
  static MissingnessScenario pathology_missing();
  static MissingnessScenario gene_pathology_missing();
  /// Preset names ("complete", "pathology-missing", "gene-pathology-missing") or
  /// "drop:<mod>[+<mod>...]".
  static MissingnessScenario parse(std::string_view text);

  bool operator==(const MissingnessScenario&) const = default;
};

struct ScenarioResult {
  Cohort cohort;
  std::size_t removed = 0;
};

/// Removes the scenario's modalities from every record; records left with no
/// modality are dropped and counted.
ScenarioResult apply_scenario(const Cohort& cohort, const MissingnessScenario& scenario);

/// Deterministic shuffle split into (train, test). Both sides must keep an event.
std::pair<Cohort, Cohort> split(const Cohort& cohort, double train_fraction, std::uint64_t seed);

/// Records with all four modalities (the "C" data regime).
Cohort complete_only(const Cohort& cohort);

}  // namespace mmd
