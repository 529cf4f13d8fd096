#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmd/cohort.hpp"
#include "mmd/fusion.hpp"
#include "mmd/nn.hpp"
#include "mmd/training.hpp"

namespace mmd::unimodal {

/// Stage-1 network for one modality: SELU encoder raw -> hidden -> embedding,
/// plus a scalar hazard head used only while training the encoder.
struct UnimodalEncoder {
  Modality modality = Modality::Radiology;
  nn::DenseNet encoder;
  nn::DenseNet head;

  Vector embed(const Vector& raw) const { return nn::predict(encoder, raw); }
  bool operator==(const UnimodalEncoder&) const = default;
};

struct EncoderArchitecture {
  std::size_t hidden = 64;
};

UnimodalEncoder init_encoder(Modality modality, const ModalitySchema& schema,
                             const EncoderArchitecture& arch, std::uint64_t seed);

/// Trains one encoder with the Cox loss on the records where `modality` is
/// available; every other record is ignored.
UnimodalEncoder train_unimodal(const Cohort& cohort, Modality modality, const TrainConfig& config,
                               TrainTrace* trace = nullptr, const EncoderArchitecture& arch = {});

/// Maps raw features to embeddings. A passthrough set treats the input as
/// precomputed embeddings (no stage 1).
class EncoderSet {
 public:
  EncoderSet() = default;
  explicit EncoderSet(PerModality<std::optional<UnimodalEncoder>> encoders)
      : encoders_(std::move(encoders)) {}
  static EncoderSet passthrough(std::size_t embedding_dim);

  bool is_passthrough() const { return passthrough_dim_.has_value(); }
  const std::optional<UnimodalEncoder>& operator[](Modality m) const { return encoders_[index(m)]; }
  std::optional<UnimodalEncoder>& operator[](Modality m) { return encoders_[index(m)]; }
  std::size_t embedding_dim() const;

  /// Embeddings for the record's available modalities. Throws UsageError if a
  /// present modality has no encoder.
  fusion::Embeddings embed(const PatientRecord& record) const;

  bool operator==(const EncoderSet&) const = default;

 private:
  PerModality<std::optional<UnimodalEncoder>> encoders_;
  std::optional<std::size_t> passthrough_dim_;
};

void write_encoders(std::ostream& out, const EncoderSet& encoders);
EncoderSet read_encoders(std::istream& in);
void save_encoders(const std::string& path, const EncoderSet& encoders);
EncoderSet load_encoders(const std::string& path);

/// Per-record embeddings with the original availability, times and events.
struct EmbeddingTable {
  std::size_t dim = 32;
  std::vector<PatientRecord> rows;  // features hold embeddings

  std::size_t size() const { return rows.size(); }
  ModalitySchema schema() const { return ModalitySchema::embeddings(dim); }
  fusion::Embeddings embeddings(std::size_t i) const { return rows[i].features; }
};

EmbeddingTable export_embeddings(const EncoderSet& encoders, std::span<const PatientRecord> records);
EmbeddingTable export_embeddings(const EncoderSet& encoders, const Cohort& cohort);

/// Same tabular format as cohorts, with embedding columns.
void save_embeddings(const std::string& path, const EmbeddingTable& table);
EmbeddingTable load_embeddings(const std::string& path, std::size_t dim = 32);

}  // namespace mmd::unimodal
