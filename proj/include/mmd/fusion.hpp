#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmd/common.hpp"
#include "mmd/nn.hpp"

namespace mmd::fusion {

enum class FusionStrategy : std::uint8_t { Concatenation, MeanVector, TensorFusion };

std::string_view name(FusionStrategy s);
/// "concat", "mean-vector", "tensor" (long forms "concatenation", "tensor-fusion" also accepted).
FusionStrategy parse_strategy(std::string_view s);

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::MeanVector;
  std::size_t embedding_dim = 32;
  std::size_t extended_dim = 128;   // mean-vector extender output
  std::size_t extender_hidden = 64;
  std::size_t tensor_dim = 8;       // tensor-fusion reducer output, before the appended 1
  std::size_t head_hidden = 64;
  std::size_t recon_hidden = 64;
  bool reconstruction = false;
  double lambda = 1.0;

  /// Concatenation: V*embedding; mean vector: extended; tensor: (tensor_dim+1)^V.
  std::size_t fused_dim() const;
  void validate() const;
  bool operator==(const FusionConfig&) const = default;
};

/// Per-modality embedding; absent entries are unavailable modalities.
using Embeddings = PerModality<std::optional<Vector>>;
/// Reconstructed embeddings, always one per modality.
using Reconstruction = PerModality<Vector>;

/// Branch networks (extenders or reducers, per strategy), hazard head F and an
/// optional reconstruction head.
struct FusionModel {
  FusionConfig config;
  PerModality<std::optional<nn::DenseNet>> branches;
  nn::DenseNet hazard_head;
  std::optional<nn::DenseNet> recon_head;

  static FusionModel create(const FusionConfig& config, std::uint64_t seed);
  void validate() const;

  /// Every trainable sub-network in a fixed order: branches (modality order), hazard, recon.
  std::vector<nn::DenseNet*> nets();
  std::vector<const nn::DenseNet*> nets() const;
  std::vector<std::string> net_names() const;

  bool operator==(const FusionModel&) const = default;
};

struct FusionGrads {
  PerModality<std::optional<nn::GradientSet>> branches;
  nn::GradientSet hazard;
  std::optional<nn::GradientSet> recon;

  static FusionGrads zeros_like(const FusionModel& model);
  /// Same order as FusionModel::nets().
  std::vector<nn::GradientSet*> sets();
  std::vector<const nn::GradientSet*> sets() const;
  void set_zero();
};

struct FuseTape {
  ModalityMask mask;
  PerModality<std::optional<nn::Tape>> branch_tapes;
  PerModality<Vector> factors;  // tensor fusion: reducer output with 1 appended
};

struct FuseResult {
  Vector h;
  FuseTape tape;
};

/// Fuses the modalities selected by `mask`; each must be present in `embeddings`.
/// Entries present but masked out are ignored.
FuseResult fuse(const FusionModel& model, const Embeddings& embeddings, ModalityMask mask);

/// Accumulates branch gradients for dL/dh and returns dL/dx per masked-in modality.
PerModality<std::optional<Vector>> fuse_backward(const FusionModel& model, const FuseTape& tape,
                                                 const Vector& dh, FusionGrads& grads);

/// Flat index of the tensor-fusion entry for factor digits (a, b, c, d); the
/// radiology digit varies slowest.
std::size_t kronecker_index(const PerModality<std::size_t>& digits, std::size_t factor_dim);

double predict_hazard(const FusionModel& model, const Vector& h);

/// Splits the recon head output into V consecutive embedding-sized blocks.
Reconstruction reconstruct(const FusionModel& model, const Vector& h);

/// sum_i sum_v alpha_i^v ||x_i^v - xt_i^v||_2 / sum_i |alpha_i|. `alpha` is the
/// original availability, not the post-dropout mask.
double recon_loss(std::span<const Reconstruction> recon, std::span<const Embeddings> targets,
                  std::span<const ModalityMask> alpha);
/// d recon_loss / d recon.
std::vector<Reconstruction> recon_loss_grad(std::span<const Reconstruction> recon,
                                            std::span<const Embeddings> targets,
                                            std::span<const ModalityMask> alpha);

inline double total_loss(double cox, double recon, double lambda) { return cox + lambda * recon; }

struct DropoutPolicy {
  double rate = 0.5;
  bool enabled = true;
  void validate() const;
};

/// Keeps each available modality with probability 1 - rate, redrawing until at
/// least one survives. Unavailable modalities stay off.
ModalityMask modality_dropout(ModalityMask mask, const DropoutPolicy& policy, Rng& rng);

/// One training sample for the fusion stage.
struct FusionSample {
  const Embeddings* embeddings = nullptr;
  ModalityMask available;  // original availability alpha
  ModalityMask train_mask; // after dropout; governs fusion
  double time = 0.0;
  int event = 0;
};

struct BatchLoss {
  double cox = 0.0;
  double recon = 0.0;
  double total = 0.0;
  /// dL/dx for each sample's masked-in modalities (filled when requested).
  std::vector<PerModality<std::optional<Vector>>> embedding_grads;
};

/// Total loss over one minibatch; accumulates parameter gradients into `grads`
/// when non-null. Throws NumericalError if the batch has no event.
BatchLoss batch_loss(const FusionModel& model, std::span<const FusionSample> batch,
                     FusionGrads* grads, bool want_embedding_grads = false);

struct FootprintEntry {
  std::string component;
  std::size_t parameters = 0;
};

struct Footprint {
  std::vector<FootprintEntry> entries;
  std::size_t total = 0;
  std::size_t bytes = 0;  // total * sizeof(double)
};

Footprint model_footprint(const FusionModel& model);

void write_model(std::ostream& out, const FusionModel& model);
FusionModel read_model(std::istream& in);
void save_model(const std::string& path, const FusionModel& model);
FusionModel load_model(const std::string& path);

}  // namespace mmd::fusion
