#include "mmd/fusion.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "mmd/survival.hpp"

namespace mmd::fusion {

namespace {

constexpr double kNormGuard = 1e-12;

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace

std::string_view name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Concatenation: return "concat";
    case FusionStrategy::MeanVector: return "mean-vector";
    case FusionStrategy::TensorFusion: return "tensor";
  }
  return "?";
}

FusionStrategy parse_strategy(std::string_view s) {
  if (s == "concat" || s == "concatenation") return FusionStrategy::Concatenation;
  if (s == "mean-vector" || s == "mean") return FusionStrategy::MeanVector;
  if (s == "tensor" || s == "tensor-fusion") return FusionStrategy::TensorFusion;
  throw UsageError("unknown fusion strategy '" + std::string(s) + "'");
}

std::size_t FusionConfig::fused_dim() const {
  switch (strategy) {
    case FusionStrategy::Concatenation: return kNumModalities * embedding_dim;
    case FusionStrategy::MeanVector: return extended_dim;
    case FusionStrategy::TensorFusion: return ipow(tensor_dim + 1, kNumModalities);
  }
  return 0;
}

void FusionConfig::validate() const {
  if (embedding_dim == 0 || extended_dim == 0 || extender_hidden == 0 || tensor_dim == 0 ||
      head_hidden == 0 || recon_hidden == 0) {
    throw UsageError("fusion config: all dimensions must be >= 1");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("fusion config: lambda must be >= 0");
}

// ---- model ----------------------------------------------------------------

FusionModel FusionModel::create(const FusionConfig& config, std::uint64_t seed) {
  config.validate();
  using nn::Activation;
  FusionModel model;
  model.config = config;
  for (const auto m : kAllModalities) {
    const auto tag = static_cast<std::uint64_t>(index(m));
    const std::uint64_t s = Rng::derive(seed, 100 + tag).bits();
    if (config.strategy == FusionStrategy::MeanVector) {
      const std::array<std::size_t, 3> dims{config.embedding_dim, config.extender_hidden,
                                            config.extended_dim};
      model.branches[index(m)] = nn::init_net(dims, Activation::ReLU, Activation::Identity, s);
    } else if (config.strategy == FusionStrategy::TensorFusion) {
      const std::array<std::size_t, 2> dims{config.embedding_dim, config.tensor_dim};
      model.branches[index(m)] = nn::init_net(dims, Activation::ReLU, s);
    }
  }
  const std::size_t fused = config.fused_dim();
  const std::array<std::size_t, 3> head_dims{fused, config.head_hidden, 1};
  model.hazard_head = nn::init_net(head_dims, Activation::ReLU, Activation::Identity,
                                   Rng::derive(seed, 200).bits());
  if (config.reconstruction) {
    const std::array<std::size_t, 3> recon_dims{fused, config.recon_hidden,
                                                kNumModalities * config.embedding_dim};
    model.recon_head = nn::init_net(recon_dims, Activation::ReLU, Activation::Identity,
                                    Rng::derive(seed, 300).bits());
  }
  model.validate();
  return model;
}

void FusionModel::validate() const {
  config.validate();
  for (const auto m : kAllModalities) {
    const auto& b = branches[index(m)];
    const bool needs = config.strategy != FusionStrategy::Concatenation;
    if (needs != b.has_value()) {
      throw UsageError("fusion model: branch presence for " + std::string(mmd::name(m)) +
                       " does not match strategy");
    }
    if (!b) continue;
    const std::size_t want_out = config.strategy == FusionStrategy::MeanVector ? config.extended_dim
                                                                              : config.tensor_dim;
    if (b->input_dim() != config.embedding_dim || b->output_dim() != want_out) {
      throw UsageError("fusion model: branch " + std::string(mmd::name(m)) + " has wrong dims");
    }
  }
  if (hazard_head.input_dim() != config.fused_dim() || hazard_head.output_dim() != 1) {
    throw UsageError("fusion model: hazard head must map fused dim to 1");
  }
  if (config.reconstruction != recon_head.has_value()) {
    throw UsageError("fusion model: recon head presence does not match config");
  }
  if (recon_head && (recon_head->input_dim() != config.fused_dim() ||
                     recon_head->output_dim() != kNumModalities * config.embedding_dim)) {
    throw UsageError("fusion model: recon head must map fused dim to V x embedding dim");
  }
}

std::vector<nn::DenseNet*> FusionModel::nets() {
  std::vector<nn::DenseNet*> out;
  for (auto& b : branches) {
    if (b) out.push_back(&*b);
  }
  out.push_back(&hazard_head);
  if (recon_head) out.push_back(&*recon_head);
  return out;
}

std::vector<const nn::DenseNet*> FusionModel::nets() const {
  std::vector<const nn::DenseNet*> out;
  for (const auto& b : branches) {
    if (b) out.push_back(&*b);
  }
  out.push_back(&hazard_head);
  if (recon_head) out.push_back(&*recon_head);
  return out;
}

std::vector<std::string> FusionModel::net_names() const {
  std::vector<std::string> out;
  const std::string kind = config.strategy == FusionStrategy::MeanVector ? "extender" : "reducer";
  for (const auto m : kAllModalities) {
    if (branches[index(m)]) out.push_back(kind + ":" + std::string(mmd::name(m)));
  }
  out.emplace_back("hazard_head");
  if (recon_head) out.emplace_back("recon_head");
  return out;
}

FusionGrads FusionGrads::zeros_like(const FusionModel& model) {
  FusionGrads g;
  for (std::size_t v = 0; v < kNumModalities; ++v) {
    if (model.branches[v]) g.branches[v] = nn::GradientSet(*model.branches[v]);
  }
  g.hazard = nn::GradientSet(model.hazard_head);
  if (model.recon_head) g.recon = nn::GradientSet(*model.recon_head);
  return g;
}

std::vector<nn::GradientSet*> FusionGrads::sets() {
  std::vector<nn::GradientSet*> out;
  for (auto& b : branches) {
    if (b) out.push_back(&*b);
  }
  out.push_back(&hazard);
  if (recon) out.push_back(&*recon);
  return out;
}

std::vector<const nn::GradientSet*> FusionGrads::sets() const {
  std::vector<const nn::GradientSet*> out;
  for (const auto& b : branches) {
    if (b) out.push_back(&*b);
  }
  out.push_back(&hazard);
  if (recon) out.push_back(&*recon);
  return out;
}

void FusionGrads::set_zero() {
  for (auto* s : sets()) s->set_zero();
}

// ---- fuse -----------------------------------------------------------------

std::size_t kronecker_index(const PerModality<std::size_t>& digits, std::size_t factor_dim) {
  std::size_t idx = 0;
  for (std::size_t v = 0; v < kNumModalities; ++v) idx = idx * factor_dim + digits[v];
  return idx;
}

FuseResult fuse(const FusionModel& model, const Embeddings& embeddings, ModalityMask mask) {
  const auto& cfg = model.config;
  if (mask.none()) throw UsageError("fuse: no modality present");
  for (std::size_t v = 0; v < kNumModalities; ++v) {
    if (!mask[v]) continue;
    if (!embeddings[v]) {
      throw UsageError("fuse: " + std::string(mmd::name(kAllModalities[v])) +
                       " selected by mask but absent");
    }
    if (static_cast<std::size_t>(embeddings[v]->size()) != cfg.embedding_dim) {
      throw UsageError("fuse: embedding dimension mismatch");
    }
  }

  FuseResult r;
  r.tape.mask = mask;
  const auto emb = static_cast<Eigen::Index>(cfg.embedding_dim);
  switch (cfg.strategy) {
    case FusionStrategy::Concatenation: {
      r.h = Vector::Zero(static_cast<Eigen::Index>(cfg.fused_dim()));
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (mask[v]) r.h.segment(static_cast<Eigen::Index>(v) * emb, emb) = *embeddings[v];
      }
      break;
    }
    case FusionStrategy::MeanVector: {
      r.h = Vector::Zero(static_cast<Eigen::Index>(cfg.extended_dim));
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (!mask[v]) continue;
        auto fr = nn::forward(*model.branches[v], *embeddings[v]);
        r.h += fr.output;
        r.tape.branch_tapes[v] = std::move(fr.tape);
      }
      r.h /= static_cast<double>(mask.count());
      break;
    }
    case FusionStrategy::TensorFusion: {
      const auto d = static_cast<Eigen::Index>(cfg.tensor_dim);
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        Vector z = Vector::Zero(d + 1);
        z[d] = 1.0;
        if (mask[v]) {
          auto fr = nn::forward(*model.branches[v], *embeddings[v]);
          z.head(d) = fr.output;
          r.tape.branch_tapes[v] = std::move(fr.tape);
        }
        r.tape.factors[v] = std::move(z);
      }
      // Kronecker product z0 (x) z1 (x) z2 (x) z3, first factor slowest.
      Vector h = r.tape.factors[0];
      for (std::size_t v = 1; v < kNumModalities; ++v) {
        const Vector& z = r.tape.factors[v];
        Vector next(h.size() * z.size());
        for (Eigen::Index i = 0; i < h.size(); ++i) next.segment(i * z.size(), z.size()) = h[i] * z;
        h = std::move(next);
      }
      r.h = std::move(h);
      break;
    }
  }
  return r;
}

PerModality<std::optional<Vector>> fuse_backward(const FusionModel& model, const FuseTape& tape,
                                                 const Vector& dh, FusionGrads& grads) {
  const auto& cfg = model.config;
  if (static_cast<std::size_t>(dh.size()) != cfg.fused_dim()) {
    throw UsageError("fuse_backward: gradient has wrong length");
  }
  PerModality<std::optional<Vector>> dx;
  const auto emb = static_cast<Eigen::Index>(cfg.embedding_dim);
  switch (cfg.strategy) {
    case FusionStrategy::Concatenation:
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (tape.mask[v]) dx[v] = dh.segment(static_cast<Eigen::Index>(v) * emb, emb);
      }
      break;
    case FusionStrategy::MeanVector: {
      const Vector up = dh / static_cast<double>(tape.mask.count());
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (!tape.mask[v]) continue;
        dx[v] = nn::backward_accumulate(*model.branches[v], *tape.branch_tapes[v], up,
                                        *grads.branches[v]);
      }
      break;
    }
    case FusionStrategy::TensorFusion: {
      const std::size_t f = cfg.tensor_dim + 1;
      const std::size_t total = cfg.fused_dim();
      PerModality<Vector> dz;
      for (auto& g : dz) g = Vector::Zero(static_cast<Eigen::Index>(f));
      PerModality<std::size_t> digit{};
      for (std::size_t idx = 0; idx < total; ++idx) {
        const double g = dh[static_cast<Eigen::Index>(idx)];
        if (g != 0.0) {
          PerModality<double> z;
          for (std::size_t v = 0; v < kNumModalities; ++v) {
            z[v] = tape.factors[v][static_cast<Eigen::Index>(digit[v])];
          }
          for (std::size_t v = 0; v < kNumModalities; ++v) {
            double others = g;
            for (std::size_t u = 0; u < kNumModalities; ++u) {
              if (u != v) others *= z[u];
            }
            dz[v][static_cast<Eigen::Index>(digit[v])] += others;
          }
        }
        // advance the mixed-radix counter, last modality fastest
        for (std::size_t v = kNumModalities; v-- > 0;) {
          if (++digit[v] < f) break;
          digit[v] = 0;
        }
      }
      const auto d = static_cast<Eigen::Index>(cfg.tensor_dim);
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (!tape.mask[v]) continue;
        const Vector up = dz[v].head(d);
        dx[v] = nn::backward_accumulate(*model.branches[v], *tape.branch_tapes[v], up,
                                        *grads.branches[v]);
      }
      break;
    }
  }
  return dx;
}

double predict_hazard(const FusionModel& model, const Vector& h) {
  if (static_cast<std::size_t>(h.size()) != model.config.fused_dim()) {
    throw UsageError("predict_hazard: fused vector has wrong length");
  }
  return nn::predict(model.hazard_head, h)[0];
}

Reconstruction reconstruct(const FusionModel& model, const Vector& h) {
  if (!model.recon_head) throw UsageError("reconstruct: reconstruction is disabled for this model");
  if (static_cast<std::size_t>(h.size()) != model.config.fused_dim()) {
    throw UsageError("reconstruct: fused vector has wrong length");
  }
  const Vector out = nn::predict(*model.recon_head, h);
  const auto emb = static_cast<Eigen::Index>(model.config.embedding_dim);
  Reconstruction r;
  for (std::size_t v = 0; v < kNumModalities; ++v) r[v] = out.segment(static_cast<Eigen::Index>(v) * emb, emb);
  return r;
}

// ---- reconstruction loss --------------------------------------------------

namespace {

double recon_normalizer(std::span<const Reconstruction> recon, std::span<const Embeddings> targets,
                        std::span<const ModalityMask> alpha) {
  if (recon.size() != targets.size() || alpha.size() != targets.size()) {
    throw UsageError("recon_loss: batch components must have equal length");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    count += alpha[i].count();
    for (std::size_t v = 0; v < kNumModalities; ++v) {
      if (!alpha[i][v]) continue;
      if (!targets[i][v]) throw UsageError("recon_loss: target missing for an available modality");
      if (targets[i][v]->size() != recon[i][v].size()) {
        throw UsageError("recon_loss: reconstruction and target dims differ");
      }
    }
  }
  if (count == 0) throw UsageError("recon_loss: no available modality in batch");
  return static_cast<double>(count);
}

}  // namespace

double recon_loss(std::span<const Reconstruction> recon, std::span<const Embeddings> targets,
                  std::span<const ModalityMask> alpha) {
  const double denom = recon_normalizer(recon, targets, alpha);
  double sum = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    for (std::size_t v = 0; v < kNumModalities; ++v) {
      if (alpha[i][v]) sum += (*targets[i][v] - recon[i][v]).norm();
    }
  }
  return sum / denom;
}

std::vector<Reconstruction> recon_loss_grad(std::span<const Reconstruction> recon,
                                            std::span<const Embeddings> targets,
                                            std::span<const ModalityMask> alpha) {
  const double denom = recon_normalizer(recon, targets, alpha);
  std::vector<Reconstruction> grad(recon.size());
  for (std::size_t i = 0; i < recon.size(); ++i) {
    for (std::size_t v = 0; v < kNumModalities; ++v) {
      if (!alpha[i][v]) {
        grad[i][v] = Vector::Zero(recon[i][v].size());
        continue;
      }
      const Vector diff = recon[i][v] - *targets[i][v];
      grad[i][v] = diff / ((diff.norm() + kNormGuard) * denom);
    }
  }
  return grad;
}

// ---- dropout --------------------------------------------------------------

void DropoutPolicy::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
}

ModalityMask modality_dropout(ModalityMask mask, const DropoutPolicy& policy, Rng& rng) {
  if (mask.none()) throw UsageError("modality_dropout: mask has no available modality");
  policy.validate();
  if (!policy.enabled) return mask;
  ModalityMask out;
  do {
    out.reset();
    for (std::size_t v = 0; v < kNumModalities; ++v) {
      if (mask[v] && !rng.bernoulli(policy.rate)) out.set(v);
    }
  } while (out.none());
  return out;
}

// ---- batch loss -----------------------------------------------------------

BatchLoss batch_loss(const FusionModel& model, std::span<const FusionSample> batch,
                     FusionGrads* grads, bool want_embedding_grads) {
  const std::size_t n = batch.size();
  std::vector<FuseResult> fused;
  fused.reserve(n);
  std::vector<nn::ForwardResult> head;
  head.reserve(n);
  std::vector<double> hazards(n), times(n);
  std::vector<int> events(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = batch[i];
    fused.push_back(fuse(model, *s.embeddings, s.train_mask));
    head.push_back(nn::forward(model.hazard_head, fused.back().h));
    hazards[i] = head.back().output[0];
    times[i] = s.time;
    events[i] = s.event;
  }
  const survival::SurvivalBatch sb{hazards, times, events};

  BatchLoss out;
  out.cox = survival::cox_loss(sb);

  const bool use_recon = model.recon_head.has_value();
  std::vector<nn::ForwardResult> rec;
  std::vector<Reconstruction> recon;
  std::vector<Embeddings> targets;
  std::vector<ModalityMask> alpha;
  if (use_recon) {
    const auto emb = static_cast<Eigen::Index>(model.config.embedding_dim);
    for (std::size_t i = 0; i < n; ++i) {
      rec.push_back(nn::forward(*model.recon_head, fused[i].h));
      Reconstruction r;
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        r[v] = rec.back().output.segment(static_cast<Eigen::Index>(v) * emb, emb);
      }
      recon.push_back(std::move(r));
      targets.push_back(*batch[i].embeddings);
      alpha.push_back(batch[i].available);
    }
    out.recon = recon_loss(recon, targets, alpha);
  }
  const double lambda = model.config.lambda;
  out.total = total_loss(out.cox, out.recon, lambda);
  if (!std::isfinite(out.total)) throw NumericalError("non-finite training loss");
  if (!grads) return out;

  const auto dcox = survival::cox_loss_grad(sb);
  std::vector<Reconstruction> drec;
  if (use_recon) drec = recon_loss_grad(recon, targets, alpha);
  if (want_embedding_grads) out.embedding_grads.resize(n);

  const auto emb = static_cast<Eigen::Index>(model.config.embedding_dim);
  for (std::size_t i = 0; i < n; ++i) {
    Vector up(1);
    up[0] = dcox[i];
    Vector dh = nn::backward_accumulate(model.hazard_head, head[i].tape, up, grads->hazard);
    if (use_recon && lambda != 0.0) {
      Vector upr(static_cast<Eigen::Index>(kNumModalities) * emb);
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        upr.segment(static_cast<Eigen::Index>(v) * emb, emb) = lambda * drec[i][v];
      }
      dh += nn::backward_accumulate(*model.recon_head, rec[i].tape, upr, *grads->recon);
    }
    auto dx = fuse_backward(model, fused[i].tape, dh, *grads);
    if (want_embedding_grads) {
      // The recon target also depends on the embedding: d/dx of ||x - xt||.
      if (use_recon && lambda != 0.0) {
        for (std::size_t v = 0; v < kNumModalities; ++v) {
          if (!batch[i].available[v]) continue;
          const Vector dt = -lambda * drec[i][v];
          if (dx[v]) {
            *dx[v] += dt;
          } else {
            dx[v] = dt;
          }
        }
      }
      out.embedding_grads[i] = std::move(dx);
    }
  }
  return out;
}

// ---- footprint ------------------------------------------------------------

Footprint model_footprint(const FusionModel& model) {
  Footprint fp;
  const auto names = model.net_names();
  const auto nets = model.nets();
  for (std::size_t k = 0; k < nets.size(); ++k) {
    fp.entries.push_back({names[k], nets[k]->num_parameters()});
    fp.total += nets[k]->num_parameters();
  }
  fp.bytes = fp.total * sizeof(double);
  return fp;
}

// ---- checkpoint -----------------------------------------------------------

void write_model(std::ostream& out, const FusionModel& model) {
  const auto& c = model.config;
  out << "mmd-fusion 1\n";
  out << "strategy " << name(c.strategy) << '\n';
  out << "lambda " << nn::format_hex(c.lambda) << '\n';
  out << "dims " << c.embedding_dim << ' ' << c.extended_dim << ' ' << c.extender_hidden << ' '
      << c.tensor_dim << ' ' << c.head_hidden << ' ' << c.recon_hidden << '\n';
  out << "recon " << (c.reconstruction ? 1 : 0) << '\n';
  for (const auto m : kAllModalities) {
    if (!model.branches[index(m)]) continue;
    out << "branch " << mmd::name(m) << '\n';
    nn::write_net(out, *model.branches[index(m)]);
  }
  out << "hazard\n";
  nn::write_net(out, model.hazard_head);
  if (model.recon_head) {
    out << "recon-head\n";
    nn::write_net(out, *model.recon_head);
  }
  out << "end\n";
}

namespace {

FusionModel read_model_unchecked(std::istream& in) {
  std::string tag, value;
  int version = 0;
  if (!(in >> tag >> version) || tag != "mmd-fusion" || version != 1) {
    throw DataError("not a fusion checkpoint (expected 'mmd-fusion 1')");
  }
  FusionModel model;
  auto& c = model.config;
  int recon = 0;
  if (!(in >> tag >> value) || tag != "strategy") throw DataError("fusion checkpoint: missing strategy");
  c.strategy = parse_strategy(value);
  if (!(in >> tag >> value) || tag != "lambda") throw DataError("fusion checkpoint: missing lambda");
  c.lambda = nn::parse_hex(value);
  if (!(in >> tag >> c.embedding_dim >> c.extended_dim >> c.extender_hidden >> c.tensor_dim >>
        c.head_hidden >> c.recon_hidden) ||
      tag != "dims") {
    throw DataError("fusion checkpoint: missing dims");
  }
  if (!(in >> tag >> recon) || tag != "recon") throw DataError("fusion checkpoint: missing recon flag");
  c.reconstruction = recon != 0;
  while (in >> tag) {
    if (tag == "branch") {
      if (!(in >> value)) throw DataError("fusion checkpoint: branch without modality");
      model.branches[index(parse_modality(value))] = nn::read_net(in);
    } else if (tag == "hazard") {
      model.hazard_head = nn::read_net(in);
    } else if (tag == "recon-head") {
      model.recon_head = nn::read_net(in);
    } else if (tag == "end") {
      model.validate();
      return model;
    } else {
      throw DataError("fusion checkpoint: unexpected section '" + tag + "'");
    }
  }
  throw DataError("fusion checkpoint: truncated (no 'end')");
}

}  // namespace

FusionModel read_model(std::istream& in) {
  try {
    return read_model_unchecked(in);
  } catch (const UsageError& e) {
    throw DataError(std::string("fusion checkpoint: ") + e.what());
  } catch (const NumericalError& e) {
    throw DataError(std::string("fusion checkpoint: ") + e.what());
  }
}

void save_model(const std::string& path, const FusionModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  write_model(out, model);
}

FusionModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_model(in);
}

}  // namespace mmd::fusion
