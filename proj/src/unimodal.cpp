#include "mmd/unimodal.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "mmd/survival.hpp"

namespace mmd::unimodal {

UnimodalEncoder init_encoder(Modality modality, const ModalitySchema& schema,
                             const EncoderArchitecture& arch, std::uint64_t seed) {
  using nn::Activation;
  UnimodalEncoder enc;
  enc.modality = modality;
  const std::array<std::size_t, 3> dims{schema.raw_dim(modality), arch.hidden, schema.embedding_dim};
  enc.encoder = nn::init_net(dims, Activation::SELU, Rng::derive(seed, 1).bits());
  const std::array<std::size_t, 2> head_dims{schema.embedding_dim, 1};
  enc.head = nn::init_net(head_dims, Activation::Identity, Rng::derive(seed, 2).bits());
  return enc;
}

UnimodalEncoder train_unimodal(const Cohort& cohort, Modality modality, const TrainConfig& config,
                               TrainTrace* trace, const EncoderArchitecture& arch) {
  config.validate();
  const std::string mod(name(modality));
  std::vector<std::size_t> pool;
  std::size_t events = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (cohort[i].has(modality)) {
      pool.push_back(i);
      events += cohort[i].event ? 1 : 0;
    }
  }
  if (pool.empty()) throw DataError(mod + " encoder: modality is available on zero records");
  if (events == 0) throw DataError(mod + " encoder: zero events among records with this modality");

  const std::uint64_t seed = Rng::derive(config.seed, 10 + index(modality)).bits();
  UnimodalEncoder enc = init_encoder(modality, cohort.schema(), arch, seed);
  auto [train_pos, val_pos] = holdout(pool.size(), config.validation_fraction, seed);

  std::array<nn::DenseNet*, 2> nets{&enc.encoder, &enc.head};
  OptimizerGroup opt(nets, config.optimizer, config.learning_rate);
  nn::GradientSet g_enc(enc.encoder), g_head(enc.head);
  UnimodalEncoder best = enc;

  TrainingHooks hooks;
  hooks.step = [&](std::span<const std::size_t> batch, Rng&) -> std::optional<double> {
    const std::size_t n = batch.size();
    std::vector<double> hazards(n), times(n);
    std::vector<int> evs(n);
    std::vector<nn::ForwardResult> fe, fh;
    fe.reserve(n);
    fh.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& r = cohort[pool[batch[k]]];
      fe.push_back(nn::forward(enc.encoder, r.feature(modality)));
      fh.push_back(nn::forward(enc.head, fe.back().output));
      hazards[k] = fh.back().output[0];
      times[k] = r.time;
      evs[k] = r.event ? 1 : 0;
    }
    const survival::SurvivalBatch sb{hazards, times, evs};
    if (sb.num_events() == 0) return std::nullopt;
    const double loss = survival::cox_loss(sb);
    if (!std::isfinite(loss)) throw NumericalError(mod + " encoder: non-finite loss");
    const auto d = survival::cox_loss_grad(sb);
    g_enc.set_zero();
    g_head.set_zero();
    for (std::size_t k = 0; k < n; ++k) {
      Vector up(1);
      up[0] = d[k];
      const Vector de = nn::backward_accumulate(enc.head, fh[k].tape, up, g_head);
      nn::backward_accumulate(enc.encoder, fe[k].tape, de, g_enc);
    }
    const std::array<const nn::GradientSet*, 2> grads{&g_enc, &g_head};
    opt.step(nets, grads);
    return loss;
  };
  hooks.validate = [&]() -> std::optional<double> {
    if (val_pos.empty()) return std::nullopt;
    std::vector<double> risk, times;
    std::vector<int> evs;
    for (const auto p : val_pos) {
      const auto& r = cohort[pool[p]];
      risk.push_back(nn::predict(enc.head, nn::predict(enc.encoder, r.feature(modality)))[0]);
      times.push_back(r.time);
      evs.push_back(r.event ? 1 : 0);
    }
    if (survival::comparable_pairs(times, evs) == 0) return std::nullopt;
    return survival::concordance_index(risk, times, evs);
  };
  hooks.snapshot = [&] { best = enc; };
  hooks.restore = [&] { enc = best; };

  auto t = run_training(train_pos, config, hooks);
  if (trace) *trace = std::move(t);
  return enc;
}

// ---- encoder set ----------------------------------------------------------

EncoderSet EncoderSet::passthrough(std::size_t embedding_dim) {
  EncoderSet s;
  s.passthrough_dim_ = embedding_dim;
  return s;
}

std::size_t EncoderSet::embedding_dim() const {
  if (passthrough_dim_) return *passthrough_dim_;
  for (const auto& e : encoders_) {
    if (e) return e->encoder.output_dim();
  }
  throw UsageError("encoder set is empty");
}

fusion::Embeddings EncoderSet::embed(const PatientRecord& record) const {
  fusion::Embeddings out;
  for (const auto m : kAllModalities) {
    if (!record.has(m)) continue;
    const auto& x = record.feature(m);
    if (passthrough_dim_) {
      if (static_cast<std::size_t>(x.size()) != *passthrough_dim_) {
        throw UsageError("record " + record.id + ": " + std::string(name(m)) +
                         " is not an embedding of the expected size");
      }
      out[index(m)] = x;
      continue;
    }
    const auto& enc = encoders_[index(m)];
    if (!enc) throw UsageError("no encoder for present modality " + std::string(name(m)));
    out[index(m)] = enc->embed(x);
  }
  return out;
}

void write_encoders(std::ostream& out, const EncoderSet& encoders) {
  out << "mmd-encoders 1\n";
  if (encoders.is_passthrough()) {
    out << "passthrough " << encoders.embedding_dim() << "\nend\n";
    return;
  }
  for (const auto m : kAllModalities) {
    const auto& e = encoders[m];
    if (!e) continue;
    out << "encoder " << name(m) << '\n';
    nn::write_net(out, e->encoder);
    nn::write_net(out, e->head);
  }
  out << "end\n";
}

namespace {

EncoderSet read_encoders_unchecked(std::istream& in) {
  std::string tag, value;
  int version = 0;
  if (!(in >> tag >> version) || tag != "mmd-encoders" || version != 1) {
    throw DataError("not an encoder checkpoint (expected 'mmd-encoders 1')");
  }
  EncoderSet set;
  while (in >> tag) {
    if (tag == "end") return set;
    if (tag == "passthrough") {
      std::size_t dim = 0;
      if (!(in >> dim) || dim == 0) throw DataError("encoder checkpoint: bad passthrough dim");
      set = EncoderSet::passthrough(dim);
    } else if (tag == "encoder") {
      if (!(in >> value)) throw DataError("encoder checkpoint: missing modality");
      Modality m;
      try {
        m = parse_modality(value);
      } catch (const UsageError& e) {
        throw DataError(std::string("encoder checkpoint: ") + e.what());
      }
      UnimodalEncoder enc;
      enc.modality = m;
      enc.encoder = nn::read_net(in);
      enc.head = nn::read_net(in);
      set[m] = std::move(enc);
    } else {
      throw DataError("encoder checkpoint: unexpected section '" + tag + "'");
    }
  }
  throw DataError("encoder checkpoint: truncated (no 'end')");
}

}  // namespace

EncoderSet read_encoders(std::istream& in) {
  try {
    return read_encoders_unchecked(in);
  } catch (const UsageError& e) {
    throw DataError(std::string("encoder checkpoint: ") + e.what());
  } catch (const NumericalError& e) {
    throw DataError(std::string("encoder checkpoint: ") + e.what());
  }
}

void save_encoders(const std::string& path, const EncoderSet& encoders) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  write_encoders(out, encoders);
}

EncoderSet load_encoders(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_encoders(in);
}

// ---- embedding table ------------------------------------------------------

EmbeddingTable export_embeddings(const EncoderSet& encoders, std::span<const PatientRecord> records) {
  EmbeddingTable table;
  if (records.empty()) {
    if (encoders.is_passthrough()) table.dim = encoders.embedding_dim();
    return table;
  }
  table.dim = encoders.embedding_dim();
  table.rows.reserve(records.size());
  for (const auto& r : records) {
    PatientRecord e;
    e.id = r.id;
    e.time = r.time;
    e.event = r.event;
    e.features = encoders.embed(r);
    table.rows.push_back(std::move(e));
  }
  return table;
}

EmbeddingTable export_embeddings(const EncoderSet& encoders, const Cohort& cohort) {
  return export_embeddings(encoders, cohort.records());
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embedding table " + path);
  write_records(out, table.schema(), table.rows);
}

EmbeddingTable load_embeddings(const std::string& path, std::size_t dim) {
  const Cohort c = load_cohort(path, ModalitySchema::embeddings(dim));
  EmbeddingTable table;
  table.dim = dim;
  table.rows.assign(c.records().begin(), c.records().end());
  return table;
}

}  // namespace mmd::unimodal
