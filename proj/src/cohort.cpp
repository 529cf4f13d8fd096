#include "mmd/cohort.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace mmd {

namespace {

constexpr std::array<std::string_view, kNumModalities> kNames = {"radiology", "pathology",
                                                                 "genomics", "demographics"};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view cell, std::size_t line, std::string_view what) {
  const std::string s(cell);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw DataError("line " + std::to_string(line) + ": cannot parse " + std::string(what) +
                    " from '" + s + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::vector<std::string> expected_header(const ModalitySchema& schema) {
  std::vector<std::string> cols = {"id", "time", "event"};
  for (const auto m : kAllModalities) {
    const std::string base(kNames[index(m)]);
    cols.push_back(base + "_present");
    for (std::size_t k = 0; k < schema.raw_dim(m); ++k) cols.push_back(base + "_" + std::to_string(k));
  }
  return cols;
}

}  // namespace

std::string_view name(Modality m) { return kNames[index(m)]; }

Modality parse_modality(std::string_view s) {
  static constexpr std::array<std::string_view, kNumModalities> kShort = {"rad", "path", "gene",
                                                                          "demo"};
  for (const auto m : kAllModalities) {
    if (s == kNames[index(m)] || s == kShort[index(m)]) return m;
  }
  throw UsageError("unknown modality '" + std::string(s) + "'");
}

// ---- schema ---------------------------------------------------------------

void ModalitySchema::validate() const {
  for (const auto m : kAllModalities) {
    if (raw_dim(m) == 0) throw DataError("schema: " + std::string(name(m)) + " dimension must be >= 1");
  }
  if (embedding_dim == 0) throw DataError("schema: embedding dimension must be >= 1");
}

bool ModalitySchema::is_embedding_schema() const {
  return std::all_of(raw_dims.begin(), raw_dims.end(),
                     [&](std::size_t d) { return d == embedding_dim; });
}

ModalitySchema ModalitySchema::embeddings(std::size_t dim) {
  ModalitySchema s;
  s.raw_dims.fill(dim);
  s.embedding_dim = dim;
  return s;
}

ModalitySchema parse_schema(std::istream& in) {
  ModalitySchema schema;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("schema line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(text.substr(0, eq));
    const auto value = trim(text.substr(eq + 1));
    const double v = parse_double(value, lineno, key);
    if (v < 1 || v != std::floor(v)) {
      throw DataError("schema line " + std::to_string(lineno) + ": dimension must be a positive integer");
    }
    const auto dim = static_cast<std::size_t>(v);
    if (key == "embedding") {
      schema.embedding_dim = dim;
    } else {
      Modality m;
      try {
        m = parse_modality(key);
      } catch (const UsageError&) {
        throw DataError("schema line " + std::to_string(lineno) + ": unknown key '" +
                        std::string(key) + "'");
      }
      schema.raw_dims[index(m)] = dim;
    }
  }
  schema.validate();
  return schema;
}

ModalitySchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path);
  return parse_schema(in);
}

void write_schema(std::ostream& out, const ModalitySchema& schema) {
  for (const auto m : kAllModalities) out << name(m) << '=' << schema.raw_dim(m) << '\n';
  out << "embedding=" << schema.embedding_dim << '\n';
}

void save_schema(const std::string& path, const ModalitySchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path);
  write_schema(out, schema);
}

// ---- records / cohort -----------------------------------------------------

ModalityMask PatientRecord::availability() const {
  ModalityMask mask;
  for (std::size_t v = 0; v < kNumModalities; ++v) mask[v] = features[v].has_value();
  return mask;
}

const Vector& PatientRecord::feature(Modality m) const {
  const auto& f = features[index(m)];
  if (!f) throw UsageError("record " + id + ": " + std::string(name(m)) + " is not available");
  return *f;
}

bool PatientRecord::operator==(const PatientRecord& other) const {
  if (id != other.id || time != other.time || event != other.event) return false;
  for (std::size_t v = 0; v < kNumModalities; ++v) {
    const auto& a = features[v];
    const auto& b = other.features[v];
    if (a.has_value() != b.has_value()) return false;
    if (a && (a->size() != b->size() || *a != *b)) return false;
  }
  return true;
}

void validate_record(const PatientRecord& r, const ModalitySchema& schema) {
  const std::string who = "record '" + r.id + "': ";
  if (r.id.empty()) throw DataError("record with empty id");
  if (!(r.time > 0.0) || !std::isfinite(r.time)) {
    throw DataError(who + "survival time must be positive and finite");
  }
  if (r.availability().none()) throw DataError(who + "no modality available");
  for (const auto m : kAllModalities) {
    if (!r.has(m)) continue;
    const auto& f = r.feature(m);
    if (static_cast<std::size_t>(f.size()) != schema.raw_dim(m)) {
      throw DataError(who + std::string(name(m)) + " has " + std::to_string(f.size()) +
                      " features, schema expects " + std::to_string(schema.raw_dim(m)));
    }
    if (!f.allFinite()) throw DataError(who + std::string(name(m)) + " has non-finite features");
  }
}

Cohort Cohort::create(ModalitySchema schema, std::vector<PatientRecord> records,
                      std::optional<std::vector<double>> ground_truth_risk) {
  schema.validate();
  if (records.empty()) throw DataError("empty cohort");
  std::unordered_set<std::string> ids;
  std::size_t events = 0;
  for (const auto& r : records) {
    validate_record(r, schema);
    if (!ids.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
    events += r.event ? 1 : 0;
  }
  if (events == 0) throw DataError("cohort has zero observed events");
  if (ground_truth_risk && ground_truth_risk->size() != records.size()) {
    throw DataError("ground truth risk length does not match record count");
  }
  return Cohort(std::move(schema), std::move(records), std::move(ground_truth_risk));
}

std::size_t Cohort::num_events() const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [](const auto& r) { return r.event; }));
}

std::span<const double> Cohort::ground_truth() const {
  if (!ground_truth_) throw UsageError("cohort has no ground truth risk");
  return *ground_truth_;
}

Cohort Cohort::subset(std::span<const std::size_t> indices) const {
  std::vector<PatientRecord> out;
  out.reserve(indices.size());
  std::optional<std::vector<double>> truth;
  if (ground_truth_) truth.emplace();
  for (const auto i : indices) {
    out.push_back(records_.at(i));
    if (truth) truth->push_back((*ground_truth_)[i]);
  }
  return create(schema_, std::move(out), std::move(truth));
}

std::vector<double> Cohort::times() const {
  std::vector<double> t;
  t.reserve(records_.size());
  for (const auto& r : records_) t.push_back(r.time);
  return t;
}

std::vector<int> Cohort::events() const {
  std::vector<int> e;
  e.reserve(records_.size());
  for (const auto& r : records_) e.push_back(r.event ? 1 : 0);
  return e;
}

bool Cohort::operator==(const Cohort& other) const {
  return schema_ == other.schema_ && records_ == other.records_ &&
         ground_truth_ == other.ground_truth_;
}

// ---- tabular I/O ----------------------------------------------------------

void write_records(std::ostream& out, const ModalitySchema& schema,
                   std::span<const PatientRecord> records,
                   std::optional<std::span<const double>> truth) {
  const auto header = expected_header(schema);
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  if (truth) out << ",true_risk";
  out << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.id.find_first_of(",\n\r") != std::string::npos) {
      throw DataError("record id '" + r.id + "' contains a separator");
    }
    out << r.id << ',' << format_double(r.time) << ',' << (r.event ? 1 : 0);
    for (const auto m : kAllModalities) {
      const auto& f = r.features[index(m)];
      out << ',' << (f ? 1 : 0);
      for (std::size_t k = 0; k < schema.raw_dim(m); ++k) {
        out << ',';
        if (f) out << format_double((*f)[static_cast<Eigen::Index>(k)]);
      }
    }
    if (truth) out << ',' << format_double((*truth)[i]);
    out << '\n';
  }
}

void write_cohort(std::ostream& out, const Cohort& cohort) {
  std::optional<std::span<const double>> truth;
  if (cohort.has_ground_truth()) truth = cohort.ground_truth();
  write_records(out, cohort.schema(), cohort.records(), truth);
}

void save_cohort(const std::string& path, const Cohort& cohort) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write cohort file " + path);
  write_cohort(out, cohort);
}

Cohort read_cohort(std::istream& in, const ModalitySchema& schema) {
  schema.validate();
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty cohort file");
  const auto header_cells = split_csv(trim(line));
  const auto expected = expected_header(schema);
  bool has_truth = false;
  if (header_cells.size() == expected.size() + 1 && trim(header_cells.back()) == "true_risk") {
    has_truth = true;
  } else if (header_cells.size() != expected.size()) {
    throw DataError("header has " + std::to_string(header_cells.size()) + " columns, schema expects " +
                    std::to_string(expected.size()));
  }
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (trim(header_cells[c]) != expected[c]) {
      throw DataError("header column " + std::to_string(c) + " is '" +
                      std::string(header_cells[c]) + "', expected '" + expected[c] + "'");
    }
  }

  std::vector<PatientRecord> records;
  std::vector<double> truth;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto cells = split_csv(text);
    if (cells.size() != header_cells.size()) {
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(header_cells.size()) + " cells, found " +
                      std::to_string(cells.size()));
    }
    PatientRecord r;
    r.id = std::string(trim(cells[0]));
    r.time = parse_double(trim(cells[1]), lineno, "time");
    const auto ev = trim(cells[2]);
    if (ev != "0" && ev != "1") {
      throw DataError("record '" + r.id + "': event must be 0 or 1, got '" + std::string(ev) + "'");
    }
    r.event = ev == "1";
    std::size_t col = 3;
    for (const auto m : kAllModalities) {
      const auto present = trim(cells[col++]);
      const auto dim = schema.raw_dim(m);
      if (present == "1") {
        Vector f(static_cast<Eigen::Index>(dim));
        for (std::size_t k = 0; k < dim; ++k) {
          const auto cell = trim(cells[col + k]);
          if (cell.empty()) {
            throw DataError("record '" + r.id + "': " + std::string(name(m)) +
                            " marked present but has empty cells (dimension mismatch)");
          }
          f[static_cast<Eigen::Index>(k)] = parse_double(cell, lineno, name(m));
        }
        r.features[index(m)] = std::move(f);
      } else if (present == "0") {
        for (std::size_t k = 0; k < dim; ++k) {
          if (!trim(cells[col + k]).empty()) {
            throw DataError("record '" + r.id + "': " + std::string(name(m)) +
                            " marked absent but has values");
          }
        }
      } else {
        throw DataError("record '" + r.id + "': presence flag for " + std::string(name(m)) +
                        " must be 0 or 1");
      }
      col += dim;
    }
    if (has_truth) truth.push_back(parse_double(trim(cells[col]), lineno, "true_risk"));
    if (!(r.time > 0.0)) {
      throw DataError("record '" + r.id + "': survival time must be positive (got " +
                      format_double(r.time) + ")");
    }
    records.push_back(std::move(r));
  }
  std::optional<std::vector<double>> gt;
  if (has_truth) gt = std::move(truth);
  return Cohort::create(schema, std::move(records), std::move(gt));
}

Cohort load_cohort(const std::string& path, const ModalitySchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open cohort file " + path);
  try {
    return read_cohort(in, schema);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---- synthetic generator --------------------------------------------------

namespace {

// Constants of the generative model, tuned so the oracle c-index of the true
// risk lands near 0.86 and each modality carries partial information.
constexpr double kRiskScale = 2.4;      // |w|
constexpr double kStrongLoading = 1.0;  // latent dims a modality specialises in
constexpr double kWeakLoading = 0.3;
constexpr PerModality<double> kNoise = {1.0, 0.9, 0.8, 1.2};

struct World {
  Vector w;
  PerModality<Matrix> loadings;
};

World make_world(const ModalitySchema& schema, std::uint64_t world_seed) {
  Rng rng = Rng::derive(world_seed, 0xC0407);
  World world;
  world.w.resize(kLatentDim);
  for (auto& x : world.w) x = rng.normal();
  world.w *= kRiskScale / world.w.norm();
  for (const auto m : kAllModalities) {
    const auto v = index(m);
    Matrix a(static_cast<Eigen::Index>(schema.raw_dim(m)), kLatentDim);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const bool strong = static_cast<std::size_t>(c) / 2 == v;
        a(r, c) = rng.normal() * (strong ? kStrongLoading : kWeakLoading);
      }
    }
    world.loadings[v] = std::move(a);
  }
  return world;
}

}  // namespace

Cohort generate_synthetic(const SyntheticConfig& config) {
  config.schema.validate();
  if (config.n < 2) throw UsageError("synthetic cohort needs n >= 2");
  bool any_kept = false;
  for (const double p : config.missing_rate) {
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("missing rates must lie in [0, 1]");
    any_kept = any_kept || p < 1.0;
  }
  if (!any_kept) throw UsageError("at least one modality needs missing rate < 1");
  if (!(config.censor_rate >= 0.0 && config.censor_rate < 1.0)) {
    throw UsageError("censor rate must lie in [0, 1)");
  }

  const World world = make_world(config.schema, config.world_seed);
  Rng rng = Rng::derive(config.seed, 0x5A3D);

  const std::size_t n = config.n;
  std::vector<Vector> latents(n);
  std::vector<double> risk(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector z(kLatentDim);
    for (auto& x : z) x = rng.normal();
    risk[i] = world.w.dot(z) + 0.5 * std::tanh(z[0] * z[1]);
    latents[i] = std::move(z);
  }

  // Risk quantiles drive the optional MNAR pathology mechanism.
  std::vector<double> quantile(n, 0.5);
  if (config.mechanism == Missingness::Mnar) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return risk[a] < risk[b]; });
    for (std::size_t r = 0; r < n; ++r) quantile[order[r]] = (r + 0.5) / static_cast<double>(n);
  }

  std::vector<PatientRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = records[i];
    char id[32];
    std::snprintf(id, sizeof id, "P%05zu", i);
    rec.id = id;

    const double t_event = rng.exponential(std::exp(risk[i]));
    if (rng.bernoulli(config.censor_rate)) {
      rec.time = t_event * rng.uniform();
      rec.event = false;
    } else {
      rec.time = t_event;
      rec.event = true;
    }
    if (!(rec.time > 0.0)) rec.time = std::numeric_limits<double>::min();

    PerModality<double> miss = config.missing_rate;
    if (config.mechanism == Missingness::Mnar) {
      const auto p = index(Modality::Pathology);
      miss[p] = std::min(0.99, 2.0 * config.missing_rate[p] * quantile[i]);
    }
    ModalityMask keep;
    do {
      for (std::size_t v = 0; v < kNumModalities; ++v) keep[v] = !rng.bernoulli(miss[v]);
    } while (keep.none());

    for (const auto m : kAllModalities) {
      const auto v = index(m);
      // Features are drawn for every modality so the stream does not depend on the mask.
      Vector f = world.loadings[v] * latents[i];
      for (auto& x : f) x += kNoise[v] * rng.normal();
      if (keep[v]) rec.features[v] = std::move(f);
    }
  }

  try {
    return Cohort::create(config.schema, std::move(records), std::move(risk));
  } catch (const DataError& e) {
    throw DataError(std::string("degenerate synthetic configuration: ") + e.what());
  }
}

// ---- scenarios / splits ---------------------------------------------------

MissingnessScenario MissingnessScenario::complete() { return {"complete", {}}; }

MissingnessScenario MissingnessScenario::pathology_missing() {
  ModalityMask drop;
  drop.set(index(Modality::Pathology));
  return {"pathology-missing", drop};
}

MissingnessScenario MissingnessScenario::gene_pathology_missing() {
  ModalityMask drop;
  drop.set(index(Modality::Pathology));
  drop.set(index(Modality::Genomics));
  return {"gene-pathology-missing", drop};
}

MissingnessScenario MissingnessScenario::parse(std::string_view text) {
  if (text == "complete") return complete();
  if (text == "pathology-missing") return pathology_missing();
  if (text == "gene-pathology-missing") return gene_pathology_missing();
  if (text.starts_with("drop:")) {
    MissingnessScenario s{std::string(text), {}};
    auto rest = text.substr(5);
    while (!rest.empty()) {
      const auto plus = rest.find('+');
      s.drop.set(index(parse_modality(rest.substr(0, plus))));
      if (plus == std::string_view::npos) break;
      rest = rest.substr(plus + 1);
    }
    if (s.drop.all()) throw UsageError("scenario '" + s.name + "' drops every modality");
    return s;
  }
  throw UsageError("unknown scenario '" + std::string(text) + "'");
}

ScenarioResult apply_scenario(const Cohort& cohort, const MissingnessScenario& scenario) {
  if (scenario.drop.all()) throw UsageError("scenario '" + scenario.name + "' drops every modality");
  std::vector<PatientRecord> kept;
  std::optional<std::vector<double>> truth;
  if (cohort.has_ground_truth()) truth.emplace();
  std::size_t removed = 0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    PatientRecord r = cohort[i];
    for (std::size_t v = 0; v < kNumModalities; ++v) {
      if (scenario.drop[v]) r.features[v].reset();
    }
    if (r.availability().none()) {
      ++removed;
      continue;
    }
    if (truth) truth->push_back(cohort.ground_truth()[i]);
    kept.push_back(std::move(r));
  }
  return {Cohort::create(cohort.schema(), std::move(kept), std::move(truth)), removed};
}

std::pair<Cohort, Cohort> split(const Cohort& cohort, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train fraction must lie in (0, 1)");
  }
  const std::size_t n = cohort.size();
  if (n < 2) throw DataError("cannot split a cohort of fewer than 2 records");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0x5E17);
  rng.shuffle(order.begin(), order.end());
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  auto has_event = [&](const std::vector<std::size_t>& idx) {
    return std::any_of(idx.begin(), idx.end(), [&](auto i) { return cohort[i].event; });
  };
  if (!has_event(train)) throw DataError("split leaves the train side with zero events");
  if (!has_event(test)) throw DataError("split leaves the test side with zero events");
  return {cohort.subset(train), cohort.subset(test)};
}

Cohort complete_only(const Cohort& cohort) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (cohort[i].availability().all()) idx.push_back(i);
  }
  if (idx.empty()) throw DataError("no record has all four modalities (regime C is unrealizable)");
  try {
    return cohort.subset(idx);
  } catch (const DataError& e) {
    throw DataError(std::string("complete-data regime: ") + e.what());
  }
}

}  // namespace mmd
