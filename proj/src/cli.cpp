#include "mmd/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmd/cohort.hpp"
#include "mmd/fusion.hpp"
#include "mmd/gradcheck.hpp"
#include "mmd/pipeline.hpp"
#include "mmd/unimodal.hpp"

namespace mmd::cli {

namespace {

namespace fs = std::filesystem;
using pipeline::PipelineConfig;

PerModality<double> parse_rates(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("cannot parse missing rate '" + tok + "'");
    }
  }
  PerModality<double> out{};
  if (vals.size() == 1) {
    out.fill(vals[0]);
  } else if (vals.size() == kNumModalities) {
    std::copy(vals.begin(), vals.end(), out.begin());
  } else {
    throw UsageError("--missing-rate takes one value or four comma-separated values");
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct TrainFlags {
  std::size_t batch = 0;
  double lr = 0.0;
  std::size_t epochs = 0;
  std::size_t patience = 10;

  void add(CLI::App* app, const TrainConfig& defaults) {
    batch = defaults.batch_size;
    lr = defaults.learning_rate;
    epochs = defaults.epochs;
    patience = defaults.patience;
    app->add_option("--batch", batch, "Minibatch size")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app->add_option("--epochs", epochs, "Maximum epochs")->check(CLI::PositiveNumber);
    app->add_option("--patience", patience, "Early-stopping patience (epochs)");
  }
  void apply(TrainConfig& c) const {
    c.batch_size = batch;
    c.learning_rate = lr;
    c.epochs = epochs;
    c.patience = patience;
  }
};

struct CohortFlags {
  std::string cohort;
  std::string schema;
  std::string encoders;

  void add(CLI::App* app, bool with_encoders) {
    app->add_option("--cohort", cohort, "Cohort CSV file")->required()->check(CLI::ExistingFile);
    app->add_option("--schema", schema, "Schema sidecar file (key=value dims)")
        ->required()
        ->check(CLI::ExistingFile);
    if (with_encoders) {
      app->add_option("--encoders", encoders,
                      "Stage-1 encoder checkpoint; omit when the cohort already holds embeddings")
          ->check(CLI::ExistingFile);
    }
  }

  Cohort load() const { return load_cohort(cohort, load_schema(schema)); }

  unimodal::EncoderSet encoder_set(const Cohort& c) const {
    if (!encoders.empty()) return unimodal::load_encoders(encoders);
    if (!c.schema().is_embedding_schema()) {
      throw UsageError("cohort holds raw features (schema dims differ from the embedding dim); pass --encoders");
    }
    return unimodal::EncoderSet::passthrough(c.schema().embedding_dim);
  }
};

void print_config(std::ostream& out, const CLI::App* sub) {
  out << "# resolved configuration: " << sub->get_name() << '\n';
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto res = opt->results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
      if (opt->get_type_size() == 0) value = opt->as<bool>() ? "true" : "false";
    } else {
      value = opt->get_default_str();
    }
    out << "  " << opt->get_single_name() << " = " << value << '\n';
  }
  out.flush();
}

// ---- subcommands ----------------------------------------------------------

struct Synth {
  std::size_t n = 700;
  std::uint64_t seed = 0;
  std::string missing = "0.3";
  double censor = 0.3;
  bool mnar = false;
  std::uint64_t world_seed = SyntheticConfig{}.world_seed;
  std::string out;
  std::string schema_out;
  std::string schema_in;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("synth", "Generate a synthetic cohort with known risk");
    s->add_option("--n", n, "Number of patients")->check(CLI::Range(2, 100000000));
    s->add_option("--seed", seed, "Random seed")->required()->default_str("");
    s->add_option("--missing-rate", missing, "Per-modality missing probability (1 or 4 values)");
    s->add_option("--censor-rate", censor, "Censoring probability");
    s->add_flag("--mnar", mnar, "Tie pathology missingness to the risk quantile")->default_str("false");
    s->add_option("--world-seed", world_seed, "Seed of the generative model itself");
    s->add_option("--schema", schema_in, "Schema to generate against (default dims otherwise)")
        ->check(CLI::ExistingFile);
    s->add_option("--out", out, "Cohort CSV to write")->required();
    s->add_option("--schema-out", schema_out, "Schema file to write (default <out>.schema)");
  }

  int run(std::ostream& o, bool quiet) const {
    SyntheticConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    cfg.missing_rate = parse_rates(missing);
    cfg.censor_rate = censor;
    cfg.mechanism = mnar ? Missingness::Mnar : Missingness::Mcar;
    cfg.world_seed = world_seed;
    if (!schema_in.empty()) cfg.schema = load_schema(schema_in);
    const Cohort c = generate_synthetic(cfg);
    save_cohort(out, c);
    const std::string sp = schema_out.empty() ? out + ".schema" : schema_out;
    save_schema(sp, c.schema());
    if (!quiet) {
      o << "wrote " << c.size() << " records (" << c.num_events() << " events) to " << out
        << ", schema to " << sp << '\n';
    }
    return kOk;
  }
};

struct TrainUni {
  CohortFlags in;
  std::uint64_t seed = 0;
  std::string regime = "C+M";
  std::string out;
  std::string embeddings_out;
  std::size_t hidden = 64;
  TrainFlags train;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("train-uni", "Stage 1: train one encoder per modality");
    in.add(s, false);
    s->add_option("--seed", seed, "Master random seed")->required()->default_str("");
    s->add_option("--regime", regime, "Training data regime: C or C+M");
    s->add_option("--hidden", hidden, "Encoder hidden width");
    train.add(s, TrainConfig::unimodal_defaults());
    s->add_option("--out", out, "Encoder checkpoint to write")->required();
    s->add_option("--embeddings-out", embeddings_out, "Also write the embedding table here");
  }

  int run(std::ostream& o, bool quiet) const {
    const Cohort c = in.load();
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.encoder.hidden = hidden;
    train.apply(cfg.unimodal);
    PerModality<TrainTrace> traces;
    const auto enc = pipeline::train_stage1(c, pipeline::parse_regime(regime), cfg, &traces);
    unimodal::save_encoders(out, enc);
    for (const auto m : kAllModalities) {
      if (!enc[m]) continue;
      auto f = open_out(out + "." + std::string(name(m)) + ".trace.csv");
      write_trace(f, traces[index(m)]);
      if (!quiet) {
        o << name(m) << ": " << traces[index(m)].size() << " epochs";
        if (!traces[index(m)].empty() && traces[index(m)].back().val_cindex) {
          o << ", last validation c-index " << fixed(*traces[index(m)].back().val_cindex);
        }
        o << '\n';
      }
    }
    if (!embeddings_out.empty()) unimodal::save_embeddings(embeddings_out, unimodal::export_embeddings(enc, c));
    if (!quiet) o << "wrote encoders to " << out << '\n';
    return kOk;
  }
};

struct FusionFlags {
  std::string strategy = "mean-vector";
  bool dropout = true;
  bool recon = true;
  double dropout_rate = 0.5;
  double lambda = 1.0;

  void add(CLI::App* s) {
    s->add_option("--strategy", strategy, "Fusion strategy: concat, mean-vector or tensor");
    s->add_flag("--dropout,!--no-dropout", dropout, "Modality dropout during fusion training")
        ->default_str("true");
    s->add_flag("--recon,!--no-recon", recon, "Reconstruction head and loss")->default_str("true");
    s->add_option("--dropout-rate", dropout_rate, "Modality dropout rate");
    s->add_option("--lambda", lambda, "Weight of the reconstruction loss");
  }
};

struct TrainFuse {
  CohortFlags in;
  FusionFlags fusion;
  std::uint64_t seed = 0;
  std::string regime = "C+M";
  std::string out;
  TrainFlags train;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("train-fuse", "Stage 2: train the fusion model on frozen embeddings");
    in.add(s, true);
    fusion.add(s);
    s->add_option("--seed", seed, "Master random seed")->required()->default_str("");
    s->add_option("--regime", regime, "Fusion training data regime: C or C+M");
    train.add(s, TrainConfig::fusion_defaults());
    s->add_option("--out", out, "Fusion checkpoint to write")->required();
  }

  int run(std::ostream& o, bool quiet) const {
    const Cohort c = in.load();
    const auto enc = in.encoder_set(c);
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.dropout_rate = fusion.dropout_rate;
    cfg.lambda = fusion.lambda;
    cfg.architecture.embedding_dim = enc.embedding_dim();
    train.apply(cfg.fusion);
    pipeline::ExperimentCell cell;
    cell.strategy = fusion::parse_strategy(fusion.strategy);
    cell.stage2 = pipeline::parse_regime(regime);
    cell.dropout = fusion.dropout;
    cell.recon = fusion.recon;
    const auto table = unimodal::export_embeddings(enc, pipeline::regime_data(c, cell.stage2));
    TrainTrace trace;
    const auto model = pipeline::train_fusion(table, cfg.fusion_architecture(cell), cfg.fusion_config(),
                                              {cfg.dropout_rate, cell.dropout}, &trace);
    fusion::save_model(out, model);
    auto f = open_out(out + ".trace.csv");
    write_trace(f, trace);
    if (!quiet) {
      o << "trained " << cell.label() << " for " << trace.size() << " epochs; wrote " << out << '\n';
    }
    return kOk;
  }
};

struct Eval {
  CohortFlags in;
  std::string model;
  std::vector<std::string> scenarios{"complete"};
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("eval", "Evaluate a fusion model (c-index mean ± bootstrap std)");
    in.add(s, true);
    s->add_option("--model", model, "Fusion checkpoint")->required()->check(CLI::ExistingFile);
    s->add_option("--scenario", scenarios,
                  "Test scenarios: complete, pathology-missing, gene-pathology-missing, drop:<m>+<m>");
    s->add_option("--bootstrap", bootstrap, "Bootstrap resamples (0 disables the std)");
    s->add_option("--seed", seed, "Bootstrap seed")->required()->default_str("");
    s->add_option("--out", out, "JSON result file");
  }

  int run(std::ostream& o, bool) const {
    const Cohort c = in.load();
    pipeline::TrainedModel tm;
    tm.encoders = in.encoder_set(c);
    tm.fusion = fusion::load_model(model);
    nlohmann::ordered_json j;
    j["model"] = model;
    j["cohort"] = in.cohort;
    j["bootstrap"] = bootstrap;
    j["seed"] = seed;
    j["results"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < scenarios.size(); ++k) {
      const auto sc = MissingnessScenario::parse(scenarios[k]);
      const auto ev = pipeline::evaluate(tm, c, sc, bootstrap, Rng::derive(seed, 500 + k).bits());
      o << sc.name << ": c-index " << fixed(ev.cindex);
      if (ev.std) o << " ± " << fixed(*ev.std);
      o << " (n=" << ev.n_test << ", removed " << ev.removed << ")\n";
      j["results"].push_back({{"scenario", sc.name},
                              {"cindex_mean", ev.cindex},
                              {"cindex_std", ev.std ? nlohmann::ordered_json(*ev.std) : nlohmann::ordered_json()},
                              {"n_test", ev.n_test},
                              {"removed", ev.removed}});
    }
    if (!out.empty()) {
      auto f = open_out(out);
      f << j.dump(2) << '\n';
    }
    return kOk;
  }
};

struct Ablate {
  std::uint64_t seed = 0;
  std::string preset = "table3";
  std::string train_path, test_path, cohort_path, schema_path;
  double train_fraction = 500.0 / 700.0;
  std::size_t n_train = 500, n_test = 200;
  std::string missing = "0.3";
  double censor = 0.3;
  std::vector<std::string> scenarios{"complete", "pathology-missing", "gene-pathology-missing"};
  std::string out_dir = ".";
  std::size_t workers = 1;
  std::size_t bootstrap = 1000;
  double dropout_rate = 0.5;
  double lambda = 1.0;
  TrainFlags stage1, fusion;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("ablate", "Run the fusion ablation grid and write report.{csv,json,md}");
    s->add_option("--seed", seed, "Master random seed")->required()->default_str("");
    s->add_option("--preset", preset, "Cell preset: table3, mean-vector, strategies, fusion, mmd");
    s->add_option("--train", train_path, "Training cohort CSV")->check(CLI::ExistingFile);
    s->add_option("--test", test_path, "Test cohort CSV")->check(CLI::ExistingFile);
    s->add_option("--cohort", cohort_path, "Single cohort CSV split by --train-fraction")
        ->check(CLI::ExistingFile);
    s->add_option("--schema", schema_path, "Schema file for the cohort files")->check(CLI::ExistingFile);
    s->add_option("--train-fraction", train_fraction, "Train share when splitting --cohort");
    s->add_option("--n-train", n_train, "Synthetic train size (no cohort files given)");
    s->add_option("--n-test", n_test, "Synthetic test size (no cohort files given)");
    s->add_option("--missing-rate", missing, "Synthetic per-modality missing rate");
    s->add_option("--censor-rate", censor, "Synthetic censoring rate");
    s->add_option("--scenario", scenarios, "Test scenarios");
    s->add_option("--out-dir", out_dir, "Directory for report.csv, report.json, report.md");
    s->add_option("--workers", workers, "Parallel cells")->check(CLI::PositiveNumber);
    s->add_option("--bootstrap", bootstrap, "Bootstrap resamples per evaluation");
    s->add_option("--dropout-rate", dropout_rate, "Modality dropout rate");
    s->add_option("--lambda", lambda, "Reconstruction loss weight");
    auto* g1 = s->add_option_group("stage1", "Stage-1 training");
    stage1.batch = 64;
    g1->add_option("--stage1-batch", stage1.batch, "Stage-1 minibatch size");
    g1->add_option("--stage1-lr", stage1.lr, "Stage-1 learning rate");
    g1->add_option("--stage1-epochs", stage1.epochs, "Stage-1 maximum epochs");
    auto* g2 = s->add_option_group("fusion", "Fusion training");
    g2->add_option("--fusion-batch", fusion.batch, "Fusion minibatch size");
    g2->add_option("--fusion-lr", fusion.lr, "Fusion learning rate");
    g2->add_option("--fusion-epochs", fusion.epochs, "Fusion maximum epochs");
    g2->add_option("--patience", fusion.patience, "Early-stopping patience for both stages");
  }

  void init_defaults() {
    const auto u = TrainConfig::unimodal_defaults();
    const auto f = TrainConfig::fusion_defaults();
    stage1 = {u.batch_size, u.learning_rate, u.epochs, u.patience};
    fusion = {f.batch_size, f.learning_rate, f.epochs, f.patience};
  }

  int run(std::ostream& o, bool quiet) const {
    std::optional<Cohort> train, test;
    if (!train_path.empty() || !test_path.empty()) {
      if (train_path.empty() || test_path.empty() || schema_path.empty()) {
        throw UsageError("--train and --test need each other and --schema");
      }
      const auto schema = load_schema(schema_path);
      train = load_cohort(train_path, schema);
      test = load_cohort(test_path, schema);
    } else if (!cohort_path.empty()) {
      if (schema_path.empty()) throw UsageError("--cohort needs --schema");
      auto [a, b] = split(load_cohort(cohort_path, load_schema(schema_path)), train_fraction, seed);
      train = std::move(a);
      test = std::move(b);
    } else {
      SyntheticConfig sc;
      sc.n = n_train + n_test;
      sc.seed = seed;
      sc.missing_rate = parse_rates(missing);
      sc.censor_rate = censor;
      auto [a, b] = split(generate_synthetic(sc), static_cast<double>(n_train) / static_cast<double>(sc.n), seed);
      train = std::move(a);
      test = std::move(b);
    }

    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.workers = workers;
    cfg.bootstrap = bootstrap;
    cfg.dropout_rate = dropout_rate;
    cfg.lambda = lambda;
    stage1.apply(cfg.unimodal);
    cfg.unimodal.patience = fusion.patience;
    fusion.apply(cfg.fusion);
    if (train->schema().is_embedding_schema()) {
      cfg.architecture.embedding_dim = train->schema().embedding_dim;
    }

    std::vector<MissingnessScenario> sc;
    for (const auto& s : scenarios) sc.push_back(MissingnessScenario::parse(s));
    const auto cells = pipeline::preset_cells(preset);
    if (!quiet) {
      o << "running " << cells.size() << " cells x " << sc.size() << " scenarios on " << train->size()
        << " train / " << test->size() << " test records\n";
      o.flush();
    }
    const auto report = pipeline::run_ablation_grid(*train, *test, cells, sc, cfg);

    fs::create_directories(out_dir);
    {
      auto f = open_out((fs::path(out_dir) / "report.csv").string());
      pipeline::write_report_csv(f, report);
    }
    {
      auto f = open_out((fs::path(out_dir) / "report.json").string());
      pipeline::write_report_json(f, report);
    }
    {
      auto f = open_out((fs::path(out_dir) / "report.md").string());
      pipeline::write_report_markdown(f, report);
    }
    if (!quiet) pipeline::write_report_markdown(o, report);
    for (const auto& w : report.warnings) o << "warning: " << w << '\n';
    const bool any_failed = std::any_of(report.rows.begin(), report.rows.end(),
                                        [](const auto& r) { return !r.error.empty(); });
    return any_failed ? kNumerical : kOk;
  }
};

struct GradCheck {
  std::uint64_t seed = 0;
  std::size_t instances = 50;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
    s->add_option("--seed", seed, "Seed for the random instances");
    s->add_option("--instances", instances, "Random instances per check")->check(CLI::PositiveNumber);
  }

  int run(std::ostream& o, bool) const {
    const auto t0 = std::chrono::steady_clock::now();
    gradcheck::Options opt;
    opt.seed = seed;
    opt.instances = instances;
    const auto results = gradcheck::run_suite(opt);
    bool ok = true;
    for (const auto& r : results) {
      o << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(68) << r.name << " instances "
        << std::setw(4) << r.instances << " worst rel. error " << std::scientific << std::setprecision(2)
        << r.worst_error << std::defaultfloat << '\n';
      ok = ok && r.passed();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o << (ok ? "all gradient checks passed" : "gradient check FAILED") << " (" << fixed(secs, 1)
      << " s)\n";
    return ok ? kOk : kNumerical;
  }
};

struct Footprint {
  std::string model;
  std::size_t embedding = 32;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("footprint", "Print trainable parameter counts per fusion strategy");
    s->add_option("--model", model, "Print this checkpoint's footprint instead")->check(CLI::ExistingFile);
    s->add_option("--embedding", embedding, "Embedding dimension for the built-in configurations");
  }

  static void print(std::ostream& o, const std::string& title, const fusion::FusionModel& m) {
    const auto fp = fusion::model_footprint(m);
    o << title << '\n';
    for (const auto& e : fp.entries) o << "  " << std::left << std::setw(24) << e.component << e.parameters << '\n';
    o << "  " << std::left << std::setw(24) << "total" << fp.total << " (" << fp.bytes << " bytes)\n";
  }

  int run(std::ostream& o, bool) const {
    if (!model.empty()) {
      print(o, model, fusion::load_model(model));
      return kOk;
    }
    using fusion::FusionStrategy;
    for (const auto s : {FusionStrategy::Concatenation, FusionStrategy::MeanVector,
                         FusionStrategy::TensorFusion}) {
      for (const bool recon : {false, true}) {
        fusion::FusionConfig cfg;
        cfg.strategy = s;
        cfg.embedding_dim = embedding;
        cfg.reconstruction = recon;
        print(o, std::string(fusion::name(s)) + (recon ? " + recon" : ""), fusion::FusionModel::create(cfg, 0));
      }
    }
    return kOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal survival prediction with missing modalities"};
  app.name("mmd");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  bool quiet = false;
  app.add_flag("--quiet,-q", quiet, "Suppress progress output");

  Synth synth;
  TrainUni train_uni;
  TrainFuse train_fuse;
  Eval eval;
  Ablate ablate;
  ablate.init_defaults();
  GradCheck grad;
  Footprint foot;
  synth.add(app);
  train_uni.add(app);
  train_fuse.add(app);
  eval.add(app);
  ablate.add(app);
  grad.add(app);
  foot.add(app);
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  print_config(out, sub);
  try {
    const std::string& n = sub->get_name();
    if (n == "synth") return synth.run(out, quiet);
    if (n == "train-uni") return train_uni.run(out, quiet);
    if (n == "train-fuse") return train_fuse.run(out, quiet);
    if (n == "eval") return eval.run(out, quiet);
    if (n == "ablate") return ablate.run(out, quiet);
    if (n == "gradcheck") return grad.run(out, quiet);
    if (n == "footprint") return foot.run(out, quiet);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  }
  err << "error: unknown subcommand\n";
  return kUsage;
}

}  // namespace mmd::cli
