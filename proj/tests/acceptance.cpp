// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "mmd/fusion.hpp"
#include "mmd/gradcheck.hpp"
#include "mmd/pipeline.hpp"
#include "mmd/survival.hpp"
#include "oracles.hpp"

using namespace mmd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  [" << id << "] " << title << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << x;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

// 1 -------------------------------------------------------------------------
void gradient_suite() {
  const auto t0 = Clock::now();
  gradcheck::Options opt;  // 50 instances, h = 1e-5, tolerance 1e-4
  const auto results = gradcheck::run_suite(opt);
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0 && !results.empty();
  double worst = 0.0;
  std::string bad;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst_error);
    if (!r.passed() || r.instances < 50) {
      ok = false;
      bad += " " + r.name;
    }
  }
  report(1, "gradient oracle suite", ok,
         std::to_string(results.size()) + " checks, worst rel err " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s" +
             (bad.empty() ? "" : ", failing:" + bad));
}

// 2 -------------------------------------------------------------------------
struct Batch {
  std::vector<double> f, t;
  std::vector<int> e;
};

Batch random_batch(Rng& rng, std::size_t n) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.f.push_back(2.0 * rng.normal());
    b.t.push_back(1.0 + static_cast<double>(rng.below(8)));
    b.e.push_back(rng.bernoulli(0.6));
  }
  b.e[rng.below(n)] = 1;
  return b;
}

void cox_equivalence() {
  Rng rng(102);
  double worst = 0.0, worst_shift = 0.0;
  const int batches = 200;
  for (int k = 0; k < batches; ++k) {
    Batch b = random_batch(rng, 1 + rng.below(20));
    const double loss = survival::cox_loss({b.f, b.t, b.e});
    worst = std::max(worst, std::abs(loss - oracle::cox_loss(b.f, b.t, b.e)));
    const double c = 30.0 * rng.normal();
    for (auto& x : b.f) x += c;
    worst_shift = std::max(worst_shift, std::abs(survival::cox_loss({b.f, b.t, b.e}) - loss));
  }
  report(2, "cox loss vs enumeration oracle", worst <= 1e-9 && worst_shift <= 1e-10,
         std::to_string(batches) + " batches, max |diff| " + fmt(worst, 3) + ", max shift drift " +
             fmt(worst_shift, 3));
}

// 3 -------------------------------------------------------------------------
void cindex_equivalence() {
  Rng rng(103);
  int batches = 0, mismatches = 0, variant = 0;
  while (batches < 200) {
    const std::size_t n = 2 + rng.below(29);
    std::vector<double> r, t;
    std::vector<int> e;
    for (std::size_t i = 0; i < n; ++i) {
      r.push_back(static_cast<double>(rng.below(6)) - 2.5);
      t.push_back(static_cast<double>(1 + rng.below(8)));
      e.push_back(rng.bernoulli(0.7));
    }
    if (survival::comparable_pairs(t, e) == 0) continue;
    ++batches;
    const double c = survival::concordance_index(r, t, e);
    if (c != oracle::cindex(r, t, e)) ++mismatches;
    std::vector<double> a, cube, ex;
    for (const double x : r) {
      a.push_back(0.5 * x - 4.0);
      cube.push_back(x * x * x);
      ex.push_back(std::exp(x));
    }
    if (survival::concordance_index(a, t, e) != c || survival::concordance_index(cube, t, e) != c ||
        survival::concordance_index(ex, t, e) != c) {
      ++variant;
    }
  }
  report(3, "c-index vs pair oracle", mismatches == 0 && variant == 0,
         std::to_string(batches) + " batches with tied times and risks, " + std::to_string(mismatches) +
             " oracle mismatches, " + std::to_string(variant) + " monotone-transform changes");
}

// 4 -------------------------------------------------------------------------
void recon_semantics() {
  using fusion::Embeddings;
  using fusion::Reconstruction;
  Rng rng(104);
  int changed = 0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<Reconstruction> rec;
    std::vector<Embeddings> tgt;
    std::vector<ModalityMask> al;
    for (std::size_t i = 0; i < n; ++i) {
      const ModalityMask m(1 + rng.below(15));
      Embeddings e;
      Reconstruction r;
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (m[v]) e[v] = random_vector(rng, 6);
        r[v] = random_vector(rng, 6);
      }
      rec.push_back(r);
      tgt.push_back(e);
      al.push_back(m);
    }
    const double base = fusion::recon_loss(rec, tgt, al);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t v = 0; v < kNumModalities; ++v) {
        if (!al[i][v]) rec[i][v] = 1e3 * random_vector(rng, 6);
      }
    }
    if (fusion::recon_loss(rec, tgt, al) != base) ++changed;
  }

  // Hand batches: distances are axis offsets, so the sum is exact.
  auto at = [](double d) {
    Vector v = Vector::Zero(3);
    v[2] = d;
    return v;
  };
  const Reconstruction zero{Vector::Zero(3), Vector::Zero(3), Vector::Zero(3), Vector::Zero(3)};
  Embeddings one;
  one[1] = at(4.0);
  const double single = fusion::recon_loss(std::vector<Reconstruction>{zero}, std::vector<Embeddings>{one},
                                           std::vector<ModalityMask>{ModalityMask("0010")});
  Embeddings a, b;
  a[0] = at(1.0);
  a[3] = at(2.0);
  b[0] = at(0.5);
  b[1] = at(3.0);
  b[2] = at(1.5);
  // (1 + 2 + 0.5 + 3 + 1.5) / (2 + 3)
  const double pair = fusion::recon_loss(std::vector<Reconstruction>{zero, zero}, std::vector<Embeddings>{a, b},
                                         std::vector<ModalityMask>{ModalityMask("1001"), ModalityMask("0111")});
  const double err = std::max(std::abs(single - 4.0), std::abs(pair - 8.0 / 5.0));
  report(4, "reconstruction loss semantics", changed == 0 && err <= 1e-12,
         "200 perturbation trials, " + std::to_string(changed) + " changed; hand batches max |diff| " + fmt(err, 3));
}

// 5 -------------------------------------------------------------------------
void dropout_distribution() {
  Rng rng(105);
  const fusion::DropoutPolicy policy{0.5, true};
  const auto exact = oracle::dropout_marginals(full_mask(), 0.5);
  const int draws = 1000000;
  std::array<double, 4> kept{};
  int empty = 0;
  for (int k = 0; k < draws; ++k) {
    const ModalityMask m = fusion::modality_dropout(full_mask(), policy, rng);
    if (m.none()) ++empty;
    for (std::size_t v = 0; v < 4; ++v) kept[v] += m[v];
  }
  double worst = 0.0;
  for (std::size_t v = 0; v < 4; ++v) worst = std::max(worst, std::abs(kept[v] / draws - exact[v]) / exact[v]);
  report(5, "modality dropout distribution", worst <= 0.01 && empty == 0,
         "10^6 draws, exact marginal " + fmt(exact[0], 6) + ", max rel dev " + fmt(100 * worst, 3) + "%, " +
             std::to_string(empty) + " empty masks");
}

// 6 and 7 -------------------------------------------------------------------
void synthetic_trends() {
  using pipeline::ExperimentCell;
  using pipeline::Regime;
  const auto mv = fusion::FusionStrategy::MeanVector;
  const auto cells = pipeline::preset_cells("mean-vector");
  const auto scenarios = pipeline::table3_scenarios();
  const std::size_t n_seeds = 10;

  const auto t0 = Clock::now();
  // results[cell][scenario] -> per-seed c-index
  std::vector<std::vector<std::vector<double>>> results(cells.size(),
                                                        std::vector<std::vector<double>>(scenarios.size()));
  std::vector<double> oracle_c;
  std::size_t errors = 0;
  for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
    // Same construction as `mmd ablate --seed S` without input files.
    SyntheticConfig sc;
    sc.n = 700;
    sc.seed = seed;
    auto [train, test] = split(generate_synthetic(sc), 500.0 / 700.0, seed);
    const std::vector<double> truth(test.ground_truth().begin(), test.ground_truth().end());
    oracle_c.push_back(survival::concordance_index(truth, test.times(), test.events()));

    pipeline::PipelineConfig cfg;
    cfg.seed = seed;
    cfg.bootstrap = 0;
    const auto rep = pipeline::run_ablation_grid(train, test, cells, scenarios, cfg);
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      for (std::size_t si = 0; si < scenarios.size(); ++si) {
        const auto* row = rep.find(cells[ci], scenarios[si].name);
        if (!row || !row->error.empty() || !row->cindex_mean) {
          ++errors;
          continue;
        }
        results[ci][si].push_back(*row->cindex_mean);
      }
    }
  }
  const double secs = seconds_since(t0);

  auto index_of = [&](const ExperimentCell& c) {
    return static_cast<std::size_t>(std::find(cells.begin(), cells.end(), c) - cells.begin());
  };
  auto med = [&](std::size_t ci, std::size_t si) {
    return results[ci][si].empty() ? 0.0 : median(results[ci][si]);
  };

  const ExperimentCell mmd_cell{mv, Regime::All, Regime::All, true, true};
  const std::size_t mmd_i = index_of(mmd_cell);
  const double oracle_med = median(oracle_c);
  const double floor = std::max(0.70, oracle_med - 0.12);
  const double mmd_med = med(mmd_i, 0);
  report(6, "synthetic recovery (mean-vector C+M, dropout, recon)",
         errors == 0 && mmd_med >= floor && secs < 600.0,
         "median test c-index " + fmt(mmd_med) + " over " + std::to_string(n_seeds) + " seeds, floor " +
             fmt(floor) + " (oracle median " + fmt(oracle_med) + "), grid " + fmt(secs, 3) + " s" +
             (errors ? ", " + std::to_string(errors) + " failed rows" : ""));

  // (a) every mean-vector C / C+M pair that differs only in the stage-2 regime
  std::string detail_a;
  bool ok_a = errors == 0;
  int pairs = 0;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    if (cells[ci].stage2 != Regime::All) continue;
    ExperimentCell c = cells[ci];
    c.stage2 = Regime::Complete;
    const std::size_t cj = index_of(c);
    if (cj == cells.size()) continue;
    ++pairs;
    for (std::size_t si = 0; si < scenarios.size(); ++si) {
      if (!(med(ci, si) > med(cj, si))) {
        ok_a = false;
        detail_a += " " + cells[ci].label() + "@" + scenarios[si].name;
      }
    }
  }
  ok_a = ok_a && pairs == 4;
  // (b) dropout+recon on C+M is the best mean-vector cell under gene+pathology missing
  std::size_t gp = 0;
  while (gp < scenarios.size() && scenarios[gp].name != "gene-pathology-missing") ++gp;
  bool ok_b = gp < scenarios.size();
  double runner_up = 0.0;
  for (std::size_t ci = 0; ok_b && ci < cells.size(); ++ci) {
    if (ci == mmd_i) continue;
    runner_up = std::max(runner_up, med(ci, gp));
    if (med(ci, gp) >= med(mmd_i, gp)) ok_b = false;
  }
  report(7, "directional trends", ok_a && ok_b,
         "(a) C+M > C on " + std::to_string(pairs) + " pairs x " + std::to_string(scenarios.size()) +
             " scenarios " + (ok_a ? "holds" : "violated at" + detail_a) + "; (b) gene-pathology-missing best " +
             fmt(med(mmd_i, gp)) + " vs next " + fmt(runner_up) + (ok_b ? "" : " (violated)"));
}

// 8 -------------------------------------------------------------------------
std::size_t hand_count(std::initializer_list<std::size_t> dims) {
  const std::vector<std::size_t> d(dims);
  std::size_t n = 0;
  for (std::size_t k = 0; k + 1 < d.size(); ++k) n += d[k] * d[k + 1] + d[k + 1];
  return n;
}

void footprint_ordering() {
  auto total = [](fusion::FusionStrategy s) {
    fusion::FusionConfig c;
    c.strategy = s;
    return fusion::model_footprint(fusion::FusionModel::create(c, 1)).total;
  };
  const std::size_t concat = total(fusion::FusionStrategy::Concatenation);
  const std::size_t mean = total(fusion::FusionStrategy::MeanVector);
  const std::size_t tensor = total(fusion::FusionStrategy::TensorFusion);
  const std::size_t concat_hand = hand_count({128, 64, 1});
  const std::size_t mean_hand = 4 * hand_count({32, 64, 128}) + hand_count({128, 64, 1});
  const std::size_t tensor_hand = 4 * hand_count({32, 8}) + hand_count({9 * 9 * 9 * 9, 64, 1});
  const bool ok = tensor > mean && mean > concat && concat == concat_hand && mean == mean_hand &&
                  tensor == tensor_hand;
  report(8, "footprint ordering", ok,
         "tensor " + std::to_string(tensor) + " > mean-vector " + std::to_string(mean) + " > concatenation " +
             std::to_string(concat) + " (hand sums " + std::to_string(tensor_hand) + "/" +
             std::to_string(mean_hand) + "/" + std::to_string(concat_hand) + ")");
}

// 9 -------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int sh(const std::string& args) {
  const std::string cmd = std::string("\"") + MMD_CLI_PATH + "\" -q " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

void cli_reproducibility() {
  const fs::path root = fs::temp_directory_path() / "mmd_acceptance_repro";
  fs::remove_all(root);
  std::string failed;
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* tag : {"a", "b"}) {
    const fs::path d = root / tag;
    fs::create_directories(d);
    const std::string q = "\"" + d.string() + "/";
    bool ok = sh("synth --n 300 --seed 9 --out " + q + "c.csv\"") == 0;
    const std::string cohort = "--cohort " + q + "c.csv\" --schema " + q + "c.csv.schema\"";
    ok = ok && sh("train-uni " + cohort + " --seed 3 --epochs 8 --out " + q + "enc.txt\"") == 0;
    ok = ok && sh("train-fuse " + cohort + " --encoders " + q + "enc.txt\" --seed 4 --epochs 6 --out " + q +
                  "fuse.txt\"") == 0;
    ok = ok && sh("ablate --preset fusion --seed 5 --n-train 200 --n-test 100 --stage1-epochs 4 "
                  "--fusion-epochs 3 --bootstrap 50 --out-dir " +
                  q + "ablate\"") == 0;
    if (!ok) failed += std::string(" run ") + tag;
    runs.push_back(snapshot(d));
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) {
      ++differing;
      failed += " " + name;
    }
  }
  const bool ok = failed.empty() && runs[0].size() == runs[1].size() && runs[0].size() >= 8;
  report(9, "CLI byte reproducibility", ok,
         std::to_string(runs[0].size()) + " output files from synth/train-uni/train-fuse/ablate compared, " +
             std::to_string(differing) + " differ" + (failed.empty() ? "" : ":" + failed));
  fs::remove_all(root);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  gradient_suite();
  cox_equivalence();
  cindex_equivalence();
  recon_semantics();
  dropout_distribution();
  synthetic_trends();
  footprint_ordering();
  cli_reproducibility();
  std::cout << (failures ? "FAILED " : "all criteria passed ") << "(" << fmt(seconds_since(t0), 3) << " s)"
            << std::endl;
  return failures ? 1 : 0;
}
