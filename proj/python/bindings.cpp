#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmd/cli.hpp"
#include "mmd/cohort.hpp"
#include "mmd/fusion.hpp"
#include "mmd/gradcheck.hpp"
#include "mmd/survival.hpp"

namespace py = pybind11;
using namespace mmd;

namespace {

ModalityMask mask_from(const std::string& bits) {
  if (bits.size() != kNumModalities || bits.find_first_not_of("01") != std::string::npos) {
    throw UsageError("mask must be 4 characters of 0/1 in modality order, got '" + bits + "'");
  }
  ModalityMask m;
  for (std::size_t v = 0; v < kNumModalities; ++v) m[v] = bits[v] == '1';
  return m;
}

std::string mask_to(ModalityMask m) {
  std::string s;
  for (std::size_t v = 0; v < kNumModalities; ++v) s += m[v] ? '1' : '0';
  return s;
}

PerModality<double> rates_from(const std::vector<double>& r) {
  if (r.size() == 1) return {r[0], r[0], r[0], r[0]};
  if (r.size() == kNumModalities) return {r[0], r[1], r[2], r[3]};
  throw UsageError("missing_rate takes 1 or 4 values");
}

}  // namespace

PYBIND11_MODULE(_mmd, m) {
  m.doc() = "Survival fusion with missing modalities: C++ core bindings";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());

  m.attr("modalities") = std::vector<std::string>{"radiology", "pathology", "genomics", "demographics"};

  m.def(
      "cox_loss",
      [](const std::vector<double>& f, const std::vector<double>& t, const std::vector<int>& e) {
        return survival::cox_loss({f, t, e});
      },
      py::arg("hazards"), py::arg("times"), py::arg("events"));
  m.def(
      "cox_loss_grad",
      [](const std::vector<double>& f, const std::vector<double>& t, const std::vector<int>& e) {
        return survival::cox_loss_grad({f, t, e});
      },
      py::arg("hazards"), py::arg("times"), py::arg("events"));
  m.def(
      "concordance_index",
      [](const std::vector<double>& r, const std::vector<double>& t, const std::vector<int>& e) {
        return survival::concordance_index(r, t, e);
      },
      py::arg("risks"), py::arg("times"), py::arg("events"));

  m.def(
      "generate_synthetic",
      [](std::size_t n, std::uint64_t seed, std::vector<double> missing_rate, double censor_rate, bool mnar) {
        SyntheticConfig c;
        c.n = n;
        c.seed = seed;
        c.missing_rate = rates_from(missing_rate);
        c.censor_rate = censor_rate;
        if (mnar) c.mechanism = Missingness::Mnar;
        const Cohort cohort = generate_synthetic(c);
        std::vector<std::string> ids, masks;
        for (const auto& r : cohort.records()) {
          ids.push_back(r.id);
          masks.push_back(mask_to(r.availability()));
        }
        const auto truth = cohort.ground_truth();
        py::dict d;
        d["id"] = ids;
        d["time"] = cohort.times();
        d["event"] = cohort.events();
        d["mask"] = masks;
        d["true_risk"] = std::vector<double>(truth.begin(), truth.end());
        std::ostringstream csv;
        write_cohort(csv, cohort);
        d["csv"] = csv.str();
        return d;
      },
      py::arg("n") = 700, py::arg("seed"), py::arg("missing_rate") = std::vector<double>{0.3},
      py::arg("censor_rate") = 0.3, py::arg("mnar") = false);

  m.def(
      "modality_dropout",
      [](const std::string& available, double rate, std::uint64_t seed, std::size_t draws) {
        Rng rng(seed);
        const fusion::DropoutPolicy policy{rate, true};
        policy.validate();
        const ModalityMask a = mask_from(available);
        std::vector<std::string> out;
        out.reserve(draws);
        for (std::size_t k = 0; k < draws; ++k) out.push_back(mask_to(fusion::modality_dropout(a, policy, rng)));
        return out;
      },
      py::arg("available"), py::arg("rate") = 0.5, py::arg("seed"), py::arg("draws") = 1);

  m.def(
      "footprint",
      [](const std::string& strategy, bool recon) {
        fusion::FusionConfig c;
        c.strategy = fusion::parse_strategy(strategy);
        c.reconstruction = recon;
        const auto fp = fusion::model_footprint(fusion::FusionModel::create(c, 0));
        py::dict d;
        for (const auto& e : fp.entries) d[py::str(e.component)] = e.parameters;
        d["total"] = fp.total;
        return d;
      },
      py::arg("strategy"), py::arg("recon") = false);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t instances) {
        gradcheck::Options o;
        o.seed = seed;
        o.instances = instances;
        py::list out;
        for (const auto& r : gradcheck::run_suite(o)) {
          py::dict d;
          d["name"] = r.name;
          d["instances"] = r.instances;
          d["worst_error"] = r.worst_error;
          d["passed"] = r.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("instances") = 50);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line interface in-process; returns (exit code, stdout, stderr).");
}
