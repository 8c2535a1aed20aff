#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/experiments.hpp"
#include "scb/model.hpp"
#include "scb/oracle.hpp"
#include "scb/population.hpp"
#include "scb/serialize.hpp"
#include "scb/trainer.hpp"
#include "scb/transfer.hpp"

namespace py = pybind11;
using namespace scb;

namespace {

Schedule schedule_from_dict(const GroundTruth& gt, double eta1, long steps1,
                            double eta2, long steps2, double lambda2,
                            int batch) {
  const TaskConstants consts = gt.constants();
  Schedule s;
  s.stage1 = make_stage(eta1, 0.0, batch, StopRule{steps1, {}, 1000000}, consts);
  s.stage2 = make_stage(eta2, lambda2, batch, StopRule{steps2, {}, 1000000},
                        consts);
  s.stage3 = make_stage(eta2, 0.0, batch, StopRule{0L, {}, 1000000}, consts);
  s.stage3.eta_A = 0.0;
  return s;
}

}  // namespace

PYBIND11_MODULE(_scb, m) {
  m.doc() = "Sparse contextual bigram training laboratory (C++ core)";

  py::register_exception<Error>(m, "ScbError");

  py::class_<Dims>(m, "Dims")
      .def(py::init([](int T, int N, int Q, double C) {
             Dims d{T, N, Q, C};
             d.validate();
             return d;
           }),
           py::arg("T"), py::arg("N"), py::arg("Q"), py::arg("C") = 2.0)
      .def_readonly("T", &Dims::T)
      .def_readonly("N", &Dims::N)
      .def_readonly("Q", &Dims::Q)
      .def_readonly("C", &Dims::C);

  py::class_<GroundTruth>(m, "GroundTruth")
      .def(py::init<Dims, Eigen::MatrixXd, Eigen::VectorXd, Eigen::MatrixXd>())
      .def_property_readonly("P", &GroundTruth::P)
      .def_property_readonly("mu", &GroundTruth::mu)
      .def_property_readonly("Qmat", &GroundTruth::Qmat)
      .def_property_readonly("dims", &GroundTruth::dims)
      .def("support", &GroundTruth::support)
      .def("constants",
           [](const GroundTruth& gt) {
             TaskConstants c = gt.constants();
             return py::make_tuple(c.K_P, c.K_Q);
           })
      .def("warnings", &GroundTruth::warnings)
      .def("to_json", [](const GroundTruth& gt) { return ground_truth_to_json(gt); })
      .def_static("from_json", &ground_truth_from_json);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init([](Eigen::MatrixXd V, Eigen::MatrixXd A) {
             return ModelParams{std::move(V), std::move(A)};
           }))
      .def_readwrite("V", &ModelParams::V)
      .def_readwrite("A", &ModelParams::A)
      .def_static("scratch_init", &ModelParams::scratch_init)
      .def("max_constraint_violation", &ModelParams::max_constraint_violation);

  py::class_<Sample>(m, "Sample")
      .def_readonly("x", &Sample::x)
      .def_readonly("x_last", &Sample::x_last)
      .def_readonly("x_out", &Sample::x_out);

  m.def("mu_inner", &mu_inner);
  m.def("mu_norm_sq", &mu_norm_sq);
  m.def("gen_ground_truth", &gen_ground_truth, py::arg("dims"),
        py::arg("seed"), py::arg("max_tries") = 100000);
  m.def("stationary_dist", &stationary_dist, py::arg("P"),
        py::arg("tol") = 1e-12, py::arg("max_iters") = 100000);
  m.def("label_distribution", &label_distribution);
  m.def("sample_batch", &sample_batch, py::arg("gt"), py::arg("B"),
        py::arg("seed"), py::arg("first_index") = 0);

  m.def("forward", &forward);
  m.def("per_sample_loss", &per_sample_loss);
  m.def("grad_pair", [](const ModelParams& p, const Sample& s) {
    SampleGrad g = grad_pair(p, s);
    return py::make_tuple(g.gV, g.col, g.gA_col);
  });
  m.def("precondition", [](const Eigen::MatrixXd& gV, const Eigen::MatrixXd& gA,
                           const Eigen::VectorXd& mu) {
    GradPair out = precondition({gV, gA}, mu);
    return py::make_tuple(out.gV, out.gA);
  });
  m.def("batch_grads",
        [](const ModelParams& p, const std::vector<Sample>& batch,
           const Eigen::VectorXd& mu) {
          BatchGrads g = batch_grads(p, batch, mu);
          return py::make_tuple(g.preconditioned.gV, g.preconditioned.gA);
        });

  py::class_<PopulationProjection>(m, "PopulationProjection")
      .def_readonly("alpha_V", &PopulationProjection::alpha_V)
      .def_readonly("alpha_A", &PopulationProjection::alpha_A)
      .def_readonly("K_V", &PopulationProjection::K_V)
      .def_readonly("K_A", &PopulationProjection::K_A)
      .def_readonly("delta_V_mu_sq", &PopulationProjection::delta_V_mu_sq)
      .def_readonly("delta_A_mu_sq", &PopulationProjection::delta_A_mu_sq);
  m.def("project", &project);
  m.def("expected_grads", [](const ModelParams& p, const GroundTruth& gt) {
    ExpectedGrads g = expected_grads(p, gt);
    return py::make_tuple(g.preconditioned.gV, g.preconditioned.gA);
  });
  m.def("population_loss", &population_loss);
  m.def("alpha_recursion_step",
        [](double alpha_V, double alpha_A, double eta, double K_P, double K_Q,
           double T) {
          AlphaPair a = alpha_recursion_step({alpha_V, alpha_A}, eta, K_P, K_Q, T);
          return py::make_tuple(a.alpha_V, a.alpha_A);
        });

  m.def("soft_threshold",
        [](double v, double lambda) { return soft_threshold(v, lambda); });
  m.def("thresholding_projection", &thresholding_projection);
  m.def("thresholding_normalization", &thresholding_normalization);

  py::class_<TrainState>(m, "TrainState")
      .def_readonly("params", &TrainState::params)
      .def_readonly("step", &TrainState::step)
      .def_readonly("prox_guard_count", &TrainState::prox_guard_count);

  m.def(
      "run_algorithm1",
      [](const GroundTruth& gt, double eta1, long steps1, double eta2,
         long steps2, double lambda2, int batch, std::uint64_t seed,
         const std::string& source) {
        RunOptions opts;
        opts.source = source == "population" ? GradSource::population
                                             : GradSource::minibatch;
        opts.log_every = 1000000;  // keep the python-side state light
        return run_algorithm1(
            gt, schedule_from_dict(gt, eta1, steps1, eta2, steps2, lambda2,
                                   batch),
            std::nullopt, seed, opts);
      },
      py::arg("gt"), py::arg("eta1"), py::arg("steps1"), py::arg("eta2"),
      py::arg("steps2"), py::arg("lambda2") = 1e-5, py::arg("batch") = 64,
      py::arg("seed") = 1, py::arg("source") = "minibatch");

  m.def("oracle_check", [](const GroundTruth& gt, const ModelParams& params) {
    MomentReport r = exact_moment_checks(gt, params);
    return r.max_abs_diff;
  });
  m.def("random_feasible_params",
        [](int N, int T, const Eigen::VectorXd& mu, std::uint64_t seed) {
          Rng rng(seed, "py-params");
          return random_feasible_params(N, T, mu, rng);
        });

  m.def("reduced_noise_simulate",
        [](int N, double T, int Q, double K_P, double K_Q, double mu_norm_sq,
           long steps, double eta, int B, const std::string& mode,
           double sigma_scale, std::uint64_t seed) {
          ReducedConsts consts{N, T, Q, K_P, K_Q, mu_norm_sq};
          ReducedConfig cfg;
          cfg.steps = steps;
          cfg.eta = eta;
          cfg.B = B;
          cfg.mode = mode == "sgd" ? NoiseMode::sgd : NoiseMode::prox;
          cfg.sigma_scale = sigma_scale;
          std::vector<ReducedRow> rows = reduced_noise_simulate(consts, cfg, seed);
          py::list out;
          for (const ReducedRow& r : rows)
            out.append(py::make_tuple(r.step, r.state.alpha_V, r.state.alpha_A,
                                      r.state.delta_A_sq, r.state.delta_V_sq));
          return out;
        },
        py::arg("N"), py::arg("T"), py::arg("Q"), py::arg("K_P"),
        py::arg("K_Q"), py::arg("mu_norm_sq"), py::arg("steps"),
        py::arg("eta"), py::arg("B"), py::arg("mode") = "prox",
        py::arg("sigma_scale") = 1.0, py::arg("seed") = 0);

  py::class_<PretrainedTask>(m, "PretrainedTask")
      .def_readonly("P_hat", &PretrainedTask::P_hat);
  m.def("gen_pretrained",
        [](const GroundTruth& gt, double gamma, std::uint64_t seed,
           const std::string& kind) {
          Rng rng(seed, "pretrain");
          return gen_pretrained(gt, gamma, rng,
                                kind == "line" ? PretrainKind::line
                                               : PretrainKind::metropolis);
        },
        py::arg("gt"), py::arg("gamma"), py::arg("seed") = 0,
        py::arg("kind") = "metropolis");
  m.def("init_transfer", &init_transfer);
}
