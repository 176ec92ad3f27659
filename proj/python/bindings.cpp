#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "equireg/data.hpp"
#include "equireg/groups.hpp"
#include "equireg/harness.hpp"
#include "equireg/metrics.hpp"
#include "equireg/samplers.hpp"
#include "equireg/schedule.hpp"

namespace py = pybind11;
using namespace equireg;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array to_array(const Eigen::MatrixXd& m) {
  Array out({m.rows(), m.cols()});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.mutable_at(i, j) = m(i, j);
  return out;
}

Eigen::MatrixXd to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array of samples");
  Eigen::MatrixXd m(a.shape(0), a.shape(1));
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = a.at(i, j);
  return m;
}

json parse(const std::string& s) { return json::parse(s); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "equireg core bindings; JSON arguments are passed as strings by the Python wrapper";
  m.attr("__version__") = EQUIREG_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("step_subsequence", &step_subsequence, py::arg("total_steps"), py::arg("n"));
  m.def("linear_schedule", [](int steps, double bmin, double bmax) {
    auto s = make_linear_schedule(steps, bmin, bmax);
    std::vector<double> ab;
    for (int t = 0; t <= steps; ++t) ab.push_back(s.alpha_bar(t));
    return ab;
  });

  m.def("generate_dataset", [](const std::string& spec) {
    auto ds = generate_dataset(parse(spec));
    std::vector<Array> items;
    for (const auto& t : ds.items) items.push_back(to_array(t));
    return py::make_tuple(items, ds.metadata.dump());
  });

  m.def("operator_apply", [](const std::string& spec, const Array& x) {
    auto t = to_tensor(x);
    return to_array(MeasurementOperator::make(parse(spec), t.shape()).apply(t));
  });
  m.def("operator_adjoint", [](const std::string& spec, std::vector<std::size_t> input_shape, const Array& y) {
    return to_array(MeasurementOperator::make(parse(spec), input_shape).adjoint(to_tensor(y)));
  });
  m.def("operator_matrix", [](const std::string& spec, std::vector<std::size_t> input_shape) {
    return to_array(MeasurementOperator::make(parse(spec), input_shape).matrix());
  });

  m.def("group_apply", [](const std::string& cfg, std::size_t g, const Array& x) {
    auto t = to_tensor(x);
    return to_array(GroupAction::from_config(parse(cfg), t.shape()).apply_domain(g, t));
  });
  m.def("group_size", [](const std::string& cfg, std::vector<std::size_t> shape) {
    return GroupAction::from_config(parse(cfg), shape).size();
  });

  m.def("posterior_exact", [](const std::string& prior, const Array& a, double sigma_y, const Array& y) {
    auto t = to_tensor(y);
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(t.data().data(), static_cast<Eigen::Index>(t.numel()));
    return gmm_posterior_exact(GMMPrior::from_json(parse(prior)), to_matrix(a), sigma_y, yv).posterior.to_json().dump();
  });
  m.def("sample_gmm", [](const std::string& prior, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return to_array(sample_gmm_matrix(GMMPrior::from_json(parse(prior)), n, rng));
  });

  m.def("psnr", [](const Array& x, const Array& ref, double peak) { return psnr(to_tensor(x), to_tensor(ref), peak); },
        py::arg("x"), py::arg("ref"), py::arg("peak") = 1.0);
  m.def("ssim", [](const Array& x, const Array& ref, double peak) { return ssim(to_tensor(x), to_tensor(ref), peak); },
        py::arg("x"), py::arg("ref"), py::arg("peak") = 1.0);
  m.def("sliced_wasserstein", [](const Array& a, const Array& b, std::size_t n_proj, std::uint64_t seed) {
    Rng rng(seed);
    return sliced_wasserstein(to_matrix(a), to_matrix(b), n_proj, rng);
  });
  m.def("diversity", [](const std::vector<Array>& samples) {
    std::vector<Tensor> ts;
    for (const auto& s : samples) ts.push_back(to_tensor(s));
    auto d = diversity(ts);
    return py::make_tuple(d.intra_dist, d.pixel_std);
  });

  m.def("sample_posterior",
        [](const std::string& prior, int schedule_steps, double bmin, double bmax, const std::string& sampler,
           const std::string& op, const Array& y) {
          auto p = GMMPrior::from_json(parse(prior));
          AnalyticGmmScore model(p, make_linear_schedule(schedule_steps, bmin, bmax));
          auto cfg = SamplerConfig::from_json(parse(sampler));
          if (is_latent(cfg.algorithm) || is_regularized(cfg.algorithm)) {
            throw ConfigError("sample_posterior runs the unregularised pixel samplers only; use run_experiment");
          }
          auto opr = MeasurementOperator::make(parse(op), {p.dim()});
          SamplerInputs in;
          in.model = &model;
          in.op = &opr;
          in.y = to_tensor(y);
          auto traj = run_sampler(cfg, in);
          return py::make_tuple(to_array(traj.sample), traj.summary(cfg, false).dump());
        });

  m.def("run_experiment", [](const std::string& cfg_json, std::size_t threads) {
    auto cfg = ExperimentConfig::from_json(parse(cfg_json));
    py::gil_scoped_release release;
    auto p = prepare_in_memory(cfg);
    auto rows = run_sweep(p, threads);
    return sweep_csv(rows, false);
  }, py::arg("config"), py::arg("threads") = 1);
  m.def("cmd_run", [](const std::string& cfg_json, std::size_t threads) {
    auto cfg = ExperimentConfig::from_json(parse(cfg_json));
    py::gil_scoped_release release;
    cmd_run(cfg, threads);
    return read_report_hash(cfg.out);
  }, py::arg("config"), py::arg("threads") = 1);
}
