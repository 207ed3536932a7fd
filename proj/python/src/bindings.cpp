#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fsg/checks.hpp"
#include "fsg/config.hpp"
#include "fsg/convergence.hpp"
#include "fsg/hgs.hpp"
#include "fsg/hypernet.hpp"
#include "fsg/optim.hpp"
#include "fsg/quantize.hpp"
#include "fsg/runner.hpp"

namespace py = pybind11;
using namespace fsg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Binary network training lab: quantizer, gradient generators, trainer and benches";
  m.attr("__version__") = kCodeVersion;

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "preprocess",
      [](const Array& w) {
        const Preprocessed p = preprocess(to_tensor(w));
        return py::make_tuple(to_array(p.w_hat), to_array(p.da_dw), p.scale);
      },
      py::arg("w"), "(w_hat, dA/dW, scale) of the tanh normalizer");
  m.def(
      "quantize", [](const Array& w_hat, int bits) { return to_array(quantize(to_tensor(w_hat), bits)); },
      py::arg("w_hat"), py::arg("bits") = 1);
  m.def(
      "binarize", [](const Array& w) { return to_array(quantize(preprocess(to_tensor(w)).w_hat, 1)); },
      py::arg("w"));

  m.def(
      "ssm_discretize",
      [](const Array& a, const Array& b, double delta) {
        const ZohResult z = ssm_discretize(to_tensor(a), to_tensor(b), delta);
        return py::make_tuple(to_array(z.a_bar), to_array(z.b_bar));
      },
      py::arg("a_diag"), py::arg("b"), py::arg("delta"));
  m.def(
      "ssm_scan",
      [](const Array& a_bar, const Array& b_bar, const Array& c, const Array& x) {
        return to_array(ssm_scan(to_tensor(a_bar), to_tensor(b_bar), to_tensor(c), to_tensor(x)));
      },
      py::arg("a_bar"), py::arg("b_bar"), py::arg("c"), py::arg("x"));
  m.def(
      "ssm_conv",
      [](const Array& a_bar, const Array& b_bar, const Array& c, const Array& x) {
        return to_array(ssm_conv(to_tensor(a_bar), to_tensor(b_bar), to_tensor(c), to_tensor(x)));
      },
      py::arg("a_bar"), py::arg("b_bar"), py::arg("c"), py::arg("x"));

  m.def(
      "momentum_expand",
      [](double beta, double alpha, const std::vector<Array>& grads) {
        std::vector<Tensor> g;
        for (const auto& a : grads) g.push_back(to_tensor(a));
        return to_array(momentum_expand(beta, alpha, g));
      },
      py::arg("beta"), py::arg("alpha"), py::arg("grads"));
  m.def(
      "compose_gradient",
      [](const Array& fast, std::optional<Array> slow, const Array& da_dw, double alpha, double beta) {
        const Tensor s = slow ? to_tensor(*slow) : Tensor();
        return to_array(compose_gradient(to_tensor(fast), slow ? &s : nullptr, to_tensor(da_dw), alpha, beta));
      },
      py::arg("g_fast"), py::arg("g_slow"), py::arg("da_dw"), py::arg("alpha"), py::arg("beta"));

  py::class_<GradientHistoryBuffer>(m, "GradientHistoryBuffer")
      .def(py::init<std::size_t, std::size_t, std::size_t>(), py::arg("layer_index"), py::arg("capacity"),
           py::arg("xi"))
      .def("push", [](GradientHistoryBuffer& b, const Array& g) { b.push(to_tensor(g)); })
      .def("window", [](const GradientHistoryBuffer& b) { return to_array(b.window()); })
      .def("__len__", &GradientHistoryBuffer::size);

  m.def(
      "canonical_config", [](const std::string& text) { return to_yaml(parse_config(text)); }, py::arg("text"),
      "Parse a YAML config and return its canonical form");
  m.def(
      "train",
      [](const std::string& config_text, std::optional<std::filesystem::path> out_dir) {
        const TrainOutcome o = run_training(parse_config(config_text), out_dir);
        py::list rows;
        for (const auto& r : o.records) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["iter"] = r.iter;
          d["split"] = r.split;
          d["loss"] = r.loss;
          d["accuracy"] = r.accuracy;
          d["lr"] = r.lr;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config_text"), py::arg("out_dir") = py::none(), "Train per a YAML config; returns metric rows");

  m.def("rate_fit", [](const std::vector<double>& gap, std::size_t lo, std::size_t hi) { return rate_fit(gap, lo, hi); },
        py::arg("gap"), py::arg("t_lo") = 100, py::arg("t_hi") = 10000);

  m.def(
      "run_checks",
      [](const std::vector<int>& ids) {
        py::list out;
        for (const auto& r : run_checks(ids)) out.append(py::make_tuple(r.id, r.name, r.passed, r.detail));
        return out;
      },
      py::arg("ids"), "Run property checks by id; returns (id, name, passed, detail) tuples");
}
