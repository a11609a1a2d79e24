#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>

#include "cmvf/capsules.hpp"
#include "cmvf/errors.hpp"
#include "cmvf/commands.hpp"
#include "cmvf/metrics.hpp"
#include "cmvf/variational.hpp"

namespace py = pybind11;

namespace {

using cmvf::Array;

using NumpyArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const NumpyArray& a) {
  cmvf::Shape shape(static_cast<std::size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(a.shape(i));
  }
  std::vector<double> data(a.data(), a.data() + a.size());
  return Array(std::move(shape), std::move(data));
}

py::array_t<double> from_array(const Array& a) {
  std::vector<py::ssize_t> shape(a.ndim());
  for (std::size_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<py::ssize_t>(a.dim(i));
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), a.data(), a.size() * sizeof(double));
  return out;
}

cmvf::MembershipMode parse_membership(const std::string& mode) {
  if (mode == "norm") return cmvf::MembershipMode::norm;
  if (mode == "softmax") return cmvf::MembershipMode::softmax;
  throw cmvf::ValidationError("membership must be 'norm' or 'softmax', got '" + mode + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Variational knowledge-tracing core: routing, Gaussian heads, metrics and the CLI";

  m.def(
      "squash",
      [](const NumpyArray& s) { return from_array(cmvf::squash(to_array(s))); },
      py::arg("s"), "Capsule squash nonlinearity; zero maps to zero.");

  m.def(
      "route",
      [](const NumpyArray& capsule_matrices, const NumpyArray& h, int iterations,
         const std::string& membership) {
        cmvf::RoutedValues r = cmvf::route_values(to_array(capsule_matrices), to_array(h),
                                                  iterations, parse_membership(membership));
        return py::make_tuple(from_array(r.capsules), from_array(r.membership));
      },
      py::arg("capsule_matrices"), py::arg("h"), py::arg("iterations") = 3,
      py::arg("membership") = "norm",
      "Dynamic routing over a [K,d,d] capsule bank; returns (capsules, membership).");

  m.def(
      "kl_diag",
      [](const NumpyArray& mu_q, const NumpyArray& log_var_q, const NumpyArray& mu_p,
         const NumpyArray& log_var_p) {
        return cmvf::kl_diag({to_array(mu_q), to_array(log_var_q)},
                             {to_array(mu_p), to_array(log_var_p)});
      },
      py::arg("mu_q"), py::arg("log_var_q"), py::arg("mu_p"), py::arg("log_var_p"),
      "Closed-form KL divergence between diagonal Gaussians.");

  m.def(
      "reparameterize",
      [](const NumpyArray& mu, const NumpyArray& log_var, const NumpyArray& noise) {
        return from_array(
            cmvf::reparameterize({to_array(mu), to_array(log_var)}, to_array(noise)));
      },
      py::arg("mu"), py::arg("log_var"), py::arg("noise"),
      "mu + exp(log_var / 2) * noise; zero noise returns mu exactly.");

  m.def("prior_weight", &cmvf::prior_weight, py::arg("count"),
        "Personalized prior weight 1 - sigmoid(count).");

  m.def(
      "accuracy",
      [](const std::vector<double>& preds, const std::vector<int>& labels) {
        return cmvf::accuracy(preds, labels);
      },
      py::arg("preds"), py::arg("labels"));

  m.def(
      "auc",
      [](const std::vector<double>& preds, const std::vector<int>& labels) {
        return cmvf::auc(preds, labels);
      },
      py::arg("preds"), py::arg("labels"), "Rank-based AUC with half-credit ties.");

  m.def("real_impr", &cmvf::real_impr, py::arg("target_auc"), py::arg("base_auc"),
        "Relative AUC improvement over a base model, in percent.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = cmvf::run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"),
      "Invoke the command-line interface in-process; returns (exit_code, stdout, stderr).");

  m.attr("__version__") = "0.1.0";
}
