#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "metaprompter/analysis.hpp"
#include "metaprompter/errors.hpp"
#include "metaprompter/pipeline.hpp"

namespace py = pybind11;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

mpr::Tensor to_tensor(const Array& a) {
  mpr::Shape shape(a.shape(), a.shape() + a.ndim());
  return mpr::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const mpr::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<std::pair<std::string, std::string>> override_list(const std::map<std::string, std::string>& o) {
  return {o.begin(), o.end()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the metaprompter C++ core";

  auto base = py::register_exception<mpr::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<mpr::DimensionError>(m, "DimensionError", base.ptr());
  auto numeric = py::register_exception<mpr::NumericError>(m, "NumericError", base.ptr());
  py::register_exception<mpr::DegenerateVectorError>(m, "DegenerateVectorError", numeric.ptr());
  py::register_exception<mpr::ContractError>(m, "ContractError", base.ptr());
  py::register_exception<mpr::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<mpr::ParseError>(m, "ParseError", base.ptr());
  py::register_exception<mpr::ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<mpr::SamplingError>(m, "SamplingError", base.ptr());
  py::register_exception<mpr::MissingClassError>(m, "MissingClassError", base.ptr());

  m.def(
      "param_count",
      [](const std::string& mode, std::size_t pool_size, std::size_t prompt_len, std::size_t input_dim,
         std::size_t output_dim, std::size_t encoder_params) {
        return mpr::param_count(mpr::parse_pool_mode(mode),
                                {pool_size, prompt_len, input_dim, output_dim, encoder_params});
      },
      py::arg("mode") = "metaprompter", py::arg("pool_size") = 8, py::arg("prompt_len") = 8,
      py::arg("input_dim") = 768, py::arg("output_dim") = 768, py::arg("encoder_params") = 0);

  m.def("git_blob_hash", [](const py::bytes& b) { return mpr::git_blob_hash(std::string(b)); });

  m.def(
      "repverb_prob",
      [](const Array& h, const Array& labels, double rho, const std::string& similarity) {
        return to_array(mpr::repverb_prob(to_tensor(h), to_tensor(labels), rho, mpr::parse_similarity(similarity)));
      },
      py::arg("h"), py::arg("label_embeddings"), py::arg("rho") = 10.0, py::arg("similarity") = "cosine");

  m.def(
      "combined_prob",
      [](const Array& hard, const Array& soft, double lambda) {
        return to_array(mpr::combined_prob(to_tensor(hard), to_tensor(soft), lambda));
      },
      py::arg("hard"), py::arg("soft"), py::arg("lam"));

  m.def("pca_2d", [](const Array& data) { return to_array(mpr::pca_2d(to_tensor(data))); });

  m.def("command_names", &mpr::command_names);

  m.def(
      "load_config",
      [](std::optional<std::filesystem::path> path, const std::map<std::string, std::string>& overrides) {
        return mpr::load_run_config(path, override_list(overrides)).to_json().dump();
      },
      py::arg("path") = std::nullopt, py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "run_command",
      [](const std::string& command, std::optional<std::filesystem::path> config,
         const std::map<std::string, std::string>& overrides, std::optional<std::filesystem::path> run_dir) {
        const mpr::RunConfig cfg = mpr::load_run_config(config, override_list(overrides));
        const std::filesystem::path dir = run_dir ? *run_dir : mpr::run_directory(cfg);
        std::ostringstream log;
        mpr::CommandResult r;
        {
          py::gil_scoped_release release;
          std::filesystem::create_directories(dir);
          r = mpr::run_command(command, cfg, dir, log);
        }
        std::vector<std::string> artifacts;
        for (const auto& a : r.artifacts) artifacts.push_back(a.string());
        return py::make_tuple(r.summary.dump(), artifacts, log.str());
      },
      py::arg("command"), py::arg("config") = std::nullopt,
      py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("run_dir") = std::nullopt);
}
