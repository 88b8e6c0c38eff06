#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cvla/accounting.hpp"
#include "cvla/errors.hpp"
#include "cvla/pipeline.hpp"
#include "cvla/verification.hpp"

namespace py = pybind11;
using namespace cvla;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

TensorD to_tensor(const Array& a) {
  Shape dims(a.shape(), a.shape() + a.ndim());
  return TensorD(dims, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const TensorD& t) {
  Array out(std::vector<py::ssize_t>(t.dims().begin(), t.dims().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

nlohmann::json parse_json(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError(std::string("malformed JSON: ") + e.what());
  }
}

CompressionConfig config_arg(const std::string& json) {
  return with_precision_override(config_from_json(parse_json(json.empty() ? "{}" : json)));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Instruction-guided visual token compressor";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_OSError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("normalize_config", [](const std::string& json) { return to_json(config_arg(json)).dump(); },
        py::arg("config_json") = "{}", "Validated config with every field filled in, as JSON.");
  m.def("token_count", [](const std::string& json) { return token_count(config_arg(json)); },
        py::arg("config_json") = "{}");
  m.def("compressor_flops",
        [](const std::string& json, std::size_t tokens) { return compressor_flops(config_arg(json), tokens); },
        py::arg("config_json") = "{}", py::arg("instruction_tokens") = 1);
  m.def("flops_report",
        [](const std::string& cost_model, const std::string& json) {
          return to_json(pipeline_flops(cost_model_from_json(parse_json(cost_model)), config_arg(json))).dump();
        },
        py::arg("cost_model_json"), py::arg("config_json") = "{}");

  py::class_<CompressorParams>(m, "Params")
      .def_property_readonly("config_json", [](const CompressorParams& p) { return canonical_json(p.config); })
      .def_property_readonly("parameter_count", [](const CompressorParams& p) { return parameter_count(p); })
      .def("names", [](const CompressorParams& p) {
        std::vector<std::string> names;
        for (const auto& entry : named_tensors(p)) names.push_back(entry.first);
        return names;
      })
      .def("tensor", [](const CompressorParams& p, const std::string& name) {
        for (const auto& [n, t] : named_tensors(p))
          if (n == name) return to_array(*t);
        throw ContractError("no tensor named '" + name + "'");
      })
      .def("save", [](const CompressorParams& p, const std::string& path) { save_params(p, path); });

  m.def("init_params",
        [](const std::string& json, std::uint64_t seed) { return init_params(config_arg(json), seed); },
        py::arg("config_json") = "{}", py::arg("seed") = 0);
  m.def("load_params", [](const std::string& path) { return load_params(path); }, py::arg("path"));

  m.def("compress",
        [](const CompressorParams& params, const std::vector<Array>& views, const Array& instruction,
           const std::string& json) {
          const CompressionConfig config = json.empty() ? with_precision_override(params.config) : config_arg(json);
          require_compatible(params, config);
          std::vector<FeatureGrid> grids;
          for (std::size_t i = 0; i < views.size(); ++i) grids.push_back({to_tensor(views[i]), std::to_string(i)});
          TensorD tokens = to_tensor(instruction);
          if (tokens.rank() == 1) tokens = std::move(tokens).reshaped({1, tokens.dim(0)});
          const CompressedOutput out = compress(params, grids, {tokens, {}}, config);
          py::list per_view;
          for (const ViewOutput& v : out.views) {
            py::dict d;
            d["z_g"] = to_array(v.z_g);
            d["z_l"] = to_array(v.z_l);
            d["attn_g"] = to_array(v.attn_g);
            d["attn_l"] = to_array(v.attn_l);
            per_view.append(d);
          }
          py::dict result;
          result["z"] = to_array(out.z);
          result["views"] = per_view;
          return result;
        },
        py::arg("params"), py::arg("views"), py::arg("instruction"), py::arg("config_json") = "");

  m.def("attention_oracle", [](std::size_t n, std::uint64_t seed) { return to_json(run_attention_oracle(n, seed)).dump(); },
        py::arg("instances") = 50, py::arg("seed") = 1);
  m.def("brute_force_attention",
        [](const Array& q, const Array& k, const Array& v) {
          return to_array(brute_force_attention(to_tensor(q), to_tensor(k), to_tensor(v)));
        },
        py::arg("q"), py::arg("keys"), py::arg("values"));
  m.def("certify_gradients",
        [](const std::string& json, const std::vector<std::uint64_t>& seeds, double eps) {
          CompressionConfig c = config_arg(json);
          c.precision = Precision::verify64;
          return to_json(certify_gradients(c, seeds, eps)).dump();
        },
        py::arg("config_json"), py::arg("seeds"), py::arg("eps") = 1e-5);
  m.def("toy_scene",
        [](std::uint64_t seed, std::size_t objects, double sigma) {
          const ToyScene s = generate_toy_scene(seed, objects, sigma);
          py::dict d;
          d["grid"] = to_array(s.grid.grid);
          d["instruction"] = to_array(s.instruction.tokens);
          d["object_windows"] = s.object_windows;
          d["target"] = s.target;
          d["label"] = s.label();
          return d;
        },
        py::arg("seed"), py::arg("objects") = 4, py::arg("sigma") = 0.1);
}
