#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "swlora/analysis.hpp"
#include "swlora/tensor_io.hpp"
#include "swlora/trainer.hpp"
#include "swlora/verify.hpp"

namespace py = pybind11;
using namespace swlora;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Side parse_side(const std::string& s) {
  if (s == "B") return Side::B;
  if (s == "A") return Side::A;
  throw std::invalid_argument("side must be 'A' or 'B'");
}

ArchSpec resolve_arch(const std::string& arch) {
  return std::filesystem::exists(arch) ? load_arch_spec(arch) : arch_preset(arch);
}

py::dict metrics_dict(const MetricsRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["train_loss"] = r.train_loss;
  d["eval_loss"] = r.eval_loss;
  d["perplexity"] = r.perplexity ? py::cast(*r.perplexity) : py::none();
  d["switches_this_step"] = r.switches_this_step;
  d["frozen_count"] = r.frozen_count;
  return d;
}

}  // namespace

PYBIND11_MODULE(_swlora, m) {
  m.doc() = "Low-rank adapters with vector switching: core operations";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("forward", [](const Array& W, const Array& B, const Array& A, double alpha, const Array& x) {
    return to_array(forward(LoraLinear(to_matrix(W), to_matrix(B), to_matrix(A), alpha), to_matrix(x)));
  }, py::arg("W"), py::arg("B"), py::arg("A"), py::arg("alpha"), py::arg("x"));

  m.def("backward", [](const Array& W, const Array& B, const Array& A, double alpha, const Array& x,
                       const Array& upstream) {
    const GradBundle g = backward(LoraLinear(to_matrix(W), to_matrix(B), to_matrix(A), alpha), to_matrix(x),
                                  to_matrix(upstream));
    return py::make_tuple(to_array(g.grad_B), to_array(g.grad_A), to_array(g.grad_x));
  }, py::arg("W"), py::arg("B"), py::arg("A"), py::arg("alpha"), py::arg("x"), py::arg("upstream"),
     "Returns (grad_B, grad_A, grad_x).");

  m.def("init_adapters", [](std::size_t mm, std::size_t n, std::size_t r, double gain, const std::string& scheme,
                            std::uint64_t seed) {
    Rng rng(seed);
    InitSpec spec{gain, scheme == "classic_lora" ? InitScheme::classic_lora : InitScheme::switchlora};
    if (scheme != "classic_lora" && scheme != "switchlora") throw std::invalid_argument("unknown scheme " + scheme);
    InitResult res = init_switchlora(rng, mm, n, r, spec);
    return py::make_tuple(to_array(res.B), to_array(res.A), res.std_B, res.std_A);
  }, py::arg("m"), py::arg("n"), py::arg("r"), py::arg("gain") = 1.0, py::arg("scheme") = "switchlora",
     py::arg("seed") = 0, "Returns (B, A, std_B, std_A).");
  m.def("std_B", &switchlora_std_B, py::arg("m"), py::arg("n"), py::arg("r"), py::arg("gain") = 1.0);
  m.def("std_A", &switchlora_std_A, py::arg("m"), py::arg("n"), py::arg("r"), py::arg("gain") = 1.0);

  m.def("switch_vector", [](const Array& W, const Array& B, const Array& A, double alpha, const Array& cand_B,
                            const Array& cand_A, const std::string& side, std::size_t i, std::size_t j) {
    LoraLinear layer(to_matrix(W), to_matrix(B), to_matrix(A), alpha);
    CandidateStore store(to_matrix(cand_B), to_matrix(cand_A), SelectionPolicy::sequential, Rng());
    AdapterOptState opt = AdapterOptState::for_layer(layer);
    FreezeRegistry freeze;
    switch_vector(layer, store, parse_side(side), i, j, opt, freeze, 0, 0);
    return py::make_tuple(to_array(layer.W), to_array(layer.B), to_array(layer.A), to_array(store.cand_B()),
                          to_array(store.cand_A()));
  }, py::arg("W"), py::arg("B"), py::arg("A"), py::arg("alpha"), py::arg("cand_B"), py::arg("cand_A"),
     py::arg("side"), py::arg("i"), py::arg("j"),
     "Exchanges adapter vector i with candidate j; returns (W, B, A, cand_B, cand_A).");

  m.def("calibrate_theta", &calibrate_theta, py::arg("total_steps"), py::arg("ratio"));
  m.def("expected_switches", &expected_switches, py::arg("step"), py::arg("r"), py::arg("interval0"),
        py::arg("theta"));
  m.def("switch_num", [](std::uint64_t step, std::size_t r, double interval0, double theta, std::size_t draws,
                         std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> out(draws);
    for (auto& v : out) v = switch_num(rng, step, r, interval0, theta);
    return out;
  }, py::arg("step"), py::arg("r"), py::arg("interval0"), py::arg("theta"), py::arg("draws") = 1,
     py::arg("seed") = 0);

  m.def("singular_values", [](const Array& a) { return singular_values(to_matrix(a)); });
  m.def("numerical_rank", [](const Array& a, double tol) { return numerical_rank(to_matrix(a), tol); },
        py::arg("a"), py::arg("rel_tol") = kDefaultRankTol);
  m.def("save_tensor", [](const std::filesystem::path& p, const Array& a) { save_tensor(p, to_matrix(a)); });
  m.def("load_tensor", [](const std::filesystem::path& p) { return to_array(load_tensor(p)); });

  m.def("arch", [](const std::string& arch) {
    const ArchSpec s = resolve_arch(arch);
    py::dict d;
    d["name"] = s.name;
    d["n_layers"] = s.n_layers;
    d["hidden"] = s.hidden;
    d["intermediate"] = s.intermediate;
    d["vocab"] = s.vocab;
    d["psi"] = s.psi();
    return d;
  }, py::arg("arch"), "Preset name or spec file path.");
  m.def("estimate_optimizer_memory", [](const std::string& arch, const std::string& mode, std::uint64_t r) {
    const MemoryEstimate e = estimate_optimizer_memory(resolve_arch(arch), parse_mode(mode), r);
    py::dict d;
    d["total_params"] = e.total_params;
    d["trainable_params"] = e.trainable_params;
    d["adapter_params"] = e.adapter_params;
    d["bytes"] = e.bytes;
    d["trainable_bytes"] = e.trainable_bytes;
    d["square_ratio"] = e.square_ratio;
    return d;
  }, py::arg("arch"), py::arg("mode"), py::arg("r"));
  m.def("estimate_dp_traffic", [](const std::string& arch, const std::string& mode, std::uint64_t r) {
    const TrafficEstimate t = estimate_dp_traffic(resolve_arch(arch), parse_mode(mode), r);
    py::dict d;
    d["params"] = t.params;
    d["bytes"] = t.bytes;
    d["ratio"] = t.ratio;
    return d;
  }, py::arg("arch"), py::arg("mode"), py::arg("r"));
  m.def("estimate_offload", &estimate_offload, py::arg("switch_freq"), py::arg("r"), py::arg("h"),
        py::arg("total_params"), py::arg("bytes_per_param"));

  m.def("train", [](const std::map<std::string, std::string>& settings) {
    Config c;
    for (const auto& [k, v] : settings) c.set(k, v);
    const TrainConfig tc = TrainConfig::from_config(c);
    std::vector<MetricsRecord> records;
    {
      py::gil_scoped_release release;
      records = train(tc);
    }
    py::list out;
    for (const auto& r : records) out.append(metrics_dict(r));
    return out;
  }, py::arg("settings") = std::map<std::string, std::string>{},
     "Trains with `section.key -> value` overrides; returns the metrics records.");

  m.def("verify", [](std::uint64_t seed) {
    py::list out;
    for (const auto& c : run_verify(seed)) out.append(py::make_tuple(c.name, c.passed, c.detail));
    return out;
  }, py::arg("seed") = 0);
}
