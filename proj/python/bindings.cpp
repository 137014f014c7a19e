#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sdft/checkpoint.hpp"
#include "sdft/errors.hpp"
#include "sdft/estimators.hpp"
#include "sdft/metrics.hpp"
#include "sdft/runner.hpp"
#include "sdft/tasks.hpp"

namespace py = pybind11;
using namespace sdft;

namespace {

Vocab default_vocab(int size) { return Vocab{size, 1, 2, 0, 3}; }

py::dict instance_dict(const TaskInstance& i) {
  py::dict d;
  d["task_id"] = i.task_id;
  d["x"] = i.x;
  d["c"] = i.c;
  d["answer"] = i.answer;
  d["also_accept"] = i.also_accept;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sdft, m) {
  m.doc() = "Self-distillation fine-tuning laboratory";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<BudgetError>(m, "BudgetError", PyExc_RuntimeError);

  py::class_<PolicyParams>(m, "Policy")
      .def_static("tabular",
                  [](int vocab_size, int window, std::uint64_t seed) {
                    return init_policy(default_vocab(vocab_size), TabularShape{window}, seed);
                  },
                  py::arg("vocab_size"), py::arg("window") = 1, py::arg("seed") = 0)
      .def_static("transformer",
                  [](int vocab_size, int dim, int layers, int heads, int context, std::uint64_t seed) {
                    return init_policy(default_vocab(vocab_size), TransformerShape{dim, layers, heads, context, 4}, seed);
                  },
                  py::arg("vocab_size") = 20, py::arg("dim") = 32, py::arg("layers") = 2, py::arg("heads") = 2,
                  py::arg("context") = 64, py::arg("seed") = 0)
      .def_static("load", &load_policy, py::arg("path"))
      .def("save", [](const PolicyParams& p, const std::filesystem::path& path) { save_policy(p, path); }, py::arg("path"))
      .def_property_readonly("family", [](const PolicyParams& p) { return to_string(p.family()); })
      .def_property_readonly("vocab_size", [](const PolicyParams& p) { return p.vocab.size; })
      .def_property_readonly("num_parameters", &PolicyParams::size)
      .def("greedy_decode",
           [](const PolicyParams& p, const TokenSeq& prompt, int max_len) { return greedy_decode(p, prompt, max_len); },
           py::arg("prompt"), py::arg("max_len"))
      .def("logprob",
           [](const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& response) {
             return logprob_response(p, prompt, response).total;
           },
           py::arg("prompt"), py::arg("response"))
      .def("kl_to",
           [](const PolicyParams& p, const PolicyParams& base, const std::vector<TokenSeq>& prompts, int max_len) {
             return kl_to_base(p, base, prompts, max_len);
           },
           py::arg("base"), py::arg("prompts"), py::arg("max_len"),
           "Mean exact sequence KL(self || base) over the prompts.");

  m.def("pass_at_k", &pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
  m.def("normalized_score", &normalized_score, py::arg("acc"), py::arg("base_acc"), py::arg("max_acc"));
  m.def("stepwise_kl",
        [](const std::vector<double>& p, const std::vector<double>& q) {
          if (p.size() != q.size()) throw InputError("stepwise_kl: length mismatch");
          return stepwise_kl(p, q);
        },
        py::arg("p"), py::arg("q"));

  m.def("mapping_instances",
        [](int marker, std::uint64_t task_seed, int n, std::uint64_t seed) {
          const TaskLayout layout;
          if (marker < 0 || marker >= layout.n_markers) throw InputError("marker out of range");
          const MappingTask t = make_mapping_task(layout, layout.marker(marker), task_seed, "map");
          py::list out;
          for (const TaskInstance& i : gen_task_instances(t, layout, n, seed)) out.append(instance_dict(i));
          return out;
        },
        py::arg("marker") = 0, py::arg("task_seed") = 0, py::arg("n") = 8, py::arg("seed") = 0,
        "Instances of one mapping task in the default layout, as dicts.");

  m.def("run",
        [](const std::string& command, std::optional<std::filesystem::path> config, std::vector<std::string> overrides,
           std::optional<std::uint64_t> seed, std::optional<std::filesystem::path> out, std::optional<int> threads,
           std::optional<std::string> method) {
          RunOptions o{command, config, std::move(overrides), seed, out, threads, method};
          std::ostringstream log, err;
          CommandResult r;
          {
            py::gil_scoped_release release;
            r = run_command(o, log, err);
          }
          py::dict d;
          d["exit_code"] = r.exit_code;
          d["run_id"] = r.run_id;
          d["run_dir"] = r.run_dir.string();
          d["log"] = log.str();
          d["errors"] = err.str();
          return d;
        },
        py::arg("command"), py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = py::none(), py::arg("out") = py::none(), py::arg("threads") = py::none(),
        py::arg("method") = py::none(),
        "Runs one runner command (pretrain, train, eval, ablate-estimators, sequential) and returns "
        "exit_code, run_id, run_dir, log and errors.");
}
