#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "relkit/cli.hpp"
#include "relkit/errors.hpp"
#include "relkit/eval.hpp"
#include "relkit/pipeline.hpp"

namespace py = pybind11;
using namespace relkit;

namespace {

py::tuple run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release release;
    code = run_command(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

std::vector<std::string> one_shot_image_ids(const std::string& corpus, const std::string& vocab) {
  const OneShotDataset ds = build_one_shot_split(load_triplet_corpus(corpus, load_vocabulary(vocab)));
  std::vector<std::string> ids;
  for (const auto& rec : ds.images) ids.push_back(rec.image_id);
  return ids;
}

py::dict checkpoint_dict(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  py::dict tensors;
  for (const auto& [name, t] : ckpt.tensors) {
    const auto values = t.data();
    tensors[py::str(name)] = py::make_tuple(py::tuple(py::cast(t.shape())),
                                            py::list(py::cast(std::vector<double>(values.begin(), values.end()))));
  }
  py::dict d;
  d["config"] = ckpt.config_text;
  d["epoch"] = ckpt.epoch;
  d["tensors"] = tensors;
  return d;
}

double recall(const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double>>& ranked,
              const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>& gt, std::size_t k) {
  std::vector<RankedTriplet> r;
  for (const auto& [s, o, p, score] : ranked) r.push_back({s, o, p, score});
  std::vector<RelationshipTriplet> g;
  for (const auto& [s, p, o] : gt) {
    RelationshipTriplet t;
    t.subject_instance = s;
    t.predicate_class = p;
    t.object_instance = o;
    g.push_back(t);
  }
  return recall_at_k(r, g, k);
}

}  // namespace

PYBIND11_MODULE(_relkit, m) {
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<LookupError>(m, "LookupError", base.ptr());

  m.def("run", &run, py::arg("args"), "Runs a relkit command; returns (exit_code, stdout, stderr).");
  m.def(
      "canonical_config",
      [](const std::string& text) {
        ExperimentConfig c = parse_config_text(text);
        c.validate();
        return c.to_text();
      },
      py::arg("text"), "Parses and validates a TOML config, returning its canonical text.");
  m.def("one_shot_image_ids", &one_shot_image_ids, py::arg("corpus"), py::arg("vocab"),
        "Ids of the images kept by the one-shot split, in file order.");
  m.def("load_checkpoint", &checkpoint_dict, py::arg("path"),
        "Reads a checkpoint into {config, epoch, tensors: {name: (shape, values)}}.");
  m.def("recall_at_k", &recall, py::arg("ranked"), py::arg("gt"), py::arg("k"),
        "ranked: (subject, object, predicate, score) rows; gt: (subject, predicate, object) instance triplets.");
}
